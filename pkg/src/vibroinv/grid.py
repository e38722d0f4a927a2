"""Structured tensor-product grids with tagged boundary and receiver sets.

Nodes are numbered row-major with x running fastest: in 2-D the node at
column ``ix`` and row ``iy`` has index ``iy * nx + ix``.  Every discrete
measure (volume, boundary, receiver line) is a composite trapezoid rule so
that all inner products in the package come from one quadrature family.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, OverlapError, ShapeError


def trapezoid_weights(n, h):
    """1-D composite trapezoid weights on ``n`` equispaced nodes."""
    w = np.full(n, float(h))
    if n == 1:
        return np.ones(1)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True)
class Side:
    """One face of the domain boundary (a single node in 1-D)."""

    name: str
    nodes: np.ndarray
    weights: np.ndarray
    axis: int
    sign: int  # outward normal is sign * e_axis


@dataclass(frozen=True, eq=False)
class Grid:
    dim: int
    extents: tuple
    n: tuple
    h: tuple
    coords: np.ndarray
    cell_weights: np.ndarray
    boundary_nodes: np.ndarray
    boundary_weights: np.ndarray
    sides: tuple
    sigma1_nodes: np.ndarray
    sigma1_weights: np.ndarray
    sigma2_nodes: np.ndarray
    sigma2_weights: np.ndarray
    gamma_nodes: np.ndarray
    gamma_weights: np.ndarray
    roi_nodes: np.ndarray
    specs: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self):
        return int(np.prod(self.n))

    @property
    def shape(self):
        """Array shape for reshaping a nodal field (rows = y, columns = x)."""
        return tuple(reversed(self.n))

    @property
    def key(self):
        """Digest identifying the node layout and all tags."""
        h = hashlib.blake2b(digest_size=16)
        h.update(repr((self.dim, self.extents, self.n)).encode())
        for arr in (self.sigma1_nodes, self.sigma2_nodes, self.gamma_nodes,
                    self.roi_nodes, self.sigma1_weights, self.sigma2_weights,
                    self.gamma_weights):
            h.update(np.ascontiguousarray(arr).tobytes())
            h.update(b"|")
        return h.hexdigest()

    def sigma_nodes(self, k):
        return self.sigma1_nodes if k == 1 else self.sigma2_nodes

    def sigma_weights(self, k):
        return self.sigma1_weights if k == 1 else self.sigma2_weights

    def boundary_position(self, nodes):
        """Positions of ``nodes`` inside ``boundary_nodes``."""
        pos = np.searchsorted(self.boundary_nodes, nodes)
        return pos

    def embed(self, roi_values, fill=0.0):
        """Extend a field on the region of interest by ``fill`` to all nodes."""
        roi_values = np.asarray(roi_values)
        if roi_values.shape != (self.roi_nodes.size,):
            raise ShapeError(
                f"expected {self.roi_nodes.size} roi values, got {roi_values.shape}")
        out = np.full(self.num_nodes, fill, dtype=np.result_type(roi_values, float))
        out[self.roi_nodes] = roi_values
        return out

    def retag(self, sigma1_spec="keep", sigma2_spec="keep", gamma_spec="keep",
              roi_spec="keep"):
        """Same node layout with some tag specifications replaced."""
        specs = dict(self.specs)
        for name, value in (("sigma1", sigma1_spec), ("sigma2", sigma2_spec),
                            ("gamma", gamma_spec), ("roi", roi_spec)):
            if not (isinstance(value, str) and value == "keep"):
                specs[name] = value
        return build_grid(self.dim, self.extents, self.n, specs.get("sigma1"),
                          specs.get("sigma2"), specs.get("gamma"), specs.get("roi"))


def _as_tuple(value, dim, name):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1 and dim > 1:
        arr = np.repeat(arr, dim)
    if arr.size != dim:
        raise GeometryError(f"{name} needs {dim} entries, got {arr.size}")
    return tuple(float(a) for a in arr)


def _sides(dim, n, h, extents):
    if dim == 1:
        return (Side("left", np.array([0]), np.ones(1), 0, -1),
                Side("right", np.array([n[0] - 1]), np.ones(1), 0, +1))
    nx, ny = n
    ix = np.arange(nx)
    iy = np.arange(ny)
    wx = trapezoid_weights(nx, h[0])
    wy = trapezoid_weights(ny, h[1])
    return (Side("left", iy * nx, wy, 0, -1),
            Side("right", iy * nx + nx - 1, wy, 0, +1),
            Side("bottom", ix, wx, 1, -1),
            Side("top", (ny - 1) * nx + ix, wx, 1, +1))


def _select_sigma(spec, dim, extents, coords, sides, tol, label):
    if spec is None:
        return np.zeros(0, dtype=int), np.zeros(0)
    if dim == 1:
        vals = np.atleast_1d(np.asarray(spec, float))
        a, b = float(vals.min()), float(vals.max())
        if a < -tol or b > extents[0] + tol:
            raise GeometryError(f"{label} spec {spec} exits the domain")
        nodes = [s.nodes[0] for s in sides
                 if a - tol <= coords[s.nodes[0], 0] <= b + tol]
        if not nodes:
            raise GeometryError(f"{label} spec {spec} selects no boundary node")
        nodes = np.array(sorted(nodes), dtype=int)
        return nodes, np.ones(nodes.size)
    p = np.asarray(spec, float)
    if p.shape != (2, 2):
        raise GeometryError(f"{label} spec must be [[x0, y0], [x1, y1]]")
    if np.any(p < -tol) or np.any(p[:, 0] > extents[0] + tol) or \
            np.any(p[:, 1] > extents[1] + tol):
        raise GeometryError(f"{label} spec {spec} exits the domain")
    for side in sides:
        level = 0.0 if side.sign < 0 else extents[side.axis]
        if np.all(np.abs(p[:, side.axis] - level) <= tol):
            along = 1 - side.axis
            lo, hi = sorted(p[:, along])
            c = coords[side.nodes, along]
            mask = (c >= lo - tol) & (c <= hi + tol)
            nodes = side.nodes[mask]
            if nodes.size == 0:
                raise GeometryError(f"{label} spec {spec} selects no node")
            h_along = extents[along] / (len(side.nodes) - 1)
            w = trapezoid_weights(nodes.size, h_along) if nodes.size > 1 else \
                np.array([0.5 * h_along])
            order = np.argsort(nodes)
            return nodes[order], w[order]
    raise GeometryError(f"{label} spec {spec} does not lie on the boundary")


def _select_gamma(spec, dim, extents, n, h, coords, tol):
    if spec is None:
        raise GeometryError("a receiver manifold (gamma spec) is required")
    if dim == 1:
        x0 = float(np.atleast_1d(np.asarray(spec, float))[0])
        if not (tol < x0 < extents[0] - tol):
            raise GeometryError(f"receiver point {x0} is not strictly interior")
        i = int(round(x0 / h[0]))
        if abs(i * h[0] - x0) > tol:
            raise GeometryError(f"receiver point {x0} is not a grid node")
        return np.array([i]), np.ones(1)
    p = np.asarray(spec, float)
    if p.shape != (2, 2):
        raise GeometryError("gamma spec must be [[x0, y0], [x1, y1]]")
    for a in range(2):
        if np.any(p[:, a] <= tol) or np.any(p[:, a] >= extents[a] - tol):
            raise GeometryError(f"receiver segment {spec} touches or exits the boundary")
    if abs(p[0, 0] - p[1, 0]) <= tol:
        fixed = 0
    elif abs(p[0, 1] - p[1, 1]) <= tol:
        fixed = 1
    else:
        raise GeometryError("receiver segment must be axis aligned")
    line = int(round(p[0, fixed] / h[fixed]))
    if abs(line * h[fixed] - p[0, fixed]) > tol:
        raise GeometryError("receiver segment is not on a grid line")
    along = 1 - fixed
    lo, hi = sorted(p[:, along])
    mask = (np.abs(coords[:, fixed] - line * h[fixed]) <= tol) & \
        (coords[:, along] >= lo - tol) & (coords[:, along] <= hi + tol)
    nodes = np.flatnonzero(mask)
    if nodes.size < 2:
        raise GeometryError("receiver segment must span at least two nodes")
    return nodes, trapezoid_weights(nodes.size, h[along])


def _select_roi(spec, dim, extents, coords, tol):
    if spec is None:
        return np.arange(coords.shape[0])
    p = np.asarray(spec, float).reshape(2, dim) if dim > 1 else \
        np.asarray(spec, float).reshape(2, 1)
    lo = np.minimum(p[0], p[1])
    hi = np.maximum(p[0], p[1])
    if np.any(lo < -tol) or np.any(hi > np.asarray(extents) + tol):
        raise GeometryError(f"roi spec {spec} exits the domain")
    mask = np.all((coords >= lo - tol) & (coords <= hi + tol), axis=1)
    nodes = np.flatnonzero(mask)
    if nodes.size == 0:
        raise GeometryError(f"roi spec {spec} selects no node")
    return nodes


def build_grid(dim, extents, n, sigma1_spec=None, sigma2_spec=None,
               gamma_spec=None, roi_spec=None):
    """Build a tagged uniform grid on ``[0, L_x] (x [0, L_y])``.

    Parameters
    ----------
    dim : int
        1 or 2.
    extents, n : float or sequence
        Physical lengths and node counts per axis (``n_i >= 3``).
    sigma1_spec, sigma2_spec : sequence or None
        Excitation segments on the boundary.  In 1-D an interval ``[a, b]``
        whose boundary points are selected; in 2-D an axis aligned segment
        ``[[x0, y0], [x1, y1]]`` lying on one side of the rectangle.
    gamma_spec : float or sequence
        Receiver: an interior node in 1-D, an interior grid-line segment in 2-D.
    roi_spec : sequence or None
        Bounding box of the region of interest; ``None`` means the whole grid.
    """
    if dim not in (1, 2):
        raise GeometryError(f"dim must be 1 or 2, got {dim}")
    extents = _as_tuple(extents, dim, "extents")
    n = tuple(int(v) for v in np.atleast_1d(n))
    if len(n) == 1 and dim == 2:
        n = n * 2
    if len(n) != dim:
        raise GeometryError(f"n needs {dim} entries")
    if any(v < 3 for v in n):
        raise GeometryError("every axis needs at least 3 nodes")
    if any(e <= 0 for e in extents):
        raise GeometryError("extents must be positive")
    h = tuple(e / (m - 1) for e, m in zip(extents, n))
    tol = 1e-9 * max(extents)

    axes = [np.arange(m) * hh for m, hh in zip(n, h)]
    if dim == 1:
        coords = axes[0][:, None]
        cell_weights = trapezoid_weights(n[0], h[0])
    else:
        X, Y = np.meshgrid(axes[0], axes[1])  # shape (ny, nx)
        coords = np.column_stack([X.ravel(), Y.ravel()])
        cell_weights = np.outer(trapezoid_weights(n[1], h[1]),
                                trapezoid_weights(n[0], h[0])).ravel()

    sides = _sides(dim, n, h, extents)
    N = int(np.prod(n))
    bw = np.zeros(N)
    for s in sides:
        bw[s.nodes] += s.weights
    boundary_nodes = np.flatnonzero(bw > 0)
    boundary_weights = bw[boundary_nodes]

    s1n, s1w = _select_sigma(sigma1_spec, dim, extents, coords, sides, tol, "sigma1")
    s2n, s2w = _select_sigma(sigma2_spec, dim, extents, coords, sides, tol, "sigma2")
    if np.intersect1d(s1n, s2n).size:
        raise OverlapError("sigma1 and sigma2 share boundary nodes")
    gn, gw = _select_gamma(gamma_spec, dim, extents, n, h, coords, tol)
    if np.intersect1d(gn, boundary_nodes).size:
        raise GeometryError("receiver nodes touch the boundary")
    roi = _select_roi(roi_spec, dim, extents, coords, tol)

    specs = {"sigma1": sigma1_spec, "sigma2": sigma2_spec, "gamma": gamma_spec,
             "roi": roi_spec}
    return Grid(dim=dim, extents=extents, n=n, h=h, coords=coords,
                cell_weights=cell_weights, boundary_nodes=boundary_nodes,
                boundary_weights=boundary_weights, sides=sides,
                sigma1_nodes=s1n, sigma1_weights=s1w,
                sigma2_nodes=s2n, sigma2_weights=s2w,
                gamma_nodes=gn, gamma_weights=gw, roi_nodes=roi, specs=specs)


def inner_product_roi(a, b, g):
    """Discrete L2 inner product over the region of interest."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = g.roi_nodes.size
    if a.shape != (m,) or b.shape != (m,):
        raise ShapeError(f"roi fields need shape ({m},), got {a.shape}, {b.shape}")
    return float(np.sum(g.cell_weights[g.roi_nodes] * a * b))


def inner_product_gamma(a, b, g):
    """Real part of the discrete L2 pairing on the receiver manifold."""
    a = np.asarray(a)
    b = np.asarray(b)
    m = g.gamma_nodes.size
    if a.shape != (m,) or b.shape != (m,):
        raise ShapeError(f"receiver fields need shape ({m},), got {a.shape}, {b.shape}")
    return float(np.real(np.sum(g.gamma_weights * a * np.conj(b))))
