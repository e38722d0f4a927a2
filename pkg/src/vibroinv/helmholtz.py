"""Discrete Helmholtz operators with impedance and Neumann boundary parts.

The matrix of ``-omega^2 kappa u - Lap u`` is assembled as the discrete
sesquilinear form

    A = S - omega^2 diag(w * kappa) + i diag(b_imp * sigma)

with ``S`` the vertex-centred 5-point (3-point in 1-D) stiffness matrix,
``w`` the trapezoid cell weights and ``b_imp`` the boundary measure of the
impedance part of the boundary.  Rows at boundary nodes coincide with the
second order ghost-node elimination of ``d_nu u + i sigma u = 0`` scaled by
the boundary cell weight.  ``A`` is complex symmetric, so plain transposes
are exact discrete adjoints.
"""
from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import sparse
from .errors import ConvergenceError, DomainError, NotPositiveError, ShapeError


@dataclass(frozen=True, eq=False)
class Medium:
    """Nodal sound-speed and nonlinearity coefficients on the whole grid."""

    kappa_tilde: np.ndarray
    gamma_tilde: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kappa_tilde, dtype=float)
        g = np.asarray(self.gamma_tilde, dtype=float)
        if k.shape != g.shape or k.ndim != 1:
            raise ShapeError("kappa_tilde and gamma_tilde must be equal-length vectors")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(g))):
            raise DomainError("medium coefficients must be finite")
        if np.any(k < 0):
            raise DomainError(f"kappa_tilde must be nonnegative (min {k.min():.3e})")
        object.__setattr__(self, "kappa_tilde", k)
        object.__setattr__(self, "gamma_tilde", g)

    @classmethod
    def uniform(cls, grid, kappa=1.0, gamma=0.0):
        N = grid.num_nodes
        return cls(np.full(N, float(kappa)), np.full(N, float(gamma)))


@dataclass(frozen=True, eq=False)
class ImpedanceSet:
    """Impedance coefficients on ``grid.boundary_nodes``.

    ``sigma`` belongs to the difference-frequency problem, ``sigma1`` and
    ``sigma2`` to the two beams (their values on the excitation segments are
    ignored, the segments carry Neumann data).
    """

    sigma: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        for name in ("sigma", "sigma1", "sigma2"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite and nonnegative")
            object.__setattr__(self, name, v)

    @classmethod
    def uniform(cls, grid, sigma, sigma1=None, sigma2=None):
        nb = grid.boundary_nodes.size
        s1 = sigma if sigma1 is None else sigma1
        s2 = sigma if sigma2 is None else sigma2
        return cls(np.full(nb, float(sigma)), np.full(nb, float(s1)),
                   np.full(nb, float(s2)))

    @classmethod
    def absorbing(cls, grid, omega1, omega2, kappa0=1.0):
        """First-order absorbing values ``sigma_k = omega_k sqrt(kappa0)``."""
        r = np.sqrt(kappa0)
        return cls.uniform(grid, (omega1 - omega2) * r, omega1 * r, omega2 * r)

    def field(self, k):
        return {None: self.sigma, 0: self.sigma, 1: self.sigma1, 2: self.sigma2}[k]

    def is_absorbing(self, grid, k=None):
        """True if the coefficient is positive on an open boundary piece."""
        s = self.field(k)
        if grid.dim == 1:
            return bool(np.any(s > 0))
        pos = dict(zip(grid.boundary_nodes.tolist(), s))
        for side in grid.sides:
            vals = np.array([pos[i] for i in side.nodes])
            if np.any((vals[:-1] > 0) & (vals[1:] > 0)):
                return True
        return False


@dataclass(frozen=True, eq=False)
class Excitation:
    """Time-harmonic drive of one beam.

    ``g_hat`` is the Neumann datum on the excitation segment nodes;
    ``interior_source`` an optional nodal source on the whole grid.
    """

    omega: float
    g_hat: np.ndarray
    interior_source: np.ndarray | None = None


def _digest(*arrays):
    h = hashlib.blake2b(digest_size=16)
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
        h.update(b"|")
    return h.hexdigest()


_stiffness_cache = {}
_stiffness_lock = threading.Lock()


def stiffness(grid):
    """Real symmetric stiffness matrix of the vertex-centred scheme."""
    key = (grid.dim, grid.extents, grid.n)
    with _stiffness_lock:
        S = _stiffness_cache.get(key)
    if S is not None:
        return S
    from .grid import trapezoid_weights

    rows, cols, vals = [], [], []

    def add_edges(a, b, c):
        rows.extend([a, b, a, b])
        cols.extend([a, b, b, a])
        vals.extend([c, c, -c, -c])

    if grid.dim == 1:
        n, h = grid.n[0], grid.h[0]
        i = np.arange(n - 1)
        add_edges(i, i + 1, np.full(n - 1, 1.0 / h))
    else:
        nx, ny = grid.n
        hx, hy = grid.h
        wx = trapezoid_weights(nx, hx)
        wy = trapezoid_weights(ny, hy)
        IX, IY = np.meshgrid(np.arange(nx - 1), np.arange(ny))
        a = (IY * nx + IX).ravel()
        add_edges(a, a + 1, (wy[IY] / hx).ravel())
        IX, IY = np.meshgrid(np.arange(nx), np.arange(ny - 1))
        a = (IY * nx + IX).ravel()
        add_edges(a, a + nx, (wx[IX] / hy).ravel())
    N = grid.num_nodes
    S = sparse.assemble(np.concatenate(rows), np.concatenate(cols),
                        np.concatenate(vals), (N, N))
    with _stiffness_lock:
        _stiffness_cache[key] = S
    return S


def _segment(grid, neumann_segment):
    if neumann_segment is None:
        return np.zeros(0, dtype=int), np.zeros(0)
    if isinstance(neumann_segment, (int, np.integer)):
        k = int(neumann_segment)
        return grid.sigma_nodes(k), grid.sigma_weights(k)
    nodes, weights = neumann_segment
    return np.asarray(nodes, dtype=int), np.asarray(weights, dtype=float)


def impedance_weights(grid, neumann_segment=None):
    """Boundary measure of the impedance part, aligned with ``boundary_nodes``."""
    nodes, weights = _segment(grid, neumann_segment)
    bw = grid.boundary_weights.copy()
    if nodes.size:
        bw[grid.boundary_position(nodes)] -= weights
    return np.maximum(bw, 0.0)


def assemble_helmholtz(grid, medium, omega, sigma_field, neumann_segment=None):
    """Matrix of ``-omega^2 kappa u - Lap u`` with impedance/Neumann boundary.

    ``sigma_field`` is a scalar or an array on ``grid.boundary_nodes``;
    ``neumann_segment`` is ``None``, a beam index ``k`` or ``(nodes, weights)``.
    """
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    sigma = np.broadcast_to(np.asarray(sigma_field, dtype=float),
                            grid.boundary_nodes.shape)
    diag = -omega**2 * grid.cell_weights * medium.kappa_tilde + 0j
    diag[grid.boundary_nodes] += 1j * sigma * impedance_weights(grid, neumann_segment)
    return (stiffness(grid) + sp.diags(diag, format="csr")).tocsr()


class _FactorCache:
    def __init__(self, maxsize=64):
        self.maxsize = maxsize
        self._data = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key, build):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        value = build()
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)
        return value

    def clear(self):
        with self._lock:
            self._data.clear()


factor_cache = _FactorCache()


def factor(grid, medium, omega, sigma_field, neumann_segment=None, backend=None):
    """Cached factorization of :func:`assemble_helmholtz`."""
    nodes, weights = _segment(grid, neumann_segment)
    backend = backend or sparse.get_default_backend()
    sigma = np.broadcast_to(np.asarray(sigma_field, dtype=float),
                            grid.boundary_nodes.shape)
    key = (grid.key, _digest(medium.kappa_tilde), float(omega), _digest(sigma),
           _digest(nodes, weights), backend)
    return factor_cache.get(key, lambda: sparse.factorize(
        assemble_helmholtz(grid, medium, omega, sigma, (nodes, weights)), backend))


def beam_factor(grid, medium, impedance, omega, k):
    return factor(grid, medium, omega, impedance.field(k), k)


def difference_factor(grid, medium, impedance, omega_d):
    return factor(grid, medium, omega_d, impedance.sigma, None)


def neumann_load(grid, nodes, weights, values):
    """Load vector of the boundary integral of ``values`` over a segment."""
    b = np.zeros(grid.num_nodes, dtype=complex)
    np.add.at(b, np.asarray(nodes, dtype=int), np.asarray(weights) * np.asarray(values))
    return b


def _field(grid, f):
    if f is None:
        return np.zeros(grid.num_nodes, dtype=complex)
    f = np.asarray(f)
    if np.ndim(f) == 0:
        return np.full(grid.num_nodes, complex(f))
    if f.shape[0] != grid.num_nodes:
        raise ShapeError(f"nodal field must have {grid.num_nodes} rows, got {f.shape}")
    return f


def solve_helmholtz_sigma(grid, medium, impedance, exc, k, f=None):
    """Beam field: Neumann data on the k-th excitation segment, impedance elsewhere."""
    nodes, weights = grid.sigma_nodes(k), grid.sigma_weights(k)
    g_hat = np.broadcast_to(np.asarray(exc.g_hat, dtype=complex), nodes.shape)
    src = _field(grid, f)
    if exc.interior_source is not None:
        src = src + _field(grid, exc.interior_source)
    rhs = grid.cell_weights * src + neumann_load(grid, nodes, weights, g_hat)
    return beam_factor(grid, medium, impedance, exc.omega, k).solve(rhs)


def solve_helmholtz(grid, medium, impedance, omega_d, f):
    """Difference-frequency field with impedance on the whole boundary."""
    src = _field(grid, f)
    w = grid.cell_weights if src.ndim == 1 else grid.cell_weights[:, None]
    return difference_factor(grid, medium, impedance, omega_d).solve(w * src)


def gamma_load(grid, omega_d, r):
    """Load of the normal-derivative jump ``-i omega_d r`` on the receiver line."""
    r = np.asarray(r, dtype=complex)
    if r.shape[0] != grid.gamma_nodes.size:
        raise ShapeError(f"receiver datum needs {grid.gamma_nodes.size} entries")
    b = np.zeros((grid.num_nodes,) + r.shape[1:], dtype=complex)
    w = grid.gamma_weights if r.ndim == 1 else grid.gamma_weights[:, None]
    b[grid.gamma_nodes] = -1j * omega_d * w * r
    return b


def solve_helmholtz_gamma(grid, medium, impedance, omega_d, r):
    """Adjoint difference-frequency field driven by a jump across the receiver.

    Solves with the conjugate-transposed operator (impedance sign flipped),
    which is the adjoint of :func:`solve_helmholtz` under the real pairing.
    """
    return difference_factor(grid, medium, impedance, omega_d).adjoint_solve(
        gamma_load(grid, omega_d, r))


@dataclass(frozen=True, eq=False)
class Eigensystem:
    """Eigenpairs of ``-c^2 Lap`` orthonormal in the kappa-weighted L2 product."""

    values: np.ndarray
    vectors: np.ndarray  # (num_nodes, n_modes)
    weight: np.ndarray   # nodal quadrature weight times kappa_tilde

    def __len__(self):
        return self.values.size

    def __iter__(self):
        for j in range(self.values.size):
            yield self.values[j], self.vectors[:, j]

    def inner(self, a, b):
        return np.sum(self.weight * a * np.conj(b))


def eigensystem_Ac(grid, medium, impedance, n_modes):
    """Lowest ``n_modes`` eigenpairs of the Neumann operator ``-c^2 Lap``.

    Only the undamped path (``sigma = 0``) is supported: with impedance the
    discrete operator is complex symmetric, not self-adjoint.
    """
    kappa = medium.kappa_tilde
    if np.any(kappa <= 0):
        raise NotPositiveError("kappa_tilde must be strictly positive for the eigensystem")
    if np.any(impedance.sigma != 0):
        raise ValueError("eigensystem requires sigma = 0 (Neumann boundary)")
    N = grid.num_nodes
    if not 1 <= n_modes <= N:
        raise ValueError(f"n_modes must lie in [1, {N}]")
    S = stiffness(grid)
    wk = grid.cell_weights * kappa
    if N <= 3000:
        lam, V = sla.eigh(S.toarray(), np.diag(wk), subset_by_index=[0, n_modes - 1])
    else:
        try:
            lam, V = spla.eigsh(S.tocsc(), k=n_modes, M=sp.diags(wk).tocsc(),
                                sigma=-1.0, which="LM")
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(str(exc)) from exc
        order = np.argsort(lam)
        lam, V = lam[order], V[:, order]
    lam = np.maximum(lam, 0.0)
    V = V / np.sqrt(np.sum(wk[:, None] * V**2, axis=0))
    idx = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[idx, np.arange(V.shape[1])])
    return Eigensystem(values=lam, vectors=V, weight=wk)


def apply_Ac(grid, medium, u):
    """``(W kappa)^{-1} S u``, the discrete action of ``-c^2 Lap``."""
    return stiffness(grid) @ u / (grid.cell_weights * medium.kappa_tilde)
