"""Parameter-to-state map, interaction source, observation and forward operator."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import helmholtz as hz
from .errors import DomainError, ShapeError


@dataclass(frozen=True, eq=False)
class Params:
    """Perturbations (kappa, gamma) of the known backgrounds on the ROI nodes."""

    kappa: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=float)
        g = np.asarray(self.gamma, dtype=float)
        if k.shape != g.shape or k.ndim != 1:
            raise ShapeError("kappa and gamma must be equal-length vectors")
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "gamma", g)

    @classmethod
    def zeros(cls, grid):
        m = grid.roi_nodes.size
        return cls(np.zeros(m), np.zeros(m))

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        m = v.size // 2
        return cls(v[:m], v[m:])

    def vector(self):
        return np.concatenate([self.kappa, self.gamma])

    def __add__(self, other):
        return Params(self.kappa + other.kappa, self.gamma + other.gamma)

    def __sub__(self, other):
        return Params(self.kappa - other.kappa, self.gamma - other.gamma)

    def scaled(self, t):
        return Params(t * self.kappa, t * self.gamma)


@dataclass(frozen=True, eq=False)
class StateTriple:
    phi1: np.ndarray
    phi2: np.ndarray
    psi: np.ndarray


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One (excitation, receiver) pair of the measurement family.

    ``kappa0`` and ``gamma0`` are the known nodal backgrounds.
    """

    grid: object
    impedance: hz.ImpedanceSet
    exc1: hz.Excitation
    exc2: hz.Excitation
    kappa0: np.ndarray
    gamma0: np.ndarray
    ell: int = 1
    m: int = 1
    rho: float | None = None

    def __post_init__(self):
        if not (self.exc1.omega > self.exc2.omega > 0):
            raise ValueError("need omega1 > omega2 > 0")
        N = self.grid.num_nodes
        for name in ("kappa0", "gamma0"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (N,)).copy()
            object.__setattr__(self, name, v)

    @property
    def omega1(self):
        return self.exc1.omega

    @property
    def omega2(self):
        return self.exc2.omega

    @property
    def omega_d(self):
        return self.exc1.omega - self.exc2.omega

    def medium(self, params):
        g = self.grid
        kappa = self.kappa0 + g.embed(params.kappa)
        if np.any(kappa < 0):
            raise DomainError(f"kappa_tilde negative (min {kappa.min():.3e})")
        if self.rho is not None:
            norm = np.sqrt(np.sum(g.cell_weights[g.roi_nodes] * params.kappa**2))
            if norm > self.rho:
                raise DomainError(f"||kappa|| = {norm:.3e} exceeds trust radius {self.rho}")
        return hz.Medium(kappa, self.gamma0 + g.embed(params.gamma))

    def with_grid(self, grid, **changes):
        return replace(self, grid=grid, **changes)


@dataclass(eq=False)
class Observation:
    """Receiver data of one instance with its absolute noise level."""

    y: np.ndarray
    delta: float = 0.0
    clean_norm: float = float("nan")
    index: int = 0
    extra: dict = field(default_factory=dict)


_grad_cache = {}
_grad_lock = threading.Lock()


def _diff_1d(n, h):
    rows = [0, 0, 0]
    cols = [0, 1, 2]
    vals = [-3.0, 4.0, -1.0]
    i = np.arange(1, n - 1)
    rows += list(i) + list(i)
    cols += list(i - 1) + list(i + 1)
    vals += [-1.0] * (n - 2) + [1.0] * (n - 2)
    rows += [n - 1] * 3
    cols += [n - 3, n - 2, n - 1]
    vals += [1.0, -4.0, 3.0]
    return sp.csr_matrix((np.array(vals) / (2 * h), (rows, cols)), shape=(n, n))


def gradient_matrices(grid):
    """Second-order difference matrices, one per axis (one-sided at the ends)."""
    key = (grid.dim, grid.extents, grid.n)
    with _grad_lock:
        D = _grad_cache.get(key)
    if D is not None:
        return D
    if grid.dim == 1:
        D = (_diff_1d(grid.n[0], grid.h[0]),)
    else:
        nx, ny = grid.n
        D = (sp.kron(sp.identity(ny), _diff_1d(nx, grid.h[0]), format="csr"),
             sp.kron(_diff_1d(ny, grid.h[1]), sp.identity(nx), format="csr"))
    with _grad_lock:
        _grad_cache[key] = D
    return D


def grad_dot(grid, a, b):
    """Nodal ``grad a . conj(grad b)``."""
    return sum((D @ a) * np.conj(D @ b) for D in gradient_matrices(grid))


def interaction_source(grid, medium, phi1, phi2, omega1, omega2):
    """Nodal source ``2i w_d (kappa grad phi1 . conj grad phi2 + w1 w2 gamma phi1 conj phi2)``."""
    phi1 = np.asarray(phi1)
    phi2 = np.asarray(phi2)
    if phi1.shape != (grid.num_nodes,) or phi2.shape != phi1.shape:
        raise ShapeError("beam fields must be nodal vectors")
    wd = omega1 - omega2
    return 2j * wd * (medium.kappa_tilde * grad_dot(grid, phi1, phi2)
                      + omega1 * omega2 * medium.gamma_tilde * phi1 * np.conj(phi2))


def beam_fields(inst, medium):
    g = inst.grid
    phi1 = hz.solve_helmholtz_sigma(g, medium, inst.impedance, inst.exc1, 1)
    phi2 = hz.solve_helmholtz_sigma(g, medium, inst.impedance, inst.exc2, 2)
    return phi1, phi2


def solve_state(inst, params):
    """Three linear solves: both beams, then the difference-frequency field."""
    medium = inst.medium(params)
    phi1, phi2 = beam_fields(inst, medium)
    f = interaction_source(inst.grid, medium, phi1, phi2, inst.omega1, inst.omega2)
    psi = hz.solve_helmholtz(inst.grid, medium, inst.impedance, inst.omega_d, f)
    return StateTriple(phi1, phi2, psi)


def observe(psi, grid, omega_d):
    """Pressure trace ``i omega_d psi`` on the receiver nodes."""
    return 1j * omega_d * np.asarray(psi)[grid.gamma_nodes]


def forward(inst, params):
    return observe(solve_state(inst, params).psi, inst.grid, inst.omega_d)


def state_residual(inst, params, state):
    """Residuals of the three discrete state equations and their relative sizes."""
    g = inst.grid
    medium = inst.medium(params)
    out = []
    for k, exc, phi in ((1, inst.exc1, state.phi1), (2, inst.exc2, state.phi2)):
        A = hz.assemble_helmholtz(g, medium, exc.omega, inst.impedance.field(k), k)
        nodes, weights = g.sigma_nodes(k), g.sigma_weights(k)
        b = hz.neumann_load(g, nodes, weights,
                            np.broadcast_to(np.asarray(exc.g_hat, complex), nodes.shape))
        if exc.interior_source is not None:
            b = b + g.cell_weights * exc.interior_source
        out.append((A @ phi - b, np.linalg.norm(b)))
    A = hz.assemble_helmholtz(g, medium, inst.omega_d, inst.impedance.sigma, None)
    b = g.cell_weights * interaction_source(g, medium, state.phi1, state.phi2,
                                            inst.omega1, inst.omega2)
    out.append((A @ state.psi - b, np.linalg.norm(b)))
    return out


def gamma_norm(grid, y):
    return float(np.sqrt(np.sum(grid.gamma_weights * np.abs(y) ** 2)))


def _match_nodes(coarse, fine, nodes):
    tol = 1e-9 * max(coarse.extents)
    out = []
    for i in nodes:
        d = np.max(np.abs(fine.coords - coarse.coords[i]), axis=1)
        j = int(np.argmin(d))
        if d[j] > tol:
            raise ValueError("fine grid does not contain the coarse receiver nodes")
        out.append(j)
    return np.array(out)


def synthesize_data(instances, true_params, delta, rng_seed=None,
                    fine_instances=None, fine_params=None):
    """Synthetic observations with relative complex Gaussian noise.

    The noise of instance ``p`` is rescaled so that its receiver L2 norm equals
    ``delta`` times the norm of the clean data.  With ``fine_instances`` the
    clean data come from a finer discretization sampled at the coarse receivers.
    """
    rng = np.random.default_rng(rng_seed)
    out = []
    for p, inst in enumerate(instances):
        if fine_instances is not None:
            fi = fine_instances[p]
            psi = solve_state(fi, fine_params).psi
            nodes = _match_nodes(inst.grid, fi.grid, inst.grid.gamma_nodes)
            clean = 1j * fi.omega_d * psi[nodes]
        else:
            clean = forward(inst, true_params)
        clean_norm = gamma_norm(inst.grid, clean)
        eta = rng.standard_normal(clean.size) + 1j * rng.standard_normal(clean.size)
        eta_norm = gamma_norm(inst.grid, eta)
        if delta > 0 and clean_norm > 0:
            eta = eta * (delta * clean_norm / eta_norm)
        else:
            eta = np.zeros_like(clean)
        out.append(Observation(y=clean + eta, delta=gamma_norm(inst.grid, eta),
                               clean_norm=clean_norm, index=p,
                               extra={"ell": inst.ell, "m": inst.m}))
    return out
