"""Linearized forward map, its adjoint, and Gram/residual assembly.

Every adjoint term is the exact transpose of the matching linearized term
(discretize, then transpose), so the discrete identity

    <T d, r>_Gamma = <d, T* r>_ROI

holds to rounding error.  Both pairings are ``Re sum w a conj(b)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import helmholtz as hz
from .errors import ShapeError
from .forward import Params, gradient_matrices, gamma_norm, solve_state

Direction = Params


@dataclass(frozen=True, eq=False)
class AdjointTriple:
    p1: np.ndarray
    p2: np.ndarray
    q: np.ndarray


@dataclass(frozen=True, eq=False)
class Basis:
    """Parameter basis: columns are nodal ROI functions for kappa and gamma."""

    kappa: np.ndarray  # (n_roi, I)
    gamma: np.ndarray  # (n_roi, J)

    @property
    def size(self):
        return self.kappa.shape[1] + self.gamma.shape[1]

    def split(self, x):
        I = self.kappa.shape[1]
        return x[:I], x[I:]

    def params(self, x):
        a, b = self.split(np.asarray(x, dtype=float))
        return Params(self.kappa @ a, self.gamma @ b)

    def mass(self, grid):
        w = grid.cell_weights[grid.roi_nodes]
        I, J = self.kappa.shape[1], self.gamma.shape[1]
        D = np.zeros((I + J, I + J))
        D[:I, :I] = self.kappa.T @ (w[:, None] * self.kappa)
        D[I:, I:] = self.gamma.T @ (w[:, None] * self.gamma)
        return D

    def project(self, grid, p):
        """``B^T W p`` for a parameter pair on the ROI."""
        w = grid.cell_weights[grid.roi_nodes]
        return np.concatenate([self.kappa.T @ (w * p.kappa), self.gamma.T @ (w * p.gamma)])


def _patch_matrix(grid, patches):
    """Piecewise-constant indicator columns on a ``patches`` tensor partition of the ROI."""
    coords = grid.coords[grid.roi_nodes]
    patches = np.broadcast_to(np.atleast_1d(patches), (grid.dim,))
    lab = np.zeros(coords.shape[0], dtype=int)
    stride = 1
    for a in range(grid.dim):
        lo, hi = coords[:, a].min(), coords[:, a].max()
        t = (coords[:, a] - lo) / max(hi - lo, 1e-300)
        k = np.minimum((t * patches[a]).astype(int), patches[a] - 1)
        lab += stride * k
        stride *= patches[a]
    used = np.unique(lab)
    return (lab[:, None] == used[None, :]).astype(float)


def _hat_matrix(grid, patches):
    """Tensor-product piecewise-linear hats on a coarse uniform partition of the ROI."""
    coords = grid.coords[grid.roi_nodes]
    patches = np.broadcast_to(np.atleast_1d(patches), (grid.dim,))
    cols = None
    for a in range(grid.dim):
        lo, hi = coords[:, a].min(), coords[:, a].max()
        knots = np.linspace(lo, hi, patches[a] + 1)
        step = knots[1] - knots[0]
        H = np.maximum(0.0, 1.0 - np.abs(coords[:, a, None] - knots[None, :]) / step)
        cols = H if cols is None else (cols[:, :, None] * H[:, None, :]).reshape(len(coords), -1)
    return cols


def make_basis(grid, kind="nodal", patches=None, unknowns="both"):
    """Build a parameter basis.

    Parameters
    ----------
    kind : {"nodal", "patch", "hat"}
        Nodal unit vectors, piecewise constants, or piecewise-linear hats on a
        coarse partition with ``patches`` cells per axis.
    unknowns : {"both", "kappa", "gamma"}
        Which coefficient is sought; the other gets an empty block.
    """
    m = grid.roi_nodes.size
    if kind == "nodal":
        B = np.eye(m)
    elif kind == "patch":
        B = _patch_matrix(grid, patches)
    elif kind == "hat":
        B = _hat_matrix(grid, patches)
    else:
        raise ValueError(f"unknown basis kind {kind!r}")
    empty = np.zeros((m, 0))
    if unknowns == "both":
        return Basis(B, B.copy())
    if unknowns == "kappa":
        return Basis(B, empty)
    if unknowns == "gamma":
        return Basis(empty, B)
    raise ValueError(f"unknowns must be both, kappa or gamma, not {unknowns!r}")


def _factors(inst, medium):
    g, imp = inst.grid, inst.impedance
    return (hz.beam_factor(g, medium, imp, inst.omega1, 1),
            hz.beam_factor(g, medium, imp, inst.omega2, 2),
            hz.difference_factor(g, medium, imp, inst.omega_d))


def _col(v):
    return v if v.ndim == 2 else v[:, None]


def linearized_fields(inst, params, state, dkappa, dgamma):
    """Full-field responses ``(dphi1, dphi2, dpsi)`` to nodal perturbations.

    ``dkappa`` and ``dgamma`` are ROI arrays of shape ``(m,)`` or ``(m, K)``.
    """
    g = inst.grid
    medium = inst.medium(params)
    F1, F2, Fd = _factors(inst, medium)
    N = g.num_nodes
    dk = np.zeros((N,) + np.shape(dkappa)[1:])
    dg = np.zeros((N,) + np.shape(dgamma)[1:])
    dk[g.roi_nodes] = dkappa
    dg[g.roi_nodes] = dgamma
    vec = dk.ndim == 1
    dk, dg = _col(dk), _col(dg)
    w = g.cell_weights[:, None]
    w1, w2, wd = inst.omega1, inst.omega2, inst.omega_d
    phi1, phi2, psi = state.phi1[:, None], state.phi2[:, None], state.psi[:, None]
    kap, gam = medium.kappa_tilde[:, None], medium.gamma_tilde[:, None]

    active = np.any(dk != 0, axis=0)
    dphi1 = np.zeros(dk.shape, dtype=complex)
    dphi2 = np.zeros(dk.shape, dtype=complex)
    if active.any():
        dphi1[:, active] = F1.solve(w * w1**2 * dk[:, active] * phi1)
        dphi2[:, active] = F2.solve(w * w2**2 * dk[:, active] * phi2)
    dG = np.zeros(dk.shape, dtype=complex)
    G = 0.0
    for D in gradient_matrices(g):
        a1, a2 = (D @ state.phi1)[:, None], (D @ state.phi2)[:, None]
        G = G + a1 * np.conj(a2)
        if active.any():
            dG = dG + (D @ dphi1) * np.conj(a2) + a1 * np.conj(D @ dphi2)
    P = phi1 * np.conj(phi2)
    dP = dphi1 * np.conj(phi2) + phi1 * np.conj(dphi2)
    f = wd**2 * dk * psi + 2j * wd * (dk * G + kap * dG + w1 * w2 * (dg * P + gam * dP))
    dpsi = Fd.solve(w * f)
    if vec:
        return dphi1[:, 0], dphi2[:, 0], dpsi[:, 0]
    return dphi1, dphi2, dpsi


def jvp(inst, params, state, direction):
    """Receiver trace ``T d`` of the linearized forward map."""
    _, _, dpsi = linearized_fields(inst, params, state, direction.kappa, direction.gamma)
    return 1j * inst.omega_d * dpsi[inst.grid.gamma_nodes]


def jacobian(inst, params, state, basis):
    """Receiver traces of ``T`` applied to every basis column, shape ``(n_gamma, I+J)``."""
    m = inst.grid.roi_nodes.size
    I, J = basis.kappa.shape[1], basis.gamma.shape[1]
    dk = np.hstack([basis.kappa, np.zeros((m, J))])
    dg = np.hstack([np.zeros((m, I)), basis.gamma])
    _, _, dpsi = linearized_fields(inst, params, state, dk, dg)
    return 1j * inst.omega_d * dpsi[inst.grid.gamma_nodes]


def _transpose(D):
    return D.T


# Stencil used for the divergence in the beam adjoints.  Tests replace it with
# an independent discretization to confirm the identity check catches that.
adjoint_stencil = _transpose


def _adjoint_sources(inst, medium, state, q):
    """Right-hand sides of the beam adjoints (transpose of the dG/dP coupling)."""
    g = inst.grid
    wd, w12 = inst.omega_d, inst.omega1 * inst.omega2
    Q = g.cell_weights * q
    Z = -2j * wd * medium.kappa_tilde * Q
    Z2 = -2j * wd * w12 * medium.gamma_tilde * Q
    g1 = Z2 * state.phi2
    g2 = np.conj(Z2) * state.phi1
    for D in gradient_matrices(g):
        Dt = adjoint_stencil(D)
        g1 = g1 + Dt @ (Z * (D @ state.phi2))
        g2 = g2 + Dt @ (np.conj(Z) * (D @ state.phi1))
    return g1, g2


def adjoint_states(inst, params, state, r):
    """Adjoint fields ``(p1, p2, q)`` for a receiver residual ``r``."""
    g = inst.grid
    r = np.asarray(r, dtype=complex)
    if r.shape != (g.gamma_nodes.size,):
        raise ShapeError(f"residual must have {g.gamma_nodes.size} entries")
    medium = inst.medium(params)
    F1, F2, Fd = _factors(inst, medium)
    q = Fd.adjoint_solve(hz.gamma_load(g, inst.omega_d, r))
    s1, s2 = _adjoint_sources(inst, medium, state, q)
    p1 = F1.adjoint_solve(s1)
    p2 = F2.adjoint_solve(s2)
    return AdjointTriple(p1, p2, q)


def vjp(inst, params, state, r):
    """Adjoint ``T* r`` as a ROI direction ``(xi, zeta)``."""
    g = inst.grid
    adj = adjoint_states(inst, params, state, r)
    wd, w12 = inst.omega_d, inst.omega1 * inst.omega2
    grad = sum((D @ state.phi1) * np.conj(D @ state.phi2) for D in gradient_matrices(g))
    P = state.phi1 * np.conj(state.phi2)
    qc = np.conj(adj.q)
    xi = (inst.omega1**2 * state.phi1 * np.conj(adj.p1)
          + inst.omega2**2 * state.phi2 * np.conj(adj.p2)
          + wd**2 * state.psi * qc + 2j * wd * grad * qc)
    zeta = 2j * wd * w12 * P * qc
    roi = g.roi_nodes
    return Params(np.real(xi[roi]), np.real(zeta[roi]))


@dataclass(frozen=True, eq=False)
class GramSystem:
    M: np.ndarray
    r: np.ndarray
    D: np.ndarray
    J: np.ndarray | None = None
    residual_norm: float = 0.0


def setup_gram_and_res(instances, params, states, basis, ys, alpha=0.0,
                       x0_minus_x=None, variant="irgnm"):
    """Assemble ``M = Re(J^H W J)`` and ``r = Re(J^H W (y - F))`` over instances.

    For ``variant="irgnm"`` the regularization term ``alpha B^T W (x0 - x)``
    is added to ``r``; ``"lm"`` skips it.
    """
    if variant not in ("irgnm", "lm"):
        raise ValueError(f"variant must be irgnm or lm, not {variant!r}")
    n = basis.size
    M = np.zeros((n, n))
    r = np.zeros(n)
    res2 = 0.0
    Js = []
    for inst, state, y in zip(instances, states, ys):
        g = inst.grid
        Jp = jacobian(inst, params, state, basis)
        wg = g.gamma_weights[:, None]
        Fp = 1j * inst.omega_d * state.psi[g.gamma_nodes]
        dy = np.asarray(y) - Fp
        M += np.real(Jp.conj().T @ (wg * Jp))
        r += np.real(Jp.conj().T @ (g.gamma_weights * dy))
        res2 += gamma_norm(g, dy) ** 2
        Js.append(Jp)
    M = 0.5 * (M + M.T)
    grid = instances[0].grid
    D = basis.mass(grid)
    if variant == "irgnm" and x0_minus_x is not None and alpha > 0:
        r = r + alpha * basis.project(grid, x0_minus_x)
    return GramSystem(M=M, r=r, D=D, J=Js, residual_norm=float(np.sqrt(res2)))


def states_for(instances, params):
    return [solve_state(inst, params) for inst in instances]
