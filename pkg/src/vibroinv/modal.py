"""Modal recovery of the nonlinearity from multi-frequency data (known sound speed).

With a separable excitation the interaction source is ``h + a(w_d) b gamma_tilde``
where ``h`` and ``a b`` are known.  Expanding the difference-frequency field in the
eigenpairs ``(lam_l, phi_l)`` of the undamped Neumann operator gives

    y~(x0, w) = sum_l a(w) <b gamma', phi_l>_w phi_l(x0) / (lam_l - w^2),

with ``gamma' = gamma_tilde / kappa_tilde``.  Each coefficient is read off from the
residue of ``y~`` at ``w = sqrt(lam_l)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import helmholtz as hz
from .errors import DegenerateTraceError, MissingSamplesError, SingularError
from .forward import grad_dot, interaction_source


def _one(omega):
    return 1.0


@dataclass(frozen=True, eq=False)
class SeparableExcitation:
    """Beams ``phi(w) = a_tilde(w) b_tilde`` produced by Neumann data plus an interior source.

    ``b_tilde`` is discrete harmonic away from the boundary, so the Neumann load
    ``a_tilde S b_tilde`` and the source ``-w^2 kappa a_tilde b_tilde`` reproduce
    ``a_tilde b_tilde`` exactly.
    """

    b_tilde: np.ndarray
    omega2: float
    a_tilde: object = _one

    @classmethod
    def affine(cls, grid, omega2, left=1.0, right=2.0, a_tilde=_one):
        """1-D affine profile through ``(0, left)`` and ``(L, right)``."""
        x = grid.coords[:, 0] / grid.extents[0]
        return cls(left + (right - left) * x, omega2, a_tilde)

    def beam(self, omega):
        return self.a_tilde(omega) * self.b_tilde

    def neumann_load(self, grid, omega):
        return self.a_tilde(omega) * (hz.stiffness(grid) @ self.b_tilde)

    def interior_source(self, medium, omega):
        return -omega**2 * medium.kappa_tilde * self.beam(omega)

    def solve_beam(self, grid, medium, omega):
        """Beam from the Helmholtz solver (checks the separable construction)."""
        F = hz.factor(grid, medium, omega, 0.0, None)
        rhs = grid.cell_weights * self.interior_source(medium, omega) + self.neumann_load(grid, omega)
        return F.solve(rhs.astype(complex))

    def omegas(self, omega_d):
        return self.omega2 + omega_d, self.omega2

    def a_of_omega(self, omega_d):
        w1, w2 = self.omegas(omega_d)
        return 2j * omega_d * w1 * w2 * self.a_tilde(w1) * np.conj(self.a_tilde(w2))

    @property
    def b_field(self):
        return np.abs(self.b_tilde) ** 2

    def h_field(self, grid, medium, omega_d):
        """Known gradient-interaction part of the source."""
        w1, w2 = self.omegas(omega_d)
        return 2j * omega_d * medium.kappa_tilde * grad_dot(grid, self.beam(w1), self.beam(w2))

    def m_field(self, grid, omega_d, phi1=None, phi2=None):
        w1, w2 = self.omegas(omega_d)
        phi1 = self.beam(w1) if phi1 is None else phi1
        phi2 = self.beam(w2) if phi2 is None else phi2
        return 2j * omega_d * w1 * w2 * phi1 * np.conj(phi2)


def undamped_solve(grid, medium, omega, f):
    """Difference-frequency field with homogeneous Neumann data."""
    return hz.factor(grid, medium, omega, 0.0, None).solve(grid.cell_weights * f)


def modal_observation(grid, medium, exc, gamma_prime, omega_d, solve_beams=False):
    """Receiver pressure ``i w_d psi`` for ``gamma_tilde = kappa_tilde gamma'``."""
    w1, w2 = exc.omegas(omega_d)
    if solve_beams:
        phi1, phi2 = exc.solve_beam(grid, medium, w1), exc.solve_beam(grid, medium, w2)
    else:
        phi1, phi2 = exc.beam(w1), exc.beam(w2)
    med = hz.Medium(medium.kappa_tilde, medium.kappa_tilde * gamma_prime)
    f = interaction_source(grid, med, phi1, phi2, w1, w2)
    return 1j * omega_d * undamped_solve(grid, medium, omega_d, f)[grid.gamma_nodes]


def modified_observation(grid, medium, omega_d, y, h_field):
    """``y / (i w_d)`` minus the receiver trace of the field driven by ``h``."""
    psi_h = undamped_solve(grid, medium, omega_d, h_field)[grid.gamma_nodes]
    return np.asarray(y) / (1j * omega_d) - psi_h


@dataclass(eq=False)
class FrequencySweep:
    """Modified observations on the receiver nodes at sampled difference frequencies.

    ``sampler`` (optional) maps ``omega_d`` to a fresh modified observation and
    lets pole detection refine its estimates.
    """

    omega2: float
    omega_d: list = field(default_factory=list)
    values: list = field(default_factory=list)
    sampler: object = None

    def add(self, omega_d, value):
        self.omega_d.append(float(omega_d))
        self.values.append(np.atleast_1d(np.asarray(value, dtype=complex)))

    def sample(self, omega_d):
        if self.sampler is None:
            raise MissingSamplesError("sweep has no live sampler")
        v = np.atleast_1d(self.sampler(omega_d))
        self.add(omega_d, v)
        return v

    def lookup(self, omega_d, rtol=1e-12):
        w = np.asarray(self.omega_d)
        if w.size:
            k = int(np.argmin(np.abs(w - omega_d)))
            if abs(w[k] - omega_d) <= rtol * abs(omega_d):
                return self.values[k]
        raise MissingSamplesError(f"no sample at omega_d = {omega_d:.12g}")

    def arrays(self):
        order = np.argsort(self.omega_d)
        return np.asarray(self.omega_d)[order], np.vstack(self.values)[order]


def residue_offsets(root, eps0):
    """Two-sided, two-scale sample frequencies around ``root``."""
    e = eps0 * np.array([1.0, 0.5, 2.0, 4.0])
    return np.concatenate([root - e, root + e])


def mode_groups(eig, rtol=1e-8):
    """Index groups of numerically equal eigenvalues."""
    lam = eig.values
    groups, cur = [], [0]
    for j in range(1, lam.size):
        if abs(lam[j] - lam[cur[0]]) <= rtol * max(abs(lam[j]), 1.0):
            cur.append(j)
        else:
            groups.append(cur)
            cur = [j]
    groups.append(cur)
    return groups


def _trace_matrix(grid, eig, idx):
    T = eig.vectors[np.ix_(grid.gamma_nodes, idx)]
    s = np.linalg.svd(T, compute_uv=False)
    if s.size == 0 or s.min() <= 1e-8:
        raise DegenerateTraceError(
            f"receiver traces of modes {list(idx)} are linearly dependent (sigma_min={s.min():.2e})")
    return T


def extract_residue(sweep, ell, eig, a_of_omega, grid, eps0=None, eps_rel=1e-3):
    """Coefficients ``<b gamma', phi_j>_w`` for the eigenvalue group containing ``ell``.

    The limit ``(w - sqrt(lam)) y~`` is estimated from samples at
    ``sqrt(lam) -+ {eps, eps/2}`` (two-sided average, then Richardson).  For the
    zero eigenvalue the limit of ``-w^2 y~ / a(w)`` as ``w -> 0+`` is extrapolated
    from ``w in {eps, 2 eps, 4 eps}`` instead.
    """
    idx = next(gr for gr in mode_groups(eig) if ell in gr)
    lam = eig.values[idx[0]]
    T = _trace_matrix(grid, eig, idx)
    root = np.sqrt(lam)
    if lam <= 1e-10 * max(eig.values.max(), 1.0):
        ref = np.sqrt(eig.values[eig.values > 1e-10 * max(eig.values.max(), 1.0)][0])
        e = eps0 if eps0 is not None else eps_rel * ref
        ws = e * np.array([1.0, 2.0, 4.0])
        z = np.array([-w**2 * sweep.lookup(w) / a_of_omega(w) for w in ws])
        # quadratic in w^2 through three points, evaluated at 0
        V = np.vander(ws**2, 3, increasing=True)
        limit = np.linalg.solve(V, z)[0]
        coef = limit
    else:
        e = eps0 if eps0 is not None else eps_rel * root
        amp = -a_of_omega(root) / (2 * root)
        if abs(amp) == 0:
            raise DegenerateTraceError(f"amplitude factor vanishes at mode {ell}")

        def two_sided(eps):
            return 0.5 * (-eps * sweep.lookup(root - eps) + eps * sweep.lookup(root + eps))

        limit = (4 * two_sided(e / 2) - two_sided(e)) / 3
        coef = limit / amp
    c, *_ = np.linalg.lstsq(T.astype(complex), np.atleast_1d(coef), rcond=None)
    return dict(zip(idx, c))


def richardson_check(sweep, ell, eig, eps0):
    """Difference between the Richardson limits at scales ``eps0`` and ``2 eps0``."""
    root = np.sqrt(eig.values[ell])

    def two_sided(eps):
        return 0.5 * (-eps * sweep.lookup(root - eps) + eps * sweep.lookup(root + eps))

    r1 = (4 * two_sided(eps0 / 2) - two_sided(eps0)) / 3
    r2 = (4 * two_sided(eps0) - two_sided(2 * eps0)) / 3
    return float(np.max(np.abs(r1 - r2)) / max(np.max(np.abs(r1)), 1e-300))


@dataclass(frozen=True, eq=False)
class ModalRecovery:
    gamma_prime: np.ndarray  # nan where masked
    mask: np.ndarray         # True where recovered
    coefficients: np.ndarray


def reconstruct_gamma_prime(coefficients, eig, b_field, b_min=None):
    """Truncated modal synthesis ``(1/b) sum_l c_l phi_l``; nodes with small ``|b|`` are masked."""
    c = np.real(np.asarray(coefficients))
    n = c.size
    synth = eig.vectors[:, :n] @ c
    b = np.asarray(b_field, dtype=float)
    if b_min is None:
        b_min = 1e-6 * np.max(np.abs(b))
    mask = np.abs(b) > b_min
    out = np.full(b.shape, np.nan)
    out[mask] = synth[mask] / b[mask]
    return ModalRecovery(out, mask, c)


def _fit_pole(ws, z):
    """Fit ``z = A/(w^2 - lam) + B`` via ``z w^2 = A' + lam z + B w^2`` with real ``lam``."""
    w2 = ws**2
    one = np.ones_like(w2)
    # real unknowns: Re A', Im A', lam, Re B, Im B
    rows_re = np.column_stack([one, 0 * one, z.real, w2, 0 * one])
    rows_im = np.column_stack([0 * one, one, z.imag, 0 * one, w2])
    A = np.vstack([rows_re, rows_im])
    rhs = np.concatenate([(z * w2).real, (z * w2).imag])
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return sol[2]


def detect_poles(sweep, a_of_omega=None, prominence=1e-6, refine=3, node=None, floor=0.0):
    """Locate poles of ``y~`` on the sweep and return ``sqrt(lam)`` estimates.

    Local maxima of ``|y~|`` above ``prominence * max |y~|`` (and above the
    absolute ``floor``, typically the round-off level of the data) are refined
    by a five-sample pole-plus-constant fit of ``y~ / a``; with a live sampler
    the fit is repeated on successively tighter neighborhoods.
    """
    if not sweep.omega_d:
        return []
    a_of_omega = a_of_omega or (lambda w: 1.0)
    ws, vals = sweep.arrays()
    k = int(np.argmax(np.max(np.abs(vals), axis=0))) if node is None else node
    mag = np.abs(vals[:, k])
    top = mag.max()
    if top <= floor or not np.isfinite(top):
        return []
    level = max(prominence * top, floor)
    peaks = [i for i in range(1, ws.size - 1)
             if mag[i] > mag[i - 1] and mag[i] >= mag[i + 1] and mag[i] > level]
    poles = []
    for i in peaks:
        lo, hi = max(0, i - 2), min(ws.size, i + 3)
        sel = np.arange(lo, hi)
        z = vals[sel, k] / np.array([a_of_omega(w) for w in ws[sel]])
        lam = _fit_pole(ws[sel], z)
        if lam <= 0:
            continue
        est = np.sqrt(lam)
        if sweep.sampler is not None:
            s = 1e-3 * est
            for _ in range(refine):
                pts = est + s * np.array([-2.0, -1.0, 0.5, 1.0, 2.0])
                try:
                    z = np.array([sweep.sample(w)[k] / a_of_omega(w) for w in pts])
                except SingularError:
                    pts = pts + 0.25 * s
                    try:
                        z = np.array([sweep.sample(w)[k] / a_of_omega(w) for w in pts])
                    except SingularError:
                        break  # the estimate already sits on the discrete pole
                lam = _fit_pole(pts, z)
                if lam <= 0:
                    break
                est = np.sqrt(lam)
                s *= 1e-2
        poles.append(float(est))
    return poles


@dataclass(eq=False)
class ModalResult:
    eig: object
    sweep: FrequencySweep
    poles: list
    coefficients: np.ndarray
    recovery: ModalRecovery


def run_modal(grid, medium, exc, n_modes=8, eps_rel=1e-3, data=None, gamma_prime=None,
              n_background=200, b_min=None):
    """Full pipeline: sweep, pole detection, residue extraction, synthesis.

    Data come either from ``data(omega_d) -> receiver pressure`` or are simulated
    from a ``gamma_prime`` field.
    """
    if data is None:
        if gamma_prime is None:
            raise ValueError("need data or gamma_prime")

        def data(w):
            return modal_observation(grid, medium, exc, gamma_prime, w)

    imp = hz.ImpedanceSet.uniform(grid, 0.0)
    eig = hz.eigensystem_Ac(grid, medium, imp, min(n_modes + 1, grid.num_nodes))
    roots = np.sqrt(eig.values)

    scale = [0.0]

    def modified(w):
        y = data(w)
        scale[0] = max(scale[0], float(np.max(np.abs(y))) / w)
        return modified_observation(grid, medium, w, y, exc.h_field(grid, medium, w))

    sweep = FrequencySweep(exc.omega2, sampler=modified)
    # same zero test as extract_residue, applied to eigenvalues (not their roots)
    zero = eig.values <= 1e-10 * max(eig.values.max(), 1.0)
    positive = roots[~zero]
    top = roots[n_modes] if n_modes < roots.size else roots[-1] * 1.05
    upper = 0.5 * (roots[n_modes - 1] + top)
    for w in np.linspace(0.05 * positive[0], upper, n_background):
        try:
            sweep.add(w, modified(w))
        except SingularError:
            continue
    for ell in range(n_modes):
        if zero[ell]:
            e = eps_rel * positive[0]
            pts = e * np.array([1.0, 2.0, 4.0])
        else:
            pts = residue_offsets(roots[ell], eps_rel * roots[ell])
        for w in pts:
            sweep.add(w, modified(w))
    # y~ is a difference of two O(scale) terms; below this it is round-off
    poles = detect_poles(sweep, exc.a_of_omega, floor=1e-10 * scale[0])
    coefs = np.zeros(n_modes, dtype=complex)
    for ell in range(n_modes):
        got = extract_residue(sweep, ell, eig, exc.a_of_omega, grid, eps_rel=eps_rel)
        coefs[ell] = got[ell]
    rec = reconstruct_gamma_prime(coefs, eig, exc.b_field, b_min)
    return ModalResult(eig, sweep, poles, coefs, rec)
