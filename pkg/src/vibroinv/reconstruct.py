"""Iterative regularization: IRGNM, Levenberg-Marquardt, all-at-once Newton, Landweber.

All drivers work on a family of instances ``F_p`` with data ``y_p``.  The
Kaczmarz wrappers either average one step per instance taken from the same
iterate ("parallel") or cycle through the instances ("sequential").
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import helmholtz as hz
from .adjoint import GramSystem, jvp, linearized_fields, make_basis, setup_gram_and_res, vjp
from .errors import BudgetExceeded, NoFeasibleAlpha, SingularNormalEq
from .forward import Params, StateTriple, gamma_norm, interaction_source, solve_state

METHODS = ("irgnm", "lm", "aao_newton", "landweber")


@dataclass
class IterationConfig:
    method: str = "irgnm"
    alpha0: float = 1.0
    rho: float = 0.5
    lm_theta_lower: float = 0.6
    lm_theta_upper: float = 0.8
    landweber_mu: float | None = None
    tau: float = 1.5
    max_iters: int = 25
    kaczmarz: str = "none"
    kaczmarz_order: str = "cyclic"
    seed: int | None = None
    basis: str = "nodal"
    patches: int | tuple | None = None
    unknowns: str = "both"
    aao_variant: str = "irgnm"
    threads: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.alpha0 <= 0 or not 0 < self.rho < 1:
            raise ValueError("need alpha0 > 0 and 0 < rho < 1")
        if not 0 < self.lm_theta_lower < self.lm_theta_upper < 1:
            raise ValueError("need 0 < theta_lower < theta_upper < 1")
        if self.landweber_mu is not None and self.landweber_mu <= 0:
            raise ValueError("landweber_mu must be positive")
        if self.tau <= 1:
            raise ValueError("tau must exceed 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.kaczmarz not in ("none", "parallel", "sequential"):
            raise ValueError("kaczmarz must be none, parallel or sequential")
        if self.kaczmarz_order not in ("cyclic", "randomized"):
            raise ValueError("kaczmarz_order must be cyclic or randomized")
        if self.aao_variant not in ("irgnm", "lm"):
            raise ValueError("aao_variant must be irgnm or lm")

    def alpha(self, n):
        return self.alpha0 * self.rho**n


@dataclass
class IterationTrace:
    """One row per step; residuals are those of the iterate the step starts from.

    ``final`` holds the residuals of the returned iterate, so ``len(trace)``
    is the stop index.
    """

    rows: list = field(default_factory=list)
    stop_reason: str = ""
    mu: float | None = None
    final: dict = field(default_factory=dict)

    def append(self, **row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows])


def _as_data(ys):
    return [np.asarray(getattr(y, "y", y), dtype=complex) for y in ys]


def _clip(inst, params):
    """Project onto kappa_tilde >= 0."""
    floor = -inst.kappa0[inst.grid.roi_nodes]
    return Params(np.maximum(params.kappa, floor), params.gamma)


def _solve_normal(M, D, r, alpha):
    A = M + alpha * D
    try:
        c = sla.cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise SingularNormalEq(f"M + alpha D not positive definite (alpha={alpha:g})") from exc
    d = np.abs(np.diag(c[0]))
    if d.min() <= 1e-8 * d.max():
        raise SingularNormalEq(f"M + alpha D numerically singular (alpha={alpha:g})")
    return sla.cho_solve(c, r)


def _default_basis(instances, basis):
    return basis if basis is not None else make_basis(instances[0].grid)


def irgnm_step(instances, params, params0, ys, alpha, basis=None, states=None):
    """One iteratively regularized Gauss-Newton step.

    Minimizes ``sum_p ||F_p + J_p x - y_p||^2 + alpha ||B x - (x0 - xn)||^2``
    over basis coefficients ``x`` and returns ``xn + B x``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    basis = _default_basis(instances, basis)
    if states is None:
        states = [solve_state(inst, params) for inst in instances]
    gs = setup_gram_and_res(instances, params, states, basis, _as_data(ys), alpha,
                            params0 - params, "irgnm")
    x = _solve_normal(gs.M, gs.D, gs.r, alpha)
    return params + basis.params(x)


class _LMSearch:
    """``x(alpha) = (M + alpha D)^{-1} r`` via the generalized eigenbasis of (M, D)."""

    def __init__(self, gs, dys, grids):
        lam, V = sla.eigh(gs.M, gs.D)
        self.lam = np.maximum(lam, 0.0)
        self.V = V
        self.Vr = V.T @ gs.r
        self.J = gs.J
        self.dys = dys
        self.grids = grids
        self.base = np.sqrt(sum(gamma_norm(g, d) ** 2 for g, d in zip(grids, dys)))

    def x(self, alpha):
        return self.V @ (self.Vr / (self.lam + alpha))

    def ratio(self, alpha):
        x = self.x(alpha)
        res2 = sum(gamma_norm(g, d - J @ x) ** 2 for g, d, J in zip(self.grids, self.dys, self.J))
        return np.sqrt(res2) / self.base


def _lm_alpha(search, lo_t, hi_t, info=None):
    lo, hi = 1e-12, 1e6
    r_lo = search.ratio(lo)
    if r_lo > hi_t:
        raise NoFeasibleAlpha(
            f"linearized residual ratio {r_lo:.3f} at alpha={lo:g} exceeds {hi_t}")
    if r_lo >= lo_t:
        alpha, ratio = lo, r_lo
    else:
        r_hi = search.ratio(hi)
        while r_hi < lo_t and hi < 1e30:
            hi *= 1e3
            r_hi = search.ratio(hi)
        alpha, ratio = hi, r_hi
        for _ in range(60):
            mid = np.sqrt(lo * hi)
            r = search.ratio(mid)
            alpha, ratio = mid, r
            if lo_t <= r <= hi_t:
                break
            if r < lo_t:
                lo = mid
            else:
                hi = mid
    if info is not None:
        info.update(alpha=alpha, ratio=ratio, residual=search.base)
    return alpha


def lm_step(instances, params, ys, theta=(0.6, 0.8), basis=None, states=None, info=None):
    """Levenberg-Marquardt step with the residual-ratio band for alpha.

    Returns ``(params_new, alpha)``.  ``info`` (a dict) receives the achieved
    ratio ``||F - y + J x|| / ||F - y||``.
    """
    lo_t, hi_t = theta
    basis = _default_basis(instances, basis)
    if states is None:
        states = [solve_state(inst, params) for inst in instances]
    ys = _as_data(ys)
    gs = setup_gram_and_res(instances, params, states, basis, ys, 0.0, None, "lm")
    if gs.residual_norm == 0:
        raise ValueError("LM step needs a nonzero residual")
    dys = [y - 1j * inst.omega_d * st.psi[inst.grid.gamma_nodes]
           for inst, st, y in zip(instances, states, ys)]
    search = _LMSearch(gs, dys, [inst.grid for inst in instances])
    alpha = _lm_alpha(search, lo_t, hi_t, info)
    return params + basis.params(search.x(alpha)), alpha


def _beam_rhs_solve(inst, medium):
    g = inst.grid
    return (hz.solve_helmholtz_sigma(g, medium, inst.impedance, inst.exc1, 1),
            hz.solve_helmholtz_sigma(g, medium, inst.impedance, inst.exc2, 2))


def linearized_source(inst, medium, u, phi1, phi2):
    """Derivative of the interaction source at ``(u.phi1, u.phi2)`` applied to ``(phi1, phi2)``."""
    g = inst.grid
    return (interaction_source(g, medium, phi1, u.phi2, inst.omega1, inst.omega2)
            + interaction_source(g, medium, u.phi1, phi2, inst.omega1, inst.omega2))


def half_step_state(inst, params, u):
    """``u^(n+1/2)``: exact beams, then the difference field with a linearized source."""
    g = inst.grid
    medium = inst.medium(params)
    phi1, phi2 = _beam_rhs_solve(inst, medium)
    f = (linearized_source(inst, medium, u, phi1, phi2)
         - interaction_source(g, medium, u.phi1, u.phi2, inst.omega1, inst.omega2))
    psi = hz.solve_helmholtz(g, medium, inst.impedance, inst.omega_d, f)
    return StateTriple(phi1, phi2, psi)


def aao_newton_step(inst, u, params, ys, alpha, params0=None, variant="irgnm", basis=None,
                    theta=(0.6, 0.8), info=None):
    """All-at-once Newton step on state and parameters.

    ``u`` need not satisfy the state equation.  ``inst``, ``u`` and ``ys``
    may be single objects or equal-length lists.  Returns ``(u_new, params_new)``.
    """
    single = not isinstance(inst, (list, tuple))
    insts = [inst] if single else list(inst)
    us = [u] if single else list(u)
    ys = _as_data([ys] if single else ys)
    basis = _default_basis(insts, basis)
    halves = [half_step_state(i, params, ui) for i, ui in zip(insts, us)]
    m = insts[0].grid.roi_nodes.size
    I, J = basis.kappa.shape[1], basis.gamma.shape[1]
    dk = np.hstack([basis.kappa, np.zeros((m, J))])
    dg = np.hstack([np.zeros((m, I)), basis.gamma])
    fields, Js, dys = [], [], []
    for i, ui, uh, y in zip(insts, us, halves, ys):
        lin = linearized_fields(i, params, ui, dk, dg)
        fields.append(lin)
        Js.append(1j * i.omega_d * lin[2][i.grid.gamma_nodes])
        dys.append(y - 1j * i.omega_d * uh.psi[i.grid.gamma_nodes])
    grid = insts[0].grid
    M = sum(np.real(Jp.conj().T @ (i.grid.gamma_weights[:, None] * Jp)) for i, Jp in zip(insts, Js))
    M = 0.5 * (M + M.T)
    r = sum(np.real(Jp.conj().T @ (i.grid.gamma_weights * d)) for i, Jp, d in zip(insts, Js, dys))
    D = basis.mass(grid)
    if variant == "irgnm":
        if params0 is not None:
            r = r + alpha * basis.project(grid, params0 - params)
        x = _solve_normal(M, D, r, alpha)
    elif variant == "lm":
        gs = GramSystem(M=M, r=r, D=D, J=Js)
        search = _LMSearch(gs, dys, [i.grid for i in insts])
        alpha = _lm_alpha(search, theta[0], theta[1], info)
        x = search.x(alpha)
    else:
        raise ValueError("variant must be irgnm or lm")
    new_params = params + basis.params(x)
    new_u = [StateTriple(uh.phi1 + lin[0] @ x, uh.phi2 + lin[1] @ x, uh.psi + lin[2] @ x)
             for uh, lin in zip(halves, fields)]
    if info is not None:
        info.setdefault("alpha", alpha)
    return (new_u[0] if single else new_u), new_params


def _mask(params, unknowns):
    if unknowns == "kappa":
        return Params(params.kappa, np.zeros_like(params.gamma))
    if unknowns == "gamma":
        return Params(np.zeros_like(params.kappa), params.gamma)
    return params


def landweber_step(instances, params, ys, mu, states=None, unknowns="both"):
    """Gradient step ``params + mu sum_p T_p^*(y_p - F_p)``."""
    if states is None:
        states = [solve_state(inst, params) for inst in instances]
    step = Params.zeros(instances[0].grid)
    for inst, st, y in zip(instances, states, _as_data(ys)):
        r = y - 1j * inst.omega_d * st.psi[inst.grid.gamma_nodes]
        step = step + vjp(inst, params, st, r)
    return params + _mask(step, unknowns).scaled(mu)


def operator_norm(instances, params, n_iter=20, seed=0, unknowns="both"):
    """Power-iteration estimate of ``||T||`` for the stacked family."""
    grid = instances[0].grid
    w = grid.cell_weights[grid.roi_nodes]
    states = [solve_state(inst, params) for inst in instances]
    rng = np.random.default_rng(seed)
    m = grid.roi_nodes.size
    v = _mask(Params(rng.standard_normal(m), rng.standard_normal(m)), unknowns)

    def norm(p):
        return np.sqrt(np.sum(w * (p.kappa**2 + p.gamma**2)))

    v = v.scaled(1.0 / norm(v))
    lam = 0.0
    for _ in range(n_iter):
        z = Params.zeros(grid)
        for inst, st in zip(instances, states):
            z = z + vjp(inst, params, st, jvp(inst, params, st, v))
        z = _mask(z, unknowns)
        lam = norm(z)
        if lam == 0:
            return 0.0
        v = z.scaled(1.0 / lam)
    return float(np.sqrt(lam))


def _residuals(instances, params, ys, pool):
    def one(k):
        st = solve_state(instances[k], params)
        r = gamma_norm(instances[k].grid,
                       ys[k] - 1j * instances[k].omega_d * st.psi[instances[k].grid.gamma_nodes])
        return st, r
    out = list(pool.map(one, range(len(instances)))) if pool else [one(k) for k in range(len(instances))]
    return [o[0] for o in out], np.array([o[1] for o in out])


def run(instances, ys, config, params0=None, delta=0.0, basis=None):
    """Iterate until the discrepancy principle or the iteration budget stops.

    ``delta`` is the absolute aggregate noise level (root-sum-square over
    instances).  Returns ``(params, trace)``; raises :class:`BudgetExceeded`
    with the best iterate when ``delta > 0`` and the budget runs out first.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    ys = _as_data(ys)
    P = len(instances)
    if P == 0 or len(ys) != P:
        raise ValueError("need one data set per instance")
    grid = instances[0].grid
    if basis is None:
        basis = make_basis(grid, config.basis, config.patches, config.unknowns)
    params0 = params0 if params0 is not None else Params.zeros(grid)
    params = params0
    trace = IterationTrace()
    rng = np.random.default_rng(config.seed)
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    mu = config.landweber_mu
    if config.method == "landweber" and mu is None:
        mu = 0.9 / operator_norm(instances, params0, 20, 0 if config.seed is None else config.seed,
                                 config.unknowns) ** 2
    trace.mu = mu
    us = None
    order = np.arange(P)
    best = (np.inf, params)
    t0 = time.perf_counter()
    try:
        n = 0
        while True:
            states, res = _residuals(instances, params, ys, pool)
            agg = float(np.sqrt(np.sum(res**2)))
            if agg < best[0]:
                best = (agg, params)
            row = dict(n=n, residuals=res.tolist(), aggregate=agg,
                       seconds=time.perf_counter() - t0)
            if delta > 0 and agg <= config.tau * delta:
                trace.final = row
                trace.stop_reason = "discrepancy"
                return params, trace
            if n >= config.max_iters:
                trace.final = row
                if delta > 0:
                    trace.stop_reason = "budget"
                    raise BudgetExceeded(
                        f"no discrepancy stop within {config.max_iters} iterations "
                        f"(residual {agg:.3e} > {config.tau * delta:.3e})",
                        params=best[1], trace=trace)
                trace.stop_reason = "max_iters"
                return params, trace
            if config.method == "aao_newton" and us is None:
                us = list(states)
            alpha = config.alpha(n)
            if config.kaczmarz == "sequential":
                if n % P == 0 and config.kaczmarz_order == "randomized":
                    order = rng.permutation(P)
                groups = [[int(order[n % P])]]
            elif config.kaczmarz == "parallel":
                groups = [[p] for p in range(P)]
            else:
                groups = [list(range(P))]

            def one(group):
                sub = [instances[p] for p in group]
                sub_y = [ys[p] for p in group]
                sub_s = [states[p] for p in group]
                loc = {}
                if config.method == "irgnm":
                    new = irgnm_step(sub, params, params0, sub_y, alpha, basis, sub_s)
                    return new, None, dict(alpha=alpha)
                if config.method == "lm":
                    new, _ = lm_step(sub, params, sub_y,
                                     (config.lm_theta_lower, config.lm_theta_upper),
                                     basis, sub_s, loc)
                    return new, None, loc
                if config.method == "landweber":
                    new = landweber_step(sub, params, sub_y, mu, sub_s, config.unknowns)
                    return new, None, dict(alpha=np.nan)
                new_u, new = aao_newton_step(sub, [us[p] for p in group], params, sub_y, alpha,
                                             params0, config.aao_variant, basis,
                                             (config.lm_theta_lower, config.lm_theta_upper), loc)
                loc.setdefault("alpha", alpha)
                return new, new_u, loc

            if pool and len(groups) > 1:
                results = list(pool.map(one, groups))
            else:
                results = [one(gr) for gr in groups]
            if len(groups) == 1:
                new = results[0][0]
            else:
                steps = [r[0] - params for r in results]
                total = steps[0]
                for s in steps[1:]:
                    total = total + s
                new = params + total.scaled(1.0 / len(groups))
            if config.method == "aao_newton":
                for gr, res_ in zip(groups, results):
                    for p, u in zip(gr, res_[1]):
                        us[p] = u
            new = _clip(instances[0], new)
            w = grid.cell_weights[grid.roi_nodes]
            d = new - params
            step_norm = float(np.sqrt(np.sum(w * (d.kappa**2 + d.gamma**2))))
            infos = [r[2] for r in results]
            trace.append(**row, alpha=float(np.mean([i.get("alpha", np.nan) for i in infos])),
                         ratio=float(np.mean([i.get("ratio", np.nan) for i in infos])),
                         step_norm=step_norm,
                         instance=groups[0][0] if len(groups[0]) == 1 and len(groups) == 1 else -1)
            params = new
            n += 1
    finally:
        if pool:
            pool.shutdown()
