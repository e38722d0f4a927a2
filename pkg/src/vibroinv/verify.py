"""Self-checks: adjoint identity, Taylor order, manufactured solutions, eigen residuals.

Each suite returns a dict with the measured numbers and a ``passed`` flag, so
the report serializes directly to JSON.
"""
from __future__ import annotations

import contextlib
import time

import numpy as np

from . import adjoint
from . import helmholtz as hz
from .forward import Params, ProblemInstance, forward, solve_state
from .grid import build_grid, inner_product_gamma, inner_product_roi


def instance_1d(n=31, omega1=25.0, omega2=21.0, kappa0=1.0, gamma0=1.0, receiver=0.7,
                roi=(0.2, 0.8)):
    """Beams enter at opposite ends; absorbing impedance elsewhere."""
    g = build_grid(1, (1.0,), (n,), sigma1_spec=0.0, sigma2_spec=1.0, gamma_spec=receiver,
                   roi_spec=list(roi))
    imp = hz.ImpedanceSet.absorbing(g, omega1, omega2, kappa0)
    return ProblemInstance(g, imp, hz.Excitation(omega1, 1.0), hz.Excitation(omega2, 1.0),
                           kappa0, gamma0)


def instance_2d(n=21, omega1=25.0, omega2=21.0, kappa0=1.0, gamma0=1.0, left=True):
    """Beam 1 from the left (or right) side, beam 2 from the bottom, receiver line near the top."""
    top = 1.0 - 2.0 / (n - 1)
    s1 = [[0.0, 0.2], [0.0, 0.8]] if left else [[1.0, 0.2], [1.0, 0.8]]
    g = build_grid(2, (1.0, 1.0), (n, n), sigma1_spec=s1,
                   sigma2_spec=[[0.2, 0.0], [0.8, 0.0]],
                   gamma_spec=[[0.2, top], [0.8, top]],
                   roi_spec=[[0.2, 0.2], [0.8, 0.8]])
    imp = hz.ImpedanceSet.absorbing(g, omega1, omega2, kappa0)
    return ProblemInstance(g, imp, hz.Excitation(omega1, 1.0), hz.Excitation(omega2, 1.0),
                           kappa0, gamma0)


def _random_params(rng, m, scale=0.1):
    return Params(scale * rng.random(m), scale * rng.standard_normal(m))


def _roi_norm(g, p):
    return np.sqrt(inner_product_roi(p.kappa, p.kappa, g) + inner_product_roi(p.gamma, p.gamma, g))


def adjoint_identity(inst, n_pairs=20, seed=0, params=None):
    """Worst relative defect of ``<T d, r> = <d, T* r>`` over random pairs."""
    rng = np.random.default_rng(seed)
    g = inst.grid
    m = g.roi_nodes.size
    params = params if params is not None else _random_params(rng, m)
    state = solve_state(inst, params)
    worst = 0.0
    for _ in range(n_pairs):
        d = Params(rng.standard_normal(m), rng.standard_normal(m))
        r = rng.standard_normal(g.gamma_nodes.size) + 1j * rng.standard_normal(g.gamma_nodes.size)
        Td = adjoint.jvp(inst, params, state, d)
        Tr = adjoint.vjp(inst, params, state, r)
        lhs = inner_product_gamma(Td, r, g)
        rhs = inner_product_roi(d.kappa, Tr.kappa, g) + inner_product_roi(d.gamma, Tr.gamma, g)
        scale = (np.sqrt(inner_product_gamma(Td, Td, g) * inner_product_gamma(r, r, g))
                 + _roi_norm(g, d) * _roi_norm(g, Tr))
        worst = max(worst, float(abs(lhs - rhs) / scale))
    return worst


def taylor_slopes(inst, n_dirs=5, seed=1, ts=(1e-1, 1e-2, 1e-3, 1e-4)):
    """Log-log slopes of the first-order Taylor remainder, one per direction."""
    rng = np.random.default_rng(seed)
    g = inst.grid
    m = g.roi_nodes.size
    params = _random_params(rng, m)
    state = solve_state(inst, params)
    F0 = forward(inst, params)
    out = []
    for _ in range(n_dirs):
        d = Params(rng.random(m), rng.standard_normal(m))
        Td = adjoint.jvp(inst, params, state, d)
        err = [np.linalg.norm(forward(inst, params + d.scaled(t)) - F0 - t * Td) for t in ts]
        out.append(float(np.polyfit(np.log(ts), np.log(err), 1)[0]))
    return out


def _mms_1d(n, k=7.0):
    """Plane wave ``exp(-i k x)``: Neumann data at x=0, impedance at x=1."""
    g = build_grid(1, (1.0,), (n,), sigma1_spec=0.0, sigma2_spec=None, gamma_spec=0.5)
    med = hz.Medium.uniform(g, 1.0, 0.0)
    imp = hz.ImpedanceSet.uniform(g, k)
    x = g.coords[:, 0]
    u = np.exp(-1j * k * x)
    phi = hz.solve_helmholtz_sigma(g, med, imp, hz.Excitation(k, 1j * k), 1)
    return np.max(np.abs(phi - u))


def _mms_2d(n, k=6.0):
    """``u = exp(-i k x) cos(pi y)``: Neumann on x=0, impedance on x=1, natural on y=0,1."""
    g = build_grid(2, (1.0, 1.0), (n, n), sigma1_spec=[[0.0, 0.0], [0.0, 1.0]],
                   sigma2_spec=None, gamma_spec=[[0.25, 0.5], [0.75, 0.5]])
    med = hz.Medium.uniform(g, 1.0, 0.0)
    x, y = g.coords[:, 0], g.coords[:, 1]
    u = np.exp(-1j * k * x) * np.cos(np.pi * y)
    right = next(s for s in g.sides if s.axis == 0 and s.sign > 0)
    w_right = np.zeros(g.num_nodes)
    w_right[right.nodes] = right.weights
    bw = np.zeros(g.num_nodes)
    bw[g.boundary_nodes] = g.boundary_weights
    sigma = (k * w_right / np.where(bw > 0, bw, 1.0))[g.boundary_nodes]
    imp = hz.ImpedanceSet(sigma, sigma, sigma)
    ghat = 1j * k * np.cos(np.pi * y[g.sigma1_nodes])
    exc = hz.Excitation(k, ghat, interior_source=np.pi**2 * u)
    phi = hz.solve_helmholtz_sigma(g, med, imp, exc, 1)
    return np.max(np.abs(phi - u))


def manufactured_orders(dim, ns=None):
    """Observed orders from successive grid halvings."""
    ns = ns or (21, 41, 81, 161)
    f = _mms_1d if dim == 1 else _mms_2d
    err = np.array([f(n) for n in ns])
    h = 1.0 / (np.array(ns) - 1)
    orders = np.log(err[:-1] / err[1:]) / np.log(h[:-1] / h[1:])
    return err.tolist(), orders.tolist()


def eigen_residual(n=51, n_modes=8):
    g = build_grid(1, (1.0,), (n,), gamma_spec=0.3)
    med = hz.Medium.uniform(g, 1.0, 0.0)
    eig = hz.eigensystem_Ac(g, med, hz.ImpedanceSet.uniform(g, 0.0), n_modes)
    S = hz.stiffness(g)
    V = eig.vectors
    res = S @ V - (eig.weight[:, None] * V) * eig.values
    rel = np.linalg.norm(res, axis=0) / np.maximum(np.linalg.norm(S @ V, axis=0), 1e-300)
    gram = V.T @ (eig.weight[:, None] * V)
    return float(np.max(rel[1:])), float(np.max(np.abs(gram - np.eye(n_modes))))


@contextlib.contextmanager
def broken_adjoint():
    """Swap the transposed divergence stencil for an independent one (negative control)."""
    saved = adjoint.adjoint_stencil
    adjoint.adjoint_stencil = lambda D: -D
    try:
        yield
    finally:
        adjoint.adjoint_stencil = saved


def run_all(break_adjoint=False):
    report = {}
    t = time.perf_counter()
    ctx = broken_adjoint() if break_adjoint else contextlib.nullcontext()
    with ctx:
        d1 = adjoint_identity(instance_1d(31))
        d2 = adjoint_identity(instance_2d(21))
    report["adjoint_identity"] = dict(defect_1d=d1, defect_2d=d2, tol=1e-9,
                                      passed=bool(max(d1, d2) <= 1e-9))
    slopes = taylor_slopes(instance_1d(31)) + taylor_slopes(instance_2d(21), n_dirs=2)
    report["taylor_order"] = dict(slopes=slopes,
                                  passed=bool(all(1.9 <= s <= 2.1 for s in slopes)))
    e1, o1 = manufactured_orders(1)
    e2, o2 = manufactured_orders(2)
    report["manufactured_solution"] = dict(
        errors_1d=e1, orders_1d=o1, errors_2d=e2, orders_2d=o2,
        passed=bool(all(1.8 <= o <= 2.2 for o in o1 + o2)))
    r, orth = eigen_residual()
    report["eigen_residual"] = dict(residual=r, orthonormality=orth,
                                    passed=bool(r <= 1e-10 and orth <= 1e-10))
    report["passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict))
    report["seconds"] = time.perf_counter() - t
    return report
