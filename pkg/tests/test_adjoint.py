import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vibroinv import verify
from vibroinv.adjoint import (jacobian, jvp, linearized_fields, make_basis, setup_gram_and_res,
                              vjp)
from vibroinv.errors import ShapeError
from vibroinv.forward import Params, forward, solve_state
from vibroinv.grid import inner_product_gamma

INST_1D = verify.instance_1d(31)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_adjoint_identity_random_pairs(seed):
    assert verify.adjoint_identity(INST_1D, n_pairs=3, seed=seed) <= 1e-11


def test_adjoint_identity_2d(inst2d):
    assert verify.adjoint_identity(inst2d, n_pairs=5) <= 1e-11


def test_broken_stencil_is_detected(inst1d):
    # negative control: an independent divergence discretization breaks the identity
    with verify.broken_adjoint():
        defect = verify.adjoint_identity(inst1d, n_pairs=3)
    assert defect > 1e-4
    assert verify.adjoint_identity(inst1d, n_pairs=3) <= 1e-11


def test_taylor_remainder_is_quadratic(inst2d):
    assert all(1.9 <= s <= 2.1 for s in verify.taylor_slopes(inst2d, n_dirs=2))


def test_vjp_is_real_linear(inst1d):
    g = inst1d.grid
    m = g.roi_nodes.size
    p = Params(np.zeros(m), np.zeros(m))
    st_ = solve_state(inst1d, p)
    rng = np.random.default_rng(0)
    r1, r2 = (rng.standard_normal(1) + 1j * rng.standard_normal(1) for _ in range(2))
    a = vjp(inst1d, p, st_, 2.0 * r1 - 3.0 * r2)
    b = vjp(inst1d, p, st_, r1).scaled(2.0) - vjp(inst1d, p, st_, r2).scaled(3.0)
    assert np.allclose(a.vector(), b.vector(), rtol=1e-12, atol=1e-14)
    with pytest.raises(ShapeError):
        vjp(inst1d, p, st_, np.ones(3))


def test_jacobian_columns_match_jvp(inst2d):
    g = inst2d.grid
    basis = make_basis(g, "hat", 2)
    p = Params.zeros(g)
    st_ = solve_state(inst2d, p)
    J = jacobian(inst2d, p, st_, basis)
    x = np.random.default_rng(1).standard_normal(basis.size)
    assert np.allclose(J @ x, jvp(inst2d, p, st_, basis.params(x)), rtol=1e-12, atol=1e-14)


def test_multi_column_linearization_matches_single(inst1d):
    g = inst1d.grid
    m = g.roi_nodes.size
    p = Params(0.05 * np.ones(m), np.zeros(m))
    st_ = solve_state(inst1d, p)
    rng = np.random.default_rng(2)
    dk, dg = rng.standard_normal((m, 3)), rng.standard_normal((m, 3))
    multi = linearized_fields(inst1d, p, st_, dk, dg)
    for j in range(3):
        single = linearized_fields(inst1d, p, st_, dk[:, j], dg[:, j])
        for a, b in zip(multi, single):
            assert np.allclose(a[:, j], b)


def test_jvp_matches_finite_difference_in_gamma(inst1d):
    # F is affine in gamma, so a finite difference is exact up to rounding
    g = inst1d.grid
    m = g.roi_nodes.size
    p = Params(0.1 * np.ones(m), np.zeros(m))
    d = Params(np.zeros(m), np.linspace(-1, 1, m))
    fd = forward(inst1d, p + d) - forward(inst1d, p)
    assert np.allclose(jvp(inst1d, p, solve_state(inst1d, p), d), fd, rtol=1e-9)


@pytest.mark.parametrize("kind,patches", [("patch", 3), ("hat", 3), ("nodal", None)])
def test_basis_partition_of_unity(kind, patches, inst2d):
    b = make_basis(inst2d.grid, kind, patches)
    assert np.allclose(b.gamma.sum(axis=1), 1.0)
    D = b.mass(inst2d.grid)
    assert np.allclose(D, D.T) and np.linalg.eigvalsh(D).min() > 0


def test_basis_unknowns_blocks(inst2d):
    b = make_basis(inst2d.grid, "hat", 2, unknowns="gamma")
    assert b.kappa.shape[1] == 0 and b.size == 9
    p = b.params(np.arange(9.0))
    assert np.all(p.kappa == 0)
    with pytest.raises(ValueError):
        make_basis(inst2d.grid, "wavelet")
    with pytest.raises(ValueError):
        make_basis(inst2d.grid, "nodal", unknowns="neither")


def test_gram_system_consistent_with_jacobian(inst1d):
    g = inst1d.grid
    basis = make_basis(g, "patch", 4)
    p = Params.zeros(g)
    st_ = solve_state(inst1d, p)
    y = forward(inst1d, Params(np.zeros(g.roi_nodes.size), np.ones(g.roi_nodes.size)))
    gs = setup_gram_and_res([inst1d], p, [st_], basis, [y])
    J = gs.J[0]
    x = np.random.default_rng(3).standard_normal(basis.size)
    Jx = J @ x
    assert np.isclose(x @ gs.M @ x, inner_product_gamma(Jx, Jx, g))
    assert np.allclose(gs.M, gs.M.T)
    # r is the basis projection of T*(y - F)
    r_adj = basis.project(g, vjp(inst1d, p, st_, y - forward(inst1d, p)))
    assert np.allclose(gs.r, r_adj, rtol=1e-10)
