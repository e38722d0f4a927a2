import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vibroinv import helmholtz as hz
from vibroinv.errors import DomainError, ShapeError
from vibroinv.forward import (Params, ProblemInstance, forward, gradient_matrices,
                              interaction_source, solve_state, state_residual,
                              synthesize_data)
from vibroinv.verify import instance_1d, instance_2d

finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(arrays(float, 12, elements=finite))
def test_params_vector_round_trip(v):
    p = Params.from_vector(v)
    assert np.array_equal(p.vector(), v)
    assert np.allclose((p + p - p.scaled(0.5)).vector(), 1.5 * v)


def test_params_shape_check():
    with pytest.raises(ShapeError):
        Params(np.zeros(3), np.zeros(4))


def test_gradient_exact_on_quadratics(inst2d):
    g = inst2d.grid
    x, y = g.coords[:, 0], g.coords[:, 1]
    Dx, Dy = gradient_matrices(g)
    u = x**2 + 3 * x * y - y**2
    assert np.allclose(Dx @ u, 2 * x + 3 * y)
    assert np.allclose(Dy @ u, 3 * x - 2 * y)


def test_interaction_source_formula(inst1d):
    g = inst1d.grid
    x = g.coords[:, 0]
    med = hz.Medium(np.full(g.num_nodes, 2.0), np.full(g.num_nodes, 0.5))
    phi1, phi2 = x + 0j, 1j * x**2
    f = interaction_source(g, med, phi1, phi2, 5.0, 3.0)
    expect = 2j * 2.0 * (2.0 * 1.0 * np.conj(2j * x) + 15.0 * 0.5 * x * np.conj(1j * x**2))
    assert np.allclose(f, expect)
    with pytest.raises(ShapeError):
        interaction_source(g, med, phi1[:-1], phi2, 5.0, 3.0)


@pytest.mark.parametrize("make", [instance_1d, instance_2d])
def test_state_equations_hold(make):
    inst = make()
    rng = np.random.default_rng(0)
    m = inst.grid.roi_nodes.size
    p = Params(0.1 * rng.random(m), rng.standard_normal(m))
    for res, scale in state_residual(inst, p, solve_state(inst, p)):
        assert np.linalg.norm(res) <= 1e-10 * max(scale, 1.0)


def test_forward_affine_in_gamma(inst2d):
    rng = np.random.default_rng(1)
    m = inst2d.grid.roi_nodes.size
    z = np.zeros(m)
    a, b = rng.standard_normal(m), rng.standard_normal(m)
    F0 = forward(inst2d, Params(z, z))
    lhs = forward(inst2d, Params(z, a + b)) - F0
    rhs = (forward(inst2d, Params(z, a)) - F0) + (forward(inst2d, Params(z, b)) - F0)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-14)


def test_forward_nonlinear_in_kappa(inst1d):
    m = inst1d.grid.roi_nodes.size
    z = np.zeros(m)
    F = [forward(inst1d, Params(t * np.ones(m), z)) for t in (0.0, 0.1, 0.2)]
    assert np.linalg.norm(F[2] - 2 * F[1] + F[0]) > 1e-6 * np.linalg.norm(F[1] - F[0])


def test_medium_domain_and_trust_radius(inst1d):
    m = inst1d.grid.roi_nodes.size
    with pytest.raises(DomainError):
        inst1d.medium(Params(-2 * np.ones(m), np.zeros(m)))
    capped = inst1d.with_grid(inst1d.grid, rho=0.01)
    with pytest.raises(DomainError):
        capped.medium(Params(np.ones(m), np.zeros(m)))


def test_frequency_order_enforced(inst1d):
    with pytest.raises(ValueError):
        ProblemInstance(inst1d.grid, inst1d.impedance, inst1d.exc2, inst1d.exc1, 1.0, 1.0)


def test_synthetic_noise_level_and_reproducibility(inst2d):
    m = inst2d.grid.roi_nodes.size
    truth = Params(np.zeros(m), np.ones(m))
    a = synthesize_data([inst2d, inst2d], truth, 0.05, rng_seed=7)
    b = synthesize_data([inst2d, inst2d], truth, 0.05, rng_seed=7)
    assert all(np.array_equal(x.y, y.y) for x, y in zip(a, b))
    assert np.isclose(a[0].delta, 0.05 * a[0].clean_norm)
    assert not np.array_equal(a[0].y, a[1].y)
    clean = synthesize_data([inst2d], truth, 0.0, rng_seed=7)[0]
    assert clean.delta == 0 and np.array_equal(clean.y, forward(inst2d, truth))


def _smooth_truth(inst):
    x = inst.grid.coords[inst.grid.roi_nodes, 0]
    return Params(np.zeros(x.size), np.sin(np.pi * (x - 0.2) / 0.6) ** 2)


def test_fine_grid_data_converge_at_second_order():
    # receiver data of nested grids, read through the fine-grid path of synthesize_data
    coarse = instance_1d(31)
    ys = []
    for n in (61, 121, 241):
        fine = instance_1d(n)
        obs = synthesize_data([coarse], _smooth_truth(coarse), 0.0, 0,
                              fine_instances=[fine], fine_params=_smooth_truth(fine))
        ys.append(obs[0].y)
    ratio = np.linalg.norm(ys[0] - ys[1]) / np.linalg.norm(ys[1] - ys[2])
    assert 3.5 < ratio < 4.5
