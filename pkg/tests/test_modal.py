import numpy as np
import pytest

from vibroinv import helmholtz as hz
from vibroinv.errors import DegenerateTraceError, MissingSamplesError
from vibroinv.grid import build_grid
from vibroinv.modal import (FrequencySweep, SeparableExcitation, detect_poles, extract_residue,
                            modal_observation, modified_observation, reconstruct_gamma_prime,
                            richardson_check, run_modal)


@pytest.fixture(scope="module")
def setup():
    # receiver off the nodal points of the first modes
    g = build_grid(1, (1.0,), (101,), gamma_spec=0.31)
    med = hz.Medium.uniform(g, 1.0, 0.0)
    exc = SeparableExcitation.affine(g, omega2=20.0)
    eig = hz.eigensystem_Ac(g, med, hz.ImpedanceSet.uniform(g, 0.0), 7)
    return g, med, exc, eig


def test_separable_beam_is_reproduced_by_solver(setup):
    g, med, exc, _ = setup
    for w in (20.0, 23.5):
        assert np.allclose(exc.solve_beam(g, med, w), exc.beam(w), atol=1e-11)
    y1 = modal_observation(g, med, exc, np.ones(g.num_nodes), 3.3)
    y2 = modal_observation(g, med, exc, np.ones(g.num_nodes), 3.3, solve_beams=True)
    assert np.allclose(y1, y2, rtol=1e-9)


def test_modified_observation_removes_gradient_part(setup):
    # with gamma' = 0 the data come from h alone, so the modified data vanish
    g, med, exc, _ = setup
    wd = 2.7
    y = modal_observation(g, med, exc, np.zeros(g.num_nodes), wd)
    assert np.allclose(modified_observation(g, med, wd, y, exc.h_field(g, med, wd)), 0, atol=1e-12)


def test_multi_mode_coefficients(setup):
    g, med, exc, eig = setup
    target = np.zeros(6)
    target[[0, 2, 3]] = [0.4, 1.0, -0.5]
    gp = (eig.vectors[:, :6] @ target) / exc.b_field
    res = run_modal(g, med, exc, n_modes=6, eps_rel=1e-3, gamma_prime=gp)
    # oracle: the weighted projections of b gamma' on the same eigenvectors
    oracle = np.array([eig.inner(exc.b_field * gp, eig.vectors[:, j]) for j in range(6)])
    assert np.allclose(oracle, target, atol=1e-12)
    assert np.allclose(res.coefficients.real, oracle, atol=1e-6)
    roots = np.sqrt(eig.values)
    for j in (2, 3):
        assert min(abs(p - roots[j]) for p in res.poles) < 1e-6
    rec = res.recovery.gamma_prime
    assert np.allclose(rec[res.recovery.mask], gp[res.recovery.mask], atol=1e-6)


def test_zero_truth_gives_zero_coefficients(setup):
    g, med, exc, _ = setup
    res = run_modal(g, med, exc, n_modes=4, gamma_prime=np.zeros(g.num_nodes), n_background=40)
    assert np.allclose(res.coefficients, 0, atol=1e-12)
    assert res.poles == []


def test_missing_samples(setup):
    g, med, exc, eig = setup
    sweep = FrequencySweep(20.0)
    with pytest.raises(MissingSamplesError):
        extract_residue(sweep, 1, eig, exc.a_of_omega, g)
    with pytest.raises(MissingSamplesError):
        sweep.sample(1.0)


def test_receiver_on_nodal_line_is_degenerate():
    g = build_grid(1, (1.0,), (61,), gamma_spec=0.5)
    med = hz.Medium.uniform(g)
    eig = hz.eigensystem_Ac(g, med, hz.ImpedanceSet.uniform(g, 0.0), 3)
    exc = SeparableExcitation.affine(g, 20.0)
    with pytest.raises(DegenerateTraceError):
        extract_residue(FrequencySweep(20.0), 1, eig, exc.a_of_omega, g)


def test_detect_poles_on_rational_function():
    lam, A, B = 7.3, 2.0 + 1.0j, 0.3

    def z(w):
        return np.array([A / (w**2 - lam) + B])

    sweep = FrequencySweep(10.0, sampler=z)
    for w in np.linspace(0.5, 5.0, 60):
        sweep.add(w, z(w))
    assert np.allclose(detect_poles(sweep), [np.sqrt(lam)], atol=1e-10)


def test_richardson_estimate_small_for_clean_data(setup):
    g, med, exc, eig = setup
    gp = eig.vectors[:, 2] / exc.b_field

    def sampler(w):
        return modified_observation(g, med, w, modal_observation(g, med, exc, gp, w),
                                    exc.h_field(g, med, w))

    sweep = FrequencySweep(20.0, sampler=sampler)
    root, e = np.sqrt(eig.values[2]), 1e-3 * np.sqrt(eig.values[2])
    for w in root + e * np.array([-2, -1, -0.5, 0.5, 1, 2]):
        sweep.sample(w)
    assert richardson_check(sweep, 2, eig, e) < 1e-6


def test_mask_small_b(setup):
    g, _, exc, eig = setup
    b = exc.b_field.copy()
    b[:5] = 0.0
    rec = reconstruct_gamma_prime(np.ones(3), eig, b)
    assert not rec.mask[:5].any() and rec.mask[5:].all()
    assert np.all(np.isnan(rec.gamma_prime[:5]))
