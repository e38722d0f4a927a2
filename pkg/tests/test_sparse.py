from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from vibroinv import sparse
from vibroinv.errors import ShapeError, SingularError


def _random_banded(n, seed, band=3):
    rng = np.random.default_rng(seed)
    A = sp.diags([rng.standard_normal(n - abs(k)) + 1j * rng.standard_normal(n - abs(k))
                  for k in range(-band, band + 1)], range(-band, band + 1), format="csr")
    return A + sp.identity(n) * (4 * band)


@pytest.mark.parametrize("backend", sparse.BACKENDS)
def test_solves_match_dense(backend):
    A = _random_banded(40, 1)
    b = np.random.default_rng(2).standard_normal(40) + 1j
    F = sparse.factorize(A, backend)
    Ad = A.toarray()
    assert np.allclose(Ad @ F.solve(b), b, atol=1e-8)
    assert np.allclose(Ad.T @ F.transpose_solve(b), b, atol=1e-8)
    assert np.allclose(Ad.conj().T @ F.adjoint_solve(b), b, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(5, 60), st.integers(0, 2**31 - 1))
def test_banded_agrees_with_superlu(n, seed):
    A = _random_banded(n, seed, band=2)
    B = np.random.default_rng(seed).standard_normal((n, 3)).astype(complex)
    x1 = sparse.factorize(A, "banded").solve(B)
    x2 = sparse.factorize(A, "superlu").solve(B)
    assert np.allclose(x1, x2, rtol=1e-9, atol=1e-12)


def test_assemble_sums_duplicates():
    A = sparse.assemble([0, 0, 1], [0, 0, 1], [1.0, 2.0, 5.0], (2, 2))
    assert A.toarray().tolist() == [[3.0, 0.0], [0.0, 5.0]]
    with pytest.raises(IndexError):
        sparse.assemble([2], [0], [1.0], (2, 2))


@pytest.mark.parametrize("backend", ["banded", "superlu"])
def test_singular_matrix_raises(backend):
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularError):
        sparse.factorize(A, backend)


def test_shape_errors():
    with pytest.raises(ShapeError):
        sparse.factorize(sp.csr_matrix(np.ones((2, 3))))
    F = sparse.factorize(_random_banded(6, 0))
    with pytest.raises(ShapeError):
        F.solve(np.ones(5))


def test_unknown_backend():
    with pytest.raises(ValueError):
        sparse.set_default_backend("magic")


def test_concurrent_solves_are_consistent():
    A = _random_banded(200, 5)
    rhs = np.random.default_rng(6).standard_normal((200, 32)).astype(complex)
    for backend in ("banded", "superlu"):
        F = sparse.factorize(A, backend)
        ref = F.solve(rhs)
        with ThreadPoolExecutor(8) as pool:
            got = list(pool.map(lambda j: F.solve(rhs[:, j]), range(32)))
        assert np.allclose(np.column_stack(got), ref, atol=1e-12)
