import numpy as np
import pytest

from vibroinv import helmholtz as hz
from vibroinv.forward import ProblemInstance
from vibroinv.grid import build_grid
from vibroinv.verify import instance_1d, instance_2d

# acceptance lines, printed once at the end of the session
ACCEPTANCE = {}


def record(number, passed, detail):
    ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def phantom_instances(n=41):
    """Two excitations from opposite sides, one receiver line near the top."""
    rec = [[0.05, 0.9], [0.95, 0.9]]
    s2 = [[0.2, 0.0], [0.8, 0.0]]
    out = []
    for ell, (s1, w1, w2) in enumerate([([[0.0, 0.2], [0.0, 0.8]], 32.0, 20.0),
                                         ([[1.0, 0.2], [1.0, 0.8]], 26.0, 10.0)], start=1):
        g = build_grid(2, (1.0, 1.0), (n, n), sigma1_spec=s1, sigma2_spec=s2, gamma_spec=rec,
                       roi_spec=[[0.25, 0.25], [0.75, 0.75]])
        imp = hz.ImpedanceSet.absorbing(g, w1, w2)
        out.append(ProblemInstance(g, imp, hz.Excitation(w1, 1.0), hz.Excitation(w2, 1.0),
                                   1.0, 0.2, ell=ell))
    return out


def pyramid(grid, amplitude=4.0, center=0.5, width=0.25):
    X = grid.coords[grid.roi_nodes]
    return amplitude * np.prod(np.maximum(0.0, 1.0 - np.abs(X - center) / width), axis=1)


@pytest.fixture
def inst1d():
    return instance_1d(31)


@pytest.fixture
def inst2d():
    return instance_2d(21)


@pytest.fixture(scope="session")
def phantom():
    insts = phantom_instances()
    return insts, pyramid(insts[0].grid)
