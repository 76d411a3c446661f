import numpy as np
import pytest

from stochwave.grid import Grid
from stochwave.models import fitzhugh_nagumo, nagumo
from stochwave.noise import CovarianceKernel
from stochwave.pipeline import deterministic_wave


class NagumoCase:
    """Nagumo a=0.25, rho=1, Gaussian kernel zeta=1 on a coarse grid."""

    def __init__(self, L=40.0, N=401, mu=0, a=0.25, order=2):
        self.grid = Grid(L, N, order=order)
        self.model = nagumo(a=a, mu=mu)
        self.kernel = CovarianceKernel.gaussian(self.grid, 1.0)
        self.wave = deterministic_wave(self.model, self.grid)


@pytest.fixture(scope="session")
def nag():
    return NagumoCase()


@pytest.fixture(scope="session")
def nag_fine():
    """Fourth-order stencils at N=4096: discretization error below 1e-8."""
    return NagumoCase(N=4096, order=4)


@pytest.fixture(scope="session")
def nag_strat():
    return NagumoCase(mu=1)


@pytest.fixture(scope="session")
def fhn():
    grid = Grid(100.0, 4001)
    model = fitzhugh_nagumo()
    wave = deterministic_wave(model, grid)
    return model, grid, CovarianceKernel.gaussian(grid, 1.0), wave


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance summary lines ----------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """criterion(n, checks) prints one pass/fail line and fails the test if any check failed.

    checks is a list of (description, ok) pairs.
    """
    def record(n, title, checks, seconds=None):
        ok = all(bool(c) for _, c in checks)
        detail = "; ".join(f"{d} [{'ok' if c else 'FAIL'}]" for d, c in checks)
        took = f" ({seconds:.0f} s)" if seconds is not None else ""
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}{took} -- {detail}"
        request.config.stash[_ACCEPTANCE].append(line)
        print(line)
        assert ok, line
    return record
