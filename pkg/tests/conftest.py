import numpy as np
import pytest

from debtrank_stress.balance_sheet import LeverageNetworks


def random_leverage(rng, n, ext_range=(1.0, 20.0), ib_scale=1.0, density=0.5):
    """Random leverage networks with positive external leverage for every bank."""
    equity = rng.uniform(1.0, 10.0, n)
    lev_e = rng.uniform(*ext_range, n)
    mask = rng.random((n, n)) < density
    np.fill_diagonal(mask, False)
    lev_b = np.where(mask, rng.uniform(0.0, ib_scale, (n, n)), 0.0)
    return LeverageNetworks(lev_b, lev_e, equity)


def no_default_instance(rng, n):
    """Leverage and common shock for which no bank defaults through round 2."""
    lev = random_leverage(rng, n, ib_scale=rng.uniform(0.1, 2.0))
    le = lev.external_total
    r = rng.uniform(0.05, 0.95) / (le + lev.interbank @ le).max()
    return lev, r


def near_default_instance(rng, n):
    """Instances where some banks sit at or just past their default threshold."""
    lev = random_leverage(rng, n, ext_range=(5.0, 40.0), ib_scale=rng.uniform(0.5, 5.0))
    r = rng.uniform(0.5, 1.2) / lev.external_total.max()
    return lev, min(r, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
