import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import no_default_instance
from debtrank_stress.balance_sheet import LeverageNetworks
from debtrank_stress.contagion import DEBTRANK, CASCADE, run_second_round
from debtrank_stress.fire_sales import (
    FireSalesParams,
    post_round2_leverage,
    restored_leverage,
    sale_fraction,
    third_round,
)


def single(le=8.0, lb=2.0):
    return LeverageNetworks(np.array([[0.0, lb], [0.0, 0.0]]), np.array([le, 1.0]), np.ones(2))


def test_post_round2_leverage_examples():
    lev = single()
    np.testing.assert_allclose(post_round2_leverage(lev, [0, 0], [0, 0], 0.0), lev.total)
    lT = post_round2_leverage(lev, [0.08, 0.01], [0.2, 0.01], 0.01)
    assert lT[0] == pytest.approx(12.25, abs=1e-12)
    assert np.isnan(post_round2_leverage(lev, [1.0, 0.0], [1.0, 0.0], 0.01)[0])


def test_sale_fraction_examples():
    lev = single()
    assert sale_fraction(lev, [0.0, 0.0], 0.01)[0] == 0.0
    s = sale_fraction(lev, [0.2, 0.0], 0.01)[0]
    assert s == pytest.approx(0.2 / 7.92 * 9 / 11, rel=1e-12)
    assert s == pytest.approx(0.020661, abs=5e-7)
    restored = restored_leverage(lev, [0.2, 0.0], [s, 0.0], 0.01)[0]
    assert restored == pytest.approx(10.0, abs=1e-10)


def test_sale_fraction_cap_is_flagged():
    lev = LeverageNetworks(np.array([[0.0, 20.0], [0.0, 0.0]]), np.array([0.5, 1.0]), np.ones(2))
    flags = []
    s = sale_fraction(lev, [0.99, 0.0], 0.1, flags)
    assert s[0] == 1.0 and flags and "capped" in flags[0]


def fire_sale_draws(rng, count):
    for _ in range(count):
        le = rng.uniform(1.5, 30.0)
        lb = rng.uniform(0.0, 10.0)
        r = rng.uniform(0.0, 1.0) * min(0.99 / le, 1.0 - 1.0 / le)
        h1 = le * r
        h2 = rng.uniform(max(h1, 1e-9), 1.0)
        yield single(le, lb), r, h1, h2


def test_fire_sale_algebra(rng):
    for lev, r, h1, h2 in fire_sale_draws(rng, 1000):
        h2v, h1v = np.array([h2, 0.0]), np.array([h1, 0.0])
        s = sale_fraction(lev, h2v, r)
        assert 0.0 < s[0] < 1.0
        assert restored_leverage(lev, h2v, s, r)[0] == pytest.approx(lev.total[0], abs=1e-10)
        assert post_round2_leverage(lev, h1v, h2v, r)[0] > lev.total[0]


def closed_form_third(lev, state, r, eta):
    s = sale_fraction(lev, state.distress, r)
    q = lev.external_assets
    rho = (s * q).sum() / q.sum()
    w = lev.weights
    return float(w @ state.distress) + (1 - r) * rho * eta * float(w @ (lev.external_total * (1 - s))), rho


def test_three_bank_closed_form():
    lb = np.array([[0.0, 1.0, 0.5], [0.3, 0.0, 0.0], [0.2, 0.4, 0.0]])
    lev = LeverageNetworks(lb, np.array([10.0, 6.0, 12.0]), np.array([2.0, 5.0, 3.0]))
    r = 0.01
    state = run_second_round(lev, r)
    out = third_round(lev, state, FireSalesParams(0.1, r))
    expected, rho = closed_form_third(lev, state, r, 0.1)
    assert out.sold_fraction == pytest.approx(rho, rel=1e-14)
    assert out.final_system_distress == pytest.approx(expected, abs=1e-10)
    assert out.final_price == pytest.approx((1 - r) * (1 - rho * 0.1))
    assert sum(out.decomposition.values()) == pytest.approx(out.final_system_distress, abs=1e-15)


def test_no_price_impact_and_no_distress(rng):
    lev, r = no_default_instance(rng, 6)
    state = run_second_round(lev, r)
    out = third_round(lev, state, FireSalesParams(0.0, r))
    np.testing.assert_array_equal(out.final_distress, state.distress)
    assert out.decomposition["third"] == 0.0
    calm = run_second_round(lev, 0.0)
    out = third_round(lev, calm, FireSalesParams(0.1, 0.0))
    assert out.sold_fraction == 0.0 and out.final_price == 1.0


def test_defaulted_banks_do_not_sell():
    lev = LeverageNetworks(np.zeros((2, 2)), np.array([20.0, 5.0]), np.ones(2))
    state = run_second_round(lev, 0.06)
    out = third_round(lev, state, FireSalesParams(0.1, 0.06))
    assert out.final_distress[0] == 1.0 and out.sale_fractions[0] == 0.0
    assert not out.participating[0] and out.participating[1]


def test_params_validation():
    with pytest.raises(ValueError):
        FireSalesParams(price_impact=1.5)
    with pytest.raises(ValueError):
        FireSalesParams(shock=1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_monotone_in_eta_and_ordered(seed, e1, e2):
    rng = np.random.default_rng(seed)
    lev, r = no_default_instance(rng, int(rng.integers(2, 12)))
    r = r * rng.uniform(1.0, 3.0)
    for f in (DEBTRANK, CASCADE):
        state = run_second_round(lev, min(r, 0.99), f)
        lo, hi = sorted((e1, e2))
        a = third_round(lev, state, FireSalesParams(lo, min(r, 0.99)))
        b = third_round(lev, state, FireSalesParams(hi, min(r, 0.99)))
        assert a.final_system_distress <= b.final_system_distress + 1e-15
        assert np.all(b.final_distress >= state.distress) and np.all(state.distress >= state.initial_distress)
        assert np.all(b.final_distress <= 1.0)
