import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from debtrank_stress.balance_sheet import synthesize_cohort
from debtrank_stress.pipeline import run_stress, stage_seed
from debtrank_stress.reconstruction import generate_ensemble
from debtrank_stress.risk import LossSample, RiskError, aggregate_ensemble, empirical_cvar, empirical_var
from debtrank_stress.scenario import BetaShock, ScenarioSpec, draw_shocks

DECILES = [k / 10 for k in range(10)]
losses = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60)
alphas = st.floats(0.01, 0.99)


def test_decile_example():
    assert empirical_var(DECILES, 0.9) == 0.8
    assert empirical_cvar(DECILES, 0.9) == pytest.approx(0.85, abs=1e-15)


def test_literal_quantile():
    assert empirical_var(DECILES, 0.9, literal=True) == 0.0
    assert empirical_var(DECILES, 0.8, literal=True) == 0.1


def test_degenerate_samples():
    for a in (0.1, 0.5, 0.95):
        assert empirical_var([0.3] * 7, a) == 0.3
        assert empirical_cvar([0.3] * 7, a) == pytest.approx(0.3)


def test_errors():
    with pytest.raises(RiskError):
        empirical_var([], 0.9)
    with pytest.raises(RiskError):
        empirical_var([0.1], 1.0)
    with pytest.raises(RiskError):
        LossSample(0, 0, {"first": np.array([1.2])}, {"first": 0.5})


@given(losses, alphas, alphas)
def test_var_monotone_in_alpha(x, a1, a2):
    lo, hi = sorted((a1, a2))
    assert empirical_var(x, lo) <= empirical_var(x, hi)


@given(losses, alphas)
def test_cvar_dominates_var(x, a):
    assert empirical_cvar(x, a) >= empirical_var(x, a)


def sample(net, scen, h1, h2):
    h = {"first": np.asarray(h1), "second": np.asarray(h2)}
    return LossSample(net, scen, h, {k: float(np.mean(v)) for k, v in h.items()})


def test_single_run_echo():
    s = sample(0, 0, [0.1, 0.2], [0.3, 0.4])
    rep = aggregate_ensemble([s], 0.95, impacts=[np.array([0.5, 0.6])], bank_ids=["a", "b"])
    assert rep.global_var["second"] == pytest.approx(0.35)
    assert rep.median_system_distress == {"first": pytest.approx(0.15), "second": pytest.approx(0.35)}
    np.testing.assert_allclose(rep.median_distress["first"], [0.1, 0.2])
    np.testing.assert_allclose(rep.bank_var["second"], [0.3, 0.4])
    np.testing.assert_allclose(rep.median_impact, [0.5, 0.6])
    d = rep.to_dict()
    assert d["bank_ids"] == ["a", "b"] and d["samples"] == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_duplication_and_order_invariance(seed, n):
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(n):
        h1 = rng.uniform(0, 0.5, 3)
        samples.append(sample(k, 0, h1, h1 + rng.uniform(0, 0.5, 3)))
    base = aggregate_ensemble(samples, 0.9)
    dup = aggregate_ensemble(samples + samples, 0.9)
    assert dup.median_system_distress == base.median_system_distress
    for r in base.rounds:
        np.testing.assert_array_equal(dup.median_distress[r], base.median_distress[r])
    shuffled = [samples[i] for i in rng.permutation(n)]
    again = aggregate_ensemble(shuffled, 0.9)
    assert again.global_var == base.global_var and again.global_cvar == base.global_cvar
    assert again.median_system_distress == base.median_system_distress


def test_var_shift_on_ensemble_run():
    cohort = synthesize_cohort(40, 2)
    ens = generate_ensemble(cohort, 0.1, 10, stage_seed(1, "reconstruct"))
    shocks = draw_shocks(ScenarioSpec(BetaShock(draws=20), seed=stage_seed(1, "scenario")))
    cells, _ = run_stress(cohort, list(ens), shocks)
    samples = [c.loss_sample() for net in cells for c in net]
    for s in samples:
        assert s.system_distress["second"] >= s.system_distress["first"] and s.system_distress["third"] >= s.system_distress["second"]
    for a in (0.9, 0.95, 0.99):
        rep = aggregate_ensemble(samples, a)
        assert rep.global_var["second"] >= rep.global_var["first"]
        assert rep.var_shift >= 0
        assert np.all(rep.bank_var["second"] >= rep.bank_var["first"])
