from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import oracles
from mosbench.errors import StatsInputError
from mosbench.stats import (
    AnovaResult,
    ComparisonReport,
    MetricSamples,
    PairwiseResult,
    compare_metric,
    compare_models,
    one_way_anova,
    render_pairwise_table,
    studentized_range_critical,
    tukey_hsd,
)

ABC = {"A": (1.0, 2.0, 3.0), "B": (2.0, 3.0, 4.0), "C": (3.0, 4.0, 5.0)}


def samples(groups, metric="srcc", level="system"):
    return MetricSamples(metric, level, {k: tuple(map(float, v)) for k, v in groups.items()})


def test_anova_worked_example():
    res = one_way_anova(samples(ABC))
    assert res.ss_between == pytest.approx(6.0)
    assert res.ss_within == pytest.approx(6.0)
    assert (res.df_between, res.df_within) == (2, 6)
    assert res.f == pytest.approx(3.0)
    # for 2 numerator degrees of freedom the F survival function is (1 + 2F/d)^(-d/2)
    assert res.p == pytest.approx((1 + 2 * 3.0 / 6) ** -3, abs=1e-12)
    assert not res.rejected(0.05)


def test_anova_vs_oracle(rng):
    for _ in range(30):
        k = int(rng.integers(2, 7))
        groups = {f"g{i}": rng.normal(rng.normal(), 1, int(rng.integers(2, 9))) for i in range(k)}
        res = one_way_anova(samples(groups))
        ssb, ssw, f, dfb, dfw = oracles.anova([list(g) for g in groups.values()])
        assert res.ss_between == pytest.approx(ssb, rel=1e-10)
        assert res.ss_within == pytest.approx(ssw, rel=1e-10)
        assert res.f == pytest.approx(f, rel=1e-10)
        assert (res.df_between, res.df_within) == (dfb, dfw)
        if dfb == 2:
            assert res.p == pytest.approx((1 + 2 * f / dfw) ** (-dfw / 2), rel=1e-9)


def test_two_groups_f_equals_t_squared(rng):
    for _ in range(20):
        a, b = rng.normal(0, 1, 5), rng.normal(0.5, 1, 7)
        t, _ = oracles.pooled_t(list(a), list(b))
        assert one_way_anova(samples({"a": a, "b": b})).f == pytest.approx(t * t, rel=1e-10)


def test_tukey_worked_example():
    pairs = {(p.a, p.b): p for p in tukey_hsd(samples(ABC))}
    assert len(pairs) == 3
    ac = pairs[("A", "C")]
    assert ac.mean_diff == pytest.approx(2.0)
    assert ac.q == pytest.approx(2.0 / math.sqrt(1.0 / 3.0))
    assert ac.q == pytest.approx(3.464, abs=1e-3)
    # tabulated q_{0.05}(3, 6) = 4.34
    assert ac.q_crit == pytest.approx(4.34, abs=5e-3)
    assert not ac.rejected


def test_studentized_range_table_values():
    # standard upper 5% points of the studentized range
    assert studentized_range_critical(0.05, 2, 10) == pytest.approx(3.151, abs=2e-3)
    assert studentized_range_critical(0.05, 4, 20) == pytest.approx(3.958, abs=2e-3)
    assert studentized_range_critical(0.05, 8, 72) == pytest.approx(4.40, abs=2e-2)


def test_two_group_tukey_matches_pooled_t(rng):
    """With k=2, Tukey rejects exactly when the pooled two-sample t-test rejects."""
    agree = 0
    for i in range(200):
        n = int(rng.integers(3, 7))
        a = rng.normal(0, 1, n)
        b = rng.normal(rng.uniform(0, 2.5), 1, n)
        t, df = oracles.pooled_t(list(a), list(b))
        t_rejects = abs(t) > oracles.T_975[df]
        (pair,) = tukey_hsd(samples({"a": a, "b": b}))
        assert pair.q == pytest.approx(math.sqrt(2) * abs(t), rel=1e-10)
        assert pair.q_crit == pytest.approx(math.sqrt(2) * oracles.T_975[df], rel=1e-5)
        if abs(abs(t) - oracles.T_975[df]) > 1e-4:
            assert pair.rejected == t_rejects
            agree += 1
    assert agree >= 195


def test_identical_groups_flagged():
    res = one_way_anova(samples({"a": (0.5, 0.5), "b": (0.5, 0.5), "c": (0.5, 0.5)}))
    assert res.flag == "DEGENERATE"
    assert not res.rejected(0.05)
    rep = compare_metric(samples({"a": (0.5, 0.5), "b": (0.5, 0.5)}))
    assert rep.equal_means("a", "b")
    assert any("DEGENERATE" in n for n in rep.notes)


def test_identical_values_within_groups_zero_f():
    res = one_way_anova(samples({"a": (1, 2, 3), "b": (1, 2, 3)}))
    assert res.f == pytest.approx(0.0)
    assert res.p == pytest.approx(1.0)


def test_zero_within_variance_distinct_means():
    rep = compare_metric(samples({"a": (0.8, 0.8, 0.8), "b": (0.9, 0.9, 0.9)}))
    assert rep.anova.flag == "ZERO_WITHIN_VARIANCE"
    assert math.isinf(rep.anova.f) and rep.anova_rejected
    assert not rep.equal_means("a", "b")


def test_input_validation():
    with pytest.raises(StatsInputError):
        samples({"a": (1, 2)})
    with pytest.raises(StatsInputError):
        samples({"a": (1, 2), "b": (1,)})
    with pytest.raises(StatsInputError):
        samples({"a": (1, float("nan")), "b": (1, 2)})
    with pytest.raises(ValueError):
        samples({"a": (1,), "b": (2,)})


def test_eight_model_clusters():
    rng = np.random.default_rng(7)
    means = [0.80] * 4 + [0.90] * 4
    groups = {f"M{i}": rng.normal(mu, 0.004, 10) for i, mu in enumerate(means)}
    rep = compare_metric(samples(groups))
    assert len(rep.pairs) == 28 and rep.anova_rejected
    for p in rep.pairs:
        same = (int(p.a[1]) < 4) == (int(p.b[1]) < 4)
        assert rep.equal_means(p.a, p.b) == same
    assert sum(not p.rejected for p in rep.pairs) == 12


def test_anova_gate_overrides_pairwise():
    anova = AnovaResult(1.0, 0.4, 2, 6, 1.0, 3.0)
    pair = PairwiseResult("a", "b", 1.0, 9.0, 0.001, 4.3, True)
    rep = ComparisonReport("mse", "utterance", anova, [pair])
    assert rep.equal_means("a", "b")
    doc = rep.to_dict()
    assert doc["tukey_gated"] and doc["pairs"][0]["equal_means"] and doc["pairs"][0]["rejected"]


groups_strategy = st.lists(
    st.lists(st.integers(0, 1000).map(lambda k: k / 1000.0), min_size=2, max_size=8),
    min_size=2,
    max_size=5,
)


@settings(max_examples=60, deadline=None)
@given(groups_strategy, st.floats(0.1, 10), st.floats(-5, 5))
def test_affine_invariance(gs, scale, shift):
    base = samples({f"g{i}": g for i, g in enumerate(gs)})
    assume(one_way_anova(base).flag is None)
    moved = samples({f"g{i}": [scale * v + shift for v in g] for i, g in enumerate(gs)})
    a, b = one_way_anova(base), one_way_anova(moved)
    assert b.f == pytest.approx(a.f, rel=1e-6, abs=1e-9)
    for p, q in zip(tukey_hsd(base), tukey_hsd(moved)):
        assert q.q == pytest.approx(p.q, rel=1e-6, abs=1e-9)
        if abs(p.q - p.q_crit) > 1e-6 * p.q_crit:
            assert p.rejected == q.rejected


@settings(max_examples=40, deadline=None)
@given(groups_strategy, st.randoms(use_true_random=False))
def test_group_order_invariance(gs, rnd):
    names = [f"g{i}" for i in range(len(gs))]
    base = samples(dict(zip(names, gs)))
    order = names[:]
    rnd.shuffle(order)
    shuffled = samples({n: base.groups[n] for n in order})
    assert one_way_anova(shuffled).f == pytest.approx(one_way_anova(base).f, rel=1e-9, nan_ok=True)
    assert len(tukey_hsd(base)) == len(gs) * (len(gs) - 1) // 2


def test_compare_models_and_table():
    values = {
        ("mse", "utterance"): {"A": [0.5, 0.51, 0.49], "B": [0.5, 0.52, 0.48], "C": [0.9, 0.91, 0.92]},
        ("srcc", "system"): {"A": [0.9, 0.91, 0.92], "B": [0.6, 0.61, 0.62], "C": [0.3, 0.31, 0.32]},
    }
    reports = compare_models(values)
    assert set(reports) == set(values)
    table = render_pairwise_table(reports)
    lines = table.splitlines()
    assert lines[0].split() == ["Pair", "UTTE", "MSE", "SYST", "SRCC"]
    body = [ln for ln in lines[2:]]
    assert body == ["A-B   ✓"]
    full = render_pairwise_table(reports, only_with_equal=False)
    assert len(full.splitlines()) == 2 + 3
