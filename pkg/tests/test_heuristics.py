import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import markowitz_pp.heuristics as H
from markowitz_pp.data_model import Portfolio
from markowitz_pp.heuristics import (RelaxRoundSolveError, RoundingPolicy, exhaustive_min_holding,
                                     is_compliant, min_holding_relax_round_solve,
                                     partition_assets, pattern_params, relax_round_solve,
                                     round_shares)
from markowitz_pp.problem import SOFTENABLE, markowitz_pp_parameters, optimize

from _instances import random_forecast


# ---------------------------------------------------------------- rounding

def test_round_shares_examples():
    shares, zr = round_shares([0.0, 0.0], [50.0, 20.0], 1e6)
    assert np.array_equal(shares, [0, 0]) and np.array_equal(zr, [0.0, 0.0])
    shares, zr = round_shares([0.01], [50.0], 1e6)
    assert shares[0] == 200 and zr[0] == pytest.approx(0.01, rel=1e-15)
    shares, _ = round_shares([0.01004, -0.00996], [50.0, 50.0], 1e6)
    assert list(shares) == [201, -199]
    shares, _ = round_shares([0.0101], [50.0], 1e6, RoundingPolicy(lot=100))
    assert shares[0] == 200


@settings(max_examples=100)
@given(st.integers(1, 10), st.integers(0, 2 ** 32 - 1), st.integers(1, 100))
def test_round_shares_properties(n, seed, lot):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-0.05, 0.05, n)
    prices = rng.uniform(1, 500, n)
    V = 1e7
    pol = RoundingPolicy(lot=lot)
    shares, zr = round_shares(z, prices, V, pol)
    assert np.all(shares % lot == 0)
    # nearest lot: error at most half a lot's value
    assert np.all(np.abs(zr - z) <= lot * prices / V / 2 + 1e-15)
    again, zr2 = round_shares(zr, prices, V, pol)
    assert np.array_equal(again, shares) and np.allclose(zr2, zr, rtol=1e-15)


def test_rounding_policy_validation():
    with pytest.raises(ValueError):
        RoundingPolicy(lot=0)
    with pytest.raises(ValueError):
        RoundingPolicy(threshold=0.01).resolve_threshold(0.005)
    assert RoundingPolicy().resolve_threshold(0.01) == 0.005
    with pytest.raises(ValueError):
        round_shares([0.1], [0.0], 1.0)


# --------------------------------------------------------------- partitions

def test_partition_and_compliance():
    w = np.array([0.0, 0.0004, 0.002, -0.0007, -0.01])
    part = partition_assets(w, 0.0005)
    assert list(part["zero"]) == [0, 1]
    assert list(part["long"]) == [2]
    assert list(part["short"]) == [3, 4]
    assert not is_compliant(w, 0.001)
    assert is_compliant([0.0, 0.001, -0.5], 0.001)


def test_pattern_params_contradiction():
    rng = np.random.default_rng(0)
    fc = random_forecast(rng, 3)
    p = markowitz_pp_parameters(w_min=0.0, w_max=0.4)
    assert pattern_params(p, fc, 0.01, np.array([-1, 0, 1])) is None
    q = pattern_params(p, fc, 0.01, np.array([0, 1, 1]))
    assert np.array_equal(q.w_max, [0.0, 0.4, 0.4])
    assert np.array_equal(q.w_min, [0.0, 0.01, 0.01])


# ----------------------------------------------------------- relax-round-solve

def _soft_params(**kw):
    return markowitz_pp_parameters(soft=frozenset(SOFTENABLE - {"trades"}), **kw)


class CountingOptimize:
    def __init__(self):
        self.calls = 0

    def __call__(self, *a, **k):
        self.calls += 1
        return optimize(*a, **k)


def test_compliant_relaxed_solution_skips_second_pass(monkeypatch):
    rng = np.random.default_rng(1)
    fc = random_forecast(rng, 6)
    counter = CountingOptimize()
    monkeypatch.setattr(H, "optimize", counter)
    res = relax_round_solve(Portfolio.all_cash(6), fc, _soft_params(), 1e-9)
    assert counter.calls == 1 and res.solves == 1 and res.partition is None
    assert np.allclose(res.decision.w_post, res.relaxed.w_post, rtol=0, atol=1e-9)
    assert res.decision.objective == pytest.approx(res.relaxed.objective, abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_relax_round_solve_is_compliant(seed, monkeypatch):
    rng = np.random.default_rng(seed)
    n = 12
    fc = random_forecast(rng, n)
    p = _soft_params(w_min=-0.2, w_max=0.2)
    counter = CountingOptimize()
    monkeypatch.setattr(H, "optimize", counter)
    w_min_abs = 0.001
    res = relax_round_solve(Portfolio.all_cash(n), fc, p, w_min_abs)
    assert counter.calls <= 2
    assert res.decision.optimal
    assert is_compliant(res.decision.w_post, w_min_abs)
    assert res.decision.w_post.sum() + res.decision.c_post == pytest.approx(1.0, abs=1e-12)
    d = min_holding_relax_round_solve(Portfolio.all_cash(n), fc, p, w_min_abs)
    assert np.array_equal(d.w_post, res.decision.w_post)


def test_relax_round_no_better_than_exhaustive():
    rng = np.random.default_rng(3)
    n = 5
    fc = random_forecast(rng, n)
    p = _soft_params(w_min=0.0, w_max=0.6)
    w_min_abs = 0.15
    best, signs = exhaustive_min_holding(Portfolio.all_cash(n), fc, p, w_min_abs)
    res = relax_round_solve(Portfolio.all_cash(n), fc, p, w_min_abs)
    assert is_compliant(best.w_post, w_min_abs)
    assert res.decision.objective <= best.objective + 1e-9


def test_second_pass_failure_carries_partition():
    rng = np.random.default_rng(4)
    n = 4
    fc = random_forecast(rng, n)
    p = markowitz_pp_parameters(soft=frozenset({"risk", "leverage", "turnover"}), w_min=0.0,
                                w_max=1.0, c_min=0.0, c_max=0.0, z_min=-1.0, z_max=1.0)
    relaxed = optimize(Portfolio.all_cash(n), fc, p)
    assert relaxed.optimal
    held = relaxed.w_post[relaxed.w_post > 1e-6]
    # every held asset becomes a long of at least 1.2/k: the budget cannot be met
    w_min_abs = 1.2 / held.size
    theta = 0.5 * held.min()
    with pytest.raises(RelaxRoundSolveError) as info:
        relax_round_solve(Portfolio.all_cash(n), fc, p, w_min_abs, RoundingPolicy(threshold=theta))
    part = info.value.partition
    assert sorted(np.concatenate([part["zero"], part["long"], part["short"]])) == list(range(n))
    assert len(part["long"]) == held.size


def test_relax_round_rejects_bad_minimum():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        relax_round_solve(Portfolio.all_cash(3), random_forecast(rng, 3), _soft_params(), 0.0)
