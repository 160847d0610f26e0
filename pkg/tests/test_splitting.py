import math
from fractions import Fraction

import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from helpers import CHAIN3_GAMMA, TWO_BOOL
from raresplit.models import CASES, model_text
from raresplit.product import make_problem
from raresplit.score import ScoreFn, Stagnation
from raresplit.splitting import (AdaptiveSplitting, Estimate, FixedLevelSplitting, MonteCarlo,
                                 adaptive, check_budget, check_levels, check_problem,
                                 check_proportion, confidence_interval, fixed_level, monte_carlo,
                                 z_quantile)

CHAIN = CASES["chain3"]


def chain_problem():
    return make_problem(model_text("chain3"), CHAIN.prop, CHAIN.score, CHAIN.threshold)


def test_mc_true_and_false():
    e = monte_carlo(TWO_BOOL, "true", 50)
    assert e.gamma_hat == 1.0 and e.ci == (1.0, 1.0)
    e = monte_carlo(TWO_BOOL, "false", 50)
    assert e.gamma_hat == 0.0


def test_mc_unrestricted_property_uses_trace_checker():
    # outside the observer fragment; the initial state fails a | b and each
    # later state fails it with probability 1/4
    e = monte_carlo(TWO_BOOL, "F<=2 (a | G<=0 b)", 2000, seed=1)
    exact = 1 - Fraction(1, 4) ** 2
    assert abs(e.gamma_hat - float(exact)) < 4 * math.sqrt(float(exact * (1 - exact)) / 2000)


def test_single_level_matches_mc_verdicts():
    prob = chain_problem()
    mc = monte_carlo(prob, None, 3000, seed=8)
    fx = fixed_level(prob, None, None, [3], 3000, seed=8)
    assert fx.gamma_i == mc.gamma_i


def test_interval_examples():
    lo, hi, s2, inf = confidence_interval([1, 1, 1], 10)
    assert (lo, hi, s2, inf) == (1.0, 1.0, 0.0, False)
    lo, hi, s2, inf = confidence_interval([0.5], 100)
    z = z_quantile(0.05)
    assert s2 == 1.0 and not inf
    assert lo == pytest.approx(0.5 / (1 + z / 10)) and hi == pytest.approx(0.5 / (1 - z / 10))
    assert lo == pytest.approx(0.5 / 1.196, rel=1e-4)
    _, hi, _, inf = confidence_interval([0.01], 4)
    assert inf and math.isinf(hi)
    with pytest.raises(ValueError):
        confidence_interval([0.5, 0], 10)


def test_fixed_estimate_is_product_of_level_fractions():
    e = fixed_level(chain_problem(), None, None, [2, 3], 400, seed=2)
    assert e.m == 2 and e.levels == [2, 3]
    assert e.gamma_hat == float(e.gamma_i[0] * e.gamma_i[1])
    assert all((g * 400).denominator == 1 for g in e.gamma_i)
    assert e.ci[0] <= e.gamma_hat <= e.ci[1]


def test_extinction():
    e = fixed_level(TWO_BOOL, "F<=3 (a & b & false)", None, [1], 20, seed=0)
    assert e.extinct and e.extinct_at == 0 and e.gamma_hat == 0.0 and e.ci is None
    assert "extinct" in e.note


def test_last_level_must_be_threshold():
    with pytest.raises(ValueError, match="threshold"):
        fixed_level(chain_problem(), None, None, [1, 2], 10)


def test_reproducible():
    a = fixed_level(chain_problem(), None, None, [2, 3], 300, seed=5).to_dict()
    b = fixed_level(chain_problem(), None, None, [2, 3], 300, seed=5).to_dict()
    c = fixed_level(chain_problem(), None, None, [2, 3], 300, seed=6).to_dict()
    for d in (a, b, c):
        d.pop("wall_time")
    assert a == b and a != c
    x = adaptive(chain_problem(), None, None, 0.5, 300, seed=5)
    y = adaptive(chain_problem(), None, None, 0.5, 300, seed=5)
    assert x.gamma_i == y.gamma_i and x.levels == y.levels


def test_work_grows_with_budget():
    steps = [fixed_level(chain_problem(), None, None, [2, 3], n, seed=1).steps
             for n in (50, 200, 800)]
    assert steps[0] < steps[1] < steps[2]


def test_estimate_json_round_trip():
    e = fixed_level(chain_problem(), None, None, [2, 3], 100, seed=3)
    back = Estimate.from_dict(__import__("json").loads(e.to_json()))
    assert back == e


def test_adaptive_on_chain():
    e = adaptive(chain_problem(), None, None, 0.5, 2000, seed=4)
    assert e.levels[-1] == 3
    assert abs(e.gamma_hat - float(CHAIN3_GAMMA)) < 0.5 * float(CHAIN3_GAMMA)


def test_adaptive_degenerate_cases():
    e = adaptive(TWO_BOOL, "true", None, 0.8, 20)
    assert e.gamma_i == [1] and e.levels == [1]
    with pytest.raises(Stagnation):
        adaptive(TWO_BOOL, "F<=3 (a & b)", ScoreFn("0 * step", 1), 0.8, 20)


@pytest.mark.parametrize("n", [1, 0, -3, 2.5, True, "10"])
def test_check_budget(n):
    with pytest.raises(ValueError):
        check_budget(n)


@pytest.mark.parametrize("p", [0, 1, -0.5, 2, True, "0.5"])
def test_check_proportion(p):
    with pytest.raises(ValueError):
        check_proportion(p)


def test_check_levels_and_problem():
    assert check_levels("1,2").levels == (1, 2)
    assert check_levels([1, 2]).m == 2
    with pytest.raises(ValueError):
        check_levels(None)
    with pytest.raises(TypeError):
        check_problem(42)
    assert check_problem((model_text("chain3"), CHAIN.prop)).threshold == 1


def test_estimator_objects():
    est = FixedLevelSplitting(levels=[2, 3], n=200, seed=1)
    assert est.get_params() == {"levels": [2, 3], "n": 200, "seed": 1, "alpha": 0.05}
    with pytest.raises(NotFittedError):
        est.summary()
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    prob = chain_problem()
    est.fit(prob)
    assert est.gamma_ == est.estimate_.gamma_hat and est.levels_ == [2, 3]
    assert est.summary()["estimator"] == "fixed"
    assert not hasattr(twin, "estimate_")
    ad = AdaptiveSplitting(proportion=0.5, n=200).set_params(seed=3).fit(prob)
    assert ad.levels_[-1] == 3
    mc = MonteCarlo(n=100).fit((TWO_BOOL, "true"))
    assert mc.gamma_ == 1.0
