"""Shadow candidates, trade conditions, classic verdicts, marginal prices."""

import numpy as np
import pytest

from fdual.duality import (DualSolution, Deflator, dual_solve,
                           extract_dual_from_primal, primal_solve)
from fdual.market import EndowmentSet, build_model, instance_a
from fdual.shadow import (candidate_shadow, check_classic,
                          check_endowment_domination, frictionless_solve,
                          marginal_price_report, shadow_pipeline,
                          verify_trade_conditions)


@pytest.fixture(scope="module")
def setup():
    model, endow, util = build_model(instance_a())
    return model, endow, util


def test_candidate_from_instance_a(setup):
    model, endow, util = setup
    primal = primal_solve(model, endow, 1.0, [1.0], util)
    dual = extract_dual_from_primal(model, endow, util, primal)
    cand = candidate_shadow(model, dual)
    assert bool(np.all(cand.well_defined))
    cand.assert_in_spread(model)
    # the verifying measure prices the claim at the marginal price 0.6
    q_up = model.tree.prob()[1] * dual.deflator.y0[1] / dual.y
    assert q_up == pytest.approx(0.2, abs=1e-5)
    # martingale consistency of the candidate under that measure
    s0 = q_up * cand.s_hat[1] + (1 - q_up) * cand.s_hat[2]
    assert s0 == pytest.approx(cand.s_hat[0], abs=1e-6)


def test_all_zero_deflator_rejected(setup):
    model, endow, util = setup
    dead = DualSolution(y=0.0, r=np.zeros(1),
                        deflator=Deflator(y0=np.zeros(3), y1=np.zeros(3)),
                        value=0.0)
    with pytest.raises(ValueError):
        candidate_shadow(model, dead)


def test_instance_a_verdict_classic(setup):
    model, endow, util = setup
    primal, dual, verdict = shadow_pipeline(model, endow, 1.0, [1.0], util)
    assert verdict.verdict == "classic"
    assert verdict.value_gap <= 1e-6
    assert verdict.y0_martingale_residual <= 1e-6
    assert verdict.y1_martingale_residual <= 1e-6
    assert verdict.price_match_residual <= 1e-6
    assert verdict.trade_conditions.ok
    # no-trade optimum: the conditions hold vacuously
    assert verdict.trade_conditions.n_buy_nodes == 0
    assert verdict.trade_conditions.n_sell_nodes == 0


def test_frictionless_value_matches(setup):
    # with the candidate built from the optimizer, frictionless trading
    # reproduces u(1,1) = log 2 and the wealth profile (4, 1)
    model, endow, util = setup
    primal = primal_solve(model, endow, 1.0, [1.0], util)
    dual = extract_dual_from_primal(model, endow, util, primal)
    cand = candidate_shadow(model, dual)
    value, wealth, net = frictionless_solve(model, cand, endow, 1.0, [1.0], util)
    assert value == pytest.approx(np.log(2.0), abs=1e-6)
    assert np.allclose(wealth, [4.0, 1.0], atol=1e-4)
    assert value >= primal.value - 1e-9


def test_ask_price_relaxation_dominates(setup):
    # trading frictionlessly at the ask itself can only improve the value
    model, endow, util = setup
    primal = primal_solve(model, endow, 1.0, [1.0], util)
    dual = extract_dual_from_primal(model, endow, util, primal)
    cand = candidate_shadow(model, dual)
    cand.s_hat = model.ask.copy()
    value, _, _ = frictionless_solve(model, cand, endow, 1.0, [1.0], util)
    assert value >= primal.value - 1e-9


def test_trade_conditions_frictionless_limit(setup):
    model, endow, util = setup
    tiny = model.with_lambda(1e-12)
    primal = primal_solve(tiny, endow, 1.0, [0.0], util)
    dual = extract_dual_from_primal(tiny, endow, util, primal)
    cand = candidate_shadow(tiny, dual)
    rep = verify_trade_conditions(tiny, primal, cand, tol=1e-9)
    assert rep.ok
    assert rep.n_buy_nodes >= 1      # the Delta = 1/8 purchase at the root
    assert abs(cand.s_hat[0] - tiny.ask[0]) <= 1e-9


def test_forced_sale_hits_the_bid():
    # a large stock-like endowment held long pushes the optimum to sell at
    # the root: the one-sided derivative of 0.5*log(26-4.2d) + 0.5*log(8+1.8d)
    # at d=0 is positive for lambda = 0.05, q = 3
    doc = instance_a()
    doc["endowments"] = [[8.0, 2.0]]
    doc["lambda"] = 0.05
    model, endow, util = build_model(doc)
    primal = primal_solve(model, endow, 2.0, [3.0], util)
    net = primal.portfolio.buys - primal.portfolio.sells
    assert net[0] < -1e-4, "instance should force a root sale"
    dual = extract_dual_from_primal(model, endow, util, primal)
    cand = candidate_shadow(model, dual)
    rep = verify_trade_conditions(model, primal, cand, tol=1e-6)
    assert rep.ok
    assert rep.n_sell_nodes >= 1
    assert cand.s_hat[0] == pytest.approx(model.bid[0], abs=1e-6)
    verdict = check_classic(model, endow, util, primal, dual)
    assert verdict.verdict == "classic"


def test_verdict_classification_on_drifted_pair(setup):
    # a hand-built deflator with strict drift cannot earn the classic label
    model, endow, util = setup
    primal = primal_solve(model, endow, 1.0, [1.0], util)
    dual = extract_dual_from_primal(model, endow, util, primal)
    drifted = DualSolution(
        y=dual.y * 1.25, r=dual.r.copy(),
        deflator=Deflator(y0=dual.deflator.y0 * np.array([1.25, 1.0, 1.0]),
                          y1=dual.deflator.y1 * np.array([1.25, 1.0, 1.0])),
        value=dual.value)
    verdict = check_classic(model, endow, util, primal, drifted)
    assert verdict.y0_martingale_residual > 1e-6
    assert verdict.verdict != "classic"


def test_domination_reports(setup):
    model, endow, util = setup
    rep = check_endowment_domination(model, endow, +1.0)
    assert rep.a == pytest.approx(0.5)
    assert rep.satisfiable
    rep = check_endowment_domination(model, endow, -1.0)
    assert rep.a == pytest.approx(0.0)
    assert not rep.satisfiable
    stocklike = EndowmentSet(payoff=model.ask[model.tree.terminal][None, :])
    rep = check_endowment_domination(model, stocklike, -1.0)
    assert rep.a == pytest.approx(1.0)
    assert rep.satisfiable


def test_marginal_price_report(setup):
    model, endow, util = setup
    rep = marginal_price_report(model, endow, 1.0, [1.0], util)
    assert rep.inside
    assert rep.prices[0] == pytest.approx(0.6, abs=1e-5)
    assert rep.interval[0] == pytest.approx(0.5, abs=1e-8)
    assert rep.interval[1] == pytest.approx(5.0 / 3.0, abs=1e-8)


def test_marginal_price_complete_market(setup):
    model, endow, util = setup
    tiny = model.with_lambda(1e-12)
    rep = marginal_price_report(tiny, endow, 1.0, [0.0], util)
    assert rep.prices[0] == pytest.approx(1.0, abs=1e-4)
    lo, hi = rep.interval
    assert hi - lo <= 1e-6   # replication pins the interval
