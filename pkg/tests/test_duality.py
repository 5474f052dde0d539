"""Primal/dual solves, optimizer extraction, conjugacy, bipolar checks."""

import numpy as np
import pytest

from fdual.cps import find_cps, price_interval
from fdual.duality import (Deflator, DualPointError, OutsideKError,
                           complementary_slackness_residual, conjugacy_check,
                           deflator_from_density, dual_solve, duality_gap,
                           extract_dual_from_primal,
                           first_order_identity_residual, l_membership,
                           primal_solve, sample_deflator_vertices,
                           sample_deflators, subdifferential, verify_bipolar)
from fdual.market import build_model, instance_a
from fdual.randomgen import (random_admissible_portfolio, random_endowments,
                             random_interior_position, random_model,
                             random_utility)


@pytest.fixture(scope="module")
def setup():
    model, endow, util = build_model(instance_a())
    return model, endow, util


def test_primal_no_trade_without_endowment(setup):
    model, endow, util = setup
    sol = primal_solve(model, endow, 1.0, [0.0], util)
    assert sol.value == pytest.approx(0.0, abs=1e-6)
    assert np.max(sol.portfolio.buys + sol.portfolio.sells) <= 1e-6
    assert sol.kkt_worst <= 1e-7


def test_primal_instance_a_with_claim(setup):
    model, endow, util = setup
    sol = primal_solve(model, endow, 1.0, [1.0], util)
    assert sol.value == pytest.approx(np.log(2.0), abs=1e-6)
    assert np.allclose(sol.wealth, [4.0, 1.0], atol=1e-5)


def test_primal_frictionless_binomial(setup):
    model, endow, util = setup
    tiny = model.with_lambda(1e-12)
    sol = primal_solve(tiny, endow, 1.0, [0.0], util)
    assert sol.value == pytest.approx(0.5 * np.log(9.0 / 8.0), abs=1e-6)
    net = sol.portfolio.buys[0] - sol.portfolio.sells[0]
    assert net == pytest.approx(0.125, abs=1e-4)


def test_primal_outside_k_raises(setup):
    model, endow, util = setup
    with pytest.raises(OutsideKError):
        primal_solve(model, endow, -1.0, [1.0], util)


def test_extract_dual_instance_a(setup):
    model, endow, util = setup
    primal = primal_solve(model, endow, 1.0, [1.0], util)
    dual = extract_dual_from_primal(model, endow, util, primal)
    assert dual.y == pytest.approx(0.625, abs=1e-6)
    assert dual.r[0] == pytest.approx(0.375, abs=1e-6)
    term = model.tree.terminal
    assert np.allclose(dual.deflator.y0[term], [0.25, 1.0], atol=1e-5)
    assert dual.deflator.worst_residual(model) <= 1e-7
    assert duality_gap(primal, dual) <= 1e-5
    assert first_order_identity_residual(model, util, primal, dual) <= 1e-6
    assert complementary_slackness_residual(model, endow, primal, dual) <= 1e-6


def test_extract_dual_frictionless(setup):
    model, endow, util = setup
    tiny = model.with_lambda(1e-12)
    primal = primal_solve(tiny, endow, 1.0, [0.0], util)
    dual = extract_dual_from_primal(tiny, endow, util, primal)
    term = model.tree.terminal
    assert np.allclose(dual.deflator.y0[term], [2.0 / 3.0, 4.0 / 3.0], atol=1e-4)
    assert dual.y == pytest.approx(1.0, abs=1e-6)
    # martingale check E[Y0_T S_T] = S_0
    prob = model.tree.prob()[term]
    assert float(prob @ (dual.deflator.y0[term] * model.ask[term])) == \
        pytest.approx(4.0, abs=1e-3)


def test_dual_solve_instance_a(setup):
    model, endow, util = setup
    dual = dual_solve(model, endow, 0.625, [0.375], util)
    assert dual.value == pytest.approx(0.5 * np.log(4.0) - 1.0, abs=1e-6)
    term = model.tree.terminal
    assert np.allclose(dual.deflator.y0[term], [0.25, 1.0], atol=1e-5)
    # v + xy + q.r = u at the conjugate pair
    assert dual.value + 1.0 * 0.625 + 1.0 * 0.375 == pytest.approx(np.log(2.0), abs=1e-5)


def test_dual_cone_scaling(setup):
    model, endow, util = setup
    base = dual_solve(model, endow, 0.625, [0.375], util)
    k = 2.0
    scaled = dual_solve(model, endow, k * 0.625, [k * 0.375], util)
    # log conjugate: Utilde(k y) = Utilde(y) - log k
    assert scaled.value == pytest.approx(base.value - np.log(k), abs=1e-6)
    term = model.tree.terminal
    assert np.allclose(scaled.deflator.y0[term], k * base.deflator.y0[term], atol=1e-4)


def test_dual_point_outside_l(setup):
    model, endow, util = setup
    lo, hi = price_interval(model, endow, [1.0])
    with pytest.raises(DualPointError) as err:
        dual_solve(model, endow, 1.0, [hi + 0.5], util)
    assert err.value.kind == "outside-L"
    assert l_membership(model, endow, 1.0, [0.6]) == "interior"
    assert l_membership(model, endow, 1.0, [hi + 0.5]) == "outside"
    assert l_membership(model, endow, -1.0, [0.0]) == "outside"


def test_conjugacy_small_grid(setup):
    model, endow, util = setup
    xq = [(1.0, [1.0]), (1.5, [0.5])]
    yr = [(0.625, [0.375]), (0.8, [0.6]), (1.0, [0.8])]
    rep = conjugacy_check(model, endow, util, xq, yr, tol=1e-5)
    assert rep.weak_duality_worst <= 1e-8
    assert all(abs(g) <= 1e-5 for g in rep.attainment_gaps)
    assert rep.ok


def test_subdifferential_instance_a(setup):
    model, endow, util = setup
    rep = subdifferential(model, endow, 1.0, [1.0], util)
    assert rep.y == pytest.approx(0.625, abs=1e-5)
    assert rep.r[0] == pytest.approx(0.375, abs=1e-5)
    assert rep.worst_violation <= 1e-6
    assert rep.membership == "interior"
    lo, hi = price_interval(model, endow, [1.0])
    assert lo - 1e-9 <= rep.marginal_prices[0] <= hi + 1e-9
    assert rep.marginal_prices[0] == pytest.approx(0.6, abs=1e-5)


def test_subdifferential_frictionless_log_slope(setup):
    # u(x) = log x + c for a frictionless log investor: y = u'(x) = 1/x
    model, endow, util = setup
    tiny = model.with_lambda(1e-12)
    rep = subdifferential(tiny, endow, 2.0, [0.0], util)
    assert rep.y == pytest.approx(0.5, abs=1e-4)


def test_verify_bipolar(setup):
    model, endow, util = setup
    rng = np.random.default_rng(17)
    rep = verify_bipolar(model, endow, 1.0, [1.0], util, rng)
    assert rep.ok
    assert all(m["vertex_ok"] and m["hedge_ok"] for m in rep.members)
    assert all(not m["vertex_ok"] and not m["hedge_ok"] for m in rep.non_members)


def test_deflator_contains_scaled_densities(setup):
    model, endow, util = setup
    rng = np.random.default_rng(3)
    from fdual.cps import sample_cps_vertices
    for cps in sample_cps_vertices(model, rng, 4):
        for y in (1.0, 0.5, 3.0):
            defl = deflator_from_density(model, cps, y)
            assert defl.worst_residual(model) <= 1e-9


def test_deflator_samples_and_drift_pairing():
    rng = np.random.default_rng(12)
    for _ in range(4):
        model = random_model(rng, max_depth=3)
        for defl in sample_deflators(model, rng, 3):
            assert defl.worst_residual(model) <= 1e-12
            for _ in range(3):
                pf = random_admissible_portfolio(rng, model)
                assert defl.drift_pairing(model, pf) <= 1e-9
        # LP vertices carry solver tolerance but live in the cone too
        for defl in sample_deflator_vertices(model, rng, 1):
            assert defl.worst_residual(model) <= 1e-7


def test_lambda_monotonicity(setup):
    model, endow, util = setup
    values = []
    for lam in (0.05, 0.1, 0.2, 0.3, 0.4):
        sol = primal_solve(model.with_lambda(lam), endow, 1.0, [1.0], util)
        values.append(sol.value)
    for a, b in zip(values, values[1:]):
        assert b <= a + 1e-7


def test_terminal_uniqueness_across_starts():
    rng = np.random.default_rng(31)
    for _ in range(3):
        model = random_model(rng, max_depth=3)
        endow = random_endowments(rng, model)
        util = random_utility(rng)
        x, q = random_interior_position(rng, model, endow)
        a = primal_solve(model, endow, x, q, util, seed=11)
        b = primal_solve(model, endow, x, q, util, seed=77)
        assert np.max(np.abs(a.wealth - b.wealth)) <= 1e-6
        da = extract_dual_from_primal(model, endow, util, a)
        db = extract_dual_from_primal(model, endow, util, b)
        term = model.tree.terminal
        assert np.max(np.abs(da.deflator.y0[term] - db.deflator.y0[term])) <= 1e-6


def test_random_duality_relations():
    rng = np.random.default_rng(2024)
    for _ in range(5):
        model = random_model(rng, max_depth=3)
        endow = random_endowments(rng, model)
        util = random_utility(rng)
        x, q = random_interior_position(rng, model, endow)
        primal = primal_solve(model, endow, x, q, util)
        dual = extract_dual_from_primal(model, endow, util, primal)
        assert duality_gap(primal, dual) <= 1e-5
        assert first_order_identity_residual(model, util, primal, dual) <= 1e-6
        assert complementary_slackness_residual(model, endow, primal, dual) <= 1e-6
        assert dual.deflator.worst_residual(model) <= 1e-7
        solved = dual_solve(model, endow, dual.y, dual.r, util)
        assert duality_gap(primal, solved) <= 1e-5
