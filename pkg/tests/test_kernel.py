"""Kernel solvers: LP path following, concave barrier method, KKT checks.

Random LPs are generated with a known optimal vertex so the expected value
is computed independently of the solver; scipy's linprog serves as a second
opinion on a sample of them.
"""

import numpy as np
import pytest
from scipy.optimize import linprog as scipy_linprog

from fdual.kernel import (ConcaveBuilder, LPBuilder, check_kkt, lp_duality_gap,
                          solve_concave, solve_lp)


def test_single_variable_lp_with_dual():
    b = LPBuilder(1, sense="max")
    b.objective([0], [1.0]).bound(0, 0.0)
    b.row([0], [1.0], "<=", 3.0)
    lp = b.build()
    rep = solve_lp(lp)
    assert rep.optimal
    assert rep.x[0] == pytest.approx(3.0, abs=1e-8)
    assert rep.row_duals[0] == pytest.approx(1.0, abs=1e-7)
    assert lp_duality_gap(lp, rep) <= 1e-8 * 4.0
    assert rep.kkt.worst() <= 1e-8


def test_degenerate_optimum():
    b = LPBuilder(2, sense="max")
    b.objective([0, 1], [1.0, 1.0]).bound(0, 0.0).bound(1, 0.0)
    b.row([0, 1], [1.0, 1.0], "<=", 1.0)
    rep = solve_lp(b.build())
    assert rep.optimal
    assert rep.objective == pytest.approx(1.0, abs=1e-8)


def test_infeasible_certificate():
    b = LPBuilder(1, sense="max")
    b.objective([0], [1.0])
    b.row([0], [1.0], "<=", 1.0)
    b.row([0], [1.0], ">=", 2.0)
    rep = solve_lp(b.build())
    assert rep.status == "infeasible"
    assert rep.certificate is not None


def test_unbounded_ray():
    b = LPBuilder(2, sense="max")
    b.objective([0], [1.0]).bound(0, 0.0).bound(1, 0.0)
    b.row([1], [1.0], "<=", 5.0)
    rep = solve_lp(b.build())
    assert rep.status == "unbounded"


def test_free_and_mirrored_variables():
    # min x + y with x free (x = 2 forced by equality), y <= 4 from above
    b = LPBuilder(2, sense="min")
    b.objective([0, 1], [1.0, -1.0])
    b.bound(1, -np.inf, 4.0)
    b.row([0], [1.0], "=", 2.0)
    rep = solve_lp(b.build())
    assert rep.optimal
    assert rep.x[0] == pytest.approx(2.0, abs=1e-7)
    assert rep.x[1] == pytest.approx(4.0, abs=1e-7)


def _random_lp_with_known_optimum(rng, n, m):
    """Construct (lp, x*, value) from a complementary primal-dual pair."""
    A = rng.normal(size=(m, n))
    basic = rng.permutation(n)[: min(m, n)]
    xstar = np.zeros(n)
    xstar[basic] = rng.uniform(0.5, 2.0, size=basic.size)
    ystar = rng.normal(size=m)
    zstar = rng.uniform(0.1, 1.0, size=n)
    zstar[basic] = 0.0
    b = A @ xstar
    c = A.T @ ystar + zstar
    builder = LPBuilder(n, sense="min")
    builder.objective(np.arange(n), c)
    for j in range(n):
        builder.bound(j, 0.0)
    for i in range(m):
        builder.row(np.arange(n), A[i], "=", b[i])
    return builder.build(), xstar, float(c @ xstar)


def test_random_lps_recover_known_objective():
    rng = np.random.default_rng(20240211)
    for k in range(25):
        n = int(rng.integers(3, 31))
        m = int(rng.integers(2, min(n, 30) + 1))
        lp, xstar, value = _random_lp_with_known_optimum(rng, n, m)
        rep = solve_lp(lp, tol=1e-9)
        assert rep.optimal, f"case {k}: {rep.status}"
        assert rep.objective == pytest.approx(value, abs=1e-8 * (1 + abs(value)))
        assert lp_duality_gap(lp, rep) <= 1e-7 * (1 + abs(value))


def test_against_scipy_on_random_inequality_lps():
    rng = np.random.default_rng(7)
    for _ in range(15):
        n = int(rng.integers(2, 12))
        m = int(rng.integers(1, 10))
        A = rng.normal(size=(m, n))
        b = rng.uniform(0.5, 2.0, size=m)
        c = rng.normal(size=n)
        builder = LPBuilder(n, sense="min")
        builder.objective(np.arange(n), c)
        for j in range(n):
            builder.bound(j, 0.0, 10.0)
        for i in range(m):
            builder.row(np.arange(n), A[i], "<=", b[i])
        rep = solve_lp(builder.build())
        ref = scipy_linprog(c, A_ub=A, b_ub=b, bounds=[(0, 10)] * n, method="highs")
        assert rep.optimal and ref.status == 0
        assert rep.objective == pytest.approx(ref.fun, abs=1e-7 * (1 + abs(ref.fun)))


def test_lp_determinism():
    rng = np.random.default_rng(3)
    lp, _, _ = _random_lp_with_known_optimum(rng, 12, 6)
    r1 = solve_lp(lp)
    r2 = solve_lp(lp)
    assert r1.x.tobytes() == r2.x.tobytes()
    assert r1.row_duals.tobytes() == r2.row_duals.tobytes()
    assert r1.objective == r2.objective


# ---------------------------------------------------------------------------
# Concave solver
# ---------------------------------------------------------------------------

def _two_state_log_problem():
    b = ConcaveBuilder(1)
    b.log_term(0.5, [0], [4.0], offset=1.0)
    b.log_term(0.5, [0], [-2.0], offset=1.0)
    return b.build()


def test_concave_closed_form_foc():
    # first-order condition 4(1-2d) = 2(1+4d) gives d = 1/8
    rep = solve_concave(_two_state_log_problem())
    assert rep.optimal
    assert rep.x[0] == pytest.approx(0.125, abs=1e-5)
    assert rep.objective == pytest.approx(0.5 * np.log(9.0 / 8.0), abs=1e-7)
    assert rep.kkt.worst() <= 1e-8


def test_concave_boundary_optimum_multiplier():
    b = ConcaveBuilder(1)
    b.log_term(1.0, [0], [1.0])
    b.row([0], [1.0], "<=", 1.0)
    rep = solve_concave(b.build())
    assert rep.optimal
    assert rep.x[0] == pytest.approx(1.0, abs=1e-7)
    assert rep.objective == pytest.approx(0.0, abs=1e-8)
    assert rep.row_duals[0] == pytest.approx(1.0, abs=1e-6)


def test_concave_power_terms():
    # max x^0.5/0.5 - x -> x = 1, value 1
    b = ConcaveBuilder(1)
    b.power_term(1.0, 0.5, [0], [1.0])
    b.linear_term(1.0, [0], [-1.0])
    rep = solve_concave(b.build())
    assert rep.optimal
    assert rep.x[0] == pytest.approx(1.0, abs=1e-5)
    assert rep.objective == pytest.approx(1.0, abs=1e-7)


def test_concave_negative_power():
    # max -1/x - x/2: stationarity x^-2 = 1/2, x = sqrt(2)
    b = ConcaveBuilder(1)
    b.power_term(1.0, -1.0, [0], [1.0])
    b.linear_term(1.0, [0], [-0.5])
    rep = solve_concave(b.build())
    assert rep.optimal
    assert rep.x[0] == pytest.approx(np.sqrt(2.0), abs=1e-5)


def test_concave_empty_interior_reports_slack():
    b = ConcaveBuilder(1)
    b.log_term(1.0, [0], [1.0])
    b.row([0], [1.0], "<=", 0.0)
    rep = solve_concave(b.build())
    assert rep.status == "empty-interior"
    assert "margin" in rep.message


def test_concave_infeasible():
    b = ConcaveBuilder(1)
    b.log_term(1.0, [0], [1.0])
    b.row([0], [1.0], "=", 1.0)
    b.row([0], [1.0], "=", 2.0)
    rep = solve_concave(b.build())
    assert rep.status == "infeasible"


def test_concave_with_equalities_and_start():
    # max log x + log y s.t. x + y = 2 -> x = y = 1
    b = ConcaveBuilder(2)
    b.log_term(1.0, [0], [1.0]).log_term(1.0, [1], [1.0])
    b.row([0, 1], [1.0, 1.0], "=", 2.0)
    prog = b.build()
    r1 = solve_concave(prog)
    r2 = solve_concave(prog, start=np.array([0.3, 1.7]))
    assert r1.optimal and r2.optimal
    assert r1.x[0] == pytest.approx(1.0, abs=1e-6)
    assert np.max(np.abs(r1.x - r2.x)) <= 1e-6


def test_concave_determinism():
    prog = _two_state_log_problem()
    r1, r2 = solve_concave(prog), solve_concave(prog)
    assert r1.x.tobytes() == r2.x.tobytes()
    assert r1.objective == r2.objective


# ---------------------------------------------------------------------------
# KKT residual checks
# ---------------------------------------------------------------------------

def test_kkt_at_closed_form_optimum():
    prog = _two_state_log_problem()
    res = check_kkt(prog, np.array([0.125]), np.zeros(0))
    assert res.stationarity <= 1e-9


def test_kkt_perturbed_point_flags_stationarity():
    prog = _two_state_log_problem()
    res = check_kkt(prog, np.array([0.2]), np.zeros(0))
    assert res.stationarity > 0.1


def test_kkt_inactive_constraint_zero_complementarity():
    b = ConcaveBuilder(1)
    b.log_term(1.0, [0], [1.0])
    b.row([0], [1.0], "<=", 5.0)
    prog = b.build()
    res = check_kkt(prog, np.array([1.0]), np.array([0.0]))
    assert res.complementarity == 0.0
    assert res.primal_feasibility == 0.0
