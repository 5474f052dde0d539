"""Market data model: construction, validation, utilities, liquidation."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fdual.market import (EndowmentSet, InstanceError, MarketModel,
                          ScenarioTree, UtilityFunction, build_model,
                          instance_a, liquidation_value)


def test_instance_a_builds():
    model, endow, util = build_model(instance_a())
    assert model.tree.n_nodes == 3
    assert model.tree.horizon == 1
    assert list(model.tree.terminal) == [1, 2]
    assert model.lam == 0.25
    assert np.allclose(model.bid, [3.0, 6.0, 1.5])
    assert endow.n_claims == 1
    assert np.allclose(endow.payoff, [[3.0, 0.0]])
    assert util.kind == "log"


def test_lambda_out_of_range_rejected():
    doc = instance_a()
    doc["lambda"] = 1.2
    with pytest.raises(InstanceError, match="lambda out of"):
        build_model(doc)


def test_bad_probability_sum_names_node():
    doc = instance_a()
    doc["tree"][1]["p"] = 0.6
    doc["tree"][2]["p"] = 0.5
    with pytest.raises(InstanceError, match="node 0"):
        build_model(doc)


def test_dangling_parent_rejected():
    doc = instance_a()
    doc["tree"][2]["parent"] = 7
    with pytest.raises(InstanceError, match="dangling parent"):
        build_model(doc)


def test_parent_must_precede_child():
    doc = {
        "tree": [
            {"id": 0, "parent": None, "p": 1.0, "S": 4.0},
            {"id": 1, "parent": 2, "p": 0.5, "S": 8.0},
            {"id": 2, "parent": 0, "p": 0.5, "S": 2.0},
        ],
        "lambda": 0.1, "endowments": [], "utility": {"kind": "log"},
    }
    with pytest.raises(InstanceError):
        build_model(doc)


def test_uneven_terminal_depth_rejected():
    doc = {
        "tree": [
            {"id": 0, "parent": None, "p": 1.0, "S": 4.0},
            {"id": 1, "parent": 0, "p": 0.5, "S": 8.0},
            {"id": 2, "parent": 0, "p": 0.5, "S": 2.0},
            {"id": 3, "parent": 1, "p": 1.0, "S": 9.0},
        ],
        "lambda": 0.1, "endowments": [], "utility": {"kind": "log"},
    }
    with pytest.raises(InstanceError, match="terminal node"):
        build_model(doc)


def test_tree_probabilities_and_paths():
    model, _, _ = build_model(instance_a())
    tree = model.tree
    assert np.allclose(tree.prob(), [1.0, 0.5, 0.5])
    assert tree.path(1) == [0, 1]
    cond = tree.conditional_expectation(np.array([3.0, 0.0]))
    assert cond[0] == pytest.approx(1.5)


# ---------------------------------------------------------------------------
# Utility functions
# ---------------------------------------------------------------------------

def test_log_utility_identities():
    u = UtilityFunction.log()
    assert u.value(1.0) == 0.0
    assert u.marginal(1.0) == 1.0
    assert u.marginal_inverse(0.25) == pytest.approx(4.0)
    assert u.conjugate(1.0) == pytest.approx(-1.0)
    assert u.conjugate(0.5) == pytest.approx(-np.log(0.5) - 1.0)


def test_power_utility_closed_forms():
    # closed forms U = x**p/p and U' = x**(p-1); at p=0.5, x=4 these give
    # U=4 and U'=0.5
    u = UtilityFunction.power(0.5)
    assert u.value(4.0) == pytest.approx(4.0)
    assert u.marginal(4.0) == pytest.approx(0.5)
    assert u.marginal_inverse(0.25) == pytest.approx(16.0)


def test_power_conjugate_against_numeric_sup():
    # independent oracle: maximize U(x) - x*y on a log grid, then refine by
    # golden-section around the best cell
    u = UtilityFunction.power(0.5)
    y = 1.0
    grid = np.geomspace(1e-6, 1e6, 4001)
    vals = u.value(grid) - grid * y
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    for _ in range(200):
        c, d = b - phi * (b - a), a + phi * (b - a)
        if u.value(c) - c * y >= u.value(d) - d * y:
            b = d
        else:
            a = c
    xstar = 0.5 * (a + b)
    numeric = u.value(xstar) - xstar * y
    assert u.conjugate(y) == pytest.approx(numeric, abs=1e-10)
    assert u.conjugate(y) == pytest.approx(1.0)


def test_domain_violations_raise():
    u = UtilityFunction.log()
    with pytest.raises(ValueError):
        u.value(0.0)
    with pytest.raises(ValueError):
        u.conjugate(-1.0)
    with pytest.raises(InstanceError):
        UtilityFunction.power(1.5)
    with pytest.raises(InstanceError):
        UtilityFunction("power", 0.0)


@pytest.mark.parametrize("util", [UtilityFunction.log(), UtilityFunction.power(0.5),
                                  UtilityFunction.power(-1.3), UtilityFunction.power(0.9)])
def test_fenchel_inequality_and_touch(util):
    xs = np.geomspace(1e-3, 1e3, 25)
    ys = np.geomspace(1e-3, 1e3, 25)
    for y in ys:
        lhs = util.value(xs)
        rhs = util.conjugate(y) + xs * y
        assert np.all(lhs <= rhs + 1e-9)
        xstar = util.marginal_inverse(y)
        scale = 1.0 + abs(util.conjugate(y)) + xstar * y
        assert abs(util.value(xstar) - (util.conjugate(y) + xstar * y)) <= 1e-10 * scale


@pytest.mark.parametrize("util", [UtilityFunction.log(), UtilityFunction.power(0.5),
                                  UtilityFunction.power(-2.0)])
def test_asymptotic_elasticity_below_one(util):
    assert util.asymptotic_elasticity_bound() < 1.0


# ---------------------------------------------------------------------------
# Liquidation value
# ---------------------------------------------------------------------------

@pytest.fixture
def model_a():
    return build_model(instance_a())[0]


def test_liquidation_examples(model_a):
    m = MarketModel(tree=model_a.tree, ask=np.array([5.0, 8.0, 2.0]), lam=0.1)
    assert liquidation_value(m, (10.0, 2.0), 0) == pytest.approx(19.0)
    assert liquidation_value(model_a, (10.0, -2.0), 0) == pytest.approx(2.0)
    assert liquidation_value(model_a, (3.25, 0.0), 2) == pytest.approx(3.25)


@given(a=st.floats(-50, 50), b=st.floats(-50, 50), c=st.floats(-50, 50),
       d=st.floats(-50, 50), t=st.floats(0.01, 0.99), cash=st.floats(-50, 50))
def test_liquidation_concave_homogeneous_translation(a, b, c, d, t, cash):
    model, _, _ = build_model(instance_a())
    for node in range(3):
        va = liquidation_value(model, (a, b), node)
        vb = liquidation_value(model, (c, d), node)
        mix = liquidation_value(model, (t * a + (1 - t) * c, t * b + (1 - t) * d), node)
        assert mix >= t * va + (1 - t) * vb - 1e-9
        assert liquidation_value(model, (2.0 * a, 2.0 * b), node) == pytest.approx(2.0 * va)
        assert liquidation_value(model, (a + cash, b), node) == pytest.approx(va + cash)


def test_endowment_combination():
    endow = EndowmentSet(payoff=np.array([[3.0, 0.0], [1.0, 2.0]]))
    assert np.allclose(endow.combine([1.0, -1.0]), [2.0, -2.0])
    with pytest.raises(InstanceError):
        endow.combine([1.0])
    with pytest.raises(InstanceError):
        EndowmentSet(payoff=np.array([[-1.0, 0.0]]))
