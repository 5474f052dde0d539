"""Seeded random instances for the property suites.

Trees are generated frictionless-arbitrage-free: at every non-terminal node
the ask price lies strictly inside the convex hull of its children's prices,
so an equivalent martingale measure exists and the model admits consistent
price systems at every cost level.  That keeps the whole duality machinery
applicable to each generated instance.
"""

from __future__ import annotations

import numpy as np

from .market import EndowmentSet, MarketModel, ScenarioTree, UtilityFunction
from .portfolio import Portfolio, make_portfolio


def random_model(rng: np.random.Generator, max_depth: int = 4, max_branch: int = 3,
                 lam_choices=(0.01, 0.1, 0.3), min_depth: int = 2) -> MarketModel:
    depth = int(rng.integers(min_depth, max_depth + 1))
    parent = [-1]
    prob = [1.0]
    ask = [float(rng.uniform(2.0, 20.0))]
    level = [0]
    for t in range(depth):
        nxt = []
        for v in level:
            k = int(rng.integers(2, max_branch + 1))
            up = float(rng.uniform(1.03, 1.45))
            dn = float(rng.uniform(0.55, 0.97))
            mults = [up, dn] + [float(rng.uniform(0.85, 1.18)) for _ in range(k - 2)]
            p = rng.uniform(0.12, 1.0, size=k)
            p /= p.sum()
            for m, pc in zip(mults, p):
                parent.append(v)
                prob.append(float(pc))
                ask.append(ask[v] * m)
                nxt.append(len(parent) - 1)
        level = nxt
    tree = ScenarioTree.from_arrays(np.array(parent), np.array(prob))
    lam = float(rng.choice(lam_choices))
    return MarketModel(tree=tree, ask=np.array(ask), lam=lam)


def random_claim(rng: np.random.Generator, model: MarketModel,
                 nonneg: bool = False) -> np.ndarray:
    term = model.tree.terminal
    scale = float(np.mean(model.ask[term]))
    base = rng.uniform(0.0, scale, size=term.size)
    if nonneg:
        return base
    return base - rng.uniform(0.0, scale) * rng.uniform(0.0, 1.0, size=term.size)


def random_endowments(rng: np.random.Generator, model: MarketModel,
                      n_claims: int = 1) -> EndowmentSet:
    term = model.tree.terminal
    rows = []
    for _ in range(n_claims):
        if rng.uniform() < 0.5:
            # claim correlated with the stock, scaled into the wealth range
            rows.append(model.ask[term] * rng.uniform(0.05, 0.3)
                        + rng.uniform(0.0, 1.0, size=term.size))
        else:
            rows.append(rng.uniform(0.0, 3.0, size=term.size))
    return EndowmentSet(payoff=np.array(rows))


def random_utility(rng: np.random.Generator) -> UtilityFunction:
    """Log or power with relative risk aversion >= 0.5, so optimal positions
    stay at desk scale even at the smallest friction level."""
    kind = rng.choice(["log", "p05", "pneg"])
    if kind == "log":
        return UtilityFunction.log()
    if kind == "p05":
        return UtilityFunction.power(float(rng.uniform(0.2, 0.5)))
    return UtilityFunction.power(float(rng.uniform(-2.0, -0.3)))


def random_portfolio(rng: np.random.Generator, model: MarketModel,
                     x: float | None = None, trade_scale: float = 0.6) -> Portfolio:
    """Arbitrary self-financing portfolio with terminal liquidation."""
    n = model.tree.n_nodes
    x = float(rng.uniform(0.0, 3.0)) if x is None else x
    mask_b = rng.uniform(size=n) < 0.45
    mask_s = rng.uniform(size=n) < 0.45
    buys = np.where(mask_b, rng.uniform(0.0, trade_scale, size=n), 0.0)
    sells = np.where(mask_s, rng.uniform(0.0, trade_scale, size=n), 0.0)
    return make_portfolio(model, x, buys, sells, liquidate=True)


def random_admissible_portfolio(rng: np.random.Generator, model: MarketModel,
                                x: float = 1.0) -> Portfolio:
    """Node-wise solvent portfolio (V >= 0 everywhere) from capital x > 0."""
    n = model.tree.n_nodes
    scale = x / float(np.max(model.ask))
    buys = np.where(rng.uniform(size=n) < 0.4,
                    rng.uniform(0.0, scale, size=n), 0.0)
    sells = np.where(rng.uniform(size=n) < 0.4,
                     rng.uniform(0.0, scale, size=n), 0.0)
    t = 1.0
    for _ in range(60):
        pf = make_portfolio(model, x, t * buys, t * sells, liquidate=True)
        if np.min(pf.liquidation_values(model)) >= 0.0:
            return pf
        t *= 0.5
    return make_portfolio(model, x, np.zeros(n), np.zeros(n))


def random_interior_position(rng: np.random.Generator, model: MarketModel,
                             endow: EndowmentSet):
    """(x, q) strictly inside K with a comfortably positive wealth floor."""
    from .portfolio import feasible_K

    for _ in range(40):
        q = rng.uniform(0.0, 1.0, size=endow.n_claims)
        if rng.uniform() < 0.3:
            q = q * 0.0
        x = float(rng.uniform(0.5, 3.0))
        status, s = feasible_K(model, endow, x, q)
        if status == "interior" and x - s > 0.3:
            return x, q
    return 1.0, np.zeros(endow.n_claims)
