"""Self-financing portfolios, acceptability, superhedging.

Trades happen at nodes: buying at the ask, selling at the bid.  Holdings
``(phi0, phi1)`` are the positions after trading at a node, so the paper's
left/right jump bookkeeping collapses to one trade per node.  Self-financing
is stored as an equality with an explicit nonnegative consumption slack,
which keeps hedges auditable and the buy/sell decomposition explicit.

The superhedging theorem is two LPs that are exact duals of each other: the
price side maximizes E^Q[g] over the closed CPS polytope, the hedge side
minimizes initial capital over self-financing trade plans dominating the
claim, and the engine asserts their agreement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cps import (ConsistentPriceSystem, CPSPolytope, NoCPSError,
                  extremal_expectation)
from .kernel import INFEASIBLE, LPBuilder, solve_lp, solve_lp_robust
from .market import MarketModel, liquidation_value

FEASIBLE_K_TOL = 1e-9
HEDGE_MATCH_TOL = 1e-7


class SolverFailure(RuntimeError):
    """A kernel solve did not reach the optimal status."""


@dataclass
class Portfolio:
    """Holdings after trading at each node, with the trade decomposition."""

    x0: float
    buys: np.ndarray      # shares bought per node, >= 0
    sells: np.ndarray     # shares sold per node, >= 0
    phi0: np.ndarray      # bond holding after the node's trade
    phi1: np.ndarray      # stock holding after the node's trade
    slack: np.ndarray     # money discarded at the node, >= 0
    liquidated: bool = True

    def liquidation_values(self, model: MarketModel) -> np.ndarray:
        out = np.empty(model.tree.n_nodes)
        for v in range(model.tree.n_nodes):
            out[v] = liquidation_value(model, (self.phi0[v], self.phi1[v]), v)
        return out

    def terminal_value(self, model: MarketModel) -> np.ndarray:
        """V_T on terminal nodes in id order."""
        return self.liquidation_values(model)[model.tree.terminal]

    def marked_values(self, model: MarketModel, s_tilde: np.ndarray) -> np.ndarray:
        """phi0 + phi1 * s_tilde per node (position marked to a CPS price)."""
        return self.phi0 + self.phi1 * np.asarray(s_tilde, dtype=float)

    def self_financing_residual(self, model: MarketModel) -> float:
        tree, ask, bid = model.tree, model.ask, model.bid
        worst = 0.0
        for v in range(tree.n_nodes):
            prev0 = self.x0 if v == 0 else self.phi0[tree.parent[v]]
            prev1 = 0.0 if v == 0 else self.phi1[tree.parent[v]]
            cash = prev0 - ask[v] * self.buys[v] + bid[v] * self.sells[v] - self.slack[v]
            worst = max(worst, abs(self.phi0[v] - cash),
                        abs(self.phi1[v] - (prev1 + self.buys[v] - self.sells[v])))
        worst = max(worst, float(-np.min(self.slack, initial=0.0)),
                    float(-np.min(self.buys, initial=0.0)),
                    float(-np.min(self.sells, initial=0.0)))
        return worst


def make_portfolio(model: MarketModel, x: float, buys, sells,
                   liquidate: bool = True) -> Portfolio:
    """Apply per-node trades with zero consumption slack.

    With ``liquidate`` (the default, matching the terminal-liquidation
    convention of the primal space) the net stock position is closed by an
    extra trade at each terminal node, on top of any trade supplied there.
    """
    tree = model.tree
    n = tree.n_nodes
    buys = np.asarray(buys, dtype=float).copy()
    sells = np.asarray(sells, dtype=float).copy()
    if buys.shape != (n,) or sells.shape != (n,):
        raise ValueError("trades must list one buy and one sell per node")
    if buys.min(initial=0.0) < 0.0 or sells.min(initial=0.0) < 0.0:
        raise ValueError("trade legs must be nonnegative")
    phi0 = np.empty(n)
    phi1 = np.empty(n)
    for v in range(n):
        prev0 = x if v == 0 else phi0[tree.parent[v]]
        prev1 = 0.0 if v == 0 else phi1[tree.parent[v]]
        if liquidate and not tree.children[v]:
            net = prev1 + buys[v] - sells[v]
            if net > 0.0:
                sells[v] += net
            else:
                buys[v] += -net
        phi0[v] = prev0 - model.ask[v] * buys[v] + model.bid[v] * sells[v]
        phi1[v] = prev1 + buys[v] - sells[v]
    return Portfolio(x0=float(x), buys=buys, sells=sells, phi0=phi0, phi1=phi1,
                     slack=np.zeros(n), liquidated=liquidate)


def portfolio_from_net_trades(model: MarketModel, x: float, net,
                              liquidate: bool = True) -> Portfolio:
    net = np.asarray(net, dtype=float)
    return make_portfolio(model, x, np.maximum(net, 0.0), np.maximum(-net, 0.0),
                          liquidate=liquidate)


# ---------------------------------------------------------------------------
# Acceptability
# ---------------------------------------------------------------------------

@dataclass
class AcceptabilityBound:
    """Q-martingale X with X(root) = a dominating -V node-wise, X >= 0."""

    a: float
    values: np.ndarray
    cps: ConsistentPriceSystem

    def residuals(self, model: MarketModel, portfolio: Portfolio) -> dict:
        tree = model.tree
        mart = 0.0
        for v in tree.nonterminal:
            mart = max(mart, abs(self.values[v] - sum(
                self.cps.q_cond[c] * self.values[c] for c in tree.children[v])))
        v_liq = portfolio.liquidation_values(model)
        return {
            "root": abs(self.values[0] - self.a),
            "martingale": mart,
            "nonneg": max(0.0, -float(self.values.min())),
            "dominance": max(0.0, float(np.max(-v_liq - self.values))),
        }


def acceptability_threshold(model: MarketModel, portfolio: Portfolio) -> float:
    """sup over the CPS polytope of E^Q[-V_T] (terminal reduction)."""
    v_t = portfolio.terminal_value(model)
    val, _ = extremal_expectation(model, -v_t, "max")
    return val


def acceptability_threshold_nonneg(model: MarketModel, portfolio: Portfolio) -> float:
    """sup over the CPS polytope of E^Q[(-V_T)^+]; the smallest capital that
    funds a nonnegative dominating wealth process in every CPS market."""
    v_t = portfolio.terminal_value(model)
    val, _ = extremal_expectation(model, np.maximum(-v_t, 0.0), "max")
    return val


def node_dominating_martingale(model: MarketModel, portfolio: Portfolio,
                               cps: ConsistentPriceSystem, a: float):
    """Q-martingale X from a with X >= (-V)^+ at every node, or None.

    Feasibility LP over terminal values X_T: conditional expectations must
    dominate the node-wise shortfall.  Exists whenever a is at least the
    terminal superhedging threshold, which is the terminal-check reduction in
    action: the terminal quantity already funds node-wise dominance.
    """
    tree = model.tree
    q_prob = cps.q_prob(tree)
    term = tree.terminal
    shortfall = np.maximum(-portfolio.liquidation_values(model), 0.0)
    nt = term.size
    b = LPBuilder(nt, sense="max")
    under: dict[int, list[int]] = {v: [] for v in range(tree.n_nodes)}
    for k, w in enumerate(term):
        v = int(w)
        while True:
            under[v].append(k)
            if tree.parent[v] == -1:
                break
            v = int(tree.parent[v])
    for k, w in enumerate(term):
        b.bound(k, shortfall[w])
    masses = q_prob[term]
    b.row(np.arange(nt), masses, "=", a)
    for v in range(tree.n_nodes):
        if not tree.children[v] or q_prob[v] <= 0.0:
            continue
        ks = under[v]
        b.row(ks, masses[ks] / q_prob[v], ">=", shortfall[v])
    rep = solve_lp(b.build(), tol=1e-10, max_iter=300)
    if rep.status == INFEASIBLE or rep.x is None:
        return None
    x_t = rep.x
    values = cps.conditional_expectation(tree, x_t)
    values[term] = x_t
    return AcceptabilityBound(a=float(a), values=values, cps=cps)


def check_acceptable(model: MarketModel, portfolio: Portfolio, a: float,
                     tol: float = 1e-9):
    """Terminal acceptability check plus a dominating-martingale witness.

    True iff a >= sup_Q E^Q[-V_T] over the whole polytope.  The witness is
    constructed under a strictly positive CPS when a also covers the
    nonnegative threshold; otherwise the bool stands alone.
    """
    if a < 0.0:
        return False, None
    threshold = acceptability_threshold(model, portfolio)
    ok = threshold <= a + tol
    if not ok:
        return False, None
    from .cps import find_cps
    witness = None
    a_plus = acceptability_threshold_nonneg(model, portfolio)
    if a >= a_plus - tol:
        cps = find_cps(model)
        witness = node_dominating_martingale(model, portfolio, cps, max(a, a_plus))
    return True, witness


# ---------------------------------------------------------------------------
# Superhedging
# ---------------------------------------------------------------------------

@dataclass
class SuperhedgeResult:
    price: float                     # max over the polytope of E^Q[g]
    hedge_capital: float             # min x with V_T >= g
    hedge: Portfolio
    witness: ConsistentPriceSystem   # attaining (Q, S_tilde), possibly boundary
    gap: float


def _hedge_lp(model: MarketModel, claim: np.ndarray):
    tree = model.tree
    n = tree.n_nodes
    term = tree.terminal
    nv = 1 + 2 * n
    x_col = 0
    buy = lambda v: 1 + v
    sell = lambda v: 1 + n + v
    b = LPBuilder(nv, sense="min")
    b.objective([x_col], [1.0])
    for v in range(n):
        b.bound(buy(v), 0.0)
        b.bound(sell(v), 0.0)
    for k, w in enumerate(term):
        path = tree.path(int(w))
        cols = [buy(v) for v in path] + [sell(v) for v in path]
        vals = [1.0] * len(path) + [-1.0] * len(path)
        b.row(cols, vals, "=", 0.0)
        wcols = [x_col] + [buy(v) for v in path] + [sell(v) for v in path]
        wvals = [1.0] + [-model.ask[v] for v in path] + [model.bid[v] for v in path]
        b.row(wcols, wvals, ">=", float(claim[k]))
    return b.build(), buy, sell


def superhedge_price(model: MarketModel, claim) -> SuperhedgeResult:
    """Smallest initial capital dominating the claim, with the hedge.

    Solves both sides of the superhedging theorem and asserts agreement:
    sup_Q E^Q[g] from the CPS polytope and the minimal-capital trade plan.
    """
    claim = np.asarray(claim, dtype=float)
    price, witness = extremal_expectation(model, claim, "max")
    lp, buy, sell = _hedge_lp(model, claim)
    rep, ok = solve_lp_robust(lp, tol=1e-10, max_iter=300)
    if not ok:
        raise SolverFailure(f"hedge construction LP: {rep.status}")
    n = model.tree.n_nodes
    buys = np.maximum(rep.x[1:1 + n], 0.0)
    sells = np.maximum(rep.x[1 + n:1 + 2 * n], 0.0)
    capital = float(rep.x[0])
    hedge = make_portfolio(model, capital, buys, sells, liquidate=True)
    gap = abs(capital - price)
    if gap > HEDGE_MATCH_TOL * (1.0 + abs(price)):
        raise SolverFailure(
            f"superhedging duality violated: lp={price:.12g} hedge={capital:.12g}")
    return SuperhedgeResult(price=price, hedge_capital=capital, hedge=hedge,
                            witness=witness, gap=gap)


def feasible_K(model: MarketModel, endowments, x: float, q):
    """Locate (x, q) relative to K: interior, boundary or outside.

    The budget set is nonempty iff x covers the superhedging price of the
    liability -q.E_T; the boundary band is FEASIBLE_K_TOL wide.
    """
    claim = -endowments.combine(q)
    s, _ = extremal_expectation(model, claim, "max")
    if x > s + FEASIBLE_K_TOL:
        status = "interior"
    elif x >= s - FEASIBLE_K_TOL:
        status = "boundary"
    else:
        status = "outside"
    return status, s
