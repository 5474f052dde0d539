"""Utility maximization with random endowments and its deflator dual.

Primal: maximize expected utility of terminal wealth over self-financing
trade plans with forced terminal liquidation, wealth W_T = V_T + q.E_T kept
strictly positive.  Dual: minimize expected conjugate utility of Y0_T over
the discrete supermartingale-deflator cone with the root pinned at y and
endowment pairing rows E[Y0_T E^i_T] = r_i.

The deflator cone is the node-by-node polar transcription of the
supermartingale requirement: at every non-terminal node the one-step drift
of (Y0, Y1) must pair nonpositively with every solvent position, i.e. lie in
the polar of the cone spanned by (1,0), (-bid,1) and (ask,-1).  Expanding
the polar gives three linear rows per node; martingale pairs (scaled CPS
densities) satisfy them with zero slack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cps import (ConsistentPriceSystem, CPSPolytope, POSITIVITY_EPS,
                  _max_min_mass, check_replicable, extremal_expectation,
                  sample_cps_vertices)
from .kernel import (ConcaveBuilder, EMPTY_INTERIOR, INFEASIBLE, LPBuilder,
                     solve_concave, solve_lp)
from .market import EndowmentSet, MarketModel, UtilityFunction
from .portfolio import Portfolio, SolverFailure, feasible_K, make_portfolio

KKT_TOL = 1e-7


class OutsideKError(ValueError):
    """(x, q) lies outside the interior of the effective domain K."""


class ReplicableEndowmentError(ValueError):
    """q.E_T is replicable, violating the standing non-replicability assumption."""


class DualPointError(ValueError):
    """(y, r) failed the dual-domain membership check."""

    def __init__(self, message: str, kind: str):
        super().__init__(message)
        self.kind = kind  # "outside-L" | "transcription"


# ---------------------------------------------------------------------------
# Deflators
# ---------------------------------------------------------------------------

@dataclass
class Deflator:
    """Node-indexed pair (Y0, Y1) in the discrete deflator cone."""

    y0: np.ndarray
    y1: np.ndarray

    def residuals(self, model: MarketModel) -> dict:
        tree, ask, bid = model.tree, model.ask, model.bid
        nonneg = max(0.0, -float(self.y0.min()), -float(self.y1.min()))
        spread = float(np.max(np.maximum(bid * self.y0 - self.y1,
                                         self.y1 - ask * self.y0)))
        drift0 = sandwich = 0.0
        for v in tree.nonterminal:
            kids = tree.children[v]
            m0 = sum(tree.cond_prob[c] * self.y0[c] for c in kids)
            m1 = sum(tree.cond_prob[c] * self.y1[c] for c in kids)
            d0 = m0 - self.y0[v]
            d1 = m1 - self.y1[v]
            drift0 = max(drift0, d0)
            sandwich = max(sandwich, d1 - bid[v] * d0, ask[v] * d0 - d1)
        return {"nonneg": nonneg, "spread": max(spread, 0.0),
                "drift0": max(drift0, 0.0), "sandwich": max(sandwich, 0.0)}

    def worst_residual(self, model: MarketModel) -> float:
        return max(self.residuals(model).values())

    def assert_valid(self, model: MarketModel, tol: float = 1e-9):
        r = self.residuals(model)
        assert max(r.values()) <= tol, f"deflator cone violated: {r}"

    def drift_pairing(self, model: MarketModel, portfolio: Portfolio) -> float:
        """Largest one-step drift of the deflated position process; for a
        node-wise solvent portfolio this is <= 0 by the polar construction."""
        tree = model.tree
        worst = -np.inf
        for v in tree.nonterminal:
            kids = tree.children[v]
            m0 = sum(tree.cond_prob[c] * self.y0[c] for c in kids)
            m1 = sum(tree.cond_prob[c] * self.y1[c] for c in kids)
            drift = portfolio.phi0[v] * (m0 - self.y0[v]) \
                + portfolio.phi1[v] * (m1 - self.y1[v])
            worst = max(worst, drift)
        return float(worst)


def deflator_from_density(model: MarketModel, cps: ConsistentPriceSystem,
                          y: float = 1.0) -> Deflator:
    from .cps import cps_to_density

    dens = cps_to_density(model, cps)
    return Deflator(y0=y * dens.z0, y1=y * dens.z1)


def _deflator_cone_rows(builder, model: MarketModel, y0_col, y1_col):
    """Append spread and polar drift rows for the deflator cone."""
    tree, ask, bid = model.tree, model.ask, model.bid
    for v in range(tree.n_nodes):
        builder.row([y1_col(v), y0_col(v)], [1.0, -ask[v]], "<=", 0.0)
        builder.row([y0_col(v), y1_col(v)], [bid[v], -1.0], "<=", 0.0)
    for v in tree.nonterminal:
        kids = list(tree.children[v])
        p = [tree.cond_prob[c] for c in kids]
        # m0 <= y0
        builder.row([y0_col(c) for c in kids] + [y0_col(v)], p + [-1.0], "<=", 0.0)
        # (m1 - y1) <= bid*(m0 - y0)
        cols = [y1_col(c) for c in kids] + [y1_col(v)] \
            + [y0_col(c) for c in kids] + [y0_col(v)]
        vals = p + [-1.0] + [-bid[v] * pc for pc in p] + [bid[v]]
        builder.row(cols, vals, "<=", 0.0)
        # ask*(m0 - y0) <= (m1 - y1)
        vals = [-pc for pc in p] + [1.0] + [ask[v] * pc for pc in p] + [-ask[v]]
        builder.row(cols, vals, "<=", 0.0)


def sample_deflators(model: MarketModel, rng: np.random.Generator,
                     count: int, y: float = 1.0) -> list[Deflator]:
    """Random deflator-cone points built backward in closed form.

    Terminal values are drawn in the spread; at each earlier node the drift
    (d0, d1) is sampled inside the intersection of the polar rows with the
    node's own spread constraint, whose bounds are explicit:

        d0 <= min(0, (m1 - bid m0)/(ask - bid), (ask m0 - m1)/(ask - bid)),
        d1 in [ask d0, bid d0] cap [m1 - ask(m0 - d0), m1 - bid(m0 - d0)].

    Everything is direct arithmetic, so the cone rows hold to machine
    precision; the pair is finally scaled to put Y0(root) = y.
    """
    tree = model.tree
    ask, bid = model.ask, model.bid
    term = tree.terminal
    out = []
    for _ in range(count):
        y0 = np.zeros(tree.n_nodes)
        y1 = np.zeros(tree.n_nodes)
        y0[term] = rng.uniform(0.2, 2.0, size=term.size)
        y1[term] = y0[term] * rng.uniform(bid[term], ask[term])
        for v in reversed(tree.nonterminal):
            kids = list(tree.children[v])
            m0 = float(sum(tree.cond_prob[c] * y0[c] for c in kids))
            m1 = float(sum(tree.cond_prob[c] * y1[c] for c in kids))
            width = ask[v] - bid[v]
            d0_max = min(0.0, (m1 - bid[v] * m0) / width,
                         (ask[v] * m0 - m1) / width)
            d0 = d0_max - float(rng.uniform(0.0, 0.4)) * m0
            lo = max(ask[v] * d0, m1 - ask[v] * (m0 - d0))
            hi = min(bid[v] * d0, m1 - bid[v] * (m0 - d0))
            d1 = float(rng.uniform(lo, hi)) if hi > lo else 0.5 * (lo + hi)
            y0[v] = m0 - d0
            y1[v] = m1 - d1
        scale = y / y0[0]
        out.append(Deflator(y0=y0 * scale, y1=y1 * scale))
    return out


def sample_deflator_vertices(model: MarketModel, rng: np.random.Generator,
                             count: int, y: float = 1.0) -> list[Deflator]:
    """Extreme points of the deflator cone section {Y0(root) = y}."""
    tree = model.tree
    n = tree.n_nodes
    out = []
    for _ in range(count):
        b = LPBuilder(2 * n, sense="max")
        y0 = lambda v: v
        y1 = lambda v: n + v
        for v in range(n):
            b.bound(y0(v), 0.0)
            b.bound(y1(v), 0.0)
        b.row([y0(0)], [1.0], "=", y)
        _deflator_cone_rows(b, model, y0, y1)
        coeff = rng.normal(size=2 * n)
        b.objective(np.arange(2 * n), coeff)
        rep = solve_lp(b.build(), tol=1e-10, max_iter=300)
        if rep.x is None:
            continue
        out.append(Deflator(y0=rep.x[:n].copy(), y1=rep.x[n:].copy()))
    return out


# ---------------------------------------------------------------------------
# Primal problem
# ---------------------------------------------------------------------------

@dataclass
class PrimalSolution:
    x: float
    q: np.ndarray
    value: float
    wealth: np.ndarray            # W_T per terminal node
    portfolio: Portfolio
    wealth_row_duals: np.ndarray  # multiplier of each terminal wealth row
    stock_row_duals: np.ndarray   # multiplier of each terminal stock row
    kkt_worst: float
    iterations: int


def _primal_program(model: MarketModel, endowments: EndowmentSet, x: float,
                    q, utility: UtilityFunction):
    tree = model.tree
    n = tree.n_nodes
    term = tree.terminal
    nt = term.size
    prob = tree.prob()[term]
    qe = endowments.combine(q)

    buy = lambda v: v
    sell = lambda v: n + v
    wvar = lambda k: 2 * n + k
    b = ConcaveBuilder(2 * n + nt)
    for v in range(n):
        b.bound(buy(v), 0.0)
        b.bound(sell(v), 0.0)
    stock_rows = []
    wealth_rows = []
    for k, w in enumerate(term):
        path = tree.path(int(w))
        cols = [buy(v) for v in path] + [sell(v) for v in path]
        vals = [1.0] * len(path) + [-1.0] * len(path)
        stock_rows.append(b.row(cols, vals, "=", 0.0))
        wcols = [wvar(k)] + [buy(v) for v in path] + [sell(v) for v in path]
        wvals = [1.0] + [model.ask[v] for v in path] + [-model.bid[v] for v in path]
        wealth_rows.append(b.row(wcols, wvals, "=", x + float(qe[k])))
        if utility.kind == "log":
            b.log_term(float(prob[k]), [wvar(k)], [1.0])
        else:
            b.power_term(float(prob[k]), utility.p, [wvar(k)], [1.0])
    return b.build(), stock_rows, wealth_rows, wvar


def _jitter_start(model, endowments, x, q, seed: int):
    """Interior start with equal buy and sell legs (rows stay exact)."""
    rng = np.random.default_rng(seed)
    n = model.tree.n_nodes
    qe = endowments.combine(q)
    floor = x + (float(np.min(qe)) if qe.size else 0.0)
    scale = max(1e-3, 0.01 * abs(floor)) / max(1.0, float(np.max(model.ask)))
    j = rng.uniform(0.2, 1.0, size=n) * scale
    term = model.tree.terminal
    start = np.zeros(2 * n + term.size)
    start[:n] = j
    start[n:2 * n] = j
    # wealth coordinates implied by the rows
    for k, w in enumerate(term):
        path = model.tree.path(int(w))
        spent = sum((model.ask[v] - model.bid[v]) * j[v] for v in path)
        start[2 * n + k] = x + float(qe[k]) - spent
    if np.min(start[2 * n:]) <= 0.0:
        return None
    return start


def primal_solve(model: MarketModel, endowments: EndowmentSet, x: float, q,
                 utility: UtilityFunction, tol: float = 1e-8,
                 max_iter: int = 200, seed: int | None = None,
                 check_domain: bool = True) -> PrimalSolution:
    """Maximize E[U(V_T + q.E_T)] over self-financing liquidated plans.

    Requires (x, q) in the interior of K and, for q != 0, a non-replicable
    combined claim (the standing assumption of the duality theory).
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if check_domain:
        status, s = feasible_K(model, endowments, x, q)
        if status != "interior":
            raise OutsideKError(
                f"(x, q) is {status} of K: x={x:g}, superhedge floor {s:g}")
        if np.any(q != 0.0) and check_replicable(model, endowments, q):
            raise ReplicableEndowmentError("q.E_T is replicable at this q")
    prog, stock_rows, wealth_rows, wvar = _primal_program(
        model, endowments, x, q, utility)
    start = None if seed is None else _jitter_start(model, endowments, x, q, seed)
    rep = solve_concave(prog, tol=tol, max_iter=max_iter, start=start)
    if rep.status == EMPTY_INTERIOR or rep.status == INFEASIBLE:
        raise OutsideKError(f"wealth domain empty: {rep.message}")
    if rep.x is None or (rep.status != "optimal" and rep.kkt.worst() > 1e-6):
        raise SolverFailure(f"primal solve failed: {rep.status} ({rep.message})")
    n = model.tree.n_nodes
    buys = np.maximum(rep.x[:n], 0.0)
    sells = np.maximum(rep.x[n:2 * n], 0.0)
    pf = make_portfolio(model, x, buys, sells, liquidate=True)
    wealth = pf.terminal_value(model) + endowments.combine(q)
    value = float(model.tree.prob()[model.tree.terminal] @ utility.value(wealth))
    return PrimalSolution(
        x=float(x), q=q, value=value, wealth=wealth, portfolio=pf,
        wealth_row_duals=rep.row_duals[wealth_rows].copy(),
        stock_row_duals=rep.row_duals[stock_rows].copy(),
        kkt_worst=rep.kkt.worst(), iterations=rep.iterations)


# ---------------------------------------------------------------------------
# Dual problem
# ---------------------------------------------------------------------------

@dataclass
class DualSolution:
    y: float
    r: np.ndarray
    deflator: Deflator
    value: float
    kkt_worst: float = 0.0
    iterations: int = 0
    source: str = "dual_solve"       # or "extracted"
    domain_status: str = "interior"  # membership of (y, r) in L


def l_membership(model: MarketModel, endowments: EndowmentSet, y: float, r) -> str:
    """Locate (y, r) relative to L = cone over {1} x (price set of E_T).

    Checked by the pricing-feasibility LP on the CPS polytope: r/y must be an
    attainable price vector; strict positivity of the attaining measure marks
    the relative interior.  Boundary cases are reported, not classified.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if y <= 0.0:
        return "outside"
    poly = CPSPolytope(model, model.lam)
    tree = model.tree
    rows = []
    for i in range(endowments.n_claims):
        rows.append(([poly.w(v) for v in tree.terminal], endowments.payoff[i],
                     "=", float(r[i]) / y))
    rep, margin, _ = _max_min_mass(poly, extra_rows=rows)
    if rep is None:
        return "outside"
    return "interior" if margin > POSITIVITY_EPS else "boundary"


def dual_solve(model: MarketModel, endowments: EndowmentSet, y: float, r,
               utility: UtilityFunction, tol: float = 1e-8,
               max_iter: int = 200) -> DualSolution:
    """Minimize E[Utilde(Y0_T)] over deflators with Y0(root) = y and the
    endowment pairing rows E[Y0_T E^i_T] = r_i.

    On a finite tree the pairing inequalities that define the dual domain cut
    the feasible set down to the martingale pairs (scaled density processes
    of consistent price systems): drift slack would pair positively with
    liquidated plans that ride insolvent intermediate positions, violating
    weak duality.  The transcription therefore uses martingale rows for both
    components, which is exactly the conjugate of the primal value; the wider
    supermartingale cone remains as the verification surface for deflator
    membership elsewhere in the engine.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    status = l_membership(model, endowments, y, r)
    if status == "outside":
        raise DualPointError(f"(y, r)=({y:g}, {r}) outside L", kind="outside-L")
    tree = model.tree
    n = tree.n_nodes
    term = tree.terminal
    prob = tree.prob()
    y0 = lambda v: v
    y1 = lambda v: n + v
    b = ConcaveBuilder(2 * n)
    for v in range(n):
        b.bound(y0(v), 0.0)
        b.bound(y1(v), 0.0)
    b.row([y0(0)], [1.0], "=", float(y))
    for i in range(endowments.n_claims):
        cols = [y0(int(w)) for w in term]
        vals = [float(prob[w] * endowments.payoff[i, k]) for k, w in enumerate(term)]
        b.row(cols, vals, "=", float(r[i]))
    for v in tree.nonterminal:
        kids = list(tree.children[v])
        p = [tree.cond_prob[c] for c in kids]
        b.row([y0(c) for c in kids] + [y0(v)], p + [-1.0], "=", 0.0)
        b.row([y1(c) for c in kids] + [y1(v)], p + [-1.0], "=", 0.0)
    for v in range(n):
        b.row([y1(v), y0(v)], [1.0, -model.ask[v]], "<=", 0.0)
        b.row([y0(v), y1(v)], [model.bid[v], -1.0], "<=", 0.0)
    a_conj = utility.conjugate_exponent()
    for k, w in enumerate(term):
        if utility.kind == "log":
            b.log_term(float(prob[w]), [y0(int(w))], [1.0])
        else:
            b.power_term(float(prob[w]), a_conj, [y0(int(w))], [1.0])
    rep = solve_concave(b.build(), tol=tol, max_iter=max_iter)
    if rep.status in (EMPTY_INTERIOR, INFEASIBLE):
        raise DualPointError(
            f"deflator transcription infeasible at (y, r): {rep.message}",
            kind="transcription")
    if rep.x is None:
        raise SolverFailure(f"dual solve failed: {rep.status}")
    defl = Deflator(y0=rep.x[:n].copy(), y1=rep.x[n:2 * n].copy())
    value = float(prob[term] @ utility.conjugate(np.maximum(defl.y0[term], 1e-300)))
    return DualSolution(y=float(y), r=r, deflator=defl, value=value,
                        kkt_worst=rep.kkt.worst(), iterations=rep.iterations,
                        domain_status=status)


def dual_value_by_conjugate(model, endowments, utility, y: float, r,
                            xq_grid) -> float:
    """v(y, r) evaluated by the conjugate formula sup over an (x, q) grid of
    u(x,q) - xy - q.r; the honest fallback when the cone transcription shows
    slack against the primal-extracted value."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    best = -np.inf
    for x, q in xq_grid:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        try:
            u = primal_solve(model, endowments, x, q, utility).value
        except (OutsideKError, ReplicableEndowmentError):
            continue
        best = max(best, u - x * y - float(q @ r))
    return best


# ---------------------------------------------------------------------------
# Optimizer extraction and Theorem 3.1 relations
# ---------------------------------------------------------------------------

def _project_y1_martingale(model: MarketModel, y0: np.ndarray,
                           signal_t: np.ndarray, pins=None):
    """Martingale Y1 in the spread around y0, close to the terminal
    multiplier signal; None when no such martingale exists numerically.

    ``pins`` lists (node, target) pairs where complementarity demands Y1 at
    a spread end (active trades); they enter as heavily weighted soft
    deviations so multiplier noise cannot pull the candidate off the end.
    """
    tree = model.tree
    term = tree.terminal
    nt = term.size
    prob = tree.prob()
    pins = pins or []
    n_pin = len(pins)
    # variables: terminal y1, pin deviations and an elastic band violation
    # (shared); the band can be numerically empty when the optimal measure is
    # an extreme point of the CPS polytope, so it is enforced elastically.
    # Any point of the feasible set serves: off the support of trading the
    # shadow ratio is not unique and only the invariants are asserted.
    elastic = nt + n_pin
    b = LPBuilder(nt + n_pin + 1, sense="min")
    for j in range(n_pin):
        b.add_objective(nt + j, 1.0)
        b.bound(nt + j, 0.0)
    b.add_objective(elastic, 10.0)
    b.bound(elastic, 0.0)
    under: dict[int, list[int]] = {}
    for k, w in enumerate(term):
        v = int(w)
        while True:
            under.setdefault(v, []).append(k)
            if tree.parent[v] == -1:
                break
            v = int(tree.parent[v])
    for k, w in enumerate(term):
        b.row([k, elastic], [1.0, -1.0], "<=", model.ask[w] * y0[w])
        b.row([k, elastic], [1.0, 1.0], ">=", model.bid[w] * y0[w])
    for v in tree.nonterminal:
        ks = under.get(v, [])
        weights = [prob[term[k]] / prob[v] for k in ks]
        b.row(list(ks) + [elastic], weights + [-1.0], "<=", model.ask[v] * y0[v])
        b.row(list(ks) + [elastic], weights + [1.0], ">=", model.bid[v] * y0[v])
    for j, (v, target) in enumerate(pins):
        dev = nt + j
        if tree.children[v]:
            ks = under.get(v, [])
            weights = [prob[term[k]] / prob[v] for k in ks]
            b.row(list(ks) + [dev], weights + [-1.0], "<=", float(target))
            b.row(list(ks) + [dev], weights + [1.0], ">=", float(target))
        else:
            k = int(np.flatnonzero(term == v)[0])
            b.row([k, dev], [1.0, -1.0], "<=", float(target))
            b.row([k, dev], [1.0, 1.0], ">=", float(target))
    rep = solve_lp(b.build(), tol=1e-9, max_iter=300)
    # a near-feasible iterate suffices: the backward closure restores the
    # martingale identity exactly and residuals are measured downstream
    if rep.x is None or rep.status == INFEASIBLE or (
            rep.kkt is not None and rep.kkt.primal_feasibility > 1e-7):
        return None
    y1_t = rep.x[:nt]
    y1 = tree.conditional_expectation(y1_t)
    return y1


def extract_dual_from_primal(model: MarketModel, endowments: EndowmentSet,
                             utility: UtilityFunction,
                             primal: PrimalSolution) -> DualSolution:
    """Dual optimizer read off the primal one.

    Terminal Y0 is the marginal utility of optimal wealth; non-terminal
    values are the martingale closure (the minimal choice in the cone, and
    what the self-financing multipliers aggregate to).  Y1 comes from the
    stock-row multipliers, clamped into the spread, and closes backward the
    same way.
    """
    tree = model.tree
    term = tree.terminal
    prob = tree.prob()
    y0_t = utility.marginal(primal.wealth)
    y0 = tree.conditional_expectation(y0_t)
    # stock-row dual of terminal w: sensitivity to the forced liquidation
    # constraint; per-path aggregation makes -dual/P(w) the terminal Y1
    y1_t = -primal.stock_row_duals / prob[term]
    y1_t = np.minimum(np.maximum(y1_t, model.bid[term] * y0_t),
                      model.ask[term] * y0_t)
    # active trades pin the ratio Y1/Y0 at the matching spread end
    net = primal.portfolio.buys - primal.portfolio.sells
    pins = []
    for v in range(tree.n_nodes):
        if net[v] > 1e-7:
            pins.append((v, model.ask[v] * y0[v]))
        elif net[v] < -1e-7:
            pins.append((v, model.bid[v] * y0[v]))
    y1 = _project_y1_martingale(model, y0, y1_t, pins=pins)
    if y1 is None:
        # multiplier noise pushed the signal outside the feasible band;
        # fall back to the clamped closure and report its residual honestly
        y1 = tree.conditional_expectation(y1_t)
        y1 = np.minimum(np.maximum(y1, model.bid * y0), model.ask * y0)
    defl = Deflator(y0=y0, y1=y1)
    y = float(y0[0])
    r = np.array([float(prob[term] @ (y0_t * endowments.payoff[i]))
                  for i in range(endowments.n_claims)])
    value = float(prob[term] @ utility.conjugate(y0_t))
    return DualSolution(y=y, r=r, deflator=defl, value=value, source="extracted")


def duality_gap(primal: PrimalSolution, dual: DualSolution) -> float:
    pairing = primal.x * dual.y + float(primal.q @ dual.r)
    return abs(primal.value - (dual.value + pairing))


def complementary_slackness_residual(model, endowments, primal, dual) -> float:
    """|E[Y0_T W_T] - (xy + q.r)| at the solved pair."""
    term = model.tree.terminal
    prob = model.tree.prob()[term]
    lhs = float(prob @ (dual.deflator.y0[term] * primal.wealth))
    return abs(lhs - (primal.x * dual.y + float(primal.q @ dual.r)))


def first_order_identity_residual(model, utility, primal, dual) -> float:
    """max_w |Y0_T - U'(W_T)|."""
    term = model.tree.terminal
    return float(np.max(np.abs(dual.deflator.y0[term] - utility.marginal(primal.wealth))))


@dataclass
class ConjugacyReport:
    weak_duality_worst: float          # max of u - (v + xy + q.r); <= tol_weak
    attainment_gaps: list              # per (x,q): min over duals minus u
    ok: bool


def conjugacy_check(model, endowments, utility, xq_grid, yr_grid,
                    tol: float = 1e-5, tol_weak: float = 1e-9) -> ConjugacyReport:
    """Verify conjugacy of u and v on finite grids.

    Weak duality must hold pairwise without positive gap; the infimum over
    the (y, r) grid augmented with the extracted dual point must attain u.
    """
    primals = []
    for x, q in xq_grid:
        primals.append(primal_solve(model, endowments, x, q, utility))
    duals = []
    for y, r in yr_grid:
        duals.append(dual_solve(model, endowments, y, r, utility))
    worst = -np.inf
    gaps = []
    for p in primals:
        candidates = []
        for d in duals:
            pairing = p.x * d.y + float(p.q @ d.r)
            worst = max(worst, p.value - (d.value + pairing))
            candidates.append(d.value + pairing)
        extracted = extract_dual_from_primal(model, endowments, utility, p)
        candidates.append(extracted.value + p.x * extracted.y
                          + float(p.q @ extracted.r))
        gaps.append(min(candidates) - p.value)
    ok = (worst <= tol_weak) and all(abs(g) <= tol for g in gaps)
    return ConjugacyReport(weak_duality_worst=float(worst),
                           attainment_gaps=gaps, ok=ok)


@dataclass
class SubdifferentialReport:
    y: float
    r: np.ndarray
    worst_violation: float
    probes: list
    membership: str

    @property
    def marginal_prices(self) -> np.ndarray:
        return self.r / self.y


def subdifferential(model, endowments, x: float, q, utility,
                    h: float = 1e-3, tol: float = 1e-6) -> SubdifferentialReport:
    """Candidate supergradient of u at (x, q) with a finite-difference
    certificate: u(x', q') <= u(x, q) + y (x'-x) + r.(q'-q) + tol at probes
    one step h away in every coordinate direction."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    base = primal_solve(model, endowments, x, q, utility)
    dual = extract_dual_from_primal(model, endowments, utility, base)
    probes = []
    worst = -np.inf
    deltas = [(h, np.zeros_like(q)), (-h, np.zeros_like(q))]
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = h
        deltas.append((0.0, e))
        deltas.append((0.0, -e))
    for dx, dq in deltas:
        try:
            u_probe = primal_solve(model, endowments, x + dx, q + dq, utility).value
        except (OutsideKError, ReplicableEndowmentError):
            probes.append({"dx": dx, "dq": dq.tolist(), "status": "outside-K"})
            continue
        bound = base.value + dual.y * dx + float(dual.r @ dq)
        violation = u_probe - bound
        worst = max(worst, violation)
        probes.append({"dx": dx, "dq": dq.tolist(), "violation": float(violation)})
    membership = l_membership(model, endowments, dual.y, dual.r)
    return SubdifferentialReport(y=dual.y, r=dual.r,
                                 worst_violation=float(worst), probes=probes,
                                 membership=membership)


# ---------------------------------------------------------------------------
# Bipolar spot checks
# ---------------------------------------------------------------------------

@dataclass
class BipolarReport:
    members: list
    non_members: list
    ok: bool


def _membership_tests(model, endowments, x, q, g, rng, n_vertices=4):
    """(vertex-inequality test, superhedge test) for g against C(x, q)."""
    qe = endowments.combine(q)
    lp_value, _ = extremal_expectation(model, np.asarray(g) - qe, "max")
    vertex_ok = lp_value <= x + 1e-8 * (1.0 + abs(x))
    for cps in sample_cps_vertices(model, rng, n_vertices):
        lhs = cps.expectation(model.tree, g)
        rhs = x + cps.expectation(model.tree, qe)
        if lhs > rhs + 1e-7 * (1.0 + abs(rhs)):
            vertex_ok = False
    from .portfolio import superhedge_price
    hedge = superhedge_price(model, np.asarray(g) - qe)
    hedge_ok = hedge.price <= x + 1e-8 * (1.0 + abs(x))
    return vertex_ok, hedge_ok, lp_value


def verify_bipolar(model, endowments, x: float, q, utility, rng,
                   n_members: int = 3) -> BipolarReport:
    """Spot checks of the bipolar characterization of C(x, q).

    Members built from the primal space pass every dual-vertex inequality
    and the superhedge membership test; a claim bumped upward at one node by
    enough to break the extracted-optimizer inequality fails both tests, and
    the two routes must agree.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    primal = primal_solve(model, endowments, x, q, utility)
    wstar = primal.wealth
    qe = endowments.combine(q)
    status, s = feasible_K(model, endowments, x, q)
    members, non_members = [], []
    candidates = [np.maximum(wstar, 0.0)]
    for _ in range(n_members - 2):
        candidates.append(np.maximum(wstar, 0.0) * rng.uniform(0.2, 1.0))
    candidates.append(np.full(wstar.size, 0.5 * max(x - s, 1e-6)))
    for g in candidates:
        v_ok, h_ok, lp_value = _membership_tests(model, endowments, x, q, g, rng)
        members.append({"vertex_ok": v_ok, "hedge_ok": h_ok, "lp": lp_value})
    # bump the optimal claim at the heaviest node of the extracted measure
    dual = extract_dual_from_primal(model, endowments, utility, primal)
    term = model.tree.terminal
    weights = model.tree.prob()[term] * dual.deflator.y0[term] / dual.y
    k = int(np.argmax(weights))
    for delta in (1e-3, 1e-2):
        g = np.maximum(wstar, 0.0).copy()
        g[k] += delta / max(weights[k], 1e-9)
        v_ok, h_ok, lp_value = _membership_tests(model, endowments, x, q, g, rng)
        non_members.append({"vertex_ok": v_ok, "hedge_ok": h_ok, "lp": lp_value})
    ok = all(m["vertex_ok"] and m["hedge_ok"] for m in members) and \
        all((not m["vertex_ok"]) and (not m["hedge_ok"]) for m in non_members)
    return BipolarReport(members=members, non_members=non_members, ok=ok)
