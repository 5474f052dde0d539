"""Consistent price systems on the event tree.

A CPS is a pair (Q, S_tilde) with Q ~ P and S_tilde a Q-martingale valued in
the bid-ask spread.  The engine works on the closed polytope parameterized
by unconditional measure masses w(v) >= 0 and node values z1(v) = S_tilde(v)
* w(v); martingale, spread and normalization constraints are then linear and
no bilinear Q x S_tilde terms appear.  S_tilde is recovered as z1/w wherever
w > 0.  Optimizers on the boundary of the polytope (some masses zero) are
flagged rather than silently treated as equivalent measures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernel import INFEASIBLE, LPBuilder, solve_lp, solve_lp_robust
from .market import MarketModel

POSITIVITY_EPS = 1e-9     # minimum mass certifying strict positivity
MARTINGALE_TOL = 1e-9
REPLICABLE_TOL = 1e-9
MIX_WEIGHT = 1e-7         # default weight when restoring strict positivity


class NoCPSError(RuntimeError):
    """The model admits no consistent price system at the requested level."""

    def __init__(self, message: str, margin: float = -np.inf):
        super().__init__(message)
        self.margin = margin


@dataclass
class ConsistentPriceSystem:
    """Conditional probabilities per edge plus the spread-valued martingale.

    ``equivalent`` is True when every conditional probability is strictly
    positive (Q ~ P); boundary witnesses produced by extremal LPs keep their
    arrays meaningful only on the support of Q.
    """

    q_cond: np.ndarray
    s_tilde: np.ndarray
    equivalent: bool = True
    min_mass: float = 0.0

    def q_prob(self, tree) -> np.ndarray:
        w = np.ones(tree.n_nodes)
        for v in range(1, tree.n_nodes):
            w[v] = w[tree.parent[v]] * self.q_cond[v]
        return w

    def expectation(self, tree, terminal_values) -> float:
        w = self.q_prob(tree)[tree.terminal]
        return float(w @ np.asarray(terminal_values, dtype=float))

    def conditional_expectation(self, tree, terminal_values) -> np.ndarray:
        x = np.zeros(tree.n_nodes)
        x[tree.terminal] = np.asarray(terminal_values, dtype=float)
        for v in range(tree.n_nodes - 1, -1, -1):
            if tree.children[v]:
                x[v] = sum(self.q_cond[c] * x[c] for c in tree.children[v])
        return x

    def residuals(self, model: MarketModel, lambda_prime: float | None = None) -> dict:
        lam = model.lam if lambda_prime is None else lambda_prime
        tree = model.tree
        pos = float(np.min(self.q_cond))
        sums = 0.0
        mart = 0.0
        for v in tree.nonterminal:
            kids = tree.children[v]
            sums = max(sums, abs(sum(self.q_cond[c] for c in kids) - 1.0))
            mart = max(mart, abs(self.s_tilde[v]
                                 - sum(self.q_cond[c] * self.s_tilde[c] for c in kids)))
        spread = float(np.max(np.maximum(
            (1.0 - lam) * model.ask - self.s_tilde, self.s_tilde - model.ask)))
        return {"min_cond_prob": pos, "cond_prob_sum": sums,
                "martingale": mart, "spread": max(spread, 0.0)}

    def assert_valid(self, model: MarketModel, lambda_prime: float | None = None,
                     tol: float = MARTINGALE_TOL):
        r = self.residuals(model, lambda_prime)
        assert r["min_cond_prob"] > 0.0, f"q_cond not strictly positive: {r}"
        assert r["cond_prob_sum"] <= tol, f"conditional sums off: {r}"
        assert r["martingale"] <= tol, f"martingale residual: {r}"
        assert r["spread"] <= tol, f"spread violation: {r}"

    def mix_with(self, tree, other: "ConsistentPriceSystem",
                 beta: float = MIX_WEIGHT) -> "ConsistentPriceSystem":
        """Convex combination in (mass, z1) coordinates; with a strictly
        positive partner this restores equivalence at negligible cost."""
        w_a, w_b = self.q_prob(tree), other.q_prob(tree)
        z_a, z_b = self.s_tilde * w_a, other.s_tilde * w_b
        w = (1.0 - beta) * w_a + beta * w_b
        z = (1.0 - beta) * z_a + beta * z_b
        return _cps_from_masses(tree, w, z)


@dataclass
class DensityPair:
    """P-martingale pair Z0 = E[dQ/dP | F_t], Z1 = S_tilde * Z0."""

    z0: np.ndarray
    z1: np.ndarray

    def residuals(self, model: MarketModel) -> dict:
        tree = model.tree
        mart0 = mart1 = 0.0
        for v in tree.nonterminal:
            kids = tree.children[v]
            m0 = sum(tree.cond_prob[c] * self.z0[c] for c in kids)
            m1 = sum(tree.cond_prob[c] * self.z1[c] for c in kids)
            mart0 = max(mart0, abs(self.z0[v] - m0))
            mart1 = max(mart1, abs(self.z1[v] - m1))
        sup = self.z0 > 0
        ratio = np.zeros(model.tree.n_nodes)
        ratio[sup] = self.z1[sup] / self.z0[sup]
        spread = float(np.max(np.maximum(
            ((1.0 - model.lam) * model.ask - ratio)[sup],
            (ratio - model.ask)[sup]), initial=0.0))
        return {"root": abs(self.z0[0] - 1.0), "martingale_z0": mart0,
                "martingale_z1": mart1, "spread": max(spread, 0.0)}

    def assert_valid(self, model: MarketModel, tol: float = MARTINGALE_TOL):
        r = self.residuals(model)
        assert max(r.values()) <= tol, f"density residuals too large: {r}"


def _cps_from_masses(tree, w: np.ndarray, z1: np.ndarray,
                     positivity_eps: float = POSITIVITY_EPS) -> ConsistentPriceSystem:
    """Recover (q_cond, s_tilde) from polytope coordinates.

    On dead subtrees (w = 0) conditional probabilities fall back to the
    physical ones and s_tilde to backward averages of spread midpoints; the
    witness is flagged boundary and those entries are cosmetic.
    """
    n = tree.n_nodes
    q_cond = np.ones(n)
    s_tilde = np.zeros(n)
    min_mass = float(np.min(w[tree.terminal]))
    for v in range(1, n):
        pw = w[tree.parent[v]]
        q_cond[v] = w[v] / pw if pw > 0.0 else tree.cond_prob[v]
    # renormalize against LP roundoff
    for v in tree.nonterminal:
        kids = list(tree.children[v])
        s = sum(q_cond[c] for c in kids)
        if s > 0.0:
            for c in kids:
                q_cond[c] /= s
    alive = w > 0.0
    s_tilde[alive] = z1[alive] / w[alive]
    for v in range(n - 1, -1, -1):
        if not alive[v]:
            if tree.children[v]:
                s_tilde[v] = sum(q_cond[c] * s_tilde[c] for c in tree.children[v])
            else:
                s_tilde[v] = np.nan  # filled by caller (spread midpoint)
    return ConsistentPriceSystem(q_cond=q_cond, s_tilde=s_tilde,
                                 equivalent=bool(min_mass > positivity_eps),
                                 min_mass=min_mass)


# ---------------------------------------------------------------------------
# Polytope assembly
# ---------------------------------------------------------------------------

@dataclass
class CPSPolytope:
    """Index bookkeeping for LPs over the closed CPS polytope."""

    model: MarketModel
    lam: float
    n_extra: int = 0

    @property
    def n_nodes(self) -> int:
        return self.model.tree.n_nodes

    def w(self, v: int) -> int:
        return v

    def z1(self, v: int) -> int:
        return self.n_nodes + v

    @property
    def n_vars(self) -> int:
        return 2 * self.n_nodes + self.n_extra

    def extra(self, k: int) -> int:
        return 2 * self.n_nodes + k

    def builder(self, sense="max") -> LPBuilder:
        tree = self.model.tree
        ask = self.model.ask
        b = LPBuilder(self.n_vars, sense=sense)
        for v in range(self.n_nodes):
            b.bound(self.w(v), 0.0)
            b.bound(self.z1(v), 0.0)
        b.row([self.w(0)], [1.0], "=", 1.0)
        for v in tree.nonterminal:
            kids = list(tree.children[v])
            b.row([self.w(v)] + [self.w(c) for c in kids],
                  [1.0] + [-1.0] * len(kids), "=", 0.0)
            b.row([self.z1(v)] + [self.z1(c) for c in kids],
                  [1.0] + [-1.0] * len(kids), "=", 0.0)
        for v in range(self.n_nodes):
            b.row([self.z1(v), self.w(v)], [1.0, -ask[v]], "<=", 0.0)
            b.row([self.z1(v), self.w(v)], [-1.0, (1.0 - self.lam) * ask[v]], "<=", 0.0)
        return b

    def extract(self, x: np.ndarray) -> ConsistentPriceSystem:
        tree = self.model.tree
        w = x[: self.n_nodes].copy()
        z1 = x[self.n_nodes: 2 * self.n_nodes].copy()
        cps = _cps_from_masses(tree, w, z1)
        dead_terminal = np.isnan(cps.s_tilde)
        if dead_terminal.any():
            mid = 0.5 * (2.0 - self.lam) * self.model.ask
            cps.s_tilde[dead_terminal] = mid[dead_terminal]
            # recompute ancestors of cosmetic fills
            for v in range(tree.n_nodes - 1, -1, -1):
                if tree.children[v] and w[v] <= 0.0:
                    cps.s_tilde[v] = sum(cps.q_cond[c] * cps.s_tilde[c]
                                         for c in tree.children[v])
        # backward averaging zeroes the martingale residual exactly; keep it
        # when the repaired values stay inside the spread
        rebuilt = cps.s_tilde.copy()
        for v in range(tree.n_nodes - 1, -1, -1):
            if tree.children[v]:
                rebuilt[v] = sum(cps.q_cond[c] * rebuilt[c] for c in tree.children[v])
        lo = (1.0 - self.lam) * self.model.ask
        if np.all(rebuilt >= lo - 1e-12) and np.all(rebuilt <= self.model.ask + 1e-12):
            cps.s_tilde = np.minimum(np.maximum(rebuilt, lo), self.model.ask)
        return cps


def _max_min_mass(poly: CPSPolytope, extra_rows=None, tol=1e-10):
    """LP: maximize the smallest terminal mass over the polytope (capped at 1)."""
    poly = CPSPolytope(poly.model, poly.lam, n_extra=1)
    b = poly.builder()
    t = poly.extra(0)
    b.bound(t, -np.inf, 1.0)
    b.objective([t], [1.0])
    tree = poly.model.tree
    for v in tree.terminal:
        b.row([poly.w(v), t], [1.0, -1.0], ">=", 0.0)
    if extra_rows:
        for cols, vals, rel, rhs in extra_rows:
            b.row(cols, vals, rel, rhs)
    rep = solve_lp(b.build(), tol=tol, max_iter=300)
    if rep.status == INFEASIBLE or rep.x is None:
        return None, -np.inf, poly
    return rep, float(rep.x[t]), poly


def find_cps(model: MarketModel, lambda_prime: float | None = None) -> ConsistentPriceSystem:
    """A strictly positive CPS whose martingale lives in the lambda'-spread.

    Strict positivity is certified by maximizing the minimum terminal mass;
    raises NoCPSError if the optimum is not safely positive (the model fails
    the existence assumption at level lambda').
    """
    lam = model.lam if lambda_prime is None else float(lambda_prime)
    if not 0.0 < lam <= model.lam:
        raise ValueError("lambda_prime must lie in (0, lambda]")
    poly = CPSPolytope(model, lam)
    rep, margin, poly = _max_min_mass(poly)
    if rep is None or margin <= POSITIVITY_EPS:
        raise NoCPSError(
            f"no strictly positive CPS at lambda'={lam:g} (max-min mass {margin:.3e})",
            margin)
    cps = poly.extract(rep.x)
    return cps


def cps_to_density(model: MarketModel, cps: ConsistentPriceSystem) -> DensityPair:
    """Density pair along the tree: z0 multiplies q_cond/p per edge.

    Both components are closed backward from their terminal values, which
    makes the martingale identities hold to machine precision instead of
    compounding the witness's roundoff through price-scale factors.
    """
    tree = model.tree
    z0 = np.ones(tree.n_nodes)
    for v in range(1, tree.n_nodes):
        z0[v] = z0[tree.parent[v]] * cps.q_cond[v] / tree.cond_prob[v]
    term = tree.terminal
    z0 = tree.conditional_expectation(z0[term])
    z1 = tree.conditional_expectation(cps.s_tilde[term] * z0[term])
    return DensityPair(z0=z0, z1=z1)


def extremal_expectation(model: MarketModel, claim, sense: str = "max",
                         extra_rows=None, tol: float = 1e-10):
    """Optimal E^Q[claim] over the closed CPS polytope plus attaining witness.

    The LP relaxes strict positivity to w >= 0; the returned witness carries
    ``equivalent=False`` when the optimizer sits on the boundary.
    """
    claim = np.asarray(claim, dtype=float)
    tree = model.tree
    if claim.shape != (tree.terminal.size,):
        raise ValueError("claim must list one payoff per terminal node")
    poly = CPSPolytope(model, model.lam)
    b = poly.builder(sense="max" if sense == "max" else "min")
    b.objective([poly.w(v) for v in tree.terminal], claim)
    if extra_rows:
        for cols, vals, rel, rhs in extra_rows:
            b.row(cols, vals, rel, rhs)
    rep, ok = solve_lp_robust(b.build(), tol=tol, max_iter=300)
    if rep.status == INFEASIBLE:
        raise NoCPSError("model admits no consistent price system")
    if not ok:
        raise NoCPSError(f"extremal expectation LP failed: {rep.status}")
    return float(rep.objective), poly.extract(rep.x)


def price_interval(model: MarketModel, endowments, q) -> tuple[float, float]:
    """Arbitrage-free price interval of the combined claim q . E_T."""
    claim = endowments.combine(q)
    lo, _ = extremal_expectation(model, claim, "min")
    hi, _ = extremal_expectation(model, claim, "max")
    return lo, hi


@dataclass
class PricedCPS:
    status: str                                 # "inside" | "boundary" | "outside"
    cps: ConsistentPriceSystem | None
    interval: tuple[float, float]


def cps_with_price(model: MarketModel, endowments, q, p: float,
                   boundary_tol: float = 1e-9) -> PricedCPS:
    """Member of M(p): a CPS pricing the claim combination at exactly p.

    Strictly interior p yields an equivalent witness (positivity maximized);
    p at the interval edge only belongs to the closure and is reported as a
    boundary witness; p outside yields none.
    """
    claim = endowments.combine(q)
    tree = model.tree
    lo, cps_lo = extremal_expectation(model, claim, "min")
    hi, cps_hi = extremal_expectation(model, claim, "max")
    if p < lo - boundary_tol or p > hi + boundary_tol:
        return PricedCPS("outside", None, (lo, hi))
    if p <= lo + boundary_tol or p >= hi - boundary_tol:
        # interval edge: only closure membership is certified, even when the
        # attaining measure happens to be strictly positive
        cps = cps_lo if abs(p - lo) <= abs(p - hi) else cps_hi
        return PricedCPS("boundary", cps, (lo, hi))
    poly = CPSPolytope(model, model.lam)
    pricing = [([poly.w(v) for v in tree.terminal], claim, "=", p)]
    rep, margin, poly2 = _max_min_mass(poly, extra_rows=pricing)
    if rep is None:
        # p is numerically outside; fall back to the nearest closure witness
        cps = cps_lo if abs(p - lo) <= abs(p - hi) else cps_hi
        cps.equivalent = False
        return PricedCPS("boundary", cps, (lo, hi))
    cps = poly2.extract(rep.x)
    if margin <= POSITIVITY_EPS:
        cps.equivalent = False
        return PricedCPS("boundary", cps, (lo, hi))
    return PricedCPS("inside", cps, (lo, hi))


def check_replicable(model: MarketModel, endowments, q) -> bool:
    """True iff the price interval of q . E_T degenerates to a point."""
    lo, hi = price_interval(model, endowments, q)
    return hi - lo <= REPLICABLE_TOL


def exact_interior_cps(model: MarketModel, rng: np.random.Generator | None = None,
                       alpha: float | None = None) -> ConsistentPriceSystem:
    """Interior CPS by direct arithmetic on an arbitrage-free tree.

    Conditional probabilities come from random convex combinations of the
    two-point martingale weights of price-straddling child pairs; the price
    is the (1 - alpha) multiple of the ask (mid-spread by default), a
    martingale because S itself is one under those weights.  No LP is
    involved, so all residuals sit at machine precision.
    """
    tree = model.tree
    ask = model.ask
    a = 0.5 * model.lam if alpha is None else float(alpha)
    if not 0.0 <= a <= model.lam:
        raise ValueError("alpha must lie in [0, lambda]")
    q_cond = np.ones(tree.n_nodes)
    for v in tree.nonterminal:
        kids = list(tree.children[v])
        prices = ask[kids]
        target = ask[v]
        combos = []
        for i in range(len(kids)):
            if prices[i] == target:
                w = np.zeros(len(kids))
                w[i] = 1.0
                combos.append(w)
            for j in range(len(kids)):
                if prices[i] < target < prices[j]:
                    w = np.zeros(len(kids))
                    t = (target - prices[i]) / (prices[j] - prices[i])
                    w[j] = t
                    w[i] = 1.0 - t
                    combos.append(w)
        if not combos:
            raise NoCPSError(f"node {v} is not arbitrage-free: ask outside "
                             "the hull of its children")
        if rng is None or len(combos) == 1:
            mix = np.full(len(combos), 1.0 / len(combos))
        else:
            mix = rng.uniform(0.3, 1.0, size=len(combos))
            mix /= mix.sum()
        weights = np.zeros(len(kids))
        for m_k, w in zip(mix, combos):
            weights += m_k * w
        q_cond[kids] = weights
    return ConsistentPriceSystem(q_cond=q_cond, s_tilde=(1.0 - a) * ask,
                                 equivalent=True,
                                 min_mass=float(np.min(q_cond)))


def sample_cps_vertices(model: MarketModel, rng: np.random.Generator, count: int,
                        strictly_positive: bool = True):
    """Vertices of the CPS polytope from random linear objectives.

    With ``strictly_positive`` each vertex is mixed with an interior CPS at
    weight MIX_WEIGHT, mirroring the closure-to-equivalence step used in the
    attainability proof machinery.
    """
    tree = model.tree
    base = find_cps(model) if strictly_positive else None
    out = []
    for _ in range(count):
        obj_w = rng.normal(size=tree.terminal.size)
        value, vertex = extremal_expectation(model, obj_w, "max")
        if strictly_positive:
            vertex = vertex.mix_with(tree, base)
        out.append(vertex)
    return out
