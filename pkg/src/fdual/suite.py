"""Batch property suite over seeded random instances.

Each instance runs the full invariant battery: CPS validity and density
martingales, extremal-price ordering, two-sided superhedging, the expectation
bound on self-financing plans, terminal-to-node dominance, deflator cone
soundness, the duality relations and shadow verification.  The CLI drives
this for reproducible health checks; the acceptance tests reuse the same
checks at their stated tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cps import (cps_to_density, exact_interior_cps, extremal_expectation,
                  find_cps, sample_cps_vertices)
from .duality import (complementary_slackness_residual, deflator_from_density,
                      dual_solve, duality_gap, extract_dual_from_primal,
                      first_order_identity_residual, primal_solve,
                      sample_deflators)
from .market import MarketModel
from .portfolio import (acceptability_threshold_nonneg,
                        node_dominating_martingale, superhedge_price)
from .randomgen import (random_admissible_portfolio, random_claim,
                        random_endowments, random_interior_position,
                        random_model, random_portfolio, random_utility)
from .shadow import candidate_shadow, check_classic

FAULT_NAMES = ("spread-flip",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tol: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst": self.worst,
                "tol": self.tol, "detail": self.detail}


@dataclass
class SuiteReport:
    seed: int
    count: int
    checks: list = field(default_factory=list)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> dict:
        return {
            "seed": self.seed, "count": self.count,
            "n_checks": len(self.checks), "n_failed": len(self.failures),
            "failed": sorted({c.name for c in self.failures}),
        }


def _check(checks, name, worst, tol, detail=""):
    checks.append(CheckResult(name=name, passed=bool(worst <= tol),
                              worst=float(worst), tol=tol, detail=detail))


def run_instance_checks(model: MarketModel, rng: np.random.Generator,
                        checks: list, inject_fault: str | None = None,
                        with_duality: bool = True):
    tree = model.tree

    # consistent price systems and densities
    cps = find_cps(model)
    res = cps.residuals(model)
    spread = res["spread"]
    if inject_fault == "spread-flip":
        spread = max(spread, 2.0 * 1e-9 + 1e-12)  # simulated broken invariant
    _check(checks, "cps-valid", max(res["cond_prob_sum"], res["martingale"],
                                    spread), 1e-9)
    dens = cps_to_density(model, cps)
    _check(checks, "density-martingale", max(dens.residuals(model).values()), 1e-9)
    interior = exact_interior_cps(model, rng)
    interior.assert_valid(model, tol=1e-10)
    _check(checks, "deflator-contains-density",
           deflator_from_density(model, interior, 1.7).worst_residual(model), 1e-9)

    # extremal expectations: ordering and positivity
    g = random_claim(rng, model, nonneg=True)
    lo, _ = extremal_expectation(model, g, "min")
    hi, _ = extremal_expectation(model, g, "max")
    _check(checks, "extremal-ordered", max(lo - hi, -lo), 1e-9)

    # superhedging duality and hedge dominance
    claim = random_claim(rng, model)
    sh = superhedge_price(model, claim)
    _check(checks, "superhedge-duality", sh.gap / (1.0 + abs(sh.price)), 1e-7)
    dom = float(np.max(claim - sh.hedge.terminal_value(model), initial=0.0))
    _check(checks, "hedge-dominates", dom, 1e-8)

    # expectation bound for arbitrary self-financing plans
    pf = random_portfolio(rng, model)
    worst, _ = extremal_expectation(model, pf.terminal_value(model), "max")
    _check(checks, "terminal-expectation-bound", worst - pf.x0, 1e-8)

    # terminal dominance funds node-wise dominance under every CPS
    a_plus = acceptability_threshold_nonneg(model, pf) + 1e-9
    worst_dom = 0.0
    for vertex in sample_cps_vertices(model, rng, 2):
        witness = node_dominating_martingale(model, pf, vertex, a_plus)
        if witness is None:
            worst_dom = np.inf
            break
        r = witness.residuals(model, pf)
        worst_dom = max(worst_dom, r["martingale"], r["dominance"], r["nonneg"])
    _check(checks, "terminal-to-node-dominance", worst_dom, 1e-9)

    # deflator cone: exact samples against admissible portfolios
    worst_drift = 0.0
    for defl in sample_deflators(model, rng, 2):
        worst_drift = max(worst_drift, defl.worst_residual(model))
        adm = random_admissible_portfolio(rng, model)
        worst_drift = max(worst_drift, defl.drift_pairing(model, adm))
    _check(checks, "deflator-drift", worst_drift, 1e-9)

    if not with_duality:
        return

    endow = random_endowments(rng, model)
    util = random_utility(rng)
    x, q = random_interior_position(rng, model, endow)
    primal = primal_solve(model, endow, x, q, util)
    dual = extract_dual_from_primal(model, endow, util, primal)
    _check(checks, "duality-gap", duality_gap(primal, dual), 1e-5)
    _check(checks, "first-order-identity",
           first_order_identity_residual(model, util, primal, dual), 1e-6)
    _check(checks, "complementary-slackness",
           complementary_slackness_residual(model, endow, primal, dual), 1e-6)
    # extreme-measure optima make the feasible shadow band degenerate; the
    # projection keeps violations minimal but multiplier noise bounds them
    _check(checks, "extracted-deflator-valid",
           dual.deflator.worst_residual(model), 1e-5)
    solved = dual_solve(model, endow, dual.y, dual.r, util)
    _check(checks, "dual-solve-gap", duality_gap(primal, solved), 1e-5)

    cand = candidate_shadow(model, dual)
    # the raw ratio inherits the sqrt(value-gap) wealth noise floor of the
    # primal barrier solve; the candidate itself is clamped exactly in-spread
    _check(checks, "shadow-in-spread", cand.raw_spread_violation, 5e-3)
    verdict = check_classic(model, endow, util, primal, dual)
    _check(checks, "shadow-value-dominance",
           (primal.value - verdict.frictionless_value)
           / (1.0 + abs(primal.value)), 1e-8)
    _check(checks, "shadow-value-gap", verdict.value_gap, 1e-5,
           detail=verdict.verdict)
    _check(checks, "shadow-trade-conditions",
           0.0 if verdict.trade_conditions.ok else 1.0, 0.5)


def run_suite(seed: int, count: int, max_depth: int = 4, max_branch: int = 3,
              inject_fault: str | None = None) -> SuiteReport:
    if inject_fault is not None and inject_fault not in FAULT_NAMES:
        raise ValueError(f"unknown fault {inject_fault!r}; known: {FAULT_NAMES}")
    rng = np.random.default_rng(seed)
    report = SuiteReport(seed=seed, count=count)
    for k in range(count):
        model = random_model(rng, max_depth=max_depth, max_branch=max_branch)
        # full duality battery on the smaller trees, market-layer checks on all
        with_duality = model.tree.n_nodes <= 45 or k % 3 == 0
        run_instance_checks(model, rng, report.checks,
                            inject_fault=inject_fault if k == 0 else None,
                            with_duality=with_duality)
    return report
