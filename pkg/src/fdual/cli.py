"""Command-line front end.

Commands: validate, cps, superhedge, solve, suite.  Reports are UTF-8 JSON
with keys {schema_version, command, instance_digest, results, residuals,
wall_time_ms}; numeric results carry their tolerance next to the value.
Exit codes: 0 success, 1 suite failure, 2 invalid instance, 3 no CPS or
infeasible price, 4 solver failure, 5 outside the domain K.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .cps import (NoCPSError, cps_with_price, find_cps, price_interval)
from .duality import (DualPointError, OutsideKError, ReplicableEndowmentError,
                      dual_solve, duality_gap, extract_dual_from_primal,
                      primal_solve)
from .market import InstanceError, build_model, model_digest
from .portfolio import SolverFailure, superhedge_price
from .shadow import (candidate_shadow, check_classic, marginal_price_report)
from .suite import FAULT_NAMES, run_suite

SCHEMA_VERSION = "1"

EXIT_OK = 0
EXIT_SUITE_FAIL = 1
EXIT_INVALID = 2
EXIT_NO_CPS = 3
EXIT_SOLVER = 4
EXIT_OUTSIDE_K = 5


def _val(value, tol=None):
    out = {"value": value if not isinstance(value, np.ndarray) else value.tolist()}
    if tol is not None:
        out["tol"] = tol
    return out


def _emit(report: dict, fmt: str, started: float) -> None:
    report["wall_time_ms"] = int(1000 * (time.time() - started))
    if fmt == "json":
        print(json.dumps(report, indent=2, sort_keys=True))
        return
    print(f"# fdual {report['command']}  (schema {report['schema_version']})")
    if report.get("instance_digest"):
        print(f"instance: {report['instance_digest'][:16]}...")
    def walk(prefix, obj):
        if isinstance(obj, dict):
            if "value" in obj and set(obj) <= {"value", "tol"}:
                tol = f"  (tol {obj['tol']:g})" if "tol" in obj else ""
                print(f"{prefix}: {obj['value']}{tol}")
            else:
                for k, v in obj.items():
                    walk(f"{prefix}.{k}" if prefix else k, v)
        elif isinstance(obj, list) and len(obj) > 6:
            print(f"{prefix}: [{len(obj)} entries]")
        else:
            print(f"{prefix}: {obj}")
    walk("", {"results": report["results"], "residuals": report["residuals"]})
    print(f"wall_time_ms: {report['wall_time_ms']}")


def _load(path: str):
    with open(path, "rb") as fh:
        raw = fh.read()
    model, endow, util = build_model(raw.decode("utf-8"))
    return model, endow, util, model_digest(raw)


def _base_report(command: str, digest: str | None) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command,
            "instance_digest": digest, "results": {}, "residuals": {}}


def _portfolio_records(pf) -> list:
    return [{"node": int(v), "buy": float(pf.buys[v]), "sell": float(pf.sells[v])}
            for v in range(pf.buys.size)
            if pf.buys[v] > 1e-12 or pf.sells[v] > 1e-12]


def cmd_validate(args) -> int:
    started = time.time()
    try:
        model, endow, util, digest = _load(args.file)
    except InstanceError as exc:
        report = _base_report("validate", None)
        report["results"] = {"valid": False, "error": str(exc)}
        _emit(report, args.report, started)
        return EXIT_INVALID
    report = _base_report("validate", digest)
    report["results"] = {
        "valid": True,
        "nodes": model.tree.n_nodes,
        "horizon": model.tree.horizon,
        "terminal_nodes": int(model.tree.terminal.size),
        "lambda": model.lam,
        "claims": endow.n_claims,
        "utility": util.kind if util.kind == "log" else f"power({util.p})",
    }
    _emit(report, args.report, started)
    return EXIT_OK


def cmd_cps(args) -> int:
    started = time.time()
    model, endow, util, digest = _load(args.file)
    report = _base_report("cps", digest)
    lam_prime = args.lambda_prime if args.lambda_prime is not None else model.lam
    try:
        cps = find_cps(model, lam_prime)
    except NoCPSError as exc:
        report["results"] = {"feasible": False, "error": str(exc),
                             "max_min_mass": exc.margin}
        _emit(report, args.report, started)
        return EXIT_NO_CPS
    res = cps.residuals(model, lam_prime)
    report["results"] = {
        "feasible": True,
        "lambda_prime": lam_prime,
        "q_cond": cps.q_cond.tolist(),
        "s_tilde": cps.s_tilde.tolist(),
        "min_mass": _val(cps.min_mass, 1e-9),
    }
    report["residuals"] = {k: _val(v, 1e-9) for k, v in res.items()}
    if args.price_of is not None:
        idx, p = int(args.price_of[0]), float(args.price_of[1])
        q = np.zeros(endow.n_claims)
        q[idx] = 1.0
        priced = cps_with_price(model, endow, q, p)
        report["results"]["price_query"] = {
            "claim": idx, "price": p, "status": priced.status,
            "interval": list(priced.interval),
        }
        if priced.cps is not None:
            report["results"]["price_query"]["q_cond"] = priced.cps.q_cond.tolist()
            report["results"]["price_query"]["s_tilde"] = priced.cps.s_tilde.tolist()
        if priced.status == "outside":
            _emit(report, args.report, started)
            return EXIT_NO_CPS
    _emit(report, args.report, started)
    return EXIT_OK


def cmd_superhedge(args) -> int:
    started = time.time()
    model, endow, util, digest = _load(args.file)
    report = _base_report("superhedge", digest)
    if args.claim is not None:
        claim = np.array([float(t) for t in args.claim.split(",")])
        if claim.size != model.tree.terminal.size:
            raise InstanceError("inline claim length must match terminal nodes")
    else:
        claim = endow.payoff[args.claim_index].copy()
    if args.side == "lower":
        claim = -claim
    try:
        res = superhedge_price(model, claim)
    except (SolverFailure, NoCPSError) as exc:
        report["results"] = {"error": str(exc)}
        _emit(report, args.report, started)
        return EXIT_NO_CPS if isinstance(exc, NoCPSError) else EXIT_SOLVER
    price = -res.price if args.side == "lower" else res.price
    report["results"] = {
        "side": args.side,
        "price": _val(price, 1e-8),
        "hedge_capital": _val(res.hedge_capital, 1e-8),
        "witness_q_cond": res.witness.q_cond.tolist(),
        "witness_equivalent": res.witness.equivalent,
        "hedge_trades": _portfolio_records(res.hedge),
    }
    report["residuals"] = {"lp_vs_hedge_gap": _val(res.gap, 1e-7)}
    _emit(report, args.report, started)
    return EXIT_OK


def cmd_solve(args) -> int:
    started = time.time()
    model, endow, util, digest = _load(args.file)
    report = _base_report("solve", digest)
    q = np.zeros(endow.n_claims)
    if args.q:
        given = np.array([float(t) for t in args.q.split(",")])
        if given.size != endow.n_claims:
            raise InstanceError(f"--q needs {endow.n_claims} entries")
        q = given
    try:
        primal = primal_solve(model, endow, args.x, q, util,
                              tol=args.tol, max_iter=args.max_iter)
    except (OutsideKError, ReplicableEndowmentError) as exc:
        report["results"] = {"error": str(exc)}
        _emit(report, args.report, started)
        return EXIT_OUTSIDE_K
    except SolverFailure as exc:
        report["results"] = {"error": str(exc)}
        _emit(report, args.report, started)
        return EXIT_SOLVER
    report["results"]["primal"] = {
        "u": _val(primal.value, 1e-6),
        "terminal_wealth": primal.wealth.tolist(),
        "trades": _portfolio_records(primal.portfolio),
    }
    report["residuals"]["primal_kkt"] = _val(primal.kkt_worst, 1e-7)
    if args.dual or args.shadow:
        dual = extract_dual_from_primal(model, endow, util, primal)
        report["results"]["dual"] = {
            "y": _val(dual.y, 1e-6),
            "r": _val(dual.r, 1e-6),
            "v": _val(dual.value, 1e-6),
        }
        report["residuals"]["duality_gap"] = _val(duality_gap(primal, dual), 1e-5)
        report["residuals"]["deflator_worst"] = _val(
            dual.deflator.worst_residual(model), 1e-6)
        try:
            solved = dual_solve(model, endow, dual.y, dual.r, util,
                                tol=args.tol, max_iter=args.max_iter)
            report["residuals"]["dual_solve_gap"] = _val(
                duality_gap(primal, solved), 1e-5)
        except DualPointError as exc:
            report["results"]["dual"]["solve_status"] = f"{exc.kind}: {exc}"
        if args.shadow:
            verdict = check_classic(model, endow, util, primal, dual)
            cand = candidate_shadow(model, dual)
            shadow = {
                "verdict": verdict.verdict,
                "s_hat": [None if not ok else float(s)
                          for ok, s in zip(cand.well_defined, cand.s_hat)],
                "value_gap": _val(verdict.value_gap, 1e-5),
            }
            if endow.n_claims >= 1 and np.any(q != 0.0):
                mpr = marginal_price_report(model, endow, args.x, q, util)
                shadow["marginal_prices"] = _val(mpr.prices, 1e-5)
                shadow["price_interval"] = list(np.atleast_1d(
                    np.asarray(mpr.interval)).ravel())
                shadow["prices_inside_interval"] = mpr.inside
            report["results"]["shadow"] = shadow
            report["residuals"]["shadow"] = {
                "y0_martingale": _val(verdict.y0_martingale_residual, 1e-6),
                "y1_martingale": _val(verdict.y1_martingale_residual, 1e-6),
                "price_match": _val(verdict.price_match_residual, 1e-6),
            }
    _emit(report, args.report, started)
    return EXIT_OK


def cmd_suite(args) -> int:
    started = time.time()
    report = _base_report("suite", None)
    suite = run_suite(seed=args.seed, count=args.count,
                      max_depth=args.max_depth, max_branch=args.max_branch,
                      inject_fault=args.inject_fault)
    report["results"] = suite.summary()
    report["results"]["checks"] = [c.as_dict() for c in suite.checks] \
        if args.full else f"{len(suite.checks)} checks"
    report["residuals"] = {
        "worst_by_check": {
            name: max(c.worst for c in suite.checks if c.name == name)
            for name in sorted({c.name for c in suite.checks})
        }
    }
    _emit(report, args.report, started)
    return EXIT_OK if suite.ok else EXIT_SUITE_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fdual",
        description="Consistent price systems, superhedging and utility "
                    "duality on finite event trees with transaction costs")
    p.add_argument("--version", action="version", version=f"fdual {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_file=True):
        if with_file:
            sp.add_argument("file", help="instance JSON document")
        sp.add_argument("--report", choices=("json", "text"), default="json")

    sp = sub.add_parser("validate", help="validate an instance document")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("cps", help="find a consistent price system")
    common(sp)
    sp.add_argument("--lambda-prime", type=float, default=None,
                    dest="lambda_prime", help="smaller cost level in (0, lambda]")
    sp.add_argument("--price-of", nargs=2, metavar=("CLAIM", "P"), default=None,
                    help="find a CPS pricing claim CLAIM at exactly P")
    sp.set_defaults(func=cmd_cps)

    sp = sub.add_parser("superhedge", help="two-sided superhedging of a claim")
    common(sp)
    group = sp.add_mutually_exclusive_group()
    group.add_argument("--claim", default=None,
                       help="inline terminal payoffs, comma separated")
    group.add_argument("--claim-index", type=int, default=0,
                       help="endowment claim index (default 0)")
    sp.add_argument("--side", choices=("upper", "lower"), default="upper")
    sp.set_defaults(func=cmd_superhedge)

    sp = sub.add_parser("solve", help="utility maximization and duality")
    common(sp)
    sp.add_argument("--x", type=float, required=True, help="initial capital")
    sp.add_argument("--q", default=None, help="claim holdings, comma separated")
    sp.add_argument("--dual", action="store_true",
                    help="extract and cross-check the dual solution")
    sp.add_argument("--shadow", action="store_true",
                    help="build and verify the shadow price candidate")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iter", type=int, default=200)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("suite", help="run the random property suite")
    common(sp, with_file=False)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--count", type=int, default=20)
    sp.add_argument("--max-depth", type=int, default=4)
    sp.add_argument("--max-branch", type=int, default=3)
    sp.add_argument("--full", action="store_true", help="list every check")
    sp.add_argument("--inject-fault", choices=FAULT_NAMES, default=None,
                    help="deliberately break one invariant (self-test)")
    sp.set_defaults(func=cmd_suite)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InstanceError as exc:
        print(f"invalid instance: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NoCPSError as exc:
        print(f"no consistent price system: {exc}", file=sys.stderr)
        return EXIT_NO_CPS
    except (OutsideKError, ReplicableEndowmentError) as exc:
        print(f"outside domain: {exc}", file=sys.stderr)
        return EXIT_OUTSIDE_K
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FileNotFoundError as exc:
        print(f"cannot read instance: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
