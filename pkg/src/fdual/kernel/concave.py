"""Separable concave maximization over linear constraints.

Problems have the form

    max  sum_j w_j * g_j(a_j'x + b_j) + c'x
    s.t. A x (<=,=,>=) rhs,   lo <= x <= hi,

with g_j one of log(t), t**alpha/alpha (alpha < 1, alpha != 0) or t (linear).
Strict-domain terms keep their argument positive.

The solver is a log-barrier interior-point method: a phase-1 LP maximizes
the smallest slack to certify a nonempty interior and to produce the start,
then damped Newton steps follow the central path.  Nonlinear term arguments
get their own coordinate, so the Hessian of objective plus barrier is
diagonal and each Newton step reduces to a dense Cholesky of E D E' over the
equality rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lp import (EMPTY_INTERIOR, EQ, GE, INFEASIBLE, LE, MAX_ITER, OPTIMAL,
                 UNBOUNDED, KKTResiduals, LinearProgram, LPBuilder, SolveReport,
                 solve_lp)

_REL_OF = {"<=": LE, "=": EQ, "==": EQ, ">=": GE}


@dataclass
class ConcaveTerm:
    """weight * g(cols.vals' x + offset) with g selected by kind."""

    weight: float
    kind: str                   # "log" | "power" | "linear"
    cols: np.ndarray
    vals: np.ndarray
    offset: float = 0.0
    exponent: float = 0.0       # for kind == "power"
    strict: bool = True

    def __post_init__(self):
        if self.kind not in ("log", "power", "linear"):
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.weight <= 0.0:
            raise ValueError("term weights must be positive")
        if self.kind == "power" and not (self.exponent < 1.0 and self.exponent != 0.0):
            raise ValueError("power term needs exponent < 1, != 0")
        self.cols = np.asarray(self.cols, dtype=int)
        self.vals = np.asarray(self.vals, dtype=float)
        if self.kind == "linear":
            self.strict = False

    def g(self, t):
        if self.kind == "log":
            return np.log(t)
        if self.kind == "power":
            return t ** self.exponent / self.exponent
        return t

    def dg(self, t):
        if self.kind == "log":
            return 1.0 / t
        if self.kind == "power":
            return t ** (self.exponent - 1.0)
        return np.ones_like(np.asarray(t, dtype=float))

    def d2g(self, t):
        if self.kind == "log":
            return -1.0 / t ** 2
        if self.kind == "power":
            return (self.exponent - 1.0) * t ** (self.exponent - 2.0)
        return np.zeros_like(np.asarray(t, dtype=float))

    def argument(self, x: np.ndarray) -> float:
        return float(x[self.cols] @ self.vals + self.offset)


@dataclass
class SeparableConcaveProgram:
    n: int
    terms: list[ConcaveTerm]
    A: np.ndarray
    rel: np.ndarray
    rhs: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    constant: float = 0.0

    def objective_value(self, x: np.ndarray) -> float:
        val = self.constant
        for t in self.terms:
            val += t.weight * t.g(t.argument(x))
        return float(val)

    def objective_gradient(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(self.n)
        for t in self.terms:
            np.add.at(g, t.cols, t.weight * t.dg(t.argument(x)) * t.vals)
        return g


class ConcaveBuilder:
    """Assembles a SeparableConcaveProgram row by row, like LPBuilder."""

    def __init__(self, n: int):
        self.n = n
        self.terms: list[ConcaveTerm] = []
        self._rows: list[tuple[np.ndarray, np.ndarray]] = []
        self._rel: list[int] = []
        self._rhs: list[float] = []
        self._lo = np.full(n, -np.inf)
        self._hi = np.full(n, np.inf)
        self.constant = 0.0

    def log_term(self, weight, cols, vals, offset=0.0):
        self.terms.append(ConcaveTerm(weight, "log", cols, vals, offset))
        return self

    def power_term(self, weight, exponent, cols, vals, offset=0.0):
        self.terms.append(ConcaveTerm(weight, "power", cols, vals, offset,
                                      exponent=exponent))
        return self

    def linear_term(self, weight, cols, vals, offset=0.0):
        self.terms.append(ConcaveTerm(weight, "linear", cols, vals, offset))
        return self

    def row(self, cols, vals, rel, rhs: float) -> int:
        rel = _REL_OF[rel] if isinstance(rel, str) else int(rel)
        self._rows.append((np.asarray(cols, dtype=int), np.asarray(vals, dtype=float)))
        self._rel.append(rel)
        self._rhs.append(float(rhs))
        return len(self._rows) - 1

    def bound(self, col: int, lo=-np.inf, hi=np.inf):
        self._lo[col], self._hi[col] = lo, hi
        return self

    def build(self) -> SeparableConcaveProgram:
        A = np.zeros((len(self._rows), self.n))
        for i, (cols, vals) in enumerate(self._rows):
            np.add.at(A[i], cols, vals)
        return SeparableConcaveProgram(
            n=self.n, terms=self.terms, A=A, rel=np.array(self._rel, dtype=int),
            rhs=np.array(self._rhs), lo=self._lo, hi=self._hi, constant=self.constant)


# ---------------------------------------------------------------------------
# Internal standardization
# ---------------------------------------------------------------------------

@dataclass
class _Internal:
    E: np.ndarray            # equality rows over v = [x, t_extra, slacks]
    h: np.ndarray
    n_x: int
    term_coord: np.ndarray   # coordinate carrying each term's argument (-1 linear)
    term_shift: np.ndarray   # argument = v[coord] + shift (bare-coordinate case)
    lo: np.ndarray           # per-coordinate lower barrier bound (-inf = none)
    hi: np.ndarray
    slack_of_row: np.ndarray
    eq_row_of_user: np.ndarray   # internal eq-row index of each user row (-1 for ineq? no: all)
    row_sign: np.ndarray         # +1 for <=, -1 for >=, 0 eq


def _standardize(prog: SeparableConcaveProgram) -> _Internal:
    n = prog.n
    m = prog.A.shape[0] if prog.A.size else 0
    extra: list[int] = []
    term_coord = np.full(len(prog.terms), -1, dtype=int)
    term_shift = np.zeros(len(prog.terms))
    for j, t in enumerate(prog.terms):
        if t.kind == "linear":
            continue
        if t.cols.size == 1 and t.vals[0] == 1.0:
            term_coord[j] = t.cols[0]
            term_shift[j] = t.offset
        else:
            extra.append(j)

    n_slack = int(np.count_nonzero(prog.rel != EQ)) if m else 0
    n_v = n + len(extra) + n_slack
    n_rows = m + len(extra)
    E = np.zeros((n_rows, n_v))
    h = np.zeros(n_rows)
    lo = np.full(n_v, -np.inf)
    hi = np.full(n_v, np.inf)
    lo[:n] = prog.lo
    hi[:n] = prog.hi

    slack_of_row = np.full(m, -1, dtype=int)
    row_sign = np.zeros(m, dtype=int)
    s = n + len(extra)
    for i in range(m):
        E[i, :n] = prog.A[i]
        h[i] = prog.rhs[i]
        if prog.rel[i] == LE:
            E[i, s] = 1.0
            slack_of_row[i] = s
            lo[s] = 0.0
            row_sign[i] = 1
            s += 1
        elif prog.rel[i] == GE:
            E[i, s] = -1.0
            slack_of_row[i] = s
            lo[s] = 0.0
            row_sign[i] = -1
            s += 1

    for k, j in enumerate(extra):
        t = prog.terms[j]
        coord = n + k
        term_coord[j] = coord
        r = m + k
        E[r, t.cols] = t.vals
        E[r, coord] = -1.0
        h[r] = -t.offset
        if t.strict:
            lo[coord] = 0.0

    # strict bare-coordinate terms need the coordinate itself kept positive
    for j, t in enumerate(prog.terms):
        if t.kind != "linear" and term_coord[j] < n and t.strict:
            lo[term_coord[j]] = max(lo[term_coord[j]], -term_shift[j])

    return _Internal(E=E, h=h, n_x=n, term_coord=term_coord, term_shift=term_shift,
                     lo=lo, hi=hi, slack_of_row=slack_of_row,
                     eq_row_of_user=np.arange(m), row_sign=row_sign)


def _phase1(prog: SeparableConcaveProgram, internal: _Internal):
    """max margin LP certifying a strictly feasible interior point."""
    n_v = internal.E.shape[1]
    bld = LPBuilder(n_v + 1, sense="max")
    margin = n_v
    bld.objective([margin], [1.0])
    bld.bound(margin, -np.inf, 1.0)
    for i in range(internal.E.shape[0]):
        cols = np.flatnonzero(internal.E[i])
        bld.row(cols, internal.E[i, cols], "=", internal.h[i])
    for k in range(n_v):
        if np.isfinite(internal.lo[k]):
            bld.row([k, margin], [1.0, -1.0], ">=", internal.lo[k])
        if np.isfinite(internal.hi[k]):
            bld.row([k, margin], [1.0, 1.0], "<=", internal.hi[k])
    rep = solve_lp(bld.build(), tol=1e-9, max_iter=300)
    if rep.status == INFEASIBLE:
        return None, -np.inf
    if rep.x is None:
        return None, -np.inf
    return rep.x[:n_v], float(rep.x[margin])


def _lift_start(prog, internal, x0: np.ndarray):
    """Embed a user-space start into internal coordinates; None if not interior."""
    n_v = internal.E.shape[1]
    v = np.zeros(n_v)
    v[:internal.n_x] = x0
    for j, t in enumerate(prog.terms):
        c = internal.term_coord[j]
        if c >= internal.n_x:
            v[c] = t.argument(x0)
    m = prog.A.shape[0] if prog.A.size else 0
    for i in range(m):
        s = internal.slack_of_row[i]
        if s >= 0:
            gap = prog.rhs[i] - float(prog.A[i] @ x0)
            v[s] = gap * internal.row_sign[i]
    margin = np.inf
    fin = np.isfinite(internal.lo)
    if fin.any():
        margin = min(margin, float(np.min(v[fin] - internal.lo[fin])))
    fin = np.isfinite(internal.hi)
    if fin.any():
        margin = min(margin, float(np.min(internal.hi[fin] - v[fin])))
    if margin <= 1e-12:
        return None
    if internal.E.size and np.max(np.abs(internal.E @ v - internal.h)) > 1e-7:
        return None
    return v


def _project_onto_rows(internal: _Internal, v: np.ndarray) -> np.ndarray:
    """Least-squares correction onto {Ev = h}; the phase-1 point is feasible
    only to LP tolerance and Newton ascent needs the rows exact."""
    E, h = internal.E, internal.h
    if not E.size:
        return v
    resid = h - E @ v
    if np.max(np.abs(resid)) <= 1e-14:
        return v
    corr, *_ = np.linalg.lstsq(E, resid, rcond=None)
    return v + corr


def _phi(prog, internal, v, mu):
    """Barrier objective; -inf outside the domain."""
    val = prog.constant
    for j, t in enumerate(prog.terms):
        if t.kind == "linear":
            val += t.weight * t.g(t.argument(v[:internal.n_x]))
            continue
        arg = v[internal.term_coord[j]] + (term_shift := internal.term_shift[j])
        if t.strict and arg <= 0.0:
            return -np.inf
        val += t.weight * t.g(arg)
    fin = np.isfinite(internal.lo)
    d = v[fin] - internal.lo[fin]
    if np.any(d <= 0.0):
        return -np.inf
    val += mu * float(np.sum(np.log(d)))
    fin = np.isfinite(internal.hi)
    d = internal.hi[fin] - v[fin]
    if np.any(d <= 0.0):
        return -np.inf
    val += mu * float(np.sum(np.log(d)))
    return val


def _grad_hess(prog, internal, v, mu):
    n_v = v.size
    g = np.zeros(n_v)
    H = np.zeros(n_v)
    for j, t in enumerate(prog.terms):
        if t.kind == "linear":
            np.add.at(g, t.cols, t.weight * t.vals)
            continue
        c = internal.term_coord[j]
        arg = v[c] + internal.term_shift[j]
        g[c] += t.weight * t.dg(arg)
        H[c] += t.weight * t.d2g(arg)
    fin = np.isfinite(internal.lo)
    d = v[fin] - internal.lo[fin]
    g[fin] += mu / d
    H[fin] -= mu / d ** 2
    fin = np.isfinite(internal.hi)
    d = internal.hi[fin] - v[fin]
    g[fin] -= mu / d
    H[fin] -= mu / d ** 2
    return g, H


def _polish_multipliers(prog, x, row_duals, lo_duals, hi_duals):
    """Crossover-lite: refit exact multipliers on the active set.

    Barrier multipliers at tightly-active coordinates carry the conditioning
    of the squared Hessian; a least-squares fit of the stationarity identity
    over active rows and bounds recovers clean values.  Wrong-signed fits
    are clipped and the reduced system refit once.
    """
    from .lp import EQ, GE, LE

    g = prog.objective_gradient(x)
    n = x.size
    m = prog.A.shape[0] if prog.A.size else 0
    scale = 1.0 + float(np.linalg.norm(g))
    athr = 1e-6

    cols = []
    specs = []  # (kind, index, sign) with sign 0 = free
    if m:
        ax = prog.A @ x
        for i in range(m):
            if prog.rel[i] == EQ:
                cols.append(prog.A[i])
                specs.append(("row", i, 0))
            else:
                gap = prog.rhs[i] - ax[i]
                if abs(gap) <= athr * (1.0 + abs(prog.rhs[i])):
                    cols.append(prog.A[i])
                    specs.append(("row", i, 1 if prog.rel[i] == LE else -1))
    for j in range(n):
        if np.isfinite(prog.lo[j]) and x[j] - prog.lo[j] <= athr * (1.0 + abs(x[j])):
            e = np.zeros(n)
            e[j] = 1.0
            cols.append(e)
            specs.append(("lo", j, -1))
        if np.isfinite(prog.hi[j]) and prog.hi[j] - x[j] <= athr * (1.0 + abs(x[j])):
            e = np.zeros(n)
            e[j] = 1.0
            cols.append(e)
            specs.append(("hi", j, 1))
    if not cols:
        return None
    B = np.array(cols).T  # n x k

    # fixed contribution of everything not being refit
    target = g.copy()
    if m:
        fit_rows = {s[1] for s in specs if s[0] == "row"}
        for i in range(m):
            if i not in fit_rows:
                target -= prog.A[i] * row_duals[i]
    fit_lo = {s[1] for s in specs if s[0] == "lo"}
    fit_hi = {s[1] for s in specs if s[0] == "hi"}
    for j in range(n):
        if j not in fit_lo:
            target[j] -= lo_duals[j]
        if j not in fit_hi:
            target[j] -= hi_duals[j]

    coef, *_ = np.linalg.lstsq(B, target, rcond=None)
    dropped: set[int] = set()
    for _ in range(len(specs)):
        bad = [k for k, s in enumerate(specs)
               if k not in dropped and s[2] != 0 and coef[k] * s[2] < -1e-12 * scale]
        if not bad:
            break
        dropped.update(bad)
        keep = [k for k in range(len(specs)) if k not in dropped]
        coef = np.zeros(len(specs))
        if keep:
            sub, *_ = np.linalg.lstsq(B[:, keep], target, rcond=None)
            coef[keep] = sub

    new_rows = row_duals.copy()
    new_lo = lo_duals.copy()
    new_hi = hi_duals.copy()
    for k, (kind, idx, _sign) in enumerate(specs):
        if kind == "row":
            new_rows[idx] = coef[k]
        elif kind == "lo":
            new_lo[idx] = coef[k]
        else:
            new_hi[idx] = coef[k]
    return new_rows, new_lo, new_hi


def solve_concave(prog: SeparableConcaveProgram, tol: float = 1e-8,
                  max_iter: int = 200, start: np.ndarray | None = None) -> SolveReport:
    """Interior-point maximization; multipliers use the sensitivity convention."""
    internal = _standardize(prog)
    v = None
    if start is not None:
        v = _lift_start(prog, internal, np.asarray(start, dtype=float))
    if v is None:
        v0, margin = _phase1(prog, internal)
        if v0 is None or margin < -1e-9:
            return SolveReport(status=INFEASIBLE,
                               message=f"phase-1 margin {margin:.3e}")
        if margin <= 1e-9:
            return SolveReport(status=EMPTY_INTERIOR,
                               message=f"phase-1 margin {margin:.3e}")
        v = v0
    v = _project_onto_rows(internal, v)

    E, h = internal.E, internal.h
    n_rows = E.shape[0]
    n_v = v.size
    # coordinates with neither curvature nor a barrier need the full KKT solve
    has_barrier = np.isfinite(internal.lo) | np.isfinite(internal.hi)
    curved = has_barrier.copy()
    for j, t in enumerate(prog.terms):
        if t.kind != "linear":
            curved[internal.term_coord[j]] = True
    use_kkt = bool(np.any(~curved))

    mu = 1.0
    mu_end = tol / 10.0
    w = np.zeros(n_rows)
    iters = 0
    diverged = False

    def newton_direction(g, H, resid, prefer_kkt=False):
        # relative curvature floor: coordinates with vanishing barrier weight
        # would otherwise make the normal equations numerically singular
        D = np.maximum(-H, 1e-300)
        D = np.maximum(D, 1e-10 * (1.0 + float(D.max())))
        if not (use_kkt or prefer_kkt):
            Dinv = 1.0 / D
            if n_rows:
                M = (E * Dinv) @ E.T
                ridge = 1e-13 * max(1.0, float(np.trace(M)) / max(1, n_rows))
                try:
                    L = np.linalg.cholesky(M + ridge * np.eye(n_rows))
                except np.linalg.LinAlgError:
                    L = np.linalg.cholesky(M + 1e-6 * np.eye(n_rows))
                rhs = E @ (Dinv * g) - resid
                wk = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
                wk += np.linalg.solve(L.T, np.linalg.solve(L, rhs - M @ wk))
                return Dinv * (g - E.T @ wk), wk
            return Dinv * g, np.zeros(0)
        # symmetric indefinite KKT system [H E'; E 0]
        K = np.zeros((n_v + n_rows, n_v + n_rows))
        K[:n_v, :n_v] = np.diag(H)
        if n_rows:
            K[:n_v, n_v:] = E.T
            K[n_v:, :n_v] = E
        rhs = np.concatenate([-g, resid])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            K[:n_v, :n_v] -= 1e-9 * np.eye(n_v)
            sol = np.linalg.solve(K, rhs)
        return sol[:n_v], -sol[n_v:]

    feas_tol = 1e-8 * (1.0 + (float(np.max(np.abs(h))) if n_rows else 0.0))

    def guarded_projection(vv):
        """Row projection scaled back if it would cross a barrier bound."""
        corr = _project_onto_rows(internal, vv) - vv
        alpha = 1.0
        for sign, bound in ((1.0, internal.lo), (-1.0, internal.hi)):
            fin = np.isfinite(bound)
            move = sign * corr[fin]
            gapv = sign * (vv[fin] - bound[fin])
            neg = move < 0
            if np.any(neg):
                alpha = min(alpha, 0.5 * float(np.min(-gapv[neg] / move[neg])))
        return vv + alpha * corr

    safe_v = v.copy()
    safe_feas = np.inf
    while True:
        # inner Newton loop at fixed mu
        final_stage = mu <= mu_end * 1.5
        target = 1e-7 if final_stage else 0.05
        best_dec = np.inf
        best_feas = np.inf
        stalled = 0
        for _ in range(80):
            if iters >= max_iter:
                break
            g, H = _grad_hess(prog, internal, v, mu)
            resid = h - E @ v if n_rows else np.zeros(0)
            feas = float(np.max(np.abs(resid))) if n_rows else 0.0
            if feas > 0.1 * feas_tol:
                v = guarded_projection(v)
                resid = h - E @ v
                feas = float(np.max(np.abs(resid)))
            if feas <= max(feas_tol, safe_feas):
                safe_v = v.copy()
                safe_feas = max(feas, 1e-300)
            elif feas > 1e3 * max(feas_tol, safe_feas):
                # direction quality collapsed; restore the last sound iterate
                v = safe_v.copy()
                break
            dv, w = newton_direction(g, H, resid, prefer_kkt=final_stage)
            decrement = float(np.sqrt(max(0.0, dv @ (np.maximum(-H, 0.0) * dv))))
            iters += 1
            if decrement <= target and feas <= feas_tol:
                break
            # roundoff floor of the Newton system: stop once no real progress
            improving = decrement < best_dec * 0.9 or feas < best_feas * 0.9
            best_dec = min(best_dec, decrement)
            best_feas = min(best_feas, feas)
            if improving:
                stalled = 0
            else:
                stalled += 1
                if stalled >= 6 and decrement <= (1e-4 if final_stage else target):
                    break

            # fraction-to-boundary then backtracking on the barrier objective
            ftb = 0.99 if mu > 1e-3 else (0.999 if mu > 1e-6 else 0.9999)
            alpha = 1.0
            for sign, bound in ((1.0, internal.lo), (-1.0, internal.hi)):
                fin = np.isfinite(bound)
                move = sign * dv[fin]
                gapv = sign * (v[fin] - bound[fin])
                neg = move < 0
                if np.any(neg):
                    alpha = min(alpha, ftb * float(np.min(-gapv[neg] / move[neg])))
            base = _phi(prog, internal, v, mu)
            slope = float(g @ dv)
            if slope > 1e-16:
                for _ in range(60):
                    cand = v + alpha * dv
                    if _phi(prog, internal, cand, mu) >= base + 0.01 * alpha * slope:
                        break
                    alpha *= 0.5
            elif feas > feas_tol:
                # restoration-dominated step: stay in the domain and do not
                # give up more than a bounded amount of barrier objective
                floor = base - 0.1 * (1.0 + abs(base))
                for _ in range(60):
                    if _phi(prog, internal, v + alpha * dv, mu) >= floor:
                        break
                    alpha *= 0.5
            else:
                break  # feasible and no ascent direction: numerically stationary
            v = v + alpha * dv
            if np.max(np.abs(v)) > 1e14:
                diverged = True
                break
        if diverged or iters >= max_iter or mu <= mu_end:
            break
        mu = max(mu * 0.15, mu_end)

    x = v[:internal.n_x]
    obj = prog.objective_value(x)
    # multipliers in the sensitivity convention (max problem: dval/drhs);
    # every user row is an equality row internally, so its Newton w applies
    n_user = prog.A.shape[0] if prog.A.size else 0
    row_duals = w[:n_user].copy() if w.size >= n_user else np.zeros(n_user)
    lo_duals = np.zeros(prog.n)
    hi_duals = np.zeros(prog.n)
    fin = np.isfinite(internal.lo[:prog.n])
    lo_duals[fin] = -mu / np.maximum(v[:prog.n][fin] - internal.lo[:prog.n][fin], 1e-300)
    fin = np.isfinite(internal.hi[:prog.n])
    hi_duals[fin] = mu / np.maximum(internal.hi[:prog.n][fin] - v[:prog.n][fin], 1e-300)

    from .kkt import check_kkt
    kkt = check_kkt(prog, x, row_duals, lo_duals, hi_duals)
    polished = _polish_multipliers(prog, x, row_duals, lo_duals, hi_duals)
    if polished is not None:
        p_kkt = check_kkt(prog, x, *polished)
        if p_kkt.worst() < kkt.worst():
            row_duals, lo_duals, hi_duals = polished
            kkt = p_kkt

    status = OPTIMAL
    msg = ""
    if diverged:
        status, msg = UNBOUNDED, "iterates diverged; objective likely unbounded"
    elif iters >= max_iter and kkt.worst() > tol:
        status, msg = MAX_ITER, "iteration budget exhausted"
    return SolveReport(status=status, x=x, objective=obj, row_duals=row_duals,
                       bound_duals_lo=lo_duals, bound_duals_hi=hi_duals,
                       kkt=kkt, iterations=iters, message=msg)
