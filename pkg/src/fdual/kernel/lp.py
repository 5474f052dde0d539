"""Dense linear programming kernel.

Primal-dual path following on the homogeneous self-dual embedding with a
Mehrotra predictor-corrector step.  The normal equations A*diag(x/z)*A' are
factored with a dense Cholesky; desk-scale trees never need sparse algebra.
The embedding yields certificates for free: tau -> 0 with kappa > 0 exposes
a Farkas ray for infeasible problems and an unbounded improving ray for dual
infeasible (primal unbounded) ones.

Reported constraint duals follow the sensitivity convention: the dual of a
row is d(optimal objective)/d(rhs) in the problem's own sense, so for
``max x s.t. x <= 3`` the dual on the row is +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LE, EQ, GE = -1, 0, 1
_REL_OF = {"<=": LE, "=": EQ, "==": EQ, ">=": GE}

#: status strings shared by both kernel solvers
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max-iter"
EMPTY_INTERIOR = "empty-interior"


@dataclass
class KKTResiduals:
    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementarity: float

    def worst(self) -> float:
        return max(self.stationarity, self.primal_feasibility,
                   self.dual_feasibility, self.complementarity)

    def as_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "primal_feas": self.primal_feasibility,
            "dual_feas": self.dual_feasibility,
            "complementarity": self.complementarity,
        }


@dataclass
class SolveReport:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    row_duals: np.ndarray | None = None
    bound_duals_lo: np.ndarray | None = None
    bound_duals_hi: np.ndarray | None = None
    kkt: KKTResiduals | None = None
    iterations: int = 0
    certificate: np.ndarray | None = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class LinearProgram:
    """max/min c'x  s.t.  A x (<=,=,>=) rhs,  lo <= x <= hi."""

    c: np.ndarray
    A: np.ndarray
    rel: np.ndarray            # entries in {LE, EQ, GE}
    rhs: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sense: str = "max"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.A.size == 0:
            self.A = self.A.reshape(0, self.c.size)
        self.rel = np.asarray(self.rel, dtype=int)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        m, n = self.A.shape
        if self.c.shape != (n,) or self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("inconsistent column dimensions")
        if self.rel.shape != (m,) or self.rhs.shape != (m,):
            raise ValueError("inconsistent row dimensions")
        for arr in (self.c, self.A, self.rhs):
            if np.any(np.isnan(arr)):
                raise ValueError("NaN coefficient in linear program")
        if self.sense not in ("max", "min"):
            raise ValueError("sense must be 'max' or 'min'")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size


class LPBuilder:
    """Row-wise assembly of a LinearProgram from sparse coefficient lists."""

    def __init__(self, n: int, sense: str = "max"):
        self.n = n
        self.sense = sense
        self._c = np.zeros(n)
        self._lo = np.full(n, -np.inf)
        self._hi = np.full(n, np.inf)
        self._rows: list[tuple[np.ndarray, np.ndarray]] = []
        self._rel: list[int] = []
        self._rhs: list[float] = []

    def objective(self, cols, vals):
        self._c[np.asarray(cols, dtype=int)] = np.asarray(vals, dtype=float)
        return self

    def add_objective(self, col: int, val: float):
        self._c[col] += val
        return self

    def bound(self, col: int, lo=-np.inf, hi=np.inf):
        self._lo[col], self._hi[col] = lo, hi
        return self

    def bounds(self, lo, hi):
        self._lo[:] = lo
        self._hi[:] = hi
        return self

    def row(self, cols, vals, rel, rhs: float) -> int:
        rel = _REL_OF[rel] if isinstance(rel, str) else int(rel)
        self._rows.append((np.asarray(cols, dtype=int), np.asarray(vals, dtype=float)))
        self._rel.append(rel)
        self._rhs.append(float(rhs))
        return len(self._rows) - 1

    def build(self) -> LinearProgram:
        A = np.zeros((len(self._rows), self.n))
        for i, (cols, vals) in enumerate(self._rows):
            np.add.at(A[i], cols, vals)
        return LinearProgram(c=self._c, A=A, rel=np.array(self._rel, dtype=int),
                             rhs=np.array(self._rhs), lo=self._lo, hi=self._hi,
                             sense=self.sense)


# ---------------------------------------------------------------------------
# Standard-form conversion
# ---------------------------------------------------------------------------

@dataclass
class _StandardForm:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    sigma: float                  # +1 for min, -1 for max
    obj_shift: float              # user objective = sigma*(std value) + obj_shift
    col_of_var: list[tuple]       # per variable: ("shift",k,lo)|("mirror",k,hi)|("split",k1,k2)
    slack_of_row: np.ndarray      # std column index of the row slack, -1 for equalities
    ub_row_of_var: np.ndarray     # appended upper-bound row index, -1 if none
    n_user_rows: int


def _to_standard_form(lp: LinearProgram) -> _StandardForm:
    m, n = lp.A.shape
    sigma = 1.0 if lp.sense == "min" else -1.0

    cols: list[np.ndarray] = []
    ccoef: list[float] = []
    col_of_var: list[tuple] = []
    b = lp.rhs.astype(float).copy()
    obj_shift = 0.0
    ub_rows: list[tuple[int, float]] = []   # (std col, ub value) -> extra rows
    ub_row_of_var = np.full(n, -1, dtype=int)

    for j in range(n):
        a = lp.A[:, j]
        lo, hi = lp.lo[j], lp.hi[j]
        if np.isfinite(lo):
            k = len(cols)
            cols.append(a.copy())
            ccoef.append(sigma * lp.c[j])
            if lo != 0.0:
                b -= a * lo
                obj_shift += lp.c[j] * lo
            col_of_var.append(("shift", k, lo))
            if np.isfinite(hi):
                ub_rows.append((k, hi - lo))
                ub_row_of_var[j] = m + len(ub_rows) - 1
        elif np.isfinite(hi):
            k = len(cols)
            cols.append(-a)
            ccoef.append(-sigma * lp.c[j])
            b -= a * hi
            obj_shift += lp.c[j] * hi
            col_of_var.append(("mirror", k, hi))
        else:
            k = len(cols)
            cols.append(a.copy())
            cols.append(-a)
            ccoef.append(sigma * lp.c[j])
            ccoef.append(-sigma * lp.c[j])
            col_of_var.append(("split", k, k + 1))

    n_ub = len(ub_rows)
    m_std = m + n_ub
    n_core = len(cols)

    slack_of_row = np.full(m, -1, dtype=int)
    n_slack = int(np.count_nonzero(lp.rel != EQ)) + n_ub
    A = np.zeros((m_std, n_core + n_slack))
    for k, col in enumerate(cols):
        A[:m, k] = col
    b_std = np.concatenate([b, np.array([ub for _, ub in ub_rows])])
    for r, (k, _ub) in enumerate(ub_rows):
        A[m + r, k] = 1.0

    c_std = np.concatenate([np.array(ccoef), np.zeros(n_slack)])
    s = n_core
    for i in range(m):
        if lp.rel[i] == LE:
            A[i, s] = 1.0
            slack_of_row[i] = s
            s += 1
        elif lp.rel[i] == GE:
            A[i, s] = -1.0
            slack_of_row[i] = s
            s += 1
    for r in range(n_ub):
        A[m + r, s] = 1.0
        s += 1

    return _StandardForm(A=A, b=b_std, c=c_std, sigma=sigma, obj_shift=obj_shift,
                         col_of_var=col_of_var, slack_of_row=slack_of_row,
                         ub_row_of_var=ub_row_of_var, n_user_rows=m)


def _recover_x(sf: _StandardForm, xs: np.ndarray) -> np.ndarray:
    x = np.empty(len(sf.col_of_var))
    for j, spec in enumerate(sf.col_of_var):
        if spec[0] == "shift":
            x[j] = xs[spec[1]] + spec[2]
        elif spec[0] == "mirror":
            x[j] = spec[2] - xs[spec[1]]
        else:
            x[j] = xs[spec[1]] - xs[spec[2]]
    return x


# ---------------------------------------------------------------------------
# Homogeneous self-dual Mehrotra predictor-corrector
# ---------------------------------------------------------------------------

class _NormalEquations:
    """Cholesky of A diag(theta) A' with a growing ridge on breakdown."""

    def __init__(self, A: np.ndarray, theta: np.ndarray):
        self.A = A
        self.M = (A * theta) @ A.T
        ridge = 1e-14 * max(1.0, float(np.trace(self.M)) / max(1, self.M.shape[0]))
        eye = np.eye(self.M.shape[0])
        for _ in range(12):
            try:
                self.L = np.linalg.cholesky(self.M + ridge * eye)
                return
            except np.linalg.LinAlgError:
                ridge *= 100.0
        raise np.linalg.LinAlgError("normal equations irreparably singular")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        u = np.linalg.solve(self.L, rhs)
        sol = np.linalg.solve(self.L.T, u)
        # one refinement pass recovers digits lost to barrier ill-conditioning
        r = rhs - self.M @ sol
        u = np.linalg.solve(self.L, r)
        sol += np.linalg.solve(self.L.T, u)
        return sol


def _equilibrate(A, b, c):
    """One Ruiz-style pass of row/column scaling; returns scaled data and
    the scale vectors needed to map the solution back."""
    m, n = A.shape
    absA = np.abs(A)
    r = np.sqrt(absA.max(axis=1, initial=0.0))
    r[r == 0.0] = 1.0
    A1 = A / r[:, None]
    s = np.sqrt(np.abs(A1).max(axis=0, initial=0.0))
    s[s == 0.0] = 1.0
    A2 = A1 / s[None, :]
    return A2, b / r, c / s, r, s


def _hsd_solve(A, b, c, tol, max_iter):
    """Return (status, x, y, z, tau, kappa, iterations) for min c'x, Ax=b, x>=0."""
    m, n = A.shape
    if n == 0:
        return (OPTIMAL, np.zeros(0), np.zeros(m), np.zeros(0), 1.0, 0.0, 0)
    A, b, c, row_scale, col_scale = _equilibrate(A, b, c)
    x = np.ones(n)
    y = np.zeros(m)
    z = np.ones(n)
    tau, kappa = 1.0, 1.0
    norm_b, norm_c = 1.0 + np.linalg.norm(b), 1.0 + np.linalg.norm(c)
    best = None
    best_merit = np.inf
    worsening = 0

    def unscale(xs, ys, zs):
        return xs / col_scale, ys / row_scale, zs * col_scale

    def finish(status, xs, ys, zs, it):
        return (status, *unscale(xs, ys, zs), tau, kappa, it)

    it = 0
    for it in range(max_iter):
        # optimality check at the current scaled point
        xt, yt, zt = x / tau, y / tau, z / tau
        p_inf = np.linalg.norm(A @ xt - b) / norm_b
        d_inf = np.linalg.norm(A.T @ yt + zt - c) / norm_c
        gap = abs(c @ xt - b @ yt) / (1.0 + abs(b @ yt))
        merit = max(p_inf, d_inf, gap)
        if merit < best_merit:
            best_merit = merit
            best = (xt.copy(), yt.copy(), zt.copy())
        if merit <= tol:
            return finish(OPTIMAL, xt, yt, zt, it)

        mu = (x @ z + tau * kappa) / (n + 1)
        # ray detection: tau collapses while kappa stays alive
        if tau <= 1e-11 * max(1.0, kappa) and mu <= 1e-9:
            if c @ x < -1e-9 * max(1.0, np.linalg.norm(x)):
                return finish(UNBOUNDED, x, y, z, it)
            return finish(INFEASIBLE, x, y, z, it)
        # numerical floor or sustained divergence from the best point
        worsening = worsening + 1 if merit > 1e3 * max(best_merit, 1e-16) else 0
        if mu <= 1e-17 or worsening >= 4:
            xs, ys, zs = best
            status = OPTIMAL if best_merit <= tol else MAX_ITER
            return finish(status, xs, ys, zs, it)

        r_p = b * tau - A @ x
        r_d = c * tau - A.T @ y - z
        r_g = kappa + c @ x - b @ y

        theta = np.clip(x / z, 1e-18, 1e18)
        try:
            neq = _NormalEquations(A, theta)
        except np.linalg.LinAlgError:
            xs, ys, zs = best
            return finish(OPTIMAL if best_merit <= tol else MAX_ITER, xs, ys, zs, it)

        def direction(eta, r_xz, r_tk):
            f = eta * r_d - r_xz / x
            dy0 = neq.solve(eta * r_p + A @ (theta * f))
            dx0 = theta * (A.T @ dy0 - f)
            dy1 = neq.solve(b + A @ (theta * c))
            dx1 = theta * (A.T @ dy1 - c)
            denom = -c @ dx1 + b @ dy1 + kappa / tau
            if abs(denom) < 1e-300:
                denom = 1e-300
            dtau = (eta * r_g + c @ dx0 - b @ dy0 + r_tk / tau) / denom
            dx = dx0 + dtau * dx1
            dy = dy0 + dtau * dy1
            dz = (r_xz - z * dx) / x
            dkappa = (r_tk - kappa * dtau) / tau
            return dx, dy, dz, dtau, dkappa

        def max_step(dx, dz, dtau, dkappa):
            alpha = np.inf
            for v, dv in ((x, dx), (z, dz)):
                neg = dv < 0
                if np.any(neg):
                    alpha = min(alpha, np.min(-v[neg] / dv[neg]))
            if dtau < 0:
                alpha = min(alpha, -tau / dtau)
            if dkappa < 0:
                alpha = min(alpha, -kappa / dkappa)
            return alpha

        # predictor
        dxa, dya, dza, dta, dka = direction(1.0, -x * z, -tau * kappa)
        a_aff = min(1.0, max_step(dxa, dza, dta, dka))
        mu_aff = ((x + a_aff * dxa) @ (z + a_aff * dza)
                  + (tau + a_aff * dta) * (kappa + a_aff * dka)) / (n + 1)
        sig = np.clip((mu_aff / mu) ** 3, 1e-8, 1.0 - 1e-8)

        # corrector
        dx, dy, dz, dtau, dkappa = direction(
            1.0 - sig, sig * mu - x * z - dxa * dza, sig * mu - tau * kappa - dta * dka)
        alpha = min(1.0, 0.99995 * max_step(dx, dz, dtau, dkappa))
        if not np.isfinite(alpha) or alpha <= 0.0:
            xs, ys, zs = best
            return finish(OPTIMAL if best_merit <= tol else MAX_ITER, xs, ys, zs, it)

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        x = np.maximum(x, 1e-300)
        z = np.maximum(z, 1e-300)

    xs, ys, zs = best if best is not None else (x / tau, y / tau, z / tau)
    return finish(OPTIMAL if best_merit <= tol else MAX_ITER, xs, ys, zs, max_iter)


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------

def _primal_polish(A, b, xs, zs):
    """Least-squares re-solve of Ax = b on the complementary support.

    Normal-equation roundoff leaves the converged iterate with a primal
    residual floor; refitting the supported coordinates (x > z) removes it
    when the support is identified correctly.  Returns None when the fit
    leaves the nonnegative orthant.
    """
    scale = 1.0 + float(xs.max(initial=0.0))
    supp = (xs > zs) | (xs > 1e-8 * scale)
    if not np.any(supp):
        return None
    sub, *_ = np.linalg.lstsq(A[:, supp], b, rcond=None)
    if sub.size and float(sub.min()) < -1e-6 * (1.0 + float(np.abs(sub).max())):
        return None
    polished = np.zeros_like(xs)
    polished[supp] = np.maximum(sub, 0.0)
    return polished


def _kkt_from_standard(sf, xs, ys, zs) -> KKTResiduals:
    scale_b = 1.0 + np.linalg.norm(sf.b)
    scale_c = 1.0 + np.linalg.norm(sf.c)
    stat = float(np.linalg.norm(sf.A.T @ ys + zs - sf.c, np.inf) / scale_c)
    pf = float(np.linalg.norm(sf.A @ xs - sf.b, np.inf) / scale_b)
    df = float(max(0.0, -zs.min(initial=0.0)) / scale_c)
    comp = float(np.max(np.abs(xs * zs), initial=0.0) / scale_c)
    return KKTResiduals(stat, pf, df, comp)


def solve_lp(lp: LinearProgram, tol: float = 1e-8, max_iter: int = 200) -> SolveReport:
    """Solve the LP; on success the report carries primal values, row duals
    in the sensitivity convention and the four KKT residual norms."""
    sf = _to_standard_form(lp)
    status, xs, ys, zs, tau, kappa, it = _hsd_solve(sf.A, sf.b, sf.c, tol, max_iter)

    if status in (INFEASIBLE, UNBOUNDED):
        if status == INFEASIBLE:
            cert = sf.sigma * ys[:sf.n_user_rows]
            msg = "primal infeasible (Farkas ray on the row duals)"
        else:
            cert = _recover_x(sf, xs)
            msg = "objective unbounded along the returned ray"
        return SolveReport(status=status, certificate=cert, iterations=it, message=msg)

    kkt_raw = _kkt_from_standard(sf, xs, ys, zs)
    polished = _primal_polish(sf.A, sf.b, xs, zs)
    if polished is not None:
        kkt_pol = _kkt_from_standard(sf, polished, ys, zs)
        if kkt_pol.worst() < kkt_raw.worst():
            xs = polished
            kkt_raw = kkt_pol
    if status == MAX_ITER and kkt_raw.worst() <= tol:
        status = OPTIMAL

    x = _recover_x(sf, xs)
    obj = float(lp.c @ x)
    row_duals = sf.sigma * ys[:sf.n_user_rows]
    lo_d = np.zeros(lp.n_vars)
    hi_d = np.zeros(lp.n_vars)
    for j, spec in enumerate(sf.col_of_var):
        if spec[0] == "shift":
            lo_d[j] = sf.sigma * zs[spec[1]]
            r = sf.ub_row_of_var[j]
            if r >= 0:
                hi_d[j] = sf.sigma * ys[r]
        elif spec[0] == "mirror":
            hi_d[j] = sf.sigma * zs[spec[1]]
    kkt = kkt_raw

    if status == MAX_ITER:
        return SolveReport(status=MAX_ITER, x=x, objective=obj, row_duals=row_duals,
                           bound_duals_lo=lo_d, bound_duals_hi=hi_d, kkt=kkt,
                           iterations=it, message="iteration limit; best iterate returned")
    return SolveReport(status=OPTIMAL, x=x, objective=obj, row_duals=row_duals,
                       bound_duals_lo=lo_d, bound_duals_hi=hi_d, kkt=kkt, iterations=it)


def solve_lp_robust(lp: LinearProgram, tol: float = 1e-10, max_iter: int = 300,
                    accept: float = 3e-8):
    """solve_lp with a second, looser-target attempt on residual stalls.

    Returns (report, ok): ok means the report's residuals are within the
    acceptance level even when the requested tolerance was unattainable at
    the numerical floor.
    """
    rep = solve_lp(lp, tol=tol, max_iter=max_iter)
    if rep.status in (INFEASIBLE, UNBOUNDED):
        return rep, False
    if rep.optimal or (rep.kkt is not None and rep.kkt.worst() <= accept):
        return rep, True
    rep = solve_lp(lp, tol=1e-8, max_iter=max_iter)
    if rep.status in (INFEASIBLE, UNBOUNDED):
        return rep, False
    ok = rep.optimal or (rep.kkt is not None and rep.kkt.worst() <= accept)
    return rep, ok


def lp_duality_gap(lp: LinearProgram, report: SolveReport) -> float:
    """|primal objective - dual objective| from the reported multipliers."""
    if report.x is None or report.row_duals is None:
        return np.inf
    dual_obj = float(report.row_duals @ lp.rhs)
    finite_lo = np.isfinite(lp.lo)
    finite_hi = np.isfinite(lp.hi)
    dual_obj += float(report.bound_duals_lo[finite_lo] @ lp.lo[finite_lo])
    dual_obj += float(report.bound_duals_hi[finite_hi] @ lp.hi[finite_hi])
    return abs(float(lp.c @ report.x) - dual_obj)
