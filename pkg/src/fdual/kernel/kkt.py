"""KKT residual evaluation for both kernel program types.

Multipliers follow the sensitivity convention used by the solvers:
row dual = d(optimal objective)/d(rhs) in the program's own sense, bound
duals likewise.  For a maximization this means nonnegative duals on <= rows,
nonpositive on >= rows, nonpositive on lower bounds.  Zero residuals are
equivalent to an exact KKT point.
"""

from __future__ import annotations

import numpy as np

from .lp import EQ, GE, LE, KKTResiduals, LinearProgram


def _gradient_and_sense(prog, x):
    from .concave import SeparableConcaveProgram

    if isinstance(prog, LinearProgram):
        sign = 1.0 if prog.sense == "max" else -1.0
        return sign * prog.c, sign  # residuals computed in max orientation
    if isinstance(prog, SeparableConcaveProgram):
        return prog.objective_gradient(x), 1.0
    raise TypeError(f"unsupported program type {type(prog)!r}")


def check_kkt(prog, x, row_duals, lo_duals=None, hi_duals=None) -> KKTResiduals:
    """Four residual norms at (x, multipliers); zero iff an exact KKT point."""
    x = np.asarray(x, dtype=float)
    row_duals = np.asarray(row_duals, dtype=float)
    n = x.size
    lo_duals = np.zeros(n) if lo_duals is None else np.asarray(lo_duals, dtype=float)
    hi_duals = np.zeros(n) if hi_duals is None else np.asarray(hi_duals, dtype=float)

    grad, sign = _gradient_and_sense(prog, x)
    row_duals = sign * row_duals
    lo_duals = sign * lo_duals
    hi_duals = sign * hi_duals

    A, rel, rhs = prog.A, prog.rel, prog.rhs
    lo, hi = prog.lo, prog.hi
    scale = 1.0 + float(np.linalg.norm(grad))

    stat = grad - (A.T @ row_duals if A.size else 0.0) - lo_duals - hi_duals
    stationarity = float(np.linalg.norm(stat, np.inf) / scale)

    primal = 0.0
    dual = 0.0
    comp = 0.0
    if A.size:
        ax = A @ x
        for i in range(rhs.size):
            gap = rhs[i] - ax[i]
            if rel[i] == LE:
                primal = max(primal, -gap)
                dual = max(dual, -row_duals[i])          # needs lambda >= 0
                comp = max(comp, abs(row_duals[i] * gap))
            elif rel[i] == GE:
                primal = max(primal, gap)
                dual = max(dual, row_duals[i])           # needs lambda <= 0
                comp = max(comp, abs(row_duals[i] * gap))
            else:
                primal = max(primal, abs(gap))
    fin = np.isfinite(lo)
    if fin.any():
        gap = x[fin] - lo[fin]
        primal = max(primal, float(np.max(-gap, initial=0.0)))
        dual = max(dual, float(np.max(lo_duals[fin], initial=0.0)))  # <= 0 expected
        comp = max(comp, float(np.max(np.abs(lo_duals[fin] * gap), initial=0.0)))
    fin = np.isfinite(hi)
    if fin.any():
        gap = hi[fin] - x[fin]
        primal = max(primal, float(np.max(-gap, initial=0.0)))
        dual = max(dual, float(np.max(-hi_duals[fin], initial=0.0)))  # >= 0 expected
        comp = max(comp, float(np.max(np.abs(hi_duals[fin] * gap), initial=0.0)))

    rhs_scale = 1.0 + (float(np.linalg.norm(rhs)) if A.size else 0.0)
    return KKTResiduals(stationarity, float(primal) / rhs_scale,
                        float(dual) / scale, float(comp) / scale)
