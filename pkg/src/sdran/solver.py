"""In-repo numerical engines.

Two pieces live here:

* ``solve_concave`` — a log-barrier interior-point method for maximizing a
  concave objective over affine equalities, affine inequalities, and box
  bounds, with damped Newton inner iterations.  Small problems use dense
  linear algebra; large strategy-table programs are solved through a
  diagonal-plus-low-rank (Woodbury) factorization so the per-step cost is
  driven by the number of constraint rows, not the variable count.

* The convex-concave procedure for difference-of-convex power programs
  (``DcLogProgram``): the concave part is replaced by its tangent at the
  reference point, the convexified problem is solved by the barrier method,
  and the reference is updated until the true objective stops improving.
  A batched driver solves many same-shaped instances in lockstep, which is
  what the per-state mapping-rule construction needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

__all__ = [
    "HessianParts",
    "ConcaveProgram",
    "SolveReport",
    "solve_concave",
    "DcLogProgram",
    "CcpLinearization",
    "CcpStop",
    "CcpResult",
    "convexify_f",
    "ccp_solve",
    "ccp_solve_batch",
]

_NEWTON_TOL = 1e-10     # decrement threshold for the inner Newton loop
_MU_SHRINK = 10.0       # barrier parameter divisor per outer stage
_MAX_NEWTON = 120       # per-stage Newton cap
_DENSE_LIMIT = 700      # above this variable count, use the structured path


@dataclass
class HessianParts:
    """Structured Hessian ``diag(d) + factors^T @ diag(coeffs) @ factors``.

    ``coeffs`` must be <= 0 for a concave objective.
    """

    diag: np.ndarray
    factors: Union[np.ndarray, sp.spmatrix]
    coeffs: np.ndarray

    def dense(self, n: int) -> np.ndarray:
        U = self.factors.toarray() if sp.issparse(self.factors) else np.asarray(self.factors)
        H = np.diag(self.diag) if self.diag.size else np.zeros((n, n))
        if U.size:
            H = H + (U.T * self.coeffs) @ U
        return H


@dataclass
class ConcaveProgram:
    """Maximize ``value(x)`` over an affinely constrained box.

    The objective callables must be defined (finite) on the interior of the
    feasible region; ``value`` may return ``-inf`` outside its domain, which
    the line search treats as a rejected step.  ``x0``, when given, must
    satisfy the equality constraints exactly and lie strictly inside the box;
    general inequalities may be violated (a phase-1 pass then runs first).
    """

    n: int
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], Union[np.ndarray, HessianParts]]
    a_eq: Optional[Union[np.ndarray, sp.spmatrix]] = None
    b_eq: Optional[np.ndarray] = None
    a_in: Optional[Union[np.ndarray, sp.spmatrix]] = None
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str  # "optimal", "infeasible", "max_iter"


class _Barrier:
    """One barrier solve: minimize -t*f(x) - sum log(slacks) over A_eq x = b."""

    def __init__(self, prog: ConcaveProgram, force_dense: Optional[bool] = None):
        n = prog.n
        self.prog = prog
        self.n = n
        self.lb = np.full(n, -np.inf) if prog.lb is None else np.asarray(prog.lb, float)
        self.ub = np.full(n, np.inf) if prog.ub is None else np.asarray(prog.ub, float)
        self.has_lb = np.isfinite(self.lb)
        self.has_ub = np.isfinite(self.ub)
        if prog.a_in is not None and prog.a_in.shape[0] > 0:
            self.a_in = sp.csr_matrix(prog.a_in)
            self.b_in = np.asarray(prog.b_in, float)
        else:
            self.a_in = None
            self.b_in = np.zeros(0)
        if prog.a_eq is not None and prog.a_eq.shape[0] > 0:
            self.a_eq = sp.csr_matrix(prog.a_eq)
            self.b_eq = np.asarray(prog.b_eq, float)
        else:
            self.a_eq = None
            self.b_eq = np.zeros(0)
        self.m_total = (self.a_in.shape[0] if self.a_in is not None else 0) \
            + int(self.has_lb.sum()) + int(self.has_ub.sum())
        self.dense = n <= _DENSE_LIMIT if force_dense is None else force_dense
        if self.dense and self.a_in is not None:
            self._a_in_dense = self.a_in.toarray()
        if self.dense and self.a_eq is not None:
            self._a_eq_dense = self.a_eq.toarray()

    # -- barrier pieces ----------------------------------------------------

    def slacks(self, x: np.ndarray) -> np.ndarray:
        if self.a_in is None:
            return np.zeros(0)
        return self.b_in - self.a_in @ x

    def interior(self, x: np.ndarray) -> bool:
        if np.any(x[self.has_lb] <= self.lb[self.has_lb]):
            return False
        if np.any(x[self.has_ub] >= self.ub[self.has_ub]):
            return False
        if self.a_in is not None and np.any(self.slacks(x) <= 0.0):
            return False
        return True

    def phi(self, x: np.ndarray, t: float) -> float:
        fx = self.prog.value(x)
        if not np.isfinite(fx):
            return math.inf
        out = -t * fx
        if self.a_in is not None:
            s = self.slacks(x)
            if np.any(s <= 0.0):
                return math.inf
            out -= float(np.sum(np.log(s)))
        dlo = x[self.has_lb] - self.lb[self.has_lb]
        dhi = self.ub[self.has_ub] - x[self.has_ub]
        if np.any(dlo <= 0.0) or np.any(dhi <= 0.0):
            return math.inf
        out -= float(np.sum(np.log(dlo))) + float(np.sum(np.log(dhi)))
        return out

    def grad_phi(self, x: np.ndarray, t: float) -> np.ndarray:
        g = -t * self.prog.grad(x)
        if self.a_in is not None:
            s = self.slacks(x)
            g += self.a_in.T @ (1.0 / s)
        g[self.has_lb] -= 1.0 / (x[self.has_lb] - self.lb[self.has_lb])
        g[self.has_ub] += 1.0 / (self.ub[self.has_ub] - x[self.has_ub])
        return g

    def _bound_diag(self, x: np.ndarray) -> np.ndarray:
        d = np.zeros(self.n)
        d[self.has_lb] += 1.0 / (x[self.has_lb] - self.lb[self.has_lb]) ** 2
        d[self.has_ub] += 1.0 / (self.ub[self.has_ub] - x[self.has_ub]) ** 2
        return d

    # -- Newton step -------------------------------------------------------

    def newton_step(self, x: np.ndarray, t: float) -> tuple[np.ndarray, float]:
        g = self.grad_phi(x, t)
        if self.dense:
            dx = self._newton_dense(x, t, g)
        else:
            dx = self._newton_structured(x, t, g)
        decrement = float(-g @ dx)
        return dx, decrement

    def _newton_dense(self, x: np.ndarray, t: float, g: np.ndarray) -> np.ndarray:
        hf = self.prog.hess(x)
        H = hf.dense(self.n) if isinstance(hf, HessianParts) else np.asarray(hf, float)
        H = -t * H
        if self.a_in is not None:
            s = self.slacks(x)
            A = self._a_in_dense
            H = H + (A.T * (1.0 / s**2)) @ A
        H[np.diag_indices(self.n)] += self._bound_diag(x)
        if self.a_eq is None:
            return _solve_spd(H, -g)
        A = self._a_eq_dense
        e = A.shape[0]
        K = np.zeros((self.n + e, self.n + e))
        K[:self.n, :self.n] = H
        K[:self.n, self.n:] = A.T
        K[self.n:, :self.n] = A
        rhs = np.concatenate([-g, np.zeros(e)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        return sol[:self.n]

    def _newton_structured(self, x: np.ndarray, t: float, g: np.ndarray) -> np.ndarray:
        """Newton direction through the sparse augmented KKT system.

        With the Hessian ``D + U^T C U`` and equality rows ``A``, solve

            [D    U^T   A^T] [dx]   [-g]
            [U  -C^{-1}  0 ] [u ] = [ 0]
            [A    0      0 ] [dy]   [ 0]

        by sparse LU.  A Woodbury/Schur elimination is catastrophically
        cancelled here: near-active barrier rows carry coefficients around
        1/s^2 ~ 1e16, and the equilibrium-constrained programs live with
        interiors that thin.  The pivoted factorization keeps the direction
        a descent direction all the way into the last barrier stages.
        """
        from scipy.sparse.linalg import splu

        hf = self.prog.hess(x)
        if not isinstance(hf, HessianParts):
            raise TypeError("structured path needs HessianParts from hess()")
        D = t * (-hf.diag) + self._bound_diag(x)
        if np.any(D <= 0.0):
            raise np.linalg.LinAlgError("structured path needs a positive diagonal")
        rows = []
        coeffs = []
        if hf.coeffs.size:
            rows.append(sp.csr_matrix(hf.factors))
            coeffs.append(t * (-hf.coeffs))
        if self.a_in is not None:
            s = self.slacks(x)
            rows.append(self.a_in)
            coeffs.append(1.0 / s**2)
        if rows:
            U = sp.vstack(rows, format="csr")
            c = np.concatenate(coeffs)
            keep = c > 1e-300
            U, c = U[keep], c[keep]
        else:
            U, c = sp.csr_matrix((0, self.n)), np.zeros(0)
        k = U.shape[0]
        e = self.a_eq.shape[0] if self.a_eq is not None else 0
        n = self.n
        if k == 0 and e == 0:
            return -g / D

        rhs = np.zeros(n + k + e)
        rhs[:n] = -g
        if e:
            A = self.a_eq
            kkt = sp.bmat([[sp.diags(D), U.T if k else None, A.T],
                           [U if k else None, sp.diags(-1.0 / c) if k else None, None],
                           [A, None, None]], format="csc")
        else:
            kkt = sp.bmat([[sp.diags(D), U.T],
                           [U, sp.diags(-1.0 / c)]], format="csc")
        lu = splu(kkt, permc_spec="COLAMD")
        sol = lu.solve(rhs)
        return sol[:n]


def _solve_spd(H: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        c = np.linalg.cholesky(H)
        return np.linalg.solve(c.T, np.linalg.solve(c, rhs))
    except np.linalg.LinAlgError:
        H = H + 1e-12 * np.eye(H.shape[0]) * max(1.0, np.abs(H).max())
        try:
            return np.linalg.solve(H, rhs)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(H, rhs, rcond=None)[0]


def _barrier_minimize(bar: _Barrier, x: np.ndarray, tol: float,
                      early_stop: Optional[Callable[[np.ndarray], bool]] = None,
                      t0: float = 1.0) -> tuple[np.ndarray, float, int, bool]:
    """Run barrier stages until the duality-gap proxy drops below ``tol``.

    Returns (x, final_t, newton_steps, hit_cap).
    """
    t = t0
    total_steps = 0
    m = max(bar.m_total, 1)
    while True:
        for _ in range(_MAX_NEWTON):
            if early_stop is not None and early_stop(x):
                return x, t, total_steps, False
            dx, dec = bar.newton_step(x, t)
            total_steps += 1
            if not np.isfinite(dec) or dec <= 0:
                break
            if dec / 2.0 <= _NEWTON_TOL:
                break
            phi0 = bar.phi(x, t)
            gTdx = -dec
            alpha = 1.0
            for _ in range(60):
                xn = x + alpha * dx
                if bar.phi(xn, t) <= phi0 + 0.25 * alpha * gTdx:
                    break
                alpha *= 0.5
            else:
                break
            x = x + alpha * dx
        if m / t <= tol:
            return x, t, total_steps, False
        if total_steps >= 40 * _MAX_NEWTON:
            return x, t, total_steps, True
        t *= _MU_SHRINK


def _kkt_residual(prog: ConcaveProgram, bar: _Barrier, x: np.ndarray, t: float) -> float:
    g = prog.grad(x)
    scale = max(1.0, float(np.max(np.abs(g))) if g.size else 1.0)
    stat = g.astype(float).copy()
    comp = 0.0
    if bar.a_in is not None:
        s = bar.slacks(x)
        lam = 1.0 / (t * s)
        stat -= bar.a_in.T @ lam
        comp = max(comp, float(np.max(lam * s)))  # == 1/t
    lo = bar.has_lb
    hi = bar.has_ub
    lam_lo = np.zeros(bar.n)
    lam_hi = np.zeros(bar.n)
    lam_lo[lo] = 1.0 / (t * (x[lo] - bar.lb[lo]))
    lam_hi[hi] = 1.0 / (t * (bar.ub[hi] - x[hi]))
    stat += lam_lo - lam_hi
    comp = max(comp, 1.0 / t if (lo.any() or hi.any()) else 0.0)
    if bar.a_eq is not None:
        # equality multipliers: least-squares fit of the residual onto A_eq^T
        A = bar.a_eq.toarray()
        nu, *_ = np.linalg.lstsq(A.T, stat, rcond=None)
        stat = stat - A.T @ nu
        primal_eq = float(np.max(np.abs(A @ x - bar.b_eq)))
    else:
        primal_eq = 0.0
    primal_in = 0.0
    if bar.a_in is not None:
        primal_in = max(0.0, float(np.max(bar.a_in @ x - bar.b_in)))
    primal_box = max(
        float(np.max(bar.lb[lo] - x[lo])) if lo.any() else 0.0,
        float(np.max(x[hi] - bar.ub[hi])) if hi.any() else 0.0,
    )
    return max(float(np.max(np.abs(stat))) / scale, primal_eq, primal_in, primal_box, comp)


def _phase1(prog: ConcaveProgram, tol: float) -> tuple[Optional[np.ndarray], int]:
    """Find a strictly feasible point for the general inequalities.

    Solves the shared-violation-slack problem ``min zeta s.t. Ax - b <= zeta``
    exactly as a linear program; a barrier pass cannot be trusted here
    because the equilibrium-constrained programs routinely leave interiors
    only ~1e-7 wide.  The LP vertex is then blended toward the box-interior
    start so the main barrier can take over.  Returns (point, iterations)
    or (None, iterations) when even the slack cannot go negative.
    """
    from scipy.optimize import linprog

    x0 = prog.x0
    n = prog.n
    a_in = sp.csr_matrix(prog.a_in)
    viol0 = float(np.max(a_in @ x0 - prog.b_in))
    lb = prog.lb if prog.lb is not None else np.full(n, -np.inf)
    ub = prog.ub if prog.ub is not None else np.full(n, np.inf)

    a_aug = sp.hstack([a_in, -np.ones((a_in.shape[0], 1))], format="csr")
    a_eq = None
    if prog.a_eq is not None and prog.a_eq.shape[0] > 0:
        a_eq = sp.hstack(
            [sp.csr_matrix(prog.a_eq), sp.csr_matrix((prog.a_eq.shape[0], 1))],
            format="csr")
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    bounds = [(float(lb[i]) if np.isfinite(lb[i]) else None,
               float(ub[i]) if np.isfinite(ub[i]) else None) for i in range(n)]
    bounds.append((None, max(1.0, 1.1 * viol0) + 1.0))
    res = linprog(cost, A_ub=a_aug, b_ub=prog.b_in,
                  A_eq=a_eq, b_eq=prog.b_eq if a_eq is not None else None,
                  bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-9})
    iters = int(getattr(res, "nit", 0) or 0)
    if res.status != 0 or res.fun >= 0.0:
        return None, iters
    x_lp = res.x[:n]
    zeta = float(res.fun)
    # pull the vertex strictly inside the box without re-violating the rows
    alpha = min(0.25, 0.5 * (-zeta) / max(-zeta + viol0, 1e-300))
    x = (1.0 - alpha) * x_lp + alpha * x0
    return x, iters


def solve_concave(prog: ConcaveProgram, tol: float = 1e-8) -> SolveReport:
    """Interior-point maximization of a concave program.

    Returns the iterate with its KKT residual (max of relative stationarity,
    primal feasibility, and complementarity).  ``status`` is ``infeasible``
    when phase 1 cannot produce a strictly feasible point.
    """
    if prog.x0 is None:
        raise ValueError("solve_concave requires a box-interior x0")
    x = np.asarray(prog.x0, float).copy()
    bar = _Barrier(prog)
    steps0 = 0
    if bar.a_in is not None and np.any(bar.slacks(x) <= 0.0):
        x_feas, steps0 = _phase1(prog, tol)
        if x_feas is None:
            return SolveReport(x=x, objective=-math.inf, kkt_residual=math.inf,
                               iterations=steps0, status="infeasible")
        x = x_feas
    if not bar.interior(x):
        raise ValueError("starting point is not strictly inside the box")

    x, t, steps, capped = _barrier_minimize(bar, x, tol)
    resid = _kkt_residual(prog, bar, x, t)
    status = "max_iter" if capped else "optimal"
    return SolveReport(x=x, objective=float(prog.value(x)),
                       kkt_residual=resid, iterations=steps0 + steps, status=status)


# ---------------------------------------------------------------------------
# Difference-of-convex power programs and the convex-concave procedure
# ---------------------------------------------------------------------------


@dataclass
class DcLogProgram:
    """Minimize ``f(x) + g(x)`` over per-group power budgets, where

    ``f(x) =  sum_i conc_w[i] * ln(conc_c[i] + conc_a[i] . x)``  (concave) and
    ``g(x) = -sum_j conv_w[j] * ln(conv_c[j] + conv_a[j] . x)``  (convex),

    with all weights nonnegative, over ``x >= 0`` and
    ``sum(x[group_ids == g]) <= budgets[g]``.
    """

    n: int
    conc_w: np.ndarray
    conc_c: np.ndarray
    conc_a: np.ndarray  # (k1, n)
    conv_w: np.ndarray
    conv_c: np.ndarray
    conv_a: np.ndarray  # (k2, n)
    group_ids: np.ndarray
    budgets: np.ndarray

    def f_value(self, x: np.ndarray) -> float:
        return float(self.conc_w @ np.log(self.conc_c + self.conc_a @ x))

    def f_grad(self, x: np.ndarray) -> np.ndarray:
        den = self.conc_c + self.conc_a @ x
        return (self.conc_w / den) @ self.conc_a

    def g_value(self, x: np.ndarray) -> float:
        return -float(self.conv_w @ np.log(self.conv_c + self.conv_a @ x))

    def objective(self, x: np.ndarray) -> float:
        return self.f_value(x) + self.g_value(x)

    def uniform_start(self) -> np.ndarray:
        x = np.zeros(self.n)
        for g, budget in enumerate(self.budgets):
            mask = self.group_ids == g
            x[mask] = budget / max(int(mask.sum()), 1)
        return x

    def feasible(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        if np.any(x < -tol):
            return False
        sums = np.bincount(self.group_ids, weights=x, minlength=len(self.budgets))
        return bool(np.all(sums <= self.budgets * (1 + 1e-9) + tol))


@dataclass
class CcpLinearization:
    """Tangent data of the concave part at the reference point."""

    k0: float
    k: np.ndarray
    ref: np.ndarray

    def value(self, x: np.ndarray) -> float:
        return self.k0 + float(self.k @ (x - self.ref))


@dataclass
class CcpStop:
    rel_change: float = 1e-6
    max_iter: int = 50


@dataclass
class CcpResult:
    x: np.ndarray
    objectives: list[float]
    iterations: int
    converged: bool


def convexify_f(prog: DcLogProgram, ref: np.ndarray) -> CcpLinearization:
    """First-order tangent of the concave part at ``ref``.

    Exact at the reference point; the tangent dominates the concave part
    everywhere else, which is what makes the outer loop monotone.
    """
    if not prog.feasible(ref, tol=1e-6):
        raise ValueError("reference point violates the relaxed power constraints")
    return CcpLinearization(k0=prog.f_value(ref), k=prog.f_grad(ref), ref=ref.copy())


def _group_rows(prog: DcLogProgram) -> sp.csr_matrix:
    rows = np.asarray(prog.group_ids)
    data = np.ones(prog.n)
    return sp.csr_matrix((data, (rows, np.arange(prog.n))),
                         shape=(len(prog.budgets), prog.n))


def _inner_program(prog: DcLogProgram, lin: CcpLinearization,
                   x0: np.ndarray) -> ConcaveProgram:
    """Convexified subproblem as a maximization (sign-flipped surrogate).

    The objective is normalized by its weight scale so that huge queue
    weights do not wreck the barrier Hessian's conditioning; the argmax is
    unaffected.
    """
    scale = max(1.0, float(prog.conv_w.max(initial=0.0)),
                float(np.abs(lin.k).max(initial=0.0)) * float(prog.budgets.sum()))
    w, c, A = prog.conv_w / scale, prog.conv_c, prog.conv_a
    k = lin.k / scale

    def value(x):
        arg = c + A @ x
        if np.any(arg <= 0.0):
            return -math.inf
        return float(w @ np.log(arg)) - float(k @ x)

    def grad(x):
        den = c + A @ x
        return (w / den) @ A - k

    def hess(x):
        den = c + A @ x
        return HessianParts(diag=np.zeros(prog.n), factors=A,
                            coeffs=-(w / den**2))

    return ConcaveProgram(
        n=prog.n, value=value, grad=grad, hess=hess,
        a_in=_group_rows(prog), b_in=np.asarray(prog.budgets, float),
        lb=np.zeros(prog.n), ub=None, x0=x0)


def ccp_solve(prog: DcLogProgram, x0: Optional[np.ndarray] = None,
              stop: CcpStop = CcpStop(), inner_tol: float = 1e-10) -> CcpResult:
    """Convex-concave procedure on one difference-of-convex instance.

    The true objective evaluated at the reference sequence is non-increasing;
    iteration stops on a relative-change test or the iteration cap.  A
    safeguarded over-relaxation doubles the reference step whenever the
    extrapolated point keeps improving, which removes the slow tail of the
    plain procedure along shallow valleys; the monotone trace is preserved
    because extrapolations are only accepted on strict improvement.  Returns
    the best reference seen.
    """
    ref = prog.uniform_start() if x0 is None else np.asarray(x0, float).copy()
    if not prog.feasible(ref, tol=1e-6):
        raise ValueError("initial point violates the relaxed power constraints")
    objs = [prog.objective(ref)]
    best_x, best_obj = ref.copy(), objs[0]
    converged = False
    it = 0
    for it in range(1, stop.max_iter + 1):
        lin = convexify_f(prog, ref)
        inner = _inner_program(prog, lin, _strict_interior(prog, ref))
        rep = solve_concave(inner, tol=inner_tol)
        if rep.status == "infeasible":
            raise RuntimeError(f"inner convex solve infeasible at CCP iteration {it}")
        new = rep.x
        obj = prog.objective(new)
        cand = _clip_feasible(prog, new + (new - ref))
        cand_obj = prog.objective(cand)
        if cand_obj < obj:
            new, obj = cand, cand_obj
        if obj > objs[-1]:
            # no descent left at solver precision: stop on the previous point
            converged = True
            break
        objs.append(obj)
        if obj < best_obj:
            best_obj, best_x = obj, new.copy()
        if abs(objs[-2] - obj) <= stop.rel_change * max(1.0, abs(objs[-2])):
            converged = True
            ref = new
            break
        ref = new
    return CcpResult(x=best_x, objectives=objs, iterations=it, converged=converged)


def _clip_feasible(prog: DcLogProgram, x: np.ndarray) -> np.ndarray:
    """Exact projection-by-scaling onto the relaxed power region."""
    x = np.maximum(x, 0.0)
    sums = np.bincount(prog.group_ids, weights=x, minlength=len(prog.budgets))
    scale = np.ones(len(prog.budgets))
    over = sums > prog.budgets
    scale[over] = prog.budgets[over] / np.maximum(sums[over], 1e-300)
    return x * scale[prog.group_ids]


def _strict_interior(prog: DcLogProgram, ref: np.ndarray) -> np.ndarray:
    """Pull a feasible point strictly inside the budget/positivity region."""
    x = np.maximum(ref, 0.0)
    sums = np.bincount(prog.group_ids, weights=x, minlength=len(prog.budgets))
    scale = np.ones(len(prog.budgets))
    over = sums > 0.98 * prog.budgets
    scale[over] = 0.98 * prog.budgets[over] / np.maximum(sums[over], 1e-300)
    x = x * scale[prog.group_ids]
    floor = 1e-8 * prog.budgets[prog.group_ids] / np.maximum(
        np.bincount(prog.group_ids, minlength=len(prog.budgets))[prog.group_ids], 1)
    return np.maximum(x, floor)


# -- batched CCP ------------------------------------------------------------


def ccp_solve_batch(progs: list[DcLogProgram], x0: Optional[np.ndarray] = None,
                    stop: CcpStop = CcpStop(), inner_tol: float = 1e-9) -> list[CcpResult]:
    """Lockstep CCP over same-shaped instances.

    All instances must share ``n``, term counts, group structure, and
    budgets.  Semantically equivalent to mapping ``ccp_solve`` over the
    list; the batched barrier Newton makes the per-frame mapping-rule
    construction affordable.
    """
    if not progs:
        return []
    p0 = progs[0]
    N, n = len(progs), p0.n
    conc_w = np.stack([p.conc_w for p in progs])
    conc_c = np.stack([p.conc_c for p in progs])
    conc_a = np.stack([p.conc_a for p in progs])
    conv_w = np.stack([p.conv_w for p in progs])
    conv_c = np.stack([p.conv_c for p in progs])
    conv_a = np.stack([p.conv_a for p in progs])
    group_ids, budgets = p0.group_ids, np.asarray(p0.budgets, float)
    ng = len(budgets)
    G = np.zeros((ng, n))
    G[group_ids, np.arange(n)] = 1.0

    def f_val(X):  # (N, n) -> (N,)
        return np.einsum("nk,nk->n", conc_w, np.log(conc_c + np.einsum("nkj,nj->nk", conc_a, X)))

    def g_val(X):
        return -np.einsum("nk,nk->n", conv_w, np.log(conv_c + np.einsum("nkj,nj->nk", conv_a, X)))

    def obj(X):
        return f_val(X) + g_val(X)

    if x0 is None:
        ref = np.tile(p0.uniform_start(), (N, 1))
    else:
        ref = np.array(x0, float, copy=True)
        if ref.ndim == 1:
            ref = np.tile(ref, (N, 1))

    objs = [obj(ref)]
    best_x, best_obj = ref.copy(), objs[0].copy()
    iters = np.zeros(N, dtype=int)
    converged = np.zeros(N, dtype=bool)
    for it in range(1, stop.max_iter + 1):
        act = np.nonzero(~converged)[0]
        grad_batch = np.einsum("nk,nkj->nj",
                               conc_w[act] / (conc_c[act]
                                              + np.einsum("nkj,nj->nk", conc_a[act], ref[act])),
                               conc_a[act])
        X_act = _batch_inner_solve(conv_w[act], conv_c[act], conv_a[act],
                                   grad_batch, G, budgets, ref[act], inner_tol)
        # safeguarded over-relaxation, accepted instance-wise on improvement
        cand = np.maximum(2.0 * X_act - ref[act], 0.0)
        sums = cand @ G.T
        over = sums > budgets[None, :]
        scale = np.where(over, budgets[None, :] / np.maximum(sums, 1e-300), 1.0)
        cand = cand * (scale @ G)
        X = ref.copy()
        X[act] = X_act
        Xc = ref.copy()
        Xc[act] = cand
        obj_plain = obj(X)
        obj_cand = obj(Xc)
        take = obj_cand < obj_plain
        X[take] = Xc[take]
        new_obj = np.where(take, obj_cand, obj_plain)
        # non-descent at solver precision: freeze those instances on their
        # previous point so the reported trace stays non-increasing
        stuck = new_obj > objs[-1]
        X[stuck] = ref[stuck]
        new_obj = np.where(stuck, objs[-1], new_obj)
        better = new_obj < best_obj
        best_obj = np.where(better, new_obj, best_obj)
        best_x[better] = X[better]
        done = stuck | (np.abs(objs[-1] - new_obj)
                        <= stop.rel_change * np.maximum(1.0, np.abs(objs[-1])))
        newly = done & ~converged
        iters[newly] = it
        converged |= done
        objs.append(new_obj)
        ref = X
        if converged.all():
            break
    iters[~converged] = stop.max_iter
    trace = np.stack(objs, axis=1)  # (N, iters+1)
    return [CcpResult(x=best_x[i], objectives=list(trace[i, :iters[i] + 1]),
                      iterations=int(iters[i]), converged=bool(converged[i]))
            for i in range(N)]


def _batch_inner_solve(w, c, A, K, G, budgets, ref, tol):
    """Batched barrier Newton for the convexified subproblems.

    maximize  sum_j w[j] ln(c[j] + A[j].x) - K.x   s.t.  Gx <= budgets, x >= 0

    The feasible step length is computed analytically (fraction to the
    nearest boundary), so the Armijo backtracking rarely needs more than a
    couple of merit evaluations; intermediate barrier stages only center
    loosely, with the tight Newton tolerance reserved for the last stage.
    """
    N, k, n = A.shape
    ng = G.shape[0]
    X = _strict_interior_batch(ref, G, budgets)
    m = ng + n  # inequality rows plus lower bounds, per instance

    # normalize each instance's objective by its weight scale: the argmin is
    # unchanged and the barrier Hessian stays in float64-friendly territory
    # even when the virtual queues (and hence the weights) run into the 1e4s
    scale = np.maximum(1.0, np.maximum(
        w.max(axis=1, initial=0.0),
        np.abs(K).max(axis=1, initial=0.0) * float(budgets.sum())))
    w = w / scale[:, None]
    K = K / scale[:, None]

    def phi(Xc, t):
        arg = c + np.einsum("nkj,nj->nk", A, Xc)
        s = budgets[None, :] - Xc @ G.T
        bad = (arg <= 0).any(axis=1) | (s <= 0).any(axis=1) | (Xc <= 0).any(axis=1)
        val = np.where(bad, np.inf,
                       -t * (np.einsum("nk,nk->n", w, np.log(np.where(arg > 0, arg, 1.0)))
                             - np.einsum("nj,nj->n", K, Xc))
                       - np.sum(np.log(np.where(s > 0, s, 1.0)), axis=1)
                       - np.sum(np.log(np.where(Xc > 0, Xc, 1.0)), axis=1))
        return val

    def max_feasible_step(Xc, dx):
        # largest alpha keeping every log argument strictly positive
        out = np.full(N, 1.0)
        for num, den in (
                (c + np.einsum("nkj,nj->nk", A, Xc), np.einsum("nkj,nj->nk", A, dx)),
                (budgets[None, :] - Xc @ G.T, -(dx @ G.T)),
                (Xc, dx)):
            shrink = den < 0
            ratios = np.where(shrink, num / np.where(shrink, -den, 1.0), np.inf)
            out = np.minimum(out, 0.995 * ratios.min(axis=1))
        return out

    # skip the early centering stages: these solves are warm-started and the
    # caller only needs the gap below tol, so start within a few shrinks of it
    t = max(1.0, m / max(1e3 * tol, 1e-4))
    total = 0
    while True:
        final = m / (t * _MU_SHRINK) <= tol or m / t <= tol
        newton_tol = _NEWTON_TOL if final else 1e-4
        for _ in range(60):
            arg = c + np.einsum("nkj,nj->nk", A, X)
            s = budgets[None, :] - X @ G.T
            g = -t * (np.einsum("nk,nkj->nj", w / arg, A) - K) \
                + (1.0 / s) @ G - 1.0 / X
            coef = t * w / arg**2
            H = np.einsum("nk,nki,nkj->nij", coef, A, A)
            H += np.einsum("ng,gi,gj->nij", 1.0 / s**2, G, G)
            H[:, np.arange(n), np.arange(n)] += 1.0 / X**2
            dx = np.linalg.solve(H, (-g)[..., None])[..., 0]
            dec = -np.einsum("nj,nj->n", g, dx)
            total += 1
            active = dec / 2.0 > newton_tol
            if not active.any():
                break
            alpha = np.where(active, max_feasible_step(X, dx), 0.0)
            phi0 = phi(X, t)
            for _ in range(30):
                Xn = X + alpha[:, None] * dx
                ok = phi(Xn, t) <= phi0 - 0.25 * alpha * dec + 1e-14
                need = active & ~ok
                if not need.any():
                    break
                alpha[need] *= 0.5
            X = X + alpha[:, None] * dx
        if m / t <= tol or total > 2000:
            return X
        t *= _MU_SHRINK


def _strict_interior_batch(ref, G, budgets):
    X = np.maximum(ref, 0.0)
    sums = X @ G.T
    scale = np.where(sums > 0.98 * budgets[None, :],
                     0.98 * budgets[None, :] / np.maximum(sums, 1e-300), 1.0)
    X = X * (scale @ G)
    counts = G.sum(axis=1)
    floor = 1e-8 * (budgets / np.maximum(counts, 1.0)) @ G
    return np.maximum(X, floor[None, :] if floor.ndim == 1 else floor)
