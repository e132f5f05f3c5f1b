"""Dense convex quadratic programming over two-sided linear inequalities.

Solves

    minimize    1/2 w' H w + g' w
    subject to  l <= A w <= u

with a primal-dual interior-point method (Mehrotra predictor-corrector on
the two-sided form), followed by an active-set polish that solves the
equality-constrained problem on the identified active rows.  Box
constraints are ordinary rows of A; one-sided rows use infinite bounds
(+-1e20 sentinels), and rows unbounded on both sides are dropped.

The problem is internally rescaled so the objective data has unit magnitude;
reported residuals and the duality gap refer to the scaled problem, while
the returned multipliers are unscaled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = ["QpProblem", "QpSolution", "QpError", "solve"]

INF_BOUND = 1e20
_DROP_THRESHOLD = 1e19
_REGULARIZATION = 1e-9
_TOL = 1e-9          # interior-point target on scaled residuals
_ACCEPT_TOL = 1e-8   # contract: residuals at or below this on success
_MAX_ITER = 200


class QpError(RuntimeError):
    """Structural problem defect (asymmetric or indefinite H, bad bounds)."""


@dataclass(frozen=True)
class QpProblem:
    """Data of one dense QP; H must be symmetric positive semidefinite."""

    H: np.ndarray
    g: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        g = np.asarray(self.g, dtype=float).ravel()
        A = np.asarray(self.A, dtype=float)
        A = A.reshape(0, H.shape[0]) if A.size == 0 else np.atleast_2d(A)
        l = np.asarray(self.l, dtype=float).ravel()
        u = np.asarray(self.u, dtype=float).ravel()
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "u", u)
        n = H.shape[0]
        if H.shape != (n, n) or g.size != n or A.shape[1] != n:
            raise QpError("inconsistent problem dimensions")
        if l.size != A.shape[0] or u.size != A.shape[0]:
            raise QpError("bound vectors must match the constraint row count")
        scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
        if H.size and np.max(np.abs(H - H.T)) > 1e-10 * scale:
            raise QpError("H is not symmetric")
        if np.any(l > u):
            raise QpError("lower bound exceeds upper bound on some row")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]


@dataclass
class QpSolution:
    w: np.ndarray
    lam: np.ndarray
    status: str
    iterations: int
    residuals: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _check_psd(H: np.ndarray) -> None:
    if H.size == 0:
        return
    w = np.linalg.eigvalsh(0.5 * (H + H.T))
    scale = max(1.0, float(abs(w[-1])))
    if w[0] < -1e-8 * scale:
        raise QpError(f"H is not positive semidefinite: smallest eigenvalue {w[0]:.6e}")


def _chol_solve(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        c = scipy.linalg.cho_factor(K, check_finite=False)
        return scipy.linalg.cho_solve(c, rhs, check_finite=False)
    except scipy.linalg.LinAlgError:
        return np.linalg.lstsq(K, rhs, rcond=None)[0]


def _max_step(x: np.ndarray, dx: np.ndarray, mask: np.ndarray) -> float:
    """Largest alpha in (0, 1] keeping x + alpha dx positive on mask."""
    neg = mask & (dx < 0.0)
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-x[neg] / dx[neg])))


def _kkt_residuals(H, g, A, l, u, fl, fu, w, y, t, s, z_l, z_u):
    r_stat = H @ w + g + (A.T @ y if A.size else 0.0)
    stat = float(np.max(np.abs(r_stat))) if r_stat.size else 0.0
    if A.size:
        v = A @ w
        viol = np.zeros_like(v)
        viol[fl] = np.maximum(viol[fl], l[fl] - v[fl])
        viol[fu] = np.maximum(viol[fu], v[fu] - u[fu])
        prim = float(np.max(viol)) if viol.size else 0.0
        comp_terms = []
        if np.any(fl):
            comp_terms.append(np.max(np.abs((v[fl] - l[fl]) * z_l[fl])))
        if np.any(fu):
            comp_terms.append(np.max(np.abs((u[fu] - v[fu]) * z_u[fu])))
        comp = float(max(comp_terms)) if comp_terms else 0.0
    else:
        prim = comp = 0.0
    return {"stationarity": stat, "primal": prim, "complementarity": comp}


def _polish(H, g, A, l, u, fl, fu, w, y, t, s, z_l, z_u, reg):
    """Equality solve on the active rows identified from the IPM iterate."""
    act_low = fl & (z_l > t)
    act_up = fu & (z_u > s) & ~act_low
    rows = np.flatnonzero(act_low | act_up)
    n = H.shape[0]
    if rows.size == 0:
        w_p = _chol_solve(H + reg * np.eye(n), -g)
        return w_p, np.zeros(A.shape[0])
    A_act = A[rows]
    b_act = np.where(act_low[rows], l[rows], u[rows])
    k = rows.size
    K = np.block([[H + reg * np.eye(n), A_act.T],
                  [A_act, -reg * np.eye(k)]])
    rhs = np.concatenate([-g, b_act])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    for _ in range(3):  # refine toward the unregularized KKT system
        r = rhs - K @ sol
        r[:n] += reg * sol[:n]
        r[n:] -= reg * sol[n:]
        sol = sol + np.linalg.lstsq(K, r, rcond=None)[0]
    w_p = sol[:n]
    y_p = np.zeros(A.shape[0])
    y_p[rows] = sol[n:]
    # dual signs: lower-active rows need y <= 0, upper-active y >= 0
    tol = 1e-7
    if np.any(y_p[rows][act_low[rows]] > tol) or np.any(y_p[rows][act_up[rows]] < -tol):
        return None
    return w_p, y_p


def solve(problem: QpProblem, warm_start: np.ndarray | None = None) -> QpSolution:
    """Solve the QP to KKT residuals at or below 1e-8 (scaled problem).

    Deterministic for identical inputs.  Raises QpError for structurally
    invalid problems; an unconverged solve returns status "max_iter" with
    the residuals reached.
    """
    _check_psd(problem.H)
    n = problem.n

    # objective scaling: unit-magnitude H, g
    alpha = max(1.0, float(np.max(np.abs(problem.H))) if problem.H.size else 1.0,
                float(np.max(np.abs(problem.g))) if problem.g.size else 1.0)
    H = problem.H / alpha
    g = problem.g / alpha

    # drop rows unbounded on both sides
    keep = ~((problem.l <= -_DROP_THRESHOLD) & (problem.u >= _DROP_THRESHOLD))
    A = problem.A[keep]
    l = problem.l[keep]
    u = problem.u[keep]
    m = A.shape[0]
    fl = l > -_DROP_THRESHOLD
    fu = u < _DROP_THRESHOLD

    reg = _REGULARIZATION

    def finish(w, y, iters, status):
        # complementarity needs the slack/dual split around y
        z_l = np.where(y < 0, -y, 0.0)
        z_u = np.where(y > 0, y, 0.0)
        if m:
            v = A @ w
            t = np.where(fl, v - l, np.inf)
            s = np.where(fu, u - v, np.inf)
        else:
            t = s = np.zeros(0)
        res = _kkt_residuals(H, g, A, l, u, fl, fu, w, y, t, s, z_l, z_u)
        lam = np.zeros(problem.m)
        lam[keep] = alpha * y
        primal_obj = 0.5 * w @ H @ w + g @ w
        dual_obj = -0.5 * w @ H @ w
        if m:
            dual_obj += float(np.sum(l[fl] * z_l[fl]) - np.sum(u[fu] * z_u[fu]))
        gap = abs(primal_obj - dual_obj)
        if status == "optimal" and max(res.values()) > _ACCEPT_TOL:
            status = "max_iter"
        return QpSolution(
            w=w, lam=lam, status=status, iterations=iters, residuals=res,
            diagnostics={
                "objective": float(alpha * primal_obj),
                "duality_gap": float(gap),
                "scale": alpha,
                "regularization": reg,
            },
        )

    if m == 0:
        w = _chol_solve(H + reg * np.eye(n), -g)
        return finish(w, np.zeros(0), 0, "optimal")

    # strictly interior starting point
    if warm_start is not None:
        w = np.asarray(warm_start, dtype=float).ravel().copy()
        if w.size != n:
            raise QpError("warm start has wrong dimension")
    else:
        w = _chol_solve(H + np.eye(n) * max(reg, 1e-6), -g)
    v = A @ w
    span = np.where(fl & fu, u - l, np.inf)
    margin = np.clip(0.01 * span, 1e-4, 1.0)
    margin[~np.isfinite(margin)] = 1.0
    lo_eff = np.where(fl, l, -np.inf)
    hi_eff = np.where(fu, u, np.inf)
    v = np.clip(v, lo_eff + np.where(fl, margin, 0.0),
                hi_eff - np.where(fu, margin, 0.0))
    t = np.where(fl, v - l, 1.0)
    s = np.where(fu, u - v, 1.0)
    z_l = np.where(fl, 1.0, 0.0)
    z_u = np.where(fu, 1.0, 0.0)
    y = z_u - z_l
    kappa = int(np.count_nonzero(fl) + np.count_nonzero(fu))

    best = (np.inf, w.copy(), y.copy(), t.copy(), s.copy(), z_l.copy(), z_u.copy())
    best_iter = 0
    iters = 0
    # slack divisions blow up only on infeasible data; the loop exits on
    # the non-finite check and the best finite iterate is restored below
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for iters in range(1, _MAX_ITER + 1):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(y))
                    and np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
                break  # blow-up (typically an infeasible problem); keep best
            res = _kkt_residuals(H, g, A, l, u, fl, fu, w, y, t, s, z_l, z_u)
            mu = (float(t[fl] @ z_l[fl]) + float(s[fu] @ z_u[fu])) / max(kappa, 1)

            worst = max(res.values())
            if worst < best[0]:
                best = (worst, w.copy(), y.copy(), t.copy(), s.copy(),
                        z_l.copy(), z_u.copy())
                best_iter = iters
            if worst <= _TOL:
                break
            if mu < 1e-14 and worst <= 1e-6:
                break  # stalled but close; polish decides
            if iters - best_iter > 30:
                break  # no progress; report the best point reached

            r_d = H @ w + g + A.T @ y
            r_p = A @ w - v

            Dl = np.where(fl, z_l / t, 0.0)
            Du = np.where(fu, z_u / s, 0.0)
            D = Dl + Du
            K = H + (A.T * D) @ A + reg * np.eye(n)
            try:
                cfac = scipy.linalg.cho_factor(K, check_finite=False)
                ksolve = lambda rhs: scipy.linalg.cho_solve(cfac, rhs, check_finite=False)
            except scipy.linalg.LinAlgError:
                ksolve = lambda rhs: np.linalg.lstsq(K, rhs, rcond=None)[0]

            def direction(r_cl, r_cu):
                h = np.where(fl, r_cl / t, 0.0) - np.where(fu, r_cu / s, 0.0)
                rhs = -r_d - A.T @ (D * r_p - h)
                dw = ksolve(rhs)
                dv = A @ dw + r_p
                dy = D * dv - h
                dz_l = np.where(fl, (r_cl - z_l * dv) / t, 0.0)
                dz_u = np.where(fu, (r_cu + z_u * dv) / s, 0.0)
                return dw, dv, dy, dz_l, dz_u

            # predictor (affine scaling)
            r_cl_aff = np.where(fl, -t * z_l, 0.0)
            r_cu_aff = np.where(fu, -s * z_u, 0.0)
            dw_a, dv_a, dy_a, dzl_a, dzu_a = direction(r_cl_aff, r_cu_aff)
            a_aff = min(_max_step(t, dv_a, fl), _max_step(s, -dv_a, fu),
                        _max_step(z_l, dzl_a, fl), _max_step(z_u, dzu_a, fu))
            mu_aff = (float((t + a_aff * dv_a)[fl] @ (z_l + a_aff * dzl_a)[fl])
                      + float((s - a_aff * dv_a)[fu] @ (z_u + a_aff * dzu_a)[fu])) / max(kappa, 1)
            sigma = (max(mu_aff, 0.0) / max(mu, 1e-300)) ** 3

            # corrector with second-order terms
            r_cl = np.where(fl, sigma * mu - t * z_l - dv_a * dzl_a, 0.0)
            r_cu = np.where(fu, sigma * mu - s * z_u + dv_a * dzu_a, 0.0)
            dw, dv, dy, dz_l, dz_u = direction(r_cl, r_cu)

            # one common step length: the quadratic term couples the primal step
            # into the dual residual, so separate steps would break the Newton
            # contraction of stationarity
            def step_len(dv_, dzl_, dzu_):
                a_ = min(_max_step(t, dv_, fl), _max_step(s, -dv_, fu),
                         _max_step(z_l, dzl_, fl), _max_step(z_u, dzu_, fu))
                return a_ * (0.995 if mu > 1e-8 else 0.9995)

            def mu_after(a_, dv_, dzl_, dzu_):
                return (float((t + a_ * dv_)[fl] @ (z_l + a_ * dzl_)[fl])
                        + float((s - a_ * dv_)[fu] @ (z_u + a_ * dzu_)[fu])) / max(kappa, 1)

            a = step_len(dv, dz_l, dz_u)
            # safeguard: when the second-order correction fails to reduce the
            # complementarity measure, retreat to a backtracked centering step
            # (whose measure derivative is negative, so backtracking terminates;
            # stationarity and primal residuals contract by (1 - a) either way)
            if mu_after(a, dv, dz_l, dz_u) > (1.0 - 0.01 * a) * mu:
                sigma_fb = max(sigma, 0.5)
                r_cl = np.where(fl, sigma_fb * mu - t * z_l, 0.0)
                r_cu = np.where(fu, sigma_fb * mu - s * z_u, 0.0)
                dw, dv, dy, dz_l, dz_u = direction(r_cl, r_cu)
                a = step_len(dv, dz_l, dz_u)
                while a > 1e-12 and mu_after(a, dv, dz_l, dz_u) > (1.0 - 0.005 * a) * mu:
                    a *= 0.5

            w = w + a * dw
            v = v + a * dv
            t = np.where(fl, v - l, 1.0)
            s = np.where(fu, u - v, 1.0)
            y = y + a * dy
            z_l = np.where(fl, z_l + a * dz_l, 0.0)
            z_u = np.where(fu, z_u + a * dz_u, 0.0)
            # keep multipliers strictly positive on finite sides
            z_l[fl] = np.maximum(z_l[fl], 1e-300)
            z_u[fu] = np.maximum(z_u[fu], 1e-300)

    finite = (np.all(np.isfinite(w)) and np.all(np.isfinite(y))
              and np.all(np.isfinite(t)) and np.all(np.isfinite(s)))
    if not finite or best[0] < max(
            _kkt_residuals(H, g, A, l, u, fl, fu, w, y, t, s, z_l, z_u).values()):
        _, w, y, t, s, z_l, z_u = best

    polished = _polish(H, g, A, l, u, fl, fu, w, y, t, s, z_l, z_u, reg)
    if polished is not None:
        w_p, y_p = polished
        z_l_p = np.where(y_p < 0, -y_p, 0.0)
        z_u_p = np.where(y_p > 0, y_p, 0.0)
        v_p = A @ w_p
        t_p = np.where(fl, v_p - l, 1.0)
        s_p = np.where(fu, u - v_p, 1.0)
        res_p = _kkt_residuals(H, g, A, l, u, fl, fu, w_p, y_p,
                               t_p, s_p, z_l_p, z_u_p)
        res_i = _kkt_residuals(H, g, A, l, u, fl, fu, w, y, t, s, z_l, z_u)
        # a near-exact active-set solution beats an interior iterate even if
        # the iterate's raw residuals happen to be marginally smaller
        if max(res_p.values()) <= max(max(res_i.values()), 1e-10):
            w, y = w_p, y_p

    sol = finish(w, y, iters, "optimal")
    return sol
