"""Receding-horizon controller assembly and stepping.

Design time (once per controller): discretize the model and the objective,
solve the stationary filter, condense the state recursion into
x_k = b_k + Gamma_k u, and precompute the constant Hessian blocks.  Step
time (every controller period): filter the measurement, shift references
and soft bounds by the predicted noise output, rebuild the gradient,
solve one dense QP over [u; xi; eta] and apply the first input block.

Two designs share all of this machinery: the sampled-data design whose
weights are the exact discrete equivalents of the continuous objective,
and a conventional discrete-time baseline that applies the continuous
weights directly to the sampled tracking error z_{k+1} - zbar_{k+1} and to
the input increments.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .discretization import (
    DiscreteCost,
    DiscreteSystem,
    Weights,
    build_discrete_cost,
    discretize_model,
)
from .kalman import FilterState, StationaryFilter, filter_update, solve_dare
from .qp import INF_BOUND, QpProblem, QpSolution, solve
from .realization import realize_ns

__all__ = [
    "ControllerDesign",
    "StepInputs",
    "StepResult",
    "build_condensing",
    "build_tracking_block",
    "build_rom_eco_block",
    "build_soft_block",
    "build_constraints",
    "design_controller",
    "step",
    "QpStepError",
]


class QpStepError(RuntimeError):
    """QP failure inside a controller step, with the solver diagnostics."""

    def __init__(self, message: str, solution: QpSolution):
        super().__init__(message)
        self.solution = solution


def build_condensing(A_d: np.ndarray, B_d: np.ndarray, N: int):
    """Powers of A and input-response maps for the condensed recursion.

    Returns (A_pow, Gamma) with A_pow[k] = A^k and Gamma[k] the map from the
    stacked input vector to x_k, for k = 0..N; Gamma[0] = 0 and
    Gamma[k+1] = A Gamma[k] + B I_k.  The extra entry at k = N serves the
    stage-N output constraints.
    """
    if N < 1:
        raise ValueError(f"horizon must be at least 1, got {N}")
    n, nu = B_d.shape
    A_pow = [np.eye(n)]
    Gamma = [np.zeros((n, N * nu))]
    for k in range(N):
        G_next = A_d @ Gamma[k]
        G_next[:, k * nu : (k + 1) * nu] += B_d
        Gamma.append(G_next)
        A_pow.append(A_d @ A_pow[k])
    return A_pow, Gamma


def build_tracking_block(Q: np.ndarray, Gamma: list, N: int, n_u: int):
    """Constant Hessian of the tracking objective over the stacked inputs.

    H = sum_k [Gamma_k; I_k]' Q [Gamma_k; I_k]; the matching gradient
    depends on the state and references and is built per step.
    """
    nU = N * n_u
    H = np.zeros((nU, nU))
    n = Gamma[0].shape[0]
    for k in range(N):
        T = np.zeros((n + n_u, nU))
        T[:n, :] = Gamma[k]
        T[n:, k * n_u : (k + 1) * n_u] = np.eye(n_u)
        H += T.T @ Q @ T
    return 0.5 * (H + H.T)


def tracking_gradient(Q: np.ndarray, M: np.ndarray, Gamma: list, A_pow: list,
                      x0: np.ndarray, refs: np.ndarray, N: int, n_u: int):
    """Gradient of the tracking objective at the current state.

    refs[k] stacks the (already noise-shifted) output and input references
    of stage k; the stage linear term is q_k = M refs[k] and the free
    response enters through b_k = A^k x0.
    """
    n = x0.size
    nU = N * n_u
    g = np.zeros(nU)
    for k in range(N):
        b_k = A_pow[k] @ x0
        q_k = M @ refs[k]
        v = Q[:, :n] @ b_k + q_k          # Q [b_k; 0] + q_k
        g += Gamma[k].T @ v[:n]
        g[k * n_u : (k + 1) * n_u] += v[n:]
    return g


def tracking_constant(Q: np.ndarray, M: np.ndarray, cost: DiscreteCost,
                      A_pow: list, x0: np.ndarray, refs: np.ndarray, N: int,
                      n_z: int):
    """Decision-independent part of the tracking objective (for reporting)."""
    n = x0.size
    c = 0.0
    for k in range(N):
        b_k = A_pow[k] @ x0
        q_k = M @ refs[k]
        c += 0.5 * b_k @ Q[:n, :n] @ b_k + q_k[:n] @ b_k
        c += cost.rho(refs[k][:n_z], refs[k][n_z:])
    return c


def build_rom_eco_block(QbarDu: np.ndarray, QDu: np.ndarray, N: int, n_u: int):
    """Constant Hessian of the input rate-of-movement penalty."""
    nU = N * n_u
    H = np.zeros((nU, nU))
    for k in range(1, N):
        sl_k = slice(k * n_u, (k + 1) * n_u)
        sl_p = slice((k - 1) * n_u, k * n_u)
        H[sl_k, sl_k] += QbarDu[:n_u, :n_u]
        H[sl_k, sl_p] += QbarDu[:n_u, n_u:]
        H[sl_p, sl_k] += QbarDu[n_u:, :n_u]
        H[sl_p, sl_p] += QbarDu[n_u:, n_u:]
    H[:n_u, :n_u] += QDu
    return 0.5 * (H + H.T)


def rom_eco_gradient(QDu: np.ndarray, q_eco: np.ndarray, u_prev: np.ndarray,
                     N: int, n_u: int):
    """Gradient of the movement and economic terms.

    The coupling to the pre-horizon input enters once, through the first
    stage increment u_0 - u_prev.
    """
    g = np.tile(q_eco, N)
    g[:n_u] += -QDu @ u_prev
    return g


def build_soft_block(cost: DiscreteCost, N: int):
    """Block-diagonal slack penalty (H, g) over [xi_1..xi_N; eta_1..eta_N]."""
    if N < 1:
        raise ValueError(f"horizon must be at least 1, got {N}")
    H_xi = np.kron(np.eye(N), cost.Qxi)
    H_eta = np.kron(np.eye(N), cost.Qeta)
    H = scipy.linalg.block_diag(H_xi, H_eta)
    g = np.concatenate([np.tile(cost.qxi, N), np.tile(cost.qeta, N)])
    return H, g


@dataclass(frozen=True)
class ControllerDesign:
    """Everything that is constant over a closed-loop run.

    Immutable once built; step() carries its own mutable state alongside.
    kind is "sampled" (exact continuous-cost equivalents) or "discrete"
    (weights applied directly to sampled errors).
    """

    system: DiscreteSystem
    cost: DiscreteCost
    filter: StationaryFilter
    N: int
    A_pow: list
    Gamma: list
    H_track: np.ndarray
    H_rom: np.ndarray
    H_soft: np.ndarray
    g_soft: np.ndarray
    kind: str = "sampled"

    @property
    def n_x(self) -> int:
        return self.system.A_d.shape[0]

    @property
    def n_u(self) -> int:
        return self.system.B_d.shape[1]

    @property
    def n_z(self) -> int:
        return self.system.C_d.shape[0]

    @property
    def Ts(self) -> float:
        return self.system.Ts

    @property
    def H(self) -> np.ndarray:
        """Full constant Hessian over [u; xi; eta]."""
        return scipy.linalg.block_diag(self.H_track + self.H_rom, self.H_soft)


@dataclass
class StepInputs:
    """Per-step data: previews over the horizon plus the current measurement.

    zbar/ubar are (N, n_z)/(N, n_u) previews; bound previews may be None
    (unconstrained) or (N, dim) arrays with +-inf entries allowed.  u_prev
    is the input applied over the previous period.
    """

    zbar: np.ndarray
    ubar: np.ndarray
    y: np.ndarray
    u_prev: np.ndarray
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None
    du_min: np.ndarray | None = None
    du_max: np.ndarray | None = None
    z_min: np.ndarray | None = None
    z_max: np.ndarray | None = None


@dataclass
class StepResult:
    u: np.ndarray
    filter_state: FilterState
    x_next: np.ndarray
    u_plan: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    qp: QpSolution
    objective: float
    innovation: np.ndarray


def design_controller(G, H, weights: Weights, Ts: float, N: int,
                      Rww_c=None, Rvv=None, kind: str = "sampled",
                      P0_s=None) -> ControllerDesign:
    """Build a controller from transfer-function models (design algorithm).

    G is the deterministic model, H the noise model (may be None).  kind
    selects the sampled-data design or the conventional discrete baseline.
    """
    ns = realize_ns(G, H, P0_s=P0_s)
    if Rww_c is None:
        Rww_c = np.eye(ns.n_w)
    if Rvv is None:
        Rvv = 1e-12 * np.eye(ns.n_z)
    system = discretize_model(ns, Ts, Rww_c, Rvv)
    filt = solve_dare(system.A_s, system.C_s, system.R_ww, system.R_vv)

    if kind == "sampled":
        cost = build_discrete_cost(system.stacked, weights)
    elif kind == "discrete":
        cost = _discrete_baseline_cost(system, weights)
    else:
        raise ValueError(f"unknown controller kind {kind!r}")

    A_pow, Gamma = build_condensing(system.A_d, system.B_d, N)
    n_u = system.B_d.shape[1]

    if kind == "sampled":
        H_track = build_tracking_block(cost.Q, Gamma, N, n_u)
    else:
        H_track = _discrete_tracking_block(system, cost, Gamma, N)
    H_rom = build_rom_eco_block(cost.QbarDu, cost.QDu, N, n_u)
    H_soft, g_soft = build_soft_block(cost, N)

    return ControllerDesign(
        system=system, cost=cost, filter=filt, N=N,
        A_pow=A_pow, Gamma=Gamma,
        H_track=H_track, H_rom=H_rom, H_soft=H_soft, g_soft=g_soft,
        kind=kind,
    )


def _discrete_baseline_cost(system: DiscreteSystem, weights: Weights) -> DiscreteCost:
    """Weights applied directly in discrete time: no period scaling anywhere.

    The tracking matrices (Q, M) are expressed on the sampled output at the
    next stage, so they are kept in output coordinates here and expanded by
    the baseline tracking block below; Q/M fields carry the output-space
    weight for reporting symmetry.
    """
    nz = system.C_d.shape[0]
    nu = system.B_d.shape[1]
    Qzt = scipy.linalg.block_diag(weights.Qcz, weights.Qcu)
    return DiscreteCost(
        Q=Qzt, M=-Qzt, QDu=weights.QcDu.copy(),
        QbarDu=np.block([[weights.QcDu, -weights.QcDu],
                         [-weights.QcDu, weights.QcDu]]),
        q_eco=weights.qceco.copy(),
        Qxi=weights.Qcxi.copy(), Qeta=weights.Qceta.copy(),
        qxi=weights.qcxi.copy(), qeta=weights.qceta.copy(),
        Q_czt=scipy.linalg.block_diag(weights.Qcz, weights.Qcu), Ts=system.Ts,
    )


def _output_maps(system: DiscreteSystem, Gamma: list, A_pow: list, N: int):
    """Per-stage maps z_{k+j} = C A^j x + P_j u for j = 1..N.

    The stage-N feedthrough column reuses the last input (inputs are held
    beyond the horizon).
    """
    C, D = system.C_d, system.D_d
    n_u = system.B_d.shape[1]
    P = []
    F = []
    for j in range(1, N + 1):
        Pj = C @ Gamma[j]
        col = min(j, N - 1)
        Pj[:, col * n_u : (col + 1) * n_u] += D
        P.append(Pj)
        F.append(C @ A_pow[j])
    return F, P


def _discrete_tracking_block(system: DiscreteSystem, cost: DiscreteCost,
                             Gamma: list, N: int):
    """Baseline tracking Hessian: output error at stages 1..N, input error
    at stages 0..N-1, weighted directly."""
    n_u = system.B_d.shape[1]
    nU = N * n_u
    nz = system.C_d.shape[0]
    Qz = cost.Q_czt[:nz, :nz]
    Qu = cost.Q_czt[nz:, nz:]
    H = np.zeros((nU, nU))
    C, D = system.C_d, system.D_d
    for j in range(1, N + 1):
        Pj = C @ Gamma[j]
        col = min(j, N - 1)
        Pj[:, col * n_u : (col + 1) * n_u] += D
        H += Pj.T @ Qz @ Pj
    if np.any(Qu):
        for k in range(N):
            sl = slice(k * n_u, (k + 1) * n_u)
            H[sl, sl] += Qu
    return 0.5 * (H + H.T)


def _discrete_tracking_gradient(design: ControllerDesign, x0: np.ndarray,
                                zbar_mod: np.ndarray, ubar: np.ndarray):
    system = design.system
    N, n_u = design.N, design.n_u
    nz = design.n_z
    Qz = design.cost.Q_czt[:nz, :nz]
    Qu = design.cost.Q_czt[nz:, nz:]
    C, D = system.C_d, system.D_d
    g = np.zeros(N * n_u)
    const = 0.0
    for j in range(1, N + 1):
        Pj = C @ design.Gamma[j]
        col = min(j, N - 1)
        Pj = Pj.copy()
        Pj[:, col * n_u : (col + 1) * n_u] += D
        e_free = C @ (design.A_pow[j] @ x0) - zbar_mod[j - 1]
        g += Pj.T @ (Qz @ e_free)
        const += 0.5 * e_free @ Qz @ e_free
    if np.any(Qu):
        for k in range(N):
            sl = slice(k * n_u, (k + 1) * n_u)
            g[sl] += -Qu @ ubar[k]
            const += 0.5 * ubar[k] @ Qu @ ubar[k]
    return g, const


def _noise_predictions(design: ControllerDesign, fstate: FilterState, N: int):
    """Noise-output forecasts for stages 0..N (index j = stage offset)."""
    f = design.filter
    nz = design.n_z
    out = np.zeros((N + 1, nz))
    x = fstate.xs_hat
    out[0] = f.C_s @ x
    for j in range(1, N + 1):
        x = f.A_s @ x
        out[j] = f.C_s @ x
    return out


def build_constraints(design: ControllerDesign, inputs: StepInputs,
                      x0: np.ndarray, zs_pred: np.ndarray):
    """Stacked inequality system over [u; xi; eta].

    Rows: input box, input-increment box (first stage against u_prev), soft
    output bounds at stages 1..N shifted by the noise forecasts, and slack
    nonnegativity.  Returns (A, l, u, soft_active) where soft_active tells
    whether any output bound exists over the horizon.
    """
    N, n_u, nz = design.N, design.n_u, design.n_z
    nU = N * n_u
    nS = N * nz
    dim = nU + 2 * nS
    rows_A = []
    rows_l = []
    rows_u = []

    def expand(bound, default, width):
        if bound is None:
            return np.full((N, width), default)
        b = np.asarray(bound, dtype=float)
        if b.ndim == 1:
            b = np.tile(b, (N, 1))
        return b

    u_min = expand(inputs.u_min, -INF_BOUND, n_u)
    u_max = expand(inputs.u_max, INF_BOUND, n_u)
    du_min = expand(inputs.du_min, -INF_BOUND, n_u)
    du_max = expand(inputs.du_max, INF_BOUND, n_u)
    z_min = expand(inputs.z_min, -INF_BOUND, nz)
    z_max = expand(inputs.z_max, INF_BOUND, nz)

    if np.any(u_min > u_max):
        raise ValueError("inconsistent input box: u_min > u_max")
    if np.any(du_min > du_max):
        raise ValueError("inconsistent increment box: du_min > du_max")
    if np.any(z_min > z_max):
        raise ValueError("inconsistent output box: z_min > z_max")

    # input box
    A_box = np.hstack([np.eye(nU), np.zeros((nU, 2 * nS))])
    rows_A.append(A_box)
    rows_l.append(u_min.ravel())
    rows_u.append(u_max.ravel())

    # increment box
    Dmat = np.zeros((nU, dim))
    for k in range(N):
        sl = slice(k * n_u, (k + 1) * n_u)
        Dmat[sl, sl] = np.eye(n_u)
        if k > 0:
            Dmat[sl, (k - 1) * n_u : k * n_u] = -np.eye(n_u)
    lo = du_min.copy()
    hi = du_max.copy()
    lo[0] += inputs.u_prev
    hi[0] += inputs.u_prev
    rows_A.append(Dmat)
    rows_l.append(lo.ravel())
    rows_u.append(hi.ravel())

    # soft output bounds, stages 1..N, shifted by noise forecasts
    F, P = _output_maps(design.system, design.Gamma, design.A_pow, N)
    soft_active = (inputs.z_min is not None) or (inputs.z_max is not None)
    if soft_active:
        for j in range(1, N + 1):
            lo_j = z_min[j - 1] - zs_pred[j]
            hi_j = z_max[j - 1] - zs_pred[j]
            # lower: P u + xi_j >= z_min - zs - free response
            Arow = np.zeros((nz, dim))
            Arow[:, :nU] = P[j - 1]
            Arow[:, nU + (j - 1) * nz : nU + j * nz] = np.eye(nz)
            rows_A.append(Arow)
            rows_l.append(lo_j - (F[j - 1] @ x0))
            rows_u.append(np.full(nz, INF_BOUND))
            # upper: P u - eta_j <= z_max - zs - free response
            Arow = np.zeros((nz, dim))
            Arow[:, :nU] = P[j - 1]
            Arow[:, nU + nS + (j - 1) * nz : nU + nS + j * nz] = -np.eye(nz)
            rows_A.append(Arow)
            rows_l.append(np.full(nz, -INF_BOUND))
            rows_u.append(hi_j - (F[j - 1] @ x0))

    # slack nonnegativity
    A_sl = np.hstack([np.zeros((2 * nS, nU)), np.eye(2 * nS)])
    rows_A.append(A_sl)
    rows_l.append(np.zeros(2 * nS))
    rows_u.append(np.full(2 * nS, INF_BOUND))

    return (np.vstack(rows_A), np.concatenate(rows_l),
            np.concatenate(rows_u), soft_active)


def step(design: ControllerDesign, inputs: StepInputs, x0: np.ndarray,
         fstate: FilterState, warm_start: np.ndarray | None = None) -> StepResult:
    """One receding-horizon step.

    Filters the measurement, shifts references and soft bounds by the noise
    forecasts, assembles the gradient against the constant Hessian, solves
    the QP and advances the internal model with the applied input.  When no
    output bound is configured the slack variables are dropped from the QP
    (they are zero at any optimum) and reported as zeros.
    """
    N, n_u, nz = design.N, design.n_u, design.n_z
    system = design.system

    zd_hat = system.C_d @ x0 + system.D_d @ inputs.u_prev
    fstate_new, e_k = filter_update(design.filter, fstate, inputs.y, zd_hat)
    zs_pred = _noise_predictions(design, fstate_new, N)

    zbar = np.atleast_2d(np.asarray(inputs.zbar, dtype=float)).reshape(N, nz)
    ubar = np.atleast_2d(np.asarray(inputs.ubar, dtype=float)).reshape(N, n_u)

    if design.kind == "sampled":
        # stage k covers [t_k, t_{k+1}); shift by the stage-k forecast
        zbar_mod = zbar - zs_pred[:N]
        refs = np.hstack([zbar_mod, ubar])
        g_track = tracking_gradient(design.cost.Q, design.cost.M, design.Gamma,
                                    design.A_pow, x0, refs, N, n_u)
        const = tracking_constant(design.cost.Q, design.cost.M, design.cost,
                                  design.A_pow, x0, refs, N, nz)
    else:
        # baseline penalizes the sampled error at stages 1..N
        zbar_mod = zbar - zs_pred[1 : N + 1]
        g_track, const = _discrete_tracking_gradient(design, x0, zbar_mod, ubar)

    g_rom = rom_eco_gradient(design.cost.QDu, design.cost.q_eco,
                             inputs.u_prev, N, n_u)
    const += 0.5 * inputs.u_prev @ design.cost.QDu @ inputs.u_prev

    A, l, u, soft_active = build_constraints(design, inputs, x0, zs_pred)
    nU = N * n_u
    nS = N * nz

    if soft_active:
        H = design.H
        g = np.concatenate([g_track + g_rom, design.g_soft])
        problem = QpProblem(H=H, g=g, A=A, l=l, u=u)
        ws = warm_start
        if ws is not None and ws.size == nU:
            ws = np.concatenate([ws, np.zeros(2 * nS)])
        sol = solve(problem, warm_start=ws)
        w = sol.w
        u_plan = w[:nU]
        xi = w[nU : nU + nS].reshape(N, nz)
        eta = w[nU + nS :].reshape(N, nz)
    else:
        H = design.H_track + design.H_rom
        g = g_track + g_rom
        rows = np.flatnonzero(np.any(A[:, :nU] != 0.0, axis=1))
        problem = QpProblem(H=H, g=g, A=A[rows][:, :nU], l=l[rows], u=u[rows])
        ws = warm_start[:nU] if warm_start is not None else None
        sol = solve(problem, warm_start=ws)
        u_plan = sol.w
        xi = np.zeros((N, nz))
        eta = np.zeros((N, nz))

    if not sol.ok:
        raise QpStepError(
            f"QP failed with status {sol.status} after {sol.iterations} "
            f"iterations (residuals {sol.residuals})", sol,
        )

    u_k = u_plan[:n_u].copy()
    x_next = system.A_d @ x0 + system.B_d @ u_k
    objective = sol.diagnostics["objective"] + const
    return StepResult(
        u=u_k, filter_state=fstate_new, x_next=x_next, u_plan=u_plan.copy(),
        xi=xi, eta=eta, qp=sol, objective=float(objective), innovation=e_k,
    )
