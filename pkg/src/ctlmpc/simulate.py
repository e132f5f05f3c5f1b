"""Multi-rate closed-loop simulation.

The plant is the discretization of the true transfer-function model at a
fine period Ts; the controller is designed from the (possibly mismatched)
control model at Ts_c = r * Ts and acts every r-th plant step, its input
held in between.  Disturbance and measurement noise are drawn once from a
seeded generator (or forced to zero in deterministic mode), so runs are
exactly reproducible and both controller variants can be compared on the
identical noise realization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .controller import (
    ControllerDesign,
    QpStepError,
    StepInputs,
    design_controller,
    step,
)
from .discretization import Weights, stack_deterministic
from .kalman import FilterState
from .realization import realize_ns
from .transfer import TransferMatrix, validate

__all__ = [
    "Plant",
    "Schedule",
    "Bounds",
    "Scenario",
    "SimResult",
    "build_plant",
    "run_closed_loop",
    "compare_controllers",
]

log = logging.getLogger("ctlmpc")


@dataclass(frozen=True)
class Plant:
    """Fine-rate discrete simulation model with disturbance/noise channel.

    x_{k+1} = A x_k + B u_k + E (d_k + w_k); z_k = C x_k + D u_k + F (d_k + w_k);
    y_k = z_k + v_k.  The noise w shares the disturbance channel.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    R_ww: np.ndarray
    R_vv: np.ndarray
    Ts: float

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_z(self) -> int:
        return self.C.shape[0]

    @property
    def n_d(self) -> int:
        return self.E.shape[1]


def build_plant(G: TransferMatrix, G_d: TransferMatrix | None, Ts: float,
                R_ww, R_vv) -> Plant:
    """Joint ZOH discretization of the plant and disturbance models.

    The disturbance columns are realized alongside the input columns so
    their delays get the same history-slot treatment, then split off into
    the E/F matrices.
    """
    rep = validate(G)
    if not rep.ok:
        raise ValueError(f"plant model invalid:\n{rep}")
    n_z = G.n_outputs
    n_u = G.n_inputs
    if G_d is not None:
        rep = validate(G_d)
        if not rep.ok:
            raise ValueError(f"disturbance model invalid:\n{rep}")
        if G_d.n_outputs != n_z:
            raise ValueError("disturbance model row count mismatch")
        n_d = G_d.n_inputs
        joint_rows = tuple(
            tuple(G.entries[i]) + tuple(G_d.entries[i]) for i in range(n_z)
        )
        joint = TransferMatrix(joint_rows, kind="deterministic")
    else:
        n_d = 0
        joint = G
    ns = realize_ns(joint, None)
    stacked = stack_deterministic(ns.det_channels, Ts)

    R_ww = np.atleast_2d(np.asarray(R_ww, dtype=float)) if n_d else np.zeros((0, 0))
    R_vv = np.atleast_2d(np.asarray(R_vv, dtype=float))
    return Plant(
        A=stacked.A, B=stacked.B[:, :n_u], C=stacked.C, D=stacked.D[:, :n_u],
        E=stacked.B[:, n_u:], F=stacked.D[:, n_u:],
        R_ww=R_ww, R_vv=R_vv, Ts=Ts,
    )


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant vector signal: value_i holds on [t_i, t_{i+1})."""

    times: np.ndarray
    values: np.ndarray

    @classmethod
    def constant(cls, value) -> "Schedule":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(times=np.zeros(1), values=v.reshape(1, -1))

    @classmethod
    def from_steps(cls, steps) -> "Schedule":
        """steps: iterable of (time, vector), times strictly increasing."""
        times = np.array([float(t) for t, _ in steps])
        values = np.vstack([np.atleast_1d(np.asarray(v, dtype=float))
                            for _, v in steps])
        if np.any(np.diff(times) <= 0):
            raise ValueError("schedule times must be strictly increasing")
        return cls(times=times, values=values)

    def at(self, t: float) -> np.ndarray:
        idx = int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1
        idx = max(idx, 0)
        return self.values[idx]

    def snapped(self, Ts: float) -> "Schedule":
        """Switch times moved onto the plant grid."""
        times = np.round(self.times / Ts) * Ts
        return Schedule(times=times, values=self.values.copy())

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Bounds:
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None
    du_min: np.ndarray | None = None
    du_max: np.ndarray | None = None
    z_min: np.ndarray | None = None
    z_max: np.ndarray | None = None

    def validate(self) -> None:
        for lo, hi, name in ((self.u_min, self.u_max, "u"),
                             (self.du_min, self.du_max, "du"),
                             (self.z_min, self.z_max, "z")):
            if lo is not None and hi is not None and np.any(np.asarray(lo) > np.asarray(hi)):
                raise ValueError(f"inconsistent {name} bounds: min > max")


@dataclass(frozen=True)
class Scenario:
    """Everything needed for one closed-loop experiment."""

    name: str
    plant_G: TransferMatrix
    plant_Gd: TransferMatrix | None
    model_G: TransferMatrix
    model_H: TransferMatrix | None
    weights: Weights
    bounds: Bounds
    N: int
    Ts: float
    Ts_c: float
    T_sim: float
    Rww_plant: np.ndarray
    Rvv_plant: np.ndarray
    Rww_model: np.ndarray
    Rvv_model: np.ndarray
    zbar: Schedule
    ubar: Schedule
    disturbance: Schedule | None = None
    seed: int = 0
    mode: str = "deterministic"

    def __post_init__(self):
        if self.mode not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        ratio = self.Ts_c / self.Ts
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                f"controller period {self.Ts_c} must be an integer multiple "
                f"of the plant period {self.Ts}"
            )
        if self.T_sim <= 0:
            raise ValueError("simulation horizon must be positive")
        self.bounds.validate()

    @property
    def rate_ratio(self) -> int:
        return int(round(self.Ts_c / self.Ts))

    @property
    def n_steps(self) -> int:
        return int(round(self.T_sim / self.Ts))


@dataclass
class SimResult:
    """Per-plant-step traces plus run-level metrics.

    Controller-tick quantities (slacks, QP iterations, planned objective)
    are held constant between ticks; ctrl_step marks the tick rows.
    """

    t: np.ndarray
    z: np.ndarray
    y: np.ndarray
    u: np.ndarray
    zbar: np.ndarray
    ubar: np.ndarray
    d: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    qp_iters: np.ndarray
    ctrl_step: np.ndarray
    stage_cost: np.ndarray
    controller: str
    scenario: Scenario

    def tracking_error(self) -> np.ndarray:
        return self.z - self.zbar

    def rms_tracking(self) -> float:
        e = self.tracking_error()
        return float(np.sqrt(np.mean(np.sum(e * e, axis=1))))

    def total_cost(self) -> float:
        return float(np.sum(self.stage_cost))

    def max_abs_du(self) -> float:
        ticks = np.flatnonzero(self.ctrl_step)
        if ticks.size < 2:
            return 0.0
        du = np.diff(self.u[ticks], axis=0)
        return float(np.max(np.abs(du))) if du.size else 0.0

    def violation_fraction(self) -> float:
        b = self.scenario.bounds
        if b.z_min is None and b.z_max is None:
            return 0.0
        bad = np.zeros(self.z.shape[0], dtype=bool)
        if b.z_min is not None:
            bad |= np.any(self.z < np.asarray(b.z_min) - 1e-9, axis=1)
        if b.z_max is not None:
            bad |= np.any(self.z > np.asarray(b.z_max) + 1e-9, axis=1)
        return float(np.mean(bad))

    def max_overshoot(self) -> float:
        return float(np.max(np.abs(self.tracking_error())))

    def summary(self) -> dict:
        return {
            "controller": self.controller,
            "rms_tracking": self.rms_tracking(),
            "total_cost": self.total_cost(),
            "max_overshoot": self.max_overshoot(),
            "max_abs_du": self.max_abs_du(),
            "violation_fraction": self.violation_fraction(),
            "steps": int(self.t.size),
            "controller_steps": int(np.count_nonzero(self.ctrl_step)),
        }


def _draw_noise(scenario: Scenario, plant: Plant):
    P = scenario.n_steps
    if scenario.mode == "deterministic":
        return np.zeros((P, plant.n_d)), np.zeros((P, plant.n_z))
    rng = np.random.default_rng(scenario.seed)
    Lw = np.linalg.cholesky(plant.R_ww) if plant.n_d else np.zeros((0, 0))
    Lv = np.linalg.cholesky(plant.R_vv)
    w = rng.standard_normal((P, plant.n_d)) @ Lw.T
    v = rng.standard_normal((P, plant.n_z)) @ Lv.T
    return w, v


def _design_for(scenario: Scenario, controller: str) -> ControllerDesign:
    kind = {"ct": "sampled", "dt": "discrete"}[controller]
    return design_controller(
        scenario.model_G, scenario.model_H, scenario.weights,
        Ts=scenario.Ts_c, N=scenario.N,
        Rww_c=scenario.Rww_model, Rvv=scenario.Rvv_model, kind=kind,
    )


def run_closed_loop(scenario: Scenario, controller: str = "ct",
                    noise=None, design: ControllerDesign | None = None) -> SimResult:
    """Simulate one controller on the scenario plant.

    noise optionally supplies pre-drawn (w, v) arrays so several runs can
    share one realization; QP failures abort with the plant step index.
    """
    if controller not in ("ct", "dt"):
        raise ValueError(f"controller must be 'ct' or 'dt', got {controller!r}")
    plant = build_plant(scenario.plant_G, scenario.plant_Gd, scenario.Ts,
                        scenario.Rww_plant, scenario.Rvv_plant)
    if design is None:
        design = _design_for(scenario, controller)
    w_seq, v_seq = _draw_noise(scenario, plant) if noise is None else noise

    P = scenario.n_steps
    r = scenario.rate_ratio
    N = scenario.N
    nz, nu, nd = plant.n_z, plant.n_u, plant.n_d
    zbar_s = scenario.zbar.snapped(scenario.Ts)
    ubar_s = scenario.ubar.snapped(scenario.Ts)
    dist_s = (scenario.disturbance.snapped(scenario.Ts)
              if scenario.disturbance is not None else None)

    Qcz = scenario.weights.Qcz
    Qcu = scenario.weights.Qcu

    x_p = np.zeros(plant.n_x)
    x_c = np.zeros(design.n_x)
    fstate = FilterState(xs_hat=np.zeros(design.filter.n_states),
                         zd_hat=np.zeros(nz))
    u_held = ubar_s.at(0.0).copy()
    u_plan_prev = None

    res = SimResult(
        t=np.arange(P) * scenario.Ts,
        z=np.zeros((P, nz)), y=np.zeros((P, nz)), u=np.zeros((P, nu)),
        zbar=np.zeros((P, nz)), ubar=np.zeros((P, nu)),
        d=np.zeros((P, max(nd, 1))),
        xi=np.zeros((P, nz)), eta=np.zeros((P, nz)),
        qp_iters=np.zeros(P, dtype=int), ctrl_step=np.zeros(P, dtype=bool),
        stage_cost=np.zeros(P), controller=controller, scenario=scenario,
    )

    xi_held = np.zeros(nz)
    eta_held = np.zeros(nz)
    qp_iters_held = 0

    for p in range(P):
        t = p * scenario.Ts
        d_p = dist_s.at(t) if dist_s is not None else np.zeros(nd)
        dw = d_p + w_seq[p] if nd else np.zeros(0)

        z_meas = plant.C @ x_p + plant.D @ u_held + (plant.F @ dw if nd else 0.0)
        y_p = z_meas + v_seq[p]

        if p % r == 0:
            zbar_prev = np.vstack([zbar_s.at(t + j * scenario.Ts_c)
                                   for j in range(N)])
            ubar_prev = np.vstack([ubar_s.at(t + j * scenario.Ts_c)
                                   for j in range(N)])
            inputs = StepInputs(
                zbar=zbar_prev, ubar=ubar_prev, y=y_p, u_prev=u_held.copy(),
                u_min=scenario.bounds.u_min, u_max=scenario.bounds.u_max,
                du_min=scenario.bounds.du_min, du_max=scenario.bounds.du_max,
                z_min=scenario.bounds.z_min, z_max=scenario.bounds.z_max,
            )
            try:
                out = step(design, inputs, x_c, fstate,
                           warm_start=u_plan_prev)
            except QpStepError as exc:
                raise QpStepError(
                    f"QP failure at plant step {p} (t={t:.6g} s, controller "
                    f"step {p // r}): {exc}", exc.solution,
                ) from exc
            u_held = out.u.copy()
            x_c = out.x_next
            fstate = out.filter_state
            u_plan_prev = _shift_plan(out.u_plan, nu)
            xi_held = out.xi[0].copy()
            eta_held = out.eta[0].copy()
            qp_iters_held = out.qp.iterations
            res.ctrl_step[p] = True

        # recorded output uses the input actually applied over [t, t+Ts)
        z_p = plant.C @ x_p + plant.D @ u_held + (plant.F @ dw if nd else 0.0)
        zb = zbar_s.at(t)
        ub = ubar_s.at(t)
        ez = z_p - zb
        eu = u_held - ub
        res.z[p] = z_p
        res.y[p] = z_p + v_seq[p]
        res.u[p] = u_held
        res.zbar[p] = zb
        res.ubar[p] = ub
        if nd:
            res.d[p, :nd] = d_p
        res.xi[p] = xi_held
        res.eta[p] = eta_held
        res.qp_iters[p] = qp_iters_held
        res.stage_cost[p] = (0.5 * ez @ Qcz @ ez + 0.5 * eu @ Qcu @ eu) * scenario.Ts

        x_p = plant.A @ x_p + plant.B @ u_held + (plant.E @ dw if nd else 0.0)

    log.info("run %s/%s finished: rms=%.4g cost=%.4g", scenario.name,
             controller, res.rms_tracking(), res.total_cost())
    return res


def _shift_plan(u_plan: np.ndarray, n_u: int) -> np.ndarray:
    """Warm start for the next step: drop the first stage, repeat the last."""
    shifted = np.empty_like(u_plan)
    shifted[:-n_u] = u_plan[n_u:]
    shifted[-n_u:] = u_plan[-n_u:]
    return shifted


def compare_controllers(scenario: Scenario) -> dict:
    """Run both controller variants on one noise realization.

    Returns {"ct": SimResult, "dt": SimResult, "deltas": {...}} with the
    headline metric differences.
    """
    plant = build_plant(scenario.plant_G, scenario.plant_Gd, scenario.Ts,
                        scenario.Rww_plant, scenario.Rvv_plant)
    noise = _draw_noise(scenario, plant)
    res_ct = run_closed_loop(scenario, "ct", noise=noise)
    res_dt = run_closed_loop(scenario, "dt", noise=noise)
    deltas = {
        "rms_tracking": res_dt.rms_tracking() - res_ct.rms_tracking(),
        "total_cost": res_dt.total_cost() - res_ct.total_cost(),
        "max_overshoot": res_dt.max_overshoot() - res_ct.max_overshoot(),
        "rms_output_difference": float(np.sqrt(np.mean(
            np.sum((res_dt.z - res_ct.z) ** 2, axis=1)))),
    }
    return {"ct": res_ct, "dt": res_dt, "deltas": deltas}
