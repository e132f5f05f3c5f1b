"""Scenario configuration: JSON schema, validation and unit conversion.

A scenario file declares the plant and control models as factored transfer
functions, the controller weights and bounds, and the simulation schedules.
Everything carrying time units may be written in seconds or minutes; the
loader converts to seconds:

* delays, sampling periods, horizons and schedule times scale by 60;
* polynomial factor coefficients scale by 60^power (a factor [1, 15.9]
  means 1 + 15.9 s, and s carries 1/time units);
* the model noise intensity scales by 60 (a spectral density carries
  signal^2 * time units);
* weights and the per-sample covariances (plant noise, measurement noise)
  are used as given.

Transfer-function entries look like

    {"gain": 10.12, "num_factors": [[1, -3.41]],
     "den_factors": [[1, 15.9], [1, 24.2]], "delay": 2.5}

with ascending coefficients per factor (constant first).  A zero entry may
be written as {"gain": 0}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .discretization import Weights
from .simulate import Bounds, Scenario, Schedule
from .transfer import RationalTransfer, TransferMatrix

__all__ = ["ScenarioConfig", "ConfigError", "load_config", "bundled_config_path"]


class ConfigError(ValueError):
    """Malformed or inconsistent scenario file."""


def _unit_factor(raw: dict) -> float:
    unit = raw.get("time_unit", "seconds")
    if unit == "seconds":
        return 1.0
    if unit == "minutes":
        return 60.0
    raise ConfigError(f"time_unit must be 'seconds' or 'minutes', got {unit!r}")


def _parse_tf(entry: dict, scale: float, where: str) -> RationalTransfer:
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: transfer entry must be an object")
    gain = float(entry.get("gain", 1.0))
    delay = float(entry.get("delay", 0.0)) * scale

    def conv(factors):
        out = []
        for f in factors:
            out.append([float(c) * scale**i for i, c in enumerate(f)])
        return out

    num_f = conv(entry.get("num_factors", []))
    den_f = conv(entry.get("den_factors", []))
    if gain == 0.0 and not num_f:
        return RationalTransfer.zero()
    try:
        return RationalTransfer.from_factors(gain=gain, num_factors=num_f,
                                             den_factors=den_f, delay=delay)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_matrix(rows, scale: float, kind: str, where: str) -> TransferMatrix:
    if not rows:
        raise ConfigError(f"{where}: empty transfer matrix")
    grid = tuple(
        tuple(_parse_tf(e, scale, f"{where}[{i}][{j}]") for j, e in enumerate(row))
        for i, row in enumerate(rows)
    )
    try:
        return TransferMatrix(grid, kind=kind)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_cov(value, n: int, where: str) -> np.ndarray:
    if value is None:
        raise ConfigError(f"{where}: covariance missing")
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr * np.eye(n)
    elif arr.ndim == 1:
        arr = np.diag(arr)
    if arr.shape != (n, n):
        raise ConfigError(f"{where}: expected {n}x{n} covariance, got {arr.shape}")
    return arr


def _parse_schedule(raw, dim: int, scale: float, where: str) -> Schedule:
    if raw is None:
        return Schedule.constant(np.zeros(dim))
    if isinstance(raw, (int, float)):
        return Schedule.constant(np.full(dim, float(raw)))
    if isinstance(raw, list) and raw and isinstance(raw[0], dict):
        steps = []
        for e in raw:
            v = np.atleast_1d(np.asarray(e["value"], dtype=float))
            if v.size != dim:
                raise ConfigError(f"{where}: value dimension {v.size}, expected {dim}")
            steps.append((float(e["t"]) * scale, v))
        try:
            return Schedule.from_steps(steps)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: expected a number or a list of {{t, value}} steps")


def _parse_bound(raw, dim: int, where: str):
    if raw is None:
        return None
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        arr = np.full(dim, float(arr))
    if arr.size != dim:
        raise ConfigError(f"{where}: expected {dim} entries, got {arr.size}")
    return arr


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed scenario file: the raw declaration plus the built Scenario."""

    raw: dict
    scenario: Scenario
    path: str = ""

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def load_config(path) -> ScenarioConfig:
    """Parse, validate and unit-convert a scenario file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    scenario = build_scenario(raw, where=str(path))
    return ScenarioConfig(raw=raw, scenario=scenario, path=str(path))


def build_scenario(raw: dict, where: str = "config") -> Scenario:
    scale = _unit_factor(raw)
    errors: list[str] = []

    for section in ("plant", "model", "controller", "simulation"):
        if section not in raw:
            errors.append(f"missing section {section!r}")
    if errors:
        raise ConfigError(f"{where}: " + "; ".join(errors))

    plant = raw["plant"]
    model = raw["model"]
    ctrl = raw["controller"]
    sim = raw["simulation"]

    plant_G = _parse_matrix(plant["G"], scale, "deterministic", f"{where}:plant.G")
    plant_Gd = (_parse_matrix(plant["Gd"], scale, "disturbance", f"{where}:plant.Gd")
                if plant.get("Gd") else None)
    model_G = _parse_matrix(model["G"], scale, "deterministic", f"{where}:model.G")
    model_H = (_parse_matrix(model["H"], scale, "stochastic", f"{where}:model.H")
               if model.get("H") else None)

    n_z = plant_G.n_outputs
    n_u = plant_G.n_inputs
    n_d = plant_Gd.n_inputs if plant_Gd is not None else 0
    n_w = model_H.n_inputs if model_H is not None else 0
    if model_G.n_outputs != n_z or model_G.n_inputs != n_u:
        errors.append("model.G dimensions differ from plant.G")

    w = ctrl.get("weights", {})
    weights = Weights.from_diagonals(
        n_z, n_u,
        Qcz=w.get("Qcz"), Qcu=w.get("Qcu"), QcDu=w.get("QcDu"),
        qceco=w.get("qceco"), Qcxi=w.get("Qcxi"), Qceta=w.get("Qceta"),
        qcxi=w.get("qcxi"), qceta=w.get("qceta"),
    )

    b = ctrl.get("bounds", {})
    bounds = Bounds(
        u_min=_parse_bound(b.get("u_min"), n_u, f"{where}:bounds.u_min"),
        u_max=_parse_bound(b.get("u_max"), n_u, f"{where}:bounds.u_max"),
        du_min=_parse_bound(b.get("du_min"), n_u, f"{where}:bounds.du_min"),
        du_max=_parse_bound(b.get("du_max"), n_u, f"{where}:bounds.du_max"),
        z_min=_parse_bound(b.get("z_min"), n_z, f"{where}:bounds.z_min"),
        z_max=_parse_bound(b.get("z_max"), n_z, f"{where}:bounds.z_max"),
    )
    try:
        bounds.validate()
    except ValueError as exc:
        errors.append(str(exc))

    refs = sim.get("references", {})
    zbar = _parse_schedule(refs.get("z"), n_z, scale, f"{where}:references.z")
    ubar = _parse_schedule(refs.get("u"), n_u, scale, f"{where}:references.u")
    disturbance = (_parse_schedule(sim.get("disturbance"), n_d, scale,
                                   f"{where}:disturbance")
                   if n_d else None)

    if errors:
        raise ConfigError(f"{where}: " + "; ".join(errors))

    try:
        return Scenario(
            name=raw.get("name", "scenario"),
            plant_G=plant_G, plant_Gd=plant_Gd,
            model_G=model_G, model_H=model_H,
            weights=weights, bounds=bounds,
            N=int(ctrl["N"]),
            Ts=float(plant["Ts"]) * scale,
            Ts_c=float(ctrl["Ts"]) * scale,
            T_sim=float(sim["T_sim"]) * scale,
            Rww_plant=_parse_cov(plant.get("Rww", 0.0), max(n_d, 1),
                                 f"{where}:plant.Rww")[:n_d, :n_d],
            Rvv_plant=_parse_cov(plant.get("Rvv", 0.0), n_z, f"{where}:plant.Rvv"),
            Rww_model=_parse_cov(model.get("Rww", 1.0), max(n_w, 1),
                                 f"{where}:model.Rww")[:n_w, :n_w] * scale,
            Rvv_model=_parse_cov(model.get("Rvv", 0.0), n_z, f"{where}:model.Rvv"),
            zbar=zbar, ubar=ubar, disturbance=disturbance,
            seed=int(sim.get("seed", 0)),
            mode=sim.get("mode", "deterministic"),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def bundled_config_path(name: str) -> Path:
    """Path of a packaged scenario file ('siso' or 'cement_mill')."""
    ref = resources.files("ctlmpc").joinpath("configs", f"{name}.json")
    with resources.as_file(ref) as p:
        return Path(p)
