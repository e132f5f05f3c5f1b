"""Stationary Kalman filtering of the stochastic subsystem.

The filter runs on the noise states only: the deterministic, delayed part of
the model is propagated open-loop by the controller, its predicted output is
subtracted from the measurement, and the residual is filtered here.  The
stationary covariance comes from fixed-point iteration of the filtering
Riccati recursion

    P <- A P A' - A P C' (C P C' + R_vv)^{-1} C P A' + R_ww,

which is the standard convention: measurement noise enters the innovation
covariance, process noise the recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "StationaryFilter",
    "FilterState",
    "DareError",
    "solve_dare",
    "filter_update",
    "predict_outputs",
]

_CONV_TOL = 1e-12
_MAX_ITER = 1_000_000
_RESIDUAL_TOL = 1e-8


class DareError(ValueError):
    """Riccati iteration failed: divergence, detectability or singular R_e."""


def _check_detectable(A: np.ndarray, C: np.ndarray) -> None:
    """Eigenvalue test: every marginally stable or unstable mode observable.

    Uses the rank of [lambda I - A; C] per eigenvalue with |lambda| >= 1 - tol,
    so integrator modes must be seen by the output while strictly stable
    unobservable modes are allowed.
    """
    n = A.shape[0]
    if n == 0:
        return
    eigs = np.linalg.eigvals(A)
    for lam in eigs:
        if abs(lam) < 1.0 - 1e-9:
            continue
        M = np.vstack([lam * np.eye(n) - A, C.astype(complex)])
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] < 1e-9 * max(1.0, s[0]):
            raise DareError(
                f"mode at eigenvalue {lam:.6g} (|lambda|={abs(lam):.6g}) "
                "is not detectable from the output"
            )


@dataclass(frozen=True)
class StationaryFilter:
    """Stationary one-step filter: covariance P_s, innovation R_e, gain K_fx."""

    P_s: np.ndarray
    R_e: np.ndarray
    K_fx: np.ndarray
    A_s: np.ndarray
    C_s: np.ndarray

    @property
    def n_states(self) -> int:
        return self.A_s.shape[0]


@dataclass(frozen=True)
class FilterState:
    """Filtered noise-state estimate alongside the last model output."""

    xs_hat: np.ndarray
    zd_hat: np.ndarray


def dare_residual(P, A, C, R_ww, R_vv) -> float:
    S = C @ P @ C.T + R_vv
    nxt = A @ P @ A.T - A @ P @ C.T @ np.linalg.solve(S, C @ P @ A.T) + R_ww
    return float(np.max(np.abs(P - nxt))) if P.size else 0.0


def solve_dare(A_s, C_s, R_ww, R_vv) -> StationaryFilter:
    """Stationary filter from fixed-point Riccati iteration.

    Iterates the filtering recursion until the covariance update falls below
    1e-12 in max norm, then verifies the fixed point by substitution
    (residual <= 1e-8).  Requires (A_s, C_s) detectable and R_vv positive
    definite.
    """
    A = np.atleast_2d(np.asarray(A_s, dtype=float))
    C = np.atleast_2d(np.asarray(C_s, dtype=float))
    R_ww = np.atleast_2d(np.asarray(R_ww, dtype=float))
    R_vv = np.atleast_2d(np.asarray(R_vv, dtype=float))
    n = A.shape[0]
    ny = C.shape[0]

    if n == 0:
        return StationaryFilter(
            P_s=np.zeros((0, 0)), R_e=R_vv.copy(),
            K_fx=np.zeros((0, ny)), A_s=A, C_s=C,
        )

    wv = np.linalg.eigvalsh(0.5 * (R_vv + R_vv.T))
    if wv[0] <= 0.0:
        raise DareError(f"measurement covariance must be positive definite "
                        f"(min eig {wv[0]:.3e})")
    _check_detectable(A, C)

    P = R_ww.copy()
    for _ in range(_MAX_ITER):
        S = C @ P @ C.T + R_vv
        APC = A @ P @ C.T
        P_next = A @ P @ A.T - APC @ np.linalg.solve(S, APC.T) + R_ww
        P_next = 0.5 * (P_next + P_next.T)
        # tolerance relative to the covariance scale; an absolute 1e-12 is
        # below roundoff once P grows past ~1e4
        if np.max(np.abs(P_next - P)) <= _CONV_TOL * max(1.0, np.max(np.abs(P))):
            P = P_next
            break
        P = P_next
    else:
        raise DareError(f"Riccati iteration did not converge in {_MAX_ITER} steps")

    res = dare_residual(P, A, C, R_ww, R_vv)
    if res > _RESIDUAL_TOL * max(1.0, float(np.max(np.abs(P)))):
        raise DareError(f"Riccati fixed point inaccurate: residual {res:.3e}")

    R_e = C @ P @ C.T + R_vv
    K_fx = P @ C.T @ np.linalg.inv(R_e)
    return StationaryFilter(P_s=P, R_e=0.5 * (R_e + R_e.T), K_fx=K_fx, A_s=A, C_s=C)


def filter_update(f: StationaryFilter, state: FilterState, y_k, zd_hat_k) -> tuple:
    """One measurement update.

    Predicts the noise state forward, forms the innovation against the
    noise part of the measurement (y_k minus the model output), and corrects
    with the stationary gain.  Returns (new FilterState, innovation).
    """
    y_k = np.atleast_1d(np.asarray(y_k, dtype=float))
    zd_hat_k = np.atleast_1d(np.asarray(zd_hat_k, dtype=float))
    x_pred = f.A_s @ state.xs_hat
    e_k = (y_k - zd_hat_k) - f.C_s @ x_pred
    x_new = x_pred + f.K_fx @ e_k
    return FilterState(xs_hat=x_new, zd_hat=zd_hat_k), e_k


def predict_outputs(f: StationaryFilter, state: FilterState, N: int,
                    zd_pred=None) -> np.ndarray:
    """Noise-output forecasts C A^j x_hat for j = 1..N.

    When a deterministic output forecast is supplied the composed prediction
    (deterministic + noise) is returned instead.
    """
    if N < 1:
        raise ValueError(f"horizon must be at least 1, got {N}")
    ny = f.C_s.shape[0]
    out = np.zeros((N, ny))
    x = state.xs_hat
    for j in range(N):
        x = f.A_s @ x
        out[j] = f.C_s @ x
    if zd_pred is not None:
        out = out + np.asarray(zd_pred, dtype=float).reshape(N, ny)
    return out
