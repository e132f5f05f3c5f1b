"""Composite-quadrature oracles for validating the exponential constructions.

These utilities evaluate the defining integrals of the discretization module
by brute numerical quadrature on a fine uniform grid.  They share no code
with the production path (which uses single augmented matrix exponentials)
and exist purely so tests can compare the two routes.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "matrix_power_stack",
    "simpson_tracking_cost",
    "trapezoid_noise_cov",
    "simulate_delayed_channel",
]


def matrix_power_stack(M: np.ndarray, count: int) -> np.ndarray:
    """Stack of powers M^0 ... M^{count-1}, built by block doubling."""
    n = M.shape[0]
    P = np.empty((count, n, n))
    P[0] = np.eye(n)
    filled = 1
    while filled < count:
        take = min(filled, count - filled)
        big = P[filled - 1] @ M
        P[filled : filled + take] = P[:take] @ big
        filled += take
    return P


def _simpson_weights(nodes: int, h: float) -> np.ndarray:
    # nodes = 2*panels + 1
    w = np.ones(nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def simpson_tracking_cost(A, B, C, D, Q_czt, Ts: float, panels: int = 100_000):
    """(Q, M) of the tracking-cost integrals by composite Simpson quadrature.

    Evaluates int_0^Ts S(t)' Qc S(t) dt and -int_0^Ts S(t)' Qc dt with
    S(t) = [[C e^{At}, C int e^{As}B ds + D], [0, I]] sampled on a uniform
    grid; the grid transition comes from one small-step exponential whose
    powers are formed by doubling.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    Qc = np.atleast_2d(np.asarray(Q_czt, dtype=float))
    n, nu, nz = A.shape[0], B.shape[1], C.shape[0]

    Abar = np.zeros((n + nu, n + nu))
    Abar[:n, :n] = A
    Abar[:n, n:] = B
    Cbar = np.zeros((nz + nu, n + nu))
    Cbar[:nz, :n] = C
    Cbar[:nz, n:] = D
    Cbar[nz:, n:] = np.eye(nu)

    nodes = 2 * panels + 1
    h = Ts / (nodes - 1)
    step = scipy.linalg.expm(Abar * h)
    P = matrix_power_stack(step, nodes)
    w = _simpson_weights(nodes, h)

    QcC = Qc @ Cbar
    SQ = np.matmul(Cbar.T @ Qc @ Cbar, P)          # Qbar * e^{Abar t}
    quad = np.matmul(P.transpose(0, 2, 1), SQ)      # S' Qc S in state coords
    Q = np.tensordot(w, quad, axes=1)

    lin = np.matmul(P.transpose(0, 2, 1), (QcC.T)[None, :, :])
    M = -np.tensordot(w, lin, axes=1)
    return 0.5 * (Q + Q.T), M


def trapezoid_noise_cov(A, B, Ts: float, steps: int = 100_000) -> np.ndarray:
    """int_0^Ts e^{At} BB' e^{A't} dt by the trapezoid rule."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    nodes = steps + 1
    h = Ts / steps
    P = matrix_power_stack(scipy.linalg.expm(A * h), nodes)
    W = B @ B.T
    quad = np.matmul(P, np.matmul(W, P.transpose(0, 2, 1)))
    w = np.full(nodes, h)
    w[0] = w[-1] = 0.5 * h
    R = np.tensordot(w, quad, axes=1)
    return 0.5 * (R + R.T)


def simulate_delayed_channel(ss, u_seq: np.ndarray, Ts: float,
                             substeps: int = 1000):
    """Fine-grid response of one delayed channel to a ZOH input sequence.

    Propagates the continuous channel exactly on a grid of Ts/substeps,
    reading the delayed input from the ZOH sequence (zero before t = 0).
    Exact to roundoff when the delay switch times fall on the fine grid.
    Returns (t, z) over len(u_seq) sampling intervals, t of size
    len(u_seq)*substeps + 1.
    """
    A, B, C, D = ss.A_c, ss.B_c, ss.C_c, ss.D_c
    n = A.shape[0]
    h = Ts / substeps
    if n:
        Abar = np.zeros((n + 1, n + 1))
        Abar[:n, :n] = A
        Abar[:n, n:] = B
        E = scipy.linalg.expm(Abar * h)
        Phi, Gam = E[:n, :n], E[:n, n:]
    else:
        Phi = np.zeros((0, 0))
        Gam = np.zeros((0, 1))

    total = len(u_seq) * substeps
    t = np.arange(total + 1) * h
    x = np.zeros(n)
    z = np.zeros(total + 1)

    def delayed_input(tj: float) -> float:
        ta = tj - ss.delay
        if ta < -1e-12:
            return 0.0
        k = int(np.floor(ta / Ts + 1e-12))
        k = min(k, len(u_seq) - 1)
        return float(u_seq[k])

    for j in range(total + 1):
        v = delayed_input(t[j])
        z[j] = ((C @ x)[0] if n else 0.0) + D[0, 0] * v
        if j < total:
            # input is constant over [t_j, t_{j+1}) when switches align
            x = Phi @ x + Gam[:, 0] * v
    return t, z
