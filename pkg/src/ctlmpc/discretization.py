"""Exact discrete-time equivalents of continuous-time dynamics and costs.

Everything a sampled-data controller needs at a given sampling period Ts is
produced here:

* ZOH discretization of delayed SISO channels, with fractional delays
  tau = (m - theta) * Ts handled by augmenting the state with m past-input
  slots and splitting the input integral at theta * Ts;
* the process-noise covariance of the stochastic subsystem over one sample
  (block matrix-exponential construction);
* the discrete weights (Q, M) that make the sum of quadratic stage costs
  equal the continuous integral of the tracking cost for piecewise-constant
  inputs and references, including across delay switch points;
* the remaining discrete weight conversions (input rate-of-movement,
  economics, slack penalties) which are simple Ts scalings.

All integrals are evaluated with a single augmented block-matrix
exponential per (sub)interval; composite-quadrature oracles for testing
live in ctlmpc.quadrature and are never used on this path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .realization import DelayedSisoSS

__all__ = [
    "expm",
    "delay_split",
    "zoh_discretize",
    "process_noise_cov",
    "discretize_tracking_cost",
    "tracking_cost_with_delays",
    "rho",
    "stack_deterministic",
    "StackedDelayed",
    "DiscreteSystem",
    "DiscreteCost",
    "discretize_model",
    "build_discrete_cost",
    "Weights",
]

_DELAY_SNAP = 1e-9


def expm(A: np.ndarray) -> np.ndarray:
    """Matrix exponential (scaling-and-squaring with Pade approximants)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return np.zeros((0, 0))
    return scipy.linalg.expm(A)


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _check_psd(M: np.ndarray, name: str, tol: float = 1e-8) -> None:
    if M.size == 0:
        return
    w = np.linalg.eigvalsh(_symmetrize(M))
    scale = max(1.0, float(w[-1]))
    if w[0] < -tol * scale:
        raise ValueError(f"{name} is not positive semidefinite (min eig {w[0]:.3e})")


def _psd_project(M: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetrize and zero out eigenvalues in [-tol*scale, 0).

    Anything below the floor is a genuine construction error and raises.
    """
    M = _symmetrize(M)
    if M.size == 0:
        return M
    w, V = np.linalg.eigh(M)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -tol * scale:
        raise ValueError(f"matrix unexpectedly indefinite (min eig {w[0]:.3e})")
    if w[0] >= 0.0:
        return M
    w = np.clip(w, 0.0, None)
    return _symmetrize(V @ np.diag(w) @ V.T)


def delay_split(tau: float, Ts: float) -> tuple[int, float]:
    """Write tau = (m - theta) * Ts with integer m >= 0 and theta in [0, 1).

    Ratios within 1e-9 of an integer snap to it, so tau equal to a multiple
    of Ts gives theta = 0 exactly.
    """
    if Ts <= 0.0:
        raise ValueError(f"sampling time must be positive, got {Ts}")
    if tau < 0.0:
        raise ValueError(f"delay must be nonnegative, got {tau}")
    r = tau / Ts
    if abs(r - round(r)) < _DELAY_SNAP:
        r = float(round(r))
    m = int(np.ceil(r))
    theta = m - r
    return m, theta


def _phi_gamma(A: np.ndarray, B: np.ndarray, t: float):
    """(e^{A t}, int_0^t e^{A s} B ds) from one augmented exponential."""
    n = A.shape[0]
    nb = B.shape[1]
    if t == 0.0:
        return np.eye(n), np.zeros((n, nb))
    Abar = np.zeros((n + nb, n + nb))
    Abar[:n, :n] = A
    Abar[:n, n:] = B
    E = expm(Abar * t)
    return E[:n, :n], E[:n, n:]


def zoh_discretize(ss: DelayedSisoSS, Ts: float):
    """ZOH discretization of one delayed channel, delay folded into the state.

    Returns (A_d, B_d, C_d, D_d) of the augmented system whose state is
    [x; u_{k-m}; ...; u_{k-1}].  The sampled output sequence of the result
    equals the continuous delayed response at the sample instants for any
    piecewise-constant input.
    """
    m, theta = delay_split(ss.delay, Ts)
    n = ss.order
    A, B, C, D = ss.A_c, ss.B_c, ss.C_c, ss.D_c

    # Input integral split at theta*Ts: B1 drives the older input sample,
    # B2 the newer one.
    _, Gam_theta = _phi_gamma(A, B, theta * Ts)
    Phi, Gam_full = _phi_gamma(A, B, Ts)
    B1 = Gam_full - Gam_theta
    B2 = Gam_theta

    if m == 0:
        return Phi, Gam_full, C.copy(), D.copy()

    na = n + m
    A_d = np.zeros((na, na))
    B_d = np.zeros((na, 1))
    A_d[:n, :n] = Phi
    A_d[:n, n] = B1[:, 0]
    if m >= 2:
        A_d[:n, n + 1] += B2[:, 0]
    else:
        B_d[:n, 0] += B2[:, 0]
    for i in range(m - 1):
        A_d[n + i, n + i + 1] = 1.0
    B_d[n + m - 1, 0] = 1.0

    C_d = np.zeros((1, na))
    C_d[0, :n] = C[0, :]
    C_d[0, n] = D[0, 0]
    D_d = np.zeros((1, 1))
    return A_d, B_d, C_d, D_d


def process_noise_cov(A_s: np.ndarray, B_s: np.ndarray, Ts: float) -> np.ndarray:
    """Covariance of the sampled state driven by unit-intensity white noise.

    Evaluates int_0^Ts e^{A t} B B' e^{A' t} dt through the exponential of
    the block matrix [[-A, BB'], [0, A']] * Ts, then symmetrizes.
    """
    if Ts <= 0.0:
        raise ValueError(f"sampling time must be positive, got {Ts}")
    A_s = np.atleast_2d(np.asarray(A_s, dtype=float))
    B_s = np.atleast_2d(np.asarray(B_s, dtype=float))
    n = A_s.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    Z = np.zeros((2 * n, 2 * n))
    Z[:n, :n] = -A_s
    Z[:n, n:] = B_s @ B_s.T
    Z[n:, n:] = A_s.T
    E = expm(Z * Ts)
    R = E[n:, n:].T @ E[:n, n:]
    return _symmetrize(R)


def _van_loan_cost(Abar: np.ndarray, Qbar: np.ndarray, T: float):
    """Core cost integrals over one interval from a single exponential.

    For the autonomous map xi(t) = e^{Abar t} xi(0), returns

        (int_0^T e^{Abar' t} Qbar e^{Abar t} dt,
         int_0^T e^{Abar t} dt,
         e^{Abar T})
    """
    n = Abar.shape[0]
    Z = np.zeros((3 * n, 3 * n))
    Z[:n, :n] = -Abar.T
    Z[:n, n : 2 * n] = Qbar
    Z[n : 2 * n, n : 2 * n] = Abar
    Z[n : 2 * n, 2 * n :] = np.eye(n)
    E = expm(Z * T)
    G1 = E[:n, n : 2 * n]
    F2 = E[n : 2 * n, n : 2 * n]
    G2 = E[n : 2 * n, 2 * n :]
    return F2.T @ G1, G2, F2


def discretize_tracking_cost(A_c, B_c, C_c, D_c, Q_czt, Ts: float):
    """Discrete weights (Q, M) of the continuous tracking cost, delay-free.

    With S(t) mapping [x_k; u_k] to [z(t); u(t)] over a sampling interval,
    Q = int_0^Ts S' Q_czt S dt and M = -int_0^Ts S' Q_czt dt, so that the
    quadratic stage cost 1/2 w'Qw + (M r)'w + rho reproduces the integral of
    the continuous cost against the piecewise-constant reference r.
    """
    A = np.atleast_2d(np.asarray(A_c, dtype=float))
    B = np.atleast_2d(np.asarray(B_c, dtype=float))
    C = np.atleast_2d(np.asarray(C_c, dtype=float))
    D = np.atleast_2d(np.asarray(D_c, dtype=float))
    Qc = np.atleast_2d(np.asarray(Q_czt, dtype=float))
    if Ts <= 0.0:
        raise ValueError(f"sampling time must be positive, got {Ts}")
    _check_psd(Qc, "tracking weight")

    n = A.shape[0]
    nu = B.shape[1]
    nz = C.shape[0]
    if Qc.shape != (nz + nu, nz + nu):
        raise ValueError(
            f"tracking weight must be {(nz + nu, nz + nu)}, got {Qc.shape}"
        )

    Abar = np.zeros((n + nu, n + nu))
    Abar[:n, :n] = A
    Abar[:n, n:] = B
    Cbar = np.zeros((nz + nu, n + nu))
    Cbar[:nz, :n] = C
    Cbar[:nz, n:] = D
    Cbar[nz:, n:] = np.eye(nu)

    Qint, G2, _ = _van_loan_cost(Abar, Cbar.T @ Qc @ Cbar, Ts)
    Q = _psd_project(Qint)
    M = -G2.T @ Cbar.T @ Qc
    return Q, M


def rho(zbar, ubar, Q_czt, Ts: float) -> float:
    """Constant stage-cost term: the continuous cost of the reference itself."""
    r = np.concatenate([np.atleast_1d(zbar), np.atleast_1d(ubar)])
    Qc = np.atleast_2d(Q_czt)
    return 0.5 * float(r @ Qc @ r) * Ts


@dataclass(frozen=True)
class _ChannelLayout:
    """Placement of one delayed channel inside the stacked augmented state."""

    ss: DelayedSisoSS
    m: int
    theta: float
    x_start: int
    x_stop: int
    slot_start: int  # slots occupy [slot_start, slot_start + m), oldest first


@dataclass(frozen=True)
class StackedDelayed:
    """ZOH-discretized stack of all delayed channels of a model.

    A, B, C, D describe the augmented discrete-time system (physical states
    of every channel plus input-history slots); layout records where each
    channel lives so cost integrals can be assembled over the same state.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Ts: float
    layout: tuple
    n_aug: int
    n_u: int
    n_z: int


def stack_deterministic(channels, Ts: float) -> StackedDelayed:
    """Stack per-channel ZOH discretizations block-diagonally.

    channels is the n_z x n_u grid of DelayedSisoSS; channel outputs are
    summed per output row.
    """
    n_z = len(channels)
    n_u = len(channels[0])

    layout = []
    pos = 0
    for i in range(n_z):
        for j in range(n_u):
            ss = channels[i][j]
            m, theta = delay_split(ss.delay, Ts)
            n = ss.order
            layout.append(
                _ChannelLayout(
                    ss=ss, m=m, theta=theta,
                    x_start=pos, x_stop=pos + n, slot_start=pos + n,
                )
            )
            pos += n + m
    n_aug = pos

    A = np.zeros((n_aug, n_aug))
    B = np.zeros((n_aug, n_u))
    C = np.zeros((n_z, n_aug))
    D = np.zeros((n_z, n_u))
    for lay in layout:
        Ad, Bd, Cd, Dd = zoh_discretize(lay.ss, Ts)
        lo, hi = lay.x_start, lay.x_start + Ad.shape[0]
        A[lo:hi, lo:hi] = Ad
        B[lo:hi, lay.ss.input_index] += Bd[:, 0]
        C[lay.ss.output_index, lo:hi] += Cd[0, :]
        D[lay.ss.output_index, lay.ss.input_index] += Dd[0, 0]
    return StackedDelayed(
        A=A, B=B, C=C, D=D, Ts=Ts, layout=tuple(layout),
        n_aug=n_aug, n_u=n_u, n_z=n_z,
    )


def _segment_matrices(stacked: StackedDelayed, t_mid: float):
    """Dynamics and output maps of the interval model on one delay segment.

    The interval state is zeta = [augmented state; current input].  Between
    delay switch points every channel integrates a constant input drawn
    from either a history slot or the current input; which one depends on
    where the segment lies relative to the channel's switch time.
    """
    na, nu, nz = stacked.n_aug, stacked.n_u, stacked.n_z
    Ts = stacked.Ts
    nZ = na + nu
    Aseg = np.zeros((nZ, nZ))
    Cseg = np.zeros((nz + nu, nZ))
    for lay in stacked.layout:
        ss = lay.ss
        if lay.m == 0:
            src = na + ss.input_index
        else:
            t_switch = (1.0 - lay.theta) * Ts
            if t_mid < t_switch:
                src = lay.slot_start
            elif lay.m >= 2:
                src = lay.slot_start + 1
            else:
                src = na + ss.input_index
        lo, hi = lay.x_start, lay.x_stop
        Aseg[lo:hi, lo:hi] = ss.A_c
        Aseg[lo:hi, src] += ss.B_c[:, 0]
        Cseg[ss.output_index, lo:hi] += ss.C_c[0, :]
        Cseg[ss.output_index, src] += ss.D_c[0, 0]
    Cseg[nz:, na:] = np.eye(nu)
    return Aseg, Cseg


def _switch_times(stacked: StackedDelayed):
    Ts = stacked.Ts
    times = []
    for lay in stacked.layout:
        if lay.m >= 1 and lay.theta > 0.0:
            t = (1.0 - lay.theta) * Ts
            if 0.0 < t < Ts:
                times.append(t)
    times.sort()
    dedup = []
    for t in times:
        if not dedup or t - dedup[-1] > 1e-12 * Ts:
            dedup.append(t)
    return dedup


def tracking_cost_with_delays(stacked: StackedDelayed, Q_czt):
    """Discrete tracking weights (Q, M) over the delay-augmented state.

    The integral over a sampling interval is split at every channel's delay
    switch point; each segment contributes one augmented-exponential cost
    integral, chained through the segment transition maps.  Also returns
    the end-of-interval transition of the interval model, which must agree
    with the stacked ZOH discretization.
    """
    Qc = np.atleast_2d(np.asarray(Q_czt, dtype=float))
    _check_psd(Qc, "tracking weight")
    na, nu, nz = stacked.n_aug, stacked.n_u, stacked.n_z
    if Qc.shape != (nz + nu, nz + nu):
        raise ValueError(
            f"tracking weight must be {(nz + nu, nz + nu)}, got {Qc.shape}"
        )
    nZ = na + nu
    bounds = [0.0] + _switch_times(stacked) + [stacked.Ts]

    Q = np.zeros((nZ, nZ))
    M = np.zeros((nZ, nz + nu))
    Theta = np.eye(nZ)
    for a, b in zip(bounds[:-1], bounds[1:]):
        Aseg, Cseg = _segment_matrices(stacked, 0.5 * (a + b))
        Qseg, G2, F2 = _van_loan_cost(Aseg, Cseg.T @ Qc @ Cseg, b - a)
        Q += Theta.T @ Qseg @ Theta
        M += -(Theta.T @ G2.T @ Cseg.T @ Qc)
        Theta = F2 @ Theta
    return _psd_project(Q), M, Theta


@dataclass(frozen=True)
class Weights:
    """Continuous-time penalty weights of the whole control objective.

    Qcz/Qcu weight output and input tracking error, QcDu the input rate of
    movement, qceco the linear input cost, and the xi/eta entries the soft
    output-constraint slacks (lower/upper).
    """

    Qcz: np.ndarray
    Qcu: np.ndarray
    QcDu: np.ndarray
    qceco: np.ndarray
    Qcxi: np.ndarray
    Qceta: np.ndarray
    qcxi: np.ndarray
    qceta: np.ndarray

    @classmethod
    def from_diagonals(cls, n_z: int, n_u: int, Qcz=None, Qcu=None, QcDu=None,
                       qceco=None, Qcxi=None, Qceta=None, qcxi=None, qceta=None):
        def mat(v, n):
            if v is None:
                return np.zeros((n, n))
            v = np.asarray(v, dtype=float)
            return np.diag(v) if v.ndim == 1 else v

        def vec(v, n):
            return np.zeros(n) if v is None else np.asarray(v, dtype=float).reshape(n)

        return cls(
            Qcz=mat(Qcz, n_z), Qcu=mat(Qcu, n_u), QcDu=mat(QcDu, n_u),
            qceco=vec(qceco, n_u), Qcxi=mat(Qcxi, n_z), Qceta=mat(Qceta, n_z),
            qcxi=vec(qcxi, n_z), qceta=vec(qceta, n_z),
        )

    @property
    def Q_czt(self) -> np.ndarray:
        return scipy.linalg.block_diag(self.Qcz, self.Qcu)


@dataclass(frozen=True)
class DiscreteCost:
    """Discrete equivalents of every continuous penalty at period Ts."""

    Q: np.ndarray          # over [augmented state; input]
    M: np.ndarray          # q_k = M [zbar_k; ubar_k]
    QDu: np.ndarray        # QcDu / Ts
    QbarDu: np.ndarray     # [[QDu, -QDu], [-QDu, QDu]]
    q_eco: np.ndarray      # qceco * Ts
    Qxi: np.ndarray        # Ts * Qcxi
    Qeta: np.ndarray
    qxi: np.ndarray
    qeta: np.ndarray
    Q_czt: np.ndarray      # continuous tracking weight, kept for rho
    Ts: float

    def rho(self, zbar, ubar) -> float:
        return rho(zbar, ubar, self.Q_czt, self.Ts)


def build_discrete_cost(stacked: StackedDelayed, weights: Weights) -> DiscreteCost:
    """All discrete weights of the objective at the controller period."""
    Ts = stacked.Ts
    Q, M, _ = tracking_cost_with_delays(stacked, weights.Q_czt)
    QDu = weights.QcDu / Ts
    QbarDu = np.block([[QDu, -QDu], [-QDu, QDu]])
    return DiscreteCost(
        Q=Q, M=M, QDu=QDu, QbarDu=QbarDu,
        q_eco=weights.qceco * Ts,
        Qxi=Ts * weights.Qcxi, Qeta=Ts * weights.Qceta,
        qxi=Ts * weights.qcxi, qeta=Ts * weights.qceta,
        Q_czt=weights.Q_czt, Ts=Ts,
    )


@dataclass(frozen=True)
class DiscreteSystem:
    """Discrete-time model pair: deterministic (delay-augmented) + stochastic.

    R_ww is the sampled process-noise covariance of the stochastic states;
    R_vv the per-sample measurement covariance.  Both must be symmetric
    positive semidefinite.
    """

    A_d: np.ndarray
    B_d: np.ndarray
    C_d: np.ndarray
    D_d: np.ndarray
    A_s: np.ndarray
    C_s: np.ndarray
    R_ww: np.ndarray
    R_vv: np.ndarray
    Ts: float
    stacked: StackedDelayed | None = None

    def __post_init__(self):
        if self.Ts <= 0.0:
            raise ValueError(f"sampling time must be positive, got {self.Ts}")
        for name in ("R_ww", "R_vv"):
            R = getattr(self, name)
            if R.size and np.max(np.abs(R - R.T)) > 1e-12 * max(1.0, np.max(np.abs(R))):
                raise ValueError(f"{name} is not symmetric")
            _check_psd(R, name, tol=1e-10)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Square root factor L with L L' = M for symmetric PSD M."""
    M = _symmetrize(np.atleast_2d(np.asarray(M, dtype=float)))
    if M.size == 0:
        return M
    w, V = np.linalg.eigh(M)
    w = np.clip(w, 0.0, None)
    return V @ np.diag(np.sqrt(w))


def discretize_model(ns, Ts: float, Rww_c, Rvv) -> DiscreteSystem:
    """Discretize a noise-separation realization at period Ts.

    Rww_c is the intensity (covariance per unit time) of the white noise
    driving the stochastic subsystem; Rvv is the per-sample measurement
    covariance, used as given.
    """
    stacked = stack_deterministic(ns.det_channels, Ts)
    A_s = expm(ns.A_s * Ts)
    n_s = ns.A_s.shape[0]
    if n_s == 0:
        R_ww = np.zeros((0, 0))
    else:
        Rww_c = np.atleast_2d(np.asarray(Rww_c, dtype=float))
        if Rww_c.shape != (ns.n_w, ns.n_w):
            raise ValueError(
                f"noise intensity must be {(ns.n_w, ns.n_w)}, got {Rww_c.shape}"
            )
        R_ww = process_noise_cov(ns.A_s, ns.B_s @ _psd_sqrt(Rww_c), Ts)
    Rvv = np.atleast_2d(np.asarray(Rvv, dtype=float))
    return DiscreteSystem(
        A_d=stacked.A, B_d=stacked.B, C_d=stacked.C, D_d=stacked.D,
        A_s=A_s, C_s=ns.C_s.copy(), R_ww=R_ww, R_vv=Rvv, Ts=Ts,
        stacked=stacked,
    )
