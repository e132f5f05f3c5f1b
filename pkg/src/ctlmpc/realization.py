"""State-space realization of delayed transfer-function models.

Each deterministic entry g_ij becomes its own SISO continuous-time system in
controllable companion form, with the input delay carried as metadata (the
delay only becomes finite-dimensional at discretization time).  The
stochastic matrix is realized entry-wise and stacked block-diagonally, with
output rows summed per output channel, so the noise subsystem can be
filtered independently of the delayed deterministic channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transfer import RationalTransfer, TransferMatrix, evaluate, validate

__all__ = ["DelayedSisoSS", "NsRealization", "realize_siso", "realize_ns"]


@dataclass(frozen=True)
class DelayedSisoSS:
    """Companion-form realization of one proper SISO channel.

    The matrices realize b(s)/a(s); the factor exp(-delay*s) is kept
    symbolic in ``delay``.  State dimension equals deg(a); D_c is nonzero
    only when deg(b) = deg(a).
    """

    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    D_c: np.ndarray
    delay: float = 0.0
    output_index: int = 0
    input_index: int = 0

    @property
    def order(self) -> int:
        return self.A_c.shape[0]


def realize_siso(tf: RationalTransfer, output_index: int = 0,
                 input_index: int = 0) -> DelayedSisoSS:
    """Controllable companion-form realization of a proper transfer function.

    A degree-0 denominator yields a memoryless channel: empty state and
    D_c = b0/a0 (a pure delayed gain when tf.delay > 0).
    """
    a = tf.den
    b = tf.num
    n = a.size - 1
    lead = a[-1]
    abar = a / lead
    bbar = np.zeros(n + 1)
    bbar[: b.size] = b / lead
    d = bbar[n]
    if n == 0:
        A = np.zeros((0, 0))
        B = np.zeros((0, 1))
        C = np.zeros((1, 0))
    else:
        A = np.zeros((n, n))
        A[: n - 1, 1:] = np.eye(n - 1)
        A[n - 1, :] = -abar[:n]
        B = np.zeros((n, 1))
        B[n - 1, 0] = 1.0
        C = (bbar[:n] - d * abar[:n]).reshape(1, n)
    return DelayedSisoSS(
        A_c=A, B_c=B, C_c=C, D_c=np.array([[d]]), delay=tf.delay,
        output_index=output_index, input_index=input_index,
    )


@dataclass(frozen=True)
class NsRealization:
    """Paired deterministic and stochastic continuous realizations.

    det_channels[i][j] realizes entry (i, j) of the deterministic matrix;
    the summed channel outputs give output i.  (A_s, B_s, C_s) realize the
    stochastic matrix driven by unit-intensity white noise.  The stochastic
    initial state is zero-mean; P0_s is its covariance, None meaning
    "use the stationary filter covariance".
    """

    det_channels: tuple
    A_s: np.ndarray
    B_s: np.ndarray
    C_s: np.ndarray
    n_z: int
    n_u: int
    n_w: int
    P0_s: np.ndarray | None = None

    @property
    def n_stoch(self) -> int:
        return self.A_s.shape[0]


def realize_ns(G: TransferMatrix, H: TransferMatrix | None,
               P0_s: np.ndarray | None = None) -> NsRealization:
    """Realize a deterministic/stochastic transfer-function pair.

    G must be deterministic-valid and H stochastic-valid; H may be None (or
    have zero columns) for a noise-free model.  The stochastic state
    dimension is the sum of the entry denominator degrees.
    """
    rep = validate(G)
    if not rep.ok:
        raise ValueError(f"deterministic matrix invalid:\n{rep}")
    n_z = G.n_outputs
    n_u = G.n_inputs

    channels = tuple(
        tuple(realize_siso(G[i, j], output_index=i, input_index=j)
              for j in range(n_u))
        for i in range(n_z)
    )

    if H is None:
        n_w = 0
    else:
        rep = validate(H)
        if not rep.ok:
            raise ValueError(f"stochastic matrix invalid:\n{rep}")
        if H.n_outputs != n_z:
            raise ValueError(
                f"stochastic matrix has {H.n_outputs} rows, expected {n_z}"
            )
        n_w = H.n_inputs

    blocks = []
    if H is not None:
        for i in range(n_z):
            for p in range(n_w):
                h = H[i, p]
                if h.is_zero():
                    continue
                ss = realize_siso(h, output_index=i, input_index=p)
                if ss.order > 0:
                    blocks.append(ss)

    n_s = sum(ss.order for ss in blocks)
    A_s = np.zeros((n_s, n_s))
    B_s = np.zeros((n_s, n_w))
    C_s = np.zeros((n_z, n_s))
    k = 0
    for ss in blocks:
        m = ss.order
        A_s[k : k + m, k : k + m] = ss.A_c
        B_s[k : k + m, ss.input_index] = ss.B_c[:, 0]
        C_s[ss.output_index, k : k + m] = ss.C_c[0, :]
        k += m

    return NsRealization(
        det_channels=channels, A_s=A_s, B_s=B_s, C_s=C_s,
        n_z=n_z, n_u=n_u, n_w=n_w, P0_s=P0_s,
    )


def frequency_response(ss: DelayedSisoSS, s: complex) -> complex:
    """C (sI - A)^{-1} B + D, times the delay factor exp(-delay*s)."""
    n = ss.order
    if n == 0:
        core = ss.D_c[0, 0]
    else:
        core = (ss.C_c @ np.linalg.solve(s * np.eye(n) - ss.A_c, ss.B_c))[0, 0] \
            + ss.D_c[0, 0]
    return core * np.exp(-ss.delay * s)
