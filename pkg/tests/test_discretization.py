import numpy as np
import pytest

from ctlmpc.discretization import (
    delay_split,
    discretize_model,
    discretize_tracking_cost,
    expm,
    process_noise_cov,
    rho,
    stack_deterministic,
    tracking_cost_with_delays,
    zoh_discretize,
)
from ctlmpc.quadrature import (
    matrix_power_stack,
    simpson_tracking_cost,
    simulate_delayed_channel,
    trapezoid_noise_cov,
)
from ctlmpc.realization import realize_ns, realize_siso
from ctlmpc.transfer import RationalTransfer

from conftest import random_psd, random_stable_system

TF = RationalTransfer.from_factors


# ---------------------------------------------------------------- expm

def test_expm_zero_is_identity():
    np.testing.assert_allclose(expm(np.zeros((3, 3))), np.eye(3))


def test_expm_nilpotent_closed_form():
    np.testing.assert_allclose(expm(np.array([[0.0, 1.0], [0.0, 0.0]])),
                               [[1.0, 1.0], [0.0, 1.0]])


def test_expm_diagonal():
    got = expm(np.diag([-1.0, -2.0]))
    np.testing.assert_allclose(got, np.diag([np.exp(-1.0), np.exp(-2.0)]),
                               rtol=1e-14)


def test_expm_matches_series_on_small_norm():
    rng = np.random.default_rng(11)
    for _ in range(10):
        n = rng.integers(1, 5)
        A = rng.normal(size=(n, n))
        A = A / max(1.0, np.linalg.norm(A, 2))
        series = np.eye(n)
        term = np.eye(n)
        for k in range(1, 40):
            term = term @ A / k
            series = series + term
        got = expm(A)
        assert np.max(np.abs(got - series)) <= 1e-12 * np.max(np.abs(series))


def test_expm_rejects_non_square():
    with pytest.raises(ValueError, match="square"):
        expm(np.zeros((2, 3)))


# ---------------------------------------------------------------- delay split

@pytest.mark.parametrize("tau,Ts,m,theta", [
    (0.0, 1.0, 0, 0.0),
    (2.5, 5.0, 1, 0.5),
    (5.0, 5.0, 1, 0.0),
    (7.5, 5.0, 2, 0.5),
    (12.5, 5.0, 3, 0.5),
    (0.1, 1.0, 1, 0.9),
])
def test_delay_split_cases(tau, Ts, m, theta):
    got_m, got_theta = delay_split(tau, Ts)
    assert got_m == m
    assert got_theta == pytest.approx(theta, abs=1e-12)


def test_delay_split_snaps_float_ratio():
    m, theta = delay_split(0.3, 0.1)  # 0.3/0.1 is not exactly 3.0 in floats
    assert (m, theta) == (3, 0.0)


# ---------------------------------------------------------------- zoh

def test_zoh_scalar_closed_form():
    ss = realize_siso(RationalTransfer(num=[1], den=[1, 1]))
    A_d, B_d, _, _ = zoh_discretize(ss, 1.0)
    np.testing.assert_allclose(A_d, [[np.exp(-1.0)]], rtol=1e-14)
    np.testing.assert_allclose(B_d, [[1.0 - np.exp(-1.0)]], rtol=1e-14)


def _sampled_response(A, B, C, D, u_seq):
    n = A.shape[0]
    x = np.zeros(n)
    out = np.zeros(len(u_seq) + 1)
    for k, u in enumerate(u_seq):
        out[k] = (C @ x)[0] + D[0, 0] * u
        x = A @ x + B[:, 0] * u
    out[-1] = (C @ x)[0] + D[0, 0] * u_seq[-1]
    return out


def test_integer_delay_is_a_pure_shift():
    rng = np.random.default_rng(5)
    tf0 = RationalTransfer(num=[2.0], den=[1.0, 3.0, 1.0])
    tf1 = RationalTransfer(num=[2.0], den=[1.0, 3.0, 1.0], delay=0.7)
    u = rng.normal(size=12)
    y0 = _sampled_response(*zoh_discretize(realize_siso(tf0), 0.7), u)
    y1 = _sampled_response(*zoh_discretize(realize_siso(tf1), 0.7), u)
    np.testing.assert_allclose(y1[1:], y0[:-1], atol=1e-12)
    np.testing.assert_allclose(y1[0], 0.0, atol=1e-15)


def test_fractional_delay_matches_fine_grid():
    tf = TF(gain=10.12, num_factors=[[1, -3.41]],
            den_factors=[[1, 15.9], [1, 24.2]], delay=2.5)
    ss = realize_siso(tf)
    Ts = 5.0
    rng = np.random.default_rng(9)
    u = rng.normal(size=10)
    A_d, B_d, C_d, D_d = zoh_discretize(ss, Ts)
    got = _sampled_response(A_d, B_d, C_d, D_d, u)
    substeps = 50_000  # 1e-4 s grid
    _, z = simulate_delayed_channel(ss, u, Ts, substeps=substeps)
    want = z[::substeps]
    np.testing.assert_allclose(got, want, atol=1e-9)


def _analytic_first_order_step(K, T, tau, t):
    t = np.asarray(t, dtype=float)
    out = np.where(t >= tau, K * (1.0 - np.exp(-np.clip(t - tau, 0, None) / T)), 0.0)
    return out


@pytest.mark.parametrize("ratio", [0.0, 0.5, 1.0, 2.5])
def test_delayed_step_response_analytic(ratio):
    K, T, Ts = 2.0, 3.0, 1.5
    tau = ratio * Ts
    tf = RationalTransfer(num=[K], den=[1.0, T], delay=tau)
    ss = realize_siso(tf)
    A_d, B_d, C_d, D_d = zoh_discretize(ss, Ts)
    steps = 20
    u = np.ones(steps)
    got = _sampled_response(A_d, B_d, C_d, D_d, u)
    want = _analytic_first_order_step(K, T, tau, np.arange(steps + 1) * Ts)
    np.testing.assert_allclose(got, want, atol=1e-9)


# ---------------------------------------------------------------- noise cov

def test_noise_cov_zero_diffusion():
    R = process_noise_cov(np.array([[-1.0]]), np.array([[0.0]]), 2.0)
    np.testing.assert_allclose(R, [[0.0]])


def test_noise_cov_brownian_variance():
    R = process_noise_cov(np.array([[0.0]]), np.array([[1.0]]), 2.0)
    np.testing.assert_allclose(R, [[2.0]], rtol=1e-12)


def test_noise_cov_integrator_lag_vs_quadrature(siso_model_H):
    ss = realize_siso(siso_model_H[0, 0])
    Ts = 5.0
    got = process_noise_cov(ss.A_c, ss.B_c, Ts)
    want = trapezoid_noise_cov(ss.A_c, ss.B_c, Ts, steps=100_000)
    assert np.max(np.abs(got - want)) <= 1e-7 * max(1.0, np.max(np.abs(want)))


def test_noise_cov_interval_additivity():
    rng = np.random.default_rng(21)
    for _ in range(5):
        n = rng.integers(1, 4)
        A, B, _, _ = random_stable_system(rng, n, 1)
        Ts = float(rng.uniform(0.3, 4.0))
        Rfull = process_noise_cov(A, B, Ts)
        Rhalf = process_noise_cov(A, B, Ts / 2)
        Phi = expm(A * Ts / 2)
        combined = Phi @ Rhalf @ Phi.T + Rhalf
        assert np.max(np.abs(Rfull - combined)) <= 1e-10 * max(1.0, np.max(np.abs(Rfull)))


# ---------------------------------------------------------------- tracking cost

def test_tracking_cost_static_outputs():
    n, nu = 2, 2
    Qcz = np.diag([3.0, 5.0])
    Qcu = np.diag([0.5, 1.5])
    Qc = np.block([[Qcz, np.zeros((2, 2))], [np.zeros((2, 2)), Qcu]])
    Ts = 4.0
    Q, M = discretize_tracking_cost(np.zeros((n, n)), np.zeros((n, nu)),
                                    np.eye(n), np.zeros((n, nu)), Qc, Ts)
    np.testing.assert_allclose(Q[:n, :n], Qcz * Ts, atol=1e-12)
    np.testing.assert_allclose(Q[:n, n:], 0.0, atol=1e-12)
    np.testing.assert_allclose(Q[n:, n:], Qcu * Ts, atol=1e-12)
    np.testing.assert_allclose(M, -Qc * Ts, atol=1e-12)


def test_tracking_cost_integrator_moments():
    Qcz = np.array([[2.0]])
    Qcu = np.array([[0.7]])
    Qc = np.diag([2.0, 0.7])
    Ts = 1.3
    Q, _ = discretize_tracking_cost(np.zeros((1, 1)), np.eye(1), np.eye(1),
                                    np.zeros((1, 1)), Qc, Ts)
    np.testing.assert_allclose(Q[0, 0], Qcz[0, 0] * Ts, rtol=1e-12)
    np.testing.assert_allclose(Q[0, 1], Qcz[0, 0] * Ts**2 / 2, rtol=1e-12)
    np.testing.assert_allclose(Q[1, 1], Qcz[0, 0] * Ts**3 / 3 + Qcu[0, 0] * Ts,
                               rtol=1e-12)


def test_tracking_cost_matches_simpson_quadrature():
    rng = np.random.default_rng(31)
    A, B, C, D = random_stable_system(rng, 3, 1, 1)
    Qc = random_psd(rng, 2)
    Ts = 0.7
    Q, M = discretize_tracking_cost(A, B, C, D, Qc, Ts)
    Qq, Mq = simpson_tracking_cost(A, B, C, D, Qc, Ts, panels=100_000)
    assert np.max(np.abs(Q - Qq)) <= 1e-7 * max(1.0, np.max(np.abs(Qq)))
    assert np.max(np.abs(M - Mq)) <= 1e-7 * max(1.0, np.max(np.abs(Mq)))


def test_tracking_cost_rejects_indefinite_weight():
    with pytest.raises(ValueError, match="semidefinite"):
        discretize_tracking_cost(np.zeros((1, 1)), np.eye(1), np.eye(1),
                                 np.zeros((1, 1)), np.diag([1.0, -1.0]), 1.0)


def test_tracking_cost_psd_floor():
    rng = np.random.default_rng(17)
    for _ in range(10):
        n = rng.integers(1, 4)
        nu = rng.integers(1, 3)
        A, B, C, D = random_stable_system(rng, n, nu, nu)
        Qc = random_psd(rng, 2 * nu)
        Q, _ = discretize_tracking_cost(A, B, C, D, Qc, float(rng.uniform(0.1, 5)))
        w = np.linalg.eigvalsh(Q)
        assert w[0] >= -1e-10 * max(1.0, w[-1])
        np.testing.assert_allclose(Q, Q.T, atol=1e-14)


def test_tracking_cost_small_ts_limit():
    """Q/Ts converges to the instantaneous weight S(0)' Qc S(0)."""
    rng = np.random.default_rng(13)
    A, B, C, D = random_stable_system(rng, 3, 2, 2)
    Qc = random_psd(rng, 4)
    Cbar = np.block([[C, D], [np.zeros((2, 3)), np.eye(2)]])
    S0 = Cbar.T @ Qc @ Cbar
    errs = []
    for Ts in (1e-2, 1e-3, 1e-4):
        Q, _ = discretize_tracking_cost(A, B, C, D, Qc, Ts)
        errs.append(np.max(np.abs(Q / Ts - S0)))
    assert errs[0] > errs[1] > errs[2]
    # first-order convergence: error ratio tracks the step ratio
    assert errs[1] / errs[0] < 0.2 and errs[2] / errs[1] < 0.2


def _dt_cost_sum(A, B, Q, M, Qc, Ts, x0, u_seq, zbar_seq, ubar_seq):
    x = x0.copy()
    total = 0.0
    for k, u in enumerate(u_seq):
        w = np.concatenate([x, u])
        r = np.concatenate([zbar_seq[k], ubar_seq[k]])
        q = M @ r
        total += 0.5 * w @ Q @ w + q @ w + rho(zbar_seq[k], ubar_seq[k], Qc, Ts)
        x = A @ x + B @ u
    return total


def _fine_grid_cost(A, B, C, D, Qc, Ts, x0, u_seq, zbar_seq, ubar_seq,
                    substeps=10_000):
    import scipy.linalg

    n, nu = A.shape[0], B.shape[1]
    h = Ts / substeps
    Abar = np.zeros((n + nu, n + nu))
    Abar[:n, :n] = A
    Abar[:n, n:] = B
    P = matrix_power_stack(scipy.linalg.expm(Abar * h), substeps + 1)
    Phi = P[:, :n, :n]
    Gam = P[:, :n, n:]
    wts = np.full(substeps + 1, h)
    wts[0] = wts[-1] = 0.5 * h
    x = x0.copy()
    total = 0.0
    for k, u in enumerate(u_seq):
        xs = Phi @ x + Gam @ u           # states along the interval
        zs = xs @ C.T + (D @ u)          # outputs along the interval
        ztil = np.concatenate(
            [zs - zbar_seq[k], np.broadcast_to(u - ubar_seq[k], (substeps + 1, nu))],
            axis=1,
        )
        integrand = 0.5 * np.einsum("ti,ij,tj->t", ztil, Qc, ztil)
        total += wts @ integrand
        x = xs[-1]
    return total


def test_sum_of_stage_costs_equals_continuous_integral():
    rng = np.random.default_rng(101)
    for _ in range(5):
        n = int(rng.integers(1, 4))
        nu = int(rng.integers(1, 3))
        A, B, C, D = random_stable_system(rng, n, nu, nu)
        Qc = random_psd(rng, 2 * nu)
        Ts = float(rng.uniform(0.2, 2.0))
        N = 10
        Q, M = discretize_tracking_cost(A, B, C, D, Qc, Ts)
        Ad, Bd = expm(A * Ts), None
        # ZOH input matrix
        Abar = np.zeros((n + nu, n + nu))
        Abar[:n, :n] = A
        Abar[:n, n:] = B
        E = expm(Abar * Ts)
        Ad, Bd = E[:n, :n], E[:n, n:]
        x0 = rng.normal(size=n)
        u_seq = rng.normal(size=(N, nu))
        zbar = rng.normal(size=(N, nu))
        ubar = rng.normal(size=(N, nu))
        dt_total = _dt_cost_sum(Ad, Bd, Q, M, Qc, Ts, x0, u_seq, zbar, ubar)
        ct_total = _fine_grid_cost(A, B, C, D, Qc, Ts, x0, u_seq, zbar, ubar)
        assert dt_total == pytest.approx(ct_total, rel=1e-5)


# ---------------------------------------------------------------- rho

def test_rho_zero_reference():
    assert rho([0.0], [0.0], np.diag([20.0, 0.0]), 5.0) == 0.0


def test_rho_paper_weights_arithmetic():
    assert rho([2.0], [0.0], np.diag([20.0, 0.0]), 5.0) == pytest.approx(200.0)


def test_rho_linear_in_ts():
    r1 = rho([1.3], [0.4], np.diag([2.0, 1.0]), 3.0)
    r2 = rho([1.3], [0.4], np.diag([2.0, 1.0]), 6.0)
    assert r2 == pytest.approx(2 * r1)


# ------------------------------------------------- delayed tracking cost

def test_delayed_cost_reduces_to_plain_when_no_delay():
    rng = np.random.default_rng(23)
    tf = RationalTransfer(num=rng.uniform(-1, 1, 2), den=[1.0, 2.0, 1.0])
    ss = realize_siso(tf)
    Ts = 0.9
    Qc = random_psd(rng, 2)
    stacked = stack_deterministic(((ss,),), Ts)
    Qd, Md, _ = tracking_cost_with_delays(stacked, Qc)
    Qp, Mp = discretize_tracking_cost(ss.A_c, ss.B_c, ss.C_c, ss.D_c, Qc, Ts)
    np.testing.assert_allclose(Qd, Qp, atol=1e-12)
    np.testing.assert_allclose(Md, Mp, atol=1e-12)


def test_delayed_cost_interval_map_agrees_with_zoh():
    """End-of-interval transition of the cost model equals the discretization."""
    for tau, Ts in [(2.5, 5.0), (0.1, 1.0), (1.5, 1.0), (0.0, 2.0)]:
        tf = TF(gain=1.7, num_factors=[[1, -0.4]],
                den_factors=[[1, 2.0], [1, 3.0]], delay=tau)
        ss = realize_siso(tf)
        stacked = stack_deterministic(((ss,),), Ts)
        _, _, Theta = tracking_cost_with_delays(stacked, np.diag([1.0, 1.0]))
        na = stacked.n_aug
        # physical-state rows must reproduce [A_d | B_d]; slot rows are
        # identity (slots shift only at the sample boundary)
        n = ss.order
        np.testing.assert_allclose(Theta[:n, :na], stacked.A[:n, :], atol=1e-11)
        np.testing.assert_allclose(Theta[:n, na:], stacked.B[:n, :], atol=1e-11)


def test_delayed_cost_matches_fine_grid_integral():
    """Piecewise construction integrates the true delayed output cost."""
    tf = TF(gain=2.0, num_factors=[[1, -0.5]],
            den_factors=[[1, 3.0], [1, 1.2]], delay=1.25)
    ss = realize_siso(tf)
    Ts = 2.5  # tau/Ts = 0.5 -> m=1, theta=0.5
    Qc = np.diag([2.0, 0.3])
    stacked = stack_deterministic(((ss,),), Ts)
    Q, M, _ = tracking_cost_with_delays(stacked, Qc)

    rng = np.random.default_rng(77)
    N = 8
    u_seq = rng.normal(size=N)
    zbar = rng.normal(size=N)
    ubar = rng.normal(size=N)

    # discrete stage-cost sum over the augmented state
    x = np.zeros(stacked.n_aug)
    dt_total = 0.0
    for k in range(N):
        w = np.concatenate([x, [u_seq[k]]])
        r = np.array([zbar[k], ubar[k]])
        dt_total += 0.5 * w @ Q @ w + (M @ r) @ w + rho([zbar[k]], [ubar[k]], Qc, Ts)
        x = stacked.A @ x + stacked.B[:, 0] * u_seq[k]

    # brute-force continuous integral of the true delayed response; the
    # reference jumps at interval boundaries, so integrate per interval
    substeps = 20_000
    t, z = simulate_delayed_channel(ss, u_seq, Ts, substeps=substeps)
    h = Ts / substeps
    wts = np.full(substeps + 1, h)
    wts[0] = wts[-1] = 0.5 * h
    ct_total = 0.0
    for k in range(N):
        zk = z[k * substeps : (k + 1) * substeps + 1]
        ztil = zk - zbar[k]
        util = u_seq[k] - ubar[k]
        integrand = 0.5 * (Qc[0, 0] * ztil**2 + Qc[1, 1] * util**2)
        ct_total += wts @ integrand
    assert dt_total == pytest.approx(ct_total, rel=1e-6)


# ---------------------------------------------------------------- model glue

def test_discretize_model_siso(siso_model_G, siso_model_H):
    ns = realize_ns(siso_model_G, siso_model_H)
    sys_d = discretize_model(ns, 5.0, Rww_c=np.array([[0.02**2]]),
                             Rvv=np.array([[0.02**2]]))
    # 2 physical states + 1 delay slot (tau=2.5, Ts=5 -> m=1)
    assert sys_d.A_d.shape == (3, 3)
    assert sys_d.A_s.shape == (2, 2)
    assert sys_d.R_ww.shape == (2, 2)
    w = np.linalg.eigvalsh(sys_d.R_ww)
    assert w[0] >= -1e-12
    # integrator eigenvalue of A_s discretizes to exactly 1
    eig = np.sort(np.abs(np.linalg.eigvals(sys_d.A_s)))
    assert eig[-1] == pytest.approx(1.0, abs=1e-12)
