import numpy as np
import pytest

from ctlmpc.discretization import discretize_model
from ctlmpc.kalman import (
    DareError,
    FilterState,
    dare_residual,
    filter_update,
    predict_outputs,
    solve_dare,
)
from ctlmpc.realization import realize_ns


def _scalar(v):
    return np.array([[float(v)]])


def test_dare_scalar_golden_ratio():
    f = solve_dare(_scalar(1.0), _scalar(1.0), _scalar(1.0), _scalar(1.0))
    assert f.P_s[0, 0] == pytest.approx((1 + np.sqrt(5)) / 2, abs=1e-10)


def test_dare_memoryless_prediction():
    f = solve_dare(_scalar(0.0), _scalar(1.0), _scalar(3.0), _scalar(1.0))
    np.testing.assert_allclose(f.P_s, [[3.0]], atol=1e-12)


def test_dare_siso_filter_residual(siso_model_G, siso_model_H):
    ns = realize_ns(siso_model_G, siso_model_H)
    sys_d = discretize_model(ns, 5.0, Rww_c=_scalar(0.02**2), Rvv=_scalar(0.02**2))
    f = solve_dare(sys_d.A_s, sys_d.C_s, sys_d.R_ww, sys_d.R_vv)
    assert dare_residual(f.P_s, sys_d.A_s, sys_d.C_s, sys_d.R_ww, sys_d.R_vv) <= 1e-8


def test_dare_mill_filter_residual(mill_model_G, mill_model_H):
    ns = realize_ns(mill_model_G, mill_model_H)
    sys_d = discretize_model(ns, 2.0, Rww_c=np.eye(2),
                             Rvv=np.diag([0.1, 50.0]))
    f = solve_dare(sys_d.A_s, sys_d.C_s, sys_d.R_ww, sys_d.R_vv)
    assert dare_residual(f.P_s, sys_d.A_s, sys_d.C_s, sys_d.R_ww, sys_d.R_vv) <= 1e-8


def test_dare_rejects_undetectable_integrator():
    A = np.diag([1.0, 0.5])
    C = np.array([[0.0, 1.0]])  # integrator mode invisible
    with pytest.raises(DareError, match="detectable"):
        solve_dare(A, C, np.eye(2), _scalar(1.0))


def test_dare_allows_stable_unobservable_mode():
    A = np.diag([0.2, 0.5])
    C = np.array([[0.0, 1.0]])
    f = solve_dare(A, C, np.eye(2), _scalar(1.0))
    assert f.P_s.shape == (2, 2)


def test_dare_rejects_singular_measurement_cov():
    with pytest.raises(DareError, match="positive definite"):
        solve_dare(_scalar(0.5), _scalar(1.0), _scalar(1.0), _scalar(0.0))


def test_dare_closed_loop_is_stable():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = int(rng.integers(1, 4))
        A = rng.normal(size=(n, n))
        A = 0.95 * A / max(1.0, np.max(np.abs(np.linalg.eigvals(A))))
        C = rng.normal(size=(1, n))
        Rw = rng.normal(size=(n, n))
        Rw = Rw @ Rw.T + 0.1 * np.eye(n)
        f = solve_dare(A, C, Rw, _scalar(0.5))
        Acl = (np.eye(n) - f.K_fx @ f.C_s) @ f.A_s
        assert np.max(np.abs(np.linalg.eigvals(Acl))) < 1.0


def test_update_zero_innovation_keeps_prediction():
    f = solve_dare(_scalar(0.5), _scalar(1.0), _scalar(1.0), _scalar(1.0))
    st = FilterState(xs_hat=np.array([2.0]), zd_hat=np.array([0.0]))
    y = f.C_s @ (f.A_s @ st.xs_hat)  # measurement equal to the forecast
    new, e = filter_update(f, st, y, np.zeros(1))
    np.testing.assert_allclose(e, 0.0, atol=1e-14)
    np.testing.assert_allclose(new.xs_hat, f.A_s @ st.xs_hat)


def test_update_zero_gain_is_open_loop():
    f = solve_dare(_scalar(0.5), _scalar(1.0), _scalar(1.0), _scalar(1.0))
    open_loop = type(f)(
        P_s=f.P_s, R_e=f.R_e, K_fx=np.zeros_like(f.K_fx), A_s=f.A_s, C_s=f.C_s,
    )
    st = FilterState(xs_hat=np.array([1.5]), zd_hat=np.array([0.0]))
    new, _ = filter_update(open_loop, st, np.array([99.0]), np.zeros(1))
    np.testing.assert_allclose(new.xs_hat, f.A_s @ st.xs_hat)


def test_innovation_covariance_monte_carlo():
    rng = np.random.default_rng(8)
    A = np.array([[0.9, 0.1], [0.0, 0.7]])
    C = np.array([[1.0, 0.5]])
    Rw = np.diag([0.3, 0.2])
    Rv = _scalar(0.4)
    f = solve_dare(A, C, Rw, Rv)

    steps = 10_000
    Lw = np.linalg.cholesky(Rw)
    x = np.zeros(2)
    st = FilterState(xs_hat=np.zeros(2), zd_hat=np.zeros(1))
    innovations = np.zeros(steps)
    for k in range(steps):
        x = A @ x + Lw @ rng.normal(size=2)
        y = C @ x + np.sqrt(Rv[0, 0]) * rng.normal(size=1)
        st, e = filter_update(f, st, y, np.zeros(1))
        innovations[k] = e[0]
    sample_var = np.var(innovations[100:])
    assert sample_var == pytest.approx(f.R_e[0, 0], rel=0.10)


def test_predictions_zero_state():
    f = solve_dare(_scalar(0.5), _scalar(1.0), _scalar(1.0), _scalar(1.0))
    st = FilterState(xs_hat=np.zeros(1), zd_hat=np.zeros(1))
    np.testing.assert_allclose(predict_outputs(f, st, 5), 0.0)


def test_predictions_integrator_holds():
    f = solve_dare(_scalar(1.0), _scalar(1.0), _scalar(1.0), _scalar(1.0))
    st = FilterState(xs_hat=np.array([1.7]), zd_hat=np.zeros(1))
    np.testing.assert_allclose(predict_outputs(f, st, 4), 1.7)


def test_predictions_match_repeated_propagation():
    rng = np.random.default_rng(15)
    A = np.array([[0.8, 0.2], [-0.1, 0.6]])
    C = np.array([[1.0, 1.0]])
    f = solve_dare(A, C, 0.1 * np.eye(2), _scalar(0.2))
    x = rng.normal(size=2)
    st = FilterState(xs_hat=x, zd_hat=np.zeros(1))
    preds = predict_outputs(f, st, 3)
    x3 = A @ (A @ (A @ x))
    np.testing.assert_allclose(preds[2], C @ x3, rtol=1e-12)


def test_predictions_compose_with_deterministic_part():
    f = solve_dare(_scalar(0.5), _scalar(1.0), _scalar(1.0), _scalar(1.0))
    st = FilterState(xs_hat=np.array([2.0]), zd_hat=np.zeros(1))
    zd = np.arange(1.0, 4.0).reshape(3, 1)
    composed = predict_outputs(f, st, 3, zd_pred=zd)
    alone = predict_outputs(f, st, 3)
    np.testing.assert_allclose(composed, alone + zd)


def test_predictions_need_positive_horizon():
    f = solve_dare(_scalar(0.5), _scalar(1.0), _scalar(1.0), _scalar(1.0))
    st = FilterState(xs_hat=np.zeros(1), zd_hat=np.zeros(1))
    with pytest.raises(ValueError, match="horizon"):
        predict_outputs(f, st, 0)
