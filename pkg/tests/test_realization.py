import numpy as np
import pytest

from ctlmpc.realization import frequency_response, realize_ns, realize_siso
from ctlmpc.transfer import RationalTransfer, TransferMatrix, evaluate

TF = RationalTransfer.from_factors


def test_first_order_companion_form():
    ss = realize_siso(RationalTransfer(num=[1], den=[1, 1]))
    np.testing.assert_allclose(ss.A_c, [[-1.0]])
    np.testing.assert_allclose(ss.B_c, [[1.0]])
    np.testing.assert_allclose(ss.C_c, [[1.0]])
    np.testing.assert_allclose(ss.D_c, [[0.0]])


def test_static_gain_is_memoryless():
    ss = realize_siso(RationalTransfer(num=[2.0], den=[1.0]))
    assert ss.order == 0
    np.testing.assert_allclose(ss.D_c, [[2.0]])


def test_pure_delayed_gain():
    ss = realize_siso(RationalTransfer(num=[3.0], den=[2.0], delay=1.0))
    assert ss.order == 0
    np.testing.assert_allclose(ss.D_c, [[1.5]])
    assert ss.delay == 1.0


def test_siso_control_model_realization(siso_model_G):
    ss = realize_siso(siso_model_G[0, 0])
    assert ss.order == 2
    assert ss.delay == 2.5
    dc = (ss.C_c @ np.linalg.solve(-ss.A_c, ss.B_c))[0, 0] + ss.D_c[0, 0]
    assert dc == pytest.approx(10.12, rel=1e-12)


def test_feedthrough_zero_unless_degrees_match():
    strict = realize_siso(TF(gain=1.0, num_factors=[[1, 8]],
                             den_factors=[[1, 2], [1, 38]]))
    assert strict.D_c[0, 0] == 0.0
    biproper = realize_siso(RationalTransfer(num=[1, 2], den=[1, 1]))
    assert biproper.D_c[0, 0] == pytest.approx(2.0)


def test_frequency_response_matches_rational_evaluation():
    rng = np.random.default_rng(42)
    cases = [
        TF(gain=10.12, num_factors=[[1, -3.58]],
           den_factors=[[1, 18.9], [1, 22.2]], delay=2.5),
        TF(gain=-0.5, den_factors=[[1, 5.8], [1, 4.7]]),
        RationalTransfer(num=[1, 2], den=[1, 1]),
        TF(gain=0.6, den_factors=[[0, 1], [1, 1]]),
    ]
    for _ in range(4):
        den = rng.uniform(0.2, 3.0, size=4)
        num = rng.uniform(-2.0, 2.0, size=rng.integers(1, 5))
        cases.append(RationalTransfer(num=num, den=den,
                                      delay=float(rng.uniform(0, 5))))
    for tf in cases:
        ss = realize_siso(tf)
        for w in rng.uniform(0.01, 10.0, size=32):
            s = 1j * w
            got = frequency_response(ss, s)
            want = evaluate(tf, s)
            assert abs(got - want) <= 1e-9 * max(1.0, abs(want)), (tf, w)


def test_realize_ns_siso_noise_poles(siso_model_G, siso_model_H):
    ns = realize_ns(siso_model_G, siso_model_H)
    assert ns.n_stoch == 2
    eig = np.sort(np.linalg.eigvals(ns.A_s).real)
    np.testing.assert_allclose(eig, [-1.0, 0.0], atol=1e-12)
    assert ns.n_z == ns.n_u == ns.n_w == 1


def test_realize_ns_without_noise_model(siso_model_G):
    ns = realize_ns(siso_model_G, None)
    assert ns.n_w == 0
    assert ns.n_stoch == 0
    assert ns.A_s.shape == (0, 0)
    assert ns.C_s.shape == (1, 0)


def test_realize_ns_cement_mill_noise_block_diagonal(mill_model_G, mill_model_H):
    ns = realize_ns(mill_model_G, mill_model_H)
    assert ns.n_stoch == 4
    # one integrator-lag pair per diagonal entry, decoupled blocks
    np.testing.assert_allclose(ns.A_s[:2, 2:], 0.0)
    np.testing.assert_allclose(ns.A_s[2:, :2], 0.0)
    assert ns.C_s[0, 2:] == pytest.approx([0.0, 0.0])
    assert ns.C_s[1, :2] == pytest.approx([0.0, 0.0])
    # each block input feeds its own noise column
    assert np.any(ns.B_s[:2, 0] != 0.0) and not np.any(ns.B_s[:2, 1])
    assert np.any(ns.B_s[2:, 1] != 0.0) and not np.any(ns.B_s[2:, 0])


def test_realize_ns_row_count_mismatch(siso_model_G, mill_model_H):
    with pytest.raises(ValueError, match="rows"):
        realize_ns(siso_model_G, mill_model_H)


def test_stacked_outputs_superpose():
    """Channel stacking is linear: response to u1+u2 = response(u1) + response(u2)."""
    rng = np.random.default_rng(3)
    rows = []
    for i in range(2):
        row = []
        for j in range(2):
            den = rng.uniform(0.5, 2.0, size=3)
            num = rng.uniform(-1.0, 1.0, size=2)
            row.append(RationalTransfer(num=num, den=den))
        rows.append(tuple(row))
    G = TransferMatrix(tuple(rows))
    ns = realize_ns(G, None)

    def fine_response(u_of_t, T=2.0, steps=2000):
        h = T / steps
        out = np.zeros((steps + 1, 2))
        states = [[np.zeros(ns.det_channels[i][j].order) for j in range(2)]
                  for i in range(2)]
        for k in range(steps + 1):
            u = u_of_t(k * h)
            for i in range(2):
                acc = 0.0
                for j in range(2):
                    ch = ns.det_channels[i][j]
                    acc += (ch.C_c @ states[i][j])[0] + ch.D_c[0, 0] * u[j]
                out[k, i] = acc
            if k < steps:
                for i in range(2):
                    for j in range(2):
                        ch = ns.det_channels[i][j]
                        x = states[i][j]
                        # one explicit midpoint step is plenty for a linearity check
                        k1 = ch.A_c @ x + ch.B_c[:, 0] * u[j]
                        xm = x + 0.5 * h * k1
                        um = u_of_t((k + 0.5) * h)
                        k2 = ch.A_c @ xm + ch.B_c[:, 0] * um[j]
                        states[i][j] = x + h * k2
        return out

    u1 = lambda t: np.array([np.sin(3 * t), 0.3])
    u2 = lambda t: np.array([0.5, np.cos(2 * t)])
    both = lambda t: u1(t) + u2(t)
    z1, z2, z12 = fine_response(u1), fine_response(u2), fine_response(both)
    np.testing.assert_allclose(z12, z1 + z2, atol=1e-9)
