import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqkernel.dynamics import LTISystem, rnn_tanh_forward
from seqkernel.errors import DegenerateProjection, InvalidInput, OrderError
from seqkernel.gradients import (AttentionParams, adversarial_input, alpha_closed_form,
                                 attention_jacobian, attention_scores, causal_attention_forward,
                                 decay_sweep, fd_jacobian, log_slope, relative_error, rnn_forward,
                                 rnn_tanh_jacobian, ssm_forward, ssm_jacobian)
from seqkernel.linalg import make_rng, spectral_norm
from seqkernel.rank import rotation_witness


def test_ssm_diagonal_decay_frozen():
    sys = LTISystem(0.9 * np.eye(2), np.eye(2), np.eye(2))
    rep = ssm_jacobian(sys, 12, 2)
    assert rep.norm2 == pytest.approx(0.34867844010, rel=1e-10)
    assert rep.norm2 <= rep.bound * (1 + 1e-12)


def test_ssm_same_position_is_cb(rng):
    sys = LTISystem(rng.standard_normal((3, 3)), rng.standard_normal((3, 2)), rng.standard_normal((2, 3)))
    np.testing.assert_allclose(ssm_jacobian(sys, 4, 4).J, sys.C @ sys.B, rtol=1e-15)


def test_ssm_rotation_is_flat():
    for tau in (1, 7, 50):
        assert ssm_jacobian(rotation_witness(), tau, 0).norm2 == pytest.approx(1.0, abs=1e-12)


def test_order_errors(rng):
    X = rng.standard_normal((2, 4))
    with pytest.raises(OrderError):
        ssm_jacobian(rotation_witness(), 1, 2)
    with pytest.raises(OrderError):
        attention_jacobian(X, np.eye(2), np.eye(2), np.eye(2), 1, 3)
    with pytest.raises(OrderError):
        rnn_tanh_jacobian(np.eye(2), np.eye(2), np.eye(2), X, 0, 1)


def test_attention_zero_query_uniform(rng):
    X, W_K, V = rng.standard_normal((3, 6)), rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    i = 4
    rep = attention_jacobian(X, np.zeros((2, 3)), W_K, V, i, 1)
    np.testing.assert_allclose(rep.J, V / (i + 1), atol=1e-15)


def test_report_norm_invariant(rng):
    X = rng.standard_normal((3, 5))
    rep = attention_jacobian(X, *(rng.standard_normal((2, 3)) for _ in range(3)), 4, 2)
    assert abs(rep.norm2 - spectral_norm(rep.J)) <= 1e-10


@given(st.integers(0, 100_000))
def test_attention_matches_fd(seed):
    rng = make_rng(seed)
    d, n = 3, int(rng.integers(2, 8))
    W_Q, W_K, V = rng.standard_normal((2, d)), rng.standard_normal((2, d)), rng.standard_normal((2, d))
    X = rng.standard_normal((d, n))
    i = int(rng.integers(0, n))
    j = int(rng.integers(0, i + 1))
    J = attention_jacobian(X, W_Q, W_K, V, i, j, scale=np.sqrt(2)).J
    J_fd = fd_jacobian(causal_attention_forward(W_Q, W_K, V, np.sqrt(2)), X, i, j).J
    assert relative_error(J, J_fd) <= 1e-5


@given(st.integers(0, 100_000))
def test_ssm_matches_fd(seed):
    rng = make_rng(seed)
    sys = LTISystem(0.5 * rng.standard_normal((3, 3)), rng.standard_normal((3, 2)), rng.standard_normal((2, 3)))
    X = rng.standard_normal((2, 6))
    i = int(rng.integers(0, 6))
    j = int(rng.integers(0, i + 1))
    assert relative_error(ssm_jacobian(sys, i, j).J, fd_jacobian(ssm_forward(sys), X, i, j).J) <= 1e-8


@given(st.integers(0, 100_000))
def test_rnn_matches_fd(seed):
    rng = make_rng(seed)
    W, U, C = 0.5 * rng.standard_normal((3, 3)), rng.standard_normal((3, 2)), rng.standard_normal((2, 3))
    X = rng.standard_normal((2, 6))
    i = int(rng.integers(0, 6))
    j = int(rng.integers(0, i + 1))
    J = rnn_tanh_jacobian(W, U, C, X, i, j).J
    assert relative_error(J, fd_jacobian(rnn_forward(W, U, C), X, i, j).J) <= 1e-5


def test_rnn_zero_input_same_step(rng):
    W, U, C = rng.standard_normal((3, 3)), rng.standard_normal((3, 2)), rng.standard_normal((2, 3))
    np.testing.assert_allclose(rnn_tanh_jacobian(W, U, C, np.zeros((2, 3)), 0, 0).J, C @ U, rtol=1e-15)


def test_rnn_saturation_shrinks_norm(rng):
    W, U, C = 0.5 * rng.standard_normal((3, 3)), rng.standard_normal((3, 2)), rng.standard_normal((2, 3))
    X = rng.standard_normal((2, 6))
    small = rnn_tanh_jacobian(W, U, C, 1e-3 * X, 5, 2).norm2
    big = rnn_tanh_jacobian(W, U, C, 50 * X, 5, 2).norm2
    assert big < small


def test_fd_linear_exact(rng):
    M = rng.standard_normal((2, 3))
    X = rng.standard_normal((3, 4))
    J = fd_jacobian(lambda Z: M @ Z, X, 2, 2).J
    np.testing.assert_allclose(J, M, atol=1e-9)
    assert not fd_jacobian(lambda Z: M @ Z, X, 2, 1).J.any()
    with pytest.raises(InvalidInput):
        fd_jacobian(lambda Z: Z, X, 0, 0, h=0)


@pytest.mark.parametrize("eps", [0.1, 1e-3, 1e-6])
@pytest.mark.parametrize("dist", [1, 10, 100, 250, 1000])
def test_adversarial_lower_bound(eps, dist):
    attn = AttentionParams.random(4, 4, 4, seed=5)
    adv = adversarial_input(attn.W_Q, attn.W_K, attn.V, dist, 0, epsilon=eps)
    assert adv.achieved_norm >= spectral_norm(attn.V) - eps


def test_adversarial_unit_v_distance_100():
    V = np.eye(2)
    adv = adversarial_input(np.eye(2), np.eye(2), V, 100, 0, epsilon=0.1)
    assert adv.achieved_norm >= 0.9
    X = adv.X
    np.testing.assert_array_equal(X[:, 100], adv.u)
    np.testing.assert_allclose(X[:, 0], adv.gamma / np.linalg.norm(adv.a_vec) ** 2 * adv.a_vec)
    assert not X[:, 1:100].any()


def test_adversarial_gamma_grows_with_precision():
    attn = AttentionParams.random(3, 3, 3, seed=1)
    g = [adversarial_input(attn.W_Q, attn.W_K, attn.V, 50, 0, epsilon=e).gamma for e in (0.1, 1e-3, 1e-6)]
    assert g[0] <= g[1] <= g[2]
    assert g[2] < 700


def test_alpha_matches_closed_form():
    attn = AttentionParams.random(3, 3, 3, seed=2)
    adv = adversarial_input(attn.W_Q, attn.W_K, attn.V, 30, 0, epsilon=1e-3)
    s_self = float(adv.u @ adv.a_vec)
    assert adv.alpha == pytest.approx(alpha_closed_form(adv.gamma, 30, s_self), rel=1e-12)
    assert alpha_closed_form(20.0, 7) == pytest.approx(np.exp(20) / (np.exp(20) + 7), rel=1e-14)


def test_adversarial_errors():
    with pytest.raises(DegenerateProjection):
        adversarial_input(np.zeros((2, 2)), np.eye(2), np.eye(2), 3, 0)
    with pytest.raises(DegenerateProjection):
        adversarial_input(np.eye(2), np.diag([1.0, 0.0]), np.eye(2), 3, 0, u=[0.0, 1.0])
    with pytest.raises(OrderError):
        adversarial_input(np.eye(2), np.eye(2), np.eye(2), 3, 3)
    with pytest.raises(InvalidInput):
        adversarial_input(np.eye(2), np.eye(2), np.eye(2), 3, 0, epsilon=0)
    with pytest.raises(InvalidInput):
        adversarial_input(np.eye(2), np.eye(2), np.zeros((2, 2)), 3, 0)


def test_probe_fallback_past_e1():
    # e_1 is annihilated, e_2 is not
    W_Q = np.array([[0.0, 1.0]])
    adv = adversarial_input(W_Q, W_Q, np.eye(2), 5, 0, epsilon=0.1)
    np.testing.assert_array_equal(adv.u, [0.0, 1.0])


@pytest.mark.parametrize("rho", [0.8, 0.9, 0.95])
def test_decay_sweep_slope(rho):
    Q = np.linalg.qr(make_rng(3).standard_normal((4, 4)))[0]
    sys = LTISystem(rho * Q, np.eye(4), np.eye(4))
    attn = AttentionParams.random(4, 4, 4, seed=0)
    dist = list(range(1, 129, 9))
    rows = decay_sweep(sys, attn, dist, n_random=2)
    slope = log_slope(dist, [r["ssm_norm"] for r in rows])
    assert abs(slope - np.log(rho)) <= 0.02 * abs(np.log(rho))
    assert all(r["ssm_norm"] <= r["bound"] * (1 + 1e-12) for r in rows)
    assert all(r["attn_adversarial_norm"] >= spectral_norm(attn.V) - 0.1 for r in rows)


def test_decay_sweep_rejects_unsorted():
    attn = AttentionParams.random(2, 2, 2, seed=0)
    with pytest.raises(InvalidInput):
        decay_sweep(rotation_witness(), attn, [4, 2])


def test_attention_scores_sum_to_one(rng):
    s = attention_scores(rng.standard_normal((3, 6)), rng.standard_normal((2, 3)), rng.standard_normal((2, 3)), 4)
    assert s.shape == (5,) and s.sum() == pytest.approx(1.0, abs=1e-15)


def test_rnn_forward_state_shapes(rng):
    Y, Hs = rnn_tanh_forward(np.eye(3), np.ones((3, 2)), np.ones((1, 3)), rng.standard_normal((2, 5)))
    assert Y.shape == (1, 5) and Hs.shape == (3, 5)
