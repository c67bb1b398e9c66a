"""Input-output Jacobians ``J_ij = d y_i / d x_j`` and the long-range sensitivity sweep.

Positions ``i`` and ``j`` are 0-based column indices here.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import lti_scan, rnn_tanh_forward
from .errors import DegenerateProjection, InvalidInput, OrderError
from .factorized import softmax_rows
from .kernel import as_sequence
from .linalg import as_matrix, make_rng, spectral_norm

GAMMA_CAP = 700.0


@dataclass(frozen=True)
class JacobianReport:
    i: int
    j: int
    J: np.ndarray
    norm2: float
    method: str
    bound: float = None


def _report(i, j, J, method, bound=None):
    return JacobianReport(i, j, J, spectral_norm(J), method, bound)


def _check_order(i, j):
    if j > i:
        raise OrderError(f"need j <= i, got i={i}, j={j}")
    if j < 0:
        raise OrderError(f"positions must be non-negative, got j={j}")


def ssm_jacobian(sys, i, j):
    """``C A^(i-j) B`` together with the bound ``|C| |B| |A|^(i-j)``."""
    _check_order(i, j)
    P = sys.B
    for _ in range(i - j):
        P = sys.A @ P
    bound = spectral_norm(sys.C) * spectral_norm(sys.B) * spectral_norm(sys.A) ** (i - j)
    return _report(i, j, sys.C @ P, "analytic", bound)


def attention_scores(X, W_Q, W_K, i, scale=1.0):
    """Causal softmax weights of output ``i`` over positions ``0..i``."""
    q = W_Q @ X[:, i]
    logits = (W_K @ X[:, : i + 1]).T @ q / scale
    return softmax_rows(logits[None, :], causal=False)[0]


def attention_jacobian(X, W_Q, W_K, V, i, j, scale=1.0):
    """Jacobian of the causal softmax-attention output ``y_i`` w.r.t. ``x_j``.

    ``y_i = sum_{t<=i} alpha_it V x_t`` gives a value term ``alpha_ij V`` plus
    score terms ``(V x_t) (d alpha_it / d x_j)^T``. With logits
    ``s_it = q_i . k_t / scale``, ``d s_it / d x_j`` is ``W_K^T q_i`` when
    t == j, plus ``W_Q^T k_t`` for every t when j == i.
    """
    W_Q, W_K, V = as_matrix(W_Q, "W_Q"), as_matrix(W_K, "W_K"), as_matrix(V, "V")
    X = as_sequence(X, W_Q.shape[1])
    _check_order(i, j)
    Xi = X[:, : i + 1]
    q = W_Q @ X[:, i]
    K = W_K @ Xi                      # r x (i+1)
    alpha = attention_scores(X, W_Q, W_K, i, scale)
    G = np.zeros((i + 1, X.shape[0]))  # rows: d s_it / d x_j
    G[j] += W_K.T @ q
    if j == i:
        G += (W_Q.T @ K).T
    G /= scale
    dalpha = alpha[:, None] * (G - alpha @ G)  # (i+1) x d
    J = alpha[j] * V + (V @ Xi) @ dalpha
    return _report(i, j, J, "analytic")


def rnn_tanh_jacobian(W, U, C, X, i, j):
    """``C D_i W D_{i-1} ... W D_j U`` with ``D_t = diag(1 - h_t^2)`` on the forward trajectory."""
    _check_order(i, j)
    W, U, C = as_matrix(W), as_matrix(U), as_matrix(C)
    _, Hs = rnn_tanh_forward(W, U, C, X)
    D = 1.0 - Hs ** 2
    P = D[:, j, None] * U
    for t in range(j + 1, i + 1):
        P = D[:, t, None] * (W @ P)
    return _report(i, j, C @ P, "analytic")


def fd_jacobian(forward, X, i, j, h=1e-6):
    """Central-difference Jacobian of ``forward(X)[:, i]`` w.r.t. column ``j``."""
    if h <= 0:
        raise InvalidInput("step must be positive")
    X = np.array(X, dtype=float)
    cols = []
    for c in range(X.shape[0]):
        Xp, Xm = X.copy(), X.copy()
        Xp[c, j] += h
        Xm[c, j] -= h
        cols.append((forward(Xp)[:, i] - forward(Xm)[:, i]) / (2 * h))
    return _report(i, j, np.column_stack(cols), "finite_difference")


def relative_error(J, J_ref):
    denom = max(np.linalg.norm(J_ref), np.finfo(float).tiny)
    return float(np.linalg.norm(J - J_ref) / denom)


def causal_attention_forward(W_Q, W_K, V, scale=1.0):
    """``X -> Y`` for a causal single-head softmax-attention layer."""
    def forward(X):
        A = softmax_rows((W_Q @ X).T @ (W_K @ X) / scale, causal=True)
        return V @ X @ A.T
    return forward


# -- adversarial inputs -----------------------------------------------------

@dataclass(frozen=True)
class AdversarialInput:
    X: np.ndarray
    gamma: float
    u: np.ndarray
    a_vec: np.ndarray
    epsilon: float
    achieved_norm: float
    alpha: float


def find_probe(W_Q, W_K, seed=0, tries=20):
    """A vector ``u`` with ``W_K^T W_Q u != 0``: e_1, then other basis vectors, then random draws."""
    d = W_Q.shape[1]
    M = W_K.T @ W_Q
    candidates = list(np.eye(d))
    rng = make_rng(seed)
    candidates += [rng.standard_normal(d) for _ in range(tries)]
    for u in candidates:
        a = M @ u
        if np.linalg.norm(a) > 0:
            return u, a
    raise DegenerateProjection("W_K^T W_Q annihilates every probe vector")


def adversarial_input(W_Q, W_K, V, i, j, n=None, epsilon=0.1, u=None, seed=0):
    """Input on which the attention Jacobian ``J_ij`` has norm at least ``|V|_2 - epsilon``.

    Puts ``u`` at position i, ``gamma a / |a|^2`` at position j
    (``a = W_K^T W_Q u``) and zeros elsewhere, so the logit at j is gamma.
    Gamma doubles from 1 until ``1 - alpha_ij <= eps / (2|V|)`` and the
    score-term bound is ``<= eps / 2``. Besides the zero tokens, the bound
    also carries the self logit ``s = u . W_Q^T W_K u`` at position i, which
    enters the softmax normaliser and adds a score term through ``V u``.
    """
    W_Q, W_K, V = as_matrix(W_Q, "W_Q"), as_matrix(W_K, "W_K"), as_matrix(V, "V")
    if not 0 <= j < i:
        raise OrderError(f"need 0 <= j < i, got i={i}, j={j}")
    n = i + 1 if n is None else n
    if n <= i:
        raise InvalidInput(f"sequence length {n} does not reach position {i}")
    if epsilon <= 0:
        raise InvalidInput("epsilon must be positive")
    vnorm = spectral_norm(V)
    if vnorm == 0:
        raise InvalidInput("|V|_2 must be positive")
    if u is None:
        u, a = find_probe(W_Q, W_K, seed)
    else:
        u = np.asarray(u, dtype=float)
        a = W_K.T @ W_Q @ u
        if np.linalg.norm(a) == 0:
            raise DegenerateProjection("a = W_K^T W_Q u is zero for the given u")
    s_self = float(u @ a)
    # normaliser mass outside position j: i-1 zero-logit tokens plus the self logit
    others = (i - 1) + np.exp(s_self)
    anorm = np.linalg.norm(a)
    unorm = np.linalg.norm(u)

    def tail(gamma):
        # 1 - alpha_ij without forming e^gamma
        z = others * np.exp(-gamma)
        return z / (1.0 + z)

    def perturbation(gamma):
        # t = j term, then the t = i term through V u
        return vnorm * gamma * tail(gamma) + vnorm * unorm * anorm * np.exp(s_self - gamma)

    def build(gamma):
        X = np.zeros((V.shape[1], n))
        X[:, i] = u
        X[:, j] = gamma / anorm ** 2 * a
        return X

    gamma = 1.0
    while gamma < GAMMA_CAP:
        if tail(gamma) <= epsilon / (2 * vnorm) and perturbation(gamma) <= epsilon / 2:
            X = build(gamma)
            rep = attention_jacobian(X, W_Q, W_K, V, i, j)
            if rep.norm2 >= vnorm - epsilon:
                break
        gamma *= 2.0
    else:
        gamma = GAMMA_CAP
    X = build(gamma)
    rep = attention_jacobian(X, W_Q, W_K, V, i, j)
    alpha = float(attention_scores(X, W_Q, W_K, i)[j])
    return AdversarialInput(X, gamma, u, a, epsilon, rep.norm2, alpha)


def alpha_closed_form(gamma, i, s_self=0.0):
    """``e^gamma / (e^gamma + (i - 1) + e^s_self)`` for 0-based ``i``.

    With ``s_self = 0`` and 1-based ``i' = i + 1`` this is
    ``e^gamma / (e^gamma + (i' - 1))``.
    """
    return 1.0 / (1.0 + ((i - 1) + np.exp(s_self)) * np.exp(-gamma))


# -- sweeps ---------------------------------------------------------------

@dataclass(frozen=True)
class AttentionParams:
    W_Q: np.ndarray
    W_K: np.ndarray
    V: np.ndarray

    @classmethod
    def random(cls, d, r, p, seed):
        rng = make_rng(seed)
        return cls(rng.standard_normal((r, d)) / np.sqrt(d),
                   rng.standard_normal((r, d)) / np.sqrt(d),
                   rng.standard_normal((p, d)) / np.sqrt(d))


SWEEP_COLUMNS = ("distance", "ssm_norm", "attn_adversarial_norm",
                 "attn_random_mean", "attn_random_std", "bound")


def decay_sweep(sys, attn, distances, epsilon=0.1, seed=0, n_random=20):
    """One row per distance: SSM Jacobian norm and bound, attention norms.

    Attention is probed at (i, j) = (tau, 0): once at the adversarial input
    (unscaled logits) and over ``n_random`` unit-variance random inputs with
    logits scaled by ``1/sqrt(d_k)``.
    """
    distances = [int(t) for t in distances]
    if distances != sorted(distances) or not distances or distances[0] < 1:
        raise InvalidInput("distances must be positive and sorted ascending")
    d_k = attn.W_Q.shape[0]
    rows = []
    for idx, tau in enumerate(distances):
        ssm = ssm_jacobian(sys, tau, 0)
        adv = adversarial_input(attn.W_Q, attn.W_K, attn.V, tau, 0, epsilon=epsilon, seed=seed)
        rng = make_rng(seed, 1, idx)
        norms = []
        for _ in range(n_random):
            X = rng.standard_normal((attn.V.shape[1], tau + 1))
            norms.append(attention_jacobian(X, attn.W_Q, attn.W_K, attn.V, tau, 0,
                                            scale=np.sqrt(d_k)).norm2)
        rows.append({"distance": tau, "ssm_norm": ssm.norm2,
                     "attn_adversarial_norm": adv.achieved_norm,
                     "attn_random_mean": float(np.mean(norms)),
                     "attn_random_std": float(np.std(norms)),
                     "bound": ssm.bound})
    return rows


def log_slope(distances, norms):
    """Least-squares slope of ``log(norm)`` against distance."""
    return float(np.polyfit(np.asarray(distances, dtype=float), np.log(norms), 1)[0])


def ssm_forward(sys):
    return lambda X: lti_scan(sys, X)


def rnn_forward(W, U, C):
    return lambda X: rnn_tanh_forward(W, U, C, X)[0]
