"""Scalar-weight ("factorized") sequence models.

Every model here has blocks ``W_ij(X) = alpha_ij(X) * V``: one scalar weight
per token pair times a value matrix shared by all pairs. In matrix form the
output is ``Y = V X A(X)^T``. A multi-head model sums several such terms.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, ShapeError
from .kernel import InteractionTensor, as_sequence
from .linalg import as_matrix, make_rng


@dataclass(frozen=True)
class ScalarWeightMatrix:
    A: np.ndarray
    causal: bool = False
    row_stochastic: bool = False

    def __post_init__(self):
        A = as_matrix(self.A, "weight matrix")
        if A.shape[0] != A.shape[1]:
            raise ShapeError(f"weight matrix must be square, got {A.shape}")
        if self.causal and np.any(np.triu(A, 1) != 0.0):
            raise InvalidInput("causal weight matrix has entries above the diagonal")
        object.__setattr__(self, "A", A)

    @property
    def n(self):
        return self.A.shape[0]


def causal_mask(n):
    return np.tril(np.ones((n, n)))


def _mask(A, causal):
    return np.tril(A) if causal else A


# -- weight generators -----------------------------------------------------

def weights_mlp(n):
    """Kronecker delta weights: tokens do not interact."""
    if n < 1:
        raise InvalidInput(f"length must be >= 1, got {n}")
    return ScalarWeightMatrix(np.eye(n), causal=True)


def weights_cnn(kernel, n):
    """Banded Toeplitz weights ``A_ij = c_{i-j}`` for ``|i-j| <= r``.

    ``kernel`` has odd length ``2r+1`` and ``kernel[k + r] = c_k``. Rows near
    the edges are truncated, not padded.
    """
    c = np.asarray(kernel, dtype=float).reshape(-1)
    if c.size % 2 != 1:
        raise InvalidInput("kernel length must be odd (indices -r..r)")
    r = c.size // 2
    if c.size > 2 * n - 1:
        raise InvalidInput(f"kernel radius {r} too large for n={n}")
    offsets = np.subtract.outer(np.arange(n), np.arange(n))
    A = np.where(np.abs(offsets) <= r, c[np.clip(offsets + r, 0, c.size - 1)], 0.0)
    # c_k with k < 0 weights future tokens; without them the band is causal
    return ScalarWeightMatrix(A, causal=bool(np.all(c[:r] == 0)))


def softmax_rows(logits, causal):
    """Row softmax with max subtraction; masked entries get exactly zero."""
    S = np.array(logits, dtype=float)
    if causal:
        S[np.triu_indices(S.shape[0], 1)] = -np.inf
    S -= S.max(axis=1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=1, keepdims=True)


def weights_softmax_attention(X, W_Q, W_K, scale=1.0, causal=True):
    """Softmax of ``q_i . k_j / scale`` over j (over j <= i when causal)."""
    W_Q, W_K = as_matrix(W_Q, "W_Q"), as_matrix(W_K, "W_K")
    X = as_sequence(X, W_Q.shape[1])
    if W_K.shape != W_Q.shape:
        raise ShapeError(f"W_Q {W_Q.shape} and W_K {W_K.shape} differ")
    logits = (W_Q @ X).T @ (W_K @ X) / scale
    return ScalarWeightMatrix(softmax_rows(logits, causal), causal=causal, row_stochastic=True)


def _elu_plus_one(z):
    return np.where(z > 0, z + 1.0, np.exp(np.minimum(z, 0.0)))


FEATURE_MAPS = {
    "identity": lambda z: z,
    "elu_plus_one": _elu_plus_one,
    "relu": lambda z: np.maximum(z, 0.0),
    "ones": lambda z: np.ones((1,) + z.shape[1:]),
}


def feature_map(name):
    try:
        return FEATURE_MAPS[name]
    except KeyError:
        raise InvalidInput(f"unknown feature map {name!r}; choose from {sorted(FEATURE_MAPS)}")


def linear_attention_features(X, W_Q, W_K, phi, psi):
    """Feature-mapped queries and keys, both ``r x n``."""
    Phi = feature_map(phi)(W_Q @ X)
    Psi = feature_map(psi)(W_K @ X)
    if Phi.shape != Psi.shape:
        raise ShapeError(f"feature maps disagree in width: {Phi.shape} vs {Psi.shape}")
    return Phi, Psi


def weights_linear_attention(X, W_Q, W_K, phi="identity", psi="identity", causal=False):
    """``A_ij = phi(q_i) . psi(k_j)``, masked above the diagonal when causal."""
    W_Q, W_K = as_matrix(W_Q, "W_Q"), as_matrix(W_K, "W_K")
    X = as_sequence(X, W_Q.shape[1])
    Phi, Psi = linear_attention_features(X, W_Q, W_K, phi, psi)
    return ScalarWeightMatrix(_mask(Phi.T @ Psi, causal), causal=causal)


def weights_positional(Phi, Psi, causal=True):
    """``A_ij = <Phi[i], Psi[j]>`` from position-indexed tables (``n x r`` each)."""
    Phi, Psi = as_matrix(Phi, "Phi"), as_matrix(Psi, "Psi")
    if Phi.shape != Psi.shape:
        raise ShapeError(f"position tables differ: {Phi.shape} vs {Psi.shape}")
    return ScalarWeightMatrix(_mask(Phi @ Psi.T, causal), causal=causal)


@dataclass(frozen=True)
class BasisFunction:
    """Scalar function of a token from a closed vocabulary.

    ``poly``: ``sum_k coeffs[k] (w . x)^k`` with degree <= 3;
    ``tanh``: ``tanh(w . x + bias)``; ``coord``: ``x[index]``.
    """

    kind: str
    w: tuple = ()
    coeffs: tuple = ()
    bias: float = 0.0
    index: int = 0

    def __post_init__(self):
        if self.kind not in ("poly", "tanh", "coord"):
            raise InvalidInput(f"unknown basis kind {self.kind!r}")
        if self.kind == "poly" and not 1 <= len(self.coeffs) <= 4:
            raise InvalidInput("poly basis needs 1 to 4 coefficients (degree <= 3)")
        object.__setattr__(self, "w", tuple(float(v) for v in self.w))
        object.__setattr__(self, "coeffs", tuple(float(v) for v in self.coeffs))

    def __call__(self, X):
        """Evaluate on every column of ``X``; returns a length-n vector."""
        if self.kind == "coord":
            return X[self.index]
        z = np.asarray(self.w) @ X if self.w else np.zeros(X.shape[1])
        if self.kind == "tanh":
            return np.tanh(z + self.bias)
        return np.polynomial.polynomial.polyval(z, self.coeffs)

    def to_dict(self):
        return {"kind": self.kind, "w": list(self.w), "coeffs": list(self.coeffs),
                "bias": self.bias, "index": self.index}


def kan_channels(X, pairs):
    G = np.stack([g(X) for g, _ in pairs])
    Hm = np.stack([h(X) for _, h in pairs])
    return G, Hm


def weights_kan(X, pairs):
    """``A_ij = sum_m g_m(x_i) h_m(x_j)`` (the double-sum form)."""
    X = as_sequence(X)
    G, Hm = kan_channels(X, pairs)
    return ScalarWeightMatrix(G.T @ Hm)


# -- generators bundled with their parameters ------------------------------

@dataclass(frozen=True)
class Identity:
    kind = "identity"

    def weights(self, X):
        return weights_mlp(X.shape[1])


@dataclass(frozen=True)
class Toeplitz:
    kernel: np.ndarray
    kind = "toeplitz"

    def weights(self, X):
        return weights_cnn(self.kernel, X.shape[1])


@dataclass(frozen=True)
class SoftmaxAttention:
    W_Q: np.ndarray
    W_K: np.ndarray
    scale: float = 1.0
    causal: bool = True
    kind = "softmax_attention"

    def weights(self, X):
        return weights_softmax_attention(X, self.W_Q, self.W_K, self.scale, self.causal)


@dataclass(frozen=True)
class LinearAttention:
    W_Q: np.ndarray
    W_K: np.ndarray
    phi: str = "identity"
    psi: str = "identity"
    causal: bool = False
    kind = "linear_attention"

    def weights(self, X):
        return weights_linear_attention(X, self.W_Q, self.W_K, self.phi, self.psi, self.causal)


@dataclass(frozen=True)
class PositionalTable:
    Phi: np.ndarray
    Psi: np.ndarray
    causal: bool = True
    kind = "positional_table"

    def weights(self, X):
        n = X.shape[1]
        if np.shape(self.Phi)[0] != n:
            raise ShapeError(f"table has {np.shape(self.Phi)[0]} positions, sequence has {n}")
        return weights_positional(self.Phi, self.Psi, self.causal)


@dataclass(frozen=True)
class SeparableKAN:
    pairs: tuple
    kind = "separable_kan"

    def weights(self, X):
        return weights_kan(X, self.pairs)


@dataclass(frozen=True)
class FactorizedHead:
    V: np.ndarray
    generator: object

    def __post_init__(self):
        object.__setattr__(self, "V", as_matrix(self.V, "V"))


@dataclass(frozen=True)
class MultiHeadModel:
    heads: tuple

    def __post_init__(self):
        heads = tuple(self.heads)
        if not heads:
            raise InvalidInput("a multi-head model needs at least one head")
        shapes = {h.V.shape for h in heads}
        if len(shapes) != 1:
            raise ShapeError(f"heads disagree on value shape: {sorted(shapes)}")
        object.__setattr__(self, "heads", heads)

    @property
    def H(self):
        return len(self.heads)

    @property
    def p(self):
        return self.heads[0].V.shape[0]

    @property
    def d(self):
        return self.heads[0].V.shape[1]


# -- application -----------------------------------------------------------

def apply_factorized(A, V, X):
    """``Y = V X A^T``."""
    V = as_matrix(V, "V")
    X = as_sequence(X, V.shape[1])
    if A.n != X.shape[1]:
        raise ShapeError(f"weights are {A.n} x {A.n}, sequence length is {X.shape[1]}")
    return V @ X @ A.A.T


def factorized_tensor(A, V):
    """Blocks ``alpha_ij * V`` as an :class:`InteractionTensor`."""
    V = as_matrix(V, "V")
    return InteractionTensor(A.A[:, :, None, None] * V, causal=A.causal)


def apply_linear_attention_fast(X, W_Q, W_K, V, phi="identity", psi="identity", causal=False):
    """Linear attention through the ``r x p`` summary matrix, never forming ``A``.

    Non-causal: ``S = sum_j psi(k_j) (V x_j)^T`` and ``y_i = S^T phi(q_i)``.
    Causal: the same with running prefix sums ``S_i``.
    """
    V = as_matrix(V, "V")
    X = as_sequence(X, V.shape[1])
    Phi, Psi = linear_attention_features(X, as_matrix(W_Q), as_matrix(W_K), phi, psi)
    VX = V @ X
    if not causal:
        S = Psi @ VX.T
        return S.T @ Phi
    S = np.cumsum(np.einsum("rj,pj->jrp", Psi, VX), axis=0)
    return np.einsum("jrp,rj->pj", S, Phi)


def apply_kan(X, pairs, V):
    """Channel form: ``C_m = sum_j h_m(x_j) V x_j``, then ``y_i = sum_m g_m(x_i) C_m``."""
    V = as_matrix(V, "V")
    X = as_sequence(X, V.shape[1])
    G, Hm = kan_channels(X, pairs)
    channels = (V @ X) @ Hm.T  # p x r
    return channels @ G


def apply_multihead(model, X):
    X = as_sequence(X, model.d)
    Y = np.zeros((model.p, X.shape[1]))
    for head in model.heads:
        Y += apply_factorized(head.generator.weights(X), head.V, X)
    return Y


def multihead_tensor(model, X):
    """Blocks ``K_ij = sum_h alpha^(h)_ij V^(h)`` evaluated at input ``X``."""
    X = as_sequence(X, model.d)
    weights = [h.generator.weights(X) for h in model.heads]
    alphas = np.stack([w.A for w in weights])
    Vs = np.stack([h.V for h in model.heads])
    blocks = np.einsum("hij,hpd->ijpd", alphas, Vs)
    return InteractionTensor(blocks, causal=all(w.causal for w in weights))


def apply_multihead_concat(X, generators, head_values, W_O):
    """Standard form: per-head outputs ``z^(h) = V_h X A_h^T`` stacked, then ``W_O``."""
    X = as_sequence(X)
    Z = [apply_factorized(g.weights(X), Vh, X) for g, Vh in zip(generators, head_values)]
    return as_matrix(W_O, "W_O") @ np.vstack(Z)


def absorb_output_projection(generators, head_values, W_O):
    """Sum-of-heads model with ``V^(h) = W_O^(h) V_h`` (``W_O^(h)`` is the head's column block)."""
    W_O = as_matrix(W_O, "W_O")
    widths = [np.shape(Vh)[0] for Vh in head_values]
    if sum(widths) != W_O.shape[1]:
        raise ShapeError(f"W_O has {W_O.shape[1]} columns, heads stack to {sum(widths)}")
    edges = np.cumsum([0] + widths)
    heads = [FactorizedHead(W_O[:, edges[h]:edges[h + 1]] @ as_matrix(Vh), g)
             for h, (g, Vh) in enumerate(zip(generators, head_values))]
    return MultiHeadModel(tuple(heads))


# -- model config files ----------------------------------------------------

def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def generator_to_dict(g):
    if isinstance(g, Identity):
        return {"kind": g.kind}
    if isinstance(g, Toeplitz):
        return {"kind": g.kind, "kernel": _arr(g.kernel)}
    if isinstance(g, SoftmaxAttention):
        return {"kind": g.kind, "W_Q": _arr(g.W_Q), "W_K": _arr(g.W_K),
                "scale": float(g.scale), "causal": bool(g.causal)}
    if isinstance(g, LinearAttention):
        return {"kind": g.kind, "W_Q": _arr(g.W_Q), "W_K": _arr(g.W_K),
                "phi": g.phi, "psi": g.psi, "causal": bool(g.causal)}
    if isinstance(g, PositionalTable):
        return {"kind": g.kind, "Phi": _arr(g.Phi), "Psi": _arr(g.Psi), "causal": bool(g.causal)}
    if isinstance(g, SeparableKAN):
        return {"kind": g.kind, "pairs": [[a.to_dict(), b.to_dict()] for a, b in g.pairs]}
    raise InvalidInput(f"cannot serialize generator {g!r}")


def generator_from_dict(data):
    kind = data.get("kind")
    if kind == "identity":
        return Identity()
    if kind == "toeplitz":
        return Toeplitz(np.asarray(data["kernel"], dtype=float))
    if kind == "softmax_attention":
        return SoftmaxAttention(np.asarray(data["W_Q"], dtype=float), np.asarray(data["W_K"], dtype=float),
                                float(data.get("scale", 1.0)), bool(data.get("causal", True)))
    if kind == "linear_attention":
        return LinearAttention(np.asarray(data["W_Q"], dtype=float), np.asarray(data["W_K"], dtype=float),
                               data.get("phi", "identity"), data.get("psi", "identity"),
                               bool(data.get("causal", False)))
    if kind == "positional_table":
        return PositionalTable(np.asarray(data["Phi"], dtype=float), np.asarray(data["Psi"], dtype=float),
                               bool(data.get("causal", True)))
    if kind == "separable_kan":
        return SeparableKAN(tuple((BasisFunction(**a), BasisFunction(**b)) for a, b in data["pairs"]))
    raise InvalidInput(f"unknown generator kind {kind!r}")


def model_to_dict(model, seed=None):
    return {
        "H": model.H, "p": model.p, "d": model.d, "seed": seed, "v_init": "explicit",
        "heads": [{"V": _arr(h.V), "generator": generator_to_dict(h.generator)} for h in model.heads],
    }


def model_from_dict(data):
    """Build a model from its config; ``v_init: uniform`` draws any missing V from ``seed``."""
    heads_cfg = data.get("heads", [])
    if "H" in data and int(data["H"]) != len(heads_cfg):
        raise InvalidInput(f"config declares H={data['H']} but lists {len(heads_cfg)} heads")
    mode = data.get("v_init", "explicit")
    heads = []
    for h, cfg in enumerate(heads_cfg):
        if "V" in cfg:
            V = np.asarray(cfg["V"], dtype=float)
        elif mode == "uniform":
            p, d = int(data["p"]), int(data["d"])
            bound = 1.0 / np.sqrt(d)
            V = make_rng(int(data.get("seed") or 0), h).uniform(-bound, bound, (p, d))
        else:
            raise InvalidInput(f"head {h} has no V and v_init is {mode!r}")
        heads.append(FactorizedHead(V, generator_from_dict(cfg["generator"])))
    return MultiHeadModel(tuple(heads))


def save_model(model, path, seed=None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, seed), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
