"""Recurrent sequence models: LTI state-space systems, selective scans and tanh RNNs.

All recurrences start from the zero state ``h_0 = 0``.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import InvalidInput, ShapeError
from .kernel import as_sequence, impulse_family
from .linalg import as_matrix


@dataclass(frozen=True)
class LTISystem:
    """Discrete linear system ``h_i = A h_{i-1} + B x_i``, ``y_i = C h_i``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        C = as_matrix(self.C, "C")
        m = A.shape[0]
        if A.shape != (m, m) or B.shape[0] != m or C.shape[1] != m:
            raise ShapeError(f"inconsistent system shapes A{A.shape} B{B.shape} C{C.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]


def random_lti(rng, m, d, p, radius=0.9):
    """Gaussian system with the transition rescaled to spectral radius ``radius``."""
    A = rng.standard_normal((m, m))
    rho = np.max(np.abs(np.linalg.eigvals(A)))
    if rho > 0:
        A *= radius / rho
    return LTISystem(A, rng.standard_normal((m, d)), rng.standard_normal((p, m)))


def lti_scan(sys, X):
    """Run the recurrence sequentially; returns the ``p x n`` outputs."""
    X = as_sequence(X, sys.d)
    n = X.shape[1]
    Y = np.empty((sys.p, n))
    h = np.zeros(sys.m)
    for i in range(n):
        h = sys.A @ h + sys.B @ X[:, i]
        Y[:, i] = sys.C @ h
    return Y


def lti_convolve(sys, X):
    """Same map as :func:`lti_scan`, computed as a causal convolution with the impulse family."""
    X = as_sequence(X, sys.d)
    n = X.shape[1]
    family = impulse_family(sys, n)
    Y = np.zeros((sys.p, n))
    for i in range(n):
        # y_i = sum_{tau=0}^{i} W(tau) x_{i - tau}
        Y[:, i] = np.einsum("tpd,dt->p", family[: i + 1], X[:, i::-1])
    return Y


@dataclass(frozen=True)
class StepRule:
    """How one of the per-position matrices is produced from the token ``x``.

    kind ``constant``: ``base``.
    kind ``gated``: ``diag(sigmoid(weight @ x + bias)) @ base``; with
    ``base = I`` this is the diagonal gated transition.
    kind ``linear``: ``base + sum_k x[k] * slopes[k]``.
    """

    kind: str
    base: np.ndarray
    weight: np.ndarray = None
    bias: np.ndarray = None
    slopes: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "base", as_matrix(self.base, "base"))
        if self.kind == "gated":
            if self.weight is None or self.bias is None:
                raise InvalidInput("gated rule needs weight and bias")
            object.__setattr__(self, "weight", as_matrix(self.weight, "weight"))
            object.__setattr__(self, "bias", np.asarray(self.bias, dtype=float).reshape(-1))
            if self.weight.shape[0] != self.base.shape[0] or self.bias.shape[0] != self.base.shape[0]:
                raise ShapeError("gate size must match the rows of base")
        elif self.kind == "linear":
            slopes = np.asarray(self.slopes, dtype=float)
            if slopes.ndim != 3 or slopes.shape[1:] != self.base.shape:
                raise ShapeError(f"slopes must be (d,) + base.shape, got {slopes.shape}")
            object.__setattr__(self, "slopes", slopes)
        elif self.kind != "constant":
            raise InvalidInput(f"unknown rule kind {self.kind!r}")

    @property
    def shape(self):
        return self.base.shape

    def __call__(self, x):
        if self.kind == "constant":
            return self.base
        if self.kind == "gated":
            return expit(self.weight @ x + self.bias)[:, None] * self.base
        return self.base + np.tensordot(x, self.slopes, axes=1)


def constant_rule(M):
    return StepRule("constant", M)


@dataclass(frozen=True)
class SelectiveSystem:
    """Input-dependent recurrence ``h_i = A(x_i) h_{i-1} + B(x_i) x_i``, ``y_i = C(x_i) h_i``."""

    A_rule: StepRule
    B_rule: StepRule
    C_rule: StepRule

    def __post_init__(self):
        m = self.A_rule.shape[0]
        if (self.A_rule.shape != (m, m) or self.B_rule.shape[0] != m
                or self.C_rule.shape[1] != m):
            raise ShapeError("selective rules produce inconsistent shapes")

    @property
    def m(self):
        return self.A_rule.shape[0]

    @property
    def d(self):
        return self.B_rule.shape[1]

    @property
    def p(self):
        return self.C_rule.shape[0]

    @classmethod
    def from_lti(cls, sys):
        return cls(constant_rule(sys.A), constant_rule(sys.B), constant_rule(sys.C))


def step_matrices(sys, X):
    """Per-position ``(A_steps, B_steps, C_steps)`` produced by the rules on ``X``."""
    X = as_sequence(X, sys.d)
    n = X.shape[1]
    A = np.stack([sys.A_rule(X[:, i]) for i in range(n)])
    B = np.stack([sys.B_rule(X[:, i]) for i in range(n)])
    C = np.stack([sys.C_rule(X[:, i]) for i in range(n)])
    return A, B, C


def selective_scan(sys, X):
    X = as_sequence(X, sys.d)
    n = X.shape[1]
    Y = np.empty((sys.p, n))
    h = np.zeros(sys.m)
    for i in range(n):
        x = X[:, i]
        h = sys.A_rule(x) @ h + sys.B_rule(x) @ x
        Y[:, i] = sys.C_rule(x) @ h
    return Y


def rnn_tanh_forward(W, U, C, X):
    """Elman RNN ``h_t = tanh(W h_{t-1} + U x_t)``, ``y_t = C h_t``.

    Returns ``(Y, H)`` where ``H`` is the ``m x n`` hidden trajectory.
    """
    W, U, C = as_matrix(W, "W"), as_matrix(U, "U"), as_matrix(C, "C")
    m = W.shape[0]
    if W.shape != (m, m) or U.shape[0] != m or C.shape[1] != m:
        raise ShapeError(f"inconsistent RNN shapes W{W.shape} U{U.shape} C{C.shape}")
    X = as_sequence(X, U.shape[1])
    n = X.shape[1]
    H = np.empty((m, n))
    h = np.zeros(m)
    for t in range(n):
        h = np.tanh(W @ h + U @ X[:, t])
        H[:, t] = h
    return C @ H, H


# -- system files ---------------------------------------------------------

def system_to_dict(sys):
    return {
        "m": sys.m, "d": sys.d, "p": sys.p,
        "A": [float(v) for v in sys.A.ravel()],
        "B": [float(v) for v in sys.B.ravel()],
        "C": [float(v) for v in sys.C.ravel()],
    }


def system_from_dict(data):
    try:
        m, d, p = int(data["m"]), int(data["d"]), int(data["p"])
        entries = {key: np.asarray(data[key], dtype=float) for key in "ABC"}
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"malformed system description: {exc}") from exc
    want = {"A": (m, m), "B": (m, d), "C": (p, m)}
    for key, shape in want.items():
        if entries[key].size != shape[0] * shape[1]:
            raise ShapeError(f"{key} has {entries[key].size} entries, expected {shape}")
    return LTISystem(*(entries[key].reshape(want[key]) for key in "ABC"))


def save_system(sys, path):
    with open(path, "w") as fh:
        json.dump(system_to_dict(sys), fh, indent=1)
        fh.write("\n")


def load_system(path):
    with open(path) as fh:
        return system_from_dict(json.load(fh))
