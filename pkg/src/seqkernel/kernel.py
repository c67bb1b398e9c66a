"""The effective interaction tensor ``W_ij(X)`` and operations on it.

A sequence map is written ``y_i = sum_j W_ij(X) x_j`` with one ``p x d``
block per (output position, input position) pair. Sequences are stored as
``d x n`` arrays whose columns are tokens; position indices are 0-based
in code.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, InvalidInput, ShapeError

MAX_LENGTH = 256


def as_sequence(X, d=None):
    """Validate a ``d x n`` token matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ShapeError(f"sequence must be a d x n array with n >= 1, got {X.shape}")
    if d is not None and X.shape[0] != d:
        raise ShapeError(f"sequence has token dimension {X.shape[0]}, expected {d}")
    if not np.all(np.isfinite(X)):
        raise InvalidInput("sequence contains non-finite entries")
    return X


def _check_length(n):
    if n < 1:
        raise InvalidInput(f"length must be >= 1, got {n}")
    if n > MAX_LENGTH:
        raise CapacityError(f"materializing n={n} exceeds the n <= {MAX_LENGTH} guard")


@dataclass(frozen=True)
class InteractionTensor:
    """``blocks[i, j]`` is the ``p x d`` map from token j to output i."""

    blocks: np.ndarray
    causal: bool = False

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float)
        if b.ndim != 4 or b.shape[0] != b.shape[1]:
            raise ShapeError(f"blocks must have shape (n, n, p, d), got {b.shape}")
        _check_length(b.shape[0])
        if not np.all(np.isfinite(b)):
            raise InvalidInput("interaction tensor contains non-finite entries")
        if self.causal and np.any(b[np.triu_indices(b.shape[0], 1)] != 0.0):
            raise InvalidInput("causal tensor has nonzero blocks above the diagonal")
        object.__setattr__(self, "blocks", b)

    @property
    def n(self):
        return self.blocks.shape[0]

    @property
    def p(self):
        return self.blocks.shape[2]

    @property
    def d(self):
        return self.blocks.shape[3]


def apply_tensor(W, X):
    """Evaluate ``y_i = sum_j W_ij x_j`` for every output position."""
    X = as_sequence(X, W.d)
    if X.shape[1] != W.n:
        raise ShapeError(f"tensor length {W.n} does not match sequence length {X.shape[1]}")
    return np.einsum("ijpd,dj->pi", W.blocks, X)


def impulse_family(sys, n):
    """Lag operators ``W(tau) = C A^tau B`` for tau = 0..n-1, shape ``(n, p, d)``.

    Powers are formed by repeated multiplication so defective transitions
    are handled exactly as well as diagonalizable ones.
    """
    if n < 1:
        raise InvalidInput(f"length must be >= 1, got {n}")
    out = np.empty((n, sys.p, sys.d))
    state = np.array(sys.B, dtype=float)  # A^tau B
    for tau in range(n):
        out[tau] = sys.C @ state
        state = sys.A @ state
    return out


def toeplitz_tensor(family, n=None):
    """Causal tensor with ``blocks[i, j] = family[i - j]`` for j <= i."""
    family = np.asarray(family, dtype=float)
    n = family.shape[0] if n is None else n
    if family.shape[0] < n:
        raise ShapeError(f"family has {family.shape[0]} lags, need {n}")
    _check_length(n)
    blocks = np.zeros((n, n) + family.shape[1:])
    for tau in range(n):
        idx = np.arange(tau, n)
        blocks[idx, idx - tau] = family[tau]
    return InteractionTensor(blocks, causal=True)


def materialize_lti(sys, n):
    """Interaction tensor of a time-invariant system on length-``n`` sequences."""
    _check_length(n)
    return toeplitz_tensor(impulse_family(sys, n), n)


def materialize_selective(A_steps, B_steps, C_steps):
    """Tensor of a time-varying recurrence from per-position matrices.

    ``A_steps`` is ``(n, m, m)``, ``B_steps`` ``(n, m, d)``, ``C_steps``
    ``(n, p, m)``; block ``(i, j)`` is ``C_i A_i A_{i-1} ... A_{j+1} B_j``
    and the empty product (i == j) is the identity.
    """
    A_steps = np.asarray(A_steps, dtype=float)
    B_steps = np.asarray(B_steps, dtype=float)
    C_steps = np.asarray(C_steps, dtype=float)
    n = A_steps.shape[0]
    if (A_steps.ndim != 3 or A_steps.shape[1] != A_steps.shape[2]
            or B_steps.shape[:2] != (n, A_steps.shape[1])
            or C_steps.ndim != 3 or C_steps.shape[0] != n
            or C_steps.shape[2] != A_steps.shape[1]):
        raise ShapeError("per-position matrices have inconsistent shapes: "
                         f"A{A_steps.shape} B{B_steps.shape} C{C_steps.shape}")
    _check_length(n)
    p, d = C_steps.shape[1], B_steps.shape[2]
    blocks = np.zeros((n, n, p, d))
    for j in range(n):
        prop = B_steps[j]  # A_i ... A_{j+1} B_j, grown one step at a time
        for i in range(j, n):
            if i > j:
                prop = A_steps[i] @ prop
            blocks[i, j] = C_steps[i] @ prop
    return InteractionTensor(blocks, causal=True)


def kernel_distance(W1, W2):
    """Return ``(max_block, frobenius_total)`` of the blockwise difference."""
    if W1.blocks.shape != W2.blocks.shape:
        raise ShapeError(f"tensor shapes differ: {W1.blocks.shape} vs {W2.blocks.shape}")
    per_block = np.sqrt(np.sum((W1.blocks - W2.blocks) ** 2, axis=(2, 3)))
    return float(per_block.max()), float(np.sqrt(np.sum(per_block ** 2)))


def worst_block(W1, W2):
    """Index ``(i, j)`` of the block with the largest Frobenius discrepancy."""
    per_block = np.sum((W1.blocks - W2.blocks) ** 2, axis=(2, 3))
    i, j = np.unravel_index(int(np.argmax(per_block)), per_block.shape)
    return int(i), int(j)


def write_tensor_csv(W, path):
    """Dump ``W`` as ``i,j,row,col,value`` rows in lexicographic order."""
    with open(path, "w", newline="") as fh:
        fh.write("i,j,row,col,value\n")
        n, _, p, d = W.blocks.shape
        for i in range(n):
            for j in range(n):
                block = W.blocks[i, j]
                for r in range(p):
                    for c in range(d):
                        fh.write(f"{i},{j},{r},{c},{float(block[r, c])!r}\n")
