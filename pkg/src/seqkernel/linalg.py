"""Small dense linear-algebra kernels and the seeded random stream.

Everything here is a thin, validated wrapper over LAPACK via numpy; the
wrappers exist so that every caller gets the same finiteness checks, the
same ordering conventions and the same defectiveness proxy.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NumericalFailure

# eigvec_condition above this classifies a transition as defective
DEFECT_THRESHOLD = 1e8


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float array, raising InvalidInput otherwise."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidInput(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return M


def svd(M):
    """Thin SVD ``M = U @ diag(S) @ Vt`` with ``S`` sorted descending."""
    M = as_matrix(M)
    if M.size == 0:
        k = min(M.shape)
        return np.zeros((M.shape[0], k)), np.zeros(k), np.zeros((k, M.shape[1]))
    try:
        U, S, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    return U, S, Vt


def spectral_norm(M):
    """Largest singular value of ``M`` (0 for empty or zero matrices)."""
    M = as_matrix(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


@dataclass(frozen=True)
class ComplexSpectrum:
    eigenvalues: np.ndarray
    right_eigenvectors: np.ndarray
    eigvec_condition: float

    @property
    def defective(self):
        return not self.eigvec_condition <= DEFECT_THRESHOLD


def _pair_conjugates(vals, vecs):
    # numpy already returns conjugate pairs adjacent for real input; make it a
    # guarantee by ordering (+imag first) each pair explicitly.
    m = len(vals)
    order, used = [], np.zeros(m, dtype=bool)
    scale = max(1.0, float(np.max(np.abs(vals)))) if m else 1.0
    for a in range(m):
        if used[a]:
            continue
        used[a] = True
        if abs(vals[a].imag) <= 1e-12 * scale:
            order.append(a)
            continue
        cand = [b for b in range(m) if not used[b]]
        b = min(cand, key=lambda b: abs(vals[b] - np.conj(vals[a])))
        used[b] = True
        first, second = (a, b) if vals[a].imag > 0 else (b, a)
        order.extend([first, second])
    return vals[order], vecs[:, order]


def eig_complex(M):
    """Eigen-decomposition of a real square matrix over C.

    Eigenvectors have unit 2-norm; ``eigvec_condition`` is the 2-norm
    condition number of the eigenvector matrix (``inf`` if singular).
    """
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise InvalidInput(f"eig_complex needs a square matrix, got {M.shape}")
    try:
        vals, vecs = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver did not converge: {exc}") from exc
    vals = vals.astype(complex)
    vecs = vecs.astype(complex)
    vals, vecs = _pair_conjugates(vals, vecs)
    if len(vals) == 0:
        cond = 1.0
    else:
        with np.errstate(all="ignore"):
            cond = float(np.linalg.cond(vecs))
        if not np.isfinite(cond):
            cond = float("inf")
    return ComplexSpectrum(vals, vecs, max(cond, 1.0))


def make_rng(seed, *keys):
    """Independent PCG64 stream for ``(seed, *keys)``.

    Keys are non-negative integers naming a component (a cell index, a start
    index, ...); identical arguments always yield the identical stream.
    """
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def random_orthogonal(size, rng):
    """Haar-distributed orthogonal matrix via sign-corrected QR."""
    Z = rng.standard_normal((size, size))
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diag(R))
