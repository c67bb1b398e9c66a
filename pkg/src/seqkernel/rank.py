"""Interaction rank of impulse families and the single-head separation witness."""

from dataclasses import dataclass

import numpy as np

from .dynamics import LTISystem, lti_scan
from .errors import InvalidInput
from .kernel import impulse_family
from .linalg import make_rng, svd


@dataclass(frozen=True)
class RankReport:
    singular_values: np.ndarray
    rank: int
    threshold: float
    basis: np.ndarray  # (rank, p, d), Frobenius-orthonormal


def _stack(family):
    family = np.asarray(family, dtype=float)
    if family.ndim != 3 or family.shape[0] == 0:
        raise InvalidInput(f"family must be a nonempty (n, p, d) array, got {family.shape}")
    return family.reshape(family.shape[0], -1)


def interaction_rank(family, rel_threshold=1e-8):
    """Dimension of ``span{W(tau)}`` with an orthonormal basis of that span.

    Each ``W(tau)`` is flattened row-major into one row of an ``n x (p d)``
    matrix; singular values above ``rel_threshold * sigma_1`` count.
    """
    family = np.asarray(family, dtype=float)
    stacked = _stack(family)
    _, S, Vt = svd(stacked)
    rank = 0 if S[0] == 0 else int(np.sum(S > rel_threshold * S[0]))
    basis = Vt[:rank].reshape((rank,) + family.shape[1:])
    return RankReport(S, rank, rel_threshold, basis)


def projection_error(family, H):
    """Smallest total Frobenius kernel error when all lags share an H-dim value subspace.

    By Eckart-Young this is the root-sum-square of the trailing singular
    values of the stacked family.
    """
    if H < 0:
        raise InvalidInput(f"head budget must be >= 0, got {H}")
    _, S, _ = svd(_stack(family))
    return float(np.sqrt(np.sum(S[H:] ** 2)))


def span_saturated(sys, n, rel_threshold=1e-8):
    """True when the lag span at length ``n`` already equals the span at ``2n``."""
    r_n = interaction_rank(impulse_family(sys, n), rel_threshold).rank
    r_2n = interaction_rank(impulse_family(sys, 2 * n), rel_threshold).rank
    return r_n == r_2n


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_witness(d=2):
    """Quarter-turn system ``A = [[0,-1],[1,0]]``, ``B = C = I``.

    For ``d > 2`` the rotation acts on the first two coordinates and the
    rest pass through unchanged.
    """
    if d < 2:
        raise InvalidInput("the witness needs d >= 2")
    A = np.eye(d)
    A[:2, :2] = [[0.0, -1.0], [1.0, 0.0]]
    return LTISystem(A, np.eye(d), np.eye(d))


def probe_input(d, n):
    """The one-token probe ``[e_1, 0, ..., 0]`` (unit Frobenius norm)."""
    X = np.zeros((d, n))
    X[0, 0] = 1.0
    return X


def two_step_error_sq(v):
    """``min_{a,b} |e1 - a v|^2 + |e2 - b v|^2`` for a value direction ``v`` in R^2."""
    v = np.asarray(v, dtype=float)
    vv = float(v @ v)
    if vv == 0.0:
        return 2.0
    # residual of projecting e_k onto span{v} is 1 - v_k^2 / |v|^2
    return float((1.0 - v[0] ** 2 / vv) + (1.0 - v[1] ** 2 / vv))


def single_head_gap_oracle(grid_resolution=360):
    """Grid search over unit directions ``v = (cos t, sin t)``, t in [0, pi).

    Returns ``(min_error_sq, argmin_theta)``; the analytic value is 1 for
    every direction.
    """
    if grid_resolution < 360:
        raise InvalidInput("grid_resolution must be >= 360")
    thetas = np.arange(grid_resolution) * np.pi / grid_resolution
    errs = [two_step_error_sq((np.cos(t), np.sin(t))) for t in thetas]
    k = int(np.argmin(errs))
    return errs[k], float(thetas[k])


@dataclass(frozen=True)
class FitResult:
    error: float
    converged: bool
    iterations: int
    start: int


def _alternating_fit(Y, H, rng, max_iter, tol):
    p, T = Y.shape
    Vm = rng.standard_normal((p, H))
    prev = np.inf
    for it in range(1, max_iter + 1):
        coef = np.linalg.lstsq(Vm, Y, rcond=None)[0]          # H x T
        Vm = np.linalg.lstsq(coef.T, Y.T, rcond=None)[0].T    # p x H
        coef = np.linalg.lstsq(Vm, Y, rcond=None)[0]
        err = float(np.linalg.norm(Y - Vm @ coef))
        if abs(prev - err) <= tol * max(1.0, err):
            return err, True, it
        prev = err
    return err, False, max_iter


def single_head_best_fit(sys, n, heads=1, starts=20, seed=0, steps=2,
                         max_iter=10_000, tol=1e-13):
    """Best fit of an H-head model with free weights to ``sys`` on the probe input.

    On the probe only ``x_1`` is nonzero, so head h contributes
    ``alpha^(h)_{i1} V^(h) e_1`` to output i and the search reduces to
    rank-H factorizations ``sum_h v_h a_h^T`` of the target outputs. Both
    factors are refit in closed form in turn. ``steps`` outputs are scored
    (2 by default; ``None`` scores all n). The best of ``starts`` seeded
    restarts is returned, ties going to the lowest start index.
    """
    if n < 2:
        raise InvalidInput("the separation needs n >= 2")
    T = n if steps is None else min(steps, n)
    Y = lti_scan(sys, probe_input(sys.d, n))[:, :T]
    best = None
    for s in range(starts):
        err, ok, its = _alternating_fit(Y, heads, make_rng(seed, s), max_iter, tol)
        if best is None or err < best.error:
            best = FitResult(err, ok, its, s)
    return best
