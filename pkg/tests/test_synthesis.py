import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import block_diag

from seqkernel.dynamics import LTISystem, random_lti
from seqkernel.errors import (ConditioningError, DefectiveTransition, InsufficientHeads,
                              SingularTransition)
from seqkernel.factorized import FactorizedHead, MultiHeadModel, PositionalTable
from seqkernel.kernel import impulse_family
from seqkernel.linalg import make_rng
from seqkernel.rank import interaction_rank, projection_error, rotation_witness
from seqkernel.synthesis import (check_modal_assumptions, lower_toeplitz, modal_lag_kernels,
                                 synthesize, synthesize_explicit, synthesize_modal,
                                 synthesize_rank_refined, synthesize_truncated, verify_equivalence)

METHODS = ["explicit", "rank_refined", "modal"]


@pytest.mark.parametrize("method", METHODS)
def test_witness_exact(method):
    res = synthesize(rotation_witness(), 8, 2, method)
    assert res.certificate[0] <= 1e-10
    assert verify_equivalence(res, rotation_witness(), 8).passed


def test_witness_insufficient_heads():
    with pytest.raises(InsufficientHeads) as exc:
        synthesize_explicit(rotation_witness(), 8, 1)
    assert exc.value.required == 2 and exc.value.heads == 1


def test_rank_one_scalar_system():
    a = 0.7
    sys = LTISystem([[a]], [[2.0]], [[3.0]])
    res = synthesize_explicit(sys, 6, 1)
    assert res.certificate[0] <= 1e-12
    # basis M_1 = CB / |CB|_F, so c_tau = a^tau |CB|_F up to the basis sign
    np.testing.assert_allclose(np.abs(res.coefficients[:, 0]), 6 * a ** np.arange(6), rtol=1e-12)


def test_rank_refined_geometric_tables_are_full_width():
    # lower Toeplitz with c_0 != 0 is invertible, so its rank is n
    sys = LTISystem([[0.5]], [[1.0]], [[1.0]])
    res = synthesize_rank_refined(sys, 6, 1)
    assert res.per_head_feature_dim == (6,)
    assert np.linalg.matrix_rank(lower_toeplitz(0.5 ** np.arange(6))) == 6


def test_rank_refined_width_bounded_by_n(rng):
    sys = random_lti(rng, 3, 2, 2)
    res = synthesize_rank_refined(sys, 10, 6)
    assert max(res.per_head_feature_dim) <= 10
    assert res.certificate[0] <= 1e-9


def test_extra_heads_are_inert():
    res = synthesize_explicit(rotation_witness(), 8, 4)
    assert not res.model.heads[3].V.any() and not res.model.heads[2].generator.Phi.any()
    assert verify_equivalence(res, rotation_witness(), 8).passed


def test_corrupted_coefficient_is_localized():
    sys = rotation_witness()
    res = synthesize_explicit(sys, 8, 2)
    head = res.model.heads[0]
    Psi = np.array(head.generator.Psi)
    Psi[2, 5] += 1e-3  # A[5, 2] = c[3] on the lag-3 diagonal
    bad = MultiHeadModel((FactorizedHead(head.V, PositionalTable(head.generator.Phi, Psi)),)
                         + res.model.heads[1:])
    rep = verify_equivalence(type(res)(bad, res.method, res.rank, res.per_head_feature_dim,
                                       res.coefficients, res.certificate), sys, 8)
    assert not rep.passed
    assert rep.worst_block == (5, 2)


def test_modal_witness_matches_explicit():
    res = synthesize_modal(rotation_witness(), 12, 2)
    exp = synthesize_explicit(rotation_witness(), 12, 2)
    np.testing.assert_allclose(modal_lag_kernels(res), exp.coefficients, atol=1e-12)
    assert res.feature_dim <= 4


def test_modal_diagonal_width_two():
    sys = LTISystem(np.diag([0.5, 0.9]), np.eye(2), np.eye(2))
    res = synthesize_modal(sys, 10, 2)
    assert res.per_head_feature_dim == (2, 2)
    assert res.certificate[0] <= 1e-9


def test_modal_assumption_errors():
    with pytest.raises(DefectiveTransition):
        check_modal_assumptions(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(SingularTransition):
        check_modal_assumptions(np.diag([0.0, 0.5]))
    with pytest.raises(ConditioningError):
        check_modal_assumptions(np.diag([0.01, 0.5]))
    with pytest.raises(ConditioningError):
        check_modal_assumptions(np.diag([2.0, 0.5]))


def test_modal_guard_fallback_warns():
    sys = LTISystem(np.diag([0.01, 0.5]), np.eye(2), np.eye(2))
    with pytest.warns(UserWarning, match="falling back"):
        res = synthesize_modal(sys, 8, 2, fallback=True)
    assert res.method == "explicit"


def _modal_system(rng, m):
    blocks, size = [], 0
    while size < m:
        if m - size >= 2 and rng.random() < 0.5:
            z = rng.uniform(0.05, 1.5) * np.exp(1j * rng.uniform(0.2, 3.0))
            blocks.append(np.array([[z.real, -z.imag], [z.imag, z.real]]))
        else:
            blocks.append(np.array([[rng.uniform(0.05, 1.5) * rng.choice([-1, 1])]]))
        size += len(blocks[-1])
    P = rng.standard_normal((m, m)) + 2 * np.eye(m)
    return LTISystem(P @ block_diag(*blocks) @ np.linalg.inv(P),
                     rng.standard_normal((m, 2)), rng.standard_normal((2, m)))


@given(st.integers(0, 100_000), st.integers(1, 6))
def test_modal_properties(seed, m):
    rng = make_rng(seed)
    sys = _modal_system(rng, m)
    n = 16
    k = interaction_rank(impulse_family(sys, n)).rank
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = synthesize_modal(sys, n, k)
    assert res.feature_dim <= 2 * m
    g = modal_lag_kernels(res)
    scale = np.abs(res.coefficients).max()
    assert np.abs(g - res.coefficients).max() <= 1e-8 * scale
    for head in res.model.heads:
        A = head.generator.weights(np.zeros((sys.d, n))).A
        assert np.abs(np.tril(A[1:, 1:] - A[:-1, :-1])).max() <= 1e-12 * max(np.abs(A).max(), 1e-300)


@given(st.integers(0, 100_000))
def test_sufficiency_and_necessity(seed):
    rng = make_rng(seed)
    sys = random_lti(rng, *rng.integers(1, 9, 3))
    n = int(rng.integers(8, 33))
    fam = impulse_family(sys, n)
    k = interaction_rank(fam).rank
    for method in ("explicit", "rank_refined"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = verify_equivalence(synthesize(sys, n, k, method), sys, n)
        assert rep.max_block <= 1e-9 and rep.forward_err <= 1e-8
    if k > 1:
        with pytest.raises(InsufficientHeads):
            synthesize_explicit(sys, n, k - 1)
        assert synthesize_truncated(sys, n, k - 1)[1] >= projection_error(fam, k - 1) - 1e-9


def test_unsaturated_span_warns():
    shift = LTISystem(np.eye(6, k=-1), np.eye(6), np.eye(6))
    with pytest.warns(UserWarning, match="still growing"):
        synthesize_explicit(shift, 3, 3)


def test_unknown_method():
    with pytest.raises(ValueError):
        synthesize(rotation_witness(), 4, 2, "fourier")
