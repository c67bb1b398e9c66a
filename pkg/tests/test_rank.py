import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqkernel.dynamics import LTISystem, random_lti
from seqkernel.errors import InvalidInput
from seqkernel.kernel import impulse_family
from seqkernel.linalg import make_rng, spectral_norm
from seqkernel.rank import (interaction_rank, projection_error, single_head_best_fit,
                            single_head_gap_oracle, span_saturated, rotation_witness,
                            two_step_error_sq)

from conftest import ROT90


def test_collinear_family_rank_one():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert interaction_rank(np.repeat(M[None], 5, 0)).rank == 1


@pytest.mark.parametrize("n", [2, 3, 8, 32])
def test_witness_rank_two(n):
    rep = interaction_rank(impulse_family(rotation_witness(), n))
    assert rep.rank == 2
    flat = rep.basis.reshape(2, -1)
    np.testing.assert_allclose(flat @ flat.T, np.eye(2), atol=1e-14)


def test_zero_family_rank_zero():
    assert interaction_rank(np.zeros((3, 2, 2))).rank == 0


def test_basis_spans_family(rng):
    fam = impulse_family(random_lti(rng, 3, 4, 4), 12)
    rep = interaction_rank(fam)
    B = rep.basis.reshape(rep.rank, -1)
    F = fam.reshape(12, -1)
    assert np.linalg.norm(F - F @ B.T @ B) <= 1e-10 * np.linalg.norm(F)


def test_witness_projection_error_frozen():
    assert projection_error(impulse_family(rotation_witness(), 2), 1) == pytest.approx(np.sqrt(2), rel=1e-14)


@given(st.integers(0, 100_000))
def test_projection_error_properties(seed):
    rng = make_rng(seed)
    fam = impulse_family(random_lti(rng, *rng.integers(1, 6, 3)), int(rng.integers(1, 16)))
    errs = [projection_error(fam, H) for H in range(6)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    assert errs[0] == pytest.approx(np.linalg.norm(fam), rel=1e-12)
    rep = interaction_rank(fam)
    assert projection_error(fam, rep.rank) <= rep.threshold * rep.singular_values[0] * np.sqrt(len(fam))


@given(st.integers(0, 100_000))
def test_rank_invariant_under_recombination(seed):
    rng = make_rng(seed)
    fam = impulse_family(random_lti(rng, *rng.integers(1, 6, 3)), 10)
    G = rng.standard_normal((10, 10)) + 10 * np.eye(10)
    assert interaction_rank(np.einsum("st,tpd->spd", G, fam)).rank == interaction_rank(fam).rank


def test_projection_error_rejects_negative():
    with pytest.raises(InvalidInput):
        projection_error(np.ones((2, 1, 1)), -1)


def test_witness_frozen():
    sys = rotation_witness()
    fam = impulse_family(sys, 2)
    np.testing.assert_array_equal(fam[0], np.eye(2))
    np.testing.assert_array_equal(fam[1], ROT90)
    assert spectral_norm(sys.A) == 1.0


@pytest.mark.parametrize("v, want", [((1.0, 0.0), 1.0), ((1.0, 1.0), 1.0), ((0.0, 0.0), 2.0)])
def test_two_step_error_examples(v, want):
    assert two_step_error_sq(v) == pytest.approx(want, abs=1e-15)


@pytest.mark.parametrize("res", [360, 361, 1000, 4096])
def test_gap_oracle_equals_one(res):
    assert single_head_gap_oracle(res)[0] == pytest.approx(1.0, abs=1e-6)


def test_gap_oracle_resolution_guard():
    with pytest.raises(InvalidInput):
        single_head_gap_oracle(359)


@pytest.mark.parametrize("n", [2, 8, 32])
def test_best_single_head_fit_at_least_one(n):
    fit = single_head_best_fit(rotation_witness(), n)
    assert 1 - 1e-3 <= fit.error <= 1 + 1e-2
    assert fit.converged


def test_two_heads_close_the_gap():
    assert single_head_best_fit(rotation_witness(), 8, heads=2).error <= 1e-6


def test_embedded_witness_same_bound():
    assert single_head_best_fit(rotation_witness(3), 8).error >= 1 - 1e-3


def test_witness_needs_two_dims():
    with pytest.raises(InvalidInput):
        rotation_witness(1)
    with pytest.raises(InvalidInput):
        single_head_best_fit(rotation_witness(), 1)


def test_span_saturation():
    assert span_saturated(rotation_witness(), 4)
    shift = LTISystem(np.eye(6, k=-1), np.eye(6), np.eye(6))
    assert not span_saturated(shift, 3)
