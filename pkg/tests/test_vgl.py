import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import anchor_row, brute_force_anchor
from viewgroup import (
    EmbeddingBatch,
    VglConfig,
    cosine_similarity,
    hardness_attention,
    similarity_matrix,
    tempered_sigmoid,
    vgl_anchor,
    vgl_batch,
    vgl_grad_embeddings,
    vgl_grad_sims,
)
from viewgroup import kernels
from viewgroup.analysis import ordered_example
from viewgroup.errors import EmptyPositiveSet, InvalidTemperature, NotAPositivePair, ZeroNormVector
from viewgroup.gradcheck import random_batch, rel_error

TAUS = [0.05, 0.1, 0.2, 0.5, 1.0]
sim = st.floats(-1.0, 1.0, allow_nan=False)


@st.composite
def anchor_cases(draw, min_pos=1, max_pos=5, max_neg=6):
    pos = draw(st.lists(sim, min_size=min_pos, max_size=max_pos))
    neg = draw(st.lists(sim, min_size=1, max_size=max_neg))
    tau = draw(st.sampled_from(TAUS))
    attention = draw(st.booleans())
    return pos, neg, tau, attention


# -- cosine similarity and the tempered sigmoid -------------------------------


def test_cosine_identical_and_orthogonal():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0


def test_cosine_hand_value():
    assert cosine_similarity([1, 2, 2], [2, 1, 2]) == pytest.approx(8 / 9, abs=1e-15)


def test_cosine_zero_vector_names_index():
    with pytest.raises(ZeroNormVector) as info:
        cosine_similarity([1, 0], [0, 0])
    assert info.value.index == 1


def test_tempered_sigmoid_values():
    assert tempered_sigmoid(0.0, 0.2) == 0.5
    assert tempered_sigmoid(0.2, 0.2) == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)
    assert abs(tempered_sigmoid(10.0, 0.2) - 1.0) <= 1e-15


def test_tempered_sigmoid_extreme_arguments_do_not_overflow():
    assert tempered_sigmoid(-1e4, 0.01) == 0.0
    assert tempered_sigmoid(1e4, 0.01) == 1.0


@pytest.mark.parametrize("tau", [0.0, -0.1])
def test_non_positive_tau_rejected(tau):
    with pytest.raises(InvalidTemperature):
        tempered_sigmoid(0.1, tau)
    with pytest.raises(InvalidTemperature):
        VglConfig(tau=tau)


# -- similarity matrix ----------------------------------------------------------


def test_similarity_matrix_orthonormal_is_identity():
    np.testing.assert_array_equal(similarity_matrix(np.eye(3)), np.eye(3))


def test_similarity_matrix_duplicates_all_ones():
    v = np.array([[0.3, -1.2, 2.0]] * 2)
    np.testing.assert_allclose(similarity_matrix(v), np.ones((2, 2)), atol=1e-15)


def test_similarity_matrix_scale_invariant():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((6, 5))
    scaled = v * rng.uniform(0.01, 100.0, size=(6, 1))
    np.testing.assert_allclose(similarity_matrix(scaled), similarity_matrix(v), atol=1e-12)


def test_similarity_matrix_zero_row():
    v = np.ones((4, 3))
    v[2] = 0.0
    with pytest.raises(ZeroNormVector) as info:
        similarity_matrix(v)
    assert info.value.index == 2


# -- hardness attention ---------------------------------------------------------


def test_attention_single_equal_positive():
    row, groups = anchor_row([0.5, 0.5], [0.0])
    assert hardness_attention(0, 1, row, groups, VglConfig(0.2)) == pytest.approx(2.0, abs=1e-15)


def test_attention_symmetric_gaps_give_one():
    row, groups = anchor_row([0.5, 0.9, 0.1], [0.0])
    assert hardness_attention(0, 1, row, groups, VglConfig(0.2)) == pytest.approx(1.0, abs=1e-15)


def test_attention_positive_above_the_others():
    row, groups = anchor_row([0.9, 0.5, 0.1], [0.0])
    expected = 1.0 / (1 / (1 + math.exp(2)) + 1 / (1 + math.exp(4)))
    got = hardness_attention(0, 1, row, groups, VglConfig(0.2))
    assert got == pytest.approx(expected, rel=1e-14)
    assert got == pytest.approx(7.289, abs=5e-4)


def test_attention_singleton_positive_uses_convention():
    row, groups = anchor_row([0.4], [0.0])
    assert hardness_attention(0, 1, row, groups, VglConfig(0.2, singleton_gamma=1.0)) == 1.0
    assert hardness_attention(0, 1, row, groups, VglConfig(0.2, singleton_gamma=3.5)) == 3.5


def test_attention_rejects_negative_index():
    row, groups = anchor_row([0.4, 0.3], [0.0])
    with pytest.raises(NotAPositivePair):
        hardness_attention(0, 3, row, groups, VglConfig())


# -- per-anchor loss ------------------------------------------------------------


def test_single_source_batch_has_zero_loss():
    row = np.array([1.0, 0.3, -0.2, 0.7])
    assert vgl_anchor(0, row, np.zeros(4, dtype=int), VglConfig()) == 0.0


@pytest.mark.parametrize("P,M", [(2, 2), (3, 5), (19, 304)])
def test_equal_similarity_closed_form(P, M):
    row, groups = anchor_row([0.37] * P, [0.37] * M)
    cfg = VglConfig(0.2)
    expected = M / (M + P - 1)
    assert abs(vgl_anchor(0, row, groups, cfg) - expected) <= 1e-12
    loss, _ = kernels.anchor_numpy(row, np.arange(1, P + 1), np.arange(P + 1, P + M + 1), 0.2, True, 1.0, False)
    assert abs(loss - expected) <= 1e-12


def test_equal_similarity_two_two_is_two_thirds():
    row, groups = anchor_row([0.0, 0.0], [0.0, 0.0])
    assert vgl_anchor(0, row, groups, VglConfig()) == pytest.approx(2 / 3, abs=1e-15)


def test_worked_value():
    row, groups = anchor_row([0.9, 0.5], [0.1])
    oracle = brute_force_anchor([0.9, 0.5], [0.1], 0.2)
    got = vgl_anchor(0, row, groups, VglConfig(0.2))
    assert abs(oracle - 0.12515) < 1e-4
    assert got == pytest.approx(oracle, abs=1e-15)


def test_worked_value_intermediate_terms():
    row, groups = anchor_row([0.9, 0.5], [0.1])
    cfg = VglConfig(0.2)
    g1 = hardness_attention(0, 1, row, groups, cfg)
    g2 = hardness_attention(0, 2, row, groups, cfg)
    assert g1 == pytest.approx(8.38906, abs=1e-5)
    assert g2 == pytest.approx(1.13534, abs=1e-5)
    inner1 = 1 / (g1 * tempered_sigmoid(0.1 - 0.9, 0.2) + 1)
    inner2 = 1 / (g2 * tempered_sigmoid(0.1 - 0.5, 0.2) + 1)
    assert inner1 == pytest.approx(0.86890, abs=1e-5)
    assert inner2 == pytest.approx(0.88080, abs=1e-5)


def test_anchor_without_positive_raises():
    row = np.array([1.0, 0.2, 0.1])
    with pytest.raises(EmptyPositiveSet) as info:
        vgl_anchor(0, row, np.array([0, 1, 2]), VglConfig())
    assert info.value.index == 0


@settings(max_examples=300, deadline=None)
@given(anchor_cases())
def test_anchor_matches_brute_force(case):
    pos, neg, tau, attention = case
    row, groups = anchor_row(pos, neg)
    expected = brute_force_anchor(pos, neg, tau, attention)
    got = vgl_anchor(0, row, groups, VglConfig(tau, attention))
    assert got == pytest.approx(expected, rel=1e-9, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(anchor_cases())
def test_loss_range_and_inner_fractions(case):
    pos, neg, tau, attention = case
    row, groups = anchor_row(pos, neg)
    cfg = VglConfig(tau, attention)
    loss = vgl_anchor(0, row, groups, cfg)
    assert 0.0 <= loss < 1.0
    for i in range(1, len(pos) + 1):
        gamma = hardness_attention(0, i, row, groups, cfg) if attention else 1.0
        a = sum(tempered_sigmoid(c - row[i], tau) for c in neg)
        inner = 1.0 / (gamma * a + 1.0)
        assert 0.0 < inner <= 1.0


@settings(max_examples=300, deadline=None)
@given(anchor_cases(), st.data())
def test_raising_a_negative_strictly_increases_loss(case, data):
    pos, neg, tau, attention = case
    j = data.draw(st.integers(0, len(neg) - 1))
    neg = list(neg)
    neg[j] = data.draw(st.floats(-1.0, 0.5))
    delta = data.draw(st.floats(0.01, 0.5))
    cfg = VglConfig(tau, attention)
    row, groups = anchor_row(pos, neg)
    before = vgl_anchor(0, row, groups, cfg)
    row[1 + len(pos) + j] += delta
    assert vgl_anchor(0, row, groups, cfg) > before


@pytest.mark.parametrize("attention", [True, False])
def test_separation_limit(attention):
    cfg = VglConfig(0.05, attention)
    losses = []
    for t in np.linspace(0.0, 1.0, 11):
        pos = [0.2 + 0.8 * t, 0.1 + 0.9 * t, t]
        neg = [0.1 - 1.1 * t, -1.0 * t, 0.3 - 1.3 * t]
        row, groups = anchor_row(pos, neg)
        losses.append(vgl_anchor(0, row, groups, cfg))
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-15


# -- batch loss -----------------------------------------------------------------


def test_orthonormal_two_by_two(backend):
    out = vgl_batch(EmbeddingBatch(np.eye(4), [0, 0, 1, 1]), VglConfig(0.2))
    np.testing.assert_allclose(out.per_anchor, 0.5, atol=1e-15)
    assert out.total == pytest.approx(2.0, abs=1e-14)


def test_batch_agrees_with_scalar_route(backend):
    rng = np.random.default_rng(11)
    for _ in range(20):
        batch = random_batch(rng)
        cfg = VglConfig(float(rng.choice(TAUS)), bool(rng.integers(2)))
        sims = similarity_matrix(batch)
        out = vgl_batch(batch, cfg)
        scalar = [vgl_anchor(q, sims, batch.groups, cfg) for q in range(len(batch))]
        np.testing.assert_allclose(out.per_anchor, scalar, rtol=1e-12, atol=1e-15)


def test_batch_without_positive_raises():
    with pytest.raises(EmptyPositiveSet) as info:
        vgl_batch(EmbeddingBatch(np.eye(3), [0, 0, 1]), VglConfig())
    assert info.value.index == 2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_batch_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng, num_groups=int(rng.integers(2, 6)), views=int(rng.integers(2, 5)))
    cfg = VglConfig(float(rng.choice(TAUS)), bool(rng.integers(2)))
    perm = rng.permutation(len(batch))
    shuffled = EmbeddingBatch(batch.vectors[perm], batch.groups[perm])
    assert abs(vgl_batch(shuffled, cfg).total - vgl_batch(batch, cfg).total) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_batch_positive_scale_invariance(seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng)
    cfg = VglConfig(float(rng.choice(TAUS)), bool(rng.integers(2)))
    scales = np.exp(rng.uniform(-5, 5, size=(len(batch), 1)))
    scaled = EmbeddingBatch(batch.vectors * scales, batch.groups)
    a = vgl_batch(batch, cfg, with_grad=True)
    b = vgl_batch(scaled, cfg, with_grad=True)
    assert abs(a.total - b.total) <= 1e-6
    np.testing.assert_allclose(b.grad_sims, a.grad_sims, atol=1e-6)


# -- similarity-space gradient --------------------------------------------------


def test_grad_sims_symmetric_negatives_equal():
    row, groups = anchor_row([0.8, 0.6], [0.2, 0.2])
    grad = vgl_grad_sims(0, row, groups, VglConfig(0.2))
    assert grad[3] == grad[4]
    assert grad[3] > 0
    assert set(grad) == {1, 2, 3, 4}


def test_grad_sims_matches_finite_differences():
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(10):
        batch = random_batch(rng)
        cfg = VglConfig(float(rng.choice([0.1, 0.2, 0.5])), bool(rng.integers(2)))
        sims = similarity_matrix(batch)
        for q in range(len(batch)):
            grad = vgl_grad_sims(q, sims, batch.groups, cfg)
            analytic = np.array([grad[k] for k in sorted(grad)])
            numeric = []
            for k in sorted(grad):
                up, down = sims[q].copy(), sims[q].copy()
                up[k] += h
                down[k] -= h
                numeric.append((vgl_anchor(q, up, batch.groups, cfg) - vgl_anchor(q, down, batch.groups, cfg)) / (2 * h))
            assert rel_error(analytic, numeric) < 1e-6


def test_grad_sims_saturates_for_large_gap():
    # raw similarities: the gap needed (30 tau) exceeds the cosine range
    row, groups = anchor_row([7.0, 6.9], [0.1, 0.0])
    grad = vgl_grad_sims(0, row, groups, VglConfig(0.2))
    assert max(abs(v) for v in grad.values()) < 1e-8


def test_grad_sims_off_attention_ignores_positive_positions():
    row, groups = anchor_row([0.8, 0.3], [0.5])
    grad = vgl_grad_sims(0, row, groups, VglConfig(0.2, attention_enabled=False))
    # each positive only couples to the negatives; its gradient is minus its share of theirs
    assert grad[1] + grad[2] == pytest.approx(-grad[3], rel=1e-12)


@pytest.mark.xfail(strict=True, reason="full gradient with attention is negative for small C; see decisions ledger")
def test_attention_ordering_on_ordered_example():
    cfg = VglConfig(0.2, True)
    for k in range(1, 31):
        ex = ordered_example(0.9, 0.005 * k)
        grad = vgl_grad_sims(0, ex.row(), ex.groups(), cfg)
        assert abs(grad[3]) > abs(grad[6])


# -- embedding gradient ---------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_embedding_gradient_orthogonal_to_vector(seed):
    rng = np.random.default_rng(seed)
    batch = random_batch(rng)
    batch.vectors *= np.exp(rng.uniform(-3, 3, size=(len(batch), 1)))
    cfg = VglConfig(float(rng.choice(TAUS)), bool(rng.integers(2)))
    grad = vgl_grad_embeddings(batch, cfg)
    dots = np.sum(grad * batch.vectors, axis=1)
    assert np.max(np.abs(dots)) <= 1e-8


def test_embedding_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    h = 1e-6
    for _ in range(5):
        batch = random_batch(rng)
        cfg = VglConfig(float(rng.choice([0.1, 0.2, 0.5])), bool(rng.integers(2)))
        analytic = vgl_grad_embeddings(batch, cfg)
        numeric = np.zeros_like(batch.vectors)
        for idx in np.ndindex(batch.vectors.shape):
            up, down = batch.vectors.copy(), batch.vectors.copy()
            up[idx] += h
            down[idx] -= h
            numeric[idx] = (
                vgl_batch(EmbeddingBatch(up, batch.groups), cfg).total
                - vgl_batch(EmbeddingBatch(down, batch.groups), cfg).total
            ) / (2 * h)
        assert rel_error(analytic, numeric) < 1e-5


def test_identical_views_get_identical_gradients(backend):
    rng = np.random.default_rng(3)
    v = rng.standard_normal((9, 6))
    v[1] = v[0]
    groups = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
    grad = vgl_grad_embeddings(EmbeddingBatch(v, groups), VglConfig(0.2))
    np.testing.assert_allclose(grad[0], grad[1], rtol=1e-12, atol=1e-15)


# -- kernel paths ---------------------------------------------------------------


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans(), st.sampled_from(TAUS))
def test_numba_and_numpy_kernels_agree(seed, attention, tau):
    rng = np.random.default_rng(seed)
    groups = rng.integers(0, 4, size=int(rng.integers(4, 24)))
    groups[: 2] = groups[0]
    if np.any(np.unique(groups, return_counts=True)[1] < 2):
        groups = np.sort(np.concatenate([groups, groups]))
    sims = similarity_matrix(rng.standard_normal((groups.size, 5)))
    a_loss, a_grad = kernels._vgl_rows_numba(sims, groups.astype(np.int64), tau, attention, 1.0, True)
    b_loss, b_grad = kernels._vgl_rows_numpy(sims, groups.astype(np.int64), tau, attention, 1.0, True)
    np.testing.assert_allclose(a_loss, b_loss, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(a_grad, b_grad, rtol=1e-10, atol=1e-14)
