import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socialcvae import entmax as em
from socialcvae import tensor as tc

scores = st.lists(st.floats(-20, 20, allow_nan=False), min_size=1, max_size=8).map(np.array)


def test_symmetric_pair_is_uniform():
    assert np.allclose(em.entmax15_np(np.array([0.0, 0.0])), [0.5, 0.5], rtol=0, atol=1e-15)


@pytest.mark.parametrize("c", [-7.0, 0.0, 3.5, 1e3])
def test_constant_vector_is_uniform(c):
    assert np.allclose(em.entmax15_np(np.full(4, c)), 0.25, atol=1e-15)


def test_large_gap_gives_one_hot():
    assert em.entmax15_np(np.array([4.0, 0.0])).tolist() == [1.0, 0.0]
    assert np.allclose(em.bisection_entmax15(np.array([4.0, 0.0])), [1.0, 0.0], atol=1e-12)


def test_random_vectors_match_bisection():
    rng = np.random.default_rng(0)
    for _ in range(500):
        d = rng.integers(1, 9)
        s = rng.normal(0, rng.uniform(0.1, 5), d)
        assert np.max(np.abs(em.entmax15_np(s) - em.bisection_entmax15(s))) <= 1e-8


def test_threshold_scan_support_matches_output():
    s = np.array([1.3, 0.2, -0.4, 2.0, -3.0])
    scan = em.threshold_scan(s / 2)
    p = em.entmax15_np(s)
    assert scan.support == np.count_nonzero(p)
    assert np.allclose(np.clip(s / 2 - scan.threshold, 0, None) ** 2, p, atol=1e-12)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        em.entmax15_np(np.zeros(0))


@settings(max_examples=200, deadline=None)
@given(scores)
def test_output_is_a_distribution(s):
    p = em.entmax15_np(s)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(scores, st.floats(-50, 50))
def test_shift_invariance(s, c):
    assert np.allclose(em.entmax15_np(s), em.entmax15_np(s + c), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(scores)
def test_order_is_preserved(s):
    p = em.entmax15_np(s)
    i, j = np.argmax(s), np.argmin(s)
    assert p[i] >= p[j]


def test_zero_upstream_gives_zero_gradient():
    s = np.array([0.3, -0.2, 1.0])
    p = em.entmax15_np(s)
    assert np.all(em.entmax15_vjp(s, p, np.zeros(3)) == 0.0)


def test_inactive_coordinate_has_zero_gradient():
    s = np.array([4.0, 0.0, -1.0])
    p = em.entmax15_np(s)
    g = em.entmax15_vjp(s, p, np.array([0.3, -1.0, 2.0]))
    assert np.all(g == 0.0)


def test_vjp_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(100):
        d = int(rng.integers(2, 9))
        s = tc.parameter(rng.normal(0, 1.5, d))
        up = rng.normal(size=d)
        assert tc.finite_diff_check(lambda: tc.sum(em.entmax15(s) * up), [s]) < 1e-4


def test_pad_batch_layout():
    b = em.pad_batch([[1.0, 0.0], [0.5, 0.2, -1.0]])
    assert b.values.shape == (2, 3)
    assert b.values[0, 2] == b.dummy == -3.0
    assert b.mask().tolist() == [[True, True, False], [True, True, True]]


def test_padded_slot_gets_zero():
    p = em.entmax15_np(np.array([1.0, 0.0, -2.0]))
    assert p[2] == 0.0
    assert np.array_equal(p[:2], em.entmax15_np(np.array([1.0, 0.0])))


def test_all_equal_rows_padded():
    b = em.pad_batch([[2.0, 2.0], [2.0, 2.0, 2.0]])
    p = em.entmax15_np(b.values)
    assert np.allclose(p[0], [0.5, 0.5, 0.0], rtol=0, atol=1e-15)
    assert p[0, 2] == 0.0
    assert np.allclose(p[1], 1 / 3, atol=1e-15)


def test_single_edge_segment_has_weight_one():
    assert em.segmented_entmax(np.array([0.7]), np.array([0])).data.tolist() == [1.0]


def test_identical_scores_within_segments_are_uniform():
    p = em.segmented_entmax(np.array([1.0, 1.0, -2.0, -2.0, -2.0]), np.array([0, 0, 1, 1, 1])).data
    assert np.allclose(p, [0.5, 0.5, 1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_segmented_equals_per_segment_loop():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = int(rng.integers(1, 6))
        seg = np.concatenate([np.arange(m), rng.integers(0, m, int(rng.integers(0, 15)))])
        rng.shuffle(seg)
        s = rng.normal(0, 2, seg.size)
        p = em.segmented_entmax(s, seg).data
        for k in range(m):
            assert np.array_equal(p[seg == k], em.entmax15_np(s[seg == k]))


def test_segmented_softmax_matches_loop():
    seg = np.array([1, 0, 1, 1, 0])
    s = np.array([0.1, 2.0, -1.0, 0.5, 0.0])
    p = em.segmented_softmax(s, seg).data
    for k in (0, 1):
        e = np.exp(s[seg == k])
        assert np.allclose(p[seg == k], e / e.sum(), atol=1e-15)


def test_empty_segment_rejected():
    with pytest.raises(ValueError, match="empty segment"):
        em.Segments(np.array([0, 2]))


def test_segmented_gradients():
    rng = np.random.default_rng(9)
    seg = np.array([0, 1, 0, 0, 1, 2])
    s = tc.parameter(rng.normal(size=6))
    up = rng.normal(size=6)
    assert tc.finite_diff_check(lambda: tc.sum(em.segmented_entmax(s, seg) * up), [s]) < 1e-4
    assert tc.finite_diff_check(lambda: tc.sum(em.segmented_softmax(s, seg) * up), [s]) < 1e-5


@pytest.mark.parametrize("statement", [1, 2])
def test_augmentation_statements_hold(statement):
    report = em.verify_prop2(statement, trials=300, seed=statement)
    assert report.passed, report.violations[:3]
    assert report.probes >= 300


def test_equality_boundary_is_inclusive():
    s = np.array([0.2, 0.0, -0.1])
    bound = em.appended_threshold(s)
    p = em.entmax15_np(np.append(s, bound))
    assert p[-1] == 0.0
    assert em.entmax15_np(np.append(s, bound + 1e-6))[-1] > 0.0


def test_singleton_with_appended_min_minus_two():
    assert em.entmax15_np(np.array([0.8, 0.8 - 2.0])).tolist() == [1.0, 0.0]
