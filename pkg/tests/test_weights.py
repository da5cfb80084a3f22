import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from lambdafmm.weights import (
    MAX_BRANCHES,
    branch_index_map,
    expand_weights,
    weight_gradient,
    weight_gradient_matrix,
)

lam_floats = st.floats(min_value=-0.2, max_value=1.2, allow_nan=False)
lam_lists = st.lists(lam_floats, min_size=1, max_size=MAX_BRANCHES)


def test_single_lambda_example():
    w = expand_weights([0.345])
    assert_allclose(w.values, [0.655, 0.345], rtol=0, atol=1e-15)


def test_two_lambda_example():
    # bit 0 of the form index toggles with the first lambda
    w = expand_weights([0.345, 0.721])
    expected = [0.182745, 0.096255, 0.472255, 0.248745]
    assert_allclose(w.values, expected, rtol=0, atol=1e-15)


def test_two_lambda_gradient_example():
    g = weight_gradient([0.345, 0.721], 0)
    assert_allclose(g, [-0.279, 0.279, -0.721, 0.721], rtol=0, atol=1e-15)


def test_gradient_matrix_matches_rows():
    lams = [0.3, 0.62, 0.11]
    mat = weight_gradient_matrix(lams)
    assert mat.shape == (3, 8)
    for k in range(3):
        assert_allclose(mat[k], weight_gradient(lams, k), rtol=0, atol=0)


@given(lam_lists)
def test_partition_of_unity(lams):
    w = expand_weights(lams)
    assert w.values.shape == (2 ** len(lams),)
    assert abs(np.sum(w.values) - 1.0) < 1e-14


@given(lam_lists)
def test_gradient_rows_sum_to_zero(lams):
    mat = weight_gradient_matrix(lams)
    assert np.all(np.abs(np.sum(mat, axis=1)) < 1e-14)


@given(lam_lists, st.integers(min_value=0, max_value=MAX_BRANCHES - 1))
@settings(max_examples=200)
def test_gradient_matches_finite_difference(lams, k):
    if k >= len(lams):
        k = k % len(lams)
    h = 1e-6
    lo = list(lams)
    hi = list(lams)
    lo[k] -= h
    hi[k] += h
    fd = (expand_weights(hi).values - expand_weights(lo).values) / (2 * h)
    assert_allclose(weight_gradient(lams, k), fd, rtol=0, atol=1e-8)


def test_vertex_weights_are_indicator():
    # at a corner of the hypercube exactly one form has weight 1
    lams = [1.0, 0.0, 1.0]
    w = expand_weights(lams)
    idx = 0b101
    expected = np.zeros(8)
    expected[idx] = 1.0
    assert_allclose(w.values, expected, rtol=0, atol=0)


def test_too_many_lambdas_rejected():
    with pytest.raises(ValueError):
        expand_weights([0.5] * (MAX_BRANCHES + 1))
    with pytest.raises(ValueError):
        expand_weights([])


def test_fingerprint_tracks_values():
    a = expand_weights([0.25, 0.75])
    b = expand_weights([0.25, 0.75])
    c = expand_weights([0.25, 0.750001])
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()


def test_index_map_table_view():
    # table view: first lambda drives the most significant bit
    imap = branch_index_map(3)
    assert imap.selected(0) == (4, 5, 6, 7)
    assert imap.selected(2) == (1, 3, 5, 7)
    assert imap.deselected(2) == (0, 2, 4, 6)


def test_index_map_lsb_view_matches_weight_algebra():
    imap = branch_index_map(2, bit_order="lsb")
    # weight algebra: form index bit k toggles with lambda k
    assert imap.selected(0) == (1, 3)
    assert imap.selected(1) == (2, 3)
    lams = [0.3, 0.9]
    w = expand_weights(lams)
    for k in range(2):
        sel = np.array(imap.selected(k))
        # selected forms carry the lambda_k factor
        vals = w.values[sel]
        other = np.delete(w.values, sel)
        assert abs(np.sum(vals) - lams[k]) < 1e-14
        assert abs(np.sum(other) - (1 - lams[k])) < 1e-14


def test_index_map_msb_alias():
    a = branch_index_map(3, bit_order="table")
    b = branch_index_map(3, bit_order="msb")
    assert a.selected(1) == b.selected(1)


def test_index_map_form_tuples():
    imap = branch_index_map(2)
    assert imap.pairs == ((0, 1), (2, 3))
    assert len(imap.form_tuples) == 4
    # one slot per branch: even slot for the (1-lambda) factor, odd for lambda
    assert imap.form_tuples[0] == (0, 2)
    assert imap.form_tuples[3] == (1, 3)
    # table order: form 1 sets the last lambda's bit
    assert imap.form_tuples[1] == (0, 3)


def test_index_map_bad_order_rejected():
    with pytest.raises(ValueError):
        branch_index_map(2, bit_order="weird")
