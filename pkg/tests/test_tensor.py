import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from grouploss.errors import ContractError, InvalidBatchError, NumericError, ParameterError
from grouploss.tensor import cross_entropy, is_row_stochastic, row_normalize, softmax_with_temperature


def test_softmax_uniform_for_equal_logits():
    np.testing.assert_allclose(softmax_with_temperature([[0.0, 0.0, 0.0]], 1.0), [[1 / 3] * 3], rtol=0, atol=1e-15)


def test_softmax_closed_form():
    z = math.exp(4) + math.exp(2)
    out = softmax_with_temperature([[2.0, 1.0]], 0.5)
    np.testing.assert_allclose(out, [[math.exp(4) / z, math.exp(2) / z]], rtol=1e-15)


def test_softmax_high_temperature_tends_to_uniform(rng):
    z = rng.normal(size=(4, 5)) * 10
    np.testing.assert_allclose(softmax_with_temperature(z, 1e12), np.full((4, 5), 0.2), atol=1e-9)


def test_softmax_is_stable_for_huge_logits():
    out = softmax_with_temperature([[1000.0, 0.0], [-1000.0, -1000.0]], 1.0)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [[1.0, 0.0], [0.5, 0.5]])


@pytest.mark.parametrize("t", [0.0, -1.0, float("nan"), float("inf")])
def test_softmax_rejects_bad_temperature(t):
    with pytest.raises(ParameterError):
        softmax_with_temperature([[1.0, 2.0]], t)


def test_softmax_rejects_non_finite_logits():
    with pytest.raises(NumericError):
        softmax_with_temperature([[1.0, np.nan]], 1.0)


def test_softmax_rows_sum_to_one_fuzz(rng):
    for _ in range(1000):
        n, m = rng.integers(1, 65, size=2)
        z = rng.normal(scale=rng.uniform(0.1, 50), size=(n, m))
        p = softmax_with_temperature(z, rng.uniform(0.05, 20))
        assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12)


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(-50, 50)),
    st.floats(0.01, 100),
)
def test_softmax_preserves_argmax(z, t):
    # integer logits: exact ties are possible and must resolve to the lowest index
    p = softmax_with_temperature(z.astype(np.float64), t)
    assert np.array_equal(p.argmax(axis=1), z.argmax(axis=1))


def test_cross_entropy_perfect_prediction():
    x = np.eye(3)[[0, 2, 1, 1]]
    assert cross_entropy(x, [0, 2, 1, 1]) <= 1e-11


def test_cross_entropy_uniform_is_log_m():
    assert cross_entropy(np.full((5, 4), 0.25), [0, 1, 2, 3, 0]) == pytest.approx(math.log(4), abs=1e-15)


def test_cross_entropy_matches_per_entry_oracle(rng):
    x = rng.uniform(size=(5, 3))
    x /= x.sum(axis=1, keepdims=True)
    y = [0, 2, 1, 0, 2]
    expected = sum(-math.log(x[i, y[i]]) for i in range(5)) / 5
    assert cross_entropy(x, y) == pytest.approx(expected, rel=1e-14)


def test_cross_entropy_mask_selects_rows(rng):
    x = rng.uniform(size=(4, 2))
    x /= x.sum(axis=1, keepdims=True)
    y = [0, 1, 1, 0]
    mask = [True, False, True, False]
    assert cross_entropy(x, y, mask) == pytest.approx((-math.log(x[0, 0]) - math.log(x[2, 1])) / 2)


def test_cross_entropy_all_masked_is_invalid():
    with pytest.raises(InvalidBatchError):
        cross_entropy(np.eye(2), [0, 1], [False, False])


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ContractError):
        cross_entropy(np.eye(2), [0, 2])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(0, 1)), st.lists(st.integers(0, 2), min_size=4, max_size=4))
def test_cross_entropy_non_negative(raw, y):
    x = raw + 1e-3
    x /= x.sum(axis=1, keepdims=True)
    assert cross_entropy(x, y) >= 0


def test_row_normalize_examples():
    out = row_normalize([[2.0, 2.0, 0.0], [0.0, 0.0, 0.0], [1.0, 3.0, 4.0]], [[0, 0, 1], [0.3, 0.7, 0.0], [1, 0, 0]])
    np.testing.assert_array_equal(out, [[0.5, 0.5, 0.0], [0.3, 0.7, 0.0], [0.125, 0.375, 0.5]])
    assert is_row_stochastic(out)


def test_row_normalize_rejects_negative_entries():
    with pytest.raises(ContractError):
        row_normalize([[1.0, -1.0]], [[0.5, 0.5]])
