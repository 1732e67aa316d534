import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import normalized_mutual_info_score

from grouploss import dynamics
from grouploss.data import make_blobs
from grouploss.errors import ContractError, ParameterError
from grouploss.evaluation import (
    EvalReport,
    ZeroRowWarning,
    evaluate,
    kmeans,
    kmeans_fit,
    l2_normalize,
    nmi,
    recall_at_k,
)
from grouploss.model import MlpEncoder

from . import oracles


# l2_normalize -------------------------------------------------------------------------------

def test_l2_normalize_examples(rng):
    assert l2_normalize([[3.0, 4.0]]).tolist() == [[0.6, 0.8]]
    unit = np.array([[1 / np.sqrt(2), -1 / np.sqrt(2)]])
    np.testing.assert_allclose(l2_normalize(unit), unit, atol=1e-15, rtol=0)
    norms = np.linalg.norm(l2_normalize(rng.normal(size=(100, 16))), axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12, rtol=0)


def test_zero_rows_stay_zero_with_warning():
    with pytest.warns(ZeroRowWarning):
        out = l2_normalize([[0.0, 0.0], [0.0, 2.0]])
    assert out.tolist() == [[0.0, 0.0], [0.0, 1.0]]


# recall -------------------------------------------------------------------------------------

def test_recall_on_identical_points():
    e = np.array([[0.0, 0.0]] * 3 + [[10.0, 10.0]] * 3)
    assert recall_at_k(e, [0, 0, 0, 1, 1, 1], [1, 2]) == {1: 1.0, 2: 1.0}


def test_recall_without_positives_is_zero(rng):
    assert set(recall_at_k(rng.normal(size=(10, 3)), np.arange(10), [1, 2, 4, 8]).values()) == {0.0}


def test_recall_matches_naive_oracle():
    rng = np.random.default_rng(30)
    e, y = rng.normal(size=(30, 5)), rng.integers(0, 6, 30)
    got = recall_at_k(e, y, [1, 2, 4, 8])
    assert got == {k: oracles.recall_at_k(e.tolist(), y.tolist(), k) for k in (1, 2, 4, 8)}


def test_recall_ties_go_to_lower_index():
    # query 0 is equidistant from rows 1 (other class) and 2 (same class)
    e = np.array([[0.0], [1.0], [-1.0], [5.0]])
    assert recall_at_k(e, [0, 1, 0, 1], [1])[1] == 0.5
    assert recall_at_k(e, [0, 0, 1, 1], [1])[1] == 0.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(10, 40), st.integers(2, 6))
def test_recall_is_monotone_in_k(seed, n, classes):
    rng = np.random.default_rng(seed)
    r = recall_at_k(rng.normal(size=(n, 3)), rng.integers(0, classes, n), range(1, 10))
    vals = [r[k] for k in sorted(r)]
    assert vals == sorted(vals) and all(0 <= v <= 1 for v in vals)


def test_recall_errors(rng):
    e = rng.normal(size=(5, 2))
    with pytest.raises(ParameterError):
        recall_at_k(e, np.zeros(5), [5])
    with pytest.raises(ParameterError):
        recall_at_k(e, np.zeros(5), [0])
    with pytest.raises(ContractError):
        recall_at_k(e, np.zeros(4), [1])


# k-means -------------------------------------------------------------------------------------

def test_k_equals_n_gives_zero_inertia(rng):
    x = rng.normal(size=(12, 3))
    fit = kmeans_fit(x, 12, seed=0)
    assert fit.inertia == 0.0 and len(set(fit.labels.tolist())) == 12


def test_two_far_blobs(rng):
    x = np.concatenate([rng.normal(size=(20, 2)) * 0.1, rng.normal(size=(20, 2)) * 0.1 + 50])
    labels = kmeans(x, 2, seed=3)
    truth = np.repeat([0, 1], 20)
    assert nmi(labels, truth) == 1.0


def test_best_of_restarts_is_near_naive_optimum():
    # overlapping mixture, so restarts genuinely disagree
    rng = np.random.default_rng(8)
    x = l2_normalize(rng.normal(size=(8, 6))[rng.integers(0, 8, 160)] * 1.5 + rng.normal(size=(160, 6)))
    oracle_rng = np.random.default_rng(0)
    best_naive = min(oracles.lloyd_inertia(x, 8, oracle_rng) for _ in range(50))
    assert kmeans_fit(x, 8, seed=0).inertia <= best_naive * 1.01


def test_kmeans_is_deterministic_and_checks_k(rng):
    x = rng.normal(size=(40, 4))
    assert np.array_equal(kmeans(x, 4, seed=1), kmeans(x, 4, seed=1))
    with pytest.raises(ParameterError):
        kmeans(x, 0)
    with pytest.raises(ParameterError):
        kmeans(x, 41)


def test_kmeans_handles_duplicate_points():
    x = np.array([[0.0, 0.0]] * 6 + [[1.0, 1.0]] * 2)
    fit = kmeans_fit(x, 3, seed=0)
    assert fit.inertia == 0.0


# NMI ------------------------------------------------------------------------------------

def test_nmi_examples():
    assert nmi([0, 1, 1, 2], [0, 1, 1, 2]) == 1.0
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0
    assert nmi([0, 0, 0], [0, 0, 0]) == 1.0
    assert nmi([0, 0, 0], [0, 1, 2]) == 0.0


def test_nmi_is_permutation_invariant_bit_for_bit(rng):
    for _ in range(100):
        a, b = rng.integers(0, 5, 50), rng.integers(0, 7, 50)
        perm = rng.permutation(10)
        assert nmi(perm[a], b) == nmi(a, b)
        assert nmi(a, perm[b] + 100) == nmi(a, b)


def test_nmi_is_symmetric_and_matches_reference(rng):
    for _ in range(100):
        n = int(rng.integers(2, 80))
        a, b = rng.integers(0, rng.integers(1, 8), n), rng.integers(0, rng.integers(1, 8), n)
        assert abs(nmi(a, b) - nmi(b, a)) <= 1e-12
        ref = normalized_mutual_info_score(b, a, average_method="geometric")
        assert nmi(a, b) == pytest.approx(ref, abs=1e-12)


def test_nmi_errors():
    with pytest.raises(ContractError):
        nmi([0, 1], [0, 1, 2])
    with pytest.raises(ContractError):
        nmi([], [])


# evaluate -----------------------------------------------------------------------------------

def untrained_report(seed=0):
    ds = make_blobs(num_classes=6, per_class=20, seed=seed)
    enc = MlpEncoder.init(ds.dim, [64], 32, 6, np.random.default_rng(seed))
    return evaluate(enc, ds, seed=seed)


def test_untrained_encoder_smoke():
    report = untrained_report()
    assert sorted(report.recall_at) == [1, 2, 4, 8]
    assert all(0 <= v <= 1 for v in report.recall_at.values())
    assert 0 <= report.nmi <= 1 and report.n_queries == 120
    assert report.config["k_clusters"] == 6


def test_evaluate_never_runs_dynamics():
    before = dict(dynamics.call_counts)
    untrained_report()
    assert dict(dynamics.call_counts) == before


def test_report_text_round_trip():
    report = untrained_report()
    text = report.to_text()
    back = EvalReport.from_text(text)
    assert back.n_queries == report.n_queries
    assert back.recall_at == {k: round(v, 6) for k, v in report.recall_at.items()}
    assert back.nmi == round(report.nmi, 6)
    assert back.to_text() == text
    assert "recall@1=" in text and "nmi=" in text


def test_evaluate_rejects_empty():
    ds = make_blobs(num_classes=2, per_class=3, seed=0).subset(np.array([], dtype=int))
    enc = MlpEncoder.init(32, [4], 2, 2, np.random.default_rng(0))
    with pytest.raises(ContractError), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        evaluate(enc, ds)
