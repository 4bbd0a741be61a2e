import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridkd.errors import DataError, DimensionError
from hybridkd.metrics import (
    binary_auc,
    binary_average_precision,
    confusion_matrix,
    evaluate,
    map_macro,
    per_class_prf,
    roc_auc_macro,
)
from oracles import ap_thresholds, auc_pairs, auc_thresholds, macro_oracle, random_instance


def test_auc_and_map_match_threshold_oracle_on_random_instances():
    rng = np.random.default_rng(20240601)
    for _ in range(100):
        scores, labels = random_instance(rng)
        got_auc = roc_auc_macro(scores, labels)
        got_map = map_macro(scores, labels)
        assert got_auc == pytest.approx(macro_oracle(scores, labels, auc_thresholds, True), abs=1e-9)
        assert got_auc == pytest.approx(macro_oracle(scores, labels, auc_pairs, True), abs=1e-9)
        assert got_map == pytest.approx(macro_oracle(scores, labels, ap_thresholds, False), abs=1e-9)


def test_perfect_separation():
    score = np.array([0.9, 0.8, 0.2, 0.1])
    pos = np.array([True, True, False, False])
    assert binary_auc(score, pos) == 1.0
    assert binary_average_precision(score, pos) == 1.0


def test_inverted_ranking_auc_zero():
    score = np.array([0.1, 0.2, 0.8, 0.9])
    pos = np.array([True, True, False, False])
    assert binary_auc(score, pos) == 0.0


def test_all_tied_scores():
    score = np.full(6, 0.5)
    pos = np.array([True, False, True, False, False, False])
    assert binary_auc(score, pos) == pytest.approx(0.5)
    assert binary_average_precision(score, pos) == pytest.approx(2 / 6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores, labels = random_instance(rng)
    transformed = np.exp(3.0 * scores) + 7.0
    assert roc_auc_macro(transformed, labels) == pytest.approx(roc_auc_macro(scores, labels), abs=1e-12)
    assert map_macro(transformed, labels) == pytest.approx(map_macro(scores, labels), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_metrics_invariant_under_sample_permutation(seed):
    rng = np.random.default_rng(seed)
    scores, labels = random_instance(rng)
    perm = rng.permutation(labels.size)
    assert roc_auc_macro(scores[perm], labels[perm]) == pytest.approx(roc_auc_macro(scores, labels), abs=1e-12)
    assert map_macro(scores[perm], labels[perm]) == pytest.approx(map_macro(scores, labels), abs=1e-12)


def test_f1_matches_loop_definition():
    rng = np.random.default_rng(3)
    for _ in range(20):
        c = 4
        labels = rng.integers(0, c, 30)
        preds = rng.integers(0, c, 30)
        _, _, f1 = per_class_prf(confusion_matrix(labels, preds, c))
        for k in range(c):
            tp = sum(1 for y, p in zip(labels, preds) if y == k and p == k)
            fp = sum(1 for y, p in zip(labels, preds) if y != k and p == k)
            fn = sum(1 for y, p in zip(labels, preds) if y == k and p != k)
            expected = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
            assert f1[k] == pytest.approx(expected)


def test_confusion_matrix_counts():
    cm = confusion_matrix(np.array([0, 0, 1, 2]), np.array([0, 1, 1, 0]), 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 0]]
    assert cm.sum() == 4


def test_evaluate_perfect_predictions():
    labels = np.array([0, 1, 2, 1, 0, 2])
    probs = np.eye(3)[labels]
    r = evaluate(probs, labels)
    for key in ("accuracy", "precision_macro", "recall_macro", "f1_macro", "auc_macro", "map_macro"):
        assert getattr(r, key) == 1.0


def test_evaluate_argmax_tie_goes_to_lowest_index():
    probs = np.array([[0.5, 0.5], [0.5, 0.5]])
    r = evaluate(probs, np.array([0, 1]))
    assert r.confusion.tolist() == [[1, 0], [1, 0]]
    assert r.accuracy == 0.5


def test_class_without_positives_is_skipped_in_macro():
    probs = np.array([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]])
    labels = np.array([0, 1, 0])
    # class 2 has no positives: AUC/AP averaged over classes 0 and 1 only
    assert roc_auc_macro(probs, labels) == pytest.approx(1.0)
    assert map_macro(probs, labels) == pytest.approx(1.0)


def test_evaluate_rejects_unnormalised_rows():
    with pytest.raises(DataError):
        evaluate(np.array([[0.5, 0.6]]), np.array([0]))


def test_evaluate_rejects_shape_mismatch():
    with pytest.raises(DimensionError):
        evaluate(np.array([[0.5, 0.5]]), np.array([0, 1]))


def test_evaluate_rejects_out_of_range_label():
    with pytest.raises(DataError):
        evaluate(np.array([[0.5, 0.5]]), np.array([2]))


def test_metric_values_in_unit_interval():
    rng = np.random.default_rng(11)
    for n, c in itertools.product([5, 17], [2, 4]):
        probs = rng.dirichlet(np.ones(c), size=n)
        labels = rng.integers(0, c, n)
        d = evaluate(probs, labels).to_dict()
        for v in d.values():
            assert 0.0 <= v <= 1.0
