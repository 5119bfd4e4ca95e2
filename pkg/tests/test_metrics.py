"""Metric implementations against exhaustive brute-force oracles.

The oracles below count outcomes directly from the definitions and stay
independent of the implementations they check.
"""

import itertools
import math

import numpy as np
import pytest

from mitobench.errors import ValidationError
from mitobench.metrics import auroc, balanced_accuracy, evaluate, weighted_f1


def bf_balanced_accuracy(labels, predictions):
    pos = [p for y, p in zip(labels, predictions) if y == 1]
    neg = [p for y, p in zip(labels, predictions) if y == 0]
    sens = sum(1 for p in pos if p == 1) / len(pos)
    spec = sum(1 for p in neg if p == 0) / len(neg)
    return (sens + spec) / 2


def bf_f1(labels, predictions, cls):
    tp = sum(1 for y, p in zip(labels, predictions) if p == cls and y == cls)
    fp = sum(1 for y, p in zip(labels, predictions) if p == cls and y != cls)
    fn = sum(1 for y, p in zip(labels, predictions) if p != cls and y == cls)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def bf_weighted_f1(labels, predictions):
    n = len(labels)
    total = 0.0
    for cls in (0, 1):
        support = sum(1 for y in labels if y == cls)
        total += support / n * bf_f1(labels, predictions, cls)
    return total


def bf_auroc(labels, scores):
    wins = 0.0
    pairs = 0
    for yp, sp in zip(labels, scores):
        if yp != 1:
            continue
        for yn, sn in zip(labels, scores):
            if yn != 0:
                continue
            pairs += 1
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / pairs


class TestBalancedAccuracy:
    def test_perfect(self):
        assert balanced_accuracy([1, 0, 1, 0], [1, 0, 1, 0]) == 1.0

    def test_half_sensitivity(self):
        # sens 0.5, spec 1.0
        assert balanced_accuracy([1, 1, 0, 0], [1, 0, 0, 0]) == pytest.approx(0.75)

    def test_constant_predictor_is_chance(self):
        assert balanced_accuracy([1, 1, 0, 0, 0], [1, 1, 1, 1, 1]) == pytest.approx(0.5)
        assert balanced_accuracy([1, 1, 0, 0, 0], [0, 0, 0, 0, 0]) == pytest.approx(0.5)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            balanced_accuracy([1, 1], [1, 0])

    def test_prevalence_invariance(self):
        # duplicating every negative k times with identical predictions
        labels = [1, 1, 0, 0, 0]
        preds = [1, 0, 0, 1, 0]
        base = balanced_accuracy(labels, preds)
        dup_labels, dup_preds = [], []
        for y, p in zip(labels, preds):
            reps = 4 if y == 0 else 1
            dup_labels += [y] * reps
            dup_preds += [p] * reps
        assert balanced_accuracy(dup_labels, dup_preds) == pytest.approx(base)


class TestWeightedF1:
    def test_perfect(self):
        assert weighted_f1([1, 0, 1], [1, 0, 1]) == 1.0

    def test_mixed(self):
        # class1 F1 = 2/3, class0 F1 = 0.8, equal support
        assert weighted_f1([1, 1, 0, 0], [1, 0, 0, 0]) == pytest.approx(0.5 * (2 / 3) + 0.5 * 0.8)

    def test_all_negative_predictor(self):
        # class1 F1 = 0 (zero-division convention), class0 F1 = 6/7
        assert weighted_f1([1, 0, 0, 0], [0, 0, 0, 0]) == pytest.approx(0.25 * 0.0 + 0.75 * 6 / 7)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            weighted_f1([0, 0], [1, 0])


class TestAuroc:
    def test_pairwise_example(self):
        # pairs: (0.9,0.6)+, (0.9,0.1)+, (0.4,0.6)-, (0.4,0.1)+ -> 3/4
        assert auroc([1, 1, 0, 0], [0.9, 0.4, 0.6, 0.1]) == pytest.approx(0.75)

    def test_perfect_ranking(self):
        labels = [1, 1, 0, 0]
        assert auroc(labels, labels) == 1.0

    def test_all_ties(self):
        assert auroc([1, 0, 1, 0], [0.3, 0.3, 0.3, 0.3]) == pytest.approx(0.5)

    def test_monotone_transform_invariance(self):
        r = np.random.default_rng(7)
        labels = r.integers(0, 2, size=50)
        labels[0], labels[1] = 0, 1
        scores = r.normal(size=50)
        base = auroc(labels, scores)
        assert auroc(labels, np.exp(scores)) == base
        assert auroc(labels, 3.0 * scores + 10.0) == base

    def test_negation_complement_without_ties(self):
        r = np.random.default_rng(8)
        labels = r.integers(0, 2, size=40)
        labels[0], labels[1] = 0, 1
        scores = r.permutation(np.arange(40)).astype(float)
        assert auroc(labels, scores) + auroc(labels, -scores) == pytest.approx(1.0, abs=1e-15)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            auroc([1, 1], [0.2, 0.4])


class TestOracleAgreement:
    def test_exhaustive_small_vectors(self):
        for n in range(2, 7):
            for labels in itertools.product((0, 1), repeat=n):
                if len(set(labels)) < 2:
                    continue
                for preds in itertools.product((0, 1), repeat=n):
                    assert balanced_accuracy(labels, preds) == bf_balanced_accuracy(labels, preds)
                    assert weighted_f1(labels, preds) == pytest.approx(
                        bf_weighted_f1(labels, preds), abs=1e-15
                    )
                    assert auroc(labels, [float(p) for p in preds]) == pytest.approx(
                        bf_auroc(labels, preds), abs=1e-15
                    )

    def test_random_score_vectors(self):
        r = np.random.default_rng(123)
        for _ in range(250):
            n = int(r.integers(2, 65))
            labels = r.integers(0, 2, size=n)
            labels[0], labels[1] = 0, 1
            scores = np.round(r.normal(size=n), 2)  # rounding creates ties
            assert auroc(labels, scores) == pytest.approx(bf_auroc(labels, scores), abs=1e-12)


class TestEvaluate:
    def test_perfect_model(self):
        labels = [1, 1, 0, 0]
        result = evaluate(labels, [0.9, 0.8, 0.2, 0.1])
        assert result.balanced_accuracy == 1.0
        assert result.weighted_f1 == 1.0
        assert result.auroc == 1.0
        assert (result.n_pos, result.n_neg) == (2, 2)

    def test_score_inverted_oracle(self):
        result = evaluate([1, 1, 0, 0], [0.1, 0.2, 0.8, 0.9])
        assert result.auroc == 0.0

    def test_duplication_invariance(self):
        labels = [1, 1, 0, 0, 1]
        scores = [0.9, 0.3, 0.4, 0.1, 0.7]
        once = evaluate(labels, scores)
        twice = evaluate(labels * 2, scores * 2)
        assert once.balanced_accuracy == twice.balanced_accuracy
        assert once.weighted_f1 == twice.weighted_f1
        assert once.auroc == twice.auroc

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            evaluate([], [])

    def test_single_class_omits_auroc(self):
        result = evaluate([1, 1, 1], [0.9, 0.8, 0.2])
        assert result.auroc is None
        assert result.auroc_omitted
        assert result.balanced_accuracy == pytest.approx(2 / 3)

    def test_threshold_convention(self):
        # p >= threshold predicts positive
        result = evaluate([1, 0], [0.5, 0.4])
        assert result.balanced_accuracy == 1.0

    def test_loss_of_ln2_equivalent_roundtrip(self):
        result = evaluate([1, 0], [0.9, 0.1], threshold=0.5)
        assert result.to_json() == type(result).from_json(result.to_json()).to_json()
        assert math.isclose(result.auroc, 1.0)
