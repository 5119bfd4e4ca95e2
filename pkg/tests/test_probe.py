import numpy as np
import pytest
import torch

from mitobench.adapt.probe import FitConfig, ProbeHead, fit_probe, probe_predict
from mitobench.errors import ValidationError
from mitobench.metrics import balanced_accuracy


def make_head(weight, bias=None):
    w = np.asarray(weight, dtype=np.float64)
    head = ProbeHead(w.shape[1], classes=w.shape[0], bias=bias is not None, dtype=torch.float64)
    with torch.no_grad():
        head.weight.copy_(torch.from_numpy(w))
        if bias is not None:
            head.bias.copy_(torch.as_tensor(bias, dtype=torch.float64))
    return head


class TestProbePredict:
    def test_identity_weights(self):
        head = make_head(np.eye(2))
        out = probe_predict(head, np.array([2.0, -3.0]))
        assert torch.allclose(out, torch.tensor([2.0, -3.0], dtype=torch.float64))

    def test_zero_map(self):
        head = make_head(np.zeros((2, 3)))
        out = probe_predict(head, np.array([1.0, 2.0, 3.0]))
        assert torch.equal(out, torch.zeros(2, dtype=torch.float64))

    def test_hand_computed(self):
        head = make_head([[1.0, 1.0], [0.0, 2.0]])
        out = probe_predict(head, np.array([1.0, 1.0]))
        assert torch.allclose(out, torch.tensor([2.0, 2.0], dtype=torch.float64))

    def test_dimension_mismatch(self):
        head = make_head(np.eye(2))
        with pytest.raises(ValidationError):
            probe_predict(head, np.array([1.0, 2.0, 3.0]))

    def test_batched(self):
        head = make_head(np.eye(2))
        z = np.random.default_rng(0).normal(size=(5, 2))
        out = probe_predict(head, z)
        assert out.shape == (5, 2)


def separable_set(n=60, seed=0):
    r = np.random.default_rng(seed)
    z = r.normal(size=(n, 2))
    z[:, 0] += np.where(z[:, 0] >= 0, 0.5, -0.5)  # margin around zero
    labels = (z[:, 0] > 0).astype(int)
    return z, labels


class TestFitProbe:
    def test_separable_reaches_perfect_training_accuracy(self):
        z, labels = separable_set()
        head = fit_probe(z, labels)
        preds = probe_predict(head, z).numpy().argmax(axis=1)
        assert balanced_accuracy(labels, preds) == 1.0

    def test_duplicated_dataset_same_decision_function(self):
        z, labels = separable_set(seed=3)
        head_once = fit_probe(z, labels)
        head_twice = fit_probe(np.vstack([z, z]), np.concatenate([labels, labels]))
        grid = np.random.default_rng(1).normal(size=(50, 2)) * 3
        out1 = probe_predict(head_once, grid).numpy()
        out2 = probe_predict(head_twice, grid).numpy()
        assert np.abs(out1 - out2).max() <= 1e-6

    def test_flipped_labels_negate_logits(self):
        z, labels = separable_set(seed=5)
        config = FitConfig(add_bias=False)
        head = fit_probe(z, labels, config)
        head_flipped = fit_probe(z, 1 - labels, config)
        grid = np.random.default_rng(2).normal(size=(40, 2)) * 2
        out = probe_predict(head, grid).numpy()
        out_flipped = probe_predict(head_flipped, grid).numpy()
        assert np.abs(out + out_flipped).max() <= 1e-6

    def test_single_class_rejected(self):
        z = np.random.default_rng(0).normal(size=(10, 2))
        with pytest.raises(ValidationError):
            fit_probe(z, np.ones(10, dtype=int))

    def test_non_finite_rejected(self):
        z = np.zeros((4, 2))
        z[0, 0] = np.nan
        with pytest.raises(ValidationError):
            fit_probe(z, [0, 1, 0, 1])

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValidationError):
            fit_probe(np.zeros((1, 2)), [1])

    def test_deterministic(self):
        z, labels = separable_set(seed=9)
        h1 = fit_probe(z, labels)
        h2 = fit_probe(z, labels)
        assert torch.equal(h1.weight, h2.weight)
        assert torch.equal(h1.bias, h2.bias)


class TestHeadConventions:
    def test_single_logit_head(self):
        head = ProbeHead(3, classes=1)
        z = torch.randn(7, 3)
        prob = head.positive_probability(z)
        assert prob.shape == (7,)
        assert torch.allclose(prob, torch.full((7,), 0.5))  # zero weights

    def test_two_logit_and_single_logit_decisions_agree(self):
        r = np.random.default_rng(11)
        w = r.normal(size=3)
        single = make_head(w.reshape(1, 3))
        two = make_head(np.stack([-w / 2, w / 2]))
        z = r.normal(size=(200, 3))
        with torch.no_grad():
            p1 = single.positive_probability(torch.as_tensor(z, dtype=torch.float64)).numpy()
        logits2 = probe_predict(two, z).numpy()
        assert np.array_equal(p1 >= 0.5, logits2.argmax(axis=1) == 1)

    def test_invalid_class_count(self):
        with pytest.raises(ValidationError):
            ProbeHead(4, classes=3)
