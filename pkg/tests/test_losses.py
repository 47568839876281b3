import math

import numpy as np
import pytest

from calibkit.losses import (
    Batch,
    LossSpec,
    brier_loss,
    combined_loss,
    dca_loss,
    focal_loss,
    label_smoothing_loss,
    mdca_loss,
    nll_loss,
)
from calibkit.numerics import Rng, softmax_rows

import oracles

LN2 = math.log(2.0)

MDCA_BATCH = Batch(np.log(np.array([[0.7, 0.3], [0.4, 0.6]])), np.array([0, 1]))


def random_batch(rng: Rng, max_n: int = 32, max_k: int = 10) -> Batch:
    n = 1 + rng.next_below(max_n)
    k = 2 + rng.next_below(max_k - 1)
    logits = rng.gaussian_array((n, k)) * 2.0
    labels = np.array([rng.next_below(k) for _ in range(n)], dtype=np.int64)
    return Batch(logits, labels)


def away_from_kinks(batch: Batch, margin: float = 1e-4) -> bool:
    probs = softmax_rows(batch.logits)
    onehot = np.zeros_like(probs)
    onehot[np.arange(batch.n), batch.labels] = 1.0
    mdca_gaps = np.abs(probs.mean(axis=0) - onehot.mean(axis=0))
    preds = np.argmax(probs, axis=1)
    conf = probs[np.arange(batch.n), preds]
    dca_gap = abs(conf.mean() - np.mean(preds == batch.labels))
    sorted_logits = np.sort(batch.logits, axis=1)
    top_gap = np.min(sorted_logits[:, -1] - sorted_logits[:, -2])
    return bool(np.min(mdca_gaps) > margin and dca_gap > margin and top_gap > 1e-3)


class TestNll:
    def test_confident_correct_goes_to_zero(self):
        logits = np.array([[30.0, 0.0, 0.0]])
        assert nll_loss(Batch(logits, np.array([0]))).value < 1e-12

    def test_uniform_two_class(self):
        out = nll_loss(Batch(np.array([[0.0, 0.0]]), np.array([0])))
        assert abs(out.value - LN2) < 1e-12
        np.testing.assert_allclose(out.grad_logits, [[-0.5, 0.5]], atol=1e-12)

    def test_gradient_matches_fd(self):
        rng = Rng(1)
        for _ in range(5):
            batch = random_batch(rng)
            fd = oracles.fd_gradient(lambda z: nll_loss(Batch(z, batch.labels)).value, batch.logits)
            assert oracles.relative_error(nll_loss(batch).grad_logits, fd) < 1e-5


class TestLabelSmoothing:
    def test_alpha_zero_reduces_to_nll(self):
        rng = Rng(2)
        batch = random_batch(rng)
        ls = label_smoothing_loss(batch, 0.0)
        nll = nll_loss(batch)
        assert abs(ls.value - nll.value) < 1e-12
        np.testing.assert_allclose(ls.grad_logits, nll.grad_logits, atol=1e-12)

    def test_uniform_two_class(self):
        out = label_smoothing_loss(Batch(np.array([[0.0, 0.0]]), np.array([0])), 0.1)
        # uniform probabilities make the value independent of alpha
        assert abs(out.value - LN2) < 1e-12
        np.testing.assert_allclose(out.grad_logits, [[0.5 - 0.9, 0.5 - 0.1]], atol=1e-12)

    def test_alpha_one_rejected(self):
        with pytest.raises(ValueError):
            label_smoothing_loss(Batch(np.array([[0.0, 0.0]]), np.array([0])), 1.0)

    def test_gradient_matches_fd(self):
        rng = Rng(3)
        for _ in range(5):
            batch = random_batch(rng)
            fd = oracles.fd_gradient(
                lambda z: label_smoothing_loss(Batch(z, batch.labels), 0.1).value,
                batch.logits,
            )
            out = label_smoothing_loss(batch, 0.1)
            assert oracles.relative_error(out.grad_logits, fd) < 1e-5


class TestFocal:
    def test_gamma_zero_reduces_to_nll(self):
        rng = Rng(4)
        batch = random_batch(rng)
        fl = focal_loss(batch, 0.0)
        nll = nll_loss(batch)
        assert abs(fl.value - nll.value) < 1e-12
        np.testing.assert_allclose(fl.grad_logits, nll.grad_logits, atol=1e-12)

    def test_half_confidence_gamma_two(self):
        out = focal_loss(Batch(np.array([[0.0, 0.0]]), np.array([0])), 2.0)
        assert abs(out.value - 0.25 * LN2) < 1e-12

    def test_negative_gamma_rejected(self):
        with pytest.raises(ValueError):
            focal_loss(Batch(np.array([[0.0, 0.0]]), np.array([0])), -1.0)

    def test_gradient_matches_fd(self):
        rng = Rng(5)
        for gamma in (1.0, 2.0, 3.0):
            for _ in range(4):
                batch = random_batch(rng)
                fd = oracles.fd_gradient(
                    lambda z: focal_loss(Batch(z, batch.labels), gamma).value,
                    batch.logits,
                )
                out = focal_loss(batch, gamma)
                assert oracles.relative_error(out.grad_logits, fd) < 1e-5

    def test_saturated_probability_stays_finite(self):
        out = focal_loss(Batch(np.array([[40.0, -40.0]]), np.array([0])), 0.5)
        assert np.all(np.isfinite(out.grad_logits)) and math.isfinite(out.value)


class TestBrier:
    def test_one_hot_correct_is_zero(self):
        out = brier_loss(Batch(np.array([[40.0, -40.0]]), np.array([0])))
        assert out.value < 1e-12

    def test_uniform_two_class(self):
        out = brier_loss(Batch(np.array([[0.0, 0.0]]), np.array([1])))
        assert abs(out.value - 0.5) < 1e-12

    def test_gradient_matches_fd(self):
        rng = Rng(6)
        for _ in range(5):
            batch = random_batch(rng)
            fd = oracles.fd_gradient(lambda z: brier_loss(Batch(z, batch.labels)).value, batch.logits)
            assert oracles.relative_error(brier_loss(batch).grad_logits, fd) < 1e-5


class TestMdca:
    def test_hand_value(self):
        assert abs(mdca_loss(MDCA_BATCH).value - 0.05) < 1e-12

    def test_zero_when_confidence_matches_frequency(self):
        batch = Batch(np.log(np.array([[0.7, 0.3], [0.3, 0.7]])), np.array([0, 1]))
        assert mdca_loss(batch).value < 1e-12

    def test_uniform_balanced_is_zero(self):
        batch = Batch(np.zeros((4, 2)), np.array([0, 1, 0, 1]))
        assert mdca_loss(batch).value < 1e-12

    def test_differs_from_mean_l1(self):
        probs = np.array([[0.7, 0.3], [0.3, 0.7]])
        batch = Batch(np.log(probs), np.array([0, 1]))
        onehot = np.eye(2)[batch.labels]
        mean_l1 = np.abs(probs - onehot).mean()
        assert mdca_loss(batch).value < 1e-12
        assert mean_l1 > 0.1

    def test_value_in_unit_interval(self):
        rng = Rng(7)
        for _ in range(20):
            batch = random_batch(rng)
            assert 0.0 <= mdca_loss(batch).value <= 1.0

    def test_permutation_invariance(self):
        rng = Rng(8)
        batch = random_batch(rng, max_n=20)
        perm = np.argsort(rng.uniform_array((batch.n,)))
        shuffled = Batch(batch.logits[perm], batch.labels[perm])
        assert abs(mdca_loss(batch).value - mdca_loss(shuffled).value) < 1e-12

    def test_gradient_matches_fd(self):
        rng = Rng(9)
        checked = 0
        while checked < 5:
            batch = random_batch(rng)
            if not away_from_kinks(batch):
                continue
            fd = oracles.fd_gradient(lambda z: mdca_loss(Batch(z, batch.labels)).value, batch.logits)
            assert oracles.relative_error(mdca_loss(batch).grad_logits, fd) < 1e-4
            checked += 1


class TestDca:
    def test_zero_when_confidence_equals_accuracy(self):
        batch = Batch(np.log(np.array([[0.75, 0.25], [0.75, 0.25]])), np.array([0, 1]))
        # mean top confidence 0.75 vs accuracy 0.5 -> 0.25
        assert abs(dca_loss(batch).value - 0.25) < 1e-12

    def test_single_correct_sample(self):
        batch = Batch(np.log(np.array([[0.8, 0.2]])), np.array([0]))
        assert abs(dca_loss(batch).value - 0.2) < 1e-12

    def test_permutation_invariance(self):
        rng = Rng(10)
        batch = random_batch(rng, max_n=24)
        perm = np.argsort(rng.uniform_array((batch.n,)))
        shuffled = Batch(batch.logits[perm], batch.labels[perm])
        assert abs(dca_loss(batch).value - dca_loss(shuffled).value) < 1e-12

    def test_gradient_matches_fd(self):
        rng = Rng(11)
        checked = 0
        while checked < 5:
            batch = random_batch(rng)
            if not away_from_kinks(batch):
                continue
            fd = oracles.fd_gradient(lambda z: dca_loss(Batch(z, batch.labels)).value, batch.logits)
            assert oracles.relative_error(dca_loss(batch).grad_logits, fd) < 1e-4
            checked += 1


class TestCombined:
    def test_beta_zero_is_bare_loss_exactly(self):
        rng = Rng(12)
        batch = random_batch(rng)
        spec = LossSpec(classification="fl", gamma=2.0, auxiliary="mdca", beta=0.0)
        out = combined_loss(batch, spec)
        bare = focal_loss(batch, 2.0)
        assert out.value == bare.value
        np.testing.assert_array_equal(out.grad_logits, bare.grad_logits)

    def test_no_auxiliary_is_bare_loss_exactly(self):
        rng = Rng(13)
        batch = random_batch(rng)
        out = combined_loss(batch, LossSpec(classification="nll", auxiliary="none", beta=3.0))
        bare = nll_loss(batch)
        assert out.value == bare.value
        np.testing.assert_array_equal(out.grad_logits, bare.grad_logits)

    def test_two_sample_focal_plus_mdca(self):
        spec = LossSpec(classification="fl", gamma=1.0, auxiliary="mdca", beta=1.0)
        expected = focal_loss(MDCA_BATCH, 1.0).value + mdca_loss(MDCA_BATCH).value
        assert abs(combined_loss(MDCA_BATCH, spec).value - expected) < 1e-15

    def test_gradient_matches_fd(self):
        rng = Rng(14)
        for beta in (0.5, 1.0, 5.0):
            checked = 0
            while checked < 3:
                batch = random_batch(rng)
                if not away_from_kinks(batch):
                    continue
                spec = LossSpec(classification="nll", auxiliary="mdca", beta=beta)
                fd = oracles.fd_gradient(
                    lambda z: combined_loss(Batch(z, batch.labels), spec).value,
                    batch.logits,
                )
                out = combined_loss(batch, spec)
                assert oracles.relative_error(out.grad_logits, fd) < 1e-4
                checked += 1


class TestSpecValidation:
    def test_bad_names(self):
        with pytest.raises(ValueError):
            LossSpec(classification="hinge")
        with pytest.raises(ValueError):
            LossSpec(auxiliary="mmce")

    def test_bad_hyperparameters(self):
        with pytest.raises(ValueError):
            LossSpec(alpha=1.0)
        with pytest.raises(ValueError):
            LossSpec(gamma=-0.1)
        with pytest.raises(ValueError):
            LossSpec(beta=-1.0)


class TestGeneralProperties:
    def test_all_losses_nonnegative_and_finite(self):
        rng = Rng(15)
        for _ in range(10):
            batch = random_batch(rng)
            for out in (
                nll_loss(batch),
                label_smoothing_loss(batch, 0.1),
                focal_loss(batch, 2.0),
                brier_loss(batch),
                mdca_loss(batch),
                dca_loss(batch),
            ):
                assert out.value >= 0.0 and math.isfinite(out.value)
                assert np.all(np.isfinite(out.grad_logits))
                assert out.grad_logits.shape == batch.logits.shape
