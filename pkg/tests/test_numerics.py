import numpy as np
import pytest

from calibkit.numerics import Rng, as_matrix, derive_seed, matmul, rng_shuffle, softmax_rows


def triple_loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestSoftmax:
    def test_symmetric_row(self):
        out = softmax_rows(np.array([[0.0, 0.0]]))
        np.testing.assert_allclose(out, [[0.5, 0.5]], atol=1e-12)

    def test_constant_row_any_value(self):
        for c in (-7.0, 0.0, 3.5, 123.0):
            out = softmax_rows(np.array([[c, c, c]]))
            np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-12)

    def test_extreme_logits_no_overflow(self):
        out = softmax_rows(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = Rng(11)
        z = rng.gaussian_array((40, 7)) * 10.0
        out = softmax_rows(z)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out >= 0.0)

    def test_shift_invariance(self):
        rng = Rng(12)
        z = rng.gaussian_array((20, 5)) * 3.0
        for c in (-50.0, 0.25, 17.0):
            np.testing.assert_allclose(
                softmax_rows(z + c), softmax_rows(z), atol=1e-12
            )

    def test_nonfinite_input_rejected(self):
        with pytest.raises(ValueError):
            softmax_rows(np.array([[np.inf, 0.0]]))
        with pytest.raises(ValueError):
            softmax_rows(np.array([[np.nan, 1.0]]))


class TestMatmul:
    def test_identity(self):
        rng = Rng(1)
        a = rng.gaussian_array((4, 4))
        np.testing.assert_array_equal(matmul(np.eye(4), a), a)

    def test_hand_product(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.0], [1.0]])
        np.testing.assert_array_equal(matmul(a, b), [[2.0], [4.0]])

    def test_annihilator(self):
        rng = Rng(2)
        a = rng.gaussian_array((3, 5))
        np.testing.assert_array_equal(matmul(a, np.zeros((5, 2))), np.zeros((3, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_bitwise_equal_to_triple_loop(self):
        rng = Rng(3)
        for _ in range(20):
            n = 1 + rng.next_below(6)
            k = 1 + rng.next_below(6)
            m = 1 + rng.next_below(6)
            a = rng.gaussian_array((n, k)) * 3.0
            b = rng.gaussian_array((k, m)) * 3.0
            np.testing.assert_array_equal(matmul(a, b), triple_loop_matmul(a, b))


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a, b = Rng(987654321), Rng(987654321)
        draws_a = [a.next_uniform() for _ in range(10_000)]
        draws_b = [b.next_uniform() for _ in range(10_000)]
        assert draws_a == draws_b

    def test_different_seeds_differ(self):
        assert [Rng(1).next_uniform() for _ in range(4)] != [
            Rng(2).next_uniform() for _ in range(4)
        ]

    def test_uniform_range(self):
        rng = Rng(5)
        for _ in range(1000):
            u = rng.next_uniform()
            assert 0.0 <= u < 1.0

    def test_derive_seed_tags_are_independent(self):
        assert derive_seed(7, "split") != derive_seed(7, "init")
        assert derive_seed(7, "split") == derive_seed(7, "split")

    def test_shuffle_edge_cases(self):
        assert rng_shuffle(Rng(0), 0).tolist() == []
        assert rng_shuffle(Rng(0), 1).tolist() == [0]

    def test_shuffle_deterministic(self):
        assert rng_shuffle(Rng(42), 5).tolist() == rng_shuffle(Rng(42), 5).tolist()

    def test_shuffle_is_permutation(self):
        rng = Rng(9)
        for n in (2, 3, 17, 100):
            perm = rng_shuffle(rng, n)
            assert sorted(perm.tolist()) == list(range(n))


class TestAsMatrix:
    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            as_matrix(np.zeros(3))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            as_matrix(np.array([[1.0, np.nan]]))
