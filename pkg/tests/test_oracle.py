"""The dense reference path itself, pinned by hand arithmetic.

The packed engine is judged against the oracle, so the oracle gets its own
independent checks: tiny cases recomputed with bare Python loops and
identities that tie it back to the bit-level primitives.
"""

import numpy as np
import pytest

from ubnn import oracle
from ubnn.bitpack import BitStream, pack, popcount_sum
from ubnn.layers import Direction, ThresholdSpec, fold_batchnorm_binary

rng = np.random.default_rng(0x0AC1E)


def random_pm1(*shape):
    return 2 * rng.integers(0, 2, shape) - 1


class TestConvReference:
    def test_all_plus_one(self):
        y = oracle.conv1d_reference(np.ones((10, 4)), np.ones((3, 5, 4)))
        assert y.shape == (6, 3)
        assert (y == 20).all()

    def test_identity_filter(self):
        x = random_pm1(12, 1)
        y = oracle.conv1d_reference(x, np.ones((1, 1, 1)))
        assert np.array_equal(y, x)

    def test_matches_popcount_identity(self):
        # 2 * popcount_sum - N must equal the dense accumulator.
        for _ in range(30):
            n = int(rng.integers(1, 100))
            xb = rng.integers(0, 2, n)
            wb = rng.integers(0, 2, n)
            y = oracle.conv1d_reference(
                (2 * xb - 1).reshape(1, n), (2 * wb - 1).reshape(1, 1, n)
            )
            p = popcount_sum(BitStream.from_bits(xb), BitStream.from_bits(wb))
            assert y[0, 0] == 2 * p - n

    def test_matches_bare_python_loops(self):
        x = rng.integers(-128, 128, (7, 3))
        w = random_pm1(2, 4, 3)
        y = oracle.conv1d_reference(x, w)
        for t in range(4):
            for m in range(2):
                acc = 0
                for k in range(4):
                    for c in range(3):
                        acc += int(w[m, k, c]) * int(x[t + k, c])
                assert y[t, m] == acc

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            oracle.conv1d_reference(np.ones((10, 3)), np.ones((1, 2, 4)))
        with pytest.raises(ValueError):
            oracle.conv1d_reference(np.ones((3, 4)), np.ones((1, 5, 4)))


class TestBatchnormSignReference:
    def test_identity_is_sign(self):
        y = np.array([[-3, 0, 5]])
        out = oracle.batchnorm_sign_reference(
            y, [0, 0, 0], [1, 1, 1], [1, 1, 1], [0, 0, 0]
        )
        assert out.tolist() == [[-1, 1, 1]]  # sign(0) = +1

    def test_negative_gamma_flips(self):
        y = np.array([[-3, 0, 5]])
        out = oracle.batchnorm_sign_reference(
            y, [0, 0, 0], [1, 1, 1], [-1, -1, -1], [0, 0, 0]
        )
        assert out.tolist() == [[1, 1, -1]]

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            oracle.batchnorm_sign_reference(
                np.zeros((1, 1)), [0], [0], [1], [0]
            )

    def test_agrees_with_folded_thresholds(self):
        # Exhaustive P sweep ties the float oracle to the integer folding.
        for _ in range(200):
            k, c_in = int(rng.integers(1, 8)), int(rng.integers(1, 16))
            n = k * c_in
            mu = float(rng.normal(0, n))
            sigma = float(rng.uniform(0.01, 10))
            gamma = float(rng.choice([-1, 1]) * rng.uniform(0.01, 10))
            beta = float(rng.normal(0, 2))
            spec = fold_batchnorm_binary(mu, sigma, gamma, beta, k, c_in)
            dots = np.arange(-n, n + 1, 2).reshape(-1, 1)
            want = oracle.batchnorm_sign_reference(
                dots, [mu], [sigma], [gamma], [beta]
            )
            got = [1 if spec.passes((d + n) // 2) else -1 for d in dots[:, 0]]
            assert want[:, 0].tolist() == got

    def test_matches_bare_python_scalar(self):
        y = rng.integers(-50, 51, (5, 2))
        mu, sigma = [0.7, -1.2], [2.5, 0.3]
        gamma, beta = [1.1, -0.4], [0.05, -0.6]
        out = oracle.batchnorm_sign_reference(y, mu, sigma, gamma, beta)
        for t in range(5):
            for m in range(2):
                bn = gamma[m] * (float(y[t, m]) - mu[m]) / sigma[m] + beta[m]
                assert out[t, m] == (1 if bn >= 0 else -1)


class TestThresholdSignReference:
    def test_binary_path_counts_agreements(self):
        # dot = 2, N = 4 gives P = 3; threshold 3 GEQ passes, 4 does not.
        y = np.array([[2, 2]])
        out = oracle.threshold_sign_reference(
            y,
            [ThresholdSpec(3, Direction.GEQ), ThresholdSpec(4, Direction.GEQ)],
            4,
        )
        assert out.tolist() == [[1, -1]]

    def test_raw_path_skips_mapping(self):
        y = np.array([[2, 2]])
        out = oracle.threshold_sign_reference(
            y,
            [ThresholdSpec(2, Direction.GEQ), ThresholdSpec(1, Direction.LEQ)],
            4,
            raw=True,
        )
        assert out.tolist() == [[1, -1]]


class TestMaxPoolReference:
    def test_example(self):
        x = np.array([[-1], [-1], [-1], [1]])
        assert oracle.maxpool_reference(x, 4, 4).tolist() == [[1]]

    def test_partial_window_dropped(self):
        x = random_pm1(7, 2)
        assert oracle.maxpool_reference(x, 3, 3).shape == (2, 2)

    def test_matches_bare_python(self):
        x = random_pm1(8, 3)
        out = oracle.maxpool_reference(x, 2, 2)
        for t in range(4):
            for c in range(3):
                assert out[t, c] == max(int(x[2 * t, c]), int(x[2 * t + 1, c]))

    def test_errors(self):
        with pytest.raises(ValueError):
            oracle.maxpool_reference(random_pm1(6, 1), 2, 3)
        with pytest.raises(ValueError):
            oracle.maxpool_reference(random_pm1(2, 1), 3, 3)


class TestFcAndPredict:
    def test_fc_reference_scalar_case(self):
        x = np.array([[1, -1, 1, 1]])
        w = np.array([[1, 1, 1, 1], [-1, 1, -1, -1]])
        scores = oracle.fc_reference(x, w, [0.5, 2.0], [1.0, -1.0])
        assert scores == [0.5 * 2 + 1.0, 2.0 * -4 - 1.0]

    def test_fc_size_mismatch(self):
        with pytest.raises(ValueError):
            oracle.fc_reference(np.ones((1, 3)), np.ones((2, 4)), [1, 1], [0, 0])

    def test_predict_ties_to_lowest(self):
        assert oracle.predict_reference([3.0, 3.0, 1.0]) == 0
        assert oracle.predict_reference([1, 3, 3]) == 1
        assert oracle.predict_reference([7]) == 0

    def test_predict_empty(self):
        with pytest.raises(ValueError):
            oracle.predict_reference([])

    def test_sign_plus(self):
        assert oracle.sign_plus(0.0) == 1
        assert oracle.sign_plus(-0.0) == 1
        assert oracle.sign_plus(1e-300) == 1
        assert oracle.sign_plus(-1e-300) == -1


class TestTensorBridges:
    def test_tensor_to_dense_round_trip(self):
        vals = random_pm1(6, 4)
        t = pack(vals.reshape(-1), (6, 4))
        assert np.array_equal(oracle.tensor_to_dense(t), vals)

    def test_weights_to_dense_order(self):
        # Filter bit (k, c) sits at index k * c_in + c.
        w = BitStream.from_bits([1, 0, 0, 1, 1, 0])
        dense = oracle.weights_to_dense([w], 3, 2)
        assert dense.tolist() == [[[1, -1], [-1, 1], [1, -1]]]
