"""Layer-op unit tests: forward semantics, shapes, errors, Adam."""

import math

import numpy as np
import pytest

from replaynoise import nn


class TestConv2d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((6, 7, 3))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0] = np.eye(3)
        y = nn.conv2d(x, w, np.zeros(3))
        assert np.allclose(y, x, atol=1e-12)

    def test_all_ones_kernel_counts_padded_neighbors(self):
        x = np.ones((5, 5, 1))
        w = np.ones((3, 3, 1, 1))
        y = nn.conv2d(x, w, np.zeros(1), padding="same")[:, :, 0]
        assert y[2, 2] == 9.0
        assert y[0, 0] == 4.0
        assert y[0, 2] == 6.0

    def test_same_padding_preserves_size_and_valid_shrinks(self):
        x = np.zeros((10, 9, 2))
        w = np.zeros((3, 3, 2, 4))
        assert nn.conv2d(x, w, np.zeros(4), padding="same").shape == (10, 9, 4)
        assert nn.conv2d(x, w, np.zeros(4), padding="valid").shape == (8, 7, 4)

    def test_strided_same_padding_gives_ceil(self):
        x = np.zeros((7, 7, 1))
        w = np.zeros((3, 3, 1, 2))
        assert nn.conv2d(x, w, np.zeros(2), stride=(2, 2), padding="same").shape == (4, 4, 2)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 6, 5, 2))
        w = rng.standard_normal((3, 3, 2, 4))
        b = rng.standard_normal(4)
        batched = nn.conv2d(x, w, b)
        for i in range(3):
            assert np.allclose(batched[i], nn.conv2d(x[i], w, b), atol=1e-12)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channels"):
            nn.conv2d(np.zeros((4, 4, 2)), np.zeros((3, 3, 3, 1)), np.zeros(1))

    def test_kernel_larger_than_input_rejected(self):
        with pytest.raises(ValueError):
            nn.conv2d(np.zeros((2, 2, 1)), np.zeros((5, 5, 1, 1)), np.zeros(1), padding="valid")


class TestMaxPool:
    def test_single_window(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        y = nn.maxpool2d(x, (2, 2), (2, 2))
        assert y.shape == (1, 1, 1)
        assert y[0, 0, 0] == 4.0

    def test_published_pooling_shape(self):
        x = np.zeros((400, 257, 16), dtype=np.float32)
        assert nn.maxpool2d(x, (2, 2), (2, 2)).shape == (200, 128, 16)

    def test_floor_mode_drops_trailing(self):
        x = np.zeros((5, 5, 1))
        assert nn.maxpool2d(x, (2, 2), (2, 2)).shape == (2, 2, 1)

    def test_window_too_large_rejected(self):
        with pytest.raises(ValueError, match="window"):
            nn.maxpool2d(np.zeros((1, 4, 1)), (2, 2), (2, 2))

    def test_backward_routes_to_first_argmax_on_ties(self):
        x = np.array([[2.0, 2.0], [1.0, 2.0]])[:, :, None]
        dout = np.array([[[5.0]]])
        dx = nn.maxpool2d_backward(dout, x, (2, 2), (2, 2))
        assert dx[0, 0, 0] == 5.0
        assert np.sum(dx) == 5.0


class TestMfm:
    def test_halves_pairwise_max(self):
        x = np.array([[1.0, 5.0]])
        assert nn.mfm_halves(x).tolist() == [[5.0]]

    def test_halves_symmetric_under_block_swap(self):
        x = np.random.default_rng(2).standard_normal((4, 5, 8))
        swapped = np.concatenate([x[..., 4:], x[..., :4]], axis=-1)
        assert np.array_equal(nn.mfm_halves(x), nn.mfm_halves(swapped))

    def test_halves_published_shape(self):
        x = np.zeros((400, 257, 32), dtype=np.float32)
        assert nn.mfm_halves(x).shape == (400, 257, 16)

    def test_halves_odd_channels_rejected(self):
        with pytest.raises(ValueError, match="even"):
            nn.mfm_halves(np.zeros((2, 2, 3)))

    def test_halves_never_invents_values(self):
        x = np.random.default_rng(3).standard_normal((6, 4))
        y = nn.mfm_halves(x)
        assert np.all(y <= np.maximum(x[:, :2], x[:, 2:]) + 1e-15)
        for i in range(6):
            for j in range(2):
                assert y[i, j] in (x[i, j], x[i, j + 2])

    def test_thirds_max_and_median(self):
        x = np.array([[1.0, 7.0, 4.0]])
        assert nn.mfm_thirds(x).tolist() == [[7.0, 4.0]]

    def test_thirds_published_shape(self):
        x = np.zeros((100, 64, 48), dtype=np.float32)
        assert nn.mfm_thirds(x).shape == (100, 64, 32)

    def test_thirds_invariant_under_group_permutation(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 4, 9))
        base = nn.mfm_thirds(x)
        groups = [x[..., :3], x[..., 3:6], x[..., 6:]]
        for perm in ((0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
            permuted = np.concatenate([groups[i] for i in perm], axis=-1)
            assert np.array_equal(nn.mfm_thirds(permuted), base)

    def test_thirds_bad_channel_count_rejected(self):
        with pytest.raises(ValueError, match="divisible by 3"):
            nn.mfm_thirds(np.zeros((2, 4)))


class TestFullyConnected:
    def test_identity(self):
        x = np.array([3.0, -1.0, 2.0])
        y = nn.fully_connected(x, np.eye(3), np.zeros(3))
        assert np.allclose(y, x, atol=1e-15)

    def test_hand_computed(self):
        x = np.array([1.0, 2.0])
        w = np.array([[1.0, 0.0], [0.0, 2.0]])
        b = np.array([0.0, 1.0])
        assert nn.fully_connected(x, w, b).tolist() == [1.0, 5.0]

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dim"):
            nn.fully_connected(np.zeros(3), np.zeros((4, 2)), np.zeros(2))


class TestDropout:
    def test_inference_is_bitwise_identity(self):
        x = np.random.default_rng(5).standard_normal((100, 3))
        out = nn.dropout(x, 0.7, training=False)
        assert np.array_equal(out, x)

    def test_zero_rate_is_identity(self):
        x = np.random.default_rng(6).standard_normal(50)
        out = nn.dropout(x, 0.0, training=True, rng=np.random.default_rng(0))
        assert np.array_equal(out, x)

    def test_survivor_fraction_and_mean(self):
        rng = np.random.default_rng(7)
        x = np.full(10 ** 6, 2.0)
        out = nn.dropout(x, 0.7, training=True, rng=rng)
        survivors = np.count_nonzero(out) / x.size
        assert abs(survivors - 0.3) < 0.01
        assert abs(out.mean() - x.mean()) / abs(x.mean()) < 0.02

    def test_rate_out_of_range(self):
        with pytest.raises(ValueError, match="rate"):
            nn.dropout(np.zeros(3), 1.0, training=True, rng=np.random.default_rng(0))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, grad = nn.softmax_cross_entropy(np.zeros(4), 2)
        assert abs(loss - math.log(4)) < 1e-12
        assert np.allclose(grad, [0.25, 0.25, -0.75, 0.25], atol=1e-12)

    def test_extreme_logits_stay_finite(self):
        loss, grad = nn.softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
        assert loss < 1e-6
        assert np.isfinite(grad).all()

    def test_target_out_of_range(self):
        with pytest.raises(ValueError, match="target"):
            nn.softmax_cross_entropy(np.zeros(3), 3)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(8)
        logits = rng.standard_normal((5, 7))
        targets = rng.integers(0, 7, size=5)
        losses, grads = nn.softmax_cross_entropy(logits, targets)
        for i in range(5):
            loss_i, grad_i = nn.softmax_cross_entropy(logits[i], int(targets[i]))
            assert abs(losses[i] - loss_i) < 1e-12
            assert np.allclose(grads[i], grad_i, atol=1e-12)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"p": np.array([1.5, -2.0])}
        state = nn.AdamState()
        nn.adam_step(params, {"p": np.zeros(2)}, state)
        assert np.array_equal(params["p"], [1.5, -2.0])
        assert state.step_count == 1

    def test_first_step_matches_hand_formula(self):
        params = {"p": np.array([1.0])}
        state = nn.AdamState()
        nn.adam_step(params, {"p": np.array([1.0])}, state)
        # m_hat = v_hat = 1 after bias correction, so step = lr / (1 + eps)
        expected = 1.0 - 1e-3 / (1.0 + 1e-8)
        assert abs(params["p"][0] - expected) < 1e-12
        assert abs(params["p"][0] - (1.0 - 1e-3)) < 1e-6

    def test_converges_on_quadratic(self):
        params = {"p": np.array([0.0])}
        state = nn.AdamState()
        for _ in range(5000):
            grad = {"p": 2.0 * (params["p"] - 3.0)}
            nn.adam_step(params, grad, state)
        assert abs(params["p"][0] - 3.0) < 0.01

    def test_bitwise_reproducible(self):
        def run():
            rng = np.random.default_rng(9)
            params = {"w": rng.standard_normal(10)}
            state = nn.AdamState()
            for _ in range(50):
                nn.adam_step(params, {"w": rng.standard_normal(10)}, state)
            return params["w"]
        assert np.array_equal(run(), run())

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            nn.adam_step({"p": np.zeros(3)}, {"p": np.zeros(2)}, nn.AdamState())


class TestFiniteInvariant:
    def test_ops_emit_finite_values(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((8, 9, 4)) * 100
        w = rng.standard_normal((3, 3, 4, 6))
        nn.assert_finite(nn.conv2d(x, w, np.zeros(6)), "conv")
        nn.assert_finite(nn.maxpool2d(x, (2, 2), (2, 2)), "pool")
        nn.assert_finite(nn.mfm_halves(x), "mfm2")
        nn.assert_finite(nn.softmax_cross_entropy(np.array([800.0, -800.0, 0.0]), 1)[1], "ce")
        with pytest.raises(FloatingPointError):
            nn.assert_finite(np.array([1.0, np.nan]), "bad")
