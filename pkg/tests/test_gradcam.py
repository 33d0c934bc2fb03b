import numpy as np
import pytest

from mushroomnet.errors import ConfigError, ShapeError
from mushroomnet.gradcam import grad_cam, grad_cam_batch
from mushroomnet.tensor import Tensor


def summing_net(sign=1.0, scale=1.0):
    """The input is the activation map; logit 0 = sign * scale * sum(A)"""
    def net(x):
        tap = Tensor(x.data, requires_grad=True)
        logits = tap.sum(axis=(2, 3)) * (sign * scale)
        return logits, tap
    return net


def linear_net(weights):
    """logits[c] = sum over k, i, j of weights[c, k, i, j] * A[k, i, j]"""
    def net(x):
        tap = Tensor(x.data, requires_grad=True)
        k, channels, h, w = weights.shape
        logits = (tap.reshape(1, 1, channels, h, w) * Tensor(weights[None])).sum(axis=(2, 3, 4))
        return logits, tap
    return net


class TestToyNetworks:
    def test_single_channel_identity(self, rng):
        activation = rng.standard_normal((1, 5, 7))
        heatmap = grad_cam(summing_net(), activation, 0)
        expected = np.maximum(activation[0], 0) / np.maximum(activation[0], 0).max()
        np.testing.assert_allclose(heatmap.values, expected, atol=1e-9)
        assert heatmap.upsampled.shape == (5, 7)
        assert heatmap.target_class == 0

    def test_negative_logit_gives_empty_map(self, rng):
        activation = rng.uniform(0.1, 1.0, size=(1, 4, 4))
        heatmap = grad_cam(summing_net(sign=-1.0), activation, 0)
        assert np.all(heatmap.values == 0)
        assert np.all(heatmap.upsampled == 0)

    def test_two_channel_oracle(self, rng):
        weights = rng.standard_normal((3, 2, 4, 6))
        activation = rng.standard_normal((2, 4, 6))
        for c in range(3):
            alphas = weights[c].mean(axis=(1, 2))
            raw = np.maximum(alphas[0] * activation[0] + alphas[1] * activation[1], 0)
            expected = raw / raw.max() if raw.max() > 0 else raw
            np.testing.assert_allclose(grad_cam(linear_net(weights), activation, c).values, expected, atol=1e-9)

    def test_scaling_the_logit_changes_nothing(self, rng):
        activation = rng.standard_normal((1, 6, 6))
        base = grad_cam(summing_net(), activation, 0)
        scaled = grad_cam(summing_net(scale=3.5), activation, 0)
        np.testing.assert_allclose(scaled.values, base.values, atol=1e-12)

    def test_network_without_tap(self):
        with pytest.raises(ConfigError):
            grad_cam(lambda x: (x.sum(axis=(2, 3)), None), np.ones((1, 2, 2)), 0)

    def test_class_out_of_range(self):
        with pytest.raises(ConfigError):
            grad_cam(summing_net(), np.ones((1, 3, 3)), 1)

    def test_batch_input_rejected(self):
        with pytest.raises(ShapeError):
            grad_cam(summing_net(), np.ones((2, 1, 3, 3)), 0)


class TestMushroomNet:
    def test_heatmap_covers_the_input(self, tiny_model, batch):
        heatmap = grad_cam(tiny_model, batch[0], 1)
        assert heatmap.values.shape == (1, 1)
        assert heatmap.upsampled.shape == (32, 32)
        assert np.all(heatmap.upsampled >= 0) and heatmap.upsampled.max() <= 1.0

    def test_parameter_gradients_are_cleared(self, tiny_model, batch):
        grad_cam(tiny_model, batch[0], 0)
        assert all(tensor.grad is None for _, tensor in tiny_model.params.items())

    def test_batch_helper(self, tiny_model, batch):
        maps = grad_cam_batch(tiny_model, batch, [0, 2])
        assert [m.target_class for m in maps] == [0, 2]

    def test_overlay(self, tiny_model, batch):
        heatmap = grad_cam(tiny_model, batch[0], 0)
        image = (batch[0].transpose(1, 2, 0) * 255).astype(np.uint8)
        out = heatmap.overlay(image, alpha=0.0)
        np.testing.assert_array_equal(out, image)
