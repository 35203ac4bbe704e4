import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from conftest import golden_image, tiny_net

from idanon.cam import grad_cam, heatmap, neuron_importance, normalized_for_display, to_pgm, weighted_map
from idanon.classifier import MiniNet, forward, head_logits
from idanon.errors import ShapeError


def finite_difference_alpha(net, a, c, h=1e-3):
    """alpha_j as the spatial mean of central-difference gradients."""
    a = np.asarray(a, dtype=np.float64)
    g = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        g[idx] = (head_logits(net, ap)[c] - head_logits(net, am)[c]) / (2 * h)
    return g.mean(axis=(1, 2))


def test_alpha_hand_example():
    net = tiny_net([[1.0, -2.0]])
    a = np.random.default_rng(0).normal(size=(2, 2, 2))
    np.testing.assert_allclose(neuron_importance(net, a, 0), [0.25, -0.5], rtol=1e-7)
    np.testing.assert_allclose(finite_difference_alpha(net, a, 0), [0.25, -0.5], rtol=1e-6)


def test_alpha_zero_weights_and_linearity():
    net = tiny_net([[0.0, 0.0], [0.3, -0.7]])
    a = np.ones((2, 2, 2))
    np.testing.assert_array_equal(neuron_importance(net, a, 0), 0)
    doubled = tiny_net([[0.0, 0.0], [0.6, -1.4]])
    np.testing.assert_allclose(neuron_importance(doubled, a, 1), 2 * neuron_importance(net, a, 1), rtol=1e-7)


def test_heatmap_hand_example():
    a = np.ones((2, 2, 2))
    np.testing.assert_allclose(weighted_map(a, [0.25, -0.5]), -0.25)
    np.testing.assert_array_equal(heatmap(a, [0.25, -0.5]), 0)


def test_heatmap_zero_alpha_and_identity_case():
    a = np.abs(np.random.default_rng(1).normal(size=(1, 3, 3)))
    np.testing.assert_array_equal(heatmap(np.ones((2, 3, 3)), [0, 0]), 0)
    np.testing.assert_allclose(heatmap(a, [1.0]), a[0])


def test_heatmap_length_mismatch():
    with pytest.raises(ShapeError):
        heatmap(np.ones((2, 2, 2)), [1.0, 2.0, 3.0])


def test_cam_result_recomputes_exactly():
    net = MiniNet.random(4)
    a, p = forward(net, golden_image(4))
    res = grad_cam(net, a, p.ranking[0])
    assert np.all(res.heatmap >= 0)
    np.testing.assert_array_equal(heatmap(a, res.alpha), res.heatmap)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_completeness_on_linear_head(seed):
    net = MiniNet.random(seed)
    a, p = forward(net, np.random.default_rng(seed).uniform(size=(3, 32, 32)))
    z = a.shape[1] * a.shape[2]
    for c in range(net.n_classes):
        alpha = neuron_importance(net, a, c)
        assert abs(z * weighted_map(a, alpha).mean() - p.logits[c]) < 1e-4


def test_display_normalisation_and_pgm():
    h = np.array([[0.0, 1.0], [2.0, 4.0]])
    np.testing.assert_allclose(normalized_for_display(h), h / 4)
    np.testing.assert_array_equal(normalized_for_display(np.zeros((2, 2))), 0)
    pgm = to_pgm(h)
    assert pgm.startswith(b"P5\n2 2\n255\n")
    assert list(pgm[-4:]) == [0, 64, 128, 255]
