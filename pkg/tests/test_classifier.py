import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from conftest import golden_image, tiny_net

from idanon.classifier import (
    MiniNet,
    activations,
    conv2d,
    forward,
    forward_from_activation,
    grad_wrt_activation,
    head_logits,
    identity_feature,
    softmax,
)
from idanon.errors import ShapeError

GOLDEN = Path(__file__).parent / "golden" / "logits_seed42.json"


def conv2d_loops(x, w, b, stride=2, pad=1):
    """Direct nested-loop convolution, the oracle for the im2col version."""
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


def test_default_dimensions():
    net = MiniNet.random(0)
    a, p = forward(net, np.zeros((3, 32, 32)))
    assert a.shape == (8, 8, 8)
    assert p.logits.shape == (16,)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 9, 7))
    w, b = rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    np.testing.assert_allclose(conv2d(x, w, b), conv2d_loops(x, w, b), atol=1e-10)


def test_zero_image_zero_bias_gives_uniform_softmax():
    net = MiniNet.random(3)
    net = MiniNet(net.conv1_w, np.zeros_like(net.conv1_b), net.conv2_w, np.zeros_like(net.conv2_b),
                  net.head_w, net.head_b)
    _, p = forward(net, np.zeros((3, 32, 32)))
    assert np.all(p.logits == p.logits[0])
    np.testing.assert_allclose(p.softmax, 1 / 16)


def test_golden_logits_seed42():
    ref = json.loads(GOLDEN.read_text())
    _, p = forward(MiniNet.random(ref["net_seed"]), golden_image(ref["image_seed"]))
    np.testing.assert_allclose(p.logits, ref["logits"], rtol=0, atol=1e-7)


def test_doubling_head_doubles_logits():
    net = MiniNet.random(5)
    img = golden_image(5)
    _, p1 = forward(net, img)
    _, p2 = forward(net.with_head(head_w=2 * net.head_w), img)
    np.testing.assert_allclose(p2.logits, 2 * p1.logits, rtol=1e-6)


def test_forward_from_activation_reproduces_forward():
    net = MiniNet.random(7)
    a, p = forward(net, golden_image(7))
    p2, f = forward_from_activation(net, a)
    np.testing.assert_array_equal(p2.logits, p.logits)
    np.testing.assert_array_equal(f, identity_feature(a))


def test_zero_activation_gives_zero_logits():
    net = MiniNet.random(0)
    p, f = forward_from_activation(net, np.zeros(net.activation_shape))
    np.testing.assert_array_equal(p.logits, 0)
    np.testing.assert_allclose(p.softmax, 1 / net.n_classes)
    np.testing.assert_array_equal(f, 0)


def test_ones_activation_with_ones_row_gives_j():
    net = tiny_net(np.ones((1, 3)))
    p, _ = forward_from_activation(net, np.ones(net.activation_shape))
    assert p.logits[0] == 3.0


def test_gradient_hand_example():
    net = tiny_net([[1.0, -2.0]])
    assert net.activation_shape == (2, 2, 2)  # Z = 4
    g = grad_wrt_activation(net, np.zeros(net.activation_shape), 0)
    np.testing.assert_array_equal(g[0], 0.25)
    np.testing.assert_array_equal(g[1], -0.5)


def test_gradient_zero_row_and_independence_of_a():
    net = tiny_net([[0.0, 0.0], [1.0, 2.0]])
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(grad_wrt_activation(net, rng.normal(size=(2, 2, 2)), 0), 0)
    g1 = grad_wrt_activation(net, rng.normal(size=(2, 2, 2)), 1)
    g2 = grad_wrt_activation(net, rng.normal(size=(2, 2, 2)), 1)
    np.testing.assert_array_equal(g1, g2)


def test_gradient_bad_class():
    net = MiniNet.random(0)
    with pytest.raises(IndexError):
        grad_wrt_activation(net, np.zeros(net.activation_shape), 16)


def test_shape_errors():
    net = MiniNet.random(0)
    with pytest.raises(ShapeError):
        forward(net, np.zeros((3, 16, 16)))
    with pytest.raises(ShapeError):
        forward_from_activation(net, np.zeros((8, 4, 4)))


def test_prediction_ranking_ties_break_by_lower_index():
    net = tiny_net(np.zeros((4, 2)))
    p, _ = forward_from_activation(net, np.ones((2, 2, 2)))
    assert p.top_k(4) == (0, 1, 2, 3)
    assert p.bottom_k(2) == (3, 2)


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_softmax_normalised_and_ranking_descending(seed):
    rng = np.random.default_rng(seed)
    net = MiniNet.random(seed % 1000)
    _, p = forward(net, rng.uniform(size=(3, 32, 32)))
    assert abs(p.softmax.sum() - 1) < 1e-5
    assert np.all((p.softmax > 0) & (p.softmax < 1))
    s = p.softmax[list(p.ranking)]
    assert np.all(np.diff(s) <= 0)


def test_softmax_is_stable_for_large_logits():
    p = softmax([1000.0, 1000.0, -1000.0])
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0], atol=1e-12)


def test_same_seed_bit_identical():
    a, b = MiniNet.random(11), MiniNet.random(11)
    for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    img = golden_image(11)
    assert forward(a, img)[1].logits.tobytes() == forward(b, img)[1].logits.tobytes()


def test_weights_are_uniform_in_range_and_head_bias_zero():
    net = MiniNet.random(0)
    for w in (net.conv1_w, net.conv2_w, net.head_w):
        assert np.all(np.abs(w) <= 0.1)
    np.testing.assert_array_equal(net.head_b, 0)


def test_save_load_roundtrip(tmp_path):
    net = MiniNet.random(9)
    net.save(tmp_path / "net")
    manifest = json.loads((tmp_path / "net" / "manifest.json").read_text())
    assert manifest["tensors"]["head_w"] == [16, 8]
    loaded = MiniNet.load(tmp_path / "net")
    img = golden_image(9)
    np.testing.assert_array_equal(forward(loaded, img)[1].logits, forward(net, img)[1].logits)


def test_logits_linear_in_gap_with_zero_bias():
    net = MiniNet.random(2)
    a = activations(net, golden_image(2))
    np.testing.assert_allclose(head_logits(net, a), net.head_w.astype(np.float64) @ identity_feature(a),
                               rtol=1e-12)
