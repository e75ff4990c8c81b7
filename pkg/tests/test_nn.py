import math

import numpy as np
import pytest

from adarank.linalg import ShapeError
from adarank.nn import (
    Batch,
    ModelSpec,
    backward_weight_grads,
    cross_entropy_grad,
    cross_entropy_loss,
    entropy_grad,
    entropy_loss,
    forward,
    init_backbone,
    init_head,
)


def small_net(rng, activation="tanh", classes=(3, 2)):
    spec = ModelSpec(4, (5, 3), classes, activation)
    backbone = init_backbone(spec, rng)
    for w in backbone.values():
        w[-1] = 0.1 * rng.standard_normal(w.shape[1])
    heads = {t: init_head(spec, t, rng) for t in range(spec.num_tasks)}
    return spec, backbone, heads


def naive_forward(spec, backbone, head, x):
    # independent re-implementation with explicit bias columns
    h = x
    for name in spec.layer_names:
        h1 = np.hstack([h, np.ones((len(h), 1))])
        z = h1 @ backbone[name]
        h = np.tanh(z) if spec.activation == "tanh" else np.maximum(z, 0)
    return np.hstack([h, np.ones((len(h), 1))]) @ head


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(3, (), (2,))
    with pytest.raises(ValueError):
        ModelSpec(3, (4,), ())
    with pytest.raises(ValueError):
        ModelSpec(3, (4,), (2,), "gelu")


def test_layer_shapes_fold_bias():
    spec = ModelSpec(4, (5, 3), (2,))
    assert spec.layer_shapes() == {"backbone.0": (5, 5), "backbone.1": (6, 3)}
    assert spec.head_shape(0) == (4, 2)
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_forward_zero_network():
    spec = ModelSpec(3, (4,), (2,))
    backbone = {n: np.zeros(s) for n, s in spec.layer_shapes().items()}
    out = forward(spec, backbone, {0: np.zeros(spec.head_shape(0))}, Batch(np.ones((5, 3))))
    assert np.array_equal(out, np.zeros((5, 2)))


def test_forward_identity_composition():
    spec = ModelSpec(3, (3,), (3,), "relu")
    w = np.vstack([np.eye(3), np.zeros((1, 3))])
    x = np.abs(np.random.default_rng(0).standard_normal((6, 3)))
    out = forward(spec, {"backbone.0": w}, {0: w}, Batch(x))
    assert np.array_equal(out, x)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_forward_matches_independent_reimplementation(rng, activation):
    spec, backbone, heads = small_net(rng, activation)
    x = rng.standard_normal((7, 4))
    out = forward(spec, backbone, heads, Batch(x, None, 1))
    ref = naive_forward(spec, backbone, heads[1], x)
    assert np.allclose(out, ref, rtol=0, atol=1e-14)


def test_forward_is_linear_in_head(rng):
    spec, backbone, heads = small_net(rng)
    b = Batch(rng.standard_normal((4, 4)))
    out = forward(spec, backbone, heads, b)
    out2 = forward(spec, backbone, {0: 2 * heads[0]}, b)
    assert np.allclose(out2, 2 * out, rtol=1e-15, atol=0)


def test_forward_shape_error_names_layer(rng):
    spec, backbone, heads = small_net(rng)
    backbone["backbone.1"] = np.zeros((2, 2))
    with pytest.raises(ShapeError, match="backbone.1"):
        forward(spec, backbone, heads, Batch(np.zeros((1, 4))))


def test_entropy_uniform_is_log_c():
    assert math.isclose(entropy_loss(np.zeros((3, 4))), math.log(4), rel_tol=1e-15)


def test_entropy_confident_is_zero():
    assert entropy_loss(np.array([[1000.0, 0, 0]])) == pytest.approx(0.0, abs=1e-12)


def test_entropy_binary_case():
    h = entropy_loss(np.array([[0.0, math.log(3.0)]]))
    assert h == pytest.approx(-(0.25 * math.log(0.25) + 0.75 * math.log(0.75)), abs=1e-15)
    assert h == pytest.approx(0.562335, abs=1e-6)


def test_entropy_rejects_nonfinite():
    with pytest.raises(ValueError):
        entropy_loss(np.array([[np.nan, 0.0]]))


def test_entropy_shift_invariance(rng):
    z = rng.standard_normal((5, 6))
    shift = rng.standard_normal((5, 1)) * 50
    assert abs(entropy_loss(z + shift) - entropy_loss(z)) <= 1e-12


def test_entropy_grad_closed_form_and_fd(rng):
    z = rng.standard_normal((3, 5))
    g = entropy_grad(z)
    p = np.exp(z - z.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    h = -(p * np.log(p)).sum(1, keepdims=True)
    assert np.allclose(g, -p * (np.log(p) + h) / 3, atol=1e-15)
    eps = 1e-6
    fd = np.zeros_like(z)
    for i in np.ndindex(z.shape):
        d = np.zeros_like(z)
        d[i] = eps
        fd[i] = (entropy_loss(z + d) - entropy_loss(z - d)) / (2 * eps)
    assert np.allclose(g, fd, atol=1e-9)


def test_cross_entropy_cases():
    assert cross_entropy_loss(np.zeros((2, 4)), [1, 3]) == pytest.approx(math.log(4), rel=1e-15)
    assert cross_entropy_loss(np.array([[1000.0, 0.0]]), [0]) == pytest.approx(0.0, abs=1e-12)
    assert cross_entropy_loss(np.array([[1.0, 0.0]]), [0]) == pytest.approx(0.313262, abs=1e-6)


def test_cross_entropy_needs_valid_labels():
    with pytest.raises(ValueError):
        cross_entropy_loss(np.zeros((2, 3)), None)
    with pytest.raises(ValueError):
        cross_entropy_loss(np.zeros((2, 3)), [0, 3])


def test_cross_entropy_single_layer_closed_form(rng):
    # no hidden nonlinearity matters for the head gradient: check head grad
    spec, backbone, heads = small_net(rng)
    x = rng.standard_normal((6, 4))
    y = rng.integers(0, 3, 6)
    bundle = backward_weight_grads(spec, backbone, heads, Batch(x, y, 0), "cross_entropy")
    logits = forward(spec, backbone, heads, Batch(x, y, 0))
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    onehot = np.eye(3)[y]
    # penultimate activations with the bias column
    h = x
    for name in spec.layer_names:
        h = np.tanh(np.hstack([h, np.ones((6, 1))]) @ backbone[name])
    h1 = np.hstack([h, np.ones((6, 1))])
    assert np.allclose(bundle.head, h1.T @ (p - onehot) / 6, atol=1e-14)
    assert np.allclose(cross_entropy_grad(logits, y), (p - onehot) / 6, atol=1e-15)


def test_entropy_zero_gradient_at_uniform(rng):
    spec, backbone, heads = small_net(rng)
    heads = {0: np.zeros(spec.head_shape(0))}
    bundle = backward_weight_grads(spec, backbone, heads, Batch(rng.standard_normal((5, 4))), "entropy")
    assert np.array_equal(bundle.head, np.zeros_like(bundle.head))
    for g in bundle.per_layer.values():
        assert np.array_equal(g, np.zeros_like(g))


@pytest.mark.parametrize("loss_kind", ["entropy", "cross_entropy"])
@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_weight_grads_match_central_differences(rng, loss_kind, activation):
    spec, backbone, heads = small_net(rng, activation)
    x = rng.standard_normal((8, 4))
    batch = Batch(x, rng.integers(0, 3, 8), 0)
    bundle = backward_weight_grads(spec, backbone, heads, batch, loss_kind)
    assert set(bundle.per_layer) == set(spec.layer_names)
    for name, w in backbone.items():
        step = 1e-5 * max(1.0, np.abs(w).max())
        fd = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            for sign in (1, -1):
                pert = dict(backbone)
                wp = w.copy()
                wp[idx] += sign * step
                pert[name] = wp
                fd[idx] += sign * backward_weight_grads(spec, pert, heads, batch, loss_kind).loss_value
        fd /= 2 * step
        g = bundle.per_layer[name]
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)


def test_backward_requires_labels_for_ce(rng):
    spec, backbone, heads = small_net(rng)
    with pytest.raises(ValueError):
        backward_weight_grads(spec, backbone, heads, Batch(np.zeros((2, 4))), "cross_entropy")
    with pytest.raises(ValueError):
        backward_weight_grads(spec, backbone, heads, Batch(np.zeros((2, 4))), "mse")
