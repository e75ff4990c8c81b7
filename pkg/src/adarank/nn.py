"""MLP backbone with per-task linear heads, analytic gradients and losses.

Biases are folded into the weight matrices: every layer consumes its input
with a constant-1 column appended, so a layer mapping ``d_in -> d_out`` is a
``(d_in + 1) x d_out`` matrix.  The backbone layers are the merge targets; the
heads stay private to their task.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .linalg import ShapeError

ACTIVATIONS = ("relu", "tanh")
LOSS_KINDS = ("entropy", "cross_entropy")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes_per_task: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(
            self, "num_classes_per_task", tuple(int(c) for c in self.num_classes_per_task)
        )
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if len(self.hidden_dims) < 1 or min(self.hidden_dims) < 1:
            raise ValueError("need at least one hidden layer with positive width")
        if len(self.num_classes_per_task) < 1 or min(self.num_classes_per_task) < 1:
            raise ValueError("every task needs at least one class")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def num_tasks(self) -> int:
        return len(self.num_classes_per_task)

    @property
    def layer_names(self) -> list[str]:
        return [f"backbone.{i}" for i in range(len(self.hidden_dims))]

    def layer_shapes(self) -> dict[str, tuple[int, int]]:
        dims = (self.input_dim,) + self.hidden_dims
        return {
            name: (dims[i] + 1, dims[i + 1]) for i, name in enumerate(self.layer_names)
        }

    def head_name(self, task_id: int) -> str:
        return f"head.{task_id}"

    def head_shape(self, task_id: int) -> tuple[int, int]:
        return self.hidden_dims[-1] + 1, self.num_classes_per_task[task_id]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "num_classes_per_task": list(self.num_classes_per_task),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            num_classes_per_task=tuple(d["num_classes_per_task"]),
            activation=d.get("activation", "relu"),
        )


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray | None = None
    task_id: int = 0

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class GradientBundle:
    """Backbone weight gradients (plus the head gradient, used by training)."""

    per_layer: dict[str, np.ndarray]
    loss_value: float
    head: np.ndarray | None = field(default=None, repr=False)


def init_backbone(spec: ModelSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-scaled weights (Xavier for tanh) with a zero bias row."""
    out = {}
    for name, (rows, cols) in spec.layer_shapes().items():
        fan_in = rows - 1
        gain = 2.0 if spec.activation == "relu" else 1.0
        w = np.zeros((rows, cols))
        w[:-1] = rng.standard_normal((fan_in, cols)) * np.sqrt(gain / fan_in)
        out[name] = w
    return out


def init_head(spec: ModelSpec, task_id: int, rng: np.random.Generator) -> np.ndarray:
    rows, cols = spec.head_shape(task_id)
    w = np.zeros((rows, cols))
    w[:-1] = rng.standard_normal((rows - 1, cols)) * np.sqrt(1.0 / (rows - 1))
    return w


def _act(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(z, 0.0, out=np.empty_like(z))
    return np.tanh(z)


def _act_grad(spec: ModelSpec, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _check_shapes(spec: ModelSpec, backbone: Mapping[str, np.ndarray], head, task_id: int):
    for name, shape in spec.layer_shapes().items():
        if name not in backbone:
            raise ShapeError(f"missing backbone layer {name!r}")
        if backbone[name].shape != shape:
            raise ShapeError(f"layer {name!r} has shape {backbone[name].shape}, expected {shape}")
    if head.shape != spec.head_shape(task_id):
        raise ShapeError(
            f"layer {spec.head_name(task_id)!r} has shape {head.shape}, "
            f"expected {spec.head_shape(task_id)}"
        )


def _head_for(heads, task_id: int) -> np.ndarray:
    if isinstance(heads, np.ndarray):
        return heads
    return heads[task_id]


def _affine(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    # same as hstack([h, 1]) @ w without materializing the ones column
    return h @ w[:-1] + w[-1]


def _affine_grad(h: np.ndarray, dz: np.ndarray) -> np.ndarray:
    return np.vstack([h.T @ dz, dz.sum(axis=0, keepdims=True)])


def _forward_cached(spec, backbone, head, x):
    inputs, pre, post = [], [], []
    h = x
    for name in spec.layer_names:
        z = _affine(h, backbone[name])
        inputs.append(h)
        h = _act(spec, z)
        pre.append(z)
        post.append(h)
    return _affine(h, head), (inputs, pre, post, h)


def forward(spec: ModelSpec, backbone: Mapping[str, np.ndarray], heads, batch: Batch) -> np.ndarray:
    """Logits for ``batch`` through the backbone and the head of ``batch.task_id``.

    ``heads`` is either a mapping ``task_id -> head`` or a single head matrix.
    """
    head = _head_for(heads, batch.task_id)
    x = np.asarray(batch.inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"inputs have shape {x.shape}, expected (batch, {spec.input_dim})")
    _check_shapes(spec, backbone, head, batch.task_id)
    logits, _ = _forward_cached(spec, backbone, head, x)
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def row_entropy(logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    p = np.exp(logp)
    # p log p is taken as 0 where p underflows to 0
    return -np.where(p > 0, p * logp, 0.0).sum(axis=1)


def entropy_loss(logits: np.ndarray) -> float:
    """Batch mean of the Shannon entropy of the softmax output."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    return float(row_entropy(logits).mean())


def entropy_grad(logits: np.ndarray) -> np.ndarray:
    """Gradient of :func:`entropy_loss` with respect to the logits.

    ``-p * (log p + H)`` rewritten as ``-p * (z - sum_j p_j z_j)`` on the
    shifted logits z, which is exactly zero for uniform rows.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    p = softmax(logits)
    centred = z - (p * z).sum(axis=1, keepdims=True)
    return -p * centred / logits.shape[0]


def _labels(labels, n: int, num_classes: int | None = None) -> np.ndarray:
    if labels is None:
        raise ValueError("cross-entropy needs labels")
    y = np.asarray(labels).astype(np.intp)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if num_classes is not None and (y.min(initial=0) < 0 or y.max(initial=0) >= num_classes):
        raise ValueError("label out of range")
    return y


def cross_entropy_loss(logits: np.ndarray, labels) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    y = _labels(labels, logits.shape[0], logits.shape[1])
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(y)), y].mean())


def cross_entropy_grad(logits: np.ndarray, labels) -> np.ndarray:
    y = _labels(labels, logits.shape[0], logits.shape[1])
    g = softmax(logits)
    g[np.arange(len(y)), y] -= 1.0
    return g / logits.shape[0]


def loss_and_logit_grad(logits: np.ndarray, labels, loss_kind: str) -> tuple[float, np.ndarray]:
    if loss_kind == "entropy":
        return entropy_loss(logits), entropy_grad(logits)
    if loss_kind == "cross_entropy":
        return cross_entropy_loss(logits, labels), cross_entropy_grad(logits, labels)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def backward_with(
    spec: ModelSpec,
    backbone: Mapping[str, np.ndarray],
    head: np.ndarray,
    inputs: np.ndarray,
    logit_loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
) -> GradientBundle:
    """Backprop of an arbitrary logits-level loss ``logit_loss(logits) -> (loss, dloss/dlogits)``."""
    x = np.asarray(inputs, dtype=np.float64)
    logits, (ins, pre, post, last) = _forward_cached(spec, backbone, head, x)
    loss, dlogits = logit_loss(logits)
    head_grad = _affine_grad(last, dlogits)
    delta = dlogits @ head[:-1].T
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(len(spec.layer_names))):
        name = spec.layer_names[i]
        dz = delta * _act_grad(spec, pre[i], post[i])
        grads[name] = _affine_grad(ins[i], dz)
        if i:
            delta = dz @ backbone[name][:-1].T
    per_layer = {name: grads[name] for name in spec.layer_names}
    return GradientBundle(per_layer=per_layer, loss_value=float(loss), head=head_grad)


def backward_weight_grads(
    spec: ModelSpec,
    backbone: Mapping[str, np.ndarray],
    heads,
    batch: Batch,
    loss_kind: str = "entropy",
) -> GradientBundle:
    """Loss value and per-layer weight gradients by reverse-mode backprop."""
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if loss_kind == "cross_entropy" and batch.labels is None:
        raise ValueError("cross-entropy needs labels")
    head = _head_for(heads, batch.task_id)
    _check_shapes(spec, backbone, head, batch.task_id)
    return backward_with(
        spec, backbone, head, batch.inputs, lambda z: loss_and_logit_grad(z, batch.labels, loss_kind)
    )


def predict(spec: ModelSpec, backbone, heads, batch: Batch) -> np.ndarray:
    return forward(spec, backbone, heads, batch).argmax(axis=1)


def accuracy(spec: ModelSpec, backbone, heads, batch: Batch) -> float:
    if batch.labels is None:
        raise ValueError("accuracy needs labels")
    return float(np.mean(predict(spec, backbone, heads, batch) == np.asarray(batch.labels)))
