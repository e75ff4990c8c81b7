"""Synthetic multi-task classification suites, training and evaluation.

Each task is a Gaussian mixture: class means sit on mutually orthogonal
directions of a task-specific random rotation, shifted by a task-specific
centre.  Tasks with more classes occupy more input directions, which gives
their task vectors higher intrinsic rank.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .nn import (
    Batch,
    ModelSpec,
    accuracy,
    backward_weight_grads,
    init_backbone,
    init_head,
)
from .optim import make_optimizer

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, where: str = "training"):
        super().__init__(f"{where} diverged (non-finite loss) at step {step}")
        self.step = step


@dataclass(frozen=True)
class TaskSuiteSpec:
    num_tasks: int = 4
    input_dim: int = 32
    classes_per_task: int = 4
    train_per_class: int = 200
    test_per_class: int = 200
    cluster_spread: float = 1.0
    separation: float = 6.0
    center_shift: float = 3.0
    rotation_seed: int = 0
    data_seed: int = 100
    difficulty_profile: tuple[int, ...] = (1, 2, 3, 4)

    def __post_init__(self):
        object.__setattr__(self, "difficulty_profile", tuple(int(d) for d in self.difficulty_profile))
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be positive")
        if self.classes_per_task < 1:
            raise ValueError("classes_per_task must be positive")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValueError("samples per class must be positive")
        if self.cluster_spread <= 0:
            raise ValueError("cluster_spread must be positive")
        if self.separation < 4.0:
            raise ValueError("class means must be at least 4 spreads apart")
        if len(self.difficulty_profile) not in (0, self.num_tasks):
            raise ValueError("difficulty_profile needs one multiplier per task")
        if self.difficulty_profile and min(self.difficulty_profile) < 1:
            raise ValueError("difficulty multipliers must be positive")
        if max(self.class_counts) > self.input_dim:
            raise ValueError("more classes than input dimensions")

    @property
    def class_counts(self) -> tuple[int, ...]:
        profile = self.difficulty_profile or (1,) * self.num_tasks
        return tuple(self.classes_per_task * m for m in profile)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["difficulty_profile"] = list(self.difficulty_profile)
        return d


@dataclass
class TaskData:
    task_id: int
    num_classes: int
    train: Batch
    test: Batch


def _rotation(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _sample(rng, means, per_class, spread):
    c, d = means.shape
    labels = np.repeat(np.arange(c), per_class)
    x = means[labels] + spread * rng.standard_normal((c * per_class, d))
    order = rng.permutation(len(labels))
    return x[order], labels[order]


def generate_suite(spec: TaskSuiteSpec) -> list[TaskData]:
    """Deterministic train/test splits for every task of ``spec``."""
    rot_rng = np.random.default_rng(spec.rotation_seed)
    data_rng = np.random.default_rng(spec.data_seed)
    # per-class radius so neighbouring means are exactly `separation` spreads apart
    radius = spec.separation * spec.cluster_spread / np.sqrt(2.0)
    suite = []
    for t, c in enumerate(spec.class_counts):
        rot = _rotation(rot_rng, spec.input_dim)
        centre_dir = rot_rng.standard_normal(spec.input_dim)
        centre = spec.center_shift * spec.cluster_spread * centre_dir / np.linalg.norm(centre_dir)
        means = radius * rot[:, :c].T + centre
        xtr, ytr = _sample(data_rng, means, spec.train_per_class, spec.cluster_spread)
        xte, yte = _sample(data_rng, means, spec.test_per_class, spec.cluster_spread)
        suite.append(
            TaskData(
                task_id=t,
                num_classes=c,
                train=Batch(xtr, ytr, t),
                test=Batch(xte, yte, t),
            )
        )
    return suite


def model_spec_for(suite_spec: TaskSuiteSpec, hidden_dims=(64, 64), activation="relu") -> ModelSpec:
    return ModelSpec(
        input_dim=suite_spec.input_dim,
        hidden_dims=tuple(hidden_dims),
        num_classes_per_task=suite_spec.class_counts,
        activation=activation,
    )


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 20
    learning_rate: float = 5e-3
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 2
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _train(spec, backbone, head, data: Batch, epochs, lr, batch_size, optimizer, rng, where):
    params = {name: w.copy() for name, w in backbone.items()}
    params["head"] = head.copy()
    if lr == 0 or epochs == 0:
        return params
    opt = make_optimizer(optimizer, lr)
    step = 0
    for _ in range(epochs):
        for idx in minibatches(len(data), batch_size, rng):
            batch = Batch(data.inputs[idx], data.labels[idx], data.task_id)
            body = {k: params[k] for k in spec.layer_names}
            g = backward_weight_grads(spec, body, params["head"], batch, "cross_entropy")
            if not np.isfinite(g.loss_value):
                raise DivergenceError(step, where)
            grads = dict(g.per_layer)
            grads["head"] = g.head
            opt.step(params, grads)
            step += 1
    return params


def pretrain(
    spec: ModelSpec, suite: Sequence[TaskData], config: PretrainConfig = PretrainConfig()
) -> Checkpoint:
    """Shared initialization: a brief run on pooled data with a throwaway head.

    The throwaway head classifies over the union of all tasks' labels.
    """
    rng = np.random.default_rng(config.seed)
    backbone = init_backbone(spec, rng)
    offsets = np.cumsum([0] + [t.num_classes for t in suite])
    x = np.vstack([t.train.inputs for t in suite])
    y = np.concatenate([t.train.labels + offsets[i] for i, t in enumerate(suite)])
    pooled_spec = ModelSpec(spec.input_dim, spec.hidden_dims, (int(offsets[-1]),), spec.activation)
    head = init_head(pooled_spec, 0, rng)
    params = _train(
        pooled_spec,
        backbone,
        head,
        Batch(x, y, 0),
        config.epochs,
        config.learning_rate,
        config.batch_size,
        "adam",
        rng,
        "pretraining",
    )
    layers = {name: params[name] for name in spec.layer_names}
    pooled = [
        accuracy(pooled_spec, layers, params["head"], Batch(t.test.inputs, t.test.labels + offsets[i], 0))
        for i, t in enumerate(suite)
    ]
    return Checkpoint(
        layers,
        manifest={
            "kind": "pretrained",
            "model": spec.to_dict(),
            "pretrain": config.to_dict(),
            "pooled_accuracy": pooled,
        },
    )


def finetune(
    spec: ModelSpec,
    base: Checkpoint,
    suite: Sequence[TaskData],
    task_id: int,
    config: FinetuneConfig = FinetuneConfig(),
) -> Checkpoint:
    """Fine-tune backbone and a fresh head for ``task_id`` starting from ``base``."""
    for name, shape in spec.layer_shapes().items():
        if base[name].shape != shape:
            raise ValueError(f"base layer {name!r} has shape {base[name].shape}, expected {shape}")
    rng = np.random.default_rng([config.seed, task_id])
    head = init_head(spec, task_id, rng)
    task = suite[task_id]
    params = _train(
        spec,
        base.subset(spec.layer_names),
        head,
        task.train,
        config.epochs,
        config.learning_rate,
        config.batch_size,
        config.optimizer,
        rng,
        f"fine-tuning task {task_id}",
    )
    layers = {name: params[name] for name in spec.layer_names}
    layers[spec.head_name(task_id)] = params["head"]
    acc = accuracy(spec, layers, params["head"], task.test)
    return Checkpoint(
        layers,
        manifest={
            "kind": "finetuned",
            "task_id": task_id,
            "test_accuracy": acc,
            "finetune": config.to_dict(),
            "model": spec.to_dict(),
        },
    )


def heads_from(spec: ModelSpec, checkpoints: Sequence[Checkpoint]) -> dict[int, np.ndarray]:
    heads = {}
    for ck in checkpoints:
        for t in range(spec.num_tasks):
            if spec.head_name(t) in ck:
                heads[t] = ck[spec.head_name(t)]
    return heads


def evaluate(
    spec: ModelSpec,
    backbone: Mapping[str, np.ndarray],
    heads: Mapping[int, np.ndarray],
    suite: Sequence[TaskData],
    split: str = "test",
) -> dict:
    """Per-task accuracy and their unweighted mean."""
    per_task = {}
    for task in suite:
        if task.task_id not in heads:
            continue
        per_task[task.task_id] = accuracy(spec, backbone, heads, getattr(task, split))
    return {"per_task": per_task, "mean": float(np.mean(list(per_task.values())))}


def suite_to_checkpoint(spec: TaskSuiteSpec, suite: Sequence[TaskData]) -> Checkpoint:
    """Inputs and labels of every split as ``task{t}.{split}.inputs`` / ``.labels``."""
    layers = {}
    for task in suite:
        for split in ("train", "test"):
            b = getattr(task, split)
            layers[f"task{task.task_id}.{split}.inputs"] = b.inputs
            layers[f"task{task.task_id}.{split}.labels"] = np.asarray(b.labels, dtype=np.float64)[None, :]
    return Checkpoint(
        layers,
        manifest={"kind": "suite", "suite": spec.to_dict(), "class_counts": list(spec.class_counts)},
    )


def suite_from_checkpoint(ck: Checkpoint) -> tuple[TaskSuiteSpec, list[TaskData]]:
    if ck.manifest.get("kind") != "suite":
        raise ValueError("not a suite file")
    spec = TaskSuiteSpec(**ck.manifest["suite"])
    suite = []
    for t, c in enumerate(spec.class_counts):
        splits = {}
        for split in ("train", "test"):
            labels = ck[f"task{t}.{split}.labels"][0].astype(np.intp)
            splits[split] = Batch(ck[f"task{t}.{split}.inputs"], labels, t)
        suite.append(TaskData(t, c, splits["train"], splits["test"]))
    return spec, suite
