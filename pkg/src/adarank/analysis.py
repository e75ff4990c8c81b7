"""Diagnostics: per-component loss sweeps, Taylor terms, rank reports, heatmaps.

Every function here is read-only with respect to its inputs.  Numeric CSV
output uses 17 significant digits so 64-bit values round-trip.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.stats

from .adapt import (
    DEFAULT_MONITOR_SIZE,
    AdaptTrace,
    MaskState,
    merged_weights,
    monitor_objective,
    run_adaptation,
)
from .linalg import ShapeError
from .merge import _lam, topk_count
from .nn import ModelSpec, backward_with, forward, loss_and_logit_grad, Batch
from .optim import AdamState
from .spectral import SpectralSet, TaskVectorSet, intrinsic_rank
from .tasks import TaskData


class AnalysisError(ArithmeticError):
    pass


def _g(x: float) -> str:
    return f"{float(x):.17g}"


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _batch(task: TaskData, split: str, loss_kind: str) -> Batch:
    batch = getattr(task, split)
    if loss_kind == "cross_entropy" and batch.labels is None:
        raise ValueError(f"task {task.task_id} has no labels on split {split!r}")
    return batch


def multitask_losses(
    spec: ModelSpec,
    weights: Mapping[str, np.ndarray],
    heads: Mapping[int, np.ndarray],
    suite: Sequence[TaskData],
    loss_kind: str = "cross_entropy",
    split: str = "test",
) -> np.ndarray:
    """Per-task batch-mean loss of the backbone ``weights`` on ``split``."""
    out = []
    for task in suite:
        batch = _batch(task, split, loss_kind)
        logits = forward(spec, weights, heads, batch)
        out.append(loss_and_logit_grad(logits, batch.labels, loss_kind)[0])
    return np.array(out)


def layer_objective(
    spec: ModelSpec,
    weights: Mapping[str, np.ndarray],
    heads: Mapping[int, np.ndarray],
    suite: Sequence[TaskData],
    layer: str,
    loss_kind: str = "cross_entropy",
    split: str = "test",
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """``W -> (summed task loss, its gradient w.r.t. W)`` with the other layers fixed."""
    fixed = {n: np.asarray(w, dtype=np.float64) for n, w in weights.items()}
    shape = fixed[layer].shape
    batches = [_batch(task, split, loss_kind) for task in suite]

    def f(w: np.ndarray) -> tuple[float, np.ndarray]:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != shape:
            raise ShapeError(f"layer {layer!r} expects shape {shape}, got {w.shape}")
        current = dict(fixed)
        current[layer] = w
        total, grad = 0.0, np.zeros(shape)
        for b in batches:
            bundle = backward_with(
                spec, current, heads[b.task_id], b.inputs,
                lambda z, y=b.labels: loss_and_logit_grad(z, y, loss_kind),
            )
            total += bundle.loss_value
            grad += bundle.per_layer[layer]
        return total, grad

    return f


def _window(k: int, stride: int, top_fraction: float | None) -> np.ndarray:
    if stride < 1:
        raise ValueError("stride must be positive")
    limit = k if top_fraction is None else max(1, topk_count(k, top_fraction))
    return np.arange(0, limit, stride)


def merged_without(base, tv: TaskVectorSet, excluded_task: int, lam) -> dict[str, np.ndarray]:
    """``base + lam * sum_{j != excluded} tau_j`` on every layer."""
    out = {}
    for name in tv.layer_names:
        w = np.array(base[name], dtype=np.float64)
        for t, vec in enumerate(tv.per_task):
            if t != excluded_task:
                w = w + _lam(lam, t, name) * vec[name]
        out[name] = w
    return out


@dataclass
class SweepReport:
    excluded_task: int
    layer: str
    components: np.ndarray
    sigma: np.ndarray
    per_task: np.ndarray  # (components, tasks)
    net: np.ndarray = field(init=False)

    def __post_init__(self):
        self.net = np.array([math.fsum(row) for row in self.per_task])

    @property
    def own(self) -> np.ndarray:
        return self.per_task[:, self.excluded_task]

    def header(self) -> list[str]:
        return ["task_excluded", "component", "sigma", "dL_total"] + [
            f"dL_task_{t}" for t in range(self.per_task.shape[1])
        ]

    def to_csv(self) -> str:
        rows = [
            [self.excluded_task, int(r), _g(s), _g(n)] + [_g(x) for x in row]
            for r, s, n, row in zip(self.components, self.sigma, self.net, self.per_task)
        ]
        return _csv(self.header(), rows)


def component_sweep(
    spec: ModelSpec,
    base,
    tv: TaskVectorSet,
    spectra: SpectralSet,
    heads: Mapping[int, np.ndarray],
    suite: Sequence[TaskData],
    excluded_task: int,
    layer: str,
    lam=0.3,
    stride: int = 1,
    top_fraction: float | None = None,
    loss_kind: str = "cross_entropy",
    split: str = "test",
    workers: int = 1,
) -> SweepReport:
    """Loss change of every task when one component of the excluded task is added.

    The reference model merges the full task vectors of every other task.  For
    component r of ``excluded_task`` in ``layer`` the report holds
    ``L_t(ref + lam * s_r u_r v_r^T) - L_t(ref)`` for each task t.
    """
    if not 0 <= excluded_task < tv.num_tasks:
        raise ValueError(f"excluded_task {excluded_task} out of range")
    for task in suite:
        _batch(task, split, loss_kind)
    ref = merged_without(base, tv, excluded_task, lam)
    ref_loss = multitask_losses(spec, ref, heads, suite, loss_kind, split)
    svd = spectra.svds[excluded_task][layer]
    scale = _lam(lam, excluded_task, layer)
    comps = _window(svd.k, stride, top_fraction)

    def one(r: int) -> np.ndarray:
        if svd.s[r] == 0.0:
            return np.zeros(len(suite))
        w = dict(ref)
        w[layer] = ref[layer] + scale * svd.s[r] * np.outer(svd.u[:, r], svd.v[:, r])
        return multitask_losses(spec, w, heads, suite, loss_kind, split) - ref_loss

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, comps))
    else:
        rows = [one(r) for r in comps]
    per_task = np.array(rows).reshape(len(comps), len(suite))
    return SweepReport(excluded_task, layer, comps, svd.s[comps].copy(), per_task)


def default_epsilon(theta: np.ndarray) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    return 1e-4 * (1.0 + np.linalg.norm(theta) / math.sqrt(theta.size))


@dataclass(frozen=True)
class TaylorTerms:
    first_order: float
    quadratic: float
    direct: float

    @property
    def second_order_estimate(self) -> float:
        return self.first_order + 0.5 * self.quadratic


def taylor_terms(
    loss_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta: np.ndarray,
    direction: np.ndarray,
    sigma: float,
    epsilon: float | None = None,
) -> TaylorTerms:
    """First-order, quadratic and exact loss change for the step ``sigma * direction``.

    The curvature term ``direction . H direction`` comes from central
    differences of the gradient at ``theta +- epsilon * direction``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if theta.shape != direction.shape:
        raise ShapeError(f"direction {direction.shape} does not match parameters {theta.shape}")
    eps = default_epsilon(theta) if epsilon is None else float(epsilon)
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    if sigma == 0.0:
        return TaylorTerms(0.0, 0.0, 0.0)
    loss0, grad0 = loss_and_grad(theta)
    first = sigma * float(np.vdot(grad0, direction))
    _, gp = loss_and_grad(theta + eps * direction)
    _, gm = loss_and_grad(theta - eps * direction)
    hvp = float(np.vdot(direction, gp - gm)) / (2.0 * eps)
    quad = sigma * sigma * hvp
    direct = loss_and_grad(theta + sigma * direction)[0] - loss0
    terms = TaylorTerms(first, quad, direct)
    if not all(math.isfinite(x) for x in (first, quad, direct)):
        raise AnalysisError(f"non-finite Taylor terms {terms} (epsilon={eps:g})")
    return terms


@dataclass
class TaylorReport:
    excluded_task: int
    layer: str
    components: np.ndarray
    terms: list[TaylorTerms]

    def to_csv(self) -> str:
        rows = [
            [int(r), _g(t.first_order), _g(t.quadratic), _g(t.direct)]
            for r, t in zip(self.components, self.terms)
        ]
        return _csv(["component", "first_order", "quadratic", "direct"], rows)


def taylor_report(
    spec: ModelSpec,
    base,
    tv: TaskVectorSet,
    spectra: SpectralSet,
    heads: Mapping[int, np.ndarray],
    suite: Sequence[TaskData],
    excluded_task: int,
    layer: str,
    lam=0.3,
    stride: int = 1,
    top_fraction: float | None = None,
    epsilon: float | None = None,
    loss_kind: str = "cross_entropy",
    split: str = "test",
) -> TaylorReport:
    """Taylor terms around the sweep's reference model for each swept component."""
    ref = merged_without(base, tv, excluded_task, lam)
    f = layer_objective(spec, ref, heads, suite, layer, loss_kind, split)
    svd = spectra.svds[excluded_task][layer]
    scale = _lam(lam, excluded_task, layer)
    comps = _window(svd.k, stride, top_fraction)
    terms = [
        taylor_terms(f, ref[layer], np.outer(svd.u[:, r], svd.v[:, r]), scale * svd.s[r], epsilon)
        for r in comps
    ]
    return TaylorReport(excluded_task, layer, comps, terms)


def joint_interaction(loss: Callable[[np.ndarray], float], theta, s_i, s_j) -> float:
    """``L(t + s_i + s_j) - L(t + s_i) - L(t + s_j) + L(t)``.

    Evaluated as ``(L_ij + L_0) - (L_i + L_j)`` so the result is exactly 0 for
    a zero argument and exactly symmetric under swapping ``s_i`` and ``s_j``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    s_i = np.asarray(s_i, dtype=np.float64)
    s_j = np.asarray(s_j, dtype=np.float64)
    if s_i.shape != theta.shape or s_j.shape != theta.shape:
        raise ShapeError(f"components {s_i.shape}, {s_j.shape} do not match parameters {theta.shape}")

    def ev(x):
        out = loss(x)
        return float(out[0] if isinstance(out, tuple) else out)

    both = ev(theta + (s_i + s_j))
    return (both + ev(theta)) - (ev(theta + s_i) + ev(theta + s_j))


@dataclass
class RankReport:
    rows: list[dict]
    correlation: float

    def to_csv(self) -> str:
        out = [
            [r["task"], r["layer"], r["k"], r["learned_rank"], r["intrinsic_rank"]] for r in self.rows
        ]
        out.append(["spearman", "", "", _g(self.correlation), ""])
        return _csv(["task", "layer", "k", "learned_rank", "intrinsic_rank"], out)


def rank_report(state: MaskState, spectra: SpectralSet, energy_fraction: float = 0.95) -> RankReport:
    """Learned rank (active bits) against intrinsic rank for every (task, layer)."""
    rows = []
    counts = state.active_counts()
    for t, per_layer in enumerate(spectra.svds):
        for name, svd in per_layer.items():
            rows.append(
                {
                    "task": t,
                    "layer": name,
                    "k": svd.k,
                    "learned_rank": counts[(t, name)],
                    "intrinsic_rank": intrinsic_rank(svd.s, energy_fraction),
                }
            )
    return RankReport(rows, rank_correlation(rows))


def rank_correlation(rows: Sequence[Mapping]) -> float:
    """Spearman correlation of learned and intrinsic ranks; NaN when either is constant."""
    learned = [r["learned_rank"] for r in rows]
    intrinsic = [r["intrinsic_rank"] for r in rows]
    if len(set(learned)) < 2 or len(set(intrinsic)) < 2:
        return float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(scipy.stats.spearmanr(learned, intrinsic)[0])


def supervised_oracle_adapt(
    spec: ModelSpec,
    base,
    spectra: SpectralSet,
    heads: Mapping[int, np.ndarray],
    suite: Sequence[TaskData],
    state: MaskState,
    adam: AdamState | None = None,
    steps: int = 300,
    batch_size: int = 16,
    seed: int = 0,
    split: str = "test",
    monitor_size: int | None = DEFAULT_MONITOR_SIZE,
) -> tuple[MaskState, AdaptTrace]:
    """The adaptation loop with summed cross-entropy on labelled data.

    The trace gets one extra record after the last update, so it always
    holds ``steps + 1`` rows and a 0-step run records the initial loss.
    """
    batches = [_batch(task, split, "cross_entropy") for task in suite]
    inputs = [b.inputs for b in batches]
    labels = [np.asarray(b.labels) for b in batches]

    def objective(t, idx, logits):
        return loss_and_logit_grad(logits, labels[t][idx], "cross_entropy")

    final, trace = run_adaptation(
        spec, base, spectra, heads, inputs, state, adam or AdamState(), steps, objective,
        batch_size, seed, monitor_size=monitor_size,
    )
    weights = merged_weights(base, spectra, final)
    trace.append(steps, monitor_objective(spec, weights, heads, inputs, objective, monitor_size),
                 final.active_counts())
    return final, trace


def export_mask_heatmap(state: MaskState) -> str:
    """One 0/1 row per (task, layer) plus a per-layer count row per component index."""
    masks = state.masks()
    width = max(len(b) for b in masks.values())
    header = ["task", "layer"] + [f"c{r}" for r in range(width)]
    rows, counts = [], {}
    for (t, name), bits in masks.items():
        cells = [str(int(b)) for b in bits] + [""] * (width - len(bits))
        rows.append([t, name] + cells)
        counts[name] = counts.get(name, 0) + bits.astype(int)
    for name, c in counts.items():
        rows.append(["count", name] + [str(int(x)) for x in c] + [""] * (width - len(c)))
    return _csv(header, rows)


def parse_mask_heatmap(text: str) -> dict:
    """Inverse of :func:`export_mask_heatmap` (count rows are skipped)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header[:2] != ["task", "layer"]:
        raise ValueError("not a mask heatmap")
    out = {}
    for row in reader:
        if not row or row[0] == "count":
            continue
        cells = [c for c in row[2:] if c != ""]
        out[(int(row[0]), row[1])] = np.array([float(c) for c in cells])
    return out
