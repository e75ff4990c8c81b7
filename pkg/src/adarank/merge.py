"""Static merging: averaging, Task Arithmetic, masked and top-k spectral merges.

Coefficients are stored per (task, layer) so that a single layer-wise value,
AdaMerging-style per-task values and learned values all share one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .linalg import ShapeError
from .spectral import SpectralSet, TaskVectorSet

METHODS = ("weight_average", "task_arithmetic", "topk_svd", "masked")
RANK_RULES = ("fraction", "per_task_share")

# Named presets: (base kind, whiten, lambda, rank rule, fraction).
PRESETS = {
    "ta": dict(base_kind="pretrained", whiten=False, lam=0.3, rank_rule=None, fraction=None),
    "cart": dict(base_kind="mean_of_finetuned", whiten=False, lam=0.5, rank_rule="fraction", fraction=0.16),
    "tsvm": dict(base_kind="pretrained", whiten=True, lam=1.0, rank_rule="per_task_share", fraction=None),
}

Lambda = dict  # (task, layer) -> float


def tied_lambda(value: float, num_tasks: int, layer_names: Sequence[str]) -> Lambda:
    return {(t, name): float(value) for t in range(num_tasks) for name in layer_names}


def _lam(lam, t: int, name: str) -> float:
    if isinstance(lam, (int, float)):
        return float(lam)
    try:
        return float(lam[(t, name)])
    except KeyError:
        raise KeyError(f"missing merge coefficient for task {t}, layer {name!r}") from None


@dataclass
class MergePlan:
    method: str
    base_kind: str = "pretrained"
    whiten: bool = False
    lam: Lambda | float = 0.3
    topk_fraction: float | None = None
    topk_rank_rule: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        has_topk = self.topk_rank_rule is not None
        if (self.method == "topk_svd") != has_topk:
            raise ValueError("top-k fields are required for, and only for, method 'topk_svd'")
        if has_topk:
            if self.topk_rank_rule not in RANK_RULES:
                raise ValueError(f"topk_rank_rule must be one of {RANK_RULES}")
            if self.topk_rank_rule == "fraction":
                check_fraction(self.topk_fraction)


def check_fraction(fraction) -> float:
    if fraction is None or not 0.0 < float(fraction) <= 1.0:
        raise ValueError(f"top-k fraction must lie in (0, 1], got {fraction}")
    return float(fraction)


def topk_count(k: int, fraction: float) -> int:
    """``floor(fraction * k)``, tolerant of binary round-off (0.29 * 100 -> 29)."""
    return int(math.floor(check_fraction(fraction) * k + 1e-9))


def merge_weight_average(checkpoints: Sequence[Checkpoint | Mapping], layer_names=None) -> dict[str, np.ndarray]:
    mats = [ck.layers if isinstance(ck, Checkpoint) else ck for ck in checkpoints]
    if len(mats) < 2:
        raise ValueError("weight averaging needs at least two checkpoints")
    names = layer_names or [n for n in mats[0] if all(n in m for m in mats)]
    out = {}
    for n in names:
        shapes = {m[n].shape for m in mats}
        if len(shapes) != 1:
            raise ShapeError(f"layer {n!r} has mismatched shapes {sorted(shapes)}")
        acc = np.zeros_like(mats[0][n], dtype=np.float64)
        for m in mats:
            acc = acc + m[n]
        out[n] = acc / len(mats)
    return out


def merge_task_arithmetic(base: Mapping[str, np.ndarray], tv: TaskVectorSet, lam) -> dict[str, np.ndarray]:
    """``base + sum_i lam[i, l] * tau_i^l`` per layer, tasks summed in index order."""
    out = {}
    for name in tv.layer_names:
        w = np.array(base[name], dtype=np.float64)
        for t, vec in enumerate(tv.per_task):
            w = w + _lam(lam, t, name) * vec[name]
        out[name] = w
    return out


def masked_delta(spectra: SpectralSet, masks, lam, name: str) -> np.ndarray:
    """``sum_i lam[i] * U_i diag(mask_i * s_i) V_i^T`` for one layer.

    Masks may be real-valued (the relaxed path used by gradient checks).
    """
    delta = None
    for t, per_layer in enumerate(spectra.svds):
        svd = per_layer[name]
        b = np.asarray(masks[(t, name)], dtype=np.float64)
        if b.shape != (svd.k,):
            raise ShapeError(f"mask for task {t}, layer {name!r} has length {b.shape}, expected {svd.k}")
        term = _lam(lam, t, name) * ((svd.u * (b * svd.s)) @ svd.v.T)
        delta = term if delta is None else delta + term
    return delta


def merge_masked(base: Mapping[str, np.ndarray], spectra: SpectralSet, masks, lam) -> dict[str, np.ndarray]:
    return {
        name: np.asarray(base[name], dtype=np.float64) + masked_delta(spectra, masks, lam, name)
        for name in spectra.layer_names
    }


def topk_masks(spectra: SpectralSet, rule: str, fraction: float | None = None) -> dict:
    """Deterministic leading-index masks implied by a rank rule."""
    masks = {}
    T = spectra.num_tasks
    for name in spectra.layer_names:
        k = spectra.k(name)
        if rule == "fraction":
            keep = topk_count(k, fraction)
        elif rule == "per_task_share":
            keep = k // T
        elif rule == "all":
            keep = k
        else:
            raise ValueError(f"unknown rank rule {rule!r}")
        bits = np.zeros(k)
        bits[:keep] = 1.0
        for t in range(T):
            masks[(t, name)] = bits.copy()
    return masks


def merge_topk(base: Mapping[str, np.ndarray], spectra: SpectralSet, plan: MergePlan) -> dict[str, np.ndarray]:
    if plan.method != "topk_svd":
        raise ValueError("merge_topk needs a plan with method 'topk_svd'")
    masks = topk_masks(spectra, plan.topk_rank_rule, plan.topk_fraction)
    return merge_masked(base, spectra, masks, plan.lam)
