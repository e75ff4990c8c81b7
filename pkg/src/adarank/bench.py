"""End-to-end desk-scale runs shared by the CLI, the demos and the benchmark tests.

A single integer seed fixes everything: the suite (rotation seed ``seed``,
data seed ``seed + 100``), pretraining, fine-tuning and adaptation.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adapt import MaskState, UnlabeledStream, adapt, init_mask, merged_weights
from .checkpoint import Checkpoint
from .merge import PRESETS, merge_masked, merge_task_arithmetic, topk_masks
from .nn import ModelSpec
from .optim import AdamState
from .spectral import SpectralCache, SpectralSet, TaskVectorSet, build_task_vectors
from .tasks import (
    FinetuneConfig,
    PretrainConfig,
    TaskData,
    TaskSuiteSpec,
    evaluate,
    finetune,
    generate_suite,
    heads_from,
    model_spec_for,
    pretrain,
)

# profile -> static preset, mask init policy, learnable parts
PROFILES = {
    "ta": dict(preset="ta", policy="all_ones", learn_mask=True, learn_lambda=True),
    "cart": dict(preset="cart", policy="top_fraction", learn_mask=True, learn_lambda=True),
    "tsvm": dict(preset="tsvm", policy="per_task_share", learn_mask=True, learn_lambda=True),
    "adamerging-ablation": dict(preset="ta", policy="all_ones", learn_mask=False, learn_lambda=True),
    "adarank": dict(preset="ta", policy="all_ones", learn_mask=True, learn_lambda=True),
}
DEFAULT_PROFILE = "adarank"


def suite_spec_for(seed: int, base: TaskSuiteSpec | None = None) -> TaskSuiteSpec:
    return dataclasses.replace(base or TaskSuiteSpec(), rotation_seed=seed, data_seed=seed + 100)


@dataclass
class Workbench:
    seed: int
    suite_spec: TaskSuiteSpec
    suite: list[TaskData]
    spec: ModelSpec
    pretrained: Checkpoint
    finetuned: list[Checkpoint]
    cache: SpectralCache = field(default_factory=SpectralCache)

    @property
    def heads(self) -> dict[int, np.ndarray]:
        return heads_from(self.spec, self.finetuned)

    @property
    def streams(self) -> list[UnlabeledStream]:
        return [UnlabeledStream(t.test.inputs) for t in self.suite]

    def individual_accuracies(self) -> list[float]:
        return [float(ck.manifest["test_accuracy"]) for ck in self.finetuned]

    def task_vectors(self, base_kind: str) -> TaskVectorSet:
        return build_task_vectors(
            self.finetuned, base_kind, self.pretrained, layer_names=self.spec.layer_names
        )

    def spectra(self, base_kind: str, whiten: bool = False) -> tuple[TaskVectorSet, SpectralSet]:
        tv = self.task_vectors(base_kind)
        return tv, self.cache.get(tv, whiten)

    def accuracy(self, weights) -> dict:
        return evaluate(self.spec, weights, self.heads, self.suite)


def prepare(
    seed: int = 0,
    suite_spec: TaskSuiteSpec | None = None,
    finetune_config: FinetuneConfig | None = None,
    pretrain_config: PretrainConfig | None = None,
    hidden_dims=(64, 64),
    workers: int = 1,
) -> Workbench:
    """Generate the suite, pretrain, and fine-tune one checkpoint per task."""
    ss = suite_spec or suite_spec_for(seed)
    suite = generate_suite(ss)
    spec = model_spec_for(ss, hidden_dims)
    pcfg = pretrain_config or PretrainConfig(seed=seed)
    fcfg = finetune_config or FinetuneConfig(seed=seed)
    pre = pretrain(spec, suite, pcfg)

    def job(t):
        return finetune(spec, pre, suite, t, fcfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cks = list(pool.map(job, range(ss.num_tasks)))
    else:
        cks = [job(t) for t in range(ss.num_tasks)]
    return Workbench(seed, ss, suite, spec, pre, cks)


def static_merge(wb: Workbench, preset: str) -> dict[str, np.ndarray]:
    p = PRESETS[preset]
    tv, sp = wb.spectra(p["base_kind"], p["whiten"])
    if p["rank_rule"] is None:
        return merge_task_arithmetic(tv.base, tv, p["lam"])
    return merge_masked(tv.base, sp, topk_masks(sp, p["rank_rule"], p["fraction"]), p["lam"])


def initial_state(wb: Workbench, profile: str, **overrides) -> tuple[TaskVectorSet, SpectralSet, MaskState]:
    prof = PROFILES[profile]
    p = PRESETS[prof["preset"]]
    tv, sp = wb.spectra(p["base_kind"], p["whiten"])
    kw = dict(lam=p["lam"], fraction=p["fraction"], learn_mask=prof["learn_mask"], learn_lambda=prof["learn_lambda"])
    kw.update(overrides)
    return tv, sp, init_mask(prof["policy"], sp, **kw)


def run_profile(
    wb: Workbench,
    profile: str = DEFAULT_PROFILE,
    steps: int = 300,
    data_fraction: float = 1.0,
    adam: AdamState | None = None,
    batch_size: int = 16,
    **overrides,
):
    """Adapt from a profile's initial state; returns (accuracy, final state, trace, spectra)."""
    tv, sp, state = initial_state(wb, profile, **overrides)
    final, trace = adapt(
        wb.spec, tv.base, sp, wb.heads, wb.streams, state, adam or AdamState(),
        steps=steps, batch_size=batch_size, seed=wb.seed, data_fraction=data_fraction,
    )
    acc = wb.accuracy(merged_weights(tv.base, sp, final))
    return acc, final, trace, sp


def moving_average_fraction(values, window: int = 20) -> float:
    """Share of steps where the ``window``-step moving average does not increase."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) <= window:
        raise ValueError("trace shorter than the averaging window")
    ma = np.convolve(values, np.ones(window) / window, mode="valid")
    return float(np.mean(np.diff(ma) <= 0.0))
