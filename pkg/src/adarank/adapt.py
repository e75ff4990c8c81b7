"""Test-time adaptation of binary singular-component masks.

Each (task, layer) keeps one real logit per singular component.  The forward
pass uses the hard mask ``sigmoid(logit / T) >= 0.5``; the backward pass treats
the mask as ``sigmoid(logit / T)`` (straight-through estimator).  Masks and,
optionally, the per-(task, layer) merge coefficients are trained with Adam to
minimize the summed prediction entropy on unlabeled test batches.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .checkpoint import Checkpoint, CheckpointFormatError
from .linalg import ShapeError, ThinSvd
from .merge import masked_delta, topk_count
from .nn import Batch, ModelSpec, backward_with, entropy_grad, entropy_loss, forward
from .optim import AdamState
from .spectral import SpectralSet

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 10.0
# |initial logit|; Adam moves a logit by about lr per step, so this is the
# number of consistent steps (times lr) needed to flip a bit
DEFAULT_INIT_LOGIT = 0.05
DEFAULT_MONITOR_SIZE = 256
POLICIES = ("all_ones", "top_fraction", "per_task_share")


class AdaptationError(ArithmeticError):
    def __init__(self, message: str, trace: "AdaptTrace | None" = None):
        super().__init__(message)
        self.trace = trace


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def binarize(logits, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Hard mask ``1{sigmoid(logit / T) >= 0.5}``, i.e. ``logit >= 0``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return (np.asarray(logits, dtype=np.float64) >= 0.0).astype(np.float64)


def ste_backward(upstream, logits, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Gradient w.r.t. the logits through the relaxed mask ``sigmoid(logit / T)``."""
    upstream = np.asarray(upstream, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if upstream.shape != logits.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match logits {logits.shape}")
    sg = sigmoid(logits / temperature)
    return upstream * sg * (1.0 - sg) / temperature


def component_couplings(weight_grad: np.ndarray, svd: ThinSvd) -> np.ndarray:
    """``u_r^T G v_r`` for every component r."""
    if weight_grad.shape != svd.shape:
        raise ShapeError(f"weight gradient {weight_grad.shape} does not match factors {svd.shape}")
    return np.einsum("ir,ij,jr->r", svd.u, weight_grad, svd.v)


def mask_grad_from_weight_grad(
    weight_grad: np.ndarray, svd: ThinSvd, lam: float, mask=None
) -> tuple[np.ndarray, float]:
    """Chain rule through the masked merge.

    Returns ``dL/dB_r = lam * s_r * u_r^T G v_r`` and
    ``dL/dlam = sum_r B_r * s_r * u_r^T G v_r`` (``mask`` defaults to all ones).
    """
    proj = svd.s * component_couplings(np.asarray(weight_grad, dtype=np.float64), svd)
    b = np.ones(svd.k) if mask is None else np.asarray(mask, dtype=np.float64)
    return lam * proj, float(b @ proj)


@dataclass
class MaskState:
    logits: dict
    lam: dict
    temperature: float = DEFAULT_TEMPERATURE
    learn_mask: bool = True
    learn_lambda: bool = True
    range_restriction: float | None = None
    init_logit: float = DEFAULT_INIT_LOGIT

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.init_logit <= 0:
            raise ValueError("init_logit must be positive")

    def keys(self) -> list:
        return list(self.logits)

    def masks(self) -> dict:
        return {key: binarize(v, self.temperature) for key, v in self.logits.items()}

    def relaxed_masks(self) -> dict:
        return {key: sigmoid(v / self.temperature) for key, v in self.logits.items()}

    def active_counts(self) -> dict:
        return {key: int(binarize(v, self.temperature).sum()) for key, v in self.logits.items()}

    def copy(self) -> "MaskState":
        return MaskState(
            logits={k: v.copy() for k, v in self.logits.items()},
            lam=dict(self.lam),
            temperature=self.temperature,
            learn_mask=self.learn_mask,
            learn_lambda=self.learn_lambda,
            range_restriction=self.range_restriction,
            init_logit=self.init_logit,
        )

    def allowed(self, key) -> np.ndarray:
        """Components the mask may activate under the range restriction."""
        k = len(self.logits[key])
        ok = np.ones(k, dtype=bool)
        if self.range_restriction is not None:
            ok[topk_count(k, self.range_restriction) :] = False
        return ok


def mask_to_checkpoint(state: MaskState, manifest: Mapping | None = None) -> Checkpoint:
    """Logits and coefficients as ``task{t}.{layer}.logits`` / ``.lambda`` rows."""
    layers = {}
    for (t, name), logit in state.logits.items():
        layers[f"task{t}.{name}.logits"] = logit[None, :]
        layers[f"task{t}.{name}.lambda"] = np.array([[state.lam[(t, name)]]])
    meta = {
        "kind": "mask_state",
        "keys": [[t, name] for t, name in state.logits],
        "temperature": state.temperature,
        "learn_mask": state.learn_mask,
        "learn_lambda": state.learn_lambda,
        "range_restriction": state.range_restriction,
        "init_logit": state.init_logit,
        "active_bits": {f"task{t}.{name}": c for (t, name), c in state.active_counts().items()},
    }
    meta.update(manifest or {})
    return Checkpoint(layers, meta)


def mask_from_checkpoint(ck: Checkpoint) -> MaskState:
    m = ck.manifest
    if m.get("kind") != "mask_state":
        raise CheckpointFormatError("not a mask-state file")
    logits, lams = {}, {}
    for t, name in m["keys"]:
        logits[(int(t), name)] = np.array(ck[f"task{t}.{name}.logits"][0])
        lams[(int(t), name)] = float(ck[f"task{t}.{name}.lambda"][0, 0])
    return MaskState(
        logits,
        lams,
        temperature=float(m["temperature"]),
        learn_mask=bool(m["learn_mask"]),
        learn_lambda=bool(m["learn_lambda"]),
        range_restriction=m["range_restriction"],
        init_logit=float(m["init_logit"]),
    )


def init_mask(
    policy: str,
    spectra: SpectralSet,
    lam: float | Mapping = 0.3,
    fraction: float | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    learn_mask: bool = True,
    learn_lambda: bool = True,
    range_restriction: float | None = None,
    init_logit: float = DEFAULT_INIT_LOGIT,
) -> MaskState:
    """Logits whose hard mask reproduces the static method the run starts from.

    Active bits start at ``+init_logit`` and inactive ones at ``-init_logit``.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    mag = init_logit
    T = spectra.num_tasks
    logits, lams = {}, {}
    for name in spectra.layer_names:
        k = spectra.k(name)
        if policy == "all_ones":
            keep = k
        elif policy == "top_fraction":
            keep = topk_count(k, fraction)
        else:
            keep = k // T
        row = np.full(k, -mag)
        row[:keep] = mag
        for t in range(T):
            logits[(t, name)] = row.copy()
            lams[(t, name)] = float(lam) if isinstance(lam, (int, float)) else float(lam[(t, name)])
    state = MaskState(
        logits, lams, temperature, learn_mask, learn_lambda, range_restriction, init_logit
    )
    _apply_restriction(state)
    return state


def _apply_restriction(state: MaskState) -> None:
    if state.range_restriction is None:
        return
    mag = state.init_logit
    for key in state.logits:
        ok = state.allowed(key)
        state.logits[key][~ok] = -mag


@dataclass
class AdaptTrace:
    num_tasks: int
    layer_names: list[str]
    records: list[dict] = field(default_factory=list)

    def append(self, step: int, per_task: Sequence[float], active: Mapping) -> None:
        self.records.append(
            {
                "step": step,
                "total": float(np.sum(per_task)),
                "per_task": [float(x) for x in per_task],
                "active": {k: int(v) for k, v in active.items()},
            }
        )

    def __len__(self) -> int:
        return len(self.records)

    def totals(self) -> np.ndarray:
        return np.array([r["total"] for r in self.records])

    def header(self, loss_name: str = "entropy") -> list[str]:
        cols = ["step", f"total_{loss_name}"]
        cols += [f"{loss_name}_task_{t}" for t in range(self.num_tasks)]
        cols += [
            f"active_bits_task_{t}_layer_{l}"
            for t in range(self.num_tasks)
            for l in range(len(self.layer_names))
        ]
        return cols

    def to_csv(self, loss_name: str = "entropy") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header(loss_name))
        for r in self.records:
            row = [r["step"], f"{r['total']:.17g}"] + [f"{x:.17g}" for x in r["per_task"]]
            row += [
                r["active"][(t, name)] for t in range(self.num_tasks) for name in self.layer_names
            ]
            w.writerow(row)
        return buf.getvalue()


@dataclass
class UnlabeledStream:
    """Test inputs of one task; carries no labels by construction."""

    inputs: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def truncated(self, fraction: float) -> "UnlabeledStream":
        if not 0.0 < fraction <= 1.0:
            raise ValueError("data fraction must lie in (0, 1]")
        n = max(1, int(math.ceil(fraction * len(self) - 1e-9)))
        return UnlabeledStream(self.inputs[:n])


class CyclicSampler:
    """Cyclic passes over a shuffled index set, reshuffled every epoch."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n < 1:
            raise ValueError("empty stream")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        out = []
        need = self.batch_size
        while need:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            take = min(need, self.n - self.pos)
            out.append(self.order[self.pos : self.pos + take])
            self.pos += take
            need -= take
        return np.concatenate(out)


# objective(task_id, batch_indices, logits) -> (loss, dloss/dlogits)
Objective = Callable[[int, np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def entropy_objective(task_id: int, idx: np.ndarray, logits: np.ndarray):
    return entropy_loss(logits), entropy_grad(logits)


def merged_weights(base, spectra: SpectralSet, state: MaskState, relaxed: bool = False) -> dict:
    masks = state.relaxed_masks() if relaxed else state.masks()
    return {
        name: np.asarray(base[name], dtype=np.float64) + masked_delta(spectra, masks, state.lam, name)
        for name in spectra.layer_names
    }


def state_gradients(
    spec: ModelSpec,
    base,
    spectra: SpectralSet,
    heads: Mapping[int, np.ndarray],
    state: MaskState,
    batches: Sequence[tuple[int, np.ndarray, np.ndarray]],
    objective: Objective = entropy_objective,
    relaxed: bool = False,
    weights: Mapping[str, np.ndarray] | None = None,
):
    """Summed objective and its gradients w.r.t. mask logits and coefficients.

    ``batches`` holds ``(task_id, indices, inputs)``.  With ``relaxed`` the
    merge uses ``sigmoid(logit / T)`` instead of the hard mask, which makes the
    returned logit gradient exact for that smooth surrogate.
    """
    masks = state.relaxed_masks() if relaxed else state.masks()
    if weights is None:
        weights = merged_weights(base, spectra, state, relaxed)
    per_task = []
    wgrad = {name: np.zeros_like(w) for name, w in weights.items()}
    for task_id, idx, x in batches:
        bundle = backward_with(
            spec, weights, heads[task_id], x, lambda z, t=task_id, i=idx: objective(t, i, z)
        )
        per_task.append(bundle.loss_value)
        for name in wgrad:
            wgrad[name] += bundle.per_layer[name]
    g_logits, g_lam = {}, {}
    for (t, name), logit in state.logits.items():
        svd = spectra.svds[t][name]
        g_b, g_l = mask_grad_from_weight_grad(wgrad[name], svd, state.lam[(t, name)], masks[(t, name)])
        g_logits[(t, name)] = ste_backward(g_b, logit, state.temperature)
        g_lam[(t, name)] = g_l
    return per_task, g_logits, g_lam, wgrad


def monitor_objective(
    spec: ModelSpec,
    weights,
    heads: Mapping[int, np.ndarray],
    inputs: Sequence[np.ndarray],
    objective: Objective,
    monitor_size: int | None = DEFAULT_MONITOR_SIZE,
) -> list[float]:
    """Per-task objective on the first ``monitor_size`` inputs of each stream."""
    out = []
    for t, x in enumerate(inputs):
        idx = np.arange(len(x) if monitor_size is None else min(len(x), monitor_size))
        out.append(objective(t, idx, forward(spec, weights, heads, Batch(x[idx], None, t)))[0])
    return out


def run_adaptation(
    spec: ModelSpec,
    base,
    spectra: SpectralSet,
    heads: Mapping[int, np.ndarray],
    inputs: Sequence[np.ndarray],
    state: MaskState,
    adam: AdamState,
    steps: int,
    objective: Objective,
    batch_size: int = 16,
    seed: int = 0,
    on_step: Callable[[int, MaskState], list[float] | None] | None = None,
    monitor_size: int | None = DEFAULT_MONITOR_SIZE,
) -> tuple[MaskState, AdaptTrace]:
    """The optimization loop shared by entropy adaptation and the supervised oracle.

    Each trace record holds the objective, before that step's update, on a
    fixed monitoring set: the first ``monitor_size`` inputs of every stream
    (all of them when ``None``).  Gradients come from the sampled batches.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    state = state.copy()
    _apply_restriction(state)
    trace = AdaptTrace(spectra.num_tasks, spectra.layer_names)
    samplers = [
        CyclicSampler(len(x), batch_size, np.random.default_rng([seed, t])) for t, x in enumerate(inputs)
    ]
    allowed = {key: state.allowed(key) for key in state.logits}
    params = {}
    for key in state.logits:
        params[("mask",) + key] = state.logits[key]
        params[("lam",) + key] = np.array([state.lam[key]])

    for step in range(steps):
        weights = merged_weights(base, spectra, state)
        try:
            per_task = monitor_objective(spec, weights, heads, inputs, objective, monitor_size)
        except ValueError as exc:
            raise AdaptationError(f"objective failed at step {step}: {exc}", trace) from exc
        if not np.all(np.isfinite(per_task)):
            raise AdaptationError(f"non-finite objective at step {step}", trace)
        trace.append(step, per_task, state.active_counts())

        batches = []
        for t, sampler in enumerate(samplers):
            idx = sampler.next()
            batches.append((t, idx, inputs[t][idx]))
        try:
            batch_loss, g_logits, g_lam, _ = state_gradients(
                spec, base, spectra, heads, state, batches, objective, weights=weights
            )
        except ValueError as exc:
            raise AdaptationError(f"objective failed at step {step}: {exc}", trace) from exc
        if not np.all(np.isfinite(batch_loss)):
            raise AdaptationError(f"non-finite batch objective at step {step}", trace)

        grads = {}
        if state.learn_mask:
            for key, g in g_logits.items():
                grads[("mask",) + key] = np.where(allowed[key], g, 0.0)
        if state.learn_lambda:
            for key, g in g_lam.items():
                grads[("lam",) + key] = np.array([g])
        if grads:
            adam.step(params, grads)
            for key in state.logits:
                logit = params[("mask",) + key]
                logit[~allowed[key]] = -state.init_logit
                state.logits[key] = logit
                state.lam[key] = float(params[("lam",) + key][0])
        if on_step is not None:
            on_step(step, state)
    return state, trace


def adapt(
    spec: ModelSpec,
    base,
    spectra: SpectralSet,
    heads: Mapping[int, np.ndarray],
    streams: Sequence[UnlabeledStream],
    state: MaskState,
    adam: AdamState | None = None,
    steps: int = 300,
    batch_size: int = 16,
    seed: int = 0,
    data_fraction: float = 1.0,
) -> tuple[MaskState, AdaptTrace]:
    """Entropy-minimization adaptation on unlabeled per-task test streams."""
    if len(streams) != spectra.num_tasks:
        raise ValueError("need one stream per task")
    inputs = []
    for s in streams:
        if not isinstance(s, UnlabeledStream):
            s = UnlabeledStream(np.asarray(s, dtype=np.float64))
        if len(s) == 0:
            raise ValueError("empty test stream")
        inputs.append(s.truncated(data_fraction).inputs)
    adam = adam if adam is not None else AdamState()
    return run_adaptation(
        spec, base, spectra, heads, inputs, state, adam, steps, entropy_objective, batch_size, seed
    )


def incremental_update(weights, spectra: SpectralSet, old: MaskState, new: MaskState) -> dict:
    """Apply only the rank-1 terms of flipped bits; coefficients must be unchanged."""
    out = {name: w.copy() for name, w in weights.items()}
    old_m, new_m = old.masks(), new.masks()
    for (t, name), bits in new_m.items():
        if old.lam[(t, name)] != new.lam[(t, name)]:
            raise ValueError("incremental update needs unchanged coefficients")
        diff = bits - old_m[(t, name)]
        for r in np.flatnonzero(diff):
            svd = spectra.svds[t][name]
            out[name] += diff[r] * new.lam[(t, name)] * svd.s[r] * np.outer(svd.u[:, r], svd.v[:, r])
    return out
