"""Task vectors, their per-layer SVDs, whitening and intrinsic rank."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .linalg import ShapeError, ThinSvd, svd_thin

BASE_KINDS = ("pretrained", "mean_of_finetuned")


@dataclass
class TaskVectorSet:
    base: dict[str, np.ndarray]
    per_task: list[dict[str, np.ndarray]]
    base_kind: str

    @property
    def num_tasks(self) -> int:
        return len(self.per_task)

    @property
    def layer_names(self) -> list[str]:
        return list(self.base)


def build_task_vectors(
    checkpoints: Sequence[Checkpoint | Mapping[str, np.ndarray]],
    base_kind: str = "pretrained",
    pretrained: Checkpoint | Mapping[str, np.ndarray] | None = None,
    layer_names: Sequence[str] | None = None,
) -> TaskVectorSet:
    """Differences of fine-tuned weights from the pretrained or mean weights.

    Only ``layer_names`` (default: the layers of ``pretrained``, else the
    layers shared by every checkpoint) take part.
    """
    if base_kind not in BASE_KINDS:
        raise ValueError(f"base_kind must be one of {BASE_KINDS}")
    mats = [ck.layers if isinstance(ck, Checkpoint) else dict(ck) for ck in checkpoints]
    if len(mats) < 1 or (base_kind == "mean_of_finetuned" and len(mats) < 2):
        raise ValueError("need at least two fine-tuned checkpoints for a mean base")
    pre = None
    if pretrained is not None:
        pre = pretrained.layers if isinstance(pretrained, Checkpoint) else dict(pretrained)
    if layer_names is None:
        if pre is not None:
            layer_names = list(pre)
        else:
            layer_names = [n for n in mats[0] if all(n in m for m in mats)]
    for name in layer_names:
        shapes = {m[name].shape for m in mats if name in m}
        if any(name not in m for m in mats) or len(shapes) != 1:
            raise ShapeError(f"layer {name!r} is missing or has mismatched shapes across checkpoints")
        if pre is not None and pre[name].shape not in shapes:
            raise ShapeError(f"layer {name!r} of the pretrained model has a different shape")

    if base_kind == "pretrained":
        if pre is None:
            raise ValueError("base_kind 'pretrained' needs the pretrained weights")
        base = {n: np.array(pre[n], dtype=np.float64) for n in layer_names}
    else:
        base = {}
        for n in layer_names:
            acc = np.zeros_like(mats[0][n], dtype=np.float64)
            for m in mats:
                acc = acc + m[n]
            base[n] = acc / len(mats)
    if base_kind == "pretrained":
        per_task = [{n: m[n] - base[n] for n in layer_names} for m in mats]
    else:
        # tau_i = mean_j (theta_i - theta_j): same value as theta_i - mean, but
        # antisymmetric pairs make tau_1 == -tau_2 exactly when T = 2
        per_task = []
        for mi in mats:
            vec = {}
            for n in layer_names:
                acc = np.zeros_like(base[n])
                for mj in mats:
                    acc = acc + (mi[n] - mj[n])
                vec[n] = acc / len(mats)
            per_task.append(vec)
    return TaskVectorSet(base=base, per_task=per_task, base_kind=base_kind)


@dataclass
class SpectralSet:
    """``svds[task][layer]`` thin SVD of each task vector (whitened frames when flagged)."""

    svds: list[dict[str, ThinSvd]]
    whitened: bool = False
    # layers whose concatenated frames were wider than the ambient dimension
    relaxed_layers: list[str] = field(default_factory=list)

    @property
    def num_tasks(self) -> int:
        return len(self.svds)

    @property
    def layer_names(self) -> list[str]:
        return list(self.svds[0]) if self.svds else []

    def k(self, layer: str) -> int:
        return self.svds[0][layer].k

    def to_checkpoint(self) -> Checkpoint:
        """On-disk cache form using ``.U``, ``.S``, ``.V`` suffixed layer names."""
        layers = {}
        for t, per_layer in enumerate(self.svds):
            for name, svd in per_layer.items():
                layers[f"task{t}.{name}.U"] = svd.u
                layers[f"task{t}.{name}.S"] = svd.s[None, :]
                layers[f"task{t}.{name}.V"] = svd.v
        return Checkpoint(
            layers,
            manifest={
                "kind": "spectra",
                "whitened": self.whitened,
                "relaxed_layers": self.relaxed_layers,
                "num_tasks": self.num_tasks,
                "layers": self.layer_names,
            },
        )

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "SpectralSet":
        m = ck.manifest
        svds = []
        for t in range(m["num_tasks"]):
            svds.append(
                {
                    name: ThinSvd(
                        u=ck[f"task{t}.{name}.U"],
                        s=ck[f"task{t}.{name}.S"][0],
                        v=ck[f"task{t}.{name}.V"],
                    )
                    for name in m["layers"]
                }
            )
        return cls(svds, whitened=m["whitened"], relaxed_layers=list(m["relaxed_layers"]))


def nearest_orthonormal(m: np.ndarray) -> np.ndarray:
    """Symmetric orthogonalization ``m (m^T m)^{-1/2}`` via the SVD of ``m``.

    When ``m`` has more columns than rows its singular values are clamped to 1,
    which gives the polar factor of the wide matrix.
    """
    f = svd_thin(m)
    return f.u @ f.v.T


def whiten_frames(frames: Sequence[np.ndarray]) -> tuple[list[np.ndarray], bool]:
    """Jointly orthogonalize per-task frames, then split them back.

    Returns the new frames and whether the concatenation was too wide for an
    exactly orthonormal result.
    """
    widths = [f.shape[1] for f in frames]
    cat = np.hstack(frames)
    white = nearest_orthonormal(cat)
    out, start = [], 0
    for w in widths:
        out.append(white[:, start : start + w])
        start += w
    return out, cat.shape[1] > cat.shape[0]


def decompose(tv: TaskVectorSet, whiten: bool = False) -> SpectralSet:
    svds = [{name: svd_thin(vec[name]) for name in tv.layer_names} for vec in tv.per_task]
    relaxed = []
    if whiten:
        for name in tv.layer_names:
            us, wide_u = whiten_frames([s[name].u for s in svds])
            vs, wide_v = whiten_frames([s[name].v for s in svds])
            if wide_u or wide_v:
                relaxed.append(name)
            for t, per_layer in enumerate(svds):
                # singular values are kept as they were before whitening
                per_layer[name] = ThinSvd(u=us[t], s=per_layer[name].s, v=vs[t])
    return SpectralSet(svds=svds, whitened=whiten, relaxed_layers=relaxed)


def intrinsic_rank(s, energy_fraction: float = 0.95) -> int:
    """Smallest count of leading components holding ``energy_fraction`` of sum(s**2)."""
    if not 0.0 < energy_fraction <= 1.0:
        raise ValueError("energy_fraction must lie in (0, 1]")
    s = np.asarray(s, dtype=np.float64)
    energy = s * s
    total = energy.sum()
    if total == 0.0:
        return 0
    cum = np.cumsum(energy) / total
    # guard the fraction=1 case against cumulative round-off
    cum[-1] = 1.0
    return int(np.searchsorted(cum, energy_fraction - 1e-15, side="left") + 1)


def weights_digest(layers: Mapping[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(layers):
        h.update(name.encode())
        h.update(np.ascontiguousarray(layers[name], dtype="<f8").tobytes())
    return h.hexdigest()


class SpectralCache:
    """Decompositions keyed by (checkpoint digest, base kind, whiten)."""

    def __init__(self):
        self._store: dict[tuple[str, str, bool], SpectralSet] = {}

    def get(self, tv: TaskVectorSet, whiten: bool) -> SpectralSet:
        digest = hashlib.sha256(
            "".join(weights_digest(v) for v in tv.per_task).encode() + weights_digest(tv.base).encode()
        ).hexdigest()
        key = (digest, tv.base_kind, bool(whiten))
        if key not in self._store:
            self._store[key] = decompose(tv, whiten)
        return self._store[key]

    def __len__(self) -> int:
        return len(self._store)
