"""Command-line entry point: gen, train, merge, adapt, eval, analyze.

Commands talk to each other only through files under ``--out``::

    data/suite.adrk                       generated train/test splits
    checkpoints/pretrained.adrk, task{t}.adrk
    merge/merged.adrk, merge/report.csv
    adapt/masks.adrk, adapt/trace.csv, adapt/merged.adrk
    eval/accuracy.csv
    analysis/*.csv

Each command also writes ``<dir>/manifest.json`` with the resolved config, its
digest, input and output digests and the tool version.  Exit codes: 0 success,
2 config error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import __version__
from .adapt import (
    POLICIES,
    UnlabeledStream,
    adapt,
    init_mask,
    mask_from_checkpoint,
    mask_to_checkpoint,
    merged_weights,
)
from .analysis import (
    component_sweep,
    export_mask_heatmap,
    rank_report,
    supervised_oracle_adapt,
    taylor_report,
)
from .bench import DEFAULT_PROFILE, PROFILES
from .checkpoint import Checkpoint, CheckpointFormatError, file_digest
from .merge import METHODS, PRESETS, MergePlan, merge_masked, merge_task_arithmetic, merge_topk, merge_weight_average
from .nn import ModelSpec
from .optim import AdamState
from .spectral import build_task_vectors, decompose, weights_digest
from .tasks import (
    FinetuneConfig,
    PretrainConfig,
    TaskSuiteSpec,
    evaluate,
    finetune,
    generate_suite,
    heads_from,
    model_spec_for,
    pretrain,
    suite_from_checkpoint,
    suite_to_checkpoint,
)

log = logging.getLogger("adarank")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
ANALYSES = ("sweep", "taylor", "rank", "heatmap", "oracle")


class ConfigError(ValueError):
    pass


class OutputExists(OSError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "profile": DEFAULT_PROFILE,
    "workers": 1,
    "suite": {
        "num_tasks": 4,
        "input_dim": 32,
        "classes_per_task": 4,
        "train_per_class": 200,
        "test_per_class": 200,
        "cluster_spread": 1.0,
        "separation": 6.0,
        "center_shift": 3.0,
        "difficulty_profile": [1, 2, 3, 4],
        "rotation_seed": None,  # default: seed
        "data_seed": None,  # default: seed + 100
    },
    "model": {"hidden_dims": [64, 64], "activation": "relu"},
    "pretrain": {"epochs": 2, "learning_rate": 1e-3, "batch_size": 64},
    "finetune": {"epochs": 20, "learning_rate": 5e-3, "batch_size": 32, "optimizer": "adam"},
    # None fields fall back to the profile's preset
    "merge": {
        "method": None,
        "base_kind": None,
        "whiten": None,
        "lam": None,
        "topk_fraction": None,
        "topk_rank_rule": None,
        "mask_file": None,
    },
    "adapt": {
        "steps": 300,
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "batch_size": 16,
        "data_fraction": 1.0,
        "temperature": 10.0,
        "init_logit": 0.05,
        "range_restriction": None,
        "policy": None,
        "learn_mask": None,
        "learn_lambda": None,
    },
    "analysis": {
        "select": ["sweep", "taylor", "rank", "heatmap"],
        "excluded_task": 0,
        "layers": None,
        "lam": None,
        "stride": 1,
        "top_fraction": 0.1,
        "loss": "cross_entropy",
        "epsilon": None,
        "energy_fraction": 0.95,
        "oracle_steps": 300,
    },
}


def _merge_into(defaults: Mapping, given: Mapping, where: str) -> dict:
    out = copy.deepcopy(dict(defaults))
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config section {where}{key!r} must be a mapping")
            out[key] = _merge_into(defaults[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: str | None, seed: int | None = None, profile: str | None = None, workers: int | None = None) -> dict:
    """Defaults, overlaid with the YAML file, then the command-line overrides."""
    given: Mapping = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            given = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(given, Mapping):
            raise ConfigError("config file must hold a mapping")
    cfg = _merge_into(DEFAULTS, given, "")
    if seed is not None:
        cfg["seed"] = seed
    if profile is not None:
        cfg["profile"] = profile
    if workers is not None:
        cfg["workers"] = workers
    return resolve(cfg)


def resolve(cfg: dict) -> dict:
    """Fill profile- and seed-dependent fields and validate every section."""
    cfg = copy.deepcopy(cfg)
    try:
        cfg["seed"] = int(cfg["seed"])
        cfg["workers"] = int(cfg["workers"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed and workers must be integers: {exc}") from exc
    if cfg["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    if cfg["profile"] not in PROFILES:
        raise ConfigError(f"unknown profile {cfg['profile']!r}; choose from {sorted(PROFILES)}")
    seed = cfg["seed"]
    s = cfg["suite"]
    if s["rotation_seed"] is None:
        s["rotation_seed"] = seed
    if s["data_seed"] is None:
        s["data_seed"] = seed + 100

    prof = PROFILES[cfg["profile"]]
    preset = PRESETS[prof["preset"]]
    m = cfg["merge"]
    if m["method"] is None:
        m["method"] = "task_arithmetic" if preset["rank_rule"] is None else "topk_svd"
    topk = m["method"] == "topk_svd"
    for key, pkey in (("base_kind", "base_kind"), ("whiten", "whiten"), ("lam", "lam")):
        if m[key] is None:
            m[key] = preset[pkey]
    if topk:
        if m["topk_rank_rule"] is None:
            m["topk_rank_rule"] = preset["rank_rule"] or "fraction"
        if m["topk_fraction"] is None and m["topk_rank_rule"] == "fraction":
            m["topk_fraction"] = preset["fraction"] or 0.16

    a = cfg["adapt"]
    for key in ("policy", "learn_mask", "learn_lambda"):
        if a[key] is None:
            a[key] = prof[key]
    an = cfg["analysis"]
    if an["lam"] is None:
        an["lam"] = preset["lam"]
    an["select"] = list(an["select"] or [])
    bad = [x for x in an["select"] if x not in ANALYSES]
    if bad:
        raise ConfigError(f"unknown analyses {bad}; choose from {list(ANALYSES)}")
    # construct the typed objects once so bad values surface as config errors
    try:
        suite_spec(cfg)
        model_spec(cfg)
        finetune_config(cfg)
        pretrain_config(cfg)
        merge_plan(cfg)
        if a["policy"] not in POLICIES:
            raise ValueError(f"adapt.policy must be one of {POLICIES}")
        if int(a["steps"]) < 0 or int(a["batch_size"]) < 1:
            raise ValueError("adapt.steps must be >= 0 and adapt.batch_size >= 1")
        if not 0.0 < float(a["data_fraction"]) <= 1.0:
            raise ValueError("adapt.data_fraction must lie in (0, 1]")
        if float(a["temperature"]) <= 0 or float(a["init_logit"]) <= 0 or float(a["lr"]) <= 0:
            raise ValueError("adapt.temperature, adapt.init_logit and adapt.lr must be positive")
        if an["loss"] not in ("cross_entropy", "entropy"):
            raise ValueError("analysis.loss must be cross_entropy or entropy")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def config_digest(cfg: Mapping) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def suite_spec(cfg) -> TaskSuiteSpec:
    return TaskSuiteSpec(**cfg["suite"])


def model_spec(cfg, ss: TaskSuiteSpec | None = None) -> ModelSpec:
    return model_spec_for(ss or suite_spec(cfg), tuple(cfg["model"]["hidden_dims"]), cfg["model"]["activation"])


def finetune_config(cfg) -> FinetuneConfig:
    return FinetuneConfig(seed=cfg["seed"], **cfg["finetune"])


def pretrain_config(cfg) -> PretrainConfig:
    return PretrainConfig(seed=cfg["seed"], **cfg["pretrain"])


def merge_plan(cfg) -> MergePlan:
    m = cfg["merge"]
    if m["method"] not in METHODS:
        raise ValueError(f"merge.method must be one of {METHODS}")
    topk = m["method"] == "topk_svd"
    return MergePlan(
        method=m["method"],
        base_kind=m["base_kind"],
        whiten=bool(m["whiten"]),
        lam=float(m["lam"]),
        topk_fraction=m["topk_fraction"] if topk else None,
        topk_rank_rule=m["topk_rank_rule"] if topk else None,
    )


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, cfg: dict, out: Path, command: str, subdir: str, force: bool):
        self.cfg, self.out, self.command, self.force = cfg, out, command, force
        self.dir = out / subdir
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.extra: dict[str, Any] = {}

    def rel(self, path: Path) -> str:
        return path.relative_to(self.out).as_posix()

    def need(self, relpath: str) -> Path:
        path = self.out / relpath
        if not path.is_file():
            raise FileNotFoundError(f"missing input {path}; run the producing command first")
        self.inputs[relpath] = file_digest(path)
        return path

    def load(self, relpath: str) -> Checkpoint:
        return Checkpoint.load(self.need(relpath))

    def check_free(self, names) -> None:
        existing = [n for n in names if (self.dir / n).exists()]
        if existing and not self.force:
            raise OutputExists(f"{self.dir} already holds {existing}; pass --force to overwrite")

    def _write(self, name: str, data: bytes) -> None:
        path = self.dir / name
        self.dir.mkdir(parents=True, exist_ok=True)
        new = hashlib.sha256(data).hexdigest()
        if path.exists():
            old = file_digest(path)
            if old != new:
                log.warning("replacing %s (digest %s -> %s)", self.rel(path), old[:12], new[:12])
        path.write_bytes(data)
        self.outputs[self.rel(path)] = new

    def write_checkpoint(self, name: str, ck: Checkpoint) -> None:
        self._write(name, ck.to_bytes())

    def write_text(self, name: str, text: str) -> None:
        self._write(name, text.encode("utf-8"))

    def finish(self) -> dict:
        manifest = {
            "command": self.command,
            "tool_version": __version__,
            "config_digest": config_digest(self.cfg),
            "config": self.cfg,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
        }
        manifest.update(self.extra)
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        return manifest


def _load_suite(run: Run):
    return suite_from_checkpoint(run.load("data/suite.adrk"))


def _load_checkpoints(run: Run, num_tasks: int):
    pre = run.load("checkpoints/pretrained.adrk")
    cks = [run.load(f"checkpoints/task{t}.adrk") for t in range(num_tasks)]
    return pre, cks


def _accuracy_rows(label: str, result: dict, num_tasks: int) -> list:
    cells = [
        f"{result['per_task'][t]:.17g}" if t in result["per_task"] else "" for t in range(num_tasks)
    ]
    return [label] + cells + [f"{result['mean']:.17g}"]


def _accuracy_csv(rows: list, num_tasks: int) -> str:
    header = ["model"] + [f"task_{t}" for t in range(num_tasks)] + ["mean"]
    return "\n".join(",".join(map(str, r)) for r in [header] + rows) + "\n"


def cmd_gen(cfg, out: Path, force: bool) -> dict:
    """Generate the synthetic task suite."""
    run = Run(cfg, out, "gen", "data", force)
    run.check_free(["suite.adrk"])
    ss = suite_spec(cfg)
    run.write_checkpoint("suite.adrk", suite_to_checkpoint(ss, generate_suite(ss)))
    return run.finish()


def cmd_train(cfg, out: Path, force: bool) -> dict:
    """Pretrain and fine-tune one checkpoint per task."""
    run = Run(cfg, out, "train", "checkpoints", force)
    ss, suite = _load_suite(run)
    names = ["pretrained.adrk"] + [f"task{t}.adrk" for t in range(ss.num_tasks)]
    run.check_free(names)
    spec = model_spec(cfg, ss)
    pre = pretrain(spec, suite, pretrain_config(cfg))
    fcfg = finetune_config(cfg)
    jobs = range(ss.num_tasks)
    if cfg["workers"] > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cfg["workers"]) as pool:
            cks = list(pool.map(lambda t: finetune(spec, pre, suite, t, fcfg), jobs))
    else:
        cks = [finetune(spec, pre, suite, t, fcfg) for t in jobs]
    run.write_checkpoint("pretrained.adrk", pre)
    for t, ck in enumerate(cks):
        run.write_checkpoint(f"task{t}.adrk", ck)
    run.extra["accuracy"] = {f"task{t}": ck.manifest["test_accuracy"] for t, ck in enumerate(cks)}
    return run.finish()


def _with_heads(spec: ModelSpec, weights, cks) -> dict:
    layers = {name: weights[name] for name in spec.layer_names}
    for t, head in sorted(heads_from(spec, cks).items()):
        layers[spec.head_name(t)] = head
    return layers


def cmd_merge(cfg, out: Path, force: bool) -> dict:
    """Static merge of the fine-tuned checkpoints."""
    run = Run(cfg, out, "merge", "merge", force)
    plan = merge_plan(cfg)
    mask_file = cfg["merge"]["mask_file"]
    if plan.method == "masked" and not mask_file:
        raise ConfigError("merge.method 'masked' needs merge.mask_file")
    ss, suite = _load_suite(run)
    run.check_free(["merged.adrk", "report.csv"])
    spec = model_spec(cfg, ss)
    pre, cks = _load_checkpoints(run, ss.num_tasks)
    if plan.method == "weight_average":
        weights = merge_weight_average(cks, spec.layer_names)
    else:
        tv = build_task_vectors(cks, plan.base_kind, pre, spec.layer_names)
        if plan.method == "task_arithmetic":
            weights = merge_task_arithmetic(tv.base, tv, plan.lam)
        elif plan.method == "topk_svd":
            weights = merge_topk(tv.base, decompose(tv, plan.whiten), plan)
        else:
            path = Path(mask_file)
            run.inputs[path.name] = file_digest(path)
            state = mask_from_checkpoint(Checkpoint.load(path))
            weights = merged_weights(tv.base, decompose(tv, plan.whiten), state)
    layers = _with_heads(spec, weights, cks)
    acc = evaluate(spec, weights, heads_from(spec, cks), suite)
    run.write_checkpoint("merged.adrk", Checkpoint(layers, {"kind": "merged", "method": plan.method}))
    run.write_text("report.csv", _accuracy_csv([_accuracy_rows(plan.method, acc, ss.num_tasks)], ss.num_tasks))
    run.extra["weights_digest"] = weights_digest(layers)
    run.extra["accuracy"] = acc["mean"]
    return run.finish()


def _initial_state(cfg, spectra):
    a = cfg["adapt"]
    return init_mask(
        a["policy"],
        spectra,
        lam=float(cfg["merge"]["lam"]),
        fraction=cfg["merge"]["topk_fraction"] if a["policy"] == "top_fraction" else None,
        temperature=float(a["temperature"]),
        learn_mask=bool(a["learn_mask"]),
        learn_lambda=bool(a["learn_lambda"]),
        range_restriction=a["range_restriction"],
        init_logit=float(a["init_logit"]),
    )


def _adam(cfg) -> AdamState:
    a = cfg["adapt"]
    return AdamState(lr=float(a["lr"]), beta1=float(a["beta1"]), beta2=float(a["beta2"]))


def _spectra_for(cfg, run: Run, ss):
    spec = model_spec(cfg, ss)
    pre, cks = _load_checkpoints(run, ss.num_tasks)
    m = cfg["merge"]
    tv = build_task_vectors(cks, m["base_kind"], pre, spec.layer_names)
    return spec, cks, tv, decompose(tv, bool(m["whiten"]))


def cmd_adapt(cfg, out: Path, force: bool) -> dict:
    """Test-time mask adaptation."""
    run = Run(cfg, out, "adapt", "adapt", force)
    ss, suite = _load_suite(run)
    run.check_free(["masks.adrk", "trace.csv", "merged.adrk"])
    spec, cks, tv, spectra = _spectra_for(cfg, run, ss)
    heads = heads_from(spec, cks)
    a = cfg["adapt"]
    state = _initial_state(cfg, spectra)
    # the adaptation path only ever sees label-free streams
    streams = [UnlabeledStream(task.test.inputs) for task in suite]
    final, trace = adapt(
        spec, tv.base, spectra, heads, streams, state, _adam(cfg),
        steps=int(a["steps"]), batch_size=int(a["batch_size"]), seed=cfg["seed"],
        data_fraction=float(a["data_fraction"]),
    )
    weights = merged_weights(tv.base, spectra, final)
    acc = evaluate(spec, weights, heads, suite)
    run.write_checkpoint("masks.adrk", mask_to_checkpoint(final, {"profile": cfg["profile"]}))
    run.write_text("trace.csv", trace.to_csv())
    run.write_checkpoint("merged.adrk", Checkpoint(_with_heads(spec, weights, cks), {"kind": "adapted"}))
    run.extra["accuracy"] = acc["mean"]
    return run.finish()


def cmd_eval(cfg, out: Path, force: bool) -> dict:
    """Accuracy table for individual, merged and adapted models."""
    run = Run(cfg, out, "eval", "eval", force)
    ss, suite = _load_suite(run)
    run.check_free(["accuracy.csv"])
    spec = model_spec(cfg, ss)
    _, cks = _load_checkpoints(run, ss.num_tasks)
    rows = []
    for t, ck in enumerate(cks):
        acc = evaluate(spec, ck.layers, {t: ck[spec.head_name(t)]}, [suite[t]])
        rows.append(_accuracy_rows(f"individual_task{t}", acc, ss.num_tasks))
    for label, rel in (("merged", "merge/merged.adrk"), ("adapted", "adapt/merged.adrk")):
        if (out / rel).is_file():
            ck = run.load(rel)
            heads = {t: ck[spec.head_name(t)] for t in range(ss.num_tasks)}
            rows.append(_accuracy_rows(label, evaluate(spec, ck.layers, heads, suite), ss.num_tasks))
    run.write_text("accuracy.csv", _accuracy_csv(rows, ss.num_tasks))
    return run.finish()


def cmd_analyze(cfg, out: Path, force: bool) -> dict:
    """Sweeps, Taylor terms, rank report, heatmap, oracle."""
    run = Run(cfg, out, "analyze", "analysis", force)
    an = cfg["analysis"]
    select = an["select"]
    if not select:
        log.warning("no analyses selected; writing an empty manifest")
        run.extra["warning"] = "no analyses selected"
        return run.finish()
    ss, suite = _load_suite(run)
    spec = model_spec(cfg, ss)
    pre, cks = _load_checkpoints(run, ss.num_tasks)
    heads = heads_from(spec, cks)
    layers = an["layers"] or spec.layer_names
    i = int(an["excluded_task"])
    if not 0 <= i < ss.num_tasks:
        raise ConfigError(f"analysis.excluded_task {i} out of range")
    planned = []
    if "sweep" in select:
        planned += [f"sweep_task{i}_{l}.csv" for l in layers]
    if "taylor" in select:
        planned += [f"taylor_task{i}_{l}.csv" for l in layers]
    planned += [n for key, n in (("rank", "rank.csv"), ("heatmap", "heatmap.csv"), ("oracle", "oracle_trace.csv")) if key in select]
    run.check_free(planned)

    if "sweep" in select or "taylor" in select:
        # sweeps need the plain (unwhitened) factors of each task vector
        tv = build_task_vectors(cks, cfg["merge"]["base_kind"], pre, spec.layer_names)
        plain = decompose(tv, whiten=False)
        kw = dict(lam=float(an["lam"]), stride=int(an["stride"]), top_fraction=an["top_fraction"], loss_kind=an["loss"])
        for l in layers:
            if "sweep" in select:
                rep = component_sweep(spec, tv.base, tv, plain, heads, suite, i, l, workers=cfg["workers"], **kw)
                run.write_text(f"sweep_task{i}_{l}.csv", rep.to_csv())
            if "taylor" in select:
                rep = taylor_report(spec, tv.base, tv, plain, heads, suite, i, l, epsilon=an["epsilon"], **kw)
                run.write_text(f"taylor_task{i}_{l}.csv", rep.to_csv())
    if "rank" in select or "heatmap" in select:
        state = mask_from_checkpoint(run.load("adapt/masks.adrk"))
        _, _, _, spectra = _spectra_for(cfg, run, ss)
        if "rank" in select:
            rep = rank_report(state, spectra, float(an["energy_fraction"]))
            run.write_text("rank.csv", rep.to_csv())
            run.extra["rank_correlation"] = rep.correlation
        if "heatmap" in select:
            run.write_text("heatmap.csv", export_mask_heatmap(state))
    if "oracle" in select:
        _, _, tv, spectra = _spectra_for(cfg, run, ss)
        a = cfg["adapt"]
        _, trace = supervised_oracle_adapt(
            spec, tv.base, spectra, heads, suite, _initial_state(cfg, spectra), _adam(cfg),
            steps=int(an["oracle_steps"]), batch_size=int(a["batch_size"]), seed=cfg["seed"],
        )
        run.write_text("oracle_trace.csv", trace.to_csv("cross_entropy"))
    return run.finish()


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "merge": cmd_merge,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adarank", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config (every field optional)")
    common.add_argument("--out", default="runs/default", help="output directory")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--profile", choices=sorted(PROFILES), help="named method preset")
    common.add_argument("--workers", type=int, help="max concurrent workers")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        cfg = load_config(args.config, args.seed, args.profile, args.workers)
        manifest = COMMANDS[args.command](cfg, Path(args.out), args.force)
    except CheckpointFormatError as exc:
        log.error("bad file: %s", exc)
        return EXIT_IO
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG
    for rel, digest in manifest["outputs"].items():
        log.info("wrote %s %s", rel, digest[:12])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
