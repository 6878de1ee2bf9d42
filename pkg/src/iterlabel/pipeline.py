"""Iteration orchestration: predict, merge, record, repeat."""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .label_io import (
    LabelFormatError,
    Manifest,
    open_dataset,
    read_predictions_file,
    write_dataset,
    write_predictions,
)
from .merge import IterationStats, count_stats, merge_labels
from .metrics import MetricsReport, evaluate
from .model import DEFAULT_KEYPOINTS, SPLITS, LabelSet
from .synth import NoiseProfile, synth_predict

log = logging.getLogger(__name__)

BUILTIN_SYNTH = "builtin:synth"


class ConfigError(ValueError):
    pass


class IterationFailed(RuntimeError):
    """An iteration could not complete; ``__cause__`` holds the underlying error."""

    def __init__(self, iteration: int, message: str):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


class PredictorFailed(IterationFailed):
    def __init__(self, iteration: int, exit_code: int, diagnostics: str = ""):
        self.exit_code = exit_code
        self.diagnostics = diagnostics
        msg = f"predictor exited with code {exit_code}"
        if diagnostics:
            msg += f": {diagnostics.strip()[-2000:]}"
        super().__init__(iteration, msg)


@dataclass(frozen=True)
class PipelineConfig:
    dataset_root: str
    work_dir: str
    conf_threshold: float = 0.7
    nms_iou: float = 0.3
    iterations: int = 4
    keypoint_count: int = DEFAULT_KEYPOINTS
    predictor_command: str = BUILTIN_SYNTH
    splits_to_refine: tuple[str, ...] = SPLITS
    seed: int = 0
    noise: dict = field(default_factory=dict)
    synth_truth: str | None = None
    eval_against: str | None = None
    eval_splits: tuple[str, ...] | None = None
    converge_epsilon: float | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.conf_threshold <= 1:
            raise ConfigError("conf_threshold must be in [0,1]")
        if not 0 <= self.nms_iou <= 1:
            raise ConfigError("nms_iou must be in [0,1]")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.keypoint_count < 1:
            raise ConfigError("keypoint_count must be >= 1")
        for name in ("splits_to_refine", "eval_splits"):
            value = getattr(self, name)
            if value is not None:
                value = tuple(value)
                object.__setattr__(self, name, value)
                if not set(value) <= set(SPLITS):
                    raise ConfigError(f"{name} must be a subset of {SPLITS}")
        if "seed" in self.noise:
            raise ConfigError("noise.seed is derived from the top-level seed")
        try:
            NoiseProfile.from_dict(self.noise)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"noise: {exc}") from None
        if not self.predictor_command.strip():
            raise ConfigError("predictor_command is empty")

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> PipelineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for required in ("dataset_root", "work_dir"):
            if required not in data:
                raise ConfigError(f"missing config key {required!r}")
        data = dict(data)
        if base is not None:
            for key in ("dataset_root", "work_dir", "synth_truth", "eval_against"):
                if data.get(key) is not None:
                    data[key] = str(base / Path(data[key]))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("splits_to_refine", "eval_splits"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    def profile(self, iteration: int) -> NoiseProfile:
        seed = int(np.random.SeedSequence([self.seed, iteration]).generate_state(1, np.uint64)[0])
        return NoiseProfile(**self.noise, seed=seed)


def load_config(path: Path | str) -> PipelineConfig:
    """Read a JSON or YAML config; relative paths resolve against its directory."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return PipelineConfig.from_dict(data, base=path.parent)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def iter_dir(cfg: PipelineConfig, i: int) -> Path:
    return Path(cfg.work_dir) / f"iter{i}"


@dataclass(frozen=True)
class IterationOutcome:
    labels: LabelSet
    stats: IterationStats
    predictor: dict


def _run_predictor(cfg: PipelineConfig, i: int, manifest_path: Path, out: Path) -> dict:
    args = [
        tok.replace("{manifest}", str(manifest_path)).replace("{out}", str(out))
        for tok in shlex.split(cfg.predictor_command)
    ]
    log.info("iteration %d: running %s", i, " ".join(args))
    try:
        proc = subprocess.run(args, capture_output=True, text=True)
    except OSError as exc:
        raise PredictorFailed(i, 127, str(exc)) from exc
    if proc.returncode != 0:
        raise PredictorFailed(i, proc.returncode, proc.stderr)
    if not out.exists():
        raise PredictorFailed(i, 0, f"predictor did not write {out}")
    return {"command": cfg.predictor_command, "exit_code": 0}


def run_iteration(
    cfg: PipelineConfig,
    i: int,
    current: LabelSet,
    manifest: Manifest,
    baseline: LabelSet | None = None,
    truth: LabelSet | None = None,
) -> IterationOutcome:
    """Advance ``current`` (iteration ``i``) by one predict-and-merge round.

    ``truth`` is what the built-in predictor looks at; by default it
    re-predicts the current labels.
    """
    here = iter_dir(cfg, i)
    preds_path = here / "predictions.jsonl"
    try:
        write_dataset(here, manifest, current)
        if cfg.predictor_command == BUILTIN_SYNTH:
            source = truth if truth is not None else current
            preds = synth_predict(source, cfg.profile(i), manifest, iteration=i + 1)
            preds_path.write_text(write_predictions(preds), encoding="utf-8")
            info = {"command": BUILTIN_SYNTH, "exit_code": 0}
        else:
            info = _run_predictor(cfg, i, here / "manifest.jsonl", preds_path)
        preds = read_predictions_file(preds_path, manifest, iteration=i + 1)
        nxt = merge_labels(
            current, preds, manifest, cfg.conf_threshold, cfg.nms_iou, cfg.splits_to_refine
        )
        stats = count_stats(nxt, manifest, baseline)
        there = iter_dir(cfg, i + 1)
        write_dataset(there, manifest, nxt)
        (there / "stats.json").write_text(dump_json(stats.to_dict()), encoding="utf-8")
    except IterationFailed:
        raise
    except (LabelFormatError, OSError) as exc:
        raise IterationFailed(i, str(exc)) from exc
    log.info("iteration %d -> %d: %d labels", i, i + 1, nxt.count())
    return IterationOutcome(nxt, stats, info)


@dataclass
class RunReport:
    config: dict
    stats: list[IterationStats] = field(default_factory=list)
    metrics: list[MetricsReport | None] = field(default_factory=list)
    predictor: list[dict | None] = field(default_factory=list)
    failure: dict | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "iterations": [
                {
                    "stats": s.to_dict(),
                    "metrics": m.to_dict() if m is not None else None,
                    "predictor": p,
                }
                for s, m, p in zip(self.stats, self.metrics, self.predictor)
            ],
            "failure": self.failure,
        }


def _load_reference(path: str, manifest: Manifest, what: str) -> tuple[Manifest, LabelSet]:
    ref_manifest, labels = open_dataset(path, manifest.keypoint_count)
    if set(ref_manifest.ids()) != set(manifest.ids()):
        raise ConfigError(f"{what} dataset at {path} does not cover the same images")
    return ref_manifest, labels


def run_pipeline(cfg: PipelineConfig) -> RunReport:
    manifest, labels = open_dataset(cfg.dataset_root, cfg.keypoint_count)
    truth = None
    if cfg.synth_truth is not None:
        truth = _load_reference(cfg.synth_truth, manifest, "synth_truth")[1]
    held = _load_reference(cfg.eval_against, manifest, "eval_against") if cfg.eval_against else None

    work = Path(cfg.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    report = RunReport(cfg.to_dict())
    baseline = labels

    def record(ls: LabelSet, stats: IterationStats, predictor: dict | None) -> None:
        report.stats.append(stats)
        report.predictor.append(predictor)
        if held is None:
            report.metrics.append(None)
        else:
            ref_manifest, ref_labels = held
            report.metrics.append(evaluate(ref_labels, ls.entries, ref_manifest, cfg.eval_splits))

    stats0 = count_stats(labels, manifest, baseline)
    write_dataset(iter_dir(cfg, 0), manifest, labels)
    (iter_dir(cfg, 0) / "stats.json").write_text(dump_json(stats0.to_dict()), encoding="utf-8")
    record(labels, stats0, None)

    current = labels
    for i in range(cfg.iterations):
        try:
            outcome = run_iteration(cfg, i, current, manifest, baseline, truth)
        except IterationFailed as exc:
            report.failure = {"iteration": i, "error": str(exc)}
            if isinstance(exc, PredictorFailed):
                report.failure["exit_code"] = exc.exit_code
            _write_report(work, report)
            raise
        record(outcome.labels, outcome.stats, outcome.predictor)
        gained = outcome.labels.count() - current.count()
        current = outcome.labels
        if cfg.converge_epsilon is not None and gained < cfg.converge_epsilon:
            log.info("converged after iteration %d (+%d labels)", i + 1, gained)
            break
    _write_report(work, report)
    return report


def _write_report(work: Path, report: RunReport) -> None:
    (work / "report.json").write_text(dump_json(report.to_dict()), encoding="utf-8")
