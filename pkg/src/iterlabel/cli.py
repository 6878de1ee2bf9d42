"""Command-line interface.

Exit codes: 0 success, 1 validation or metric failure, 2 predictor failure,
3 I/O, configuration or usage error.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import label_io
from .geometry import confidence_filter, nms
from .label_io import LabelFormatError, open_dataset
from .merge import count_stats, merge_labels
from .metrics import evaluate
from .model import SPLITS
from .pipeline import ConfigError, IterationFailed, PredictorFailed, dump_json, load_config, run_pipeline
from .synth import NoiseProfile, hide_labels, make_fixture, synth_predict

EXIT_INVALID, EXIT_PREDICTOR, EXIT_IO = 1, 2, 3

log = logging.getLogger(__name__)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        click.echo(text, nl=False)
    else:
        out.write_text(text, encoding="utf-8")


@click.group()
@click.option("-v", "--verbose", count=True)
def cli(verbose):
    """Iterative pseudo-labeling tools for YOLO-pose datasets."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(message)s", datefmt="%H:%M:%S")


@cli.command("validate")
@click.argument("root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--keypoints", "-k", type=int, default=None, help="Expected keypoints per instance.")
def validate_cmd(root, keypoints):
    """Check the manifest and every label file under ROOT."""
    manifest = label_io.load_manifest(root, keypoints)
    failures = 0
    labels = 0
    for rec in manifest.records:
        path = label_io.label_path(root, rec)
        if not path.exists():
            continue
        try:
            labels += len(label_io.parse_label_file(path.read_text(encoding="utf-8"), manifest.keypoint_count))
        except LabelFormatError as exc:
            failures += 1
            click.echo(f"{path}: {exc}", err=True)
    if failures:
        click.echo(f"{failures} invalid label file(s)", err=True)
        sys.exit(EXIT_INVALID)
    click.echo(f"ok: {len(manifest)} images, {labels} labels, K={manifest.keypoint_count}")


@cli.command("stats")
@click.argument("root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--baseline", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None)
def stats_cmd(root, baseline):
    """Print image and label counts per split as JSON."""
    manifest, labels = open_dataset(root)
    base = None
    if baseline is not None:
        base = label_io.load_dataset(baseline, manifest)
    click.echo(dump_json(count_stats(labels, manifest, base).to_dict()), nl=False)


@cli.command("filter")
@click.argument("preds", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--conf", "conf", type=click.FloatRange(0, 1), default=0.7, show_default=True)
@click.option("--nms", "nms_iou", type=click.FloatRange(0, 1), default=0.3, show_default=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def filter_cmd(preds, conf, nms_iou, manifest, out):
    """Apply the confidence gate and NMS to a predictions file."""
    m = None
    if manifest is not None:
        m = label_io.read_manifest(manifest.read_text(encoding="utf-8"))
    grouped = label_io.read_predictions_file(preds, m)
    kept = {k: nms(confidence_filter(v, conf), nms_iou) for k, v in grouped.items()}
    _emit(label_io.write_predictions(kept), out)


@cli.command("merge")
@click.argument("root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("preds", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("-o", "--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--conf", "conf", type=click.FloatRange(0, 1), default=0.7, show_default=True)
@click.option("--nms", "nms_iou", type=click.FloatRange(0, 1), default=0.3, show_default=True)
@click.option("--split", "splits", type=click.Choice(SPLITS), multiple=True, help="Splits to refine (default: all).")
def merge_cmd(root, preds, out, conf, nms_iou, splits):
    """Merge PREDS into the labels at ROOT and write the result to OUT."""
    manifest, labels = open_dataset(root)
    grouped = label_io.read_predictions_file(preds, manifest)
    merged = merge_labels(labels, grouped, manifest, conf, nms_iou, splits or SPLITS)
    label_io.write_dataset(out, manifest, merged)
    stats = count_stats(merged, manifest, labels)
    (out / "stats.json").write_text(dump_json(stats.to_dict()), encoding="utf-8")
    click.echo(dump_json(stats.to_dict()), nl=False)


@cli.command("eval")
@click.option("--gt", "gt", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--pred", "pred", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--split", "splits", type=click.Choice(SPLITS), multiple=True, help="Restrict to splits.")
def eval_cmd(gt, pred, splits):
    """Score a predictions file against the labels at --gt."""
    manifest, labels = open_dataset(gt)
    grouped = label_io.read_predictions_file(pred, manifest)
    report = evaluate(labels, grouped, manifest, splits or None)
    click.echo(dump_json(report.to_dict()), nl=False)


@cli.command("run")
@click.option("--config", "config", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--eval-against", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None)
def run_cmd(config, eval_against):
    """Run the full iterative labeling loop described by a config file."""
    cfg = load_config(config)
    if eval_against is not None:
        cfg = type(cfg).from_dict({**cfg.to_dict(), "eval_against": str(eval_against)})
    report = run_pipeline(cfg)
    for s in report.stats:
        d = s.to_dict()
        click.echo(f"iter{d['iteration']}: labels {d['labels']} growth {d.get('growth_pct', {})}")
    click.echo(f"report: {Path(cfg.work_dir) / 'report.json'}")


@cli.command("synth")
@click.option("--profile", "profile", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.argument("root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--iteration", type=click.IntRange(min=1), default=1, show_default=True)
def synth_cmd(profile, root, out, iteration):
    """Generate noisy predictions for the labels at ROOT."""
    try:
        prof = NoiseProfile.from_dict(json.loads(profile.read_text(encoding="utf-8")))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{profile}: {exc}") from None
    manifest, labels = open_dataset(root)
    _emit(label_io.write_predictions(synth_predict(labels, prof, manifest, iteration)), out)


@cli.command("fixture")
@click.argument("out", type=click.Path(file_okay=False, path_type=Path))
@click.option("--train", "n_train", type=click.IntRange(min=0), default=100, show_default=True)
@click.option("--val", "n_val", type=click.IntRange(min=0), default=25, show_default=True)
@click.option("--train-labels", type=click.IntRange(min=0), default=None, help="Default: one per image.")
@click.option("--val-labels", type=click.IntRange(min=0), default=None, help="Default: one per image.")
@click.option("--keypoints", "-k", type=click.IntRange(min=1), default=51, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--hide", type=click.FloatRange(0, 1), default=0.0, help="Fraction of labels to withhold from OUT.")
@click.option("--truth-out", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Also write the complete labels here.")
def fixture_cmd(out, n_train, n_val, train_labels, val_labels, keypoints, seed, hide, truth_out):
    """Write a synthetic dataset with exact per-split counts to OUT."""
    manifest, labels = make_fixture(
        n_train,
        n_val,
        n_train if train_labels is None else train_labels,
        n_val if val_labels is None else val_labels,
        keypoints,
        seed,
    )
    if truth_out is not None:
        label_io.write_dataset(truth_out, manifest, labels)
    label_io.write_dataset(out, manifest, hide_labels(labels, hide, seed) if hide else labels)
    click.echo(f"wrote {len(manifest)} images to {out}")


def main(argv=None) -> None:
    try:
        rv = cli.main(args=argv, prog_name="iterlabel", standalone_mode=False)
    except click.ClickException as exc:
        # usage errors share the I/O code so that 2 always means the predictor failed
        exc.show()
        sys.exit(EXIT_IO)
    except click.Abort:
        sys.exit(1)
    except PredictorFailed as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_PREDICTOR)
    except IterationFailed as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID if isinstance(exc.__cause__, LabelFormatError) else EXIT_IO)
    except (ConfigError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)
    except (LabelFormatError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    sys.exit(rv if isinstance(rv, int) else 0)


if __name__ == "__main__":
    main()
