import json
import shlex
import sys
from pathlib import Path

import pytest

from iterlabel import label_io
from iterlabel.merge import growth_pct
from iterlabel.pipeline import (
    ConfigError,
    IterationFailed,
    PipelineConfig,
    PredictorFailed,
    load_config,
    run_iteration,
    run_pipeline,
)
from iterlabel.synth import hide_labels, make_fixture


@pytest.fixture
def dataset(tmp_path):
    manifest, labels = make_fixture(160, 40, 200, 50, keypoint_count=5, seed=2)
    label_io.write_dataset(tmp_path / "truth", manifest, labels)
    label_io.write_dataset(tmp_path / "data", manifest, hide_labels(labels, 0.3, seed=2))
    return tmp_path


def _cfg(root, **kw):
    return PipelineConfig(dataset_root=str(root / "data"), work_dir=str(root / "work"), keypoint_count=5, **kw)


def _count_lines(root: Path):
    counts = {}
    for split in ("train", "val"):
        counts[split] = sum(
            sum(1 for line in p.read_text().splitlines() if line.strip())
            for p in (root / "labels" / split).glob("*.txt")
        )
    return counts


def test_zero_iterations(dataset):
    report = run_pipeline(_cfg(dataset, iterations=0))
    assert len(report.stats) == 1
    assert report.stats[0].labels == _count_lines(dataset / "data")
    doc = json.loads((dataset / "work" / "report.json").read_text())
    assert len(doc["iterations"]) == 1 and doc["failure"] is None


def test_run_iteration_zero_noise_grows(dataset):
    cfg = _cfg(dataset, noise={"coord_sigma": 0.0, "fp_rate": 0.0, "drop_rate": 0.0})
    manifest, labels = label_io.open_dataset(dataset / "data")
    out = run_iteration(cfg, 0, labels, manifest, baseline=labels)
    assert out.labels.count() >= labels.count()
    assert out.stats.iteration == 1


def test_stats_match_written_files(dataset):
    report = run_pipeline(_cfg(dataset, synth_truth=str(dataset / "truth")))
    work = dataset / "work"
    base = _count_lines(work / "iter0")
    for i, stats in enumerate(report.stats):
        counted = _count_lines(work / f"iter{i}")
        assert stats.labels == counted
        record = json.loads((work / f"iter{i}" / "stats.json").read_text())
        assert record["labels"]["total"] == sum(counted.values())
        for split in ("train", "val"):
            assert record["growth_pct"][split] == round(growth_pct(base[split], counted[split]), 1)
    totals = [s.total_labels for s in report.stats]
    assert totals == sorted(totals) and totals[-1] > totals[0]


def test_evaluation_recorded(dataset):
    report = run_pipeline(
        _cfg(dataset, synth_truth=str(dataset / "truth"), eval_against=str(dataset / "truth"), iterations=2)
    )
    assert report.metrics[0].precision == 1.0
    assert report.metrics[-1].recall > report.metrics[0].recall


def test_external_predictor(dataset, tmp_path):
    manifest, labels = label_io.open_dataset(dataset / "truth")
    canned = tmp_path / "canned.jsonl"
    canned.write_text(label_io.write_predictions({k: [d for d in v] for k, v in labels.entries.items()}).replace(
        '"confidence": 1.0', '"confidence": 0.9'))
    script = tmp_path / "predict.py"
    script.write_text(
        "import shutil, sys\n"
        "assert sys.argv[1].endswith('manifest.jsonl')\n"
        f"shutil.copy({str(canned)!r}, sys.argv[2])\n"
    )
    cmd = f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {{manifest}} {{out}}"
    report = run_pipeline(_cfg(dataset, predictor_command=cmd, iterations=1))
    assert report.stats[1].total_labels == 250
    assert report.predictor[1]["exit_code"] == 0


def test_predictor_failure(dataset):
    cmd = f"{shlex.quote(sys.executable)} -c 'import sys; sys.stderr.write(\"boom\"); sys.exit(4)'"
    with pytest.raises(PredictorFailed) as err:
        run_pipeline(_cfg(dataset, predictor_command=cmd))
    assert err.value.iteration == 0 and err.value.exit_code == 4
    assert "boom" in str(err.value)
    doc = json.loads((dataset / "work" / "report.json").read_text())
    assert doc["failure"]["iteration"] == 0 and len(doc["iterations"]) == 1


def test_bad_predictions_are_annotated(dataset, tmp_path):
    cmd = f"{shlex.quote(sys.executable)} -c 'import sys; open(sys.argv[1], \"w\").write(\"junk\\n\")' {{out}}"
    with pytest.raises(IterationFailed) as err:
        run_pipeline(_cfg(dataset, predictor_command=cmd))
    assert str(err.value).startswith("iteration 0:")
    assert isinstance(err.value.__cause__, label_io.LabelFormatError)


def test_converge_epsilon(dataset):
    cfg = _cfg(dataset, noise={"fp_rate": 0.0, "drop_rate": 0.0}, converge_epsilon=1, iterations=4)
    report = run_pipeline(cfg)
    assert len(report.stats) == 2


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"dataset_root": "d", "work_dir": "w", "nms": 0.3}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_defaults_and_relative_paths(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("dataset_root: d\nwork_dir: w\n")
    cfg = load_config(path)
    assert (cfg.conf_threshold, cfg.nms_iou, cfg.iterations, cfg.keypoint_count) == (0.7, 0.3, 4, 51)
    assert cfg.splits_to_refine == ("train", "val")
    assert cfg.dataset_root == str(tmp_path / "d")


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig("d", "w", splits_to_refine=("test",))
    with pytest.raises(ConfigError):
        PipelineConfig("d", "w", noise={"seed": 3})
    with pytest.raises(ConfigError):
        PipelineConfig("d", "w", conf_threshold=1.5)
