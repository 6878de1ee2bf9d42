import json
import shlex
import sys

import pytest

from iterlabel import label_io
from iterlabel.cli import main
from iterlabel.synth import make_fixture


def run(capsys, *args):
    with pytest.raises(SystemExit) as exit_info:
        main([str(a) for a in args])
    out = capsys.readouterr()
    return exit_info.value.code, out.out, out.err


@pytest.fixture
def root(tmp_path):
    manifest, labels = make_fixture(8, 2, 10, 3, keypoint_count=2, seed=1)
    label_io.write_dataset(tmp_path / "ds", manifest, labels)
    return tmp_path


def test_validate_ok_and_broken(capsys, root):
    code, out, _ = run(capsys, "validate", root / "ds")
    assert code == 0 and "13 labels" in out
    (root / "ds" / "labels" / "train" / "train_00000.txt").write_text("0 0.5 0.5\n")
    code, _, err = run(capsys, "validate", root / "ds")
    assert code == 1 and "train_00000.txt" in err and "line 1" in err


def test_stats(capsys, root):
    code, out, _ = run(capsys, "stats", root / "ds")
    doc = json.loads(out)
    assert code == 0
    assert doc["labels"] == {"train": 10, "val": 3, "total": 13}
    assert doc["images"]["total"] == 10


def _profile(tmp_path, **kw):
    path = tmp_path / "profile.json"
    path.write_text(json.dumps(kw))
    return path


def test_synth_filter_merge_eval(capsys, root):
    profile = _profile(root, fp_rate=1.0, seed=3)
    code, preds, _ = run(capsys, "synth", "--profile", profile, root / "ds")
    assert code == 0 and preds
    (root / "preds.jsonl").write_text(preds)

    code, filtered, _ = run(capsys, "filter", "--conf", 0.7, "--nms", 0.3, root / "preds.jsonl")
    assert code == 0
    confs = [json.loads(line)["confidence"] for line in filtered.splitlines()]
    assert confs and min(confs) >= 0.7

    code, out, _ = run(capsys, "merge", root / "ds", root / "preds.jsonl", "--out", root / "merged")
    assert code == 0
    assert json.loads(out)["labels"]["total"] >= 13
    assert (root / "merged" / "stats.json").exists()

    code, out, _ = run(capsys, "eval", "--gt", root / "ds", "--pred", root / "preds.jsonl")
    report = json.loads(out)
    assert code == 0
    assert set(report) == {"precision", "recall", "ap50", "ap50_95", "mse", "counts"}
    assert 0 <= report["ap50_95"] <= report["ap50"] <= 1


def test_eval_perfect(capsys, root):
    code, preds, _ = run(capsys, "synth", "--profile",
                         _profile(root, coord_sigma=0, fp_rate=0, drop_rate=0), root / "ds")
    (root / "p.jsonl").write_text(preds)
    code, out, _ = run(capsys, "eval", "--gt", root / "ds", "--pred", root / "p.jsonl")
    r = json.loads(out)
    assert (r["precision"], r["recall"], r["ap50"], r["ap50_95"], r["mse"]) == (1.0, 1.0, 1.0, 1.0, 0.0)


def test_run_and_exit_codes(capsys, root):
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"dataset_root": "ds", "work_dir": "work", "keypoint_count": 2, "iterations": 2}))
    code, out, _ = run(capsys, "run", "--config", cfg, "--eval-against", root / "ds")
    assert code == 0 and "iter2" in out
    report = json.loads((root / "work" / "report.json").read_text())
    assert len(report["iterations"]) == 3
    assert report["iterations"][0]["metrics"]["precision"] == 1.0

    failing = shlex.quote(sys.executable) + " -c 'raise SystemExit(9)'"
    cfg.write_text(json.dumps({"dataset_root": "ds", "work_dir": "work2", "keypoint_count": 2,
                               "predictor_command": failing}))
    code, _, err = run(capsys, "run", "--config", cfg)
    assert code == 2 and "code 9" in err

    cfg.write_text(json.dumps({"dataset_root": "ds", "work_dir": "w", "bogus": 1}))
    code, _, _ = run(capsys, "run", "--config", cfg)
    assert code == 3

    code, _, _ = run(capsys, "stats", root / "nowhere")
    assert code == 3


def test_fixture_command(capsys, tmp_path):
    code, _, _ = run(capsys, "fixture", tmp_path / "f", "--train", 5, "--val", 2, "--train-labels", 7,
                     "--val-labels", 2, "-k", 3, "--hide", 0.5, "--truth-out", tmp_path / "t")
    assert code == 0
    m, ls = label_io.open_dataset(tmp_path / "t")
    assert m.keypoint_count == 3 and ls.count() == 9
    assert label_io.open_dataset(tmp_path / "f")[1].count() <= 9
