import random

import pytest

from iterlabel.label_io import Manifest
from iterlabel.model import Detection, ImageRecord, Keypoint, LabelSet, NormBBox, PoseInstance


def make_instance(cx=0.5, cy=0.5, w=0.2, h=0.3, k=1, class_id=0, kps=None):
    if kps is None:
        kps = [Keypoint(cx, cy, 2)] * k
    return PoseInstance(class_id, NormBBox(cx, cy, w, h), tuple(kps))


def corners_instance(x1, y1, x2, y2, k=1):
    return make_instance((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1, k=k)


def pred(inst, conf, source=1):
    return Detection(inst, conf, source)


def orig(inst):
    return Detection(inst)


def random_box(rng, lo=0.25, hi=0.75, smin=0.05, smax=0.4):
    w = rng.uniform(smin, smax)
    h = rng.uniform(smin, smax)
    return NormBBox.clamped(rng.uniform(lo, hi), rng.uniform(lo, hi), w, h)


def random_detections(rng: random.Random, n: int, p_original=0.3, k=1):
    dets = []
    for _ in range(n):
        box = random_box(rng)
        inst = PoseInstance(0, box, (Keypoint(box.cx, box.cy, 2),) * k)
        if rng.random() < p_original:
            dets.append(Detection(inst))
        else:
            conf = rng.random()
            if rng.random() < 0.3:
                conf = round(conf, 1)
            dets.append(Detection(inst, conf, rng.randint(1, 4)))
    return dets


def simple_manifest(ids_splits, k=1, size=(100, 100)):
    return Manifest(tuple(ImageRecord(i, size[0], size[1], s) for i, s in ids_splits), k)


@pytest.fixture
def two_image_manifest():
    return simple_manifest([("a", "train"), ("b", "val")])


@pytest.fixture
def empty_labels():
    return LabelSet(0, {"a": (), "b": ()})


# acceptance criterion id -> (description, passed)
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        desc, ok = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key}: {desc}")
