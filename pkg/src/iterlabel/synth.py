"""Deterministic noisy predictor and synthetic fixture datasets.

The predictor stands in for a trained pose detector: it re-detects known
instances with Gaussian jitter, misses some, and hallucinates a few boxes.
Every random draw comes from a Philox stream keyed by (seed, image id,
instance), so output does not depend on the order images are visited.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from .label_io import Manifest
from .model import (
    DEFAULT_KEYPOINTS,
    Detection,
    ImageRecord,
    Keypoint,
    LabelSet,
    NormBBox,
    PoseInstance,
)

_DETECTION, _FALSE_POSITIVE, _HIDE = 0, 1, 2


@dataclass(frozen=True)
class NoiseProfile:
    coord_sigma: float = 0.02
    fp_rate: float = 0.1
    drop_rate: float = 0.1
    conf_floor: float = 0.3
    conf_ceil: float = 0.95
    conf_slope: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.coord_sigma < 0:
            raise ValueError("coord_sigma must be >= 0")
        if self.fp_rate < 0:
            raise ValueError("fp_rate must be >= 0")
        if not 0 <= self.drop_rate <= 1:
            raise ValueError("drop_rate must be in [0,1]")
        if not 0 <= self.conf_floor <= self.conf_ceil <= 1:
            raise ValueError("need 0 <= conf_floor <= conf_ceil <= 1")
        if self.conf_slope < 0:
            raise ValueError("conf_slope must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, data: dict) -> NoiseProfile:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown noise profile keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def _id_key(image_id: str) -> int:
    return int.from_bytes(hashlib.blake2b(image_id.encode(), digest_size=8).digest(), "little")


def stream(seed: int, image_id: str, *counter: int) -> np.random.Generator:
    key = np.random.SeedSequence([seed, _id_key(image_id), *counter]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _jitter_instance(inst: PoseInstance, rng: np.random.Generator, sigma: float):
    b = inst.bbox
    d = rng.normal(0.0, sigma, 4) if sigma > 0 else np.zeros(4)
    kd = rng.normal(0.0, sigma, (len(inst.keypoints), 2)) if sigma > 0 else None
    box = NormBBox.clamped(
        b.cx + float(d[0]),
        b.cy + float(d[1]),
        max(b.w + float(d[2]), 1e-3),
        max(b.h + float(d[3]), 1e-3),
    )
    if kd is None:
        keypoints = inst.keypoints
    else:
        keypoints = tuple(
            kp if kp.v == 0 else Keypoint.clamped(kp.x + float(dx), kp.y + float(dy), kp.v)
            for kp, (dx, dy) in zip(inst.keypoints, kd)
        )
    return PoseInstance(inst.class_id, box, keypoints), float(np.sqrt(np.sum(d * d)))


def _random_instance(rng: np.random.Generator, keypoint_count: int, class_id: int = 0) -> PoseInstance:
    w, h = rng.uniform(0.05, 0.3, 2)
    cx, cy = rng.uniform(0.0, 1.0, 2)
    box = NormBBox.clamped(float(cx), float(cy), float(w), float(h))
    xs = rng.uniform(box.cx - box.w / 2, box.cx + box.w / 2, keypoint_count)
    ys = rng.uniform(box.cy - box.h / 2, box.cy + box.h / 2, keypoint_count)
    keypoints = tuple(Keypoint.clamped(float(x), float(y), 2) for x, y in zip(xs, ys))
    return PoseInstance(class_id, box, keypoints)


def predict_image(
    image_id: str, gts: list[PoseInstance], profile: NoiseProfile, keypoint_count: int, iteration: int = 1
) -> list[Detection]:
    p = profile
    out = []
    for j, inst in enumerate(gts):
        rng = stream(p.seed, image_id, _DETECTION, j)
        if rng.random() < p.drop_rate:
            continue
        noisy, norm = _jitter_instance(inst, rng, p.coord_sigma)
        conf = min(max(p.conf_ceil - p.conf_slope * norm, p.conf_floor), p.conf_ceil)
        out.append(Detection(noisy, conf, iteration))
    rng = stream(p.seed, image_id, _FALSE_POSITIVE)
    for _ in range(int(rng.poisson(p.fp_rate))):
        inst = _random_instance(rng, keypoint_count)
        out.append(Detection(inst, float(rng.uniform(p.conf_floor, p.conf_ceil)), iteration))
    return out


def synth_predict(
    gts: LabelSet, profile: NoiseProfile, manifest: Manifest, iteration: int = 1
) -> dict[str, list[Detection]]:
    """Predictions for every manifest image, in manifest order.

    Images that end up with no detections are left out of the mapping.
    """
    out = {}
    for rec in manifest.records:
        dets = predict_image(
            rec.id, gts.instances(rec.id) if rec.id in gts.entries else [], profile,
            manifest.keypoint_count, iteration,
        )
        if dets:
            out[rec.id] = dets
    return out


# -- fixtures ------------------------------------------------------------------


def _q(v: float) -> float:
    return round(float(v), 6)


def _spread(total: int, n_images: int, rng: np.random.Generator) -> list[int]:
    if n_images == 0:
        if total:
            raise ValueError("cannot place labels without images")
        return []
    base, extra = divmod(total, n_images)
    counts = [base] * n_images
    for i in rng.permutation(n_images)[:extra]:
        counts[int(i)] += 1
    return counts


def _grid_instance(rng: np.random.Generator, slot: int, slots: int, keypoint_count: int) -> PoseInstance:
    cell = 1.0 / slots
    w = _q(rng.uniform(0.4, 0.8) * cell)
    h = _q(rng.uniform(0.2, 0.6))
    cx = _q(slot * cell + cell / 2 + rng.uniform(-0.1, 0.1) * (cell - w))
    cy = _q(0.5 + rng.uniform(-0.5, 0.5) * (1.0 - h) * 0.9)
    xs = rng.uniform(cx - w / 2, cx + w / 2, keypoint_count)
    ys = rng.uniform(cy - h / 2, cy + h / 2, keypoint_count)
    keypoints = tuple(Keypoint(min(max(_q(x), 0.0), 1.0), min(max(_q(y), 0.0), 1.0), 2) for x, y in zip(xs, ys))
    return PoseInstance(0, NormBBox(cx, cy, w, h), keypoints)


def make_fixture(
    n_train: int,
    n_val: int,
    labels_train: int,
    labels_val: int,
    keypoint_count: int = DEFAULT_KEYPOINTS,
    seed: int = 0,
) -> tuple[Manifest, LabelSet]:
    """Build a synthetic dataset with exact per-split image and label counts.

    Instances in one image sit in disjoint vertical strips, so they never
    overlap. Coordinates are quantized to 6 decimals and survive a write/read
    cycle unchanged.
    """
    rng = np.random.default_rng(seed)
    records = []
    entries = {}
    for split, n_images, n_labels in (("train", n_train, labels_train), ("val", n_val, labels_val)):
        for i, m in enumerate(_spread(n_labels, n_images, rng)):
            image_id = f"{split}_{i:05d}"
            records.append(
                ImageRecord(image_id, int(rng.integers(320, 1281)), int(rng.integers(320, 1281)), split)
            )
            entries[image_id] = tuple(
                Detection(_grid_instance(rng, s, m, keypoint_count)) for s in range(m)
            )
    return Manifest(tuple(records), keypoint_count), LabelSet(0, entries)


def hide_labels(labels: LabelSet, fraction: float, seed: int = 0) -> LabelSet:
    """Drop each instance independently with probability ``fraction``."""
    entries = {}
    for image_id, dets in labels.entries.items():
        entries[image_id] = tuple(
            d for j, d in enumerate(dets) if stream(seed, image_id, _HIDE, j).random() >= fraction
        )
    return LabelSet(labels.iteration, entries)
