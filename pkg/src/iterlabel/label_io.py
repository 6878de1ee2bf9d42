"""Reading and writing YOLO-pose label files, manifests and prediction records.

Label files hold one instance per line::

    class cx cy w h x1 y1 v1 ... xK yK vK

Manifests and predictions are JSON lines.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .model import (
    DEFAULT_KEYPOINTS,
    Detection,
    ImageRecord,
    Keypoint,
    LabelSet,
    NormBBox,
    PoseInstance,
    validate_instance,
)

MANIFEST_NAME = "manifest.jsonl"


class LabelFormatError(ValueError):
    """Base class for malformed label, manifest and prediction input."""

    path: Path | None = None

    def with_path(self, path: Path | str) -> LabelFormatError:
        self.path = Path(path)
        self.args = (f"{path}: {self.args[0]}",)
        return self


class TokenCount(LabelFormatError):
    def __init__(self, line_no: int, got: int, expected: int):
        self.line_no, self.got, self.expected = line_no, got, expected
        super().__init__(f"line {line_no}: {got} tokens, expected {expected}")


class ValueRange(LabelFormatError):
    def __init__(self, line_no: int, field: str):
        self.line_no, self.field = line_no, field
        super().__init__(f"line {line_no}: {field}")


class NonNumeric(LabelFormatError):
    def __init__(self, line_no: int, token_index: int):
        self.line_no, self.token_index = line_no, token_index
        super().__init__(f"line {line_no}: token {token_index} is not numeric")


class Schema(LabelFormatError):
    def __init__(self, line_no: int, reason: str):
        self.line_no, self.reason = line_no, reason
        super().__init__(f"line {line_no}: {reason}")


class UnknownImage(LabelFormatError):
    def __init__(self, image_id: str):
        self.image_id = image_id
        super().__init__(f"unknown image id {image_id!r}")


class DuplicateId(LabelFormatError):
    def __init__(self, image_id: str):
        self.image_id = image_id
        super().__init__(f"duplicate image id {image_id!r}")


class LabelIOError(OSError):
    pass


@dataclass(frozen=True)
class Manifest:
    records: tuple[ImageRecord, ...]
    keypoint_count: int = DEFAULT_KEYPOINTS
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        index = self._index
        for rec in self.records:
            if rec.id in index:
                raise DuplicateId(rec.id)
            index[rec.id] = rec

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def __getitem__(self, image_id: str) -> ImageRecord:
        return self._index[image_id]

    def __len__(self) -> int:
        return len(self.records)

    def ids(self, split: str | None = None) -> list[str]:
        return [r.id for r in self.records if split is None or r.split == split]


# -- label files ---------------------------------------------------------------


def _integral(token: str, line_no: int, index: int, name: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise NonNumeric(line_no, index) from None
    if not math.isfinite(value):
        raise NonNumeric(line_no, index)
    if not value.is_integer():
        raise ValueRange(line_no, f"{name} is not an integer")
    return int(value)


def _real(token: str, line_no: int, index: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise NonNumeric(line_no, index) from None
    if not math.isfinite(value):
        raise NonNumeric(line_no, index)
    return value


def parse_label_file(text: str, keypoint_count: int = DEFAULT_KEYPOINTS) -> list[PoseInstance]:
    expected = 5 + 3 * keypoint_count
    instances = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != expected:
            raise TokenCount(line_no, len(tokens), expected)
        class_id = _integral(tokens[0], line_no, 0, "class")
        box = [_real(tokens[i], line_no, i) for i in range(1, 5)]
        keypoints = []
        for k in range(keypoint_count):
            base = 5 + 3 * k
            keypoints.append(
                Keypoint(
                    _real(tokens[base], line_no, base),
                    _real(tokens[base + 1], line_no, base + 1),
                    _integral(tokens[base + 2], line_no, base + 2, f"keypoints[{k}].v"),
                )
            )
        inst = PoseInstance(class_id, NormBBox(*box), tuple(keypoints))
        problems = validate_instance(inst, keypoint_count)
        if problems:
            raise ValueRange(line_no, problems[0])
        instances.append(inst)
    return instances


def format_instance(inst: PoseInstance) -> str:
    b = inst.bbox
    parts = [str(inst.class_id), f"{b.cx:.6f}", f"{b.cy:.6f}", f"{b.w:.6f}", f"{b.h:.6f}"]
    for kp in inst.keypoints:
        parts += [f"{kp.x:.6f}", f"{kp.y:.6f}", str(kp.v)]
    return " ".join(parts)


def serialize_label_file(instances: Iterable[PoseInstance]) -> str:
    return "".join(format_instance(inst) + "\n" for inst in instances)


# -- manifest ------------------------------------------------------------------


def _json_lines(text: str) -> Iterable[tuple[int, dict]]:
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise Schema(line_no, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise Schema(line_no, "record is not an object")
        yield line_no, obj


def write_manifest(manifest: Manifest) -> str:
    lines = [json.dumps({"keypoint_count": manifest.keypoint_count})]
    for r in manifest.records:
        lines.append(
            json.dumps({"id": r.id, "width_px": r.width_px, "height_px": r.height_px, "split": r.split})
        )
    return "\n".join(lines) + "\n"


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def read_manifest(text: str, keypoint_count: int | None = None) -> Manifest:
    """Parse a manifest.

    The optional first record ``{"keypoint_count": K}`` fixes K; otherwise
    ``keypoint_count`` (or the 51-point default) applies.
    """
    records: list[ImageRecord] = []
    seen: set[str] = set()
    header_k = None
    for line_no, obj in _json_lines(text):
        if "id" not in obj and "keypoint_count" in obj:
            if records or header_k is not None:
                raise Schema(line_no, "keypoint_count header must be the first record")
            header_k = obj["keypoint_count"]
            if not _is_int(header_k) or header_k < 1:
                raise Schema(line_no, "keypoint_count must be a positive integer")
            continue
        if set(obj) != {"id", "width_px", "height_px", "split"}:
            raise Schema(line_no, "expected fields id, width_px, height_px, split")
        image_id, w, h, split = obj["id"], obj["width_px"], obj["height_px"], obj["split"]
        if not isinstance(image_id, str) or not image_id:
            raise Schema(line_no, "id must be a non-empty string")
        if not (_is_int(w) and _is_int(h)) or w < 1 or h < 1:
            raise Schema(line_no, "width_px and height_px must be integers >= 1")
        if split not in ("train", "val"):
            raise Schema(line_no, f"split must be train or val, got {split!r}")
        if image_id in seen:
            raise DuplicateId(image_id)
        seen.add(image_id)
        records.append(ImageRecord(image_id, w, h, split))
    if header_k is not None and keypoint_count is not None and header_k != keypoint_count:
        raise Schema(1, f"manifest declares {header_k} keypoints, expected {keypoint_count}")
    k = header_k if header_k is not None else (keypoint_count or DEFAULT_KEYPOINTS)
    return Manifest(tuple(records), k)


# -- datasets ------------------------------------------------------------------


def label_path(root: Path | str, record: ImageRecord) -> Path:
    return Path(root) / "labels" / record.split / f"{record.id}.txt"


def load_manifest(root: Path | str, keypoint_count: int | None = None) -> Manifest:
    path = Path(root) / MANIFEST_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LabelIOError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return read_manifest(text, keypoint_count)
    except LabelFormatError as exc:
        raise exc.with_path(path)


def load_dataset(root: Path | str, manifest: Manifest) -> LabelSet:
    entries = {}
    for rec in manifest.records:
        path = label_path(root, rec)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            entries[rec.id] = ()
            continue
        except OSError as exc:
            raise LabelIOError(f"cannot read {path}: {exc.strerror}") from exc
        try:
            instances = parse_label_file(text, manifest.keypoint_count)
        except LabelFormatError as exc:
            raise exc.with_path(path)
        entries[rec.id] = tuple(Detection(inst) for inst in instances)
    return LabelSet(0, entries)


def open_dataset(root: Path | str, keypoint_count: int | None = None) -> tuple[Manifest, LabelSet]:
    manifest = load_manifest(root, keypoint_count)
    return manifest, load_dataset(root, manifest)


def write_dataset(root: Path | str, manifest: Manifest, labels: LabelSet) -> None:
    """Write the manifest and one label file per image.

    Images without detections get an empty file so a directory listing
    mirrors the manifest.
    """
    root = Path(root)
    for split in ("train", "val"):
        (root / "labels" / split).mkdir(parents=True, exist_ok=True)
    (root / MANIFEST_NAME).write_text(write_manifest(manifest), encoding="utf-8")
    for rec in manifest.records:
        dets = labels.entries.get(rec.id, ())
        label_path(root, rec).write_text(
            serialize_label_file(d.instance for d in dets), encoding="utf-8"
        )


# -- predictions ---------------------------------------------------------------


def _number(value, line_no: int, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise Schema(line_no, f"{name} must be a finite number")
    return float(value)


def _prediction(obj: dict, line_no: int, keypoint_count: int | None, iteration: int):
    for key in ("image_id", "confidence", "bbox", "keypoints"):
        if key not in obj:
            raise Schema(line_no, f"missing field {key!r}")
    image_id = obj["image_id"]
    if not isinstance(image_id, str) or not image_id:
        raise Schema(line_no, "image_id must be a non-empty string")
    confidence = _number(obj["confidence"], line_no, "confidence")
    if not 0.0 <= confidence <= 1.0:
        raise ValueRange(line_no, f"confidence {confidence} out of [0,1]")
    class_id = obj.get("class_id", 0)
    if not _is_int(class_id) or class_id < 0:
        raise Schema(line_no, "class_id must be a non-negative integer")

    bbox = obj["bbox"]
    if not isinstance(bbox, dict) or set(bbox) != {"cx", "cy", "w", "h"}:
        raise Schema(line_no, "bbox must have exactly cx, cy, w, h")
    box = NormBBox.clamped(*(_number(bbox[k], line_no, f"bbox.{k}") for k in ("cx", "cy", "w", "h")))

    raw_kps = obj["keypoints"]
    if not isinstance(raw_kps, list):
        raise Schema(line_no, "keypoints must be a list")
    if keypoint_count is not None and len(raw_kps) != keypoint_count:
        raise Schema(line_no, f"{len(raw_kps)} keypoints, expected {keypoint_count}")
    keypoints = []
    for k, kp in enumerate(raw_kps):
        if not isinstance(kp, list) or len(kp) != 3:
            raise Schema(line_no, f"keypoints[{k}] must be [x, y, v]")
        x = _number(kp[0], line_no, f"keypoints[{k}].x")
        y = _number(kp[1], line_no, f"keypoints[{k}].y")
        v = kp[2]
        if not _is_int(v) or v not in (0, 1, 2):
            raise Schema(line_no, f"keypoints[{k}].v must be 0, 1 or 2")
        keypoints.append(Keypoint.clamped(x, y, v))

    inst = PoseInstance(class_id, box, tuple(keypoints))
    problems = validate_instance(inst, len(keypoints))
    if problems:
        raise ValueRange(line_no, problems[0])
    return image_id, Detection(inst, confidence, iteration)


def parse_predictions(
    text: str,
    manifest: Manifest | None = None,
    keypoint_count: int | None = None,
    iteration: int = 1,
) -> dict[str, list[Detection]]:
    """Group prediction records by image id, keeping input order per image.

    Boxes and keypoints falling partly outside the frame are clipped to it.
    With a manifest, unknown image ids are rejected and K defaults to the
    manifest's keypoint count; without one, every record must agree on K.
    """
    if iteration < 1:
        raise ValueError("predictions belong to iteration >= 1")
    if keypoint_count is None and manifest is not None:
        keypoint_count = manifest.keypoint_count
    grouped: dict[str, list[Detection]] = {}
    for line_no, obj in _json_lines(text):
        image_id, det = _prediction(obj, line_no, keypoint_count, iteration)
        if keypoint_count is None:
            keypoint_count = len(det.instance.keypoints)
        if manifest is not None and image_id not in manifest:
            raise UnknownImage(image_id)
        grouped.setdefault(image_id, []).append(det)
    return grouped


def prediction_record(image_id: str, det: Detection) -> dict:
    inst = det.instance
    b = inst.bbox
    return {
        "image_id": image_id,
        "class_id": inst.class_id,
        "confidence": det.confidence,
        "bbox": {"cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h},
        "keypoints": [[kp.x, kp.y, kp.v] for kp in inst.keypoints],
    }


def write_predictions(predictions: Mapping[str, Iterable[Detection]]) -> str:
    lines = []
    for image_id, dets in predictions.items():
        for det in dets:
            lines.append(json.dumps(prediction_record(image_id, det)))
    return "".join(line + "\n" for line in lines)


def read_predictions_file(
    path: Path | str, manifest: Manifest | None = None, iteration: int = 1
) -> dict[str, list[Detection]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LabelIOError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return parse_predictions(text, manifest, iteration=iteration)
    except LabelFormatError as exc:
        raise exc.with_path(path)
