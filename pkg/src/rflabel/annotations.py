"""Dataset file formats: annotation JSON, ranging/fix CSV, COCO conversion.

The native annotation document is::

    {
      "meta": {"cameras": {"cam0": {"image_size": [1280, 720]}}},   # optional
      "frames": [
        {"frame_id": 0, "camera_id": "cam0", "timestamp": 0.0,
         "labels": [
            {"bbox": [x, y, w, h], "depth": 12.3, "identity": "aa:...",
             "confidence": 0.98, "provenance": "rf", "occluded": false,
             "clipped": false}
         ]}
      ]
    }

``depth`` and ``identity`` may be null; ``clipped`` defaults to false.
All writes are atomic (temp file + rename) so interrupted runs never leave
half-written artifacts.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from .errors import ConfigError
from .labeling import Frame, Label, Provenance
from .localization import LocalizationFix
from .projection import BoundingBox
from .ranging import RangingSample

RANGING_CSV_COLUMNS = ["timestamp", "tx_id", "target_id", "true_m", "measured_m", "rss_dbm", "los"]
FIXES_CSV_COLUMNS = ["timestamp", "target_id", "x_m", "y_m", "residual_m", "confidence"]


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, payload: dict):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Annotation JSON

def label_to_dict(label: Label) -> dict:
    return {
        "bbox": [label.bbox.x, label.bbox.y, label.bbox.w, label.bbox.h],
        "depth": label.depth,
        "identity": label.identity,
        "confidence": label.confidence,
        "provenance": label.provenance.value,
        "occluded": label.occluded,
        "clipped": label.bbox.clipped,
    }


def label_from_dict(entry: dict) -> Label:
    try:
        x, y, w, h = entry["bbox"]
        return Label(
            bbox=BoundingBox(float(x), float(y), float(w), float(h), clipped=bool(entry.get("clipped", False))),
            depth=None if entry.get("depth") is None else float(entry["depth"]),
            identity=entry.get("identity"),
            confidence=float(entry.get("confidence", 1.0)),
            provenance=Provenance(entry.get("provenance", "ground_truth")),
            occluded=bool(entry.get("occluded", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed label record {entry!r}: {exc}") from exc


def frames_to_dict(frames: list[Frame], meta: dict | None = None) -> dict:
    doc = {
        "frames": [
            {
                "frame_id": f.frame_id,
                "camera_id": f.camera_id,
                "timestamp": f.timestamp,
                "labels": [label_to_dict(lab) for lab in f.labels],
            }
            for f in frames
        ]
    }
    if meta:
        doc["meta"] = meta
    return doc


def frames_from_dict(doc: dict) -> list[Frame]:
    if "frames" not in doc:
        raise ConfigError("annotation document is missing the 'frames' key")
    frames = []
    for entry in doc["frames"]:
        try:
            frame = Frame(
                frame_id=int(entry["frame_id"]),
                camera_id=str(entry["camera_id"]),
                timestamp=float(entry["timestamp"]),
                labels=[label_from_dict(lab) for lab in entry.get("labels", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed frame record: {exc}") from exc
        frames.append(frame)
    return frames


def save_annotations(frames: list[Frame], path, meta: dict | None = None):
    atomic_write_json(path, frames_to_dict(frames, meta=meta))


def load_annotations(path) -> tuple[list[Frame], dict]:
    """Returns (frames, meta)."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return frames_from_dict(doc), doc.get("meta", {})


# ---------------------------------------------------------------------------
# CSV logs

def ranging_csv_text(samples: list[RangingSample]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RANGING_CSV_COLUMNS)
    for s in samples:
        writer.writerow(
            [repr(s.timestamp), s.tx_id, s.target_id, repr(s.true_distance),
             repr(s.measured_distance), repr(s.rss), int(s.los)]
        )
    return buf.getvalue()


def write_ranging_csv(samples: list[RangingSample], path):
    atomic_write_text(path, ranging_csv_text(samples))


def read_ranging_csv(path) -> list[RangingSample]:
    samples = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != RANGING_CSV_COLUMNS:
            raise ConfigError(f"{path}: unexpected ranging CSV columns {reader.fieldnames}")
        for row in reader:
            samples.append(
                RangingSample(
                    tx_id=row["tx_id"],
                    target_id=row["target_id"],
                    timestamp=float(row["timestamp"]),
                    true_distance=float(row["true_m"]),
                    measured_distance=float(row["measured_m"]),
                    rss=float(row["rss_dbm"]),
                    los=bool(int(row["los"])),
                )
            )
    return samples


def fixes_csv_text(fixes: list[LocalizationFix]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIXES_CSV_COLUMNS)
    for f in fixes:
        writer.writerow(
            [repr(f.timestamp), f.target_id, repr(f.position[0]), repr(f.position[1]),
             repr(f.residual_rms), repr(f.confidence)]
        )
    return buf.getvalue()


def write_fixes_csv(fixes: list[LocalizationFix], path):
    atomic_write_text(path, fixes_csv_text(fixes))


def read_fixes_csv(path) -> list[LocalizationFix]:
    fixes = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != FIXES_CSV_COLUMNS:
            raise ConfigError(f"{path}: unexpected fixes CSV columns {reader.fieldnames}")
        for row in reader:
            fixes.append(
                LocalizationFix(
                    target_id=row["target_id"],
                    timestamp=float(row["timestamp"]),
                    position=(float(row["x_m"]), float(row["y_m"])),
                    residual_rms=float(row["residual_m"]),
                    num_tx_used=2,
                    confidence=float(row["confidence"]),
                )
            )
    return fixes


# ---------------------------------------------------------------------------
# COCO-style conversion

def to_coco(frames: list[Frame], image_sizes: dict[str, tuple[int, int]]) -> dict:
    """Detection-format export for downstream ML tooling.

    Device identities are deliberately dropped: the exchange format for
    training carries no tracking information.  Label confidence maps to
    the annotation ``score``.
    """
    images = []
    anns = []
    ann_id = 1
    for img_id, frame in enumerate(frames, start=1):
        if frame.camera_id not in image_sizes:
            raise ConfigError(f"no image size known for camera {frame.camera_id!r}")
        w, h = image_sizes[frame.camera_id]
        images.append(
            {
                "id": img_id,
                "file_name": f"{frame.camera_id}_{frame.frame_id:06d}.jpg",
                "width": int(w),
                "height": int(h),
                "frame_id": frame.frame_id,
                "camera_id": frame.camera_id,
                "timestamp": frame.timestamp,
            }
        )
        for label in frame.labels:
            anns.append(
                {
                    "id": ann_id,
                    "image_id": img_id,
                    "category_id": 1,
                    "bbox": [label.bbox.x, label.bbox.y, label.bbox.w, label.bbox.h],
                    "area": label.bbox.area,
                    "iscrowd": 1 if label.occluded else 0,
                    "score": label.confidence,
                    "depth": label.depth,
                }
            )
            ann_id += 1
    return {
        "images": images,
        "annotations": anns,
        "categories": [{"id": 1, "name": "pedestrian"}],
    }


def from_coco(doc: dict) -> list[Frame]:
    """Import a COCO-style detection document as emulated-human frames."""
    try:
        frames_by_img = {}
        for img in doc["images"]:
            frames_by_img[img["id"]] = Frame(
                frame_id=int(img.get("frame_id", img["id"])),
                camera_id=str(img.get("camera_id", "cam0")),
                timestamp=float(img.get("timestamp", 0.0)),
            )
        for ann in doc.get("annotations", []):
            x, y, w, h = ann["bbox"]
            frames_by_img[ann["image_id"]].labels.append(
                Label(
                    bbox=BoundingBox(float(x), float(y), float(w), float(h)),
                    provenance=Provenance.EMULATED_HUMAN,
                    confidence=float(ann.get("score", 1.0)),
                    depth=None if ann.get("depth") is None else float(ann["depth"]),
                    identity=None,
                    occluded=bool(ann.get("iscrowd", 0)),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed COCO document: {exc}") from exc
    return [frames_by_img[k] for k in sorted(frames_by_img)]
