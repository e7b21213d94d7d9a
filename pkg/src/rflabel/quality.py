"""Label-quality evaluation and filtering.

Occlusion detection scans per-(transmitter, target) ranging series for the
blockage signature: a sustained received-signal drop and/or a sustained
jump in measured range relative to a trend-adjusted rolling-median
baseline.  The baseline is built from recent samples that were not
themselves flagged and is extrapolated with a robust (median-of-slopes)
local trend, so a target walking toward or away from a transmitter does
not trip the detector while a genuine blockage does.

Filtering removes labels with low fix confidence, labels whose identity is
inside a detected occlusion interval, and labels implying physically
impossible motion.  Ground-truth labels are never removed.

The detection metric is the log-average miss rate: miss rates are read at
nine false-positive-per-image operating points log-spaced in [1e-2, 1e0]
(taking the lowest miss achieved at or below each point) and averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError
from .labeling import Frame, Label, Provenance
from .localization import LocalizationFix
from .projection import BoundingBox
from .ranging import RangingSample

FPPI_POINTS = np.logspace(-2.0, 0.0, 9)


class OcclusionEvidence(str, Enum):
    RSS_DROP = "rss_drop"
    RANGE_JUMP = "range_jump"


@dataclass(frozen=True)
class OcclusionEvent:
    target_id: str
    interval: tuple[float, float]
    evidence: frozenset[OcclusionEvidence]
    tx_id: str | None = None

    def __post_init__(self):
        if self.interval[0] >= self.interval[1]:
            raise ConfigError("occlusion event must have start < end")

    def active(self, t: float) -> bool:
        return self.interval[0] <= t <= self.interval[1]


@dataclass(frozen=True)
class OcclusionThresholds:
    rss_drop_db: float = 8.0
    range_jump_m: float = 1.5
    min_duration_s: float = 0.5
    window_s: float = 3.0
    min_baseline: int = 3  # samples needed before deviations are judged


def _robust_baseline(times, values, flags, i, window_s, min_baseline):
    """Trend-extrapolated median of recent unflagged samples before index i."""
    lo_t = times[i] - window_s
    idx = [j for j in range(i) if times[j] >= lo_t and not flags[j]]
    if len(idx) < min_baseline:
        # fall back to the most recent unflagged samples regardless of window
        idx = [j for j in range(i) if not flags[j]][-min_baseline:]
    if len(idx) < min_baseline:
        return None
    t = times[idx]
    v = values[idx]
    if len(idx) >= 2:
        dt = np.diff(t)
        slopes = np.diff(v)[dt > 0] / dt[dt > 0]
        slope = float(np.median(slopes)) if slopes.size else 0.0
    else:
        slope = 0.0
    return float(np.median(v + slope * (times[i] - t)))


def detect_occlusion(
    series: list[RangingSample],
    thresholds: OcclusionThresholds = OcclusionThresholds(),
) -> list[OcclusionEvent]:
    """Blockage intervals in one (transmitter, target) ranging series.

    Returns maximal intervals where the RSS sits below baseline by more
    than ``rss_drop_db`` or the measured range above baseline by more than
    ``range_jump_m``, persisting at least ``min_duration_s``.  Raises
    ConfigError when the series is shorter than the rolling window.
    """
    if len(series) < 2:
        raise ConfigError("series too short for occlusion detection")
    samples = sorted(series, key=lambda s: s.timestamp)
    times = np.array([s.timestamp for s in samples])
    if times[-1] - times[0] < thresholds.window_s:
        raise ConfigError(
            f"series spans {times[-1] - times[0]:.2f} s, shorter than the "
            f"{thresholds.window_s} s rolling window"
        )
    rss_vals = np.array([s.rss for s in samples])
    rng_vals = np.array([s.measured_distance for s in samples])
    n = len(samples)
    flagged = np.zeros(n, dtype=bool)
    evidence: list[set[OcclusionEvidence]] = [set() for _ in range(n)]

    for i in range(n):
        base_rss = _robust_baseline(times, rss_vals, flagged, i, thresholds.window_s, thresholds.min_baseline)
        base_rng = _robust_baseline(times, rng_vals, flagged, i, thresholds.window_s, thresholds.min_baseline)
        if base_rss is None or base_rng is None:
            continue  # warm-up
        fired = set()
        if base_rss - rss_vals[i] > thresholds.rss_drop_db:
            fired.add(OcclusionEvidence.RSS_DROP)
        if rng_vals[i] - base_rng > thresholds.range_jump_m:
            fired.add(OcclusionEvidence.RANGE_JUMP)
        if fired:
            flagged[i] = True
            evidence[i] = fired

    events = []
    i = 0
    target_id = samples[0].target_id
    tx_id = samples[0].tx_id
    while i < n:
        if not flagged[i]:
            i += 1
            continue
        j = i
        fired: set[OcclusionEvidence] = set()
        while j < n and flagged[j]:
            fired |= evidence[j]
            j += 1
        start, end = float(times[i]), float(times[j - 1])
        if end - start >= thresholds.min_duration_s:
            events.append(
                OcclusionEvent(
                    target_id=target_id,
                    interval=(start, end),
                    evidence=frozenset(fired),
                    tx_id=tx_id,
                )
            )
        i = j
    return events


def group_series(samples: list[RangingSample]) -> dict[tuple[str, str], list[RangingSample]]:
    """Split a sample stream into per-(tx, target) time-ordered series."""
    groups: dict[tuple[str, str], list[RangingSample]] = {}
    for s in samples:
        groups.setdefault((s.tx_id, s.target_id), []).append(s)
    return {k: sorted(v, key=lambda s: s.timestamp) for k, v in groups.items()}


def detect_occlusion_events(
    samples: list[RangingSample],
    thresholds: OcclusionThresholds = OcclusionThresholds(),
) -> list[OcclusionEvent]:
    """Run detection over every (tx, target) series in a sample stream."""
    events = []
    for (_tx, _target), series in sorted(group_series(samples).items()):
        try:
            events.extend(detect_occlusion(series, thresholds))
        except ConfigError:
            continue  # series too short to judge
    return events


# ---------------------------------------------------------------------------
# Filtering

@dataclass(frozen=True)
class FilterCriteria:
    confidence_threshold: float = 0.2
    occlusion_events: tuple[OcclusionEvent, ...] = ()
    speed_cap_mps: float = 12.0


@dataclass
class FilterReport:
    removed_low_confidence: int = 0
    removed_occlusion: int = 0
    removed_speed: int = 0
    kept: int = 0

    @property
    def total_removed(self) -> int:
        return self.removed_low_confidence + self.removed_occlusion + self.removed_speed

    def to_dict(self) -> dict:
        return {
            "removed_low_confidence": self.removed_low_confidence,
            "removed_occlusion": self.removed_occlusion,
            "removed_speed": self.removed_speed,
            "total_removed": self.total_removed,
            "kept": self.kept,
        }


def _overspeed_times(fixes: list[LocalizationFix], cap: float) -> dict[str, list[float]]:
    by_identity: dict[str, list[LocalizationFix]] = {}
    for fix in fixes:
        by_identity.setdefault(fix.target_id, []).append(fix)
    bad: dict[str, list[float]] = {}
    for identity, seq in by_identity.items():
        seq = sorted(seq, key=lambda f: f.timestamp)
        for a, b in zip(seq, seq[1:]):
            dt = b.timestamp - a.timestamp
            if dt <= 0:
                continue
            speed = math.dist(a.position, b.position) / dt
            if speed > cap:
                bad.setdefault(identity, []).append(b.timestamp)
    return bad


def filter_labels(
    frames: list[Frame],
    fixes: list[LocalizationFix] | None = None,
    criteria: FilterCriteria = FilterCriteria(),
) -> tuple[list[Frame], FilterReport]:
    """Remove suspect localization-derived labels.

    A label is dropped when its confidence is below the threshold, when its
    identity has an active occlusion event at the frame time, or when the
    identity's fixes imply motion above the speed cap into that instant.
    Ground-truth labels always survive.
    """
    report = FilterReport()
    events_by_identity: dict[str, list[OcclusionEvent]] = {}
    for ev in criteria.occlusion_events:
        events_by_identity.setdefault(ev.target_id, []).append(ev)
    overspeed = _overspeed_times(fixes, criteria.speed_cap_mps) if fixes else {}

    out = []
    for frame in frames:
        half_period = None
        kept = []
        for label in frame.labels:
            if label.provenance is Provenance.GROUND_TRUTH:
                kept.append(label)
                report.kept += 1
                continue
            if label.confidence < criteria.confidence_threshold:
                report.removed_low_confidence += 1
                continue
            identity = label.identity
            if identity and any(ev.active(frame.timestamp) for ev in events_by_identity.get(identity, ())):
                report.removed_occlusion += 1
                continue
            if identity in overspeed:
                if half_period is None:
                    half_period = _half_period_hint(frames)
                if any(abs(t - frame.timestamp) <= half_period for t in overspeed[identity]):
                    report.removed_speed += 1
                    continue
            kept.append(label)
            report.kept += 1
        out.append(Frame(frame.frame_id, frame.camera_id, frame.timestamp, kept))
    return out, report


def _half_period_hint(frames: list[Frame]) -> float:
    times = sorted({f.timestamp for f in frames})
    if len(times) < 2:
        return 0.5
    return min(b - a for a, b in zip(times, times[1:])) / 2.0


# ---------------------------------------------------------------------------
# Metrics

def iou(a: Label | BoundingBox, b: Label | BoundingBox) -> float:
    """Intersection-over-union of two boxes (labels accepted)."""
    ba = a.bbox if isinstance(a, Label) else a
    bb = b.bbox if isinstance(b, Label) else b
    ix0 = max(ba.x, bb.x)
    iy0 = max(ba.y, bb.y)
    ix1 = min(ba.x + ba.w, bb.x + bb.w)
    iy1 = min(ba.y + ba.h, bb.y + bb.h)
    iw, ih = ix1 - ix0, iy1 - iy0
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = ba.w * ba.h + bb.w * bb.h - inter
    return float(inter / union)


def _match_frame(dets: list[Label], gts: list[Label], match_iou: float):
    """Score-ordered greedy matching with occluded ground truth as ignore.

    Returns (outcomes, matches, n_visible): per-detection outcome "tp",
    "fp" or "ignore", and for "tp" detections the index of the matched
    visible ground-truth label.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    visible = [g for g in gts if not g.occluded]
    ignored = [g for g in gts if g.occluded]
    used = [False] * len(visible)
    used_ign = [False] * len(ignored)
    outcomes = [""] * len(dets)
    matches: list[int | None] = [None] * len(dets)
    for i in order:
        det = dets[i]
        best, best_iou = None, match_iou
        for j, gt in enumerate(visible):
            if used[j]:
                continue
            val = iou(det, gt)
            if val >= best_iou:
                best, best_iou = j, val
        if best is not None:
            used[best] = True
            outcomes[i] = "tp"
            matches[i] = best
            continue
        best, best_iou = None, match_iou
        for j, gt in enumerate(ignored):
            if used_ign[j]:
                continue
            val = iou(det, gt)
            if val >= best_iou:
                best, best_iou = j, val
        if best is not None:
            used_ign[best] = True
            outcomes[i] = "ignore"
        else:
            outcomes[i] = "fp"
    return outcomes, matches, len(visible)


def log_average_miss_rate(
    detections: list[Frame],
    ground_truth: list[Frame],
    match_iou: float = 0.5,
) -> float:
    """Mean miss rate over nine log-spaced false-positives-per-image points.

    Detections are matched per frame in score order (greedy, ignoring
    occluded ground truth); the score threshold is swept, and at each
    reference point the lowest miss rate achieved at or below that FPPI
    is taken.  Raises ConfigError when there is no visible ground truth.
    """
    gt_by_id = {f.frame_id: f for f in ground_truth}
    if set(gt_by_id) != {f.frame_id for f in detections}:
        raise ConfigError("detection and ground-truth frame sets are misaligned")
    scored: list[tuple[float, bool]] = []  # (score, is_tp) for non-ignored detections
    total_gt = 0
    for det_frame in detections:
        outcomes, _matches, n_visible = _match_frame(
            det_frame.labels, gt_by_id[det_frame.frame_id].labels, match_iou
        )
        total_gt += n_visible
        for label, outcome in zip(det_frame.labels, outcomes):
            if outcome == "ignore":
                continue
            scored.append((label.confidence, outcome == "tp"))
    if total_gt == 0:
        raise ConfigError("ground truth contains no visible labels")
    n_frames = len(detections)

    # operating points for thresholds just below each distinct score,
    # plus the empty-detection point (fppi 0, miss 1)
    scored.sort(key=lambda s: -s[0])
    points = [(0.0, 1.0)]
    tp = fp = 0
    i = 0
    while i < len(scored):
        score = scored[i][0]
        while i < len(scored) and scored[i][0] == score:
            if scored[i][1]:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / n_frames, 1.0 - tp / total_gt))

    fppis = np.array([p[0] for p in points])
    misses = np.array([p[1] for p in points])
    order = np.argsort(fppis, kind="stable")
    fppis, misses = fppis[order], np.minimum.accumulate(misses[order])
    result = []
    for ref in FPPI_POINTS:
        k = np.searchsorted(fppis, ref, side="right") - 1
        result.append(misses[k] if k >= 0 else 1.0)
    return float(np.mean(result))


# ---------------------------------------------------------------------------
# Reports

@dataclass
class ErrorStats:
    mean: float = 0.0
    std: float = 0.0
    median: float = 0.0
    p95: float = 0.0

    @classmethod
    def from_values(cls, values) -> "ErrorStats":
        arr = np.asarray(list(values), dtype=float)
        if arr.size == 0:
            return cls()
        return cls(
            mean=float(arr.mean()),
            std=float(arr.std()),
            median=float(np.median(arr)),
            p95=float(np.percentile(arr, 95)),
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class QualityReport:
    mean_iou: float = 0.0
    iou_histogram: dict = field(default_factory=dict)  # {"bin_edges": [...], "counts": [...]}
    label_precision: float = 0.0
    label_recall: float = 0.0
    angular_error_stats: ErrorStats = field(default_factory=ErrorStats)
    size_error_stats: ErrorStats = field(default_factory=ErrorStats)
    dropped_label_count: int = 0
    matched_pairs: int = 0
    per_config: dict = field(default_factory=dict)
    per_label_errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean_iou": self.mean_iou,
            "iou_histogram": self.iou_histogram,
            "label_precision": self.label_precision,
            "label_recall": self.label_recall,
            "angular_error_stats": self.angular_error_stats.to_dict(),
            "size_error_stats": self.size_error_stats.to_dict(),
            "dropped_label_count": self.dropped_label_count,
            "matched_pairs": self.matched_pairs,
            "per_config": self.per_config,
        }


def quality_report(
    rf_frames: list[Frame],
    gt_frames: list[Frame],
    match_iou: float = 0.5,
    config_name: str | None = None,
    dropped_label_count: int = 0,
) -> QualityReport:
    """Compare generated labels against the annotator oracle.

    Labels are matched per frame by IoU; precision counts matched generated
    labels, recall counts matched visible ground-truth labels.  Center
    column error stands in for angular error, box-height error for depth
    error.  Raises ConfigError for misaligned frame sets.
    """
    gt_by_id = {f.frame_id: f for f in gt_frames}
    if set(gt_by_id) != {f.frame_id for f in rf_frames}:
        raise ConfigError("generated and ground-truth frame sets are misaligned")

    ious: list[float] = []
    col_errors: list[float] = []
    height_errors: list[float] = []
    per_label: list[dict] = []
    n_rf = n_rf_matched = n_gt_visible = n_gt_matched = 0
    for rf_frame in rf_frames:
        gts = gt_by_id[rf_frame.frame_id].labels
        outcomes, matches, n_visible = _match_frame(rf_frame.labels, gts, match_iou)
        n_gt_visible += n_visible
        visible = [g for g in gts if not g.occluded]
        for label, outcome, match in zip(rf_frame.labels, outcomes, matches):
            if outcome == "ignore":
                continue
            n_rf += 1
            if outcome != "tp":
                continue
            gt = visible[match]
            n_rf_matched += 1
            n_gt_matched += 1
            pair_iou = iou(label, gt)
            ious.append(pair_iou)
            col_err = label.bbox.center[0] - gt.bbox.center[0]
            height_err = label.bbox.h - gt.bbox.h
            col_errors.append(col_err)
            height_errors.append(height_err)
            per_label.append(
                {
                    "frame_id": rf_frame.frame_id,
                    "iou": pair_iou,
                    "center_col_error_px": col_err,
                    "height_error_px": height_err,
                }
            )

    edges = np.linspace(0.0, 1.0, 11)
    counts, _ = np.histogram(ious, bins=edges)
    report = QualityReport(
        mean_iou=float(np.mean(ious)) if ious else 0.0,
        iou_histogram={"bin_edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
        label_precision=n_rf_matched / n_rf if n_rf else 0.0,
        label_recall=n_gt_matched / n_gt_visible if n_gt_visible else 0.0,
        angular_error_stats=ErrorStats.from_values(np.abs(col_errors)),
        size_error_stats=ErrorStats.from_values(np.abs(height_errors)),
        dropped_label_count=dropped_label_count,
        matched_pairs=len(ious),
        per_label_errors=per_label,
    )
    if config_name:
        report.per_config[config_name] = {
            "mean_iou": report.mean_iou,
            "label_precision": report.label_precision,
            "label_recall": report.label_recall,
        }
    return report
