"""Frame-level labeling: ground truth, fixes-to-boxes, privacy, activities.

Ground-truth frames are what an ideal human annotator would produce: a box
per visible target using its true height, an ``occluded`` flag when enough
of the body is hidden, and no device identity (annotators cannot see MAC
addresses).  Fix-derived frames are what the localization system produces:
boxes sized from the average body template, carrying device identity,
depth and the fix confidence -- and no notion of what the camera can
actually see, which is exactly the extraneous-label failure mode the
quality module filters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from shapely.geometry import Point, Polygon

from .errors import ConfigError, GeometryError
from .localization import LocalizationFix
from .projection import BodyBoxParams, BoundingBox, CameraModel, back_project, camera_coords, synthesize_bbox
from .scene import (
    Activity,
    DEFAULT_SPEED_BANDS,
    OptOutPolicy,
    Scene,
    body_hidden_fraction,
    position_at,
)

# A ground-truth label is flagged occluded when at least this fraction of
# the body box is hidden from the camera.
DEFAULT_OCCLUSION_THRESHOLD = 0.35
DEFAULT_SPEED_SMOOTHING_S = 2.0


class Provenance(str, Enum):
    GROUND_TRUTH = "ground_truth"
    RF = "rf"
    EMULATED_HUMAN = "emulated_human"


@dataclass(frozen=True)
class Label:
    """One annotated box in one frame."""

    bbox: BoundingBox
    provenance: Provenance
    confidence: float = 1.0
    depth: float | None = None       # m along the optical axis
    identity: str | None = None      # device id, when known
    occluded: bool = False
    injected: bool = False           # internal bookkeeping, not exported

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ConfigError("label confidence must lie in [0, 1]")
        if self.provenance is Provenance.RF and self.depth is None:
            raise ConfigError("localization-derived labels must carry depth")
        if self.provenance is Provenance.GROUND_TRUTH and self.confidence != 1.0:
            raise ConfigError("ground-truth labels have confidence 1")


@dataclass
class Frame:
    frame_id: int
    camera_id: str
    timestamp: float
    labels: list[Label] = field(default_factory=list)


def frame_times(camera: CameraModel, duration: float) -> list[float]:
    """Capture instants of the camera over [0, duration]."""
    n = int(math.floor(duration * camera.frame_rate + 1e-9))
    return [k / camera.frame_rate for k in range(n + 1)]


def empty_frames(camera: CameraModel, duration: float) -> list[Frame]:
    return [
        Frame(frame_id=k, camera_id=camera.id, timestamp=t)
        for k, t in enumerate(frame_times(camera, duration))
    ]


def match_frame_index(camera: CameraModel, duration: float, t: float) -> int | None:
    """Nearest frame tick within half a frame period; ties go to the
    earlier frame.  None when no tick is close enough."""
    period = 1.0 / camera.frame_rate
    n_last = int(math.floor(duration * camera.frame_rate + 1e-9))
    k = int(math.floor(t / period))
    best, best_err = None, None
    for cand in (k, k + 1):
        if 0 <= cand <= n_last:
            err = abs(t - cand * period)
            # strict < keeps the earlier frame on exact ties
            if err <= period / 2 + 1e-12 and (best_err is None or err < best_err - 1e-12):
                best, best_err = cand, err
    return best


def generate_ground_truth(
    scene: Scene,
    camera: CameraModel,
    occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
    body: BodyBoxParams = BodyBoxParams(),
) -> list[Frame]:
    """Annotator-oracle frames: every in-frustum target labeled with its
    true height; ``occluded`` set when the hidden body fraction reaches the
    threshold."""
    frames = empty_frames(camera, scene.duration)
    for frame in frames:
        t = frame.timestamp
        for target in scene.targets:
            t0, t1 = target.span
            if not (t0 <= t <= t1):
                continue
            pos = position_at(target, t)
            try:
                bbox = synthesize_bbox(camera, pos, target.true_height, body.aspect_ratio)
            except GeometryError:
                continue
            hidden = body_hidden_fraction(
                camera, scene.occluders, pos, target.true_height, body.aspect_ratio
            )
            frame.labels.append(
                Label(
                    bbox=bbox,
                    provenance=Provenance.GROUND_TRUTH,
                    confidence=1.0,
                    depth=None,
                    identity=None,
                    occluded=hidden >= occlusion_threshold,
                )
            )
    return frames


def generate_rf_labels(
    scene: Scene,
    camera: CameraModel,
    fixes: list[LocalizationFix],
    params: BodyBoxParams = BodyBoxParams(),
) -> list[Frame]:
    """Project localization fixes into camera frames.

    Each fix is matched to the nearest frame within half a frame period
    (ties to the earlier frame); unmatched or out-of-frustum fixes produce
    no label.  Boxes use the average body template -- the system does not
    know true target sizes.
    """
    frames = empty_frames(camera, scene.duration)
    for fix in fixes:
        idx = match_frame_index(camera, scene.duration, fix.timestamp)
        if idx is None:
            continue
        try:
            bbox = synthesize_bbox(camera, fix.position, params.mean_height, params.aspect_ratio)
        except GeometryError:
            continue
        depth = float(camera_coords(camera, (fix.position[0], fix.position[1], 0.0))[2])
        frames[idx].labels.append(
            Label(
                bbox=bbox,
                provenance=Provenance.RF,
                confidence=fix.confidence,
                depth=depth,
                identity=fix.target_id,
                occluded=False,
            )
        )
    return frames


def ground_position_of_label(camera: CameraModel, label: Label) -> tuple[float, float]:
    """Ground position implied by a label's box (and depth, when carried)."""
    bbox = label.bbox
    if label.depth is not None:
        f = camera.focal_length
        cx, cy = camera.principal_point
        z = label.depth
        u_center = bbox.x + bbox.w / 2.0
        v_foot = bbox.y + bbox.h
        cam = np.array([(u_center - cx) * z / f, (v_foot - cy) * z / f, z])
        world = np.asarray(camera.position, float) + camera.rotation @ cam
        return (float(world[0]), float(world[1]))
    pos, _ = back_project(camera, bbox, BodyBoxParams().mean_height)
    return pos


def policy_suppresses(policy: OptOutPolicy, t: float, ground_pos=None) -> bool:
    """True when the policy removes data at time ``t`` / position ``ground_pos``."""
    if policy.full_opt_out:
        return True
    for start, end in policy.time_windows:
        if start <= t <= end:
            return True
    if ground_pos is not None:
        pt = Point(float(ground_pos[0]), float(ground_pos[1]))
        for pts in policy.regions:
            if Polygon(pts).covers(pt):
                return True
    return False


def apply_optout(
    frames: list[Frame],
    policies,
    cameras: dict[str, CameraModel] | None = None,
) -> list[Frame]:
    """Drop labels belonging to opted-out identities.

    Region policies need the label's ground position, so ``cameras`` (a
    camera_id -> CameraModel map) is required when any policy has regions
    and labels cannot be positioned otherwise.
    """
    by_device = {p.device_id: p for p in policies}
    out = []
    for frame in frames:
        kept = []
        for label in frame.labels:
            policy = by_device.get(label.identity) if label.identity else None
            if policy is None:
                kept.append(label)
                continue
            ground = None
            if policy.regions:
                if cameras is None or frame.camera_id not in cameras:
                    raise ConfigError(
                        "opt-out has region policies: pass the camera models so label "
                        "positions can be recovered"
                    )
                try:
                    ground = ground_position_of_label(cameras[frame.camera_id], label)
                except GeometryError:
                    ground = None
            if not policy_suppresses(policy, frame.timestamp, ground):
                kept.append(label)
        out.append(Frame(frame.frame_id, frame.camera_id, frame.timestamp, kept))
    return out


def _rolling_median(values: np.ndarray, times: np.ndarray, window: float) -> np.ndarray:
    out = np.empty_like(values)
    for i, t in enumerate(times):
        mask = np.abs(times - t) <= window / 2.0
        out[i] = np.median(values[mask])
    return out


def classify_activity(
    fixes: list[LocalizationFix],
    road_regions: dict[str, tuple] | None = None,
    bands: dict[Activity, tuple[float, float]] | None = None,
    smoothing_s: float = DEFAULT_SPEED_SMOOTHING_S,
) -> Activity:
    """Activity from the speed profile of one identity's fixes.

    The median smoothed speed is looked up in the configured bands (gaps
    resolve to the nearest band).  Speeds at running pace or above on a
    "bike_lane" region classify as biking: position separates riders from
    runners at similar speeds.
    """
    bands = bands or DEFAULT_SPEED_BANDS
    if len(fixes) < 2:
        raise ConfigError("activity classification needs at least two fixes")
    fixes = sorted(fixes, key=lambda f: f.timestamp)
    times = np.array([f.timestamp for f in fixes])
    if times[-1] - times[0] < smoothing_s:
        raise ConfigError(
            f"fix sequence spans {times[-1] - times[0]:.2f} s; "
            f"need at least the {smoothing_s} s smoothing window"
        )
    pos = np.array([f.position for f in fixes])
    dt = np.diff(times)
    step = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    speeds = step / dt
    mid_times = (times[:-1] + times[1:]) / 2.0
    smoothed = _rolling_median(speeds, mid_times, smoothing_s)
    speed = float(np.median(smoothed))

    on_bike_lane = False
    if road_regions and "bike_lane" in road_regions:
        lane = Polygon(road_regions["bike_lane"])
        inside = sum(lane.covers(Point(p[0], p[1])) for p in pos)
        on_bike_lane = inside > len(pos) / 2.0
    if on_bike_lane and speed >= bands[Activity.RUNNING][0]:
        return Activity.BIKING

    containing = [a for a, (lo, hi) in bands.items() if lo <= speed <= hi]
    if containing:
        return containing[0]
    # gap speed: nearest band edge wins
    def distance(activity: Activity) -> float:
        lo, hi = bands[activity]
        return min(abs(speed - lo), abs(speed - hi))
    return min(bands, key=distance)


def correlate_identities(frames: list[Frame]) -> dict[str, list[tuple[str, int, Label]]]:
    """Group labels by device identity across cameras and time.

    Returns identity -> time-ordered (camera_id, frame_id, label) entries;
    labels without identity are ignored.
    """
    groups: dict[str, list[tuple[float, str, int, Label]]] = {}
    for frame in frames:
        for label in frame.labels:
            if label.identity is None:
                continue
            groups.setdefault(label.identity, []).append(
                (frame.timestamp, frame.camera_id, frame.frame_id, label)
            )
    return {
        identity: [(cam, fid, lab) for _, cam, fid, lab in sorted(entries, key=lambda e: (e[0], e[1]))]
        for identity, entries in groups.items()
    }


def strip_injected_flags(frames: list[Frame]) -> list[Frame]:
    """Copy of frames with internal injection bookkeeping cleared."""
    return [
        Frame(
            f.frame_id,
            f.camera_id,
            f.timestamp,
            [replace(label, injected=False) for label in f.labels],
        )
        for f in frames
    ]
