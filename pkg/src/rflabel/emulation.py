"""Noisy-label emulation on existing annotation sets.

Instead of running the full ranging pipeline, each annotation is lifted to
a 3D ground position (pinhole back-projection with a sampled plausible
body height), displaced by a draw from the calibrated localization-error
sampler, and re-projected.  Coverage thinning then keeps each label
independently with probability p.

The displacement is split into two image-meaningful components:

* depth: along the ray from the camera's ground point through the target
  -- slides the target away/toward the camera, rescaling the box while its
  center column stays put;
* angular: parallel to the image plane (perpendicular to the optical axis
  on the ground) -- shifts the box sideways while its size stays put.

The two directions are not orthogonal off-axis, so the sampled 2D
displacement is resolved obliquely onto them; ``both`` applies the full
displacement, and equals the composition of the two components.
Emulation requires a level, roll-free camera: that is what makes
back-projection exact and the component effects clean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from shapely.geometry import Point

from .errors import ConfigError, GeometryError
from .labeling import Frame, Label, Provenance
from .localization import ErrorConfig, sample_localization_error
from .projection import BodyBoxParams, CameraModel, synthesize_bbox, back_project
from .rng import derive_seed, stream
from .scene import Scene, body_hidden_fraction, position_at


class ErrorMode(str, Enum):
    ANGULAR_ONLY = "angular_only"
    DEPTH_ONLY = "depth_only"
    BOTH = "both"


@dataclass(frozen=True)
class EmulationSpec:
    """Controls one emulation run."""

    error_config: ErrorConfig
    coverage_p: float = 1.0
    mode: ErrorMode = ErrorMode.BOTH
    height_variation_enabled: bool = True
    seed: int = 0
    body: BodyBoxParams = BodyBoxParams()

    def __post_init__(self):
        if not (0.0 <= self.coverage_p <= 1.0):
            raise ConfigError("coverage_p must lie in [0, 1]")


@dataclass
class EmulationReport:
    input_labels: int = 0
    output_labels: int = 0
    skipped_clipped: int = 0
    dropped_out_of_frame: int = 0
    dropped_by_coverage: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def apply_coverage(labels: list[Label], p: float, rng: np.random.Generator) -> list[Label]:
    """Keep each label independently with probability ``p``."""
    if not (0.0 <= p <= 1.0):
        raise ConfigError("coverage probability must lie in [0, 1]")
    if p >= 1.0:
        return list(labels)
    if p <= 0.0:
        return []
    draws = rng.random(len(labels))
    return [label for label, u in zip(labels, draws) if u < p]


def sample_assumed_height(
    params: BodyBoxParams, rng: np.random.Generator, enabled: bool = True
) -> float:
    """Plausible body height: uniform within +/- the configured variation."""
    if not enabled or params.height_variation == 0:
        return params.mean_height
    lo = params.mean_height * (1.0 - params.height_variation)
    hi = params.mean_height * (1.0 + params.height_variation)
    return float(rng.uniform(lo, hi))


def _camera_ground_axes(camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """(right, forward) unit vectors of the camera on the ground plane."""
    r = camera.rotation
    right = np.array([r[0, 0], r[1, 0]])
    forward = np.array([r[0, 2], r[1, 2]])
    nr, nf = np.linalg.norm(right), np.linalg.norm(forward)
    if nr < 1e-9 or nf < 1e-9:
        raise GeometryError("camera axes degenerate on the ground plane")
    return right / nr, forward / nf


def decompose_displacement(
    camera: CameraModel, ground_pos, displacement
) -> tuple[np.ndarray, np.ndarray]:
    """Resolve a 2D displacement into (angular, depth) components.

    angular is parallel to the image plane (constant depth); depth is along
    the camera-to-target ground ray (constant image column).  The sum of
    the two components reproduces the input displacement exactly.
    """
    right, _ = _camera_ground_axes(camera)
    ray = np.asarray(ground_pos, float) - np.asarray(camera.position[:2], float)
    norm = np.linalg.norm(ray)
    if norm < 1e-9:
        raise GeometryError("target sits on the camera's ground point")
    ray = ray / norm
    basis = np.column_stack([right, ray])
    det = np.linalg.det(basis)
    if abs(det) < 1e-9:
        raise GeometryError("view ray parallel to the image plane; cannot decompose")
    coeffs = np.linalg.solve(basis, np.asarray(displacement, float))
    return coeffs[0] * right, coeffs[1] * ray


def displace_ground_position(
    camera: CameraModel, ground_pos, displacement, mode: ErrorMode
) -> np.ndarray:
    pos = np.asarray(ground_pos, dtype=float)
    if mode is ErrorMode.BOTH:
        return pos + np.asarray(displacement, float)
    angular, depth = decompose_displacement(camera, ground_pos, displacement)
    return pos + (angular if mode is ErrorMode.ANGULAR_ONLY else depth)


def emulate_noisy_labels(
    frames: list[Frame], camera: CameraModel, spec: EmulationSpec
) -> tuple[list[Frame], EmulationReport]:
    """Perturb every label as the localization pipeline would.

    Clipped input boxes cannot be back-projected and are skipped (counted
    in the report).  Per-label randomness derives from (seed, frame,
    label index), so results do not depend on processing order.
    """
    if not camera.is_level(tol=1e-6):
        raise ConfigError(
            f"camera {camera.id!r} must be level and roll-free for emulation"
        )
    report = EmulationReport()
    out_frames = []
    for frame in frames:
        kept: list[Label] = []
        for index, label in enumerate(frame.labels):
            report.input_labels += 1
            if label.bbox.clipped:
                report.skipped_clipped += 1
                continue
            rng = stream(spec.seed, "emulate", frame.camera_id, frame.frame_id, index)
            height = sample_assumed_height(spec.body, rng, spec.height_variation_enabled)
            ground, _depth = back_project(camera, label.bbox, height)
            displacement = sample_localization_error(spec.error_config, rng)
            moved = displace_ground_position(camera, ground, displacement, spec.mode)
            try:
                bbox = synthesize_bbox(camera, moved, height, spec.body.aspect_ratio)
            except GeometryError:
                report.dropped_out_of_frame += 1
                continue
            provenance = (
                Provenance.RF if label.provenance is Provenance.RF else Provenance.EMULATED_HUMAN
            )
            kept.append(
                replace(
                    label,
                    bbox=bbox,
                    provenance=provenance,
                    confidence=label.confidence if provenance is Provenance.RF else min(label.confidence, 1.0),
                )
            )
        out_frames.append(Frame(frame.frame_id, frame.camera_id, frame.timestamp, kept))

    survivors = sum(len(f.labels) for f in out_frames)
    if spec.coverage_p < 1.0:
        cov_rng = stream(spec.seed, "coverage")
        for frame in out_frames:
            frame.labels = apply_coverage(frame.labels, spec.coverage_p, cov_rng)
    report.output_labels = sum(len(f.labels) for f in out_frames)
    report.dropped_by_coverage = survivors - report.output_labels
    return out_frames, report


def occluder_shadow_positions(
    scene: Scene,
    camera: CameraModel,
    rng: np.random.Generator,
    count: int,
    height: float,
    aspect: float,
    hidden_fraction: float = 0.99,
    max_tries: int = 4000,
) -> list[tuple[float, float]]:
    """Sample ground positions hidden from the camera behind occluders."""
    if not scene.occluders:
        raise ConfigError("scene has no occluders: nothing casts a shadow")
    x0, y0, x1, y1 = scene.bounds
    found: list[tuple[float, float]] = []
    for _ in range(max_tries):
        if len(found) >= count:
            break
        pos = (rng.uniform(x0, x1), rng.uniform(y0, y1))
        frac = body_hidden_fraction(camera, scene.occluders, pos, height, aspect)
        if frac < hidden_fraction:
            continue
        try:
            bbox = synthesize_bbox(camera, pos, height, aspect)
        except GeometryError:
            continue
        if bbox.clipped:
            continue
        found.append(pos)
    if len(found) < count:
        raise ConfigError(
            f"could only place {len(found)} of {count} hidden positions; "
            "occluder shadows too small inside the camera frustum"
        )
    return found


def inject_extraneous(
    frames: list[Frame],
    scene: Scene,
    rng: np.random.Generator,
    rate: float,
    camera: CameraModel | None = None,
    body: BodyBoxParams = BodyBoxParams(),
) -> tuple[list[Frame], int]:
    """Add labels for camera-hidden positions at ``rate`` per frame.

    Injected labels are flagged (``injected=True``) so extraneous-label
    detectors can be scored; identities reuse a hidden ranging-visible
    target when one exists at that instant.

    Returns (frames, injected_count).
    """
    if rate < 0:
        raise ConfigError("injection rate must be >= 0")
    if rate == 0:
        return [Frame(f.frame_id, f.camera_id, f.timestamp, list(f.labels)) for f in frames], 0
    cam = camera or (scene.cameras[0] if scene.cameras else None)
    if cam is None:
        raise ConfigError("no camera available for injection")
    injected = 0
    out = []
    for frame in frames:
        labels = list(frame.labels)
        n_here = int(rng.poisson(rate))
        if n_here > 0:
            positions = occluder_shadow_positions(
                scene, cam, rng, n_here, body.mean_height, body.aspect_ratio
            )
            identity = _hidden_identity(scene, cam, frame.timestamp, body)
            for pos in positions:
                bbox = synthesize_bbox(cam, pos, body.mean_height, body.aspect_ratio)
                depth = None
                try:
                    _, depth = back_project(cam, bbox, body.mean_height)
                except GeometryError:
                    continue
                labels.append(
                    Label(
                        bbox=bbox,
                        provenance=Provenance.RF,
                        confidence=1.0,
                        depth=depth,
                        identity=identity,
                        occluded=False,
                        injected=True,
                    )
                )
                injected += 1
        out.append(Frame(frame.frame_id, frame.camera_id, frame.timestamp, labels))
    return out, injected


def _hidden_identity(scene: Scene, camera: CameraModel, t: float, body: BodyBoxParams) -> str:
    for target in scene.rf_targets():
        t0, t1 = target.span
        if not (t0 <= t <= t1):
            continue
        pos = position_at(target, t)
        if body_hidden_fraction(camera, scene.occluders, pos, target.true_height, body.aspect_ratio) >= 0.99:
            return target.device_id
    return "02:00:00:00:00:99"  # synthetic locally-administered address
