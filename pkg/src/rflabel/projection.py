"""Ideal pinhole-camera geometry: projection, box synthesis, back-projection.

Conventions, fixed for the whole toolkit:

* World frame: right-handed, z up, ground plane at z = 0.
* Camera frame: x right, y down, z forward (optical axis).
* With orientation (0, 0, 0) the camera axes coincide with the world axes,
  so the optical axis points along world +z.
* orientation = (yaw, pitch, roll) in radians, applied in that order as
  intrinsic rotations about the camera's y, x and z axes:

      R_cam_to_world = Ry(yaw) @ Rx(pitch) @ Rz(roll)

  A level street camera looking along world +y with an upright image is
  therefore (0, -pi/2, 0).  Use :func:`orientation_for_lookat` instead of
  deriving angles by hand.
* Projection: u = cx + f * X/Z, v = cy + f * Y/Z in camera coordinates.

Lens distortion is not modelled.  Back-projection recovers depth from the
pixel height of a body of known physical height; the inversion is exact
only for level, roll-free cameras (vertical bodies then project with a
single depth), which is the intended mounting for street scenes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, GeometryError

# Average-adult body box used when the true size of a target is unknown.
MEAN_BODY_HEIGHT_M = 1.76
BODY_ASPECT_RATIO = 0.41
HEIGHT_VARIATION_FRACTION = 0.10


@dataclass(frozen=True)
class CameraModel:
    """Ideal pinhole camera placed in the world frame."""

    id: str
    position: tuple[float, float, float]
    orientation: tuple[float, float, float]  # yaw, pitch, roll (rad)
    focal_length: float                      # px
    principal_point: tuple[float, float]     # px
    image_size: tuple[int, int]              # width, height (px)
    frame_rate: float                        # Hz

    def __post_init__(self):
        if self.focal_length <= 0:
            raise ConfigError(f"camera {self.id!r}: focal_length must be > 0")
        if self.frame_rate <= 0:
            raise ConfigError(f"camera {self.id!r}: frame_rate must be > 0")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ConfigError(f"camera {self.id!r}: image_size must be positive")
        cx, cy = self.principal_point
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise ConfigError(
                f"camera {self.id!r}: principal_point must lie within the image"
            )

    @property
    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation matrix (3x3)."""
        return rotation_cam_to_world(*self.orientation)

    def is_level(self, tol: float = 1e-9) -> bool:
        """True when the optical axis is parallel to the ground and the
        image x axis is horizontal (no roll)."""
        r = self.rotation
        return abs(r[2, 2]) <= tol and abs(r[2, 0]) <= tol


@dataclass(frozen=True)
class BodyBoxParams:
    """Physical body-box template used to size synthesized boxes."""

    mean_height: float = MEAN_BODY_HEIGHT_M      # m
    aspect_ratio: float = BODY_ASPECT_RATIO      # width / height
    height_variation: float = HEIGHT_VARIATION_FRACTION

    def __post_init__(self):
        if self.mean_height <= 0 or self.aspect_ratio <= 0 or self.height_variation < 0:
            raise ConfigError("body-box parameters must be positive")
        if self.aspect_ratio >= 1:
            raise ConfigError("body aspect ratio must be < 1")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned image box, top-left corner + size, in pixels.

    ``clipped`` is set when the box was truncated at the image border;
    unclipped boxes lie fully inside the image.
    """

    x: float
    y: float
    w: float
    h: float
    clipped: bool = False

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "clipped", bool(self.clipped))
        if self.w <= 0 or self.h <= 0:
            raise GeometryError("bounding box must have positive width and height")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


@lru_cache(maxsize=256)
def _rotation_cached(yaw: float, pitch: float, roll: float) -> np.ndarray:
    r = _rot_y(yaw) @ _rot_x(pitch) @ _rot_z(roll)
    r.setflags(write=False)
    return r


def rotation_cam_to_world(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation taking camera-frame vectors to world-frame vectors."""
    return _rotation_cached(float(yaw), float(pitch), float(roll))


def orientation_for_lookat(
    position, point, up=(0.0, 0.0, 1.0)
) -> tuple[float, float, float]:
    """(yaw, pitch, roll) that aims the camera at ``point`` with an upright image.

    The image x axis is kept horizontal (perpendicular to ``up``); looking
    straight along ``up`` is rejected because "upright" is undefined there.
    """
    forward = np.asarray(point, dtype=float) - np.asarray(position, dtype=float)
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ConfigError("look-at point coincides with the camera position")
    forward /= norm
    up = np.asarray(up, dtype=float)
    right = np.cross(forward, up)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-12:
        raise ConfigError("camera cannot look straight along the up direction")
    right /= rnorm
    down = np.cross(forward, right)
    r = np.column_stack([right, down, forward])  # camera-to-world
    return _euler_yxz_from_matrix(r)


def _euler_yxz_from_matrix(r: np.ndarray) -> tuple[float, float, float]:
    # R = Ry(yaw) @ Rx(pitch) @ Rz(roll); R[1,2] = -sin(pitch)
    sp = -float(r[1, 2])
    sp = max(-1.0, min(1.0, sp))
    pitch = math.asin(sp)
    if abs(sp) < 1.0 - 1e-12:
        yaw = math.atan2(float(r[0, 2]), float(r[2, 2]))
        roll = math.atan2(float(r[1, 0]), float(r[1, 1]))
    else:
        # Gimbal branch (level camera): yaw and roll axes coincide; fold
        # the whole in-plane rotation into yaw.
        yaw = math.atan2(-float(r[2, 0]), float(r[0, 0]))
        roll = 0.0
    return (yaw, pitch, roll)


def camera_coords(camera: CameraModel, world_point) -> np.ndarray:
    """World point expressed in the camera frame (X right, Y down, Z forward)."""
    p = np.asarray(world_point, dtype=float) - np.asarray(camera.position, dtype=float)
    return camera.rotation.T @ p


def project_point(camera: CameraModel, world_point) -> tuple[float, float]:
    """Project a 3D world point to pixel coordinates (u, v).

    Raises GeometryError when the point has non-positive depth.
    """
    x, y, z = camera_coords(camera, world_point)
    if z <= 0:
        raise GeometryError(
            f"point {tuple(np.asarray(world_point, float))} is behind camera {camera.id!r}"
        )
    cx, cy = camera.principal_point
    f = camera.focal_length
    return (float(cx + f * x / z), float(cy + f * y / z))


def synthesize_bbox(
    camera: CameraModel,
    ground_pos,
    height: float,
    aspect: float = BODY_ASPECT_RATIO,
) -> BoundingBox:
    """Project a vertical body box standing at ``ground_pos`` into the image.

    The body is modelled as a vertical segment from the ground to ``height``;
    the box spans the projected foot and head points, its width is
    ``aspect`` times the pixel height, centered on the projected body axis.
    The result is truncated at the image border with ``clipped`` set.

    Raises GeometryError when the target is behind the camera or projects
    entirely outside the image.
    """
    if height <= 0:
        raise GeometryError("body height must be > 0")
    gx, gy = float(ground_pos[0]), float(ground_pos[1])
    u_foot, v_foot = project_point(camera, (gx, gy, 0.0))
    u_head, v_head = project_point(camera, (gx, gy, height))

    u_center = 0.5 * (u_foot + u_head)
    v_top = min(v_foot, v_head)
    v_bot = max(v_foot, v_head)
    h_px = v_bot - v_top
    if h_px <= 0:
        raise GeometryError("degenerate projection: zero pixel height")
    w_px = aspect * h_px

    w_img, h_img = camera.image_size
    x0, x1 = u_center - w_px / 2.0, u_center + w_px / 2.0
    y0, y1 = v_top, v_bot
    cx0, cx1 = max(x0, 0.0), min(x1, float(w_img))
    cy0, cy1 = max(y0, 0.0), min(y1, float(h_img))
    if cx1 <= cx0 or cy1 <= cy0:
        raise GeometryError(
            f"target at ({gx:.2f}, {gy:.2f}) projects outside camera {camera.id!r}"
        )
    clipped = x0 < 0 or y0 < 0 or x1 > w_img or y1 > h_img
    return BoundingBox(cx0, cy0, cx1 - cx0, cy1 - cy0, clipped=clipped)


def back_project(
    camera: CameraModel, bbox: BoundingBox, assumed_height: float
) -> tuple[tuple[float, float], float]:
    """Recover the ground position and depth of a box of known body height.

    Depth along the optical axis is Z = f * assumed_height / box_height;
    the lateral position comes from the box center column and the ground
    contact row.  Inverse of :func:`synthesize_bbox` for level cameras.

    Raises GeometryError for clipped boxes (their pixel height no longer
    encodes depth).
    """
    if bbox.clipped:
        raise GeometryError("cannot back-project a clipped box: depth not recoverable")
    if assumed_height <= 0:
        raise GeometryError("assumed height must be > 0")
    f = camera.focal_length
    cx, cy = camera.principal_point
    depth = f * assumed_height / bbox.h
    u_center = bbox.x + bbox.w / 2.0
    v_foot = bbox.y + bbox.h
    x_cam = (u_center - cx) * depth / f
    y_cam = (v_foot - cy) * depth / f
    foot_world = np.asarray(camera.position, float) + camera.rotation @ np.array(
        [x_cam, y_cam, depth]
    )
    return (float(foot_world[0]), float(foot_world[1])), float(depth)
