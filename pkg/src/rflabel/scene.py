"""World model: geometry, devices, trajectories, privacy policies.

A Scene bundles cameras, ranging transmitters, moving targets, occluders,
named road regions and opt-out policies inside a rectangular bounded area
with the ground at z = 0.  Scenes are validated on construction and never
mutated afterwards, so they are safe to share across workers.

Scene descriptions are plain JSON documents (see ``build_scene``); the
``street_config`` template provides a ready-made two-transmitter street.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from shapely.geometry import LineString, Point, Polygon

from .errors import ConfigError, GeometryError
from .projection import CameraModel, orientation_for_lookat

# Height above ground of a carried ranging device, used as the target-side
# endpoint for line-of-sight tests and true-distance computation.
DEVICE_HEIGHT_M = 1.2


class Activity(str, Enum):
    STATIONARY = "stationary"
    WALKING = "walking"
    RUNNING = "running"
    BIKING = "biking"


# Default speed bands (m/s) per activity.  Values are conventional gait
# figures, overridable through any function that accepts ``bands``.
DEFAULT_SPEED_BANDS: dict[Activity, tuple[float, float]] = {
    Activity.STATIONARY: (0.0, 0.2),
    Activity.WALKING: (1.0, 1.8),
    Activity.RUNNING: (2.2, 3.5),
    Activity.BIKING: (3.5, 7.0),
}


@dataclass(frozen=True)
class TxNode:
    """Fixed ranging transmitter (beacon initiator)."""

    id: str
    position: tuple[float, float, float]
    tx_power: float = 15.0  # dBm


@dataclass(frozen=True)
class Target:
    """A moving target; ``device_id`` absent means it is invisible to ranging."""

    device_id: str | None
    true_height: float
    trajectory: tuple[tuple[float, float, float], ...]  # (t, x, y), t increasing
    activity_truth: Activity = Activity.WALKING

    def __post_init__(self):
        if not (0.5 < self.true_height < 2.5):
            raise ConfigError(
                f"target {self.device_id!r}: true_height {self.true_height} outside (0.5, 2.5) m"
            )
        if len(self.trajectory) == 0:
            raise ConfigError(f"target {self.device_id!r}: empty trajectory")
        times = [w[0] for w in self.trajectory]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError(
                f"target {self.device_id!r}: trajectory timestamps must be strictly increasing"
            )

    @property
    def span(self) -> tuple[float, float]:
        return (self.trajectory[0][0], self.trajectory[-1][0])


@dataclass(frozen=True)
class Occluder:
    """Vertical prism: a simple 2D footprint extruded to ``height``."""

    footprint: tuple[tuple[float, float], ...]
    height: float

    def __post_init__(self):
        if self.height <= 0:
            raise ConfigError("occluder height must be > 0")
        poly = Polygon(self.footprint)
        if len(self.footprint) < 3 or not poly.is_valid or poly.area <= 0:
            raise ConfigError(f"occluder footprint {self.footprint} is not a simple polygon")

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.footprint)


@dataclass(frozen=True)
class OptOutPolicy:
    """Per-device privacy rule: full opt-out, time windows, or 2D regions."""

    device_id: str
    full_opt_out: bool = False
    time_windows: tuple[tuple[float, float], ...] = ()
    regions: tuple[tuple[tuple[float, float], ...], ...] = ()

    def __post_init__(self):
        wins = sorted(self.time_windows)
        for start, end in wins:
            if start >= end:
                raise ConfigError(
                    f"opt-out for {self.device_id!r}: window [{start}, {end}] has start >= end"
                )
        for (_, e0), (s1, _) in zip(wins, wins[1:]):
            if s1 < e0:
                raise ConfigError(f"opt-out for {self.device_id!r}: overlapping time windows")
        for pts in self.regions:
            poly = Polygon(pts)
            if len(pts) < 3 or not poly.is_valid or poly.area <= 0:
                raise ConfigError(f"opt-out for {self.device_id!r}: malformed region polygon")


@dataclass(frozen=True)
class Scene:
    cameras: tuple[CameraModel, ...]
    transmitters: tuple[TxNode, ...]
    targets: tuple[Target, ...]
    occluders: tuple[Occluder, ...] = ()
    opt_out_policies: tuple[OptOutPolicy, ...] = ()
    road_regions: dict[str, tuple[tuple[float, float], ...]] = field(default_factory=dict)
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 10.0, 10.0)  # xmin, ymin, xmax, ymax
    duration: float = 10.0

    def camera(self, camera_id: str) -> CameraModel:
        for cam in self.cameras:
            if cam.id == camera_id:
                return cam
        raise ConfigError(f"no camera with id {camera_id!r}")

    def transmitter(self, tx_id: str) -> TxNode:
        for tx in self.transmitters:
            if tx.id == tx_id:
                return tx
        raise ConfigError(f"no transmitter with id {tx_id!r}")

    def target_by_device(self, device_id: str) -> Target:
        for t in self.targets:
            if t.device_id == device_id:
                return t
        raise ConfigError(f"no target with device id {device_id!r}")

    def rf_targets(self) -> tuple[Target, ...]:
        return tuple(t for t in self.targets if t.device_id is not None)

    def region_polygon(self, name: str) -> Polygon:
        if name not in self.road_regions:
            raise ConfigError(f"no road region named {name!r}")
        return Polygon(self.road_regions[name])

    def bounds_polygon(self) -> Polygon:
        x0, y0, x1, y1 = self.bounds
        return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def position_at(target: Target, t: float) -> np.ndarray:
    """Ground position of ``target`` at time ``t``, linearly interpolated.

    Exact at waypoints; raises GeometryError outside the trajectory span.
    """
    traj = target.trajectory
    t0, t1 = target.span
    if t < t0 or t > t1:
        raise GeometryError(
            f"t={t} outside trajectory span [{t0}, {t1}] of target {target.device_id!r}"
        )
    times = np.array([w[0] for w in traj])
    idx = int(np.searchsorted(times, t, side="right")) - 1
    idx = max(0, min(idx, len(traj) - 2)) if len(traj) > 1 else 0
    ta, xa, ya = traj[idx]
    if len(traj) == 1 or t == ta:
        return np.array([xa, ya], dtype=float)
    tb, xb, yb = traj[idx + 1]
    frac = (t - ta) / (tb - ta)
    return np.array([xa + frac * (xb - xa), ya + frac * (yb - ya)], dtype=float)


def generate_trajectory(
    kind: Activity | str,
    duration: float,
    region,
    seed: int,
    bands: dict[Activity, tuple[float, float]] | None = None,
    max_tries: int = 200,
) -> tuple[tuple[float, float, float], ...]:
    """Random waypoint track inside ``region`` at 1 Hz.

    Every consecutive-waypoint speed lies in the band configured for
    ``kind``.  Identical seeds reproduce identical tracks.  Raises
    ConfigError when the region cannot hold a step of the required length.
    """
    kind = Activity(kind)
    if duration <= 0:
        raise ConfigError("trajectory duration must be > 0")
    band = (bands or DEFAULT_SPEED_BANDS)[kind]
    poly = region if isinstance(region, Polygon) else Polygon(region)
    if not poly.is_valid or poly.area <= 0:
        raise ConfigError("trajectory region is not a valid polygon")
    rng = np.random.default_rng(seed)

    minx, miny, maxx, maxy = poly.bounds
    start = None
    for _ in range(max_tries):
        cand = (rng.uniform(minx, maxx), rng.uniform(miny, maxy))
        if poly.contains(Point(cand)):
            start = cand
            break
    if start is None:
        raise ConfigError("region too small: could not place a trajectory start point")

    n_steps = int(math.floor(duration))
    waypoints = [(0.0, start[0], start[1])]
    if kind is Activity.STATIONARY:
        for k in range(1, n_steps + 1):
            waypoints.append((float(k), start[0], start[1]))
        return tuple(waypoints)

    heading = rng.uniform(0, 2 * math.pi)
    x, y = start
    for k in range(1, n_steps + 1):
        placed = False
        for attempt in range(max_tries):
            speed = rng.uniform(band[0], band[1])
            # wander, with progressively wilder turns if we keep hitting walls
            turn_scale = 0.6 if attempt < max_tries // 2 else math.pi
            cand_heading = heading + rng.uniform(-turn_scale, turn_scale)
            nx = x + speed * math.cos(cand_heading)
            ny = y + speed * math.sin(cand_heading)
            if poly.contains(Point(nx, ny)):
                x, y, heading = nx, ny, cand_heading
                placed = True
                break
        if not placed:
            raise ConfigError(
                f"region too small to hold a {kind.value} trajectory "
                f"(stuck after {k - 1} of {n_steps} steps)"
            )
        waypoints.append((float(k), x, y))
    return tuple(waypoints)


# ---------------------------------------------------------------------------
# Visibility geometry

def segment_blocked_3d(p0, p1, occluder: Occluder) -> bool:
    """True when the 3D segment p0 -> p1 passes through the occluder prism."""
    a = np.asarray(p0, dtype=float)
    b = np.asarray(p1, dtype=float)
    seg = LineString([(a[0], a[1]), (b[0], b[1])])
    if seg.length == 0:
        return bool(occluder.polygon.contains(Point(a[0], a[1]))) and min(a[2], b[2]) <= occluder.height
    inter = seg.intersection(occluder.polygon)
    if inter.is_empty:
        return False
    pieces = getattr(inter, "geoms", [inter])
    for piece in pieces:
        if piece.geom_type == "Point":
            params = [seg.project(piece) / seg.length]
        elif piece.geom_type == "LineString":
            c0, c1 = piece.coords[0], piece.coords[-1]
            params = [seg.project(Point(c0)) / seg.length, seg.project(Point(c1)) / seg.length]
        else:
            continue
        for t in params:
            z = a[2] + t * (b[2] - a[2])
            if z <= occluder.height:
                return True
    return False


def rf_path_blocked(tx: TxNode, target_xy, occluders) -> bool:
    """Line-of-sight test for a ranging path.

    The path is the 2D segment from the transmitter to the target at device
    carry height; an occluder blocks it only when its footprint crosses the
    segment and its height exceeds both endpoint heights.
    """
    seg = LineString([(tx.position[0], tx.position[1]), (float(target_xy[0]), float(target_xy[1]))])
    endpoint_max = max(tx.position[2], DEVICE_HEIGHT_M)
    for occ in occluders:
        if occ.height > endpoint_max and seg.intersects(occ.polygon):
            return True
    return False


def body_hidden_fraction(
    camera: CameraModel,
    occluders,
    ground_pos,
    height: float,
    aspect: float,
    grid: tuple[int, int] = (5, 7),
) -> float:
    """Fraction of the body box hidden from the camera by occluders.

    The body is a vertical rectangle facing the camera (width = aspect *
    height); visibility is sampled on a grid of rays from the optical
    center.
    """
    if not occluders:
        return 0.0
    cam_pos = np.asarray(camera.position, dtype=float)
    g = np.array([ground_pos[0], ground_pos[1]], dtype=float)
    to_target = g - cam_pos[:2]
    dist = np.linalg.norm(to_target)
    if dist < 1e-9:
        return 0.0
    # horizontal direction across the body, perpendicular to the view ray
    perp = np.array([-to_target[1], to_target[0]]) / dist
    half_w = aspect * height / 2.0
    n_across, n_up = grid
    hidden = 0
    total = 0
    for u in np.linspace(-half_w, half_w, n_across):
        base = g + u * perp
        for z in np.linspace(0.05 * height, 0.95 * height, n_up):
            total += 1
            point = np.array([base[0], base[1], z])
            if any(segment_blocked_3d(cam_pos, point, occ) for occ in occluders):
                hidden += 1
    return hidden / total


# ---------------------------------------------------------------------------
# Construction and serialization

def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def camera_from_entry(entry: dict) -> CameraModel:
    """Parse one camera description (``orientation`` or ``look_at``)."""
    cam_id = str(entry.get("id", ""))
    _require(bool(cam_id), "camera entry is missing an id")
    try:
        position = tuple(float(v) for v in entry["position"])
        if "look_at" in entry and "orientation" in entry:
            raise ConfigError(
                f"camera {cam_id!r}: give either orientation or look_at, not both"
            )
        if "look_at" in entry:
            orientation = orientation_for_lookat(position, entry["look_at"])
        else:
            orientation = tuple(float(v) for v in entry.get("orientation", (0.0, 0.0, 0.0)))
        return CameraModel(
            id=cam_id,
            position=position,
            orientation=orientation,
            focal_length=float(entry["focal_length"]),
            principal_point=tuple(float(v) for v in entry["principal_point"]),
            image_size=tuple(int(v) for v in entry["image_size"]),
            frame_rate=float(entry["frame_rate"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"camera {cam_id!r}: malformed entry: {exc}") from exc


def _in_bounds(bounds, x: float, y: float) -> bool:
    x0, y0, x1, y1 = bounds
    return x0 <= x <= x1 and y0 <= y <= y1


def build_scene(config: dict) -> Scene:
    """Validate a scene description and return an immutable Scene.

    Raises ConfigError naming the offending entity for duplicate ids,
    out-of-bounds positions and malformed polygons.
    """
    _require(isinstance(config, dict), "scene config must be a JSON object")
    bounds = tuple(float(v) for v in config.get("bounds", (0, 0, 10, 10)))
    _require(len(bounds) == 4, "bounds must be [xmin, ymin, xmax, ymax]")
    _require(bounds[0] < bounds[2] and bounds[1] < bounds[3], "bounds must have positive extent")
    duration = float(config.get("duration", 10.0))
    _require(duration > 0, "scene duration must be > 0")

    cameras = [camera_from_entry(entry) for entry in config.get("cameras", [])]
    _require(len({c.id for c in cameras}) == len(cameras), "duplicate camera id")

    transmitters = []
    seen_tx = set()
    for entry in config.get("transmitters", []):
        tx_id = str(entry.get("id", ""))
        _require(bool(tx_id), "transmitter entry is missing an id")
        if tx_id in seen_tx:
            raise ConfigError(f"duplicate transmitter id {tx_id!r}")
        seen_tx.add(tx_id)
        transmitters.append(
            TxNode(
                id=tx_id,
                position=tuple(float(v) for v in entry["position"]),
                tx_power=float(entry.get("tx_power", 15.0)),
            )
        )

    targets = []
    seen_dev = set()
    for i, entry in enumerate(config.get("targets", [])):
        device_id = entry.get("device_id")
        device_id = str(device_id) if device_id is not None else None
        if device_id is not None:
            if device_id in seen_dev:
                raise ConfigError(f"duplicate device id {device_id!r}")
            seen_dev.add(device_id)
        waypoints = tuple(tuple(float(v) for v in w) for w in entry["waypoints"])
        targets.append(
            Target(
                device_id=device_id,
                true_height=float(entry.get("true_height", 1.76)),
                trajectory=waypoints,
                activity_truth=Activity(entry.get("activity", "walking")),
            )
        )

    occluders = tuple(
        Occluder(
            footprint=tuple(tuple(float(v) for v in p) for p in entry["footprint"]),
            height=float(entry["height"]),
        )
        for entry in config.get("occluders", [])
    )

    road_regions = {}
    for name, pts in config.get("road_regions", {}).items():
        poly_pts = tuple(tuple(float(v) for v in p) for p in pts)
        poly = Polygon(poly_pts)
        if len(poly_pts) < 3 or not poly.is_valid or poly.area <= 0:
            raise ConfigError(f"road region {name!r} is not a simple polygon")
        road_regions[str(name)] = poly_pts

    policies = tuple(
        OptOutPolicy(
            device_id=str(entry["device_id"]),
            full_opt_out=bool(entry.get("full", False)),
            time_windows=tuple(tuple(float(v) for v in w) for w in entry.get("windows", [])),
            regions=tuple(
                tuple(tuple(float(v) for v in p) for p in poly)
                for poly in entry.get("regions", [])
            ),
        )
        for entry in config.get("opt_out", [])
    )

    # positional containment
    for cam in cameras:
        if not _in_bounds(bounds, cam.position[0], cam.position[1]):
            raise ConfigError(f"camera {cam.id!r} position outside scene bounds")
    for tx in transmitters:
        if not _in_bounds(bounds, tx.position[0], tx.position[1]):
            raise ConfigError(f"transmitter {tx.id!r} position outside scene bounds")
    for tgt in targets:
        for (_, x, y) in tgt.trajectory:
            if not _in_bounds(bounds, x, y):
                raise ConfigError(
                    f"target {tgt.device_id!r} waypoint ({x}, {y}) outside scene bounds"
                )
    for occ in occluders:
        for (x, y) in occ.footprint:
            if not _in_bounds(bounds, x, y):
                raise ConfigError(f"occluder vertex ({x}, {y}) outside scene bounds")

    _require(len(cameras) >= 1, "scene needs at least one camera")
    _require(len(transmitters) >= 2, "scene needs at least two transmitters for ranging")

    return Scene(
        cameras=tuple(cameras),
        transmitters=tuple(transmitters),
        targets=tuple(targets),
        occluders=occluders,
        opt_out_policies=policies,
        road_regions=road_regions,
        bounds=bounds,
        duration=duration,
    )


def scene_to_config(scene: Scene) -> dict:
    """Inverse of build_scene; round-trips field-for-field."""
    return {
        "bounds": list(scene.bounds),
        "duration": scene.duration,
        "cameras": [
            {
                "id": c.id,
                "position": list(c.position),
                "orientation": list(c.orientation),
                "focal_length": c.focal_length,
                "principal_point": list(c.principal_point),
                "image_size": list(c.image_size),
                "frame_rate": c.frame_rate,
            }
            for c in scene.cameras
        ],
        "transmitters": [
            {"id": t.id, "position": list(t.position), "tx_power": t.tx_power}
            for t in scene.transmitters
        ],
        "targets": [
            {
                "device_id": t.device_id,
                "true_height": t.true_height,
                "activity": t.activity_truth.value,
                "waypoints": [list(w) for w in t.trajectory],
            }
            for t in scene.targets
        ],
        "occluders": [
            {"footprint": [list(p) for p in o.footprint], "height": o.height}
            for o in scene.occluders
        ],
        "road_regions": {k: [list(p) for p in v] for k, v in scene.road_regions.items()},
        "opt_out": [
            {
                "device_id": p.device_id,
                "full": p.full_opt_out,
                "windows": [list(w) for w in p.time_windows],
                "regions": [[list(pt) for pt in poly] for poly in p.regions],
            }
            for p in scene.opt_out_policies
        ],
    }


def street_config() -> dict:
    """Default street template: a 5 x 40 m street with one camera at the
    near end, two transmitters along the left edge, a sidewalk walker, a
    bike-lane rider and one device-free pedestrian."""
    return {
        "bounds": [0.0, 0.0, 5.0, 40.0],
        "duration": 30.0,
        "cameras": [
            {
                "id": "cam0",
                "position": [2.5, 0.0, 1.8],
                "look_at": [2.5, 20.0, 1.8],
                "focal_length": 800.0,
                "principal_point": [640.0, 360.0],
                "image_size": [1280, 720],
                "frame_rate": 10.0,
            }
        ],
        "transmitters": [
            {"id": "tx0", "position": [0.2, 8.0, 2.0], "tx_power": 15.0},
            {"id": "tx1", "position": [0.2, 28.0, 2.0], "tx_power": 15.0},
        ],
        "targets": [
            {
                "device_id": "aa:bb:cc:dd:ee:01",
                "true_height": 1.68,
                "activity": "walking",
                "waypoints": [[0.0, 0.75, 36.0], [30.0, 0.75, 6.0]],
            },
            {
                "device_id": "aa:bb:cc:dd:ee:02",
                "true_height": 1.85,
                "activity": "biking",
                "waypoints": [[0.0, 4.25, 2.0], [8.0, 4.25, 38.0]],
            },
            {
                "device_id": None,
                "true_height": 1.76,
                "activity": "walking",
                "waypoints": [[0.0, 1.9, 6.0], [30.0, 1.9, 36.0]],
            },
        ],
        "occluders": [
            {
                "footprint": [[1.8, 14.0], [3.2, 14.0], [3.2, 16.0], [1.8, 16.0]],
                "height": 2.5,
            }
        ],
        "road_regions": {
            "sidewalk": [[0.0, 0.0], [1.5, 0.0], [1.5, 40.0], [0.0, 40.0]],
            "bike_lane": [[3.5, 0.0], [5.0, 0.0], [5.0, 40.0], [3.5, 40.0]],
        },
        "opt_out": [],
    }
