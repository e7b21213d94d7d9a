"""Round-trip-time ranging simulation with an empirical noise model.

A measured distance is the true transmitter-to-device distance plus a
folded heavy-tailed error: the signed error is a zero-location Student-t
scaled so its standard deviation matches the modelled hardware (0.54 m by
default), and the magnitude is what the ranging stack reports.  Paths
blocked by an occluder take a detour: the measurement gains a fixed extra
path length and the received signal strength drops by a fixed penalty,
which is the time-series signature occlusion detectors key on.

RSS follows a log-distance path-loss law anchored at 1 m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GeometryError
from .scene import DEVICE_HEIGHT_M, Scene, Target, TxNode, position_at, rf_path_blocked

DEFAULT_RANGING_STD_M = 0.54
DEFAULT_T_DOF = 3.0
# RSS saturates below this range (near field); keeps the path-loss law finite
# for targets standing on top of a transmitter.
NEAR_FIELD_FLOOR_M = 1.0


@dataclass(frozen=True)
class RangingModel:
    """Noise and propagation parameters for a ranging deployment.

    ``t_scale`` is the Student-t scale (not the std); use
    :func:`model_for_std` to build a model from a target signed std.
    """

    t_scale: float
    t_dof: float = DEFAULT_T_DOF
    nlos_extra_path: float = 3.0     # m added to blocked-path measurements
    nlos_rss_penalty: float = 15.0   # dB lost on blocked paths
    pathloss_exponent: float = 2.0
    ref_rss_1m: float = -40.0        # dBm at 1 m, line of sight

    def __post_init__(self):
        if self.t_scale < 0:
            raise ConfigError("t_scale must be >= 0")
        if self.t_dof <= 2:
            raise ConfigError("t_dof must be > 2 so the signed error has finite std")
        if self.nlos_extra_path < 0 or self.nlos_rss_penalty < 0:
            raise ConfigError("NLoS penalties must be >= 0")

    @property
    def signed_std(self) -> float:
        """Standard deviation of the signed (pre-fold) error."""
        return self.t_scale * math.sqrt(self.t_dof / (self.t_dof - 2.0))


def model_for_std(std: float = DEFAULT_RANGING_STD_M, dof: float = DEFAULT_T_DOF, **kwargs) -> RangingModel:
    """RangingModel whose signed error has the given standard deviation."""
    if std < 0:
        raise ConfigError("ranging std must be >= 0")
    scale = std * math.sqrt((dof - 2.0) / dof)
    return RangingModel(t_scale=scale, t_dof=dof, **kwargs)


DEFAULT_MODEL = model_for_std()


@dataclass(frozen=True)
class RangingSample:
    """One beacon exchange (or a burst aggregate) between a tx and a device."""

    tx_id: str
    target_id: str
    timestamp: float
    true_distance: float
    measured_distance: float
    rss: float
    los: bool

    def __post_init__(self):
        if self.true_distance < 0 or self.measured_distance < 0:
            raise ConfigError("distances must be >= 0")


def sample_signed_ranging_error(model: RangingModel, rng: np.random.Generator, size=None):
    """Signed pre-fold ranging error draw(s): t_scale * StudentT(dof)."""
    return model.t_scale * rng.standard_t(model.t_dof, size=size)


def sample_ranging_error(model: RangingModel, rng: np.random.Generator, size=None):
    """Folded ranging error draw(s); always non-negative."""
    return np.abs(sample_signed_ranging_error(model, rng, size=size))


def rss(distance: float, los: bool, model: RangingModel = DEFAULT_MODEL) -> float:
    """Received signal strength (dBm) under log-distance path loss.

    Strictly decreasing in distance; blocked paths pay the NLoS penalty.
    """
    if distance <= 0:
        raise GeometryError(f"rss undefined for distance {distance} <= 0")
    value = model.ref_rss_1m - 10.0 * model.pathloss_exponent * math.log10(distance)
    if not los:
        value -= model.nlos_rss_penalty
    return value


def true_distance(tx: TxNode, target: Target, t: float) -> float:
    """3D distance from the transmitter to the carried device at time t."""
    pos = position_at(target, t)
    dx = tx.position[0] - pos[0]
    dy = tx.position[1] - pos[1]
    dz = tx.position[2] - DEVICE_HEIGHT_M
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def measure_burst(
    tx: TxNode,
    target: Target,
    t: float,
    scene: Scene,
    model: RangingModel,
    rng: np.random.Generator,
    n: int,
) -> list[RangingSample]:
    """Simulate ``n`` beacon exchanges at time ``t``.

    Raises ConfigError for targets without a ranging device (they are
    invisible to the system and simply never produce samples).
    """
    if target.device_id is None:
        raise ConfigError("target carries no RF device and cannot be ranged")
    if n < 1:
        raise ConfigError("burst size must be >= 1")
    pos = position_at(target, t)
    dist = true_distance(tx, target, t)
    los = not rf_path_blocked(tx, pos, scene.occluders)
    errors = sample_ranging_error(model, rng, size=n)
    extra = 0.0 if los else model.nlos_extra_path
    rss_value = rss(max(dist, NEAR_FIELD_FLOOR_M), los, model)
    return [
        RangingSample(
            tx_id=tx.id,
            target_id=target.device_id,
            timestamp=t,
            true_distance=dist,
            measured_distance=float(dist + err + extra),
            rss=rss_value,
            los=los,
        )
        for err in errors
    ]


def measure_range(
    tx: TxNode,
    target: Target,
    t: float,
    scene: Scene,
    model: RangingModel,
    rng: np.random.Generator,
) -> RangingSample:
    """Single simulated beacon exchange."""
    return measure_burst(tx, target, t, scene, model, rng, n=1)[0]


def aggregate_burst(samples: list[RangingSample]) -> RangingSample:
    """Collapse a burst into one sample with the mean measurement and RSS."""
    if not samples:
        raise ConfigError("cannot aggregate an empty burst")
    first = samples[0]
    return RangingSample(
        tx_id=first.tx_id,
        target_id=first.target_id,
        timestamp=first.timestamp,
        true_distance=first.true_distance,
        measured_distance=float(np.mean([s.measured_distance for s in samples])),
        rss=float(np.mean([s.rss for s in samples])),
        los=all(s.los for s in samples),
    )
