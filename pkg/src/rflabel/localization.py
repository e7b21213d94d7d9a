"""Position fixes from range bursts, plus the fast statistical error sampler.

Two routes produce localization error in this toolkit:

* the full pipeline: simulate beacon bursts, average per transmitter,
  trilaterate (`fix_from_burst`);
* the fast path: draw a displacement whose magnitude follows a gamma
  distribution calibrated to measured hardware quantiles
  (`sample_localization_error`), used to perturb existing annotations
  without running the ranging simulation.

The built-in hardware profiles expose the median / 95th-percentile error
targets (in meters) of four deployments ranging from a minimal
2-transmitter testbed (S0) to a dense, high-beacon-rate build-out (S3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import optimize, stats
from shapely.geometry import Point, Polygon

from .errors import ConfigError, SolverError
from .ranging import DEFAULT_MODEL, RangingSample
from .scene import DEVICE_HEIGHT_M

GAMMA_FIT_TOL_M = 1e-3  # 0.1 cm closure requirement on calibrated quantiles


@dataclass(frozen=True)
class ErrorConfig:
    """Named localization-error profile.

    ``gamma_shape`` / ``gamma_scale`` parameterize the error-magnitude
    distribution; ``target_median`` / ``target_p95`` (meters) are the
    measured quantiles the profile was calibrated against.
    """

    name: str
    num_tx: int
    samples_per_fix: int
    gamma_shape: float | None = None
    gamma_scale: float | None = None
    target_median: float | None = None
    target_p95: float | None = None

    def __post_init__(self):
        if self.num_tx < 2:
            raise ConfigError(f"error config {self.name!r}: num_tx must be >= 2")
        if self.samples_per_fix < 1:
            raise ConfigError(f"error config {self.name!r}: samples_per_fix must be >= 1")
        if self.gamma_shape is not None and self.gamma_shape <= 0:
            raise ConfigError(f"error config {self.name!r}: gamma shape must be > 0")
        if self.gamma_scale is not None and self.gamma_scale <= 0:
            raise ConfigError(f"error config {self.name!r}: gamma scale must be > 0")

    @property
    def calibrated(self) -> bool:
        return self.gamma_shape is not None and self.gamma_scale is not None


# Hardware profiles: (num_tx, beacons per fix, median m, 95th percentile m).
# S0 is a minimal 2-transmitter deployment; S1-S3 add transmitters and
# beacon rate.
BUILTIN_PROFILES: dict[str, tuple[int, int, float, float]] = {
    "S0": (2, 256, 1.320, 4.628),
    "S1": (4, 2048, 0.318, 0.938),
    "S2": (6, 2048, 0.246, 0.638),
    "S3": (6, 5012, 0.162, 0.420),
}


@dataclass(frozen=True)
class LocalizationFix:
    """Estimated ground position of one target at one instant."""

    target_id: str
    timestamp: float
    position: tuple[float, float]
    residual_rms: float
    num_tx_used: int
    confidence: float

    def __post_init__(self):
        if self.residual_rms < 0:
            raise ConfigError("residual_rms must be >= 0")
        if not (0.0 <= self.confidence <= 1.0):
            raise ConfigError("confidence must lie in [0, 1]")


def _as_polygon(region) -> Polygon | None:
    if region is None:
        return None
    return region if isinstance(region, Polygon) else Polygon(region)


def _two_range_solution(a, ra, b, rb, prior: Polygon | None) -> np.ndarray:
    d = float(np.linalg.norm(b - a))
    if d < 1e-12:
        raise SolverError("two-transmitter solve needs distinct transmitter positions")
    axis = (b - a) / d
    if d > ra + rb or d < abs(ra - rb):
        # Circles do not meet: the least-squares point sits on the center
        # line, splitting the residual equally between the two ranges.
        if d > ra + rb:
            x = (d + ra - rb) / 2.0
        elif ra >= rb:
            x = (ra + rb + d) / 2.0
        else:
            x = -(ra + rb - d) / 2.0
        return a + x * axis
    # Intersecting circles: mirror pair across the center line.
    x = (d * d + ra * ra - rb * rb) / (2.0 * d)
    h2 = ra * ra - x * x
    h = math.sqrt(max(h2, 0.0))
    perp = np.array([-axis[1], axis[0]])
    base = a + x * axis
    cand = [base + h * perp, base - h * perp]
    if h < 1e-12:
        return base
    if prior is None:
        raise SolverError(
            "two-transmitter ambiguity: a prior region is required to pick between "
            f"{tuple(cand[0])} and {tuple(cand[1])}"
        )
    inside = [p for p in cand if prior.covers(Point(p[0], p[1]))]
    if not inside:
        raise SolverError("two-transmitter ambiguity unresolved: both solutions outside prior region")
    if len(inside) == 2:
        # both admissible: keep the deterministic first candidate
        return cand[0]
    return inside[0]


def _linear_init(anchors: np.ndarray, dists: np.ndarray) -> np.ndarray:
    """Closed-form start point: difference the circle equations pairwise
    against the first anchor, which is linear in the position and exact for
    consistent ranges."""
    a0 = anchors[0]
    d0 = dists[0]
    mat = 2.0 * (anchors[1:] - a0)
    rhs = (
        np.sum(anchors[1:] ** 2, axis=1)
        - np.sum(a0**2)
        - dists[1:] ** 2
        + d0**2
    )
    solution, _res, rank, _sv = np.linalg.lstsq(mat, rhs, rcond=None)
    if rank < 2 or not np.all(np.isfinite(solution)):
        weights = 1.0 / np.maximum(dists, 1e-3)
        return (anchors * weights[:, None]).sum(axis=0) / weights.sum()
    return solution


def _gauss_newton(anchors: np.ndarray, dists: np.ndarray, init: np.ndarray,
                  max_iter: int = 100, tol: float = 1e-13) -> np.ndarray:
    p = init.astype(float).copy()
    lam = 1e-6
    cost = None
    for _ in range(max_iter):
        diff = p[None, :] - anchors
        norms = np.linalg.norm(diff, axis=1)
        norms = np.maximum(norms, 1e-12)
        residuals = norms - dists
        new_cost = float(residuals @ residuals)
        if cost is not None and abs(cost - new_cost) <= tol * (1.0 + cost):
            break
        cost = new_cost
        jac = diff / norms[:, None]
        jtj = jac.T @ jac
        jtr = jac.T @ residuals
        step = None
        for _damp in range(40):
            try:
                step = np.linalg.solve(jtj + lam * np.eye(2), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = p + step
            cand_res = np.linalg.norm(cand[None, :] - anchors, axis=1) - dists
            if float(cand_res @ cand_res) <= new_cost:
                p = cand
                lam = max(lam * 0.3, 1e-12)
                break
            lam *= 10.0
        else:
            break
        if not np.all(np.isfinite(p)):
            raise SolverError("trilateration diverged to non-finite position")
        if np.linalg.norm(step) < 1e-12 * (1.0 + np.linalg.norm(p)):
            break
    if not np.all(np.isfinite(p)):
        raise SolverError("trilateration diverged to non-finite position")
    return p


def trilaterate(ranges, prior_region=None) -> tuple[np.ndarray, float]:
    """Least-squares position from (tx position, distance) pairs.

    With exactly two ranges the analytic circle-intersection pair is
    resolved by prior-region membership.  With three or more, a damped
    Gauss-Newton solve refines a closed-form linearized start point.

    Returns (position, residual_rms).
    """
    pairs = [(np.asarray(p, dtype=float)[:2], float(d)) for p, d in ranges]
    if len(pairs) < 2:
        raise SolverError("trilateration needs at least two ranges")
    if any(d < 0 for _, d in pairs):
        raise SolverError("ranges must be >= 0")
    anchors = np.array([p for p, _ in pairs])
    dists = np.array([d for _, d in pairs])
    prior = _as_polygon(prior_region)

    if len(pairs) == 2:
        pos = _two_range_solution(anchors[0], dists[0], anchors[1], dists[1], prior)
    else:
        pos = _gauss_newton(anchors, dists, _linear_init(anchors, dists))
    residuals = np.linalg.norm(pos[None, :] - anchors, axis=1) - dists
    return pos, float(np.sqrt(np.mean(residuals**2)))


def confidence_from_residual(residual_rms: float, sigma_ref: float) -> float:
    """Monotone map from fit residual to a [0, 1] confidence."""
    if sigma_ref <= 0:
        return 1.0 if residual_rms == 0 else 0.0
    return float(math.exp(-residual_rms / sigma_ref))


def fix_from_burst(
    samples_by_tx: dict[str, list[RangingSample]],
    tx_positions: dict[str, tuple],
    prior_region=None,
    sigma_ref: float = DEFAULT_MODEL.t_scale,
    device_height: float = DEVICE_HEIGHT_M,
) -> LocalizationFix:
    """Average each transmitter's burst and trilaterate the means.

    ``tx_positions`` may carry 3D positions, in which case each averaged
    slant range is projected onto the ground plane (assuming the device is
    carried at ``device_height``) before the 2D solve.

    Raises SolverError when fewer than two transmitters contributed
    samples, ConfigError when samples mix targets or transmitters.
    """
    groups = {tx: list(samples) for tx, samples in samples_by_tx.items() if samples}
    if len(groups) < 2:
        raise SolverError(
            f"burst has samples from {len(groups)} transmitter(s); need at least 2"
        )
    target_ids = {s.target_id for samples in groups.values() for s in samples}
    if len(target_ids) != 1:
        raise ConfigError(f"burst mixes targets {sorted(target_ids)}")
    ranges = []
    for tx_id, samples in sorted(groups.items()):
        if any(s.tx_id != tx_id for s in samples):
            raise ConfigError(f"sample grouped under {tx_id!r} has a different tx_id")
        if tx_id not in tx_positions:
            raise ConfigError(f"no position known for transmitter {tx_id!r}")
        position = tuple(float(v) for v in tx_positions[tx_id])
        mean_dist = float(np.mean([s.measured_distance for s in samples]))
        if len(position) >= 3:
            dz = position[2] - device_height
            mean_dist = math.sqrt(max(mean_dist * mean_dist - dz * dz, 0.0))
        ranges.append((position[:2], mean_dist))
    pos, residual = trilaterate(ranges, prior_region=prior_region)
    timestamp = float(np.median([s.timestamp for samples in groups.values() for s in samples]))
    return LocalizationFix(
        target_id=target_ids.pop(),
        timestamp=timestamp,
        position=(float(pos[0]), float(pos[1])),
        residual_rms=residual,
        num_tx_used=len(groups),
        confidence=confidence_from_residual(residual, sigma_ref),
    )


def calibrate_gamma(target_median: float, target_p95: float) -> tuple[float, float]:
    """Gamma (shape, scale) whose 50th/95th quantiles hit the targets.

    The p95/median ratio is strictly decreasing in the shape, so a 1-D
    bracketed root search recovers it; the scale then follows from the
    median.  Raises SolverError for targets no gamma can reach.
    """
    if not (0 < target_median < target_p95):
        raise SolverError(
            f"need 0 < median < p95, got median={target_median}, p95={target_p95}"
        )
    ratio = target_p95 / target_median

    def objective(log_k: float) -> float:
        k = math.exp(log_k)
        return math.log(stats.gamma.ppf(0.95, k) / stats.gamma.ppf(0.5, k)) - math.log(ratio)

    lo, hi = math.log(1e-3), math.log(1e6)
    if objective(lo) < 0 or objective(hi) > 0:
        raise SolverError(
            f"quantile ratio {ratio:.4f} is outside the range achievable by a gamma"
        )
    log_k = optimize.brentq(objective, lo, hi, xtol=1e-14, rtol=8.9e-16)
    shape = math.exp(log_k)
    scale = target_median / stats.gamma.ppf(0.5, shape)
    for prob, target in ((0.5, target_median), (0.95, target_p95)):
        achieved = stats.gamma.ppf(prob, shape, scale=scale)
        if abs(achieved - target) > GAMMA_FIT_TOL_M:
            raise SolverError(
                f"gamma fit failed to close: q{int(prob * 100)}={achieved:.6f} "
                f"vs target {target:.6f}"
            )
    return float(shape), float(scale)


def calibrated_config(
    name: str,
    num_tx: int,
    samples_per_fix: int,
    target_median: float,
    target_p95: float,
) -> ErrorConfig:
    shape, scale = calibrate_gamma(target_median, target_p95)
    return ErrorConfig(
        name=name,
        num_tx=num_tx,
        samples_per_fix=samples_per_fix,
        gamma_shape=shape,
        gamma_scale=scale,
        target_median=target_median,
        target_p95=target_p95,
    )


@lru_cache(maxsize=None)
def builtin_config(name: str) -> ErrorConfig:
    """Calibrated built-in profile (S0, S1, S2 or S3)."""
    if name not in BUILTIN_PROFILES:
        raise ConfigError(
            f"unknown error config {name!r}; built-ins are {sorted(BUILTIN_PROFILES)}"
        )
    num_tx, spf, median, p95 = BUILTIN_PROFILES[name]
    return calibrated_config(name, num_tx, spf, median, p95)


def sample_localization_error(
    config: ErrorConfig, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """2D displacement draw(s): gamma-distributed magnitude, uniform direction.

    Returns shape (2,) for size=None, else (size, 2).  Raises ConfigError
    for uncalibrated configs.
    """
    if not config.calibrated:
        raise ConfigError(f"error config {config.name!r} has no calibrated gamma parameters")
    n = 1 if size is None else int(size)
    radius = rng.gamma(config.gamma_shape, config.gamma_scale, size=n)
    angle = rng.uniform(0.0, 2.0 * math.pi, size=n)
    out = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    return out[0] if size is None else out


def zero_error_config(name: str = "noise-free") -> ErrorConfig:
    """Degenerate profile producing (numerically) zero displacement."""
    return ErrorConfig(
        name=name, num_tx=2, samples_per_fix=1, gamma_shape=1e-9, gamma_scale=1e-12,
        target_median=0.0, target_p95=0.0,
    )


def scaled_config(config: ErrorConfig, factor: float, name: str | None = None) -> ErrorConfig:
    """Same shape, scaled magnitude; handy for what-if sweeps."""
    if not config.calibrated:
        raise ConfigError("cannot scale an uncalibrated config")
    return replace(
        config,
        name=name or f"{config.name}*{factor:g}",
        gamma_scale=config.gamma_scale * factor,
        target_median=(config.target_median or 0.0) * factor,
        target_p95=(config.target_p95 or 0.0) * factor,
    )
