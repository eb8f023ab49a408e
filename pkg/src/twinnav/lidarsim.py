"""Planar range sensor: raycasting a fan of beams against box obstacles.

Misses ("no return") are encoded as +inf in the ranges array; the wire
codec maps them to null and perception drops them before clustering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .worldsim import ObstacleBox, Pose, World

NO_RETURN = math.inf

_PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class ScanParams:
    n_beams: int = 180
    angle_min: float = -math.pi
    angle_max: float = math.pi
    max_range: float = 10.0

    def __post_init__(self):
        if self.n_beams < 2:
            raise ValueError(f"n_beams must be >= 2, got {self.n_beams}")
        if not self.angle_min < self.angle_max:
            raise ValueError(f"need angle_min < angle_max, got {self.angle_min}, {self.angle_max}")
        if not self.max_range > 0:
            raise ValueError(f"max_range must be positive, got {self.max_range}")

    def beam_angles(self) -> np.ndarray:
        """Beam angles relative to the robot heading, beam i at
        angle_min + i * (angle_max - angle_min) / (n_beams - 1)."""
        return self.angle_min + np.arange(self.n_beams) * (
            (self.angle_max - self.angle_min) / (self.n_beams - 1)
        )


@dataclass
class LaserScan:
    ranges: np.ndarray  # (n_beams,), meters; +inf marks no return
    params: ScanParams

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=float)
        if self.ranges.shape != (self.params.n_beams,):
            raise ValueError(
                f"ranges shape {self.ranges.shape} does not match n_beams {self.params.n_beams}"
            )

    def finite_ranges(self) -> np.ndarray:
        return self.ranges[np.isfinite(self.ranges)]

    def min_range(self) -> float:
        """Smallest finite return, or +inf when every beam missed."""
        finite = self.finite_ranges()
        return float(finite.min()) if finite.size else NO_RETURN


def ray_box_intersect(
    origin: tuple[float, float],
    direction: tuple[float, float],
    box: ObstacleBox,
) -> float | None:
    """Smallest nonnegative ray parameter hitting the box, by the slab method.

    Returns None on a miss; an origin inside the box yields 0.0. The
    direction must be a unit vector so the parameter is metric distance.
    """
    ox, oy = origin
    dx, dy = direction
    tlo, thi = -math.inf, math.inf
    for o, d, lo, hi in (
        (ox, dx, box.cx - 0.5 * box.width, box.cx + 0.5 * box.width),
        (oy, dy, box.cy - 0.5 * box.height, box.cy + 0.5 * box.height),
    ):
        if abs(d) <= _PARALLEL_EPS:
            if not (lo <= o <= hi):
                return None
            continue
        t1 = (lo - o) / d
        t2 = (hi - o) / d
        if t1 > t2:
            t1, t2 = t2, t1
        tlo = max(tlo, t1)
        thi = min(thi, t2)
    if tlo > thi or thi < 0:
        return None
    return max(tlo, 0.0)


def _box_hits(origin: np.ndarray, dirs: np.ndarray, box: ObstacleBox) -> np.ndarray:
    """Vectorized slab intersection of many unit rays with one box.

    Returns per-ray parameters with +inf for misses; same convention as
    ray_box_intersect.
    """
    n = dirs.shape[0]
    tlo = np.full(n, -np.inf)
    thi = np.full(n, np.inf)
    for axis, (lo, hi) in enumerate(
        (
            (box.cx - 0.5 * box.width, box.cx + 0.5 * box.width),
            (box.cy - 0.5 * box.height, box.cy + 0.5 * box.height),
        )
    ):
        o = origin[axis]
        d = dirs[:, axis]
        parallel = np.abs(d) <= _PARALLEL_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - o) / d
            t2 = (hi - o) / d
        swap = t1 > t2
        t1, t2 = np.where(swap, t2, t1), np.where(swap, t1, t2)
        inside = (lo <= o) & (o <= hi)
        t1 = np.where(parallel, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(parallel, np.where(inside, np.inf, -np.inf), t2)
        tlo = np.maximum(tlo, t1)
        thi = np.minimum(thi, t2)
    t = np.maximum(tlo, 0.0)
    return np.where((tlo <= thi) & (thi >= 0), t, np.inf)


def simulate_scan(
    world: World,
    pose: Pose,
    params: ScanParams,
    rng: np.random.Generator | None = None,
    jitter: float = 0.0,
) -> LaserScan:
    """Raycast one scan from the given pose against every obstacle.

    World bounds do not reflect beams; hits beyond max_range become no
    returns. Optional uniform range jitter (off by default) perturbs finite
    returns for robustness experiments.
    """
    angles = pose.theta + params.beam_angles()
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    origin = np.array([pose.x, pose.y])
    ranges = np.full(params.n_beams, np.inf)
    for box in world.obstacles:
        ranges = np.minimum(ranges, _box_hits(origin, dirs, box))
    ranges = np.where(ranges <= params.max_range, ranges, np.inf)
    if jitter > 0.0:
        if rng is None:
            raise ValueError("jitter requires an rng")
        finite = np.isfinite(ranges)
        noise = rng.uniform(-jitter, jitter, size=params.n_beams)
        ranges = np.where(finite, np.clip(ranges + noise, 1e-6, params.max_range), ranges)
    return LaserScan(ranges=ranges, params=params)
