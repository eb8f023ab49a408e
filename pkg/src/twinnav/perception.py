"""Scan-to-world reconstruction: polar projection, density-based clustering,
and per-cluster bounding-box extraction.

Points are (n, 2) float arrays in the world frame. Cluster labels are dense
integers from 0 in order of cluster creation; noise is labeled -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lidarsim import LaserScan
from .worldsim import Bounds, ObstacleBox, Pose, World

NOISE = -1


@dataclass
class PerceptionParams:
    eps: float = 0.35           # neighborhood radius, slightly above beam arc spacing
    min_pts: int = 3
    min_spawn_size: float = 0.2  # floor on reconstructed box sides
    bounds: Bounds = field(default_factory=lambda: Bounds(-5.0, -5.0, 5.0, 5.0))


@dataclass(frozen=True)
class ObstacleEstimate:
    center: tuple[float, float]
    width: float
    height: float
    distance_to_robot: float


def scan_to_points(scan: LaserScan, robot_pose: Pose) -> np.ndarray:
    """Project finite, nonzero returns into world-frame points.

    Beams with no return contribute nothing; zero ranges (the bookkeeping
    value for dropped returns) are filtered so they cannot cluster into a
    phantom obstacle at the sensor origin.
    """
    ranges = scan.ranges
    mask = np.isfinite(ranges) & (ranges > 0)
    if not mask.any():
        return np.empty((0, 2))
    angles = robot_pose.theta + scan.params.beam_angles()[mask]
    r = ranges[mask]
    return np.stack(
        [robot_pose.x + r * np.cos(angles), robot_pose.y + r * np.sin(angles)], axis=1
    )


def region_query(p, points, eps: float) -> set[int]:
    """Indices of all points within eps of p, boundary inclusive.

    When p is itself drawn from points, its own index is always included
    (distance 0).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        return set()
    q = np.asarray(p, dtype=float).reshape(2)
    d2 = np.sum((pts - q) ** 2, axis=1)
    return set(np.flatnonzero(d2 <= eps * eps).tolist())


def _neighbor_lists(pts: np.ndarray, eps: float) -> list[np.ndarray]:
    """Per-point eps-neighborhood index arrays (ascending, self included)."""
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    adj = d2 <= eps * eps
    return [np.flatnonzero(row) for row in adj]


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Density-based clustering over 2D points.

    Visits points in input order; a seed set grows only through core points
    (neighborhoods of at least min_pts members) and a point joins the first
    cluster whose expansion reaches it, so earlier-created clusters win
    shared border points. Points never reached stay labeled -1.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be >= 1, got {min_pts}")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    nbrs = _neighbor_lists(pts, eps)
    visited = np.zeros(n, dtype=bool)
    member = np.zeros(n, dtype=bool)
    cluster_id = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        seeds_of_i = nbrs[i]
        if seeds_of_i.size < min_pts:
            continue  # noise unless a later expansion claims it as border
        seeds = seeds_of_i.tolist()
        in_seeds = np.zeros(n, dtype=bool)
        in_seeds[seeds_of_i] = True
        k = 0
        while k < len(seeds):
            q = seeds[k]
            k += 1
            if not visited[q]:
                visited[q] = True
                nq = nbrs[q]
                if nq.size >= min_pts:
                    fresh = nq[~in_seeds[nq]]
                    in_seeds[fresh] = True
                    seeds.extend(fresh.tolist())
            if not member[q]:
                member[q] = True
                labels[q] = cluster_id
        cluster_id += 1
    return labels


def cluster_points(points, labels: np.ndarray) -> list[np.ndarray]:
    """Group points by cluster id (noise excluded), id order."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n_clusters = int(labels.max()) + 1 if labels.size else 0
    return [pts[labels == k] for k in range(n_clusters)]


def cluster_properties(
    cluster_pts, robot_pose: Pose, min_spawn_size: float = 0.2
) -> ObstacleEstimate:
    """Bounding-box summary of one cluster.

    Center is the midpoint of the axis-aligned extents; sides are inflated
    up to min_spawn_size; robot distance is Euclidean to the raw center.
    """
    pts = np.asarray(cluster_pts, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("cluster must be non-empty")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = (float((lo[0] + hi[0]) / 2.0), float((lo[1] + hi[1]) / 2.0))
    distance = math.hypot(robot_pose.x - center[0], robot_pose.y - center[1])
    width = max(float(hi[0] - lo[0]), min_spawn_size)
    height = max(float(hi[1] - lo[1]), min_spawn_size)
    return ObstacleEstimate(center=center, width=width, height=height, distance_to_robot=distance)


def extract_estimates(
    scan: LaserScan, robot_pose: Pose, params: PerceptionParams
) -> list[ObstacleEstimate]:
    """Full pipeline scan -> points -> clusters -> estimates; noise dropped."""
    pts = scan_to_points(scan, robot_pose)
    labels = dbscan(pts, params.eps, params.min_pts)
    return [
        cluster_properties(group, robot_pose, params.min_spawn_size)
        for group in cluster_points(pts, labels)
    ]


def _clip_box_to_bounds(est: ObstacleEstimate, bounds: Bounds, min_size: float) -> ObstacleBox:
    """Fit an estimate into the world bounds, preserving the inside extent."""
    xlo = max(est.center[0] - 0.5 * est.width, bounds.xmin)
    xhi = min(est.center[0] + 0.5 * est.width, bounds.xmax)
    ylo = max(est.center[1] - 0.5 * est.height, bounds.ymin)
    yhi = min(est.center[1] + 0.5 * est.height, bounds.ymax)
    w = max(xhi - xlo, min_size)
    h = max(yhi - ylo, min_size)
    cx = min(max((xlo + xhi) / 2.0, bounds.xmin + 0.5 * w), bounds.xmax - 0.5 * w)
    cy = min(max((ylo + yhi) / 2.0, bounds.ymin + 0.5 * h), bounds.ymax - 0.5 * h)
    return ObstacleBox(cx, cy, w, h)


def reconstruct_world(
    scan: LaserScan,
    robot_pose: Pose,
    goal: tuple[float, float],
    params: PerceptionParams,
) -> World:
    """Build a twin world whose obstacles are the clustered scan estimates,
    with the physical goal and bounds copied through."""
    estimates = extract_estimates(scan, robot_pose, params)
    boxes = [_clip_box_to_bounds(e, params.bounds, params.min_spawn_size) for e in estimates]
    return World(obstacles=boxes, bounds=params.bounds, goal=(float(goal[0]), float(goal[1])))
