"""Ground-truth 2D world: box obstacles, unicycle kinematics, collision and
goal predicates, and seeded sparse-world sampling.

All lengths are meters, angles radians, velocities m/s and rad/s.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


class InfeasibleWorldError(ValueError):
    """Raised when rejection sampling cannot place the requested obstacles."""


def wrap_angle(theta: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    return -((-theta + math.pi) % TWO_PI - math.pi)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float  # kept in (-pi, pi] by every operation that produces a Pose

    def heading(self) -> tuple[float, float]:
        """Unit vector along the robot heading."""
        return (math.cos(self.theta), math.sin(self.theta))


@dataclass(frozen=True)
class RobotState:
    pose: Pose
    v: float = 0.0
    w: float = 0.0


@dataclass(frozen=True)
class ObstacleBox:
    """Axis-aligned box given by center and full side lengths."""

    cx: float
    cy: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"box sides must be positive, got {self.width}x{self.height}")

    def surface_distance(self, x: float, y: float) -> float:
        """Euclidean distance from a point to the box surface; 0 inside."""
        dx = max(abs(x - self.cx) - 0.5 * self.width, 0.0)
        dy = max(abs(y - self.cy) - 0.5 * self.height, 0.0)
        return math.hypot(dx, dy)

    def contains(self, x: float, y: float) -> bool:
        return abs(x - self.cx) <= 0.5 * self.width and abs(y - self.cy) <= 0.5 * self.height


def box_separation(a: ObstacleBox, b: ObstacleBox) -> float:
    """Surface-to-surface distance between two boxes; 0 if they overlap."""
    gx = max(abs(a.cx - b.cx) - 0.5 * (a.width + b.width), 0.0)
    gy = max(abs(a.cy - b.cy) - 0.5 * (a.height + b.height), 0.0)
    return math.hypot(gx, gy)


@dataclass(frozen=True)
class Bounds:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"degenerate bounds {self}")

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def contains_box(self, box: ObstacleBox) -> bool:
        return (
            box.cx - 0.5 * box.width >= self.xmin
            and box.cx + 0.5 * box.width <= self.xmax
            and box.cy - 0.5 * box.height >= self.ymin
            and box.cy + 0.5 * box.height <= self.ymax
        )

    @property
    def diagonal(self) -> float:
        return math.hypot(self.xmax - self.xmin, self.ymax - self.ymin)


@dataclass
class World:
    obstacles: list[ObstacleBox]
    bounds: Bounds
    goal: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "bounds": {
                "xmin": self.bounds.xmin,
                "ymin": self.bounds.ymin,
                "xmax": self.bounds.xmax,
                "ymax": self.bounds.ymax,
            },
            "goal": {"x": self.goal[0], "y": self.goal[1]},
            "obstacles": [
                {"cx": b.cx, "cy": b.cy, "width": b.width, "height": b.height}
                for b in self.obstacles
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        bounds = Bounds(**{k: float(d["bounds"][k]) for k in ("xmin", "ymin", "xmax", "ymax")})
        goal = (float(d["goal"]["x"]), float(d["goal"]["y"]))
        obstacles = [
            ObstacleBox(float(o["cx"]), float(o["cy"]), float(o["width"]), float(o["height"]))
            for o in d.get("obstacles", [])
        ]
        return cls(obstacles=obstacles, bounds=bounds, goal=goal)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "World":
        with open(path, "r", encoding="utf-8") as fh:
            world = cls.from_dict(json.load(fh))
        check_world(world)
        return world


def check_world(world: World) -> None:
    """Validate the structural invariants of a ground-truth world."""
    if not world.bounds.contains(*world.goal):
        raise ValueError(f"goal {world.goal} outside bounds {world.bounds}")
    for box in world.obstacles:
        if not world.bounds.contains_box(box):
            raise ValueError(f"obstacle {box} not fully inside bounds {world.bounds}")


class StepEvent(enum.Enum):
    """Terminal classification of a single simulation step."""

    NONE = "none"
    GOAL = "goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"

    @property
    def terminal(self) -> bool:
        return self is not StepEvent.NONE


def step_dynamics(
    state: RobotState,
    action: tuple[float, float],
    dt: float,
    v_max: float = 1.0,
    w_max: float = 1.0,
) -> RobotState:
    """Advance the unicycle one forward-Euler step.

    Commands are clamped to [0, v_max] x [-w_max, w_max] before integration;
    the returned state carries the clamped commands as its velocities.
    """
    v_cmd, w_cmd = action
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    vals = (state.pose.x, state.pose.y, state.pose.theta, v_cmd, w_cmd, dt)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite input to step_dynamics: {vals}")
    v = min(max(v_cmd, 0.0), v_max)
    w = min(max(w_cmd, -w_max), w_max)
    p = state.pose
    x = p.x + v * math.cos(p.theta) * dt
    y = p.y + v * math.sin(p.theta) * dt
    theta = wrap_angle(p.theta + w * dt)
    return RobotState(pose=Pose(x, y, theta), v=v, w=w)


def check_collision(world: World, pose: Pose, safe_dist: float) -> bool:
    """True when the robot is closer than safe_dist to any obstacle surface
    (inside counts as distance 0) or has left the world bounds."""
    if safe_dist < 0:
        raise ValueError(f"safe_dist must be nonnegative, got {safe_dist}")
    if not world.bounds.contains(pose.x, pose.y):
        return True
    return any(b.surface_distance(pose.x, pose.y) < safe_dist for b in world.obstacles)


def goal_reached(pose: Pose, goal: tuple[float, float], goal_tol: float) -> bool:
    """True when the robot is strictly within goal_tol of the goal point."""
    if goal_tol <= 0:
        raise ValueError(f"goal_tol must be positive, got {goal_tol}")
    return math.hypot(pose.x - goal[0], pose.y - goal[1]) < goal_tol


@dataclass
class WorldConfig:
    """Parameters for randomized sparse-world generation."""

    bounds: Bounds = field(default_factory=lambda: Bounds(-5.0, -5.0, 5.0, 5.0))
    n_obstacles: int = 4
    size_min: float = 0.6
    size_max: float = 1.2
    min_separation: float = 1.2   # surface-to-surface between obstacles
    clearance: float = 1.0        # obstacle surface to start and goal points
    start: tuple[float, float] = (0.0, 0.0)
    goal: tuple[float, float] | None = None  # None: sampled
    goal_min_dist: float = 2.0    # minimum start-goal distance when sampling
    goal_margin: float = 0.5      # inset of sampled goals from the bounds
    max_tries: int = 5000


def sample_world(config: WorldConfig, seed: int) -> World:
    """Sample a world with sparsely separated obstacles.

    Deterministic for a fixed seed. Guarantees pairwise obstacle separation
    of at least config.min_separation and clearance of at least
    config.clearance from both the start and the goal point. Raises
    InfeasibleWorldError when rejection sampling runs out of attempts.
    """
    rng = np.random.default_rng(seed)
    b = config.bounds
    sx, sy = config.start
    if not b.contains(sx, sy):
        raise InfeasibleWorldError(f"start {config.start} outside bounds {b}")

    if config.goal is not None:
        goal = (float(config.goal[0]), float(config.goal[1]))
        if not b.contains(*goal):
            raise InfeasibleWorldError(f"goal {goal} outside bounds {b}")
    else:
        m = config.goal_margin
        goal = None
        for _ in range(config.max_tries):
            gx = rng.uniform(b.xmin + m, b.xmax - m)
            gy = rng.uniform(b.ymin + m, b.ymax - m)
            if math.hypot(gx - sx, gy - sy) >= config.goal_min_dist:
                goal = (gx, gy)
                break
        if goal is None:
            raise InfeasibleWorldError("could not sample a goal satisfying goal_min_dist")

    obstacles: list[ObstacleBox] = []
    for k in range(config.n_obstacles):
        placed = False
        for _ in range(config.max_tries):
            w = rng.uniform(config.size_min, config.size_max)
            h = rng.uniform(config.size_min, config.size_max)
            cx = rng.uniform(b.xmin + 0.5 * w, b.xmax - 0.5 * w)
            cy = rng.uniform(b.ymin + 0.5 * h, b.ymax - 0.5 * h)
            box = ObstacleBox(cx, cy, w, h)
            if box.surface_distance(sx, sy) < config.clearance:
                continue
            if box.surface_distance(*goal) < config.clearance:
                continue
            if any(box_separation(box, other) < config.min_separation for other in obstacles):
                continue
            obstacles.append(box)
            placed = True
            break
        if not placed:
            raise InfeasibleWorldError(
                f"failed to place obstacle {k + 1}/{config.n_obstacles} "
                f"after {config.max_tries} attempts"
            )

    world = World(obstacles=obstacles, bounds=b, goal=goal)
    check_world(world)
    return world
