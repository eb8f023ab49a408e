"""Episodic navigation environment tying the world, sensor, and reward
together behind the reset/step contract the training loop expects."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lidarsim import LaserScan, ScanParams, simulate_scan
from .td3 import StateParams, action_to_velocity, build_state, compute_reward
from .worldsim import (
    Pose,
    RobotState,
    StepEvent,
    World,
    WorldConfig,
    check_collision,
    goal_reached,
    sample_world,
    step_dynamics,
)


@dataclass
class EnvConfig:
    dt: float = 0.1
    v_max: float = 1.0
    w_max: float = 1.0
    max_steps: int = 500
    goal_tol: float = 0.3
    safe_dist: float = 0.5
    n_bins: int = 20
    orientation_scale: float = 50.0
    scan: ScanParams = field(default_factory=ScanParams)


def sampled_world_factory(wcfg: WorldConfig, seed: int, random_heading: bool = True):
    """Factory producing a fresh sampled world per episode, deterministic in
    (seed, episode)."""

    def factory(episode: int) -> tuple[World, Pose]:
        world = sample_world(wcfg, seed=[seed, episode])
        if random_heading:
            rng = np.random.default_rng([seed, episode, 1])
            theta = float(rng.uniform(-math.pi, math.pi))
        else:
            theta = 0.0
        return world, Pose(wcfg.start[0], wcfg.start[1], theta)

    return factory


def fixed_world_factory(world: World, start: Pose):
    """Factory reusing one world and start pose for every episode."""

    def factory(episode: int) -> tuple[World, Pose]:
        return world, start

    return factory


class NavEnv:
    """reset() -> state vector; step(action) -> (state, reward, StepEvent)."""

    def __init__(self, world_factory, cfg: EnvConfig):
        self.cfg = cfg
        self._factory = world_factory
        self.episode = -1
        self.world: World | None = None
        self.robot: RobotState | None = None
        self.last_scan: LaserScan | None = None
        self.steps = 0
        self.prev_action = np.array([-1.0, 0.0])  # maps to v=0, w=0

    def _state_params(self) -> StateParams:
        return StateParams(
            world_diag=self.world.bounds.diagonal,
            n_bins=self.cfg.n_bins,
            v_max=self.cfg.v_max,
            w_max=self.cfg.w_max,
        )

    @property
    def dist_to_goal(self) -> float:
        gx, gy = self.world.goal
        return math.hypot(gx - self.robot.pose.x, gy - self.robot.pose.y)

    @property
    def min_scan_range(self) -> float:
        return self.last_scan.min_range()

    def reset(self) -> np.ndarray:
        self.episode += 1
        self.world, start = self._factory(self.episode)
        self.robot = RobotState(pose=start, v=0.0, w=0.0)
        self.steps = 0
        self.prev_action = np.array([-1.0, 0.0])
        self.last_scan = simulate_scan(self.world, self.robot.pose, self.cfg.scan)
        return build_state(
            self.last_scan, self.robot.pose, self.world.goal, self.prev_action, self._state_params()
        )

    def _classify(self, pose: Pose) -> StepEvent:
        if check_collision(self.world, pose, self.cfg.safe_dist):
            return StepEvent.COLLISION
        if goal_reached(pose, self.world.goal, self.cfg.goal_tol):
            return StepEvent.GOAL
        if self.steps >= self.cfg.max_steps:
            return StepEvent.TIMEOUT
        return StepEvent.NONE

    def step(self, action) -> tuple[np.ndarray, float, StepEvent]:
        if self.world is None:
            raise RuntimeError("step() before reset()")
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        v, w = action_to_velocity(a, self.cfg.v_max, self.cfg.w_max)
        self.robot = step_dynamics(
            self.robot, (v, w), self.cfg.dt, self.cfg.v_max, self.cfg.w_max
        )
        self.steps += 1
        pose = self.robot.pose
        event = self._classify(pose)
        self.last_scan = simulate_scan(self.world, pose, self.cfg.scan)
        reward = compute_reward(
            event,
            self.dist_to_goal,
            a,
            pose.heading(),
            self.world.goal,
            (pose.x, pose.y),
            self.cfg.orientation_scale,
        )
        self.prev_action = a
        state = build_state(self.last_scan, pose, self.world.goal, a, self._state_params())
        return state, reward, event
