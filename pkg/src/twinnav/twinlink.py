"""Digital-twin fabric: the physical-side lockstep server, the virtual-twin
client, the danger-zone monitor, and the pause/retrain/resume machinery.

The physical process advances only on received velocity commands, so a
paused client freezes the world; retraining happens inside the client
against the reconstructed world and the robot resumes only after a
verified collision-free path exists there.
"""

from __future__ import annotations

import enum
import json
import math
import socket
from dataclasses import dataclass, field, replace

import numpy as np

from .env import EnvConfig, NavEnv, fixed_world_factory
from .lidarsim import LaserScan, simulate_scan
from .perception import PerceptionParams, reconstruct_world
from .protocol import (
    ByeMsg,
    CmdVel,
    MessageStream,
    PauseMsg,
    ProtocolError,
    ResumeMsg,
    ScanMsg,
    StatusMsg,
    encode_message,
)
from .replay import ReplayBuffer
from .td3 import Metrics, StateParams, Td3Agent, action_to_velocity, build_state, compute_reward, train
from .trajectory import TrajectoryRecord
from .worldsim import (
    ObstacleBox,
    Pose,
    RobotState,
    StepEvent,
    World,
    check_collision,
    goal_reached,
    step_dynamics,
)


class TwinPhase(enum.Enum):
    BOOTSTRAPPING = "bootstrapping"
    NAVIGATING = "navigating"
    DANGER_PAUSED = "danger_paused"
    RETRAINING = "retraining"
    RETURNING = "returning"
    RESUMING = "resuming"
    DONE = "done"


LEGAL_TRANSITIONS = {
    TwinPhase.BOOTSTRAPPING: {TwinPhase.NAVIGATING},
    TwinPhase.NAVIGATING: {TwinPhase.DANGER_PAUSED, TwinPhase.DONE},
    TwinPhase.DANGER_PAUSED: {TwinPhase.RETRAINING},
    TwinPhase.RETRAINING: {TwinPhase.RETURNING},
    TwinPhase.RETURNING: {TwinPhase.RESUMING},
    TwinPhase.RESUMING: {TwinPhase.NAVIGATING},
    TwinPhase.DONE: set(),
}


def is_legal_phase_path(phases: list[TwinPhase]) -> bool:
    """True when the sequence starts at Bootstrapping and every hop is a
    legal transition; a run may end mid-path (e.g. a failed retrain)."""
    if not phases or phases[0] is not TwinPhase.BOOTSTRAPPING:
        return False
    return all(b in LEGAL_TRANSITIONS[a] for a, b in zip(phases, phases[1:]))


@dataclass
class TwinConfig:
    """Client-side twin parameters.

    The danger threshold must exceed the collision distance so the pause
    always fires with stopping margin to spare.
    """

    danger_threshold: float = 1.0
    retrain_step_budget: int = 8000
    retrain_chunk: int = 1000
    retrain_episode_steps: int = 200
    retrain_expl_sigma: float = 0.1
    safety_margin: float = 0.2   # extra clearance required in the twin world
    connect_timeout: float = 10.0
    io_timeout: float = 120.0
    max_ticks: int = 5000        # hang guard; the server times out first
    env: EnvConfig = field(default_factory=EnvConfig)
    perception: PerceptionParams = field(default_factory=PerceptionParams)

    def __post_init__(self):
        if self.danger_threshold <= self.env.safe_dist:
            raise ValueError(
                f"danger_threshold {self.danger_threshold} must exceed "
                f"safe_dist {self.env.safe_dist}"
            )


def danger_monitor(scan: LaserScan, cfg: TwinConfig) -> bool:
    """True when the closest finite return is inside the danger zone."""
    return scan.min_range() < cfg.danger_threshold


@dataclass(frozen=True)
class ObstacleInjection:
    """A sudden obstacle added to the physical world after a given
    integrated step."""

    box: ObstacleBox
    at_step: int

    @classmethod
    def parse(cls, spec: str) -> "ObstacleInjection":
        """Parse "cx,cy,width,height@step"."""
        try:
            geom, step = spec.split("@")
            cx, cy, w, h = (float(v) for v in geom.split(","))
            return cls(box=ObstacleBox(cx, cy, w, h), at_step=int(step))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"bad injection spec {spec!r}, want 'cx,cy,w,h@step'") from exc


@dataclass
class SessionOutcome:
    event: StepEvent
    steps: int
    pose: Pose
    said_bye: bool = False
    aborted: bool = False
    error: str = ""


class TraceWriter:
    """Optional newline-delimited JSON log of the client's protocol view."""

    def __init__(self, path=None):
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def message(self, direction: str, msg) -> None:
        if self._fh:
            obj = json.loads(encode_message(msg))
            self._fh.write(json.dumps({"kind": direction, "msg": obj}) + "\n")

    def phase(self, phase: TwinPhase) -> None:
        if self._fh:
            self._fh.write(json.dumps({"kind": "phase", "phase": phase.value}) + "\n")

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def serve_physical(
    world: World,
    endpoint: tuple[str, int],
    env_cfg: EnvConfig,
    start: Pose = Pose(0.0, 0.0, 0.0),
    injection: ObstacleInjection | None = None,
    io_timeout: float = 600.0,
    on_ready=None,
) -> SessionOutcome:
    """Run the physical side for one twin session.

    Lockstep contract: every received velocity command integrates one dt of
    dynamics (unless paused) and is answered with a Scan then a Status.
    Pause/Resume freeze and unfreeze integration and are acknowledged with a
    Status. The session ends on a terminal event, a Bye, or connection loss.
    """
    server = socket.create_server(endpoint)
    try:
        if on_ready is not None:
            on_ready(server.getsockname()[1])
        conn, _ = server.accept()
    finally:
        server.close()
    stream = MessageStream(conn, timeout=io_timeout)

    robot = RobotState(pose=start)
    steps = 0
    paused = False

    def classify(pose: Pose) -> StepEvent:
        if check_collision(world, pose, env_cfg.safe_dist):
            return StepEvent.COLLISION
        if goal_reached(pose, world.goal, env_cfg.goal_tol):
            return StepEvent.GOAL
        if steps >= env_cfg.max_steps:
            return StepEvent.TIMEOUT
        return StepEvent.NONE

    try:
        while True:
            try:
                msg = stream.recv()
            except (socket.timeout, ProtocolError, OSError) as exc:
                return SessionOutcome(
                    StepEvent.NONE, steps, robot.pose, aborted=True, error=str(exc)
                )
            if msg is None:
                return SessionOutcome(
                    StepEvent.NONE, steps, robot.pose, aborted=True,
                    error="connection closed by client",
                )
            if isinstance(msg, CmdVel):
                event = StepEvent.NONE
                if not paused:
                    robot = step_dynamics(
                        robot, (msg.v, msg.w), env_cfg.dt, env_cfg.v_max, env_cfg.w_max
                    )
                    steps += 1
                    if injection is not None and steps == injection.at_step:
                        world.obstacles.append(injection.box)
                    event = classify(robot.pose)
                scan = simulate_scan(world, robot.pose, env_cfg.scan)
                stream.send(ScanMsg.from_scan(scan, robot.pose))
                stream.send(StatusMsg(event, robot.pose, world.goal))
                if event.terminal:
                    return SessionOutcome(event, steps, robot.pose)
            elif isinstance(msg, PauseMsg):
                paused = True
                stream.send(StatusMsg(StepEvent.NONE, robot.pose, world.goal))
            elif isinstance(msg, ResumeMsg):
                paused = False
                stream.send(StatusMsg(StepEvent.NONE, robot.pose, world.goal))
            elif isinstance(msg, ByeMsg):
                return SessionOutcome(StepEvent.NONE, steps, robot.pose, said_bye=True)
            else:
                return SessionOutcome(
                    StepEvent.NONE, steps, robot.pose, aborted=True,
                    error=f"unexpected client message {type(msg).__name__}",
                )
    finally:
        stream.close()


@dataclass
class RetrainResult:
    success: bool
    steps_used: int
    verified_trajectory: list[TrajectoryRecord] | None


def _twin_env_cfg(cfg: TwinConfig) -> EnvConfig:
    """Local twin training config: tighter episodes, inflated clearance so a
    verified path keeps real-world margin over reconstruction error."""
    return replace(
        cfg.env,
        safe_dist=cfg.env.safe_dist + cfg.safety_margin,
        max_steps=cfg.retrain_episode_steps,
    )


def verify_policy(
    agent: Td3Agent, world: World, start: Pose, cfg: TwinConfig
) -> tuple[bool, list[TrajectoryRecord]]:
    """One deterministic evaluation episode in the local twin world; success
    means the goal is reached with zero collisions."""
    env = NavEnv(fixed_world_factory(world, start), _twin_env_cfg(cfg))
    state = env.reset()
    records: list[TrajectoryRecord] = []
    while True:
        state, reward, event = env.step(agent.act(state))
        pose = env.robot.pose
        records.append(
            TrajectoryRecord(
                t=env.steps * env.cfg.dt, x=pose.x, y=pose.y, theta=pose.theta,
                v=env.robot.v, w=env.robot.w, reward=reward,
                min_scan_range=env.min_scan_range, phase="verify",
            )
        )
        if event.terminal:
            return event is StepEvent.GOAL, records


def retrain_procedure(
    agent: Td3Agent,
    reconstructed_world: World,
    pause_pose: Pose,
    goal: tuple[float, float],
    cfg: TwinConfig,
    buffer: ReplayBuffer | None = None,
    seed: int = 0,
) -> RetrainResult:
    """Verification-first local retraining.

    Spawns the reconstructed obstacles into a fresh local world, then
    alternates a deterministic verification episode from the pause pose with
    chunks of TD3 training (continuing from the loaded policy and any
    unpacked experiences) until the verification passes or the step budget
    runs out. Never reports success without a verified path.
    """
    world = World(
        obstacles=list(reconstructed_world.obstacles),
        bounds=reconstructed_world.bounds,
        goal=(float(goal[0]), float(goal[1])),
    )
    if buffer is None:
        buffer = ReplayBuffer(agent.cfg.buffer_capacity, agent.state_dim, agent.action_dim)
    used = 0
    while True:
        ok, records = verify_policy(agent, world, pause_pose, cfg)
        if ok:
            return RetrainResult(True, used, records)
        if used >= cfg.retrain_step_budget:
            return RetrainResult(False, used, None)
        chunk = min(cfg.retrain_chunk, cfg.retrain_step_budget - used)
        chunk_cfg = replace(
            agent.cfg,
            total_steps=chunk,
            warmup_steps=0,
            expl_sigma_start=cfg.retrain_expl_sigma,
            expl_sigma_final=cfg.retrain_expl_sigma,
        )
        env = NavEnv(fixed_world_factory(world, pause_pose), _twin_env_cfg(cfg))
        train(env, agent, chunk_cfg, seed=[seed, used], buffer=buffer)
        used += chunk


@dataclass
class TwinResult:
    outcome: str  # goal | collision | timeout | retrain_failed | aborted
    metrics: Metrics | None
    trajectory: list[TrajectoryRecord]
    phases: list[TwinPhase]
    retrains: int
    steps: int
    error: str = ""


def run_twin(
    agent: Td3Agent,
    endpoint: tuple[str, int],
    cfg: TwinConfig,
    buffer: ReplayBuffer | None = None,
    trace_path=None,
    seed: int = 0,
) -> TwinResult:
    """Drive the physical robot over the twin link with the trained policy.

    Bootstraps with a zero velocity command to obtain the first scan,
    reconstructs the environment every tick, and pauses the physical robot
    the moment the danger monitor fires, retraining locally until a
    verified path exists (plus a fresh-scan re-check) before resuming. A
    failed retrain leaves the robot paused and ends the session explicitly.
    """
    trace = TraceWriter(trace_path)
    phases: list[TwinPhase] = []
    records: list[TrajectoryRecord] = []
    retrains = 0

    def set_phase(p: TwinPhase):
        phases.append(p)
        trace.phase(p)

    sp = StateParams(
        world_diag=cfg.perception.bounds.diagonal,
        n_bins=cfg.env.n_bins,
        v_max=cfg.env.v_max,
        w_max=cfg.env.w_max,
    )

    sock = socket.create_connection(endpoint, timeout=cfg.connect_timeout)
    stream = MessageStream(sock, timeout=cfg.io_timeout)

    def send(msg):
        trace.message("tx", msg)
        stream.send(msg)

    def recv(expected):
        msg = stream.recv()
        if msg is None:
            raise ProtocolError("server closed the connection")
        trace.message("rx", msg)
        if not isinstance(msg, expected):
            raise ProtocolError(
                f"expected {expected.__name__}, got {type(msg).__name__}", encode_message(msg)
            )
        return msg

    def transact(cmd: CmdVel) -> tuple[ScanMsg, StatusMsg]:
        send(cmd)
        return recv(ScanMsg), recv(StatusMsg)

    def result(outcome, steps, error=""):
        metrics = None
        if outcome in ("goal", "collision", "timeout", "retrain_failed"):
            metrics = Metrics(
                episodes=1,
                successes=1 if outcome == "goal" else 0,
                collisions=1 if outcome == "collision" else 0,
                timeouts=1 if outcome == "timeout" else 0,
                retrain_failures=1 if outcome == "retrain_failed" else 0,
            )
        return TwinResult(outcome, metrics, records, phases, retrains, steps, error)

    steps = 0
    try:
        set_phase(TwinPhase.BOOTSTRAPPING)
        scan_msg, status = transact(CmdVel(0.0, 0.0))
        steps += 1
        set_phase(TwinPhase.NAVIGATING)
        danger_armed = True
        prev_action = np.array([-1.0, 0.0])

        for _ in range(cfg.max_ticks):
            scan = scan_msg.to_scan()
            pose = scan_msg.pose
            goal = status.goal

            if status.event.terminal:
                set_phase(TwinPhase.DONE)
                return result(status.event.value, steps)

            if danger_armed and danger_monitor(scan, cfg):
                send(PauseMsg())
                recv(StatusMsg)
                set_phase(TwinPhase.DANGER_PAUSED)
                set_phase(TwinPhase.RETRAINING)
                pause_pose = pose
                budget_left = cfg.retrain_step_budget
                verified = False
                while True:
                    recon = reconstruct_world(scan, pose, goal, cfg.perception)
                    res = retrain_procedure(
                        agent, recon, pause_pose, goal,
                        replace(cfg, retrain_step_budget=budget_left),
                        buffer=buffer, seed=[seed, retrains, budget_left],
                    )
                    budget_left -= res.steps_used
                    retrains += 1
                    if not res.success:
                        break
                    # fresh-scan re-check: the world must still verify before
                    # the physical robot moves again
                    scan_msg, status = transact(CmdVel(0.0, 0.0))
                    scan, pose = scan_msg.to_scan(), scan_msg.pose
                    fresh_recon = reconstruct_world(scan, pose, goal, cfg.perception)
                    ok, _ = verify_policy(agent, fresh_recon, pause_pose, cfg)
                    if ok:
                        verified = True
                        break
                    if budget_left <= 0:
                        break
                if not verified:
                    send(ByeMsg())
                    return result("retrain_failed", steps)
                set_phase(TwinPhase.RETURNING)   # twin episodes restarted at the pause pose
                set_phase(TwinPhase.RESUMING)
                send(ResumeMsg())
                recv(StatusMsg)
                danger_armed = False
                set_phase(TwinPhase.NAVIGATING)
                continue

            if not danger_armed and scan.min_range() >= cfg.danger_threshold:
                danger_armed = True

            state = build_state(scan, pose, goal, prev_action, sp)
            action = agent.act(state)
            v, w = action_to_velocity(action, cfg.env.v_max, cfg.env.w_max)
            scan_msg, status = transact(CmdVel(v, w))
            steps += 1
            prev_action = action
            new_pose = scan_msg.pose
            dist = math.hypot(goal[0] - new_pose.x, goal[1] - new_pose.y)
            reward = compute_reward(
                status.event, dist, action, new_pose.heading(), goal,
                (new_pose.x, new_pose.y), cfg.env.orientation_scale,
            ) if dist > 0 else 0.0
            records.append(
                TrajectoryRecord(
                    t=steps * cfg.env.dt, x=new_pose.x, y=new_pose.y,
                    theta=new_pose.theta, v=v, w=w, reward=reward,
                    min_scan_range=scan_msg.to_scan().min_range(),
                    phase=phases[-1].value,
                )
            )
        # tick guard tripped
        send(PauseMsg())
        recv(StatusMsg)
        send(ByeMsg())
        return result("aborted", steps, error="tick budget exhausted")
    except (socket.timeout, ProtocolError, OSError) as exc:
        # safe stop: freeze the robot, then leave
        for msg in (PauseMsg(), ByeMsg()):
            try:
                stream.send(msg)
            except OSError:
                break
        return result("aborted", steps, error=str(exc))
    finally:
        trace.close()
        stream.close()
