"""TD3 learning stack: state vectors, the navigation reward, twin-critic
actor training with delayed policy updates, evaluation, and checkpoint I/O.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .nets import Adam, Mlp, flatten_grads
from .replay import Batch, ReplayBuffer
from .trajectory import TrajectoryRecord
from .worldsim import Pose, StepEvent, wrap_angle

_CKPT_MAGIC = b"TWINNAV-CKPT-1\n"


class CheckpointError(ValueError):
    """Raised when a checkpoint does not match the expected architecture."""


# ---------------------------------------------------------------------------
# State construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateParams:
    """Normalization context for observation vectors."""

    world_diag: float
    n_bins: int = 20
    v_max: float = 1.0
    w_max: float = 1.0

    @property
    def state_dim(self) -> int:
        return self.n_bins + 4


def action_to_velocity(action, v_max: float, w_max: float) -> tuple[float, float]:
    """Map a [-1, 1]^2 action to commanded (v, w); a_l = -1 stops, 1 is full
    speed forward, the angular component scales symmetrically."""
    a_l = min(max(float(action[0]), -1.0), 1.0)
    a_w = min(max(float(action[1]), -1.0), 1.0)
    return v_max * (a_l + 1.0) / 2.0, w_max * a_w


def build_state(scan, pose: Pose, goal: tuple[float, float], prev_action, sp: StateParams) -> np.ndarray:
    """Observation vector: min-pooled lidar bins in [0, 1] (no return -> 1),
    goal distance over the world diagonal, goal heading error over pi, and
    the previous commanded velocities normalized by their limits."""
    n_beams = scan.params.n_beams
    if n_beams % sp.n_bins != 0:
        raise ValueError(f"n_bins {sp.n_bins} must divide n_beams {n_beams}")
    ranges = np.minimum(scan.ranges, scan.params.max_range)
    bins = ranges.reshape(sp.n_bins, n_beams // sp.n_bins).min(axis=1) / scan.params.max_range
    dist = math.hypot(goal[0] - pose.x, goal[1] - pose.y)
    goal_dist = dist / sp.world_diag
    heading_err = wrap_angle(math.atan2(goal[1] - pose.y, goal[0] - pose.x) - pose.theta)
    v, w = action_to_velocity(prev_action, sp.v_max, sp.w_max)
    return np.concatenate(
        [bins, [goal_dist, heading_err / math.pi, v / sp.v_max, w / sp.w_max]]
    )


# ---------------------------------------------------------------------------
# Reward
# ---------------------------------------------------------------------------

def compute_reward(
    event: StepEvent,
    dist_to_target: float,
    action,
    orient_unit: tuple[float, float],
    target: tuple[float, float],
    robot: tuple[float, float],
    orientation_scale: float = 50.0,
) -> float:
    """Navigation reward.

    Reaching the goal pays 100 and a collision costs 100. Otherwise the
    reward is d + a + o: d = (1 - distance)/2 inside 1 m of the target and 0
    beyond, a = a_l/2 - |a_w|/2 from the raw action, and o is the cosine
    between the robot heading and the target direction times
    orientation_scale.
    """
    if event is StepEvent.GOAL:
        return 100.0
    if event is StepEvent.COLLISION:
        return -100.0
    d = (1.0 - dist_to_target) / 2.0 if dist_to_target < 1.0 else 0.0
    a = float(action[0]) / 2.0 - abs(float(action[1])) / 2.0
    tx = target[0] - robot[0]
    ty = target[1] - robot[1]
    norm = math.hypot(tx, ty)
    if norm == 0.0:
        raise ValueError("robot exactly at target outside a goal event; cannot normalize")
    ox, oy = orient_unit
    o = (ox * tx + oy * ty) / norm * orientation_scale
    return d + a + o


# ---------------------------------------------------------------------------
# Agent
# ---------------------------------------------------------------------------

@dataclass
class Td3Config:
    hidden: tuple[int, ...] = (256, 256)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    smoothing_sigma: float = 0.2
    smoothing_clip: float = 0.5
    expl_sigma_start: float = 0.1
    expl_sigma_final: float = 0.01
    batch_size: int = 128
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    total_steps: int = 60_000

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.policy_delay < 1:
            raise ValueError(f"policy_delay must be >= 1, got {self.policy_delay}")


class Td3Agent:
    """Actor plus twin critics with target copies and Adam optimizers."""

    def __init__(self, state_dim: int, action_dim: int, cfg: Td3Config, seed: int = 0):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.actor = Mlp([state_dim, *cfg.hidden, action_dim], "relu", "tanh", rng)
        self.critic1 = Mlp([state_dim + action_dim, *cfg.hidden, 1], "relu", "identity", rng)
        self.critic2 = Mlp([state_dim + action_dim, *cfg.hidden, 1], "relu", "identity", rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = Adam(self.actor.param_list(), cfg.actor_lr)
        self.critic1_opt = Adam(self.critic1.param_list(), cfg.critic_lr)
        self.critic2_opt = Adam(self.critic2.param_list(), cfg.critic_lr)
        self.rng = rng
        self.update_count = 0

    def act(self, state) -> np.ndarray:
        """Deterministic policy action in [-1, 1]^action_dim."""
        return self.actor.forward(np.asarray(state, dtype=float))

    def act_noisy(self, state, sigma: float, rng: np.random.Generator) -> np.ndarray:
        a = self.act(state) + rng.normal(0.0, sigma, size=self.action_dim)
        return np.clip(a, -1.0, 1.0)

    def nets(self) -> dict[str, Mlp]:
        return {
            "actor": self.actor,
            "actor_target": self.actor_target,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "critic1_target": self.critic1_target,
            "critic2_target": self.critic2_target,
        }

    def optimizers(self) -> dict[str, Adam]:
        return {
            "actor_opt": self.actor_opt,
            "critic1_opt": self.critic1_opt,
            "critic2_opt": self.critic2_opt,
        }


@dataclass
class UpdateResult:
    critic1_loss: float
    critic2_loss: float
    avg_q: float
    td_target: np.ndarray
    actor_updated: bool


def td3_update(agent: Td3Agent, batch, step: int) -> UpdateResult:
    """One TD3 gradient step on a minibatch.

    Both critics regress on the clipped-double-Q target built from the
    smoothed target policy; every cfg.policy_delay step the actor ascends
    critic1 and all targets take a Polyak step.
    """
    if isinstance(batch, list):
        batch = Batch.from_transitions(batch)
    if len(batch) == 0:
        raise ValueError("empty batch")
    cfg = agent.cfg
    B = len(batch)

    noise = np.clip(
        agent.rng.normal(0.0, cfg.smoothing_sigma, size=(B, agent.action_dim)),
        -cfg.smoothing_clip,
        cfg.smoothing_clip,
    )
    a_next = np.clip(agent.actor_target.forward(batch.s_next) + noise, -1.0, 1.0)
    x_next = np.hstack([batch.s_next, a_next])
    q_next = np.minimum(
        agent.critic1_target.forward(x_next), agent.critic2_target.forward(x_next)
    )
    y = batch.r + cfg.gamma * (1.0 - batch.done) * q_next

    x = np.hstack([batch.s, batch.a])
    losses = []
    avg_q = 0.0
    for i, (critic, opt) in enumerate(
        ((agent.critic1, agent.critic1_opt), (agent.critic2, agent.critic2_opt))
    ):
        q, cache = critic.forward_cached(x)
        if i == 0:
            avg_q = float(q.mean())
        err = q - y
        losses.append(float(np.mean(err**2)))
        grads, _ = critic.backward(cache, 2.0 * err / B)
        opt.step(critic.param_list(), flatten_grads(grads))

    actor_updated = step % cfg.policy_delay == 0
    if actor_updated:
        a_pi, actor_cache = agent.actor.forward_cached(batch.s)
        q_pi, critic_cache = agent.critic1.forward_cached(np.hstack([batch.s, a_pi]))
        # ascend critic1: loss is -mean(Q), so dL/dQ = -1/B
        _, dx = agent.critic1.backward(critic_cache, np.full((B, 1), -1.0 / B))
        actor_grads, _ = agent.actor.backward(actor_cache, dx[:, agent.state_dim :])
        agent.actor_opt.step(agent.actor.param_list(), flatten_grads(actor_grads))
        agent.actor_target.polyak_update_from(agent.actor, cfg.tau)
        agent.critic1_target.polyak_update_from(agent.critic1, cfg.tau)
        agent.critic2_target.polyak_update_from(agent.critic2, cfg.tau)

    agent.update_count = step
    return UpdateResult(losses[0], losses[1], avg_q, y, actor_updated)


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    outcome: str
    steps: int


@dataclass
class UpdateRecord:
    update: int
    critic1_loss: float
    critic2_loss: float
    avg_q: float


class TrainingLog:
    """Append-only per-episode and per-update training history."""

    def __init__(self):
        self.episodes: list[EpisodeRecord] = []
        self.updates: list[UpdateRecord] = []

    def write_episode_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("episode,return,outcome,steps\n")
            for e in self.episodes:
                fh.write(f"{e.episode},{e.ret!r},{e.outcome},{e.steps}\n")

    def write_update_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("update,critic1_loss,critic2_loss,avg_q\n")
            for u in self.updates:
                fh.write(f"{u.update},{u.critic1_loss!r},{u.critic2_loss!r},{u.avg_q!r}\n")

    def avg_q_series(self) -> np.ndarray:
        return np.array([u.avg_q for u in self.updates])


def expl_sigma(cfg: Td3Config, step: int) -> float:
    """Exploration noise scale, linearly decayed over the configured run."""
    if cfg.total_steps <= 0:
        return cfg.expl_sigma_final
    frac = min(max(step / cfg.total_steps, 0.0), 1.0)
    return cfg.expl_sigma_start + (cfg.expl_sigma_final - cfg.expl_sigma_start) * frac


def train(
    env,
    agent: Td3Agent,
    cfg: Td3Config,
    seed: int,
    buffer: ReplayBuffer | None = None,
    log: TrainingLog | None = None,
) -> tuple[Td3Agent, TrainingLog]:
    """Episodic TD3 training loop.

    The env contract: reset() -> state vector, step(action) -> (state,
    reward, StepEvent). Runs cfg.total_steps environment steps with uniform
    random actions during warmup, then noisy policy actions with one
    td3_update per step once the buffer can fill a batch. Fully
    deterministic for a fixed seed and fresh agent/env.
    """
    rng = np.random.default_rng(seed)
    if buffer is None:
        buffer = ReplayBuffer(cfg.buffer_capacity, agent.state_dim, agent.action_dim)
    if log is None:
        log = TrainingLog()
    if cfg.total_steps <= 0:
        return agent, log

    state = env.reset()
    episode = log.episodes[-1].episode + 1 if log.episodes else 0
    ep_ret, ep_steps = 0.0, 0
    for t in range(1, cfg.total_steps + 1):
        if t <= cfg.warmup_steps:
            action = rng.uniform(-1.0, 1.0, size=agent.action_dim)
        else:
            action = agent.act_noisy(state, expl_sigma(cfg, t), rng)
        state_next, reward, event = env.step(action)
        buffer.add(state, action, reward, state_next, event.terminal)
        ep_ret += reward
        ep_steps += 1
        if event.terminal:
            log.episodes.append(EpisodeRecord(episode, ep_ret, event.value, ep_steps))
            episode += 1
            state = env.reset()
            ep_ret, ep_steps = 0.0, 0
        else:
            state = state_next
        if t > cfg.warmup_steps and len(buffer) >= cfg.batch_size:
            result = td3_update(agent, buffer.sample(cfg.batch_size, rng), agent.update_count + 1)
            log.updates.append(
                UpdateRecord(agent.update_count, result.critic1_loss, result.critic2_loss, result.avg_q)
            )
    return agent, log


@dataclass
class Metrics:
    """Outcome partition over evaluation episodes.

    The timeout rate is defined as the complement of the other rates so the
    reported rates always sum to exactly 1.0.
    """

    episodes: int
    successes: int
    collisions: int
    timeouts: int
    retrain_failures: int = 0

    def __post_init__(self):
        total = self.successes + self.collisions + self.timeouts + self.retrain_failures
        if total != self.episodes:
            raise ValueError(f"outcome counts {total} do not partition {self.episodes} episodes")

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes

    @property
    def collision_rate(self) -> float:
        return self.collisions / self.episodes

    @property
    def retrain_failed_rate(self) -> float:
        return self.retrain_failures / self.episodes

    @property
    def timeout_rate(self) -> float:
        return 1.0 - (self.success_rate + self.collision_rate + self.retrain_failed_rate)

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "successes": self.successes,
            "collisions": self.collisions,
            "timeouts": self.timeouts,
            "retrain_failures": self.retrain_failures,
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "timeout_rate": self.timeout_rate,
            "retrain_failed_rate": self.retrain_failed_rate,
        }


def evaluate(agent: Td3Agent, env_sampler, n_episodes: int):
    """Run the deterministic policy over freshly sampled episodes.

    env_sampler(episode_index) must return a ready env. Returns (Metrics,
    per-episode trajectory record lists).
    """
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    counts = {StepEvent.GOAL: 0, StepEvent.COLLISION: 0, StepEvent.TIMEOUT: 0}
    trajectories: list[list[TrajectoryRecord]] = []
    for ep in range(n_episodes):
        env = env_sampler(ep)
        state = env.reset()
        records: list[TrajectoryRecord] = []
        while True:
            action = agent.act(state)
            state, reward, event = env.step(action)
            robot = env.robot
            records.append(
                TrajectoryRecord(
                    t=env.steps * env.cfg.dt,
                    x=robot.pose.x,
                    y=robot.pose.y,
                    theta=robot.pose.theta,
                    v=robot.v,
                    w=robot.w,
                    reward=reward,
                    min_scan_range=env.min_scan_range,
                    phase=event.value if event.terminal else "eval",
                )
            )
            if event.terminal:
                counts[event] += 1
                break
        trajectories.append(records)
    metrics = Metrics(
        episodes=n_episodes,
        successes=counts[StepEvent.GOAL],
        collisions=counts[StepEvent.COLLISION],
        timeouts=counts[StepEvent.TIMEOUT],
    )
    return metrics, trajectories


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _agent_arrays(agent: Td3Agent) -> list[tuple[str, np.ndarray]]:
    out = []
    for name, net in agent.nets().items():
        for i, p in enumerate(net.param_list()):
            out.append((f"{name}.p{i}", p))
    for name, opt in agent.optimizers().items():
        for i, m in enumerate(opt.state.m):
            out.append((f"{name}.m{i}", m))
        for i, v in enumerate(opt.state.v):
            out.append((f"{name}.v{i}", v))
    return out


def save_checkpoint(agent: Td3Agent, path) -> None:
    """Single-file checkpoint: magic, JSON descriptor, raw float64 arrays.

    Byte-deterministic for identical agents, so seeded runs reproduce
    checkpoints exactly.
    """
    arrays = _agent_arrays(agent)
    header = {
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "config": asdict(agent.cfg),
        "arch": {"actor": agent.actor.describe(), "critic": agent.critic1.describe()},
        "update_count": agent.update_count,
        "opt_steps": {name: opt.state.t for name, opt in agent.optimizers().items()},
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(
    path,
    expected_state_dim: int | None = None,
    expected_action_dim: int | None = None,
) -> Td3Agent:
    """Rebuild an agent from a checkpoint file.

    Raises CheckpointError when the stored architecture descriptor does not
    match the expectations or its own array manifest.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise CheckpointError(f"not a twinnav checkpoint: {path}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if expected_state_dim is not None and header["state_dim"] != expected_state_dim:
            raise CheckpointError(
                f"checkpoint state_dim {header['state_dim']} != expected {expected_state_dim}"
            )
        if expected_action_dim is not None and header["action_dim"] != expected_action_dim:
            raise CheckpointError(
                f"checkpoint action_dim {header['action_dim']} != expected {expected_action_dim}"
            )
        cfg = Td3Config(**header["config"])
        agent = Td3Agent(header["state_dim"], header["action_dim"], cfg, seed=0)
        if header["arch"] != {
            "actor": agent.actor.describe(),
            "critic": agent.critic1.describe(),
        }:
            raise CheckpointError(
                f"architecture descriptor {header['arch']} does not match config {cfg.hidden}"
            )
        expected_names = [name for name, _ in _agent_arrays(agent)]
        manifest = header["arrays"]
        if [m[0] for m in manifest] != expected_names:
            raise CheckpointError("checkpoint array manifest does not match architecture")
        loaded = {}
        for name, shape in manifest:
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            loaded[name] = data.astype(float)
    for name, arr in _agent_arrays(agent):
        if loaded[name].shape != arr.shape:
            raise CheckpointError(f"array {name} shape {loaded[name].shape} != {arr.shape}")
        arr[...] = loaded[name]
    for name, opt in agent.optimizers().items():
        opt.state.t = header["opt_steps"][name]
    agent.update_count = header["update_count"]
    return agent
