"""Experience storage: transitions, minibatches, and a ring replay buffer
with a length-prefixed snapshot format for retraining handoffs."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

_SNAPSHOT_MAGIC = b"TWINNAV-REPLAY-1\n"


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class Batch:
    s: np.ndarray       # (B, state_dim)
    a: np.ndarray       # (B, action_dim)
    r: np.ndarray       # (B, 1)
    s_next: np.ndarray  # (B, state_dim)
    done: np.ndarray    # (B, 1), 0.0 or 1.0

    def __len__(self) -> int:
        return self.s.shape[0]

    @classmethod
    def from_transitions(cls, transitions: list[Transition]) -> "Batch":
        if not transitions:
            raise ValueError("empty batch")
        return cls(
            s=np.stack([t.s for t in transitions]).astype(float),
            a=np.stack([t.a for t in transitions]).astype(float),
            r=np.array([[t.r] for t in transitions], dtype=float),
            s_next=np.stack([t.s_next for t in transitions]).astype(float),
            done=np.array([[1.0 if t.done else 0.0] for t in transitions]),
        )


class ReplayBuffer:
    """Fixed-capacity ring buffer; oldest transitions evicted first."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self._s = np.zeros((capacity, state_dim))
        self._a = np.zeros((capacity, action_dim))
        self._r = np.zeros((capacity, 1))
        self._s2 = np.zeros((capacity, state_dim))
        self._done = np.zeros((capacity, 1))
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s, a, r: float, s_next, done: bool) -> None:
        i = self._next
        self._s[i] = s
        self._a[i] = a
        self._r[i, 0] = r
        self._s2[i] = s_next
        self._done[i, 0] = 1.0 if done else 0.0
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def add_transition(self, t: Transition) -> None:
        self.add(t.s, t.a, t.r, t.s_next, t.done)

    def _order(self) -> np.ndarray:
        """Storage indices from oldest to newest."""
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def transitions(self) -> list[Transition]:
        """All stored transitions, oldest first."""
        return [
            Transition(
                s=self._s[i].copy(),
                a=self._a[i].copy(),
                r=float(self._r[i, 0]),
                s_next=self._s2[i].copy(),
                done=bool(self._done[i, 0]),
            )
            for i in self._order()
        ]

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform minibatch with replacement; requires size >= batch_size."""
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if self._size < batch_size:
            raise ValueError(f"buffer holds {self._size} transitions, need {batch_size}")
        idx = rng.integers(0, self._size, size=batch_size)
        if self._size == self.capacity:
            idx = (idx + self._next) % self.capacity
        return Batch(
            s=self._s[idx].copy(),
            a=self._a[idx].copy(),
            r=self._r[idx].copy(),
            s_next=self._s2[idx].copy(),
            done=self._done[idx].copy(),
        )

    def save(self, path) -> None:
        """Write a snapshot: magic, JSON header, then one length-prefixed
        packed record per transition, oldest first."""
        header = json.dumps(
            {
                "capacity": self.capacity,
                "state_dim": self.state_dim,
                "action_dim": self.action_dim,
                "size": self._size,
            },
            sort_keys=True,
        ).encode("utf-8")
        rec_len = 8 * (2 * self.state_dim + self.action_dim + 2)
        with open(path, "wb") as fh:
            fh.write(_SNAPSHOT_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for i in self._order():
                rec = np.concatenate(
                    [self._s[i], self._a[i], self._r[i], self._s2[i], self._done[i]]
                )
                payload = rec.astype("<f8").tobytes()
                assert len(payload) == rec_len
                fh.write(struct.pack("<I", rec_len))
                fh.write(payload)

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with open(path, "rb") as fh:
            magic = fh.read(len(_SNAPSHOT_MAGIC))
            if magic != _SNAPSHOT_MAGIC:
                raise ValueError(f"not a replay snapshot: {path}")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            buf = cls(header["capacity"], header["state_dim"], header["action_dim"])
            sd, ad = buf.state_dim, buf.action_dim
            for _ in range(header["size"]):
                (rlen,) = struct.unpack("<I", fh.read(4))
                rec = np.frombuffer(fh.read(rlen), dtype="<f8")
                s = rec[:sd]
                a = rec[sd : sd + ad]
                r = rec[sd + ad]
                s2 = rec[sd + ad + 1 : 2 * sd + ad + 1]
                done = rec[2 * sd + ad + 1]
                buf.add(s, a, float(r), s2, bool(done))
        return buf
