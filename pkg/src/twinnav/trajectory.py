"""Per-tick trajectory records and their CSV round trip."""

from __future__ import annotations

import csv
from dataclasses import dataclass

TRAJECTORY_FIELDS = ("t", "x", "y", "theta", "v", "w", "reward", "min_scan_range", "phase")


@dataclass(frozen=True)
class TrajectoryRecord:
    t: float
    x: float
    y: float
    theta: float
    v: float
    w: float
    reward: float
    min_scan_range: float
    phase: str


def write_trajectory_csv(records: list[TrajectoryRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_FIELDS)
        for r in records:
            writer.writerow(
                [repr(r.t), repr(r.x), repr(r.y), repr(r.theta), repr(r.v), repr(r.w),
                 repr(r.reward), repr(r.min_scan_range), r.phase]
            )


def read_trajectory_csv(path) -> list[TrajectoryRecord]:
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != TRAJECTORY_FIELDS:
            raise ValueError(f"unexpected trajectory header in {path}: {reader.fieldnames}")
        for row in reader:
            out.append(
                TrajectoryRecord(
                    t=float(row["t"]), x=float(row["x"]), y=float(row["y"]),
                    theta=float(row["theta"]), v=float(row["v"]), w=float(row["w"]),
                    reward=float(row["reward"]),
                    min_scan_range=float(row["min_scan_range"]),
                    phase=row["phase"],
                )
            )
    return out
