"""Trajectory and event-log serialization.

Everything is JSONL with compact separators and sorted keys, so identical
runs produce byte-identical files. A trajectory file is a header line,
one line per record, and a summary line; an event log is one line per
event with a monotone sequence number.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

TRAJECTORY_FORMAT = "sar-trajectory/1"
EVENTS_FORMAT = "sar-events/1"


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class TrajectoryRecord:
    t: float
    action: dict
    action_class: Optional[str]
    elapsed: float
    features: list[float]
    metrics: dict
    digest: str = ""  # fingerprint of the full state at this record

    def to_dict(self) -> dict:
        return {
            "kind": "record",
            "t": self.t,
            "action": self.action,
            "action_class": self.action_class,
            "elapsed": self.elapsed,
            "features": self.features,
            "metrics": self.metrics,
            "digest": self.digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryRecord":
        return cls(
            t=d["t"], action=d["action"], action_class=d["action_class"],
            elapsed=d["elapsed"], features=d["features"], metrics=d["metrics"],
            digest=d.get("digest", ""),
        )


@dataclass
class Trajectory:
    scenario: dict
    seed: int
    operator: str
    initial_config: list[dict]
    records: list[TrajectoryRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    label: Union[str, float, None] = None
    meta: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.scenario["duration"]

    def features_at_fraction(self, frac: float) -> np.ndarray:
        """Feature vector of the last record at or before frac * duration."""
        t = frac * self.duration
        chosen = self.records[0]
        for r in self.records:
            if r.t <= t + 1e-9:
                chosen = r
            else:
                break
        return np.asarray(chosen.features)

    def header(self) -> dict:
        return {
            "kind": "header",
            "format": TRAJECTORY_FORMAT,
            "scenario": self.scenario,
            "seed": self.seed,
            "operator": self.operator,
            "initial_config": self.initial_config,
            "label": self.label,
            "meta": self.meta,
        }

    def save(self, path) -> None:
        lines = [dumps(self.header())]
        lines.extend(dumps(r.to_dict()) for r in self.records)
        lines.append(dumps({"kind": "summary", **self.summary}))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Trajectory":
        records = []
        header = None
        summary: dict = {}
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            kind = d.get("kind")
            if kind == "header":
                if d.get("format") != TRAJECTORY_FORMAT:
                    raise ValueError(f"unsupported trajectory format {d.get('format')!r}")
                header = d
            elif kind == "record":
                records.append(TrajectoryRecord.from_dict(d))
            elif kind == "summary":
                summary = {k: v for k, v in d.items() if k != "kind"}
        if header is None:
            raise ValueError(f"{path}: no header line")
        return cls(
            scenario=header["scenario"],
            seed=header["seed"],
            operator=header["operator"],
            initial_config=header["initial_config"],
            records=records,
            summary=summary,
            label=header.get("label"),
            meta=header.get("meta", {}),
        )


def save_corpus(trajectories: Iterable[Trajectory], directory, prefix: str = "traj") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, tr in enumerate(trajectories):
        p = directory / f"{prefix}_{i:04d}.jsonl"
        tr.save(p)
        paths.append(p)
    return paths


def load_corpus(directory) -> list[Trajectory]:
    return [Trajectory.load(p) for p in sorted(Path(directory).glob("*.jsonl"))]


def save_events(events: Iterable[dict], path) -> None:
    lines = [dumps({"format": EVENTS_FORMAT, "kind": "header"})]
    lines.extend(dumps(e) for e in events)
    Path(path).write_text("\n".join(lines) + "\n")


def load_events(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        if d.get("kind") == "header":
            continue
        out.append(d)
    return out


def trajectory_from_events(events: list[dict]) -> Trajectory:
    """Rebuild a demonstration from a service event log. Requires the
    session to have been created with recording on (the default), which
    embeds action records and a final summary in the stream."""
    header = next(e for e in events if e["type"] == "session_created")
    records = [
        TrajectoryRecord.from_dict(e["record"])
        for e in events
        if e["type"] == "action_record"
    ]
    summary = next((e["summary"] for e in events if e["type"] == "mission_end"), {})
    # live sessions collect setup-phase configuration after creation and
    # publish it on the phase-change event
    initial_config = header.get("initial_config", [])
    for e in events:
        if e["type"] == "phase" and e.get("initial_config") is not None:
            initial_config = e["initial_config"]
            break
    return Trajectory(
        scenario=header["scenario"],
        seed=header["seed"],
        operator=header.get("operator", "live"),
        initial_config=initial_config,
        records=records,
        summary=summary,
        meta={"source": "service"},
    )
