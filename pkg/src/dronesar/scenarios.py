"""Scenario definitions: grid partition, difficulty levels, target placement,
scheduled malfunctions and intelligence, oracle configuration.

A Scenario is the full static description of a mission instance; building
one is deterministic in its seed. The operator's initial belief over areas
starts uniform; true targets are drawn from a hidden spiky weight vector so
that probability/type adjustments have something to discover.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .world import AreaLevel, CellRect, Drone, MissionState, ScanParams, SubArea, Target

FORMAT = "sar-scenario/1"

# per-difficulty scan presets: easy terrain is scanned high and fast with a
# forgiving high threshold, hard terrain low and slow
PRESET_PARAMS = {
    AreaLevel.LOW: ScanParams(lc=0.35, hc=0.75, altitude=80.0, velocity=10.0),
    AreaLevel.MEDIUM: ScanParams(lc=0.40, hc=0.70, altitude=60.0, velocity=7.0),
    AreaLevel.HIGH: ScanParams(lc=0.45, hc=0.65, altitude=40.0, velocity=4.0),
}


@dataclass(frozen=True)
class OracleConfig:
    base_conf: float = 0.95
    alt_coeff: float = 0.004
    vel_coeff: float = 0.02
    conf_floor: float = 0.2
    conf_ceil: float = 0.95
    target_concentration: float = 20.0
    clutter_rate: float = 0.02
    clutter_mult: dict = field(
        default_factory=lambda: {AreaLevel.LOW: 1.0, AreaLevel.MEDIUM: 2.0, AreaLevel.HIGH: 4.0}
    )
    clutter_conf_mean: float = 0.45
    clutter_concentration: float = 10.0

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["clutter_mult"] = {k.value: v for k, v in self.clutter_mult.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OracleConfig":
        d = dict(d)
        d["clutter_mult"] = {AreaLevel(k): v for k, v in d["clutter_mult"].items()}
        return cls(**d)


@dataclass(frozen=True)
class ScheduleEvent:
    kind: str  # "malfunction" | "intel"
    time: float
    drone_id: Optional[int] = None
    silent: bool = False
    area_ids: tuple[int, ...] = ()
    probability: Optional[float] = None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "time": self.time, "drone_id": self.drone_id,
            "silent": self.silent, "area_ids": list(self.area_ids),
            "probability": self.probability, "note": self.note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScheduleEvent":
        return cls(
            kind=d["kind"], time=d["time"], drone_id=d.get("drone_id"),
            silent=d.get("silent", False), area_ids=tuple(d.get("area_ids", ())),
            probability=d.get("probability"), note=d.get("note", ""),
        )


@dataclass
class Scenario:
    name: str
    rows: int
    cols: int
    cell_size: float
    duration: float
    setup_duration: float
    areas: list[tuple[CellRect, AreaLevel, float]]  # rect, level, initial belief
    drone_cells: list[tuple[int, int]]
    targets: list[tuple[int, int]]
    schedule: list[ScheduleEvent] = field(default_factory=list)
    presets: dict = field(default_factory=lambda: dict(PRESET_PARAMS))
    dwell_s: float = 30.0
    invest_dwell_s: float = 3.0
    invest_stops: int = 8
    low_timeout_s: float = 30.0
    oracle: OracleConfig = field(default_factory=OracleConfig)

    @property
    def n_areas(self) -> int:
        return len(self.areas)

    @property
    def n_drones(self) -> int:
        return len(self.drone_cells)

    def schedule_between(self, t0: float, t1: float) -> list[ScheduleEvent]:
        out = [e for e in self.schedule if t0 <= e.time < t1]
        out.sort(key=lambda e: (e.time, e.kind, e.drone_id or -1))
        return out

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "name": self.name,
            "rows": self.rows,
            "cols": self.cols,
            "cell_size": self.cell_size,
            "duration": self.duration,
            "setup_duration": self.setup_duration,
            "areas": [
                {"rect": [r.row0, r.col0, r.rows, r.cols], "level": lv.value, "probability": p}
                for r, lv, p in self.areas
            ],
            "drone_cells": [list(c) for c in self.drone_cells],
            "targets": [list(c) for c in self.targets],
            "schedule": [e.to_dict() for e in self.schedule],
            "presets": {lv.value: self.presets[lv].to_dict() for lv in self.presets},
            "dwell_s": self.dwell_s,
            "invest_dwell_s": self.invest_dwell_s,
            "invest_stops": self.invest_stops,
            "low_timeout_s": self.low_timeout_s,
            "oracle": self.oracle.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if d.get("format") != FORMAT:
            raise ValueError(f"unsupported scenario format {d.get('format')!r}")
        return cls(
            name=d["name"],
            rows=d["rows"],
            cols=d["cols"],
            cell_size=d["cell_size"],
            duration=d["duration"],
            setup_duration=d["setup_duration"],
            areas=[
                (CellRect(*a["rect"]), AreaLevel(a["level"]), a["probability"])
                for a in d["areas"]
            ],
            drone_cells=[tuple(c) for c in d["drone_cells"]],
            targets=[tuple(c) for c in d["targets"]],
            schedule=[ScheduleEvent.from_dict(e) for e in d["schedule"]],
            presets={AreaLevel(k): ScanParams.from_dict(v) for k, v in d["presets"].items()},
            dwell_s=d["dwell_s"],
            invest_dwell_s=d["invest_dwell_s"],
            invest_stops=d["invest_stops"],
            low_timeout_s=d["low_timeout_s"],
            oracle=OracleConfig.from_dict(d["oracle"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def initial_state(scenario: Scenario) -> MissionState:
    """Fresh mission state: drones idle at their pads, uniform belief as
    given by the scenario, no assignments yet."""
    state = MissionState(
        rows=scenario.rows,
        cols=scenario.cols,
        cell_size=scenario.cell_size,
        duration=scenario.duration,
        sub_areas=[
            SubArea(id=i, rect=rect, probability=p, level=lv)
            for i, (rect, lv, p) in enumerate(scenario.areas)
        ],
        drones=[
            Drone(id=i, x=(c + 0.5) * scenario.cell_size, y=(r + 0.5) * scenario.cell_size)
            for i, (r, c) in enumerate(scenario.drone_cells)
        ],
        targets=[Target(row=r, col=c) for r, c in scenario.targets],
        params=dict(scenario.presets),
    )
    return state


def assignment_by_probability(state: MissionState) -> dict[int, list[int]]:
    """Round-robin area assignment in descending belief order; ties go to
    lower area id. The standard setup-phase allocation."""
    order = sorted(state.sub_areas, key=lambda a: (-a.probability, a.id))
    queues: dict[int, list[int]] = {d.id: [] for d in state.drones}
    n = len(state.drones)
    for i, area in enumerate(order):
        queues[state.drones[i % n].id].append(area.id)
    return queues


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def partition_grid(rows: int, cols: int, n_areas: int) -> list[CellRect]:
    """Split the grid into n_areas rectangles using the block layout whose
    blocks are closest to square. Remainders widen the trailing blocks."""
    best = None
    for br in range(1, n_areas + 1):
        if n_areas % br:
            continue
        bc = n_areas // br
        if br > rows or bc > cols:
            continue
        aspect = abs((rows / br) / (cols / bc) - 1.0)
        if best is None or aspect < best[0]:
            best = (aspect, br, bc)
    if best is None:
        raise ValueError(f"cannot partition {rows}x{cols} into {n_areas} blocks")
    _, br, bc = best

    def cuts(extent: int, k: int) -> list[int]:
        base, rem = divmod(extent, k)
        sizes = [base + (1 if i >= k - rem else 0) for i in range(k)]
        edges = [0]
        for s in sizes:
            edges.append(edges[-1] + s)
        return edges

    re_, ce = cuts(rows, br), cuts(cols, bc)
    rects = []
    for i in range(br):
        for j in range(bc):
            rects.append(CellRect(re_[i], ce[j], re_[i + 1] - re_[i], ce[j + 1] - ce[j]))
    return rects


def build_scenario(
    seed: int = 0,
    *,
    name: str = "default",
    rows: int = 40,
    cols: int = 60,
    n_areas: int = 40,
    n_drones: int = 6,
    duration: float = 1200.0,
    setup_duration: float = 300.0,
    level_weights: tuple[float, float, float] = (0.3, 0.4, 0.3),  # low/med/high
    target_range: tuple[int, int] = (18, 20),
    malfunctions: Optional[list[tuple[float, int, bool]]] = None,
    intel_times: tuple[float, ...] = (500.0,),
    dwell_s: float = 30.0,
    oracle: Optional[OracleConfig] = None,
) -> Scenario:
    rng = np.random.default_rng(seed)
    rects = partition_grid(rows, cols, n_areas)
    levels = [
        (AreaLevel.LOW, AreaLevel.MEDIUM, AreaLevel.HIGH)[i]
        for i in rng.choice(3, size=n_areas, p=np.asarray(level_weights) / sum(level_weights))
    ]
    belief = 1.0 / n_areas
    areas = [(rects[i], levels[i], belief) for i in range(n_areas)]

    # hidden ground-truth weights are spiky so some areas genuinely matter
    true_w = rng.dirichlet(np.full(n_areas, 0.5))
    n_targets = int(rng.integers(target_range[0], target_range[1] + 1))
    targets: list[tuple[int, int]] = []
    taken = set()
    while len(targets) < n_targets:
        a = rects[int(rng.choice(n_areas, p=true_w))]
        cell = (int(rng.integers(a.row0, a.row0 + a.rows)), int(rng.integers(a.col0, a.col0 + a.cols)))
        if cell in taken:
            continue
        taken.add(cell)
        targets.append(cell)

    # pads along the top edge, spread across columns
    pad_cols = np.linspace(0, cols - 1, n_drones).round().astype(int)
    drone_cells = [(0, int(c)) for c in pad_cols]

    if malfunctions is None:
        malfunctions = [(400.0, 2 % n_drones, False), (700.0, 4 % n_drones, True)]
    schedule = [
        ScheduleEvent(kind="malfunction", time=t, drone_id=d, silent=s)
        for t, d, s in malfunctions
    ]
    for t in intel_times:
        hot = int(np.argmax(true_w))
        schedule.append(
            ScheduleEvent(
                kind="intel", time=t, area_ids=(hot,),
                probability=round(float(true_w[hot]), 4),
                note="ground report: activity near this sector",
            )
        )

    return Scenario(
        name=name,
        rows=rows,
        cols=cols,
        cell_size=10.0,
        duration=duration,
        setup_duration=setup_duration,
        areas=areas,
        drone_cells=drone_cells,
        targets=targets,
        schedule=schedule,
        dwell_s=dwell_s,
        oracle=oracle or OracleConfig(),
    )


def build_tiny_scenario(seed: int = 0, **overrides) -> Scenario:
    """Small fast instance for unit tests: 4 areas, 2 drones, short clock."""
    kw = dict(
        name="tiny", rows=12, cols=12, n_areas=4, n_drones=2,
        duration=300.0, setup_duration=0.0, dwell_s=5.0,
        target_range=(3, 3), malfunctions=[], intel_times=(),
    )
    kw.update(overrides)
    return build_scenario(seed, **kw)


def build_sweep_scenario(seed: int = 0, *, malfunction_time: float = 380.0) -> Scenario:
    """Load-tight instance for malfunction-response studies: fewer drones,
    more hard terrain, one loud malfunction on a busy drone."""
    return build_scenario(
        seed,
        name="sweep",
        n_drones=4,
        level_weights=(0.15, 0.35, 0.5),
        malfunctions=[(malfunction_time, 1, False)],
        intel_times=(),
    )


def build_clutter_scenario(seed: int = 0) -> Scenario:
    """Decoy-rich instance: scanning throws off frequent decoy cues whose
    confidence sits in a tight band under the preset hc values, while real
    targets return well above them. Lowering hc turns the decoys into
    drone-stopping operator alerts; raising lc sheds them. Counterpart to
    `default`, which is neutral about threshold direction."""
    oracle = OracleConfig(
        base_conf=0.99, alt_coeff=0.002, vel_coeff=0.008, target_concentration=60.0,
        clutter_rate=0.15, clutter_conf_mean=0.55, clutter_concentration=70.0,
    )
    return build_scenario(
        seed, name="clutter", oracle=oracle, level_weights=(0.2, 0.35, 0.45)
    )


SCENARIO_BUILDERS = {
    "default": build_scenario,
    "tiny": build_tiny_scenario,
    "sweep": build_sweep_scenario,
    "clutter": build_clutter_scenario,
}


def make_scenario(spec: str, seed: int = 0) -> Scenario:
    """Resolve a scenario by builder name or JSON file path."""
    if spec in SCENARIO_BUILDERS:
        return SCENARIO_BUILDERS[spec](seed)
    return Scenario.load(spec)
