"""Centralized task allocation: evolving per-drone search paths.

A solution assigns every sub-area to at most one drone and orders each
drone's areas into a path of (area, mode) steps. The objective expands
paths into a per-tick schedule and accumulates the probability that the
first detection happens at tick t; its total over the horizon is the
value being maximized. Population search follows the biogeography
pattern: good solutions donate paths, poor ones mutate, stalled ones are
replaced, and every path is locally re-optimized each generation by NEH
insertion plus a short tabu search.

All randomness flows through per-slot generators spawned from the master
seed, so results are reproducible regardless of evaluation order.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .world import CELL_SIZE_M, LEVELS, MissionState

Step = tuple[int, int]  # (sub_area id, mode index)
SearchPath = tuple[Step, ...]

DEFAULT_ALPHA = math.e
DEFAULT_EPS = 1e-6
# cruise speed between areas when building an instance from mission state;
# transit is flown fast and level, not at the scan-mode speed
CRUISE_M_S = 12.0


class PlannerError(Exception):
    pass


class InfeasiblePath(PlannerError):
    """A path references unknown areas or repeats one."""


class BudgetZero(PlannerError):
    """evolve was given neither a generation count nor a time budget."""


# ---------------------------------------------------------------------------
# instance
# ---------------------------------------------------------------------------


@dataclass
class PlannerInstance:
    """Search problem data.

    ``priors[t-1, i]`` is the probability the target sits in area i at
    tick t; rows may repeat for static priors but the time axis is kept
    so intelligence updates can reshape the future. ``glimpse[i, j, k]``
    is the per-tick detection probability while drone j scans area i in
    mode k, ``scan_time`` the whole-tick duration of that scan, and
    ``travel``/``start`` whole-tick flight times between areas and from
    each drone's initial position.
    """

    m: int
    n: int
    K: int
    T: int
    priors: np.ndarray  # (T, m)
    glimpse: np.ndarray  # (m, n, K)
    scan_time: np.ndarray  # (m, n, K) int
    travel: np.ndarray  # (n, m, m) int
    start: np.ndarray  # (n, m) int

    def __post_init__(self) -> None:
        self.priors = np.asarray(self.priors, dtype=np.float64)
        self.glimpse = np.asarray(self.glimpse, dtype=np.float64)
        self.scan_time = np.asarray(self.scan_time, dtype=np.int64)
        self.travel = np.asarray(self.travel, dtype=np.int64)
        self.start = np.asarray(self.start, dtype=np.int64)

    def validate(self) -> None:
        if self.m < 1 or self.n < 1 or self.K < 1 or self.T < 1:
            raise PlannerError(f"degenerate sizes m={self.m} n={self.n} K={self.K} T={self.T}")
        shapes = {
            "priors": (self.priors.shape, (self.T, self.m)),
            "glimpse": (self.glimpse.shape, (self.m, self.n, self.K)),
            "scan_time": (self.scan_time.shape, (self.m, self.n, self.K)),
            "travel": (self.travel.shape, (self.n, self.m, self.m)),
            "start": (self.start.shape, (self.n, self.m)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise PlannerError(f"{name} shape {got}, expected {want}")
        if np.any(self.priors < 0) or np.any(self.priors > 1):
            raise PlannerError("priors outside [0, 1]")
        if np.any(self.priors.sum(axis=1) > 1.0 + 1e-9):
            raise PlannerError("priors sum above 1 at some tick")
        if np.any(self.glimpse < 0) or np.any(self.glimpse > 1):
            raise PlannerError("glimpse probabilities outside [0, 1]")
        if np.any(self.scan_time < 1):
            raise PlannerError("scan times must be at least one tick")
        if np.any(self.travel < 0) or np.any(self.start < 0):
            raise PlannerError("negative travel time")

    def travel_ticks(self, loc: int, area: int, drone: int) -> int:
        """Flight ticks from ``loc`` (area id, or -1 for the drone's
        initial position) to ``area``."""
        if loc < 0:
            return int(self.start[drone, area])
        return int(self.travel[drone, loc, area])

    def to_dict(self) -> dict:
        return {
            "m": self.m, "n": self.n, "K": self.K, "T": self.T,
            "priors": self.priors.tolist(),
            "glimpse": self.glimpse.tolist(),
            "scan_time": self.scan_time.tolist(),
            "travel": self.travel.tolist(),
            "start": self.start.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerInstance":
        inst = cls(
            m=d["m"], n=d["n"], K=d["K"], T=d["T"],
            priors=np.array(d["priors"]),
            glimpse=np.array(d["glimpse"]),
            scan_time=np.array(d["scan_time"]),
            travel=np.array(d["travel"]),
            start=np.array(d["start"]),
        )
        inst.validate()
        return inst

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PlannerInstance":
        return cls.from_dict(json.loads(text))


def static_instance(
    priors: Sequence[float],
    glimpse: np.ndarray,
    scan_time: np.ndarray,
    travel: np.ndarray,
    start: np.ndarray,
    T: int,
) -> PlannerInstance:
    """Instance with time-constant priors."""
    p = np.asarray(priors, dtype=np.float64)
    glimpse = np.asarray(glimpse, dtype=np.float64)
    inst = PlannerInstance(
        m=p.shape[0], n=glimpse.shape[1], K=glimpse.shape[2], T=T,
        priors=np.tile(p, (T, 1)), glimpse=glimpse,
        scan_time=scan_time, travel=travel, start=start,
    )
    inst.validate()
    return inst


def random_instance(
    seed: int,
    m_range: tuple[int, int] = (2, 4),
    n_range: tuple[int, int] = (1, 2),
    k_range: tuple[int, int] = (1, 2),
    t_range: tuple[int, int] = (8, 20),
    glimpse_range: tuple[float, float] = (0.1, 0.9),
) -> PlannerInstance:
    """Small random instance for benchmarks and oracle comparisons.

    The recursion treats per-tick detection chances as independent
    hazards; with strong glimpses and staggered scan starts that
    approximation visibly parts ways with a fully location-conditioned
    process, so comparisons against sampling oracles should draw from a
    mild ``glimpse_range``."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    K = int(rng.integers(k_range[0], k_range[1] + 1))
    T = int(rng.integers(t_range[0], t_range[1] + 1))
    raw = rng.dirichlet(np.ones(m)) * rng.uniform(0.5, 0.95)
    return static_instance(
        priors=raw,
        glimpse=rng.uniform(glimpse_range[0], glimpse_range[1], size=(m, n, K)),
        scan_time=rng.integers(1, 4, size=(m, n, K)),
        travel=rng.integers(0, 3, size=(n, m, m)),
        start=rng.integers(0, 3, size=(n, m)),
        T=T,
    )


def instance_from_state(state: MissionState, tick_s: float = 10.0) -> PlannerInstance:
    """Planning instance for the rest of the mission.

    The glimpse model is a planning assumption mirroring the default
    sensor presets (confidence falls with altitude and speed), not a peek
    at the simulator's detection truth. Residual priors down-weight areas
    already scanned.
    """
    areas = state.sub_areas
    m, n = len(areas), len(state.drones)
    modes = [state.params[lv] for lv in LEVELS]
    K = len(modes)
    T = max(1, math.ceil((state.duration - state.clock) / tick_s))

    p = np.array([a.probability * (1.0 - a.scanned_fraction) for a in areas])
    total = p.sum()
    if total > 1.0:
        p = p / total * 0.99

    glimpse = np.zeros((m, n, K))
    scan_time = np.zeros((m, n, K), dtype=np.int64)
    for i, a in enumerate(areas):
        for k, mode in enumerate(modes):
            conf = float(np.clip(0.95 - 0.004 * (mode.altitude - 20.0) - 0.02 * (mode.velocity - 2.0), 0.05, 0.95))
            cells_per_tick = mode.velocity * tick_s / CELL_SIZE_M * mode.footprint_cells()
            frac = min(1.0, cells_per_tick / a.rect.n_cells)
            glimpse[i, :, k] = conf * frac
            scan_time[i, :, k] = max(1, math.ceil(a.rect.n_cells / cells_per_tick))

    centers = [a.rect.center_xy(CELL_SIZE_M) for a in areas]
    travel = np.zeros((n, m, m), dtype=np.int64)
    for i, (x1, y1) in enumerate(centers):
        for i2, (x2, y2) in enumerate(centers):
            travel[:, i, i2] = math.ceil(math.hypot(x2 - x1, y2 - y1) / CRUISE_M_S / tick_s)
    start = np.zeros((n, m), dtype=np.int64)
    for j, d in enumerate(state.drones):
        for i, (x, y) in enumerate(centers):
            start[j, i] = math.ceil(math.hypot(x - d.x, y - d.y) / CRUISE_M_S / tick_s)

    inst = PlannerInstance(m=m, n=n, K=K, T=T, priors=np.tile(p, (T, 1)),
                           glimpse=glimpse, scan_time=scan_time, travel=travel, start=start)
    inst.validate()
    return inst


# ---------------------------------------------------------------------------
# solutions and the objective
# ---------------------------------------------------------------------------


@dataclass
class Solution:
    """One population member: a path per drone plus search bookkeeping."""

    paths: list[list[Step]]
    value: float = 0.0
    expected_time: float = math.inf
    stall: int = 0
    mu: float = 0.5

    def clone(self) -> "Solution":
        return Solution([list(p) for p in self.paths], self.value,
                        self.expected_time, self.stall, self.mu)

    def to_dict(self) -> dict:
        return {
            "paths": [[list(s) for s in p] for p in self.paths],
            "value": self.value,
            "expected_time": self.expected_time,
        }


def validate_solution(solution: Solution, instance: PlannerInstance) -> None:
    if len(solution.paths) != instance.n:
        raise InfeasiblePath(f"{len(solution.paths)} paths for {instance.n} drones")
    seen: set[int] = set()
    for path in solution.paths:
        for area, mode in path:
            if not (0 <= area < instance.m):
                raise InfeasiblePath(f"unknown area {area}")
            if not (0 <= mode < instance.K):
                raise InfeasiblePath(f"unknown mode {mode}")
            if area in seen:
                raise InfeasiblePath(f"area {area} assigned twice")
            seen.add(area)


@dataclass(frozen=True)
class ObjectiveResult:
    value: float  # P(detection within horizon)
    dist: np.ndarray  # dist[t-1] = P(first detection at tick t)
    expected_time: float  # mean detection tick given detection; inf if value 0
    truncated: bool  # some path activity fell past the horizon


def _scan_schedule(path: Sequence[Step], drone: int, instance: PlannerInstance):
    """(tick, area, mode) for every in-horizon scanning tick, plus whether
    anything ran past the horizon. Post-horizon steps never contribute."""
    out = []
    t, loc = 0, -1
    truncated = False
    for area, mode in path:
        t += instance.travel_ticks(loc, area, drone)
        for _ in range(int(instance.scan_time[area, drone, mode])):
            t += 1
            if t > instance.T:
                truncated = True
                break
            out.append((t, area, mode))
        if t > instance.T:
            truncated = True
            break
        loc = area
    return out, truncated


def objective(solution: Solution, instance: PlannerInstance) -> ObjectiveResult:
    """First-detection distribution for a solution.

    hazard(t) sums p_t(i)·glimpse over drones scanning at tick t; areas
    are disjoint across paths and the target occupies one area, so the
    per-drone events are mutually exclusive and the sum stays in [0, 1].
    P(t* = t) = hazard(t) · (1 - sum of earlier mass).
    """
    validate_solution(solution, instance)
    hazard = np.zeros(instance.T + 1)
    truncated = False
    for j, path in enumerate(solution.paths):
        sched, trunc = _scan_schedule(path, j, instance)
        truncated = truncated or trunc
        for t, area, mode in sched:
            hazard[t] += instance.priors[t - 1, area] * instance.glimpse[area, j, mode]

    dist = np.zeros(instance.T)
    survive = 1.0
    for t in range(1, instance.T + 1):
        p = hazard[t] * survive
        dist[t - 1] = p
        survive -= p
    value = float(dist.sum())
    if value > 0:
        expected = float(np.dot(np.arange(1, instance.T + 1), dist) / value)
    else:
        expected = math.inf
    return ObjectiveResult(value=value, dist=dist, expected_time=expected, truncated=truncated)


def path_fitness(path: Sequence[Step], drone: int, instance: PlannerInstance) -> float:
    """Detection mass per tick spent: sum of p(i)·(chance the full scan
    detects) over elements, divided by total travel plus scan time. Uses
    first-tick priors; the horizon-aware objective does final ranking."""
    if not path:
        return 0.0
    det, ticks = 0.0, 0
    loc = -1
    for area, mode in path:
        ticks += instance.travel_ticks(loc, area, drone)
        dur = int(instance.scan_time[area, drone, mode])
        ticks += dur
        g = float(instance.glimpse[area, drone, mode])
        det += instance.priors[0, area] * (1.0 - (1.0 - g) ** dur)
        loc = area
    return det / max(1, ticks)


# ---------------------------------------------------------------------------
# constructive heuristics
# ---------------------------------------------------------------------------


def greedy_seed(instance: PlannerInstance) -> Solution:
    """Assign areas one at a time: the drone with the least accumulated
    time takes the (area, mode) with the best detection-per-tick ratio."""
    paths: list[list[Step]] = [[] for _ in range(instance.n)]
    elapsed = [0] * instance.n
    loc = [-1] * instance.n
    remaining = set(range(instance.m))
    while remaining:
        eligible = [j for j in range(instance.n) if elapsed[j] < instance.T]
        if not eligible:
            break
        j = min(eligible, key=lambda j: (elapsed[j], j))
        best: Optional[tuple[float, int, int, int]] = None  # (-ratio, area, mode, cost)
        for area in sorted(remaining):
            for mode in range(instance.K):
                cost = instance.travel_ticks(loc[j], area, j) + int(instance.scan_time[area, j, mode])
                g = float(instance.glimpse[area, j, mode])
                gain = instance.priors[0, area] * (1.0 - (1.0 - g) ** int(instance.scan_time[area, j, mode]))
                key = (-gain / cost, area, mode, cost)
                if best is None or key < best:
                    best = key
        _, area, mode, cost = best
        paths[j].append((area, mode))
        elapsed[j] += cost
        loc[j] = area
        remaining.remove(area)
    return Solution(paths)


def random_solution(instance: PlannerInstance, rng: np.random.Generator) -> Solution:
    """Deal areas to drones uniformly, in shuffled order, random modes."""
    paths: list[list[Step]] = [[] for _ in range(instance.n)]
    order = rng.permutation(instance.m)
    for area in order:
        j = int(rng.integers(instance.n))
        k = int(rng.integers(instance.K))
        paths[j].append((int(area), k))
    return Solution(paths)


def neh_tabu_path(
    areas: Sequence[int],
    drone: int,
    instance: PlannerInstance,
    budget: int = 50,
    tenure: int = 7,
) -> list[Step]:
    """Order one drone's assigned areas.

    NEH construction: areas sorted by best standalone ratio are inserted
    one at a time at the (position, mode) maximizing path fitness. Then
    best-improvement tabu search over adjacent swaps and single-element
    relocations, tabu keyed on the moved areas, with aspiration on a new
    global best. Fully deterministic.
    """
    if not areas:
        return []

    def standalone(area: int) -> float:
        best = 0.0
        for mode in range(instance.K):
            cost = instance.travel_ticks(-1, area, drone) + int(instance.scan_time[area, drone, mode])
            g = float(instance.glimpse[area, drone, mode])
            gain = instance.priors[0, area] * (1.0 - (1.0 - g) ** int(instance.scan_time[area, drone, mode]))
            best = max(best, gain / cost)
        return best

    path: list[Step] = []
    for area in sorted(areas, key=lambda a: (-standalone(a), a)):
        best_key = None
        best_path = None
        for mode in range(instance.K):
            for pos in range(len(path) + 1):
                cand = path[:pos] + [(area, mode)] + path[pos:]
                key = (-path_fitness(cand, drone, instance), pos, mode)
                if best_key is None or key < best_key:
                    best_key, best_path = key, cand
        path = best_path

    best = list(path)
    best_f = path_fitness(best, drone, instance)
    cur = list(path)
    tabu_until: dict[int, int] = {}
    for it in range(budget):
        chosen = None  # (-fitness, ordinal, candidate, moved areas)
        ordinal = 0
        candidates = []
        for p in range(len(cur) - 1):  # adjacent swaps
            cand = list(cur)
            cand[p], cand[p + 1] = cand[p + 1], cand[p]
            candidates.append((cand, (cur[p][0], cur[p + 1][0])))
        for p in range(len(cur)):  # single relocations
            for q in range(len(cur)):
                if q == p:
                    continue
                cand = list(cur)
                step = cand.pop(p)
                cand.insert(q, step)
                candidates.append((cand, (step[0],)))
        for cand, moved in candidates:
            f = path_fitness(cand, drone, instance)
            blocked = any(tabu_until.get(a, -1) > it for a in moved)
            if blocked and f <= best_f:
                continue
            key = (-f, ordinal)
            if chosen is None or key < chosen[0]:
                chosen = (key, cand, moved)
            ordinal += 1
        if chosen is None:
            break
        _, cur, moved = chosen
        for a in moved:
            tabu_until[a] = it + tenure
        f = path_fitness(cur, drone, instance)
        if f > best_f:
            best, best_f = list(cur), f
    return best


# ---------------------------------------------------------------------------
# population search
# ---------------------------------------------------------------------------


def migration_rate(fx: float, f_min: float, f_max: float, eps: float = DEFAULT_EPS) -> float:
    """Nonlinear share of migration: 0 near the worst, 1 at the best."""
    arg = (fx - f_min + eps) / (f_max - f_min + eps)
    return 0.5 - 0.5 * math.cos(arg * math.pi)


def update_mutation_rate(
    mu: float, fx: float, f_min: float, f_max: float,
    alpha: float = DEFAULT_ALPHA, eps: float = DEFAULT_EPS,
) -> float:
    """Shrink mutation for fit solutions, barely touch the unfit."""
    arg = (fx - f_min + eps) / (f_max - f_min + eps)
    return mu * alpha ** (-arg)


@dataclass
class EvolveConfig:
    n_pop: int = 24
    generations: Optional[int] = None
    budget_s: Optional[float] = None
    alpha: float = DEFAULT_ALPHA
    eps: float = DEFAULT_EPS
    g_stall: int = 6
    tabu_budget: int = 50
    tenure: int = 7
    seed: int = 0


def _optimize_and_score(sol: Solution, instance: PlannerInstance, config: EvolveConfig) -> None:
    """Re-optimize each path, keeping the reorder only when the horizon
    objective doesn't regress. The fitness ratio driving the path
    sub-procedure is horizon-blind; under a tight T the inherited order
    can be strictly better, and dropping it every generation would lock
    the search to fitness-optimal orders."""
    before = objective(sol, instance)
    cand = Solution([
        neh_tabu_path([a for a, _ in sol.paths[j]], j, instance, config.tabu_budget, config.tenure)
        for j in range(instance.n)
    ])
    after = objective(cand, instance)
    if (-after.value, after.expected_time) <= (-before.value, before.expected_time):
        sol.paths, res = cand.paths, after
    else:
        res = before
    sol.value = res.value
    sol.expected_time = res.expected_time


def _append_greedy(sol: Solution, area: int, instance: PlannerInstance) -> None:
    """Give an orphaned area to the (drone, mode) with the best marginal
    detection-per-tick at the end of that drone's path."""
    best = None  # (-ratio, drone, mode)
    for j in range(instance.n):
        loc = sol.paths[j][-1][0] if sol.paths[j] else -1
        for mode in range(instance.K):
            cost = instance.travel_ticks(loc, area, j) + int(instance.scan_time[area, j, mode])
            g = float(instance.glimpse[area, j, mode])
            gain = instance.priors[0, area] * (1.0 - (1.0 - g) ** int(instance.scan_time[area, j, mode]))
            key = (-gain / cost, j, mode)
            if best is None or key < best:
                best = key
    _, j, mode = best
    sol.paths[j].append((area, mode))


def _migrate(sol: Solution, donor: Solution, instance: PlannerInstance, rng: np.random.Generator) -> None:
    """Copy one randomly chosen drone path from the donor, then repair:
    duplicates leave the recipient's other paths, orphans re-enter
    greedily."""
    j = int(rng.integers(instance.n))
    old = [a for a, _ in sol.paths[j]]
    incoming = [tuple(s) for s in donor.paths[j]]
    incoming_areas = {a for a, _ in incoming}
    sol.paths[j] = [tuple(s) for s in incoming]
    for jj in range(instance.n):
        if jj != j:
            sol.paths[jj] = [s for s in sol.paths[jj] if s[0] not in incoming_areas]
    assigned = {a for p in sol.paths for a, _ in p}
    for area in old:
        if area not in assigned:
            _append_greedy(sol, area, instance)


def _mutate(sol: Solution, instance: PlannerInstance, rng: np.random.Generator) -> None:
    """Each area moves with probability mu to a uniform drone's path end
    with a fresh mode."""
    moving: list[int] = []
    for path in sol.paths:
        for area, _ in path:
            if rng.random() < sol.mu:
                moving.append(area)
    if not moving:
        return
    drop = set(moving)
    for j in range(instance.n):
        sol.paths[j] = [s for s in sol.paths[j] if s[0] not in drop]
    for area in moving:
        j = int(rng.integers(instance.n))
        k = int(rng.integers(instance.K))
        sol.paths[j].append((area, k))


def evolve(instance: PlannerInstance, config: Optional[EvolveConfig] = None) -> Solution:
    """Population search for the best allocation. Returns the best-ever
    solution by (value, earlier expected detection)."""
    config = config or EvolveConfig()
    if config.generations is None and config.budget_s is None:
        raise BudgetZero("need generations or budget_s")
    instance.validate()

    master = np.random.SeedSequence(config.seed)
    slot_rngs = [np.random.default_rng(s) for s in master.spawn(config.n_pop)]

    pop = [greedy_seed(instance)]
    pop += [random_solution(instance, slot_rngs[i]) for i in range(1, config.n_pop)]
    for sol in pop:
        _optimize_and_score(sol, instance, config)

    def better(a: Solution, b: Optional[Solution]) -> bool:
        if b is None:
            return True
        return (-a.value, a.expected_time) < (-b.value, b.expected_time)

    best: Optional[Solution] = None
    prev_best_value = [s.value for s in pop]
    for sol in pop:
        if better(sol, best):
            best = sol.clone()

    started = time.monotonic()
    gen = 0
    while True:
        if config.generations is not None and gen >= config.generations:
            break
        if config.budget_s is not None and time.monotonic() - started >= config.budget_s:
            break
        gen += 1

        values = np.array([s.value for s in pop])
        f_min, f_max = float(values.min()), float(values.max())
        order = np.argsort(-values, kind="stable")
        top = order[: max(1, math.ceil(config.n_pop / 2))]

        for i, sol in enumerate(pop):
            rng = slot_rngs[i]
            lam = migration_rate(sol.value, f_min, f_max, config.eps)
            if rng.random() < lam:
                donors = [d for d in top if d != i]
                if donors:
                    w = values[donors]
                    w = w / w.sum() if w.sum() > 0 else np.full(len(donors), 1.0 / len(donors))
                    donor = pop[int(rng.choice(donors, p=w))]
                    _migrate(sol, donor, instance, rng)
            else:
                _mutate(sol, instance, rng)

        for i, sol in enumerate(pop):
            _optimize_and_score(sol, instance, config)
            if sol.value > prev_best_value[i]:
                prev_best_value[i] = sol.value
                sol.stall = 0
            else:
                sol.stall += 1
            sol.mu = update_mutation_rate(sol.mu, sol.value, f_min, f_max, config.alpha, config.eps)
            if better(sol, best):
                best = sol.clone()

        for i, sol in enumerate(pop):
            if sol.stall >= config.g_stall:
                fresh = random_solution(instance, slot_rngs[i])
                _optimize_and_score(fresh, instance, config)
                pop[i] = fresh
                prev_best_value[i] = fresh.value
                if better(fresh, best):
                    best = fresh.clone()

    return best
