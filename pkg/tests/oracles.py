"""Independent reference implementations the tests compare against.

Everything here is written from the documented contracts, not by calling
into the planner's own helpers, so a bug in the production code cannot
hide behind a shared subroutine.
"""
from __future__ import annotations

import itertools

import numpy as np

from dronesar.planner import PlannerInstance, Solution, objective


def scan_ticks(path, drone: int, instance: PlannerInstance) -> list[tuple[int, int, int]]:
    """(tick, area, mode) for each in-horizon scanning tick of one path.

    Timeline contract: travel ticks elapse before a scan, each scan
    occupies whole ticks starting at the next tick, anything past T is
    dropped and ends the path's contribution.
    """
    out = []
    t = 0
    loc = -1
    for area, mode in path:
        if loc < 0:
            t += int(instance.start[drone, area])
        else:
            t += int(instance.travel[drone, loc, area])
        for _ in range(int(instance.scan_time[area, drone, mode])):
            t += 1
            if t > instance.T:
                return out
            out.append((t, area, mode))
        loc = area
    return out


def mc_first_detection(
    solution: Solution,
    instance: PlannerInstance,
    n_samples: int = 1_000_000,
    seed: int = 0,
) -> np.ndarray:
    """Sampled P(first detection at tick t), location-conditioned.

    Draw the target's area from the (static) priors, then flip an
    independent per-tick coin with that area's glimpse probability for
    every tick a drone scans it; the first success is the detection tick.
    """
    rng = np.random.default_rng(seed)
    p = instance.priors[0]
    # scanned tick list and glimpse per area (disjoint assignment means
    # one drone/mode owns each area)
    ticks_of: dict[int, list[int]] = {}
    glimpse_of: dict[int, float] = {}
    for j, path in enumerate(solution.paths):
        for t, area, mode in scan_ticks(path, j, instance):
            ticks_of.setdefault(area, []).append(t)
            glimpse_of[area] = float(instance.glimpse[area, j, mode])

    cells = np.append(p, max(0.0, 1.0 - p.sum()))
    counts = rng.multinomial(n_samples, cells / cells.sum())
    hist = np.zeros(instance.T)
    for area in range(instance.m):
        n_i = int(counts[area])
        if n_i == 0 or area not in ticks_of:
            continue
        ts = np.array(sorted(ticks_of[area]))
        flips = rng.random((n_i, len(ts))) < glimpse_of[area]
        detected = flips.any(axis=1)
        first = flips.argmax(axis=1)
        det_ticks = ts[first[detected]]
        np.add.at(hist, det_ticks - 1, 1)
    return hist / n_samples


def all_solutions(instance: PlannerInstance):
    """Every (assignment, order, mode) combination as a Solution."""
    areas = list(range(instance.m))
    for owner in itertools.product(range(instance.n), repeat=instance.m):
        by_drone: list[list[int]] = [[] for _ in range(instance.n)]
        for area, j in zip(areas, owner):
            by_drone[j].append(area)
        for perms in itertools.product(*(itertools.permutations(g) for g in by_drone)):
            for modes in itertools.product(range(instance.K), repeat=instance.m):
                yield Solution([[(a, modes[a]) for a in g] for g in perms])


def exhaustive_best(instance: PlannerInstance) -> float:
    """Optimum objective value over every solution; brute force."""
    best = 0.0
    for sol in all_solutions(instance):
        best = max(best, objective(sol, instance).value)
    return best
