"""Monte Carlo estimation of reachable sets on occupancy grids.

Trials draw a start point in the seed region and a random flow word, apply
it, and mark the visited cells; the union over trials under-approximates the
reachable set up to discretization. All randomness is chunked with a fixed
chunk size over counter-based streams, so results are identical for any
worker count, and a longer run extends a shorter one with the same seed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import FieldSet
from .flows import DEFAULT_CONFIG, IntegratorConfig, apply_word_batch, flow_batch
from .grid import OccupancyGrid
from .rng import stream, uniform_in_box

__all__ = [
    "WordSampler",
    "BallRegion",
    "ReachEstimate",
    "estimate_reachable",
    "invariance_residual",
    "ZeroOneVerdict",
    "zero_one_check",
    "AlternativeVerdict",
    "alternative_check",
]

TRIAL_CHUNK = 16_384  # fixed: chunk index keys the random stream


@dataclass(frozen=True)
class BallRegion:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class WordSampler:
    """Random flow words: length uniform on 1..m_max, field indices uniform,
    leg times uniform on [-T, T]."""

    m_max: int
    time_horizon: float
    seed: int

    def __post_init__(self):
        if self.m_max < 1:
            raise ValueError("m_max must be >= 1")
        if not self.time_horizon > 0:
            raise ValueError("time_horizon must be positive")


@dataclass
class ReachEstimate:
    grid: OccupancyGrid
    budget: int
    violations: int
    checkpoints: dict = field(default_factory=dict)  # budget -> OccupancyGrid


def _draw_chunk(sampler: WordSampler, fields: FieldSet, B, chunk_index: int,
                start: int, stop: int):
    """Start points, per-trial leg index/time matrices for rows
    [start, stop) of one chunk. Draw shapes are fixed by the chunk size, so
    trial i's randomness never depends on how many trials run."""
    gen = stream(sampler.seed, "reach.trial", chunk_index)
    m_max = sampler.m_max
    k = len(fields)
    m = gen.integers(1, m_max + 1, size=TRIAL_CHUNK)
    idx = gen.integers(1, k + 1, size=(TRIAL_CHUNK, m_max))
    times = gen.uniform(-sampler.time_horizon, sampler.time_horizon,
                        size=(TRIAL_CHUNK, m_max))
    times[np.arange(m_max)[None, :] >= m[:, None]] = 0.0

    if isinstance(B, BallRegion):
        center = np.asarray(B.center, dtype=float)
        d = center.size
        z = gen.standard_normal((TRIAL_CHUNK, d))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        r = B.radius * gen.random(TRIAL_CHUNK) ** (1.0 / d)
        x0 = center + z / norms * r[:, None]
    elif isinstance(B, OccupancyGrid):
        occupied = np.argwhere(B.cells)
        if len(occupied) == 0:
            raise ValueError("seed grid has no occupied cells")
        pick = gen.integers(0, len(occupied), size=TRIAL_CHUNK)
        offset = gen.random((TRIAL_CHUNK, B.dim))
        x0 = B.box_min + (occupied[pick] + offset) * B.cell_size
    else:
        raise TypeError("seed region must be a BallRegion or an OccupancyGrid")
    rows = slice(start, stop)
    return x0[rows], idx[rows], times[rows]


def _run_chunk(fields, sampler, B, job, grid_spec, cfg, marking):
    chunk_index, start, stop = job
    lo, hi, res = grid_spec
    grid = OccupancyGrid(lo, hi, res)
    x0, idx, times = _draw_chunk(sampler, fields, B, chunk_index, start, stop)
    on_leg = observer = None
    if marking in ("legs", "trajectory"):
        grid.mark(x0)
        on_leg = lambda k, Y, alive: grid.mark(Y[alive])
    if marking == "trajectory":
        observer = lambda Y, alive: grid.mark(Y[alive])
    Y, violated = apply_word_batch(fields, idx, times, x0, cfg,
                                   on_leg=on_leg, observer=observer)
    if marking == "endpoint":
        grid.mark(Y[~violated])
    return grid, int(np.count_nonzero(violated))


def estimate_reachable(fields: FieldSet, B, sampler: WordSampler, grid_spec,
                       budget: int, cfg: IntegratorConfig = DEFAULT_CONFIG,
                       marking: str = "trajectory", checkpoints=(),
                       rounds: int = 1, threads: int = 1) -> ReachEstimate:
    """Union occupancy grid over `budget` random word trials.

    grid_spec is (box_min, box_max, resolution). marking selects which
    witnesses are recorded: "endpoint" only, "legs" adds leg endpoints, and
    "trajectory" (default) marks every accepted integration step; every
    trajectory point is the endpoint of a truncated word, so all three are
    genuine under-approximations. Safety-radius violations (cfg.safety)
    skip the rest of the trial and are counted, not fatal. checkpoints is
    an ascending list of trial counts at which to snapshot the grid.

    rounds > 1 splits the budget and re-seeds later rounds from the current
    occupied cells, exploiting that concatenations of words are words (the
    reachable set of the reachable set is itself). Restarts snap to cells,
    so occupied cells may overreach the true set by up to rounds-1 cell
    diagonals; keep rounds=1 when testing obstructions at cell accuracy.
    """
    if marking not in ("endpoint", "legs", "trajectory"):
        raise ValueError("marking must be endpoint, legs, or trajectory")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    lo, hi, res = grid_spec
    total = OccupancyGrid(lo, hi, res)
    estimate = ReachEstimate(grid=total, budget=budget, violations=0)
    marks = sorted(set(int(c) for c in checkpoints if 0 < c <= budget))
    round_edges = [round(budget * (r + 1) / rounds) for r in range(rounds)]
    boundaries = sorted(set(marks) | set(round_edges) | {budget})

    seed_region = B
    done = 0
    for boundary in boundaries:
        jobs = []
        while done < boundary:
            chunk_index = done // TRIAL_CHUNK
            start = done % TRIAL_CHUNK
            stop = min(TRIAL_CHUNK, start + (boundary - done))
            jobs.append((chunk_index, start, stop))
            done += stop - start

        def run(job, region=seed_region):
            return _run_chunk(fields, sampler, region, job, grid_spec, cfg,
                              marking)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(run, jobs))
        else:
            results = [run(job) for job in jobs]
        for grid, violations in results:
            total.union_inplace(grid)
            estimate.violations += violations
        if boundary in marks:
            estimate.checkpoints[boundary] = total.copy()
        if boundary in round_edges and boundary < budget and total.occupied_count:
            seed_region = total.copy()
    return estimate


def invariance_residual(E: OccupancyGrid, fields: FieldSet, t: float,
                        n_samples: int, seed: int,
                        cfg: IntegratorConfig = DEFAULT_CONFIG) -> list[float]:
    """Per-field fraction of samples whose grid membership changes under the
    time-t flow. Samples whose endpoint leaves the grid box cannot be
    classified and are not counted as mismatches."""
    fractions = []
    n_chunks = (n_samples + TRIAL_CHUNK - 1) // TRIAL_CHUNK
    for j, F in enumerate(fields):
        mismatches = 0
        for chunk in range(n_chunks):
            n = min(TRIAL_CHUNK, n_samples - chunk * TRIAL_CHUNK)
            gen = stream(seed, "reach.invariance", chunk * len(fields) + j)
            pts = uniform_in_box(gen, E.box_min, E.box_max, TRIAL_CHUNK)[:n]
            ends, _ = flow_batch(F, pts, t, cfg)
            inside = np.all((ends >= E.box_min) & (ends <= E.box_max), axis=1)
            before = E.membership(pts)
            after = E.membership(ends)
            mismatches += int(np.count_nonzero(inside & (before != after)))
        fractions.append(mismatches / n_samples)
    return fractions


@dataclass(frozen=True)
class ZeroOneVerdict:
    flip_fractions: tuple
    stabilized: bool
    threshold: float


def zero_one_check(estimates, threshold: float = 0.01) -> ZeroOneVerdict:
    """Per-cell occupancy stabilization across increasing budgets: the
    fraction of cells flipping between consecutive grids should vanish."""
    grids = list(estimates)
    if len(grids) < 2:
        raise ValueError("need at least two budgets")
    flips = []
    for a, b in zip(grids, grids[1:]):
        if not a.same_spec(b):
            raise ValueError("grids must share box and resolution")
        flips.append(float(np.count_nonzero(a.cells != b.cells) / a.cells.size))
    return ZeroOneVerdict(flip_fractions=tuple(flips),
                          stabilized=flips[-1] <= threshold,
                          threshold=threshold)


@dataclass(frozen=True)
class AlternativeVerdict:
    verdict: str  # "full" | "null" | "neither"
    occupied_fraction: float
    tau_full: float
    tau_null: float


def alternative_check(E: OccupancyGrid, tau_full: float = 0.02,
                      tau_null: float = 0.02) -> AlternativeVerdict:
    """Discrete rendering of the full-or-null alternative for reachable
    sets, with the discretization caveat built into the thresholds."""
    frac = E.occupied_fraction
    if frac >= 1.0 - tau_full:
        verdict = "full"
    elif frac <= tau_null:
        verdict = "null"
    else:
        verdict = "neither"
    return AlternativeVerdict(verdict=verdict, occupied_fraction=frac,
                              tau_full=tau_full, tau_null=tau_null)
