"""Approximate point-to-point steering along flow words.

Plans are found in two phases: a geometric initialization that expresses the
target displacement in the frame of selected bracket-matrix rows (direct
legs for base fields, second-order commutator blocks for depth-1 brackets),
then derivative-free refinement of the leg times by compass pattern search.
Endpoint gradients of rough flows are unreliable, so the search only ever
uses endpoint evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import FieldSet
from .flows import (DEFAULT_CONFIG, FlowWord, IntegratorConfig,
                    apply_word, apply_word_batch, commutator_primitive)
from .hormander import assemble_Y, select_terms
from .rng import stream

__all__ = ["SteeringConfig", "SteeringPlan", "plan", "refine_word"]


@dataclass(frozen=True)
class SteeringConfig:
    m_max: int = 12
    restarts: int = 8
    budget: int = 20_000
    seed: int = 0
    start_radius: float = 0.0
    time_scale: float = 1.0
    terms: tuple | None = None
    integrator: IntegratorConfig = DEFAULT_CONFIG


@dataclass(frozen=True)
class SteeringPlan:
    start: tuple
    start_used: tuple  # perturbed start inside the start ball, if searched
    target: tuple
    epsilon: float
    word: FlowWord
    achieved_error: float  # recomputed at a tighter tolerance at report time
    evaluations: int
    status: str  # "success" | "failure"

    @property
    def success(self) -> bool:
        return self.status == "success"

    def to_json(self) -> dict:
        return {
            "start": list(self.start),
            "start_used": list(self.start_used),
            "target": list(self.target),
            "epsilon": self.epsilon,
            "word": self.word.to_json(),
            "achieved_error": self.achieved_error,
            "evaluations": self.evaluations,
            "status": self.status,
        }


class _Search:
    """Shared endpoint-evaluation budget and error bookkeeping."""

    def __init__(self, fields, target, cfg: SteeringConfig):
        self.fields = fields
        self.target = np.asarray(target, dtype=float)
        self.cfg = cfg
        self.evaluations = 0

    @property
    def exhausted(self) -> bool:
        return self.evaluations >= self.cfg.budget

    def error_of(self, word: FlowWord, start: np.ndarray) -> float:
        self.evaluations += 1
        end = apply_word(self.fields, word, start, self.cfg.integrator)
        return float(np.linalg.norm(end - self.target))

    def errors_of(self, word: FlowWord, thetas: np.ndarray,
                  starts: np.ndarray) -> np.ndarray:
        """Batched endpoint errors for candidate time vectors (rows of
        thetas) from matching start points."""
        n = len(thetas)
        self.evaluations += n
        idx = np.tile([j for j, _ in word.legs], (n, 1))
        ends, _ = apply_word_batch(self.fields, idx, thetas, starts,
                                   self.cfg.integrator)
        return np.linalg.norm(ends - self.target, axis=1)


def _compass(search: _Search, word: FlowWord, start: np.ndarray,
             max_evals: int, step0: float = 0.25, min_step: float = 1e-10):
    """Compass pattern search over leg times (and the start offset when a
    start ball is allowed). The error sequence is nonincreasing."""
    cfg = search.cfg
    theta = word.times()
    m = len(theta)
    offset = np.zeros(search.target.size) if cfg.start_radius > 0 else None
    n_par = m + (offset.size if offset is not None else 0)
    best = search.error_of(word.with_times(theta), start)
    used = 1
    step = step0
    while step > min_step and used < max_evals and not search.exhausted:
        probes_t = np.tile(theta, (2 * n_par, 1))
        probes_o = (np.tile(offset, (2 * n_par, 1))
                    if offset is not None else None)
        for i in range(n_par):
            if i < m:
                probes_t[2 * i, i] += step
                probes_t[2 * i + 1, i] -= step
            else:
                j = i - m
                probes_o[2 * i, j] += step
                probes_o[2 * i + 1, j] -= step
        if probes_o is not None:
            norms = np.linalg.norm(probes_o, axis=1)
            over = norms > cfg.start_radius
            probes_o[over] *= (cfg.start_radius / norms[over])[:, None]
            starts = start + probes_o
        else:
            starts = np.tile(start, (2 * n_par, 1))
        errs = search.errors_of(word.with_times(theta), probes_t, starts)
        used += 2 * n_par
        k = int(np.argmin(errs))
        if errs[k] < best:
            best = float(errs[k])
            theta = probes_t[k]
            if offset is not None:
                offset = probes_o[k]
        else:
            step *= 0.5
    final_offset = offset if offset is not None else np.zeros_like(start)
    return word.with_times(theta), best, start + final_offset


def refine_word(fields: FieldSet, word: FlowWord, start, target, budget: int,
                cfg: SteeringConfig | None = None) -> FlowWord:
    """Improve a word's endpoint error by pattern search over its leg
    times; never returns a worse word. A zero budget returns the input."""
    if len(word) == 0:
        raise ValueError("cannot refine an empty word")
    if budget <= 0:
        return word
    cfg = cfg or SteeringConfig(budget=budget)
    search = _Search(fields, target, SteeringConfig(
        m_max=cfg.m_max, restarts=1, budget=budget, seed=cfg.seed,
        start_radius=0.0, time_scale=cfg.time_scale, integrator=cfg.integrator))
    refined, _, _ = _compass(search, word, np.asarray(start, dtype=float),
                             max_evals=budget)
    return refined


def _init_word(fields: FieldSet, x: np.ndarray, delta: np.ndarray,
               cfg: SteeringConfig):
    """Displacement decomposed in the bracket-matrix frame at the start:
    direct legs for leaves, commutator blocks for depth-1 brackets. Returns
    None when the frame is singular (random multistart takes over)."""
    if cfg.terms is not None:
        terms = list(cfg.terms)
    else:
        try:
            terms = select_terms(fields, point=x, max_depth=2)
        except ValueError:
            return None
    evaluators = [t.evaluator(fields) for t in terms]
    Y = assemble_Y(evaluators, x)
    norms = np.linalg.norm(Y, axis=1)
    scale = np.prod(np.maximum(norms, 1e-300))
    if abs(np.linalg.det(Y)) <= 1e-8 * scale:
        return None
    coeffs = np.linalg.solve(Y.T, delta)
    legs = []
    for term, c in zip(terms, coeffs):
        if isinstance(term.tree, int):
            legs.append((term.tree, float(c)))
        elif (isinstance(term.tree, tuple)
              and isinstance(term.tree[0], int) and isinstance(term.tree[1], int)):
            a, b = term.tree
            if c < 0:
                a, b = b, a
            s = math.sqrt(abs(c))
            legs.extend(commutator_primitive(a, b, s).legs)
        # deeper terms are left to refinement and restarts
    return FlowWord(tuple(legs)) if legs else None


def _random_word(gen: np.random.Generator, fields: FieldSet,
                 cfg: SteeringConfig) -> FlowWord:
    m = int(gen.integers(2, min(6, cfg.m_max) + 1))
    idx = gen.integers(1, len(fields) + 1, size=m)
    times = gen.uniform(-cfg.time_scale, cfg.time_scale, size=m)
    return FlowWord(tuple(zip(idx.tolist(), times.tolist())))


def plan(fields: FieldSet, x, y, eps: float,
         cfg: SteeringConfig = SteeringConfig()) -> SteeringPlan:
    """Search for a flow word carrying x (or a point within start_radius of
    x) to within eps of y. Failure is allowed and carries the best error.

    The reported error is recomputed with an independent integration at a
    tighter tolerance, so success is never claimed from the search value.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    search = _Search(fields, y, cfg)

    candidates = []  # (error, evals_when_found, order, word, start_used)
    order = 0
    per_restart = max(cfg.budget // max(cfg.restarts, 1), 1)

    for restart in range(cfg.restarts):
        if search.exhausted:
            break
        gen = stream(cfg.seed, "steer.restart", restart)
        word = _init_word(fields, x, y - x, cfg) if restart == 0 else None
        if word is None:
            word = _random_word(gen, fields, cfg)
        spent_before = search.evaluations
        best_err = math.inf
        best_word = word
        best_start = x.copy()
        while search.evaluations - spent_before < per_restart and not search.exhausted:
            remaining = min(per_restart - (search.evaluations - spent_before),
                            cfg.budget - search.evaluations)
            word, err, start_used = _compass(search, word, x, remaining)
            if err < best_err:
                best_err, best_word, best_start = err, word, start_used
            if err <= eps or len(word) >= cfg.m_max:
                break
            # stagnation: grow the word with a random leg and keep refining
            j = int(gen.integers(1, len(fields) + 1))
            t = float(gen.uniform(-cfg.time_scale, cfg.time_scale))
            word = FlowWord(word.legs + ((j, t),))
        candidates.append((best_err, search.evaluations, order, best_word,
                           best_start))
        order += 1
        if best_err <= eps:
            break

    best_err, _, _, best_word, best_start = min(candidates, key=lambda c: c[:3])
    # independent verification at tighter tolerance
    end = apply_word(fields, best_word, best_start, cfg.integrator.tighter())
    verified = float(np.linalg.norm(end - y))
    status = "success" if verified <= eps else "failure"
    return SteeringPlan(start=tuple(x), start_used=tuple(best_start),
                        target=tuple(y), epsilon=eps, word=best_word,
                        achieved_error=verified,
                        evaluations=search.evaluations, status=status)
