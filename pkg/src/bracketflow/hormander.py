"""Region scans for bracket-matrix invertibility and regularity proxies.

A scan samples the region, assembles the d x d matrix whose rows are the
selected tower terms, and reports determinant and conditioning statistics.
Singularity is judged on a scale-free determinant (relative to the product
of row norms). The W^{1,s} membership of the inverse matrix cannot be
established numerically; the reported gradient norm is a finite-difference
proxy and is labeled as such.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .brackets import BracketTerm, build_tower
from .fields import FieldSet, sobolev_conjugate
from .rng import stream, uniform_in_box

__all__ = [
    "HormanderReport",
    "LocalizedScan",
    "assemble_Y",
    "hormander_scan",
    "localized_scan",
    "select_terms",
    "exponent_check",
]

SCAN_CHUNK = 16_384
_TINY = 1e-300


def assemble_Y(evaluators, x) -> np.ndarray:
    """Matrix (batch) whose row j is the j-th evaluator at x."""
    single = np.ndim(x) == 1
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    d = pts.shape[1]
    if len(evaluators) != d:
        raise ValueError(f"need {d} rows for dimension {d}, got {len(evaluators)}")
    Y = np.empty((pts.shape[0], d, d))
    for j, ev in enumerate(evaluators):
        Y[:, j, :] = np.atleast_2d(ev(pts))
    return Y[0] if single else Y


def _scaled_abs_det(Y: np.ndarray):
    """(abs det, scale-free det): |det| divided by the product of row norms."""
    abs_det = np.abs(np.linalg.det(Y))
    row_norms = np.linalg.norm(Y, axis=-1)
    # product clamped again: several near-zero rows underflow to exactly 0
    products = np.maximum(np.prod(np.maximum(row_norms, _TINY), axis=-1), _TINY)
    return abs_det, abs_det / products


def exponent_check(q: float, r: float, s: float, d: int):
    """Arithmetic of the declared exponents: s must exceed the conjugate of
    min(q*, r). For q == d the placeholder for q* is arbitrary, so the
    weakest admissible threshold min(q*, r) = r applies.

    Returns (passed, threshold). Truth of the underlying memberships is a
    declared input, not checked here.
    """
    if r <= 1:
        raise ValueError("r must be > 1")
    q_hat = r if q >= d else min(sobolev_conjugate(q, d), r)
    threshold = 1.0 if math.isinf(q_hat) else q_hat / (q_hat - 1.0)
    return s > threshold, threshold


@dataclass(frozen=True)
class HormanderReport:
    region_min: tuple
    region_max: tuple
    n_samples: int
    terms: tuple  # nested-list serializations of the d selected terms
    min_abs_det: float
    median_abs_det: float
    max_condition_number: float
    singular_fraction: float
    det_tol: float
    inverse_grad_norm_proxy: float  # discrete proxy; no Sobolev claim
    declared_exponents: tuple | None  # (q, r, s) or None
    exponent_check_passed: bool | None
    exponent_threshold: float | None

    @property
    def passed(self) -> bool:
        """Invertibility clause at the sampled resolution: no singular
        samples (and, when declared, consistent exponent arithmetic)."""
        ok = self.singular_fraction == 0.0
        if self.exponent_check_passed is not None:
            ok = ok and self.exponent_check_passed
        return ok

    def to_json(self) -> dict:
        def clean(v):
            return None if (isinstance(v, float) and not math.isfinite(v)) else v
        return {
            "region_min": list(self.region_min),
            "region_max": list(self.region_max),
            "n_samples": self.n_samples,
            "terms": [list(t) if isinstance(t, list) else t for t in self.terms],
            "min_abs_det": clean(self.min_abs_det),
            "median_abs_det": clean(self.median_abs_det),
            "max_condition_number": clean(self.max_condition_number),
            "singular_fraction": self.singular_fraction,
            "det_tol": self.det_tol,
            "inverse_grad_norm_proxy": clean(self.inverse_grad_norm_proxy),
            "declared_exponents": (list(self.declared_exponents)
                                   if self.declared_exponents else None),
            "exponent_check_passed": self.exponent_check_passed,
            "exponent_threshold": self.exponent_threshold,
            "passed": self.passed,
        }


def _inverse_grad_proxy(evaluators, lo, hi, det_tol, s_power, per_axis=16,
                        fd_step=1e-5):
    """s-power mean of finite-difference gradient norms of Y^{-1} on a
    sub-grid (capped at per_axis points per axis); singular points skipped."""
    d = lo.size
    axes = [lo[j] + (np.arange(per_axis) + 0.5) * (hi[j] - lo[j]) / per_axis
            for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    base = np.stack([m.ravel() for m in mesh], axis=1)
    h = fd_step * np.maximum(1.0, np.max(np.abs(base)))

    def inverses(pts):
        Y = assemble_Y(evaluators, pts)
        _, rel = _scaled_abs_det(Y)
        ok = rel >= det_tol
        inv = np.full_like(Y, np.nan)
        if np.any(ok):
            inv[ok] = np.linalg.inv(Y[ok])
        return inv, ok

    grad_sq = np.zeros(len(base))
    valid = np.ones(len(base), dtype=bool)
    inv0, ok0 = inverses(base)
    valid &= ok0
    for j in range(d):
        plus = base.copy()
        minus = base.copy()
        plus[:, j] += h
        minus[:, j] -= h
        inv_p, ok_p = inverses(plus)
        inv_m, ok_m = inverses(minus)
        valid &= ok_p & ok_m
        diff = (inv_p - inv_m) / (2.0 * h)
        grad_sq += np.nansum(diff ** 2, axis=(1, 2))
    if not np.any(valid):
        return math.inf
    norms = np.sqrt(grad_sq[valid])
    return float(np.mean(norms ** s_power) ** (1.0 / s_power))


def hormander_scan(fields: FieldSet, terms, region, n_samples: int, seed: int,
                   det_tol: float = 1e-9, declared_exponents=None,
                   proxy_per_axis: int = 16) -> HormanderReport:
    """Sample the region and aggregate invertibility statistics of the
    bracket matrix built from `terms` (one per dimension). Singular samples
    are counted, never fatal."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    lo = np.asarray(region[0], dtype=float)
    hi = np.asarray(region[1], dtype=float)
    evaluators = [t.evaluator(fields) for t in terms]

    dets = []
    singular = 0
    max_cond = 0.0
    n_chunks = (n_samples + SCAN_CHUNK - 1) // SCAN_CHUNK
    for chunk in range(n_chunks):
        n = min(SCAN_CHUNK, n_samples - chunk * SCAN_CHUNK)
        gen = stream(seed, "hormander.scan", chunk)
        pts = uniform_in_box(gen, lo, hi, SCAN_CHUNK)[:n]
        Y = assemble_Y(evaluators, pts)
        abs_det, rel = _scaled_abs_det(Y)
        dets.append(abs_det)
        singular += int(np.count_nonzero(rel < det_tol))
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(Y)
        max_cond = max(max_cond, float(np.max(cond)))
    dets = np.concatenate(dets)

    s_power = declared_exponents[2] if declared_exponents else 2.0
    proxy = _inverse_grad_proxy(evaluators, lo, hi, det_tol, s_power,
                                per_axis=proxy_per_axis)
    if declared_exponents is not None:
        q, r, s = declared_exponents
        exp_ok, threshold = exponent_check(q, r, s, fields.dim)
    else:
        exp_ok, threshold = None, None

    return HormanderReport(
        region_min=tuple(lo), region_max=tuple(hi), n_samples=n_samples,
        terms=tuple(str(t) for t in terms),
        min_abs_det=float(np.min(dets)),
        median_abs_det=float(np.median(dets)),
        max_condition_number=max_cond,
        singular_fraction=singular / n_samples,
        det_tol=det_tol,
        inverse_grad_norm_proxy=proxy,
        declared_exponents=(tuple(declared_exponents)
                            if declared_exponents else None),
        exponent_check_passed=exp_ok,
        exponent_threshold=threshold,
    )


def select_terms(fields: FieldSet, region=None, point=None, seed: int = 0,
                 n_pilot: int = 256, max_depth: int = 2,
                 max_subsets: int = 5000) -> list[BracketTerm]:
    """Pick d tower terms maximizing the worst scale-free determinant on a
    pilot sample of the region (or at a single point), an existence search
    over depth <= max_depth brackets."""
    d = fields.dim
    tower = build_tower(fields, max_depth)
    if len(tower) < d:
        raise ValueError("tower smaller than the dimension")
    if point is not None:
        pts = np.atleast_2d(np.asarray(point, dtype=float))
    elif region is not None:
        gen = stream(seed, "hormander.select")
        pts = uniform_in_box(gen, region[0], region[1], n_pilot)
    else:
        raise ValueError("give either a region or a point")

    values = [np.atleast_2d(t.evaluator(fields)(pts)) for t in tower]
    best_key = (-math.inf, 0)
    best = None
    for count, subset in enumerate(combinations(range(len(tower)), d)):
        if count >= max_subsets:
            break
        Y = np.stack([values[i] for i in subset], axis=1)
        _, rel = _scaled_abs_det(Y)
        score = float(np.min(rel))
        if score > best_key[0]:
            best_key = (score, count)
            best = subset
    return [tower[i] for i in best]


@dataclass(frozen=True)
class LocalizedScan:
    reports: tuple
    passing: tuple  # bool per box
    connected: bool
    all_pass: bool


def _boxes_touch(a, b) -> bool:
    return bool(np.all(np.asarray(a[0]) <= np.asarray(b[1]))
                and np.all(np.asarray(b[0]) <= np.asarray(a[1])))


def _check_cover(boxes, region, per_axis=17):
    lo = np.asarray(region[0], dtype=float)
    hi = np.asarray(region[1], dtype=float)
    d = lo.size
    per_axis = max(2, min(per_axis, int(round(40_000 ** (1.0 / d)))))
    axes = [np.linspace(lo[j], hi[j], per_axis) for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    covered = np.zeros(len(pts), dtype=bool)
    for blo, bhi in boxes:
        covered |= np.all((pts >= np.asarray(blo)) & (pts <= np.asarray(bhi)),
                          axis=1)
    if not np.all(covered):
        witness = pts[~covered][0]
        raise ValueError(f"boxes do not cover the region: {tuple(witness)} "
                         "is uncovered (grid check)")


def localized_scan(fields: FieldSet, terms_per_box, boxes, region,
                   n_samples: int, seed: int, det_tol: float = 1e-9,
                   declared_exponents=None, pass_tol: float = 0.0,
                   proxy_per_axis: int = 8) -> LocalizedScan:
    """Per-box scans with per-box term selection plus a connectivity flag
    for the union of passing boxes on the box adjacency graph."""
    _check_cover(boxes, region)
    reports = []
    for i, box in enumerate(boxes):
        terms = terms_per_box[i] if terms_per_box is not None else None
        if terms is None:
            terms = select_terms(fields, region=box, seed=seed + i)
        reports.append(hormander_scan(fields, terms, box, n_samples,
                                      seed + i, det_tol, declared_exponents,
                                      proxy_per_axis=proxy_per_axis))
    passing = [rep.singular_fraction <= pass_tol for rep in reports]
    connected = _passing_connected(boxes, passing)
    return LocalizedScan(reports=tuple(reports), passing=tuple(passing),
                         connected=connected, all_pass=all(passing))


def _passing_connected(boxes, passing) -> bool:
    idx = [i for i, ok in enumerate(passing) if ok]
    if not idx:
        return False
    seen = {idx[0]}
    frontier = [idx[0]]
    while frontier:
        i = frontier.pop()
        for j in idx:
            if j not in seen and _boxes_touch(boxes[i], boxes[j]):
                seen.add(j)
                frontier.append(j)
    return len(seen) == len(idx)
