"""Pushforward densities, Taylor remainders, and weak transport residuals.

The density of the pushforward of Lebesgue measure under e^{tV} is computed
along the backward flow by the Liouville formula

    rho(t, y) = exp( - int_0^t div V(e^{-tau V}(y)) dtau ),

with rho_t = -rho * div V(z) and
rho_tt = rho * ((div V(z))^2 - grad div V(z) . V(z)) at z = e^{-tV}(y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import expressions as ex
from .brackets import BracketField, div_bracket
from .fields import numeric_divergence, numeric_grad_divergence
from .flows import DEFAULT_CONFIG, IntegratorConfig, flow_batch, safety_radius
from .grid import OccupancyGrid
from .rng import stream, uniform_in_box

__all__ = [
    "DensityRecord",
    "TestFunction",
    "liouville_density",
    "density_batch",
    "PushforwardEstimate",
    "pushforward_integral",
    "TaylorRemainder",
    "taylor_remainder",
    "transport_residual",
    "bracket_transport_residual",
    "pullback_monotonicity_check",
]

MC_CHUNK = 65_536  # fixed chunk size: part of the determinism contract


# ---------------------------------------------------------------------------
# Test functions: polynomial times a tensor bump, with analytic gradients


def _bump(t):
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    with np.errstate(all="ignore"):
        out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def _bump_dlog(t):
    """d/dt log bump(t) = -2t/(1-t^2)^2 on |t| < 1."""
    return -2.0 * t / (1.0 - t * t) ** 2


class TestFunction:
    """phi(x) = p(x) * cutoff(x), cutoff a product of per-axis bumps scaled
    to the support box (so phi vanishes outside it); gradient is analytic in
    the cutoff and exact (dual-number) in the smooth factor p."""

    def __init__(self, expression: str, support_min, support_max):
        self.support_min = np.asarray(support_min, dtype=float)
        self.support_max = np.asarray(support_max, dtype=float)
        if np.any(self.support_max <= self.support_min):
            raise ValueError("degenerate support box")
        self.dim = self.support_min.size
        self.expression = expression
        self.tree = ex.parse_expression(expression, self.dim)
        if ex.has_nonsmooth(self.tree):
            raise ValueError("test functions must use smooth primitives only")
        self._center = (self.support_min + self.support_max) / 2.0
        self._half = (self.support_max - self.support_min) / 2.0
        self._peak = math.exp(-1.0)  # bump(0), normalizes cutoff to 1 at center

    def _scaled(self, pts):
        return (pts - self._center) / self._half

    def _cutoff(self, u):
        vals = _bump(u)
        return np.prod(vals, axis=1) / self._peak ** self.dim

    def __call__(self, x) -> np.ndarray:
        single = np.ndim(x) == 1
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        u = self._scaled(pts)
        out = ex.eval_array(self.tree, pts) * self._cutoff(u)
        return out[0] if single else out

    def gradient(self, x) -> np.ndarray:
        single = np.ndim(x) == 1
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        u = self._scaled(pts)
        cut = self._cutoff(u)
        dual = ex.eval_dual(self.tree, pts)
        grad = dual.grad * cut[:, None]
        inside = np.all(np.abs(u) < 1.0, axis=1)
        # log-derivative of the cutoff, zero outside the support
        dlog = np.where(inside[:, None], _bump_dlog(np.clip(u, -0.999999, 0.999999)),
                        0.0) / self._half
        grad += (dual.val * cut)[:, None] * dlog
        grad[~inside] = 0.0
        return grad[0] if single else grad

    def sup_norm(self, per_axis: int = 41) -> float:
        """Grid estimate of the sup norm over the support."""
        axes = [np.linspace(lo, hi, per_axis)
                for lo, hi in zip(self.support_min, self.support_max)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return float(np.max(np.abs(self(pts))))


# ---------------------------------------------------------------------------
# Liouville density


@dataclass(frozen=True)
class DensityRecord:
    t: float
    y: tuple
    rho: float
    rho_t: float
    rho_tt: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("density must be positive")


def density_batch(F, Y: np.ndarray, t: float, quad_points: int | None = None,
                  cfg: IntegratorConfig = DEFAULT_CONFIG):
    """(rho, rho_t, rho_tt) arrays for a batch of evaluation points."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if t == 0.0:
        div0 = numeric_divergence(F, Y)
        grad0 = numeric_grad_divergence(F, Y)
        rho = np.ones(len(Y))
        rho_tt = div0 ** 2 - np.sum(grad0 * F(Y), axis=1)
        return rho, -div0, rho_tt

    n_nodes = quad_points or max(16, math.ceil(16 * abs(t)))
    nodes, weights = leggauss(n_nodes)
    taus = (nodes + 1.0) / 2.0 * t          # increasing |tau| from ~0 to ~t
    weights = weights * t / 2.0

    integral = np.zeros(len(Y))
    Z = Y.copy()
    reached = 0.0
    for tau, w in zip(taus, weights):
        Z, _ = flow_batch(F, Z, -(tau - reached), cfg)
        reached = tau
        integral += w * numeric_divergence(F, Z)
    Z, _ = flow_batch(F, Z, -(t - reached), cfg)  # continue to e^{-tV}(y)

    rho = np.exp(-integral)
    div_end = numeric_divergence(F, Z)
    grad_end = numeric_grad_divergence(F, Z)
    rho_t = -rho * div_end
    rho_tt = rho * (div_end ** 2 - np.sum(grad_end * F(Z), axis=1))
    return rho, rho_t, rho_tt


def liouville_density(F, y, t: float, quad_points: int | None = None,
                      cfg: IntegratorConfig = DEFAULT_CONFIG) -> DensityRecord:
    """Density of e^{tF}_# Lebesgue at y, with its first two t-derivatives."""
    y = np.asarray(y, dtype=float)
    rho, rho_t, rho_tt = density_batch(F, y[None, :], t, quad_points, cfg)
    return DensityRecord(t=float(t), y=tuple(y), rho=float(rho[0]),
                         rho_t=float(rho_t[0]), rho_tt=float(rho_tt[0]))


# ---------------------------------------------------------------------------
# Monte Carlo pushforward integrals


class SupportEscapeError(RuntimeError):
    """The sampling box is too small: mass reaches its boundary."""


@dataclass(frozen=True)
class PushforwardEstimate:
    value: float
    std_error: float
    n_samples: int
    box_min: tuple
    box_max: tuple


def _sampling_box(f: TestFunction, t: float, bounds, sampling_box):
    if sampling_box is not None:
        lo = np.asarray(sampling_box[0], dtype=float)
        hi = np.asarray(sampling_box[1], dtype=float)
        return lo, hi
    if bounds is None:
        raise ValueError("provide growth bounds or an explicit sampling_box")
    corners_norm = float(np.linalg.norm(
        np.maximum(np.abs(f.support_min), np.abs(f.support_max))))
    diam = max(float(np.linalg.norm(f.support_max - f.support_min)), corners_norm)
    R = safety_radius(bounds.alpha, bounds.beta, diam, abs(t))
    d = f.dim
    return -R * np.ones(d), R * np.ones(d)


def _mc_box_mean(values_fn, lo, hi, n_samples, seed, stream_name,
                 escape_check=None):
    """Monte Carlo mean*volume over a box with fixed-size chunked streams.

    values_fn(points) returns the integrand values; escape_check(points,
    values) may flag boundary-shell samples carrying mass.
    """
    vol = float(np.prod(hi - lo))
    total = 0.0
    total_sq = 0.0
    count = 0
    n_chunks = (n_samples + MC_CHUNK - 1) // MC_CHUNK
    for chunk in range(n_chunks):
        n = min(MC_CHUNK, n_samples - chunk * MC_CHUNK)
        gen = stream(seed, stream_name, chunk)
        pts = uniform_in_box(gen, lo, hi, MC_CHUNK)[:n]
        vals = values_fn(pts)
        if escape_check is not None:
            escape_check(pts, vals)
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals ** 2))
        count += n
    mean = total / count
    var = max(total_sq / count - mean ** 2, 0.0)
    se = vol * math.sqrt(var / count)
    return vol * mean, se, count


def pushforward_integral(F, f: TestFunction, t: float, n_samples: int,
                         seed: int, cfg: IntegratorConfig = DEFAULT_CONFIG,
                         bounds=None, sampling_box=None) -> PushforwardEstimate:
    """Monte Carlo estimate of int f d(e^{tF}_# Lebesgue) = int f(e^{tF}x) dx.

    The sampling box must contain the preimage of the support of f; it is
    derived from the growth bounds via the confinement radius unless given
    explicitly. Samples on the boundary shell that still carry mass raise
    SupportEscapeError.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    lo, hi = _sampling_box(f, t, bounds, sampling_box)
    shell = 0.02 * (hi - lo)

    def escape_check(pts, vals):
        near = np.any((pts < lo + shell) | (pts > hi - shell), axis=1)
        if np.any(near & (np.abs(vals) > 0.0)):
            raise SupportEscapeError(
                "support reaches the sampling box boundary; enlarge the box")

    def values(pts):
        ends, _ = flow_batch(F, pts, t, cfg)
        return f(ends)

    value, se, count = _mc_box_mean(values, lo, hi, n_samples, seed,
                                    "density.pushforward", escape_check)
    return PushforwardEstimate(value=value, std_error=se, n_samples=count,
                               box_min=tuple(lo), box_max=tuple(hi))


@dataclass(frozen=True)
class TaylorRemainder:
    value: float
    std_error: float
    bound_ratio: float
    sup_f: float


def taylor_remainder(F, f: TestFunction, t: float, n_samples: int, seed: int,
                     cfg: IntegratorConfig = DEFAULT_CONFIG, bounds=None,
                     sampling_box=None) -> TaylorRemainder:
    """R(t) = int f dmu_t - int f dx + t int f div F dx, estimated as a
    single Monte Carlo integral of the combined integrand (the pointwise
    combination keeps the variance at the scale of R itself)."""
    sup_f = f.sup_norm()
    if t == 0.0:
        return TaylorRemainder(value=0.0, std_error=0.0, bound_ratio=0.0,
                               sup_f=sup_f)
    lo, hi = _sampling_box(f, t, bounds, sampling_box)

    def values(pts):
        ends, _ = flow_batch(F, pts, t, cfg)
        fx = f(pts)
        return f(ends) - fx + t * fx * numeric_divergence(F, pts)

    value, se, _ = _mc_box_mean(values, lo, hi, n_samples, seed,
                                "density.pushforward")
    ratio = value / (sup_f * t * t / 2.0)
    return TaylorRemainder(value=value, std_error=se, bound_ratio=ratio,
                           sup_f=sup_f)


# ---------------------------------------------------------------------------
# Weak transport residuals on occupancy grids


def _check_support_inside(E: OccupancyGrid, phi: TestFunction):
    if np.any(phi.support_min < E.box_min) or np.any(phi.support_max > E.box_max):
        raise ValueError("test function support must lie inside the grid box")


def transport_residual(E: OccupancyGrid, F, phi: TestFunction) -> float:
    """Midpoint-rule value of -int_E grad(phi).F dx - int_E phi div F dx.

    Zero (up to discretization) certifies that the occupancy set solves the
    stationary weak transport equation for F.
    """
    _check_support_inside(E, phi)
    centers = E.occupied_centers()
    if centers.size == 0:
        return 0.0
    grad_term = np.sum(phi.gradient(centers) * F(centers), axis=1)
    div_term = phi(centers) * numeric_divergence(F, centers)
    return float(-(np.sum(grad_term) + np.sum(div_term)) * E.cell_volume)


def bracket_transport_residual(E: OccupancyGrid, U, V, phi: TestFunction) -> float:
    """Transport residual for the bracket field [U, V], with its divergence
    taken from the divergence-of-bracket identity."""
    _check_support_inside(E, phi)
    centers = E.occupied_centers()
    if centers.size == 0:
        return 0.0
    W = BracketField(U, V)
    grad_term = np.sum(phi.gradient(centers) * W(centers), axis=1)
    div_term = phi(centers) * div_bracket(U, V, centers)
    return float(-(np.sum(grad_term) + np.sum(div_term)) * E.cell_volume)


def pullback_monotonicity_check(f_grid: OccupancyGrid, g_grid: OccupancyGrid,
                                F, t: float, n_samples: int, seed: int,
                                cfg: IntegratorConfig = DEFAULT_CONFIG) -> float:
    """Fraction of samples with f(e^{tF}x) > g(e^{tF}x); with f <= g
    cellwise this should vanish up to discretization at set boundaries."""
    if not f_grid.same_spec(g_grid):
        raise ValueError("grids must share box and resolution")
    if np.any(f_grid.cells & ~g_grid.cells):
        raise ValueError("precondition f <= g violated cellwise")
    violations = 0
    n_chunks = (n_samples + MC_CHUNK - 1) // MC_CHUNK
    for chunk in range(n_chunks):
        n = min(MC_CHUNK, n_samples - chunk * MC_CHUNK)
        gen = stream(seed, "density.pullback", chunk)
        pts = uniform_in_box(gen, f_grid.box_min, f_grid.box_max, MC_CHUNK)[:n]
        ends, _ = flow_batch(F, pts, t, cfg)
        fv = f_grid.membership(ends)
        gv = g_grid.membership(ends)
        violations += int(np.count_nonzero(fv & ~gv))
    return violations / n_samples
