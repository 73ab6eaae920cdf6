"""Vector fields defined by expression trees: evaluation, differentiation,
mollification, and growth certificates.

Field evaluators throughout the package are callables mapping a point batch
of shape ``(n, d)`` (or a single point ``(d,)``) to values of the same shape,
carrying a ``dim`` attribute. :class:`VectorField` is the expression-backed
implementation; mollified fields and bracket fields satisfy the same
contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import expressions as ex
from .dual import KinkError
from .rng import stream, uniform_in_box

__all__ = [
    "NonFiniteError",
    "VectorField",
    "FieldSet",
    "GrowthBounds",
    "MollifierSpec",
    "MollifiedField",
    "SublinearFit",
    "parse_field",
    "eval_field",
    "jacobian",
    "divergence",
    "grad_divergence",
    "mollify",
    "sublinear_fit",
    "sublinear_violation",
    "sobolev_conjugate",
    "numeric_jacobian",
    "numeric_divergence",
    "numeric_grad_divergence",
]

# Step for finite differences of evaluators that are themselves numerical
# (nested brackets, mollified fields): larger than the base fd_step to keep
# noise amplification under control.
NESTED_FD_STEP = 1e-4


class NonFiniteError(ArithmeticError):
    """An evaluation or derivative produced NaN or infinity."""


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _fd_steps(points: np.ndarray, base: float) -> np.ndarray:
    """Per-sample step: base scaled by max(1, |x|_inf)."""
    return base * np.maximum(1.0, np.max(np.abs(points), axis=1))


# ---------------------------------------------------------------------------
# VectorField


@dataclass
class VectorField:
    """A field R^d -> R^d with one expression tree per component."""

    dim: int
    components: tuple
    fd_step: float = 1e-5
    label: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if len(self.components) != self.dim:
            raise ValueError(
                f"{len(self.components)} component(s) for dimension {self.dim}")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        self.has_nonsmooth = any(ex.has_nonsmooth(c) for c in self.components)
        self._kink_nodes = [k for c in self.components
                            for k in ex.kink_arguments(c)]

    def __call__(self, x) -> np.ndarray:
        pts, single = _as_batch(x)
        out = np.empty_like(pts)
        for i, comp in enumerate(self.components):
            out[:, i] = ex.eval_array(comp, pts)
        return out[0] if single else out

    def kink_values(self, x) -> np.ndarray:
        """Values of all kink arguments at x; shape (n, n_kinks) or (n_kinks,).
        Empty for smooth fields."""
        pts, single = _as_batch(x)
        if not self._kink_nodes:
            out = np.empty((pts.shape[0], 0))
        else:
            out = np.stack([ex.eval_array(node, pts)
                            for node in self._kink_nodes], axis=1)
        return out[0] if single else out

    # derivatives ----------------------------------------------------------

    def jacobian(self, x, method: str = "auto") -> np.ndarray:
        """Jacobian J[..., i, j] = dF_i/dx_j.

        method "dual" uses forward-mode duals (exact for smooth trees,
        refuses kink points), "fd" uses central differences with fd_step,
        "auto" picks duals for smooth trees and differences otherwise.
        """
        pts, single = _as_batch(x)
        if method == "auto":
            method = "fd" if self.has_nonsmooth else "dual"
        if method == "dual":
            J = np.empty((pts.shape[0], self.dim, self.dim))
            for i, comp in enumerate(self.components):
                J[:, i, :] = ex.eval_dual(comp, pts).grad
        elif method == "fd":
            J = _central_jacobian(self, pts, _fd_steps(pts, self.fd_step))
        else:
            raise ValueError(f"unknown jacobian method {method!r}")
        _check_finite(J, "jacobian")
        return J[0] if single else J

    def divergence(self, x, method: str = "auto") -> np.ndarray:
        J = self.jacobian(x, method=method)
        return np.trace(J, axis1=-2, axis2=-1)

    def grad_divergence(self, x) -> np.ndarray:
        pts, single = _as_batch(x)
        g = _central_gradient(lambda p: self.divergence(p),
                              pts, _fd_steps(pts, self.fd_step))
        _check_finite(g, "grad_divergence")
        return g[0] if single else g


def _check_finite(a: np.ndarray, what: str):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite {what}")


class FieldSet:
    """Ordered collection X_1..X_k of field evaluators sharing a dimension.

    Field indices are 1-based everywhere in the package, matching the
    variable names x1..xd and the serialized formats.
    """

    def __init__(self, fields, growth=None):
        fields = list(fields)
        if not fields:
            raise ValueError("FieldSet needs at least one field")
        dims = {f.dim for f in fields}
        if len(dims) != 1:
            raise ValueError(f"fields disagree on dimension: {sorted(dims)}")
        self.fields = fields
        self.dim = dims.pop()
        self.growth = list(growth) if growth is not None else [None] * len(fields)
        if len(self.growth) != len(fields):
            raise ValueError("one growth bound (or None) per field")

    def __len__(self):
        return len(self.fields)

    def __iter__(self):
        return iter(self.fields)

    def get(self, index: int):
        """Field with 1-based index."""
        if not 1 <= index <= len(self.fields):
            raise IndexError(f"field index {index} outside 1..{len(self.fields)}")
        return self.fields[index - 1]


def _central_jacobian(f, pts: np.ndarray, steps: np.ndarray) -> np.ndarray:
    n, d = pts.shape
    J = np.empty((n, d, d))
    h = steps[:, None] if np.ndim(steps) else steps
    for j in range(d):
        plus = pts.copy()
        minus = pts.copy()
        plus[:, j] += steps
        minus[:, j] -= steps
        J[:, :, j] = (f(plus) - f(minus)) / (2.0 * steps[:, None])
    return J


def _central_gradient(scalar_f, pts: np.ndarray, steps: np.ndarray) -> np.ndarray:
    n, d = pts.shape
    g = np.empty((n, d))
    for j in range(d):
        plus = pts.copy()
        minus = pts.copy()
        plus[:, j] += steps
        minus[:, j] -= steps
        g[:, j] = (scalar_f(plus) - scalar_f(minus)) / (2.0 * steps)
    return g


# Generic versions for arbitrary field evaluators (bracket fields, mollified
# fields). Evaluators exposing their own jacobian/grad_divergence are used
# directly; everything else gets central differences with the nested step.

def numeric_jacobian(f, x, step: float = NESTED_FD_STEP) -> np.ndarray:
    if isinstance(f, VectorField):
        return f.jacobian(x)
    pts, single = _as_batch(x)
    J = _central_jacobian(f, pts, _fd_steps(pts, step))
    return J[0] if single else J


def numeric_divergence(f, x, step: float = NESTED_FD_STEP) -> np.ndarray:
    if isinstance(f, VectorField):
        return f.divergence(x)
    J = numeric_jacobian(f, x, step)
    return np.trace(J, axis1=-2, axis2=-1)


def numeric_grad_divergence(f, x, step: float = NESTED_FD_STEP) -> np.ndarray:
    if isinstance(f, VectorField):
        return f.grad_divergence(x)
    pts, single = _as_batch(x)
    g = _central_gradient(lambda p: numeric_divergence(f, p, step),
                          pts, _fd_steps(pts, step))
    return g[0] if single else g


# module-level operation names ------------------------------------------------

def parse_field(expressions, dim: int, fd_step: float = 1e-5,
                label: str = "") -> VectorField:
    """Parse component expressions into a VectorField.

    Raises ExpressionError (with position) for bad syntax or unknown
    variables, ValueError for a component count that does not match dim.
    """
    if len(expressions) != dim:
        raise ValueError(
            f"dimension mismatch: {len(expressions)} expression(s), dim {dim}")
    trees = tuple(ex.parse_expression(text, dim) for text in expressions)
    return VectorField(dim=dim, components=trees, fd_step=fd_step, label=label)


def eval_field(F, x) -> np.ndarray:
    """Evaluate with a finiteness check; NaN/inf raises NonFiniteError."""
    out = F(x)
    _check_finite(out, f"value of {getattr(F, 'label', '') or 'field'}")
    return out


def jacobian(F: VectorField, x, method: str = "auto") -> np.ndarray:
    return F.jacobian(x, method=method)


def divergence(F: VectorField, x, method: str = "auto") -> np.ndarray:
    return F.divergence(x, method=method)


def grad_divergence(F: VectorField, x) -> np.ndarray:
    return F.grad_divergence(x)


# ---------------------------------------------------------------------------
# Growth bounds


@dataclass(frozen=True)
class GrowthBounds:
    """Sublinear growth certificate |F(x)| <= alpha|x| + beta together with
    the trajectory confinement radius it implies over a time horizon."""

    alpha: float
    beta: float
    horizon_T: float
    safety_radius_R: float
    diam: float

    def __post_init__(self):
        values = (self.alpha, self.beta, self.horizon_T,
                  self.safety_radius_R, self.diam)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("growth bounds must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        if not self.safety_radius_R > 0:
            raise ValueError("safety_radius_R must be positive")


# ---------------------------------------------------------------------------
# Mollification


def _bump_profile(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    with np.errstate(all="ignore"):
        out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def kernel_normalization(dim: int, n_quad: int = 400_000) -> float:
    """Constant c with integral of c * bump(|x|) over R^dim equal to 1.

    Radial reduction: integral = sigma_{d-1} * int_0^1 bump(r) r^{d-1} dr,
    evaluated by a dense midpoint rule (the integrand is smooth and flat at
    r = 1, so the rule converges far below the 1e-10 target).
    """
    h = 1.0 / n_quad
    r = (np.arange(n_quad) + 0.5) * h
    radial = float(np.sum(_bump_profile(r) * r ** (dim - 1)) * h)
    sphere_area = 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)
    return 1.0 / (sphere_area * radial)


@dataclass(frozen=True)
class MollifierSpec:
    """Radial bump kernel c*exp(-1/(1-t^2)) on |t|<1, scaled to radius
    epsilon, sampled by a tensor-product midpoint rule."""

    epsilon: float
    quadrature_points_per_axis: int = 9

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.quadrature_points_per_axis < 1:
            raise ValueError("quadrature_points_per_axis must be positive")

    def kernel(self, points: np.ndarray) -> np.ndarray:
        """Kernel density at points in R^d (unit integral over R^d)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts.shape[1]
        c = kernel_normalization(d)
        scaled = np.linalg.norm(pts, axis=1) / self.epsilon
        return c * _bump_profile(scaled) / self.epsilon ** d

    def quadrature(self, dim: int):
        """Offset nodes (K, dim) in the scaled support and weights summing
        to exactly 1, so constants are reproduced exactly."""
        n = self.quadrature_points_per_axis
        axis = -1.0 + (np.arange(n) + 0.5) * (2.0 / n)
        grids = np.meshgrid(*([axis] * dim), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        w = _bump_profile(np.linalg.norm(nodes, axis=1))
        keep = w > 0.0
        nodes, w = nodes[keep], w[keep]
        total = w.sum()
        if total == 0.0:
            raise ValueError(
                "mollifier quadrature too coarse: no nodes inside the kernel")
        return nodes * self.epsilon, w / total


class MollifiedField:
    """Evaluator of the convolution (F * kernel_epsilon); smooth in x."""

    def __init__(self, F, spec: MollifierSpec):
        self.dim = F.dim
        self.base = F
        self.spec = spec
        self.label = f"mollified({getattr(F, 'label', '') or 'field'}, eps={spec.epsilon})"
        self._nodes, self._weights = spec.quadrature(self.dim)

    def __call__(self, x) -> np.ndarray:
        pts, single = _as_batch(x)
        acc = np.zeros_like(pts)
        for node, w in zip(self._nodes, self._weights):
            acc += w * self.base(pts - node)
        if not np.all(np.isfinite(acc)):
            raise NonFiniteError("non-finite integrand under mollification")
        return acc[0] if single else acc


def mollify(F, spec: MollifierSpec) -> MollifiedField:
    """Smooth F by convolution with the compactly supported bump kernel.

    The quadrature weights form a partition of unity on nodes of norm < 1,
    so constants are exact and any sample bound |F| <= a|x| + b on the
    epsilon-inflated region transfers to |mollify(F)| <= a|x| + (a + b)
    for epsilon <= 1, up to quadrature error.
    """
    return MollifiedField(F, spec)


# ---------------------------------------------------------------------------
# Sublinear growth fit


@dataclass(frozen=True)
class SublinearFit:
    """Sampled growth certificate. region_only is always true: samples can
    never certify the bound beyond the scanned region."""

    alpha: float
    beta: float
    region_min: tuple
    region_max: tuple
    n_samples: int
    region_only: bool = True


def sublinear_violation(F, alpha: float, beta: float, points) -> float:
    """max over points of |F(x)| - (alpha|x| + beta); <= 0 means feasible."""
    pts, _ = _as_batch(points)
    values = eval_field(F, pts)
    norms = np.linalg.norm(values, axis=1)
    radii = np.linalg.norm(pts, axis=1)
    return float(np.max(norms - (alpha * radii + beta)))


_ALPHA_GRID = 2.0 ** np.arange(-10, 11)


def _anchor_points(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Center, corners and face centers of the box: deterministic anchors
    that pin the fit at the extremes regardless of the random draw."""
    d = lo.size
    center = (lo + hi) / 2.0
    pts = [center]
    if d <= 12:
        for mask in range(2 ** d):
            corner = np.where([(mask >> j) & 1 for j in range(d)], hi, lo)
            pts.append(corner)
    for j in range(d):
        for v in (lo[j], hi[j]):
            p = center.copy()
            p[j] = v
            pts.append(p)
    return np.asarray(pts)


def sublinear_fit(F, region, samples: int, seed: int) -> SublinearFit:
    """Fit |F(x)| <= alpha|x| + beta on sampled points of the region box.

    For each alpha on the geometric grid 2^-10..2^10 the least feasible
    beta is the clamped maximum violation; the reported pair takes the
    smallest alpha whose beta is within tolerance of the best achievable.
    The certificate is valid on the sampled region only.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    lo = np.asarray(region[0], dtype=float)
    hi = np.asarray(region[1], dtype=float)
    gen = stream(seed, "fields.sublinear")
    pts = np.vstack([uniform_in_box(gen, lo, hi, samples),
                     _anchor_points(lo, hi)])
    values = eval_field(F, pts)
    norms = np.linalg.norm(values, axis=1)
    radii = np.linalg.norm(pts, axis=1)

    betas = np.array([max(0.0, float(np.max(norms - a * radii)))
                      for a in _ALPHA_GRID])
    best = betas.min()
    tol = 1e-9 + 1e-6 * best
    idx = int(np.argmax(betas <= best + tol))  # first (smallest) such alpha
    return SublinearFit(alpha=float(_ALPHA_GRID[idx]), beta=float(betas[idx]),
                        region_min=tuple(lo), region_max=tuple(hi),
                        n_samples=len(pts))


# ---------------------------------------------------------------------------
# Critical embedding exponent


def sobolev_conjugate(p: float, d: int, at_d: float | None = None) -> float:
    """pd/(d-p) for 1 <= p < d, +inf for p > d; p == d has no canonical
    value and requires the caller to supply a finite placeholder."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if d < 1:
        raise ValueError("d must be >= 1")
    if p < d:
        return p * d / (d - p)
    if p > d:
        return math.inf
    if at_d is None:
        raise ValueError("p == d: supply a finite placeholder via at_d")
    if not (math.isfinite(at_d) and at_d >= 1):
        raise ValueError("at_d must be a finite number >= 1")
    return float(at_d)
