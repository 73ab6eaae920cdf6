"""Flow maps e^{tV}: adaptive integration, word composition, growth guards.

The integrator is an embedded Dormand-Prince 5(4) pair with FSAL, driving
whole sample batches with a shared adaptive step (the error norm is the
worst per-sample RMS). Per-sample integration times are handled by the
rescaling dy/dtau = t * V(y) on tau in [0, 1], which lets one batched call
integrate every sample for its own duration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import GrowthBounds, VectorField

__all__ = [
    "FlowError",
    "SafetyRadiusError",
    "StepUnderflowError",
    "IntegratorConfig",
    "FlowWord",
    "integrate_flow",
    "flow_batch",
    "safety_radius",
    "growth_bounds",
    "apply_word",
    "apply_word_batch",
    "commutator_primitive",
    "group_law_residual",
    "SelectorField",
]


class FlowError(RuntimeError):
    pass


class SafetyRadiusError(FlowError):
    """Trajectory left the certified ball: likely blow-up or a wrong
    growth certificate."""


class StepUnderflowError(FlowError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_step: float = math.inf
    safety: GrowthBounds | None = None
    kink_cap: float = 1e-3

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not 0.0 < v <= 1e-2:
                raise ValueError(f"{name} must be in (0, 1e-2]")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")

    def tighter(self, factor: float = 10.0) -> "IntegratorConfig":
        return IntegratorConfig(rel_tol=max(self.rel_tol / factor, 1e-13),
                                abs_tol=max(self.abs_tol / factor, 1e-15),
                                max_step=self.max_step, safety=self.safety,
                                kink_cap=self.kink_cap)


DEFAULT_CONFIG = IntegratorConfig()

# Dormand-Prince 5(4) tableau; row 7 doubles as the 5th-order weights (FSAL).
_A = [
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_ERR = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                 -17253 / 339200, 22 / 525, -1 / 40])

_MIN_TAU_STEP = 1e-14
_MAX_REJECTS = 60


def _kink_source(F):
    if getattr(F, "has_nonsmooth", False) and hasattr(F, "kink_values"):
        return F.kink_values
    return None


def flow_batch(F, Y0: np.ndarray, times, cfg: IntegratorConfig = DEFAULT_CONFIG,
               observer=None):
    """Integrate dy/dt = F(y) from each row of Y0 for its own time.

    Y0: (n, d); times: scalar or (n,). Returns (Y, violated) where violated
    marks samples frozen by the safety-radius guard (their row holds the
    state at the moment of violation). observer(Y, alive) is called after
    every accepted step.
    """
    Y = np.array(Y0, dtype=float)
    n, d = Y.shape
    scale = np.broadcast_to(np.asarray(times, dtype=float), (n,)).copy()
    violated = np.zeros(n, dtype=bool)
    if np.all(scale == 0.0):
        return Y, violated

    kinks = _kink_source(F)
    radius = cfg.safety.safety_radius_R if cfg.safety is not None else None

    def rhs(state):
        return F(state) * scale[:, None]

    max_abs_t = float(np.max(np.abs(scale)))
    h_cap = min(1.0, cfg.max_step / max_abs_t)
    h = min(0.05, h_cap)
    tau = 0.0
    k1 = rhs(Y)
    rejects = 0
    while tau < 1.0:
        h = min(h, 1.0 - tau, h_cap)
        if h < _MIN_TAU_STEP:
            raise StepUnderflowError(f"step underflow at tau={tau:.3g}")
        ks = [k1]
        bad = False
        for stage, row in enumerate(_A):
            Z = Y + h * sum(c * kk for c, kk in zip(row, ks))
            if not np.all(np.isfinite(Z)):
                bad = True
                break
            ks.append(rhs(Z))
        if not bad:
            Y_new = Z  # row 7 of the tableau is the 5th-order solution
            k_new = ks[6] if len(ks) == 7 else None
            if k_new is None or not np.all(np.isfinite(Y_new)):
                bad = True
        if bad or not np.all(np.isfinite(ks[-1])):
            h *= 0.25
            rejects += 1
            if rejects > _MAX_REJECTS:
                raise StepUnderflowError("repeated non-finite stages")
            continue

        err = h * sum(c * kk for c, kk in zip(_ERR, ks))
        sc = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(Y), np.abs(Y_new))
        ratio = np.sqrt(np.mean((err / sc) ** 2, axis=1))
        norm = float(np.max(ratio)) if ratio.size else 0.0
        if not math.isfinite(norm):
            h *= 0.25
            rejects += 1
            if rejects > _MAX_REJECTS:
                raise StepUnderflowError("non-finite error estimate")
            continue

        if norm > 1.0:
            h *= min(max(0.9 * norm ** -0.2, 0.1), 1.0)
            rejects += 1
            if rejects > _MAX_REJECTS * 4:
                raise StepUnderflowError("step control failed to converge")
            continue

        # kink guard: cap the physical step while a kink argument changes sign
        if kinks is not None and h * max_abs_t > cfg.kink_cap:
            s0 = np.sign(kinks(Y))
            s1 = np.sign(kinks(Y_new))
            if np.any((s0 != s1) & (s0 != 0) & (s1 != 0)):
                h = cfg.kink_cap / max_abs_t
                continue

        tau += h
        Y = Y_new
        k1 = k_new
        rejects = 0
        if radius is not None:
            over = np.linalg.norm(Y, axis=1) > radius
            fresh = over & ~violated
            if np.any(fresh):
                violated |= fresh
                scale[fresh] = 0.0
                k1 = rhs(Y)
        if observer is not None:
            observer(Y, ~violated)
        h *= min(max(0.9 * (norm + 1e-16) ** -0.2, 0.2), 5.0)
    return Y, violated


def integrate_flow(F, y0, t: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Endpoint e^{tF}(y0) within the configured tolerances."""
    y0 = np.asarray(y0, dtype=float)
    if t == 0.0:
        return y0.copy()
    Y, violated = flow_batch(F, y0[None, :], float(t), cfg)
    if violated[0]:
        raise SafetyRadiusError(
            f"trajectory left the safety ball R={cfg.safety.safety_radius_R:.6g}")
    return Y[0]


# ---------------------------------------------------------------------------
# Confinement radius


def safety_radius(alpha: float, beta: float, diam: float, T: float) -> float:
    """Radius R with e^{tV}(K) inside the closed ball B_R(0) for |t| <= T
    whenever |V(x)| <= alpha|x| + beta and diam({0} union K) <= diam.

    R = ((alpha*diam + beta) e^{alpha T} - beta)/alpha, with the limit
    diam + beta*T at alpha = 0.
    """
    if alpha < 0 or beta < 0 or diam < 0 or T < 0:
        raise ValueError("safety_radius needs nonnegative arguments")
    if alpha == 0.0:
        return diam + beta * T
    return ((alpha * diam + beta) * math.exp(alpha * T) - beta) / alpha


def growth_bounds(alpha: float, beta: float, diam: float, T: float) -> GrowthBounds:
    """GrowthBounds record with its confinement radius filled in."""
    R = safety_radius(alpha, beta, diam, T)
    return GrowthBounds(alpha=alpha, beta=beta, horizon_T=T,
                        safety_radius_R=R, diam=diam)


# ---------------------------------------------------------------------------
# Flow words


@dataclass(frozen=True)
class FlowWord:
    """Finite sequence of (field index, time) legs, stored and serialized
    in application order (the first leg acts first)."""

    legs: tuple

    def __post_init__(self):
        legs = tuple((int(j), float(t)) for j, t in self.legs)
        for j, t in legs:
            if j < 1:
                raise ValueError(f"field index {j} must be >= 1")
            if not math.isfinite(t):
                raise ValueError("leg times must be finite")
        object.__setattr__(self, "legs", legs)

    def __len__(self):
        return len(self.legs)

    def times(self) -> np.ndarray:
        return np.array([t for _, t in self.legs])

    def with_times(self, times) -> "FlowWord":
        if len(times) != len(self.legs):
            raise ValueError("time vector length differs from word length")
        return FlowWord(tuple((j, float(t))
                              for (j, _), t in zip(self.legs, times)))

    def inverse(self) -> "FlowWord":
        return FlowWord(tuple((j, -t) for j, t in reversed(self.legs)))

    def to_json(self) -> list:
        return [{"j": j, "t": t} for j, t in self.legs]

    @classmethod
    def from_json(cls, records) -> "FlowWord":
        return cls(tuple((rec["j"], rec["t"]) for rec in records))


def apply_word(fields, word: FlowWord, y0, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Composite flow endpoint; legs act left to right on y0."""
    y = np.asarray(y0, dtype=float)
    for leg, (j, t) in enumerate(word.legs):
        try:
            y = integrate_flow(fields.get(j), y, t, cfg)
        except FlowError as err:
            raise FlowError(f"leg {leg} (field {j}, t={t:.6g}): {err}") from err
    return y


class SelectorField:
    """Per-sample field selection: row i follows fields.get(indices[i])."""

    def __init__(self, fields, indices: np.ndarray):
        self.fields = list(fields)
        self.dim = fields.dim
        self.idx = np.asarray(indices, dtype=int) - 1
        if np.any(self.idx < 0) or np.any(self.idx >= len(self.fields)):
            raise ValueError("field index outside the set")
        self.has_nonsmooth = any(getattr(f, "has_nonsmooth", False)
                                 for f in self.fields)
        self._rows = np.arange(self.idx.size)

    def __call__(self, X) -> np.ndarray:
        stack = np.stack([f(X) for f in self.fields], axis=0)
        return stack[self.idx, self._rows, :]

    def kink_values(self, X) -> np.ndarray:
        cols = [f.kink_values(X) for f in self.fields
                if getattr(f, "has_nonsmooth", False)]
        return np.concatenate(cols, axis=1)


def apply_word_batch(fields, indices: np.ndarray, times: np.ndarray,
                     Y0: np.ndarray, cfg: IntegratorConfig = DEFAULT_CONFIG,
                     on_leg=None, observer=None):
    """Apply per-sample words sharing a leg count.

    indices, times: (n, m) with 1-based field indices; a zero time makes the
    leg a no-op, so shorter words pad with zeros. on_leg(k, Y, alive) is
    called after each leg, observer(Y, alive) after each integrator step.
    Returns (Y, violated).
    """
    Y = np.array(Y0, dtype=float)
    n, m = indices.shape
    violated = np.zeros(n, dtype=bool)
    for k in range(m):
        t_k = np.where(violated, 0.0, times[:, k])
        sel = SelectorField(fields, indices[:, k])
        Y, bad = flow_batch(sel, Y, t_k, cfg, observer=observer)
        violated |= bad
        if on_leg is not None:
            on_leg(k, Y, ~violated)
    return Y, violated


def commutator_primitive(i: int, j: int, s: float) -> FlowWord:
    """Second-order move toward the bracket direction: the four-leg word
    applying e^{sX_i}, e^{sX_j}, e^{-sX_i}, e^{-sX_j} in that order."""
    if i == j:
        raise ValueError("commutator primitive needs two distinct fields")
    return FlowWord(((i, s), (j, s), (i, -s), (j, -s)))


def group_law_residual(F, y0, s: float, t: float,
                       cfg: IntegratorConfig = DEFAULT_CONFIG) -> float:
    """|e^{tF}(e^{sF}(y0)) - e^{(s+t)F}(y0)|."""
    two_step = integrate_flow(F, integrate_flow(F, y0, s, cfg), t, cfg)
    one_step = integrate_flow(F, y0, s + t, cfg)
    return float(np.linalg.norm(two_step - one_step))
