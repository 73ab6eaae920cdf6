"""Vectorized first-order dual numbers for forward-mode differentiation.

A ``Dual`` carries a batch of values with shape ``(n,)`` and the matching
gradients with shape ``(n, d)``. Arithmetic propagates derivatives exactly;
evaluating an expression once with seeded duals yields the full gradient of
every batch element.
"""

from __future__ import annotations

import numpy as np


class KinkError(ValueError):
    """Raised when a nonsmooth primitive (abs, min, max) is differentiated
    exactly at a kink, where the derivative does not exist."""


class Dual:
    """Batch of dual numbers value + eps * grad."""

    __slots__ = ("val", "grad")

    def __init__(self, val: np.ndarray, grad: np.ndarray):
        self.val = np.asarray(val, dtype=float)
        self.grad = np.asarray(grad, dtype=float)

    @staticmethod
    def seed_variables(x: np.ndarray) -> list["Dual"]:
        """One Dual per coordinate of the batch ``x`` (shape (n, d)),
        seeded with unit directions."""
        x = np.asarray(x, dtype=float)
        n, d = x.shape
        out = []
        for j in range(d):
            g = np.zeros((n, d))
            g[:, j] = 1.0
            out.append(Dual(x[:, j], g))
        return out

    @staticmethod
    def constant(c, like: "Dual") -> "Dual":
        val = np.broadcast_to(np.asarray(c, dtype=float), like.val.shape).copy()
        return Dual(val, np.zeros_like(like.grad))

    def _coerce(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return Dual.constant(other, self)

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        o = self._coerce(other)
        return Dual(self.val + o.val, self.grad + o.grad)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Dual(self.val - o.val, self.grad - o.grad)

    def __rsub__(self, other):
        o = self._coerce(other)
        return Dual(o.val - self.val, o.grad - self.grad)

    def __mul__(self, other):
        o = self._coerce(other)
        return Dual(self.val * o.val,
                    self.grad * o.val[:, None] + o.grad * self.val[:, None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        inv = 1.0 / o.val
        val = self.val * inv
        grad = (self.grad - o.grad * val[:, None]) * inv[:, None]
        return Dual(val, grad)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __neg__(self):
        return Dual(-self.val, -self.grad)

    def __pow__(self, other):
        if isinstance(other, Dual):
            # a^b = exp(b log a); domain errors surface as non-finite values
            return (self.log() * other).exp()
        p = float(other)
        if p == 0.0:
            return Dual(np.ones_like(self.val), np.zeros_like(self.grad))
        with np.errstate(all="ignore"):
            val = self.val ** p
            dval = p * self.val ** (p - 1.0)
        return Dual(val, self.grad * dval[:, None])

    # smooth primitives ----------------------------------------------------

    def sin(self):
        return Dual(np.sin(self.val), self.grad * np.cos(self.val)[:, None])

    def cos(self):
        return Dual(np.cos(self.val), -self.grad * np.sin(self.val)[:, None])

    def exp(self):
        e = np.exp(self.val)
        return Dual(e, self.grad * e[:, None])

    def log(self):
        with np.errstate(all="ignore"):
            return Dual(np.log(self.val), self.grad / self.val[:, None])

    def sqrt(self):
        with np.errstate(all="ignore"):
            r = np.sqrt(self.val)
            d = 0.5 / r
        return Dual(r, self.grad * d[:, None])

    # kinked primitives: defined away from the kink, refused on it ---------

    def abs(self):
        if np.any(self.val == 0.0):
            raise KinkError("abs differentiated at 0")
        s = np.sign(self.val)
        return Dual(np.abs(self.val), self.grad * s[:, None])

    def minimum(self, other):
        o = self._coerce(other)
        if np.any(self.val == o.val):
            raise KinkError("min differentiated at a tie")
        take_self = self.val < o.val
        return _select(take_self, self, o)

    def maximum(self, other):
        o = self._coerce(other)
        if np.any(self.val == o.val):
            raise KinkError("max differentiated at a tie")
        take_self = self.val > o.val
        return _select(take_self, self, o)


def _select(mask: np.ndarray, a: Dual, b: Dual) -> Dual:
    val = np.where(mask, a.val, b.val)
    grad = np.where(mask[:, None], a.grad, b.grad)
    return Dual(val, grad)
