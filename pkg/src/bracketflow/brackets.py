"""Lie brackets of field evaluators and bracket towers with provenance.

The bracket of evaluators U, V at x is DV(x) U(x) - DU(x) V(x). Jacobians of
expression-backed fields use their own (dual or finite-difference) paths;
jacobians of nested bracket evaluators fall back to central differences with
the larger nested step, trading accuracy for noise control.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (FieldSet, numeric_divergence, numeric_grad_divergence,
                     numeric_jacobian)
from .rng import stream, uniform_in_box

__all__ = [
    "BracketField",
    "BracketTerm",
    "bracket",
    "build_tower",
    "div_bracket",
    "bracket_identity_residual",
    "term_from_nested",
]

TOWER_SIZE_LIMIT = 10_000


class BracketField:
    """Evaluator of the pointwise Lie bracket [U, V]."""

    def __init__(self, U, V):
        if U.dim != V.dim:
            raise ValueError("bracket of fields with different dimensions")
        self.dim = U.dim
        self.U = U
        self.V = V
        self.label = f"[{getattr(U, 'label', '?') or '?'},{getattr(V, 'label', '?') or '?'}]"

    def __call__(self, x) -> np.ndarray:
        single = np.ndim(x) == 1
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        JU = np.atleast_3d(numeric_jacobian(self.U, pts))
        JV = np.atleast_3d(numeric_jacobian(self.V, pts))
        u = np.atleast_2d(self.U(pts))
        v = np.atleast_2d(self.V(pts))
        out = np.einsum("nij,nj->ni", JV, u) - np.einsum("nij,nj->ni", JU, v)
        return out[0] if single else out


def bracket(U, V, x) -> np.ndarray:
    """[U, V](x) = DV(x) U(x) - DU(x) V(x)."""
    return BracketField(U, V)(x)


def div_bracket(U, V, x) -> np.ndarray:
    """div [U, V] via the identity U . grad div V - V . grad div U."""
    gV = numeric_grad_divergence(V, x)
    gU = numeric_grad_divergence(U, x)
    u = U(x)
    v = V(x)
    return np.sum(u * gV, axis=-1) - np.sum(v * gU, axis=-1)


def bracket_identity_residual(U, V, region, samples: int, seed: int) -> float:
    """Max over samples of |div computed directly on the numerical bracket
    minus the divergence-of-bracket identity value|."""
    gen = stream(seed, "brackets.residual")
    pts = uniform_in_box(gen, region[0], region[1], samples)
    direct = numeric_divergence(BracketField(U, V), pts)
    identity = div_bracket(U, V, pts)
    return float(np.max(np.abs(direct - identity)))


# ---------------------------------------------------------------------------
# Towers

def _depth(tree) -> int:
    if isinstance(tree, int):
        return 0
    return 1 + max(_depth(tree[0]), _depth(tree[1]))


def _leaves(tree) -> frozenset:
    if isinstance(tree, int):
        return frozenset((tree,))
    return _leaves(tree[0]) | _leaves(tree[1])


def _serial(tree) -> str:
    if isinstance(tree, int):
        return str(tree)
    return f"[{_serial(tree[0])},{_serial(tree[1])}]"


def _canonical(tree):
    """Orientation-normalized form: within a node the deeper subtree goes
    left, ties broken by the serialized string. [A, B] and [B, A] collapse
    to the same term (they differ only by sign)."""
    if isinstance(tree, int):
        return tree
    a = _canonical(tree[0])
    b = _canonical(tree[1])
    if (-_depth(a), _serial(a)) <= (-_depth(b), _serial(b)):
        return (a, b)
    return (b, a)


@dataclass(frozen=True)
class BracketTerm:
    """A node of the bracket tower: leaf field index or nested bracket.

    tree is a 1-based field index or a pair of subtrees; provenance is the
    set of base field indices appearing in it.
    """

    tree: object
    depth_m: int
    provenance: frozenset

    @classmethod
    def from_tree(cls, tree) -> "BracketTerm":
        tree = _canonical(_to_tuple(tree))
        return cls(tree=tree, depth_m=_depth(tree), provenance=_leaves(tree))

    def evaluator(self, fields: FieldSet):
        return _build_evaluator(self.tree, fields)

    def to_nested(self):
        return _to_nested(self.tree)

    def __str__(self):
        return _serial(self.tree)


def _to_tuple(tree):
    if isinstance(tree, int):
        return tree
    if isinstance(tree, (list, tuple)) and len(tree) == 2:
        return (_to_tuple(tree[0]), _to_tuple(tree[1]))
    raise ValueError(f"malformed bracket tree: {tree!r}")


def _to_nested(tree):
    if isinstance(tree, int):
        return tree
    return [_to_nested(tree[0]), _to_nested(tree[1])]


def term_from_nested(nested) -> BracketTerm:
    """Parse the serialized nested-list form, e.g. [[1,2],1]."""
    return BracketTerm.from_tree(nested)


def _build_evaluator(tree, fields: FieldSet):
    if isinstance(tree, int):
        return fields.get(tree)
    return BracketField(_build_evaluator(tree[0], fields),
                        _build_evaluator(tree[1], fields))


def build_tower(fields: FieldSet, max_depth: int) -> list[BracketTerm]:
    """All bracket trees of depth <= max_depth over the base fields,
    deduplicated up to antisymmetry; [A, A] is pruned as identically zero.
    """
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    levels: list[list] = [[j for j in range(1, len(fields) + 1)]]
    seen = {_serial(t) for t in levels[0]}
    total = len(levels[0])
    for m in range(1, max_depth + 1):
        below = [t for level in levels for t in level]
        fresh = []
        for a in levels[m - 1]:
            for b in below:
                if a == b:
                    continue
                cand = _canonical((a, b))
                key = _serial(cand)
                if key in seen:
                    continue
                seen.add(key)
                fresh.append(cand)
                total += 1
                if total > TOWER_SIZE_LIMIT:
                    raise ValueError(
                        f"bracket tower exceeds {TOWER_SIZE_LIMIT} terms")
        levels.append(fresh)
    return [BracketTerm.from_tree(t) for level in levels for t in level]
