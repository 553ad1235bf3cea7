"""Truncated path signatures of piecewise-linear paths.

The signature collects the iterated integrals of a path. For a path x on
[a, b] in R^c the level-k block holds the c^k coefficients

    S^(i1..ik) = integral over a < t1 < ... < tk < b of dx^i1 ... dx^ik,

stored densely in lexicographic multi-index order; the implicit level-0
entry is the constant 1. Level 1 is the total displacement, the
antisymmetric part of level 2 the signed (Levy) area.

For a single linear segment with increment D the level-k block is the
k-fold tensor power D^(x)k / k!. A general piecewise-linear path is the
concatenation of its segments, so its signature is the truncated tensor
product (Chen concatenation) of the segment signatures. Both facts are
exact, so no quadrature enters anywhere.

Coefficient counts grow as c^k per level, which is why a budget guard
caps the total stored size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, InvalidInputError
from .paths import Path

__all__ = [
    "Signature",
    "signature",
    "chen_concat",
    "identity_signature",
    "segment_signature",
    "signature_size",
    "COEFFICIENT_BUDGET",
]

# Total stored coefficients allowed per signature (sum of c^k over levels).
COEFFICIENT_BUDGET = 10_000_000


def signature_size(dim: int, degree: int) -> int:
    """Number of stored coefficients: sum of dim^k for k = 1..degree."""
    return sum(dim ** k for k in range(1, degree + 1))


def _check_budget(dim: int, degree: int, budget: int) -> None:
    total = 0
    for k in range(1, degree + 1):
        total += dim ** k
        if total > budget:
            raise CapacityError(
                f"signature of dim {dim} at degree {degree} needs {signature_size(dim, degree)} "
                f"coefficients, over the budget of {budget}"
            )


@dataclass(frozen=True)
class Signature:
    """Graded signature coefficients up to a truncation degree.

    levels[k-1] is the flat level-k block with dim^k entries in
    lexicographic multi-index order. The level-0 scalar 1 is implicit.
    """

    dim: int
    degree: int
    levels: tuple

    def __post_init__(self):
        if self.degree < 1:
            raise InvalidInputError("degree must be >= 1")
        if len(self.levels) != self.degree:
            raise InvalidInputError("expected one block per level")
        frozen = []
        for k, block in enumerate(self.levels, start=1):
            block = np.ascontiguousarray(block, dtype=np.float64).ravel()
            if block.size != self.dim ** k:
                raise InvalidInputError(
                    f"level {k} must have {self.dim ** k} entries, got {block.size}"
                )
            block.setflags(write=False)
            frozen.append(block)
        object.__setattr__(self, "levels", tuple(frozen))

    def level(self, k: int) -> np.ndarray:
        """Level-k block; level 0 returns the scalar 1."""
        if k == 0:
            return np.array([1.0])
        return self.levels[k - 1]

    def flatten(self, with_constant: bool = False) -> np.ndarray:
        parts = ([np.array([1.0])] if with_constant else []) + list(self.levels)
        return np.concatenate(parts)

    def inner(self, other: "Signature", with_constant: bool = True) -> float:
        """Euclidean inner product of graded coefficients, level-0 included by default."""
        if (self.dim, self.degree) != (other.dim, other.degree):
            raise InvalidInputError("signatures must share dim and degree")
        total = 1.0 if with_constant else 0.0
        for a, b in zip(self.levels, other.levels):
            total += float(a @ b)
        return total

    def allclose(self, other: "Signature", atol: float = 1e-12) -> bool:
        return (self.dim, other.dim) == (self.dim, other.dim) and all(
            np.allclose(a, b, atol=atol, rtol=0.0)
            for a, b in zip(self.levels, other.levels)
        )


def identity_signature(dim: int, degree: int) -> Signature:
    """Signature of a constant path: level 0 is 1, every block zero."""
    return Signature(dim=dim, degree=degree,
                     levels=tuple(np.zeros(dim ** k) for k in range(1, degree + 1)))


def segment_signature(increment: np.ndarray, degree: int) -> Signature:
    """Exact signature of one linear segment: level k is increment^(x)k / k!."""
    inc = np.asarray(increment, dtype=np.float64).ravel()
    dim = inc.size
    levels = []
    block = inc.copy()
    levels.append(block)
    for k in range(2, degree + 1):
        block = np.multiply.outer(block, inc).ravel() / k
        levels.append(block)
    return Signature(dim=dim, degree=degree, levels=tuple(levels))


def chen_concat(a: Signature, b: Signature) -> Signature:
    """Signature of the concatenated path: truncated tensor product of a and b.

    Level k of the result is the sum over i + j = k of a_i (x) b_j with the
    implicit level-0 scalars acting as identities.
    """
    if (a.dim, a.degree) != (b.dim, b.degree):
        raise InvalidInputError("signatures must share dim and degree to concatenate")
    levels = []
    for k in range(1, a.degree + 1):
        block = a.level(k) + b.level(k)
        for i in range(1, k):
            block = block + np.multiply.outer(a.level(i), b.level(k - i)).ravel()
        levels.append(block)
    return Signature(dim=a.dim, degree=a.degree, levels=tuple(levels))


def signature(path: Path, degree: int, budget: int = COEFFICIENT_BUDGET) -> Signature:
    """Truncated signature of the piecewise-linear interpolant of `path`.

    Computed segment by segment: each linear segment has the closed-form
    signature increment^(x)k / k! and segments combine by Chen
    concatenation. Timestamps never enter, so the result is invariant to
    reparametrization by construction. Zero-length segments contribute the
    identity and are skipped.
    """
    if degree < 1:
        raise InvalidInputError("degree must be >= 1")
    _check_budget(path.dim, degree, budget)
    increments = path.increments()
    acc = identity_signature(path.dim, degree)
    for inc in increments:
        if not np.any(inc):
            continue
        acc = chen_concat(acc, segment_signature(inc, degree))
    return acc
