"""Invertible matrices, projective directions, and the log-norm increment.

The walk machinery only ever needs three geometric primitives: apply a
matrix to a direction and renormalize, read off the log of the norm it
gained, and measure how far apart two directions are.  Everything here
is plain numpy on small dense arrays.

Directions are points of projective space: a unit vector stored up to
sign.  Two representatives v and -v denote the same point, and all
comparisons resolve the sign at comparison time rather than fixing a
canonical representative at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NotInvertibleError

__all__ = [
    "GroupElement",
    "ProjectivePoint",
    "ChainState",
    "op_norm",
    "make_group_element",
    "projective_point",
    "cocycle",
    "act",
    "proj_distance",
]

_POWER_TOL = 1e-14
_POWER_MAX_ITER = 10_000
_COND_LIMIT = 1e12


def _as_square(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    return a


def op_norm(m) -> float:
    """Largest singular value of a square matrix.

    Power iteration on m^T m from the fixed start (1,...,1)/sqrt(d),
    stopping when the Rayleigh quotient moves by less than 1e-14
    (relatively) or after 10_000 iterations.  Deterministic: no
    randomness is involved, so repeated calls agree to the bit.
    """
    a = _as_square(m)
    d = a.shape[0]
    b = a.T @ a
    v = np.full(d, 1.0 / math.sqrt(d))
    lam = float(v @ (b @ v))
    for _ in range(_POWER_MAX_ITER):
        w = b @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            # v landed in the kernel; for the zero matrix that is the answer
            return 0.0
        v = w / nw
        lam_new = float(v @ (b @ v))
        if abs(lam_new - lam) <= _POWER_TOL * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return math.sqrt(max(lam, 0.0))


def _invert(a: np.ndarray):
    """Gauss-Jordan inverse with partial pivoting; returns (inverse, min pivot)."""
    d = a.shape[0]
    aug = np.hstack([a.copy(), np.eye(d)])
    min_pivot = math.inf
    for col in range(d):
        rows = np.abs(aug[col:, col])
        k = col + int(np.argmax(rows))
        pivot = abs(aug[k, col])
        if pivot == 0.0:
            raise NotInvertibleError(
                f"singular matrix: zero pivot in column {col}", pivot=0.0
            )
        min_pivot = min(min_pivot, pivot)
        if k != col:
            aug[[col, k]] = aug[[k, col]]
        aug[col] /= aug[col, col]
        for r in range(d):
            if r != col and aug[r, col] != 0.0:
                aug[r] -= aug[r, col] * aug[col]
    return aug[:, d:], min_pivot


@dataclass(frozen=True, eq=False)
class GroupElement:
    """An invertible matrix with its inverse and size bound precomputed.

    norm_bound is N(g) = max(op_norm(g), op_norm(g^-1)); it is always
    >= 1 because op_norm(g) * op_norm(g^-1) >= 1 for any invertible g.
    """

    entries: np.ndarray
    inverse: np.ndarray
    norm_bound: float

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def __repr__(self):
        return f"GroupElement(d={self.d}, N={self.norm_bound:.6g})"


def make_group_element(entries) -> GroupElement:
    """Validate and wrap a matrix, computing its inverse and N(g).

    Raises NotInvertibleError (carrying the offending pivot magnitude)
    for singular input or when the condition estimate exceeds 1e12.
    """
    a = _as_square(entries)
    inv, min_pivot = _invert(a)
    n_fwd = op_norm(a)
    n_inv = op_norm(inv)
    cond = n_fwd * n_inv
    if not math.isfinite(cond) or cond > _COND_LIMIT:
        raise NotInvertibleError(
            f"matrix too ill-conditioned to trust (cond~{cond:.3g}, "
            f"smallest pivot {min_pivot:.3g})",
            pivot=min_pivot,
        )
    a.setflags(write=False)
    inv.setflags(write=False)
    return GroupElement(entries=a, inverse=inv, norm_bound=max(n_fwd, n_inv, 1.0))


@dataclass(frozen=True, eq=False)
class ProjectivePoint:
    """A direction: unit vector modulo sign."""

    rep: np.ndarray

    @property
    def d(self) -> int:
        return self.rep.shape[0]

    def angle(self) -> float:
        """Representative angle in [0, pi); only defined for d = 2."""
        if self.d != 2:
            raise InvalidInputError("angle() is only defined in dimension 2")
        return math.atan2(self.rep[1], self.rep[0]) % math.pi

    def same_point(self, other: "ProjectivePoint", tol: float = 1e-9) -> bool:
        """Equality up to sign: min over +-1 of the representative gap."""
        gap = min(
            float(np.linalg.norm(self.rep - other.rep)),
            float(np.linalg.norm(self.rep + other.rep)),
        )
        return gap <= tol

    def __repr__(self):
        return f"ProjectivePoint({np.array2string(self.rep, precision=6)})"


def projective_point(v) -> ProjectivePoint:
    """Normalize a nonzero vector to a ProjectivePoint."""
    a = np.asarray(v, dtype=float)
    if a.ndim != 1 or a.shape[0] < 1:
        raise InvalidInputError(f"expected a vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("vector has non-finite entries")
    n = float(np.linalg.norm(a))
    if n == 0.0:
        raise InvalidInputError("zero vector has no direction")
    rep = a / n
    # one renormalization pass is not always enough to land within 1e-12
    # for badly scaled input, so polish once
    rep = rep / float(np.linalg.norm(rep))
    rep.setflags(write=False)
    return ProjectivePoint(rep=rep)


@dataclass(frozen=True, eq=False)
class ChainState:
    """State of the driving chain: last group element and current direction."""

    g: GroupElement
    dir: ProjectivePoint

    def __repr__(self):
        return f"ChainState(g={self.g!r}, dir={self.dir!r})"


def cocycle(g: GroupElement, p: ProjectivePoint) -> float:
    """Log-norm increment log ||g v|| for the unit representative v.

    Sign-invariant, additive along products, and bounded by log N(g)
    in absolute value.
    """
    w = g.entries @ p.rep
    n = float(np.linalg.norm(w))
    if n == 0.0:
        raise InvalidInputError("group element annihilated the direction")
    return math.log(n)


def act(g: GroupElement, p: ProjectivePoint) -> ProjectivePoint:
    """Projective action: direction of g v, renormalized."""
    w = g.entries @ p.rep
    return projective_point(w)


def proj_distance(p: ProjectivePoint, q: ProjectivePoint) -> float:
    """Distance ||u ^ v|| / (||u|| ||v||) between two directions.

    Computed through the Gram identity ||u ^ v||^2 = ||u||^2 ||v||^2
    - <u,v>^2, clamped into [0, 1] against roundoff.  Sign-free by
    construction and zero exactly on equal points.
    """
    c = float(p.rep @ q.rep)
    val = 1.0 - c * c
    if val < 0.0:
        val = 0.0
    elif val > 1.0:
        val = 1.0
    return math.sqrt(val)
