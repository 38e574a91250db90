"""Sampleable laws on the invertible matrices, with Lyapunov recentring.

Three kinds of law are supported:

* finite atomic: a weighted list of fixed matrices;
* smooth exponential: exp(scale * A) with A a d x d matrix of
  independent standard normals, times a scalar e^{log_shift};
* scaled mixture: with probability alpha emit lambda * I, otherwise
  emit lambda^{-1} * g with g drawn from a base law.

A law also carries a recentring shift `log_scale`: every sample is
multiplied by e^{log_scale}.  Scalar multiples act identically on
directions, so recentring changes cocycle values by a constant and
nothing else; this is how the drift of a law is tuned to zero.

Randomness contract per draw (so streams can be replayed):
finite atomic consumes 1 uniform; smooth exponential consumes one
(d, d) standard-normal block; scaled mixture consumes 1 uniform plus
one full base draw (the base draw happens even when the atom branch is
taken, keeping consumption branch-independent).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .errors import InvalidInputError
from .matgroup import (
    GroupElement,
    ProjectivePoint,
    make_group_element,
    projective_point,
)
from .streams import DIRECTION_STREAM, derive_stream

__all__ = [
    "MatrixLaw",
    "FiniteAtomic",
    "SmoothExponential",
    "ScaledMixture",
    "EstimateWithCI",
    "P1Report",
    "finite_atomic",
    "smooth_exponential",
    "scaled_mixture",
    "lattice_coin_law",
    "rotation_law",
    "point_mass",
    "sample",
    "sample_entries",
    "estimate_lyapunov",
    "recenter_to_zero_lyapunov",
    "check_p1",
    "check_p5",
    "direction_set",
]


@dataclass(frozen=True)
class FiniteAtomic:
    weights: tuple
    atoms: tuple  # of GroupElement, aligned with weights

    @property
    def d(self) -> int:
        return self.atoms[0].d


@dataclass(frozen=True)
class SmoothExponential:
    d: int
    scale: float
    log_shift: float = 0.0


@dataclass(frozen=True)
class ScaledMixture:
    alpha: float
    lam: float
    base: "MatrixLaw"

    @property
    def d(self) -> int:
        return self.base.d


LawKind = Union[FiniteAtomic, SmoothExponential, ScaledMixture]


@dataclass(frozen=True)
class MatrixLaw:
    kind: LawKind
    label: str
    log_scale: float = 0.0  # recentring: every sample gets multiplied by e^{log_scale}

    @property
    def d(self) -> int:
        return self.kind.d

    def __repr__(self):
        return f"MatrixLaw({self.label!r}, d={self.d}, log_scale={self.log_scale:g})"


@dataclass
class EstimateWithCI:
    value: float
    stderr: float
    n_samples: int
    seed: int


@dataclass
class P1Report(EstimateWithCI):
    """check_p1 output: moment estimate plus the max log-size and a tail flag."""

    max_log_norm: float = 0.0
    heavy_tail: bool = False


# ---------------------------------------------------------------------------
# constructors


def finite_atomic(pairs, label="finite-atomic") -> MatrixLaw:
    """Law from (weight, matrix) pairs; weights must sum to 1 within 1e-12."""
    weights = []
    atoms = []
    for w, g in pairs:
        w = float(w)
        if w <= 0.0:
            raise InvalidInputError(f"atom weight must be positive, got {w}")
        weights.append(w)
        atoms.append(g if isinstance(g, GroupElement) else make_group_element(g))
    if abs(sum(weights) - 1.0) > 1e-12:
        raise InvalidInputError(f"atom weights sum to {sum(weights)!r}, not 1")
    d = atoms[0].d
    if any(a.d != d for a in atoms):
        raise InvalidInputError("atoms have mixed dimensions")
    return MatrixLaw(FiniteAtomic(tuple(weights), tuple(atoms)), label)


def smooth_exponential(d, scale, log_shift=0.0, label=None) -> MatrixLaw:
    if d < 1:
        raise InvalidInputError("dimension must be >= 1")
    if not (scale > 0.0 and math.isfinite(scale)):
        raise InvalidInputError(f"scale must be a positive real, got {scale}")
    if not math.isfinite(log_shift):
        raise InvalidInputError("log_shift must be finite")
    if label is None:
        label = f"smooth-exp(d={d}, scale={scale:g})"
    return MatrixLaw(SmoothExponential(int(d), float(scale), float(log_shift)), label)


def scaled_mixture(alpha, lam, base, label=None) -> MatrixLaw:
    if not (0.0 <= alpha <= 1.0):
        raise InvalidInputError(f"alpha must be a probability, got {alpha}")
    if not (lam > 1.0):
        raise InvalidInputError(f"lambda must exceed 1, got {lam}")
    if label is None:
        label = f"mixture(alpha={alpha:g}, lambda={lam:g}, base={base.label})"
    return MatrixLaw(ScaledMixture(float(alpha), float(lam), base), label)


def point_mass(entries, label="point-mass") -> MatrixLaw:
    return finite_atomic([(1.0, entries)], label=label)


def lattice_coin_law() -> MatrixLaw:
    """Fair coin on diag(2, 1/2) and diag(1/2, 2).

    From the first coordinate axis the log-norm increment is a fair
    +-ln2 coin, so every exit quantity has an exact lattice oracle.
    The axes are invariant, so this law is a walk-machinery oracle
    only, not a generic example.
    """
    return finite_atomic(
        [(0.5, [[2.0, 0.0], [0.0, 0.5]]), (0.5, [[0.5, 0.0], [0.0, 2.0]])],
        label="lattice-coin",
    )


def rotation_law(beta, label=None) -> MatrixLaw:
    """Point mass at the rotation by angle beta (an isometry: cocycle 0)."""
    c, s = math.cos(beta), math.sin(beta)
    if label is None:
        label = f"rotation({beta:g})"
    return point_mass([[c, -s], [s, c]], label=label)


# ---------------------------------------------------------------------------
# sampling


def _expm2_batch(a: np.ndarray) -> np.ndarray:
    """exp of a batch of 2x2 matrices, closed form.

    Split a = mu*I + b with b traceless; b*b = -det(b)*I, so exp(b) is
    cosh-like in s2 = -det(b): exp(b) = C(s2)*I + S(s2)*b where C and S
    are entire functions evaluated by cosh/cos away from 0 and by series
    near 0.
    """
    mu = 0.5 * (a[..., 0, 0] + a[..., 1, 1])
    b00 = a[..., 0, 0] - mu
    b01 = a[..., 0, 1]
    b10 = a[..., 1, 0]
    s2 = b00 * b00 + b01 * b10  # = -det(b) for traceless b
    s = np.sqrt(np.abs(s2))
    small = np.abs(s2) < 1e-8
    s_safe = np.where(small, 1.0, s)
    with np.errstate(invalid="ignore"):
        c_big = np.where(s2 > 0, np.cosh(np.where(s2 > 0, s, 0.0)),
                         np.cos(np.where(s2 > 0, 0.0, s)))
        sc_big = np.where(s2 > 0, np.sinh(np.where(s2 > 0, s, 0.0)),
                          np.sin(np.where(s2 > 0, 0.0, s))) / s_safe
    c_small = 1.0 + s2 / 2.0 + s2 * s2 / 24.0
    sc_small = 1.0 + s2 / 6.0 + s2 * s2 / 120.0
    c = np.where(small, c_small, c_big)
    sc = np.where(small, sc_small, sc_big)
    em = np.exp(mu)
    out = np.empty_like(a)
    out[..., 0, 0] = em * (c + sc * b00)
    out[..., 0, 1] = em * (sc * b01)
    out[..., 1, 0] = em * (sc * b10)
    out[..., 1, 1] = em * (c - sc * b00)
    return out


def _expm_batch(a: np.ndarray) -> np.ndarray:
    if a.shape[-1] == 2:
        return _expm2_batch(a)
    from scipy.linalg import expm

    out = np.empty_like(a)
    for i in range(a.shape[0]):
        out[i] = expm(a[i])
    return out


def sample_entries(law: MatrixLaw, rng: np.random.Generator, m: int) -> np.ndarray:
    """m raw draws as an (m, d, d) array; the recentring scalar is applied.

    This is the batch sampling path used by all vectorized estimators.
    Per-kind consumption: finite atomic takes one block of m uniforms;
    smooth exponential one (m, d, d) normal block; scaled mixture one
    block of m uniforms followed by a full base batch.  For the mixture
    the uniforms all precede the base draws, so a batch of m is not the
    interleaved scalar sequence; estimators always consume whole
    batches, and a batch of size 1 coincides with one scalar draw.
    """
    kind = law.kind
    if isinstance(kind, FiniteAtomic):
        u = rng.random(m)
        cum = np.cumsum(kind.weights)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, u, side="right")
        stack = np.stack([a.entries for a in kind.atoms])
        out = stack[idx].copy()
    elif isinstance(kind, SmoothExponential):
        a = rng.standard_normal((m, kind.d, kind.d))
        out = _expm_batch(kind.scale * a)
        if kind.log_shift != 0.0:
            out *= math.exp(kind.log_shift)
    elif isinstance(kind, ScaledMixture):
        u = rng.random(m)
        base = sample_entries(kind.base, rng, m)
        atom = kind.lam * np.eye(kind.d)
        out = np.where(
            (u < kind.alpha)[:, None, None], atom[None, :, :], base / kind.lam
        )
    else:
        raise InvalidInputError(f"unknown law kind {type(kind)!r}")
    if law.log_scale != 0.0:
        out *= math.exp(law.log_scale)
    return out


def sample(law: MatrixLaw, rng: np.random.Generator) -> GroupElement:
    """One draw from the law as a full GroupElement."""
    return make_group_element(sample_entries(law, rng, 1)[0])


# ---------------------------------------------------------------------------
# estimators and condition checks


def _unit_rows(w: np.ndarray) -> np.ndarray:
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def estimate_lyapunov(
    law: MatrixLaw,
    start: ProjectivePoint | None = None,
    n_steps: int = 1000,
    n_burnin: int = 1000,
    n_reps: int = 32,
    seed: int = 0,
) -> EstimateWithCI:
    """Drift of the log-norm walk: mean of S_n / n over replicas after burn-in.

    Replicas run in lockstep on one derived stream; the stderr is the
    replica spread over sqrt(n_reps), zero for deterministic laws.
    """
    if n_steps < 1000:
        raise InvalidInputError("n_steps must be at least 1000 for a usable average")
    if n_reps < 1:
        raise InvalidInputError("n_reps must be positive")
    d = law.d
    if start is None:
        start = projective_point(np.eye(d)[0])
    rng = derive_stream(seed, 0)
    w = np.tile(start.rep, (n_reps, 1))
    for _ in range(n_burnin):
        g = sample_entries(law, rng, n_reps)
        w = _unit_rows(np.einsum("kij,kj->ki", g, w))
    s = np.zeros(n_reps)
    for _ in range(n_steps):
        g = sample_entries(law, rng, n_reps)
        z = np.einsum("kij,kj->ki", g, w)
        nrm = np.linalg.norm(z, axis=1)
        s += np.log(nrm)
        w = z / nrm[:, None]
    vals = s / n_steps
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n_reps)) if n_reps > 1 else 0.0
    return EstimateWithCI(
        value=float(np.mean(vals)), stderr=stderr, n_samples=n_reps, seed=seed
    )


def recenter_to_zero_lyapunov(law: MatrixLaw, gamma_hat: float) -> MatrixLaw:
    """Law with every sample multiplied by e^{-gamma_hat}.

    Shifts every cocycle value by -gamma_hat and leaves the projective
    action untouched; recentring by an estimated drift produces a law
    with (estimated) zero drift.  Recentring by 0 returns samples
    bit-identical to the original.
    """
    if not math.isfinite(gamma_hat):
        raise InvalidInputError("gamma_hat must be finite")
    return replace(law, log_scale=law.log_scale - gamma_hat)


def check_p1(
    law: MatrixLaw, delta0: float, n_samples: int = 4096, seed: int = 0
) -> P1Report:
    """Moment diagnostic: sample mean of N(g)^delta0 and max of log N(g).

    The heavy_tail flag trips when the largest 1% of the N(g)^delta0
    values carries more than half of the total, a sign the moment mean
    is not trustworthy at this sample size.
    """
    if not (0.0 < delta0 <= 1.0):
        raise InvalidInputError(f"delta0 must lie in (0, 1], got {delta0}")
    rng = derive_stream(seed, 0)
    vals = np.empty(n_samples)
    max_log_n = 0.0
    for i in range(n_samples):
        g = sample(law, rng)
        vals[i] = g.norm_bound**delta0
        max_log_n = max(max_log_n, math.log(g.norm_bound))
    top = max(1, int(math.ceil(0.01 * n_samples)))
    tail_share = float(np.sort(vals)[-top:].sum() / vals.sum())
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return P1Report(
        value=float(vals.mean()),
        stderr=stderr,
        n_samples=n_samples,
        seed=seed,
        max_log_norm=max_log_n,
        heavy_tail=tail_share > 0.5,
    )


def direction_set(d: int, n_directions: int) -> np.ndarray:
    """Deterministic unit directions covering the sphere.

    Golden-ratio lattice on the half-circle for d = 2 and the Fibonacci
    sphere for d = 3; higher dimensions fall back to a fixed-seed
    uniform sample, which is still reproducible.
    """
    if n_directions < 1:
        raise InvalidInputError("need at least one direction")
    if d == 2:
        golden = (math.sqrt(5.0) - 1.0) / 2.0
        theta = math.pi * ((golden * np.arange(n_directions)) % 1.0)
        return np.column_stack([np.cos(theta), np.sin(theta)])
    if d == 3:
        i = np.arange(n_directions) + 0.5
        phi = math.pi * (1.0 + math.sqrt(5.0)) * i
        z = 1.0 - 2.0 * i / n_directions
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    rng = derive_stream(0, DIRECTION_STREAM + d)
    w = rng.standard_normal((n_directions, d))
    return _unit_rows(w)


def check_p5(
    law: MatrixLaw,
    delta: float,
    n_directions: int = 64,
    n_samples: int = 4096,
    seed: int = 0,
) -> float:
    """Worst-direction expansion probability: min_s P(log ||g s|| > delta).

    A positive minimum over a covering direction set is the desk-scale
    version of the uniform expansion condition; an isometry scores 0.
    """
    if n_directions < 64:
        raise InvalidInputError("need at least 64 directions to cover the sphere")
    if not (delta > 0.0):
        raise InvalidInputError("delta must be positive")
    dirs = direction_set(law.d, n_directions)
    rng = derive_stream(seed, 0)
    g = sample_entries(law, rng, n_samples)
    # images (m, k, d): every sample applied to every direction
    img = np.einsum("mij,kj->mki", g, dirs)
    lognorm = 0.5 * np.log(np.einsum("mki,mki->mk", img, img))
    probs = (lognorm > delta).mean(axis=0)
    return float(probs.min())
