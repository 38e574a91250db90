"""The direction chain, the log-norm walk, and its first-passage structure.

The chain state is a pair (g, direction).  One transition folds the
held matrix into the direction and stores the newly drawn matrix:

    step((g, w), g') = ((g', g.w), increment log||g' (g.w)|| / ||g.w||)

Composing n steps from (g, v) sums the increments to
log||g_n ... g_1 g v|| - log||g v||, which is checked directly against
an explicit renormalized product (log_norm_direct).  The walk y + S_n
is killed at the first n >= 1 with y + S_n <= 0; ties at exactly zero
count as an exit.

Everything operating on one path is a plain scalar loop; the variance
and contraction estimators run replicas through the blocked engine and
are byte-identical for any thread count.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._batch import (
    free_walk_kernel,
    pair_distance_kernel,
    run_blocked,
    start_direction,
)
from .errors import InvalidInputError
from .laws import EstimateWithCI, MatrixLaw, sample_entries
from .matgroup import (
    ChainState,
    GroupElement,
    act,
    cocycle,
    make_group_element,
    projective_point,
)
from .streams import BOOTSTRAP_STREAM, derive_stream

__all__ = [
    "WalkPath",
    "SigmaEstimate",
    "step",
    "default_start",
    "simulate_walk",
    "log_norm_direct",
    "walk_endpoint_samples",
    "estimate_sigma2",
    "contraction_exponent",
    "dump_walk_csv",
]

SIGMA_METHODS = ("batch-variance", "covariance-series")

# Increments whose sample variance falls below this are treated as the
# constant-cocycle degenerate case rather than as a tiny true variance.
_DEGENERATE_VAR = 1e-28

_SERIES_CHUNK = 4096


@dataclass(frozen=True)
class WalkPath:
    start: ChainState
    y: float
    s_values: tuple  # S_1 .. S_n for the realized steps
    exit_index: Optional[int]  # first n with y + S_n <= 0, None if censored
    censored_at: int  # the horizon n_max the walk was run to


@dataclass
class SigmaEstimate:
    sigma2: float
    method: str
    truncation: int
    stderr: float
    degenerate: bool = False
    seed: int = 0


def step(state: ChainState, g_next: GroupElement):
    """One chain transition; returns (new state, cocycle increment)."""
    folded = act(state.g, state.dir)
    return ChainState(g_next, folded), cocycle(g_next, folded)


def default_start(d: int = 2) -> ChainState:
    """Identity matrix paired with the first coordinate axis."""
    return ChainState(make_group_element(np.eye(d)), projective_point(np.eye(d)[0]))


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return derive_stream(int(seed_or_rng), 0)


def simulate_walk(law: MatrixLaw, x0: ChainState, y: float, n_max: int, seed_or_rng) -> WalkPath:
    """Run the killed walk to exit or horizon, whichever comes first."""
    if not (y > 0.0):
        raise InvalidInputError(f"start level y must be positive, got {y}")
    if n_max < 1:
        raise InvalidInputError("n_max must be at least 1")
    rng = _as_rng(seed_or_rng)
    w = start_direction(x0)
    s = 0.0
    s_values = []
    exit_index = None
    for n in range(1, n_max + 1):
        g = sample_entries(law, rng, 1)[0]
        z = g @ w
        nrm = float(np.linalg.norm(z))
        s += math.log(nrm)
        w = z / nrm
        s_values.append(s)
        if y + s <= 0.0:
            exit_index = n
            break
    return WalkPath(
        start=x0,
        y=float(y),
        s_values=tuple(s_values),
        exit_index=exit_index,
        censored_at=n_max,
    )


def log_norm_direct(law: MatrixLaw, g0: GroupElement, v: np.ndarray, n: int, seed_or_rng) -> float:
    """log of the norm of (g_n ... g_1 g0) v by explicit renormalized product.

    With the same stream, agrees with log||g0 v|| plus the walk's S_n;
    the two routes share no code past the sampler, which is the point.
    """
    v = np.asarray(v, dtype=float)
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        raise InvalidInputError("v must be a nonzero vector")
    if n < 0:
        raise InvalidInputError("n must be nonnegative")
    rng = _as_rng(seed_or_rng)
    z = g0.entries @ (v / nrm)
    total = math.log(nrm)
    for _ in range(n):
        zn = float(np.linalg.norm(z))
        total += math.log(zn)
        z = sample_entries(law, rng, 1)[0] @ (z / zn)
    return total + math.log(float(np.linalg.norm(z)))


def walk_endpoint_samples(
    law: MatrixLaw,
    x0: ChainState,
    n: int,
    n_reps: int,
    seed: int,
    threads: int = 1,
    burn_in: int = 0,
) -> np.ndarray:
    """S_n over n_reps independent unkilled paths (post burn-in window)."""
    if n < 1 or n_reps < 1:
        raise InvalidInputError("n and n_reps must be positive")
    w0 = start_direction(x0)
    if burn_in > 0:
        cps = (burn_in, burn_in + n)
    else:
        cps = (n,)
    kernel = free_walk_kernel(law, w0, cps)
    parts = run_blocked(kernel, n_reps, seed, threads=threads)
    out = np.concatenate([p[-1] - (p[0] if burn_in > 0 else 0.0) for p in parts])
    return out


def _increment_series(law: MatrixLaw, w0: np.ndarray, n_total: int, rng) -> np.ndarray:
    """One trajectory's increments, sampling the law in chunks."""
    incr = np.empty(n_total)
    w = w0.copy()
    done = 0
    while done < n_total:
        width = min(_SERIES_CHUNK, n_total - done)
        g = sample_entries(law, rng, width)
        for i in range(width):
            z = g[i] @ w
            nrm = float(np.linalg.norm(z))
            incr[done + i] = math.log(nrm)
            w = z / nrm
        done += width
    return incr


def _series_sigma2(incr: np.ndarray, truncation: int) -> float:
    n = incr.size
    r = incr - incr.mean()
    gamma0 = float(r @ r) / n
    total = gamma0
    for j in range(1, truncation + 1):
        total += 2.0 * float(r[:-j] @ r[j:]) / n
    return max(total, 0.0)


def estimate_sigma2(
    law: MatrixLaw,
    x0: ChainState,
    n: int,
    n_reps: int,
    method: str,
    seed: int,
    truncation: int = 100,
    burn_in: int = 1000,
    threads: int = 1,
) -> SigmaEstimate:
    """Asymptotic variance of S_n / sqrt(n), two routes.

    batch-variance: sample variance of windowed S_n across n_reps
    replicas, divided by n.  covariance-series: variance of the
    increment plus twice the truncated autocovariance sum along one
    long trajectory of n increments.  Both report a bootstrap stderr
    (200 resamples on a fixed auxiliary stream; the series route uses
    circular blocks to respect serial dependence).
    """
    if method not in SIGMA_METHODS:
        raise InvalidInputError(f"method must be one of {SIGMA_METHODS}, got {method!r}")
    if n < 1000:
        raise InvalidInputError("n must be at least 1000")
    if not (1 <= truncation <= 100):
        raise InvalidInputError("truncation lag must lie in [1, 100]")
    n_boot = 200
    rng_boot = derive_stream(seed, BOOTSTRAP_STREAM)

    if method == "batch-variance":
        if n_reps < 2:
            raise InvalidInputError("batch-variance needs at least 2 replicas")
        z = walk_endpoint_samples(law, x0, n, n_reps, seed, threads=threads, burn_in=burn_in)
        var = float(np.var(z, ddof=1))
        if var < _DEGENERATE_VAR * n:
            return SigmaEstimate(0.0, method, 0, 0.0, degenerate=True, seed=seed)
        idx = rng_boot.integers(0, n_reps, size=(n_boot, n_reps))
        boot = np.var(z[idx], axis=1, ddof=1) / n
        return SigmaEstimate(
            sigma2=var / n,
            method=method,
            truncation=0,
            stderr=float(np.std(boot, ddof=1)),
            seed=seed,
        )

    w0 = start_direction(x0)
    rng = derive_stream(seed, 0)
    incr = _increment_series(law, w0, burn_in + n, rng)[burn_in:]
    if float(np.var(incr)) < _DEGENERATE_VAR:
        return SigmaEstimate(0.0, method, truncation, 0.0, degenerate=True, seed=seed)
    trunc = min(truncation, n - 1)
    sigma2 = _series_sigma2(incr, trunc)
    # circular block bootstrap: resample whole blocks so short-range
    # dependence survives into each pseudo-series
    block_len = min(n, max(2 * trunc, 20))
    n_blocks = (n + block_len - 1) // block_len
    starts = rng_boot.integers(0, n, size=(n_boot, n_blocks))
    offsets = np.arange(block_len)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        pos = (starts[b][:, None] + offsets[None, :]).ravel()[:n] % n
        boot[b] = _series_sigma2(incr[pos], trunc)
    return SigmaEstimate(
        sigma2=sigma2,
        method=method,
        truncation=trunc,
        stderr=float(np.std(boot, ddof=1)),
        seed=seed,
    )


def contraction_exponent(
    law: MatrixLaw,
    epsilon: float,
    n: int,
    n_reps: int,
    seed: int,
    threads: int = 1,
) -> EstimateWithCI:
    """Per-step decay rate of projective distances between paired paths.

    Estimates E[d(G_n v1, G_n v2)^eps / d(v1, v2)^eps]^(1/n) over random
    pairs at least 1e-3 apart.  A value meaningfully below 1 is the
    working proximity-contraction diagnostic; an isometry gives 1.
    """
    if not (0.0 < epsilon < 1.0):
        raise InvalidInputError(f"epsilon must lie in (0, 1), got {epsilon}")
    if n < 1 or n_reps < 2:
        raise InvalidInputError("need n >= 1 and at least 2 replicas")
    kernel = pair_distance_kernel(law, law.d, epsilon, n)
    ratios = np.concatenate(run_blocked(kernel, n_reps, seed, threads=threads))
    m = float(ratios.mean())
    se_m = float(np.std(ratios, ddof=1) / math.sqrt(n_reps))
    value = m ** (1.0 / n)
    # delta method through x -> x^(1/n)
    stderr = se_m * value / (n * m) if m > 0 else 0.0
    return EstimateWithCI(value=value, stderr=stderr, n_samples=n_reps, seed=seed)


def dump_walk_csv(path, walk: WalkPath) -> None:
    """Debug trajectory dump: one row per realized step."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "S_n", "alive"])
        for k, s in enumerate(walk.s_values, start=1):
            writer.writerow([k, repr(s), int(walk.y + s > 0.0)])
