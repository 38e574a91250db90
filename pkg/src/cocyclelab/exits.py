"""Exit-time statistics of the killed walk y + S_n.

Everything here estimates one of four quantities: the survival tail
P(tau_y > n), the harmonic function V(x, y) as the stabilized limit of
E[(y + S_n); tau_y > n], the ratio of the observed tail to its
predicted asymptote 2 V / (sigma sqrt(2 pi n)), and the law of the
rescaled surviving endpoint (y + S_n) / (sigma sqrt (n)).

Tail curves evaluate all horizons on one shared path set, so the
survival events are nested and the reported curve is non-increasing
exactly, not merely in expectation.  Conditional sampling is plain
rejection: blocks of paths are run to the horizon and the survivors
kept, with a rate guard so a hopeless conditioning fails fast instead
of burning the path budget.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._batch import BLOCK, ExitBlockResult, exit_block_kernel, run_blocked, start_direction
from .chain import SigmaEstimate
from .errors import (
    DegenerateInputError,
    InfeasibleConditioningError,
    InvalidInputError,
)
from .laws import MatrixLaw, sample_entries
from .matgroup import ChainState
from .streams import OUTER_STREAM, derive_stream

__all__ = [
    "TailCurve",
    "HarmonicEstimate",
    "FixedPointReport",
    "EmpiricalCDF",
    "tail_curve",
    "harmonic_v",
    "harmonic_fixed_point_report",
    "harmonic_fixed_point_residual",
    "prefactor_ratio",
    "conditional_cdf",
    "ks_statistic",
    "dump_tail_csv",
    "dump_cdf_csv",
]

# a conditioning whose acceptance rate sits below this is refused
MIN_ACCEPTANCE = 1e-6
# paths to spend before trusting the acceptance-rate estimate
_RATE_CHECK_PATHS = 2**20

# inner runs of the fixed-point estimator claim stream bands above the
# direct run's blocks; band width bounds each run to 2^20 blocks
_INNER_BAND = 2**20


@dataclass(frozen=True)
class TailCurve:
    x0: ChainState
    y: float
    points: tuple  # of (n, p_hat, stderr)
    n_paths: int
    seed: int = 0


@dataclass(frozen=True)
class HarmonicEstimate:
    x0: ChainState
    y: float
    n_horizon: int
    v_hat: float
    stderr: float
    stabilized: bool
    v_half: float
    stderr_half: float
    n_paths: int
    seed: int = 0


@dataclass(frozen=True)
class FixedPointReport:
    residual: float  # |nested - direct| / direct
    budget: float  # 3 propagated stderrs, relative
    v_direct: float
    v_nested: float
    stderr_direct: float
    stderr_nested: float
    n_outer: int


@dataclass(frozen=True)
class EmpiricalCDF:
    sorted_samples: np.ndarray
    n: int

    def __call__(self, x: float) -> float:
        return float(np.searchsorted(self.sorted_samples, x, side="right")) / self.n


def _merge_exit_blocks(parts) -> ExitBlockResult:
    total = ExitBlockResult(
        n_paths=0,
        counts=np.zeros_like(parts[0].counts),
        sums=np.zeros_like(parts[0].sums),
        sumsqs=np.zeros_like(parts[0].sumsqs),
    )
    for p in parts:
        total.n_paths += p.n_paths
        total.counts += p.counts
        total.sums += p.sums
        total.sumsqs += p.sumsqs
        for key, val in p.cross.items():
            total.cross[key] = total.cross.get(key, 0.0) + val
    return total


def tail_curve(
    law: MatrixLaw,
    x0: ChainState,
    y: float,
    n_grid,
    n_paths: int,
    seed: int = 0,
    threads: int = 1,
) -> TailCurve:
    """Survival probabilities at each horizon, one shared path set."""
    if not (y > 0.0):
        raise InvalidInputError(f"start level y must be positive, got {y}")
    grid = [int(n) for n in n_grid]
    if not grid or any(n < 1 for n in grid):
        raise InvalidInputError("n_grid must be non-empty positive counts")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidInputError("n_grid must be strictly ascending")
    if n_paths < 1:
        raise InvalidInputError("n_paths must be positive")
    kernel = exit_block_kernel(law, start_direction(x0), y, grid)
    total = _merge_exit_blocks(run_blocked(kernel, n_paths, seed, threads=threads))
    points = []
    for n, alive in zip(grid, total.counts):
        p = alive / n_paths
        stderr = math.sqrt(p * (1.0 - p) / n_paths)
        points.append((n, float(p), float(stderr)))
    return TailCurve(x0=x0, y=float(y), points=tuple(points), n_paths=n_paths, seed=seed)


def _killed_moments(total: ExitBlockResult, idx: int):
    """Mean and stderr of (y + S_n) 1{alive} at checkpoint idx."""
    n = total.n_paths
    mean = total.sums[idx] / n
    var = max(total.sumsqs[idx] / n - mean * mean, 0.0)
    return mean, math.sqrt(var / n)


def harmonic_v(
    law: MatrixLaw,
    x0: ChainState,
    y: float,
    n_horizon: int,
    n_paths: int,
    seed: int = 0,
    threads: int = 1,
) -> HarmonicEstimate:
    """Truncated-horizon estimate of V with a two-horizon stability check.

    The run reports the estimate at n_horizon and at n_horizon/2 from
    the same paths; the flag is set when the two differ by more than
    three stderrs of their (exactly computed) difference, meaning the
    horizon cannot yet be trusted as the limit.
    """
    if not (y > 0.0):
        raise InvalidInputError(f"start level y must be positive, got {y}")
    if n_horizon < 2:
        raise InvalidInputError("n_horizon must be at least 2")
    if n_paths < 2:
        raise InvalidInputError("n_paths must be at least 2")
    half = n_horizon // 2
    kernel = exit_block_kernel(
        law, start_direction(x0), y, (half, n_horizon), cross=((0, 1),)
    )
    total = _merge_exit_blocks(run_blocked(kernel, n_paths, seed, threads=threads))
    v_half, se_half = _killed_moments(total, 0)
    v_hat, se = _killed_moments(total, 1)
    cov = total.cross[(0, 1)] / n_paths - v_half * v_hat
    var_diff = max(se_half**2 + se**2 - 2.0 * cov / n_paths, 0.0)
    stabilized = abs(v_hat - v_half) <= 3.0 * math.sqrt(var_diff)
    return HarmonicEstimate(
        x0=x0,
        y=float(y),
        n_horizon=n_horizon,
        v_hat=float(v_hat),
        stderr=float(se),
        stabilized=bool(stabilized),
        v_half=float(v_half),
        stderr_half=float(se_half),
        n_paths=n_paths,
        seed=seed,
    )


def _v_at_horizon(law, w0, y, horizon, n_paths, seed, threads, first_stream=0):
    kernel = exit_block_kernel(law, w0, y, (horizon,))
    total = _merge_exit_blocks(
        run_blocked(kernel, n_paths, seed, threads=threads, first_stream=first_stream)
    )
    return _killed_moments(total, 0)


def harmonic_fixed_point_report(
    law: MatrixLaw,
    x0: ChainState,
    y: float,
    n_paths: int,
    inner_horizon: int,
    seed: int = 0,
    n_outer: int = 128,
    threads: int = 1,
) -> FixedPointReport:
    """One-step harmonicity check on the finite-horizon estimates.

    At horizon m the truncated estimates satisfy the exact identity
    E[V_m(X_1, y + S_1); tau_y > 1] = V_{m+1}(x, y), so the nested
    average over n_outer one-step draws (inner estimates at horizon m)
    is compared against the direct estimate at horizon m + 1; any gap
    beyond Monte Carlo noise is a real defect.
    """
    if not (y > 0.0):
        raise InvalidInputError(f"start level y must be positive, got {y}")
    if inner_horizon < 2 or n_paths < 2 or n_outer < 2:
        raise InvalidInputError("inner_horizon, n_paths, n_outer must all be >= 2")
    u = start_direction(x0)
    v_x, se_x = _v_at_horizon(law, u, y, inner_horizon + 1, n_paths, seed, threads)
    if v_x <= 0.0:
        raise DegenerateInputError(
            f"direct estimate of V is {v_x}; no mass survives to the horizon"
        )
    rng = derive_stream(seed, OUTER_STREAM)
    g = sample_entries(law, rng, n_outer)
    z = np.einsum("mij,j->mi", g, u)
    nrm = np.sqrt(np.einsum("mi,mi->m", z, z))
    moved = z / nrm[:, None]
    y1 = y + np.log(nrm)
    vals = np.zeros(n_outer)
    for j in range(n_outer):
        if y1[j] > 0.0:
            vals[j], _ = _v_at_horizon(
                law,
                moved[j],
                float(y1[j]),
                inner_horizon,
                n_paths,
                seed,
                threads,
                first_stream=(j + 1) * _INNER_BAND,
            )
    nested = float(vals.mean())
    se_nested = float(np.std(vals, ddof=1) / math.sqrt(n_outer))
    residual = abs(nested - v_x) / v_x
    budget = 3.0 * math.sqrt(se_nested**2 + se_x**2) / v_x
    return FixedPointReport(
        residual=float(residual),
        budget=float(budget),
        v_direct=float(v_x),
        v_nested=nested,
        stderr_direct=float(se_x),
        stderr_nested=se_nested,
        n_outer=n_outer,
    )


def harmonic_fixed_point_residual(
    law: MatrixLaw,
    x0: ChainState,
    y: float,
    n_paths: int,
    inner_horizon: int,
    seed: int = 0,
    n_outer: int = 128,
    threads: int = 1,
) -> float:
    """Relative one-step residual |E[V(X_1, y+S_1); tau>1] - V(x,y)| / V."""
    return harmonic_fixed_point_report(
        law, x0, y, n_paths, inner_horizon, seed, n_outer=n_outer, threads=threads
    ).residual


def prefactor_ratio(tail: TailCurve, v: HarmonicEstimate, sigma: SigmaEstimate):
    """Observed tail over the predicted 2V/(sigma sqrt(2 pi n)) asymptote.

    Returns a list of (n, ratio, stderr) with the p_hat, v_hat and
    sigma2 uncertainties propagated in quadrature; the largest-n entry
    is the headline number.
    """
    if sigma.sigma2 <= 0.0:
        raise InvalidInputError("sigma estimate is degenerate (sigma2 <= 0)")
    if v.v_hat <= 0.0:
        raise DegenerateInputError("harmonic estimate is nonpositive")
    sig = math.sqrt(sigma.sigma2)
    rel_v = v.stderr / v.v_hat
    rel_sig = sigma.stderr / (2.0 * sigma.sigma2)
    out = []
    for n, p, se_p in tail.points:
        ratio = p * sig * math.sqrt(2.0 * math.pi * n) / (2.0 * v.v_hat)
        if p > 0.0:
            stderr = ratio * math.sqrt((se_p / p) ** 2 + rel_v**2 + rel_sig**2)
        else:
            stderr = 0.0
        out.append((n, float(ratio), float(stderr)))
    return out


def conditional_cdf(
    law: MatrixLaw,
    x0: ChainState,
    y: float,
    n: int,
    n_conditioned: int,
    sigma: SigmaEstimate,
    seed: int = 0,
    threads: int = 1,
    max_paths: int = 2**24,
    progress: Optional[Callable[[int, int], None]] = None,
) -> EmpiricalCDF:
    """Rescaled surviving endpoints (y + S_n)/(sigma sqrt n) by rejection.

    Path blocks run until exactly n_conditioned survivors accumulate,
    in block order, so the sample set is seed-reproducible.  If the
    acceptance rate estimate drops below MIN_ACCEPTANCE (after a
    fair trial) or max_paths is exhausted first, the run aborts with
    the estimated rate rather than grinding on.
    """
    if not (y > 0.0):
        raise InvalidInputError(f"start level y must be positive, got {y}")
    if n < 1 or n_conditioned < 1:
        raise InvalidInputError("n and n_conditioned must be positive")
    if sigma.sigma2 <= 0.0:
        raise InvalidInputError("sigma estimate is degenerate (sigma2 <= 0)")
    scale = math.sqrt(sigma.sigma2) * math.sqrt(n)
    kernel = exit_block_kernel(law, start_direction(x0), y, (n,), collect=(0,))
    collected = []
    n_collected = 0
    paths_done = 0
    next_block = 0
    chunk = max(threads, 1) * 4
    while n_collected < n_conditioned:
        if paths_done >= max_paths:
            rate = n_collected / paths_done
            raise InfeasibleConditioningError(
                f"path budget {max_paths} exhausted with {n_collected} of "
                f"{n_conditioned} survivors (acceptance rate ~ {rate:.3g})",
                rate=rate,
            )
        take = min(chunk * BLOCK, max_paths - paths_done)
        parts = run_blocked(kernel, take, seed, threads=threads, first_stream=next_block)
        next_block += (take + BLOCK - 1) // BLOCK
        for p in parts:
            collected.append(p.values[0])
            n_collected += p.values[0].size
        paths_done += take
        if progress is not None:
            progress(min(n_collected, n_conditioned), paths_done)
        if paths_done >= _RATE_CHECK_PATHS:
            rate = n_collected / paths_done
            if rate < MIN_ACCEPTANCE and n_collected < n_conditioned:
                raise InfeasibleConditioningError(
                    f"acceptance rate ~ {rate:.3g} is below the feasibility "
                    f"floor {MIN_ACCEPTANCE:g} after {paths_done} paths",
                    rate=rate,
                )
    values = np.concatenate(collected)[:n_conditioned] / scale
    return EmpiricalCDF(sorted_samples=np.sort(values), n=n_conditioned)


def ks_statistic(cdf: EmpiricalCDF, reference: Callable[[float], float]) -> float:
    """Exact two-sided Kolmogorov-Smirnov distance to a reference CDF.

    Checks both one-sided gaps at every sample point, which is where
    the sup of a step-vs-continuous comparison is attained.
    """
    if cdf.n < 1:
        raise InvalidInputError("empirical CDF has no samples")
    ref = np.array([reference(float(x)) for x in cdf.sorted_samples])
    i = np.arange(1, cdf.n + 1)
    d_plus = float((i / cdf.n - ref).max())
    d_minus = float((ref - (i - 1) / cdf.n).max())
    return max(d_plus, d_minus, 0.0)


def dump_tail_csv(path, tail: TailCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "p_hat", "stderr"])
        for n, p, se in tail.points:
            writer.writerow([n, repr(p), repr(se)])


def dump_cdf_csv(path, cdf: EmpiricalCDF) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "cdf"])
        for i, x in enumerate(cdf.sorted_samples, start=1):
            writer.writerow([repr(float(x)), repr(i / cdf.n)])
