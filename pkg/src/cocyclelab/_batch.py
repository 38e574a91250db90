"""Blocked Monte Carlo engine shared by the replica-parallel estimators.

Paths are simulated in fixed-size blocks.  Block i draws from
derive_stream(master_seed, first_stream + i) and per-block payloads are
reduced in block-index order, so every estimate is byte-identical for
any thread count; threads change wall time only.  Within a block the
walk is vectorized across paths: one law draw of the current block
width per step, directions renormalized every step, log-norms
accumulated (raw products overflow long before the horizons used here).

Exit-walk blocks compact away dead paths, so law draws are consumed
only for paths still alive, in path order.  That consumption schedule
is part of the reproducibility contract of each estimator seed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .laws import MatrixLaw, sample_entries
from .matgroup import ChainState
from .streams import derive_stream

BLOCK = 4096

__all__ = [
    "BLOCK",
    "ExitBlockResult",
    "run_blocked",
    "start_direction",
    "exit_block_kernel",
    "free_walk_kernel",
    "increment_moment_kernel",
    "pair_distance_kernel",
]


def block_sizes(n_items: int) -> list:
    n_full, rem = divmod(n_items, BLOCK)
    sizes = [BLOCK] * n_full
    if rem:
        sizes.append(rem)
    return sizes


def run_blocked(kernel, n_items: int, seed: int, threads: int = 1, first_stream: int = 0):
    """Run kernel(rng, m) over blocks covering n_items; payloads in block order."""
    sizes = block_sizes(n_items)

    def one(i):
        rng = derive_stream(seed, first_stream + i)
        return kernel(rng, sizes[i])

    if threads <= 1 or len(sizes) <= 1:
        return [one(i) for i in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(len(sizes))))


def start_direction(x0: ChainState) -> np.ndarray:
    """Direction the first sampled matrix acts on: the start state folded once."""
    z = x0.g.entries @ x0.dir.rep
    return z / np.linalg.norm(z)


def _advance(g: np.ndarray, w: np.ndarray):
    """One vectorized step: returns (new unit directions, log-norm increments)."""
    z = np.einsum("mij,mj->mi", g, w)
    nrm = np.sqrt(np.einsum("mi,mi->m", z, z))
    return z / nrm[:, None], np.log(nrm)


@dataclass
class ExitBlockResult:
    n_paths: int
    counts: np.ndarray  # paths alive at each checkpoint
    sums: np.ndarray  # sum of y + S over alive paths, per checkpoint
    sumsqs: np.ndarray
    cross: dict = field(default_factory=dict)  # (i, j) -> sum of Z_i * Z_j over paths
    values: dict = field(default_factory=dict)  # checkpoint position -> survivor y + S


def exit_block_kernel(law, w0, y, checkpoints, collect=(), cross=()):
    """Kernel for the killed walk y + S_n, recording at the given horizons.

    checkpoints is a sorted tuple of step counts.  At each checkpoint the
    block reports how many paths are still alive and the sum and sum of
    squares of y + S_n over them (dead paths contribute zero, matching
    the expectation E[(y + S_n); alive]).  `collect` lists checkpoint
    positions whose survivor values are returned whole; `cross` lists
    (earlier, later) checkpoint position pairs for which the sum of
    products of the per-path killed values is accumulated, giving exact
    covariances between horizons.
    """
    checkpoints = tuple(checkpoints)
    n_cp = len(checkpoints)
    collect = frozenset(collect)
    cross = tuple(cross)
    snapshot_positions = frozenset(i for i, _ in cross)

    def kernel(rng, m):
        w = np.tile(w0, (m, 1))
        s = np.full(m, float(y))
        res = ExitBlockResult(
            n_paths=m,
            counts=np.zeros(n_cp, dtype=np.int64),
            sums=np.zeros(n_cp),
            sumsqs=np.zeros(n_cp),
        )
        snapshots = {}
        ci = 0
        for step_i in range(1, checkpoints[-1] + 1):
            if s.size:
                g = sample_entries(law, rng, s.size)
                w, incr = _advance(g, w)
                s = s + incr
                keep = s > 0.0
                if not keep.all():
                    w = w[keep]
                    s = s[keep]
                    for pos in list(snapshots):
                        snapshots[pos] = snapshots[pos][keep]
            while ci < n_cp and checkpoints[ci] == step_i:
                res.counts[ci] = s.size
                res.sums[ci] = s.sum()
                res.sumsqs[ci] = (s * s).sum()
                if ci in collect:
                    res.values[ci] = s.copy()
                if ci in snapshot_positions:
                    snapshots[ci] = s.copy()
                for pair in cross:
                    if pair[1] == ci:
                        res.cross[pair] = float((snapshots[pair[0]] * s).sum())
                ci += 1
        return res

    return kernel


def free_walk_kernel(law, w0, checkpoints):
    """Kernel for the unkilled walk: per-path S_n at each checkpoint.

    Returns an (n_checkpoints, m) array of partial sums; used by the
    batch variance estimator and by distribution-shape tests.
    """
    checkpoints = tuple(checkpoints)
    n_cp = len(checkpoints)

    def kernel(rng, m):
        w = np.tile(w0, (m, 1))
        s = np.zeros(m)
        out = np.empty((n_cp, m))
        ci = 0
        for step_i in range(1, checkpoints[-1] + 1):
            g = sample_entries(law, rng, m)
            w, incr = _advance(g, w)
            s = s + incr
            while ci < n_cp and checkpoints[ci] == step_i:
                out[ci] = s
                ci += 1
        return out

    return kernel


def increment_moment_kernel(law, w0, n_steps):
    """Kernel accumulating per-step increment sums and sums of squares.

    Step k's statistics aggregate the cocycle increment of the k-th
    transition across the block's paths; blocks add, so the caller
    recovers the mean and stderr of the increment at each step count.
    The per-path grand totals (S at n_steps) and their squares come
    along too, giving an honest stderr for the summed series.
    """

    def kernel(rng, m):
        w = np.tile(w0, (m, 1))
        s = np.zeros(m)
        sums = np.empty(n_steps)
        sumsqs = np.empty(n_steps)
        for k in range(n_steps):
            g = sample_entries(law, rng, m)
            w, incr = _advance(g, w)
            s += incr
            sums[k] = incr.sum()
            sumsqs[k] = (incr * incr).sum()
        return sums, sumsqs, float(s.sum()), float((s * s).sum())

    return kernel


def pair_distance_kernel(law, d: int, epsilon: float, n_steps: int, min_dist: float = 1e-3):
    """Kernel for the two-point contraction diagnostic.

    Each replica draws a direction pair at least min_dist apart, evolves
    both directions under the same matrix sequence, and reports the
    ratio d(G_n v1, G_n v2)^eps / d(v1, v2)^eps.  Pair draws come from
    the block's own stream, before any walk draws.
    """

    def kernel(rng, m):
        w1 = np.empty((m, d))
        w2 = np.empty((m, d))
        need = np.arange(m)
        while need.size:
            a = rng.standard_normal((need.size, d))
            b = rng.standard_normal((need.size, d))
            a /= np.linalg.norm(a, axis=1, keepdims=True)
            b /= np.linalg.norm(b, axis=1, keepdims=True)
            dist = np.sqrt(np.clip(1.0 - np.einsum("mi,mi->m", a, b) ** 2, 0.0, 1.0))
            ok = dist >= min_dist
            w1[need[ok]] = a[ok]
            w2[need[ok]] = b[ok]
            need = need[~ok]
        d0 = np.sqrt(np.clip(1.0 - np.einsum("mi,mi->m", w1, w2) ** 2, 0.0, 1.0))
        for _ in range(n_steps):
            g = sample_entries(law, rng, m)
            w1, _ = _advance(g, w1)
            w2, _ = _advance(g, w2)
        dn = np.sqrt(np.clip(1.0 - np.einsum("mi,mi->m", w1, w2) ** 2, 0.0, 1.0))
        return (dn / d0) ** epsilon

    return kernel
