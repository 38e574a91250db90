"""Transfer-operator grids, spectral diagnostics, and the corrector.

The chain's transition operator acts on functions of the direction
alone once the first step is taken, so for d = 2 it is discretized on
the half-circle: m_nodes angles uniform in [0, pi), each row built by
Monte Carlo quadrature of the twisted operator

    (Q_t f)(v) = E[ exp(i t log||g v||) f(g.v) ]

with the image direction's mass spread onto its two neighbouring grid
nodes by linear interpolation in angle (wraparound identifies pi with
0).  At t = 0 the stencil weights of each draw sum to one, so rows are
Markov up to float roundoff; for real t the entries pick up a unit
phase and |row| sums stay 1, which forces every eigenvalue modulus to
stay at or below 1.

Node i always draws from derive_stream(seed, GRID_NODE_STREAM + i), so
grids at different t share draws; eigenvalue curves t -> lambda(t) are
then smooth in t at finite Monte Carlo size, which is what makes the
small-t quadratic fit against the walk variance tight.

The corrector theta solves theta - P theta = rho.  Its series form is
theta(x) = rho(x) + sum_n E_x rho(X_n), each term estimated from the
same replicated trajectories; the sum of the post-rho terms depends on
x only through the folded direction g.v, which is what the provider
caches.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from ._batch import increment_moment_kernel, run_blocked, start_direction
from .errors import (
    DegenerateInputError,
    InvalidInputError,
    NonConvergenceError,
    UnsupportedDimensionError,
)
from .laws import MatrixLaw, sample_entries
from .matgroup import ChainState, cocycle
from .streams import GRID_NODE_STREAM, THETA_STREAM, derive_stream

__all__ = [
    "OperatorGrid",
    "ThetaEstimate",
    "ThetaProvider",
    "discretize_operator",
    "spectral_gap",
    "estimate_theta",
    "martingale_residual",
    "martingale_residual_series",
    "poisson_residual",
    "dump_grid_csv",
    "dump_spectrum_json",
]

DEFAULT_ETA0 = 0.5

# sub-streams reserved per cached corrector state (blocks 0..2^16-1)
_THETA_SLOT = 2**16

_POWER_TOL = 1e-10
_POWER_MAX_ITER = 10**5
_GROWTH_WINDOW = 64
_GROWTH_TOL = 1e-6


@dataclass(frozen=True)
class OperatorGrid:
    m_nodes: int
    angles: np.ndarray  # m_nodes angles, uniform in [0, pi)
    matrix: np.ndarray  # (m_nodes, m_nodes) complex row-quadrature entries
    t: float
    mc_per_node: int


@dataclass
class ThetaEstimate:
    """Series estimate of the corrector at one state.

    per_term[i] estimates E_x rho(X_{i+1}) (the i+1 step mean
    increment); theta is rho(x) plus their sum.  tail_bound dominates
    both the observed second-half terms and the fitted geometric
    remainder, so it is a usable truncation budget either way.
    fit_ratio is 0.0 when the late terms sat below their own Monte
    Carlo floor and no decay rate could honestly be fit.
    """

    at: ChainState
    theta: float
    truncation_n: int
    tail_bound: float
    per_term: tuple
    per_term_stderr: tuple
    stderr: float  # stderr of the summed series (from per-path totals)
    fit_ratio: float
    floor_limited: bool
    seed: int


def discretize_operator(
    law: MatrixLaw,
    t: float,
    m_nodes: int = 256,
    mc_per_node: int = 20000,
    seed: int = 0,
    eta0: float = DEFAULT_ETA0,
    threads: int = 1,
) -> OperatorGrid:
    """Monte Carlo row quadrature of the twisted direction operator."""
    if law.d != 2:
        raise UnsupportedDimensionError(
            f"operator grids need d = 2, law has d = {law.d}"
        )
    if m_nodes < 64:
        raise InvalidInputError("m_nodes must be at least 64")
    if mc_per_node < 1:
        raise InvalidInputError("mc_per_node must be positive")
    if abs(t) > eta0:
        raise InvalidInputError(f"|t| = {abs(t)} exceeds the configured bound {eta0}")
    angles = np.arange(m_nodes) * (math.pi / m_nodes)
    delta = math.pi / m_nodes

    def build_row(i: int) -> np.ndarray:
        rng = derive_stream(seed, GRID_NODE_STREAM + i)
        v = np.array([math.cos(angles[i]), math.sin(angles[i])])
        g = sample_entries(law, rng, mc_per_node)
        z = np.einsum("mij,j->mi", g, v)
        nrm = np.sqrt(np.einsum("mi,mi->m", z, z))
        phi = np.mod(np.arctan2(z[:, 1], z[:, 0]), math.pi)
        pos = phi / delta
        i0 = np.floor(pos).astype(np.int64) % m_nodes
        frac = pos - np.floor(pos)
        i1 = (i0 + 1) % m_nodes
        if t == 0.0:
            w = np.ones(mc_per_node)
        else:
            w = np.exp(1j * t * np.log(nrm))
        c0 = w * (1.0 - frac)
        c1 = w * frac
        row = np.bincount(i0, weights=c0.real, minlength=m_nodes) + np.bincount(
            i1, weights=c1.real, minlength=m_nodes
        )
        if t == 0.0:
            row = row.astype(complex)
        else:
            row = row + 1j * (
                np.bincount(i0, weights=c0.imag, minlength=m_nodes)
                + np.bincount(i1, weights=c1.imag, minlength=m_nodes)
            )
        return row / mc_per_node

    matrix = np.empty((m_nodes, m_nodes), dtype=complex)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, row in enumerate(pool.map(build_row, range(m_nodes))):
                matrix[i] = row
    else:
        for i in range(m_nodes):
            matrix[i] = build_row(i)
    return OperatorGrid(
        m_nodes=m_nodes, angles=angles, matrix=matrix, t=float(t), mc_per_node=mc_per_node
    )


def _power_leading(m: np.ndarray, tol: float, max_iter: int):
    """Leading eigenpair by power iteration; returns (eigenvalue, vector)."""
    n = m.shape[0]
    v = np.full(n, 1.0 / math.sqrt(n), dtype=complex)
    lam = 0.0 + 0.0j
    for _ in range(max_iter):
        w = m @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0 + 0.0j, v
        lam = np.vdot(v, w)  # Rayleigh quotient at the unit iterate
        residual = float(np.linalg.norm(w - lam * v))
        if residual <= tol * max(1.0, abs(lam)):
            return complex(lam), v
        v = w / nw
    raise NonConvergenceError(
        f"power iteration did not converge in {max_iter} iterations",
        residual=float(np.linalg.norm(m @ v - lam * v)),
    )


def _growth_radius(m: np.ndarray, tol: float, max_iter: int) -> float:
    """Spectral radius by per-step norm growth (geometric-mean window).

    Robust to complex pairs and to many eigenvalues sharing the top
    modulus (an isometry grid), where a single-vector power iteration
    has no limit but the growth factors still do.
    """
    n = m.shape[0]
    k = np.arange(n)
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    z = np.exp(2j * math.pi * golden * k) * (1.0 + 0.25 * np.cos(k))
    z = z / np.linalg.norm(z)
    logs = []
    prev = None
    for it in range(max_iter):
        w = m @ z
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        logs.append(math.log(nw))
        z = w / nw
        if len(logs) >= _GROWTH_WINDOW and (it + 1) % 32 == 0:
            est = math.exp(sum(logs[-_GROWTH_WINDOW:]) / _GROWTH_WINDOW)
            if prev is not None and abs(est - prev) <= _GROWTH_TOL * max(est, 1e-30):
                return est
            prev = est
    raise NonConvergenceError(
        f"norm-growth radius estimate did not settle in {max_iter} iterations",
        residual=None if prev is None else abs(math.exp(sum(logs[-_GROWTH_WINDOW:]) / _GROWTH_WINDOW) - prev),
    )


def spectral_gap(grid: OperatorGrid, tol: float = _POWER_TOL, max_iter: int = _POWER_MAX_ITER):
    """(leading eigenvalue, second eigenvalue modulus) of the grid operator.

    Power iteration for the leading pair, Wielandt deflation with the
    left eigenvector, then a norm-growth estimate of the deflated
    spectral radius.
    """
    m = grid.matrix
    lam, v = _power_leading(m, tol, max_iter)
    _, u = _power_leading(m.conj().T, tol, max_iter)
    denom = np.vdot(u, v)
    if abs(denom) < 1e-12:
        raise NonConvergenceError(
            "left/right leading eigenvectors nearly orthogonal; cannot deflate",
            residual=float(abs(denom)),
        )
    deflated = m - (lam / denom) * np.outer(v, u.conj())
    second = _growth_radius(deflated, tol, max_iter)
    return lam, second


def _per_term_moments(law, w0, n_terms, reps, seed, threads=1, first_stream=0):
    """Means and stderrs of the step-k increment, plus the summed series."""
    kernel = increment_moment_kernel(law, w0, n_terms)
    parts = run_blocked(kernel, reps, seed, threads=threads, first_stream=first_stream)
    sums = np.zeros(n_terms)
    sumsqs = np.zeros(n_terms)
    tot = 0.0
    tot_sq = 0.0
    for p_sums, p_sumsqs, p_tot, p_totsq in parts:
        sums += p_sums
        sumsqs += p_sumsqs
        tot += p_tot
        tot_sq += p_totsq
    means = sums / reps
    var = np.maximum(sumsqs / reps - means**2, 0.0)
    stderrs = np.sqrt(var / reps)
    tot_mean = tot / reps
    tot_var = max(tot_sq / reps - tot_mean**2, 0.0)
    return means, stderrs, tot_mean, math.sqrt(tot_var / reps)


def _fit_tail(means: np.ndarray, stderrs: np.ndarray):
    """Geometric fit of the last ten terms with a noise-floor guard.

    Only terms individually distinguishable from zero (|mean| above
    three of their own stderrs) enter the fit; if fewer than three of
    the window's terms clear that floor the series has converged at the
    Monte Carlo floor and no rate is claimed.  Returns
    (tail_bound, ratio, floor_limited).
    """
    n = means.size
    half = np.abs(means[(n - 1) // 2 :])
    observed_half_max = float(half.max()) if half.size else 0.0
    lo = max(0, n - 10)
    window = np.arange(lo, n)
    vals = np.abs(means[window])
    errs = stderrs[window]
    # terms numerically indistinguishable from zero never enter the fit,
    # whatever their own stderr says (a constant-increment law has
    # stderr 0 and roundoff-sized means)
    above = (vals > 3.0 * errs) & (vals > 1e-12)
    noise_ceiling = float((vals + 3.0 * errs).max())
    if int(above.sum()) < 3:
        return max(observed_half_max, noise_ceiling), 0.0, True
    steps = window[above] + 1.0  # term i estimates the (i+1)-step mean
    logs = np.log(vals[above])
    slope, intercept = np.polyfit(steps, logs, 1)
    ratio = math.exp(slope)
    if ratio >= 1.0:
        raise NonConvergenceError(
            f"per-term magnitudes show no decay (fitted ratio {ratio:.4f})",
            residual=ratio,
        )
    remainder = math.exp(intercept) * ratio ** (n + 1) / (1.0 - ratio)
    return max(observed_half_max, remainder), ratio, False


def estimate_theta(
    law: MatrixLaw,
    x: ChainState,
    truncation_n: int = 64,
    reps_per_term: int = 20000,
    seed: int = 0,
    threads: int = 1,
) -> ThetaEstimate:
    """Corrector series at x: rho(x) plus the truncated step-mean sum."""
    if not (1 <= truncation_n <= 200):
        raise InvalidInputError("truncation_n must lie in [1, 200]")
    if reps_per_term < 2:
        raise InvalidInputError("reps_per_term must be at least 2")
    w0 = start_direction(x)
    means, stderrs, tot_mean, tot_stderr = _per_term_moments(
        law, w0, truncation_n, reps_per_term, seed, threads=threads
    )
    tail_bound, ratio, floor_limited = _fit_tail(means, stderrs)
    rho_x = cocycle(x.g, x.dir)
    return ThetaEstimate(
        at=x,
        theta=rho_x + tot_mean,
        truncation_n=truncation_n,
        tail_bound=tail_bound,
        per_term=tuple(float(v) for v in means),
        per_term_stderr=tuple(float(v) for v in stderrs),
        stderr=tot_stderr,
        fit_ratio=ratio,
        floor_limited=floor_limited,
        seed=seed,
    )


class ThetaProvider:
    """Memoized corrector evaluations along a trajectory.

    The post-rho part of theta depends on the state only through the
    folded direction, so for d = 2 values are cached on angle buckets
    of width pi/4096; other dimensions recompute per state.  Each new
    bucket claims its own band of stream indices, so cached values do
    not depend on query order.  Not thread-safe: one provider per
    worker.
    """

    ANGLE_BUCKETS = 4096

    def __init__(
        self,
        law: MatrixLaw,
        truncation_n: int = 48,
        reps_per_term: int = 4000,
        seed: int = 0,
        threads: int = 1,
    ):
        if not (1 <= truncation_n <= 200):
            raise InvalidInputError("truncation_n must lie in [1, 200]")
        self.law = law
        self.truncation_n = truncation_n
        self.reps_per_term = reps_per_term
        self.seed = seed
        self.threads = threads
        self._cache = {}
        self._fresh = 0  # slot counter for unbucketed (d > 2) states

    def _bucket(self, w: np.ndarray):
        if w.size != 2:
            self._fresh += 1
            return -self._fresh
        angle = math.atan2(w[1], w[0]) % math.pi
        return int(angle / math.pi * self.ANGLE_BUCKETS) % self.ANGLE_BUCKETS

    def tail_sum(self, w: np.ndarray):
        """(sum of post-rho terms, stderr, tail_bound) at folded direction w."""
        key = self._bucket(w)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        slot = key if key >= 0 else self.ANGLE_BUCKETS + (-key)
        means, stderrs, tot_mean, tot_stderr = _per_term_moments(
            self.law,
            w,
            self.truncation_n,
            self.reps_per_term,
            self.seed,
            threads=self.threads,
            first_stream=THETA_STREAM + slot * _THETA_SLOT,
        )
        tail_bound, _, _ = _fit_tail(means, stderrs)
        entry = (tot_mean, tot_stderr, tail_bound)
        self._cache[key] = entry
        return entry

    def theta_at(self, state: ChainState):
        """(theta estimate, stderr) at a chain state."""
        w = start_direction(state)
        tot, se, _ = self.tail_sum(w)
        return cocycle(state.g, state.dir) + tot, se

    def observed_tail_sums(self):
        """All cached (value, stderr) pairs; max |value| bounds |P theta|."""
        return [(v, se) for v, se, _ in self._cache.values()]


def martingale_residual_series(
    law: MatrixLaw,
    x0: ChainState,
    y: float,
    n: int,
    provider: ThetaProvider,
    seed: int = 0,
) -> np.ndarray:
    """|S_k - M_k| for k = 1..n along one trajectory.

    M_k sums theta(X_k) - (P theta)(X_{k-1}) with (P theta)(x) obtained
    from the same series estimates through the defining equation
    P theta = theta - rho.  The level y rides along for the run record;
    the decomposition itself involves no killing.
    """
    if n < 1:
        raise InvalidInputError("n must be positive")
    rng = derive_stream(seed, 0)
    w = start_direction(x0)  # folded direction of X_0
    ptheta_prev, _, _ = provider.tail_sum(w)  # (P theta)(X_0)
    s = 0.0
    m = 0.0
    out = np.empty(n)
    for k in range(n):
        g = sample_entries(law, rng, 1)[0]
        z = g @ w
        nrm = float(np.linalg.norm(z))
        incr = math.log(nrm)
        w = z / nrm  # folded direction of X_k
        s += incr
        tail_k, _, _ = provider.tail_sum(w)
        theta_k = incr + tail_k  # rho(X_k) + series at its folded direction
        m += theta_k - ptheta_prev
        ptheta_prev = tail_k
        out[k] = abs(s - m)
    return out


def martingale_residual(
    law: MatrixLaw,
    x0: ChainState,
    y: float,
    n: int,
    provider: ThetaProvider,
    seed: int = 0,
) -> float:
    """max over k <= n of |S_k - M_k| for one trajectory."""
    return float(martingale_residual_series(law, x0, y, n, provider, seed).max())


def poisson_residual(
    law: MatrixLaw,
    x: ChainState,
    provider: ThetaProvider,
    n_outer: int = 48,
    seed: int = 0,
):
    """Two-route check of theta - P theta = rho at one state.

    theta(x) comes from the direct series; (P theta)(x) from averaging
    theta over n_outer fresh one-step transitions.  Returns (residual,
    budget): the residual is |theta(x) - P_theta(x) - rho(x)| and the
    budget is the truncation tail bound plus three propagated stderrs.
    """
    if n_outer < 2:
        raise InvalidInputError("n_outer must be at least 2")
    u = start_direction(x)
    tail_x, se_x, bound_x = provider.tail_sum(u)
    rng = derive_stream(seed, 0)
    g = sample_entries(law, rng, n_outer)
    z = np.einsum("mij,j->mi", g, u)
    nrm = np.sqrt(np.einsum("mi,mi->m", z, z))
    moved = z / nrm[:, None]
    vals = np.empty(n_outer)
    inner_se = np.empty(n_outer)
    for j in range(n_outer):
        tail_j, se_j, _ = provider.tail_sum(moved[j])
        vals[j] = math.log(nrm[j]) + tail_j
        inner_se[j] = se_j
    ptheta = float(vals.mean())
    se_outer = float(np.std(vals, ddof=1) / math.sqrt(n_outer))
    # the outer spread already carries the inner noise of distinct
    # buckets; repeated buckets share estimates, so add the mean inner
    # stderr once more rather than assuming independence
    se_total = math.sqrt(se_x**2 + se_outer**2 + float(inner_se.mean() / math.sqrt(n_outer)) ** 2)
    residual = abs(tail_x - ptheta)
    return residual, bound_x + 3.0 * se_total


def dump_grid_csv(path, grid: OperatorGrid) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "re", "im"])
        for i in range(grid.m_nodes):
            for j in range(grid.m_nodes):
                v = grid.matrix[i, j]
                writer.writerow([i, j, repr(v.real), repr(v.imag)])


def dump_spectrum_json(path, grid: OperatorGrid, leading: complex, second_modulus: float) -> None:
    payload = {
        "t": grid.t,
        "m_nodes": grid.m_nodes,
        "mc_per_node": grid.mc_per_node,
        "leading_re": leading.real,
        "leading_im": leading.imag,
        "leading_modulus": abs(leading),
        "second_modulus": second_modulus,
        "gap": 1.0 - second_modulus,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
