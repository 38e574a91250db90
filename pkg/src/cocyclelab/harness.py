"""Experiment configuration, dispatch, and reproducible run records.

Configs are TOML files with sections mirroring ExperimentConfig; every
key is validated and unknown keys are rejected by name, because a
silently ignored typo ("n_pahts = ...") is how a study quietly runs at
the wrong size.  The seed is mandatory: there is no entropy default
anywhere in the package.

A run writes two files into the output directory.  summary.json holds
the estimates only, serialized canonically, and is byte-identical
across re-runs and thread counts; its config hash covers the scientific
content of the config (everything except run.threads and
run.output_dir, which cannot influence estimates).  record.json is the
full audit record: config echo, both hashes, per-phase wall times.

When one subcommand runs several estimators, phase k draws from master
seed (seed + k) mod 2^64; distinct Philox keys give independent
streams, so phases never share random numbers.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import exits, reference, spectral
from .chain import (
    SIGMA_METHODS,
    contraction_exponent,
    default_start,
    estimate_sigma2,
)
from .errors import ConfigError, DiagnosticError, InvalidInputError
from .laws import (
    MatrixLaw,
    check_p1,
    check_p5,
    estimate_lyapunov,
    finite_atomic,
    lattice_coin_law,
    recenter_to_zero_lyapunov,
    rotation_law,
    scaled_mixture,
    smooth_exponential,
)
from .matgroup import ChainState, make_group_element, projective_point

__all__ = [
    "DEFAULTS",
    "SUBCOMMANDS",
    "ExperimentConfig",
    "RunRecord",
    "load_config",
    "parse_config",
    "config_hashes",
    "run_subcommand",
]

SUBCOMMANDS = (
    "lyapunov",
    "sigma",
    "contraction",
    "spectrum",
    "theta",
    "tail",
    "harmonic",
    "conditional",
    "oracle-check",
    "p-conditions",
)

# Every tunable lives here, not scattered through call sites.
DEFAULTS = {
    "run": {"threads": 1, "output_dir": "runs"},
    "walk": {
        "y": [5.0],
        "n_grid": [64, 128, 256, 512, 1024, 2048, 4096],
        "n_paths": 100_000,
        "n_reps": 4096,
        "burn_in": 1000,
    },
    "sigma": {"method": "batch-variance", "n": 4096, "truncation": 100},
    "spectral": {
        "eta0": 0.5,
        "m_nodes": 256,
        "mc_per_node": 20000,
        "t_grid": [0.0, 0.025, 0.05, 0.075, 0.1],
        "truncation_n": 64,
        "reps_per_term": 20000,
    },
    "conditions": {
        "delta0": 0.5,
        "delta": 0.5,
        "epsilon": 0.25,
        "n_directions": 64,
        "n_samples": 4096,
        "contraction_n": 50,
    },
    "exits": {
        "n_horizon": 512,
        "inner_horizon": 128,
        "n_outer": 128,
        "n_conditioned": 10000,
        "max_paths": 2**24,
    },
}

_LAW_KEYS = {
    "finite-atomic": {"kind", "atoms", "label", "recenter"},
    "smooth-exponential": {"kind", "d", "scale", "log_shift", "label", "recenter"},
    "scaled-mixture": {"kind", "alpha", "lambda", "base", "label", "recenter"},
    "lattice-coin": {"kind", "label", "recenter"},
    "rotation": {"kind", "beta", "label", "recenter"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    threads: int
    output_dir: str
    law: MatrixLaw
    x0: ChainState
    y: tuple
    n_grid: tuple
    n_paths: int
    n_reps: int
    burn_in: int
    sigma_method: str
    sigma_n: int
    truncation: int
    eta0: float
    m_nodes: int
    mc_per_node: int
    t_grid: tuple
    theta_truncation: int
    reps_per_term: int
    delta0: float
    delta: float
    epsilon: float
    n_directions: int
    n_samples: int
    contraction_n: int
    n_horizon: int
    inner_horizon: int
    n_outer: int
    n_conditioned: int
    max_paths: int
    raw: dict


@dataclass
class RunRecord:
    subcommand: str
    config: dict  # full echo, including run.threads / run.output_dir
    config_hash: str  # hash of the full config
    science_hash: str  # hash excluding run.threads / run.output_dir
    estimates: list
    timings: dict
    wall_time_s: float = 0.0
    files: list = field(default_factory=list)


def _reject_unknown(table: dict, allowed, where: str) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in [{where}]")


def _build_law(table: dict, where: str = "law") -> MatrixLaw:
    if "kind" not in table:
        raise ConfigError(f"[{where}] needs a 'kind'")
    kind = table["kind"]
    if kind not in _LAW_KEYS:
        raise ConfigError(
            f"[{where}] kind must be one of {sorted(_LAW_KEYS)}, got {kind!r}"
        )
    _reject_unknown(table, _LAW_KEYS[kind], where)
    label = table.get("label")
    try:
        if kind == "finite-atomic":
            atoms = table.get("atoms")
            if not atoms:
                raise ConfigError(f"[{where}] finite-atomic needs 'atoms'")
            pairs = [(entry[0], np.asarray(entry[1], dtype=float)) for entry in atoms]
            law = finite_atomic(pairs, label=label or "finite-atomic")
        elif kind == "smooth-exponential":
            law = smooth_exponential(
                table.get("d", 2),
                table.get("scale", 1.0),
                table.get("log_shift", 0.0),
                label=label,
            )
        elif kind == "scaled-mixture":
            if "base" not in table:
                raise ConfigError(f"[{where}] scaled-mixture needs a [{where}.base]")
            base = _build_law(table["base"], where=f"{where}.base")
            law = scaled_mixture(
                table.get("alpha", 0.5), table.get("lambda", math.e), base, label=label
            )
        elif kind == "lattice-coin":
            law = lattice_coin_law()
        else:
            law = rotation_law(table.get("beta", 0.7), label=label)
    except InvalidInputError as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc
    if "recenter" in table:
        law = recenter_to_zero_lyapunov(law, float(table["recenter"]))
    return law


def _section(raw: dict, name: str) -> dict:
    merged = dict(DEFAULTS.get(name, {}))
    merged.update(raw.get(name, {}))
    return merged


def _positive_int(val, key: str) -> int:
    if not isinstance(val, int) or isinstance(val, bool) or val < 1:
        raise ConfigError(f"{key} must be a positive integer, got {val!r}")
    return val


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed TOML document into an ExperimentConfig."""
    _reject_unknown(
        raw, {"run", "law", "x0", "walk", "sigma", "spectral", "conditions", "exits"}, "top level"
    )
    run = _section(raw, "run")
    _reject_unknown(run, {"seed", "threads", "output_dir"}, "run")
    if "seed" not in run:
        raise ConfigError("run.seed is mandatory; there is no entropy default")
    seed = run["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not (0 <= seed < 2**64):
        raise ConfigError(f"run.seed must be an integer in [0, 2^64), got {seed!r}")
    threads = _positive_int(run["threads"], "run.threads")

    if "law" not in raw:
        raise ConfigError("a [law] section is required")
    law = _build_law(raw["law"])

    x0_table = raw.get("x0")
    if x0_table is None:
        x0 = default_start(law.d)
    else:
        _reject_unknown(x0_table, {"matrix", "direction"}, "x0")
        try:
            g = make_group_element(np.asarray(x0_table.get("matrix", np.eye(law.d)), dtype=float))
            v = projective_point(
                np.asarray(x0_table.get("direction", np.eye(law.d)[0]), dtype=float)
            )
        except InvalidInputError as exc:
            raise ConfigError(f"[x0]: {exc}") from exc
        if g.d != law.d or v.d != law.d:
            raise ConfigError(f"[x0] dimension does not match the law (d = {law.d})")
        x0 = ChainState(g, v)

    walk = _section(raw, "walk")
    _reject_unknown(walk, set(DEFAULTS["walk"]), "walk")
    y_raw = walk["y"]
    y = tuple(float(v) for v in (y_raw if isinstance(y_raw, list) else [y_raw]))
    if not y or any(not (v > 0.0) for v in y):
        raise ConfigError(f"walk.y must be positive (a value or a sweep list), got {y_raw!r}")
    n_grid = tuple(_positive_int(v, "walk.n_grid entry") for v in walk["n_grid"])
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigError("walk.n_grid must be strictly ascending")

    sig = _section(raw, "sigma")
    _reject_unknown(sig, set(DEFAULTS["sigma"]), "sigma")
    if sig["method"] not in SIGMA_METHODS:
        raise ConfigError(f"sigma.method must be one of {SIGMA_METHODS}")

    spec = _section(raw, "spectral")
    _reject_unknown(spec, set(DEFAULTS["spectral"]), "spectral")
    eta0 = float(spec["eta0"])
    if not (eta0 > 0.0):
        raise ConfigError("spectral.eta0 must be positive")
    t_grid = tuple(float(t) for t in spec["t_grid"])
    if any(abs(t) > eta0 for t in t_grid):
        raise ConfigError("spectral.t_grid entries must satisfy |t| <= eta0")

    cond = _section(raw, "conditions")
    _reject_unknown(cond, set(DEFAULTS["conditions"]), "conditions")
    ex = _section(raw, "exits")
    _reject_unknown(ex, set(DEFAULTS["exits"]), "exits")

    return ExperimentConfig(
        seed=seed,
        threads=threads,
        output_dir=str(run["output_dir"]),
        law=law,
        x0=x0,
        y=y,
        n_grid=n_grid,
        n_paths=_positive_int(walk["n_paths"], "walk.n_paths"),
        n_reps=_positive_int(walk["n_reps"], "walk.n_reps"),
        burn_in=int(walk["burn_in"]),
        sigma_method=sig["method"],
        sigma_n=_positive_int(sig["n"], "sigma.n"),
        truncation=_positive_int(sig["truncation"], "sigma.truncation"),
        eta0=eta0,
        m_nodes=_positive_int(spec["m_nodes"], "spectral.m_nodes"),
        mc_per_node=_positive_int(spec["mc_per_node"], "spectral.mc_per_node"),
        t_grid=t_grid,
        theta_truncation=_positive_int(spec["truncation_n"], "spectral.truncation_n"),
        reps_per_term=_positive_int(spec["reps_per_term"], "spectral.reps_per_term"),
        delta0=float(cond["delta0"]),
        delta=float(cond["delta"]),
        epsilon=float(cond["epsilon"]),
        n_directions=_positive_int(cond["n_directions"], "conditions.n_directions"),
        n_samples=_positive_int(cond["n_samples"], "conditions.n_samples"),
        contraction_n=_positive_int(cond["contraction_n"], "conditions.contraction_n"),
        n_horizon=_positive_int(ex["n_horizon"], "exits.n_horizon"),
        inner_horizon=_positive_int(ex["inner_horizon"], "exits.inner_horizon"),
        n_outer=_positive_int(ex["n_outer"], "exits.n_outer"),
        n_conditioned=_positive_int(ex["n_conditioned"], "exits.n_conditioned"),
        max_paths=_positive_int(ex["max_paths"], "exits.max_paths"),
        raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return parse_config(raw)


def _canonical(obj):
    """JSON-stable form: dicts sorted, tuples to lists."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hashes(raw: dict):
    """(full hash, science hash); the latter ignores threading/output keys."""
    full = hashlib.sha256(_canonical(raw).encode()).hexdigest()
    science_raw = {k: dict(v) if isinstance(v, dict) else v for k, v in raw.items()}
    run = dict(science_raw.get("run", {}))
    run.pop("threads", None)
    run.pop("output_dir", None)
    science_raw["run"] = run
    science = hashlib.sha256(_canonical(science_raw).encode()).hexdigest()
    return full, science


def _phase_seed(config: ExperimentConfig, k: int) -> int:
    return (config.seed + k) % 2**64


# ---------------------------------------------------------------------------
# subcommand implementations; each returns (estimates, files_written)


def _cmd_lyapunov(config: ExperimentConfig, outdir: Path, timings: dict):
    est = estimate_lyapunov(
        config.law,
        start=config.x0.dir,
        n_steps=max(config.sigma_n, 1000),
        n_burnin=config.burn_in,
        n_reps=config.n_reps,
        seed=config.seed,
    )
    return [
        {
            "name": "lyapunov",
            "value": est.value,
            "stderr": est.stderr,
            "n_samples": est.n_samples,
            "seed": est.seed,
        }
    ], []


def _cmd_sigma(config: ExperimentConfig, outdir: Path, timings: dict):
    est = estimate_sigma2(
        config.law,
        config.x0,
        n=config.sigma_n,
        n_reps=config.n_reps,
        method=config.sigma_method,
        seed=config.seed,
        truncation=config.truncation,
        burn_in=config.burn_in,
        threads=config.threads,
    )
    return [
        {
            "name": "sigma2",
            "value": est.sigma2,
            "stderr": est.stderr,
            "method": est.method,
            "truncation": est.truncation,
            "degenerate": est.degenerate,
            "seed": est.seed,
        }
    ], []


def _cmd_contraction(config: ExperimentConfig, outdir: Path, timings: dict):
    est = contraction_exponent(
        config.law,
        epsilon=config.epsilon,
        n=config.contraction_n,
        n_reps=config.n_reps,
        seed=config.seed,
        threads=config.threads,
    )
    return [
        {
            "name": "contraction_exponent",
            "value": est.value,
            "stderr": est.stderr,
            "epsilon": config.epsilon,
            "n": config.contraction_n,
            "seed": est.seed,
        }
    ], []


def _cmd_spectrum(config: ExperimentConfig, outdir: Path, timings: dict):
    rows = []
    files = []
    for t in config.t_grid:
        t0 = time.perf_counter()
        grid = spectral.discretize_operator(
            config.law,
            t,
            m_nodes=config.m_nodes,
            mc_per_node=config.mc_per_node,
            seed=config.seed,
            eta0=config.eta0,
            threads=config.threads,
        )
        leading, second = spectral.spectral_gap(grid)
        timings[f"t={t:g}"] = time.perf_counter() - t0
        rows.append(
            {
                "name": "spectrum",
                "t": t,
                "leading_re": leading.real,
                "leading_im": leading.imag,
                "leading_modulus": abs(leading),
                "second_modulus": second,
                "m_nodes": config.m_nodes,
                "mc_per_node": config.mc_per_node,
                "seed": config.seed,
            }
        )
        if t == 0.0:
            path = outdir / "grid_t0.csv"
            spectral.dump_grid_csv(path, grid)
            files.append(path.name)
            path = outdir / "spectrum_t0.json"
            spectral.dump_spectrum_json(path, grid, leading, second)
            files.append(path.name)
    return rows, files


def _cmd_theta(config: ExperimentConfig, outdir: Path, timings: dict):
    est = spectral.estimate_theta(
        config.law,
        config.x0,
        truncation_n=config.theta_truncation,
        reps_per_term=config.reps_per_term,
        seed=config.seed,
        threads=config.threads,
    )
    path = outdir / "theta_terms.csv"
    with open(path, "w", newline="") as fh:
        fh.write("n,per_term,stderr\n")
        for i, (v, se) in enumerate(zip(est.per_term, est.per_term_stderr), start=1):
            fh.write(f"{i},{v!r},{se!r}\n")
    return [
        {
            "name": "theta",
            "value": est.theta,
            "stderr": est.stderr,
            "tail_bound": est.tail_bound,
            "truncation_n": est.truncation_n,
            "fit_ratio": est.fit_ratio,
            "floor_limited": est.floor_limited,
            "seed": est.seed,
        }
    ], [path.name]


def _cmd_tail(config: ExperimentConfig, outdir: Path, timings: dict):
    curve = exits.tail_curve(
        config.law,
        config.x0,
        config.y[0],
        config.n_grid,
        config.n_paths,
        seed=config.seed,
        threads=config.threads,
    )
    path = outdir / "tail.csv"
    exits.dump_tail_csv(path, curve)
    return [
        {
            "name": "tail",
            "y": config.y[0],
            "points": [list(p) for p in curve.points],
            "n_paths": curve.n_paths,
            "seed": config.seed,
        }
    ], [path.name]


def _cmd_harmonic(config: ExperimentConfig, outdir: Path, timings: dict):
    rows = []
    for k, y in enumerate(config.y):
        est = exits.harmonic_v(
            config.law,
            config.x0,
            y,
            n_horizon=config.n_horizon,
            n_paths=config.n_paths,
            seed=_phase_seed(config, k),
            threads=config.threads,
        )
        rows.append(
            {
                "name": "harmonic_v",
                "y": y,
                "value": est.v_hat,
                "stderr": est.stderr,
                "v_half": est.v_half,
                "stderr_half": est.stderr_half,
                "stabilized": est.stabilized,
                "n_horizon": est.n_horizon,
                "seed": est.seed,
            }
        )
    return rows, []


def _cmd_conditional(config: ExperimentConfig, outdir: Path, timings: dict):
    t0 = time.perf_counter()
    sigma = estimate_sigma2(
        config.law,
        config.x0,
        n=config.sigma_n,
        n_reps=config.n_reps,
        method=config.sigma_method,
        seed=_phase_seed(config, 1),
        truncation=config.truncation,
        burn_in=config.burn_in,
        threads=config.threads,
    )
    timings["sigma"] = time.perf_counter() - t0
    n = config.n_grid[-1]
    cdf = exits.conditional_cdf(
        config.law,
        config.x0,
        config.y[0],
        n,
        config.n_conditioned,
        sigma,
        seed=config.seed,
        threads=config.threads,
        max_paths=config.max_paths,
    )
    path = outdir / "conditional_cdf.csv"
    exits.dump_cdf_csv(path, cdf)
    ks = exits.ks_statistic(cdf, reference.rayleigh_cdf)
    median = float(np.median(cdf.sorted_samples))
    return [
        {
            "name": "conditional",
            "y": config.y[0],
            "n": n,
            "n_conditioned": config.n_conditioned,
            "sigma2": sigma.sigma2,
            "ks_to_rayleigh": ks,
            "median": median,
            "seed": config.seed,
        }
    ], [path.name]


def _cmd_oracle_check(config: ExperimentConfig, outdir: Path, timings: dict):
    step = math.log(2.0)
    level = max(1, round(config.y[0] / step))
    horizon = min(config.n_grid[-1], 2**14)
    spec = reference.LatticeWalkSpec(start_level=level, step_log=step, horizon=horizon)
    tail, pmf = reference.srw_exit_dp(spec)
    tail_path = outdir / "oracle_tail.csv"
    reference.dump_oracle_tail_csv(tail_path, tail)
    pmf_path = outdir / "oracle_pmf.csv"
    reference.dump_oracle_pmf_csv(pmf_path, pmf)
    probe = reference.bm_exit_tail(1.0, 1.0, 1.0) == reference.erf(1.0 / math.sqrt(2.0))
    one_sigma = reference.bm_exit_tail(step * math.sqrt(horizon), horizon, step)
    bm = reference.bm_exit_tail(level * step, horizon, step)
    dp_over_bm = tail[-1] / bm if bm > 0 else float("inf")
    band_gap = abs(
        reference.bm_exit_band(2.0, 64.0, 0.0, 50.0 * 8.0, 1.0)
        - reference.bm_exit_tail(2.0, 64.0, 1.0)
    )
    rows = [
        {
            "name": "oracle-check",
            "level": level,
            "horizon": horizon,
            "dp_tail_at_horizon": tail[-1],
            "bm_tail_at_horizon": bm,
            "dp_over_bm": dp_over_bm,
            "one_sigma_tail": one_sigma,
            "band_vs_tail_gap": band_gap,
            "identity_probe": bool(probe),
        }
    ]
    if not (abs(one_sigma - 0.682689) < 1e-4 and band_gap < 1e-9):
        raise DiagnosticError("closed-form oracle self-check failed")
    return rows, [tail_path.name, pmf_path.name]


def _cmd_p_conditions(config: ExperimentConfig, outdir: Path, timings: dict):
    p1 = check_p1(config.law, config.delta0, n_samples=config.n_samples, seed=config.seed)
    p5 = check_p5(
        config.law,
        config.delta,
        n_directions=config.n_directions,
        n_samples=config.n_samples,
        seed=_phase_seed(config, 1),
    )
    contraction = contraction_exponent(
        config.law,
        epsilon=config.epsilon,
        n=config.contraction_n,
        n_reps=config.n_reps,
        seed=_phase_seed(config, 2),
        threads=config.threads,
    )
    rows = [
        {
            "name": "p-conditions",
            "p1_moment": p1.value,
            "p1_stderr": p1.stderr,
            "p1_max_log_norm": p1.max_log_norm,
            "p1_heavy_tail": p1.heavy_tail,
            "p5_min_prob": p5,
            "delta0": config.delta0,
            "delta": config.delta,
            "contraction": contraction.value,
            "contraction_stderr": contraction.stderr,
            "seed": config.seed,
        }
    ]
    if p5 == 0.0:
        raise _Flagged(rows, "the uniform-expansion probability estimate is 0")
    if p1.heavy_tail:
        raise _Flagged(rows, "the moment check flagged a heavy tail at this sample size")
    return rows, []


class _Flagged(DiagnosticError):
    """Diagnostic failure that still has estimates worth writing."""

    def __init__(self, rows, message):
        super().__init__(message)
        self.rows = rows


_DISPATCH = {
    "lyapunov": _cmd_lyapunov,
    "sigma": _cmd_sigma,
    "contraction": _cmd_contraction,
    "spectrum": _cmd_spectrum,
    "theta": _cmd_theta,
    "tail": _cmd_tail,
    "harmonic": _cmd_harmonic,
    "conditional": _cmd_conditional,
    "oracle-check": _cmd_oracle_check,
    "p-conditions": _cmd_p_conditions,
}


def run_subcommand(name: str, config: ExperimentConfig) -> RunRecord:
    """Run one experiment and write summary.json / record.json.

    Estimates in summary.json are a pure function of the scientific
    config; errors raised from here carry the config hash.
    """
    if name not in _DISPATCH:
        raise ConfigError(f"unknown subcommand {name!r}; choose from {SUBCOMMANDS}")
    full_hash, science_hash = config_hashes(config.raw)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    start = time.perf_counter()
    try:
        estimates, files = _DISPATCH[name](config, outdir, timings)
    except _Flagged as exc:
        _write_outputs(name, config, exc.rows, [], timings, start, full_hash, science_hash, outdir)
        exc.config_hash = full_hash
        raise
    except Exception as exc:
        exc.config_hash = full_hash
        raise
    record = _write_outputs(
        name, config, estimates, files, timings, start, full_hash, science_hash, outdir
    )
    return record


def _write_outputs(name, config, estimates, files, timings, start, full_hash, science_hash, outdir):
    wall = time.perf_counter() - start
    summary = {
        "subcommand": name,
        "config_hash": science_hash,
        "estimates": estimates,
    }
    summary_path = outdir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    record = RunRecord(
        subcommand=name,
        config=config.raw,
        config_hash=full_hash,
        science_hash=science_hash,
        estimates=estimates,
        timings=dict(timings),
        wall_time_s=wall,
        files=[summary_path.name, "record.json", *files],
    )
    record_path = outdir / "record.json"
    with open(record_path, "w") as fh:
        json.dump(
            {
                "subcommand": record.subcommand,
                "config": record.config,
                "config_hash": record.config_hash,
                "science_hash": record.science_hash,
                "estimates": record.estimates,
                "timings": record.timings,
                "wall_time_s": record.wall_time_s,
                "files": record.files,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return record
