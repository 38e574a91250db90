"""Simulation and estimation for products of i.i.d. random invertible matrices.

The package studies the log-norm additive walk driven by the projective
chain: matrix laws and their moment and expansion diagnostics, drift and
variance estimation, a discretized twisted direction operator with its
spectral gap and corrector series, first-passage tail and harmonic-mass
estimators with closed-form oracles, and a reproducible experiment
harness behind the cocycle-lab command.
"""

from .chain import (
    SIGMA_METHODS,
    SigmaEstimate,
    WalkPath,
    contraction_exponent,
    default_start,
    dump_walk_csv,
    estimate_sigma2,
    log_norm_direct,
    simulate_walk,
    step,
    walk_endpoint_samples,
)
from .errors import (
    ConfigError,
    DegenerateInputError,
    DiagnosticError,
    InfeasibleConditioningError,
    InvalidInputError,
    NonConvergenceError,
    NotInvertibleError,
    UnsupportedDimensionError,
)
from .exits import (
    EmpiricalCDF,
    FixedPointReport,
    HarmonicEstimate,
    TailCurve,
    conditional_cdf,
    dump_cdf_csv,
    dump_tail_csv,
    harmonic_fixed_point_report,
    harmonic_fixed_point_residual,
    harmonic_v,
    ks_statistic,
    prefactor_ratio,
    tail_curve,
)
from .harness import (
    DEFAULTS,
    SUBCOMMANDS,
    ExperimentConfig,
    RunRecord,
    config_hashes,
    load_config,
    parse_config,
    run_subcommand,
)
from .laws import (
    EstimateWithCI,
    MatrixLaw,
    P1Report,
    check_p1,
    check_p5,
    direction_set,
    estimate_lyapunov,
    finite_atomic,
    lattice_coin_law,
    point_mass,
    recenter_to_zero_lyapunov,
    rotation_law,
    sample,
    sample_entries,
    scaled_mixture,
    smooth_exponential,
)
from .matgroup import (
    ChainState,
    GroupElement,
    ProjectivePoint,
    act,
    cocycle,
    make_group_element,
    proj_distance,
    projective_point,
)
from .reference import (
    LatticeWalkSpec,
    bm_exit_band,
    bm_exit_tail,
    dump_oracle_pmf_csv,
    dump_oracle_tail_csv,
    erf,
    erfc,
    normal_cdf,
    rayleigh_cdf,
    rayleigh_median,
    srw_exit_dp,
)
from .spectral import (
    OperatorGrid,
    ThetaEstimate,
    ThetaProvider,
    discretize_operator,
    dump_grid_csv,
    dump_spectrum_json,
    estimate_theta,
    martingale_residual,
    martingale_residual_series,
    poisson_residual,
    spectral_gap,
)
from .streams import derive_stream

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
