"""Monte Carlo simulator of a continuously monitored single-photon source.

A three-level emitter in a leaky cavity is monitored continuously; the
noisy record is reduced to an affine minimum-mean-squared-error estimate of
the emitter's transition time, which drives a variable output delay.  The
package quantifies how much that feed-forward correction improves the
two-photon (Hong-Ou-Mandel) indistinguishability of the source.
"""

from .errors import (
    ConfigError,
    DegenerateDenominator,
    DelayOutOfRange,
    EmptyBatch,
    InvalidParams,
    InvariantViolation,
    NumericalBlowup,
    RecordUndefined,
    SimulationError,
)
from .model import (
    BasisState,
    OperatorSet,
    Params,
    ValidationReport,
    build_operators,
    check_density,
    initial_state,
    validate_params,
)
from .liouville import (
    DeterministicSeries,
    LindbladGenerator,
    Propagator,
    default_horizon,
    evolve_deterministic,
    lindblad_rhs,
    liouvillian_matrix,
    propagator,
    propagator_cache,
    rk4_step,
)
from .trajectory import (
    NoiseStream,
    TrajectoryOutcome,
    derive_seed,
    gaussian_increment,
    simulate_trajectory,
    sme_step,
)
from .estimator import (
    AmmseCoefficients,
    DelayPolicy,
    PriorMoments,
    ammse_coeffs,
    apply_delay_policy,
    calibrate_reference,
    estimate_transition_time,
    prior_moments,
)
from .correlators import (
    CorrelationEnsemble,
    CorrelationGrid,
    assemble_ensemble,
    deterministic_correlations,
    population_series,
    regression_g1,
)
from .hom import (
    HomResult,
    coincidence_probability,
    coincidence_probability_expanded,
    emission_probability,
)
from .experiments import (
    CaseResult,
    ExperimentConfig,
    ImprovementRow,
    load_config,
    run_case,
    sweep_gamma2,
    write_results,
)

__version__ = "0.1.0"
