"""Birth-death particle systems in mean-field interaction.

Exact event-driven simulation of the N-particle system and its explicit
coupling, the nonlinear master equation on a truncated state space, and
experiments that measure contraction rates, propagation-of-chaos scaling,
empirical-measure convergence, and the Lyapunov drift.
"""

from ._kernels import HAVE_COMPILED
from .analysis import (
    ExperimentResult,
    LyapunovAudit,
    chaos_experiment,
    empirical_convergence,
    fit_decay_rate,
    lyapunov_audit,
    stationary_comparison,
)
from .coupling import (
    CoupledState,
    build_event_table,
    coupled_distance_curve,
    coupled_step,
    drift_report,
    marginality_audit,
    marginality_report,
)
from .meanfield import (
    MomentCertificate,
    NonlinearFlow,
    exp_moment_certificate,
    fixed_point,
    integrate_flow,
    master_rhs,
    simulate_nonlinear,
    verify_certificate,
)
from .measure import (
    DistN,
    EmpiricalMeasure,
    empirical_to_dist,
    first_moment,
    lipschitz_integral,
    w1_dist,
    w1_oracle,
)
from .rates import (
    AssumptionReport,
    MeanField,
    NoInteraction,
    QuadraticPairwise,
    RateModel,
    check_assumption_A,
    check_assumption_B,
    check_condition_eq14,
    effective_rates,
    linear_attraction,
    mm_inf_model,
    power_model,
    resolve_constants,
)
from .ssa import (
    ParticleState,
    SimClock,
    Trajectory,
    simulate,
    simulate_replicas,
    step,
    total_event_rate,
)

__version__ = "0.1.0"
