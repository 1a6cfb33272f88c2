"""Adaptive neural-network control barrier functions.

A numpy library for safety-filtered control of systems with unknown drift
dynamics: a small feedforward/shortcut network identified online through a
least-squares adaptation law driven by a high-gain state-derivative
estimator, a QP safety filter whose constraints carry a computable
parameter-error margin, and an open-loop prediction mode that keeps the
filter running through intervals of lost state feedback.
"""

from adcbf.nn import (
    DnnArchitecture,
    WeightVector,
    activation_eval,
    forward,
    jacobian_weights,
    forward_with_jacobian,
)
from adcbf.identifier import (
    GainConfig,
    BoundConstants,
    EstimatorState,
    AdaptationState,
    GainConditionError,
    estimator_step,
    adapt_step,
    chi_theta,
    derive_bound_constants,
    forgetting_factor,
)
from adcbf.safety_filter import (
    BarrierCandidate,
    AffineBarrier,
    ConstraintRow,
    QpProblem,
    QpSolution,
    QpInfeasibleError,
    build_adcbf_rows,
    build_robust_rows,
    build_nominal_rows,
    qp_solve,
)
from adcbf.intermittent import (
    LossConstants,
    PredictorState,
    DwellTimeError,
    predictor_step,
    xtilde_envelope,
    build_no_feedback_rows,
    max_dwell_time,
    k_u_offset,
)
from adcbf.scenarios import (
    Plant,
    AccScenario,
    NonPolyScenario,
    ReferenceTrajectory,
    NoiseModel,
)
from adcbf.harness import (
    SimConfig,
    TraceRecord,
    RunSummary,
    simulate,
    compute_metrics,
    monte_carlo,
    write_trace_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
