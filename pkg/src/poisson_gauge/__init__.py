"""Generalized Poisson equation solver for arbitrary finite Markov reward processes.

Works on reducible and periodic chains by removing the peripheral (non-decaying)
modes with an anchor gauge, then running projected stochastic approximation.
"""
from .chain import (
    ChainValidationError,
    Mrp,
    Purpose,
    Sampler,
    SamplerState,
    StreamLabel,
    ValidationReport,
    abs4,
    cesaro_gain,
    load_chain,
    sample_next,
    save_chain,
    swap2,
    validate,
)
from .structure import (
    ChainStructure,
    SupportGraph,
    analyze_structure,
    exact_structure,
    exact_support_graph,
    learn_support_graph,
    min_positive_probability,
    required_k,
)
from .gauge import (
    GaugeMap,
    PhaseWeights,
    apply_gauge,
    build_gauge,
    estimate_weights,
    exact_weights,
    gauge_deviation,
    required_m,
)
from .solver import (
    ResidualEstimate,
    SaConfig,
    SolveTrace,
    StepSchedule,
    anchor_only_td,
    estimate_residual,
    gain_profile,
    projected_sa,
    unprojected_td,
)
from .oracle import (
    ExactSolution,
    QuotientDiagnostics,
    exact_solve,
    quotient_diagnostics,
    return_identity_check,
    transient_cost_check,
)

__version__ = "0.1.0"
