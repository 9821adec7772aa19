"""Stochastic adaptive cubic regularisation with inexact gradients and
dynamic Hessian accuracy, plus a subsampled finite-sum instantiation."""

from .arc import (
    ArcConfig,
    ArcError,
    ArcState,
    IterationOutcome,
    Outcome,
    Report,
    TheoreticalConstants,
    TraceRecord,
    arc_iterate,
    check_step4,
    compute_ck,
    rho,
    run,
    theoretical_constants,
    update_flag,
    update_sigma,
)
from .costmeter import CostLedger
from .oracles import (
    DerivativeOracle,
    FunctionOracle,
    GradientLoopResult,
    InjectedAccuracyOracle,
    SampleSet,
    bernstein_sample_size,
    draw_sample,
    finite_difference_gradient_action,
    gradient_inner_loop,
    invert_bernstein,
    subsampled_hessian_oracle,
)
from .problem import CoupledCosine, Dataset, Quadratic, SigmoidLSQ, generate_synthetic
from .subsolver import CubicModel, SubsolverConfig, SubsolverError, SubsolverResult, minimize_model

__version__ = "0.1.0"
