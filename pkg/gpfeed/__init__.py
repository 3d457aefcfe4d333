"""gpfeed — Gaussian Process inverse-model feedforward for motion systems."""
from __future__ import annotations

__version__ = "1.0.0"

# Re-export the primary entry points
from gpfeed.errors import GpfeedError  # noqa: F401
from gpfeed.gp import Posterior, TrainedGP, fit, log_marginal_likelihood, predict  # noqa: F401
from gpfeed.hyperopt import OptimizationResult, OptimizerConfig, optimize  # noqa: F401
from gpfeed.kernels import HyperParams, KernelSpec, Variant, evaluate, gram  # noqa: F401
from gpfeed.nfir import (  # noqa: F401
    Dataset,
    WindowConfig,
    assemble_dataset,
    build_windows,
    reference_to_query_windows,
)
from gpfeed.pipeline import (  # noqa: F401
    EvaluationReport,
    ExperimentPlan,
    LoopSetup,
    convergence_study,
    evaluate_log,
    run_procedure,
)
from gpfeed.plantsim import (  # noqa: F401
    ClosedLoopLog,
    DiscreteTF,
    FrictionPlant,
    inverse_feedforward,
    simulate_closed_loop,
)
from gpfeed.trajectory import Trajectory, gen_third_order_reference  # noqa: F401
