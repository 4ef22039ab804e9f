"""Solvers and benchmarks for multi-objective bilevel problems.

The package couples a single-loop first-order solver and two baselines
(truncated implicit differentiation, an unrolled learned variant) with an
exactly solvable quadratic problem family, reference-front sweeps,
front-quality metrics, and a seeded experiment harness.
"""

from .direction import (DirectionResult, min_norm_simplex, project_simplex,
                        solve_x_subproblem, stationarity_residual)
from .gmoba import RunRecord, SolverConfig, SolverState, gmoba_step, hypergradient_error, lyapunov, solve
from .harness import (CampaignResult, ConfigError, ExperimentConfig, config_from_mapping,
                      emit, load_config, parse_config_text, recompute_metrics,
                      resolve_threads, run_campaign, summary_dict)
from .l2o import (L2OParams, TrainConfig, TrainResult, init_params, l2o_forward,
                  l2o_then_gmoba, load_params, loss, loss_gradient, save_params, train)
from .metrics import (MetricsReport, compute_report, dp, feasibility, gd, purity,
                      sp, spread_delta, spread_gamma)
from .moml import MomlConfig, itd_hypergradient, moml_solve
from .pareto_front import (ParetoFront, load_front_csv, nondominated_filter,
                           save_front_csv, scalarized_solution, sweep_front)
from .problem import (MobloProblem, ProblemConstants, ProblemDims, QuadraticInstance,
                      StepBounds, compute_constants, generate_instance, load_instance,
                      recommend_steps)
from .seeding import derive_seed

__version__ = "0.1.0"
