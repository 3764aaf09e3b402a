"""Minimax risk classification with 0-1 loss and certified error bounds."""

__version__ = "0.1.0"

from .dataset import (Dataset, DataError, NormalizationStats, apply_normalizer,
                      fit_normalizer, load_csv, save_csv, stratified_split)
from .features import (FeatureMapSpec, default_sigma, feature_map, identity_spec,
                       rff_spec, scalar_features)
from .estimate import (UncertaintySet, ensure_feasible, lambda_bernstein,
                       lambda_hoeffding, lambda_practical, lambda_rademacher,
                       mean_vector)
from .objective import (PiecewiseLinearProblem, build_fixed_marginal_problem,
                        build_learning_problem, build_lower_bound_problem,
                        build_upper_bound_problem, phi, phi_at_x)
from .solver import (DivergenceError, SolverConfig, SolverError, SolverRun,
                     UnboundedObjectiveError, solve, solve_asm, solve_bsm,
                     solve_easm, solve_easm_restart, solve_lp, subgradient)
from .classifier import (MrcModel, bounds_for_rule, diagnostics, epsilon_s,
                         evaluate, exact_risk_finite, fixed_marginal_proba,
                         high_confidence_bounds, load_model, predict,
                         predict_proba, save_model, train)
