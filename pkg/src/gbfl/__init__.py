"""Global transparent models built from local contrastive explanations of a black-box."""

__version__ = "0.1.0"

from .blackbox import (BlackBoxModel, ExternalBlackBox, LogisticBlackBox, LogisticConfig, MlpBlackBox,
                       MlpConfig, load_model, save_model, train_reference_model)
from .clauses import (Clause, ClauseEvaluator, Literal, build_boolean_dataset, clause_from_triplet,
                      evaluate_clause, format_rules, generate_clauses)
from .data import (BaseValues, Dataset, FeatureBounds, derive_base_values, derive_bounds, load_csv,
                   split)
from .errors import (ClauseError, DataError, ExplainerError, GBFLError, ModelError, PipelineError)
from .explainer import (ExplainerConfig, ExplanationSet, ExplanationTriplet, explain_dataset, find_pn,
                        find_pp)
from .gridding import GridMatrix, generate_grid, kde_cdf
from .learners import DecisionTree, LogisticModel, TransparentModel, fit_logistic_l1, fit_tree
from .metrics import ConsistencyReport, accuracy, consistency, evaluate_transparent
from .baselines import train_augmented, train_distilled, train_standard
from .pipeline import (PipelineConfig, RunReport, cross_validate, emit_report, render_markdown,
                       render_rules, run_pipeline)
