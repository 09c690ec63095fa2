"""Subgroup balancing propensity scores.

Estimates subgroup average treatment effects on the treated from
observational data.  For each subgroup, the propensity model is fitted
either on the pooled sample or on the subgroup's own sample; the
combination (the scope vector) is chosen to minimize a covariate-balance
criterion based on matching (standardized mean differences) or on odds
weighting.  Inference is by a stratified bootstrap with
Benjamini-Hochberg adjustment across subgroups, and a simulation harness
benchmarks the approach against the pooled-fit baseline.
"""

from .data import Dataset, SubgroupIndex, UnitRecord, build_index, validate
from .inference import (EffectReport, bh_adjust, bootstrap_se, p_value,
                        report_effects)
from .matching import MatchedSample, MatchedSubgroup, caliper_width, match_all
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .propensity import (FitCache, PropensityFit, ScopeVector, precompute_fits,
                         score)
from .search import SearchResult, evaluate, exhaustive, stochastic
from .simulation import (ExperimentConfig, PerformanceTable, ShiwLikeConfig,
                         Sim1Config, generate_shiw_like, generate_sim1,
                         run_experiment)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "SubgroupIndex", "UnitRecord", "build_index", "validate",
    "EffectReport", "bh_adjust", "bootstrap_se", "p_value", "report_effects",
    "MatchedSample", "MatchedSubgroup", "caliper_width", "match_all",
    "PipelineConfig", "PipelineResult", "run_pipeline",
    "FitCache", "PropensityFit", "ScopeVector", "precompute_fits", "score",
    "SearchResult", "evaluate", "exhaustive", "stochastic",
    "ExperimentConfig", "PerformanceTable", "ShiwLikeConfig", "Sim1Config",
    "generate_shiw_like", "generate_sim1", "run_experiment",
    "__version__",
]
