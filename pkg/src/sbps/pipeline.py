"""End-to-end analysis pipeline: fits, scope search, effect estimates.

This is the unit of work that bootstrap inference and the simulation
harness rerun on every resample or replicate: precompute the propensity
fits, pick a scope vector (all ones for the traditional baseline, or by
minimizing a balance criterion), then form the requested effect
estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import Dataset
from .estimators import SubgroupEffects, tau_direct, tau_psw
from .matching import MatchedSample, match_all
from .propensity import (SUBGROUP, FitCache, PropensityFit, ScopeVector,
                         precompute_fits, score)
from .search import SearchResult, SeedLike, exhaustive, stochastic

METHODS = ("traditional", "sbps")
ESTIMATORS = ("direct", "psw")
SEARCH_MODES = ("auto", "exhaustive", "stochastic")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to turn a dataset into subgroup effect estimates.

    ``terms`` lists the covariate terms entering both propensity models
    (base names, squares like "x1^2", interactions like "x1*x4");
    ``None`` means all base covariates.  ``search="auto"`` enumerates
    exhaustively up to ``exhaustive_cap`` subgroups and falls back to the
    stochastic search with ``restarts`` restarts beyond that.
    """

    method: str = "sbps"
    criterion: str = "smd"
    estimators: tuple[str, ...] = ("direct",)
    terms: Optional[tuple[str, ...]] = None
    search: str = "auto"
    restarts: int = 1000
    exhaustive_cap: int = 15
    search_seed: int = 0
    reoptimize_in_bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.criterion not in ("smd", "psw"):
            raise ValueError("criterion must be 'smd' or 'psw'")
        if not self.estimators:
            raise ValueError("at least one estimator required")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r}")
        if self.search not in SEARCH_MODES:
            raise ValueError(f"search must be one of {SEARCH_MODES}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class PipelineResult:
    scope: ScopeVector
    effects: dict[str, SubgroupEffects]
    cache: FitCache
    propensity: PropensityFit
    matched: Optional[MatchedSample]
    search_result: Optional[SearchResult]
    warnings: list[str] = field(default_factory=list)

    @property
    def f_value(self) -> Optional[float]:
        return self.search_result.f_min if self.search_result else None

    def tau(self, estimator: str) -> SubgroupEffects:
        return self.effects[estimator]


def select_scope(dataset: Dataset, cache: FitCache, config: PipelineConfig,
                 search_seed: Optional[SeedLike] = None) -> Optional[SearchResult]:
    """Run the configured scope search; None for the traditional baseline."""
    if config.method == "traditional":
        return None
    mode = config.search
    if mode == "auto":
        mode = "exhaustive" if dataset.R <= config.exhaustive_cap else "stochastic"
    if mode == "exhaustive":
        return exhaustive(dataset, cache, config.criterion,
                          cap=config.exhaustive_cap)
    seed = config.search_seed if search_seed is None else search_seed
    return stochastic(dataset, cache, config.criterion, config.restarts, seed)


def run_pipeline(dataset: Dataset, config: PipelineConfig,
                 search_seed: Optional[SeedLike] = None,
                 fixed_scope: Optional[ScopeVector] = None) -> PipelineResult:
    """Fit, choose a scope vector, and estimate subgroup effects.

    ``fixed_scope`` short-circuits the search (used by the fixed-scope
    bootstrap mode); ``search_seed`` overrides the config seed so callers
    can derive independent per-replicate streams.
    """
    warnings: list[str] = []
    if fixed_scope is not None:
        needs_sub = any(v == SUBGROUP for v in fixed_scope)
        cache = precompute_fits(dataset, config.terms,
                                include_subgroup_fits=needs_sub)
        scope = fixed_scope
        search_result = None
    elif config.method == "traditional":
        cache = precompute_fits(dataset, config.terms,
                                include_subgroup_fits=False)
        scope = ScopeVector.all_ones(dataset.R)
        search_result = None
    else:
        cache = precompute_fits(dataset, config.terms)
        search_result = select_scope(dataset, cache, config, search_seed)
        scope = search_result.s_min

    prop = score(dataset, cache, scope)
    quasi = [r for r, flagged in prop.flags.items() if flagged]
    if quasi:
        warnings.append("quasi-separated propensity fit used for subgroup(s) "
                        + ", ".join(str(r) for r in quasi))

    matched = None
    effects: dict[str, SubgroupEffects] = {}
    if "direct" in config.estimators:
        matched = match_all(dataset, prop, index=cache.index)
        dropped = sum(len(m.dropped_treated) for m in matched.subgroups)
        if dropped:
            warnings.append(f"{dropped} treated unit(s) dropped by caliper "
                            "matching")
        effects["direct"] = tau_direct(dataset, matched) if dataset.y is not None \
            else SubgroupEffects(np.full(dataset.R, np.nan),
                                 np.zeros(dataset.R, dtype=bool), "direct")
    if "psw" in config.estimators:
        effects["psw"] = tau_psw(dataset, prop, index=cache.index) \
            if dataset.y is not None \
            else SubgroupEffects(np.full(dataset.R, np.nan),
                                 np.zeros(dataset.R, dtype=bool), "psw")

    for name, eff in effects.items():
        undef = np.nonzero(~eff.defined)[0] + 1
        if len(undef) and dataset.y is not None:
            warnings.append(f"{name} estimate undefined for subgroup(s) "
                            + ", ".join(map(str, undef)))

    return PipelineResult(scope=scope, effects=effects, cache=cache,
                          propensity=prop, matched=matched,
                          search_result=search_result, warnings=warnings)


def with_estimators(config: PipelineConfig, *estimators: str) -> PipelineConfig:
    return replace(config, estimators=tuple(estimators))
