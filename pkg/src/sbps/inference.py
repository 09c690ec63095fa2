"""Bootstrap standard errors, normal-theory intervals, and FDR adjustment.

Standard errors come from a stratified bootstrap that resamples within
each (subgroup x treatment) cell, preserving all cell sizes so that
every replicate keeps every subgroup estimable.  By default the scope
vector is re-optimized inside each replicate so the reported uncertainty
reflects the search as well; a fixed-scope mode is available and is
anti-conservative.  P-values use the standard normal reference, matching
the 1.96-based intervals, and are adjusted across subgroups by the
Benjamini-Hochberg step-up rule.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from ._rng import SeedLike, derive, generator
from .data import Dataset, SubgroupIndex, build_index
from .pipeline import PipelineConfig, run_pipeline
from .propensity import ScopeVector

Z_95 = 1.96


@dataclass
class BootstrapResult:
    """Per-subgroup bootstrap standard errors.

    ``se`` is NaN for subgroups where every replicate's estimate was
    undefined; ``n_undefined`` counts the undefined replicates.
    """

    se: np.ndarray
    n_undefined: np.ndarray
    taus: np.ndarray
    B: int
    seed: SeedLike


@dataclass
class EffectReport:
    """Full per-subgroup inference summary for one analysis run."""

    tau_hat: np.ndarray
    se_hat: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    p_value: np.ndarray
    p_adjusted: np.ndarray
    defined: np.ndarray
    estimator: str
    criterion: str
    scope: ScopeVector
    B: int
    seed: int
    bootstrap_undefined: np.ndarray
    f_value: Optional[float] = None
    warnings: list[str] = field(default_factory=list)

    @property
    def R(self) -> int:
        return len(self.tau_hat)


def stratified_resample(dataset: Dataset, index: SubgroupIndex,
                        rng: np.random.Generator) -> Dataset:
    """Resample with replacement within every (subgroup x arm) cell.

    Cell sizes are preserved exactly, so the resampled dataset always
    satisfies the per-subgroup count invariants.
    """
    picks = []
    for r in range(1, dataset.R + 1):
        for cell in (index.treated[r - 1], index.control[r - 1]):
            picks.append(rng.choice(cell, size=len(cell), replace=True))
    rows = np.concatenate(picks)
    return Dataset(
        z=dataset.z[rows],
        g=dataset.g[rows],
        x=dataset.x[rows],
        y=None if dataset.y is None else dataset.y[rows],
        R=dataset.R,
        covariate_names=list(dataset.covariate_names),
    )


def _bootstrap_chunk(dataset: Dataset, config: PipelineConfig, seed: SeedLike,
                     b_indices: list[int],
                     fixed_scope: Optional[ScopeVector]) -> dict[int, dict[str, np.ndarray]]:
    index = build_index(dataset)
    out = {}
    for b in b_indices:
        rng = generator(seed, 1, b)
        resample = stratified_resample(dataset, index, rng)
        result = run_pipeline(resample, config, search_seed=derive(seed, 2, b),
                              fixed_scope=fixed_scope)
        out[b] = {est: np.where(eff.defined, eff.tau_hat, np.nan)
                  for est, eff in result.effects.items()}
    return out


def bootstrap_taus(dataset: Dataset, config: PipelineConfig, B: int,
                   seed: SeedLike, fixed_scope: Optional[ScopeVector] = None,
                   workers: int = 1) -> dict[str, np.ndarray]:
    """Per-estimator (B, R) matrices of bootstrap effect estimates.

    Replicate b resamples and reruns the full pipeline as a pure function
    of (seed, b); undefined estimates are NaN.
    """
    if B < 2:
        raise ValueError("bootstrap needs B >= 2 replicates")
    indices = list(range(B))
    if workers > 1:
        chunks = [c for c in (indices[i::workers * 4]
                              for i in range(workers * 4)) if c]
        taus_by_b: dict[int, dict[str, np.ndarray]] = {}
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_bootstrap_chunk,
                                 *zip(*[(dataset, config, seed, c, fixed_scope)
                                        for c in chunks])):
                taus_by_b.update(part)
    else:
        taus_by_b = _bootstrap_chunk(dataset, config, seed, indices, fixed_scope)
    return {est: np.vstack([taus_by_b[b][est] for b in range(B)])
            for est in config.estimators}


def se_from_taus(taus: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise sample sd over defined replicates, plus undefined counts."""
    B, R = taus.shape
    n_undefined = np.isnan(taus).sum(axis=0)
    se = np.full(R, np.nan)
    for r in range(R):
        col = taus[~np.isnan(taus[:, r]), r]
        if len(col) >= 2:
            se[r] = np.std(col, ddof=1)
    return se, n_undefined


def bootstrap_se(dataset: Dataset, config: PipelineConfig, B: int,
                 seed: SeedLike, fixed_scope: Optional[ScopeVector] = None,
                 workers: int = 1) -> BootstrapResult:
    """Bootstrap the full pipeline to get per-subgroup standard errors.

    Each replicate reruns everything (propensity fits, scope search,
    matching/weighting, estimation) on a stratified resample, unless
    ``fixed_scope`` pins the scope vector.  Subgroups whose estimate is
    undefined in a replicate are excluded from that subgroup's sd, with
    the exclusions counted.
    """
    if len(config.estimators) != 1:
        raise ValueError("bootstrap_se expects a single-estimator config")
    est = config.estimators[0]
    taus = bootstrap_taus(dataset, config, B, seed, fixed_scope, workers)[est]
    se, n_undefined = se_from_taus(taus)
    return BootstrapResult(se=se, n_undefined=n_undefined, taus=taus,
                           B=B, seed=seed)


def p_value(tau_hat: float, se_hat: float) -> float:
    """Two-sided normal p-value of tau/se; 0.0 when the se is zero.

    A zero se yields a degenerate test; callers should flag it.
    """
    if se_hat < 0 or not np.isfinite(se_hat):
        raise ValueError(f"invalid standard error {se_hat}")
    if se_hat == 0.0:
        return 0.0
    return float(2.0 * norm.sf(abs(tau_hat / se_hat)))


def bh_adjust(p: np.ndarray) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values.

    Sorted ascending, the i-th adjusted value is min over j >= i of
    p_(j) * m / j, capped at 1, then mapped back to the input order.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        return p.copy()
    if np.any((p < 0) | (p > 1) | ~np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    out = np.empty_like(adjusted)
    out[order] = adjusted
    return out


def report_effects(dataset: Dataset, config: PipelineConfig, B: int, seed: int,
                   workers: int = 1) -> EffectReport:
    """Point estimates plus bootstrap inference, assembled per subgroup.

    Adjusted p-values are computed across the subgroups whose estimates
    and standard errors exist; the rest stay NaN.
    """
    point = run_pipeline(dataset, config, search_seed=derive(seed, 0))
    fixed = None if config.reoptimize_in_bootstrap else point.scope
    boot = bootstrap_se(dataset, config, B, seed, fixed_scope=fixed,
                        workers=workers)

    eff = point.tau(config.estimators[0])
    tau = np.where(eff.defined, eff.tau_hat, np.nan)
    se = boot.se
    warnings = list(point.warnings)
    if not config.reoptimize_in_bootstrap:
        warnings.append("bootstrap used fixed scope vector; standard errors "
                        "ignore search variability (anti-conservative)")

    ci_low = tau - Z_95 * se
    ci_high = tau + Z_95 * se
    pvals = np.full(dataset.R, np.nan)
    for r in range(dataset.R):
        if np.isfinite(tau[r]) and np.isfinite(se[r]):
            pvals[r] = p_value(tau[r], se[r])
            if se[r] == 0.0:
                warnings.append(f"subgroup {r + 1}: zero bootstrap se; "
                                "p-value reported as 0")
    missing_se = np.nonzero(np.isfinite(tau) & ~np.isfinite(se))[0] + 1
    if len(missing_se):
        warnings.append("no bootstrap se for subgroup(s) "
                        + ", ".join(map(str, missing_se)))

    p_adj = np.full(dataset.R, np.nan)
    tested = np.isfinite(pvals)
    if tested.any():
        p_adj[tested] = bh_adjust(pvals[tested])

    return EffectReport(
        tau_hat=tau, se_hat=se, ci_low=ci_low, ci_high=ci_high,
        p_value=pvals, p_adjusted=p_adj, defined=eff.defined,
        estimator=config.estimators[0], criterion=config.criterion,
        scope=point.scope, B=B, seed=seed,
        bootstrap_undefined=boot.n_undefined, f_value=point.f_value,
        warnings=warnings)
