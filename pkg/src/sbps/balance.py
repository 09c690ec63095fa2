"""Covariate-balance moment estimates and the two scalar objectives.

The matching-based moments measure half the standardized mean difference
between treated and weighted-control covariate means, overall and per
subgroup; the weighting-based moments measure the gap between treated
covariate totals and odds-weighted control totals, scaled by 1/N.  Each
family is collapsed into a sum-of-squares objective that the scope-vector
search minimizes.

Standardizing denominators always come from the treated units of the
*original* (unmatched) sample, which keeps them constant across candidate
scope vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, build_index
from .matching import MatchedSample
from .propensity import PropensityFit


@dataclass
class SmdMoments:
    """Matching-based balance moments.

    ``overall[k]`` is half the standardized treated-vs-control mean gap of
    covariate k in the pooled matched sample; ``per_subgroup[r-1, k]`` is
    the subgroup analogue scaled by subgroup r's share of matched treated
    units.  ``treated_sd``/``treated_sd_subgroup`` record the denominators
    used (original-sample treated units, n-1 convention).
    """

    overall: np.ndarray
    per_subgroup: np.ndarray
    treated_sd: np.ndarray
    treated_sd_subgroup: np.ndarray
    flags: list[str] = field(default_factory=list)


@dataclass
class PswMoments:
    """Weighting-based balance moments (covariate, group-share, subgroup)."""

    overall: np.ndarray
    group_share: np.ndarray
    per_subgroup: np.ndarray


def treated_sds(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Treated-unit sample sds of each covariate, overall and per subgroup.

    Cells with fewer than 2 treated units get sd 0, which triggers the
    same fallback as a constant covariate.
    """
    treated = dataset.z == 1
    xt = dataset.x[treated]
    sd = np.std(xt, axis=0, ddof=1) if xt.shape[0] >= 2 else np.zeros(dataset.K)
    sd_sub = np.zeros((dataset.R, dataset.K))
    for r in range(1, dataset.R + 1):
        rows = dataset.x[treated & (dataset.g == r)]
        if rows.shape[0] >= 2:
            sd_sub[r - 1] = np.std(rows, axis=0, ddof=1)
    return sd, sd_sub


def effective_sds(dataset: Dataset) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Denominators with the zero-sd fallback applied.

    A zero subgroup sd falls back to the overall treated sd; if that is
    zero too the denominator is left at zero (the caller must zero the
    term) and the constant covariate is flagged.
    """
    sd, sd_sub = treated_sds(dataset)
    flags = []
    eff = sd_sub.copy()
    for k in range(dataset.K):
        if sd[k] == 0.0:
            flags.append(f"covariate {dataset.covariate_names[k]}: constant "
                         "among treated units, its moments are set to 0")
    for r in range(dataset.R):
        for k in range(dataset.K):
            if eff[r, k] == 0.0 and sd[k] > 0.0:
                eff[r, k] = sd[k]
                flags.append(
                    f"subgroup {r + 1}, covariate "
                    f"{dataset.covariate_names[k]}: treated sd is 0, "
                    "using overall treated sd")
    return sd, eff, flags


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def smd_moments(dataset: Dataset, matched: MatchedSample) -> SmdMoments:
    """Estimate the matching-based moments from a matched sample.

    Control means use the matching weights; every mean is normalized by
    the matched treated count, and subgroups with no matched treated
    units contribute exactly zero.

    Raises
    ------
    ValueError
        If the matched sample has no matched treated units at all.
    """
    n_t = matched.n_matched_treated
    if n_t == 0:
        raise ValueError("matched sample has no matched treated units; "
                         "balance moments are undefined")
    sd, eff_sub, flags = effective_sds(dataset)

    diff = np.zeros((dataset.R, dataset.K))
    for m in matched.subgroups:
        if m.n_matched_treated == 0:
            continue
        t_sum = dataset.x[m.matched_treated].sum(axis=0)
        c_sum = m.control_weights @ dataset.x[m.control_positions]
        diff[m.r - 1] = t_sum - c_sum

    overall = _safe_div(diff.sum(axis=0), 2.0 * n_t * sd)
    per_subgroup = _safe_div(diff, 2.0 * n_t * eff_sub)
    return SmdMoments(overall=overall, per_subgroup=per_subgroup,
                      treated_sd=sd, treated_sd_subgroup=eff_sub, flags=flags)


def psw_moments(dataset: Dataset, propensity: PropensityFit) -> PswMoments:
    """Estimate the weighting-based moments from propensity scores.

    Treated units carry weight one; control units carry the odds
    e/(1-e).  All three families are scaled by 1/N.
    """
    n = dataset.n
    z = dataset.z
    odds = propensity.e_hat / (1.0 - propensity.e_hat)
    treated = z == 1
    control = ~treated

    t_total = dataset.x[treated].sum(axis=0)
    c_weighted = odds[control] @ dataset.x[control]
    overall = (t_total - c_weighted) / n

    group_share = np.zeros(dataset.R)
    per_subgroup = np.zeros((dataset.R, dataset.K))
    for r in range(1, dataset.R + 1):
        rt = treated & (dataset.g == r)
        rc = control & (dataset.g == r)
        group_share[r - 1] = (np.count_nonzero(rt) - odds[rc].sum()) / n
        per_subgroup[r - 1] = (dataset.x[rt].sum(axis=0)
                               - odds[rc] @ dataset.x[rc]) / n
    return PswMoments(overall=overall, group_share=group_share,
                      per_subgroup=per_subgroup)


def f_smd(moments: SmdMoments) -> float:
    """Sum of squared matching-based moments."""
    return float(np.sum(moments.overall ** 2)
                 + np.sum(moments.per_subgroup ** 2))


def f_psw(moments: PswMoments) -> float:
    """Sum of squared weighting-based moments."""
    return float(np.sum(moments.overall ** 2)
                 + np.sum(moments.group_share ** 2)
                 + np.sum(moments.per_subgroup ** 2))


@dataclass
class SmdTable:
    """Plain (not halved) standardized mean differences for reporting.

    ``before`` uses raw treated/control means on the full sample;
    ``after`` uses matched-sample means with control weights.  Rows where
    a subgroup has no matched treated units hold NaN in ``after``.
    """

    overall_before: np.ndarray
    overall_after: np.ndarray
    per_subgroup_before: np.ndarray
    per_subgroup_after: np.ndarray


def smd_table(dataset: Dataset, matched: MatchedSample) -> SmdTable:
    """Before/after standardized mean differences for diagnostics."""
    sd, eff_sub, _ = effective_sds(dataset)
    index = build_index(dataset)
    treated = dataset.z == 1

    before_overall = _safe_div(dataset.x[treated].mean(axis=0)
                               - dataset.x[~treated].mean(axis=0), sd)
    before_sub = np.zeros((dataset.R, dataset.K))
    after_sub = np.full((dataset.R, dataset.K), np.nan)
    t_mean_sum = np.zeros(dataset.K)
    c_mean_sum = np.zeros(dataset.K)
    n_t = matched.n_matched_treated

    for r in range(1, dataset.R + 1):
        t_pos, c_pos = index.treated[r - 1], index.control[r - 1]
        before_sub[r - 1] = _safe_div(
            dataset.x[t_pos].mean(axis=0) - dataset.x[c_pos].mean(axis=0),
            eff_sub[r - 1])
        m = matched[r]
        if m.n_matched_treated > 0:
            t_sum = dataset.x[m.matched_treated].sum(axis=0)
            c_sum = m.control_weights @ dataset.x[m.control_positions]
            after_sub[r - 1] = _safe_div(
                (t_sum - c_sum) / m.n_matched_treated, eff_sub[r - 1])
            t_mean_sum += t_sum
            c_mean_sum += c_sum

    if n_t > 0:
        after_overall = _safe_div((t_mean_sum - c_mean_sum) / n_t, sd)
    else:
        after_overall = np.full(dataset.K, np.nan)
    return SmdTable(overall_before=before_overall, overall_after=after_overall,
                    per_subgroup_before=before_sub, per_subgroup_after=after_sub)
