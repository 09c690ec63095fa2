"""Subgroup average-treatment-effect-on-the-treated estimators.

Two estimators are provided: a direct comparison of mean outcomes in the
matched sample, and a weighting estimator contrasting the subgroup's
treated mean with a self-normalized odds-weighted control mean.  Effects
for subgroups whose estimate cannot be formed (no matched treated units,
or an underflowing weight sum) are reported as undefined rather than
zero so that averaged performance measures can exclude them explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, SubgroupIndex, build_index
from .matching import MatchedSample
from .propensity import PropensityFit

WEIGHT_SUM_FLOOR = 1e-300


@dataclass
class SubgroupEffects:
    """Per-subgroup effect estimates; NaN where undefined."""

    tau_hat: np.ndarray
    defined: np.ndarray
    estimator: str

    def __post_init__(self) -> None:
        bad = self.defined & ~np.isfinite(self.tau_hat)
        if np.any(bad):
            raise ValueError("non-finite effect estimate marked as defined "
                             f"for subgroups {np.nonzero(bad)[0] + 1}")


def _require_outcomes(dataset: Dataset) -> np.ndarray:
    if dataset.y is None:
        raise ValueError("dataset has no outcomes; effects cannot be estimated")
    return dataset.y


def tau_direct(dataset: Dataset, matched: MatchedSample) -> SubgroupEffects:
    """Matched-sample direct estimator per subgroup.

    The treated mean is the plain average over matched treated units; the
    control mean weights each control outcome by its match weight and
    normalizes by the matched treated count (the weights sum to exactly
    that count).  Undefined when a subgroup has no matched treated units.
    """
    y = _require_outcomes(dataset)
    tau = np.full(dataset.R, np.nan)
    defined = np.zeros(dataset.R, dtype=bool)
    for m in matched.subgroups:
        n_rt = m.n_matched_treated
        if n_rt == 0:
            continue
        t_mean = y[m.matched_treated].mean()
        c_mean = (m.control_weights @ y[m.control_positions]) / n_rt
        tau[m.r - 1] = t_mean - c_mean
        defined[m.r - 1] = True
    return SubgroupEffects(tau_hat=tau, defined=defined, estimator="direct")


def tau_psw(dataset: Dataset, propensity: PropensityFit,
            index: SubgroupIndex | None = None) -> SubgroupEffects:
    """Odds-weighting estimator per subgroup.

    Contrasts the subgroup treated mean with the odds-weighted control
    mean, normalized by the control weight sum; the ratio form makes the
    estimate invariant to rescaling a subgroup's control weights by any
    positive constant.
    """
    y = _require_outcomes(dataset)
    if index is None:
        index = build_index(dataset)
    odds = propensity.e_hat / (1.0 - propensity.e_hat)
    tau = np.full(dataset.R, np.nan)
    defined = np.zeros(dataset.R, dtype=bool)
    for r in range(1, dataset.R + 1):
        t_pos = index.treated[r - 1]
        c_pos = index.control[r - 1]
        w = odds[c_pos]
        w_sum = w.sum()
        if len(t_pos) == 0 or w_sum < WEIGHT_SUM_FLOOR:
            continue
        tau[r - 1] = y[t_pos].mean() - (w @ y[c_pos]) / w_sum
        defined[r - 1] = True
    return SubgroupEffects(tau_hat=tau, defined=defined, estimator="psw")
