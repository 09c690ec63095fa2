"""Propensity score estimation for arbitrary scope vectors.

Two propensity models are fitted once per dataset and cached:

* the pooled model -- one indicator per subgroup (no separate global
  intercept, which would be collinear with the indicators) plus the
  covariate terms, fitted on the full sample; and
* R subgroup models -- intercept plus the covariate terms, each fitted
  on one subgroup's units only.

A scope vector then selects, per subgroup, which of the two fits supplies
the scores for that subgroup's units.  Because the balance-criterion
search may evaluate up to 2^R scope vectors, scoring is a table lookup
over the cached per-unit predictions, never a refit.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import Dataset, InvalidDatasetError, SubgroupIndex, build_index
from .logistic import (DesignMatrix, LogisticCoefficients, clamp_probabilities,
                       fit, predict)

OVERALL, SUBGROUP = 1, 2

_TERM_RE = re.compile(r"^\s*(\S+?)\s*(?:\^\s*2|\*\s*(\S+))?\s*$")


@dataclass(frozen=True)
class ScopeVector:
    """Per-subgroup choice of estimation sample.

    ``values[r-1]`` is 1 when subgroup r's scores come from the pooled
    fit and 2 when they come from that subgroup's own fit.
    """

    values: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("scope vector must have length >= 1")
        if any(v not in (OVERALL, SUBGROUP) for v in self.values):
            raise ValueError(f"scope values must be 1 or 2, got {self.values}")

    @classmethod
    def all_ones(cls, R: int) -> "ScopeVector":
        return cls((OVERALL,) * R)

    @classmethod
    def of(cls, values: Iterable[int]) -> "ScopeVector":
        return cls(tuple(int(v) for v in values))

    def with_value(self, r: int, value: int) -> "ScopeVector":
        """Copy with subgroup r's entry (1-based) replaced."""
        vals = list(self.values)
        vals[r - 1] = value
        return ScopeVector(tuple(vals))

    def subgroup_fit_fraction(self) -> float:
        return sum(v == SUBGROUP for v in self.values) / len(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> int:
        return self.values[i]

    def __iter__(self):
        return iter(self.values)


def expand_terms(dataset: Dataset,
                 terms: Optional[Sequence[str]] = None) -> tuple[np.ndarray, list[str]]:
    """Build covariate term columns from a term list.

    Terms name base covariates ("x1"), squares ("x1^2"), or pairwise
    interactions ("x1*x4"), using the dataset's covariate names.  The
    default term list is all base covariates.
    """
    names = {name: j for j, name in enumerate(dataset.covariate_names)}
    if terms is None:
        terms = list(dataset.covariate_names)
    cols = []
    labels = []
    for term in terms:
        m = _TERM_RE.match(term)
        if not m:
            raise ValueError(f"cannot parse covariate term {term!r}")
        base, other = m.group(1), m.group(2)
        if base not in names:
            raise ValueError(f"unknown covariate {base!r} in term {term!r}")
        if "^" in term:
            cols.append(dataset.x[:, names[base]] ** 2)
            labels.append(f"{base}^2")
        elif other is not None:
            if other not in names:
                raise ValueError(f"unknown covariate {other!r} in term {term!r}")
            cols.append(dataset.x[:, names[base]] * dataset.x[:, names[other]])
            labels.append(f"{base}*{other}")
        else:
            cols.append(dataset.x[:, names[base]])
            labels.append(base)
    return np.column_stack(cols), labels


def overall_design(dataset: Dataset,
                   terms: Optional[Sequence[str]] = None) -> DesignMatrix:
    """Pooled-sample design: R subgroup indicators plus covariate terms."""
    t_cols, t_labels = expand_terms(dataset, terms)
    indicators = (dataset.g[:, None] == np.arange(1, dataset.R + 1)).astype(np.float64)
    labels = [f"1{{g={r}}}" for r in range(1, dataset.R + 1)] + t_labels
    return DesignMatrix(np.column_stack([indicators, t_cols]), labels)


def subgroup_design(dataset: Dataset, r: int,
                    terms: Optional[Sequence[str]] = None,
                    rows: Optional[np.ndarray] = None) -> DesignMatrix:
    """Single-subgroup design: intercept plus covariate terms."""
    t_cols, t_labels = expand_terms(dataset, terms)
    if rows is None:
        rows = np.nonzero(dataset.g == r)[0]
    block = t_cols[rows]
    return DesignMatrix(
        np.column_stack([np.ones(len(rows)), block]),
        ["intercept"] + t_labels,
    )


@dataclass
class FitCache:
    """All logistic fits needed to resolve any scope vector.

    Holds per-unit scores from the pooled fit and from each unit's own
    subgroup fit, so scoring any scope vector is an O(N) gather.
    """

    overall: LogisticCoefficients
    subgroup: list[Optional[LogisticCoefficients]]
    e_overall: np.ndarray
    e_subgroup: np.ndarray
    terms: list[str]
    index: SubgroupIndex = field(repr=False)

    @property
    def R(self) -> int:
        return len(self.subgroup)

    def quasi_separated_subgroups(self) -> list[int]:
        return [r for r in range(1, self.R + 1)
                if self.subgroup[r - 1] is not None
                and self.subgroup[r - 1].quasi_separated]


class PropensityFitError(RuntimeError):
    """A logistic fit failed; carries the failing scope."""

    def __init__(self, scope: str, cause: Exception):
        self.scope = scope
        self.cause = cause
        super().__init__(f"propensity fit failed for {scope}: {cause}")


@dataclass
class PropensityFit:
    """Per-unit propensity scores under one scope vector."""

    e_hat: np.ndarray
    logit_e_hat: np.ndarray
    source: np.ndarray          # per-unit scope used, 1=overall 2=subgroup
    scope: ScopeVector
    flags: dict[int, bool]      # subgroup -> quasi-separation flag of the fit used


def precompute_fits(dataset: Dataset,
                    terms: Optional[Sequence[str]] = None,
                    include_subgroup_fits: bool = True) -> FitCache:
    """Fit the pooled model and (optionally) all R subgroup models.

    ``include_subgroup_fits=False`` skips the per-subgroup fits for
    pipelines that only ever use the pooled scores (scope all ones).

    Raises
    ------
    PropensityFitError
        If any underlying logistic fit raises; tagged with the scope
        ("overall" or "subgroup r") that failed.
    InvalidDatasetError
        If the dataset fails validation.
    """
    index = build_index(dataset)
    t_cols, t_labels = expand_terms(dataset, terms)

    indicators = (dataset.g[:, None] == np.arange(1, dataset.R + 1)).astype(np.float64)
    design_ov = DesignMatrix(
        np.column_stack([indicators, t_cols]),
        [f"1{{g={r}}}" for r in range(1, dataset.R + 1)] + t_labels)
    try:
        coef_ov = fit(design_ov, dataset.z)
    except Exception as exc:
        raise PropensityFitError("overall", exc) from exc
    e_ov = predict(design_ov, coef_ov)

    subgroup_coefs: list[Optional[LogisticCoefficients]] = [None] * dataset.R
    e_sub = np.full(dataset.n, np.nan)
    if include_subgroup_fits:
        sub_labels = ["intercept"] + t_labels
        for r in range(1, dataset.R + 1):
            rows = np.nonzero(dataset.g == r)[0]
            design_r = DesignMatrix(
                np.column_stack([np.ones(len(rows)), t_cols[rows]]), sub_labels)
            try:
                coef_r = fit(design_r, dataset.z[rows])
            except Exception as exc:
                raise PropensityFitError(f"subgroup {r}", exc) from exc
            subgroup_coefs[r - 1] = coef_r
            e_sub[rows] = predict(design_r, coef_r)

    return FitCache(overall=coef_ov, subgroup=subgroup_coefs,
                    e_overall=e_ov, e_subgroup=e_sub,
                    terms=list(t_labels), index=index)


def score(dataset: Dataset, cache: FitCache, s: ScopeVector) -> PropensityFit:
    """Resolve a scope vector against the fit cache.

    Unit i in subgroup r takes its score from the pooled fit when
    ``s[r] == 1`` and from subgroup r's own fit when ``s[r] == 2``.
    """
    if len(s) != dataset.R:
        raise ValueError(f"scope vector has length {len(s)}, dataset has "
                         f"R={dataset.R} subgroups")
    choice = np.asarray(s.values, dtype=np.int64)[dataset.g - 1]
    use_sub = choice == SUBGROUP
    if np.any(use_sub & np.isnan(cache.e_subgroup)):
        raise ValueError("scope vector requests subgroup fits that were not "
                         "precomputed")
    e = np.where(use_sub, cache.e_subgroup, cache.e_overall)
    e = clamp_probabilities(e)
    flags = {}
    for r in range(1, dataset.R + 1):
        if s[r - 1] == SUBGROUP:
            flags[r] = bool(cache.subgroup[r - 1].quasi_separated)
        else:
            flags[r] = bool(cache.overall.quasi_separated)
    return PropensityFit(
        e_hat=e,
        logit_e_hat=np.log(e) - np.log1p(-e),
        source=choice,
        scope=s,
        flags=flags,
    )
