"""Core dataset representation, validation, and subgroup indexing.

A dataset holds N units, each with a binary treatment indicator ``z``, a
subgroup label ``g`` in ``1..R``, a length-K covariate vector, and an
optional outcome ``y``.  All downstream modules (propensity fitting,
matching, balance, search) consume this representation and treat it as
immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class UnitRecord:
    """A single observational unit."""

    id: str
    z: int
    g: int
    x: tuple[float, ...]
    y: Optional[float] = None


@dataclass
class Dataset:
    """Column-oriented sample of N units split into R subgroups.

    Parameters
    ----------
    z : array of shape (N,)
        Treatment indicator, 0 control / 1 treated.
    g : array of shape (N,)
        Subgroup label, integer in 1..R.
    x : array of shape (N, K)
        Real covariates.  Categorical covariates must be one-hot encoded
        (baseline level dropped) before construction; no missing values.
    y : array of shape (N,), optional
        Outcome.  May be omitted for balance-only work; required by the
        effect estimators.
    R : int, optional
        Number of subgroups; defaults to ``max(g)``.
    ids : sequence of str, optional
        Opaque unit identifiers; defaults to "0".."N-1".
    covariate_names : sequence of str, optional
        Column names for ``x``; defaults to "x1".."xK".

    The arrays are frozen (made read-only) at construction so a dataset
    can be shared across concurrent readers.
    """

    z: np.ndarray
    g: np.ndarray
    x: np.ndarray
    y: Optional[np.ndarray] = None
    R: int = 0
    ids: Optional[list[str]] = None
    covariate_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.z = np.ascontiguousarray(self.z, dtype=np.int64)
        self.g = np.ascontiguousarray(self.g, dtype=np.int64)
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ValueError("x must be a 2-d array of shape (N, K)")
        n = self.x.shape[0]
        if self.z.shape != (n,) or self.g.shape != (n,):
            raise ValueError("z, g, and x must agree on the number of units")
        if self.y is not None:
            self.y = np.ascontiguousarray(self.y, dtype=np.float64)
            if self.y.shape != (n,):
                raise ValueError("y must have one value per unit")
        if self.R <= 0:
            self.R = int(self.g.max(initial=0))
        if not self.covariate_names:
            self.covariate_names = [f"x{k + 1}" for k in range(self.x.shape[1])]
        elif len(self.covariate_names) != self.x.shape[1]:
            raise ValueError("covariate_names must match the number of columns of x")
        for arr in (self.z, self.g, self.x, self.y):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def K(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_units(cls, units: Sequence[UnitRecord], R: Optional[int] = None,
                   covariate_names: Optional[Sequence[str]] = None) -> "Dataset":
        """Assemble a Dataset from per-unit records."""
        if not units:
            raise ValueError("empty unit list")
        k = len(units[0].x)
        for u in units:
            if len(u.x) != k:
                raise ValueError(f"unit {u.id}: covariate vector has length "
                                 f"{len(u.x)}, expected {k}")
        has_y = all(u.y is not None for u in units)
        return cls(
            z=np.array([u.z for u in units]),
            g=np.array([u.g for u in units]),
            x=np.array([u.x for u in units], dtype=np.float64).reshape(len(units), k),
            y=np.array([u.y for u in units], dtype=np.float64) if has_y else None,
            R=R or 0,
            ids=[u.id for u in units],
        )

    def units(self) -> list[UnitRecord]:
        """Materialize the per-unit record view (mainly for tests/reports)."""
        ids = self.ids or [str(i) for i in range(self.n)]
        return [
            UnitRecord(
                id=ids[i],
                z=int(self.z[i]),
                g=int(self.g[i]),
                x=tuple(self.x[i]),
                y=None if self.y is None else float(self.y[i]),
            )
            for i in range(self.n)
        ]


@dataclass
class SubgroupIndex:
    """Per-subgroup position lists of treated and control units.

    ``treated[r-1]`` / ``control[r-1]`` hold the 0-based positions of the
    treated / control units of subgroup r; the 2R cells partition 0..N-1.
    """

    treated: list[np.ndarray]
    control: list[np.ndarray]

    @property
    def R(self) -> int:
        return len(self.treated)

    def n_treated(self, r: int) -> int:
        return len(self.treated[r - 1])

    def n_control(self, r: int) -> int:
        return len(self.control[r - 1])

    def subgroup(self, r: int) -> np.ndarray:
        """All positions in subgroup r (treated then control)."""
        return np.concatenate([self.treated[r - 1], self.control[r - 1]])


class InvalidDatasetError(ValueError):
    """Raised when an operation requires a dataset that fails validation."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid dataset: " + "; ".join(violations))


def validate(dataset: Dataset) -> list[str]:
    """Check dataset invariants, returning a list of violations.

    An empty list means the dataset is valid.  Each violation names the
    offending unit or subgroup and the rule broken.
    """
    violations: list[str] = []
    ids = dataset.ids or [str(i) for i in range(dataset.n)]

    bad_z = np.nonzero((dataset.z != 0) & (dataset.z != 1))[0]
    for i in bad_z:
        violations.append(f"unit {ids[i]}: z={dataset.z[i]} is not in {{0,1}}")

    bad_g = np.nonzero((dataset.g < 1) | (dataset.g > dataset.R))[0]
    for i in bad_g:
        violations.append(
            f"unit {ids[i]}: g={dataset.g[i]} is not in 1..{dataset.R}")

    bad_x = np.nonzero(~np.isfinite(dataset.x).all(axis=1))[0]
    for i in bad_x:
        violations.append(f"unit {ids[i]}: covariates contain a missing or "
                          "non-finite value")

    if dataset.y is not None:
        bad_y = np.nonzero(~np.isfinite(dataset.y))[0]
        for i in bad_y:
            violations.append(f"unit {ids[i]}: outcome is missing or non-finite")

    # Subgroup counts are only meaningful once z and g are well-formed.
    if len(bad_z) == 0 and len(bad_g) == 0:
        for r in range(1, dataset.R + 1):
            in_r = dataset.g == r
            n_rt = int(np.count_nonzero(in_r & (dataset.z == 1)))
            n_rc = int(np.count_nonzero(in_r & (dataset.z == 0)))
            if n_rt < 1:
                violations.append(f"subgroup {r}: no treated units")
            if n_rc < 1:
                violations.append(f"subgroup {r}: no control units")

    return violations


def build_index(dataset: Dataset) -> SubgroupIndex:
    """Build the (subgroup x treatment) position index.

    Raises
    ------
    InvalidDatasetError
        If the dataset fails :func:`validate`.
    """
    violations = validate(dataset)
    if violations:
        raise InvalidDatasetError(violations)
    treated = []
    control = []
    for r in range(1, dataset.R + 1):
        in_r = dataset.g == r
        treated.append(np.nonzero(in_r & (dataset.z == 1))[0])
        control.append(np.nonzero(in_r & (dataset.z == 0))[0])
    return SubgroupIndex(treated=treated, control=control)
