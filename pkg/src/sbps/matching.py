"""Within-subgroup nearest-neighbor caliper matching on the logit scale.

Each treated unit is matched, with replacement, to the control unit(s) of
its own subgroup whose logit propensity score is closest to its own and
within the caliper; treated units with no control inside the caliper are
dropped.  Ties (controls equidistant within a small tolerance) split the
treated unit's one unit of match weight equally, so control weights may
be fractional and may exceed one through reuse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, SubgroupIndex, build_index
from .propensity import PropensityFit

TIE_TOL = 1e-10


@dataclass
class MatchedSubgroup:
    """Matching result for one subgroup.

    ``control_positions``/``control_weights`` cover every control unit in
    the subgroup; unmatched controls simply carry weight zero.  Matched
    treated units implicitly carry weight one each, so the control
    weights sum to ``n_matched_treated``.
    """

    r: int
    matched_treated: np.ndarray
    dropped_treated: np.ndarray
    control_positions: np.ndarray
    control_weights: np.ndarray
    caliper: float

    @property
    def n_matched_treated(self) -> int:
        return len(self.matched_treated)

    def weight_of(self, position: int) -> float:
        """Match weight of the control unit at a dataset position."""
        hits = np.nonzero(self.control_positions == position)[0]
        if len(hits) == 0:
            raise KeyError(f"position {position} is not a control unit of "
                           f"subgroup {self.r}")
        return float(self.control_weights[hits[0]])


@dataclass
class MatchedSample:
    """Per-subgroup matching results for r = 1..R."""

    subgroups: list[MatchedSubgroup]

    @property
    def R(self) -> int:
        return len(self.subgroups)

    @property
    def n_matched_treated(self) -> int:
        return sum(m.n_matched_treated for m in self.subgroups)

    def __getitem__(self, r: int) -> MatchedSubgroup:
        """Subgroup result by 1-based label."""
        return self.subgroups[r - 1]


def caliper_width(logits: np.ndarray) -> float:
    """Caliper for one subgroup: sd(logits)/4 over all its units.

    Uses the n-1 sample standard deviation; requires at least 2 units.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size < 2:
        raise ValueError("caliper needs at least 2 units")
    return float(np.std(logits, ddof=1)) / 4.0


def match_subgroup(treated_logits: np.ndarray,
                   control_logits: np.ndarray,
                   caliper: float,
                   r: int = 0,
                   treated_positions: np.ndarray | None = None,
                   control_positions: np.ndarray | None = None) -> MatchedSubgroup:
    """Match one subgroup's treated units to its controls.

    For each treated unit the nearest control distance is computed; if it
    exceeds the caliper the treated unit is dropped, otherwise all
    controls within ``TIE_TOL`` of that minimum share one unit of weight
    equally.  Controls are reused freely (matching with replacement), so
    the result does not depend on the order of treated units.

    The optional position arrays map local indices back to dataset
    positions; they default to 0..n-1.
    """
    if caliper < 0:
        raise ValueError("caliper must be nonnegative")
    treated_logits = np.asarray(treated_logits, dtype=np.float64)
    control_logits = np.asarray(control_logits, dtype=np.float64)
    if control_logits.size == 0:
        raise ValueError(f"subgroup {r}: no control units available")
    if treated_positions is None:
        treated_positions = np.arange(treated_logits.size)
    if control_positions is None:
        control_positions = np.arange(control_logits.size)

    dist = np.abs(treated_logits[:, None] - control_logits[None, :])
    nearest = dist.min(axis=1)
    matched = nearest <= caliper

    weights = np.zeros(control_logits.size)
    if matched.any():
        tied = dist[matched] <= (nearest[matched, None] + TIE_TOL)
        weights = (tied / tied.sum(axis=1, keepdims=True)).sum(axis=0)

    return MatchedSubgroup(
        r=r,
        matched_treated=treated_positions[matched],
        dropped_treated=treated_positions[~matched],
        control_positions=control_positions,
        control_weights=weights,
        caliper=caliper,
    )


def match_all(dataset: Dataset, propensity: PropensityFit,
              index: SubgroupIndex | None = None) -> MatchedSample:
    """Apply caliper matching within every subgroup.

    The caliper of subgroup r is sd/4 of the logit scores over all of
    subgroup r's units (both arms).  Subgroups whose treated units all
    drop yield an empty MatchedSubgroup; downstream estimates for them
    are undefined.
    """
    if index is None:
        index = build_index(dataset)
    logits = propensity.logit_e_hat
    out = []
    for r in range(1, dataset.R + 1):
        t_pos = index.treated[r - 1]
        c_pos = index.control[r - 1]
        caliper = caliper_width(logits[index.subgroup(r)])
        out.append(match_subgroup(
            logits[t_pos], logits[c_pos], caliper, r=r,
            treated_positions=t_pos, control_positions=c_pos))
    return MatchedSample(out)
