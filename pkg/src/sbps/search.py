"""Scope-vector search minimizing a balance criterion.

The criterion (matching- or weighting-based sum of squared balance
moments) is a function of the scope vector alone once the two propensity
fits are cached.  Small problems are solved by exhaustive enumeration of
all 2^R scope vectors; larger ones by a multi-start stochastic search:
each restart draws a random scope vector and a random coordinate order,
then sweeps the coordinates, flipping any entry whose flip strictly
lowers the criterion, until a full sweep changes nothing.

Either way the returned value never exceeds the all-ones (pooled-fit-
everywhere) baseline, which seeds the incumbent.

Both searches run on a :class:`CriterionCache` that pre-aggregates each
subgroup's contribution under each of its two scope choices; matching in
one subgroup depends only on that subgroup's scores, and the
standardizing denominators are fixed at the original sample, so a
coordinate flip re-aggregates in O(K) instead of re-matching everything.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._rng import SeedLike, generator
from .balance import (effective_sds, f_psw, f_smd, psw_moments, smd_moments)
from .data import Dataset
from .matching import caliper_width, match_all, match_subgroup
from .propensity import (OVERALL, SUBGROUP, FitCache, PropensityFit,
                         ScopeVector, score)

CRITERIA = ("smd", "psw")


@dataclass
class SearchResult:
    s_min: ScopeVector
    f_min: float
    criterion: str
    evaluations: int
    restarts_improved: int


def evaluate(dataset: Dataset, cache: FitCache, s: ScopeVector,
             criterion: str) -> float:
    """Criterion value of one scope vector via the full module pipeline.

    The searches use :class:`CriterionCache` instead; this composition
    (score, then match/weight, then moments) is the reference they must
    agree with.
    """
    _check_criterion(criterion)
    prop = score(dataset, cache, s)
    if criterion == "smd":
        return f_smd(smd_moments(dataset, match_all(dataset, prop)))
    return f_psw(psw_moments(dataset, prop))


def _check_criterion(criterion: str) -> None:
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")


def _logits(e: np.ndarray) -> np.ndarray:
    return np.log(e) - np.log1p(-e)


class CriterionCache:
    """Per-(subgroup, scope choice) aggregates for fast criterion values.

    For the matching criterion each entry holds the subgroup's matched
    treated count and its treated-minus-weighted-control covariate sums,
    pre-scaled by the standardizing denominators; for the weighting
    criterion it holds the odds-weighted control totals.  A full value is
    O(RK); a single-coordinate flip is O(K).
    """

    def __init__(self, dataset: Dataset, cache: FitCache, criterion: str):
        _check_criterion(criterion)
        if np.any(np.isnan(cache.e_subgroup)):
            raise ValueError("criterion cache requires subgroup fits; "
                             "precompute_fits(include_subgroup_fits=True)")
        self.criterion = criterion
        self.R = dataset.R
        self.K = dataset.K
        self.evaluations = 0

        from .logistic import clamp_probabilities
        e_by_choice = (clamp_probabilities(cache.e_overall),
                       clamp_probabilities(cache.e_subgroup))
        index = cache.index

        if criterion == "smd":
            sd, eff_sub, _ = effective_sds(dataset)
            inv_sd = np.where(sd > 0, 1.0 / np.where(sd > 0, sd, 1.0), 0.0)
            inv_eff = np.where(eff_sub > 0, 1.0 / np.where(eff_sub > 0, eff_sub, 1.0), 0.0)
            # m[r][c], dov[r][c][k], tsub[r][c] with c = choice-1
            self._m = [[0.0, 0.0] for _ in range(self.R)]
            self._dov = [[None, None] for _ in range(self.R)]
            self._tsub = [[0.0, 0.0] for _ in range(self.R)]
            for r in range(1, self.R + 1):
                t_pos = index.treated[r - 1]
                c_pos = index.control[r - 1]
                sub_pos = index.subgroup(r)
                for c in range(2):
                    logit = _logits(e_by_choice[c][sub_pos])
                    m = match_subgroup(
                        logit[:len(t_pos)], logit[len(t_pos):],
                        caliper_width(logit), r=r,
                        treated_positions=t_pos, control_positions=c_pos)
                    if m.n_matched_treated:
                        diff = (dataset.x[m.matched_treated].sum(axis=0)
                                - m.control_weights @ dataset.x[c_pos])
                    else:
                        diff = np.zeros(self.K)
                    self._m[r - 1][c] = float(m.n_matched_treated)
                    self._dov[r - 1][c] = (diff * inv_sd).tolist()
                    self._tsub[r - 1][c] = float(np.sum((diff * inv_eff[r - 1]) ** 2))
        else:
            n = dataset.n
            treated = dataset.z == 1
            self._n_sq = float(n) ** 2
            self._tx = dataset.x[treated].sum(axis=0).tolist()
            # ovec[r][c][k], u[r][c], w[r][c]
            self._ovec = [[None, None] for _ in range(self.R)]
            self._u = [[0.0, 0.0] for _ in range(self.R)]
            self._w = [[0.0, 0.0] for _ in range(self.R)]
            for r in range(1, self.R + 1):
                c_pos = index.control[r - 1]
                t_pos = index.treated[r - 1]
                n_rt = float(len(t_pos))
                txr = dataset.x[t_pos].sum(axis=0)
                for c in range(2):
                    e = e_by_choice[c][c_pos]
                    odds = e / (1.0 - e)
                    ovec = odds @ dataset.x[c_pos]
                    self._ovec[r - 1][c] = ovec.tolist()
                    self._u[r - 1][c] = (n_rt - float(odds.sum())) ** 2
                    self._w[r - 1][c] = float(np.sum((txr - ovec) ** 2))

    def value(self, s: Sequence[int]) -> float:
        """Full criterion value; +inf when no treated unit matches at all."""
        self.evaluations += 1
        K = self.K
        if self.criterion == "smd":
            m_tot = 0.0
            t_sum = 0.0
            d = [0.0] * K
            for r in range(self.R):
                c = s[r] - 1
                m_tot += self._m[r][c]
                t_sum += self._tsub[r][c]
                drc = self._dov[r][c]
                for k in range(K):
                    d[k] += drc[k]
            if m_tot == 0.0:
                return math.inf
            return (sum(x * x for x in d) + t_sum) / (4.0 * m_tot * m_tot)
        o = [0.0] * K
        uw = 0.0
        for r in range(self.R):
            c = s[r] - 1
            uw += self._u[r][c] + self._w[r][c]
            orc = self._ovec[r][c]
            for k in range(K):
                o[k] += orc[k]
        tx = self._tx
        return (sum((tx[k] - o[k]) ** 2 for k in range(K)) + uw) / self._n_sq


def _descend_smd(cache: CriterionCache, svals: list[int],
                 order: Sequence[int]) -> float:
    """Coordinate descent sweeps over a fixed order until no flip helps."""
    K = cache.K
    m_tab, dov, tsub = cache._m, cache._dov, cache._tsub
    m_tot = 0.0
    t_sum = 0.0
    d = [0.0] * K
    for r in range(cache.R):
        c = svals[r] - 1
        m_tot += m_tab[r][c]
        t_sum += tsub[r][c]
        drc = dov[r][c]
        for k in range(K):
            d[k] += drc[k]
    cache.evaluations += 1
    f = ((sum(x * x for x in d) + t_sum) / (4.0 * m_tot * m_tot)
         if m_tot > 0.0 else math.inf)

    changed = True
    while changed:
        changed = False
        for r in order:
            c = svals[r] - 1
            c2 = 1 - c
            m2 = m_tot + m_tab[r][c2] - m_tab[r][c]
            a = dov[r][c2]
            b = dov[r][c]
            ssq = 0.0
            for k in range(K):
                dk = d[k] + a[k] - b[k]
                ssq += dk * dk
            t2 = t_sum + tsub[r][c2] - tsub[r][c]
            cache.evaluations += 1
            f2 = (ssq + t2) / (4.0 * m2 * m2) if m2 > 0.0 else math.inf
            if f2 < f:
                svals[r] = c2 + 1
                m_tot = m2
                t_sum = t2
                for k in range(K):
                    d[k] += a[k] - b[k]
                f = f2
                changed = True
    return f


def _descend_psw(cache: CriterionCache, svals: list[int],
                 order: Sequence[int]) -> float:
    K = cache.K
    ovec, u_tab, w_tab, tx = cache._ovec, cache._u, cache._w, cache._tx
    o = [0.0] * K
    uw = 0.0
    for r in range(cache.R):
        c = svals[r] - 1
        uw += u_tab[r][c] + w_tab[r][c]
        orc = ovec[r][c]
        for k in range(K):
            o[k] += orc[k]
    cache.evaluations += 1
    f = (sum((tx[k] - o[k]) ** 2 for k in range(K)) + uw) / cache._n_sq

    changed = True
    while changed:
        changed = False
        for r in order:
            c = svals[r] - 1
            c2 = 1 - c
            a = ovec[r][c2]
            b = ovec[r][c]
            ssq = 0.0
            for k in range(K):
                dk = tx[k] - o[k] - a[k] + b[k]
                ssq += dk * dk
            uw2 = uw + u_tab[r][c2] + w_tab[r][c2] - u_tab[r][c] - w_tab[r][c]
            cache.evaluations += 1
            f2 = (ssq + uw2) / cache._n_sq
            if f2 < f:
                svals[r] = c2 + 1
                uw = uw2
                for k in range(K):
                    o[k] += a[k] - b[k]
                f = f2
                changed = True
    return f


def exhaustive(dataset: Dataset, cache: FitCache, criterion: str,
               cap: int = 15,
               crit_cache: Optional[CriterionCache] = None) -> SearchResult:
    """Global minimum over all 2^R scope vectors.

    Ties are broken toward the vector with more pooled-fit entries
    (more 1s), then lexicographically.
    """
    if dataset.R > cap:
        raise ValueError(f"exhaustive search over 2^{dataset.R} scope vectors "
                         f"exceeds the cap of R={cap}; use stochastic search")
    cc = crit_cache or CriterionCache(dataset, cache, criterion)
    best_s = None
    best_f = math.inf
    best_twos = -1
    for s in itertools.product((OVERALL, SUBGROUP), repeat=dataset.R):
        f = cc.value(s)
        twos = s.count(SUBGROUP)
        # product() yields lexicographic order, so on full ties the first
        # (lexicographically smallest) candidate is kept.
        if best_s is None or f < best_f or (f == best_f and twos < best_twos):
            best_s, best_f, best_twos = s, f, twos
    return SearchResult(s_min=ScopeVector(best_s), f_min=best_f,
                        criterion=criterion, evaluations=cc.evaluations,
                        restarts_improved=0)


def stochastic(dataset: Dataset, cache: FitCache, criterion: str,
               L: int, seed: SeedLike = 0,
               crit_cache: Optional[CriterionCache] = None) -> SearchResult:
    """Multi-start coordinate-descent search over scope vectors.

    The incumbent starts at the all-ones scope vector (the pooled-fit
    baseline), so the result can never be worse than that baseline.  Each
    of the L restarts initializes every coordinate uniformly at random,
    draws one random coordinate order, and sweeps in that order, flipping
    a coordinate only when the flip strictly lowers the criterion, until
    a full sweep makes no change.  A restart's local optimum replaces the
    incumbent only when strictly smaller, so the earliest restart wins
    ties.

    All restart randomness (initial vectors and coordinate orders) is
    drawn upfront from a single PCG64 stream derived from ``seed``;
    restart l consumes its own fixed block, so the result is reproducible
    and independent of how restarts are scheduled.  Permutations use
    Fisher-Yates and the generator is portable across platforms.
    """
    if L < 1:
        raise ValueError("restart count L must be >= 1")
    _check_criterion(criterion)
    cc = crit_cache or CriterionCache(dataset, cache, criterion)
    descend = _descend_smd if criterion == "smd" else _descend_psw

    s_min = [OVERALL] * dataset.R
    f_min = cc.value(s_min)
    improved = 0

    rng = generator(seed)
    inits = rng.integers(OVERALL, SUBGROUP + 1, size=(L, dataset.R))
    orders = rng.permuted(np.tile(np.arange(dataset.R), (L, 1)), axis=1)
    for l in range(L):
        svals = [int(v) for v in inits[l]]
        order = orders[l].tolist()
        descend(cc, svals, order)
        # Re-evaluate from scratch so incumbent comparisons are free of
        # the tiny drift the incremental updates can accumulate.
        f = cc.value(svals)
        if f < f_min:
            f_min = f
            s_min = list(svals)
            improved += 1
    return SearchResult(s_min=ScopeVector.of(s_min), f_min=f_min,
                        criterion=criterion, evaluations=cc.evaluations,
                        restarts_improved=improved)
