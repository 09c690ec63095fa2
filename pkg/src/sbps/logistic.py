"""Binary logistic regression fitted by Newton's method (IRLS).

This is the single numerical engine behind both propensity models: the
pooled model with subgroup indicators and the per-subgroup models.  It is
plain maximum likelihood with two safeguards aimed at small-sample
subgroup fits:

* step-halving whenever a full Newton step would decrease the
  log-likelihood, and
* a small ridge on the Hessian diagonal when the Hessian is numerically
  singular or fitted probabilities hit the working boundary, in which
  case the fit is flagged ``quasi_separated`` (downstream code proceeds
  but reports the flag).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr as _qr_pivoted
from scipy.special import expit

GRAD_TOL = 1e-8
MAX_ITER = 100
PROB_EPS = 1e-12
RIDGE = 1e-8
MAX_STEP = 10.0


class RankDeficientDesignError(ValueError):
    """Design matrix has linearly dependent columns."""

    def __init__(self, columns: list[str]):
        self.columns = columns
        super().__init__(
            "design matrix is rank deficient; dependent columns: "
            + ", ".join(columns))


class SingleClassError(ValueError):
    """Response vector contains only one class."""


@dataclass
class DesignMatrix:
    """A dense model matrix with named columns."""

    matrix: np.ndarray
    labels: list[str]

    def __post_init__(self) -> None:
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("design matrix must be 2-d")
        if len(self.labels) != self.matrix.shape[1]:
            raise ValueError("one label per design column required")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> int:
        return self.matrix.shape[1]


@dataclass
class LogisticCoefficients:
    """Fitted coefficients plus convergence diagnostics."""

    beta: np.ndarray
    labels: list[str]
    converged: bool
    iterations: int
    grad_norm: float
    quasi_separated: bool = False


def log_likelihood(design: DesignMatrix, z: np.ndarray, beta: np.ndarray) -> float:
    """Bernoulli log-likelihood at ``beta`` (probabilities clamped)."""
    p = clamp_probabilities(expit(design.matrix @ beta))
    return float(np.sum(z * np.log(p) + (1.0 - z) * np.log1p(-p)))


def score(design: DesignMatrix, z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Gradient of the log-likelihood: X'(z - p)."""
    p = expit(design.matrix @ beta)
    return design.matrix.T @ (z - p)


def clamp_probabilities(p: np.ndarray) -> np.ndarray:
    """Clamp probabilities into [1e-12, 1 - 1e-12].

    Applied before any logit or odds computation so that downstream
    weights stay finite.
    """
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _check_rank(design: DesignMatrix) -> None:
    # Fast path: X has full column rank iff X'X admits a Cholesky factor.
    # Only on failure run the pivoted QR that names the dependent columns.
    gram = design.matrix.T @ design.matrix
    try:
        np.linalg.cholesky(gram)
        return
    except np.linalg.LinAlgError:
        pass
    r, pivots = _qr_pivoted(design.matrix, mode="r", pivoting=True)
    r_diag = np.abs(np.diag(r))
    tol = design.matrix.shape[0] * np.finfo(np.float64).eps * max(r_diag.max(), 1.0)
    rank = int(np.count_nonzero(r_diag > tol))
    if rank < design.p:
        bad = sorted(design.labels[j] for j in pivots[rank:])
        raise RankDeficientDesignError(bad)


def fit(design: DesignMatrix, z: np.ndarray) -> LogisticCoefficients:
    """Maximize the Bernoulli likelihood by Newton iterations.

    Parameters
    ----------
    design : DesignMatrix
        Model matrix, one row per unit.
    z : array of shape (n,)
        Binary response; must contain both classes.

    Returns
    -------
    LogisticCoefficients
        ``converged`` is set when the largest score component falls to
        1e-8 or below within 100 iterations; the log-likelihood is
        non-decreasing across iterations by construction.

    Raises
    ------
    SingleClassError
        If ``z`` is constant.
    RankDeficientDesignError
        If design columns are linearly dependent (offending columns are
        named in the message).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (design.n,):
        raise ValueError("response length must match design rows")
    if z.min() == z.max():
        raise SingleClassError("response contains a single class; cannot fit")
    if design.p > design.n:
        raise ValueError(f"design has more columns ({design.p}) than rows "
                         f"({design.n})")
    zero = [design.labels[j] for j in range(design.p)
            if not np.any(design.matrix[:, j])]
    if zero:
        raise RankDeficientDesignError(zero)
    _check_rank(design)

    x = design.matrix
    beta = np.zeros(design.p)
    ll = log_likelihood(design, z, beta)
    quasi = False
    steps = 0
    stalled = 0

    for _ in range(MAX_ITER):
        p = expit(x @ beta)
        at_boundary = bool(np.any(p <= PROB_EPS) or np.any(p >= 1.0 - PROB_EPS))
        if at_boundary:
            quasi = True
        g = x.T @ (z - p)
        if np.max(np.abs(g)) <= GRAD_TOL:
            return LogisticCoefficients(beta, design.labels, True, steps,
                                        float(np.max(np.abs(g))), quasi)
        w = p * (1.0 - p)
        hess = x.T @ (x * w[:, None])
        ridge = RIDGE if at_boundary else 0.0
        while True:
            try:
                step = np.linalg.solve(
                    hess + ridge * np.eye(design.p) if ridge else hess,
                    g)
                break
            except np.linalg.LinAlgError:
                quasi = True
                ridge = RIDGE if ridge == 0.0 else ridge * 10.0
        # Trust-region style cap: ridged steps on separated data can be
        # astronomically long and would waste dozens of halvings.
        longest = np.max(np.abs(step))
        if longest > MAX_STEP:
            step *= MAX_STEP / longest

        if longest <= 1e-6 * (1.0 + np.max(np.abs(beta))):
            # Quadratic-convergence zone: the likelihood change is below
            # float resolution, so take the Newton step unchecked.
            beta = beta + step
            steps += 1
            continue

        # Step-halving keeps the log-likelihood non-decreasing.
        scale = 1.0
        for _ in range(30):
            candidate = beta + scale * step
            ll_new = log_likelihood(design, z, candidate)
            if ll_new >= ll:
                stalled = stalled + 1 if ll_new == ll else 0
                beta = candidate
                ll = ll_new
                steps += 1
                break
            scale *= 0.5
        else:
            # No ascent possible along the Newton direction; stop here.
            break
        if stalled >= 2 and quasi:
            # Likelihood pinned at float resolution on a separation
            # plateau; further iterations only inflate coefficients.
            break

    g = score(design, z, beta)
    grad_norm = float(np.max(np.abs(g)))
    return LogisticCoefficients(beta, design.labels, grad_norm <= GRAD_TOL,
                                steps, grad_norm, quasi)


def predict(design: DesignMatrix, coef: LogisticCoefficients) -> np.ndarray:
    """Fitted probabilities for ``design``, clamped inside (0, 1)."""
    if design.p != len(coef.beta):
        raise ValueError(
            f"design has {design.p} columns but coefficients have "
            f"{len(coef.beta)} entries")
    return clamp_probabilities(expit(design.matrix @ coef.beta))
