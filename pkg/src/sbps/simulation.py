"""Synthetic data generating processes and the replicated benchmark harness.

Two generators are provided: a fully synthetic design with a covariate
whose distribution shifts across subgroups, quadratic and interaction
effects in both the treatment and outcome models, and linearly ramped
subgroup effects; and a semi-synthetic design that keeps user-supplied
covariates and group labels fixed while simulating treatment and outcome
from supplied coefficient vectors.

The harness runs a grid of (method x estimator) cells over V replicated
datasets and summarizes each subgroup's absolute bias, root mean squared
error, and 95% interval coverage, plus their across-subgroup averages.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from ._rng import SeedLike, derive, generator
from .data import Dataset, validate
from .inference import Z_95, bootstrap_taus, se_from_taus
from .pipeline import PipelineConfig, run_pipeline

SIM1_ALPHA = (-1.5, -0.5, 0.5, -0.5, 0.5, 0.5)
SIM1_BETA = (200.0, 20.0, 10.0, 10.0, 10.0, -5.0, 10.0)
SIM1_CORRECT_TERMS = ("x1", "x2", "x3", "x4", "x1^2", "x1*x4")
SIM1_MISSPECIFIED_TERMS = ("x1", "x2", "x3", "x4")

METHOD_GRID = ("traditional", "sbps-smd", "sbps-psw")
MAX_GENERATION_ATTEMPTS = 1000


def _ramp(low: float, high: float, R: int) -> np.ndarray:
    return low + (high - low) * np.arange(R) / (R - 1)


def _defined_mean(values: np.ndarray) -> float:
    defined = values[~np.isnan(values)]
    return float(defined.mean()) if len(defined) else math.nan


@dataclass(frozen=True)
class Sim1Config:
    """Fully synthetic design.

    Defaults reproduce the benchmark design: 20 subgroups of 100 units,
    covariate means ramping from -3 to 3, treatment intercepts from -1
    to 1, true subgroup effects from -10 to 10, unit noise sd, and the
    quadratic/interaction terms x1^2 and x1*x4 in both models.
    """

    R: int = 20
    n_per_group: int = 100
    alpha: tuple[float, ...] = SIM1_ALPHA
    beta: tuple[float, ...] = SIM1_BETA
    noise_sd: float = 1.0
    delta: Optional[tuple[float, ...]] = None   # default: ramp -1..1
    eta: Optional[tuple[float, ...]] = None     # default: ramp -10..10

    def __post_init__(self) -> None:
        if self.R < 2:
            raise ValueError("need R >= 2 subgroups (ramps divide by R-1)")
        if len(self.alpha) != 6:
            raise ValueError("alpha must have 6 entries")
        if len(self.beta) != 7:
            raise ValueError("beta must have 7 entries")
        for name, vec in (("delta", self.delta), ("eta", self.eta)):
            if vec is not None and len(vec) != self.R:
                raise ValueError(f"{name} must have R={self.R} entries")

    @property
    def mu(self) -> np.ndarray:
        return _ramp(-3.0, 3.0, self.R)

    def delta_values(self) -> np.ndarray:
        return np.asarray(self.delta) if self.delta is not None \
            else _ramp(-1.0, 1.0, self.R)

    def eta_values(self) -> np.ndarray:
        return np.asarray(self.eta) if self.eta is not None \
            else _ramp(-10.0, 10.0, self.R)

    def analysis_terms(self, model: str) -> tuple[str, ...]:
        return SIM1_CORRECT_TERMS if model == "correct" else SIM1_MISSPECIFIED_TERMS


@dataclass(frozen=True)
class ShiwLikeConfig:
    """Semi-synthetic design over fixed covariates and group labels.

    ``x``/``g`` hold the covariate matrix and subgroup labels (1..R);
    treatment comes from a logistic model with per-subgroup intercepts
    ``delta`` and coefficients ``alpha``, the outcome from a linear model
    with intercept ``beta0``, coefficients ``beta``, per-subgroup treated
    shifts ``eta`` (the true effects), and noise sd ``noise_sd``.  Under
    the misspecified analysis model, ``drop_covariate`` is removed from
    the analysis terms only; generation always uses every covariate.
    """

    x: np.ndarray
    g: np.ndarray
    delta: tuple[float, ...]
    alpha: tuple[float, ...]
    beta0: float
    beta: tuple[float, ...]
    eta: tuple[float, ...]
    noise_sd: float = 50.0
    covariate_names: tuple[str, ...] = ()
    drop_covariate: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=np.int64))
        if not len(self.delta) or not len(self.eta):
            raise ValueError("delta and eta coefficient vectors are required")
        k = self.x.shape[1]
        if len(self.alpha) != k or len(self.beta) != k:
            raise ValueError(f"alpha and beta must have K={k} entries")
        r = int(self.g.max())
        if len(self.delta) != r or len(self.eta) != r:
            raise ValueError(f"delta and eta must have R={r} entries")
        if not self.covariate_names:
            object.__setattr__(self, "covariate_names",
                               tuple(f"x{j + 1}" for j in range(k)))
        if self.drop_covariate is not None \
                and self.drop_covariate not in self.covariate_names:
            raise ValueError(f"drop_covariate {self.drop_covariate!r} is not "
                             "a covariate")

    @property
    def R(self) -> int:
        return len(self.delta)

    def analysis_terms(self, model: str) -> tuple[str, ...]:
        if model == "correct" or self.drop_covariate is None:
            return tuple(self.covariate_names)
        return tuple(n for n in self.covariate_names if n != self.drop_covariate)


DgpConfig = Union[Sim1Config, ShiwLikeConfig]


@dataclass
class SimulatedData:
    dataset: Dataset
    tau_true: np.ndarray
    attempts: int = 1


def generate_sim1(config: Sim1Config, replicate: int,
                  seed: SeedLike = 0) -> SimulatedData:
    """Draw one synthetic dataset; deterministic in (seed, replicate).

    Covariates: x1 ~ N(mu_r, 1), x2 ~ Unif(0,1), x3 ~ N(0,1),
    x4 ~ Bernoulli(0.4).  Treatment follows a logistic model in the four
    covariates plus x1^2 and x1*x4 with subgroup intercepts; the outcome
    is linear in the same terms plus the per-subgroup treated shift.
    Draws are repeated (with a derived sub-seed) until every subgroup has
    at least one treated and one control unit.
    """
    delta = config.delta_values()
    eta = config.eta_values()
    g = np.repeat(np.arange(1, config.R + 1), config.n_per_group)
    n = len(g)
    a = config.alpha
    b = config.beta

    for attempt in range(MAX_GENERATION_ATTEMPTS):
        rng = generator(seed, replicate, 0, attempt)
        x1 = config.mu[g - 1] + rng.standard_normal(n)
        x2 = rng.uniform(0.0, 1.0, size=n)
        x3 = rng.standard_normal(n)
        x4 = rng.binomial(1, 0.4, size=n).astype(np.float64)
        logit = (delta[g - 1] + a[0] * x1 + a[1] * x2 + a[2] * x3
                 + a[3] * x4 + a[4] * x1 ** 2 + a[5] * x1 * x4)
        z = (rng.uniform(size=n) < expit(logit)).astype(np.int64)
        y = (b[0] + eta[g - 1] * z + b[1] * x1 + b[2] * x2 + b[3] * x3
             + b[4] * x4 + b[5] * x1 ** 2 + b[6] * x1 * x4
             + config.noise_sd * rng.standard_normal(n))
        dataset = Dataset(z=z, g=g, x=np.column_stack([x1, x2, x3, x4]),
                          y=y, R=config.R)
        if not validate(dataset):
            return SimulatedData(dataset=dataset, tau_true=eta.copy(),
                                 attempts=attempt + 1)
    raise RuntimeError(
        f"could not draw a dataset with nonempty (subgroup x arm) cells in "
        f"{MAX_GENERATION_ATTEMPTS} attempts; the design is too extreme")


def sim1_true_propensity(config: Sim1Config, dataset: Dataset) -> np.ndarray:
    """Generating-model treatment probabilities for a synthetic dataset."""
    x1, x2, x3, x4 = (dataset.x[:, j] for j in range(4))
    a = config.alpha
    logit = (config.delta_values()[dataset.g - 1] + a[0] * x1 + a[1] * x2
             + a[2] * x3 + a[3] * x4 + a[4] * x1 ** 2 + a[5] * x1 * x4)
    return expit(logit)


def generate_shiw_like(config: ShiwLikeConfig, replicate: int = 0,
                       seed: SeedLike = 0) -> SimulatedData:
    """Simulate treatment and outcome over fixed covariates.

    The true subgroup effects are the configured ``eta``.  As with the
    fully synthetic design, draws are repeated until every subgroup has
    both arms nonempty.
    """
    x = config.x
    g = config.g
    n = x.shape[0]
    alpha = np.asarray(config.alpha)
    beta = np.asarray(config.beta)
    delta = np.asarray(config.delta)
    eta = np.asarray(config.eta)

    for attempt in range(MAX_GENERATION_ATTEMPTS):
        rng = generator(seed, replicate, 0, attempt)
        logit = delta[g - 1] + x @ alpha
        z = (rng.uniform(size=n) < expit(logit)).astype(np.int64)
        y = (config.beta0 + eta[g - 1] * z + x @ beta
             + config.noise_sd * rng.standard_normal(n))
        dataset = Dataset(z=z, g=g, x=x, y=y, R=config.R,
                          covariate_names=list(config.covariate_names))
        if not validate(dataset):
            return SimulatedData(dataset=dataset, tau_true=eta.copy(),
                                 attempts=attempt + 1)
    raise RuntimeError(
        f"could not draw a dataset with nonempty (subgroup x arm) cells in "
        f"{MAX_GENERATION_ATTEMPTS} attempts; check delta against the "
        "covariates")


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark run: a DGP, an analysis model spec, and a method grid.

    ``B = 0`` skips the bootstrap (no coverage measure).  Defaults match
    the full-scale benchmark (V = B = L = 1000); desk-scale presets are
    provided by the command-line interface.
    """

    dgp: DgpConfig = field(default_factory=Sim1Config)
    model: str = "correct"
    methods: tuple[str, ...] = METHOD_GRID
    estimators: tuple[str, ...] = ("direct", "psw")
    V: int = 1000
    B: int = 1000
    restarts: int = 1000
    search: str = "auto"
    exhaustive_cap: int = 15
    seed: int = 0
    workers: int = 1
    reoptimize_in_bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.model not in ("correct", "misspecified"):
            raise ValueError("model must be 'correct' or 'misspecified'")
        for m in self.methods:
            if m not in METHOD_GRID:
                raise ValueError(f"unknown method {m!r}; grid is {METHOD_GRID}")
        if self.V < 1:
            raise ValueError("V must be >= 1")
        if self.B == 1:
            raise ValueError("B must be 0 (no bootstrap) or >= 2")

    def pipeline_config(self, method: str) -> PipelineConfig:
        terms = self.dgp.analysis_terms(self.model)
        if method == "traditional":
            return PipelineConfig(method="traditional", estimators=self.estimators,
                                  terms=terms)
        criterion = "smd" if method == "sbps-smd" else "psw"
        return PipelineConfig(method="sbps", criterion=criterion,
                              estimators=self.estimators, terms=terms,
                              search=self.search, restarts=self.restarts,
                              exhaustive_cap=self.exhaustive_cap,
                              reoptimize_in_bootstrap=self.reoptimize_in_bootstrap)


@dataclass
class MethodCell:
    """Performance measures of one (method, estimator) cell."""

    method: str
    estimator: str
    model: str
    true_tau: np.ndarray
    abs_bias: np.ndarray
    rmse: np.ndarray
    coverage: np.ndarray
    n_excluded: np.ndarray
    n_ci_excluded: np.ndarray

    @property
    def abs_bias_avg(self) -> float:
        return _defined_mean(self.abs_bias)

    @property
    def rmse_avg(self) -> float:
        return _defined_mean(self.rmse)

    @property
    def coverage_avg(self) -> float:
        return _defined_mean(self.coverage)


@dataclass
class PerformanceTable:
    """All cells of one experiment plus per-method scope usage."""

    cells: list[MethodCell]
    true_tau: np.ndarray
    model: str
    V: int
    B: int
    seed: int
    scope_fractions: dict[str, float]
    failures: list[str] = field(default_factory=list)

    def cell(self, method: str, estimator: str) -> MethodCell:
        for c in self.cells:
            if c.method == method and c.estimator == estimator:
                return c
        raise KeyError(f"no cell for ({method}, {estimator})")


def _generate(config: ExperimentConfig, v: int) -> SimulatedData:
    if isinstance(config.dgp, Sim1Config):
        return generate_sim1(config.dgp, v, seed=config.seed)
    return generate_shiw_like(config.dgp, v, seed=config.seed)


def _run_replicate(config: ExperimentConfig, v: int) -> dict:
    """All method cells for replicate v; pure function of (config, v)."""
    data = _generate(config, v)
    R = data.dataset.R
    out = {"v": v, "attempts": data.attempts, "taus": {}, "ses": {},
           "scope_fraction": {}, "failures": []}
    for m_i, method in enumerate(config.methods):
        pcfg = config.pipeline_config(method)
        try:
            result = run_pipeline(data.dataset, pcfg,
                                  search_seed=derive(config.seed, v, 1, m_i))
            if method != "traditional":
                out["scope_fraction"][method] = \
                    result.scope.subgroup_fit_fraction()
            for est in config.estimators:
                eff = result.tau(est)
                out["taus"][(method, est)] = np.where(eff.defined,
                                                      eff.tau_hat, np.nan)
            if config.B >= 2:
                fixed = None if config.reoptimize_in_bootstrap else result.scope
                taus_b = bootstrap_taus(data.dataset, pcfg, config.B,
                                        derive(config.seed, v, 2, m_i),
                                        fixed_scope=fixed)
                for est in config.estimators:
                    out["ses"][(method, est)] = se_from_taus(taus_b[est])[0]
        except Exception as exc:  # replicate failures are recorded, not fatal
            out["failures"].append(f"replicate {v}, method {method}: {exc!r}")
            for est in config.estimators:
                out["taus"].setdefault((method, est), np.full(R, np.nan))
    return out


def run_experiment(config: ExperimentConfig) -> PerformanceTable:
    """Run the full replicated benchmark and aggregate the measures.

    Per cell and subgroup: absolute bias |mean(tau_hat) - tau|, RMSE
    sqrt(mean((tau_hat - tau)^2)), and the proportion of 95% normal
    intervals covering the true effect.  Undefined estimates are excluded
    with counts; replicate failures are recorded, not fatal.  Results are
    a pure function of the config (worker count does not matter).
    """
    tau_true = (config.dgp.eta_values() if isinstance(config.dgp, Sim1Config)
                else np.asarray(config.dgp.eta, dtype=np.float64))
    R = len(tau_true)

    if config.workers > 1 and config.V > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_replicate,
                                    [config] * config.V, range(config.V),
                                    chunksize=1))
    else:
        results = [_run_replicate(config, v) for v in range(config.V)]
    results.sort(key=lambda d: d["v"])

    failures: list[str] = []
    for res in results:
        failures.extend(res["failures"])

    cells = []
    for method in config.methods:
        for est in config.estimators:
            taus = np.vstack([res["taus"].get((method, est), np.full(R, np.nan))
                              for res in results])
            err = taus - tau_true[None, :]
            defined = ~np.isnan(taus)
            n_defined = defined.sum(axis=0)
            denom = np.maximum(n_defined, 1)
            err_zeroed = np.where(defined, err, 0.0)
            abs_bias = np.abs(err_zeroed.sum(axis=0) / denom)
            rmse = np.sqrt((err_zeroed ** 2).sum(axis=0) / denom)
            abs_bias[n_defined == 0] = np.nan
            rmse[n_defined == 0] = np.nan

            coverage = np.full(R, np.nan)
            n_ci_excluded = np.zeros(R, dtype=np.int64)
            if config.B >= 2:
                ses = np.vstack([res["ses"].get((method, est), np.full(R, np.nan))
                                 for res in results])
                covered = ((taus - Z_95 * ses <= tau_true[None, :])
                           & (tau_true[None, :] <= taus + Z_95 * ses))
                valid = ~np.isnan(taus) & ~np.isnan(ses)
                n_ci_excluded = np.sum(~valid, axis=0)
                for r in range(R):
                    if valid[:, r].any():
                        coverage[r] = covered[valid[:, r], r].mean()

            cells.append(MethodCell(
                method=method, estimator=est, model=config.model,
                true_tau=tau_true.copy(), abs_bias=abs_bias, rmse=rmse,
                coverage=coverage,
                n_excluded=config.V - n_defined,
                n_ci_excluded=n_ci_excluded))

    scope_fractions = {}
    for method in config.methods:
        if method == "traditional":
            continue
        fracs = [res["scope_fraction"][method] for res in results
                 if method in res["scope_fraction"]]
        scope_fractions[method] = float(np.mean(fracs)) if fracs else math.nan

    return PerformanceTable(cells=cells, true_tau=tau_true, model=config.model,
                            V=config.V, B=config.B, seed=config.seed,
                            scope_fractions=scope_fractions, failures=failures)
