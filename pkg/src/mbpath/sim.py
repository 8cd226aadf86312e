"""Simulation of target/external cohorts and Monte-Carlo replication metrics.

Every replication ``r`` draws from its own generator seeded with
``derive_seed(master_seed, r)``, so results do not depend on how many
replications run concurrently.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .data import DesignMatrix, ExternalDataset, TargetDataset
from .errors import DataError, MbpathError
from .pathway import (
    PathwayConfig,
    predictive_correlation,
    run_integrative,
    run_sample_split,
    run_target_only,
)
from .seeds import derive_seed

PERTURBATIONS = ("none", "scale_change", "position_change")
METHODS = ("integrative", "target_only", "sample_split")
LAYOUTS = ("full", "strong", "strong_positive", "partial")
TAU_GRID = (0.25, 0.5, 0.75, 1.0, 1.25, 2.0, 4.0)
THETA_GRID = (0.0, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2)


# --- coefficient layouts -------------------------------------------------------


def full_layout(p, k):
    """Blocks of the fully-informative design: k confounders, k instruments, k direct.

    gamma* = (-0.5 x k, 0, ..., 0, 0.5 x k); beta* = (0.1 x k/2, -0.1 x 3k/2, 0, ...).
    At p = 393, k = 20 this is the published layout.
    """
    if 3 * k > p:
        raise ValueError(f"layout needs p >= 3k (p={p}, k={k})")
    gamma = np.zeros(p)
    gamma[:k] = -0.5
    gamma[p - k:] = 0.5
    beta = np.zeros(p)
    beta[: k // 2] = 0.1
    beta[k // 2: 2 * k] = -0.1
    return beta, gamma


def strong_layout(p, k):
    """Selection design: ``full_layout`` with every beta magnitude raised to 0.5."""
    beta, gamma = full_layout(p, k)
    return 5.0 * beta, gamma


def strong_positive_layout(p, k):
    """gamma as in ``full_layout``, beta* = (0.5 x 2k, 0, ...).

    With m_hat = X gamma_hat the pairs (theta + t, beta - t gamma_hat) fit
    equally well, and here sum_j |beta_j - t gamma_j| is flat over an
    interval of t, so the second-stage Lasso solution is not unique.
    """
    beta, gamma = full_layout(p, k)
    beta[:] = 0.0
    beta[: 2 * k] = 0.5
    return beta, gamma


def partial_layout(p, head=5, tail=20, beta_len=None):
    """Partially-informative design: gamma* = (0.025 x head, 0, ..., 0.25 x tail).

    beta* = (0.1 x beta_len, 0, ...).  By default beta covers about 10% of the
    taxa (40 of 393).  Row-centred designs couple beta to m through
    -sum(beta) * sum(gamma) / p, and a fixed count of 40 would make that
    coupling four times stronger at p = 100 than at p = 393.
    """
    if beta_len is None:
        beta_len = max(1, round(40 * p / 393))
    if head + 10 + tail > p or beta_len > p - tail:
        raise ValueError(f"partial layout does not fit p={p}")
    gamma = np.zeros(p)
    gamma[:head] = 0.025
    gamma[p - tail:] = 0.25
    beta = np.zeros(p)
    beta[:beta_len] = 0.1
    return beta, gamma


# --- specs -------------------------------------------------------------------


@dataclass(frozen=True)
class GenerativeSpec:
    theta_star: float
    beta_star: np.ndarray
    gamma_star: np.ndarray
    rho: float = 0.0
    external_delta_sd: float = 1.0
    design_source: str = "synthetic_subgaussian"
    target_pool: Optional[np.ndarray] = field(default=None, repr=False)
    external_pool: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if not self.external_delta_sd > 0:
            raise ValueError("external_delta_sd must be positive")
        b = np.asarray(self.beta_star, dtype=float)
        g = np.asarray(self.gamma_star, dtype=float)
        if b.shape != g.shape or b.ndim != 1:
            raise ValueError("beta_star and gamma_star must be vectors of equal length")
        object.__setattr__(self, "beta_star", b)
        object.__setattr__(self, "gamma_star", g)
        if self.design_source not in ("synthetic_subgaussian", "provided"):
            raise ValueError(f"unknown design_source {self.design_source!r}")
        if self.design_source == "provided" and (self.target_pool is None
                                                 or self.external_pool is None):
            raise ValueError("provided design source needs target_pool and external_pool")

    @property
    def p(self):
        return self.beta_star.shape[0]


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str = "none"
    tau: float = 0.0
    rng_seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not self.tau >= 0:
            raise ValueError("tau must be non-negative")


@dataclass(frozen=True)
class Truth:
    theta_star: float
    beta_star: np.ndarray
    gamma_star: np.ndarray
    gamma_tilde_star: np.ndarray
    epsilon: np.ndarray
    delta: np.ndarray
    delta_tilde: np.ndarray


# --- generation ----------------------------------------------------------------


def generate_design(n, p, rng_seed, source="synthetic_subgaussian", matrix=None,
                    taxa_ids=None) -> DesignMatrix:
    """Row-centered i.i.d. N(0, 1) design, or validation of a provided matrix."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    taxa = taxa_ids or tuple(f"taxon_{j:03d}" for j in range(p))
    if source == "provided":
        values = np.asarray(matrix, dtype=float)
        if values.shape != (n, p):
            raise DataError(f"provided design has shape {values.shape}, expected {(n, p)}")
        return DesignMatrix(values, taxa, centered=False)
    if source != "synthetic_subgaussian":
        raise ValueError(f"unknown design source {source!r}")
    values = np.random.default_rng(rng_seed).standard_normal((n, p))
    values -= values.mean(axis=1, keepdims=True)
    return DesignMatrix(values, taxa, centered=True)


def _leading_block_end(support):
    end = support[0]
    for j in support[1:]:
        if j != end + 1:
            break
        end = j
    return end


def perturbation_indices(gamma_star, kind):
    """Candidate indices that a perturbation of ``kind`` may touch.

    scale_change: the first 5 and the last 6 support entries (11 candidates,
    10 of which are drawn).  position_change: the 10 indices right after
    the leading support block.
    """
    support = np.flatnonzero(np.asarray(gamma_star) != 0)
    p = len(gamma_star)
    if support.size == 0:
        raise ValueError("gamma_star has empty support")
    if kind == "scale_change":
        cand = np.unique(np.concatenate([support[:5], support[-6:]]))
        if cand.size < 10:
            raise ValueError("support too small for a 10-entry scale change")
        return cand
    if kind == "position_change":
        start = _leading_block_end(support) + 1
        if start + 10 > p:
            raise ValueError("position-change index set exceeds p")
        return np.arange(start, start + 10)
    raise ValueError(f"no index set for perturbation kind {kind!r}")


def make_perturbation(gamma_star, kind, tau, rng_seed):
    """Return gamma-tilde* = gamma* + e with exactly 10 entries of e equal to +-tau/10."""
    gamma = np.array(gamma_star, dtype=float)
    if kind == "none" or tau == 0:
        return gamma
    cand = perturbation_indices(gamma, kind)
    rng = np.random.default_rng(rng_seed)
    chosen = cand if cand.size == 10 else np.sort(rng.choice(cand, size=10, replace=False))
    signs = rng.choice(np.array([-1.0, 1.0]), size=10)
    gamma[chosen] += signs * (tau / 10.0)
    return gamma


def subsample_rows(dataset, m, rng_seed):
    """Uniform without-replacement subsample of ``m`` rows, original order kept."""
    n = dataset.shape[0] if isinstance(dataset, np.ndarray) else dataset.n
    if m > n:
        raise DataError(f"cannot subsample {m} rows from {n}")
    if m < 0:
        raise ValueError("m must be non-negative")
    rows = np.sort(np.random.default_rng(rng_seed).choice(n, size=m, replace=False))
    if isinstance(dataset, np.ndarray):
        return dataset[rows]
    return dataset.take_rows(rows)


def generate_cohorts(spec: GenerativeSpec, perturb: PerturbationSpec, n, N, p, rng_seed):
    """Draw a (target, external, truth) triple.

    Target: m = X gamma* + delta, y = m theta* + X beta* + eps with
    corr(eps, delta) = rho.  External: m~ = X~ gamma~* + delta~, independent.
    """
    if spec.p != p:
        raise ValueError(f"spec has p={spec.p}, asked for p={p}")
    s = [derive_seed(rng_seed, i) for i in range(5)]
    if spec.design_source == "provided":
        X = generate_design(n, p, None, "provided", subsample_rows(spec.target_pool, n, s[0]))
        Xe = generate_design(N, p, None, "provided", subsample_rows(spec.external_pool, N, s[1]))
    else:
        X = generate_design(n, p, s[0])
        Xe = generate_design(N, p, s[1])
    cov = np.array([[1.0, spec.rho], [spec.rho, 1.0]])
    noise = np.random.default_rng(s[2]).multivariate_normal(np.zeros(2), cov, size=n,
                                                            method="cholesky")
    eps, delta = noise[:, 0], noise[:, 1]
    delta_t = spec.external_delta_sd * np.random.default_rng(s[3]).standard_normal(N)
    pseed = perturb.rng_seed if perturb.rng_seed is not None else s[4]
    gamma_t = make_perturbation(spec.gamma_star, perturb.kind, perturb.tau, pseed)

    m = X.values @ spec.gamma_star + delta
    y = m * spec.theta_star + X.values @ spec.beta_star + eps
    m_ext = Xe.values @ gamma_t + delta_t
    truth = Truth(spec.theta_star, spec.beta_star, spec.gamma_star, gamma_t, eps, delta, delta_t)
    return TargetDataset(X, y, m), ExternalDataset(Xe, m_ext), truth


# --- metrics --------------------------------------------------------------------


def compute_tpr_fpr(estimate, truth):
    """Support recovery rates; a rate with an empty denominator is ``None``."""
    est = np.asarray(estimate) != 0
    tru = np.asarray(truth) != 0
    if est.shape != tru.shape:
        raise ValueError("estimate and truth differ in length")
    npos, nneg = int(tru.sum()), int((~tru).sum())
    tpr = float((est & tru).sum() / npos) if npos else None
    fpr = float((est & ~tru).sum() / nneg) if nneg else None
    return tpr, fpr


# --- scenarios ---------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    p: int = 100
    n: int = 200
    N: int = 300
    theta_star: float = 0.0
    rho: float = 0.0
    tau: float = 0.0
    perturbation: str = "none"
    method: str = "integrative"
    n_reps: int = 100
    master_seed: int = 0
    alpha: float = 0.05
    layout: str = "full"
    k: int = 10
    pred_corr: bool = False
    folds: int = 5
    variance_folds: int = 10
    corr_budget: float = 2.0
    c_gamma: float = 0.1
    c_beta: float = 0.1

    def __post_init__(self):
        def bad(key, msg):
            raise ValueError(f"scenario.{key}: {msg}")

        for key in ("p", "n", "N", "n_reps", "k", "folds", "variance_folds"):
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                bad(key, f"must be a positive integer, got {v!r}")
        if not -1 < self.rho < 1:
            bad("rho", "must lie in (-1, 1)")
        if self.tau < 0:
            bad("tau", "must be non-negative")
        if self.perturbation not in PERTURBATIONS:
            bad("perturbation", f"must be one of {PERTURBATIONS}")
        if self.method not in METHODS:
            bad("method", f"must be one of {METHODS}")
        if self.layout not in LAYOUTS:
            bad("layout", f"must be one of {LAYOUTS}")
        if not 0 < self.alpha < 1:
            bad("alpha", "must lie in (0, 1)")
        if self.master_seed < 0:
            bad("master_seed", "must be non-negative")

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValueError(f"scenario.{unknown[0]}: unknown key")
        kwargs = {}
        for key, value in d.items():
            default = known[key].default
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ValueError(f"scenario.{key}: must be a boolean")
            elif isinstance(default, int):
                if isinstance(value, float) and value.is_integer():
                    value = int(value)
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ValueError(f"scenario.{key}: must be an integer")
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ValueError(f"scenario.{key}: must be a number")
                value = float(value)
            elif isinstance(default, str) and not isinstance(value, str):
                raise ValueError(f"scenario.{key}: must be a string")
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self):
        return asdict(self)

    def coefficients(self):
        if self.layout == "full":
            return full_layout(self.p, self.k)
        if self.layout == "strong":
            return strong_layout(self.p, self.k)
        if self.layout == "strong_positive":
            return strong_positive_layout(self.p, self.k)
        return partial_layout(self.p)

    def generative_spec(self):
        beta, gamma = self.coefficients()
        return GenerativeSpec(self.theta_star, beta, gamma, self.rho)

    def pathway_config(self, seed):
        return PathwayConfig(seed=seed, folds=self.folds, variance_folds=self.variance_folds,
                             corr_budget=self.corr_budget, c_gamma=self.c_gamma,
                             c_beta=self.c_beta)


PRESETS = {
    "fig2a-desk": dict(theta_star=0.2, rho=0.0),
    "fig2b-desk": dict(theta_star=0.2, rho=0.25),
    "fig2c-desk": dict(theta_star=0.0, rho=0.0),
    "fig2d-desk": dict(theta_star=0.0, rho=0.25),
    "fig2d-desk-target-only": dict(theta_star=0.0, rho=0.25, method="target_only"),
    "selection-desk": dict(theta_star=0.2, rho=0.25, layout="strong", k=5, n=300, N=300),
    "selection-desk-positive": dict(theta_star=0.2, rho=0.25, layout="strong_positive", k=5,
                                    n=300, N=300),
    "fig5-scale-null": dict(layout="partial", perturbation="scale_change", theta_star=0.0,
                            pred_corr=True),
    "fig5-scale-power": dict(layout="partial", perturbation="scale_change", theta_star=0.3,
                             pred_corr=True),
    "fig5-position-null": dict(layout="partial", perturbation="position_change",
                               theta_star=0.0, pred_corr=True),
    "fig5-position-power": dict(layout="partial", perturbation="position_change",
                                theta_star=0.3, pred_corr=True),
}

# the external-size grid is printed two ways; both are offered
SWEEPS = {
    "external-sizes-text": ("N", (150, 200, 300)),
    "external-sizes-figure": ("N", (150, 200, 250)),
    "target-sizes": ("n", (50, 100, 200)),
    "tau": ("tau", TAU_GRID),
    "theta": ("theta_star", THETA_GRID),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return Scenario(**{**PRESETS[name], **overrides})


# --- replications ----------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    seed: int
    status: str
    theta_tilde: float
    bias: float
    p_value: float
    statistic: float
    reject: bool
    tpr_beta: Optional[float]
    fpr_beta: Optional[float]
    tpr_gamma: Optional[float]
    fpr_gamma: Optional[float]
    predictive_correlation: Optional[float] = None
    sign_recovered: Optional[bool] = None


class ReplicationError(MbpathError):
    def __init__(self, index, seed, cause):
        self.index, self.seed, self.cause = index, seed, cause
        super().__init__(f"replication {index} (seed {seed}) failed: {cause}")


def run_replication(scenario: Scenario, index: int) -> ReplicationRecord:
    seed = derive_seed(scenario.master_seed, index)
    try:
        spec = scenario.generative_spec()
        perturb = PerturbationSpec(scenario.perturbation, scenario.tau)
        target, external, truth = generate_cohorts(spec, perturb, scenario.n, scenario.N,
                                                   scenario.p, derive_seed(seed, 0))
        config = scenario.pathway_config(derive_seed(seed, 1))
        if scenario.method == "integrative":
            res = run_integrative(TargetDataset(target.design, target.outcome), external, config)
        elif scenario.method == "target_only":
            res = run_target_only(target, config)
        else:
            res = run_sample_split(target, config=config)
        corr = None
        if scenario.pred_corr:
            corr = predictive_correlation(target, external, config)
    except MbpathError as exc:
        raise ReplicationError(index, seed, exc) from exc
    tb, fb = compute_tpr_fpr(res.thresholded.beta_thres, truth.beta_star)
    tg, fg = compute_tpr_fpr(res.thresholded.gamma_thres, truth.gamma_star)
    stat = res.debias.statistic if res.debias is not None else math.nan
    signs = bool(np.array_equal(np.sign(res.thresholded.beta_thres), np.sign(truth.beta_star))
                 and np.array_equal(np.sign(res.thresholded.gamma_thres),
                                    np.sign(truth.gamma_star)))
    return ReplicationRecord(
        index=index, seed=seed, status=res.status, theta_tilde=res.theta_tilde,
        bias=res.theta_tilde - truth.theta_star, p_value=res.p_value, statistic=stat,
        reject=bool(res.p_value < scenario.alpha), tpr_beta=tb, fpr_beta=fb,
        tpr_gamma=tg, fpr_gamma=fg, predictive_correlation=corr, sign_recovered=signs,
    )


def _mean_or_none(values):
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.mean(vals)) if vals else None


@dataclass(frozen=True)
class SimSummary:
    n_reps: int
    n_rejections: int
    rejection_rate: float
    mean_bias: Optional[float]
    median_bias: Optional[float]
    tpr_beta: Optional[float]
    fpr_beta: Optional[float]
    tpr_gamma: Optional[float]
    fpr_gamma: Optional[float]
    mean_predictive_correlation: Optional[float]
    n_degenerate: int = 0
    sign_recovery_rate: Optional[float] = None
    scenario: Optional[Scenario] = field(default=None, repr=False)
    records: tuple = field(default=(), repr=False)

    CSV_FIELDS = ("n_reps", "n_rejections", "rejection_rate", "mean_bias", "median_bias",
                  "tpr_beta", "fpr_beta", "tpr_gamma", "fpr_gamma",
                  "mean_predictive_correlation", "n_degenerate", "sign_recovery_rate")

    @classmethod
    def from_records(cls, records, scenario=None):
        records = tuple(records)
        if not records:
            raise ValueError("no replications to summarize")
        biases = [r.bias for r in records if not math.isnan(r.bias)]
        rejections = sum(r.reject for r in records)
        return cls(
            n_reps=len(records),
            n_rejections=int(rejections),
            rejection_rate=rejections / len(records),
            mean_bias=float(np.mean(biases)) if biases else None,
            median_bias=float(np.median(biases)) if biases else None,
            tpr_beta=_mean_or_none(r.tpr_beta for r in records),
            fpr_beta=_mean_or_none(r.fpr_beta for r in records),
            tpr_gamma=_mean_or_none(r.tpr_gamma for r in records),
            fpr_gamma=_mean_or_none(r.fpr_gamma for r in records),
            mean_predictive_correlation=_mean_or_none(
                r.predictive_correlation for r in records),
            n_degenerate=sum(r.status != "ok" for r in records),
            sign_recovery_rate=_mean_or_none(
                None if r.sign_recovered is None else float(r.sign_recovered) for r in records),
            scenario=scenario,
            records=records,
        )

    def to_dict(self, with_scenario=True):
        out = {k: getattr(self, k) for k in self.CSV_FIELDS}
        if with_scenario and self.scenario is not None:
            out["scenario"] = self.scenario.to_dict()
        return out


def run_replications(scenario: Scenario, n_reps=None, master_seed=None,
                     parallelism=1) -> SimSummary:
    """Run ``n_reps`` independent replications and aggregate them in index order."""
    if n_reps is not None or master_seed is not None:
        scenario = replace(
            scenario,
            n_reps=scenario.n_reps if n_reps is None else n_reps,
            master_seed=scenario.master_seed if master_seed is None else master_seed,
        )
    if scenario.n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    indices = range(scenario.n_reps)
    if parallelism <= 1:
        records = [run_replication(scenario, i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(lambda i: run_replication(scenario, i), indices))
    return SimSummary.from_records(records, scenario)
