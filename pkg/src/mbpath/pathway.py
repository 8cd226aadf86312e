"""Two-stage integrative estimation and debiased inference for the metabolite effect.

Pipeline (``run_integrative``):

1. Lasso of the external metabolite on the external design -> gamma_hat.
2. Predicted target metabolite m_hat = X gamma_hat.
3. Lasso of y on (m_hat, X) with theta unpenalized -> (theta_hat, beta_hat).
4. Residual direction z = m_hat - X b_hat from a Lasso of m_hat on X, with
   lambda_z escalated until max_j |z'x_j| / ||z|| <= budget * sqrt(log p).
5. One-step correction theta_tilde = theta_hat + z'(y - m_hat theta_hat - X beta_hat) / z'm_hat.
6. Noise variance from a 10-fold CV refit; two-sided normal p-value.
7. Hard-thresholded coefficients -> the four microbe roles G1..G4.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.stats import norm

from . import lasso
from .data import DesignMatrix, ExternalDataset, TargetDataset
from .errors import DataError, DegenerateFitError, MbpathError, StageError
from .lasso.solver import _Gram
from .seeds import derive_seed

MODES = ("integrative", "target_only", "sample_split")


@dataclass(frozen=True)
class PathwayConfig:
    seed: int = 0
    folds: int = 5
    variance_folds: int = 10
    c_gamma: float = 0.1
    c_beta: float = 0.1
    corr_budget: float = 2.0
    one_se: bool = False
    # "squared": ||r||^2/(n - s); "printed": ||r||/(n - s)
    variance_formula: str = "squared"
    # "sd": statistic divides by sigma_hat; "variance": divides by sigma_hat^2
    pvalue_scale: str = "sd"
    n_lambdas: int = lasso.solver.N_LAMBDAS
    lambda_ratio: float = lasso.solver.LAMBDA_RATIO
    escalation: float = 1.2
    min_split_rows: int = 10
    split_fraction: float = 0.5

    def __post_init__(self):
        if self.variance_formula not in ("squared", "printed"):
            raise ValueError(f"unknown variance_formula {self.variance_formula!r}")
        if self.pvalue_scale not in ("sd", "variance"):
            raise ValueError(f"unknown pvalue_scale {self.pvalue_scale!r}")
        if not self.corr_budget > 0:
            raise ValueError("corr_budget must be positive")
        if self.escalation <= 1:
            raise ValueError("escalation factor must exceed 1")

    def stage_seeds(self):
        s = self.seed
        return {
            "master": int(s),
            "first_stage": derive_seed(s, 0),
            "second_stage": derive_seed(s, 1),
            "lambda_z": derive_seed(s, 2),
            "variance": derive_seed(s, 3),
            "split": derive_seed(s, 4),
        }

    def cv_kwargs(self):
        return dict(one_se=self.one_se, n_lambdas=self.n_lambdas, ratio=self.lambda_ratio)


@dataclass(frozen=True)
class FirstStageFit:
    gamma_hat: np.ndarray
    lambda_gamma: float
    support_size: int
    cv: Optional[lasso.CvResult] = field(default=None, repr=False)


@dataclass(frozen=True)
class SecondStageFit:
    theta_hat: float
    beta_hat: np.ndarray
    lambda_beta: float
    m_hat: np.ndarray
    cv: Optional[lasso.CvResult] = field(default=None, repr=False)


@dataclass(frozen=True)
class LambdaZChoice:
    lambda_z: float
    lambda_cv: float
    lambda_max: float
    z_column_corr: float
    bound: float
    bound_met: bool
    n_escalations: int


@dataclass(frozen=True)
class DebiasReport:
    z: np.ndarray
    b_hat: np.ndarray
    lambda_z: float
    theta_tilde: float
    sigma_eps_hat: float
    score: float
    statistic: float
    p_value: float
    standard_error: float
    z_column_corr: float
    lambda_z_bound_met: bool = True
    warnings: tuple = ()


@dataclass(frozen=True)
class ThresholdedCoefficients:
    gamma_thres: np.ndarray
    beta_thres: np.ndarray
    c_gamma: float
    c_beta: float


@dataclass(frozen=True)
class GroupAssignment:
    """Zero-based column indices of the four microbe roles."""

    g1: tuple
    g2: tuple
    g3: tuple
    g4: tuple

    def sizes(self):
        return (len(self.g1), len(self.g2), len(self.g3), len(self.g4))

    def named(self, taxa_ids):
        return {g: [taxa_ids[j] for j in getattr(self, g)] for g in ("g1", "g2", "g3", "g4")}


@dataclass(frozen=True)
class PathwayResult:
    first_stage: FirstStageFit
    second_stage: Optional[SecondStageFit]
    debias: Optional[DebiasReport]
    thresholded: ThresholdedCoefficients
    groups: GroupAssignment
    mode: str
    taxa_ids: tuple
    seeds: dict
    config: PathwayConfig
    status: str = "ok"

    @property
    def theta_tilde(self):
        return self.debias.theta_tilde if self.debias is not None else math.nan

    @property
    def p_value(self):
        return self.debias.p_value if self.debias is not None else 1.0


# --- stages -------------------------------------------------------------------


def _matrix(design):
    return design.values if isinstance(design, DesignMatrix) else np.asarray(design, float)


def fit_first_stage(external: ExternalDataset, cv_folds=5, rng_seed=0, folds=None,
                    **cv_kwargs) -> FirstStageFit:
    """CV-tuned Lasso of the metabolite on the microbes (no penalty exemptions)."""
    X = _matrix(external.design)
    if folds is None and X.shape[0] < cv_folds:
        raise DataError(f"{X.shape[0]} samples cannot form {cv_folds} folds")
    prob = lasso.PenalizedProblem(external.metabolite, X)
    fit, cv = lasso.fit_cv(prob, k=cv_folds, rng_seed=rng_seed, folds=folds, **cv_kwargs)
    gamma = fit.coefficients
    return FirstStageFit(gamma, fit.lam, int(np.count_nonzero(gamma)), cv)


def predict_metabolite(first_stage, target_design) -> np.ndarray:
    X = _matrix(target_design)
    gamma = first_stage.gamma_hat if isinstance(first_stage, FirstStageFit) else first_stage
    gamma = np.asarray(gamma, dtype=float)
    if X.shape[1] != gamma.shape[0]:
        raise DataError(f"design has {X.shape[1]} columns, gamma_hat has {gamma.shape[0]}")
    return X @ gamma


def _second_stage_problem(y, m_hat, X):
    A = np.column_stack([m_hat, X])
    pf = np.ones(A.shape[1])
    pf[0] = 0.0
    return lasso.PenalizedProblem(y, A, pf)


def fit_second_stage(target: TargetDataset, m_hat, cv_folds=5, rng_seed=0, folds=None,
                     **cv_kwargs) -> SecondStageFit:
    """Lasso of y on (m_hat, X); theta is unpenalized, lambda_beta by CV."""
    m_hat = np.asarray(m_hat, dtype=float)
    if not np.any(m_hat != 0):
        raise DegenerateFitError(
            "degenerate first stage: predicted metabolite is constant zero"
        )
    X = _matrix(target.design)
    prob = _second_stage_problem(target.outcome, m_hat, X)
    fit, cv = lasso.fit_cv(prob, k=cv_folds, rng_seed=rng_seed, folds=folds, **cv_kwargs)
    w = fit.coefficients
    return SecondStageFit(float(w[0]), w[1:].copy(), fit.lam, m_hat, cv)


def z_column_corr(z, design):
    X = _matrix(design)
    return float(np.max(np.abs(X.T @ z)) / np.linalg.norm(z))


def residualize(m_hat, target_design, lambda_z):
    """Lasso of m_hat on the design at ``lambda_z``; returns ``(z, b_hat)``."""
    if not lambda_z > 0:
        raise ValueError("lambda_z must be positive")
    X = _matrix(target_design)
    m_hat = np.asarray(m_hat, dtype=float)
    fit = lasso.solve(lasso.PenalizedProblem(m_hat, X, lam=float(lambda_z)))
    b = fit.coefficients
    z = m_hat - X @ b
    if not np.linalg.norm(z) > 0:
        raise DegenerateFitError("residual direction degenerate; increase lambda_z")
    return z, b


def select_lambda_z(m_hat, target_design, cv_folds=5, rng_seed=0, corr_budget=2.0,
                    escalation=1.2, folds=None, **cv_kwargs) -> LambdaZChoice:
    """CV-tuned lambda for the residualization, escalated to meet the column budget.

    Starting from the CV choice, lambda is multiplied by ``escalation`` until
    ``max_j |z'x_j| / ||z|| <= corr_budget * sqrt(log p)`` or lambda reaches
    lambda_max.  Failing the bound at lambda_max is flagged, not raised.
    """
    X = _matrix(target_design)
    m_hat = np.asarray(m_hat, dtype=float)
    p = X.shape[1]
    prob = lasso.PenalizedProblem(m_hat, X)
    cv = lasso.cross_validate(prob, k=cv_folds, rng_seed=rng_seed, folds=folds, **cv_kwargs)
    lmax = float(cv.lambda_grid[0])
    bound = corr_budget * math.sqrt(math.log(p)) if p > 1 else 0.0

    g = _Gram.of(X, m_hat, prob.penalty_factor)
    w = np.zeros(p)
    # warm start along the grid down to the CV choice
    g.path(w, cv.lambda_grid[cv.lambda_grid >= cv.lambda_chosen], lasso.DEFAULT_TOL,
           lasso.DEFAULT_MAX_ITER)
    lam = float(cv.lambda_chosen)
    steps = 0
    while True:
        z = m_hat - X @ w
        nz = np.linalg.norm(z)
        corr = float(np.max(np.abs(X.T @ z)) / nz) if nz > 0 else math.inf
        if corr <= bound or lam >= lmax:
            break
        lam = min(lam * escalation, lmax)
        steps += 1
        g.run(w, lam, lasso.DEFAULT_TOL, lasso.DEFAULT_MAX_ITER)
    met = corr <= bound
    if not met:
        warnings.warn(
            f"z column-correlation {corr:.3g} exceeds budget {bound:.3g} even at lambda_max",
            RuntimeWarning,
            stacklevel=2,
        )
    return LambdaZChoice(lam, float(cv.lambda_chosen), lmax, corr, bound, met, steps)


def debias_theta(second_stage: SecondStageFit, z, target: TargetDataset) -> float:
    """One-step bias correction of theta_hat along the direction ``z``."""
    z = np.asarray(z, dtype=float)
    m = second_stage.m_hat
    lev = float(z @ m)
    if abs(lev) < 1e-12 * np.linalg.norm(z) * np.linalg.norm(m):
        raise DegenerateFitError("weak residual leverage; z nearly orthogonal to m_hat")
    X = _matrix(target.design)
    r = target.outcome - m * second_stage.theta_hat - X @ second_stage.beta_hat
    return float(second_stage.theta_hat + (z @ r) / lev)


def estimate_noise_variance(target: TargetDataset, m_hat, theta_hat, cv10_seed=0,
                            folds=10, formula="squared", folds_assignment=None,
                            **cv_kwargs) -> float:
    """Residual-variance estimate from a CV-tuned refit of the outcome model.

    The refit keeps theta unpenalized; the residual uses the supplied
    ``theta_hat`` and the refit beta, over ``n - ||beta_cv||_0`` degrees of
    freedom.  ``formula="printed"`` returns the unsquared-norm variant.
    """
    X = _matrix(target.design)
    m_hat = np.asarray(m_hat, dtype=float)
    y = target.outcome
    n = y.shape[0]
    prob = _second_stage_problem(y, m_hat, X)
    fit, _ = lasso.fit_cv(prob, k=folds, rng_seed=cv10_seed, folds=folds_assignment,
                          **cv_kwargs)
    beta_cv = fit.coefficients[1:]
    s = int(np.count_nonzero(beta_cv))
    if n <= s:
        raise DegenerateFitError("saturated model; variance not estimable")
    r = y - m_hat * theta_hat - X @ beta_cv
    if formula == "squared":
        return float(r @ r / (n - s))
    if formula == "printed":
        return float(np.linalg.norm(r) / (n - s))
    raise ValueError(f"unknown variance formula {formula!r}")


def test_theta(theta_tilde, z, m_hat, sigma2_hat, b_hat=None, lambda_z=math.nan,
               z_corr=math.nan, bound_met=True, pvalue_scale="sd") -> DebiasReport:
    """Two-sided normal p-value for H0: theta = 0.

    statistic = (z'm_hat / ||z||) * theta_tilde / sigma_hat.  With
    ``pvalue_scale="variance"`` the divisor is sigma_hat^2 instead.
    """
    z = np.asarray(z, dtype=float)
    m_hat = np.asarray(m_hat, dtype=float)
    if sigma2_hat < 0:
        raise ValueError("variance estimate must be non-negative")
    nz = float(np.linalg.norm(z))
    score = float(z @ m_hat) / nz
    sigma = math.sqrt(sigma2_hat)
    divisor = sigma if pvalue_scale == "sd" else sigma2_hat
    notes = []
    if theta_tilde == 0:
        stat, p = 0.0, 1.0
    elif divisor == 0:
        notes.append("degenerate fit: zero residual variance")
        stat, p = math.copysign(math.inf, score * theta_tilde), 0.0
    else:
        stat = score * theta_tilde / divisor
        p = float(2.0 * norm.sf(abs(stat)))
    se = sigma / abs(score) if score != 0 else math.inf
    if not bound_met:
        notes.append("z column-correlation budget not met at lambda_max")
    if notes:
        warnings.warn("; ".join(notes), RuntimeWarning, stacklevel=2)
    b = np.zeros(0) if b_hat is None else np.asarray(b_hat, dtype=float)
    return DebiasReport(
        z=z, b_hat=b, lambda_z=float(lambda_z), theta_tilde=float(theta_tilde),
        sigma_eps_hat=sigma, score=score, statistic=float(stat), p_value=p,
        standard_error=se, z_column_corr=float(z_corr), lambda_z_bound_met=bool(bound_met),
        warnings=tuple(notes),
    )


test_theta.__test__ = False  # keep pytest from collecting it


def threshold_coefficients(gamma_hat, beta_hat, c_gamma=0.1, c_beta=0.1):
    """Zero every coefficient whose magnitude is below its threshold (ties kept)."""
    if c_gamma < 0 or c_beta < 0:
        raise ValueError("thresholds must be non-negative")
    g = np.asarray(gamma_hat, dtype=float)
    b = np.asarray(beta_hat, dtype=float)
    return ThresholdedCoefficients(
        np.where(np.abs(g) >= c_gamma, g, 0.0),
        np.where(np.abs(b) >= c_beta, b, 0.0),
        float(c_gamma),
        float(c_beta),
    )


def assign_groups(thresholded: ThresholdedCoefficients) -> GroupAssignment:
    g = thresholded.gamma_thres != 0
    b = thresholded.beta_thres != 0
    if g.shape != b.shape:
        raise DataError("gamma and beta vectors differ in length")
    idx = lambda mask: tuple(int(j) for j in np.flatnonzero(mask))  # noqa: E731
    return GroupAssignment(idx(b & g), idx(~b & g), idx(b & ~g), idx(~b & ~g))


# --- pipelines ----------------------------------------------------------------


class _stage:
    """Context manager tagging any library error with the pipeline stage."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (MbpathError, ValueError)) \
                and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _check_aligned(target, external):
    if target.design.taxa_ids != external.design.taxa_ids:
        raise DataError("cohorts are not aligned; call align_cohorts first")


def _infer(target, m_used, first_stage, config, mode, seeds):
    X = target.design.values
    p = X.shape[1]
    cvk = config.cv_kwargs()
    if not np.any(m_used != 0):
        thr = threshold_coefficients(first_stage.gamma_hat, np.zeros(p),
                                     config.c_gamma, config.c_beta)
        return PathwayResult(first_stage, None, None, thr, assign_groups(thr), mode,
                             target.design.taxa_ids, seeds, config,
                             status="degenerate_first_stage")
    with _stage("second_stage"):
        second = fit_second_stage(target, m_used, config.folds, seeds["second_stage"], **cvk)
    with _stage("select_lambda_z"):
        choice = select_lambda_z(m_used, X, config.folds, seeds["lambda_z"],
                                 config.corr_budget, config.escalation, **cvk)
    with _stage("residualize"):
        z, b_hat = residualize(m_used, X, choice.lambda_z)
    with _stage("debias"):
        theta_tilde = debias_theta(second, z, target)
    with _stage("noise_variance"):
        sigma2 = estimate_noise_variance(target, m_used, second.theta_hat, seeds["variance"],
                                         config.variance_folds, config.variance_formula, **cvk)
    with _stage("test"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = test_theta(theta_tilde, z, m_used, sigma2, b_hat, choice.lambda_z,
                            z_column_corr(z, X), choice.bound_met, config.pvalue_scale)
    thr = threshold_coefficients(first_stage.gamma_hat, second.beta_hat,
                                 config.c_gamma, config.c_beta)
    return PathwayResult(first_stage, second, report, thr, assign_groups(thr), mode,
                         target.design.taxa_ids, seeds, config)


def run_integrative(target: TargetDataset, external: ExternalDataset,
                    config: PathwayConfig = PathwayConfig(), mode="integrative") -> PathwayResult:
    """Predict the metabolite from the external cohort, then test its effect on y."""
    _check_aligned(target, external)
    seeds = config.stage_seeds()
    with _stage("first_stage"):
        first = fit_first_stage(external, config.folds, seeds["first_stage"],
                                **config.cv_kwargs())
    with _stage("predict"):
        m_hat = predict_metabolite(first, target.design)
    return _infer(target, m_hat, first, config, mode, seeds)


def run_target_only(target: TargetDataset, config: PathwayConfig = PathwayConfig()):
    """Single-cohort analysis using the observed metabolite in place of m_hat."""
    if target.metabolite is None:
        raise DataError("target-only requires observed metabolite")
    seeds = config.stage_seeds()
    with _stage("first_stage"):
        first = fit_first_stage(ExternalDataset(target.design, target.metabolite),
                                config.folds, seeds["first_stage"], **config.cv_kwargs())
    return _infer(target, np.asarray(target.metabolite), first, config, "target_only", seeds)


def split_rows(n, split_fraction, rng_seed):
    """Seeded split of ``range(n)``: returns ``(external_rows, target_rows)``, each sorted."""
    if not 0 < split_fraction < 1:
        raise ValueError("split_fraction must lie in (0, 1)")
    perm = np.random.default_rng(rng_seed).permutation(n)
    n_ext = int(round(split_fraction * n))
    return np.sort(perm[:n_ext]), np.sort(perm[n_ext:])


def run_sample_split(target: TargetDataset, split_fraction=None, rng_seed=None,
                     config: PathwayConfig = PathwayConfig()):
    """Split the target in two; one part plays the external cohort (X, m), the other (X, y)."""
    if target.metabolite is None:
        raise DataError("sample splitting requires observed metabolite")
    frac = config.split_fraction if split_fraction is None else split_fraction
    seeds = config.stage_seeds()
    if rng_seed is not None:
        seeds["split"] = int(rng_seed)
    ext_rows, tgt_rows = split_rows(target.n, frac, seeds["split"])
    minimum = max(config.min_split_rows, config.folds, config.variance_folds)
    if min(ext_rows.size, tgt_rows.size) < minimum:
        raise DataError(
            f"split halves of sizes {ext_rows.size} and {tgt_rows.size}; need >= {minimum}"
        )
    sub_t = target.take_rows(tgt_rows)
    ext = ExternalDataset(target.design.take_rows(ext_rows), target.metabolite[ext_rows])
    new_target = TargetDataset(sub_t.design, sub_t.outcome, None)
    result = run_integrative(new_target, ext, config, mode="sample_split")
    return replace(result, seeds=seeds)


def predictive_correlation(target_proxy: TargetDataset, external: ExternalDataset,
                           config: PathwayConfig = PathwayConfig()) -> float:
    """Pearson correlation of target- and external-trained fits on the target design."""
    if target_proxy.metabolite is None:
        raise DataError("predictive correlation needs the proxy metabolite in the target")
    _check_aligned(target_proxy, external)
    seed = config.stage_seeds()["first_stage"]
    cvk = config.cv_kwargs()
    own = fit_first_stage(ExternalDataset(target_proxy.design, target_proxy.metabolite),
                          config.folds, seed, **cvk)
    ext = fit_first_stage(external, config.folds, seed, **cvk)
    a = predict_metabolite(own, target_proxy.design)
    b = predict_metabolite(ext, target_proxy.design)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateFitError("degenerate fit; correlation undefined")
    return float(np.corrcoef(a, b)[0, 1])


# --- serialization ----------------------------------------------------------------

SCHEMA_VERSION = "1.0"


def _cv_dict(cv):
    if cv is None:
        return None
    return {
        "lambda_min": cv.lambda_min,
        "lambda_chosen": cv.lambda_chosen,
        "rule": cv.rule,
        "n_lambdas": int(cv.lambda_grid.size),
        "n_folds": int(cv.fold_assignment.max()) + 1,
    }


def result_to_dict(result: PathwayResult) -> dict:
    """JSON-ready view of a ``PathwayResult`` with stable key names."""
    taxa = list(result.taxa_ids)
    fs, ss, db = result.first_stage, result.second_stage, result.debias
    nan = math.nan
    out = {
        "schema_version": SCHEMA_VERSION,
        "mode": result.mode,
        "status": result.status,
        "theta_hat": ss.theta_hat if ss else nan,
        "theta_tilde": result.theta_tilde,
        "standard_error": db.standard_error if db else nan,
        "p_value": result.p_value,
        "sigma_eps_hat": db.sigma_eps_hat if db else nan,
        "score": db.score if db else nan,
        "statistic": db.statistic if db else nan,
        "lambda_gamma": fs.lambda_gamma,
        "lambda_beta": ss.lambda_beta if ss else nan,
        "lambda_z": db.lambda_z if db else nan,
        "z_column_corr": db.z_column_corr if db else nan,
        "lambda_z_bound_met": db.lambda_z_bound_met if db else None,
        "support_size": fs.support_size,
        "groups": result.groups.named(taxa),
        "group_sizes": dict(zip(("g1", "g2", "g3", "g4"), result.groups.sizes())),
        "taxa": taxa,
        "first_stage": {
            "gamma_hat": fs.gamma_hat.tolist(),
            "lambda_gamma": fs.lambda_gamma,
            "support_size": fs.support_size,
            "cv": _cv_dict(fs.cv),
        },
        "second_stage": None if ss is None else {
            "theta_hat": ss.theta_hat,
            "beta_hat": ss.beta_hat.tolist(),
            "lambda_beta": ss.lambda_beta,
            "m_hat": ss.m_hat.tolist(),
            "cv": _cv_dict(ss.cv),
        },
        "debias": None if db is None else {
            "z": db.z.tolist(),
            "b_hat": db.b_hat.tolist(),
            "lambda_z": db.lambda_z,
            "theta_tilde": db.theta_tilde,
            "sigma_eps_hat": db.sigma_eps_hat,
            "score": db.score,
            "p_value": db.p_value,
            "z_column_corr": db.z_column_corr,
            "warnings": list(db.warnings),
        },
        "thresholded": {
            "gamma_thres": result.thresholded.gamma_thres.tolist(),
            "beta_thres": result.thresholded.beta_thres.tolist(),
            "c_gamma": result.thresholded.c_gamma,
            "c_beta": result.thresholded.c_beta,
        },
        "seeds": dict(result.seeds),
        "config": asdict(result.config),
    }
    return out
