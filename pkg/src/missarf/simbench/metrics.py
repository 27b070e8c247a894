"""Evaluation metrics: NRMSE, Brier score, logistic regression by IRLS,
pooling of multiple-imputation estimates and coverage summaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import expit

from ..tabular import Dataset, StandardizationParams, standardize

IRLS_TOL = 1e-10
IRLS_MAX_ITER = 50


def nrmse(imputed: Dataset, truth: Dataset, params: Optional[StandardizationParams] = None) -> float:
    """Root mean squared difference over all n*p cells after standardizing both
    datasets with the same parameters (by default those of ``truth``).

    Categorical cells contribute 0 when the labels agree and 1 otherwise.
    """
    if imputed.shape != truth.shape or not imputed.same_schema(truth):
        raise ValueError(f"shape or schema mismatch: {imputed.shape} vs {truth.shape}")
    if imputed.has_missing() or truth.has_missing():
        raise ValueError("nrmse needs complete datasets")
    if params is None:
        params = StandardizationParams.from_data(truth)
    a = standardize(imputed, params).values
    b = standardize(truth, params).values
    diff = a - b
    cat = truth.is_categorical
    diff[:, cat] = (a[:, cat] != b[:, cat]).astype(np.float64)
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass
class LogisticFit:
    """Logistic regression fitted by IRLS.

    ``coef`` and ``cov`` include the intercept first when one was fitted.
    ``converged`` is False when the iteration cap was hit or fitted
    probabilities collapsed to 0 or 1 (separation).
    """

    coef: np.ndarray
    cov: np.ndarray
    converged: bool
    separated: bool
    iterations: int
    deviance: float
    intercept: bool = True

    @property
    def ok(self) -> bool:
        return self.converged and not self.separated

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.intercept:
            return self.coef[0] + x @ self.coef[1:]
        return x @ self.coef

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return expit(self.linear_predictor(x))


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, Dataset):
        if x.has_missing():
            raise ValueError("logistic regression needs complete data")
        return x.values
    return np.asarray(x, dtype=np.float64)


def _deviance(y, prob):
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.where(y > 0, np.log(prob), np.log1p(-prob))
    return float(-2.0 * np.sum(ll))


def fit_logistic(x, y, include_intercept: bool = True, tol: float = IRLS_TOL,
                 max_iter: int = IRLS_MAX_ITER) -> LogisticFit:
    """Maximum-likelihood logistic regression by iteratively reweighted least squares.

    Stops when the relative change in deviance ``|D_old - D| / (|D| + 0.1)``
    falls below ``tol``. The covariance is the inverse observed information
    at the final coefficients.
    """
    X = _as_matrix(x)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("x must be n x p and y of length n")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("y must be binary 0/1")
    if include_intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
    n, k = X.shape
    if n <= k:
        raise ValueError(f"need more rows ({n}) than coefficients ({k})")
    beta = np.zeros(k)
    prob = np.full(n, 0.5)
    dev = _deviance(y, prob)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = prob * (1 - prob)
        info = X.T @ (X * w[:, None])
        grad = X.T @ (y - prob)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        beta = beta + step
        prob = expit(X @ beta)
        new_dev = _deviance(y, prob)
        change = abs(dev - new_dev) / (abs(new_dev) + 0.1)
        dev = new_dev
        if change < tol:
            converged = True
            break
    w = prob * (1 - prob)
    separated = bool(np.any(w < 1e-12)) or not np.isfinite(dev)
    info = X.T @ (X * w[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    return LogisticFit(beta, cov, converged, separated, it, dev, include_intercept)


def brier(model: LogisticFit, x_test, y_test) -> float:
    """Mean squared difference between predicted probability and outcome."""
    prob = model.predict_proba(_as_matrix(x_test))
    y = np.asarray(y_test, dtype=np.float64)
    return float(np.mean((prob - y) ** 2))


@dataclass
class PooledEstimate:
    estimate: float
    within: float
    between: float
    total: float
    df: float
    lower: float
    upper: float

    @property
    def se(self) -> float:
        return float(np.sqrt(self.total))

    @property
    def width(self) -> float:
        return self.upper - self.lower


def barnard_rubin_df(m: int, within, between, df_complete: Optional[float]):
    """Small-sample degrees of freedom for pooled estimates.

    Without ``df_complete`` the large-sample value ``(m - 1) / lambda^2`` is
    returned, where lambda is the fraction of variance due to missingness.
    """
    within = np.asarray(within, dtype=np.float64)
    between = np.asarray(between, dtype=np.float64)
    total = within + (1 + 1 / m) * between
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(total > 0, (1 + 1 / m) * between / total, 0.0)
        df_old = np.where(lam > 0, (m - 1) / lam**2, np.inf)
    if df_complete is None:
        return df_old
    df_obs = (df_complete + 1) / (df_complete + 3) * df_complete * (1 - lam)
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(df_old), df_obs, df_old * df_obs / (df_old + df_obs))


def pool_rubin(estimates, variances, df_complete: Optional[float] = None,
               alpha: float = 0.05) -> list:
    """Combine m per-imputation estimates into one estimate per coefficient.

    Args:
        estimates: m x k coefficient estimates.
        variances: m x k squared standard errors.
        df_complete: degrees of freedom the analysis would have without
            missing data (n minus the number of coefficients). None gives the
            large-sample degrees of freedom.
        alpha: 1 minus the confidence level.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    var = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    if est.shape != var.shape:
        raise ValueError("estimates and variances must have the same shape")
    m = est.shape[0]
    if m < 2:
        raise ValueError("pooling needs at least 2 imputations")
    qbar = est.mean(axis=0)
    within = var.mean(axis=0)
    between = est.var(axis=0, ddof=1)
    total = within + (1 + 1 / m) * between
    df = barnard_rubin_df(m, within, between, df_complete)
    with np.errstate(invalid="ignore", divide="ignore"):
        tq = stats.t.ppf(1 - alpha / 2, df)
    half = tq * np.sqrt(total)
    return [
        PooledEstimate(float(q), float(w), float(b), float(t), float(d), float(q - h), float(q + h))
        for q, w, b, t, d, h in zip(qbar, within, between, total, df, half)
    ]


@dataclass
class CoverageSummary:
    coverage: float
    width: float
    rmse: float
    replicates: int


def coverage_stats(pooled: Sequence[Sequence[PooledEstimate]], truth) -> list:
    """Per-coefficient coverage rate, average interval width and RMSE over replicates.

    Args:
        pooled: K replicates, each a sequence of k pooled estimates.
        truth: the k true coefficient values.
    """
    truth = np.asarray(truth, dtype=np.float64)
    if len(pooled) < 1:
        raise ValueError("need at least one replicate")
    lo = np.array([[e.lower for e in rep] for rep in pooled])
    hi = np.array([[e.upper for e in rep] for rep in pooled])
    est = np.array([[e.estimate for e in rep] for rep in pooled])
    if est.shape[1] != truth.shape[0]:
        raise ValueError("truth length differs from the number of pooled coefficients")
    covered = (lo < truth) & (truth < hi)
    out = []
    for j in range(truth.shape[0]):
        out.append(CoverageSummary(
            coverage=float(covered[:, j].mean()),
            width=float(np.mean(hi[:, j] - lo[:, j])),
            rmse=float(np.sqrt(np.mean((est[:, j] - truth[j]) ** 2))),
            replicates=len(pooled),
        ))
    return out
