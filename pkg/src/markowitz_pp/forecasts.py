"""Forecast inputs for the optimizer.

Covariance forecasts come from an exponentially weighted second moment of
past returns, mean forecasts are synthetic (realized future returns plus
noise tuned to an information coefficient), and cost-model inputs use
trailing averages of realized spreads and volumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Union

import numpy as np
import scipy.linalg

JITTER_REL = 1e-8
# absolute floor (daily variance) so an all-zero history still factors
JITTER_FLOOR = 1e-16
IDIO_FLOOR_FRAC = 0.01


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DenseRiskModel:
    """Full covariance matrix together with its lower Cholesky factor."""

    sigma: np.ndarray
    chol: np.ndarray

    @classmethod
    def from_covariance(cls, sigma, jitter: float = 0.0) -> "DenseRiskModel":
        sigma = np.array(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.all(np.isfinite(sigma)):
            raise ValueError("covariance contains non-finite entries")
        sigma = (sigma + sigma.T) / 2
        if jitter:
            sigma[np.diag_indices_from(sigma)] += jitter
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        return cls(_frozen(sigma), _frozen(chol))

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    def volatilities(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma))

    def covariance(self) -> np.ndarray:
        return self.sigma

    def risk(self, w) -> float:
        return float(np.linalg.norm(self.chol.T @ np.asarray(w, dtype=float)))


@dataclass(frozen=True)
class FactorRiskModel:
    """Low rank plus diagonal covariance ``F Sigma_f F^T + diag(D)``.

    The dense ``n x n`` covariance is never formed unless ``covariance`` is
    called explicitly.
    """

    loadings: np.ndarray
    factor_cov: np.ndarray
    idio_var: np.ndarray
    factor_chol: Optional[np.ndarray] = None

    def __post_init__(self):
        F = np.array(self.loadings, dtype=float)
        S = np.array(self.factor_cov, dtype=float)
        D = np.array(self.idio_var, dtype=float).ravel()
        if F.ndim != 2 or S.shape != (F.shape[1], F.shape[1]) or D.size != F.shape[0]:
            raise ValueError("inconsistent factor model dimensions")
        if not np.all(D > 0):
            raise ValueError("idiosyncratic variances must be positive")
        if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise ValueError("factor covariance must be symmetric")
        try:
            L = np.linalg.cholesky((S + S.T) / 2)
        except np.linalg.LinAlgError as exc:
            raise ValueError("factor covariance is not positive definite") from exc
        object.__setattr__(self, "loadings", _frozen(F))
        object.__setattr__(self, "factor_cov", _frozen(S))
        object.__setattr__(self, "idio_var", _frozen(D))
        object.__setattr__(self, "factor_chol", _frozen(L))

    @property
    def n(self) -> int:
        return self.loadings.shape[0]

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    @property
    def loadings_tilde(self) -> np.ndarray:
        """``F L_f``, so that ``Ft Ft^T = F Sigma_f F^T``."""
        return self.loadings @ self.factor_chol

    def volatilities(self) -> np.ndarray:
        Ft = self.loadings_tilde
        return np.sqrt(np.einsum("ij,ij->i", Ft, Ft) + self.idio_var)

    def covariance(self) -> np.ndarray:
        F = self.loadings
        return F @ self.factor_cov @ F.T + np.diag(self.idio_var)

    def to_dense(self) -> DenseRiskModel:
        return DenseRiskModel.from_covariance(self.covariance())

    def risk(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(np.hypot(np.linalg.norm(self.loadings_tilde.T @ w),
                              np.linalg.norm(np.sqrt(self.idio_var) * w)))


RiskModel = Union[DenseRiskModel, FactorRiskModel]


@dataclass(frozen=True)
class ForecastBundle:
    """Everything the optimizer needs to know about one period.

    Rates and returns are per period. ``kappa_spread`` is the forecast half
    spread, ``kappa_impact`` the market impact coefficient.
    """

    mu: np.ndarray
    risk: RiskModel
    kappa_short: np.ndarray
    kappa_borrow: float
    kappa_spread: np.ndarray
    kappa_impact: np.ndarray
    r_rf: float = 0.0
    v_forecast: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.risk.n
        mu = _frozen(self.mu)
        if mu.shape != (n,):
            raise ValueError(f"mu has shape {mu.shape}, risk model has n={n}")
        object.__setattr__(self, "mu", mu)
        for name in ("kappa_short", "kappa_spread", "kappa_impact"):
            val = _frozen(np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)))
            if np.any(val < 0) or not np.all(np.isfinite(val)):
                raise ValueError(f"{name} must be finite and nonnegative")
            object.__setattr__(self, name, val)
        if self.v_forecast is not None:
            v = _frozen(np.broadcast_to(np.asarray(self.v_forecast, dtype=float), (n,)))
            if np.any(v <= 0):
                raise ValueError("volume forecast must be positive")
            object.__setattr__(self, "v_forecast", v)
        if not self.kappa_borrow >= 0:
            raise ValueError("kappa_borrow must be nonnegative")
        if not np.all(np.isfinite(mu)) or not np.isfinite(self.r_rf):
            raise ValueError("mu and r_rf must be finite")
        object.__setattr__(self, "kappa_borrow", float(self.kappa_borrow))
        object.__setattr__(self, "r_rf", float(self.r_rf))

    @property
    def n(self) -> int:
        return self.risk.n


def half_life_to_beta(half_life: float) -> float:
    if not half_life > 0:
        raise ValueError("half-life must be positive")
    return 2.0 ** (-1.0 / half_life)


def iter_ewma_second_moment(returns, half_life_days: float,
                            jitter_rel: float = JITTER_REL) -> Iterator[np.ndarray]:
    """Yield the jittered EWMA second-moment matrix after each row of ``returns``.

    The estimate after ``t`` observations is
    ``(1-beta)/(1-beta^t) * sum_{tau<=t} beta^(t-tau) r_tau r_tau^T`` plus a
    diagonal jitter of ``jitter_rel * mean(diag)`` (at least ``JITTER_FLOOR``
    when ``jitter_rel > 0``).
    """
    R = np.asarray(returns, dtype=float)
    if R.ndim != 2 or R.shape[0] < 1:
        raise ValueError("returns must be a nonempty T x n matrix")
    if not np.all(np.isfinite(R)):
        raise ValueError("returns contain non-finite values")
    beta = half_life_to_beta(half_life_days)
    n = R.shape[1]
    acc = np.zeros((n, n))
    beta_t = 1.0
    diag = np.diag_indices(n)
    for r in R:
        acc *= beta
        acc += np.outer(r, r)
        beta_t *= beta
        sigma = acc * ((1 - beta) / (1 - beta_t))
        if jitter_rel > 0:
            sigma[diag] += max(jitter_rel * np.trace(sigma) / n, JITTER_FLOOR)
        yield sigma


def iter_ewma_covariance(returns, half_life_days: float,
                         jitter_rel: float = JITTER_REL) -> Iterator[DenseRiskModel]:
    """Like ``iter_ewma_second_moment`` but yields factored risk models."""
    for sigma in iter_ewma_second_moment(returns, half_life_days, jitter_rel):
        yield DenseRiskModel.from_covariance(sigma)


def ewma_covariance(returns, half_life_days: float,
                    jitter_rel: float = JITTER_REL) -> List[DenseRiskModel]:
    """EWMA covariance forecasts, one per row of ``returns``.

    Element ``t`` uses returns ``0..t`` inclusive; to forecast period ``t``
    without look-ahead use element ``t-1``.
    """
    return list(iter_ewma_covariance(returns, half_life_days, jitter_rel))


def forward_mean(realized, horizon: int) -> np.ndarray:
    """Mean of ``realized[t:t+horizon]`` for every ``t`` with a full window."""
    R = np.asarray(realized, dtype=float)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if R.shape[0] < horizon:
        raise ValueError("series shorter than the horizon")
    csum = np.vstack([np.zeros((1, R.shape[1])), np.cumsum(R, axis=0)])
    return (csum[horizon:] - csum[:-horizon]) / horizon


def synthetic_mean_forecast(realized, ic: float, horizon_days: int = 5,
                            seed: int = 0) -> np.ndarray:
    """Noisy scaled look-ahead return forecasts with a given information coefficient.

    For each asset, ``alpha * (rbar_t + eps_t)`` where ``rbar_t`` is the mean
    return over ``horizon_days`` days starting at ``t``, ``alpha = ic**2`` and
    ``eps_t ~ N(0, var(rbar) * (1/alpha - 1))``. The variance is the
    full-sample variance of ``rbar`` for that asset, which makes the
    correlation between forecast and ``rbar`` equal to ``ic``.

    Returns an array with ``T - horizon_days + 1`` rows; the last
    ``horizon_days - 1`` days have no complete window and are dropped.
    """
    if not 0 < ic <= 1:
        raise ValueError("information coefficient must lie in (0, 1]")
    R = np.asarray(realized, dtype=float)
    if not np.all(np.isfinite(R)):
        raise ValueError("realized returns contain non-finite values")
    rbar = forward_mean(R, horizon_days)
    alpha = ic ** 2
    var = rbar.var(axis=0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(rbar.shape) * np.sqrt(var * (1 / alpha - 1))
    return alpha * (rbar + noise)


def trailing_mean(x, window: int = 5) -> np.ndarray:
    """Row ``t`` is the mean of rows ``t-window .. t-1``.

    Early rows average whatever history exists; row 0 has none and repeats
    the first observation.
    """
    X = np.asarray(x, dtype=float)
    if window < 1:
        raise ValueError("window must be at least 1")
    T = X.shape[0]
    csum = np.concatenate([np.zeros((1,) + X.shape[1:]), np.cumsum(X, axis=0)])
    out = np.empty_like(X)
    t = np.arange(1, T)
    lo = np.maximum(t - window, 0)
    counts = (t - lo).reshape((-1,) + (1,) * (X.ndim - 1))
    out[1:] = (csum[t] - csum[lo]) / counts
    if T:
        out[0] = X[0]
    return out


def trailing_spread_forecast(spreads, window: int = 5) -> np.ndarray:
    return trailing_mean(spreads, window)


def impact_coefficient(s, v, a: float = 1.0) -> np.ndarray:
    """Market impact coefficients ``a * s_i / sqrt(v_i)``."""
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("volumes must be positive")
    if np.any(s < 0):
        raise ValueError("volatilities must be nonnegative")
    return a * s / np.sqrt(v)


def pca_factor_model(risk: DenseRiskModel | np.ndarray, k: int,
                     floor_frac: float = IDIO_FLOOR_FRAC) -> FactorRiskModel:
    """Principal-component factor model with ``k`` factors.

    Loadings are the top ``k`` eigenvectors scaled by the square roots of
    their eigenvalues, the factor covariance is the identity, and the
    idiosyncratic variances are the residual diagonal floored at
    ``floor_frac`` times each asset's total variance.
    """
    sigma = risk.sigma if isinstance(risk, DenseRiskModel) else np.asarray(risk, dtype=float)
    n = sigma.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    sigma = (sigma + sigma.T) / 2
    evals, evecs = scipy.linalg.eigh(sigma)
    if evals[0] < -1e-10 * max(abs(evals[-1]), 1e-300):
        raise ValueError("covariance is not positive semidefinite")
    top = slice(n - k, n)
    F = evecs[:, top] * np.sqrt(np.maximum(evals[top], 0.0))
    F = F[:, ::-1]
    diag = np.diag(sigma)
    resid = diag - np.einsum("ij,ij->i", F, F)
    D = np.maximum(resid, floor_frac * diag)
    if not np.all(D > 0):
        raise ValueError("idiosyncratic variance floor produced nonpositive entries")
    return FactorRiskModel(F, np.eye(k), D)
