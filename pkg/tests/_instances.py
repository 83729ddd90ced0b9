"""Random problem instances shared by the test modules."""

import numpy as np

from markowitz_pp.data_model import Portfolio
from markowitz_pp.forecasts import DenseRiskModel, FactorRiskModel, ForecastBundle


def random_pd(rng, n, scale=1.0, cond=20.0):
    """Random symmetric positive definite matrix with bounded condition number."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.exp(rng.uniform(0, np.log(cond), n))
    return scale * (Q * ev) @ Q.T


def daily_covariance(rng, n):
    """Equity-like daily covariance: one market factor plus idiosyncratic noise."""
    vol = rng.uniform(0.01, 0.03, n)
    beta = rng.uniform(0.5, 1.5, n)
    m = 0.01
    S = np.outer(beta, beta) * m ** 2 + np.diag(vol ** 2)
    return S


def random_forecast(rng, n, factor_k=None, impact=False, r_rf=None):
    """Daily-scale forecast bundle with dense (or factor) risk."""
    if factor_k:
        F = rng.standard_normal((n, factor_k)) * 0.01
        A = rng.standard_normal((factor_k, factor_k + 3))
        Sf = A @ A.T / (factor_k + 3)
        risk = FactorRiskModel(F, Sf, rng.uniform(0.01, 0.03, n) ** 2)
        vol = risk.volatilities()
    else:
        risk = DenseRiskModel.from_covariance(daily_covariance(rng, n))
        vol = risk.volatilities()
    mu = 0.05 * vol * rng.standard_normal(n)
    return ForecastBundle(
        mu=mu, risk=risk,
        kappa_short=rng.uniform(1e-4, 5e-4, n),
        kappa_borrow=rng.uniform(0, 2e-4),
        kappa_spread=rng.uniform(5e-5, 1e-3, n),
        kappa_impact=rng.uniform(0, 0.01, n) if impact else 0.0,
        r_rf=rng.uniform(0, 2e-4) if r_rf is None else r_rf,
    )


def random_portfolio(rng, n, gross=1.0):
    w = rng.standard_normal(n)
    w *= gross / np.abs(w).sum() * rng.uniform(0.3, 1.0)
    return Portfolio.from_weights(w)
