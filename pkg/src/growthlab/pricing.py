"""Risk-neutral pricing of a dividend claim under the linear forecasting rule.

Each period the fitted AR(p) produces a term structure of growth forecasts;
the price is the discounted sum of implied dividend forecasts, truncated at a
finite horizon with a constant-growth terminal value.  Returns are built from
consecutive prices with the dividend paid alongside.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dgp import GrowthPath, ModelParams, firm_seed, simulate_path
from .errors import (
    DegenerateFitError,
    DivergentSumError,
    NonConvergentPricingError,
)
from .forecaster import ArFit, _expanding_fits, companion_matrix

log = logging.getLogger(__name__)

DEFAULT_HORIZON = 200


@dataclass(frozen=True)
class CompanionMatrix:
    """AR coefficients in companion form together with a discount factor."""

    B: np.ndarray
    rho: float

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.B))))


@dataclass
class PricedSeries:
    """Dividend, price and return paths for one firm.

    ``returns[k] = (prices[k+1] + dividends[k] - prices[k]) / prices[k]``
    exactly as constructed (one fewer return than price observations), and
    ``log_returns`` are logs of the corresponding gross returns.
    """

    dividends: np.ndarray
    prices: np.ndarray
    returns: np.ndarray
    log_returns: np.ndarray


@dataclass
class PricedFirm:
    """A priced series plus the per-period fits that generated it."""

    series: PricedSeries
    fits: list[ArFit]
    recents: np.ndarray  # (n, p) lagged growth, most recent first, per period
    t0: int  # path index of the first priced period


def discounted_growth_sum(fit: ArFit, recent, rho: float) -> float:
    """Infinite discounted sum of growth-forecast deviations from the mean.

    Computes ``sum_{s>=0} rho^s (F g[t+1+s] - mean)`` in closed form as
    ``e1' B (I - rho B)^{-1} (recent - mean)``.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must be in (0, 1), got {rho}")
    if fit.nonstationary:
        raise DivergentSumError("fit has a unit root: no finite unconditional mean")
    recent = np.asarray(recent, dtype=float)
    B = companion_matrix(fit.betas)
    radius = float(np.max(np.abs(np.linalg.eigvals(B))))
    if rho * radius >= 1.0:
        raise DivergentSumError(
            f"spectral radius {radius:.6g} >= 1/rho = {1.0 / rho:.6g}"
        )
    dev = recent - fit.intercept_mean
    resolvent = np.linalg.solve(np.eye(fit.p) - rho * B, dev)
    return float((B @ resolvent)[0])


def _forecast_sequence(fit: ArFit, recent, horizon: int) -> np.ndarray:
    """Growth forecasts for horizons 1..horizon (plain-float recursion)."""
    c = float(fit.intercept)
    betas = tuple(float(b) for b in fit.betas)
    state = [float(v) for v in recent]
    out = np.empty(horizon)
    for k in range(horizon):
        nxt = c
        for bj, sj in zip(betas, state):
            nxt += bj * sj
        out[k] = nxt
        state.pop()
        state.insert(0, nxt)
    return out


def price_claim(
    fit: ArFit,
    recent,
    dividend: float,
    r: float,
    truncation_horizon: int = DEFAULT_HORIZON,
) -> float:
    """Present value of the dividend claim under the fitted growth rule.

    Dividend forecasts exponentiate cumulative growth point forecasts; beyond
    the truncation horizon a constant-growth terminal value at the fitted
    unconditional mean closes the sum.
    """
    if dividend <= 0:
        raise ValueError(f"dividend must be > 0, got {dividend}")
    if r <= 0:
        raise ValueError(f"discount rate must be > 0, got {r}")
    if truncation_horizon < 1:
        raise ValueError("truncation_horizon must be >= 1")
    if fit.nonstationary:
        raise NonConvergentPricingError(
            "fit has a unit root: no finite long-run growth for the terminal value"
        )
    radius = float(np.max(np.abs(np.linalg.eigvals(companion_matrix(fit.betas)))))
    if radius >= 1.0:
        raise NonConvergentPricingError(
            f"explosive fitted dynamics (spectral radius {radius:.4g})"
        )
    g_long = fit.intercept_mean
    x = math.exp(g_long) / (1.0 + r)
    if not x < 1.0:
        raise NonConvergentPricingError(
            f"exp(long-run growth) = {math.exp(g_long):.6g} >= 1 + r = {1.0 + r:.6g}"
        )
    recent = np.asarray(recent, dtype=float)
    if len(recent) != fit.p:
        raise ValueError(f"recent must have length p={fit.p}, got {len(recent)}")
    fcasts = _forecast_sequence(fit, recent, truncation_horizon)
    cum = np.cumsum(fcasts)
    s = np.arange(1, truncation_horizon + 1)
    with np.errstate(over="ignore"):
        pv_ratios = np.exp(cum - s * math.log1p(r))
    body = float(np.sum(pv_ratios))
    terminal = float(pv_ratios[-1]) * x / (1.0 - x)
    price = dividend * (body + terminal)
    if not math.isfinite(price) or price <= 0:
        raise NonConvergentPricingError("price overflowed or is not positive")
    return price


def price_path(
    params: ModelParams,
    path: GrowthPath,
    p: int | None = None,
    min_window: int = 40,
    truncation_horizon: int = DEFAULT_HORIZON,
) -> PricedFirm:
    """Price every period of a growth path with expanding-window refits.

    Dividend levels are rebased (a constant factor per firm) so that their
    logs are centered over the priced window; prices and returns are
    unaffected because pricing is homogeneous of degree one in the dividend.
    Raises if any period's fit is singular or fails pricing convergence.
    """
    if p is None:
        p = params.ar_order
    g = np.asarray(path.g, dtype=float)
    T = len(g)
    t0 = min_window
    if T - 1 < t0 + 1:
        raise NonConvergentPricingError(f"path too short to price: T={T}")
    r = params.discount_rate

    coefs, ok = _expanding_fits(g, p, t0, T - 1)
    if not np.all(ok):
        raise DegenerateFitError("singular expanding fit inside the priced window")

    log_d = np.cumsum(g)
    log_d = log_d - float(np.mean(log_d[t0:]))

    n = T - t0
    prices = np.empty(n)
    dividends = np.empty(n)
    fits = []
    recents = np.empty((n, p))
    for k, t in enumerate(range(t0, T)):
        fit = ArFit(
            intercept=float(coefs[k, 0]),
            betas=coefs[k, 1:].copy(),
            n_obs=t + 1 - p,
        )
        recent = g[t - p + 1 : t + 1][::-1]
        dividend = math.exp(log_d[t])
        if not (0.0 < dividend < math.inf):
            raise NonConvergentPricingError("dividend level out of float range")
        prices[k] = price_claim(fit, recent, dividend, r, truncation_horizon)
        dividends[k] = dividend
        fits.append(fit)
        recents[k] = recent

    returns = (prices[1:] + dividends[:-1] - prices[:-1]) / prices[:-1]
    log_returns = np.log((prices[1:] + dividends[:-1]) / prices[:-1])
    series = PricedSeries(
        dividends=dividends, prices=prices, returns=returns, log_returns=log_returns
    )
    return PricedFirm(series=series, fits=fits, recents=recents, t0=t0)


def simulate_priced_panel(
    params: ModelParams,
    n_firms: int,
    T: int,
    master_seed: int,
    min_window: int = 40,
    truncation_horizon: int = DEFAULT_HORIZON,
) -> dict[int, PricedSeries]:
    """Simulate growth, forecast, and price a cross-section of firms.

    Firms whose pricing fails anywhere (singular fit, convergence violation,
    numeric overflow) are dropped with a logged diagnostic.
    """
    params.check_pricing_convergence()
    out: dict[int, PricedSeries] = {}
    dropped = 0
    for firm in range(n_firms):
        path = simulate_path(params, T, firm_seed(master_seed, firm))
        try:
            priced = price_path(
                params,
                path,
                min_window=min_window,
                truncation_horizon=truncation_horizon,
            )
        except (NonConvergentPricingError, DegenerateFitError) as exc:
            dropped += 1
            log.warning("dropping firm %d: %s", firm, exc)
            continue
        out[firm] = priced.series
    if dropped:
        log.warning("simulate_priced_panel: dropped %d of %d firms", dropped, n_firms)
    return out


def cs_rho(panel: dict[int, PricedSeries]) -> float:
    """Log-linearization discount from the panel's average price-dividend ratio."""
    ratios = [np.mean(s.prices / s.dividends) for s in panel.values()]
    if not ratios:
        raise ValueError("empty priced panel")
    pd_bar = float(np.mean(ratios))
    return pd_bar / (1.0 + pd_bar)


def cs_return_decomposition(
    priced: PricedFirm, rho: float, r: float
) -> np.ndarray:
    """Residuals of the first-order return approximation, period by period.

    For each step the unexpected log return is approximated by
    ``e1' (I + rho B (I - rho B)^{-1}) (G[t+1] - B G[t])`` with the model
    held at the fit used to set the price at ``t``; the residual is realized
    log return minus ``log(1 + r)`` minus this linear term.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must be in (0, 1), got {rho}")
    series = priced.series
    n = len(series.prices)
    resid = np.empty(n - 1)
    log_gross_r = math.log1p(r)
    for k in range(n - 1):
        fit = priced.fits[k]
        if fit.nonstationary:
            resid[k] = math.nan
            continue
        mean = fit.intercept_mean
        B = companion_matrix(fit.betas)
        g_now = priced.recents[k] - mean
        g_next = priced.recents[k + 1] - mean
        innov = g_next - B @ g_now
        lead = np.linalg.solve(np.eye(fit.p) - rho * B, innov)
        approx = float(innov[0] + rho * (B @ lead)[0])
        resid[k] = float(series.log_returns[k]) - log_gross_r - approx
    return resid
