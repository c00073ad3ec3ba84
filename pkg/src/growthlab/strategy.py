"""Momentum-with-tail-reversal strategy and its Sharpe-ratio optimization.

The signal is the cross-sectional rank of trailing cumulative log return
(eleven months, skipping the most recent).  Portfolio weights follow a
continuous piecewise-linear schedule that shorts the most extreme ranks and
rides momentum in between; the two kink locations are tuned by grid search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidParameterError

log = logging.getLogger(__name__)

SIGNAL_WINDOW = 11  # monthly returns t-12 .. t-2, skipping the last month
ANNUALIZATION = np.sqrt(12.0)


@dataclass
class SignalPanel:
    """Month-by-stock rank signal in [0, 1] and the raw trailing return."""

    s: np.ndarray  # (months, stocks); NaN where the stock is excluded
    past_ret: np.ndarray  # same shape; cumulative log return behind the rank


@dataclass
class StrategyReport:
    """Backtest output: kink locations, monthly returns and Sharpe ratio(s)."""

    a: float
    b: float
    monthly_returns: np.ndarray
    sharpe: float
    sharpe_surface: np.ndarray | None = None
    a_grid: np.ndarray | None = None
    b_grid: np.ndarray | None = None


def momentum_signal(returns: np.ndarray, month: int):
    """Rank signal entering ``month`` from the trailing return window.

    Uses the eleven monthly log returns from ``month - 12`` through
    ``month - 2``; the most recent month is skipped.  Stocks missing any
    observation in the window are excluded (NaN signal).  Ranks are averaged
    over ties and mapped onto [0, 1].

    Returns ``(s, past_ret)`` for the requested month.
    """
    returns = np.asarray(returns, dtype=float)
    if month < 12:
        raise ValueError(f"month must be >= 12, got {month}")
    window = returns[month - 12 : month - 1]  # rows month-12 .. month-2
    past = np.sum(window, axis=0)
    past = np.where(np.all(np.isfinite(window), axis=0), past, np.nan)
    s = np.full(past.shape, np.nan)
    valid = np.isfinite(past)
    n = int(valid.sum())
    if n >= 2:
        ranks = rankdata(past[valid], method="average")
        s[valid] = (ranks - 1.0) / (n - 1.0)
    return s, past


def build_signal_panel(returns: np.ndarray) -> SignalPanel:
    """Signals for every month with a full trailing window."""
    returns = np.asarray(returns, dtype=float)
    n_months, n_stocks = returns.shape
    s = np.full((n_months, n_stocks), np.nan)
    past = np.full((n_months, n_stocks), np.nan)
    for m in range(12, n_months):
        s[m], past[m] = momentum_signal(returns, m)
    return SignalPanel(s=s, past_ret=past)


def weight_schedule(s, a: float, b: float, continuous: bool = True):
    """Portfolio weight as a function of the rank signal.

    Reversal below ``a`` and above ``b``, momentum in between::

        w = 0.5 - s / a                    s <= a
        w = (s - a) / (b - a) - 0.5        a <  s <= b
        w = 0.5 - (s - b) / (1 - b)        s >  b

    ``continuous=False`` replaces the middle segment with
    ``(s - b) / (b - a) - 0.5``, a variant offset by -1 that is
    discontinuous at both kinks; it is kept only for comparison.
    """
    if not (0.0 < a < b < 1.0):
        raise InvalidParameterError(f"need 0 < a < b < 1, got a={a}, b={b}")
    s_arr = np.asarray(s, dtype=float)
    finite = np.isfinite(s_arr)
    if np.any((s_arr[finite] < 0.0) | (s_arr[finite] > 1.0)):
        raise InvalidParameterError("signal values must lie in [0, 1]")
    low = 0.5 - s_arr / a
    if continuous:
        mid = (s_arr - a) / (b - a) - 0.5
    else:
        mid = (s_arr - b) / (b - a) - 0.5
    high = 0.5 - (s_arr - b) / (1.0 - b)
    w = np.where(s_arr <= a, low, np.where(s_arr <= b, mid, high))
    if np.isscalar(s) or np.ndim(s) == 0:
        return float(w)
    return w


def _monthly_portfolio_returns(
    s: np.ndarray, returns: np.ndarray, a: float, b: float, continuous: bool = True
):
    """Self-financing, unit-gross portfolio returns for every usable month.

    A month is usable when at least two stocks have both a signal and a
    current return.  Weights are demeaned cross-sectionally (sum to zero)
    and scaled to unit gross exposure.
    """
    usable = np.isfinite(s) & np.isfinite(returns)
    s_masked = np.where(usable, s, np.nan)
    month_ok = usable.sum(axis=1) >= 2
    if not np.any(month_ok):
        return np.empty(0), np.empty(0, dtype=np.int64)
    w = weight_schedule(s_masked[month_ok], a, b, continuous=continuous)
    w = w - np.nanmean(w, axis=1, keepdims=True)
    gross = np.nansum(np.abs(w), axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(gross > 0, w / gross, 0.0)
    port = np.nansum(w * np.where(usable[month_ok], returns[month_ok], np.nan), axis=1)
    return port, np.flatnonzero(month_ok)


def sharpe_ratio(monthly_returns: np.ndarray) -> float:
    """Annualized Sharpe ratio of monthly returns (0 for a degenerate series)."""
    monthly_returns = np.asarray(monthly_returns, dtype=float)
    if len(monthly_returns) < 2:
        return 0.0
    sd = float(np.std(monthly_returns, ddof=1))
    if sd == 0.0:
        return 0.0
    return float(ANNUALIZATION * np.mean(monthly_returns) / sd)


def backtest(
    signal_panel: SignalPanel,
    returns: np.ndarray,
    a: float,
    b: float,
    continuous: bool = True,
) -> StrategyReport:
    """Run the weighting scheme at fixed kinks over the whole panel.

    Months with fewer than two tradable stocks are skipped (logged).
    """
    returns = np.asarray(returns, dtype=float)
    port, months = _monthly_portfolio_returns(
        signal_panel.s, returns, a, b, continuous=continuous
    )
    n_candidates = (np.isfinite(signal_panel.s).sum(axis=1) > 0).sum()
    if len(months) < n_candidates:
        log.info("backtest: skipped %d months with < 2 tradable stocks",
                 int(n_candidates - len(months)))
    return StrategyReport(
        a=a, b=b, monthly_returns=port, sharpe=sharpe_ratio(port)
    )


def inflection_grids(grid_step: float = 0.01):
    """Grid of lower kinks below 0.5 and upper kinks above 0.5."""
    if not 0.0 < grid_step < 0.5:
        raise InvalidParameterError(f"grid_step must be in (0, 0.5), got {grid_step}")
    n = int(round(0.5 / grid_step)) - 1
    a_grid = np.round(np.arange(1, n + 1) * grid_step, 10)
    b_grid = np.round(1.0 - a_grid[::-1], 10)
    return a_grid, b_grid


def optimize_inflections(
    signal_panel: SignalPanel,
    returns: np.ndarray,
    grid_step: float = 0.01,
    continuous: bool = True,
) -> StrategyReport:
    """Exhaustive Sharpe search over both kink locations.

    Ties are broken toward the widest momentum band: smallest lower kink,
    then largest upper kink.
    """
    returns = np.asarray(returns, dtype=float)
    a_grid, b_grid = inflection_grids(grid_step)
    surface = np.empty((len(a_grid), len(b_grid)))
    best = None
    for i, a in enumerate(a_grid):
        for j, b in enumerate(b_grid):
            port, _ = _monthly_portfolio_returns(
                signal_panel.s, returns, a, b, continuous=continuous
            )
            sr = sharpe_ratio(port)
            surface[i, j] = sr
            key = (-sr, a, -b)
            if best is None or key < best[0]:
                best = (key, a, b, port, sr)
    _, a_opt, b_opt, port_opt, sr_opt = best
    return StrategyReport(
        a=float(a_opt),
        b=float(b_opt),
        monthly_returns=port_opt,
        sharpe=sr_opt,
        sharpe_surface=surface,
        a_grid=a_grid,
        b_grid=b_grid,
    )
