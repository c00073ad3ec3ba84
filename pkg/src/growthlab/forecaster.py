"""Linear AR(p) forecaster, its bookkeeping, and the optimal filter benchmark.

The forecaster refits an AR(p) by OLS on an expanding window each period and
reports one- and two-step-ahead forecasts.  From those, per-period forecast
errors and revisions are recorded.  ``kalman_forecast`` provides the exact
steady-state filter for the true two-component process, which is the rational
benchmark when all shocks are Gaussian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .dgp import GrowthPath, ModelParams
from .errors import DegenerateFitError, InsufficientDataError

log = logging.getLogger(__name__)

# |1 - sum(betas)| below this means the fitted model has no finite
# unconditional mean; forecasts fall back to the raw intercept recursion.
NONSTATIONARY_TOL = 1e-6

# Relative determinant threshold below which an expanding-window design is
# treated as singular and the period is skipped.
SINGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class ArFit:
    """OLS estimates of an AR(p) with free intercept.

    ``betas[k]`` multiplies lag ``k + 1``.  The unconditional-mean estimate
    is backed out as ``intercept / (1 - sum(betas))`` and is undefined
    (``nan``) when the fitted lag polynomial has a unit root.
    """

    intercept: float
    betas: np.ndarray
    n_obs: int

    @property
    def p(self) -> int:
        return len(self.betas)

    @property
    def nonstationary(self) -> bool:
        return abs(1.0 - float(np.sum(self.betas))) < NONSTATIONARY_TOL

    @property
    def intercept_mean(self) -> float:
        if self.nonstationary:
            return math.nan
        return self.intercept / (1.0 - float(np.sum(self.betas)))

    @classmethod
    def from_mean(cls, mean: float, betas, n_obs: int = 0) -> "ArFit":
        """Build a fit from an unconditional mean instead of a raw intercept."""
        betas = np.asarray(betas, dtype=float)
        return cls(
            intercept=mean * (1.0 - float(np.sum(betas))),
            betas=betas,
            n_obs=n_obs,
        )


@dataclass(frozen=True)
class ForecastRecord:
    """One period of forecaster bookkeeping for one firm.

    ``f1`` is the one-step forecast of next-period growth made at ``t``;
    ``f2_prior`` is the forecast of the same target made one period earlier.
    ``error = g[t+1] - f1`` and ``revision = f1 - f2_prior`` exactly.
    """

    firm: int | str
    t: int
    f1: float
    f2_prior: float
    error: float
    revision: float


@dataclass
class ForecastPanel:
    """Pooled forecast records, tagged with their origin."""

    records: list[ForecastRecord]
    source: str = "simulated"  # or "ingested"

    def __len__(self) -> int:
        return len(self.records)

    def arrays(self):
        """Return (firm, t, f1, f2_prior, error, revision) as flat arrays."""
        n = len(self.records)
        firm = np.array([r.firm for r in self.records])
        t = np.array([r.t for r in self.records], dtype=np.int64)
        cols = np.empty((n, 4))
        for i, r in enumerate(self.records):
            cols[i] = (r.f1, r.f2_prior, r.error, r.revision)
        return firm, t, cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3]


def lag_design(history: np.ndarray, p: int):
    """Design matrix (1, g[s-1], ..., g[s-p]) and targets g[s] for s >= p."""
    history = np.asarray(history, dtype=float)
    n_rows = len(history) - p
    X = np.empty((n_rows, p + 1))
    X[:, 0] = 1.0
    for k in range(1, p + 1):
        X[:, k] = history[p - k : len(history) - k]
    return X, history[p:]


def fit_ar(history, p: int) -> ArFit:
    """OLS fit of growth on a constant and its first ``p`` lags.

    Requires ``len(history) >= 2 * p + 2`` so the regression keeps at least
    one degree of freedom beyond its ``p + 1`` coefficients.
    """
    history = np.asarray(history, dtype=float)
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if len(history) < 2 * p + 2:
        raise InsufficientDataError(
            f"need at least {2 * p + 2} observations for p={p}, got {len(history)}"
        )
    X, y = lag_design(history, p)
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < p + 1:
        raise DegenerateFitError(
            f"singular design (rank {rank} < {p + 1}); history may be constant"
        )
    return ArFit(intercept=float(coef[0]), betas=coef[1:].copy(), n_obs=len(y))


def companion_matrix(betas) -> np.ndarray:
    """p x p companion matrix: top row the AR coefficients, subdiagonal ones."""
    betas = np.asarray(betas, dtype=float)
    p = len(betas)
    B = np.zeros((p, p))
    B[0, :] = betas
    if p > 1:
        B[1:, :-1] = np.eye(p - 1)
    return B


def iterate_forecasts(fit: ArFit, recent, h: int) -> np.ndarray:
    """Forecasts for horizons 1..h by repeated one-step substitution.

    ``recent`` is ordered most-recent-first and must have length ``fit.p``.
    Uses only the raw intercept, so it is valid for nonstationary fits too.
    """
    state = list(np.asarray(recent, dtype=float))
    if len(state) != fit.p:
        raise ValueError(f"recent must have length p={fit.p}, got {len(state)}")
    betas = fit.betas
    out = np.empty(h)
    for k in range(h):
        nxt = fit.intercept + float(np.dot(betas, state))
        out[k] = nxt
        state = [nxt] + state[:-1]
    return out


def forecast_horizon(fit: ArFit, recent, h: int) -> float:
    """h-step-ahead point forecast under the fitted AR(p).

    Computed as ``mean + e1' B^h (recent - mean)`` with ``B`` the companion
    matrix; when the fit has no finite mean the raw intercept recursion is
    used instead.
    """
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    recent = np.asarray(recent, dtype=float)
    if len(recent) != fit.p:
        raise ValueError(f"recent must have length p={fit.p}, got {len(recent)}")
    if fit.nonstationary:
        return float(iterate_forecasts(fit, recent, h)[-1])
    mean = fit.intercept_mean
    B = companion_matrix(fit.betas)
    Bh = np.linalg.matrix_power(B, h)
    return float(mean + Bh[0] @ (recent - mean))


def _expanding_fits(g: np.ndarray, p: int, t_first: int, t_last: int):
    """OLS coefficients of the expanding-window AR(p) for t_first..t_last.

    The fit at ``t`` regresses g[s] on (1, g[s-1..s-p]) for all s in [p, t].
    Returns (coefs, ok) where ``coefs[j]`` belongs to ``t = t_first + j`` and
    ``ok[j]`` is False for singular designs (those periods are skipped).
    """
    T = len(g)
    X, y = lag_design(g, p)  # row s - p corresponds to target g[s]
    k = p + 1

    # Cumulative normal equations: M_t = X'X and v_t = X'y over rows s <= t.
    prods = X[:, :, None] * X[:, None, :]  # (rows, k, k)
    M_cum = np.cumsum(prods, axis=0)
    v_cum = np.cumsum(X * y[:, None], axis=0)

    idx = np.arange(t_first, t_last + 1) - p  # row index of target g[t]
    M = M_cum[idx]
    v = v_cum[idx]

    # Scale-free singularity screen: det relative to the Hadamard bound.
    diag = np.einsum("...ii->...i", M)
    hadamard = np.prod(diag, axis=-1)
    det = np.linalg.det(M)
    ok = (hadamard > 0) & (det > SINGULAR_RTOL * hadamard)

    coefs = np.full((len(idx), k), np.nan)
    if np.any(ok):
        coefs[ok] = np.linalg.solve(M[ok], v[ok][..., None])[..., 0]
    return coefs, ok


def run_forecaster(
    path: GrowthPath,
    p: int,
    min_window: int = 40,
    firm: int = 0,
    frozen_fit: ArFit | None = None,
) -> list[ForecastRecord]:
    """Expanding-window forecasts, errors and revisions along one path.

    For each ``t`` the model is refit on all growth observed through ``t``;
    the earliest fit used sees ``min_window`` observations.  A record at
    ``t`` carries the one-step forecast from the fit at ``t``, the stale
    two-step forecast from the fit at ``t - 1``, and the realized error.
    Periods whose fit is singular are skipped (with a logged diagnostic), as
    are records missing any prerequisite.

    Passing ``frozen_fit`` disables refitting and applies one fixed rule at
    every ``t``; in that mode revisions obey the exact proportionality
    ``revision = betas[0] * (g[t] - f1[t-1])``.
    """
    g = np.asarray(path.g, dtype=float)
    T = len(g)
    if frozen_fit is None and min_window < 2 * p + 2:
        raise ValueError(f"min_window must be >= {2 * p + 2} for p={p}")
    if frozen_fit is not None:
        p = frozen_fit.p
    t_lo = max(min_window, p)  # first t with a usable prior fit at t-1
    if T - 2 < t_lo:
        return []

    ts = np.arange(t_lo, T - 1)  # record times; error needs g[t+1]

    if frozen_fit is not None:
        coefs = np.tile(
            np.concatenate(([frozen_fit.intercept], frozen_fit.betas)),
            (T, 1),
        )
        ok = np.ones(T, dtype=bool)
        first_fit_t = 0
    else:
        coefs_part, ok_part = _expanding_fits(g, p, t_lo - 1, T - 2)
        coefs = np.full((T, p + 1), np.nan)
        ok = np.zeros(T, dtype=bool)
        coefs[t_lo - 1 : T - 1] = coefs_part
        ok[t_lo - 1 : T - 1] = ok_part
        first_fit_t = t_lo - 1
        n_bad = int(np.sum(~ok_part))
        if n_bad:
            log.warning("skipped %d periods with singular expanding fits", n_bad)

    # Lag matrix: lags[t, k] = g[t - k] for k = 0..p-1 (most recent first).
    lags = np.full((T, p), np.nan)
    for k in range(p):
        lags[k:, k] = g[: T - k]

    c = coefs[:, 0]
    b = coefs[:, 1:]

    # One-step forecast made at t: f1[t] = c_t + b_t . (g[t], ..., g[t-p+1]).
    f1 = c + np.einsum("tk,tk->t", b, lags)

    # Two-step forecast made at t-1 for g[t+1]: advance the fit at t-1 by
    # substituting its own one-step forecast for the unobserved g[t].
    c_prev = np.roll(c, 1)
    b_prev = np.roll(b, 1, axis=0)
    lags_prev = np.roll(lags, 1, axis=0)
    m1 = c_prev + np.einsum("tk,tk->t", b_prev, lags_prev)  # F_{t-1} g_t
    state2 = np.column_stack([m1, lags_prev[:, : p - 1]]) if p > 1 else m1[:, None]
    f2_prior = c_prev + np.einsum("tk,tk->t", b_prev, state2)

    records = []
    for t in ts:
        if not (ok[t] and ok[t - 1] and t - 1 >= first_fit_t):
            continue
        rec = ForecastRecord(
            firm=firm,
            t=int(t),
            f1=float(f1[t]),
            f2_prior=float(f2_prior[t]),
            error=float(g[t + 1] - f1[t]),
            revision=float(f1[t] - f2_prior[t]),
        )
        records.append(rec)
    return records


def panel_forecasts(panel, p: int, min_window: int = 40) -> ForecastPanel:
    """Run the expanding-window forecaster over every firm of a growth panel."""
    records = []
    for firm in sorted(panel.firms):
        records.extend(
            run_forecaster(panel.firms[firm], p, min_window=min_window, firm=firm)
        )
    return ForecastPanel(records=records, source="simulated")


def kalman_gain(params: ModelParams) -> float:
    """Steady-state gain for the latent AR(1) observed through noise.

    Solves the scalar Riccati fixed point for the one-step-ahead state
    variance ``P``: ``P = phi^2 P R / (P + R) + Q`` with ``Q = sigma_u^2``
    and ``R = sigma_eps^2``; the gain is ``P / (P + R)``.  With no
    observation noise the filter degenerates to full observation (gain 1).
    """
    Q = params.sigma_u**2
    R = params.sigma_eps**2
    if R == 0.0:
        return 1.0
    c = R * (1.0 - params.phi**2) - Q
    P = 0.5 * (-c + math.sqrt(c * c + 4.0 * Q * R))
    return P / (P + R)


def kalman_state_series(params: ModelParams, history) -> np.ndarray:
    """Filtered latent-state deviations after each observation in history."""
    y = np.asarray(history, dtype=float) - params.g_bar
    G = kalman_gain(params)
    decay = (1.0 - G) * params.phi
    # x_hat[t] = G y[t] + decay * x_hat[t-1], started from the prior mean 0.
    out, _ = lfilter([G], [1.0, -decay], y, zi=[0.0])
    return out


def kalman_forecast(params: ModelParams, history, h: int) -> float:
    """h-step forecast of growth from the exact steady-state filter.

    This is the Gaussian-optimal forecast; with Student-t transitory shocks
    it is simply the best linear filter built from second moments.
    """
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    if len(history) == 0:
        raise InsufficientDataError("history must contain at least one observation")
    x_hat = kalman_state_series(params, history)[-1]
    return float(params.g_bar + params.phi**h * x_hat)


def kalman_one_step(params: ModelParams, history) -> np.ndarray:
    """One-step forecasts F g[t+1] for every t along a path (vectorized)."""
    return params.g_bar + params.phi * kalman_state_series(params, history)


@dataclass(frozen=True)
class CgResult:
    """OLS of forecast error on forecast revision, with intercept."""

    alpha: float
    beta: float
    se_beta: float
    n: int


def cg_regression(records) -> CgResult:
    """Regress forecast errors on same-period revisions.

    Zero revision slope is the rationality benchmark: forecast errors should
    not be predictable from what the forecaster just revised.
    """
    if isinstance(records, ForecastPanel):
        records = records.records
    err = np.array([r.error for r in records], dtype=float)
    rev = np.array([r.revision for r in records], dtype=float)
    keep = np.isfinite(err) & np.isfinite(rev)
    err, rev = err[keep], rev[keep]
    n = len(err)
    if n < 10:
        raise InsufficientDataError(f"need >= 10 usable records, got {n}")
    sxx = float(np.sum((rev - rev.mean()) ** 2))
    if sxx == 0.0:
        raise DegenerateFitError("revisions have zero variance")
    beta = float(np.sum((rev - rev.mean()) * (err - err.mean()))) / sxx
    alpha = float(err.mean() - beta * rev.mean())
    resid = err - alpha - beta * rev
    sigma2 = float(np.sum(resid**2)) / (n - 2)
    return CgResult(alpha=alpha, beta=beta, se_beta=math.sqrt(sigma2 / sxx), n=n)
