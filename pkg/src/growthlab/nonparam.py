"""Nonparametric diagnostics: percentile binscatter, kernel smoothing,
bootstrap bands, tail-robust normalization and QQ tail comparison.

These are the tools every curve-style diagnostic in the package is built
from.  All of them are pure functions of their inputs (plus an explicit seed
for the bootstrap), so identical calls produce identical output.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import laplace, norm, t as student_t

from .dgp import GrowthPanel
from .errors import (
    InsufficientDataError,
    InsufficientTailDataError,
    SmoothingError,
)
from .forecaster import ForecastPanel, ForecastRecord

log = logging.getLogger(__name__)

_EVAL_CHUNK = 32  # eval points smoothed per weight-matrix block
_MIN_LOCAL_ESS = 3.0  # effective local sample below this widens the bandwidth
_MAX_WIDENINGS = 5


@dataclass
class BinnedCurve:
    """Percentile-binned means with a smoothed line and its bootstrap band."""

    bin_x: np.ndarray
    bin_y: np.ndarray
    loess_y: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_bins: int
    bandwidth: float
    n_obs: int


@dataclass
class QqPoints:
    """Matched data and reference quantiles of |x| above a tail cutoff."""

    prob_levels: np.ndarray
    data_q: np.ndarray
    ref_q: np.ndarray
    reference: str


@dataclass(frozen=True)
class MadRow:
    mean_g: float
    mad: float
    t_count: int


@dataclass
class MadTable:
    """Per-firm mean and mean absolute deviation of growth."""

    rows: dict[int, MadRow] = field(default_factory=dict)
    excluded: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class StudentFit:
    """Maximum-likelihood Student-t tail fit (location fixed at zero)."""

    nu: float
    scale: float
    effectively_gaussian: bool


def _bin_sizes(n: int, n_bins: int) -> np.ndarray:
    """Equal-count bin sizes; any remainder goes to the lowest bins."""
    base, rem = divmod(n, n_bins)
    sizes = np.full(n_bins, base, dtype=np.int64)
    sizes[:rem] += 1
    return sizes


def binscatter(x, y, n_bins: int = 100):
    """Equal-count bins of observations ranked by x; per-bin means.

    Ties in x keep their input order (stable sort).  If there are fewer
    observations than bins, the bin count falls back to one point per bin
    (with a logged diagnostic).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    n = len(x)
    if n == 0:
        raise InsufficientDataError("binscatter needs at least one observation")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("binscatter requires finite values")
    if n < n_bins:
        log.warning("binscatter: %d observations < %d bins; using %d bins", n, n_bins, n)
        n_bins = n
    order = np.argsort(x, kind="stable")
    sizes = _bin_sizes(n, n_bins)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    xs = x[order]
    ys = y[order]
    bin_x = np.add.reduceat(xs, starts) / sizes
    bin_y = np.add.reduceat(ys, starts) / sizes
    return bin_x, bin_y


def percentile_bandwidth(x, clip_quantile: float | None = None) -> float:
    """Kernel bandwidth from the spacing of the outermost percentile bins.

    Averages the gap between the mean x of the 1st and 2nd percentile bins
    and the gap between the 99th and 100th.  ``clip_quantile`` optionally
    winsorizes x at the (q, 1-q) quantiles first, which keeps the bandwidth
    local when the tails of x are so heavy that the outermost bin means sit
    far from the rest of the sample.
    """
    x = np.asarray(x, dtype=float)
    if len(x) < 4:
        raise InsufficientDataError("bandwidth needs at least 4 observations")
    if clip_quantile is not None:
        lo, hi = np.quantile(x, [clip_quantile, 1.0 - clip_quantile])
        x = np.clip(x, lo, hi)
    bx, _ = binscatter(x, x, 100)
    b = 0.5 * ((bx[1] - bx[0]) + (bx[-1] - bx[-2]))
    if b <= 0:
        raise InsufficientDataError("degenerate x distribution: zero bandwidth")
    return float(b)


def _fit_from_sums(s0, s1, s2, sy, sxy):
    """Fitted local-linear value at the eval point from weighted sums.

    Falls back to the weighted mean where the local design is degenerate.
    """
    denom = s0 * s2 - s1 * s1
    scale = s0 * s2
    with np.errstate(invalid="ignore", divide="ignore"):
        local_linear = (s2 * sy - s1 * sxy) / denom
        local_mean = sy / s0
    use_mean = ~np.isfinite(local_linear) | (denom <= 1e-12 * scale)
    return np.where(use_mean, local_mean, local_linear)


def _loess_fixed(xs, ys, evals, bandwidth, counts=None):
    """Local linear fit at each eval point with a fixed Gaussian bandwidth.

    Returns (fitted, ess) where ``ess`` is the Kish effective sample size of
    the kernel weights at each point.  ``counts`` carries bootstrap
    multiplicities (None means every point counts once).
    """
    m = len(evals)
    fitted = np.empty(m)
    ess = np.empty(m)
    two_b2 = 2.0 * bandwidth * bandwidth
    c = counts if counts is not None else None
    for lo in range(0, m, _EVAL_CHUNK):
        hi = min(lo + _EVAL_CHUNK, m)
        dx = xs[None, :] - evals[lo:hi, None]
        dx2 = dx * dx
        w = np.exp(-dx2 / two_b2)
        wc = w * c if c is not None else w
        wc_dx = wc * dx
        s0 = wc.sum(axis=1)
        s1 = wc_dx.sum(axis=1)
        s2 = (wc * dx2).sum(axis=1)
        sy = wc @ ys
        sxy = wc_dx @ ys
        fitted[lo:hi] = _fit_from_sums(s0, s1, s2, sy, sxy)
        sq = (w * w * c).sum(axis=1) if c is not None else (w * w).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            ess[lo:hi] = np.where(sq > 0, s0 * s0 / sq, 0.0)
    return fitted, ess


class _FixedBandwidthSmoother:
    """Reusable kernel-weight matrices for repeated weighted smooths.

    With the bandwidth pinned, each bootstrap replicate only reweights the
    same kernel matrix by its multiplicity counts, which reduces a replicate
    to a handful of BLAS products instead of a fresh kernel evaluation.
    """

    def __init__(self, xs, ys, evals, bandwidth):
        self.xs = xs
        self.ys = ys
        self.evals = evals
        self.bandwidth = bandwidth
        dx = xs[None, :] - evals[:, None]
        self.W = np.exp(-(dx * dx) / (2.0 * bandwidth * bandwidth))
        self.W2 = self.W * self.W
        # Column stack of the count-weighted moment vectors' inputs.
        self.V = np.column_stack([xs, xs * xs, ys, xs * ys])

    def smooth(self, counts):
        """(fitted, ess) for one replicate given multiplicity counts."""
        evals = self.evals
        moments = self.W @ (self.V * counts[:, None])  # (m, 4)
        s0 = self.W @ counts
        sx = moments[:, 0]
        sxx = moments[:, 1]
        sy_raw = moments[:, 2]
        sxy_raw = moments[:, 3]
        s1 = sx - evals * s0
        s2 = sxx - 2.0 * evals * sx + evals * evals * s0
        sxy = sxy_raw - evals * sy_raw
        fitted = _fit_from_sums(s0, s1, s2, sy_raw, sxy)
        sq = self.W2 @ counts
        with np.errstate(invalid="ignore", divide="ignore"):
            ess = np.where(sq > 0, s0 * s0 / sq, 0.0)
        return fitted, ess


def loess_curve(x, y, eval_points, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian-kernel local linear regression evaluated at given points.

    The default bandwidth is :func:`percentile_bandwidth` of x.  Eval points
    whose effective local sample is below 3 are retried with a doubled
    bandwidth (up to 5 doublings) before giving up.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    evals = np.asarray(eval_points, dtype=float)
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    if len(x) < 30:
        raise InsufficientDataError(f"loess needs >= 30 observations, got {len(x)}")
    b = percentile_bandwidth(x) if bandwidth is None else float(bandwidth)
    if b <= 0:
        raise ValueError("bandwidth must be > 0")
    fitted, ess = _loess_fixed(x, y, evals, b)
    weak = ess < _MIN_LOCAL_ESS
    widened = b
    for _ in range(_MAX_WIDENINGS):
        if not np.any(weak):
            break
        widened *= 2.0
        refit, ress = _loess_fixed(x, y, evals[weak], widened)
        fitted[weak] = refit
        ess[weak] = ress
        weak = ess < _MIN_LOCAL_ESS
    if np.any(weak):
        raise SmoothingError(
            f"{int(weak.sum())} eval points kept an effective sample < "
            f"{_MIN_LOCAL_ESS} after {_MAX_WIDENINGS} bandwidth doublings"
        )
    return fitted


def bootstrap_band(
    x,
    y,
    eval_points,
    n_boot: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    bandwidth: float | None = None,
):
    """Pointwise bootstrap percentile band around the smoothed curve.

    Resamples (x, y) pairs with replacement, re-runs the smoother on each
    replicate (recomputing its bandwidth unless one is pinned), and takes
    pointwise percentile limits.  Failed replicates are dropped and counted.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    evals = np.asarray(eval_points, dtype=float)
    n = len(x)
    if len(y) != n:
        raise ValueError("x and y must have equal length")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    sizes = _bin_sizes(n, min(100, n))
    # The precomputed kernel matrix pays off unless it would be huge.
    use_fast = bandwidth is not None and len(evals) * n <= 30_000_000
    smoother = _FixedBandwidthSmoother(xs, ys, evals, bandwidth) if use_fast else None

    curves = np.empty((n_boot, len(evals)))
    dropped = 0
    kept = 0
    for r in range(n_boot):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        try:
            if bandwidth is None:
                xb = np.repeat(xs, counts.astype(np.int64))
                lo1 = sizes[0]
                lo2 = lo1 + sizes[1]
                hi2 = n - sizes[-1] - sizes[-2]
                b_r = 0.5 * (
                    (xb[lo1:lo2].mean() - xb[:lo1].mean())
                    + (xb[hi2 + sizes[-2] :].mean() - xb[hi2 : hi2 + sizes[-2]].mean())
                )
                if b_r <= 0:
                    raise SmoothingError("zero bandwidth in replicate")
                fitted, ess = _loess_fixed(xs, ys, evals, b_r, counts)
            elif smoother is not None:
                b_r = bandwidth
                fitted, ess = smoother.smooth(counts)
            else:
                b_r = bandwidth
                fitted, ess = _loess_fixed(xs, ys, evals, b_r, counts)
            weak = ess < _MIN_LOCAL_ESS
            widened = b_r
            for _ in range(_MAX_WIDENINGS):
                if not np.any(weak):
                    break
                widened *= 2.0
                refit, ress = _loess_fixed(xs, ys, evals[weak], widened, counts)
                fitted[weak] = refit
                ess[weak] = ress
                weak = ess < _MIN_LOCAL_ESS
            if np.any(weak):
                raise SmoothingError("weak eval points in replicate")
        except SmoothingError:
            dropped += 1
            continue
        curves[kept] = fitted
        kept += 1
    if dropped:
        log.warning("bootstrap_band: dropped %d of %d replicates", dropped, n_boot)
    if kept == 0:
        raise SmoothingError("all bootstrap replicates failed")
    alpha = 0.5 * (1.0 - level)
    lo = np.percentile(curves[:kept], 100.0 * alpha, axis=0)
    hi = np.percentile(curves[:kept], 100.0 * (1.0 - alpha), axis=0)
    return lo, hi


def build_binned_curve(
    x,
    y,
    n_bins: int = 100,
    n_boot: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    bandwidth: float | None = None,
) -> BinnedCurve:
    """Binscatter plus smoothed line plus bootstrap band, in one structure."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    bin_x, bin_y = binscatter(x, y, n_bins)
    b = percentile_bandwidth(x) if bandwidth is None else float(bandwidth)
    loess_y = loess_curve(x, y, bin_x, bandwidth=b)
    ci_lo, ci_hi = bootstrap_band(
        x, y, bin_x, n_boot=n_boot, level=level, seed=seed, bandwidth=bandwidth
    )
    return BinnedCurve(
        bin_x=bin_x,
        bin_y=bin_y,
        loess_y=loess_y,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        n_bins=len(bin_x),
        bandwidth=b,
        n_obs=len(x),
    )


def _mad_stats(values: np.ndarray) -> MadRow:
    mean = float(np.mean(values))
    return MadRow(
        mean_g=mean,
        mad=float(np.mean(np.abs(values - mean))),
        t_count=len(values),
    )


def mad_normalize(panel, demean: bool = True):
    """Scale each firm's series by its mean absolute deviation of growth.

    For a growth panel the result maps g to ``(g - mean) / MAD`` when
    ``demean`` is set, else ``g / MAD``.  For a forecast panel, errors and
    revisions are divided by the MAD of the firm's realized growth (implied
    by ``f1 + error``); ``demean`` does not apply to those deviations.
    Firms with fewer than 5 observations or zero MAD are excluded.

    Returns ``(normalized, MadTable)`` where ``normalized`` is a dict of
    per-firm arrays for a growth panel, or a new :class:`ForecastPanel`.
    """
    if isinstance(panel, GrowthPanel):
        table = MadTable()
        out: dict[int, np.ndarray] = {}
        for firm in sorted(panel.firms):
            g = np.asarray(panel.firms[firm].g, dtype=float)
            row = _mad_stats(g)
            if row.t_count < 5 or row.mad <= 0:
                table.excluded.append(firm)
                log.warning("mad_normalize: excluding firm %s (n=%d, mad=%g)",
                            firm, row.t_count, row.mad)
                continue
            table.rows[firm] = row
            out[firm] = (g - row.mean_g) / row.mad if demean else g / row.mad
        return out, table

    if isinstance(panel, ForecastPanel):
        by_firm: dict[int, list[ForecastRecord]] = {}
        for rec in panel.records:
            by_firm.setdefault(rec.firm, []).append(rec)
        table = MadTable()
        records: list[ForecastRecord] = []
        for firm in sorted(by_firm):
            recs = sorted(by_firm[firm], key=lambda r: r.t)
            realized = np.array([r.f1 + r.error for r in recs])
            row = _mad_stats(realized)
            if row.t_count < 5 or row.mad <= 0:
                table.excluded.append(firm)
                log.warning("mad_normalize: excluding firm %s (n=%d, mad=%g)",
                            firm, row.t_count, row.mad)
                continue
            table.rows[firm] = row
            for r in recs:
                records.append(
                    ForecastRecord(
                        firm=r.firm,
                        t=r.t,
                        f1=r.f1 / row.mad,
                        f2_prior=r.f2_prior / row.mad,
                        error=r.error / row.mad,
                        revision=r.revision / row.mad,
                    )
                )
        return ForecastPanel(records=records, source=panel.source), table

    raise TypeError(f"unsupported panel type: {type(panel).__name__}")


def _student_ml_scale(x2: np.ndarray, nu: float, s2_init: float) -> float:
    """ML scale^2 of a zero-location Student-t, by EM fixed point."""
    s2 = s2_init
    for _ in range(200):
        w = (nu + 1.0) / (nu + x2 / s2)
        s2_new = float(np.mean(w * x2))
        if s2_new <= 0:
            break
        if abs(math.log(s2_new) - math.log(s2)) < 1e-12:
            s2 = s2_new
            break
        s2 = s2_new
    return s2


def _student_profile_loglik(x2: np.ndarray, nu: float, s2: float) -> float:
    n = len(x2)
    return float(
        n
        * (
            gammaln((nu + 1.0) / 2.0)
            - gammaln(nu / 2.0)
            - 0.5 * math.log(nu * math.pi)
            - 0.5 * math.log(s2)
        )
        - 0.5 * (nu + 1.0) * np.sum(np.log1p(x2 / (nu * s2)))
    )


NU_LO = 1.1
NU_HI = 100.0
_GAUSSIAN_NU_FLAG = 98.0


def fit_student_nu(data) -> StudentFit:
    """Maximum-likelihood (nu, scale) of a centered Student-t.

    The tail parameter is searched on [1.1, 100] by golden section over the
    profile likelihood (scale maximized out at each nu).  A maximizer at the
    upper boundary is reported as effectively Gaussian.
    """
    x = np.asarray(data, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) < 500:
        raise InsufficientDataError(f"need >= 500 observations, got {len(x)}")
    x2 = x * x
    med2 = float(np.median(np.abs(x))) ** 2
    s2_seed = med2 if med2 > 0 else float(np.mean(x2))

    cache: dict[float, tuple[float, float]] = {}

    def profile(nu: float) -> float:
        if nu not in cache:
            s2 = _student_ml_scale(x2, nu, s2_seed)
            cache[nu] = (s2, _student_profile_loglik(x2, nu, s2))
        return cache[nu][1]

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = NU_LO, NU_HI
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = profile(c), profile(d)
    while b - a > 1e-3:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = profile(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = profile(d)
    nu_hat = 0.5 * (a + b)
    # Pick the best of interior optimum and both boundaries.
    candidates = [nu_hat, NU_LO, NU_HI]
    nu_best = max(candidates, key=profile)
    s2_best = cache[nu_best][0]
    return StudentFit(
        nu=float(nu_best),
        scale=math.sqrt(s2_best),
        effectively_gaussian=nu_best >= _GAUSSIAN_NU_FLAG,
    )


def qq_tail(data, reference, tail_level: float = 0.90, n_points: int = 200) -> QqPoints:
    """Tail quantiles of |data| against a unit-variance reference law.

    Data are first standardized to unit sample variance.  The reference is
    one of ``"normal"``, ``"laplace"``, or ``("student", nu)``; for nu <= 2
    (infinite population variance) the reference scale is the ML Student
    scale of the standardized data instead of a population rescaling.
    """
    x = np.asarray(data, dtype=float)
    x = x[np.isfinite(x)]
    n = len(x)
    if n < 500:
        raise InsufficientDataError(f"need >= 500 observations, got {n}")
    if not 0.5 <= tail_level < 1.0:
        raise ValueError(f"tail_level must be in [0.5, 1), got {tail_level}")
    n_tail = int(round(n * (1.0 - tail_level)))
    if n_tail < 50:
        raise InsufficientTailDataError(
            f"only {n_tail} observations beyond the {tail_level:.0%} cutoff"
        )
    z = x / float(np.std(x))
    a = np.abs(z)
    levels = tail_level + (1.0 - tail_level) * np.arange(n_points) / n_points
    data_q = np.quantile(a, levels)
    half = 0.5 * (1.0 + levels)  # |X| quantile -> symmetric two-sided quantile

    if reference == "normal":
        ref_q = norm.ppf(half)
        label = "normal"
    elif reference == "laplace":
        ref_q = laplace.ppf(half, scale=1.0 / math.sqrt(2.0))
        label = "laplace"
    elif isinstance(reference, tuple) and reference[0] == "student":
        nu = float(reference[1])
        if nu <= 1:
            raise ValueError(f"student reference needs nu > 1, got {nu}")
        if nu > 2:
            scale = math.sqrt((nu - 2.0) / nu)
        else:
            z2 = z * z
            med2 = float(np.median(a)) ** 2
            scale = math.sqrt(_student_ml_scale(z2, nu, med2 if med2 > 0 else 1.0))
        ref_q = student_t.ppf(half, nu) * scale
        label = f"student({nu:g})"
    else:
        raise ValueError(f"unknown reference: {reference!r}")

    return QqPoints(
        prob_levels=levels, data_q=data_q, ref_q=np.asarray(ref_q), reference=label
    )
