import math

import numpy as np
import pytest

from growthlab.dgp import GrowthPath, GrowthPanel, ModelParams, sample_student_t
from growthlab.errors import (
    InsufficientDataError,
    InsufficientTailDataError,
)
from growthlab.forecaster import ForecastPanel, ForecastRecord
from growthlab.nonparam import (
    _FixedBandwidthSmoother,
    _loess_fixed,
    binscatter,
    bootstrap_band,
    build_binned_curve,
    fit_student_nu,
    loess_curve,
    mad_normalize,
    percentile_bandwidth,
    qq_tail,
)


def growth_panel_from(arrays):
    firms = {}
    for i, g in enumerate(arrays):
        g = np.asarray(g, dtype=float)
        firms[i] = GrowthPath(g=g, latent=g.copy(), eps=np.zeros_like(g), seed=i)
    return GrowthPanel(firms=firms, params=ModelParams())


def test_binscatter_linear_exact():
    x = np.linspace(-3, 5, 200)
    bx, by = binscatter(x, 2 * x, 100)
    assert np.max(np.abs(by - 2 * bx)) < 1e-12
    assert len(bx) == 100


def test_binscatter_equal_counts_and_remainder():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1007)
    order = np.argsort(x, kind="stable")
    bx, _ = binscatter(x, x, 100)
    # remainder of 7 spread over the lowest bins: sizes 11 x7 then 10 x93
    sizes = [11] * 7 + [10] * 93
    start = 0
    for k, size in enumerate(sizes):
        seg = x[order[start : start + size]]
        assert bx[k] == pytest.approx(seg.mean(), abs=1e-12)
        start += size


def test_binscatter_hand_oracle():
    x = np.array([5.0, 1.0, 3.0, 2.0, 4.0, 9.0, 7.0, 6.0, 8.0, 0.0])
    y = x**2 + 1.0
    bx, by = binscatter(x, y, 5)
    # sorted x pairs: (0,1), (2,3), (4,5), (6,7), (8,9)
    assert np.allclose(bx, [0.5, 2.5, 4.5, 6.5, 8.5])
    assert np.allclose(by, [(1 + 2) / 2, (5 + 10) / 2, (17 + 26) / 2, (37 + 50) / 2, (65 + 82) / 2])


def test_binscatter_fewer_points_than_bins_falls_back():
    x = np.arange(10.0)
    bx, by = binscatter(x, x, 100)
    assert len(bx) == 10
    assert np.allclose(bx, x)


def test_loess_constant_and_affine():
    rng = np.random.default_rng(1)
    x = rng.normal(size=2000)
    evals = np.array([-1.0, 0.0, 1.5])
    assert np.allclose(loess_curve(x, np.full(2000, 3.14), evals), 3.14)
    fitted = loess_curve(x, 2.0 - 0.7 * x, evals)
    assert np.max(np.abs(fitted - (2.0 - 0.7 * evals))) < 1e-8


def test_loess_matches_wls_oracle():
    x = np.linspace(-2, 2, 200)
    y = x**2
    b = percentile_bandwidth(x)
    x0 = 0.5
    w = np.exp(-((x - x0) ** 2) / (2 * b * b))
    X = np.column_stack([np.ones_like(x), x - x0])
    coef = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * y))
    mine = loess_curve(x, y, np.array([x0]), bandwidth=b)
    assert abs(mine[0] - coef[0]) < 1e-10


def test_loess_equivariance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=1500)
    y = np.sin(x) + 0.1 * rng.normal(size=1500)
    evals = np.quantile(x, [0.2, 0.5, 0.8])
    base = loess_curve(x, y, evals)
    shifted = loess_curve(x, y + 5.0, evals)
    assert np.allclose(shifted, base + 5.0, atol=1e-10)
    scaled = loess_curve(x, 3.0 * y - 1.0, evals)
    assert np.allclose(scaled, 3.0 * base - 1.0, atol=1e-9)


def test_loess_requires_observations():
    with pytest.raises(InsufficientDataError):
        loess_curve(np.arange(10.0), np.arange(10.0), np.array([1.0]))


def test_bandwidth_formula_and_clip():
    rng = np.random.default_rng(3)
    x = rng.normal(size=50_000)
    bx, _ = binscatter(x, x, 100)
    expect = 0.5 * ((bx[1] - bx[0]) + (bx[-1] - bx[-2]))
    assert percentile_bandwidth(x) == pytest.approx(expect)
    # clipping tames a fat tail: bandwidth shrinks a lot for t(1.6) data
    fat = sample_student_t(1.6, 1.0, np.random.default_rng(4), 50_000)
    assert percentile_bandwidth(fat, clip_quantile=0.01) < 0.2 * percentile_bandwidth(fat)


def test_bootstrap_band_constant_and_deterministic():
    rng = np.random.default_rng(5)
    x = rng.normal(size=800)
    evals = np.array([-0.5, 0.0, 0.5])
    lo, hi = bootstrap_band(x, np.full(800, 2.5), evals, n_boot=40, seed=6)
    assert np.allclose(lo, 2.5) and np.allclose(hi, 2.5)
    l1, h1 = bootstrap_band(x, x, evals, n_boot=40, seed=7)
    l2, h2 = bootstrap_band(x, x, evals, n_boot=40, seed=7)
    assert np.array_equal(l1, l2) and np.array_equal(h1, h2)


def test_bootstrap_band_width_scales_as_root_n():
    # quadrupling the sample should roughly halve the band width
    def width(n, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, n)
        y = 1.0 + 2.0 * x + rng.normal(size=n)
        evals = np.array([-0.3, 0.0, 0.3])
        lo, hi = bootstrap_band(x, y, evals, n_boot=300, seed=seed, bandwidth=0.25)
        return np.mean(hi - lo)

    ratio = width(8000, 11) / width(2000, 12)
    assert 0.4 < ratio < 0.65


def test_bootstrap_fast_path_matches_generic():
    rng = np.random.default_rng(8)
    x = np.sort(rng.normal(size=3000))
    y = 0.5 * x + rng.normal(size=3000)
    evals = np.quantile(x, [0.1, 0.5, 0.9])
    counts = np.bincount(rng.integers(0, 3000, 3000), minlength=3000).astype(float)
    f_ref, e_ref = _loess_fixed(x, y, evals, 0.4, counts)
    sm = _FixedBandwidthSmoother(x, y, evals, 0.4)
    f_fast, e_fast = sm.smooth(counts)
    assert np.max(np.abs(f_ref - f_fast)) < 1e-10
    assert np.max(np.abs(e_ref - e_fast) / e_ref) < 1e-10


def test_mad_normalize_growth_hand_cases():
    panel = growth_panel_from([[0.0, 2.0, 0.0, 2.0, 0.0, 2.0]])
    out, table = mad_normalize(panel, demean=True)
    assert table.rows[0].mean_g == pytest.approx(1.0)
    assert table.rows[0].mad == pytest.approx(1.0)
    assert np.allclose(out[0], [-1.0, 1.0, -1.0, 1.0, -1.0, 1.0])


def test_mad_normalize_scale_equivariance():
    rng = np.random.default_rng(9)
    g = rng.normal(size=50)
    base, _ = mad_normalize(growth_panel_from([g]), demean=True)
    scaled, _ = mad_normalize(growth_panel_from([10.0 * g]), demean=True)
    assert np.allclose(base[0], scaled[0], atol=1e-12)


def test_mad_normalize_six_point_oracle():
    g = np.array([1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    mean = g.mean()  # 10.5
    mad = np.mean(np.abs(g - mean))  # hand: (9.5+8.5+6.5+2.5+5.5+21.5)/6 = 9.0
    assert mad == pytest.approx(9.0)
    out, table = mad_normalize(growth_panel_from([g]), demean=False)
    assert table.rows[0].mad == pytest.approx(9.0)
    assert np.allclose(out[0], g / 9.0)
    demeaned, _ = mad_normalize(growth_panel_from([g]), demean=True)
    assert np.mean(np.abs(demeaned[0])) == pytest.approx(1.0)  # unit MAD after scaling


def test_mad_normalize_exclusions():
    panel = growth_panel_from([[1.0, 1.0, 1.0, 1.0, 1.0, 1.0], [0.0, 1.0], np.random.default_rng(0).normal(size=20)])
    out, table = mad_normalize(panel)
    assert 0 in table.excluded  # zero MAD
    assert 1 in table.excluded  # too short
    assert set(out) == {2}


def test_mad_normalize_forecast_panel():
    recs = []
    g_vals = [0.5, -0.5, 1.0, -1.0, 0.25, -0.25]
    for t, g in enumerate(g_vals):
        f1 = 0.1
        recs.append(ForecastRecord(firm=7, t=t, f1=f1, f2_prior=0.05, error=g - f1, revision=0.05))
    panel = ForecastPanel(records=recs)
    normalized, table = mad_normalize(panel)
    mad = table.rows[7].mad
    realized = np.array(g_vals)
    assert mad == pytest.approx(np.mean(np.abs(realized - realized.mean())))
    assert normalized.records[0].error == pytest.approx((g_vals[0] - 0.1) / mad)
    assert normalized.records[0].revision == pytest.approx(0.05 / mad)


def test_qq_normal_self_consistency():
    rng = np.random.default_rng(10)
    z = rng.standard_normal(1_000_000)
    pts = qq_tail(z, "normal")
    assert np.max(np.abs(pts.data_q - pts.ref_q)) < 0.05
    assert np.all(np.diff(pts.data_q) >= 0)
    assert pts.prob_levels[0] == pytest.approx(0.90)


def test_qq_student_data_rejects_normal():
    rng = np.random.default_rng(11)
    x = sample_student_t(3.0, 1.0, rng, 200_000)
    pts = qq_tail(x, "normal")
    gap = pts.data_q - pts.ref_q
    assert np.all(gap[-50:] > 0)
    # gap widens monotonically toward the extreme tail (decile means)
    deciles = [seg.mean() for seg in np.array_split(gap, 10)]
    assert all(a < b for a, b in zip(deciles[-4:], deciles[-3:]))
    assert gap[-1] > 0.5


def test_qq_errors():
    rng = np.random.default_rng(12)
    with pytest.raises(InsufficientDataError):
        qq_tail(rng.normal(size=100), "normal")
    with pytest.raises(InsufficientTailDataError):
        qq_tail(rng.normal(size=600), "normal", tail_level=0.95)
    with pytest.raises(ValueError):
        qq_tail(rng.normal(size=600), "cauchy")


def test_qq_laplace_reference_unit_variance():
    pts = qq_tail(np.random.default_rng(13).standard_normal(10_000), "laplace")
    # Laplace(b=1/sqrt(2)) has unit variance; its |X| quantile at q is
    # -b*log(1-q); check one grid point against the closed form
    q = pts.prob_levels[0]
    expect = -(1.0 / math.sqrt(2.0)) * math.log(1.0 - q)
    assert pts.ref_q[0] == pytest.approx(expect, rel=1e-12)


def test_fit_student_nu_recovers_and_flags():
    rng = np.random.default_rng(14)
    x = sample_student_t(4.0, 1.0, rng, 100_000)
    fit = fit_student_nu(x)
    assert 3.5 < fit.nu < 4.5
    assert not fit.effectively_gaussian
    gauss = fit_student_nu(rng.standard_normal(50_000))
    assert gauss.effectively_gaussian


def test_fit_student_nu_scale_equivariance():
    rng = np.random.default_rng(15)
    x = sample_student_t(3.0, 1.0, rng, 20_000)
    f1 = fit_student_nu(x)
    f2 = fit_student_nu(2.0 * x)
    assert f2.scale == pytest.approx(2.0 * f1.scale, rel=1e-3)
    assert f2.nu == pytest.approx(f1.nu, rel=0.02)


def test_build_binned_curve_structure():
    rng = np.random.default_rng(16)
    x = rng.normal(size=5000)
    y = 0.3 * x + rng.normal(size=5000)
    curve = build_binned_curve(x, y, n_bins=50, n_boot=60, seed=17)
    assert curve.n_bins == 50
    assert np.all(np.diff(curve.bin_x) >= 0)
    assert np.all(curve.ci_lo <= curve.ci_hi)
    assert curve.n_obs == 5000
