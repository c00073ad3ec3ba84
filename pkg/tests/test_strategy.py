import numpy as np
import pytest

from growthlab.errors import InvalidParameterError
from growthlab.strategy import (
    _monthly_portfolio_returns,
    backtest,
    build_signal_panel,
    inflection_grids,
    momentum_signal,
    optimize_inflections,
    sharpe_ratio,
    weight_schedule,
)


def panel_from_monthly(rows):
    return np.asarray(rows, dtype=float)


def test_momentum_signal_rank_values():
    # three stocks with constant monthly returns 1%, 2%, 3%
    rets = np.tile([0.01, 0.02, 0.03], (14, 1))
    s, past = momentum_signal(rets, 13)
    assert np.allclose(s, [0.0, 0.5, 1.0])
    assert np.allclose(past, [0.11, 0.22, 0.33])


def test_momentum_signal_window_excludes_last_month():
    rets = np.zeros((14, 2))
    rets[12, 0] = 99.0  # month t-1 for t=13: must not enter the signal
    s, past = momentum_signal(rets, 13)
    assert past[0] == 0.0
    rets[5, 0] = 1.0  # inside t-12..t-2 window
    _, past = momentum_signal(rets, 13)
    assert past[0] == 1.0


def test_momentum_signal_monotone_transform_invariance():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(20, 6))
    s1, _ = momentum_signal(base, 15)
    s2, _ = momentum_signal(3.0 * base, 15)  # monotone in the cumulative sum
    assert np.allclose(s1, s2)


def test_momentum_signal_ties_average():
    rets = np.tile([0.01, 0.01, 0.03], (14, 1))
    s, _ = momentum_signal(rets, 13)
    # tied bottom two share ranks 1 and 2 -> average 1.5 -> (1.5-1)/2 = 0.25
    assert np.allclose(s, [0.25, 0.25, 1.0])


def test_momentum_signal_exclusions():
    rets = np.zeros((15, 3))
    rets[2, 1] = np.nan
    s, _ = momentum_signal(rets, 13)  # window rows 1..11 include the NaN
    assert np.isnan(s[1])
    assert np.isfinite(s[0]) and np.isfinite(s[2])
    with pytest.raises(ValueError):
        momentum_signal(rets, 11)


def test_weight_schedule_vertices_and_continuity():
    a, b = 0.2, 0.7
    assert weight_schedule(0.0, a, b) == pytest.approx(0.5)
    assert weight_schedule(a, a, b) == pytest.approx(-0.5)
    assert weight_schedule(b, a, b) == pytest.approx(0.5)
    assert weight_schedule(1.0, a, b) == pytest.approx(-0.5)
    eps = 1e-9
    for kink in (a, b):
        left = weight_schedule(kink - eps, a, b)
        right = weight_schedule(kink + eps, a, b)
        assert abs(left - right) < 1e-6


def test_weight_schedule_pure_momentum_limit():
    s = np.linspace(0.05, 0.95, 19)
    w = weight_schedule(s, 0.001, 0.999)
    assert np.max(np.abs(w - (s - 0.5))) < 5e-3


def test_weight_schedule_legacy_middle_is_offset():
    a, b = 0.2, 0.7
    s = 0.5
    continuous = weight_schedule(s, a, b)
    offset = weight_schedule(s, a, b, continuous=False)
    assert offset == pytest.approx(continuous - 1.0)


def test_weight_schedule_validation():
    with pytest.raises(InvalidParameterError):
        weight_schedule(0.5, 0.7, 0.2)
    with pytest.raises(InvalidParameterError):
        weight_schedule(1.5, 0.2, 0.7)


def test_backtest_identical_returns_is_flat():
    rets = np.full((40, 8), 0.01)
    sig = build_signal_panel(rets)
    rep = backtest(sig, rets, 0.2, 0.8)
    assert np.allclose(rep.monthly_returns, 0.0)
    assert rep.sharpe == 0.0


def test_backtest_two_month_hand_oracle():
    # 3 stocks, signals fixed by constructed histories; check the arithmetic
    rets = np.tile([0.01, 0.02, 0.03], (15, 1))
    rets[13] = [0.05, -0.01, 0.02]
    rets[14] = [0.00, 0.04, -0.03]
    sig = build_signal_panel(rets)
    a, b = 0.25, 0.75
    # months 13, 14 trade on s = (0, 0.5, 1): w raw = (0.5, 0.0, -0.5)
    # demeaned unchanged, gross = 1 -> weights (0.5, 0, -0.5)
    expect_13 = 0.5 * 0.05 + 0.0 * (-0.01) - 0.5 * 0.02
    port, months = _monthly_portfolio_returns(sig.s, rets, a, b)
    assert 13 in months
    got_13 = port[list(months).index(13)]
    assert got_13 == pytest.approx(expect_13, abs=1e-12)
    # month 14 signal still ranks by window sums (rows 2..12): same order
    expect_14 = 0.5 * 0.00 + 0.0 * 0.04 - 0.5 * (-0.03)
    got_14 = port[list(months).index(14)]
    assert got_14 == pytest.approx(expect_14, abs=1e-12)


def test_weights_self_financing_unit_gross():
    rng = np.random.default_rng(1)
    rets = rng.normal(0.0, 0.05, size=(30, 12))
    sig = build_signal_panel(rets)
    a, b = 0.13, 0.86
    s = sig.s[20]
    w = weight_schedule(s, a, b)
    w = w - np.mean(w)
    w = w / np.sum(np.abs(w))
    assert abs(np.sum(w)) < 1e-12
    assert np.sum(np.abs(w)) == pytest.approx(1.0)


def test_backtest_persistent_ranks_pure_momentum_positive():
    # constant per-stock returns: ranks never change, momentum collects the spread
    mu = np.linspace(-0.02, 0.03, 10)
    rets = np.tile(mu, (48, 1))
    sig = build_signal_panel(rets)
    rep = backtest(sig, rets, 0.01, 0.99)
    assert np.mean(rep.monthly_returns) > 0.0


def test_backtest_skips_thin_months():
    rets = np.full((20, 3), np.nan)
    rets[:, 0] = 0.01  # only one stock has data
    sig = build_signal_panel(rets)
    rep = backtest(sig, rets, 0.2, 0.8)
    assert len(rep.monthly_returns) == 0
    assert rep.sharpe == 0.0


def test_optimize_inflections_dominates_corner_and_tie_break():
    rng = np.random.default_rng(2)
    rets = rng.normal(0.0, 0.05, size=(40, 15))
    sig = build_signal_panel(rets)
    rep = optimize_inflections(sig, rets, grid_step=0.05)
    corner = backtest(sig, rets, rep.a_grid[0], rep.b_grid[-1])
    assert rep.sharpe >= corner.sharpe
    s_at = rep.sharpe_surface[
        list(rep.a_grid).index(rep.a), list(rep.b_grid).index(rep.b)
    ]
    assert s_at == rep.sharpe

    flat = np.full((40, 6), 0.01)  # all cells tie at sharpe 0
    sig_flat = build_signal_panel(flat)
    rep_flat = optimize_inflections(sig_flat, flat, grid_step=0.05)
    assert rep_flat.a == pytest.approx(rep_flat.a_grid[0])
    assert rep_flat.b == pytest.approx(rep_flat.b_grid[-1])


def test_surface_invariant_to_stock_relabeling():
    rng = np.random.default_rng(3)
    rets = rng.normal(0.0, 0.05, size=(36, 9))
    perm = rng.permutation(9)
    a = optimize_inflections(build_signal_panel(rets), rets, grid_step=0.1)
    b = optimize_inflections(build_signal_panel(rets[:, perm]), rets[:, perm], grid_step=0.1)
    assert np.allclose(a.sharpe_surface, b.sharpe_surface, atol=1e-12)


def test_inflection_grids_default_span():
    a_grid, b_grid = inflection_grids(0.01)
    assert a_grid[0] == pytest.approx(0.01)
    assert a_grid[-1] == pytest.approx(0.49)
    assert b_grid[0] == pytest.approx(0.51)
    assert b_grid[-1] == pytest.approx(0.99)


def test_sharpe_ratio_annualization():
    rets = np.array([0.01, 0.02, 0.0, 0.015, 0.005, 0.01])
    expect = np.sqrt(12) * rets.mean() / rets.std(ddof=1)
    assert sharpe_ratio(rets) == pytest.approx(expect)
    assert sharpe_ratio(np.array([0.01])) == 0.0
