"""Experiment orchestration: stages, deterministic artifacts, manifest.

Every stage writes flat CSV artifacts with fixed 17-significant-digit float
formatting and Unix newlines, so a rerun with the same configuration is
byte-identical.  The manifest lists a hash per artifact plus the
configuration hash and seeds.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .dgp import GrowthPanel, simulate_panel
from .errors import GrowthLabError, SmoothingError
from .forecaster import ForecastPanel, cg_regression, panel_forecasts
from .ingest import ingest_forecast_panel
from .nonparam import (
    BinnedCurve,
    build_binned_curve,
    fit_student_nu,
    mad_normalize,
    percentile_bandwidth,
    qq_tail,
)
from .pricing import PricedSeries, simulate_priced_panel
from .strategy import build_signal_panel, optimize_inflections, weight_schedule

log = logging.getLogger(__name__)

# Winsorization level for the smoothing bandwidth used on experiment curves;
# keeps the kernel local when x has power-law tails (see percentile_bandwidth).
BANDWIDTH_CLIP = 0.01

CURVE_HEADER = ["bin_index", "bin_x", "bin_y", "loess_y", "ci_lo", "ci_hi"]


class StageError(GrowthLabError):
    """A pipeline stage failed; remembers which one."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ArtifactSet:
    """Paths and row counts of everything one run emitted."""

    out_dir: Path
    files: dict[str, Path] = field(default_factory=dict)
    row_counts: dict[str, int] = field(default_factory=dict)
    manifest_path: Path | None = None
    manifest_hash: str = ""
    notes: dict[str, str] = field(default_factory=dict)


def fmt_float(x: float) -> str:
    """Fixed 17-significant-digit decimal form (round-trip exact)."""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def _fmt_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header, rows, comment: str | None = None) -> int:
    """Write rows with deterministic formatting; returns the row count."""
    n = 0
    with open(path, "w", newline="\n") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(v) for v in row) + "\n")
            n += 1
    return n


def write_curve_csv(path: Path, curve: BinnedCurve) -> int:
    comment = (
        f"n_bins={curve.n_bins} bandwidth={fmt_float(curve.bandwidth)} "
        f"n_obs={curve.n_obs}"
    )
    rows = (
        (i, curve.bin_x[i], curve.bin_y[i], curve.loess_y[i], curve.ci_lo[i], curve.ci_hi[i])
        for i in range(curve.n_bins)
    )
    return write_csv(path, CURVE_HEADER, rows, comment=comment)


def _emit(artifacts: ArtifactSet, name: str, filename: str, n_rows: int):
    artifacts.files[name] = artifacts.out_dir / filename
    artifacts.row_counts[name] = n_rows


def experiment_curve(x, y, cfg: ExperimentConfig, seed: int) -> BinnedCurve:
    """Binned curve with the tail-robust bandwidth used for all artifacts.

    If the smoother cannot reach an isolated tail eval point even after its
    own widening retries, the whole curve is retried at double the bandwidth
    (the value actually used is recorded in the artifact header).
    """
    base = percentile_bandwidth(x, clip_quantile=BANDWIDTH_CLIP)
    # Last resort: the unclipped bandwidth spans the outermost bin means, so
    # the smoother can always reach isolated tail eval points with it.
    ladder = [base * 2.0**k for k in range(7)]
    ladder.append(max(percentile_bandwidth(x), ladder[-1]))
    last_exc = None
    for bandwidth in ladder:
        try:
            return build_binned_curve(
                x,
                y,
                n_bins=cfg.n_bins,
                n_boot=cfg.n_boot,
                seed=seed,
                bandwidth=bandwidth,
            )
        except SmoothingError as exc:
            last_exc = exc
            log.warning("smoother failed (%s); widening the curve bandwidth", exc)
    raise last_exc


def pooled_growth(panel: GrowthPanel, normalize: bool):
    """Pooled (g[t], g[t+1]) pairs, MAD-normalized per firm when asked."""
    if normalize:
        series, _ = mad_normalize(panel, demean=True)
    else:
        series = {firm: panel.firms[firm].g for firm in sorted(panel.firms)}
    xs = [np.asarray(g)[:-1] for g in series.values()]
    ys = [np.asarray(g)[1:] for g in series.values()]
    return np.concatenate(xs), np.concatenate(ys), series


def error_pairs(fp: ForecastPanel):
    """(previous error, current error) for consecutive records per firm."""
    by_key = {(r.firm, r.t): r for r in fp.records}
    prev, cur = [], []
    for r in fp.records:
        p = by_key.get((r.firm, r.t - 1))
        if p is not None:
            prev.append(p.error)
            cur.append(r.error)
    return np.asarray(prev), np.asarray(cur)


def stage_simulate(cfg: ExperimentConfig, artifacts: ArtifactSet) -> GrowthPanel:
    panel = simulate_panel(cfg.model_params(), cfg.n_firms, cfg.T, cfg.master_seed)

    def rows():
        for firm in sorted(panel.firms):
            path = panel.firms[firm]
            for t in range(len(path.g)):
                yield (firm, t, path.g[t], path.latent[t], path.eps[t])

    n = write_csv(
        artifacts.out_dir / "growth_panel.csv",
        ["firm", "t", "g", "latent", "eps"],
        rows(),
    )
    _emit(artifacts, "growth_panel", "growth_panel.csv", n)
    return panel


def forecast_diagnostics(
    fp: ForecastPanel,
    growth_x,
    growth_y,
    qq_data,
    cfg: ExperimentConfig,
    artifacts: ArtifactSet,
):
    """Curves, CG table and QQ tables shared by analyze and ingest stages."""
    out = artifacts.out_dir
    n = write_csv(
        out / "forecast_panel.csv",
        ["firm", "t", "f1", "f2_prior", "error", "revision"],
        ((r.firm, r.t, r.f1, r.f2_prior, r.error, r.revision) for r in fp.records),
    )
    _emit(artifacts, "forecast_panel", "forecast_panel.csv", n)

    def emit_curve(name: str, x, y, seed_offset: int):
        if x is None or len(x) < 30:
            artifacts.notes[f"skipped_{name}"] = "too few observations"
            log.warning("skipping %s: too few observations", name)
            return
        curve = experiment_curve(x, y, cfg, seed=cfg.master_seed + seed_offset)
        n_rows = write_curve_csv(out / f"{name}.csv", curve)
        _emit(artifacts, name, f"{name}.csv", n_rows)

    _, _, _, _, err, rev = fp.arrays()
    emit_curve("error_on_revision", rev, err, 12)
    prev_err, cur_err = error_pairs(fp)
    emit_curve("error_on_lagged_error", prev_err, cur_err, 13)
    emit_curve("growth_on_lagged_growth", growth_x, growth_y, 11)

    cg = cg_regression(fp)
    n = write_csv(
        out / "cg_regression.csv",
        ["alpha", "beta", "se_beta", "n"],
        [(cg.alpha, cg.beta, cg.se_beta, cg.n)],
    )
    _emit(artifacts, "cg_regression", "cg_regression.csv", n)

    if len(qq_data) < 500:
        artifacts.notes["skipped_qq_tails"] = "too few observations"
        log.warning("skipping qq_tails: too few observations")
        return
    student = fit_student_nu(qq_data)
    artifacts.notes["student_nu"] = fmt_float(student.nu)
    artifacts.notes["student_scale"] = fmt_float(student.scale)
    references = ["normal", "laplace", ("student", round(student.nu, 6))]

    def qq_rows():
        for ref in references:
            pts = qq_tail(qq_data, ref, tail_level=cfg.tail_level)
            for i in range(len(pts.prob_levels)):
                yield (pts.prob_levels[i], pts.data_q[i], pts.ref_q[i], pts.reference)

    n = write_csv(
        out / "qq_tails.csv",
        ["prob_level", "data_q", "ref_q", "reference"],
        qq_rows(),
    )
    _emit(artifacts, "qq_tails", "qq_tails.csv", n)


def stage_analyze(cfg: ExperimentConfig, artifacts: ArtifactSet, panel: GrowthPanel):
    fp = panel_forecasts(panel, p=cfg.ar_order, min_window=cfg.min_window)
    if cfg.normalize:
        fp_used, _ = mad_normalize(fp)
    else:
        fp_used = fp
    gx, gy, series = pooled_growth(panel, cfg.normalize)
    qq_data = np.concatenate([np.asarray(g) for g in series.values()])
    forecast_diagnostics(fp_used, gx, gy, qq_data, cfg, artifacts)
    return fp_used


def stage_price(cfg: ExperimentConfig, artifacts: ArtifactSet) -> dict[int, PricedSeries]:
    priced = simulate_priced_panel(
        cfg.model_params(),
        cfg.n_firms,
        cfg.T,
        cfg.master_seed,
        min_window=cfg.min_window,
    )
    if not priced:
        raise GrowthLabError("no firm survived pricing")

    def rows():
        for firm in sorted(priced):
            s = priced[firm]
            for k in range(len(s.prices)):
                yield (
                    firm,
                    k,
                    s.dividends[k],
                    s.prices[k],
                    s.returns[k - 1] if k > 0 else None,
                    s.log_returns[k - 1] if k > 0 else None,
                )

    n = write_csv(
        artifacts.out_dir / "priced_panel.csv",
        ["firm", "t", "dividend", "price", "return", "log_return"],
        rows(),
    )
    _emit(artifacts, "priced_panel", "priced_panel.csv", n)

    x = np.concatenate([priced[f].returns[:-1] for f in sorted(priced)])
    y = np.concatenate([priced[f].returns[1:] for f in sorted(priced)])
    y = y - float(np.mean(y))  # predictability is about deviations from the mean
    curve = experiment_curve(x, y, cfg, seed=cfg.master_seed + 14)
    n = write_curve_csv(artifacts.out_dir / "returns_on_lagged_returns.csv", curve)
    _emit(artifacts, "returns_on_lagged_returns", "returns_on_lagged_returns.csv", n)
    return priced


def stage_backtest(
    cfg: ExperimentConfig, artifacts: ArtifactSet, priced: dict[int, PricedSeries]
):
    rets = np.column_stack([priced[f].log_returns for f in sorted(priced)])
    signal = build_signal_panel(rets)
    report = optimize_inflections(signal, rets, grid_step=cfg.grid_step)

    def surface_rows():
        for i, a in enumerate(report.a_grid):
            for j, b in enumerate(report.b_grid):
                yield (a, b, report.sharpe_surface[i, j])

    n = write_csv(
        artifacts.out_dir / "sharpe_surface.csv", ["a", "b", "sharpe"], surface_rows()
    )
    _emit(artifacts, "sharpe_surface", "sharpe_surface.csv", n)

    s_grid = np.round(np.arange(0.0, 1.0001, 0.01), 10)
    w = weight_schedule(s_grid, report.a, report.b)
    n = write_csv(
        artifacts.out_dir / "weight_schedule.csv",
        ["s", "w"],
        zip(s_grid, w),
        comment=(
            f"optimal a={fmt_float(report.a)} b={fmt_float(report.b)} "
            f"sharpe={fmt_float(report.sharpe)}"
        ),
    )
    _emit(artifacts, "weight_schedule", "weight_schedule.csv", n)
    artifacts.notes["optimal_a"] = fmt_float(report.a)
    artifacts.notes["optimal_b"] = fmt_float(report.b)
    artifacts.notes["optimal_sharpe"] = fmt_float(report.sharpe)
    return report


def stage_ingest(cfg: ExperimentConfig, artifacts: ArtifactSet):
    if not cfg.ingest_csv:
        raise GrowthLabError("ingest.csv not set in config and no --input given")
    fp, report = ingest_forecast_panel(cfg.ingest_csv)
    artifacts.notes["rows_in"] = str(report.rows_in)
    artifacts.notes["rows_kept"] = str(report.rows_kept)
    artifacts.notes["rows_dropped"] = str(report.rows_dropped)
    if cfg.normalize:
        fp, _ = mad_normalize(fp)
    # Realized growth implied by the records backs the growth diagnostics.
    by_firm: dict = {}
    for r in fp.records:
        by_firm.setdefault(r.firm, []).append(r)
    gx, gy, pooled = [], [], []
    for firm in sorted(by_firm):
        recs = sorted(by_firm[firm], key=lambda r: r.t)
        g = np.array([r.f1 + r.error for r in recs])
        pooled.append(g)
        consecutive = np.array(
            [recs[i + 1].t == recs[i].t + 1 for i in range(len(recs) - 1)], dtype=bool
        )
        if len(g) > 1:
            gx.append(g[:-1][consecutive])
            gy.append(g[1:][consecutive])
    gx = np.concatenate(gx) if gx else np.empty(0)
    gy = np.concatenate(gy) if gy else np.empty(0)
    qq_data = np.concatenate(pooled) if pooled else np.empty(0)
    forecast_diagnostics(fp, gx, gy, qq_data, cfg, artifacts)
    return fp


def write_manifest(cfg: ExperimentConfig, artifacts: ArtifactSet) -> None:
    lines = [
        "growthlab-manifest-v1",
        f"config_hash={cfg.config_hash()}",
        f"master_seed={cfg.master_seed}",
    ]
    for name in sorted(artifacts.files):
        digest = hashlib.sha256(artifacts.files[name].read_bytes()).hexdigest()
        lines.append(f"artifact={artifacts.files[name].name} sha256={digest} "
                     f"rows={artifacts.row_counts[name]}")
    for key in sorted(artifacts.notes):
        lines.append(f"note:{key}={artifacts.notes[key]}")
    body = "\n".join(lines) + "\n"
    manifest_hash = hashlib.sha256(body.encode()).hexdigest()
    path = artifacts.out_dir / "manifest.txt"
    with open(path, "w", newline="\n") as fh:
        fh.write(body)
        fh.write(f"manifest_sha256={manifest_hash}\n")
    artifacts.manifest_path = path
    artifacts.manifest_hash = manifest_hash


def _run_stage(name: str, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_experiment(cfg: ExperimentConfig, stages=("simulate", "analyze", "price", "backtest")):
    """Run the requested stages into ``cfg.output_dir`` and write a manifest.

    Reruns with an identical configuration are byte-identical, including the
    manifest and its hash.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = ArtifactSet(out_dir=out_dir)

    panel = None
    priced = None
    for stage in stages:
        if stage == "simulate":
            panel = _run_stage("simulate", stage_simulate, cfg, artifacts)
        elif stage == "analyze":
            if panel is None:
                panel = _run_stage(
                    "simulate",
                    simulate_panel,
                    cfg.model_params(),
                    cfg.n_firms,
                    cfg.T,
                    cfg.master_seed,
                )
            _run_stage("analyze", stage_analyze, cfg, artifacts, panel)
        elif stage == "price":
            priced = _run_stage("price", stage_price, cfg, artifacts)
        elif stage == "backtest":
            if priced is None:
                priced = _run_stage("price", stage_price, cfg, artifacts)
            _run_stage("backtest", stage_backtest, cfg, artifacts, priced)
        elif stage == "ingest":
            _run_stage("ingest", stage_ingest, cfg, artifacts)
        else:
            raise GrowthLabError(f"unknown stage: {stage}")
    write_manifest(cfg, artifacts)
    return artifacts
