"""Figure rendering for the report pipeline.

Reads the delimited artifacts a run produced and renders one PNG per
diagnostic next to them (``<output>/figures/``).  The CSVs stay the
canonical artifacts; figures are a convenience view of the same numbers.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

log = logging.getLogger(__name__)

CURVE_TITLES = {
    "growth_on_lagged_growth": ("lagged growth", "growth"),
    "error_on_revision": ("revision", "forecast error"),
    "error_on_lagged_error": ("lagged error", "forecast error"),
    "returns_on_lagged_returns": ("lagged return", "return (demeaned)"),
}

_SAVE_KWARGS = {"dpi": 130, "metadata": {"Software": None}}


def _read_csv(path: Path):
    """Rows of a curve/table artifact, skipping the leading comment line."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.DictReader(fh)
        return list(reader)


def _render_curve(path: Path, out: Path, xlabel: str, ylabel: str):
    rows = _read_csv(path)
    bin_x = np.array([float(r["bin_x"]) for r in rows])
    bin_y = np.array([float(r["bin_y"]) for r in rows])
    loess_y = np.array([float(r["loess_y"]) for r in rows])
    ci_lo = np.array([float(r["ci_lo"]) for r in rows])
    ci_hi = np.array([float(r["ci_hi"]) for r in rows])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.fill_between(bin_x, ci_lo, ci_hi, color="0.8", label="95% bootstrap band")
    ax.plot(bin_x, loess_y, color="tab:blue", lw=1.6, label="local linear fit")
    ax.plot(bin_x, bin_y, "k.", ms=4, label="bin means")
    ax.axhline(0.0, color="0.5", lw=0.6)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out, **_SAVE_KWARGS)
    plt.close(fig)


def _render_qq(path: Path, out: Path):
    rows = _read_csv(path)
    by_ref: dict[str, list] = {}
    for r in rows:
        by_ref.setdefault(r["reference"], []).append(
            (float(r["ref_q"]), float(r["data_q"]))
        )
    fig, ax = plt.subplots(figsize=(6, 6))
    lims = [np.inf, -np.inf]
    for ref, pts in sorted(by_ref.items()):
        q = np.array(pts)
        ax.plot(q[:, 0], q[:, 1], lw=1.4, label=ref)
        lims[0] = min(lims[0], q[:, 0].min())
        lims[1] = max(lims[1], np.percentile(q[:, 0], 99))
    span = np.linspace(lims[0], lims[1], 2)
    ax.plot(span, span, "k--", lw=0.8, label="45 degrees")
    ax.set_xlabel("reference quantile")
    ax.set_ylabel("data quantile")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(out, **_SAVE_KWARGS)
    plt.close(fig)


def _render_surface(path: Path, out: Path):
    rows = _read_csv(path)
    a = sorted({float(r["a"]) for r in rows})
    b = sorted({float(r["b"]) for r in rows})
    grid = np.full((len(a), len(b)), np.nan)
    ia = {v: i for i, v in enumerate(a)}
    ib = {v: i for i, v in enumerate(b)}
    for r in rows:
        grid[ia[float(r["a"])], ib[float(r["b"])]] = float(r["sharpe"])
    fig, ax = plt.subplots(figsize=(6.5, 5))
    im = ax.pcolormesh(b, a, grid, shading="nearest", cmap="viridis")
    fig.colorbar(im, ax=ax, label="annualized Sharpe")
    i, j = np.unravel_index(np.nanargmax(grid), grid.shape)
    ax.plot(b[j], a[i], "r*", ms=12)
    ax.set_xlabel("upper inflection b")
    ax.set_ylabel("lower inflection a")
    fig.tight_layout()
    fig.savefig(out, **_SAVE_KWARGS)
    plt.close(fig)


def _render_weights(path: Path, out: Path):
    rows = _read_csv(path)
    s = np.array([float(r["s"]) for r in rows])
    w = np.array([float(r["w"]) for r in rows])
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(s, w, lw=1.6)
    ax.axhline(0.0, color="0.5", lw=0.6)
    ax.set_xlabel("momentum rank signal s")
    ax.set_ylabel("portfolio weight w(s)")
    fig.tight_layout()
    fig.savefig(out, **_SAVE_KWARGS)
    plt.close(fig)


def render_figures(out_dir) -> list[Path]:
    """Render PNGs for every renderable artifact present in ``out_dir``."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    rendered = []
    for name, (xlabel, ylabel) in CURVE_TITLES.items():
        src = out_dir / f"{name}.csv"
        if src.exists():
            dst = fig_dir / f"{name}.png"
            _render_curve(src, dst, xlabel, ylabel)
            rendered.append(dst)
    pairs = [
        ("qq_tails.csv", "qq_tails.png", _render_qq),
        ("sharpe_surface.csv", "sharpe_surface.png", _render_surface),
        ("weight_schedule.csv", "weight_schedule.png", _render_weights),
    ]
    for src_name, dst_name, renderer in pairs:
        src = out_dir / src_name
        if src.exists():
            dst = fig_dir / dst_name
            renderer(src, dst)
            rendered.append(dst)
    log.info("rendered %d figures into %s", len(rendered), fig_dir)
    return rendered
