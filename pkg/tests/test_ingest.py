import math

import numpy as np
import pytest

from growthlab.errors import DataError
from growthlab.ingest import INGEST_HEADER, ingest_forecast_panel

HEADER = ",".join(INGEST_HEADER)


def write(tmp_path, body, name="panel.csv"):
    path = tmp_path / name
    path.write_text(body)
    return path


def test_definition_arithmetic(tmp_path):
    # R_t=100, R_{t+1}=110, F_t R_{t+1}=105: g=log1.10, F g=log1.05
    body = (
        f"{HEADER}\n"
        "acme,2000,100,105,103,98\n"
        "acme,2001,110,120,117,109\n"
    )
    panel, report = ingest_forecast_panel(write(tmp_path, body))
    assert report.rows_in == 2
    assert report.rows_kept == 1
    assert report.rows_dropped_incomplete == 1
    rec = panel.records[0]
    assert rec.firm == "acme"
    assert rec.t == 2000
    assert rec.f1 == pytest.approx(math.log(105 / 100))
    assert rec.f2_prior == pytest.approx(math.log(103 / 98))
    assert rec.error == pytest.approx(math.log(110 / 105))
    assert rec.revision == pytest.approx(math.log(105 / 100) - math.log(103 / 98))
    assert panel.source == "ingested"


def test_algebraic_zero_revision(tmp_path):
    # f1 = f2_level * (R_t / f2_base) makes the revision vanish
    r_t, f2_level, f2_base = 100.0, 104.0, 96.0
    f1 = f2_level * (r_t / f2_base)
    body = (
        f"{HEADER}\n"
        f"a,2000,{r_t},{f1},{f2_level},{f2_base}\n"
        "a,2001,111,120,118,107\n"
    )
    panel, _ = ingest_forecast_panel(write(tmp_path, body))
    assert panel.records[0].revision == pytest.approx(0.0, abs=1e-15)


def test_nonpositive_levels_rejected(tmp_path):
    body = (
        f"{HEADER}\n"
        "a,2000,100,105,103,98\n"
        "a,2001,110,120,117,109\n"
        "a,2002,-5,120,117,109\n"
        "b,2000,50,52,51,49\n"
        "b,2001,55,58,56,53\n"
        "b,2002,60,61,60,58\n"
        "b,2003,62,64,63,60\n"
        "b,2004,65,66,64,62\n"
        "b,2005,67,70,68,64\n"
        "b,2006,70,72,71,69\n"
    )
    panel, report = ingest_forecast_panel(write(tmp_path, body))
    assert report.rows_dropped_malformed == 1
    assert any("sales_actual" in d for d in report.diagnostics)
    assert report.rows_in == report.rows_kept + report.rows_dropped


def test_too_many_malformed_aborts(tmp_path):
    rows = [f"f{i},2000,bad,1,1,1" for i in range(5)]
    good = ["g,2000,100,105,103,98", "g,2001,105,110,108,103"]
    body = f"{HEADER}\n" + "\n".join(rows + good) + "\n"
    with pytest.raises(DataError, match="malformed"):
        ingest_forecast_panel(write(tmp_path, body))


def test_header_and_duplicates(tmp_path):
    with pytest.raises(DataError, match="bad header"):
        ingest_forecast_panel(write(tmp_path, "firm,year,x\n1,2,3\n"))
    filler = [f"b,{2000 + i},{100 + i},{105 + i},{103 + i},{98 + i}" for i in range(10)]
    body = (
        f"{HEADER}\n"
        "a,2000,100,105,103,98\n"
        "a,2000,100,105,103,98\n"
        "a,2001,110,120,117,109\n" + "\n".join(filler) + "\n"
    )
    panel, report = ingest_forecast_panel(write(tmp_path, body))
    assert report.rows_dropped_malformed == 1  # the duplicate year
    assert report.rows_kept == 1 + 9


def test_missing_file_and_empty(tmp_path):
    with pytest.raises(DataError, match="not found"):
        ingest_forecast_panel(tmp_path / "nope.csv")
    with pytest.raises(DataError):
        ingest_forecast_panel(write(tmp_path, f"{HEADER}\n"))


def test_ingest_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    lines = [HEADER]
    for firm in ("a", "b", "c"):
        level = 100.0
        for year in range(2000, 2010):
            f1 = level * math.exp(rng.normal(0.02, 0.05))
            f2 = level * math.exp(rng.normal(0.04, 0.08))
            f2b = level * math.exp(rng.normal(0.0, 0.03))
            lines.append(f"{firm},{year},{level:.6f},{f1:.6f},{f2:.6f},{f2b:.6f}")
            level *= math.exp(rng.normal(0.02, 0.1))
    path = write(tmp_path, "\n".join(lines) + "\n")
    p1, r1 = ingest_forecast_panel(path)
    p2, r2 = ingest_forecast_panel(path)
    assert p1.records == p2.records
    assert r1.rows_kept == r2.rows_kept == 27  # 9 usable years per firm
