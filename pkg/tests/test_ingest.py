import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skewbvar.ingest import (IngestError, interpolate_quarterly, load_csv, overlay, read_dataset, run_recipe,
                             splice, transform, write_csv)


def _q(start, values, name="x"):
    return pd.Series(values, index=pd.period_range(start, periods=len(values), freq="Q"), name=name, dtype=float)


def test_empty_file_is_an_error(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(IngestError, match="empty"):
        load_csv(p)
    p.write_text("date,x\n")
    with pytest.raises(IngestError):
        load_csv(p)


def test_rows_are_sorted_and_dates_normalized(tmp_path):
    p = tmp_path / "src.csv"
    p.write_text("date,x\n1950Q3,3\n1950-01-01,1\n1950Q2,2\n")
    frame = load_csv(p)
    assert [str(d) for d in frame.index] == ["1950Q1", "1950Q2", "1950Q3"]
    assert frame.x.tolist() == [1.0, 2.0, 3.0]


def test_bad_rows_and_duplicates_are_reported(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("date,x\n1950Q1,1\nnot-a-date,2\n1950Q3,abc\n")
    with pytest.raises(IngestError, match=r"lines \[3, 4\]"):
        load_csv(p)
    p.write_text("date,x\n1950Q1,1\n1950Q1,2\n")
    with pytest.raises(IngestError, match="duplicate"):
        load_csv(p)


def test_write_read_round_trip(tmp_path, nprng):
    frame = pd.DataFrame({"a": nprng.normal(size=20) * 1e3, "b": nprng.normal(size=20) * 1e-4},
                         index=pd.period_range("1960Q1", periods=20, freq="Q"))
    write_csv(frame, tmp_path / "d.csv", {"note": "x"})
    ds = read_dataset(tmp_path / "d.csv")
    assert ds.labels == ("a", "b") and ds.dates[0] == "1960Q1"
    np.testing.assert_allclose(ds.y, frame.to_numpy(), rtol=1e-14, atol=0)
    assert (tmp_path / "d.csv").read_text().startswith("# {")


def test_splice_level_identical_overlap():
    a = _q("1940Q1", [1.0, 2.0, 3.0, 4.0])
    b = _q("1940Q3", [3.0, 4.0, 5.0])
    out = splice(a, b, "level")
    assert out.tolist() == [1.0, 2.0, 3.0, 4.0, 5.0]


def test_splice_ratio_link_doubles_earlier_block():
    a = _q("1940Q1", [25.0, 50.0, 100.0])
    b = _q("1940Q3", [200.0, 210.0])
    out = splice(a, b)
    assert out.tolist() == [50.0, 100.0, 200.0, 210.0]


@given(st.lists(st.floats(0.5, 50), min_size=3, max_size=10), st.floats(0.1, 10))
def test_ratio_link_preserves_growth(values, level):
    a = _q("1930Q1", values)
    b = _q(str(a.index[-1]), [level, level * 1.01])
    out = splice(a, b)
    head = out.iloc[:len(values)]
    np.testing.assert_allclose(np.diff(np.log(head)), np.diff(np.log(values)), atol=1e-12)


def test_splice_gap_is_an_error():
    with pytest.raises(IngestError, match="gap"):
        splice(_q("1940Q1", [1.0, 2.0]), _q("1941Q1", [3.0]))
    # adjacent is fine under Level
    assert len(splice(_q("1940Q1", [1.0, 2.0]), _q("1940Q3", [3.0]), "level")) == 3


def test_interpolation_examples():
    annual = pd.Series([100.0, 104.0], index=pd.period_range("1940", periods=2, freq="Y"))
    q = interpolate_quarterly(annual)
    assert q.loc["1941Q1":"1941Q3"].tolist() == [101.0, 102.0, 103.0]
    assert q.loc["1940Q4"] == 100.0 and q.loc["1941Q4"] == 104.0
    flat = interpolate_quarterly(pd.Series([7.0] * 4, index=pd.period_range("1939", periods=4, freq="Y")))
    assert (flat == 7.0).all()


def test_interpolation_matches_linear_map(nprng):
    vals = nprng.uniform(50, 150, size=6)
    annual = pd.Series(vals, index=pd.period_range("1938", periods=6, freq="Y"))
    q = interpolate_quarterly(annual)
    for i in range(5):
        for j in range(5):
            assert q.iloc[4 * i + j] == pytest.approx(vals[i] + (vals[i + 1] - vals[i]) * j / 4, abs=1e-12)


def test_interpolation_window_endpoints_required():
    annual = pd.Series([1.0, 2.0, 3.0], index=pd.period_range("1940", periods=3, freq="Y"))
    assert len(interpolate_quarterly(annual, (1940, 1941))) == 5
    with pytest.raises(IngestError, match="1943"):
        interpolate_quarterly(annual, (1940, 1943))


def test_transforms():
    s = _q("1950Q1", [100.0, 105.0])
    assert transform(s, "logdiff100").iloc[0] == pytest.approx(100 * math.log(1.05), abs=1e-12)
    assert round(transform(s, "logdiff100").iloc[0], 3) == 4.879
    assert (transform(_q("1950Q1", [3.0] * 5), "logdiff100") == 0).all()
    corp, gov = _q("1950Q1", [5.0, 6.0, 7.5]), _q("1950Q1", [2.0, 2.5, 3.0])
    assert transform(corp, "spread", gov).tolist() == [3.0, 3.5, 4.5]
    assert transform(corp, "difference").tolist() == [1.0, 1.5]
    with pytest.raises(IngestError, match="1950Q2"):
        transform(_q("1950Q1", [1.0, 0.0, 2.0]), "logdiff100")


def test_overlay_replaces_dates():
    out = overlay(_q("1950Q1", [1.0, 2.0, 3.0]), _q("1950Q2", [9.0]))
    assert out.tolist() == [1.0, 9.0, 3.0]


def test_recipe_is_deterministic(tmp_path):
    (tmp_path / "old.csv").write_text("date,gdp\n1938,100\n1939,104\n1940,108\n")
    rows = "\n".join(f"{p},{110 + i},{5 + 0.1 * i},{2 + 0.05 * i}"
                     for i, p in enumerate(pd.period_range("1941Q1", periods=12, freq="Q")))
    (tmp_path / "new.csv").write_text("date,gdp,corp,gov\n" + rows + "\n")
    recipe = {
        "sources": {"old": {"path": "old.csv", "column": "gdp", "freq": "Y"},
                    "new": {"path": "new.csv", "column": "gdp"},
                    "corp": {"path": "new.csv", "column": "corp"},
                    "gov": {"path": "new.csv", "column": "gov"}},
        "steps": [{"name": "oldq", "op": "interpolate", "source": "old"},
                  {"name": "level", "op": "splice", "earlier": "oldq", "later": "new", "method": "level"},
                  {"name": "growth", "op": "transform", "source": "level", "kind": "logdiff100"},
                  {"name": "spread", "op": "transform", "source": "corp", "kind": "spread", "other": "gov"}],
        "output": {"columns": ["growth", "spread"], "start": "1941Q2", "path": "out.csv"},
    }
    (tmp_path / "recipe.json").write_text(json.dumps(recipe))
    ds, frame = run_recipe(tmp_path / "recipe.json")
    first = (tmp_path / "out.csv").read_bytes()
    run_recipe(tmp_path / "recipe.json")
    assert (tmp_path / "out.csv").read_bytes() == first
    assert ds.dates[0] == "1941Q2" and ds.T == 11
    assert ds.y[0, 0] == pytest.approx(100 * math.log(111 / 110))
    with pytest.raises(IngestError, match="unknown recipe op"):
        run_recipe({"sources": {}, "steps": [{"name": "a", "op": "fetch"}]})
