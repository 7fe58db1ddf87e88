"""Data preparation: loading, splicing, interpolating and transforming source series.

Series are pandas objects indexed by :class:`pandas.Period` (quarterly or annual).
A recipe (JSON) chains these steps into a reproducible dataset build.
"""

from __future__ import annotations

import enum
import json
from pathlib import Path

import numpy as np
import pandas as pd

from .model import Dataset


class IngestError(ValueError):
    pass


class SpliceMethod(str, enum.Enum):
    LEVEL = "level"
    RATIO_LINK = "ratio_link"


class TransformKind(str, enum.Enum):
    LOGDIFF100 = "logdiff100"
    DIFFERENCE = "difference"
    SPREAD = "spread"
    IDENTITY = "identity"


def _parse_period(text: str, freq: str | None) -> pd.Period:
    text = str(text).strip()
    if freq is None:
        freq = "Y" if text.isdigit() and len(text) == 4 else "Q"
    return pd.Period(text, freq=freq)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def load_csv(path, date_col: str = "date", value_cols=None, freq: str | None = None) -> pd.DataFrame:
    """Read a source file into a date-sorted frame indexed by period.

    Dates such as ``1947Q1``, ``1947-01-01`` or ``1947`` are accepted; ``freq``
    ("Q" or "Y") forces the frequency, otherwise it is inferred per row.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise IngestError(f"{path}: empty file") from None
    if raw.empty:
        raise IngestError(f"{path}: no data rows")
    if date_col not in raw.columns:
        raise IngestError(f"{path}: missing date column {date_col!r}")
    value_cols = list(value_cols) if value_cols else [c for c in raw.columns if c != date_col]
    missing = [c for c in value_cols if c not in raw.columns]
    if missing:
        raise IngestError(f"{path}: missing value columns {missing}")
    bad, periods, values = [], [], []
    for i in range(len(raw)):
        rec = raw.iloc[i]
        try:
            periods.append(_parse_period(rec[date_col], freq))
            values.append([float(rec[c]) for c in value_cols])
        except (ValueError, TypeError):
            bad.append(i + 2)  # header is line 1
    if bad:
        raise IngestError(f"{path}: unparseable rows at lines {bad}")
    frame = pd.DataFrame(values, index=pd.PeriodIndex(periods), columns=value_cols)
    dup = frame.index[frame.index.duplicated()].unique()
    if len(dup):
        raise IngestError(f"{path}: duplicate dates {[str(d) for d in dup]}")
    return frame.sort_index()


def write_csv(frame: pd.DataFrame, path, manifest: dict | None = None) -> None:
    """Write a period-indexed frame; an optional manifest goes on a leading ``#`` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = frame.copy()
    out.index = [str(p) for p in out.index]
    out.index.name = "date"
    text = out.to_csv(float_format="%.15g")
    if manifest is not None:
        text = "# " + json.dumps(manifest, sort_keys=True) + "\n" + text
    path.write_text(text)


def read_dataset(path) -> Dataset:
    """Load a dataset CSV (first column dates, remaining columns variables)."""
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    if frame.shape[1] < 2:
        raise IngestError(f"{path}: expected a date column and at least one variable")
    dates = tuple(str(d) for d in frame.iloc[:, 0])
    return Dataset(frame.iloc[:, 1:].to_numpy(dtype=float), tuple(frame.columns[1:]), dates)


def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    return pd.DataFrame(dataset.y, index=pd.Index(dataset.dates, name="date"), columns=list(dataset.labels))


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------


def splice(earlier: pd.Series, later: pd.Series, method=SpliceMethod.RATIO_LINK) -> pd.Series:
    """Join two sources; the later one is used from its first date onwards.

    ``level`` concatenates as is; ``ratio_link`` rescales the earlier block so its
    value at the last overlapping date equals the later source there.
    """
    method = SpliceMethod(method)
    earlier, later = earlier.dropna().sort_index(), later.dropna().sort_index()
    if earlier.empty or later.empty:
        raise IngestError("cannot splice an empty series")
    start = later.index[0]
    if earlier.index[-1] < start - 1:
        raise IngestError(f"gap between sources: earlier ends {earlier.index[-1]}, later starts {start}")
    head = earlier[earlier.index < start]
    if method is SpliceMethod.RATIO_LINK:
        common = earlier.index.intersection(later.index)
        if len(common) == 0:
            raise IngestError("ratio linking needs at least one overlapping date")
        link = common[-1]
        if earlier[link] == 0:
            raise IngestError(f"earlier source is zero at the link date {link}")
        head = head * (later[link] / earlier[link])
    out = pd.concat([head, later])
    out.name = later.name if later.name is not None else earlier.name
    return out


def interpolate_quarterly(annual: pd.Series, window=None) -> pd.Series:
    """Linear quarterly interpolation of an annual level series.

    Each annual value sits on the fourth quarter of its year; the quarters in
    between lie on the straight line joining consecutive anchors. ``window``
    ``(first_year, last_year)`` restricts the anchors used; both must exist.
    """
    s = annual.dropna().sort_index()
    years = pd.PeriodIndex(s.index).asfreq("Y") if isinstance(s.index, pd.PeriodIndex) else \
        pd.PeriodIndex([pd.Period(str(y), "Y") for y in s.index])
    s = pd.Series(s.to_numpy(dtype=float), index=years)
    if window is not None:
        lo, hi = pd.Period(str(window[0]), "Y"), pd.Period(str(window[1]), "Y")
        for end in (lo, hi):
            if end not in s.index:
                raise IngestError(f"annual value for {end} is missing")
        s = s[(s.index >= lo) & (s.index <= hi)]
    if len(s) < 2:
        raise IngestError("interpolation needs at least two annual values")
    anchors = pd.PeriodIndex([pd.Period(f"{p.year}Q4", "Q") for p in s.index])
    quarters = pd.period_range(anchors[0], anchors[-1], freq="Q")
    x = np.array([q.ordinal for q in quarters], dtype=float)
    xp = np.array([a.ordinal for a in anchors], dtype=float)
    return pd.Series(np.interp(x, xp, s.to_numpy()), index=quarters, name=annual.name)


def overlay(base: pd.Series, patch: pd.Series) -> pd.Series:
    """``base`` with ``patch`` values replacing it on the patch's dates."""
    out = base.copy()
    out = out.reindex(out.index.union(patch.index))
    out.loc[patch.index] = patch.to_numpy()
    return out


def transform(series, kind, other: pd.Series | None = None) -> pd.Series:
    """Apply ``logdiff100``, ``difference``, ``spread`` (series minus ``other``) or ``identity``."""
    kind = TransformKind(kind)
    s = series.sort_index()
    if kind is TransformKind.IDENTITY:
        return s.copy()
    if kind is TransformKind.DIFFERENCE:
        return s.diff().iloc[1:]
    if kind is TransformKind.SPREAD:
        if other is None:
            raise IngestError("spread needs a second series")
        return (s - other.sort_index()).dropna()
    bad = s[~(s > 0)]
    if len(bad):
        raise IngestError(f"log difference of a nonpositive value at {bad.index[0]}")
    return (100.0 * np.log(s).diff()).iloc[1:]


# ---------------------------------------------------------------------------
# recipes
# ---------------------------------------------------------------------------


def _series(env: dict, name: str) -> pd.Series:
    try:
        return env[name]
    except KeyError:
        raise IngestError(f"recipe refers to unknown series {name!r}") from None


def run_recipe(recipe, base_dir=None) -> tuple[Dataset, pd.DataFrame]:
    """Build a dataset from a recipe dict (or a path to a JSON recipe).

    Recipe layout::

        {"sources": {"name": {"path": ..., "date": "date", "column": ..., "freq": "Q"}},
         "steps": [{"name": ..., "op": "splice" | "interpolate" | "overlay" | "transform", ...}],
         "output": {"columns": [...], "start": "1920Q2", "end": "2021Q4", "path": "out.csv"}}

    Returns the dataset and its frame; writes ``output.path`` when present.
    """
    if not isinstance(recipe, dict):
        base_dir = base_dir or Path(recipe).parent
        recipe = json.loads(Path(recipe).read_text())
    base = Path(base_dir or ".")
    env: dict = {}
    for name, src in recipe.get("sources", {}).items():
        frame = load_csv(base / src["path"], src.get("date", "date"), [src["column"]], src.get("freq"))
        env[name] = frame[src["column"]].rename(name)
    for step in recipe.get("steps", []):
        op, name = step.get("op"), step.get("name")
        if not name:
            raise IngestError(f"recipe step without a name: {step}")
        if op == "splice":
            out = splice(_series(env, step["earlier"]), _series(env, step["later"]),
                         step.get("method", SpliceMethod.RATIO_LINK.value))
        elif op == "interpolate":
            out = interpolate_quarterly(_series(env, step["source"]), step.get("window"))
        elif op == "overlay":
            out = overlay(_series(env, step["base"]), _series(env, step["patch"]))
        elif op == "transform":
            other = _series(env, step["other"]) if "other" in step else None
            out = transform(_series(env, step["source"]), step["kind"], other)
        else:
            raise IngestError(f"unknown recipe op {op!r}")
        env[name] = out.rename(name)
    spec = recipe.get("output", {})
    cols = spec.get("columns") or list(env)
    frame = pd.concat([_series(env, c) for c in cols], axis=1, join="inner")
    frame.columns = cols
    if "start" in spec:
        frame = frame[frame.index >= pd.Period(spec["start"], frame.index.freq)]
    if "end" in spec:
        frame = frame[frame.index <= pd.Period(spec["end"], frame.index.freq)]
    if frame.isna().any().any():
        raise IngestError("output contains missing values")
    if frame.empty:
        raise IngestError("output is empty")
    dataset = Dataset(frame.to_numpy(dtype=float), tuple(cols), tuple(str(p) for p in frame.index))
    if spec.get("path"):
        manifest = {"columns": cols, "rows": len(frame), "first": str(frame.index[0]),
                    "last": str(frame.index[-1])}
        write_csv(frame, base / spec["path"], manifest)
    return dataset, frame
