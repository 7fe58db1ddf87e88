"""Point and density forecast losses, and relative-performance tables."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from .rv import std_normal_cdf

LOG_SCORE_FLOOR = -30.0
MIN_KDE_DRAWS = 100
GRID_NODES = 2001
GRID_PAD_SD = 4.0
LOG_2PI = float(np.log(2.0 * np.pi))


class WeightKind(str, enum.Enum):
    UNIFORM = "uniform"
    BOTH_TAILS = "both_tails"
    LEFT_TAIL = "left_tail"
    RIGHT_TAIL = "right_tail"

    @classmethod
    def parse(cls, value) -> "WeightKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "_").replace("tails", "tail").replace("bothtail", "both_tail")
        aliases = {"uniform": cls.UNIFORM, "both_tail": cls.BOTH_TAILS, "left_tail": cls.LEFT_TAIL,
                   "right_tail": cls.RIGHT_TAIL, "left": cls.LEFT_TAIL, "right": cls.RIGHT_TAIL,
                   "both": cls.BOTH_TAILS}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown weight kind {value!r}") from None


@dataclass(frozen=True)
class WeightFn:
    """Region weight on the standardized scale ``(z - center) / scale``."""

    kind: WeightKind = WeightKind.UNIFORM
    center: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightKind.parse(self.kind))
        if not self.scale > 0:
            raise ValueError("weight scale must be positive")

    @classmethod
    def for_draws(cls, kind, draws) -> "WeightFn":
        center, scale = _moments(draws)
        return cls(kind, center, scale)

    def standardized(self, zt) -> np.ndarray:
        zt = np.asarray(zt, dtype=float)
        if self.kind is WeightKind.UNIFORM:
            return np.ones_like(zt)
        if self.kind is WeightKind.BOTH_TAILS:
            # 1 - phi(z) / phi(0)
            return -np.expm1(-0.5 * zt * zt)
        if self.kind is WeightKind.LEFT_TAIL:
            return std_normal_cdf(-zt)
        return std_normal_cdf(zt)

    def __call__(self, z) -> np.ndarray:
        return self.standardized((np.asarray(z, dtype=float) - self.center) / self.scale)


def _moments(draws) -> tuple[float, float]:
    x = np.asarray(draws, dtype=float)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    if not sd > 0:
        raise ValueError("draws have zero standard deviation")
    return float(np.mean(x)), sd


# ---------------------------------------------------------------------------
# point forecasts
# ---------------------------------------------------------------------------


def rmse(forecasts, realized) -> float:
    f = np.asarray(forecasts, dtype=float)
    y = np.asarray(realized, dtype=float)
    if f.shape != y.shape:
        raise ValueError(f"forecast shape {f.shape} != realization shape {y.shape}")
    if f.size == 0:
        raise ValueError("rmse of an empty series")
    return float(np.sqrt(np.mean((f - y) ** 2)))


# ---------------------------------------------------------------------------
# density forecasts
# ---------------------------------------------------------------------------


def silverman_bandwidth(x: np.ndarray) -> float:
    n = x.size
    sd = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return float(0.9 * spread * n ** -0.2)


def log_score(draws, y: float, floor: float = LOG_SCORE_FLOOR) -> float:
    """Log of a Gaussian kernel density estimate at ``y``, floored at ``floor``."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    if x.size < MIN_KDE_DRAWS:
        raise ValueError(f"log score needs at least {MIN_KDE_DRAWS} draws, got {x.size}")
    bw = silverman_bandwidth(x)
    if not bw > 0:
        raise ValueError("degenerate draws: zero kernel bandwidth")
    z = (float(y) - x) / bw
    val = logsumexp(-0.5 * z * z) - np.log(x.size) - np.log(bw) - 0.5 * LOG_2PI
    return float(max(val, floor))


def crps(draws, y: float) -> float:
    """Energy-form CRPS ``E|X - y| - E|X - X'| / 2`` via the sorted-sample identity."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise ValueError("crps needs at least 2 draws")
    i = np.arange(1, n + 1)
    spread = 2.0 * np.sum((2 * i - n - 1) * x) / (n * n)
    return float(np.mean(np.abs(x - y)) - 0.5 * spread)


def crps_grid(draws, y: float, n_nodes: int = GRID_NODES) -> np.ndarray:
    """Quadrature nodes covering the draws (padded by 4 sd) and ``y``, with ``y`` on a node."""
    x = np.asarray(draws, dtype=float)
    _, sd = _moments(x)
    lo = min(x.min(), y) - GRID_PAD_SD * sd
    hi = max(x.max(), y) + GRID_PAD_SD * sd
    dz = (hi - lo) / (n_nodes - 2)
    k = np.floor((y - lo) / dz)
    # offsets from y so that y is reproduced exactly at node k
    return y + dz * (np.arange(n_nodes) - k)


def weighted_crps(draws, y: float, weight_fn=WeightKind.UNIFORM) -> float:
    """Threshold-weighted CRPS by the trapezoid rule on :func:`crps_grid`.

    ``weight_fn`` is a :class:`WeightFn` or a kind; a bare kind is standardized
    by the draws' mean and standard deviation.
    """
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    if not isinstance(weight_fn, WeightFn):
        weight_fn = WeightFn.for_draws(weight_fn, x)
    z = crps_grid(x, float(y))
    F = np.searchsorted(x, z, side="right") / x.size
    step = (z >= y).astype(float)
    integrand = (F - step) ** 2
    # the indicator jumps at y; use the average of both one-sided limits there
    at = np.flatnonzero(z == y)
    if at.size:
        j = at[0]
        integrand[j] = 0.5 * (F[j] ** 2 + (F[j] - 1.0) ** 2)
    integrand *= weight_fn(z)
    return float(trapezoid(integrand, z))


def weighted_log_score(draws, y: float, weight_fn=WeightKind.UNIFORM, floor: float = LOG_SCORE_FLOOR) -> float:
    """``w(y~) * log_score`` with ``y~`` standardized by the draw moments."""
    if not isinstance(weight_fn, WeightFn):
        weight_fn = WeightFn.for_draws(weight_fn, draws)
    w = float(weight_fn(y))
    return w * log_score(draws, y, floor)


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

LOSSES = ("sqerr", "logscore", "crps", "wcrps_both", "wcrps_left", "wcrps_right",
          "wls_both", "wls_left", "wls_right")
_WEIGHTED = {"both": WeightKind.BOTH_TAILS, "left": WeightKind.LEFT_TAIL, "right": WeightKind.RIGHT_TAIL}


def loss_values(draws, y: float, losses=LOSSES) -> dict:
    """Every requested loss for one predictive sample and realization."""
    x = np.asarray(draws, dtype=float)
    out = {}
    for name in losses:
        if name == "sqerr":
            out[name] = float((x.mean() - y) ** 2)
        elif name == "logscore":
            out[name] = log_score(x, y)
        elif name == "crps":
            out[name] = crps(x, y)
        elif name.startswith("wcrps_"):
            out[name] = weighted_crps(x, y, _WEIGHTED[name[6:]])
        elif name.startswith("wls_"):
            out[name] = weighted_log_score(x, y, _WEIGHTED[name[4:]])
        else:
            raise ValueError(f"unknown loss {name!r}")
    return out


def _variant_name(variant) -> str:
    from .model import Variant

    try:
        return Variant.parse(variant).value
    except ValueError:
        return str(variant)


def collect_losses(archive, variant, origins, targets: dict, losses=LOSSES, H: int | None = None) -> pd.DataFrame:
    """Long table of losses for one archived variant.

    ``targets`` maps origin label to an (H, N) array of outcomes (NaN = unavailable).
    Origins whose archive entry is missing are skipped.
    """
    from .forecast import read_predictive
    name = _variant_name(variant)
    rows = []
    for origin in origins:
        try:
            pred = read_predictive(archive, variant, origin, H)
        except FileNotFoundError:
            continue
        y = targets[origin]
        for h in range(1, pred.H + 1):
            for n, label in enumerate(pred.labels):
                if h - 1 >= y.shape[0] or not np.isfinite(y[h - 1, n]):
                    continue
                vals = loss_values(pred.at(h)[:, n], y[h - 1, n], losses)
                for loss, v in vals.items():
                    rows.append((name, origin, label, h, loss, v))
    return pd.DataFrame(rows, columns=["variant", "origin", "variable", "horizon", "loss", "value"])


def in_period(origins, start: str, end: str) -> np.ndarray:
    """Boolean mask of quarterly origin labels inside ``[start, end]``."""
    p = pd.PeriodIndex([pd.Period(o, "Q") for o in origins])
    return np.asarray((p >= pd.Period(start, "Q")) & (p <= pd.Period(end, "Q")))


def stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def _relative(loss: str, a: np.ndarray, b: np.ndarray) -> dict:
    if loss == "sqerr":
        return {"metric": "rmse_ratio", "value": float(np.sqrt(a.mean()) / np.sqrt(b.mean()))}
    if loss.startswith("crps") or loss.startswith("wcrps"):
        return {"metric": f"{loss}_ratio", "value": float(a.mean() / b.mean())}
    diff = a - b
    return {"metric": f"{loss}_diff_pct", "value": float(100.0 * diff.mean()),
            "cumulative": float(diff.sum()), "per_quarter": float(diff.mean())}


def score_table(losses: pd.DataFrame, proposed: str, competitor: str, periods: dict | None = None):
    """Relative performance of ``proposed`` against ``competitor``.

    Ratios are proposed/competitor (RMSE, CRPS family); log-score rows give the
    mean difference times 100 together with the cumulative difference and its
    per-quarter average. Each cell carries an unconditional predictive-ability
    test on the per-origin loss differential (HAC lags h - 1).

    Returns ``(table, missing)`` where ``missing`` lists origins present for only
    one of the two variants (excluded pairwise).
    """
    from .gwtest import gw_unconditional

    periods = periods or {"full": None}
    proposed, competitor = _variant_name(proposed), _variant_name(competitor)
    a = losses[losses.variant == proposed]
    b = losses[losses.variant == competitor]
    if a.empty or b.empty:
        raise ValueError("both variants need losses")
    oa, ob = set(a.origin), set(b.origin)
    missing = sorted(oa ^ ob)
    key = ["origin", "variable", "horizon", "loss"]
    merged = a.merge(b, on=key, suffixes=("_p", "_c"))
    out = []
    for pname, bounds in periods.items():
        sub = merged
        if bounds is not None:
            sub = merged[in_period(merged.origin, bounds[0], bounds[1])]
        for (var, h, loss), cell in sub.groupby(["variable", "horizon", "loss"], sort=True):
            cell = cell.sort_values("origin", key=lambda s: s.map(_origin_sort_key))
            pa, pc = cell.value_p.to_numpy(), cell.value_c.to_numpy()
            row = {"period": pname, "variable": var, "horizon": int(h), "loss": loss, "n": len(cell)}
            row.update(_relative(loss, pa, pc))
            diff = pa - pc
            if len(diff) >= 2 and np.any(diff != diff[0]):
                try:
                    stat, p = gw_unconditional(diff, int(h))
                except (ValueError, np.linalg.LinAlgError):
                    stat, p = np.nan, np.nan
            else:
                stat, p = 0.0, 1.0
            row.update({"gw_stat": stat, "gw_p": p, "stars": stars(p)})
            out.append(row)
    cols = ["period", "variable", "horizon", "loss", "metric", "value", "cumulative", "per_quarter",
            "n", "gw_stat", "gw_p", "stars"]
    table = pd.DataFrame(out).reindex(columns=cols)
    return table, missing


def _origin_sort_key(o):
    try:
        return pd.Period(o, "Q").ordinal
    except (ValueError, TypeError):
        return o
