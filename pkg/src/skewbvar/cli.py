"""Command-line interface.

Every subcommand reads one JSON config with the sections ``model``, ``prior``,
``sampler``, ``backtest`` and ``paths`` plus a top-level ``seed``. Exit codes:
0 success, 1 runtime failure, 2 usage error, 3 invalid or missing config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .model import Dataset, ModelSpec, ParameterDraw, StatePath, Variant
from .rv import RngHandle

log = logging.getLogger("skewbvar")

EXIT_RUNTIME = 1
EXIT_CONFIG = 3
EXPLOSIVE_LIMIT = 1e8


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def simulate_dgp(spec: ModelSpec, true_params: ParameterDraw, T: int, rng: RngHandle,
                 burn: int = 100, beta0=None) -> tuple[Dataset, StatePath]:
    """Draw ``T`` observations and the latent states from the model equations.

    The recursion starts from zero data and the states ``beta0`` (default: the
    transition fixed point ignoring data feedback) and discards ``burn`` rows.
    """
    from .forecast import Innovations, breached, history_lags, simulate_paths

    true_params.validate(spec)
    K, N = spec.n_states, spec.n_vars
    ny, L = history_lags(spec)
    if beta0 is None:
        beta0 = np.linalg.solve(np.eye(K) - true_params.theta, true_params.alpha)
    n = T + burn
    innov = Innovations.draw(1, n, K, N, rng)
    y_hist = np.zeros((ny, N))
    b_hist = np.tile(np.asarray(beta0, dtype=float), (L, 1))
    y, beta, theta = simulate_paths(spec, true_params, y_hist, b_hist, innov)
    if breached(beta, N)[0]:
        raise ValueError("simulated log-variances left the admissible range; use a more persistent-but-stable "
                         "transition or a smaller Q")
    if not np.all(np.isfinite(y)) or np.abs(y).max() > EXPLOSIVE_LIMIT:
        raise ValueError(f"simulated data exceed {EXPLOSIVE_LIMIT:g} in absolute value; "
                         "the parameters look explosive, try smaller lag coefficients")
    y, beta, theta = y[0, burn:], beta[0, burn:], theta[0, burn:]
    if spec.variant is Variant.SV_ONLY:
        theta = np.zeros_like(theta)
    labels = tuple(f"y{i + 1}" for i in range(N))
    dates = tuple(str(p) for p in pd.period_range("1950Q1", periods=T, freq="Q"))
    return Dataset(y, labels, dates), StatePath.from_beta(spec, beta, theta)


def demo_params(spec: ModelSpec) -> ParameterDraw:
    """A stable parameter set with skewness feedback, used by ``simulate``."""
    N, K = spec.n_vars, spec.n_states
    P, L, Q = spec.p_obs_lags, spec.l_inmean_lags, spec.q_state_lags
    B = np.zeros((P, N, N))
    B[0] = 0.4 * np.eye(N)
    b = np.zeros((L, N, N))
    a = np.zeros((L, N, N))
    b[0] = -0.3 * np.eye(N)
    if spec.variant is Variant.FULL:
        a[0] = 0.8 * np.eye(N)
    A = np.eye(N) + np.tril(np.full((N, N), -0.3), -1)
    alpha = np.zeros(K)
    theta = 0.9 * np.eye(K)
    qcov = 0.05 * np.eye(K)
    if spec.variant is not Variant.SV_ONLY:
        qcov[N:, N:] = 0.1 * np.eye(N)
    params = ParameterDraw(c=0.5 * np.ones(N), B=B, b=b, a=a, A=A, alpha=alpha, theta=theta,
                           dy=np.zeros((Q, K, N)), qcov=qcov)
    if spec.variant is Variant.RESTRICTED:
        params = params.replace(b=np.zeros_like(b), a=np.zeros_like(a))
    return params.validate(spec)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

SECTIONS = {
    "model": {"n_vars", "p_obs_lags", "q_state_lags", "l_inmean_lags", "variant"},
    "prior": {"tau", "tau_tight", "c_vol", "c_flat", "pre_model_draws", "training_rows",
              "bootstrap_state_gamma", "bootstrap_qcov", "state_scale_floor"},
    "sampler": {"n_draws", "n_burn", "thin", "n_particles", "ancestor_factors"},
    "backtest": {"first_origin", "last_origin", "H", "variants", "paths_per_draw", "cumulate"},
    "paths": {"data", "out", "chain"},
    "simulate": {"T", "burn"},
}
_POSITIVE_INT = {"n_vars", "p_obs_lags", "l_inmean_lags", "n_draws", "thin", "n_particles", "H",
                 "paths_per_draw", "pre_model_draws", "T"}
_NONNEG_INT = {"q_state_lags", "n_burn", "ancestor_factors", "training_rows", "burn"}
_POSITIVE_FLOAT = {"tau", "tau_tight", "c_vol", "c_flat", "bootstrap_qcov", "state_scale_floor"}


def validate_config(cfg) -> dict:
    """Check the config against the schema; raise :class:`ConfigError` listing every problem."""
    problems = []
    if not isinstance(cfg, dict):
        raise ConfigError(["config must be a JSON object"])
    for key in cfg:
        if key != "seed" and key not in SECTIONS:
            problems.append(f"unknown section {key!r}")
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append("seed must be a nonnegative integer")
    for section, allowed in SECTIONS.items():
        body = cfg.get(section, {})
        if not isinstance(body, dict):
            problems.append(f"section {section!r} must be an object")
            continue
        for key, value in body.items():
            where = f"{section}.{key}"
            if key not in allowed:
                problems.append(f"unknown key {where}")
            elif key in _POSITIVE_INT and not (isinstance(value, int) and not isinstance(value, bool) and value > 0):
                problems.append(f"{where} must be a positive integer")
            elif key in _NONNEG_INT and value is not None and not (
                    isinstance(value, int) and not isinstance(value, bool) and value >= 0):
                problems.append(f"{where} must be a nonnegative integer")
            elif key in _POSITIVE_FLOAT and not (isinstance(value, (int, float)) and value > 0):
                problems.append(f"{where} must be positive")
            elif key == "variant":
                try:
                    Variant.parse(value)
                except ValueError:
                    problems.append(f"{where}: unknown variant {value!r}")
            elif key == "variants":
                if not isinstance(value, list) or not value:
                    problems.append(f"{where} must be a nonempty list")
                else:
                    for v in value:
                        try:
                            Variant.parse(v)
                        except ValueError:
                            problems.append(f"{where}: unknown variant {v!r}")
    prior = cfg.get("prior", {})
    if isinstance(prior, dict) and "tau" in prior and "tau_tight" in prior:
        problems.append("give prior.tau or its alias prior.tau_tight, not both")
    sampler = cfg.get("sampler", {})
    if isinstance(sampler, dict) and isinstance(sampler.get("n_draws"), int) and isinstance(sampler.get("n_burn"), int):
        if sampler["n_burn"] > sampler["n_draws"]:
            problems.append("sampler.n_burn exceeds sampler.n_draws")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> dict:
    if path is None:
        raise ConfigError(["no config file given (use --config)"])
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file {path} does not exist"])
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config file {path} is not valid JSON: {exc}"]) from None
    cfg = validate_config(cfg)
    cfg["_base"] = str(path.parent)
    return cfg


def spec_from_config(cfg: dict, n_vars: int | None = None) -> ModelSpec:
    model = dict(cfg.get("model", {}))
    sampler = dict(cfg.get("sampler", {}))
    if n_vars is not None:
        if "n_vars" in model and model["n_vars"] != n_vars:
            raise ConfigError([f"model.n_vars={model['n_vars']} but the data have {n_vars} variables"])
        model["n_vars"] = n_vars
    if "n_vars" not in model:
        raise ConfigError(["model.n_vars is required"])
    try:
        return ModelSpec(**model, **sampler)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from None


def settings_from_config(cfg: dict):
    from .priors import DummyPriorConfig, PriorSettings

    prior = dict(cfg.get("prior", {}))
    if "tau" in prior:
        prior["tau_tight"] = prior.pop("tau")
    dummy = DummyPriorConfig(**{k: prior.pop(k) for k in ("tau_tight", "c_vol", "c_flat") if k in prior})
    return PriorSettings(dummy=dummy, **prior)


def _path(cfg: dict, key: str, override=None) -> Path:
    value = override or cfg.get("paths", {}).get(key)
    if value is None:
        raise ConfigError([f"paths.{key} is required"])
    p = Path(value)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .ingest import dataset_frame

    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    spec = spec_from_config(cfg)
    sim = cfg.get("simulate", {})
    data, states = simulate_dgp(spec, demo_params(spec), sim.get("T", 200), RngHandle(seed),
                                burn=sim.get("burn", 100))
    out = _path(cfg, "data", args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset_frame(data).to_csv(out, float_format="%.17g")
    beta = pd.DataFrame(np.hstack([states.h, states.d, states.theta_parent]),
                        columns=[f"{k}:{lab}" for k in ("h", "d", "theta") for lab in data.labels])
    beta.insert(0, "date", list(data.dates))
    beta.to_csv(out.with_name(out.stem + "_states.csv"), index=False, float_format="%.17g")
    print(f"wrote {out}")
    return 0


def _load_data(cfg, override=None) -> Dataset:
    from .ingest import read_dataset

    path = _path(cfg, "data", override)
    if not path.exists():
        raise ConfigError([f"data file {path} does not exist"])
    return read_dataset(path)


def cmd_estimate(args) -> int:
    from .sampler import estimate

    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    data = _load_data(cfg, args.data)
    spec = spec_from_config(cfg, data.N)
    chain = estimate(spec, data, RngHandle(seed), settings_from_config(cfg))
    npz, _ = chain.save(_path(cfg, "chain", args.out))
    print(f"wrote {npz} ({len(chain)} draws)")
    return 0


def cmd_backtest(args) -> int:
    from .forecast import BacktestPlan, run_backtest

    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    data = _load_data(cfg)
    spec = spec_from_config(cfg, data.N)
    bt = dict(cfg.get("backtest", {}))
    if "first_origin" not in bt or "last_origin" not in bt:
        raise ConfigError(["backtest.first_origin and backtest.last_origin are required"])
    cumulate = bt.pop("cumulate", [])
    mask = tuple(label in cumulate for label in data.labels)
    plan = BacktestPlan(cumulate=mask, **bt)
    manifest = run_backtest(plan, data, spec, _path(cfg, "out", args.out), seed,
                            settings_from_config(cfg), workers=args.workers)
    ok = sum(1 for e in manifest["entries"].values() if e.get("status") == "ok")
    print(f"{ok} of {len(manifest['entries'])} entries complete")
    return 0


def cmd_evaluate(args) -> int:
    from .forecast import load_manifest, realized_targets
    from .ingest import read_dataset
    from .scoring import LOSSES, collect_losses, score_table

    archive = Path(args.archive)
    manifest = load_manifest(archive)
    if not manifest:
        raise ConfigError([f"{archive} holds no manifest.json"])
    data = read_dataset(args.realized)
    losses = LOSSES if args.losses == "all" else tuple(args.losses.split(","))
    H = manifest["H"]
    cumulate = set(args.cumulate.split(",")) if args.cumulate else set()
    mask = [label in cumulate for label in data.labels]
    origins = manifest["origins"]
    targets = {o: realized_targets(data, data.dates.index(o), H, mask) for o in origins}
    periods = {"full": None}
    if args.periods:
        periods.update({k: tuple(v) for k, v in json.loads(Path(args.periods).read_text()).items()})
    frames = [collect_losses(archive, v, origins, targets, losses, H) for v in (args.proposed, args.competitor)]
    table, missing = score_table(pd.concat(frames), Variant.parse(args.proposed).value,
                                 Variant.parse(args.competitor).value, periods)
    if missing:
        print(f"excluded origins missing for one variant: {missing}", file=sys.stderr)
    table.to_csv(args.out, index=False)
    print(f"wrote {args.out}")
    return 0


def _load_chain(path):
    from .sampler import Chain

    try:
        return Chain.load(path)
    except FileNotFoundError:
        raise ConfigError([f"chain file {path} does not exist"]) from None


def cmd_irf(args) -> int:
    from .irf import girf

    chain = _load_chain(args.chain)
    shock = int(args.shock) if args.shock.isdigit() else args.shock
    res = girf(chain, None, shock, args.size, args.horizon, args.n_rep, RngHandle(args.seed))
    res.to_frame().to_csv(args.out, index=False)
    print(f"wrote {args.out}")
    return 0


def cmd_risk(args) -> int:
    from .risk import percentiles_frame, tail_percentiles

    chain = _load_chain(args.chain)
    pct = [float(p) for p in args.percentiles.split(",")]
    q = tail_percentiles(chain, None, pct, args.paths, RngHandle(args.seed))
    percentiles_frame(q, chain.dataset, pct).to_csv(args.out, index=False)
    print(f"wrote {args.out}")
    return 0


def cmd_ingest(args) -> int:
    from .ingest import run_recipe

    path = Path(args.recipe)
    if not path.exists():
        raise ConfigError([f"recipe {path} does not exist"])
    recipe = json.loads(path.read_text())
    if args.out:
        recipe.setdefault("output", {})["path"] = str(Path(args.out).resolve())
    dataset, _ = run_recipe(recipe, path.parent)
    print(f"built {dataset.T} rows x {dataset.N} variables")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skewbvar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run the particle Gibbs sampler")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("backtest", help="recursive estimation and forecasting")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("evaluate", help="score archived forecasts")
    p.add_argument("--archive", required=True)
    p.add_argument("--realized", required=True)
    p.add_argument("--losses", default="all")
    p.add_argument("--periods")
    p.add_argument("--cumulate", default="", help="comma-separated variables scored as cumulative growth")
    p.add_argument("--proposed", default="full")
    p.add_argument("--competitor", default="sv_only")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("irf", help="generalized impulse responses")
    p.add_argument("--chain", required=True)
    p.add_argument("--shock", required=True, help="state name such as h:y1 or d:y2, or an index")
    p.add_argument("--size", type=float, default=1.0)
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--n-rep", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_irf)

    p = sub.add_parser("risk", help="tail percentiles of one-step predictives")
    p.add_argument("--chain", required=True)
    p.add_argument("--percentiles", default="5,95")
    p.add_argument("--paths", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("ingest", help="build a dataset from a recipe")
    p.add_argument("--recipe", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
