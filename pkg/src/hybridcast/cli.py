"""Command-line interface.

One executable, one subcommand per stage. Exit codes: 0 ok, 1 usage error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import augment as aug
from . import simulate as sim
from .baselines import (ARForecaster, LinearARModel, NaiveForecaster,
                        SESForecaster, SeasonalNaiveForecaster, ar_fit)
from .core import ingest, write_jsonl
from .decomp import stl_decompose
from .dromix import GroupWeights, ReferenceLosses, excess_loss, fit_reference, update_weights
from .errors import DataError, HybridcastError, NumericError, TrainingDivergedError
from .evaluate import rolling_benchmark
from .fusion import (CoordinationConfig, LinearFusion, ModelPool, RouterParams,
                     StatFeatureEmbedder, coordinate_infer, coordinate_train,
                     fit_linear_fusion, route_fuse, train_router)
from .pipeline import _write_json, _write_report_csv, load_pipeline_config, run_pipeline
from .tsfm import ModelConfig, TsfmForecaster, forecast, load_params, save_params, train

log = logging.getLogger("hybridcast")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _load_dataset_dir(path) -> dict[str, list]:
    base = Path(path)
    if not base.is_dir():
        raise DataError(f"not a directory: {base}")
    files = sorted(base.glob("*.jsonl"))
    if not files:
        raise DataError(f"no .jsonl files in {base}")
    return {f.stem: ingest(f, "jsonl") for f in files}


def member_from_spec(spec: dict, base_dir: Path | None = None):
    """Build a pool member from its descriptor (the shared model format)."""
    kind = spec.get("kind")
    name = spec.get("name")
    if kind == "naive":
        return NaiveForecaster(name or "naive")
    if kind == "seasonal_naive":
        return SeasonalNaiveForecaster(int(spec.get("period", 12)), name)
    if kind == "ses":
        return SESForecaster(float(spec.get("alpha", 0.3)), name)
    if kind == "ar":
        return ARForecaster(int(spec.get("order", 8)),
                            bool(spec.get("difference", False)), name)
    if kind == "tsfm":
        model_path = Path(spec["model"])
        if base_dir is not None and not model_path.is_absolute():
            model_path = base_dir / model_path
        return TsfmForecaster(load_params(model_path), name or "tsfm")
    raise DataError(f"unknown member kind {kind!r}")


def member_from_shorthand(text: str):
    """Names like ``naive``, ``ses:0.5``, ``seasonal_naive:12`` or ``ar:8``."""
    kind, _, arg = text.partition(":")
    if kind == "naive":
        return NaiveForecaster()
    if kind == "seasonal_naive":
        return SeasonalNaiveForecaster(int(arg or 12))
    if kind == "ses":
        return SESForecaster(float(arg or 0.3))
    if kind == "ar":
        return ARForecaster(int(arg or 8))
    raise DataError(f"unknown model shorthand {text!r}")


def _save_ar_model(model: LinearARModel, path):
    _write_json(Path(path), {
        "kind": "ar_fitted", "order": model.order,
        "coef": model.coef.tolist(), "intercept": model.intercept,
        "residual_std": model.residual_std,
    })


def _load_ar_model(path) -> LinearARModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("kind") != "ar_fitted":
        raise DataError(f"{path} is not a fitted small-model file")
    return LinearARModel(order=int(doc["order"]), coef=np.array(doc["coef"], dtype=float),
                         intercept=float(doc["intercept"]),
                         residual_std=float(doc["residual_std"]))


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.skill_suite:
        suite = sim.skill_suite(args.seed)
        series = [s for name in sim.SKILL_NAMES for s in suite[name]]
    else:
        if not args.spec:
            raise DataError("simulate needs --spec or --skill-suite")
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = sim.spec_from_dict(json.load(fh))
        series = [sim.generate(spec, seed=args.seed)]
    write_jsonl(series, args.output)
    log.info("wrote %d series to %s", len(series), args.output)
    return EXIT_OK


def cmd_augment(args) -> int:
    series_list = ingest(args.input, "jsonl")
    out = []
    if args.strategy == "freq":
        out = [aug.frequency_aggregate(s, args.factor, args.mode) for s in series_list]
    elif args.strategy == "mbb":
        for s in series_list:
            period = args.period or s.freq.steps_per_cycle
            out.extend(aug.mbb_augment(s, period=period, block_len=args.block_len,
                                       n_variants=args.variants, seed=args.seed))
    elif args.strategy == "dba":
        out = aug.dba_augment(series_list, k=args.k, per_cluster=args.per_cluster,
                              seed=args.seed)
    elif args.strategy == "mixup":
        out = aug.mixup_augment(series_list, m=args.m, alpha=args.alpha,
                                n_variants=args.variants, seed=args.seed)
    write_jsonl(out, args.output)
    log.info("wrote %d augmented series to %s", len(out), args.output)
    return EXIT_OK


def cmd_decompose(args) -> int:
    series_list = ingest(args.input, "jsonl")
    with open(args.output, "w", encoding="utf-8") as fh:
        for s in series_list:
            period = args.period or s.freq.steps_per_cycle
            d = stl_decompose(s, period=period)
            fh.write(json.dumps({
                "id": s.id, "period": period,
                "trend": d.trend.tolist(), "seasonal": d.seasonal.tolist(),
                "residual": d.residual.tolist(),
            }, sort_keys=True))
            fh.write("\n")
    return EXIT_OK


def cmd_dro_weights(args) -> int:
    datasets = _load_dataset_dir(args.datasets)
    ids = sorted(datasets)
    reference = ReferenceLosses(losses={
        d: fit_reference(datasets[d], "ar", loss="mse") for d in ids})
    # the driving "current" loss stands in for a shared main model: a plain
    # naive baseline evaluated per dataset
    current = {d: fit_reference(datasets[d], "naive", loss="mse") for d in ids}
    weights = GroupWeights.uniform(ids, eta=args.eta, smoothing=args.smoothing)
    trajectory = [dict(weights.weights)]
    excess = excess_loss(current, reference)
    for _ in range(args.steps):
        weights = update_weights(weights, excess)
        trajectory.append(dict(weights.weights))
    _write_json(Path(args.output), {
        "weights": weights.weights, "trajectory": trajectory,
        "reference_losses": reference.losses, "current_losses": current,
    })
    return EXIT_OK


def cmd_train_tsfm(args) -> int:
    datasets = _load_dataset_dir(args.data)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            model_cfg = ModelConfig.from_dict({**json.load(fh), "seed": args.seed})
    else:
        model_cfg = ModelConfig(seed=args.seed)
    dro = None
    if args.dro:
        dro = GroupWeights.uniform(sorted(datasets))
    try:
        result = train(model_cfg, datasets, dro=dro, steps=args.steps, seed=args.seed)
    except TrainingDivergedError as exc:
        checkpoint = Path(args.output).with_suffix(".checkpoint.json")
        if exc.last_good_params is not None:
            save_params(exc.last_good_params, checkpoint)
        sys.stderr.write(f"training diverged at step {exc.step}; "
                         f"last good checkpoint: {checkpoint}\n")
        return EXIT_NUMERIC
    save_params(result.params, args.output)
    side = Path(args.output).with_suffix(".training.json")
    _write_json(side, {"loss_trajectory": result.loss_trajectory,
                       "weight_trajectory": result.weight_trajectory,
                       "reference_losses": result.reference_losses})
    log.info("model written to %s", args.output)
    return EXIT_OK


def cmd_forecast(args) -> int:
    params = load_params(args.model)
    series_list = ingest(args.input, "jsonl")
    with open(args.output, "w", encoding="utf-8") as fh:
        for s in series_list:
            fc = forecast(params, s, args.horizon)
            fh.write(json.dumps({
                "id": s.id, "freq": s.freq.class_,
                "point": [float(x) for x in fc.point],
                "mu": [float(x) for x in fc.mu],
                "sigma": [float(x) for x in fc.sigma],
                "nu": [float(x) for x in fc.nu],
                "confidence": fc.confidence,
            }, sort_keys=True))
            fh.write("\n")
    return EXIT_OK


def _pool_from_file(path) -> tuple[ModelPool, list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        specs = json.load(fh)
    if not isinstance(specs, list) or len(specs) < 2:
        raise DataError("pool file must list at least 2 members")
    base = Path(path).parent
    members = []
    for spec in specs:
        member = member_from_spec(spec, base)
        members.append((spec.get("name") or member.name, member))
    return ModelPool(members=members), specs


def cmd_fuse_train(args) -> int:
    pool, specs = _pool_from_file(args.pool)
    datasets = _load_dataset_dir(args.data)
    embedder = StatFeatureEmbedder()
    if args.mode == "router":
        router = train_router(pool, embedder, datasets, mode=args.router_objective,
                              seed=args.seed, horizon=args.horizon,
                              n_origins=args.origins)
        _write_json(Path(args.output), {
            "type": "router", "pool": specs,
            "arrays": {k: v.tolist() for k, v in router.arrays().items()},
            "feat_mean": router.feat_mean.tolist(),
            "feat_std": router.feat_std.tolist(),
            "member_names": router.member_names,
        })
    else:
        from .evaluate import iter_windows
        rows, truths = [], []
        for name in sorted(datasets):
            for s in datasets[name]:
                for history, truth in iter_windows(s, args.horizon, args.origins):
                    preds = pool.predict_all(s.with_values(history), truth.size)
                    rows.append(preds.T)
                    truths.append(truth)
        if not rows:
            raise DataError("no training windows for linear fusion")
        fusion = fit_linear_fusion(np.concatenate(rows), np.concatenate(truths))
        _write_json(Path(args.output), {
            "type": "linear", "pool": specs,
            "weights": fusion.weights.tolist(), "intercept": fusion.intercept,
            "ridge_fallback": fusion.ridge_fallback,
        })
    return EXIT_OK


def cmd_fuse(args) -> int:
    with open(args.fusion, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    base = Path(args.fusion).parent
    members = []
    for spec in doc["pool"]:
        member = member_from_spec(spec, base)
        members.append((spec.get("name") or member.name, member))
    pool = ModelPool(members=members)
    series_list = ingest(args.input, "jsonl")
    with open(args.output, "w", encoding="utf-8") as fh:
        for s in series_list:
            if doc["type"] == "router":
                router = RouterParams(
                    w1=np.array(doc["arrays"]["w1"]), b1=np.array(doc["arrays"]["b1"]),
                    w2=np.array(doc["arrays"]["w2"]), b2=np.array(doc["arrays"]["b2"]),
                    feat_mean=np.array(doc["feat_mean"]), feat_std=np.array(doc["feat_std"]),
                    member_names=list(doc["member_names"]))
                fused, weights = route_fuse(router, StatFeatureEmbedder(), s, pool,
                                            args.horizon)
                rec = {"id": s.id, "point": fused.tolist(),
                       "weights": weights.tolist(), "members": pool.names}
            else:
                fusion = LinearFusion(weights=np.array(doc["weights"]),
                                      intercept=float(doc["intercept"]))
                preds = pool.predict_all(s, args.horizon)
                rec = {"id": s.id, "point": fusion.apply(preds).tolist(),
                       "weights": fusion.weights.tolist(), "members": pool.names}
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
    return EXIT_OK


def cmd_coordinate(args) -> int:
    datasets = _load_dataset_dir(args.data)
    all_series = [s for name in sorted(datasets) for s in datasets[name]]
    if args.s1:
        s1 = _load_ar_model(args.s1)
    else:
        longest = max(all_series, key=len)
        s1 = ar_fit(longest.values, args.s1_order)
    large = TsfmForecaster(load_params(args.large))
    cfg = CoordinationConfig(tau1=args.tau, tau2=args.tau2 if args.tau2 is not None else args.tau,
                             lam=getattr(args, "lambda"))
    result = coordinate_train(s1, large, all_series, cfg, seed=args.seed,
                              horizon=args.horizon)
    routes = []
    for s in all_series:
        fc, tag = coordinate_infer(s1, result.s2, large, s, args.horizon, cfg)
        routes.append({"id": s.id, "route": tag, "forecast": fc.tolist()})
    _write_json(Path(args.output), {
        "config": {"tau1": cfg.tau1, "tau2": cfg.tau2, "lambda": cfg.lam},
        "n_easy": result.n_easy, "n_hard": result.n_hard,
        "n_challenging": result.n_challenging, "notice": result.notice,
        "s2": {"kind": "ar_fitted", "order": result.s2.order,
               "coef": result.s2.coef.tolist(), "intercept": result.s2.intercept,
               "residual_std": result.s2.residual_std},
        "routes": routes,
    })
    return EXIT_OK


def cmd_evaluate(args) -> int:
    datasets = _load_dataset_dir(args.data)
    models = []
    for token in args.models.split(","):
        token = token.strip()
        if token.endswith(".json"):
            path = Path(token)
            if not path.exists():
                raise DataError(f"model file not found: {path}")
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            if "arrays" in doc and "format_version" in doc:
                models.append(TsfmForecaster(load_params(path), name=path.stem))
            else:
                models.append(member_from_spec(doc, path.parent))
        else:
            models.append(member_from_shorthand(token))
    report = rolling_benchmark(models, datasets, args.horizon, n_origins=args.origins)
    records = report.to_records()
    out = Path(args.output)
    _write_report_csv(out, records,
                      ["model", "dataset", "windows", "mape", "one_minus_mape",
                       "wmape", "fa", "mean_nll", "zero_truth_points"])
    _write_json(out.with_suffix(".json"), {"rows": records})
    return EXIT_OK


def cmd_run_pipeline(args) -> int:
    config = load_pipeline_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    run_pipeline(config, args.output)
    return EXIT_OK


def cmd_version(_args) -> int:
    print(f"hybridcast {__version__}")
    return EXIT_OK


def cmd_info(_args) -> int:
    print(f"hybridcast {__version__}")
    print("subcommands: simulate augment decompose dro-weights train-tsfm forecast "
          "fuse-train fuse coordinate evaluate run-pipeline version info")
    print("exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="hybridcast",
                     description="Desk-scale hybrid time-series forecasting toolkit")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, output_default=None):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None)
        if output_default is not None:
            p.add_argument("--output", "--out", dest="output", default=output_default)
        else:
            p.add_argument("--output", "--out", dest="output", required=True)

    p = sub.add_parser("simulate", help="generate synthetic series")
    common(p)
    p.add_argument("--spec", help="JSON recipe file")
    p.add_argument("--skill-suite", action="store_true",
                   help="emit the seven-skill preset suite")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("augment", help="augment a series file")
    common(p)
    p.add_argument("--strategy", required=True, choices=["freq", "mbb", "dba", "mixup"])
    p.add_argument("--input", required=True)
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--mode", default="mean", choices=["mean", "sum"])
    p.add_argument("--period", type=int, default=None)
    p.add_argument("--block-len", type=int, default=None)
    p.add_argument("--variants", type=int, default=1)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--per-cluster", type=int, default=1)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--m", type=int, default=2)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("decompose", help="seasonal-trend decomposition")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--period", type=int, default=None)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("dro-weights", help="robust dataset weight dynamics")
    common(p)
    p.add_argument("--datasets", required=True, help="directory of .jsonl datasets")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--smoothing", type=float, default=0.1)
    p.set_defaults(func=cmd_dro_weights)

    p = sub.add_parser("train-tsfm", help="train the probabilistic forecaster")
    common(p)
    p.add_argument("--data", required=True, help="directory of .jsonl datasets")
    p.add_argument("--dro", action="store_true", help="robust dataset reweighting")
    p.add_argument("--steps", type=int, default=200)
    p.set_defaults(func=cmd_train_tsfm)

    p = sub.add_parser("forecast", help="probabilistic forecasts from a model file")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("fuse-train", help="train a fusion combiner over a pool")
    common(p)
    p.add_argument("--pool", required=True, help="pool member descriptor JSON")
    p.add_argument("--mode", default="router", choices=["router", "linear"])
    p.add_argument("--router-objective", default="best_member_ce",
                   choices=["best_member_ce", "end_to_end"])
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, default=8)
    p.add_argument("--origins", type=int, default=2)
    p.set_defaults(func=cmd_fuse_train)

    p = sub.add_parser("fuse", help="apply a trained fusion combiner")
    common(p)
    p.add_argument("--fusion", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("coordinate", help="large/small cascade with distillation")
    common(p)
    p.add_argument("--s1", default=None, help="fitted small-model JSON")
    p.add_argument("--s1-order", type=int, default=8)
    p.add_argument("--large", required=True, help="trained model file")
    p.add_argument("--tau", type=float, default=0.6)
    p.add_argument("--tau2", type=float, default=None)
    p.add_argument("--lambda", type=float, default=1.0, dest="lambda")
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, default=8)
    p.set_defaults(func=cmd_coordinate)

    p = sub.add_parser("evaluate", help="rolling-origin benchmark")
    common(p)
    p.add_argument("--models", required=True,
                   help="comma list: model files or shorthands like ar:8")
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--origins", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-pipeline", help="end-to-end run into a directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", required=True)
    p.add_argument("--output", "--out", dest="output", required=True)
    p.set_defaults(func=cmd_run_pipeline)

    p = sub.add_parser("version", help="print version")
    p.set_defaults(func=cmd_version)
    p = sub.add_parser("info", help="toolkit overview")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"data error: file not found: {exc.filename}\n")
        return EXIT_DATA
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except HybridcastError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
