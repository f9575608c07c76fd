"""End-to-end pipeline: load/simulate data, augment, weight datasets, train
the forecaster, forecast, fuse and evaluate, all into one run directory.

The whole run is a pure function of (config, seed, input files): artifacts
carry no timestamps, JSON is written with sorted keys and every randomized
stage derives its generator from the global seed plus a stage tag.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment as aug
from . import simulate as sim
from .baselines import ARForecaster, SESForecaster, SeasonalNaiveForecaster, ar_fit
from .core import TimeSeries, ingest, series_to_record, write_jsonl
from .dromix import GroupWeights, ReferenceLosses, fit_reference
from .errors import ConfigError, DataError
from .evaluate import iter_windows, rolling_benchmark, wmape
from .fusion import (CoordinationConfig, ModelPool, RouterParams, StatFeatureEmbedder,
                     coordinate_infer, coordinate_train, fit_linear_fusion,
                     route_fuse, train_router)
from .tsfm import ModelConfig, TsfmForecaster, save_params, train

log = logging.getLogger(__name__)

PROVENANCE_CLASSES = ("real_world", "simulation_augmentation", "mixup")


def _check_keys(data: dict, allowed: set[str], where: str):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")


@dataclass
class PipelineConfig:
    """Validated pipeline settings; unknown keys are rejected on load."""

    seed: int = 0
    data_files: list[str] = field(default_factory=list)
    simulated: list[dict] = field(default_factory=list)
    augment: dict = field(default_factory=dict)
    dro: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train_steps: int = 200
    fusion: dict = field(default_factory=dict)
    coordination: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        _check_keys(raw, {"seed", "data", "augment", "dro", "model", "train_steps",
                          "fusion", "coordination", "evaluation"}, "pipeline config")
        data = raw.get("data", {})
        _check_keys(data, {"files", "simulated"}, "data")
        for entry in data.get("simulated", []):
            _check_keys(entry, {"name", "n_series", "spec", "vary_phase"}, "data.simulated[]")
        augment_cfg = raw.get("augment", {})
        _check_keys(augment_cfg, {"mbb", "freq", "dba", "mixup"}, "augment")
        if "mbb" in augment_cfg:
            _check_keys(augment_cfg["mbb"], {"period", "block_len", "variants"}, "augment.mbb")
        if "freq" in augment_cfg:
            _check_keys(augment_cfg["freq"], {"factor", "mode"}, "augment.freq")
        if "dba" in augment_cfg:
            _check_keys(augment_cfg["dba"], {"k", "per_cluster"}, "augment.dba")
        if "mixup" in augment_cfg:
            _check_keys(augment_cfg["mixup"], {"m", "alpha", "variants"}, "augment.mixup")
        dro = raw.get("dro", {})
        _check_keys(dro, {"enabled", "eta", "smoothing", "update_every", "mode"}, "dro")
        fusion = raw.get("fusion", {})
        _check_keys(fusion, {"enabled", "mode", "horizon", "origins", "ar_order"}, "fusion")
        coordination = raw.get("coordination", {})
        _check_keys(coordination, {"enabled", "tau1", "tau2", "lambda", "s1_order",
                                   "horizon"}, "coordination")
        evaluation = raw.get("evaluation", {})
        _check_keys(evaluation, {"horizon", "origins", "min_history"}, "evaluation")
        model = raw.get("model", {})
        ModelConfig.from_dict(model)  # validates keys and values
        return cls(
            seed=int(raw.get("seed", 0)),
            data_files=list(data.get("files", [])),
            simulated=list(data.get("simulated", [])),
            augment=augment_cfg, dro=dro, model=model,
            train_steps=int(raw.get("train_steps", 200)),
            fusion=fusion, coordination=coordination, evaluation=evaluation,
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "data": {"files": self.data_files, "simulated": self.simulated},
            "augment": self.augment, "dro": self.dro, "model": self.model,
            "train_steps": self.train_steps, "fusion": self.fusion,
            "coordination": self.coordination, "evaluation": self.evaluation,
        }


def load_pipeline_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return PipelineConfig.from_dict(json.load(fh))


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def _write_report_csv(path: Path, records: list[dict], columns: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for rec in records:
            writer.writerow({k: rec.get(k) for k in columns})


def build_inventory(datasets_by_class: dict[str, dict[str, list[TimeSeries]]]) -> list[dict]:
    """Data accounting rows: datasets, entries and points per provenance
    class, plus a total row."""
    rows = []
    totals = {"datasets": 0, "entries": 0, "points": 0}
    for cls in PROVENANCE_CLASSES:
        datasets = datasets_by_class.get(cls, {})
        n_datasets = len(datasets)
        n_entries = sum(len(v) for v in datasets.values())
        n_points = sum(len(s) for v in datasets.values() for s in v)
        rows.append({"provenance": cls, "datasets": n_datasets,
                     "entries": n_entries, "points": n_points})
        totals["datasets"] += n_datasets
        totals["entries"] += n_entries
        totals["points"] += n_points
    rows.append({"provenance": "total", **totals})
    return rows


def _load_datasets(config: PipelineConfig) -> dict[str, dict[str, list[TimeSeries]]]:
    by_class: dict[str, dict[str, list[TimeSeries]]] = {
        "real_world": {}, "simulation_augmentation": {}, "mixup": {}}
    for path in config.data_files:
        p = Path(path)
        if not p.exists():
            raise DataError(f"input file not found: {p}")
        by_class["real_world"][p.stem] = ingest(p, "jsonl")
    for entry in config.simulated:
        spec = sim.spec_from_dict(entry["spec"])
        n_series = int(entry.get("n_series", 1))
        series = []
        for i in range(n_series):
            spec_i = sim.SyntheticSpec(
                length=spec.length, trend=spec.trend,
                season=_vary_phase(spec.season, i) if entry.get("vary_phase") else spec.season,
                noise=spec.noise, composition=spec.composition,
                transition=spec.transition, discontinuous=spec.discontinuous,
                freq=spec.freq, id=f"{spec.id}/{i}")
            series.append(sim.generate(spec_i, seed=config.seed + i))
        by_class["simulation_augmentation"][entry["name"]] = series
    if not any(by_class.values()):
        raise DataError("pipeline config declares no data")
    return by_class


def _vary_phase(season: sim.SeasonSpec | None, i: int) -> sim.SeasonSpec | None:
    if season is None or season.kind != "cosine":
        return season
    return sim.SeasonSpec(kind=season.kind, period=season.period,
                          amplitude=season.amplitude,
                          phase=season.phase + 0.7 * i, template=season.template)


def _apply_augmentations(config: PipelineConfig,
                         by_class: dict[str, dict[str, list[TimeSeries]]]) -> None:
    base = {**by_class["real_world"], **by_class["simulation_augmentation"]}
    acfg = config.augment
    if "freq" in acfg:
        fcfg = acfg["freq"]
        for name, series_list in sorted(base.items()):
            out = [aug.frequency_aggregate(s, int(fcfg.get("factor", 2)),
                                           fcfg.get("mode", "mean"))
                   for s in series_list if len(s) >= int(fcfg.get("factor", 2)) * 4]
            if out:
                by_class["simulation_augmentation"][f"{name}_freq"] = out
    if "mbb" in acfg:
        mcfg = acfg["mbb"]
        for name, series_list in sorted(base.items()):
            out = []
            for s in series_list:
                period = int(mcfg.get("period", s.freq.steps_per_cycle))
                if len(s) < 2 * period:
                    continue
                out.extend(aug.mbb_augment(
                    s, period=period, block_len=mcfg.get("block_len"),
                    n_variants=int(mcfg.get("variants", 1)), seed=config.seed))
            if out:
                by_class["simulation_augmentation"][f"{name}_mbb"] = out
    if "dba" in acfg:
        dcfg = acfg["dba"]
        for name, series_list in sorted(base.items()):
            k = min(int(dcfg.get("k", 2)), len(series_list))
            if k < 1 or len(series_list) < 2:
                continue
            out = aug.dba_augment(series_list, k=k,
                                  per_cluster=int(dcfg.get("per_cluster", 1)),
                                  seed=config.seed)
            if out:
                by_class["simulation_augmentation"][f"{name}_dba"] = out
    if "mixup" in acfg:
        xcfg = acfg["mixup"]
        for name, series_list in sorted(base.items()):
            m = int(xcfg.get("m", 2))
            if len(series_list) < m:
                continue
            out = aug.mixup_augment(series_list, m=m,
                                    alpha=float(xcfg.get("alpha", 1.0)),
                                    n_variants=int(xcfg.get("variants", 1)),
                                    seed=config.seed)
            by_class["mixup"][f"{name}_mixup"] = out


def _build_pool(params, config: PipelineConfig, period: int) -> ModelPool:
    order = int(config.fusion.get("ar_order", min(8, period)))
    return ModelPool(members=[
        ("seasonal_naive", SeasonalNaiveForecaster(period)),
        ("ses", SESForecaster(0.3)),
        ("ar", ARForecaster(order)),
        ("tsfm", TsfmForecaster(params)),
    ])


def run_pipeline(config: PipelineConfig, output_dir) -> Path:
    """Execute every configured stage; artifacts land in ``output_dir``.

    Any stage failure raises after logging the completed artifact paths.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    completed: list[str] = []

    def stage(name: str):
        log.info("pipeline stage: %s", name)
        completed.append(name)

    try:
        stage("resolve-config")
        _write_json(out / "resolved_config.json", config.to_dict())

        stage("load-data")
        by_class = _load_datasets(config)

        stage("augment")
        if config.augment:
            _apply_augmentations(config, by_class)
        training_data: dict[str, list[TimeSeries]] = {}
        for cls in PROVENANCE_CLASSES:
            training_data.update(by_class[cls])
        for name, series_list in sorted(training_data.items()):
            write_jsonl(series_list, out / f"data_{name}.jsonl")

        stage("inventory")
        inventory = build_inventory(by_class)
        _write_json(out / "inventory.json", {"rows": inventory})
        _write_report_csv(out / "inventory.csv", inventory,
                          ["provenance", "datasets", "entries", "points"])

        dro_weights = None
        reference = None
        if config.dro.get("enabled", False):
            stage("dro-reference")
            ref = {name: fit_reference(series_list, "ar", loss="gaussian_nll")
                   for name, series_list in sorted(training_data.items())}
            reference = ReferenceLosses(losses=ref)
            dro_weights = GroupWeights.uniform(
                sorted(training_data), eta=float(config.dro.get("eta", 0.1)),
                smoothing=float(config.dro.get("smoothing", 0.1)))

        stage("train-tsfm")
        model_cfg = ModelConfig.from_dict({**config.model, "seed": config.seed})
        result = train(model_cfg, training_data, dro=dro_weights,
                       steps=config.train_steps, seed=config.seed,
                       dro_update_every=int(config.dro.get("update_every", 20)),
                       dro_mode=config.dro.get("mode", "sample"),
                       reference_losses=reference)
        save_params(result.params, out / "model.json")
        _write_json(out / "training_log.json", {
            "loss_trajectory": result.loss_trajectory,
            "weight_trajectory": result.weight_trajectory,
            "reference_losses": result.reference_losses,
        })

        stage("forecast")
        horizon = int(config.evaluation.get("horizon", 8))
        from .tsfm import forecast as tsfm_forecast
        with open(out / "forecasts.jsonl", "w", encoding="utf-8") as fh:
            for name, series_list in sorted(training_data.items()):
                for s in series_list:
                    fc = tsfm_forecast(result.params, s, horizon)
                    fh.write(json.dumps({
                        "id": s.id, "dataset": name,
                        "point": [float(x) for x in fc.point],
                        "mu": [float(x) for x in fc.mu],
                        "sigma": [float(x) for x in fc.sigma],
                        "nu": [float(x) for x in fc.nu],
                        "confidence": fc.confidence,
                    }, sort_keys=True))
                    fh.write("\n")

        period = max(s.freq.steps_per_cycle for v in training_data.values() for s in v)
        pool = _build_pool(result.params, config, period)

        fused_records = []
        if config.fusion.get("enabled", False):
            stage("fusion")
            fuse_horizon = int(config.fusion.get("horizon", horizon))
            origins = int(config.fusion.get("origins", 2))
            embedder = StatFeatureEmbedder()
            if config.fusion.get("mode", "router") == "linear":
                rows, truths = [], []
                for name in sorted(training_data):
                    for s in training_data[name]:
                        for history, truth in iter_windows(s, fuse_horizon, origins):
                            preds = pool.predict_all(s.with_values(history), truth.size)
                            rows.append(preds.T)
                            truths.append(truth)
                if not rows:
                    raise DataError("no linear fusion training windows")
                fusion = fit_linear_fusion(np.concatenate(rows), np.concatenate(truths))
                _write_json(out / "fusion.json", {
                    "type": "linear", "pool": pool.names,
                    "weights": fusion.weights.tolist(), "intercept": fusion.intercept,
                    "ridge_fallback": fusion.ridge_fallback,
                })
            else:
                router = train_router(pool, embedder, training_data, seed=config.seed,
                                      horizon=fuse_horizon, n_origins=origins)
                _write_json(out / "fusion.json", {
                    "type": "router", "pool": pool.names,
                    "feature_dim": int(router.w1.shape[0]),
                    "hidden": int(router.w1.shape[1]),
                    "arrays": {k: v.tolist() for k, v in router.arrays().items()},
                    "feat_mean": router.feat_mean.tolist(),
                    "feat_std": router.feat_std.tolist(),
                })
                fused_records = _routed_report(router, embedder, pool, training_data,
                                               fuse_horizon)

        stage("evaluate")
        eval_origins = int(config.evaluation.get("origins", 1))
        report = rolling_benchmark(pool.forecasters, training_data, horizon,
                                   n_origins=eval_origins)
        records = report.to_records() + fused_records
        _write_json(out / "report.json", {"rows": records})
        _write_report_csv(out / "report.csv", records,
                          ["model", "dataset", "windows", "mape", "one_minus_mape",
                           "wmape", "fa", "mean_nll", "zero_truth_points"])

        if config.coordination.get("enabled", False):
            stage("coordination")
            _run_coordination(config, training_data, result.params, out, horizon)
    except Exception:
        log.error("pipeline failed after stages %s; artifacts in %s", completed, out)
        raise
    return out


def _routed_report(router: RouterParams, embedder, pool: ModelPool,
                   datasets: dict[str, list[TimeSeries]], horizon: int) -> list[dict]:
    records = []
    for name, series_list in sorted(datasets.items()):
        wmapes = []
        windows = 0
        for s in series_list:
            per_series = []
            for history, truth in iter_windows(s, horizon, 1):
                if np.sum(np.abs(truth)) == 0:
                    continue
                fused, _ = route_fuse(router, embedder, s.with_values(history),
                                      pool, truth.size)
                per_series.append(wmape(truth, fused))
                windows += 1
            if per_series:
                wmapes.append(float(np.mean(per_series)))
        if wmapes:
            mean_wmape = float(np.mean(wmapes))
            records.append({"model": "router_fusion", "dataset": name,
                            "windows": windows, "mape": None, "one_minus_mape": None,
                            "wmape": mean_wmape, "fa": 1.0 - mean_wmape,
                            "mean_nll": None, "zero_truth_points": 0})
    return records


def _run_coordination(config: PipelineConfig, datasets: dict[str, list[TimeSeries]],
                      params, out: Path, horizon: int) -> None:
    ccfg = CoordinationConfig(tau1=float(config.coordination.get("tau1", 0.6)),
                              tau2=float(config.coordination.get("tau2", 0.6)),
                              lam=float(config.coordination.get("lambda", 1.0)))
    all_series = [s for v in datasets.values() for s in v]
    order = int(config.coordination.get("s1_order", 4))
    longest = max(all_series, key=len)
    s1 = ar_fit(longest.values, order)
    large = TsfmForecaster(params)
    chorizon = int(config.coordination.get("horizon", horizon))
    result = coordinate_train(s1, large, all_series, ccfg, seed=config.seed,
                              horizon=chorizon)
    routes = []
    for s in all_series:
        forecast_vals, tag = coordinate_infer(s1, result.s2, large, s, chorizon, ccfg)
        routes.append({"id": s.id, "route": tag,
                       "forecast": [float(x) for x in forecast_vals]})
    _write_json(out / "coordination.json", {
        "config": {"tau1": ccfg.tau1, "tau2": ccfg.tau2, "lambda": ccfg.lam},
        "n_easy": result.n_easy, "n_hard": result.n_hard,
        "n_challenging": result.n_challenging, "notice": result.notice,
        "routes": routes,
    })
