"""Batch command-line pipeline.

Stages hand off through fixed file names under --out-dir:

    synth generate   -> inputs/ (tracts, venues, transitions, crimes, ...)
    ingest           -> tracts_kept.geojson, venues_resolved.csv,
                        transitions_resolved.csv, crimes_resolved.csv,
                        ingest_meta.json, drop_report.json
    network build    -> adjacency_edges.csv, od_edges_<y>.csv,
                        sp_edges_<y>.csv, passthrough_<y>.csv, network_report.json
    features build   -> panel_<y>.csv
    explain          -> explain_report.json
    forecast         -> forecast_report.json
    report           -> table1.txt, table2.txt, temporal_profiles.csv

Settings precedence: built-in defaults < --config file < CRIMEFLOWS_*
environment variables < command-line flags. Every stage records inputs,
outputs, settings, and timing in run_manifest.json.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import flownet, forecast, ingest, panel, pglm, runio, synthcity
from .errors import ConfigError, ConvergenceError, CrimeflowsError, ParseError, ValidationError

log = logging.getLogger("crimeflows")


def _iso_utc(series) -> pd.Series:
    return pd.DatetimeIndex(series).strftime("%Y-%m-%dT%H:%M:%S+00:00")


def _settings(args) -> dict:
    cfg = runio.load_config(getattr(args, "config", None))
    merged = {
        "seed": 0,
        "threads": 1,
        "tz": "UTC",
        "out_dir": "out",
        "filters": {"pop_min": 100, "checkin_min": 100},
    }
    merged.update({k: v for k, v in cfg.items() if v is not None})
    for key, val in runio.env_overrides().items():
        merged[key] = val
    for key in ("seed", "threads", "tz", "out_dir"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            merged[key] = val
    merged["out_dir"] = Path(merged["out_dir"])
    merged["config_doc"] = cfg
    return merged


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path.name} not found; run `crimeflows {producer}` first")
    return path


def _read_meta(out_dir: Path) -> dict:
    with open(_require(out_dir / "ingest_meta.json", "ingest")) as fh:
        return json.load(fh)


def _load_kept_world(out_dir: Path):
    tracts = ingest.parse_tracts(_require(out_dir / "tracts_kept.geojson", "ingest"))
    venues = pd.read_csv(_require(out_dir / "venues_resolved.csv", "ingest"),
                         dtype=str, keep_default_na=False)
    venues.loc[venues["tract_id"] == "", "tract_id"] = None
    transitions = ingest.parse_transitions(
        _require(out_dir / "transitions_resolved.csv", "ingest"))
    return tracts, venues, transitions


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_synth_generate(args) -> int:
    st = _settings(args)
    t0 = time.monotonic()
    synth_cfg_doc = dict(st["config_doc"].get("synth", {}))
    synth_cfg_doc.setdefault("seed", st["seed"])
    if getattr(args, "grid", None):
        w, h = (int(x) for x in args.grid.split("x"))
        synth_cfg_doc["grid_w"], synth_cfg_doc["grid_h"] = w, h
    if getattr(args, "volume", None):
        synth_cfg_doc["transition_volume"] = args.volume
    if getattr(args, "years", None):
        synth_cfg_doc["n_years"] = args.years
    try:
        cfg = synthcity.SynthConfig(**synth_cfg_doc)
    except TypeError as exc:
        raise ConfigError(f"unknown synth config field: {exc}") from exc
    ds = synthcity.generate_dataset(cfg)
    inputs_dir = st["out_dir"] / "inputs"
    truth_dir = st["out_dir"] / "ground_truth"
    meta = synthcity.write_dataset(ds, inputs_dir, truth_dir)
    outputs = sorted(str(p) for p in inputs_dir.iterdir())
    manifest = runio.Manifest(st["out_dir"])
    manifest.record_stage("synth_generate", {}, outputs, cfg.to_dict(),
                          time.monotonic() - t0,
                          {"train_year": meta["train_year"], "eval_year": meta["eval_year"]})
    log.info("synthetic city written to %s (%d transitions)", inputs_dir, len(ds.transitions))
    return 0


def cmd_ingest(args) -> int:
    st = _settings(args)
    out_dir = st["out_dir"]
    t0 = time.monotonic()
    inputs_dir = out_dir / "inputs"
    dataset_meta = {}
    if (inputs_dir / "dataset.json").exists():
        with open(inputs_dir / "dataset.json") as fh:
            dataset_meta = json.load(fh)

    def pick(flag, key, required=True):
        if flag:
            return Path(flag)
        name = dataset_meta.get("files", {}).get(key)
        if name:
            return inputs_dir / name
        if required:
            raise ConfigError(f"no --{key.replace('_', '-')} given and no generated input found")
        return None

    tracts_path = pick(args.tracts, "tracts")
    venues_path = pick(args.venues, "venues")
    mapping_path = pick(args.category_mapping, "category_mapping")
    crimes_path = pick(args.crimes, "crimes")
    covariates_path = pick(args.covariates, "covariates", required=False)
    checkins_path = Path(args.checkins) if args.checkins else None
    transitions_path = None if checkins_path else pick(args.transitions, "transitions")

    years_cfg = st["config_doc"].get("years", {})
    train_year = args.year or years_cfg.get("train") or dataset_meta.get("train_year")
    if train_year is None:
        raise ConfigError("train year unknown: pass --year or set years.train in the config")
    eval_year = args.eval_year or years_cfg.get("eval") or dataset_meta.get("eval_year")
    tz = st["tz"] if st["tz"] != "UTC" else dataset_meta.get("tz", st["tz"])

    tracts_all = ingest.parse_tracts(tracts_path)
    mapping = ingest.load_category_mapping(mapping_path)
    venues = ingest.parse_venues(venues_path, mapping)
    if checkins_path:
        transitions = ingest.derive_transitions(ingest.parse_checkins(checkins_path, tz))
    else:
        transitions = ingest.parse_transitions(transitions_path, tz)
    crimes = ingest.parse_crimes(crimes_path,
                                 types_filter=tuple(args.crime_types.split(","))
                                 if args.crime_types else ingest.CRIME_TYPES, tz=tz)

    # filter tracts on the train year's check-in counts, then re-resolve
    venues_all = ingest.resolve_venues(venues, tracts_all)
    annual = ingest.annual_checkin_counts(transitions, venues_all, tracts_all,
                                          int(train_year), tz)
    filters = st["filters"]
    kept = ingest.filter_tracts(tracts_all, annual,
                                pop_min=int(filters.get("pop_min", 100)),
                                checkin_min=int(filters.get("checkin_min", 100)))
    venues_kept = ingest.resolve_venues(venues, kept)
    crimes_kept, crimes_unassigned = ingest.resolve_crimes(crimes, kept)

    out_tracts = ingest.tracts_to_geojson(kept)
    runio.atomic_write_json(out_dir / "tracts_kept.geojson", out_tracts)
    venues_out = venues_kept.copy()
    venues_out["tract_id"] = venues_out["tract_id"].fillna("")
    runio.atomic_write_df(out_dir / "venues_resolved.csv", venues_out)
    tr_out = transitions.copy()
    tr_out["start_ts"] = _iso_utc(tr_out["start_ts"])
    tr_out["end_ts"] = _iso_utc(tr_out["end_ts"])
    runio.atomic_write_df(out_dir / "transitions_resolved.csv", tr_out)
    crimes_out = crimes_kept.copy()
    if len(crimes_out):
        crimes_out["ts"] = _iso_utc(crimes_out["ts"])
    crimes_out["tract_id"] = crimes_out["tract_id"].fillna("")
    runio.atomic_write_df(out_dir / "crimes_resolved.csv", crimes_out)

    has_covariates = covariates_path is not None and Path(covariates_path).exists()
    if has_covariates:
        runio.atomic_write_text(out_dir / "covariates_resolved.csv",
                                Path(covariates_path).read_text())
    meta = {
        "train_year": int(train_year),
        "eval_year": int(eval_year) if eval_year is not None else None,
        "tz": tz,
        "n_tracts_raw": len(tracts_all),
        "n_tracts_kept": len(kept),
        "has_covariates": has_covariates,
    }
    runio.atomic_write_json(out_dir / "ingest_meta.json", meta)
    drop_report = {
        "tracts_dropped": len(tracts_all) - len(kept),
        "crime_incidents_outside_tracts": crimes_unassigned,
        "venues_outside_tracts": int((venues_kept["tract_id"].isna()).sum()),
    }
    runio.atomic_write_json(out_dir / "drop_report.json", drop_report)

    manifest = runio.Manifest(out_dir)
    manifest.record_stage(
        "ingest",
        {"tracts": tracts_path, "venues": venues_path, "mapping": mapping_path,
         "transitions": transitions_path or checkins_path, "crimes": crimes_path},
        [out_dir / n for n in ("tracts_kept.geojson", "venues_resolved.csv",
                               "transitions_resolved.csv", "crimes_resolved.csv",
                               "ingest_meta.json", "drop_report.json")],
        {"filters": filters, "train_year": int(train_year), "tz": tz},
        time.monotonic() - t0, {"drops": drop_report})
    log.info("kept %d of %d tracts", len(kept), len(tracts_all))
    return 0


def _years(meta: dict) -> list[int]:
    years = [meta["train_year"]]
    if meta.get("eval_year") is not None:
        years.append(meta["eval_year"])
    return years


def cmd_network_build(args) -> int:
    st = _settings(args)
    out_dir = st["out_dir"]
    t0 = time.monotonic()
    meta = _read_meta(out_dir)
    tracts, venues, transitions = _load_kept_world(out_dir)
    if args.adjacency:
        adj = flownet.load_custom_adjacency(args.adjacency, tracts)
    else:
        adj = flownet.build_queen_adjacency(tracts)
    runio.atomic_write_df(
        out_dir / "adjacency_edges.csv",
        pd.DataFrame(adj.edges(), columns=["tract_a", "tract_b"]))

    cache = flownet.PathCache(adj)
    report = {"adjacency": "custom" if args.adjacency else "queen",
              "n_nodes": len(adj.nodes), "n_edges": adj.n_edges(), "years": {}}
    outputs = [out_dir / "adjacency_edges.csv"]
    for year in _years(meta):
        od, od_drops = flownet.build_od_network(transitions, venues, tracts,
                                                year=year, tz=meta["tz"])
        sp, sp_rep = flownet.build_shortest_path_network(adj, od, cache=cache)
        pt, _ = flownet.pass_through_counts(adj, od, cache=cache)
        runio.atomic_write_df(out_dir / f"od_edges_{year}.csv", flownet.export_edges(od))
        runio.atomic_write_df(out_dir / f"sp_edges_{year}.csv", flownet.export_edges(sp))
        pt_df = pd.DataFrame({
            "tract_id": np.repeat(np.asarray(pt.ids, dtype=object), panel.HOURS_PER_WEEK),
            "t": np.tile(np.arange(panel.HOURS_PER_WEEK), len(pt.ids)),
            "count": pt.counts.reshape(-1),
        })
        runio.atomic_write_df(out_dir / f"passthrough_{year}.csv", pt_df)
        outputs += [out_dir / f"{n}_{year}.csv" for n in ("od_edges", "sp_edges", "passthrough")]
        report["years"][str(year)] = {
            "distinct_od_pairs": len(od.weights),
            "transitions_routed": int(od.total_by_hour().sum()),
            **od_drops, **sp_rep,
        }
    report["paths_computed"] = cache.paths_computed
    runio.atomic_write_json(out_dir / "network_report.json", report)
    outputs.append(out_dir / "network_report.json")

    manifest = runio.Manifest(out_dir)
    manifest.record_stage("network_build",
                          {"transitions": out_dir / "transitions_resolved.csv"},
                          outputs, {"adjacency": report["adjacency"]},
                          time.monotonic() - t0,
                          {"paths_computed": cache.paths_computed})
    log.info("networks built for years %s (%d paths computed)",
             _years(meta), cache.paths_computed)
    return 0


def _passthrough_grid(out_dir: Path, year: int, tracts) -> np.ndarray:
    path = _require(out_dir / f"passthrough_{year}.csv", "network build")
    df = pd.read_csv(path, dtype={"tract_id": str})
    grid = np.zeros((len(tracts), panel.HOURS_PER_WEEK), dtype=np.int64)
    rows = df["tract_id"].map(tracts.index).to_numpy()
    grid[rows, df["t"].to_numpy()] = df["count"].to_numpy()
    return grid


def cmd_features_build(args) -> int:
    st = _settings(args)
    out_dir = st["out_dir"]
    t0 = time.monotonic()
    meta = _read_meta(out_dir)
    tracts, venues, transitions = _load_kept_world(out_dir)
    crimes = pd.read_csv(_require(out_dir / "crimes_resolved.csv", "ingest"),
                         dtype=str, keep_default_na=False)
    if len(crimes):
        crimes["ts"] = pd.to_datetime(crimes["ts"], utc=True, format="ISO8601")
        crimes[["lon", "lat"]] = crimes[["lon", "lat"]].astype(float)
        crimes.loc[crimes["tract_id"] == "", "tract_id"] = None

    covariates = None
    cov_path = args.covariates or (
        out_dir / "covariates_resolved.csv" if meta.get("has_covariates") else None)
    if args.with_covariates:
        if not cov_path:
            raise ConfigError("--with-covariates needs a covariates file")
        covariates = panel.load_covariates(cov_path, tracts)

    tz = meta["tz"]
    outputs = []
    drops: dict[str, dict] = {}
    for year in _years(meta):
        if args.activity_split:
            checkins, per_act, d1 = panel.aggregate_checkins(
                transitions, venues, tracts, year=year, tz=tz, by_activity=True)
        else:
            per_act = None
            checkins, d1 = panel.aggregate_checkins(
                transitions, venues, tracts, year=year, tz=tz)
        inout, selfloop, d2 = panel.decompose_flows(transitions, venues, tracts,
                                                    year=year, tz=tz)
        crime, d3 = panel.aggregate_crime(crimes, tracts, year, tz=tz,
                                          crime_type=args.crime_type)
        past, d4 = panel.aggregate_crime(crimes, tracts, year - 1, tz=tz,
                                         crime_type=args.crime_type)
        passthrough = _passthrough_grid(out_dir, year, tracts)
        p = panel.assemble_panel(tracts, year, crime, past, checkins, inout,
                                 selfloop, passthrough, activity=per_act,
                                 covariates=covariates)
        out_path = out_dir / f"panel_{year}.csv"
        runio.atomic_write_df(out_path, p.frame)
        outputs.append(out_path)
        drops[str(year)] = {**d1, **d2, **d3, "past_" + next(iter(d4)): d4["crime_incidents_dropped"]}

    manifest = runio.Manifest(out_dir)
    manifest.record_stage("features_build",
                          {"transitions": out_dir / "transitions_resolved.csv",
                           "crimes": out_dir / "crimes_resolved.csv"},
                          outputs,
                          {"activity_split": bool(args.activity_split),
                           "crime_type": args.crime_type,
                           "covariates": bool(covariates is not None)},
                          time.monotonic() - t0, {"drops": drops})
    log.info("panels written for years %s", _years(meta))
    return 0


def cmd_explain(args) -> int:
    st = _settings(args)
    out_dir = st["out_dir"]
    t0 = time.monotonic()
    meta = _read_meta(out_dir)
    year = meta["train_year"]
    panel_path = out_dir / f"panel_{year}.csv"
    if not panel_path.exists():
        raise ConfigError("panel not found; run `crimeflows features build` first")
    p = panel.Panel.read_csv(panel_path, year=year)
    explain_cfg = st["config_doc"].get("explain", {})
    extra = tuple(panel.COVARIATE_COLUMNS) if args.with_covariates else ()
    if extra and not set(extra) <= set(p.frame.columns):
        raise ConfigError("panel has no covariate columns; "
                          "run `crimeflows features build --with-covariates`")
    suite = pglm.model_suite(
        p, extra_regressors=extra,
        irr_scale=float(explain_cfg.get("irr_scale", 100.0)),
        tolerance=float(explain_cfg.get("tolerance", 1e-8)),
        max_iter=int(explain_cfg.get("max_iter", 100)),
        threads=int(st["threads"]))
    report = runio.json_safe(suite.to_dict())
    report["year"] = year
    runio.atomic_write_json(out_dir / "explain_report.json", report)

    manifest = runio.Manifest(out_dir)
    manifest.record_stage("explain", {"panel": panel_path},
                          [out_dir / "explain_report.json"],
                          {"covariates": bool(extra), "irr_scale":
                           float(explain_cfg.get("irr_scale", 100.0))},
                          time.monotonic() - t0)
    if not all(fit.converged for fit in suite.fits.values()):
        raise ConvergenceError("one or more explanatory fits did not converge")
    log.info("explanatory suite done: best AIC %s",
             suite.aic_table().sort_values("aic").iloc[0]["model"])
    return 0


def cmd_forecast(args) -> int:
    st = _settings(args)
    out_dir = st["out_dir"]
    t0 = time.monotonic()
    meta = _read_meta(out_dir)
    if meta.get("eval_year") is None:
        raise ConfigError("forecasting needs an evaluation year; "
                          "re-run ingest with --eval-year")
    train_path = out_dir / f"panel_{meta['train_year']}.csv"
    eval_path = out_dir / f"panel_{meta['eval_year']}.csv"
    for path in (train_path, eval_path):
        if not path.exists():
            raise ConfigError("panel not found; run `crimeflows features build` first")
    p_train = panel.Panel.read_csv(train_path, year=meta["train_year"])
    p_eval = panel.Panel.read_csv(eval_path, year=meta["eval_year"])

    fc = st["config_doc"].get("forecast", {})
    en = fc.get("en", {})
    rf = fc.get("rf", {})
    cfg = forecast.ForecastConfig(
        en_lambdas=tuple(en.get("lambdas", forecast.DEFAULT_LAMBDAS)),
        en_alphas=tuple(en.get("alphas", forecast.DEFAULT_ALPHAS)),
        rf_trees=tuple(rf.get("trees", forecast.DEFAULT_TREES)),
        rf_depths=tuple(None if d in (None, "none") else int(d)
                        for d in rf.get("depths", forecast.DEFAULT_DEPTHS)),
        rf_max_features=tuple(rf.get("max_features", forecast.DEFAULT_MAX_FEATURES)),
        folds=int(fc.get("folds", 5)),
        seed=int(st["seed"]),
        variants=tuple(fc.get("variants", ("1a", "1b", "2a", "2b"))),
        covariates=bool(args.with_covariates),
        threads=int(st["threads"]),
    )
    report = forecast.prediction_suite(p_train, p_eval, cfg)
    runio.atomic_write_json(out_dir / "forecast_report.json",
                            runio.json_safe(report.to_dict()))

    manifest = runio.Manifest(out_dir)
    manifest.record_stage("forecast", {"panel_train": train_path, "panel_eval": eval_path},
                          [out_dir / "forecast_report.json"],
                          cfg.to_dict(), time.monotonic() - t0)
    log.info("forecast suite done: historical MSE %.3f", report.historical.mse)
    return 0


def _format_table(df: pd.DataFrame) -> str:
    return df.to_string(index=False, float_format=lambda x: f"{x:.4f}") + "\n"


def cmd_report(args) -> int:
    st = _settings(args)
    out_dir = st["out_dir"]
    t0 = time.monotonic()
    meta = _read_meta(out_dir)
    outputs = []
    explain_path = out_dir / "explain_report.json"
    forecast_path = out_dir / "forecast_report.json"
    if not explain_path.exists() and not forecast_path.exists():
        raise ConfigError("no model reports found; run `crimeflows explain` "
                          "or `crimeflows forecast` first")

    if explain_path.exists():
        with open(explain_path) as fh:
            doc = json.load(fh)
        rows = []
        for name in ("baseline", "1a", "1b", "2a", "2b"):
            m = doc["models"].get(name)
            if m:
                rows.append({"model": name, "regressors": ", ".join(m["regressors"]),
                             "aic": m["aic"], "log_likelihood": m["log_likelihood"]})
        text = _format_table(pd.DataFrame(rows))
        text += "\nLikelihood-ratio tests\n"
        for pair, res in doc["lr_tests"].items():
            text += (f"  {pair}: statistic={res['statistic']:.2f} "
                     f"df={res['df']} p={res['p_value']:.2e}\n")
        runio.atomic_write_text(out_dir / "table1.txt", text)
        outputs.append(out_dir / "table1.txt")

    if forecast_path.exists():
        with open(forecast_path) as fh:
            doc = json.load(fh)
        report = forecast.EvalReport(
            historical=forecast.Metrics(**{k: (float("nan") if v is None else v)
                                           for k, v in doc["historical"].items()}),
            models=doc["models"], wilcoxon=doc["wilcoxon"],
            n_tracts=doc["n_tracts"], train_year=doc["train_year"],
            eval_year=doc["eval_year"], config=doc["config"])
        runio.atomic_write_text(out_dir / "table2.txt", _format_table(report.table()))
        outputs.append(out_dir / "table2.txt")

    panel_path = out_dir / f"panel_{meta['train_year']}.csv"
    if panel_path.exists():
        frame = pd.read_csv(panel_path, dtype={"tract_id": str})
        profiles = frame[["tract_id", "t", "crime", "checkins", "passthrough_flow"]]
        runio.atomic_write_df(out_dir / "temporal_profiles.csv", profiles)
        outputs.append(out_dir / "temporal_profiles.csv")

    manifest = runio.Manifest(out_dir)
    manifest.record_stage("report", {}, outputs, {}, time.monotonic() - t0)
    log.info("report tables written: %s", [p.name for p in outputs])
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crimeflows",
        description="Mobility-flow features and crime models over venue transitions")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--threads", type=int, help="worker threads (results invariant)")
    common.add_argument("--tz", help="study timezone (default UTC)")
    common.add_argument("--out-dir", dest="out_dir", help="output directory (default ./out)")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthetic data").add_subparsers(
        dest="subcommand", required=True)
    gen = synth.add_parser("generate", parents=[common],
                           help="generate a synthetic city with known ground truth")
    gen.add_argument("--grid", help="tract grid as WxH, e.g. 10x5")
    gen.add_argument("--volume", type=int, help="expected transitions per year")
    gen.add_argument("--years", type=int, help="number of study years")
    gen.set_defaults(func=cmd_synth_generate)

    ing = sub.add_parser("ingest", parents=[common],
                         help="parse, validate, and filter the raw inputs")
    ing.add_argument("--tracts")
    ing.add_argument("--venues")
    ing.add_argument("--category-mapping", dest="category_mapping")
    ing.add_argument("--transitions")
    ing.add_argument("--checkins", help="raw check-in stream instead of transitions")
    ing.add_argument("--crimes")
    ing.add_argument("--covariates")
    ing.add_argument("--crime-types", dest="crime_types",
                     help="comma-separated crime type filter")
    ing.add_argument("--year", type=int, help="train year")
    ing.add_argument("--eval-year", dest="eval_year", type=int)
    ing.set_defaults(func=cmd_ingest)

    net = sub.add_parser("network", help="flow networks").add_subparsers(
        dest="subcommand", required=True)
    netb = net.add_parser("build", parents=[common],
                          help="build adjacency/OD/shortest-path networks")
    netb.add_argument("--adjacency", help="custom adjacency edge list "
                      "(e.g. a transportation map)")
    netb.set_defaults(func=cmd_network_build)

    feat = sub.add_parser("features", help="feature panel").add_subparsers(
        dest="subcommand", required=True)
    featb = feat.add_parser("build", parents=[common],
                            help="assemble the (tract x hour-of-week) panels")
    featb.add_argument("--activity-split", action="store_true",
                       help="add per-activity check-in columns")
    featb.add_argument("--crime-type", dest="crime_type",
                       help="restrict the response to one crime type")
    featb.add_argument("--with-covariates", action="store_true", dest="with_covariates")
    featb.add_argument("--covariates", help="covariates file override")
    featb.set_defaults(func=cmd_features_build)

    exp = sub.add_parser("explain", parents=[common],
                         help="negative binomial fixed-effects model suite")
    exp.add_argument("--with-covariates", action="store_true", dest="with_covariates")
    exp.set_defaults(func=cmd_explain)

    fc = sub.add_parser("forecast", parents=[common],
                        help="out-of-sample prediction suite")
    fc.add_argument("--with-covariates", action="store_true", dest="with_covariates")
    fc.set_defaults(func=cmd_forecast)

    rep = sub.add_parser("report", parents=[common],
                         help="merge model reports into text tables and exports")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, ConfigError) as exc:
        log.error("%s", exc)
        return 1
    except ConvergenceError as exc:
        log.error("%s", exc)
        return 2
    except CrimeflowsError as exc:
        log.error("%s", exc)
        return 2
    except Exception as exc:  # runtime failure: exit 2, keep the cause visible
        log.exception("unexpected failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
