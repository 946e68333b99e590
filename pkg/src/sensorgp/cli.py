"""Command-line entry point: benchmark, fit, predict, stats, synth.

One structured config file (YAML or JSON) drives everything; a few
command-line flags override config values. All outputs are plain CSV,
text tables, or JSON, written under the configured output directory so
figures can be regenerated with any plotting tool. Runs are
reproducible: the same config and seeds give byte-identical CSVs.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import fields as dataclass_fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import data as data_mod
from . import evaluation as eval_mod
from . import model_io
from .data import SensorReading
from .errors import ConfigError, InputError, SensorGPError
from .exact_gp import GPModel, subsample
from .kernels import SquaredExponential, rescale_periods
from .statespace import StateSpaceGP
from .svgp import SVGPModel

ROW_KEYS = (
    "backend", "name", "periodic", "clean_outliers", "additional_inputs",
    "subsample", "repetitions", "seeds", "n_inducing", "batch_size", "budget",
    "learning_rate", "temporal", "noise_variance", "kernel_variance",
    "kernel_lengthscale", "optimize_inducing", "parallelism",
)

CONFIG_SCHEMA = {
    "data": {"sensors", "weather", "min_site_readings"},
    "cleaning": {"remove_outliers", "factor", "scope", "mode"},
    "experiment": set(ROW_KEYS),
    "benchmark": {"matrix", "protocols"},
    "synth": {f.name for f in dataclass_fields(data_mod.SynthConfig)},
    "output": {"directory"},
    "seed": None,
}


def _check_keys(node, allowed, where):
    if not isinstance(node, dict):
        raise ConfigError(f"config section {where!r} must be a mapping")
    for key in node:
        if key not in allowed:
            raise ConfigError(f"unknown config key {where + '.' + key!r}")


def load_config(path):
    """Parse and validate the run config; unknown keys are named and rejected."""
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith((".yaml", ".yml")):
        raw = yaml.safe_load(text)
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError:
            raw = yaml.safe_load(text)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    for key in raw:
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
    for section, allowed in CONFIG_SCHEMA.items():
        if allowed is not None and section in raw:
            _check_keys(raw[section], allowed, section)
    matrix = raw.get("benchmark", {}).get("matrix")
    if isinstance(matrix, list):
        for i, row in enumerate(matrix):
            _check_keys(row, set(ROW_KEYS), f"benchmark.matrix[{i}]")
    return raw


def _row_config(entries, cleaning):
    merged = dict(entries)
    if "clean_outliers" not in merged and cleaning.get("remove_outliers"):
        merged["clean_outliers"] = True
    if "seeds" in merged and merged["seeds"] is not None:
        merged["seeds"] = tuple(merged["seeds"])
    config = eval_mod.ExperimentConfig(**merged)
    config.outlier_factor = float(cleaning.get("factor", 1.5))
    config.outlier_scope = cleaning.get("scope", "per-site")
    config.outlier_mode = cleaning.get("mode", "tukey")
    return config


def _build_matrix(raw, overrides):
    cleaning = raw.get("cleaning", {})
    matrix = raw.get("benchmark", {}).get("matrix", "default")
    if matrix in (None, "default"):
        configs = eval_mod.default_matrix()
        for config in configs:
            config.outlier_factor = float(cleaning.get("factor", 1.5))
            config.outlier_scope = cleaning.get("scope", "per-site")
            config.outlier_mode = cleaning.get("mode", "tukey")
    elif isinstance(matrix, list):
        configs = [_row_config(row, cleaning) for row in matrix]
    else:
        raise ConfigError("benchmark.matrix must be 'default' or a list of rows")
    if overrides.backend:
        configs = [c for c in configs if c.backend == overrides.backend]
        if not configs:
            raise ConfigError(f"no matrix rows use backend {overrides.backend!r}")
    return configs


def _load_readings(raw, need_covariates):
    section = raw.get("data", {})
    sensors = section.get("sensors")
    if not sensors:
        raise ConfigError("config key 'data.sensors' is required for this command")
    readings, report = data_mod.load_sensor_csv(sensors)
    min_count = int(section.get("min_site_readings", 100))
    readings, dropped = data_mod.drop_sparse_sites(readings, min_count)
    notes = {
        "rows_read": report.rows_read,
        "dropped_bad_value": report.dropped_bad_value,
        "duplicates_averaged": report.duplicates_averaged,
        "sparse_sites_dropped": dropped,
    }
    if need_covariates:
        weather = section.get("weather")
        if not weather:
            raise ConfigError(
                "additional inputs requested but config key 'data.weather' is unset"
            )
        readings, missed = data_mod.join_weather(readings, weather)
        notes["readings_without_weather"] = missed
        if not readings:
            raise InputError("no readings remained after joining weather data")
    return readings, notes


def _out_dir(raw, overrides):
    directory = overrides.out_dir or raw.get("output", {}).get("directory") or "out"
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(str(cell) for cell in row) + "\n")


def _format_float(value):
    return repr(float(value))


def _format_hour(ts):
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:00:00Z")


# -- commands ---------------------------------------------------------------

def cmd_benchmark(args):
    raw = load_config(args.config)
    configs = _build_matrix(raw, args)
    protocols = {
        "nowcast": ("nowcast",), "forecast": ("forecast",),
        "both": ("nowcast", "forecast"),
    }[args.protocol]
    need_covariates = any(c.additional_inputs for c in configs)
    readings, notes = _load_readings(raw, need_covariates)
    out = _out_dir(raw, args)

    reports = eval_mod.run_matrix(readings, configs, protocols)
    eval_mod.write_comparison_csv(reports, out / "comparison.csv")
    eval_mod.write_comparison_text(reports, out / "comparison.txt")
    payload = {"data_notes": notes, "reports": eval_mod.report_json(reports)}
    with open(out / "reports.json", "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")
    print(f"wrote {out / 'comparison.csv'}, {out / 'comparison.txt'}, {out / 'reports.json'}")
    return 0


def _single_config(raw, overrides):
    experiment = dict(raw.get("experiment", {}))
    if overrides.backend:
        experiment["backend"] = overrides.backend
    cleaning = raw.get("cleaning", {})
    return _row_config(experiment, cleaning).resolved()


def cmd_fit(args):
    raw = load_config(args.config)
    config = _single_config(raw, args)
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    readings, _ = _load_readings(raw, config.additional_inputs)
    if config.clean_outliers:
        readings, _ = data_mod.remove_outliers(
            readings, config.outlier_factor, config.outlier_scope, config.outlier_mode
        )
    dataset = data_mod.build_dataset(
        readings, include_covariates=config.additional_inputs
    )
    opts = config.optimizer_options(seed)

    if config.backend == "statespace":
        spatial = SquaredExponential(config.kernel_variance, config.kernel_lengthscale)
        model = StateSpaceGP.from_dataset(
            spatial, config.temporal, dataset, noise_variance=config.noise_variance
        )
        result = model.fit(opts)
    elif config.backend == "svgp":
        kernel = rescale_periods(
            eval_mod._build_kernel(dataset.columns, config), dataset.col_scale
        )
        model = SVGPModel.from_dataset(
            kernel, dataset, min(config.n_inducing, dataset.n),
            noise_variance=config.noise_variance, seed=seed,
        )
        result = model.fit(opts, optimize_inducing=config.optimize_inducing)
    else:
        kernel = rescale_periods(
            eval_mod._build_kernel(dataset.columns, config), dataset.col_scale
        )
        fit_data = (
            subsample(dataset, config.subsample, seed)
            if config.subsample < dataset.n else dataset
        )
        model = GPModel.from_dataset(
            kernel, fit_data, noise_variance=config.noise_variance
        )
        result = model.fit(opts)

    out = _out_dir(raw, args)
    model_path = out / "model.json"
    model_io.save_model(model_path, model, result)
    print(f"wrote {model_path} (objective {result.objective:.4f}, "
          f"{result.iterations} iterations)")
    return 0


def _read_query_csv(path, needed_columns):
    """Query rows as SensorReading shells; extra columns are ignored with a warning."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: file is empty") from None
        required = ["latitude", "longitude", "timestamp"]
        covariate_sources = {
            "windspeed": "windspeed", "winddir": "winddir", "windgust": "windgust",
            "humidity": "humidity", "temp": "temp", "precip": "precip",
        }
        needed_raw = set(required)
        needs_winddir = False
        for name in needed_columns:
            if name in ("lat", "lon", "time_h"):
                continue
            if name in ("winddir_sin", "winddir_cos"):
                needs_winddir = True
            elif name in covariate_sources:
                needed_raw.add(name)
            else:
                raise InputError(f"model requires unsupported column {name!r}")
        if needs_winddir:
            needed_raw.add("winddir")
        missing = sorted(needed_raw - set(header))
        if missing:
            raise InputError(f"{path}: query file lacks required column(s) {missing}")
        extra = sorted(set(header) - needed_raw - {"site_id", "pm2_5"})
        if extra:
            print(f"warning: ignoring extra query column(s) {extra}", file=sys.stderr)
        col = {name: header.index(name) for name in header}

        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            ts = data_mod._parse_timestamp(row[col["timestamp"]], line_no)
            covs = None
            if needed_raw - set(required):
                covs = {}
                for name in needed_raw - set(required):
                    covs[name] = float(row[col[name]])
                if needs_winddir:
                    theta = math.radians(covs["winddir"])
                    covs["winddir_sin"] = math.sin(theta)
                    covs["winddir_cos"] = math.cos(theta)
            site = row[col["site_id"]].strip() if "site_id" in col else f"q{line_no}"
            rows.append(
                SensorReading(
                    site, float(row[col["latitude"]]), float(row[col["longitude"]]),
                    ts, math.nan, covs,
                )
            )
    if not rows:
        raise InputError(f"{path}: no query rows")
    return rows


def cmd_predict(args):
    raw = load_config(args.config) if args.config else {}
    loaded = model_io.load_model(args.model)
    queries = _read_query_csv(args.queries, loaded.columns)
    mean, latent_std, observed_std = loaded.predict_readings(queries)

    out = _out_dir(raw, args)
    path = out / "predictions.csv"
    rows = [
        (
            q.site_id, _format_float(q.latitude), _format_float(q.longitude),
            _format_hour(q.timestamp), _format_float(m),
            _format_float(ls), _format_float(os_),
        )
        for q, m, ls, os_ in zip(queries, mean, latent_std, observed_std)
    ]
    _write_csv(
        path,
        ("site_id", "latitude", "longitude", "timestamp",
         "mean", "latent_std", "observed_std"),
        rows,
    )
    print(f"wrote {path}")
    return 0


def cmd_stats(args):
    raw = load_config(args.config)
    readings, _ = _load_readings(raw, need_covariates=False)
    stats = data_mod.summary_stats(readings)
    out = _out_dir(raw, args)

    box_rows = []
    for site, boxes in stats.boxes.items():
        for b in boxes:
            box_rows.append(
                (
                    site, b.hour, b.count, _format_float(b.median),
                    _format_float(b.q1), _format_float(b.q3),
                    _format_float(b.lower_fence), _format_float(b.upper_fence),
                    ";".join(_format_float(v) for v in b.outliers),
                )
            )
    _write_csv(
        out / "boxplots.csv",
        ("site_id", "hour", "count", "median", "q1", "q3",
         "lower_fence", "upper_fence", "outliers"),
        box_rows,
    )
    mean_rows = [
        (site, hour, _format_float(value))
        for site, means in stats.site_hourly_means.items()
        for hour, value in means.items()
    ]
    _write_csv(out / "hourly_means.csv", ("site_id", "hour", "mean"), mean_rows)
    overall_rows = [
        (hour, _format_float(value))
        for hour, value in stats.overall_hourly_mean.items()
    ]
    _write_csv(out / "overall_hourly_means.csv", ("hour", "mean"), overall_rows)
    print(f"wrote {out / 'boxplots.csv'}, {out / 'hourly_means.csv'}, "
          f"{out / 'overall_hourly_means.csv'}")
    return 0


def cmd_synth(args):
    raw = load_config(args.config) if args.config else {}
    section = dict(raw.get("synth", {}))
    if "start" in section and isinstance(section["start"], str):
        section["start"] = datetime.fromisoformat(
            section["start"].replace("Z", "+00:00")
        )
    if args.seed is not None:
        section["seed"] = args.seed
    result = data_mod.synth_generate(**section)

    out = _out_dir(raw, args)
    data_rows = [
        (
            r.site_id, _format_float(r.latitude), _format_float(r.longitude),
            _format_hour(r.timestamp), _format_float(r.pm25),
        )
        for r in result.readings
    ]
    _write_csv(
        out / "synthetic.csv",
        ("site_id", "latitude", "longitude", "timestamp", "pm2_5"),
        data_rows,
    )
    latent_rows = [
        (r.site_id, _format_hour(r.timestamp), _format_float(latent))
        for r, latent in zip(result.readings, result.latents)
    ]
    _write_csv(out / "latent.csv", ("site_id", "timestamp", "latent"), latent_rows)

    meta = {
        f.name: getattr(result.config, f.name)
        for f in dataclass_fields(result.config)
    }
    meta["start"] = result.config.start.isoformat()
    meta["rows_written"] = len(result.readings)
    with open(out / "synth_meta.json", "w", encoding="utf-8", newline="\n") as handle:
        json.dump(meta, handle, indent=2)
        handle.write("\n")
    print(f"wrote {out / 'synthetic.csv'}, {out / 'latent.csv'}, {out / 'synth_meta.json'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sensorgp",
        description="GP regression toolkit for sparse air-quality sensor networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML or JSON run config")
        p.add_argument("--out-dir", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument(
            "--backend", choices=eval_mod.BACKENDS, default=None,
            help="restrict or override the model backend",
        )

    p = sub.add_parser("benchmark", help="run the model-comparison matrix")
    common(p)
    p.add_argument(
        "--protocol", choices=("nowcast", "forecast", "both"), default="both"
    )
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("fit", help="train one model and save it")
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict from a saved model")
    common(p, config_required=False)
    p.add_argument("--model", required=True, help="model file from a prior fit")
    p.add_argument("--queries", required=True, help="query CSV (latitude, longitude, timestamp)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("stats", help="emit per-site box-plot and hourly-mean tables")
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate synthetic data with known truth")
    common(p, config_required=False)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SensorGPError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
