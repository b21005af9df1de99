"""Command-line front end.

Subcommands wire the pipeline stages together: synth, ingest, extract-gps,
stats, filter, build-index, fit-ref, estimate, evaluate. Logs go to stderr,
data to stdout or --out. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from . import __version__
from .config import Config
from .core import GeoPoint, Query, QueryTable
from .errors import TripTimeError
from .estimator import METHODS, estimate_batch, estimate_single, fit_lr
from .evaluation import (
    ExperimentSettings,
    SplitSpec,
    breakdown,
    breakdown_feature,
    breakdown_to_csv,
    run_experiment,
)
from .index import build_index, load_index, save_index
from .ingest import (
    dataset_stats,
    extract_trips_from_gps,
    load_trips,
    parse_datetime,
    read_gps_csv,
    write_trips_csv,
)
from .outliers import filter_pipeline, stages_to_json
from .regions import RegionPartition, build_region_references, export_pair_references_csv
from .speedref import export_reference_csv, fit_reference
from .synthgen import SynthSpec, generate

# Published reference results for the NYC 2013 taxi benchmark (11-month
# train / December test, ~127.5M filtered trips). Printed for side-by-side
# comparison only; they are not expected outputs at other data scales.
NYC_REFERENCE_RESULTS = {
    "lr": {"mae": 194.604, "mre": 0.2949, "medae": 164.820, "medre": 0.3017},
    "avg": {"mae": 178.459, "mre": 0.2704, "medae": 120.834, "medre": 0.2345},
    "temp_rel": {"mae": 149.815, "mre": 0.2270, "medae": 97.365, "medre": 0.1907},
    "temp_abs": {"mae": 143.311, "mre": 0.2171, "medae": 98.780, "medre": 0.1890},
    "temp_rel_r": {"mae": 143.719, "mre": 0.2178, "medae": 92.067, "medre": 0.1805},
    "temp_abs_r": {"mae": 142.334, "mre": 0.2157, "medae": 98.046, "medre": 0.1874},
}


def log(message: str) -> None:
    click.echo(message, err=True)


def _load_config(path) -> Config:
    return Config.from_file(path) if path else Config()


def _load_table(config: Config, path):
    table, report = load_trips(path, config.schema(), _require_bbox(config))
    log(f"loaded {len(table)} trips, rejected {report.total}")
    return table


def _require_bbox(config: Config):
    if config.bbox is None:
        raise TripTimeError("this command needs `bbox` in the config file")
    return config.bbox


def _settings(config: Config) -> ExperimentSettings:
    return ExperimentSettings(
        cell_size=config.cell_size, tau=config.tau, slot_config=config.slot_config(),
        arima_order=config.arima_order,
        region_shape=(config.region_cols, config.region_rows),
        min_support=config.min_support, clamp=config.scale_clamp,
        weighted=config.weighted, fallback=config.fallback,
        thread_count=config.thread_count, bbox=config.bbox,
        filter_pairs=None, seed=config.seed)


@click.group()
@click.version_option(version=__version__, prog_name="triptime")
def cli() -> None:
    """Estimate origin-destination travel times from historical trip data."""


@cli.command()
@click.option("--spec", "spec_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--truth-out", type=click.Path(), default=None)
def synth(spec_path, out_path, truth_out) -> None:
    """Generate a synthetic trip CSV (plus ground-truth JSON sidecar)."""
    with open(spec_path) as fh:
        spec = SynthSpec.from_json(fh.read())
    table, truth = generate(spec)
    write_trips_csv(table, out_path)
    sidecar = truth_out or str(out_path) + ".truth.json"
    with open(sidecar, "w") as fh:
        fh.write(truth.to_json())
    log(f"wrote {len(table)} trips to {out_path}; ground truth in {sidecar}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
def ingest(config_path, input_path, out_path, report_path) -> None:
    """Normalize a raw trip CSV through the configured schema and bbox."""
    config = _load_config(config_path)
    table, report = load_trips(input_path, config.schema(), _require_bbox(config))
    write_trips_csv(table, out_path)
    payload = report.to_json()
    if report_path:
        with open(report_path, "w") as fh:
            fh.write(payload)
    else:
        click.echo(payload)
    log(f"kept {len(table)} trips, rejected {report.total}")


@cli.command("extract-gps")
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def extract_gps(input_path, out_path) -> None:
    """Extract occupancy-bit trips from a raw GPS stream CSV."""
    table = extract_trips_from_gps(read_gps_csv(input_path))
    write_trips_csv(table, out_path)
    log(f"extracted {len(table)} trips")


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
def stats(input_path, config_path, out_path) -> None:
    """Dataset statistics: counts, per-day volumes, quantile CDFs."""
    config = _load_config(config_path)
    table = _load_table(config, input_path)
    st = dataset_stats(table)
    if out_path:
        st.write_csv(out_path)
        log(f"quantile CDF written to {out_path}")
    click.echo(st.to_json())


@cli.command("filter")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--audit", "audit_path", type=click.Path(), default=None)
def filter_cmd(config_path, input_path, out_path, audit_path) -> None:
    """Remove anomalous trips with the feature-pair filter pipeline."""
    config = _load_config(config_path)
    table = _load_table(config, input_path)
    pairs = config.feature_pairs(with_fare=table.has_fare())
    clean, stages = filter_pipeline(table, pairs)
    write_trips_csv(clean, out_path)
    audit = stages_to_json(stages)
    if audit_path:
        with open(audit_path, "w") as fh:
            fh.write(audit)
    else:
        click.echo(audit)
    log(f"{len(table) - len(clean)} of {len(table)} trips flagged as outliers")


@cli.command("build-index")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def build_index_cmd(config_path, input_path, out_path) -> None:
    """Build the grid index and persist it as a binary snapshot."""
    config = _load_config(config_path)
    table = _load_table(config, input_path)
    index = build_index(table, config.cell_size, _require_bbox(config))
    save_index(index, out_path)
    log(f"indexed {len(index)} trips into {index.cell_count} cells "
        f"(alpha={index.max_bucket_fraction:.4f}); snapshot at {out_path}")


@cli.command("fit-ref")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["rel", "abs"]), default="rel")
@click.option("--regions", "by_regions", is_flag=True, default=False)
@click.option("--out", "out_path", required=True, type=click.Path())
def fit_ref(config_path, input_path, mode, by_regions, out_path) -> None:
    """Fit a temporal speed reference and export it as CSV."""
    config = _load_config(config_path)
    table = _load_table(config, input_path)
    full_mode = "relative" if mode == "rel" else "absolute"
    if by_regions:
        partition = RegionPartition(bbox=_require_bbox(config), cols=config.region_cols,
                                    rows=config.region_rows)
        refs = build_region_references(table, partition, config.slot_config(), full_mode,
                                       min_support=config.min_support,
                                       arima_order=config.arima_order)
        export_pair_references_csv(refs, out_path)
        log(f"{len(refs.pair_refs)} region-pair references written to {out_path}")
    else:
        ref = fit_reference(table, config.slot_config(), full_mode,
                            arima_order=config.arima_order)
        export_reference_csv(ref, out_path)
        log(f"{full_mode} reference written to {out_path}")


def _parse_query(text: str, query_id: int = 0) -> Query:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 5:
        raise click.UsageError(
            "--query expects 'olat,olon,dlat,dlon,ISO-8601-start'")
    return Query(origin=GeoPoint(float(parts[0]), float(parts[1])),
                 destination=GeoPoint(float(parts[2]), float(parts[3])),
                 start_time=parse_datetime(parts[4]), id=query_id)


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--train", "train_path", type=click.Path(), default=None,
              help="Training trip CSV (builds the index in memory).")
@click.option("--index", "index_path", type=click.Path(), default=None,
              help="Index snapshot from build-index.")
@click.option("--method", type=click.Choice(METHODS), default="temp_rel")
@click.option("--query", "query_text", default=None,
              help="One query: 'olat,olon,dlat,dlon,ISO-start'.")
@click.option("--queries", "queries_path", type=click.Path(), default=None,
              help="CSV of queries (trip CSV columns; durations ignored).")
@click.option("--out", "out_path", type=click.Path(), default=None)
def estimate(config_path, train_path, index_path, method, query_text,
             queries_path, out_path) -> None:
    """Estimate travel time for one query or a batch."""
    config = _load_config(config_path)
    if (train_path is None) == (index_path is None):
        raise click.UsageError("provide exactly one of --train or --index")
    if (query_text is None) == (queries_path is None):
        raise click.UsageError("provide exactly one of --query or --queries")

    if index_path:
        index = load_index(index_path)
    else:
        table = _load_table(config, train_path)
        index = build_index(table, config.cell_size, _require_bbox(config))
    lr_model = fit_lr(index.table)
    reference = None
    regions = None
    if method.startswith("temp"):
        mode = "relative" if "rel" in method else "absolute"
        if method.endswith("_r"):
            partition = RegionPartition(bbox=index.bbox, cols=config.region_cols,
                                        rows=config.region_rows)
            regions = build_region_references(index.table, partition, config.slot_config(),
                                              mode, min_support=config.min_support,
                                              arima_order=config.arima_order)
        else:
            reference = fit_reference(index.table, config.slot_config(), mode,
                                      arima_order=config.arima_order)

    if query_text:
        q = _parse_query(query_text)
        est = estimate_single(index, q, method, tau=config.tau, reference=reference,
                              regions=regions, lr_model=lr_model,
                              clamp=config.scale_clamp, weighted=config.weighted,
                              fallback=config.fallback)
        click.echo(f"method={est.method} estimate_seconds={est.value:.1f} "
                   f"neighbors={est.neighbor_count}"
                   + (" (lr fallback)" if est.fallback else ""))
        return

    qtable = _load_table(config, queries_path)
    queries = QueryTable.from_trip_table(qtable)
    batch = estimate_batch(index, queries, method, tau=config.tau, reference=reference,
                           regions=regions, lr_model=lr_model,
                           thread_count=config.thread_count, fallback=config.fallback,
                           clamp=config.scale_clamp, weighted=config.weighted)
    if out_path:
        batch.write_csv(out_path)
        log(f"{len(batch)} estimates written to {out_path}")
    else:
        covered = int(batch.evaluated.sum())
        click.echo(json.dumps({"queries": len(batch), "evaluated": covered}))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--breakdown-by", type=click.Choice(["trip_time", "trip_distance",
                                                   "neighbor_count"]), default=None)
@click.option("--breakdown-out", type=click.Path(), default=None)
@click.option("--paper-reference", is_flag=True, default=False,
              help="Print published NYC benchmark numbers beside the results.")
def evaluate(config_path, input_path, out_path, breakdown_by, breakdown_out,
             paper_reference) -> None:
    """Run the train/test experiment described by the config."""
    config = Config.from_file(config_path)
    table = _load_table(config, input_path)
    t0, t1, s0, s1 = config.split_epochs()
    split = SplitSpec(train_start=t0, train_end=t1, test_start=s0, test_end=s1,
                      subsample=config.subsample, seed=config.seed)
    settings = _settings(config)
    if config.apply_filter:
        settings.filter_pairs = config.feature_pairs(with_fare=table.has_fare())
    result = run_experiment(table, split, config.methods, settings)
    payload = result.to_json()
    if out_path:
        if str(out_path).endswith(".csv"):
            result.write_csv(out_path)
        else:
            with open(out_path, "w") as fh:
                fh.write(payload)
        log(f"report written to {out_path}")
    click.echo(payload)
    if paper_reference:
        click.echo("published reference results (NYC 2013 benchmark, "
                   "not expected outputs at this scale):")
        click.echo(json.dumps(NYC_REFERENCE_RESULTS, indent=2))
    if breakdown_by:
        method = config.methods[-1]
        feature = breakdown_feature(result, method, breakdown_by)
        mask = result.batches[method].evaluated
        observed = feature[mask] if mask.any() else feature
        edges = np.linspace(0.0, float(observed.max()) * 1.001, 11)
        rows = breakdown(result.truth, result.batches[method], feature, edges)
        if breakdown_out:
            breakdown_to_csv(rows, breakdown_out)
            log(f"breakdown written to {breakdown_out}")


def main(argv=None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        return 1
    except (TripTimeError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
