"""Command line front end.

Exit codes: 0 on success, 1 when validation or data checks fail, 2 for
usage errors (argparse prints the synopsis to stderr for those). A
key=value config file provides defaults; explicit flags win. The API
token for `serve` comes from AFTERCAST_API_TOKEN.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ingest import (
    IngestError,
    canonicalize_bytes,
    load_demand_csv,
    load_exogenous_csv,
)
from .pipeline import PipelineConfig, build_segments, pattern_of, run_pipeline
from .reports import KIND_BY_FAMILY, MissingArtifact, generate_report
from .serialize import hash_bytes
from .store import ArtifactStore, NotFound, StoreError

CONFIG_KEYS = {
    "dataset_id": str,
    "horizons": "int_list",
    "n_origins": int,
    "gap": int,
    "min_train": int,
    "models": "str_list",
    "interval_level": float,
    "k_clusters": int,
    "window_months": int,
    "deviation_pct": float,
    "role": str,
    "host": str,
    "port": int,
}


class CliConfig:
    """Typed defaults from a key=value file; unknown keys are rejected."""

    def __init__(self, values: dict | None = None):
        self.values = dict(values or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "CliConfig":
        values: dict = {}
        for line_no, raw in enumerate(
            Path(path).read_text().splitlines(), start=1
        ):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ValueError(f"line {line_no}: expected key=value")
            if key not in CONFIG_KEYS:
                raise ValueError(f"line {line_no}: unknown key {key!r}")
            kind = CONFIG_KEYS[key]
            try:
                if kind == "int_list":
                    values[key] = tuple(
                        int(v) for v in value.split(",") if v
                    )
                elif kind == "str_list":
                    values[key] = tuple(
                        v.strip() for v in value.split(",") if v.strip()
                    )
                else:
                    values[key] = kind(value)
            except ValueError:
                raise ValueError(
                    f"line {line_no}: bad value for {key!r}: {value!r}"
                ) from None
        return cls(values)

    def get(self, key, fallback):
        return self.values.get(key, fallback)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aftercast",
        description="After-sales demand forecasting and reporting.",
    )
    parser.add_argument(
        "--store", default=None,
        help="artifact store directory (default: ./store)",
    )
    parser.add_argument(
        "--config", default=None, metavar="FILE",
        help="key=value config file with defaults",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--dataset", default=None, help="dataset id")
        return p

    p = add("demo", "register the seeded demo dataset")
    p.add_argument("--seed", type=int, default=42)

    p = add("ingest", "validate and register a dataset")
    p.add_argument("--demand", required=True, metavar="CSV")
    p.add_argument("--exog", required=True, metavar="CSV")

    p = add("segment", "intermittency, pareto and cluster assignments")
    p.add_argument("--json", action="store_true", dest="as_json")

    for name, help_text in (
        ("backtest", "run the rolling-origin backtest and learn weights"),
        ("forecast", "produce forward forecasts with intervals"),
    ):
        p = add(name, help_text)
        p.add_argument("--horizons", default=None,
                       help="comma-separated leads, e.g. 1,2,3")
        p.add_argument("--origins", type=int, default=None, dest="n_origins")
        p.add_argument("--gap", type=int, default=None)
        p.add_argument("--min-train", type=int, default=None, dest="min_train")
        p.add_argument("--models", default=None,
                       help="comma-separated model ids")
        p.add_argument("--level", type=float, default=None,
                       dest="interval_level")
        p.add_argument("--clusters", type=int, default=None, dest="k_clusters")
        p.add_argument("--json", action="store_true", dest="as_json")

    for name, help_text in (
        ("scorecard", "forecast performance scorecard"),
        ("trend", "overall trend and mix diagnostics"),
        ("monthly-trend", "month-over-month decomposition"),
    ):
        p = add(name, help_text)
        p.add_argument("--months", type=int, default=None)
        p.add_argument("--deviation", type=float, default=None)
        p.add_argument("--month", default=None, help="YYYY-MM (monthly only)")
        p.add_argument("--countries", default=None,
                       help="comma-separated country filter")
        p.add_argument("--parts", default=None,
                       help="comma-separated part filter")
        p.add_argument("--role", default=None,
                       choices=("planner", "executive"))
        p.add_argument("--no-revenue", action="store_true")
        p.add_argument("--no-narrative", action="store_true")
        p.add_argument("--no-trend", action="store_true")
        p.add_argument("--json", action="store_true", dest="as_json")
        # report config must match the backtest that produced the artifacts
        p.add_argument("--horizons", default=None, help=argparse.SUPPRESS)
        p.add_argument("--origins", type=int, default=None, dest="n_origins",
                       help=argparse.SUPPRESS)
        p.add_argument("--gap", type=int, default=None, help=argparse.SUPPRESS)
        p.add_argument("--min-train", type=int, default=None,
                       dest="min_train", help=argparse.SUPPRESS)
        p.add_argument("--models", default=None, help=argparse.SUPPRESS)
        p.add_argument("--level", type=float, default=None,
                       dest="interval_level", help=argparse.SUPPRESS)
        p.add_argument("--clusters", type=int, default=None,
                       dest="k_clusters", help=argparse.SUPPRESS)

    p = add("serve", "run the HTTP service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)

    return parser


def _pipeline_config(args, cfg: CliConfig) -> PipelineConfig:
    def pick(flag_value, key, fallback):
        if flag_value is not None:
            return flag_value
        return cfg.get(key, fallback)

    horizons = pick(getattr(args, "horizons", None), "horizons", (1, 2, 3, 4, 5, 6))
    if isinstance(horizons, str):
        horizons = tuple(int(v) for v in horizons.split(",") if v)
    models = pick(getattr(args, "models", None), "models",
                  ("snaive", "ets_seasonal_additive", "sba", "arx", "gbt", "mlp"))
    if isinstance(models, str):
        models = tuple(v.strip() for v in models.split(",") if v.strip())
    return PipelineConfig(
        dataset_id=pick(args.dataset, "dataset_id", "demo"),
        horizons=tuple(horizons),
        n_origins=pick(getattr(args, "n_origins", None), "n_origins", 6),
        gap=pick(getattr(args, "gap", None), "gap", 1),
        min_train=pick(getattr(args, "min_train", None), "min_train", 24),
        models=tuple(models),
        interval_level=pick(
            getattr(args, "interval_level", None), "interval_level", 0.8
        ),
        k_clusters=pick(getattr(args, "k_clusters", None), "k_clusters", 4),
    )


def _cmd_demo(args, store, cfg):
    from .fixture import register_demo

    dataset_id = args.dataset or cfg.get("dataset_id", "demo")
    demand_hash, exog_hash = register_demo(store, dataset_id, seed=args.seed)
    print(f"registered dataset {dataset_id!r}")
    print(f"demand  {demand_hash}")
    print(f"exog    {exog_hash}")
    return 0


def _cmd_ingest(args, store, cfg):
    dataset_id = args.dataset or cfg.get("dataset_id", "demo")
    demand_raw = Path(args.demand).read_bytes()
    exog_raw = Path(args.exog).read_bytes()
    demand = canonicalize_bytes(demand_raw)
    exog = canonicalize_bytes(exog_raw)
    # parse first: a dataset that does not load is not registered
    series_map, version = load_demand_csv(args.demand, dataset_id=dataset_id)
    exo = load_exogenous_csv(args.exog, dataset_id=dataset_id)
    demand_hash = hash_bytes(demand)
    exog_hash = hash_bytes(exog)
    store.register_dataset(dataset_id, demand, exog, demand_hash, exog_hash)
    print(f"registered dataset {dataset_id!r}: {len(series_map)} series")
    for defect in exo.defects:
        print(f"defect: {defect}", file=sys.stderr)
    print(f"demand  {demand_hash}")
    print(f"exog    {exog_hash}")
    return 0


def _cmd_segment(args, store, cfg):
    dataset_id = args.dataset or cfg.get("dataset_id", "demo")
    demand_path, _ = store.dataset_paths(dataset_id)
    series_map, _ = load_demand_csv(demand_path, dataset_id=dataset_id)
    k = cfg.get("k_clusters", 4)
    segments = build_segments(series_map, k_clusters=k)
    if args.as_json:
        doc = {
            str(key): {
                "pattern": pattern_of(seg),
                "revenue_tier": seg.revenue_tier,
                "size_class": seg.size_class,
                "price_band": seg.price_band,
                "cluster_id": seg.cluster_id,
                "adi": seg.adi,
                "cv2": seg.cv2,
            }
            for key, seg in sorted(segments.items())
        }
        print(json.dumps(doc, indent=1))
        return 0
    counts: dict[str, int] = {}
    for seg in segments.values():
        counts[pattern_of(seg)] = counts.get(pattern_of(seg), 0) + 1
    print(f"{len(segments)} series segmented")
    for pattern in sorted(counts):
        print(f"  {pattern:13s} {counts[pattern]}")
    return 0


def _cmd_backtest(args, store, cfg, print_forecasts=False):
    config = _pipeline_config(args, cfg)
    result = run_pipeline(store, config)
    if print_forecasts:
        _, payload = store.fetch_by_key(
            config.dataset_id, config.config_hash(), "forecasts"
        )
        if args.as_json:
            sys.stdout.write(payload.decode("utf-8") + "\n")
        else:
            doc = json.loads(payload)
            print(
                f"forecasts from origin {doc['origin']} "
                f"({len(doc['rows'])} rows, level {doc['interval_level']})"
            )
            print(f"artifact {result.forecasts_run_id}")
        return 0
    if args.as_json:
        print(json.dumps(
            {
                "config_hash": result.config_hash,
                "artifacts": result.run_ids(),
                "n_records": result.n_records,
                "n_skips": result.n_skips,
                "leakage_violations": result.leakage_violations,
                "reused": result.reused,
            },
            indent=1,
        ))
        return 0
    print(f"backtest complete: {result.n_records} records, "
          f"{result.n_skips} skips, "
          f"{result.leakage_violations} leakage violations"
          f"{' (reused)' if result.reused else ''}")
    for kind, run_id in result.run_ids().items():
        print(f"  {kind:10s} {run_id}")
    return 0


_CLI_FAMILY = {
    "scorecard": "performance_scorecard",
    "trend": "trend_overall",
    "monthly-trend": "trend_monthly",
}


def _cmd_report(args, store, cfg, command):
    config = _pipeline_config(args, cfg)
    request = {
        "report_family": _CLI_FAMILY[command],
        "dataset_id": config.dataset_id,
        "config_hash": config.config_hash(),
    }
    months = args.months if args.months is not None else cfg.get(
        "window_months", None
    )
    if months is not None:
        request["window_months"] = months
    deviation = (
        args.deviation if args.deviation is not None
        else cfg.get("deviation_pct", None)
    )
    if deviation is not None:
        request["deviation_pct"] = deviation
    if args.month:
        request["month"] = args.month
    if args.countries:
        request["countries"] = args.countries
    if args.parts:
        request["parts"] = args.parts
    role = args.role or cfg.get("role", None)
    if role:
        request["role"] = role
    if args.no_revenue:
        request["include_revenue_views"] = False
    if args.no_narrative:
        request["include_narrative"] = False
    if args.no_trend:
        request["include_trend"] = False

    result = generate_report(store, request)
    if args.as_json:
        sys.stdout.write(result.payload.decode("utf-8") + "\n")
        return 0
    doc = result.document
    kind = KIND_BY_FAMILY[result.spec.report_family]
    print(f"{kind} {result.run_id} (content {result.content_hash[:12]})")
    banner = [s for s in doc["sections"] if s["kind"] == "banner"]
    if banner:
        print("FAILED VALIDATION:")
        for violation in banner[0]["violations"]:
            print(f"  [{violation['check']}] {violation['table']}: "
                  f"{violation['message']}")
    else:
        print("checks passed: totals reconcile, bins complete, denominators "
              "valid, outliers named, rankings consistent")
    narrative = doc.get("narrative", {})
    for blocks in narrative.values():
        for block in blocks:
            print(f"{block['kind']:13s} {block['text']}")
    return 0


def _cmd_serve(args, store, cfg):
    import uvicorn

    from .service import create_app

    host = args.host or cfg.get("host", "127.0.0.1")
    port = args.port if args.port is not None else cfg.get("port", 8732)
    app = create_app(store=store)
    uvicorn.run(app, host=host, port=int(port), log_level="warning")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        cfg = (
            CliConfig.from_file(args.config) if args.config else CliConfig()
        )
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"bad config file: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2

    store = ArtifactStore(args.store or "store")

    try:
        if args.command == "demo":
            return _cmd_demo(args, store, cfg)
        if args.command == "ingest":
            return _cmd_ingest(args, store, cfg)
        if args.command == "segment":
            return _cmd_segment(args, store, cfg)
        if args.command == "backtest":
            return _cmd_backtest(args, store, cfg)
        if args.command == "forecast":
            return _cmd_backtest(args, store, cfg, print_forecasts=True)
        if args.command in _CLI_FAMILY:
            return _cmd_report(args, store, cfg, args.command)
        if args.command == "serve":
            return _cmd_serve(args, store, cfg)
    except (IngestError, MissingArtifact, NotFound, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"unknown command {args.command!r}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
