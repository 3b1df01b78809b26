"""Command line interface: ``pcat <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import connmap, geotrace, mobility, ratemodel, scenario, sim
from .errors import ConfigError, DataError, DomainError, IncompatibleError, PcatError

log = logging.getLogger("pcat")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _write(path: str | None, text: str | bytes) -> None:
    if path is None or path == "-":
        sys.stdout.write(text.decode() if isinstance(text, bytes) else text)
        if not (text.endswith(b"\n") if isinstance(text, bytes) else text.endswith("\n")):
            sys.stdout.write("\n")
        return
    mode = "wb" if isinstance(text, bytes) else "w"
    with open(path, mode) as fh:
        fh.write(text)


def _trace_files(inputs) -> list[str]:
    files = []
    for item in inputs:
        if os.path.isdir(item):
            files.extend(
                os.path.join(item, name) for name in sorted(os.listdir(item)) if name.endswith(".csv")
            )
        else:
            files.append(item)
    if not files:
        raise ConfigError("no trace files given")
    return files


def _load(inputs, f_context=None):
    try:
        traces = geotrace.load_traces(_trace_files(inputs))
    except OSError as exc:
        raise DataError(f"cannot read trace: {exc}") from None
    if f_context:
        traces = [geotrace.resample_context(t, f_context) for t in traces]
    return traces


def cmd_ingest(args) -> int:
    traces = _load(args.traces, args.resample)
    os.makedirs(args.out, exist_ok=True)
    index = []
    for trace in traces:
        with open(os.path.join(args.out, f"{trace.trip_id}.csv"), "w", newline="") as fh:
            geotrace.write_trace(trace, fh)
        index.append({
            "trip_id": trace.trip_id,
            "samples": len(trace),
            "duration_s": trace.duration,
            "origin": {"lat": trace.origin.latitude, "lon": trace.origin.longitude},
        })
    with open(os.path.join(args.out, "index.json"), "w") as fh:
        json.dump({"traces": index}, fh, indent=1, sort_keys=True)
    log.info("stored %d traces in %s", len(traces), args.out)
    return EXIT_OK


def cmd_build_map(args) -> int:
    traces = _load(args.traces, args.resample)
    cmap = connmap.build_map(traces, args.cell_side)
    if args.merge_into:
        with open(args.merge_into, "rb") as fh:
            cmap = connmap.merge(connmap.load_map(fh.read()), cmap)
    _write(args.out, connmap.save_map(cmap))
    log.info("map with %d cells", len(cmap))
    return EXIT_OK


def cmd_train(args) -> int:
    with open(args.data, "rb") as fh:
        data, dropped = ratemodel.parse_training_csv(fh)
    if dropped:
        log.info("dropped %d rows with absent features or labels", dropped)
    test = []
    if args.test_fraction > 0:
        n_test = int(round(args.test_fraction * len(data)))
        test, data = data[len(data) - n_test:], data[: len(data) - n_test]
    model = ratemodel.train(
        data, args.kind, min_leaf=args.min_leaf, max_depth=args.max_depth,
        prune=not args.no_prune, seed=args.seed,
    )
    _write(args.out, ratemodel.save_model(model))
    for label, rows in (("train", data), ("test", test)):
        if rows:
            rep = ratemodel.evaluate(model, rows)
            print(
                f"{label}: n={rep.n} mae={rep.mae:.4f} rmse={rep.rmse:.4f} "
                f"overestimation={rep.overestimation_share:.3f}",
                file=sys.stderr,
            )
    return EXIT_OK


def cmd_eval_mobility(args) -> int:
    traces = _load(args.traces, args.resample)
    if args.predictor == "gps":
        predictor = mobility.predict_gps
        frame = None
    elif args.predictor == "trajectory":
        source = _load(args.trajectory_traces, args.resample) if args.trajectory_traces else traces
        frame = source[0].origin
        traj = mobility.mean_trajectory(source, args.points, origin=frame)

        def predictor(state, tau):
            return mobility.predict_on_trajectory(state, traj, tau)
    else:
        if not args.reference:
            raise ConfigError("--reference is required for the reference predictor")
        ref = _load([args.reference], args.resample)[0]
        frame = ref.origin
        track = mobility.ReferenceTrack.from_trace(ref, frame)

        def predictor(state, tau):
            return mobility.predict_on_reference(state, track, tau)[0]

    table = mobility.evaluate_prediction_error(predictor, traces, args.tau, args.bin_width, origin=frame)
    _write(args.out, mobility.error_table_to_csv(table))
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = scenario.load_scenario(args.scenario, args.preset)
    if args.seed is not None:
        from dataclasses import replace

        sc = replace(sc, seed=args.seed)
    result = sim.run_simulation(sc)
    _write(args.out, sim.run_result_to_json(result))
    if args.records:
        _write(args.records, sim.records_to_csv(result))
    kpi = sim.compute_kpis(result) if result.records else None
    if kpi is not None:
        print(
            f"tx={kpi.tx_count} rate={kpi.mean_rate_mbps:.3f} Mbit/s aoi={kpi.mean_aoi_s:.2f} s "
            f"energy={kpi.energy_per_mb_j:.4f} J/MB fallback={kpi.fallback_ratio:.3f}",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_compare(args) -> int:
    doc = scenario.read_json(args.config)
    scenarios, reps, baseline, workers = scenario.comparison_from_dict(
        doc, os.path.dirname(os.path.abspath(args.config)), args.preset
    )
    if args.repetitions is not None:
        reps = args.repetitions
    if args.workers is not None:
        workers = args.workers
    table = sim.compare_schemes(scenarios, reps, baseline, workers)
    _write(args.out, table.to_csv())
    if args.json:
        _write(args.json, table.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcat", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate trace CSVs into a trace store")
    s.add_argument("traces", nargs="+", help="CSV files or directories")
    s.add_argument("--out", required=True, help="store directory")
    s.add_argument("--resample", type=float, metavar="HZ", help="context sampling frequency")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("build-map", help="aggregate traces into a connectivity map")
    s.add_argument("traces", nargs="+")
    s.add_argument("--cell-side", type=float, default=connmap.DEFAULT_CELL_SIDE_M, help="metres")
    s.add_argument("--merge-into", help="existing map JSON to merge with")
    s.add_argument("--resample", type=float, metavar="HZ")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_build_map)

    s = sub.add_parser("train", help="train a data-rate model from labeled CSV")
    s.add_argument("data")
    s.add_argument("--kind", choices=ratemodel.KINDS, default="model_tree")
    s.add_argument("--min-leaf", type=int, default=4)
    s.add_argument("--max-depth", type=int, default=8)
    s.add_argument("--no-prune", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-fraction", type=float, default=0.0, help="tail share held out for reporting")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval-mobility", help="position prediction error per speed bin")
    s.add_argument("traces", nargs="+")
    s.add_argument("--predictor", choices=("gps", "trajectory", "reference"), default="gps")
    s.add_argument("--tau", type=float, default=10.0)
    s.add_argument("--bin-width", type=float, default=mobility.KMH_10, help="m/s (default 10 km/h)")
    s.add_argument("--trajectory-traces", nargs="+")
    s.add_argument("--points", type=int, default=mobility.MEAN_TRAJECTORY_POINTS)
    s.add_argument("--reference")
    s.add_argument("--resample", type=float, metavar="HZ")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_eval_mobility)

    s = sub.add_parser("simulate", help="replay a scenario")
    s.add_argument("scenario")
    s.add_argument("--preset", choices=scenario.PRESETS)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="-", help="RunResult JSON")
    s.add_argument("--records", help="records CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", help="compare schemes over seeded repetitions")
    s.add_argument("config")
    s.add_argument("--preset", choices=scenario.PRESETS)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", default="-", help="comparison CSV")
    s.add_argument("--json", help="comparison JSON")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, IncompatibleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError, PcatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
