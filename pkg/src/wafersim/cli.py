"""Command-line entry point.

Subcommands: build, adapt, map, simulate, analyze, sweep, bench, wafer report.
Exit codes: 0 success, 2 validation failure, 3 capacity/mapping infeasibility,
4 simulation diagnostic failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .adaptation import AdaptationConfig, adapt_pipeline
from .analysis import (
    RegimeThresholds,
    SweepBaseConfig,
    classify_regime,
    cv_isi,
    mean_rates,
    phase_sweep,
    rate_distribution,
    synchrony,
)
from .bench import throughput_metrics
from .engine import (
    SimulationConfig,
    SimulationDiagnosticError,
    load_spikes_binary,
    save_membrane_csv,
    save_spikes_binary,
    save_spikes_csv,
    simulate,
)
from .hardware import (
    CapacityError,
    InfeasibleFanInError,
    WaferTopology,
    capacity_report,
)
from .mapping import (
    MappingMismatchError,
    PlacementOverflowError,
    apply_loss,
    map_network,
    mapping_report,
    save_mapping,
)
from .models import BrunelParams
from .network import (
    WafersimError,
    ensure_sampled,
    load_spec,
    save_spec,
    validate_network,
)
from .pipeline import (
    PipelineConfig,
    StageFailure,
    ValidationFailure,
    build_model,
    run_pipeline,
    scaled_brunel_config,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CAPACITY = 3
EXIT_DIAGNOSTIC = 4

_CAPACITY_ERRORS = (CapacityError, InfeasibleFanInError,
                    PlacementOverflowError, MappingMismatchError)


def _load_config(args) -> dict:
    if args.config is None:
        return {}
    return json.loads(Path(args.config).read_text())


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_build(args) -> int:
    cfg = _load_config(args)
    model = cfg.get("model", {})
    if args.model:
        model = {"name": args.model, "params": model.get("params", {})}
    if not model.get("name"):
        print("error: no model given (use positional model or --config)",
              file=sys.stderr)
        return EXIT_VALIDATION
    spec = build_model(model, args.seed)
    report = validate_network(spec)
    if not report.ok:
        print("validation failed:", "; ".join(report.findings), file=sys.stderr)
        return EXIT_VALIDATION
    path = save_spec(spec, _out_dir(args) / "spec.json")
    print(f"wrote {path} ({spec.n_neurons()} neurons, "
          f"{spec.expected_total_synapses():.0f} expected synapses)")
    return EXIT_OK


def cmd_adapt(args) -> int:
    spec = load_spec(args.spec)
    cfg = _load_config(args)
    adapt_cfg = AdaptationConfig.from_dict(
        {"seed": args.seed, **cfg.get("adaptation", cfg)})
    adapted, report = adapt_pipeline(spec, adapt_cfg)
    ensure_sampled(adapted)
    out = _out_dir(args)
    path = save_spec(adapted, out / "adapted.json")
    (out / "adaptation_report.json").write_text(
        json.dumps(report.to_dict(), indent=2))
    (out / "adaptation_report.txt").write_text(report.render_text())
    print(report.render_text())
    print(f"wrote {path}")
    return EXIT_OK


def cmd_map(args) -> int:
    spec = ensure_sampled(load_spec(args.spec))
    cfg = _load_config(args)
    topology = WaferTopology.from_dict(cfg.get("topology", cfg))
    cap = capacity_report(topology, spec)
    if not cap.feasible:
        print("capacity check failed:", "; ".join(cap.notes), file=sys.stderr)
        return EXIT_CAPACITY
    result = map_network(spec, topology, seed=args.seed)
    out = _out_dir(args)
    save_mapping(result, out / "mapping.json")
    report = mapping_report(result, topology)
    (out / "mapping_report.json").write_text(json.dumps(report, indent=2))
    mapped = apply_loss(spec, result)
    save_spec(mapped, out / "mapped.json")
    print(f"mapped: {report['total_realized']} of {report['total_requested']} "
          f"synapses realized (loss {report['loss_fraction']:.4f})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = ensure_sampled(load_spec(args.spec))
    cfg = _load_config(args)
    sim = dict(cfg.get("simulation", cfg))
    sim.setdefault("seed", args.seed)
    if args.duration is not None:
        sim["duration"] = args.duration
    if args.dt is not None:
        sim["dt"] = args.dt
    record = simulate(spec, SimulationConfig(**sim))
    out = _out_dir(args)
    save_spikes_csv(record, out / "spikes.csv")
    save_spikes_binary(record, out / "spikes.bin")
    if record.probes:
        save_membrane_csv(record, out / "membrane.csv")
    print(f"{record.spike_count()} spikes, {record.deliveries} deliveries, "
          f"{record.wall_time:.3f} s wall")
    return EXIT_OK


def cmd_analyze(args) -> int:
    record = load_spikes_binary(args.spikes)
    cfg = _load_config(args).get("analysis", {})
    lo = args.window_start if args.window_start is not None \
        else float(cfg.get("window_start", min(1000.0, record.duration / 2)))
    window = (lo, float(cfg.get("window_end", record.duration)))
    rates = mean_rates(record, window)
    out = _out_dir(args)
    lines = ["population,mean_rate_hz"]
    for pid, rate in rates.per_population_mean.items():
        lines.append(f"{pid},{rate:.6f}")
    (out / "rates.csv").write_text("\n".join(lines) + "\n")
    hist_lines = ["population,bin_lo_hz,bin_hi_hz,count"]
    for pid in record.population_slices:
        try:
            hist = rate_distribution(record, pid, window,
                                     bins=int(cfg.get("bins", 20)))
        except WafersimError:
            continue
        for b_lo, b_hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:],
                                 hist.counts):
            hist_lines.append(f"{pid},{b_lo:.4f},{b_hi:.4f},{c}")
    (out / "rate_histograms.csv").write_text("\n".join(hist_lines) + "\n")
    cv = cv_isi(record, window)
    sync = synchrony(record, window, float(cfg.get("synchrony_bin_ms", 2.0)))
    regime = classify_regime(rates, cv, sync, RegimeThresholds())
    summary = {
        "window": list(window),
        "per_population_mean_rate_hz": rates.per_population_mean,
        "cv_isi_mean": cv.mean(),
        "synchrony": sync,
        "regime": regime,
    }
    (out / "analysis.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    sweep_cfg = cfg.get("sweep", {})
    g_values = [float(v) for v in (
        args.g.split(",") if args.g else sweep_cfg.get("g", [2, 3, 4, 5, 6, 8]))]
    eta_values = [float(v) for v in (
        args.eta.split(",") if args.eta else sweep_cfg.get("eta", [0.5, 0.9, 1, 2, 4]))]
    model_params = dict(cfg.get("model", {}).get("params", {}))
    model_params.pop("g", None)
    model_params.pop("eta", None)
    base = SweepBaseConfig(
        brunel=BrunelParams(**model_params),
        adaptation=AdaptationConfig.from_dict(
            {"seed": args.seed, **cfg.get("adaptation", {})}),
        simulation=SimulationConfig(
            **{"seed": args.seed, **cfg.get("simulation", {})}),
        window_start=float(cfg.get("analysis", {}).get("window_start", 500.0)),
        seed=args.seed,
    )
    grid = phase_sweep(g_values, eta_values, base, parallel=args.threads)
    out = _out_dir(args)
    (out / "sweep.csv").write_text(grid.to_csv())
    print(grid.to_csv(), end="")
    if grid.partial:
        print("warning: some cells failed; grid is partial", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    if cfg:
        config = PipelineConfig(**{"seed": args.seed, **cfg})
    else:
        config = scaled_brunel_config(seed=args.seed,
                                      duration=args.duration or 2000.0)
    result = run_pipeline(config, _out_dir(args), threads=args.threads)
    report = throughput_metrics(result.record)
    print(report.render_text())
    return EXIT_OK


def cmd_wafer_report(args) -> int:
    cfg = _load_config(args)
    topology = WaferTopology.from_dict(cfg.get("topology", cfg))
    doc = {
        "topology": topology.to_dict(),
        "n_asics": topology.n_asics,
        "total_circuits": topology.total_circuits,
        "max_fan_in": topology.max_fan_in,
        "content_hash": topology.content_hash(),
    }
    if args.spec:
        spec = ensure_sampled(load_spec(args.spec))
        doc["capacity"] = capacity_report(topology, spec).to_dict()
    out = _out_dir(args)
    (out / "wafer_report.json").write_text(json.dumps(doc, indent=2))
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--config", default=None,
                        help="JSON config document with per-stage sections")

    parser = argparse.ArgumentParser(prog="wafersim")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[common],
                       help="build a network model specification")
    p.add_argument("model", nargs="?", choices=["brunel", "microcircuit"])
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("adapt", parents=[common],
                       help="run the hardware adaptation pipeline on a spec")
    p.add_argument("spec")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("map", parents=[common],
                       help="place and route a spec onto the wafer")
    p.add_argument("spec")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("simulate", parents=[common], help="simulate a spec")
    p.add_argument("spec")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common],
                       help="compute statistics over a spike record")
    p.add_argument("spikes", help="binary spike record file")
    p.add_argument("--window-start", type=float, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", parents=[common],
                       help="run a (g, eta) phase sweep")
    p.add_argument("--g", default=None, help="comma-separated g values")
    p.add_argument("--eta", default=None, help="comma-separated eta values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", parents=[common],
                       help="run the throughput benchmark pipeline")
    p.add_argument("--duration", type=float, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("wafer", parents=[common], help="wafer model commands")
    wafer_sub = p.add_subparsers(dest="wafer_command", required=True)
    w = wafer_sub.add_parser("report", parents=[common],
                             help="report wafer aggregates and capacity")
    w.add_argument("--spec", default=None)
    w.set_defaults(func=cmd_wafer_report)

    return parser


def _classify_exit(exc: Exception) -> int:
    if isinstance(exc, StageFailure):
        return _classify_exit(exc.cause)
    if isinstance(exc, SimulationDiagnosticError):
        return EXIT_DIAGNOSTIC
    if isinstance(exc, _CAPACITY_ERRORS):
        return EXIT_CAPACITY
    return EXIT_VALIDATION


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationFailure, ValueError, OSError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _classify_exit(exc)
    except SimulationDiagnosticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    except _CAPACITY_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except WafersimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
