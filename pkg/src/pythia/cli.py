"""Command-line front end: ``pythia calibrate|simulate|validate|report``.

Exit codes: 0 success, 1 usage, 2 validation failure, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from pythia.calibration import (CalibrationError, ModelGapError, apply_errata, default_calibration_path,
                                default_errata_path, load_calibration, load_device_profiles, read_rows,
                                validate_rows)
from pythia.policies import PolicyError
from pythia.profiler import StoreError, enumerate_configs, load_store, profile_all, save_store
from pythia.scenario import Command, ScenarioError, load_scenario

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("pythia")


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ calibrate

def cmd_calibrate(args) -> int:
    spec = load_scenario(args.scenario)
    backend_name = args.backend or spec.backend
    n = args.training_batches or spec.training_batches
    profiles = load_device_profiles(spec.device_file)
    unknown = [d for d in spec.devices if d not in profiles]
    if unknown:
        raise ValidationFailure(f"scenario devices not in the device profiles: {', '.join(unknown)}")
    t0 = time.perf_counter()
    if backend_name == "sim":
        from pythia.simengine import SimBackend
        table = load_calibration(spec.calibration, devices=profiles,
                                 errata=None if args.no_errata else default_errata_path())
        backend = SimBackend(table, profiles, spec.packet_bytes, spec.flows)
    else:
        from pythia.livebackend import LiveBackend
        backend = LiveBackend(profiles, spec.packet_bytes, seed=spec.seed)
    configs = enumerate_configs(spec.apps, spec.devices, spec.batch_grid)
    gaps = []
    store = profile_all(configs, n, backend, on_gap=lambda c, e: gaps.append((c, e)))
    elapsed = time.perf_counter() - t0
    for c, e in gaps:
        log.warning("no model for %s: %s", c.label(), e)
    if not store.index_size("gbps"):
        raise ValidationFailure(f"no configuration could be profiled on the {backend_name} backend")
    save_store(store, args.out)
    extra = f" ({len(gaps)} unprofiled)" if gaps else ""
    print(f"profiled {len(configs)} configurations{extra} in {elapsed:.2f} s -> {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------- simulate

def _read_command_file(path: str, horizon: float) -> list[Command]:
    """Lines ``<at_ms> policy <name>`` or ``<at_ms> shutdown <ms>``; ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        at, _, text = line.partition(" ")
        try:
            at_ms = float(at)
        except ValueError:
            raise ScenarioError(f"{path}:{lineno}: expected '<at_ms> <command>'") from None
        if not 0 <= at_ms <= horizon:
            raise ScenarioError(f"{path}:{lineno}: at_ms {at_ms:g} outside the horizon")
        out.append(Command.parse(at_ms, text.strip()))
    return out


def cmd_simulate(args) -> int:
    from pythia.simengine import run, write_switch_csv, write_trace_csv
    spec = load_scenario(args.scenario)
    if (args.backend or spec.backend) != "sim":
        raise UsageError("simulate only runs on the sim backend; use calibrate --backend live for host profiling")
    if args.commands:
        spec.commands = sorted([*spec.commands, *_read_command_file(args.commands, spec.horizon_ms)],
                               key=lambda c: c.at_ms)
    store = load_store(args.store)
    profiles = load_device_profiles(spec.device_file)
    table = load_calibration(spec.calibration, devices=profiles,
                             errata=None if args.no_errata else default_errata_path())
    t0 = time.perf_counter()
    trace = run(spec, store, seed=args.seed, paper_fidelity=args.paper_fidelity,
                monitor_interval_ms=args.monitor_interval_ms, table=table, profiles=profiles)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out / "trace.csv")
    write_switch_csv(trace, out / "switches.csv")
    summary = trace.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{spec.name}: {summary['ticks']} ticks, mean {summary['mean_throughput_gbps']:.2f} Gbps, "
          f"mean {summary['mean_power_watts']:.1f} W, {summary['total_drops']} drops, "
          f"{summary['switch_count']} switches ({time.perf_counter() - t0:.2f} s) -> {out}")
    return EXIT_OK


# ------------------------------------------------------------------- validate

def cmd_validate(args) -> int:
    path = Path(args.calibration or default_calibration_path())
    if not path.exists():
        raise ValidationFailure(f"calibration file not found: {path}")
    if not path.read_text().strip():
        print(f"{path}: no data")
        return EXIT_INVALID
    try:
        rows = read_rows(path)
    except CalibrationError as exc:
        if "no rows" in str(exc):
            print(f"{path}: no data")
            return EXIT_INVALID
        raise
    if not args.no_errata and args.calibration is None:
        rows = apply_errata(rows, default_errata_path())
    elif args.errata:
        rows = apply_errata(rows, args.errata)
    results = validate_rows(rows)
    print(f"{path}: {len(rows)} rows")
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


# --------------------------------------------------------------------- report

REPORT_FILES = ("throughput.csv", "power.csv", "latency.csv", "annotations.csv")


def _read_trace(path: Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationFailure(f"{path}: empty trace") from None
        need = ("t_ms", "config_id", "offered_gbps", "processed_gbps", "latency_ms", "drops")
        missing = [c for c in need if c not in header]
        if missing:
            raise ValidationFailure(f"{path}: not a trace (missing {', '.join(missing)})")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise ValidationFailure(f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            row = dict(zip(header, raw))
            for col in header:
                if col not in ("policy",):
                    try:
                        float(row[col])
                    except ValueError:
                        raise ValidationFailure(f"{path}:{lineno}: {col} is not a number: {row[col]!r}") from None
            rows.append(row)
    if not rows:
        raise ValidationFailure(f"{path}: trace has no rows")
    return header, rows


def _write(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_report(args) -> int:
    trace_path = Path(args.trace)
    header, rows = _read_trace(trace_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    thr_cols = ["offered_gbps", *(["admitted_gbps"] if "admitted_gbps" in header else []), "processed_gbps"]
    _write(out / "throughput.csv", ["t_ms", *thr_cols], [[r["t_ms"], *(r[c] for c in thr_cols)] for r in rows])
    dev_cols = [c for c in header if c.startswith("dev:") and c.endswith("_watts")]
    names = [c[4:-6] for c in dev_cols]
    _write(out / "power.csv", ["t_ms", *(f"{n}_watts" for n in names), "total_watts"],
           [[r["t_ms"], *(r[c] for c in dev_cols), f"{sum(float(r[c]) for c in dev_cols):.4f}"] for r in rows])
    _write(out / "latency.csv", ["t_ms", "latency_ms"], [[r["t_ms"], r["latency_ms"]] for r in rows])

    notes = []
    prev_cfg = prev_pol = None
    for r in rows:
        if r["config_id"] != prev_cfg:
            notes.append((float(r["t_ms"]), r["t_ms"], "config", r["config_id"]))
            prev_cfg = r["config_id"]
        pol = r.get("policy")
        if pol is not None and pol != prev_pol:
            notes.append((float(r["t_ms"]), r["t_ms"], "policy", pol))
            prev_pol = pol
    switches = Path(args.switches) if args.switches else trace_path.with_name("switches.csv")
    if switches.exists():
        with open(switches, newline="") as fh:
            for s in csv.DictReader(fh):
                notes.append((float(s["t_ms"]), s["t_ms"], "switch",
                              f"{s['from'] or '-'}->{s['to']} {s['reason']} done@{s['completion_ms']}"))
    notes.sort(key=lambda n: n[0])
    _write(out / "annotations.csv", ["t_ms", "kind", "value"], [[t, k, v] for _, t, k, v in notes])
    print(f"wrote {', '.join(REPORT_FILES)} ({len(rows)} points) -> {out}")
    return EXIT_OK


# ----------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pythia", description="Adaptive packet-processing scheduler on simulated heterogeneous devices.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", help="profile every configuration of a scenario into a store file")
    c.add_argument("--scenario", required=True, help="scenario file or shipped name (fig5a..fig5d, steady, stepload)")
    c.add_argument("--out", required=True, help="store file to write")
    c.add_argument("--backend", choices=("sim", "live"))
    c.add_argument("--training-batches", type=int)
    c.add_argument("--no-errata", action="store_true", help="use the published table numbers uncorrected")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", help="run a scenario against a profiled store")
    s.add_argument("--scenario", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--backend", choices=("sim", "live"))
    s.add_argument("--monitor-interval-ms", type=float)
    s.add_argument("--paper-fidelity", action="store_true", help="disable hysteresis")
    s.add_argument("--commands", help="command file: '<at_ms> policy <name>' or '<at_ms> shutdown <ms>' per line")
    s.add_argument("--no-errata", action="store_true")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("validate", help="check calibration-table invariants")
    v.add_argument("calibration", nargs="?", help="calibration CSV (default: shipped tables)")
    v.add_argument("--errata", help="errata CSV to apply before checking")
    v.add_argument("--no-errata", action="store_true", help="check the shipped tables without corrections")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("report", help="turn a trace into plot-ready series")
    r.add_argument("--trace", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--switches", help="switch-event CSV (default: switches.csv beside the trace)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("training_batches", "monitor_interval_ms"):
        v = getattr(args, name, None)
        if v is not None and v <= 0:
            parser.error(f"--{name.replace('_', '-')} must be positive")
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pythia: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationFailure, ScenarioError, CalibrationError, StoreError, PolicyError) as exc:
        print(f"pythia: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:                 # includes ScenarioMismatch
        print(f"pythia: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ModelGapError, RuntimeError) as exc:
        print(f"pythia: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
