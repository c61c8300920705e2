"""Command-line front end.

Subcommands ``simulate``, ``analyze``, ``sweep`` and ``optimize`` read a JSON
config (see :mod:`chainmem.config`) and write CSV/JSON artifacts plus a
``manifest.json`` into ``--out``. Exit codes: 0 success, 1 config error,
2 resource guard, 3 numerical or analysis failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    condition_report,
    common_unflagged,
    default_tau_window,
    fit_decay,
    optimize_schedule,
    scan_tau,
)
from .config import ExperimentConfig, load_config
from .errors import AnalysisError, ConfigError, ContractError, DomainError, NumericalError, ResourceError
from .propagator import ChainEvolver
from .protocol import (
    ProtocolSchedule,
    TransferMap,
    format_float,
    recovery_metrics,
    run_protocol,
    steps_to_survival,
    survival_curve,
)

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_NUMERICAL = 0, 1, 2, 3
MANIFEST_VERSION = 1
DEFAULT_TRANSFER_ROWS = 4096
DEFAULT_GRID_POINTS = 60
SWEEP_HEADER = ["seed", "N", "N_B", "steps", "success_prob", "fitted_rate", "model_rate", "time_to_target"]


def resolve_schedule(config: ExperimentConfig, spec, evolver: ChainEvolver) -> tuple[ProtocolSchedule, dict]:
    """Turn the schedule section into concrete swap times; also return provenance info."""
    sched = config.schedule
    if not sched:
        raise ConfigError("config needs a 'schedule' section")
    try:
        if "optimize" in sched:
            return _optimized(sched["optimize"], spec, evolver, config.raw.get("input", "all_up"), config)
        if "taus" in sched:
            return ProtocolSchedule(tuple(float(t) for t in sched["taus"])), {}
        tau = float(sched["tau"])
        if "survival_threshold" in sched:
            threshold = float(sched["survival_threshold"])
            steps = max(
                steps_to_survival(spec, tau, n, threshold, evolver=evolver) for n in range(1, spec.layout.n_a + 1)
            )
            return ProtocolSchedule.uniform(tau, max(steps, 1)), {"survival_threshold": threshold, "steps": steps}
        return ProtocolSchedule.uniform(tau, int(sched["steps"])), {}
    except KeyError as exc:
        raise ConfigError(f"schedule is missing {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DomainError) and "stays above" in str(exc):
            raise AnalysisError(str(exc)) from exc
        raise ConfigError(f"bad schedule: {exc}") from exc


def _optimized(opts: dict, spec, evolver, psi, config) -> tuple[ProtocolSchedule, dict]:
    steps = int(opts["steps"])
    grid_points = int(opts.get("grid_points", DEFAULT_GRID_POINTS))
    window = opts.get("tau_window", "auto")
    info = {"grid_points": grid_points}
    if window == "auto":
        window, te = default_tau_window(spec, evolver)
        info["transit_time"] = te
    info["tau_window"] = [float(window[0]), float(window[1])]
    psi_vec = config.input_vector(spec.layout) if not isinstance(psi, str) else psi
    schedule = optimize_schedule(spec, steps, window, grid_points, psi_vec, evolver)
    return schedule, info


def _limit_rows(tmap: TransferMap, limit: int | None) -> dict:
    """Serialize ``tmap``, keeping only the ``limit`` heaviest memory patterns."""
    rows = len(tmap.patterns)
    if limit is None or rows <= limit:
        data = tmap.to_dict()
        data["truncated"] = False
        return data
    weight = np.sum(np.abs(tmap.matrix) ** 2, axis=1)
    keep = np.sort(np.argsort(-weight, kind="stable")[:limit])
    kept = TransferMap(tmap.step, tmap.n_a, tmap.n_b, tuple(tmap.patterns[r] for r in keep), tmap.matrix[keep])
    data = kept.to_dict()
    data["truncated"] = True
    data["omitted_rows"] = rows - limit
    data["omitted_weight"] = float(np.sum(weight) - np.sum(weight[keep]))
    return data


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _versions() -> dict:
    return {"chainmem": __version__, "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(out: Path, command: str, config: ExperimentConfig, files: list, started: float,
                   seeds, extra: dict | None = None) -> Path:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": config.raw,
        "files": sorted(files),
        "versions": _versions(),
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_seconds": time.time() - started,
        "seed_trail": list(seeds),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    _write_json(path, manifest)
    return path


def _seed_trail(config: ExperimentConfig) -> list:
    seed = config.chain.get("seed")
    return [] if seed is None else [int(seed)]


def cmd_simulate(config: ExperimentConfig, out: Path) -> float:
    started = time.time()
    spec = config.chain_spec()
    evolver = ChainEvolver(spec)
    schedule, info = resolve_schedule(config, spec, evolver)
    psi = config.input_vector()
    _, record, tmap = run_protocol(spec, schedule, psi, evolver)
    metrics = recovery_metrics(tmap)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        record.to_csv(fh)
    limit = config.outputs.get("transfer_map_rows", DEFAULT_TRANSFER_ROWS)
    data = _limit_rows(tmap, None if limit is None else int(limit))
    data["recovery"] = metrics.to_dict()
    _write_json(out / "transfer_map.json", data)
    extra = {"schedule": {"steps": schedule.steps, **info}}
    write_manifest(out, "simulate", config, ["trajectory.csv", "transfer_map.json"], started,
                   _seed_trail(config), extra)
    return metrics.worst_case_fidelity_bound


def cmd_analyze(config: ExperimentConfig, out: Path) -> None:
    started = time.time()
    spec = config.chain_spec()
    evolver = ChainEvolver(spec)
    analysis = config.analysis
    sectors = [int(n) for n in analysis.get("sectors", range(1, spec.layout.n_a + 1))]
    if any(n < 1 or n > spec.n_sites for n in sectors):
        raise ConfigError(f"sectors must lie in [1, {spec.n_sites}]")
    tol = float(analysis.get("tol", 1e-10))
    grid = config.tau_grid()
    scan_sector = int(analysis.get("scan_sector", sectors[0] if sectors else 1))
    report = condition_report(spec, sectors, tol, evolver).to_dict()
    scans = {n: scan_tau(spec, n, grid, evolver) for n in sorted(set(sectors) | {scan_sector})}
    report["common_unflagged_taus"] = [float(t) for t in common_unflagged(scans[n] for n in sectors or [scan_sector])]
    _write_json(out / "condition.json", report)
    with open(out / "rho_vs_tau.csv", "w", newline="") as fh:
        scans[scan_sector].to_csv(fh)
    files = ["condition.json", "rho_vs_tau.csv"]
    sched = config.schedule
    if "tau" in sched and "steps" in sched:
        curve = survival_curve(spec, float(sched["tau"]), scan_sector, int(sched["steps"]), evolver)
        with open(out / "survival.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["tau_or_step", "value", "flag"])
            for j, q in enumerate(curve[1:], start=1):
                writer.writerow([j, format_float(q), 0])
        files.append("survival.csv")
    write_manifest(out, "analyze", config, files, started, _seed_trail(config))


def sweep_runs(config: ExperimentConfig) -> list:
    """Config-ordered run list ``(n_sites, n_b, seed)``."""
    sweep = config.sweep
    chain = config.chain
    seeds = sweep.get("seeds", [chain.get("seed")])
    lengths = sweep.get("lengths", [chain["n_a"] + chain["n_c"] + chain["n_b"]])
    n_bs = sweep.get("n_b", [chain["n_b"]])
    runs = [(int(n), int(b), None if s is None else int(s)) for n in lengths for b in n_bs for s in seeds]
    if not runs:
        raise ConfigError("sweep has no runs")
    return runs


def _sweep_chain(config: ExperimentConfig, n_sites: int, n_b: int, seed):
    n_a = int(config.chain["n_a"])
    n_c = n_sites - n_a - n_b
    if n_c < 0:
        raise ConfigError(f"N={n_sites} is too short for n_a={n_a}, n_b={n_b}")
    overrides = {"n_c": n_c, "n_b": n_b}
    if seed is not None:
        overrides["seed"] = seed
    return config.chain_spec(**overrides)


def sweep_row(raw: dict, n_sites: int, n_b: int, seed) -> list:
    """One sweep run; module-level so worker processes can pickle it."""
    config = ExperimentConfig(raw)
    spec = _sweep_chain(config, n_sites, n_b, seed)
    evolver = ChainEvolver(spec)
    steps_override = config.sweep.get("steps")
    if steps_override is not None:
        sched = dict(config.schedule)
        if "optimize" in sched:
            sched["optimize"] = {**sched["optimize"], "steps": int(steps_override)}
        else:
            sched.pop("survival_threshold", None)
            sched["steps"] = int(steps_override)
        config = ExperimentConfig({**config.raw, "schedule": sched})
    schedule, _ = resolve_schedule(config, spec, evolver)
    psi = config.input_vector(spec.layout)
    _, record, _ = run_protocol(spec, schedule, psi, evolver)
    target = float(config.sweep.get("fidelity_target", 0.9))
    hits = np.nonzero(record.fidelity_bound >= target)[0]
    time_to_target = float(schedule.elapsed()[hits[0]]) if hits.size else float("nan")
    try:
        model = fit_decay(record, spec.layout)
        fitted, model_rate = model.rate, model.model_rate
    except AnalysisError:
        fitted, model_rate = float("nan"), 1.0 - n_b / n_sites
    return [
        "" if seed is None else seed,
        n_sites,
        n_b,
        schedule.steps,
        format_float(record.success_prob[-1]),
        format_float(fitted),
        format_float(model_rate),
        format_float(time_to_target),
    ]


def cmd_sweep(config: ExperimentConfig, out: Path, jobs: int = 1) -> None:
    started = time.time()
    runs = sweep_runs(config)
    for n_sites, n_b, seed in runs:  # fail fast on bad axes before spawning workers
        _sweep_chain(config, n_sites, n_b, seed)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(sweep_row, config.raw, *run) for run in runs]
            rows = [f.result() for f in futures]
    else:
        rows = [sweep_row(config.raw, *run) for run in runs]
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        writer.writerows(rows)
    seeds = [s for _, _, s in runs if s is not None]
    write_manifest(out, "sweep", config, ["sweep.csv"], started, seeds, {"jobs": jobs})


def cmd_optimize(config: ExperimentConfig, out: Path) -> ProtocolSchedule:
    started = time.time()
    if "optimize" not in config.schedule:
        raise ConfigError("optimize needs schedule.optimize settings")
    spec = config.chain_spec()
    evolver = ChainEvolver(spec)
    schedule, info = resolve_schedule(config, spec, evolver)
    _write_json(out / "schedule.json", {"taus": list(schedule.taus), **info})
    write_manifest(out, "optimize", config, ["schedule.json"], started, _seed_trail(config))
    return schedule


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainmem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"chainmem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "run the swap protocol and write trajectory.csv and transfer_map.json"),
        ("analyze", "check the convergence condition and scan rho(T_n) over tau"),
        ("sweep", "run disorder seeds x lengths x N_B and write sweep.csv"),
        ("optimize", "greedy swap-time schedule, written to schedule.json"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config, or a manifest.json from an earlier run")
        p.add_argument("--out", default=None, help="output directory (default: outputs.dir or '.')")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--seed", type=int, default=None, help="override chain.seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        config = load_config(args.config, args.seed)
        out = Path(args.out or config.outputs.get("dir", "."))
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            bound = cmd_simulate(config, out)
            print(f"wrote {out / 'trajectory.csv'}")
            print(f"fidelity_bound={format_float(bound)}")
        elif args.command == "analyze":
            cmd_analyze(config, out)
            print(f"wrote {out / 'condition.json'}")
        elif args.command == "sweep":
            cmd_sweep(config, out, args.jobs)
            print(f"wrote {out / 'sweep.csv'}")
        else:
            cmd_optimize(config, out)
            print(f"wrote {out / 'schedule.json'}")
    except ResourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (NumericalError, AnalysisError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
