"""Study runner: parse a JSON study config, execute it, and emit trace
CSVs plus a summary report.

Subcommands
-----------
run <config.json> [--jobs N] [--out DIR] [--seed S]
    Execute the configured study (bo-grid, bo-continuous, baseline-suite,
    exceedance, monte-carlo, or impedance-scan).
compare <config.json> [--out DIR] [--jobs N]
    Budget-matched method comparison against an oracle optimum; writes a
    comparison table CSV.
impedance --fmin F --fmax F --points N [--out DIR]
    Analytic input-impedance scan of the energization circuit.

Exit codes: 0 success, 2 config-validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import baselines as bl
from .circuit import CircuitParams, default_magnetizing_curve, input_impedance
from .errors import ConfigError, EmtStudioError
from .exceedance import (
    ExceedanceStudy,
    estimate_exceedance_probability,
    monte_carlo_oracle,
    run_classification,
)
from .gp import KernelKind
from .inference import GradAscentConfig, McmcConfig, PriorSpec
from .loop import (
    IterationRecord,
    MapBackend,
    McmcBackend,
    MlBackend,
    StudyConfig,
    run_bo,
)
from .objectives import (
    ScaledObjective,
    energization_objective,
    load_grid_objective,
    synthetic_risk_surface,
)

KERNELS = {"se": KernelKind.SQUARED_EXPONENTIAL, "matern52": KernelKind.MATERN52}
STUDY_KINDS = (
    "bo-grid",
    "bo-continuous",
    "baseline-suite",
    "exceedance",
    "monte-carlo",
    "impedance-scan",
)


def _require(cfg: dict, key: str, types, path: str = ""):
    where = f"{path}.{key}" if path else key
    if key not in cfg:
        raise ConfigError(f"{where}: missing required field")
    value = cfg[key]
    if not isinstance(value, types):
        raise ConfigError(f"{where}: expected {types}, got {type(value).__name__}")
    return value


def _optional(cfg: dict, key: str, types, default, path: str = ""):
    if key not in cfg:
        return default
    return _require(cfg, key, types, path)


def _priors_from(cfg: dict, path: str) -> PriorSpec:
    sigma = _optional(cfg, "sigma", list, [0.1, 6.0], path)
    ls = _optional(cfg, "lengthscale", list, [0.1, 1.0], path)
    try:
        return PriorSpec(tuple(sigma), tuple(ls))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from None


def build_backend(cfg: dict, path: str = "backend"):
    kind = _require(cfg, "type", str, path)
    ascent = GradAscentConfig(
        steps=_optional(cfg, "steps", int, 100, path),
        step_size=_optional(cfg, "step_size", (int, float), 1e-4, path),
        tie_lengthscales=_optional(cfg, "tie_lengthscales", bool, False, path),
    )
    priors = _priors_from(_optional(cfg, "priors", dict, {}, path), f"{path}.priors")
    if kind == "ml":
        return MlBackend(ascent=ascent)
    if kind == "map":
        return MapBackend(priors=priors, ascent=ascent)
    if kind == "mcmc":
        mcmc = McmcConfig(
            sample_count=_optional(cfg, "samples", int, 100, path),
            burn_in=_optional(cfg, "burn_in", int, 100, path),
            thin=_optional(cfg, "thin", int, 1, path),
        )
        return McmcBackend(priors=priors, mcmc=mcmc)
    raise ConfigError(f"{path}.type: unknown backend {kind!r}")


def build_circuit(cfg: dict, path: str = "circuit") -> CircuitParams:
    curve = default_magnetizing_curve(
        magnetizing_current_frac=_optional(cfg, "magnetizing_current_frac", (int, float), 0.003, path),
        saturated_slope_pu=_optional(cfg, "saturated_slope_pu", (int, float), 0.10, path),
        knee_pu=_optional(cfg, "knee_pu", (int, float), 1.1, path),
    )
    defaults = CircuitParams()
    return CircuitParams(
        resistance=_optional(cfg, "resistance", (int, float), defaults.resistance, path),
        inductance=_optional(cfg, "inductance", (int, float), defaults.inductance, path),
        capacitance=_optional(cfg, "capacitance", (int, float), defaults.capacitance, path),
        source_amplitude=_optional(
            cfg, "source_amplitude", (int, float), defaults.source_amplitude, path
        ),
        source_frequency=_optional(
            cfg, "source_frequency", (int, float), defaults.source_frequency, path
        ),
        magnetizing_curve=curve,
        core_loss_resistance=_optional(
            cfg, "core_loss_resistance", (int, float), defaults.core_loss_resistance, path
        ),
    )


def build_objective(cfg: dict) -> ScaledObjective:
    """Instantiate the study objective named by the config."""
    obj_id = _require(cfg, "objective", str)
    circuit = build_circuit(_optional(cfg, "circuit", dict, {}))
    dt = _optional(cfg, "dt", (int, float), 10e-6)
    duration = _optional(cfg, "duration", (int, float), 1.0)
    divisor = _optional(cfg, "divisor", (int, float), 800.0)
    sense = _optional(cfg, "sense", str, "maximize")
    if obj_id == "energization-1d":
        return energization_objective(circuit, 1, dt, duration, divisor, sense)
    if obj_id == "energization-3d":
        return energization_objective(circuit, 3, dt, duration, divisor, sense)
    raise ConfigError(f"objective: unknown id {obj_id!r}")


def write_trace_csv(path, records: list[IterationRecord], dim: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iter"]
            + [f"x{j}" for j in range(dim)]
            + ["y", "incumbent", "acquisition", "theta"]
        )
        for r in records:
            writer.writerow(
                [r.index]
                + [repr(float(v)) for v in np.atleast_1d(r.x)]
                + [
                    repr(float(r.y)),
                    repr(float(r.incumbent)),
                    repr(float(r.acquisition)),
                    json.dumps(r.theta_summary),
                ]
            )


def read_trace_csv(path) -> list[IterationRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = sum(1 for h in header if h.startswith("x"))
        for row in reader:
            records.append(
                IterationRecord(
                    index=int(row[0]),
                    x=np.array([float(v) for v in row[1 : 1 + dim]]),
                    y=float(row[1 + dim]),
                    incumbent=float(row[2 + dim]),
                    acquisition=float(row[3 + dim]),
                    theta_summary=json.loads(row[4 + dim]),
                )
            )
    return records


def _grid_study_pieces(cfg: dict):
    source = _optional(cfg, "grid_file", str, "")
    grid = load_grid_objective(source) if source else synthetic_risk_surface()
    domain = grid.domain()
    divisor = _optional(cfg, "divisor", (int, float), 1.0)
    sense = _optional(cfg, "sense", str, "minimize")
    return grid, domain, divisor, sense


def _run_bo_once(cfg: dict, seed: int):
    """One seeded BO run built entirely from the raw config (picklable)."""
    kind = cfg["kind"]
    kernel = KERNELS[_optional(cfg, "kernel", str, "se" if kind == "bo-grid" else "matern52")]
    backend = build_backend(_require(cfg, "backend", dict))
    if kind == "bo-grid":
        grid, domain, divisor, sense = _grid_study_pieces(cfg)
        objective = ScaledObjective(grid, domain, divisor, sense, name="grid")
    else:
        objective = build_objective(cfg)
        domain = objective.domain
    study = StudyConfig(
        domain=domain,
        backend=backend,
        kernel=kernel,
        init_count=_optional(cfg, "init_count", int, 3),
        max_iterations=_optional(cfg, "iterations", int, 20),
        seed=seed,
        objective_id=objective.name,
    )
    trace = run_bo(study, objective)
    return trace, objective


def _bo_worker(args):
    cfg, seed = args
    trace, objective = _run_bo_once(cfg, seed)
    return seed, trace, objective.unscale_output(trace.best_y), objective.evaluation_count


def run_bo_study(cfg: dict, out: Path, jobs: int) -> dict:
    seed0 = _require(cfg, "seed", int)
    restarts = _optional(cfg, "restarts", int, 1)
    tasks = [(cfg, seed0 + i) for i in range(restarts)]
    if jobs > 1 and restarts > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_bo_worker, tasks))
    else:
        results = [_bo_worker(t) for t in tasks]
    runs = []
    for seed, trace, best_native, evals in results:
        trace_file = out / f"trace_seed{seed}.csv"
        write_trace_csv(trace_file, trace.records, trace.records[0].x.size)
        runs.append(
            {
                "seed": seed,
                "evaluations": evals,
                "best_scaled": trace.best_y,
                "best_native": best_native,
                "best_x": [float(v) for v in trace.best_x],
                "aborted": trace.aborted,
                "trace_file": trace_file.name,
            }
        )
    best = min(runs, key=lambda r: r["best_scaled"])
    summary = {
        "restarts": len(runs),
        "best_scaled": best["best_scaled"],
        "best_native": best["best_native"],
        "best_x": best["best_x"],
    }
    if cfg["kind"] == "bo-grid" and not _optional(cfg, "grid_file", str, ""):
        fixture = synthetic_risk_surface()
        hits = sum(
            1 for r in runs if abs(r["best_scaled"] - fixture.min_value) < 1e-12
        )
        summary["optimum_value"] = fixture.min_value
        summary["restarts_converged"] = hits
    return {"runs": runs, "summary": summary}


def run_baseline_suite(cfg: dict, out: Path, jobs: int) -> dict:
    seed0 = _require(cfg, "seed", int)
    budget = _optional(cfg, "budget", int, 25)
    methods = _optional(cfg, "methods", list, ["random", "nelder-mead", "dual-annealing"])
    nm_starts = _optional(cfg, "nm_starts_ms", list, [2.5, 5.0, 7.5])
    runs = []
    for method in methods:
        if method == "random":
            obj = build_objective(cfg)
            res = bl.random_search(obj, obj.domain, budget, seed0)
            entries = [("random", res, obj)]
        elif method == "nelder-mead":
            entries = []
            for start in nm_starts:
                obj = build_objective(cfg)
                x0 = np.array([start * 1e-3] + [0.0] * (obj.dim - 1))
                res = bl.nelder_mead(obj, obj.domain, x0, budget)
                entries.append((f"nelder-mead@{start}ms", res, obj))
        elif method == "dual-annealing":
            obj = build_objective(cfg)
            res = bl.dual_annealing(obj, obj.domain, budget, seed0)
            entries = [("dual-annealing", res, obj)]
        else:
            raise ConfigError(f"methods: unknown baseline {method!r}")
        for label, res, obj in entries:
            trace_file = out / f"trace_{label.replace('@', '_at_')}.csv"
            write_trace_csv(trace_file, res.records, obj.dim)
            runs.append(
                {
                    "method": label,
                    "evaluations": res.evaluations,
                    "best_native": obj.unscale_output(res.best_y),
                    "best_x": [float(v) for v in res.best_x],
                    "converged": res.converged,
                    "trace_file": trace_file.name,
                }
            )
    return {"runs": runs, "summary": {"budget": budget, "methods": len(runs)}}


def run_exceedance_study(cfg: dict, out: Path, jobs: int) -> dict:
    seed = _require(cfg, "seed", int)
    objective = build_objective({**cfg, "sense": "minimize"})
    study = ExceedanceStudy(
        threshold_kv=_require(cfg, "threshold_kv", (int, float)),
        n_init=_optional(cfg, "n_init", int, 5),
        n_acquire=_optional(cfg, "n_acquire", int, 10),
        estimator_samples=_optional(cfg, "estimator_samples", int, 100_000),
    )
    result = run_classification(study, objective, seed)
    hard = estimate_exceedance_probability(result.posterior, study, objective, seed + 1)
    soft = estimate_exceedance_probability(
        result.posterior, study, objective, seed + 1, soft=True
    )
    acquired_file = out / "acquired_points.csv"
    with open(acquired_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(objective.dim)] + ["y_scaled"])
        for u, y in zip(result.data.inputs, result.data.outputs):
            x = objective.to_native_input(u)
            writer.writerow([repr(float(v)) for v in np.atleast_1d(x)] + [repr(float(y))])
    report = {
        "surrogate_estimate": hard,
        "surrogate_estimate_soft": soft,
        "simulator_evaluations": objective.evaluation_count,
        "acquired_file": acquired_file.name,
    }
    oracle_n = _optional(cfg, "oracle_samples", int, 0)
    if oracle_n:
        oracle_obj = build_objective({**cfg, "sense": "minimize"})
        oracle = monte_carlo_oracle(oracle_obj, study, oracle_n, seed + 2, jobs=jobs)
        hist_file = out / "histogram.csv"
        _write_histogram(hist_file, oracle.values_kv, _optional(cfg, "histogram_bins", int, 40))
        report.update(
            {
                "oracle_probability": oracle.probability,
                "oracle_ci_half_width": oracle.ci_half_width,
                "histogram_file": hist_file.name,
            }
        )
    return {"runs": [report], "summary": report}


def _write_histogram(path, values_kv: np.ndarray, bins: int) -> None:
    counts, edges = np.histogram(values_kv, bins=bins)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left_kv", "bin_right_kv", "count"])
        for c, left, right in zip(counts, edges[:-1], edges[1:]):
            writer.writerow([repr(float(left)), repr(float(right)), int(c)])


def run_monte_carlo_study(cfg: dict, out: Path, jobs: int) -> dict:
    seed = _require(cfg, "seed", int)
    objective = build_objective({**cfg, "sense": "minimize"})
    study = ExceedanceStudy(
        threshold_kv=_optional(cfg, "threshold_kv", (int, float), 750.0)
    )
    n = _optional(cfg, "samples", int, 7000)
    oracle = monte_carlo_oracle(objective, study, n, seed, jobs=jobs)
    hist_file = out / "histogram.csv"
    _write_histogram(hist_file, oracle.values_kv, _optional(cfg, "histogram_bins", int, 40))
    summary = {
        "samples": n,
        "probability_above_threshold": oracle.probability,
        "ci_half_width": oracle.ci_half_width,
        "max_kv": float(oracle.values_kv.max()),
        "p95_kv": float(np.percentile(oracle.values_kv, 95)),
        "failures": oracle.n_failures,
        "histogram_file": hist_file.name,
    }
    return {"runs": [summary], "summary": summary}


def run_impedance_scan(cfg: dict, out: Path, jobs: int) -> dict:
    fmin = _optional(cfg, "fmin", (int, float), 20.0)
    fmax = _optional(cfg, "fmax", (int, float), 300.0)
    points = _optional(cfg, "points", int, 200)
    if not (0 < fmin < fmax):
        raise ConfigError("fmin/fmax: need 0 < fmin < fmax")
    params = build_circuit(_optional(cfg, "circuit", dict, {}))
    freqs = np.linspace(fmin, fmax, points)
    mags = np.array([input_impedance(params, f) for f in freqs])
    scan_file = out / "impedance.csv"
    with open(scan_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frequency_hz", "impedance_ohm"])
        for f, m in zip(freqs, mags):
            writer.writerow([repr(float(f)), repr(float(m))])
    peak = int(np.argmax(mags))
    summary = {
        "peak_frequency_hz": float(freqs[peak]),
        "peak_impedance_ohm": float(mags[peak]),
        "scan_file": scan_file.name,
    }
    return {"runs": [summary], "summary": summary}


RUNNERS = {
    "bo-grid": run_bo_study,
    "bo-continuous": run_bo_study,
    "baseline-suite": run_baseline_suite,
    "exceedance": run_exceedance_study,
    "monte-carlo": run_monte_carlo_study,
    "impedance-scan": run_impedance_scan,
}


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    kind = _require(cfg, "kind", str)
    if kind not in STUDY_KINDS:
        raise ConfigError(f"kind: unknown study kind {kind!r} (expected one of {STUDY_KINDS})")
    if kind != "impedance-scan":
        _require(cfg, "seed", int)
        if kind in ("bo-grid", "bo-continuous"):
            _require(cfg, "backend", dict)
        if kind == "bo-grid":
            grid_file = _optional(cfg, "grid_file", str, "")
            if grid_file and not Path(grid_file).exists():
                raise ConfigError(f"grid_file: {grid_file} does not exist")
        if kind in ("bo-continuous", "baseline-suite", "exceedance", "monte-carlo"):
            _require(cfg, "objective", str)
        if kind == "exceedance":
            _require(cfg, "threshold_kv", (int, float))
    return cfg


def run_study(config_path, out_dir=None, jobs: int = 1, seed_override=None) -> dict:
    """Execute one study config; returns the report written to summary.json."""
    start = time.time()
    cfg = load_config(config_path)
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    out = Path(out_dir) if out_dir else Path(f"out-{Path(config_path).stem}")
    out.mkdir(parents=True, exist_ok=True)
    body = RUNNERS[cfg["kind"]](cfg, out, jobs)
    report = {
        "study_id": Path(config_path).stem,
        "kind": cfg["kind"],
        "config": cfg,
        **body,
        "wall_time_s": round(time.time() - start, 3),
    }
    manifest = [v["trace_file"] for v in body.get("runs", []) if isinstance(v, dict) and "trace_file" in v]
    for key in ("histogram_file", "acquired_file", "scan_file"):
        for v in body.get("runs", []):
            if isinstance(v, dict) and key in v:
                manifest.append(v[key])
    report["manifest"] = sorted(set(manifest)) + ["summary.json"]
    (out / "summary.json").write_text(json.dumps(report, indent=2))
    return report


def _dense_sweep_oracle(cfg: dict, points: int) -> float:
    objective = build_objective(cfg)
    us = np.linspace(0.0, 1.0, points)
    if objective.dim == 1:
        grid = us[:, None]
    else:
        raise ConfigError("oracle.kind dense-sweep supports only 1-D objectives")
    vals = [objective.evaluate(u) for u in grid]
    best_scaled = min(vals)
    return objective.unscale_output(best_scaled)


def compare_methods(config_path, out_dir=None, jobs: int = 1) -> dict:
    """Budget-matched comparison table: evaluations, optimality gap percent
    against the oracle optimum, and the converged flag per method."""
    cfg = load_config(config_path)
    if cfg["kind"] != "baseline-suite":
        raise ConfigError("compare expects a baseline-suite config")
    oracle_cfg = _require(cfg, "oracle", dict)
    okind = _require(oracle_cfg, "kind", str, "oracle")
    if okind == "value":
        oracle = float(_require(oracle_cfg, "value", (int, float), "oracle"))
    elif okind == "dense-sweep":
        oracle = _dense_sweep_oracle(cfg, _optional(oracle_cfg, "points", int, 1000, "oracle"))
    else:
        raise ConfigError(f"oracle.kind: unknown {okind!r}")
    out = Path(out_dir) if out_dir else Path(f"out-{Path(config_path).stem}")
    out.mkdir(parents=True, exist_ok=True)
    report = run_baseline_suite(cfg, out, jobs)
    if _optional(cfg, "include_bo", dict, {}):
        bo_cfg = {**cfg, "kind": "bo-continuous", **cfg["include_bo"]}
        trace, objective = _run_bo_once(bo_cfg, cfg["seed"])
        report["runs"].insert(
            0,
            {
                "method": "bo",
                "evaluations": objective.evaluation_count,
                "best_native": objective.unscale_output(trace.best_y),
                "best_x": [float(v) for v in trace.best_x],
                "converged": True,
                "trace_file": "",
            },
        )
    table_file = out / "comparison.csv"
    with open(table_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "evaluations", "best", "gap_percent", "converged"])
        for run in report["runs"]:
            gap = abs(run["best_native"] - oracle) / abs(oracle) * 100.0
            writer.writerow(
                [
                    run["method"],
                    run["evaluations"],
                    repr(float(run["best_native"])),
                    repr(float(gap)),
                    run["converged"],
                ]
            )
    result = {"oracle": oracle, "table_file": str(table_file), "runs": report["runs"]}
    (out / "summary.json").write_text(json.dumps(result, indent=2))
    return result


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="emtstudio", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a study config")
    p_run.add_argument("config")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_cmp = sub.add_parser("compare", help="method comparison table")
    p_cmp.add_argument("config")
    p_cmp.add_argument("--jobs", type=int, default=1)
    p_cmp.add_argument("--out", default=None)
    p_imp = sub.add_parser("impedance", help="analytic impedance scan")
    p_imp.add_argument("--fmin", type=float, required=True)
    p_imp.add_argument("--fmax", type=float, required=True)
    p_imp.add_argument("--points", type=int, required=True)
    p_imp.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            report = run_study(args.config, args.out, args.jobs, args.seed)
            print(json.dumps(report["summary"], indent=2))
        elif args.command == "compare":
            result = compare_methods(args.config, args.out, args.jobs)
            print(f"oracle optimum: {result['oracle']}")
            print(f"table: {result['table_file']}")
        else:
            cfg = {"kind": "impedance-scan", "fmin": args.fmin, "fmax": args.fmax,
                   "points": args.points}
            out = Path(args.out) if args.out else Path("out-impedance")
            out.mkdir(parents=True, exist_ok=True)
            summary = run_impedance_scan(cfg, out, 1)["summary"]
            print(json.dumps(summary, indent=2))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (EmtStudioError, OSError, ValueError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
