"""Command-line front-end: evaluate curves, simulate studies, fit, cross-check.

One JSON configuration file drives all four commands; a handful of flags
override the common knobs.  Outputs are CSV and JSON files written
atomically, accompanied by a run manifest recording versions, the
configuration hash, seeds, and the produced files.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 estimation did not converge (outputs still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from datetime import datetime, timezone
from importlib import resources

import numpy as np

from idmodds import __version__
from idmodds.config import ConfigError, RunConfig, load_run_config
from idmodds.fit import fit
from idmodds.prevalence import (
    cross_section_profile,
    effective_diseased_mortality,
    pde_residual_odds,
    pde_residual_prevalence,
    prevalence,
    prevalence_odds_exponential,
    prevalence_odds_keiding,
    prevalence_odds_pseudo_convolution,
    reconstruct_incidence,
)
from idmodds.quadrature import QuadratureError
from idmodds.rates import ExponentialIncidence, RateModel
from idmodds.simulate import AgeGroupTable, calibrate_births_per_year, replicate_study

__all__ = ["main"]

_EXIT_OK = 0
_EXIT_CONFIG = 2
_EXIT_NUMERIC = 3
_EXIT_NO_CONVERGENCE = 4

_NUMERIC_ERRORS = (QuadratureError, FloatingPointError, np.linalg.LinAlgError, ZeroDivisionError, OverflowError)


def _bundled_path(name: str) -> str:
    return str(resources.files("idmodds") / "data" / name)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as stream:
        stream.write(text)
    os.replace(tmp, path)


def _sanitize_json(value):
    """Replace non-finite floats with null so the JSON stays strict."""
    if isinstance(value, dict):
        return {key: _sanitize_json(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize_json(item) for item in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_json(path: str, payload: dict) -> None:
    _atomic_write_text(path, json.dumps(_sanitize_json(payload), indent=2, allow_nan=False) + "\n")


def _format(value: float) -> str:
    return repr(float(value))


def thread_limit() -> int:
    """Worker cap from IDM_ODDS_THREADS: unset = 1, 0 = all cores."""
    raw = os.environ.get("IDM_ODDS_THREADS", "").strip()
    if raw == "":
        return 1
    try:
        count = int(raw)
    except ValueError as error:
        raise ConfigError(f"IDM_ODDS_THREADS must be an integer, got {raw!r}") from error
    if count < 0:
        raise ConfigError("IDM_ODDS_THREADS must be >= 0")
    if count == 0:
        return os.cpu_count() or 1
    return count


class _Manifest:
    """Provenance record written alongside every command's outputs."""

    def __init__(self, command: str, config: RunConfig, flags: dict):
        self.payload = {
            "tool": "idm-odds",
            "version": __version__,
            "command": command,
            "config_path": config.source_path,
            "config_hash": config.hash,
            "flags": flags,
            "started_utc": _utc_now(),
            "finished_utc": None,
            "outputs": [],
        }

    def add_output(self, path: str) -> None:
        self.payload["outputs"].append(path)

    def note(self, key: str, value) -> None:
        self.payload[key] = value

    def write(self, directory: str) -> str:
        self.payload["finished_utc"] = _utc_now()
        path = os.path.join(directory, "run_manifest.json")
        _write_json(path, self.payload)
        return path


def _prepare_output_dir(config: RunConfig, override) -> str:
    directory = override if override else config.output_directory
    os.makedirs(directory, exist_ok=True)
    return directory


def _odds_cohort(model: RateModel, t: float, a: float) -> float:
    return prevalence(model, t, a, method="cohort_ratio").odds


def cmd_evaluate(config: RunConfig, args) -> int:
    out_dir = _prepare_output_dir(config, args.out_dir)
    manifest = _Manifest(
        "evaluate",
        config,
        {"t": args.t, "age_min": args.age_min, "age_max": args.age_max, "step": args.step, "method": args.method},
    )
    if not args.age_min < args.age_max:
        raise ConfigError("--age-min must be below --age-max")
    if not args.step > 0.0:
        raise ConfigError("--step must be positive")
    model = config.build_model()
    count = int(round((args.age_max - args.age_min) / args.step))
    ages = args.age_min + args.step * np.arange(count + 1)
    ages = ages[ages <= args.age_max + 1e-9]

    primary = "pseudo_convolution" if args.method == "all" else args.method
    header = ["age", "odds_analytic"]
    columns = [ages]
    if primary == "cohort_ratio":
        main_odds = np.array([_odds_cohort(model, args.t, float(a)) for a in ages])
    elif primary == "keiding":
        main_odds = np.array([prevalence_odds_keiding(model, args.t, float(a)).odds for a in ages])
    else:
        main_odds = np.array([prevalence_odds_pseudo_convolution(model, args.t, float(a)).odds for a in ages])
    columns.append(main_odds)
    if args.method == "all":
        header += ["odds_keiding", "odds_cohort"]
        columns.append(np.array([prevalence_odds_keiding(model, args.t, float(a)).odds for a in ages]))
        columns.append(np.array([_odds_cohort(model, args.t, float(a)) for a in ages]))

    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(_format(value) for value in row))
    path = os.path.join(out_dir, "odds_curve.csv")
    _atomic_write_text(path, "\n".join(lines) + "\n")
    manifest.add_output(path)
    manifest.write(out_dir)
    print(f"wrote {path} ({len(ages)} ages at t={args.t})")
    return _EXIT_OK


def cmd_simulate(config: RunConfig, args) -> int:
    out_dir = _prepare_output_dir(config, args.out_dir)
    manifest = _Manifest("simulate", config, {"seed": args.seed, "replicates": args.replicates})
    if args.replicates < 1:
        raise ConfigError("--replicates must be >= 1")
    model = config.build_model()
    sim_config = config.build_sim_config()
    if args.seed is not None:
        sim_config = dataclasses.replace(sim_config, rng_seed=args.seed)
    if sim_config.births_per_year is None:
        births = calibrate_births_per_year(model, sim_config)
        sim_config = dataclasses.replace(sim_config, births_per_year=births)
        manifest.note("calibrated_births_per_year", births)
    workers = thread_limit()
    manifest.note("rng_seed", sim_config.rng_seed)
    manifest.note("replicate_seeds", [sim_config.rng_seed + i for i in range(args.replicates)])
    manifest.note("workers", workers)

    tables = replicate_study(model, sim_config, args.replicates, workers=workers)
    for index, table in enumerate(tables):
        path = os.path.join(out_dir, f"study_{index + 1:04d}.csv")
        table.to_csv(path)
        manifest.add_output(path)
        print(f"wrote {path} (alive {table.n_total}, cases {table.c_total})")
    manifest.write(out_dir)
    return _EXIT_OK


def cmd_fit(config: RunConfig, args) -> int:
    out_dir = _prepare_output_dir(config, args.out_dir)
    data_path = args.data if args.data else _bundled_path("table1.csv")
    manifest = _Manifest("fit", config, {"data": data_path})
    study_time = config.build_sim_config().cross_section_time
    try:
        table = AgeGroupTable.from_csv(data_path, cross_section_time=study_time)
    except FileNotFoundError as error:
        raise ConfigError(f"data file not found: {data_path}") from error
    except ValueError as error:
        raise ConfigError(f"malformed data CSV {data_path}: {error}") from error
    fit_config = config.build_fit_config()
    result = fit(table, fit_config)

    declared = config.declared_gamma()
    payload = result.to_json_dict()
    payload["declared_gamma"] = None if declared is None else list(declared)
    json_path = os.path.join(out_dir, "fit_result.json")
    _write_json(json_path, payload)
    manifest.add_output(json_path)

    lines = ["param,input,estimate,ci_lo,ci_hi"]
    for j, name in enumerate(("gamma1", "gamma2", "gamma3")):
        declared_field = _format(declared[j]) if declared is not None else ""
        if result.ci95 is None or not np.all(np.isfinite(result.ci95[j])):
            lo_field, hi_field = "", ""
        else:
            lo_field, hi_field = _format(result.ci95[j, 0]), _format(result.ci95[j, 1])
        lines.append(
            ",".join([name, declared_field, _format(result.gamma_hat[j]), lo_field, hi_field])
        )
    csv_path = os.path.join(out_dir, "fit_table.csv")
    _atomic_write_text(csv_path, "\n".join(lines) + "\n")
    manifest.add_output(csv_path)

    manifest.note("converged", result.converged)
    manifest.write(out_dir)
    estimates = ", ".join(f"{name}={value:.6g}" for name, value in zip(("g1", "g2", "g3"), result.gamma_hat))
    print(f"wrote {json_path} and {csv_path} ({estimates})")
    if not result.converged:
        print("fit did not converge; outputs carry converged=false", file=sys.stderr)
        return _EXIT_NO_CONVERGENCE
    return _EXIT_OK


def _relative_spread(values) -> float:
    scale = max(abs(v) for v in values)
    if scale == 0.0:
        return 0.0
    return (max(values) - min(values)) / scale


def _richardson(coarse: float, fine: float):
    if coarse == 0.0 and fine == 0.0:
        return None
    if fine == 0.0:
        return math.inf
    return abs(coarse) / abs(fine)


def cmd_crosscheck(config: RunConfig, args) -> int:
    out_dir = _prepare_output_dir(config, args.out_dir)
    manifest = _Manifest("crosscheck", config, {"t": args.t, "age": args.age, "h": args.h})
    if not args.h > 0.0:
        raise ConfigError("--h must be positive")
    model = config.build_model()
    t, a, h = args.t, args.age, args.h
    report = {"t": t, "age": a, "h": h}

    keiding = prevalence_odds_keiding(model, t, a).odds
    pseudo = prevalence_odds_pseudo_convolution(model, t, a).odds
    cohort = _odds_cohort(model, t, a)
    spread = _relative_spread([keiding, pseudo, cohort])
    report["formula_triangle"] = {
        "odds_keiding": keiding,
        "odds_pseudo_convolution": pseudo,
        "odds_cohort_ratio": cohort,
        "max_relative_deviation": spread,
        "threshold": 1e-6,
        "pass": bool(spread <= 1e-6),
    }

    residual_h = pde_residual_prevalence(model, t, a, h)
    residual_h2 = pde_residual_prevalence(model, t, a, h / 2.0)
    ratio = _richardson(residual_h, residual_h2)
    report["prevalence_pde"] = {
        "residual_h": residual_h,
        "residual_h_half": residual_h2,
        "richardson_ratio": ratio,
        "pass": bool(ratio is None or 3.5 <= ratio <= 4.5),
    }

    if model.ratio.gamma1 == 0.0:
        odds_h = pde_residual_odds(model, t, a, h)
        odds_h2 = pde_residual_odds(model, t, a, h / 2.0)
        odds_ratio = _richardson(odds_h, odds_h2)
        report["odds_pde"] = {
            "residual_h": odds_h,
            "residual_h_half": odds_h2,
            "richardson_ratio": odds_ratio,
            "pass": bool(odds_ratio is None or 3.5 <= odds_ratio <= 4.5),
        }
    else:
        message = "odds transport equation requires duration-free excess mortality (gamma1 = 0); check skipped"
        report["odds_pde"] = {"skipped": message}
        print(message)

    if isinstance(model.incidence, ExponentialIncidence):
        companion = model
        builtin = False
    else:
        companion = RateModel(ExponentialIncidence(-9.0, 0.03, 0.01), model.m0, model.ratio)
        builtin = True
    special = prevalence_odds_exponential(companion, t, a).odds
    general = prevalence_odds_pseudo_convolution(companion, t, a).odds
    scale = max(abs(special), abs(general))
    deviation = 0.0 if scale == 0.0 else abs(special - general) / scale
    report["exponential_special_case"] = {
        "builtin_companion_model": builtin,
        "odds_special": special,
        "odds_general": general,
        "relative_deviation": deviation,
        "threshold": 1e-10,
        "pass": bool(deviation <= 1e-10),
    }

    gap = 0.5
    ages = np.arange(40.0, 91.0 + 1e-9, 0.5)
    start = cross_section_profile(model, t, ages)
    end = cross_section_profile(model, t + gap, ages)
    recovered = reconstruct_incidence(
        start,
        end,
        lambda tt, aa: effective_diseased_mortality(model, tt, aa),
        lambda tt, aa: float(model.mortality_healthy(tt, aa)),
    )
    keep = recovered.ages <= 90.0 + 1e-9
    truth = model.incidence_rate(np.full(np.count_nonzero(keep), recovered.time), recovered.ages[keep])
    estimate = recovered.values[keep]
    if np.max(np.abs(truth)) == 0.0:
        error = float(np.max(np.abs(estimate)))
        relative = False
    else:
        error = float(np.max(np.abs(estimate - truth) / np.abs(truth)))
        relative = True
    report["incidence_reconstruction"] = {
        "cross_section_times": [t, t + gap],
        "age_range": [40.0, 90.0],
        "max_error": error,
        "relative": relative,
        "threshold": 0.02,
        "pass": bool(error <= 0.02),
    }

    report["all_pass"] = all(
        section.get("pass", True) for section in report.values() if isinstance(section, dict)
    )

    path = os.path.join(out_dir, "crosscheck.json")
    _write_json(path, report)
    manifest.add_output(path)
    manifest.write(out_dir)
    print(f"wrote {path} (all_pass={report['all_pass']})")
    return _EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idm-odds",
        description="Prevalence odds of a chronic disease in the illness-death model: "
        "analytic curves, microsimulated studies, likelihood fits, consistency checks.",
    )
    parser.add_argument("--version", action="version", version=f"idm-odds {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--config", default=None, help="JSON run configuration (default: bundled reference study)")
        sub.add_argument("--out-dir", default=None, help="output directory (overrides the config)")

    evaluate = commands.add_parser("evaluate", help="write the analytic odds curve over an age grid")
    common(evaluate)
    evaluate.add_argument("--t", type=float, default=100.0, help="calendar time of the cross-section")
    evaluate.add_argument("--age-min", type=float, default=30.0)
    evaluate.add_argument("--age-max", type=float, default=100.0)
    evaluate.add_argument("--step", type=float, default=0.25)
    evaluate.add_argument(
        "--method",
        choices=["pseudo_convolution", "keiding", "cohort_ratio", "all"],
        default="pseudo_convolution",
        help="odds route; 'all' adds comparison columns",
    )
    evaluate.set_defaults(handler=cmd_evaluate)

    simulate = commands.add_parser("simulate", help="run seeded study replicates and write their tables")
    common(simulate)
    simulate.add_argument("--seed", type=int, default=None, help="override the configured rng seed")
    simulate.add_argument("--replicates", type=int, default=1)
    simulate.set_defaults(handler=cmd_simulate)

    fit_cmd = commands.add_parser("fit", help="fit mortality-ratio parameters to a study table")
    common(fit_cmd)
    fit_cmd.add_argument("--data", default=None, help="study table CSV (default: bundled reference table)")
    fit_cmd.set_defaults(handler=cmd_fit)

    crosscheck = commands.add_parser("crosscheck", help="run internal consistency diagnostics")
    common(crosscheck)
    crosscheck.add_argument("--t", type=float, default=100.0)
    crosscheck.add_argument("--age", type=float, default=60.0)
    crosscheck.add_argument("--h", type=float, default=0.1, help="coarse step for the residual checks")
    crosscheck.set_defaults(handler=cmd_crosscheck)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config_path = args.config if args.config else _bundled_path("reference_config.json")
        config = load_run_config(config_path)
    except ConfigError as error:
        print(f"error: {error}", file=sys.stderr)
        return _EXIT_CONFIG
    try:
        return args.handler(config, args)
    except ConfigError as error:
        print(f"error: {error}", file=sys.stderr)
        return _EXIT_CONFIG
    except _NUMERIC_ERRORS as error:
        print(f"numerical failure: {error}", file=sys.stderr)
        return _EXIT_NUMERIC
    except ValueError as error:
        print(f"numerical failure: {error}", file=sys.stderr)
        return _EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
