"""Command-line driver.

Subcommands ``simulate``, ``estimate``, ``diagnose`` and ``mc`` each read one
JSON configuration document.  Exit status is 0 on success, 2 for invalid
configuration or input data, 3 when a computation fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from . import reporting
from .data import load_edges, load_individuals, write_edges, write_individuals
from .diagnostics import barrett_donald_test, cdf_difference_curve, placebo_battery, residual_barrett_donald, residual_variation
from .exceptions import ConfigError, DataError, EstimationError
from .instruments import ProbitFormula, build_dyads, predicted_indegree, probit_fit
from .montecarlo import MCConfig, run_monte_carlo
from .pipeline import EstimationConfig, check_columns, prepare_table, run_estimation, truth_comparison
from .regress import RegressionSpec
from .simulate import LinearDGPConfig, SimConfig, simulate_linear_dgp, simulate_structural, write_truth

log = logging.getLogger("friendbounds")

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 2, 3

ALLOWED = {
    "simulate": {"seed", "dgp", "simulation"},
    "estimate": {"data", "estimation", "dyad_instrument"},
    "diagnose": {"data", "estimation", "diagnostics"},
    "mc": {"reps", "seed", "dgp", "jobs", "simulation", "estimation"},
}
DATA_KEYS = {"individuals", "edges", "truth", "schema", "edge_schema", "delimiter"}
DYAD_KEYS = {"homophily", "controls", "fixed_effects", "receiver_covariates", "column"}
DIAG_KEYS = {"predetermined", "grid", "control_sets", "outcome_augmentation"}


def _reject_unknown(block: dict, allowed: set, where: str):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")


def load_config(path: str, command: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    _reject_unknown(cfg, ALLOWED[command], "config")
    return cfg


def _out_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def _load_data(block: dict, cohort_means, leave_out: bool = False):
    _reject_unknown(block, DATA_KEYS, "data")
    if "individuals" not in block:
        raise ConfigError("data.individuals is required")
    delim = block.get("delimiter", ",")
    try:
        table = load_individuals(block["individuals"], block.get("schema"), delim)
        edges = load_edges(block["edges"], table, block.get("edge_schema"), delim) if block.get("edges") else None
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    if table.rejected:
        log.warning("%d row(s) rejected from %s", len(table.rejected), block["individuals"])
    truth = None
    if block.get("truth"):
        with open(block["truth"]) as fh:
            truth = json.load(fh)
    return prepare_table(table, edges, cohort_means, leave_out), edges, truth


# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict, out: str, seed: int | None = None) -> list[str]:
    seed = cfg.get("seed") if seed is None else seed
    if seed is None:
        raise ConfigError("simulate requires a seed (config 'seed' or --seed)")
    dgp = cfg.get("dgp", "structural")
    block = dict(cfg.get("simulation", {}))
    block["seed"] = int(seed)
    out = _out_dir(out)
    paths = [os.path.join(out, "individuals.csv"), os.path.join(out, "truth.json")]
    if dgp == "structural":
        sim_cfg = SimConfig.from_dict(block)
        sim = simulate_structural(sim_cfg)
        write_individuals(sim.table, paths[0])
        paths.insert(1, os.path.join(out, "edges.csv"))
        write_edges(sim.edges, paths[1])
        truth = {
            **sim.truth(),
            "equilibrium": {"sweeps": sim.state.iterations, "max_foc_residual": sim.state.max_residual},
        }
    elif dgp == "linear":
        sim_cfg = LinearDGPConfig.from_dict(block)
        table = simulate_linear_dgp(sim_cfg)
        write_individuals(table, paths[0])
        truth = {"r_e": sim_cfg.r_e, "r_f": sim_cfg.r_f, "config": sim_cfg.to_dict()}
    else:
        raise ConfigError(f"dgp must be 'structural' or 'linear', got {dgp!r}")
    write_truth(paths[-1], {**truth, "dgp": dgp})
    return paths


def cmd_estimate(cfg: dict, out: str) -> list[str]:
    est = EstimationConfig.from_dict(cfg.get("estimation", {}))
    table, edges, truth = _load_data(cfg.get("data", {}), est.cohort_means, est.cohort_mean_leave_out)
    dyad = cfg.get("dyad_instrument")
    if dyad is not None:
        _reject_unknown(dyad, DYAD_KEYS, "dyad_instrument")
        if edges is None:
            raise ConfigError("dyad_instrument needs data.edges")
    else:
        check_columns(table, est)
    out = _out_dir(out)
    extra = {}
    if dyad is not None:
        column = dyad.get("column", "predicted_indegree")
        dyads = build_dyads(table, edges, dyad.get("receiver_covariates", ("age",)))
        formula = ProbitFormula(
            homophily=dyad.get("homophily", ("pair_distance",)),
            controls=dyad.get("controls", ("recv_age",)),
            fixed_effects=dyad.get("fixed_effects", ("school", "grade")),
        )
        pf = probit_fit(dyads, formula, cluster=est.cluster)
        table = predicted_indegree(pf, dyads, table, column)
        extra["probit"] = pf.to_dict()
        extra["probit"]["dyads_dropped_missing"] = dyads.n_dropped_missing
    check_columns(table, est)
    report = run_estimation(table, est)
    payload = {**report.to_dict(), **extra}
    if truth is not None:
        payload["truth_comparison"] = truth_comparison(report, truth)
    paths = [os.path.join(out, "estimates.json"), os.path.join(out, "estimates.txt"), os.path.join(out, "bounds.csv")]
    reporting.dump_json(payload, paths[0])
    with open(paths[1], "w") as fh:
        fh.write(reporting.estimation_text(report))
    report.bounds.table.to_csv(paths[2], index_label="coefficient", float_format="%.10g")
    return paths


def cmd_diagnose(cfg: dict, out: str) -> list[str]:
    est = EstimationConfig.from_dict(cfg.get("estimation", {}))
    diag = cfg.get("diagnostics", {})
    _reject_unknown(diag, DIAG_KEYS, "diagnostics")
    table, _, _ = _load_data(cfg.get("data", {}), est.cohort_means, est.cohort_mean_leave_out)
    instrument = est.instruments[0]
    predetermined = list(diag.get("predetermined", ()))
    if not predetermined:
        raise ConfigError("diagnostics.predetermined must list at least one column")
    needed = [instrument, est.friends, *predetermined, *est.controls] + [c for c in (est.absorb, est.dummies, est.cluster) if c]
    missing = [c for c in needed if c not in table.frame.columns]
    if missing:
        raise DataError(f"column(s) {missing} not found in the data")
    out = _out_dir(out)

    controls = RegressionSpec(
        outcome="__unused",
        exogenous=tuple(c for c in est.controls if c not in predetermined),
        absorb=est.absorb,
        dummies=est.dummies,
        cluster=est.cluster,
    )
    aug_outcome = est.outcome if diag.get("outcome_augmentation", True) and est.outcome in table.frame.columns else None
    placebo = placebo_battery(table, instrument, predetermined, controls, outcome=aug_outcome)
    sets = diag.get("control_sets")
    if sets is None:
        sets = [[], ["age"], ["age", "mean_age"]]
        sets = [s for s in sets if all(c in table.frame.columns for c in s)]
        sets.append(RegressionSpec(outcome="__unused", exogenous=("age", "mean_age"), absorb=est.absorb, dummies=est.dummies))
    else:
        sets = [list(s) for s in sets]
    rv = residual_variation(table, instrument, sets)
    fs_controls = controls.replace(exogenous=est.controls)
    curve = cdf_difference_curve(table, est.friends, instrument, fs_controls, diag.get("grid"))
    raw = barrett_donald_test(table, est.friends, instrument)
    res = residual_barrett_donald(table, est.friends, instrument, fs_controls)
    payload = {
        "instrument": instrument,
        "treatment": est.friends,
        "placebo": placebo.to_dict(),
        "residual_variation": rv.to_dict(orient="records"),
        "dominance": [raw.to_dict(), res.to_dict()],
        "cdf_difference": {"n_thresholds": len(curve.grid), "n_degenerate": int(curve.grid["degenerate"].sum())},
    }
    paths = [
        os.path.join(out, "diagnostics.json"),
        os.path.join(out, "diagnostics.txt"),
        os.path.join(out, "cdf_difference.csv"),
        os.path.join(out, "dominance_grid.csv"),
    ]
    reporting.dump_json(payload, paths[0])
    with open(paths[1], "w") as fh:
        fh.write(reporting.diagnostics_text(payload))
    curve.to_csv(paths[2])
    grid = pd.concat([raw.cdf_grid.assign(label="raw"), res.cdf_grid.assign(label="residual")])
    grid.to_csv(paths[3], index=False, float_format="%.10g")
    return paths


def cmd_mc(cfg: dict, out: str, seed: int | None = None, jobs: int | None = None) -> list[str]:
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    if jobs is not None:
        cfg["jobs"] = jobs
    if cfg.get("seed") is None:
        raise ConfigError("mc requires a seed (config 'seed' or --seed)")
    mc = MCConfig.from_dict(cfg)
    out = _out_dir(out)
    result = run_monte_carlo(mc)
    if result.summary["succeeded"] == 0:
        raise EstimationError(f"all {mc.reps} replications failed; first error: {result.summary['errors'][0]['error']}")
    paths = [os.path.join(out, "mc_summary.json"), os.path.join(out, "mc_summary.txt"), os.path.join(out, "mc_replications.csv")]
    reporting.dump_json({"summary": result.summary, "config": mc.to_dict()}, paths[0])
    with open(paths[1], "w") as fh:
        fh.write(reporting.mc_text(result.summary))
    result.replications.drop(columns=["trace"], errors="ignore").to_csv(paths[2], index=False, float_format="%.10g")
    return paths


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="friendbounds", description="Bounds on the returns to friendships.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "write a synthetic data set with known returns"),
        ("estimate", "first stage, OLS, IV and interval bounds"),
        ("diagnose", "placebo, residual-variation and dominance diagnostics"),
        ("mc", "Monte Carlo coverage study"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="JSON configuration file")
        s.add_argument("--out", required=True, help="output directory")
        if name in ("simulate", "mc"):
            s.add_argument("--seed", type=int, default=None, help="override the configured seed")
        if name == "mc":
            s.add_argument("--jobs", type=int, default=None, help="worker processes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.command)
        if args.command == "simulate":
            paths = cmd_simulate(cfg, args.out, args.seed)
        elif args.command == "estimate":
            paths = cmd_estimate(cfg, args.out)
        elif args.command == "diagnose":
            paths = cmd_diagnose(cfg, args.out)
        else:
            paths = cmd_mc(cfg, args.out, args.seed, args.jobs)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimationError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
