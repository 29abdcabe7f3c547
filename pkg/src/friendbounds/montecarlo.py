"""Replication harness: simulate, estimate, summarize."""

from __future__ import annotations

import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd

from .exceptions import ConfigError, FriendBoundsError
from .pipeline import EstimationConfig, prepare_table, run_estimation
from .simulate import LinearDGPConfig, SimConfig, simulate_linear_dgp, simulate_structural

LINEAR_ESTIMATION = {
    "friends": "friends",
    "controls": ("age", "mean_age", "iq", "female"),
}


@dataclass
class MCConfig:
    reps: int = 200
    seed: int = 0
    dgp: str = "linear"  # or "structural"
    jobs: int = 1
    simulation: dict = field(default_factory=dict)
    estimation: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.reps) < 2:
            raise ConfigError(f"reps must be at least 2, got {self.reps}")
        if self.dgp not in ("linear", "structural"):
            raise ConfigError(f"dgp must be 'linear' or 'structural', got {self.dgp!r}")
        if int(self.jobs) < 1:
            raise ConfigError("jobs must be positive")
        if self.seed is None:
            raise ConfigError("a seed is required")
        # fail fast on bad blocks
        self.sim_config(0)
        self.estimation_config()

    @classmethod
    def from_dict(cls, data: dict) -> "MCConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown mc key(s): {unknown}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def sim_config(self, rep: int):
        block = {k: v for k, v in self.simulation.items() if k != "seed"}
        seed = int(np.random.SeedSequence([int(self.seed), int(rep)]).generate_state(1)[0])
        cls = LinearDGPConfig if self.dgp == "linear" else SimConfig
        try:
            return cls.from_dict({**block, "seed": seed})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def estimation_config(self) -> EstimationConfig:
        base = dict(LINEAR_ESTIMATION) if self.dgp == "linear" else {}
        return EstimationConfig.from_dict({**base, **self.estimation})


def run_replication(cfg: MCConfig, rep: int) -> dict:
    """One simulate-estimate cycle; failures are returned, not raised."""
    est = cfg.estimation_config()
    sim_cfg = cfg.sim_config(rep)
    try:
        if cfg.dgp == "linear":
            table = prepare_table(simulate_linear_dgp(sim_cfg), None, est.cohort_means, est.cohort_mean_leave_out)
        else:
            sim = simulate_structural(sim_cfg)
            table = prepare_table(sim.table, sim.edges, est.cohort_means, est.cohort_mean_leave_out)
        rep_ = run_estimation(table, est)
    except (FriendBoundsError, ValueError, np.linalg.LinAlgError) as exc:
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}", "trace": traceback.format_exc(limit=3)}
    f = est.friends
    z = est.instruments[0]
    row = rep_.bounds.table.loc[f]
    r_f = sim_cfg.r_f
    return {
        "rep": rep,
        "ok": True,
        "error": "",
        "n_obs": rep_.bounds.n_obs,
        "theta_lower": float(row["theta_lower"]),
        "theta_upper": float(row["theta_upper"]),
        "ci_lower": float(row["ci_lower"]),
        "ci_upper": float(row["ci_upper"]),
        "ci_covers": bool(row["ci_lower"] <= r_f <= row["ci_upper"]),
        "bounds_cover": bool(row["theta_lower"] <= r_f <= row["theta_upper"]),
        "width": float(row["theta_upper"] - row["theta_lower"]),
        "ols_rf": float(rep_.ols.coefficients[f]),
        "iv_rf": float(rep_.iv.coefficients[f]),
        "calibrated_rf": float(rep_.calibrated.coefficients[f]),
        "first_stage_coef": float(rep_.first_stage.coefficients[z]),
        "first_stage_t": float(rep_.first_stage.tvalues[z]),
        "first_stage_p": float(rep_.first_stage.pvalues[z]),
        "first_stage_F": float(rep_.bounds.endpoint_fits["r_lower"].first_stage_F[f][0]),
        "probe_coef": rep_.bounds.probe_coef,
    }


def _run_chunk(args):
    cfg, reps = args
    return [run_replication(cfg, r) for r in reps]


@dataclass
class MCResult:
    replications: pd.DataFrame
    summary: dict


def run_monte_carlo(cfg: MCConfig, jobs: int | None = None) -> MCResult:
    """Replications ordered by index regardless of the degree of parallelism."""
    jobs = int(cfg.jobs if jobs is None else jobs)
    reps = list(range(int(cfg.reps)))
    if jobs <= 1:
        rows = [run_replication(cfg, r) for r in reps]
    else:
        chunks = [reps[k::jobs] for k in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = [row for part in pool.map(_run_chunk, [(cfg, c) for c in chunks]) for row in part]
    frame = pd.DataFrame(rows).sort_values("rep").reset_index(drop=True)
    return MCResult(frame, summarize(frame, cfg))


def summarize(frame: pd.DataFrame, cfg: MCConfig) -> dict:
    ok = frame[frame["ok"]]
    sim = cfg.sim_config(0)
    est = cfg.estimation_config()
    out = {
        "dgp": cfg.dgp,
        "reps": int(len(frame)),
        "succeeded": int(len(ok)),
        "failed": int((~frame["ok"]).sum()),
        "true_r_e": sim.r_e,
        "true_r_f": sim.r_f,
        "r_e_interval": [est.r_lower, est.r_upper],
        "r_e_inside_interval": bool(est.r_lower <= sim.r_e <= est.r_upper),
    }
    if len(ok):
        F = ok["first_stage_F"].to_numpy()
        out.update(
            {
                "ci_coverage": float(ok["ci_covers"].mean()),
                "bounds_coverage": float(ok["bounds_cover"].mean()),
                "mean_width": float(ok["width"].mean()),
                "ols_bias_mean": float(ok["ols_rf"].mean() - sim.r_f),
                "ols_median": float(ok["ols_rf"].median()),
                "iv_median": float(ok["iv_rf"].median()),
                "first_stage_F": {
                    "median": float(np.median(F)),
                    "p10": float(np.percentile(F, 10)),
                    "p90": float(np.percentile(F, 90)),
                },
                "first_stage_negative_significant": float(
                    ((ok["first_stage_coef"] < 0) & (ok["first_stage_p"] < 0.05)).mean()
                ),
            }
        )
    if out["failed"]:
        out["errors"] = frame.loc[~frame["ok"], ["rep", "error"]].to_dict(orient="records")
    return out
