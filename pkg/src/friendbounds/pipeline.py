"""Column-name level estimation pipeline shared by the command line and the
Monte Carlo driver."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .bounds import BoundResult, BoundSpec, estimate_bounds
from .data import EdgeList, ObservationTable, compute_age_distance, compute_cohort_means, compute_degree_measures
from .exceptions import ConfigError, DataError
from .regress import FitResult, RegressionSpec, iv_gmm, ols


@dataclass
class EstimationConfig:
    """Named columns and interval settings for one estimation run."""

    outcome: str = "outcome"
    friends: str = "grade_indegree"
    education: str = "education"
    instruments: tuple = ("age_distance",)
    controls: tuple = ("age", "mean_age", "iq", "female", "white", "extrovert")
    absorb: str | None = "school"
    dummies: str | None = "grade"
    cluster: str | None = "school"
    r_lower: float = 0.05
    r_upper: float = 0.15
    r_calibrated: float | None = None
    alpha: float = 0.05
    cohort_means: tuple = ("age",)
    cohort_mean_leave_out: bool = False

    def __post_init__(self):
        for name in ("instruments", "controls", "cohort_means"):
            v = getattr(self, name)
            setattr(self, name, (v,) if isinstance(v, str) else tuple(v))
        if not self.instruments:
            raise ConfigError("at least one instrument is required")
        if self.r_lower > self.r_upper:
            raise ConfigError(f"r_lower={self.r_lower} exceeds r_upper={self.r_upper}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")

    @classmethod
    def from_dict(cls, data: dict) -> "EstimationConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown estimation key(s): {unknown}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @property
    def calibrated_r(self) -> float:
        return 0.5 * (self.r_lower + self.r_upper) if self.r_calibrated is None else self.r_calibrated

    def skeleton(self, outcome: str) -> RegressionSpec:
        return RegressionSpec(
            outcome=outcome,
            exogenous=self.controls,
            absorb=self.absorb,
            dummies=self.dummies,
            cluster=self.cluster,
        )

    def iv_spec(self, outcome: str | None = None) -> RegressionSpec:
        return self.skeleton(outcome or self.outcome).replace(endogenous=(self.friends,), instruments=self.instruments)

    def bound_spec(self) -> BoundSpec:
        return BoundSpec(self.iv_spec(), self.education, self.r_lower, self.r_upper, self.alpha)

    def required_columns(self) -> list[str]:
        cols = [self.outcome, self.friends, self.education, *self.instruments, *self.controls]
        return cols + [c for c in (self.absorb, self.dummies, self.cluster) if c]


def prepare_table(table: ObservationTable, edges: EdgeList | None, cohort_means=("age",), leave_out: bool = False) -> ObservationTable:
    """Attach degree measures, age distances and cohort means where missing."""
    if edges is not None and "grade_indegree" not in table.frame.columns:
        table = compute_degree_measures(table, edges)
    if "age_distance" not in table.frame.columns:
        table = compute_age_distance(table)
    need = [c for c in cohort_means if f"mean_{c}" not in table.frame.columns]
    if need:
        table = compute_cohort_means(table, need, leave_out=leave_out)
    return table


def check_columns(table, cfg: EstimationConfig) -> None:
    frame = table.frame if hasattr(table, "frame") else table
    missing = [c for c in cfg.required_columns() if c not in frame.columns]
    if missing:
        raise DataError(f"column(s) {missing} not found in the data (available: {sorted(frame.columns)})")


@dataclass
class EstimationReport:
    first_stage: FitResult
    reduced_form: FitResult
    ols: FitResult
    iv: FitResult
    calibrated: FitResult
    bounds: BoundResult
    config: EstimationConfig

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "first_stage": self.first_stage.to_dict(),
            "reduced_form": self.reduced_form.to_dict(),
            "ols": self.ols.to_dict(),
            "iv": self.iv.to_dict(),
            "calibrated_iv": {"r_e": cfg.calibrated_r, **self.calibrated.to_dict()},
            "bounds": self.bounds.to_dict(),
            "config": cfg.to_dict(),
        }


def run_estimation(table, cfg: EstimationConfig) -> EstimationReport:
    """First stage, reduced form, OLS, IV, calibrated IV and interval bounds.

    Every fit uses the same estimation sample (rows complete in all
    referenced columns).
    """
    check_columns(table, cfg)
    frame = table.frame if hasattr(table, "frame") else table
    frame = frame.loc[frame[cfg.required_columns()].notna().all(axis=1)].reset_index(drop=True)
    if len(frame) == 0:
        raise DataError("no complete rows for the estimation sample")

    fs = ols(cfg.skeleton(cfg.friends).replace(exogenous=(*cfg.instruments, *cfg.controls)), frame)
    rf = ols(cfg.skeleton(cfg.outcome).replace(exogenous=(*cfg.instruments, *cfg.controls)), frame)
    ls = ols(cfg.skeleton(cfg.outcome).replace(exogenous=(cfg.friends, cfg.education, *cfg.controls)), frame)
    iv = iv_gmm(cfg.iv_spec().replace(exogenous=(cfg.education, *cfg.controls)), frame)
    r = cfg.calibrated_r
    adj = frame.assign(__calibrated=frame[cfg.outcome] - r * frame[cfg.education])
    cal = iv_gmm(cfg.iv_spec("__calibrated"), adj)
    bnd = estimate_bounds(cfg.bound_spec(), frame)
    return EstimationReport(fs, rf, ls, iv, cal, bnd, cfg)


def truth_comparison(report: EstimationReport, truth: dict) -> dict:
    """Where the true returns sit relative to the bounds and intervals."""
    cfg = report.config
    row = report.bounds.table.loc[cfg.friends]
    r_f = float(truth["r_f"])
    r_e = truth.get("r_e")
    out = {
        "true_r_f": r_f,
        "true_r_e": r_e,
        "r_e_inside_assumed_interval": None if r_e is None else bool(cfg.r_lower <= float(r_e) <= cfg.r_upper),
        "r_f_inside_bounds": bool(row["theta_lower"] <= r_f <= row["theta_upper"]),
        "r_f_inside_ci": bool(row["ci_lower"] <= r_f <= row["ci_upper"]),
        "ols_error": float(report.ols.coefficients[cfg.friends]) - r_f,
        "iv_error": float(report.iv.coefficients[cfg.friends]) - r_f,
    }
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in out.items()}
