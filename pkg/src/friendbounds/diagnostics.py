"""Instrument validity and monotonicity diagnostics.

* placebo battery: the instrument should not predict predetermined traits;
* CDF-difference curve: coefficient of the instrument in regressions of
  ``1{treatment <= x}`` across thresholds ``x``;
* Barrett-Donald one-sided test that the high-instrument group's treatment
  distribution is first-order dominated by the low group's;
* residual variation of the instrument across nested control sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .exceptions import DataError
from .regress import RegressionSpec, joint_F, ols


def _frame(table):
    return table.frame if hasattr(table, "frame") else table


def _controls(skeleton: RegressionSpec | None) -> RegressionSpec:
    return skeleton if skeleton is not None else RegressionSpec(outcome="__unused")


@dataclass
class PlaceboReport:
    rows: pd.DataFrame  # index: predetermined variable; coef, se, t, p, n_obs
    joint_F: float
    joint_p: float
    augmentation: dict = field(default_factory=dict)

    @property
    def min_p(self) -> float:
        return float(self.rows["p"].min())

    def to_dict(self) -> dict:
        return {
            "per_variable": {
                k: {c: float(v) for c, v in row.items()} for k, row in self.rows.iterrows()
            },
            "joint": {"F": self.joint_F, "p": self.joint_p},
            "earnings_augmentation": self.augmentation,
        }


def placebo_battery(
    table,
    instrument: str,
    predetermined: Sequence[str],
    controls: RegressionSpec | None = None,
    outcome: str | None = None,
) -> PlaceboReport:
    """Regress each predetermined variable on the instrument plus controls.

    ``controls`` is a skeleton spec whose ``exogenous``, ``absorb``,
    ``dummies`` and ``cluster`` fields are reused; its outcome is ignored.
    With ``outcome`` given, also reports whether the predetermined block
    jointly predicts it (R-squared with and without, joint F).
    """
    sk = _controls(controls)
    frame = _frame(table)
    predetermined = list(predetermined)
    unknown = [c for c in [instrument, *predetermined] if c not in frame.columns]
    if unknown:
        raise DataError(f"unknown column(s) {unknown}")
    base_exog = [c for c in sk.exogenous if c != instrument]

    rows = {}
    for var in predetermined:
        spec = sk.replace(outcome=var, endogenous=(), instruments=(), exogenous=(instrument, *[c for c in base_exog if c != var]))
        fit = ols(spec, frame)
        rows[var] = {
            "coef": float(fit.coefficients[instrument]),
            "se": float(fit.bse[instrument]),
            "t": float(fit.tvalues[instrument]),
            "p": float(fit.pvalues[instrument]),
            "n_obs": fit.n_obs,
        }

    rev_exog = predetermined + [c for c in base_exog if c not in predetermined]
    rev = ols(sk.replace(outcome=instrument, endogenous=(), instruments=(), exogenous=tuple(rev_exog)), frame)
    kept = [c for c in predetermined if c in rev.coefficients.index]
    F, p = joint_F(rev, kept)

    augmentation = {}
    if outcome is not None:
        cols = [outcome, *predetermined, *base_exog]
        sample = frame.loc[frame[[c for c in cols if c in frame.columns]].notna().all(axis=1)]
        without = ols(sk.replace(outcome=outcome, endogenous=(), instruments=(), exogenous=tuple(base_exog)), sample)
        with_ = ols(
            sk.replace(outcome=outcome, endogenous=(), instruments=(), exogenous=tuple(predetermined + [c for c in base_exog if c not in predetermined])),
            sample,
        )
        Fa, pa = joint_F(with_, [c for c in predetermined if c in with_.coefficients.index])
        augmentation = {"r2_without": without.r_squared, "r2_with": with_.r_squared, "F": Fa, "p": pa}

    return PlaceboReport(pd.DataFrame.from_dict(rows, orient="index"), float(F), float(p), augmentation)


@dataclass
class CDFCurve:
    grid: pd.DataFrame  # x, coef, se, degenerate

    def to_csv(self, path) -> None:
        self.grid.to_csv(path, index=False, float_format="%.10g")


def cdf_difference_curve(
    table,
    treatment: str,
    instrument: str,
    controls: RegressionSpec | None = None,
    grid: Sequence[float] | None = None,
) -> CDFCurve:
    """Per-threshold coefficient of the instrument in ``1{treatment <= x}`` regressions.

    The default grid is every distinct observed treatment value.  Thresholds at
    which the indicator is constant record an exact zero and are flagged.
    """
    sk = _controls(controls)
    frame = _frame(table)
    cols = [treatment, instrument, *sk.exogenous] + [c for c in (sk.absorb, sk.dummies, sk.cluster) if c]
    unknown = [c for c in cols if c not in frame.columns]
    if unknown:
        raise DataError(f"unknown column(s) {unknown}")
    sample = frame.loc[frame[cols].notna().all(axis=1)].reset_index(drop=True)
    t = sample[treatment].to_numpy(dtype=float)
    grid = np.unique(t) if grid is None else np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise DataError("empty threshold grid")

    out = []
    for x in grid:
        ind = (t <= x).astype(float)
        if ind.min() == ind.max():
            out.append((x, 0.0, 0.0, True))
            continue
        spec = sk.replace(outcome="__below", endogenous=(), instruments=(), exogenous=(instrument, *sk.exogenous))
        fit = ols(spec, sample.assign(__below=ind))
        out.append((x, float(fit.coefficients[instrument]), float(fit.bse[instrument]), False))
    return CDFCurve(pd.DataFrame(out, columns=["x", "coef", "se", "degenerate"]))


@dataclass
class DominanceReport:
    split_point: float
    n_high: int
    n_low: int
    S_hat: float
    p_value: float
    cdf_grid: pd.DataFrame  # x, diff = F_L(x) - F_H(x)
    label: str = "raw"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "split_point": self.split_point,
            "n_high": self.n_high,
            "n_low": self.n_low,
            "S_hat": self.S_hat,
            "p_value": self.p_value,
        }


def _ecdf(sample: np.ndarray, at: np.ndarray) -> np.ndarray:
    s = np.sort(sample)
    return np.searchsorted(s, at, side="right") / len(s)


def dominance_statistic(treat_high, treat_low) -> tuple[float, pd.DataFrame]:
    """``sqrt(NH NL / (NH + NL)) * sup_x (F_L(x) - F_H(x))`` over pooled support."""
    th = np.asarray(treat_high, dtype=float)
    tl = np.asarray(treat_low, dtype=float)
    xs = np.unique(np.concatenate([th, tl]))
    diff = _ecdf(tl, xs) - _ecdf(th, xs)
    nh, nl = len(th), len(tl)
    S = float(np.sqrt(nh * nl / (nh + nl)) * diff.max())
    return S, pd.DataFrame({"x": xs, "diff": diff})


def dominance_pvalue(S: float) -> float:
    return float(np.exp(-2.0 * max(S, 0.0) ** 2))


def barrett_donald_test(table, treatment: str, instrument: str, label: str = "raw") -> DominanceReport:
    """One-sided dominance test after a median split of the instrument.

    Observations exactly at the median go to the low group.  The null is that
    the high-instrument group's treatment CDF lies weakly above the low
    group's everywhere; the p-value is ``exp(-2 max(S, 0)^2)``.
    """
    frame = _frame(table)
    for c in (treatment, instrument):
        if c not in frame.columns:
            raise DataError(f"unknown column {c!r}")
    sample = frame[[treatment, instrument]].dropna()
    z = sample[instrument].to_numpy(dtype=float)
    t = sample[treatment].to_numpy(dtype=float)
    med = float(np.median(z))
    high = z > med
    if high.sum() == 0 or (~high).sum() == 0:
        raise DataError("median split leaves an empty group")
    if high.sum() < 2 or (~high).sum() < 2:
        raise DataError("each split group needs at least 2 observations")
    S, grid = dominance_statistic(t[high], t[~high])
    return DominanceReport(med, int(high.sum()), int((~high).sum()), S, dominance_pvalue(S), grid, label)


def residualize(table, columns: Sequence[str], controls: RegressionSpec):
    """Replace each column by its OLS residual on the controls (same sample for all)."""
    frame = _frame(table)
    cols = list(columns) + list(controls.exogenous) + [c for c in (controls.absorb, controls.dummies, controls.cluster) if c]
    sample = frame.loc[frame[cols].notna().all(axis=1)].reset_index(drop=True)
    out = sample.copy()
    for c in columns:
        fit = ols(controls.replace(outcome=c, endogenous=(), instruments=(), exogenous=tuple(x for x in controls.exogenous if x != c)), sample)
        out[c] = fit.residuals
    return out


def residual_barrett_donald(table, treatment: str, instrument: str, controls: RegressionSpec) -> DominanceReport:
    res = residualize(table, [treatment, instrument], controls)
    return barrett_donald_test(res, treatment, instrument, label="residual")


def residual_variation(table, target: str, control_sets: Sequence) -> pd.DataFrame:
    """Standard deviation of the OLS residual of ``target`` for each control set.

    Each element of ``control_sets`` is either a list of column names or a
    :class:`RegressionSpec` skeleton (fixed effects allowed).  All sets use the
    same sample, so nested sets give non-increasing values.
    """
    frame = _frame(table)
    skeletons = []
    for cs in control_sets:
        if not isinstance(cs, RegressionSpec):
            cs = RegressionSpec(outcome="__unused", exogenous=tuple(cs))
        skeletons.append(cs.replace(outcome="__unused", endogenous=(), instruments=()))
    cols = {target}
    for sk in skeletons:
        cols.update(sk.exogenous)
        cols.update(c for c in (sk.absorb, sk.dummies) if c)
    unknown = [c for c in cols if c not in frame.columns]
    if unknown:
        raise DataError(f"unknown column(s) {unknown}")
    sample = frame.loc[frame[list(cols)].notna().all(axis=1)].reset_index(drop=True)
    y = sample[target].to_numpy(dtype=float)

    rows = []
    for k, sk in enumerate(skeletons):
        if target in sk.exogenous:
            sd = 0.0
        elif not sk.exogenous and sk.absorb is None and sk.dummies is None:
            sd = float(np.std(y, ddof=1))
        else:
            fit = ols(sk.replace(outcome=target, cluster=None), sample)
            sd = float(np.std(fit.residuals, ddof=1))
        label = ", ".join(list(sk.exogenous) + [f"{c} FE" for c in (sk.dummies, sk.absorb) if c]) or "none"
        rows.append({"set": k, "controls": label, "sd": sd})
    return pd.DataFrame(rows)
