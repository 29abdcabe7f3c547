"""Interval bounds on IV coefficients when one regressor's return is only
known to lie in ``[r_lower, r_upper]``.

For a fixed return ``r`` on the secondary regressor ``E``, the remaining
coefficients solve a just- or over-identified linear IV problem with outcome
``Y - r * E``.  The estimator is linear in ``r``, so the identified set for
each coefficient is spanned by the two endpoint fits.  Confidence intervals
follow Imbens and Manski (2004).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import special, stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DataError
from .regress import FitResult, IVRegression, RegressionSpec, iv_gmm

ADJUSTED = "__outcome_net_of_education"


@dataclass(frozen=True)
class BoundSpec:
    base: RegressionSpec
    education: str
    r_lower: float = 0.05
    r_upper: float = 0.15
    alpha: float = 0.05

    def __post_init__(self):
        if not (math.isfinite(self.r_lower) and math.isfinite(self.r_upper)):
            raise DataError("interval endpoints must be finite")
        if self.r_lower > self.r_upper:
            raise DataError(f"r_lower={self.r_lower} exceeds r_upper={self.r_upper}")
        if not 0 < self.alpha < 1:
            raise DataError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.base.endogenous:
            raise DataError("base specification needs an instrumented regressor")
        if self.education in self.base.columns:
            raise DataError(f"education column {self.education!r} already used in the base specification")

    @property
    def primary(self) -> str:
        return self.base.endogenous[0]


@dataclass
class BoundResult:
    """Per-coefficient bounds, endpoint standard errors and IM intervals.

    ``table`` has one row per coefficient with columns ``theta_lower``,
    ``theta_upper``, ``se_lower``, ``se_upper``, ``critical_c``, ``ci_lower``,
    ``ci_upper`` and ``lower_at`` (the assumed return that delivers the lower
    bound).
    """

    table: pd.DataFrame
    sign_probe: FitResult
    endpoint_fits: dict
    spec: BoundSpec
    n_obs: int = 0
    n_clusters: int = 0
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.table.loc[name]

    @property
    def probe_coef(self) -> float:
        return float(self.sign_probe.coefficients[self.spec.primary])

    @property
    def probe_t(self) -> float:
        return float(self.sign_probe.tvalues[self.spec.primary])

    @property
    def primary_upper_at(self) -> float:
        """Assumed return at which the primary coefficient attains its upper bound."""
        return self.spec.r_lower if self.probe_coef >= 0 else self.spec.r_upper

    def to_dict(self, coefficients=None) -> dict:
        names = list(coefficients) if coefficients is not None else _headline_names(self)
        rows = {}
        for nm in names:
            row = self.table.loc[nm]
            rows[nm] = {k: float(row[k]) for k in self.table.columns}
        return {
            "r_lower": self.spec.r_lower,
            "r_upper": self.spec.r_upper,
            "alpha": self.spec.alpha,
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "bounds": rows,
            "sign_probe": {
                "coefficient": self.probe_coef,
                "t": self.probe_t,
                "p": float(self.sign_probe.pvalues[self.spec.primary]),
                "primary_upper_bound_at": self.primary_upper_at,
            },
        }


def _headline_names(result: BoundResult) -> list[str]:
    spec = result.spec.base
    return [n for n in result.table.index if n in spec.endogenous or n in spec.exogenous]


def _norm_tail_sum(c, ratio):
    return special.ndtr(-c) + special.ndtr(-c - ratio)


def im_critical_value(delta: float, se_max: float, alpha: float = 0.05) -> float:
    """Critical value ``c`` solving ``Phi(c + delta/se_max) - Phi(-c) = 1 - alpha``.

    Solved in the algebraically equivalent tail form
    ``Phi(-c) + Phi(-c - delta/se_max) = alpha``, which keeps precision when
    the first normal cdf is close to one.  Bisection on
    ``[z_{1-alpha} - 0.1, z_{1-alpha/2} + 0.1]`` is followed by Newton steps.
    """
    for name, v in (("delta", delta), ("se_max", se_max), ("alpha", alpha)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if se_max <= 0:
        raise ValueError(f"se_max must be positive, got {se_max}")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")

    ratio = delta / se_max
    lo = stats.norm.ppf(1 - alpha) - 0.1
    hi = stats.norm.ppf(1 - alpha / 2) + 0.1
    # g is strictly decreasing in c
    g = lambda c: _norm_tail_sum(c, ratio) - alpha  # noqa: E731
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    for _ in range(3):
        slope = -(stats.norm.pdf(c) + stats.norm.pdf(c + ratio))
        step = g(c) / slope
        if not math.isfinite(step) or abs(step) > hi - lo + 1e-12:
            break
        c -= step
    return float(c)


def _endpoint_fit(spec: BoundSpec, frame: pd.DataFrame, r: float) -> FitResult:
    adj = frame.assign(**{ADJUSTED: frame[spec.base.outcome] - r * frame[spec.education]})
    return iv_gmm(spec.base.replace(outcome=ADJUSTED), adj)


def _common_sample(spec: BoundSpec, table) -> pd.DataFrame:
    frame = table.frame if hasattr(table, "frame") else table
    cols = spec.base.columns + [spec.education]
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise DataError(f"unknown column(s) {missing}")
    return frame.loc[frame[cols].notna().all(axis=1)].reset_index(drop=True)


def sign_probe(spec: BoundSpec, table) -> FitResult:
    """IV regression of education on the instrumented primary regressor and controls.

    A positive coefficient on the primary regressor means its upper bound is
    reached at ``r_lower``.  An insignificant coefficient means point
    identification cannot be rejected.
    """
    frame = _common_sample(spec, table)
    return iv_gmm(spec.base.replace(outcome=spec.education), frame)


def estimate_bounds(spec: BoundSpec, table) -> BoundResult:
    frame = _common_sample(spec, table)
    fit_l = _endpoint_fit(spec, frame, spec.r_lower)
    fit_u = _endpoint_fit(spec, frame, spec.r_upper)
    probe = iv_gmm(spec.base.replace(outcome=spec.education), frame)

    bl = fit_l.coefficients
    bu = fit_u.coefficients
    sl = fit_l.bse
    su = fit_u.bse
    # ties keep the r_lower fit on the lower side
    low_from_l = (bl <= bu).to_numpy()
    table_ = pd.DataFrame(
        {
            "theta_lower": np.where(low_from_l, bl, bu),
            "theta_upper": np.where(low_from_l, bu, bl),
            "se_lower": np.where(low_from_l, sl, su),
            "se_upper": np.where(low_from_l, su, sl),
            "lower_at": np.where(low_from_l, spec.r_lower, spec.r_upper),
        },
        index=bl.index,
    )
    result = BoundResult(
        table=table_,
        sign_probe=probe,
        endpoint_fits={"r_lower": fit_l, "r_upper": fit_u},
        spec=spec,
        n_obs=fit_l.n_obs,
        n_clusters=fit_l.n_clusters,
    )
    ci = im_confidence_interval(result, spec.alpha)
    for col in ci.columns:
        result.table[col] = ci[col]
    return result


def im_confidence_interval(result: BoundResult, alpha: float | None = None) -> pd.DataFrame:
    """Imbens-Manski interval per coefficient, each with its own critical value."""
    alpha = result.spec.alpha if alpha is None else alpha
    t = result.table
    rows = []
    for name in t.index:
        lo, up = t.at[name, "theta_lower"], t.at[name, "theta_upper"]
        se_l, se_u = t.at[name, "se_lower"], t.at[name, "se_upper"]
        c = im_critical_value(up - lo, max(se_l, se_u), alpha)
        rows.append((c, lo - c * se_l, up + c * se_u))
    return pd.DataFrame(rows, index=t.index, columns=["critical_c", "ci_lower", "ci_upper"])


class PartialIVBounds(BaseEstimator):
    """Array interface to the bound estimator.

    ``fit(X, y, education=E, instruments=Z)`` treats the first
    ``n_endogenous`` columns of ``X`` as instrumented.  Fitted attributes:
    ``lower_``, ``upper_``, ``se_lower_``, ``se_upper_``, ``ci_`` (shape
    ``(n_features, 2)``), ``critical_c_`` and ``probe_coef_``.
    """

    def __init__(self, r_lower=0.05, r_upper=0.15, alpha=0.05, n_endogenous=1, fit_intercept=True):
        self.r_lower = r_lower
        self.r_upper = r_upper
        self.alpha = alpha
        self.n_endogenous = n_endogenous
        self.fit_intercept = fit_intercept

    def fit(self, X, y, education=None, instruments=None, clusters=None, absorb=None):
        if education is None:
            raise ValueError("education values are required")
        if self.r_lower > self.r_upper:
            raise DataError("r_lower exceeds r_upper")
        X = check_array(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        E = np.asarray(education, dtype=float).reshape(-1)
        kw = dict(instruments=instruments, clusters=clusters, absorb=absorb)
        make = lambda: IVRegression(self.n_endogenous, self.fit_intercept)  # noqa: E731
        fl = make().fit(X, y - self.r_lower * E, **kw)
        fu = make().fit(X, y - self.r_upper * E, **kw)
        probe = make().fit(X, E, **kw)
        low_from_l = fl.coef_ <= fu.coef_
        self.lower_ = np.where(low_from_l, fl.coef_, fu.coef_)
        self.upper_ = np.where(low_from_l, fu.coef_, fl.coef_)
        self.se_lower_ = np.where(low_from_l, fl.bse_, fu.bse_)
        self.se_upper_ = np.where(low_from_l, fu.bse_, fl.bse_)
        self.critical_c_ = np.array(
            [
                im_critical_value(u - l, max(a, b), self.alpha)
                for l, u, a, b in zip(self.lower_, self.upper_, self.se_lower_, self.se_upper_)
            ]
        )
        self.ci_ = np.column_stack(
            [self.lower_ - self.critical_c_ * self.se_lower_, self.upper_ + self.critical_c_ * self.se_upper_]
        )
        self.probe_coef_ = probe.coef_
        self.endpoint_estimators_ = (fl, fu)
        self.n_features_in_ = X.shape[1]
        return self

    def contains(self, values) -> np.ndarray:
        """Whether each coefficient value lies in its confidence interval."""
        check_is_fitted(self, "ci_")
        v = np.asarray(values, dtype=float)
        return (self.ci_[:, 0] <= v) & (v <= self.ci_[:, 1])
