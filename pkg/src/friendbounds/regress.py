"""OLS and linear IV/GMM with absorbed or dummy fixed effects and clustered errors.

Two entry points share one numerical core:

* the table API, ``ols(spec, table)`` / ``iv_gmm(spec, table)``, which takes a
  declarative :class:`RegressionSpec` over named columns, and
* scikit-learn style estimators, :class:`OLSRegression` and
  :class:`IVRegression`, operating on arrays.

Small-sample correction for every clustered covariance is
``G/(G-1) * (N-1)/(N-K)``, where ``K`` counts absorbed groups as parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DataError, EstimationError, RankDeficiencyError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class RegressionSpec:
    """Model description over named columns.

    ``absorb`` names a grouping column removed by the within transformation;
    ``dummies`` names a grouping column expanded into indicators (first level
    dropped).  An intercept is added only when nothing is absorbed.
    """

    outcome: str
    endogenous: tuple = ()
    instruments: tuple = ()
    exogenous: tuple = ()
    absorb: str | None = None
    dummies: str | None = None
    cluster: str | None = None
    intercept: bool = True

    def __post_init__(self):
        for name in ("endogenous", "instruments", "exogenous"):
            value = getattr(self, name)
            if isinstance(value, str):
                value = (value,)
            object.__setattr__(self, name, tuple(value))
        roles = [self.outcome, *self.endogenous, *self.instruments, *self.exogenous]
        seen = set()
        for col in roles:
            if col in seen:
                raise DataError(f"column {col!r} appears in more than one role")
            seen.add(col)
        if len(self.instruments) < len(self.endogenous):
            raise DataError(
                f"order condition fails: {len(self.instruments)} instruments for "
                f"{len(self.endogenous)} endogenous regressors"
            )

    @property
    def columns(self) -> list[str]:
        cols = [self.outcome, *self.endogenous, *self.instruments, *self.exogenous]
        for extra in (self.absorb, self.dummies, self.cluster):
            if extra is not None and extra not in cols:
                cols.append(extra)
        return cols

    def replace(self, **changes) -> "RegressionSpec":
        return replace(self, **changes)


@dataclass
class FitResult:
    coefficients: pd.Series
    vcov: pd.DataFrame
    n_obs: int
    n_clusters: int
    r_squared: float
    residuals: np.ndarray
    df_resid: int
    first_stage_F: dict = field(default_factory=dict)
    method: str = "ols"
    clustered: bool = True
    dropped: tuple = ()
    spec: RegressionSpec | None = None

    @property
    def names(self) -> list[str]:
        return list(self.coefficients.index)

    @property
    def bse(self) -> pd.Series:
        return pd.Series(np.sqrt(np.clip(np.diag(self.vcov.to_numpy()), 0, None)), index=self.coefficients.index)

    @property
    def tvalues(self) -> pd.Series:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coefficients / self.bse

    @property
    def df_inference(self) -> int:
        return self.n_clusters - 1 if self.clustered else self.df_resid

    @property
    def pvalues(self) -> pd.Series:
        t = self.tvalues.to_numpy()
        return pd.Series(2 * stats.t.sf(np.abs(t), self.df_inference), index=self.coefficients.index)

    def conf_int(self, alpha: float = 0.05) -> pd.DataFrame:
        q = stats.t.ppf(1 - alpha / 2, self.df_inference)
        return pd.DataFrame(
            {"lower": self.coefficients - q * self.bse, "upper": self.coefficients + q * self.bse}
        )

    def to_dict(self, include_fe: bool = False) -> dict:
        keep = [n for n in self.names if include_fe or not _is_fe_name(n, self.spec)]
        return {
            "method": self.method,
            "coefficients": {k: float(self.coefficients[k]) for k in keep},
            "std_errors": {k: float(self.bse[k]) for k in keep},
            "first_stage_F": {k: {"F": float(f), "p": float(p)} for k, (f, p) in self.first_stage_F.items()},
            "n_obs": int(self.n_obs),
            "n_clusters": int(self.n_clusters),
            "r_squared": float(self.r_squared),
            "dropped": list(self.dropped),
        }


def _is_fe_name(name, spec):
    if spec is None or spec.dummies is None or name in (*spec.endogenous, *spec.exogenous):
        return False
    return name.startswith(f"{spec.dummies}_")


# ---------------------------------------------------------------------------
# numerical core


def _frame(table) -> pd.DataFrame:
    return table.frame if hasattr(table, "frame") else table


def within_transform(table, columns: Sequence[str], group: str):
    """Replace each column by its deviation from the group mean.

    Accepts an :class:`~friendbounds.data.ObservationTable` or a DataFrame and
    returns the same kind of object.
    """
    frame = _frame(table)
    missing = [c for c in [*columns, group] if c not in frame.columns]
    if missing:
        raise DataError(f"unknown column(s) {missing}")
    out = frame.copy()
    cols = list(columns)
    out[cols] = frame[cols] - frame.groupby(group)[cols].transform("mean")
    if hasattr(table, "with_columns"):
        return table.with_columns(**{c: out[c].to_numpy() for c in cols})
    return out


def _demean(arr: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    if arr.ndim == 1:
        sums = np.bincount(codes, weights=arr, minlength=n_groups)
        return arr - (sums / counts)[codes]
    out = np.empty_like(arr, dtype=float)
    for k in range(arr.shape[1]):
        sums = np.bincount(codes, weights=arr[:, k], minlength=n_groups)
        out[:, k] = arr[:, k] - (sums / counts)[codes]
    return out


def collinear_columns(X: np.ndarray, scale: np.ndarray | None = None, tol: float = RANK_TOL) -> np.ndarray:
    """Indices of columns lying (numerically) in the span of earlier columns.

    A column is flagged when the diagonal of the triangular QR factor is below
    ``tol`` times the column's reference norm ``scale`` (default: its own norm).
    """
    if X.shape[1] == 0:
        return np.array([], dtype=int)
    norms = np.linalg.norm(X, axis=0)
    scale = norms if scale is None else np.asarray(scale, dtype=float)
    scale = np.where(scale > 0, scale, 1.0)
    R = np.linalg.qr(X, mode="r")
    diag = np.zeros(X.shape[1])
    k = min(R.shape)
    diag[:k] = np.abs(np.diag(R)[:k])
    return np.flatnonzero(diag <= tol * scale)


def cluster_vcov(
    scores_X: np.ndarray,
    resid: np.ndarray,
    clusters: np.ndarray | None,
    bread: np.ndarray | None = None,
    n_absorbed: int = 0,
    correction: bool = True,
) -> np.ndarray:
    """Cluster sandwich ``B (sum_c X_c'e_c e_c'X_c) B``.

    ``bread`` defaults to ``(X'X)^{-1}``.  ``clusters=None`` treats every row as
    its own cluster (heteroskedasticity-robust).
    """
    X = np.asarray(scores_X, dtype=float)
    e = np.asarray(resid, dtype=float).reshape(-1)
    n, k = X.shape
    if clusters is None:
        codes = np.arange(n)
        G = n
    else:
        codes, uniq = pd.factorize(np.asarray(clusters), sort=True)
        G = len(uniq)
    if G < 2:
        raise EstimationError("cluster-robust covariance needs at least 2 clusters")
    if bread is None:
        bread = np.linalg.inv(X.T @ X)
    U = X * e[:, None]
    sums = np.zeros((G, k))
    np.add.at(sums, codes, U)
    meat = sums.T @ sums
    V = bread @ meat @ bread
    if correction:
        dof = n - k - n_absorbed
        if dof <= 0:
            raise EstimationError(f"no residual degrees of freedom (N={n}, K={k}, absorbed={n_absorbed})")
        V *= G / (G - 1) * (n - 1) / dof
    return 0.5 * (V + V.T)


@dataclass
class _Design:
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray | None
    x_names: list
    z_names: list
    clusters: np.ndarray | None
    n_absorbed: int
    n_endog: int
    dropped: tuple
    excluded_idx: list  # positions of excluded instruments inside Z


def _build_design(spec: RegressionSpec, table, iv: bool) -> _Design:
    frame = _frame(table)
    missing = [c for c in spec.columns if c not in frame.columns]
    if missing:
        raise DataError(f"unknown column(s) {missing}")
    sample = frame[spec.columns].dropna()
    if len(sample) == 0:
        raise EstimationError("estimation sample is empty after dropping missing values")

    exog = sample[list(spec.exogenous)].to_numpy(dtype=float)
    exog_names = list(spec.exogenous)
    if spec.dummies is not None:
        d = pd.get_dummies(sample[spec.dummies], prefix=spec.dummies, drop_first=True, dtype=float)
        exog = np.column_stack([exog, d.to_numpy()]) if exog.size else d.to_numpy()
        exog_names += list(d.columns)
    exog = exog.reshape(len(sample), -1)
    if spec.intercept and spec.absorb is None:
        exog = np.column_stack([np.ones(len(sample)), exog])
        exog_names = ["const"] + exog_names

    endog = sample[list(spec.endogenous)].to_numpy(dtype=float).reshape(len(sample), -1)
    excl = sample[list(spec.instruments)].to_numpy(dtype=float).reshape(len(sample), -1)
    y = sample[spec.outcome].to_numpy(dtype=float)

    X = np.column_stack([endog, exog])
    x_names = list(spec.endogenous) + exog_names
    if iv:
        Z = np.column_stack([excl, exog])
        z_names = list(spec.instruments) + exog_names
    else:
        # without IV, instruments are ordinary regressors
        X = np.column_stack([endog, excl, exog])
        x_names = list(spec.endogenous) + list(spec.instruments) + exog_names
        Z, z_names = None, []

    scale_X = np.linalg.norm(X, axis=0)
    scale_Z = np.linalg.norm(Z, axis=0) if Z is not None else None
    n_absorbed = 0
    if spec.absorb is not None:
        codes, uniq = pd.factorize(sample[spec.absorb], sort=True)
        n_absorbed = len(uniq)
        y = _demean(y, codes, n_absorbed)
        X = _demean(X, codes, n_absorbed)
        if Z is not None:
            Z = _demean(Z, codes, n_absorbed)

    dropped = []
    n_endog = len(spec.endogenous)
    bad = collinear_columns(X, scale_X)
    if len(bad):
        names = [x_names[k] for k in bad]
        hard = [x_names[k] for k in bad if k < n_endog]
        if hard:
            raise RankDeficiencyError(f"endogenous regressor(s) {hard} collinear with controls", hard)
        if not iv and any(k < n_endog + len(spec.instruments) for k in bad):
            raise RankDeficiencyError(f"regressor(s) {names} collinear", names)
        warnings.warn(f"dropping collinear column(s) {names}", stacklevel=3)
        keep = np.setdiff1d(np.arange(X.shape[1]), bad)
        X = X[:, keep]
        x_names = [x_names[k] for k in keep]
        dropped += names
    excluded_idx = list(range(len(spec.instruments)))
    if Z is not None:
        # controls first, so an excluded instrument spanned by controls is the one flagged
        n_ex = len(spec.instruments)
        order = np.r_[np.arange(n_ex, Z.shape[1]), np.arange(n_ex)]
        bad_z = np.sort(order[collinear_columns(Z[:, order], scale_Z[order])])
        if len(bad_z):
            names = [z_names[k] for k in bad_z]
            warnings.warn(f"dropping collinear instrument column(s) {names}", stacklevel=3)
            keep = np.setdiff1d(np.arange(Z.shape[1]), bad_z)
            Z = Z[:, keep]
            z_names = [z_names[k] for k in keep]
            excluded_idx = [k for k, nm in enumerate(z_names) if nm in spec.instruments]
            dropped += [nm for nm in names if nm not in dropped]
        if len(excluded_idx) < n_endog:
            raise RankDeficiencyError(
                "excluded instruments have no residual variation after controls",
                list(spec.instruments),
            )
    if X.shape[0] <= X.shape[1] + n_absorbed:
        raise EstimationError("fewer observations than parameters")

    clusters = sample[spec.cluster].to_numpy() if spec.cluster is not None else None
    return _Design(y, X, Z, x_names, z_names, clusters, n_absorbed, n_endog, tuple(dropped), excluded_idx)


def _n_groups(clusters, n):
    return n if clusters is None else len(pd.unique(clusters))


def _r2(y, resid):
    tss = np.sum((y - y.mean()) ** 2)
    return float(1 - resid @ resid / tss) if tss > 0 else float("nan")


def _ols_core(y, X, clusters, n_absorbed=0):
    Q, R = np.linalg.qr(X)
    beta = linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    bread = Rinv @ Rinv.T
    V = cluster_vcov(X, resid, clusters, bread=bread, n_absorbed=n_absorbed)
    return beta, resid, V


def _iv_core(y, X, Z, clusters, n_absorbed=0, weighting="2sls"):
    # first-stage projection of X onto the instrument space
    Xhat = Z @ np.linalg.lstsq(Z, X, rcond=None)[0]
    beta = np.linalg.lstsq(Xhat, y, rcond=None)[0]
    resid = y - X @ beta
    bread = np.linalg.inv(Xhat.T @ Xhat)
    V = cluster_vcov(Xhat, resid, clusters, bread=bread, n_absorbed=n_absorbed)
    if weighting == "gmm":
        n, k = X.shape
        codes = np.arange(n) if clusters is None else pd.factorize(clusters, sort=True)[0]
        G = codes.max() + 1
        sums = np.zeros((G, Z.shape[1]))
        np.add.at(sums, codes, Z * resid[:, None])
        W = np.linalg.pinv(sums.T @ sums)
        ZX = Z.T @ X
        A = ZX.T @ W @ ZX
        beta = np.linalg.solve(A, ZX.T @ W @ (Z.T @ y))
        resid = y - X @ beta
        sums = np.zeros((G, Z.shape[1]))
        np.add.at(sums, codes, Z * resid[:, None])
        S = sums.T @ sums
        Ainv = np.linalg.inv(A)
        V = Ainv @ ZX.T @ W @ S @ W @ ZX @ Ainv
        dof = n - k - n_absorbed
        V *= G / (G - 1) * (n - 1) / dof
        V = 0.5 * (V + V.T)
    elif weighting != "2sls":
        raise ValueError(f"unknown weighting {weighting!r}")
    return beta, resid, V


def _wald_F(beta, V, idx, df2):
    b = beta[idx]
    Vs = V[np.ix_(idx, idx)]
    q = len(idx)
    F = float(b @ np.linalg.pinv(Vs) @ b) / q
    return F, float(stats.f.sf(F, q, df2))


def _first_stage_F(d: _Design) -> dict:
    out = {}
    G = _n_groups(d.clusters, len(d.y))
    for j in range(d.n_endog):
        beta, resid, V = _ols_core(d.X[:, j], d.Z, d.clusters, d.n_absorbed)
        df2 = G - 1 if d.clusters is not None else len(d.y) - d.Z.shape[1] - d.n_absorbed
        out[d.x_names[j]] = _wald_F(beta, V, d.excluded_idx, df2)
    return out


def _result(d, beta, resid, V, method, spec, first_stage=None) -> FitResult:
    names = d.x_names
    n = len(d.y)
    G = _n_groups(d.clusters, n)
    return FitResult(
        coefficients=pd.Series(beta, index=names),
        vcov=pd.DataFrame(V, index=names, columns=names),
        n_obs=n,
        n_clusters=G,
        r_squared=_r2(d.y, resid),
        residuals=resid,
        df_resid=n - len(names) - d.n_absorbed,
        first_stage_F=first_stage or {},
        method=method,
        clustered=d.clusters is not None,
        dropped=d.dropped,
        spec=spec,
    )


def ols(spec: RegressionSpec, table) -> FitResult:
    """Least squares of ``spec.outcome`` on every listed regressor.

    Endogenous columns and instruments, if any, are treated as ordinary
    regressors.
    """
    d = _build_design(spec, table, iv=False)
    beta, resid, V = _ols_core(d.y, d.X, d.clusters, d.n_absorbed)
    return _result(d, beta, resid, V, "ols", spec)


def iv_gmm(spec: RegressionSpec, table, weighting: str = "2sls") -> FitResult:
    """Linear IV by GMM.

    ``weighting="2sls"`` uses ``W = (Z'Z)^{-1}`` and is identical to two-stage
    least squares; ``"gmm"`` re-weights with the clustered moment covariance of
    the first-step residuals (two-step efficient GMM).
    """
    if not spec.endogenous:
        raise DataError("iv_gmm needs at least one endogenous regressor")
    d = _build_design(spec, table, iv=True)
    beta, resid, V = _iv_core(d.y, d.X, d.Z, d.clusters, d.n_absorbed, weighting)
    return _result(d, beta, resid, V, "2sls" if weighting == "2sls" else "gmm2s", spec, _first_stage_F(d))


def joint_F(fit: FitResult, subset: Sequence[str]) -> tuple[float, float]:
    """Wald F for ``H0: coefficients in subset are all zero``.

    Uses the fit's (cluster-robust) covariance; the p-value comes from
    ``F(|subset|, G-1)`` for clustered fits.
    """
    subset = list(subset)
    if not subset:
        raise ValueError("empty coefficient subset")
    unknown = [s for s in subset if s not in fit.coefficients.index]
    if unknown:
        raise KeyError(f"coefficients not in fit: {unknown}")
    idx = [fit.names.index(s) for s in subset]
    return _wald_F(fit.coefficients.to_numpy(), fit.vcov.to_numpy(), idx, fit.df_inference)


# ---------------------------------------------------------------------------
# scikit-learn style estimators


class OLSRegression(RegressorMixin, BaseEstimator):
    """Least squares with clustered standard errors.

    Parameters
    ----------
    fit_intercept : bool, default True
        Ignored (treated as False) when ``absorb`` groups are passed to ``fit``.
    """

    def __init__(self, fit_intercept: bool = True):
        self.fit_intercept = fit_intercept

    def fit(self, X, y, clusters=None, absorb=None):
        X, y = check_X_y(X, y, y_numeric=True)
        X = X.astype(float)
        y = y.astype(float)
        n_abs = 0
        use_const = self.fit_intercept and absorb is None
        if absorb is not None:
            codes, uniq = pd.factorize(np.asarray(absorb), sort=True)
            n_abs = len(uniq)
            X = _demean(X, codes, n_abs)
            y = _demean(y, codes, n_abs)
        design = np.column_stack([np.ones(len(y)), X]) if use_const else X
        beta, resid, V = _ols_core(y, design, clusters, n_abs)
        self.n_features_in_ = X.shape[1]
        self.intercept_ = float(beta[0]) if use_const else 0.0
        self.coef_ = beta[1:] if use_const else beta
        self.vcov_ = V
        self.resid_ = resid
        self.bse_ = np.sqrt(np.diag(V))
        self.r_squared_ = _r2(y, resid)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_


class IVRegression(RegressorMixin, BaseEstimator):
    """Linear IV; the first ``n_endogenous`` columns of ``X`` are endogenous.

    ``fit(X, y, instruments=Z_excluded)`` appends the exogenous columns of ``X``
    (and an intercept) to the excluded instruments.
    """

    def __init__(self, n_endogenous: int = 1, fit_intercept: bool = True, weighting: str = "2sls"):
        self.n_endogenous = n_endogenous
        self.fit_intercept = fit_intercept
        self.weighting = weighting

    def fit(self, X, y, instruments=None, clusters=None, absorb=None):
        if instruments is None:
            raise ValueError("IVRegression.fit requires excluded instruments")
        X, y = check_X_y(X, y, y_numeric=True)
        Zx = check_array(instruments, ensure_2d=False).reshape(len(y), -1)
        if Zx.shape[1] < self.n_endogenous:
            raise DataError("order condition fails")
        X = X.astype(float)
        y = y.astype(float)
        Zx = Zx.astype(float)
        n_abs = 0
        use_const = self.fit_intercept and absorb is None
        if absorb is not None:
            codes, uniq = pd.factorize(np.asarray(absorb), sort=True)
            n_abs = len(uniq)
            X, y, Zx = (_demean(a, codes, n_abs) for a in (X, y, Zx))
        exog = X[:, self.n_endogenous:]
        if use_const:
            X = np.column_stack([X[:, : self.n_endogenous], np.ones(len(y)), exog])
            exog = np.column_stack([np.ones(len(y)), exog])
        Z = np.column_stack([Zx, exog])
        beta, resid, V = _iv_core(y, X, Z, clusters, n_abs, self.weighting)
        if use_const:
            k = self.n_endogenous
            self.intercept_ = float(beta[k])
            order = np.r_[np.arange(k), np.arange(k + 1, len(beta))]
            self.coef_ = beta[order]
            self.vcov_ = V[np.ix_(order, order)]
        else:
            self.intercept_ = 0.0
            self.coef_ = beta
            self.vcov_ = V
        self.n_features_in_ = X.shape[1] - int(use_const)
        self.bse_ = np.sqrt(np.diag(self.vcov_))
        self.resid_ = resid
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_
