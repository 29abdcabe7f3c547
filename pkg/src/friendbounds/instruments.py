"""Pairwise (dyadic) homophily instrument.

Enumerates every ordered within-cohort pair, fits a Probit of the nomination
indicator on pairwise age distance plus receiver characteristics and fixed
effects, and sums the fitted nomination probabilities pointing at each
individual into a predicted in-degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import special, stats
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import COHORT, EdgeList, ObservationTable
from .exceptions import DataError, EstimationError, SeparationError
from .regress import collinear_columns

# |index| beyond this makes Phi(index) round to exactly 0 or 1 in float64
_SEPARATION_INDEX = 8.3


@dataclass(frozen=True)
class DyadTable:
    """Ordered within-cohort pairs ``sender -> receiver``.

    ``frame`` columns: ``sender``, ``receiver``, ``school``, ``grade``,
    ``pair_distance``, ``dist_sender_older``, ``dist_sender_younger``,
    ``label`` and one ``recv_<col>`` per receiver covariate.
    """

    frame: pd.DataFrame
    n_dropped_missing: int = 0

    def __len__(self):
        return len(self.frame)

    def to_csv(self, path, delimiter: str = ",") -> None:
        self.frame.to_csv(path, sep=delimiter, index=False, float_format="%.10g")


def build_dyads(
    table: ObservationTable,
    edges: EdgeList,
    receiver_covariates: Sequence[str] = ("age",),
) -> DyadTable:
    """All ordered pairs within each school-grade cell, ``n(n-1)`` per cell.

    Pairs whose receiver has a missing covariate are dropped and counted.
    """
    frame = table.frame
    unknown = [c for c in receiver_covariates if c not in frame.columns]
    if unknown:
        raise DataError(f"unknown receiver covariate(s) {unknown}")
    ids = frame["id"].to_numpy()
    ages = frame["age"].to_numpy(dtype=float)

    send_parts, recv_parts = [], []
    for _, idx in sorted(frame.groupby(COHORT).indices.items()):
        m = len(idx)
        if m < 2:
            continue
        s = np.repeat(idx, m)
        r = np.tile(idx, m)
        keep = s != r
        send_parts.append(s[keep])
        recv_parts.append(r[keep])
    if send_parts:
        s = np.concatenate(send_parts)
        r = np.concatenate(recv_parts)
    else:
        s = r = np.array([], dtype=np.int64)

    diff = ages[s] - ages[r]
    out = pd.DataFrame(
        {
            "sender": ids[s],
            "receiver": ids[r],
            "school": frame["school"].to_numpy()[r],
            "grade": frame["grade"].to_numpy()[r],
            "pair_distance": np.abs(diff),
            "dist_sender_older": np.where(diff > 0, diff, 0.0),
            "dist_sender_younger": np.where(diff < 0, -diff, 0.0),
        }
    )
    for c in receiver_covariates:
        out[f"recv_{c}"] = frame[c].to_numpy(dtype=float)[r]

    n_id = int(ids.max()) + 1 if len(ids) else 1
    edge_keys = set((edges.senders.astype(np.int64) * n_id + edges.receivers).tolist())
    dyad_keys = out["sender"].to_numpy(np.int64) * n_id + out["receiver"].to_numpy(np.int64)
    out["label"] = np.fromiter((k in edge_keys for k in dyad_keys.tolist()), dtype=np.int64, count=len(out))

    recv_cols = [f"recv_{c}" for c in receiver_covariates]
    ok = out[recv_cols].notna().all(axis=1).to_numpy() if recv_cols else np.ones(len(out), bool)
    dropped = int((~ok).sum())
    return DyadTable(out.loc[ok].reset_index(drop=True), dropped)


# ---------------------------------------------------------------------------
# Probit


def _loglik(X, q, beta):
    idx = q * (X @ beta)
    return math.fsum(special.log_ndtr(idx)), idx


def _mills(idx):
    # phi(t) / Phi(t), stable in the left tail
    return np.exp(-0.5 * idx**2 - 0.5 * np.log(2 * np.pi) - special.log_ndtr(idx))


def _score_hessian(X, q, idx):
    lam = _mills(idx)
    g = X.T @ (q * lam)
    w = lam * (lam + idx)
    H = -(X * w[:, None]).T @ X
    return g, H, q * lam


def _initial_beta(X, y):
    ybar = float(np.mean(y))
    c = stats.norm.ppf(ybar)
    target = c + (y - ybar) / stats.norm.pdf(c)
    return np.linalg.lstsq(X, target, rcond=None)[0]


def probit_newton(X, y, max_iter: int = 100, tol: float = 1e-8, rel_tol: float = 1e-12, init=None):
    """Probit MLE by Newton-Raphson with step-halving.

    Returns ``(beta, loglik, iterations, converged, score, hessian, lls)`` where
    ``lls`` is the log-likelihood after every accepted step.  Raises
    :class:`SeparationError` when labels are constant, when the fitted index
    classifies every observation correctly, or when iterations stop short of
    convergence with indices where probabilities are numerically 0 or 1.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.min() == y.max():
        raise SeparationError(f"labels are all {int(y[0])}; probit is not identified")
    q = 2.0 * y - 1.0
    beta = _initial_beta(X, y) if init is None else np.asarray(init, dtype=float)
    ll, idx = _loglik(X, q, beta)
    if not np.isfinite(ll):
        beta = np.zeros(X.shape[1])
        ll, idx = _loglik(X, q, beta)
    lls = [ll]
    converged = False
    it = 0
    g, H, _ = _score_hessian(X, q, idx)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= tol:
            converged = True
            it -= 1
            break
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("singular probit Hessian; check for collinear regressors") from exc
        t = 1.0
        accepted = False
        for _ in range(60):
            cand = beta + t * step
            ll_new, idx_new = _loglik(X, q, cand)
            if np.isfinite(ll_new) and ll_new >= ll:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        rel = abs(ll_new - ll) / max(1.0, abs(ll))
        beta, ll, idx = cand, ll_new, idx_new
        lls.append(ll)
        g, H, _ = _score_hessian(X, q, idx)
        if np.max(np.abs(g)) <= tol:
            converged = True
            break
        if rel <= rel_tol:
            break
    converged = converged or np.max(np.abs(g)) <= tol
    fitted = X @ beta
    if np.all(q * fitted > 0):
        raise SeparationError("the regressors classify every observation perfectly; the data are separated")
    if not converged and np.max(np.abs(fitted)) > _SEPARATION_INDEX:
        raise SeparationError(
            "fitted probabilities reach 0 or 1 without convergence (max |index| = "
            f"{np.max(np.abs(fitted)):.1f}); the data are quasi-separated"
        )
    return beta, ll, it, converged, g, H, lls


def _probit_vcov(X, q, beta, H, clusters):
    idx = q * (X @ beta)
    lam = _mills(idx)
    scores = X * (q * lam)[:, None]
    Hinv = np.linalg.inv(-H)
    if clusters is None:
        return Hinv
    codes, uniq = pd.factorize(np.asarray(clusters), sort=True)
    G = len(uniq)
    if G < 2:
        raise EstimationError("cluster-robust covariance needs at least 2 clusters")
    sums = np.zeros((G, X.shape[1]))
    np.add.at(sums, codes, scores)
    V = Hinv @ (sums.T @ sums) @ Hinv * G / (G - 1)
    return 0.5 * (V + V.T)


@dataclass(frozen=True)
class ProbitFormula:
    """Column roles for the dyadic Probit.

    ``homophily`` columns form the block tested by the LR statistic.
    ``fixed_effects`` columns are expanded into dummies (first level dropped).
    """

    homophily: tuple = ("pair_distance",)
    controls: tuple = ("recv_age",)
    fixed_effects: tuple = ("school", "grade")
    intercept: bool = True

    def __post_init__(self):
        for name in ("homophily", "controls", "fixed_effects"):
            v = getattr(self, name)
            object.__setattr__(self, name, (v,) if isinstance(v, str) else tuple(v))


@dataclass
class ProbitFit:
    coefficients: pd.Series
    vcov: pd.DataFrame
    log_likelihood: float
    lr_stat_instruments: float
    lr_pvalue: float
    converged: bool
    iterations: int
    max_score: float
    n_obs: int
    formula: ProbitFormula
    fe_levels: dict = field(default_factory=dict)
    loglik_path: list = field(default_factory=list)

    @property
    def bse(self) -> pd.Series:
        return pd.Series(np.sqrt(np.diag(self.vcov.to_numpy())), index=self.coefficients.index)

    @property
    def tvalues(self) -> pd.Series:
        return self.coefficients / self.bse

    def design(self, frame: pd.DataFrame) -> np.ndarray:
        X, _ = _probit_design(frame, self.formula, self.fe_levels)
        return X

    def predict_proba(self, frame: pd.DataFrame) -> np.ndarray:
        return special.ndtr(self.design(frame) @ self.coefficients.to_numpy())

    def to_dict(self) -> dict:
        declared = {*self.formula.homophily, *self.formula.controls}
        keep = [
            n
            for n in self.coefficients.index
            if n in declared or not any(n.startswith(f"{fe}_") for fe in self.formula.fixed_effects)
        ]
        return {
            "coefficients": {k: float(self.coefficients[k]) for k in keep},
            "std_errors": {k: float(self.bse[k]) for k in keep},
            "log_likelihood": self.log_likelihood,
            "lr_stat_instruments": self.lr_stat_instruments,
            "lr_pvalue": self.lr_pvalue,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_obs": self.n_obs,
        }


def _probit_design(frame, formula: ProbitFormula, fe_levels=None, drop=()):
    cols = [c for c in formula.homophily + formula.controls if c not in drop]
    missing = [c for c in cols + list(formula.fixed_effects) if c not in frame.columns]
    if missing:
        raise DataError(f"unknown dyad column(s) {missing}")
    parts = []
    names = []
    if formula.intercept:
        parts.append(np.ones((len(frame), 1)))
        names.append("const")
    parts.append(frame[cols].to_numpy(dtype=float).reshape(len(frame), -1))
    names += cols
    levels = dict(fe_levels or {})
    for fe in formula.fixed_effects:
        if fe not in levels:
            levels[fe] = sorted(pd.unique(frame[fe]).tolist())
        cat = pd.Categorical(frame[fe], categories=levels[fe])
        d = pd.get_dummies(cat, prefix=fe, drop_first=True, dtype=float)
        parts.append(d.to_numpy())
        names += list(d.columns)
    return np.column_stack(parts), (names, levels)


def probit_fit(
    dyads: DyadTable | pd.DataFrame,
    formula: ProbitFormula | None = None,
    cluster: str | None = "school",
    max_iter: int = 100,
    tol: float = 1e-8,
) -> ProbitFit:
    """Fit the dyadic Probit and the LR test of the homophily block."""
    frame = dyads.frame if isinstance(dyads, DyadTable) else dyads
    formula = formula or ProbitFormula()
    if "label" not in frame.columns:
        raise DataError("dyad table has no 'label' column")
    y = frame["label"].to_numpy(dtype=float)
    X, (names, levels) = _probit_design(frame, formula)
    bad = collinear_columns(X)
    if len(bad):
        raise EstimationError(f"collinear probit regressor(s) {[names[k] for k in bad]}")

    beta, ll, it, conv, g, H, lls = probit_newton(X, y, max_iter=max_iter, tol=tol)
    clusters = frame[cluster].to_numpy() if cluster is not None else None
    V = _probit_vcov(X, 2 * y - 1, beta, H, clusters)

    lr = float("nan")
    lr_p = float("nan")
    if formula.homophily:
        Xr, _ = _probit_design(frame, formula, levels, drop=formula.homophily)
        _, ll_r, *_ = probit_newton(Xr, y, max_iter=max_iter, tol=tol)
        lr = max(0.0, 2.0 * (ll - ll_r))
        lr_p = float(stats.chi2.sf(lr, len(formula.homophily)))

    return ProbitFit(
        coefficients=pd.Series(beta, index=names),
        vcov=pd.DataFrame(V, index=names, columns=names),
        log_likelihood=float(ll),
        lr_stat_instruments=lr,
        lr_pvalue=lr_p,
        converged=bool(conv),
        iterations=int(it),
        max_score=float(np.max(np.abs(g))),
        n_obs=len(y),
        formula=formula,
        fe_levels=levels,
        loglik_path=lls,
    )


def predicted_indegree(
    fit: ProbitFit,
    dyads: DyadTable,
    table: ObservationTable,
    column: str = "predicted_indegree",
) -> ObservationTable:
    """Sum of fitted nomination probabilities received by each individual.

    Individuals that receive no dyad (singleton cohorts, dropped covariates)
    get NaN.
    """
    if fit is None or not getattr(fit, "converged", False):
        raise EstimationError("predicted_indegree requires a converged ProbitFit")
    frame = dyads.frame
    p = fit.predict_proba(frame)
    sums = pd.Series(p).groupby(frame["receiver"].to_numpy()).sum()
    values = sums.reindex(table["id"].to_numpy()).to_numpy()
    return table.with_columns(**{column: values})


class ProbitRegression(ClassifierMixin, BaseEstimator):
    """Binary Probit estimated by Newton-Raphson with step-halving."""

    def __init__(self, fit_intercept: bool = True, max_iter: int = 100, tol: float = 1e-8):
        self.fit_intercept = fit_intercept
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y, clusters=None):
        X, y = check_X_y(X, y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise SeparationError(f"need exactly two classes, got {len(self.classes_)}")
        design = np.column_stack([np.ones(len(X)), X]) if self.fit_intercept else X.astype(float)
        beta, ll, it, conv, g, H, _ = probit_newton(design, y_enc, self.max_iter, self.tol)
        V = _probit_vcov(design, 2.0 * y_enc - 1, beta, H, clusters)
        if self.fit_intercept:
            self.intercept_, self.coef_ = float(beta[0]), beta[1:]
        else:
            self.intercept_, self.coef_ = 0.0, beta
        self.vcov_ = V
        self.loglik_ = float(ll)
        self.n_iter_ = int(it)
        self.converged_ = bool(conv)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = special.ndtr(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]
