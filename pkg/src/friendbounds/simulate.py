"""Synthetic data with known returns.

Two generators:

* a structural simulator in which students split one unit of time between
  studying ``H``, socializing ``S`` and leisure ``L``, friendships form
  dyadically with probability rising in both partners' socializing and
  falling in their age gap, and a Nash equilibrium in socializing is solved
  before education, links and earnings are realized;
* a reduced-form linear generator that writes the earnings equation down
  directly, for fast estimator validation.

Functional forms of the structural model::

    U_i     = upsilon_i log S + omega_i log L - study_cost * H
    a_i(H)  = (edu_scale + edu_iq * iq_i) * sqrt(H)
    p_ij    = min(link_cap, link_scale * exp(-distance_decay * |age_i - age_j|)
                            * (1 + extro_boost * extrovert_i) * sqrt(S_i S_j))
    Y_i     = earnings_base + r_e E_i + r_f F_i + b'X_i + eps_i

``p_ij`` is the probability that ``j`` nominates ``i``; ``F_i`` is ``i``'s
realized in-degree.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd
from scipy import sparse

from .data import EdgeList, ObservationTable, compute_age_distance, compute_degree_measures
from .exceptions import ConfigError, ConvergenceError


def _check_keys(cls, data: dict):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} key(s): {unknown}")


@dataclass
class SimConfig:
    n_schools: int = 25
    grades: tuple = (9, 10, 11, 12)
    cohort_size: tuple = (16, 24)  # inclusive range, uniform
    r_e: float = 0.10
    r_f: float = 0.10
    # preferences
    log_upsilon_mean: float = np.log(0.3)
    log_upsilon_sd: float = 0.5
    log_omega_mean: float = np.log(0.6)
    log_omega_sd: float = 0.3
    study_cost: float = 0.2
    # education production
    edu_base: float = 3.0
    edu_scale: float = 18.0
    edu_iq: float = 2.0
    xi_sd: float = 1.0
    # friendship production
    link_scale: float = 1.0
    distance_decay: float = 1.0
    extro_boost: float = 0.3
    link_cap: float = 0.95
    link_rule: str = "bernoulli"  # or "threshold": link iff p >= 0.5
    # ages: grade g has mean age g + age_offset; cohort sd drawn from age_spread
    age_offset: float = 5.5
    cohort_age_shift_sd: float = 0.1
    age_spread: tuple = (0.2, 0.6)
    # covariates and earnings
    extrovert_share: float = 0.4
    female_share: float = 0.5
    white_share: float = 0.6
    n_predetermined: int = 3
    earnings_base: float = 9.5
    beta_iq: float = 0.05
    beta_female: float = -0.10
    beta_white: float = 0.05
    beta_predetermined: float = 0.05
    eps_sd: float = 0.5
    corr_upsilon_eps: float = -0.5
    corr_omega_eps: float = 0.0
    corr_upsilon_omega: float = 0.0
    # solver
    damping: float = 0.5
    max_sweeps: int = 500
    tol: float = 1e-8
    foc_tol: float = 1e-9
    seed: int | None = None

    def __post_init__(self):
        self.grades = tuple(int(g) for g in self.grades)
        self.cohort_size = tuple(int(c) for c in self.cohort_size)
        self.age_spread = tuple(float(a) for a in self.age_spread)
        self.validate()

    def validate(self):
        if not (np.isfinite(self.r_e) and np.isfinite(self.r_f)):
            raise ConfigError("true returns must be finite")
        if len(self.cohort_size) != 2 or self.cohort_size[0] > self.cohort_size[1]:
            raise ConfigError(f"cohort_size must be an ordered (min, max) pair, got {self.cohort_size}")
        if self.cohort_size[0] < 2:
            raise ConfigError(f"cohort sizes must be at least 2, got {self.cohort_size}")
        if self.n_schools < 1 or not self.grades:
            raise ConfigError("need at least one school and one grade")
        if any(not 7 <= g <= 12 for g in self.grades):
            raise ConfigError("grades must lie in 7..12")
        if not 0 < self.damping <= 1:
            raise ConfigError(f"damping must lie in (0, 1], got {self.damping}")
        if self.link_rule not in ("bernoulli", "threshold"):
            raise ConfigError(f"unknown link_rule {self.link_rule!r}")
        if not 0 < self.link_cap <= 1:
            raise ConfigError("link_cap must lie in (0, 1]")
        self.shock_cov()

    def shock_cov(self) -> np.ndarray:
        """Correlation matrix of the normal shocks behind (upsilon, omega, eps)."""
        c = np.array(
            [
                [1.0, self.corr_upsilon_omega, self.corr_upsilon_eps],
                [self.corr_upsilon_omega, 1.0, self.corr_omega_eps],
                [self.corr_upsilon_eps, self.corr_omega_eps, 1.0],
            ]
        )
        if np.linalg.eigvalsh(c).min() < -1e-12:
            raise ConfigError("shock correlation matrix is not positive semidefinite")
        return c

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        _check_keys(cls, data)
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


@dataclass
class AgentParams:
    """Per-agent endowments and shocks, stored as aligned arrays."""

    ids: np.ndarray
    school: np.ndarray
    grade: np.ndarray
    cohort: np.ndarray  # cohort index
    age: np.ndarray
    iq: np.ndarray
    extrovert: np.ndarray
    female: np.ndarray
    white: np.ndarray
    predetermined: np.ndarray  # (n, k)
    upsilon: np.ndarray
    omega: np.ndarray
    xi: np.ndarray
    epsilon: np.ndarray

    def __len__(self):
        return len(self.ids)

    def copy(self) -> "AgentParams":
        return AgentParams(**{f.name: np.array(getattr(self, f.name), copy=True) for f in fields(self)})


@dataclass
class EquilibriumState:
    S: np.ndarray
    H: np.ndarray
    L: np.ndarray
    iterations: int
    max_residual: float
    max_change: float = 0.0
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# population


def _rng(seed, *stream) -> np.random.Generator:
    base = 0 if seed is None else int(seed)
    return np.random.default_rng([base, *stream])


def draw_population(config: SimConfig) -> AgentParams:
    """Cohort layout and agent draws; every cohort has its own RNG stream."""
    layout = _rng(config.seed, 0, 0)
    cells = [(s, g) for s in range(1, config.n_schools + 1) for g in config.grades]
    lo, hi = config.cohort_size
    sizes = layout.integers(lo, hi + 1, size=len(cells))
    spreads = layout.uniform(*config.age_spread, size=len(cells))
    shifts = layout.normal(0.0, config.cohort_age_shift_sd, size=len(cells))
    chol = np.linalg.cholesky(config.shock_cov() + 1e-12 * np.eye(3))

    parts = {k: [] for k in ("school", "grade", "cohort", "age", "iq", "extrovert", "female", "white", "pre", "ups", "omg", "xi", "eps")}
    for c, ((s, g), m) in enumerate(zip(cells, sizes)):
        rng = _rng(config.seed, 1, c)
        parts["school"].append(np.full(m, s))
        parts["grade"].append(np.full(m, g))
        parts["cohort"].append(np.full(m, c))
        parts["age"].append(g + config.age_offset + shifts[c] + spreads[c] * rng.standard_normal(m))
        parts["iq"].append(rng.standard_normal(m))
        parts["extrovert"].append((rng.random(m) < config.extrovert_share).astype(float))
        parts["female"].append((rng.random(m) < config.female_share).astype(float))
        parts["white"].append((rng.random(m) < config.white_share).astype(float))
        parts["pre"].append(rng.standard_normal((m, config.n_predetermined)))
        z = rng.standard_normal((m, 3)) @ chol.T
        parts["ups"].append(np.exp(config.log_upsilon_mean + config.log_upsilon_sd * z[:, 0]))
        parts["omg"].append(np.exp(config.log_omega_mean + config.log_omega_sd * z[:, 1]))
        parts["eps"].append(config.eps_sd * z[:, 2])
        parts["xi"].append(config.xi_sd * rng.standard_normal(m))
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    n = len(cat["age"])
    pop = AgentParams(
        ids=np.arange(1, n + 1),
        school=cat["school"].astype(np.int64),
        grade=cat["grade"].astype(np.int64),
        cohort=cat["cohort"].astype(np.int64),
        age=cat["age"],
        iq=cat["iq"],
        extrovert=cat["extrovert"],
        female=cat["female"],
        white=cat["white"],
        predetermined=cat["pre"].reshape(n, config.n_predetermined),
        upsilon=cat["ups"],
        omega=cat["omg"],
        xi=cat["xi"],
        epsilon=cat["eps"],
    )
    _check_productivity(pop, config)
    return pop


def _check_productivity(pop: AgentParams, config: SimConfig):
    A = study_productivity(pop, config)
    if (A <= 0).any():
        raise ConfigError("non-positive study productivity; lower edu_iq or raise edu_scale")


def study_productivity(pop: AgentParams, config: SimConfig) -> np.ndarray:
    return config.edu_scale + config.edu_iq * pop.iq


def link_weights(pop: AgentParams, config: SimConfig) -> sparse.coo_matrix:
    """``c_ij`` such that ``p_ij = min(cap, c_ij sqrt(S_i S_j))``, within cohorts."""
    rows, cols = [], []
    order = np.argsort(pop.cohort, kind="stable")
    bounds = np.flatnonzero(np.diff(pop.cohort[order])) + 1
    for idx in np.split(order, bounds):
        m = len(idx)
        r = np.repeat(idx, m)
        c = np.tile(idx, m)
        keep = r != c
        rows.append(r[keep])
        cols.append(c[keep])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    d = np.abs(pop.age[rows] - pop.age[cols])
    vals = config.link_scale * np.exp(-config.distance_decay * d) * (1 + config.extro_boost * pop.extrovert[rows])
    n = len(pop)
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n))


def link_probabilities(S: np.ndarray, C: sparse.coo_matrix, cap: float) -> sparse.coo_matrix:
    vals = np.minimum(cap, C.data * np.sqrt(S[C.row] * S[C.col]))
    return sparse.coo_matrix((vals, (C.row, C.col)), shape=C.shape)


# ---------------------------------------------------------------------------
# best responses


class _Problem:
    """Each agent's own optimization given everyone else's socializing."""

    def __init__(self, pop: AgentParams, config: SimConfig, C: sparse.coo_matrix | None = None):
        self.cfg = config
        self.C = link_weights(pop, config) if C is None else C
        self.A = study_productivity(pop, config)
        self.ups = pop.upsilon
        self.omg = pop.omega
        self.n = len(pop)

    def _peer_terms(self, s, S_others, rows=None):
        C = self.C
        base = C.data * np.sqrt(S_others[C.col])
        v = base * np.sqrt(s[C.row])
        uncapped = v < self.cfg.link_cap
        B = np.bincount(C.row, weights=base * uncapped, minlength=self.n)
        P = np.bincount(C.row, weights=np.minimum(v, self.cfg.link_cap), minlength=self.n)
        return B, P

    def objective(self, s, h, S_others):
        _, P = self._peer_terms(s, S_others)
        cfg = self.cfg
        L = 1.0 - s - h
        return cfg.r_e * self.A * np.sqrt(h) + cfg.r_f * P + self.ups * np.log(s) + self.omg * np.log(L) - cfg.study_cost * h

    def gradient_hessian(self, s, h, S_others):
        B, _ = self._peer_terms(s, S_others)
        cfg = self.cfg
        L = 1.0 - s - h
        gs = cfg.r_f * B / (2 * np.sqrt(s)) + self.ups / s - self.omg / L
        gh = cfg.r_e * self.A / (2 * np.sqrt(h)) - cfg.study_cost - self.omg / L
        w = self.omg / L**2
        hss = -cfg.r_f * B / (4 * s**1.5) - self.ups / s**2 - w
        hhh = -cfg.r_e * self.A / (4 * h**1.5) - w
        hsh = -w
        return gs, gh, hss, hhh, hsh

    def stationarity(self, s, h, S_others, rtol=1e-9):
        """First-order residuals, treating links at the cap as a kink.

        Where some c_ij sqrt(S_i S_j) sits at the cap the payoff has a left
        derivative (those links still count) above the right one; the
        socializing residual is the distance of zero from that interval.
        """
        C = self.C
        cap = self.cfg.link_cap
        base = C.data * np.sqrt(S_others[C.col])
        v = base * np.sqrt(s[C.row])
        below = v < cap * (1 - rtol)
        at_cap = np.abs(v - cap) <= rtol * cap
        B_right = np.bincount(C.row, weights=base * below, minlength=self.n)
        B_left = np.bincount(C.row, weights=base * (below | at_cap), minlength=self.n)
        cfg = self.cfg
        L = 1.0 - s - h
        own = self.ups / s - self.omg / L
        g_right = cfg.r_f * B_right / (2 * np.sqrt(s)) + own
        g_left = cfg.r_f * B_left / (2 * np.sqrt(s)) + own
        gs = np.where(g_right > 0, g_right, np.where(g_left < 0, g_left, 0.0))
        gh = cfg.r_e * self.A / (2 * np.sqrt(h)) - cfg.study_cost - self.omg / L
        return gs, gh

    def solve(self, S_others, s0=None, h0=None, tol=1e-12, max_iter=100, active=None):
        """Damped Newton on (S_i, H_i) for every agent at once."""
        n = self.n
        s = np.full(n, 1 / 3) if s0 is None else np.array(s0, dtype=float)
        h = np.full(n, 1 / 3) if h0 is None else np.array(h0, dtype=float)
        # a damped S with the previous H can leave the simplex; pull H back in
        h = np.minimum(h, 0.9 * (1.0 - s))
        live = np.ones(n, bool) if active is None else np.array(active, bool)
        for it in range(max_iter):
            s, pinned = self._snap_to_kink(s, h, S_others, live)
            gs, gh, hss, hhh, hsh = self.gradient_hessian(s, h, S_others)
            gs_stat, _ = self.stationarity(s, h, S_others)
            res = np.maximum(np.abs(gs_stat), np.abs(gh))
            live &= res > tol
            if not live.any():
                return s, h, it, 0.0
            # pinned agents sit on a capped link: only H moves
            gs = np.where(pinned, 0.0, gs)
            hsh = np.where(pinned, 0.0, hsh)
            det = hss * hhh - hsh**2
            ds = -(hhh * gs - hsh * gh) / det
            dh = -(-hsh * gs + hss * gh) / det
            if not (np.isfinite(ds[live]).all() and np.isfinite(dh[live]).all()):
                raise ConvergenceError("non-finite Newton step in the best-response solve", iterations=it)
            # keep strictly inside the simplex
            t = np.ones(n)
            for cur, d in ((s, ds), (h, dh), (1 - s - h, -(ds + dh))):
                neg = d < 0
                t[neg] = np.minimum(t[neg], 0.95 * cur[neg] / -d[neg])
            t[~live] = 0.0
            f0 = self.objective(s, h, S_others)
            slope = gs * ds + gh * dh
            for _ in range(60):
                cs, ch = s + t * ds, h + t * dh
                f1 = self.objective(cs, ch, S_others)
                # below ~1e-12 the predicted gain is lost in rounding; take the step
                tiny = t * slope <= 1e-12 * (1.0 + np.abs(f0))
                ok = (f1 >= f0 + 1e-4 * t * slope) | ~live | tiny
                if ok.all():
                    break
                t[~ok] *= 0.5
            s, h = cs, ch
        gs, gh = self.stationarity(s, h, S_others)
        return s, h, max_iter, float(np.max(np.maximum(np.abs(gs), np.abs(gh))))

    def _snap_to_kink(self, s, h, S_others, live, rtol=1e-6):
        """Move S_i onto a nearby cap kink when zero lies in its subgradient."""
        C = self.C
        base = C.data * np.sqrt(S_others[C.col])
        kink = (self.cfg.link_cap / base) ** 2
        rel = np.abs(s[C.row] - kink) / kink
        if not (rel <= rtol).any():
            return s, np.zeros(self.n, bool)
        order = np.lexsort((rel, C.row))
        rows, first = np.unique(C.row[order], return_index=True)
        pick = order[first]
        near = np.zeros(self.n, bool)
        near[rows] = (rel[pick] <= rtol) & live[rows]
        if not near.any():
            return s, near
        trial = s.copy()
        trial[rows[near[rows]]] = kink[pick][near[rows]]
        gs_stat, _ = self.stationarity(trial, h, S_others)
        pinned = near & (gs_stat == 0.0) & (trial + h < 1)
        return np.where(pinned, trial, s), pinned


def foc_residuals(S, H, pop: AgentParams, config: SimConfig):
    """Residuals of the studying and socializing first-order conditions.

    Studying:    omega/L + study_cost - r_e * a'(H)
    Socializing: omega/L - upsilon/S - r_f * sum_j dp_ij/dS_i

    At a capped link the socializing residual is zero whenever the one-sided
    derivatives bracket zero.
    """
    prob = _Problem(pop, config)
    gs, gh = prob.stationarity(np.asarray(S, float), np.asarray(H, float), np.asarray(S, float))
    return -gh, -gs


def best_response(i: int, S: np.ndarray, pop: AgentParams, config: SimConfig, H0: float | None = None):
    """Agent ``i``'s optimal (S_i, H_i) holding every other entry of ``S`` fixed."""
    prob = _Problem(pop, config)
    active = np.zeros(len(pop), bool)
    active[i] = True
    s0 = np.array(S, dtype=float)
    h0 = np.full(len(pop), 1 / 3) if H0 is None else np.full(len(pop), H0)
    s, h, it, res = prob.solve(np.asarray(S, float), s0, h0, active=active)
    gs, gh = prob.stationarity(s, h, np.asarray(S, float))
    r = max(abs(gs[i]), abs(gh[i]))
    if r > 1e-10:
        raise ConvergenceError(f"best response for agent {i} did not converge", residual=r, iterations=it)
    return float(s[i]), float(h[i])


def find_equilibrium(pop: AgentParams, config: SimConfig, S0=None, H0=None) -> EquilibriumState:
    """Damped simultaneous best-response iteration from ``S = H = 1/3``.

    Stops when the largest change in socializing is at most ``config.tol`` and
    the first-order conditions hold to ``config.foc_tol`` at the reported
    profile.
    """
    if len(pop) < 2:
        raise ConfigError("equilibrium needs at least 2 agents")
    prob = _Problem(pop, config)
    n = len(pop)
    S = np.full(n, 1 / 3) if S0 is None else np.array(S0, float)
    H = np.full(n, 1 / 3) if H0 is None else np.array(H0, float)
    lam = config.damping
    history = []
    for sweep in range(1, config.max_sweeps + 1):
        s_br, h_br, _, _ = prob.solve(S, S, H)
        change = float(np.max(np.abs(s_br - S)))
        history.append(change)
        S = (1 - lam) * S + lam * s_br
        H = h_br
        if change <= config.tol:
            # polish H against the final S and re-evaluate all conditions
            S_fix = S
            s_own, H, _, _ = prob.solve(S_fix, S_fix, H)
            gh_res, gs_res = foc_residuals(S_fix, H, pop, config)
            resid = float(max(np.max(np.abs(gh_res)), np.max(np.abs(gs_res))))
            if resid <= config.foc_tol:
                return EquilibriumState(S_fix, H, 1 - S_fix - H, sweep, resid, change, history)
    raise ConvergenceError(
        f"no equilibrium after {config.max_sweeps} sweeps (last max |dS| = {history[-1]:.3g}); "
        "try a smaller damping factor",
        residual=history[-1],
        iterations=config.max_sweeps,
    )


# ---------------------------------------------------------------------------
# outcomes


@dataclass
class Simulation:
    table: ObservationTable
    edges: EdgeList
    state: EquilibriumState
    population: AgentParams
    config: SimConfig

    def truth(self) -> dict:
        return {"r_e": self.config.r_e, "r_f": self.config.r_f, "config": self.config.to_dict()}


def realize_outcomes(state: EquilibriumState, pop: AgentParams, config: SimConfig):
    """Draw links, then education and log earnings; returns (table, edges)."""
    C = link_weights(pop, config)
    P = link_probabilities(state.S, C, config.link_cap).tocsr()
    senders, receivers = [], []
    for c in np.unique(pop.cohort):
        rng = _rng(config.seed, 2, int(c))
        idx = np.flatnonzero(pop.cohort == c)
        block = P[idx][:, idx].toarray()  # block[a, b] = P(idx[b] nominates idx[a])
        if config.link_rule == "threshold":
            link = block >= 0.5
        else:
            link = rng.random(block.shape) < block
        np.fill_diagonal(link, False)
        a, b = np.nonzero(link)
        receivers.append(pop.ids[idx[a]])
        senders.append(pop.ids[idx[b]])
    edges = EdgeList(np.column_stack([np.concatenate(senders), np.concatenate(receivers)]))

    education = config.edu_base + study_productivity(pop, config) * np.sqrt(state.H) + pop.xi
    frame = pd.DataFrame(
        {
            "id": pop.ids,
            "school": pop.school,
            "grade": pop.grade,
            "age": pop.age,
            "iq": pop.iq,
            "extrovert": pop.extrovert,
            "female": pop.female,
            "white": pop.white,
        }
    )
    for k in range(pop.predetermined.shape[1]):
        frame[f"pre_{k + 1}"] = pop.predetermined[:, k]
    table = ObservationTable.from_frame(frame)
    F = compute_degree_measures(table, edges)["grade_indegree"].to_numpy(dtype=float)
    y = (
        config.earnings_base
        + config.r_e * education
        + config.r_f * F
        + config.beta_iq * pop.iq
        + config.beta_female * pop.female
        + config.beta_white * pop.white
        + config.beta_predetermined * pop.predetermined.sum(axis=1)
        + pop.epsilon
    )
    table = table.with_columns(education=education, outcome=y)
    return table, edges


def simulate_structural(config: SimConfig) -> Simulation:
    pop = draw_population(config)
    state = find_equilibrium(pop, config)
    table, edges = realize_outcomes(state, pop, config)
    return Simulation(table, edges, state, pop, config)


# ---------------------------------------------------------------------------
# reduced-form generator


@dataclass
class LinearDGPConfig:
    """Linear earnings model with an excluded age-distance instrument.

    ``friends = friends_base + first_stage * age_distance + iq_friends * iq + sd_f * u_f``
    ``education = edu_base + edu_on_friends * friends + iq_edu * iq + sd_e * u_e``
    ``eps = eps_sd * (corr_f * u_f + corr_e * u_e + sqrt(1 - corr_f^2 - corr_e^2) * v)``
    """

    n_schools: int = 25
    grades: tuple = (9, 10, 11, 12)
    cohort_size: tuple = (16, 24)
    r_e: float = 0.10
    r_f: float = 0.10
    first_stage: float = -2.0
    friends_base: float = 4.0
    iq_friends: float = 0.3
    sd_f: float = 1.5
    edu_base: float = 13.0
    edu_on_friends: float = 0.3
    iq_edu: float = 0.5
    sd_e: float = 1.5
    earnings_base: float = 9.5
    beta_iq: float = 0.05
    eps_sd: float = 0.5
    corr_f: float = -0.4
    corr_e: float = 0.3
    age_offset: float = 5.5
    cohort_age_shift_sd: float = 0.1
    age_spread: tuple = (0.2, 0.6)
    seed: int | None = None

    def __post_init__(self):
        self.grades = tuple(int(g) for g in self.grades)
        self.cohort_size = tuple(int(c) for c in self.cohort_size)
        self.age_spread = tuple(float(a) for a in self.age_spread)
        if self.corr_f**2 + self.corr_e**2 > 1:
            raise ConfigError("invalid covariance: corr_f^2 + corr_e^2 must not exceed 1")
        if self.cohort_size[0] < 2 or self.cohort_size[0] > self.cohort_size[1]:
            raise ConfigError(f"invalid cohort_size {self.cohort_size}")
        if min(self.sd_f, self.sd_e, self.eps_sd) < 0:
            raise ConfigError("invalid covariance: standard deviations must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "LinearDGPConfig":
        _check_keys(cls, data)
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def simulate_linear_dgp(config: LinearDGPConfig, rng: np.random.Generator | None = None) -> ObservationTable:
    rng = _rng(config.seed, 9) if rng is None else rng
    cells = [(s, g) for s in range(1, config.n_schools + 1) for g in config.grades]
    lo, hi = config.cohort_size
    sizes = rng.integers(lo, hi + 1, size=len(cells))
    spreads = rng.uniform(*config.age_spread, size=len(cells))
    shifts = rng.normal(0.0, config.cohort_age_shift_sd, size=len(cells))
    school = np.repeat([c[0] for c in cells], sizes)
    grade = np.repeat([c[1] for c in cells], sizes)
    n = len(school)
    age = grade + config.age_offset + np.repeat(shifts, sizes) + np.repeat(spreads, sizes) * rng.standard_normal(n)
    table = ObservationTable.from_frame(pd.DataFrame({"id": np.arange(1, n + 1), "school": school, "grade": grade, "age": age}))
    table = compute_age_distance(table)
    dist = table["age_distance"].to_numpy()

    iq = rng.standard_normal(n)
    female = (rng.random(n) < 0.5).astype(float)
    u_f, u_e, v = rng.standard_normal((3, n))
    friends = config.friends_base + config.first_stage * dist + config.iq_friends * iq + config.sd_f * u_f
    education = config.edu_base + config.edu_on_friends * friends + config.iq_edu * iq + config.sd_e * u_e
    rest = np.sqrt(max(0.0, 1 - config.corr_f**2 - config.corr_e**2))
    eps = config.eps_sd * (config.corr_f * u_f + config.corr_e * u_e + rest * v)
    y = config.earnings_base + config.r_e * education + config.r_f * friends + config.beta_iq * iq + eps
    return table.with_columns(iq=iq, female=female, friends=friends, education=education, outcome=y)


def write_truth(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
