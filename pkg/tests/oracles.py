"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np
from scipy.special import log_ndtr

from friendbounds.simulate import AgentParams


def grid_mle(x, y, center, half=1.0, tol=1e-6):
    q = 2 * y - 1
    b0, b1 = center
    while half > tol:
        g0 = np.linspace(b0 - half, b0 + half, 81)
        g1 = np.linspace(b1 - half, b1 + half, 81)
        A, B = np.meshgrid(g0, g1, indexing="ij")
        idx = q[None, None, :] * (A[..., None] + B[..., None] * x[None, None, :])
        ll = log_ndtr(idx).sum(axis=-1)
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        b0, b1 = g0[i], g1[j]
        half /= 8
    return np.array([b0, b1])


def agents(age, upsilon=0.3, omega=0.6, iq=0.0, extrovert=0.0, cohort=None):
    age = np.asarray(age, dtype=float)
    n = len(age)
    full = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()  # noqa: E731
    cohort = np.zeros(n, dtype=np.int64) if cohort is None else np.asarray(cohort)
    return AgentParams(
        ids=np.arange(1, n + 1),
        school=cohort + 1,
        grade=np.full(n, 9),
        cohort=cohort,
        age=age,
        iq=full(iq),
        extrovert=full(extrovert),
        female=np.zeros(n),
        white=np.zeros(n),
        predetermined=np.zeros((n, 0)),
        upsilon=full(upsilon),
        omega=full(omega),
        xi=np.zeros(n),
        epsilon=np.zeros(n),
    )


def independent_foc(S, H, pop, cfg):
    """Plain-loop re-evaluation of both first-order conditions."""
    n = len(pop)
    r_study = np.empty(n)
    r_social = np.empty(n)
    for i in range(n):
        L = 1 - S[i] - H[i]
        A = cfg.edu_scale + cfg.edu_iq * pop.iq[i]
        marg = 0.0
        for j in np.flatnonzero(pop.cohort == pop.cohort[i]):
            if j == i:
                continue
            c = cfg.link_scale * np.exp(-cfg.distance_decay * abs(pop.age[i] - pop.age[j])) * (1 + cfg.extro_boost * pop.extrovert[i])
            if c * np.sqrt(S[i] * S[j]) < cfg.link_cap:
                marg += c * np.sqrt(S[j]) / (2 * np.sqrt(S[i]))
        r_study[i] = pop.omega[i] / L + cfg.study_cost - cfg.r_e * A / (2 * np.sqrt(H[i]))
        r_social[i] = pop.omega[i] / L - pop.upsilon[i] / S[i] - cfg.r_f * marg
    return r_study, r_social
