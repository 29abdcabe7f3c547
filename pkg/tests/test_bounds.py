import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from friendbounds.bounds import BoundSpec, PartialIVBounds, estimate_bounds, im_critical_value, sign_probe
from friendbounds.exceptions import DataError
from friendbounds.regress import RegressionSpec, iv_gmm

Z975 = stats.norm.ppf(0.975)
Z95 = stats.norm.ppf(0.95)


def bound_frame(rng, n=600, ef=0.5, g=30):
    z = rng.standard_normal((n, 2))
    w = rng.standard_normal(n)
    u = rng.standard_normal(n)
    f = z @ [1.0, 0.6] + 0.3 * w + u
    e = 12 + ef * f + 0.4 * w + rng.standard_normal(n)
    y = 9 + 0.1 * e + 0.1 * f + 0.2 * w - 0.5 * u + rng.standard_normal(n)
    return pd.DataFrame({"y": y, "f": f, "e": e, "w": w, "z0": z[:, 0], "z1": z[:, 1], "cl": rng.integers(0, g, n)})


BASE = RegressionSpec("y", endogenous=("f",), instruments=("z0", "z1"), exogenous=("w",), cluster="cl")


class TestCriticalValue:
    def test_zero_width(self):
        assert im_critical_value(0.0, 1.0) == pytest.approx(1.95996, abs=1e-4)

    def test_wide(self):
        assert im_critical_value(20.0, 1.0) == pytest.approx(1.64485, abs=1e-3)

    def test_grid_oracle(self):
        grid = np.arange(1.6, 2.0, 1e-7)
        resid = np.abs(stats.norm.cdf(grid + 1.0) - stats.norm.cdf(-grid) - 0.95)
        assert im_critical_value(1.0, 1.0) == pytest.approx(grid[np.argmin(resid)], abs=1e-6)

    def test_frozen(self):
        assert im_critical_value(1.0, 1.0) == pytest.approx(1.6814774423, abs=1e-9)

    @given(st.floats(0, 50), st.floats(1e-3, 10), st.floats(0.001, 0.3))
    def test_residual_and_range(self, delta, se, alpha):
        c = im_critical_value(delta, se, alpha)
        r = stats.norm.cdf(c + delta / se) - stats.norm.cdf(-c) - (1 - alpha)
        assert abs(r) <= 1e-10
        assert stats.norm.ppf(1 - alpha) - 1e-9 <= c <= stats.norm.ppf(1 - alpha / 2) + 1e-9

    def test_strictly_decreasing(self):
        cs = np.array([im_critical_value(d, 1.0) for d in np.linspace(0, 6, 100)])
        assert (np.diff(cs) < 0).all()

    @pytest.mark.parametrize("args", [(-1, 1, 0.05), (1, 0, 0.05), (np.nan, 1, 0.05), (1, np.inf, 0.05), (1, 1, 1.5)])
    def test_bad_input(self, args):
        with pytest.raises(ValueError):
            im_critical_value(*args)


class TestBoundSpec:
    def test_reversed(self):
        with pytest.raises(DataError):
            BoundSpec(BASE, "e", 0.2, 0.1)

    def test_alpha(self):
        with pytest.raises(DataError):
            BoundSpec(BASE, "e", alpha=1.0)


class TestEstimateBounds:
    def test_degenerate_equals_calibrated_iv(self, rng):
        df = bound_frame(rng)
        res = estimate_bounds(BoundSpec(BASE, "e", 0.1, 0.1), df)
        cal = iv_gmm(BASE.replace(outcome="adj"), df.assign(adj=df.y - 0.1 * df.e))
        assert (res.table["theta_lower"] == res.table["theta_upper"]).all()
        np.testing.assert_allclose(res.table["theta_lower"], cal.coefficients, atol=1e-12, rtol=0)
        np.testing.assert_allclose(res.table["se_lower"], cal.bse, atol=1e-12, rtol=0)

    def test_degenerate_ci_is_wald(self, rng):
        df = bound_frame(rng)
        res = estimate_bounds(BoundSpec(BASE, "e", 0.1, 0.1), df)
        t = res.table
        np.testing.assert_allclose(t.ci_lower, t.theta_lower - Z975 * t.se_lower, atol=1e-9)
        np.testing.assert_allclose(t.ci_upper, t.theta_upper + Z975 * t.se_upper, atol=1e-9)

    def test_linearity(self, rng):
        df = bound_frame(rng)
        res = estimate_bounds(BoundSpec(BASE, "e", 0.05, 0.15), df)
        fy = iv_gmm(BASE, df).coefficients
        fe = iv_gmm(BASE.replace(outcome="e"), df).coefficients
        for key, r in (("r_lower", 0.05), ("r_upper", 0.15)):
            np.testing.assert_allclose(res.endpoint_fits[key].coefficients, fy - r * fe, atol=1e-10, rtol=0)

    def test_width_is_interval_times_probe(self, rng):
        df = bound_frame(rng)
        res = estimate_bounds(BoundSpec(BASE, "e", 0.05, 0.15), df)
        probe = res.sign_probe.coefficients
        np.testing.assert_allclose(res.table.theta_upper - res.table.theta_lower, 0.1 * probe.abs(), atol=1e-10)

    def test_positive_dependence_upper_at_low(self, rng):
        res = estimate_bounds(BoundSpec(BASE, "e"), bound_frame(rng, ef=0.5))
        assert res.probe_coef > 0
        assert res.primary_upper_at == 0.05
        assert res.table.at["f", "lower_at"] == 0.15

    def test_negative_dependence_upper_at_high(self, rng):
        res = estimate_bounds(BoundSpec(BASE, "e"), bound_frame(rng, ef=-0.5))
        assert res.probe_coef < 0
        assert res.primary_upper_at == 0.15

    def test_uncorrelated_point_identified(self, rng):
        res = estimate_bounds(BoundSpec(BASE, "e"), bound_frame(rng, n=4000, ef=0.0))
        assert abs(res.probe_t) < 3
        assert res.table.at["f", "theta_upper"] - res.table.at["f", "theta_lower"] < 0.01

    def test_equal_se_symmetric_extension(self, rng):
        res = estimate_bounds(BoundSpec(BASE, "e"), bound_frame(rng))
        row = res.table.loc["f"]
        c = im_critical_value(row.theta_upper - row.theta_lower, max(row.se_lower, row.se_upper))
        assert row.ci_lower == pytest.approx(row.theta_lower - c * row.se_lower, abs=1e-12)
        assert row.ci_upper == pytest.approx(row.theta_upper + c * row.se_upper, abs=1e-12)

    @given(st.integers(0, 10_000), st.floats(-1, 1), st.floats(0, 0.3), st.floats(0, 0.3))
    def test_ordering(self, seed, ef, r1, width):
        df = bound_frame(np.random.default_rng(seed), n=200, ef=ef)
        t = estimate_bounds(BoundSpec(BASE, "e", r1, r1 + width), df).table
        assert (t.theta_lower <= t.theta_upper).all()
        assert (t.ci_lower <= t.theta_lower).all() and (t.ci_upper >= t.theta_upper).all()

    def test_sign_probe_function(self, rng):
        df = bound_frame(rng)
        assert sign_probe(BoundSpec(BASE, "e"), df).coefficients["f"] == pytest.approx(
            estimate_bounds(BoundSpec(BASE, "e"), df).probe_coef, abs=1e-12
        )

    def test_education_in_base_rejected(self):
        with pytest.raises(DataError):
            BoundSpec(BASE.replace(exogenous=("w", "e")), "e")

    def test_to_dict(self, rng):
        d = estimate_bounds(BoundSpec(BASE, "e"), bound_frame(rng)).to_dict()
        assert set(d["bounds"]) == {"f", "w"}
        assert d["sign_probe"]["primary_upper_bound_at"] == 0.05


class TestEstimator:
    def test_matches_table_api(self, rng):
        df = bound_frame(rng)
        est = PartialIVBounds().fit(df[["f", "w"]], df.y, education=df.e, instruments=df[["z0", "z1"]], clusters=df.cl)
        res = estimate_bounds(BoundSpec(BASE, "e"), df)
        np.testing.assert_allclose(est.lower_, res.table.loc[["f", "w"], "theta_lower"], atol=1e-10)
        np.testing.assert_allclose(est.ci_[:, 1], res.table.loc[["f", "w"], "ci_upper"], atol=1e-10)
        assert est.contains(est.lower_).all()
