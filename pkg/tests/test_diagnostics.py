import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from friendbounds.diagnostics import (
    barrett_donald_test,
    cdf_difference_curve,
    dominance_pvalue,
    dominance_statistic,
    placebo_battery,
    residual_barrett_donald,
    residual_variation,
)
from friendbounds.exceptions import DataError
from friendbounds.regress import RegressionSpec

SK = RegressionSpec("__unused", exogenous=("c",), cluster="cl")


def frame(rng, n=400, k=3):
    df = pd.DataFrame({"z": rng.standard_normal(n), "c": rng.standard_normal(n), "cl": rng.integers(0, 25, n)})
    for j in range(k):
        df[f"p{j}"] = rng.standard_normal(n)
    df["y"] = df.p0 + rng.standard_normal(n)
    return df


class TestPlacebo:
    def test_self_placebo(self, rng):
        df = frame(rng).assign(zz=lambda d: d.z)
        rep = placebo_battery(df, "z", ["zz", "p1"], SK)
        assert rep.rows.at["zz", "coef"] == pytest.approx(1.0, abs=1e-10)
        assert rep.rows.at["zz", "p"] < 1e-6

    def test_report_shape(self, rng):
        rep = placebo_battery(frame(rng), "z", ["p0", "p1", "p2"], SK, outcome="y")
        assert list(rep.rows.index) == ["p0", "p1", "p2"]
        assert ((rep.rows.p >= 0) & (rep.rows.p <= 1)).all()
        aug = rep.augmentation
        assert aug["r2_with"] >= aug["r2_without"]
        assert aug["p"] < 1e-6  # p0 drives y
        assert set(rep.to_dict()) == {"per_variable", "joint", "earnings_augmentation"}

    def test_unknown_column(self, rng):
        with pytest.raises(DataError):
            placebo_battery(frame(rng), "z", ["nope"], SK)

    def test_false_rejection_rate(self):
        rej = 0
        reps = 300
        for s in range(reps):
            rep = placebo_battery(frame(np.random.default_rng(s), n=300, k=1), "z", ["p0"], SK)
            rej += abs(rep.rows.at["p0", "t"]) > 1.96
        # t critical values with G-1 = 24 df are a little wider than 1.96
        assert rej / reps <= 0.05 + 2 * np.sqrt(0.05 * 0.95 / reps) + 0.02

    def test_joint_p_roughly_uniform(self):
        ps = np.array(
            [
                placebo_battery(frame(np.random.default_rng(10_000 + s), n=2000, k=14), "z", [f"p{j}" for j in range(14)], SK.replace(cluster=None)).joint_p
                for s in range(300)
            ]
        )
        # robust Wald tests of 14 restrictions run a little oversized in finite samples
        assert 0.02 <= np.mean(ps < 0.05) <= 0.10
        assert abs(ps.mean() - 0.5) <= 4 * np.sqrt(1 / 12 / len(ps))
        assert stats.kstest(ps, "uniform").pvalue > 1e-4


class TestCDFCurve:
    def test_below_min_is_degenerate_zero(self, rng):
        df = frame(rng).assign(t=lambda d: np.round(d.y))
        g = cdf_difference_curve(df, "t", "z", grid=[df.t.min() - 1, df.t.max()]).grid
        assert g.coef.tolist() == [0.0, 0.0]
        assert g.degenerate.all()

    def test_negated_instrument(self):
        z = np.arange(10.0)
        df = pd.DataFrame({"z": z, "t": -z})
        g = cdf_difference_curve(df, "t", "z").grid
        interior = g[~g.degenerate]
        assert (interior.coef >= 0).all() and len(interior) == 9

    def test_default_grid_is_support(self, rng):
        df = frame(rng).assign(t=lambda d: rng.integers(0, 6, len(d)))
        g = cdf_difference_curve(df, "t", "z", SK).grid
        assert g.x.tolist() == sorted(df.t.unique().tolist())

    def test_independent_within_two_se(self, rng):
        df = frame(rng, n=2000).assign(t=lambda d: rng.integers(0, 15, len(d)))
        g = cdf_difference_curve(df, "t", "z").grid
        g = g[~g.degenerate]
        assert (np.abs(g.coef) <= 2 * g.se).mean() >= 0.8

    def test_empty_grid(self, rng):
        with pytest.raises(DataError):
            cdf_difference_curve(frame(rng), "y", "z", grid=[])


class TestDominance:
    def test_identical_samples(self):
        S, _ = dominance_statistic([1, 2, 3, 4], [1, 2, 3, 4])
        assert S == 0 and dominance_pvalue(S) == 1.0

    def test_formula(self):
        assert dominance_pvalue(0.5) == pytest.approx(np.exp(-0.5), abs=1e-15)
        assert dominance_pvalue(0.5) == pytest.approx(0.6065, abs=1e-4)

    @given(st.floats(-10, 10))
    def test_pvalue_range(self, S):
        p = dominance_pvalue(S)
        assert 0 < p <= 1
        assert p == 1.0 if S <= 0 else p < 1.0 or S < 1e-8  # exp(-2 S^2) rounds to 1 below ~1e-8

    def _shifted(self, rng, shift, n=2000):
        z = rng.standard_normal(n)
        base = rng.standard_normal(n)
        high = z > np.median(z)
        return pd.DataFrame({"z": z, "t": base + shift * high})

    def test_dominated_high_group(self, rng):
        rep = barrett_donald_test(self._shifted(rng, -1.0), "t", "z")
        assert rep.p_value > 0.9

    def test_violation(self, rng):
        rep = barrett_donald_test(self._shifted(rng, 1.0), "t", "z")
        assert rep.p_value < 0.05

    def test_ties_to_low_group(self):
        df = pd.DataFrame({"z": [1, 2, 2, 2, 3, 4], "t": [0, 1, 2, 3, 4, 5]})
        rep = barrett_donald_test(df, "t", "z")
        assert rep.split_point == 2.0 and (rep.n_high, rep.n_low) == (2, 4)

    def test_empty_group(self):
        df = pd.DataFrame({"z": [1, 1, 1, 1], "t": [0, 1, 2, 3]})
        with pytest.raises(DataError):
            barrett_donald_test(df, "t", "z")

    def test_residual_variant(self, rng):
        df = self._shifted(rng, -1.0).assign(c=rng.standard_normal(2000), cl=rng.integers(0, 20, 2000))
        rep = residual_barrett_donald(df, "t", "z", SK)
        assert rep.label == "residual" and rep.n_high + rep.n_low == 2000

    def test_grid_covers_support(self, rng):
        df = self._shifted(rng, 0.0, n=200)
        rep = barrett_donald_test(df, "t", "z")
        assert rep.cdf_grid.x.min() == df.t.min() and rep.cdf_grid.x.max() == df.t.max()


class TestResidualVariation:
    def test_empty_set_is_raw_sd(self, rng):
        df = frame(rng)
        rv = residual_variation(df, "z", [[]])
        assert rv.sd.iloc[0] == pytest.approx(df.z.std(ddof=1), rel=1e-12)

    def test_target_in_controls(self, rng):
        assert residual_variation(frame(rng), "z", [["z"]]).sd.iloc[0] == 0.0

    @given(st.integers(0, 10_000))
    def test_nested_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        df = frame(rng, n=150)
        df["g"] = rng.integers(0, 6, 150)
        df["z"] += 0.3 * df.g
        sets = [[], ["c"], ["c", "p0"], RegressionSpec("__unused", exogenous=("c", "p0"), absorb="g")]
        sd = residual_variation(df, "z", sets).sd.to_numpy()
        assert (np.diff(sd) <= 1e-12).all()
