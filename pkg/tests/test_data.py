import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from friendbounds.data import (
    EdgeList,
    Individual,
    ObservationTable,
    compute_age_distance,
    compute_cohort_means,
    compute_degree_measures,
    load_edges,
    load_individuals,
    write_edges,
    write_individuals,
)
from friendbounds.exceptions import DataError

from conftest import make_table


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestLoad:
    def test_three_rows_one_cohort(self, tmp_path):
        path = write(tmp_path, "ind.csv", "id,school,grade,age\n1,1,9,14\n2,1,9,13.5\n3,1,9,13\n")
        t = load_individuals(path)
        assert len(t) == 3
        assert t.n_cohorts == 1
        assert t.rejected == ()

    def test_duplicate_id_named(self, tmp_path):
        path = write(tmp_path, "ind.csv", "id,school,grade,age\n1,1,9,14\n7,1,9,13.5\n7,1,9,13\n")
        with pytest.raises(DataError, match="7"):
            load_individuals(path)

    def test_blank_age_row_rejected(self, tmp_path):
        body = "".join(f"{i},1,9,{13 + i / 10}\n" if i != 5 else "5,1,9,\n" for i in range(1, 8))
        t = load_individuals(write(tmp_path, "ind.csv", "id,school,grade,age\n" + body))
        assert len(t) == 6
        assert [r for r, _ in t.rejected] == [5]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_individuals(str(tmp_path / "nope.csv"))

    def test_empty_table(self, tmp_path):
        with pytest.raises(DataError):
            load_individuals(write(tmp_path, "ind.csv", "id,school,grade,age\n1,1,9,\n"))

    def test_schema_mapping_and_delimiter(self, tmp_path):
        path = write(tmp_path, "ind.tsv", "pid\tsid\tgr\tyrs\tlog_wage\n1\t2\t9\t14\t10.1\n2\t2\t9\t13\t9.9\n")
        t = load_individuals(path, {"id": "pid", "school": "sid", "grade": "gr", "age": "yrs", "outcome": "log_wage"}, "\t")
        assert t.columns[:4] == ["id", "school", "grade", "age"]
        assert t["outcome"].tolist() == [10.1, 9.9]

    def test_missing_mandatory_column(self, tmp_path):
        with pytest.raises(DataError, match="age"):
            load_individuals(write(tmp_path, "ind.csv", "id,school,grade\n1,1,9\n"))

    def test_round_trip(self, tmp_path, three_peers):
        t = three_peers.with_columns(iq=[0.1, -0.2, 0.3])
        write_individuals(t, tmp_path / "a.csv")
        back = load_individuals(str(tmp_path / "a.csv"))
        pd.testing.assert_frame_equal(back.frame, t.frame, check_dtype=False)


class TestEdges:
    def test_two_edges(self, tmp_path, three_peers):
        e = load_edges(write(tmp_path, "e.csv", "sender,receiver\n2,1\n3,1\n"), three_peers)
        assert len(e) == 2

    def test_self_loop(self, tmp_path, three_peers):
        with pytest.raises(DataError, match="self-loop"):
            load_edges(write(tmp_path, "e.csv", "sender,receiver\n1,1\n"), three_peers)

    def test_unknown_id(self, tmp_path, three_peers):
        with pytest.raises(DataError, match="unknown id 99"):
            load_edges(write(tmp_path, "e.csv", "sender,receiver\n99,1\n"), three_peers)

    def test_duplicate(self, tmp_path, three_peers):
        with pytest.raises(DataError, match="duplicate"):
            load_edges(write(tmp_path, "e.csv", "sender,receiver\n2,1\n2,1\n"), three_peers)

    def test_round_trip(self, tmp_path, three_peers):
        e = EdgeList.validated([(2, 1), (1, 3)], [1, 2, 3])
        write_edges(e, tmp_path / "e.csv")
        assert load_edges(str(tmp_path / "e.csv"), three_peers).edges.tolist() == [[2, 1], [1, 3]]


class TestIndividual:
    def test_invalid_age(self):
        with pytest.raises(DataError):
            Individual(1, 1, 9, 0.0)

    def test_invalid_grade(self):
        with pytest.raises(DataError):
            Individual(1, 1, 6, 12.0)

    def test_table_from_individuals(self):
        t = ObservationTable.from_individuals([Individual(1, 1, 9, 14.0, {"iq": 1.0}, outcome=10.0), Individual(2, 1, 9, 13.0, {"iq": 0.0})])
        assert t.covariate_names == ["iq"]
        assert t.individuals[0].outcome == 10.0
        assert t.individuals[1].outcome is None


class TestDegrees:
    def test_empty(self, three_peers):
        t = compute_degree_measures(three_peers, EdgeList(np.empty((0, 2))))
        for c in ("grade_indegree", "outdegree", "reciprocated_degree", "network_size", "school_indegree"):
            assert (t[c] == 0).all()

    def test_hand_count(self, three_peers):
        t = compute_degree_measures(three_peers, EdgeList.validated([(2, 1), (3, 1), (1, 2)], [1, 2, 3]))
        row = t.frame.iloc[0]
        assert (row.grade_indegree, row.outdegree, row.reciprocated_degree, row.network_size) == (2, 1, 1, 2)

    def test_cross_grade_nomination(self):
        t = make_table([(1, 1, 9, 14.0), (2, 1, 10, 15.0), (3, 1, 9, 14.2)])
        t = compute_degree_measures(t, EdgeList.validated([(2, 1), (3, 1)], [1, 2, 3]))
        assert t["grade_indegree"].iloc[0] == 1
        assert t["school_indegree"].iloc[0] == 2

    @given(st.integers(2, 200), st.floats(0.0, 0.3), st.integers(0, 10_000))
    def test_brute_force_recount(self, n, density, seed):
        rng = np.random.default_rng(seed)
        school = rng.integers(1, 3, n)
        grade = rng.integers(9, 11, n)
        t = ObservationTable.from_frame(pd.DataFrame({"id": np.arange(1, n + 1), "school": school, "grade": grade, "age": 14.0}))
        adj = rng.random((n, n)) < density
        np.fill_diagonal(adj, False)
        s, r = np.nonzero(adj)
        out = compute_degree_measures(t, EdgeList(np.column_stack([s + 1, r + 1])))
        same = (school[:, None] == school[None, :]) & (grade[:, None] == grade[None, :])
        gin = (adj & same).sum(axis=0)
        recip = (adj & adj.T).sum(axis=1)
        size = (adj | adj.T).sum(axis=1)
        assert np.array_equal(out["grade_indegree"].to_numpy(), gin)
        assert np.array_equal(out["reciprocated_degree"].to_numpy(), recip)
        assert np.array_equal(out["network_size"].to_numpy(), size)
        assert (recip <= np.minimum(adj.sum(axis=0), adj.sum(axis=1))).all()
        assert out["grade_indegree"].sum() == out["grade_outdegree"].sum()


class TestAgeDistance:
    def test_worked_example_exact(self, three_peers):
        t = compute_age_distance(three_peers)
        assert t["age_distance"].tolist() == [0.75, 0.5, 0.75]
        assert t["cohort_age_distance"].iloc[0] == 2 / 3

    def test_second_worked_example(self):
        t = compute_age_distance(make_table([(1, 1, 9, 13.8), (2, 1, 9, 13.5), (3, 1, 9, 13.2)]))
        assert t["age_distance"].iloc[1] == pytest.approx(0.3, abs=1e-12)

    def test_same_age(self):
        t = compute_age_distance(make_table([(i, 1, 9, 14.0) for i in range(1, 5)]))
        assert (t["age_distance"] == 0).all()
        assert (t["age_distance_older"] == 0).all() and (t["age_distance_younger"] == 0).all()

    def test_asymmetric(self, three_peers):
        t = compute_age_distance(three_peers)
        assert t["age_distance_older"].tolist() == [0.0, 0.5, 0.75]
        assert t["age_distance_younger"].tolist() == [0.75, 0.5, 0.0]

    def test_singleton_flagged(self):
        t = compute_age_distance(make_table([(1, 1, 9, 14.0), (2, 1, 9, 13.0), (3, 2, 9, 14.0)]))
        assert np.isnan(t["age_distance"].iloc[2])
        assert any("singleton" in f for f in t.flags)

    @given(st.lists(st.floats(10, 20), min_size=2, max_size=30), st.floats(-5, 5))
    def test_shift_invariance(self, ages, shift):
        rows = [(i + 1, 1, 9, a) for i, a in enumerate(ages)]
        base = compute_cohort_means(compute_age_distance(make_table(rows)), ["age"])
        moved = compute_cohort_means(compute_age_distance(make_table([(i, s, g, a + shift) for i, s, g, a in rows])), ["age"])
        np.testing.assert_allclose(moved["age_distance"], base["age_distance"], atol=1e-9)
        np.testing.assert_allclose(moved["mean_age"], base["mean_age"] + shift, atol=1e-9)


class TestCohortMeans:
    def test_two_members(self):
        t = compute_cohort_means(make_table([(1, 1, 9, 13.0), (2, 1, 9, 14.0)]), ["age"])
        assert t["mean_age"].tolist() == [13.5, 13.5]
        assert t.cohort_mean_columns == ("age",)

    def test_identical_rows(self):
        t = compute_cohort_means(make_table([(1, 1, 9, 13.0), (2, 1, 9, 13.0)], iq=[0.4, 0.4]), ["iq"])
        assert t["mean_iq"].tolist() == [0.4, 0.4]

    def test_two_cohorts(self):
        t = compute_cohort_means(make_table([(1, 1, 9, 13.0), (2, 1, 9, 14.0), (3, 1, 10, 15.0), (4, 1, 10, 16.0), (5, 1, 10, 17.0)]), ["age"])
        assert t["mean_age"].tolist() == [13.5, 13.5, 16.0, 16.0, 16.0]

    def test_unknown_column(self, three_peers):
        with pytest.raises(DataError):
            compute_cohort_means(three_peers, ["nope"])

    def test_leave_out(self):
        t = compute_cohort_means(make_table([(1, 1, 9, 13.0), (2, 1, 9, 14.0), (3, 1, 9, 15.0), (4, 2, 9, 12.0)]), ["age"], leave_out=True)
        assert t["mean_age"].tolist()[:3] == [14.5, 14.0, 13.5]
        assert np.isnan(t["mean_age"].iloc[3])
        assert t.subset([True, True, False, True])["mean_age"].tolist()[:2] == [14.0, 13.0]

    def test_subset_recomputes(self):
        t = compute_cohort_means(make_table([(1, 1, 9, 13.0), (2, 1, 9, 14.0), (3, 1, 9, 15.0)]), ["age"])
        sub = t.subset([True, True, False])
        assert sub["mean_age"].tolist() == [13.5, 13.5]

    def test_inputs_not_mutated(self, three_peers):
        before = three_peers.frame.copy()
        compute_cohort_means(compute_age_distance(three_peers), ["age"])
        pd.testing.assert_frame_equal(three_peers.frame, before)
