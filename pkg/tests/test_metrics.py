import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from replaycl.metrics import (
    DegenerateSplitError,
    MetricReport,
    PerformanceMatrix,
    average_auc,
    binary_auc,
    bwt,
    bwt_lambda,
    bwt_t,
    macro_auc,
)

from . import oracles


def test_macro_auc_perfect_separation():
    scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.1, 0.9]])
    assert macro_auc(scores, np.array([0, 0, 1, 1])) == 1.0


def test_macro_auc_all_ties_is_half():
    assert macro_auc(np.full((6, 3), 0.2), np.array([0, 1, 2, 0, 1, 2])) == 0.5


def test_binary_auc_reversal_is_complement():
    rng = np.random.default_rng(0)
    s = rng.random(40)
    pos = rng.random(40) < 0.4
    assert binary_auc(-s, pos) == pytest.approx(1.0 - binary_auc(s, pos), abs=1e-15)


def test_single_class_batch_raises():
    with pytest.raises(DegenerateSplitError):
        macro_auc(np.random.rand(4, 2), np.zeros(4, dtype=int))


def test_macro_auc_skips_class_absent_from_batch():
    scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0]])
    assert macro_auc(scores, np.array([0, 1])) == 1.0


def test_average_auc_examples():
    assert average_auc(np.array([[0.9, np.nan], [0.8, 0.6]])) == pytest.approx(0.7)
    assert average_auc(np.array([[0.42]])) == 0.42
    assert average_auc(np.full((3, 3), 0.37)) == pytest.approx(0.37)


def test_average_auc_unpopulated_final_row():
    with pytest.raises(ValueError, match="final row"):
        average_auc(np.array([[0.9, np.nan], [0.8, np.nan]]))


def test_bwt_examples():
    R = np.array([[0.9, np.nan], [0.8, 0.7]])
    assert bwt(R) == pytest.approx(-0.1)
    assert bwt(np.full((4, 4), 0.6)) == 0.0
    with pytest.raises(ValueError):
        bwt(np.array([[0.5]]))


def test_bwt_t_longest_horizon_is_single_term():
    rng = np.random.default_rng(3)
    R = rng.random((5, 5))
    assert bwt_t(R, 4) == R[4, 0] - R[0, 0]
    with pytest.raises(ValueError):
        bwt_t(R, 5)
    with pytest.raises(ValueError):
        bwt_t(R, 0)


def test_bwt_lambda_two_tasks_equals_bwt():
    R = np.array([[0.7, 0.1], [0.75, 0.8]])
    assert bwt_lambda(R) == bwt(R)


def test_bwt_family_random_matrices_match_loops():
    rng = np.random.default_rng(31)
    R3, R4, R5 = rng.random((3, 3)), rng.random((4, 4)), rng.random((5, 5))
    assert bwt(R3) == pytest.approx(oracles.bwt_brute(R3), abs=1e-12)
    assert bwt_t(R4, 2) == pytest.approx(oracles.bwt_t_brute(R4, 2), abs=1e-12)
    assert bwt_lambda(R5) == pytest.approx(oracles.bwt_lambda_brute(R5), abs=1e-12)


def test_missing_lower_triangle_rejected():
    R = np.array([[0.9, np.nan], [np.nan, 0.7]])
    with pytest.raises(ValueError, match="lower triangle"):
        bwt(R)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(0, 1))))
def test_bwt_family_bounded(R):
    for v in [bwt(R), bwt_lambda(R)] + [bwt_t(R, t) for t in range(1, len(R))]:
        assert -1.0 <= v <= 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7).flatmap(lambda n: arrays(np.float64, (n, n), elements=st.floats(0, 1))),
       st.floats(0, 1))
def test_constant_matrix_has_zero_transfer(R, c):
    """A constant matrix has zero transfer at every horizon."""
    n = len(R)
    flat = np.full((n, n), c)
    assert bwt(flat) == 0.0 and bwt_lambda(flat) == 0.0
    assert all(bwt_t(flat, t) == 0.0 for t in range(1, n))


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 40).flatmap(
    lambda b: st.tuples(
        arrays(np.float64, (b, 3), elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])),
        arrays(np.int64, b, elements=st.integers(0, 2)),
    )
))
def test_macro_auc_matches_pairwise_oracle(data):
    scores, labels = data
    if len(set(labels.tolist())) < 2:
        return
    assert macro_auc(scores, labels) == pytest.approx(oracles.macro_auc_brute(scores, labels), abs=1e-12)


def test_performance_matrix_csv_round_trip(tmp_path):
    pm = PerformanceMatrix.empty(3, ["a", "b", "c"])
    pm.set_row(0, [0.7, np.nan, np.nan])
    pm.set_row(1, [0.65, 0.8, np.nan])
    pm.set_row(2, [0.6, 0.75, 0.9])
    pm.write_csv(tmp_path / "R.csv")
    back = PerformanceMatrix.read_csv(tmp_path / "R.csv")
    assert back.task_names == ["a", "b", "c"]
    np.testing.assert_array_equal(np.nan_to_num(back.values, nan=-1), np.nan_to_num(pm.values, nan=-1))


def test_performance_matrix_rejects_out_of_range():
    pm = PerformanceMatrix.empty(2)
    with pytest.raises(ValueError):
        pm.set_row(0, [1.2, np.nan])


def test_report_for_multitask_row_has_no_bwt():
    rep = MetricReport.from_matrix(np.array([[0.8, 0.7, 0.9]]), "mtl", 0, sequential=False)
    assert rep.average_auc == pytest.approx(0.8)
    assert rep.bwt is None and rep.bwt_t is None and rep.bwt_lambda is None


def test_report_dict_round_trip():
    R = np.array([[0.9, np.nan, np.nan], [0.8, 0.85, np.nan], [0.7, 0.8, 0.95]])
    rep = MetricReport.from_matrix(R, "clops", 2)
    back = MetricReport.from_dict(rep.to_dict())
    assert back == rep
    assert set(back.bwt_t) == {1, 2}
    assert math.isclose(back.bwt, -0.125)
