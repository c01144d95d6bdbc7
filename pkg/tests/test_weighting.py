import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from replaycl.weighting import (
    BetaTable,
    batch_objective,
    beta_gradient,
    current_loss,
    read_scores_csv,
    record_epoch,
    replay_loss,
    storage_score,
    total_loss,
)

from . import oracles


def test_current_loss_examples():
    assert current_loss(np.array([0.5, 1.5]), np.ones(2), 10.0) == 1.0
    assert current_loss(np.array([2.0]), np.array([0.5]), 10.0) == 3.5
    assert current_loss(np.zeros(3), np.ones(3), 123.0) == 0.0


def test_current_loss_errors():
    with pytest.raises(ValueError):
        current_loss(np.array([]), np.array([]), 1.0)
    with pytest.raises(ValueError):
        current_loss(np.ones(2), np.ones(2), -1.0)
    with pytest.raises(ValueError):
        current_loss(np.ones(2), np.ones(3), 1.0)


def test_beta_gradient_examples():
    assert beta_gradient(2.0, 1.0, 10.0, 2) == 1.0
    assert beta_gradient(0.0, 1.0, 10.0, 4) == 0.0
    assert beta_gradient(1.0, 0.9, 10.0, 1) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        beta_gradient(1.0, 1.0, 10.0, 0)


def test_replay_loss_examples():
    assert replay_loss({0: np.array([1.0, 3.0])}) == 2.0
    assert replay_loss({}) == 0.0
    table = BetaTable(lr=0.1, optimizer="sgd")
    table.register(0, [7, 8])
    table.update(0, [7, 8], np.array([5.0, 5.0]))
    table.freeze(0)
    assert table.values(0).tolist() == [0.5, 0.5]
    assert replay_loss({0: np.array([1.0, 3.0])}, table, True, {0: np.array([7, 8])}) == 1.0


def test_replay_loss_unknown_task():
    table = BetaTable(lr=0.1)
    table.register(0, [1])
    with pytest.raises(KeyError):
        replay_loss({3: np.array([1.0])}, table)


def test_total_loss_examples():
    assert total_loss(1.0, 0.0) == 1.0
    assert total_loss(1.0, 2.0) == 3.0
    assert total_loss(0.0, 0.0) == 0.0


def test_batch_objective_combines_both_parts():
    obj = batch_objective(np.array([0.5, 1.5]), np.ones(2), 10.0, np.array([1.0, 3.0]))
    assert obj.value == 3.0
    np.testing.assert_array_equal(obj.d_current, [0.5, 0.5])
    np.testing.assert_array_equal(obj.d_replay, [0.5, 0.5])
    np.testing.assert_array_equal(obj.d_beta, [0.25, 0.75])


def test_batch_objective_without_betas_is_plain_mean():
    obj = batch_objective(np.array([1.0, 2.0, 3.0]), None, 10.0)
    assert obj.value == 2.0 and np.all(obj.d_beta == 0.0) and obj.d_replay.size == 0


@settings(max_examples=80, deadline=None)
@given(
    st.integers(1, 8).flatmap(lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(0, 5)),
        arrays(np.float64, n, elements=st.floats(0.01, 2)),
    )),
    st.floats(0, 20),
)
def test_objective_beta_partials_match_scalar_formula(data, lam):
    losses, betas = data
    obj = batch_objective(losses, betas, lam)
    expected = [beta_gradient(l, b, lam, len(losses)) for l, b in zip(losses, betas)]
    np.testing.assert_allclose(obj.d_beta, expected, rtol=1e-12, atol=1e-15)


def test_storage_score_examples():
    assert storage_score(np.ones(21)) == 20.0
    assert storage_score([1.0, 0.8, 0.6]) == pytest.approx(1.6, abs=1e-15)
    assert storage_score([1.0, 0.8, 0.6], "squared") == pytest.approx(1.32, abs=1e-15)
    assert storage_score(np.array([[0, 1.0], [1, 0.8], [2, 0.6]])) == pytest.approx(1.6, abs=1e-15)
    with pytest.raises(ValueError):
        storage_score([1.0])
    with pytest.raises(ValueError):
        storage_score([1.0, 1.0], "cubic")


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(-3, 3)))
def test_storage_score_matches_explicit_sum(v):
    assert storage_score(v) == pytest.approx(oracles.trapezoid_brute(v), abs=1e-12)
    assert storage_score(v, "squared") == pytest.approx(oracles.trapezoid_brute(v, squared=True), abs=1e-12)


def test_register_initialises_to_one_and_records_epoch_zero():
    table = BetaTable(lr=0.1)
    table.register(2, [10, 11, 12])
    assert table.values(2).tolist() == [1.0, 1.0, 1.0]
    assert table.trajectory(2, 11) == [(0, 1.0)]
    with pytest.raises(ValueError):
        table.register(2, [1])
    with pytest.raises(ValueError):
        table.register(3, [1, 1])


def test_full_task_gives_tau_plus_one_points():
    table = BetaTable(lr=0.1)
    table.register(0, range(4))
    for e in range(1, 21):
        record_epoch(table, 0, e)
    epochs, hist = table.history(0)
    assert epochs.tolist() == list(range(21)) and hist.shape == (21, 4)
    assert np.all(hist == 1.0)
    np.testing.assert_array_equal(table.storage_scores(0), np.full(4, 20.0))


def test_record_epoch_out_of_order():
    table = BetaTable(lr=0.1)
    table.register(0, [1])
    table.record_epoch(0, 1)
    with pytest.raises(ValueError):
        table.record_epoch(0, 1)
    with pytest.raises(ValueError):
        table.record_epoch(0, 0)


def test_frozen_betas_are_never_updated():
    table = BetaTable(lr=0.1)
    table.register(0, [1, 2])
    with pytest.raises(ValueError):
        table.frozen_values(0, [1])
    table.freeze(0)
    with pytest.raises(ValueError):
        table.update(0, [1], np.array([1.0]))
    assert table.is_frozen(0)


def test_update_rejects_unknown_or_duplicate_ids():
    table = BetaTable(lr=0.1)
    table.register(0, [1, 2])
    with pytest.raises(KeyError):
        table.update(0, [5], np.array([1.0]))
    with pytest.raises(ValueError):
        table.update(0, [1, 1], np.array([1.0, 1.0]))
    with pytest.raises(KeyError):
        table.values(9)


def test_adam_beta_first_step_moves_by_lr():
    table = BetaTable(lr=0.02, optimizer="adam")
    table.register(0, [1, 2])
    table.update(0, [1], np.array([0.4]))
    assert table.values(0, [1])[0] == pytest.approx(0.98, rel=1e-9)
    assert table.values(0, [2])[0] == 1.0


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (30, 3), elements=st.floats(1e-3, 5)))
def test_zero_lambda_positive_losses_strictly_decrease(optimizer, losses):
    table = BetaTable(lr=1e-2, optimizer=optimizer)
    table.register(0, [0, 1, 2])
    prev = table.values(0)
    for row in losses:
        table.update(0, [0, 1, 2], batch_objective(row, table.values(0), 0.0).d_beta)
        now = table.values(0)
        assert np.all(now < prev)
        prev = now


def test_beta_equilibrium_under_sgd():
    """With a constant loss L the fixed point of the update is 1 - L / (2 lambda)."""
    table = BetaTable(lr=0.01, optimizer="sgd")
    table.register(0, [0])
    for _ in range(500):
        table.update(0, [0], np.array([beta_gradient(2.0, table.values(0)[0], 10.0, 1)]))
    assert table.values(0)[0] == pytest.approx(0.9, abs=1e-12)


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        BetaTable(lr=0.1, optimizer="rmsprop")


def test_scores_csv_round_trip(tmp_path):
    table = BetaTable(lr=0.1, optimizer="sgd")
    table.register(0, [3, 4])
    table.register(1, [5])
    rng = np.random.default_rng(0)
    for e in range(1, 4):
        table.update(0, [3, 4], rng.random(2))
        table.record_epoch(0, e)
    table.write_scores_csv(tmp_path / "s.csv")
    table.write_trajectories_csv(tmp_path / "t.csv")
    back = read_scores_csv(tmp_path / "s.csv")
    assert list(back) == [0]  # task 1 has a single point and no score yet
    np.testing.assert_array_equal(back[0], table.storage_scores(0))
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 1 + 2 * 4 + 1
