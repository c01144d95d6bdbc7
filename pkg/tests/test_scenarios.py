import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from replaycl.metrics import macro_auc
from replaycl.scenarios import (
    DataError,
    Instance,
    ScenarioSpec,
    domain_projections,
    gen_class_il,
    gen_domain_il,
    gen_time_il,
    generate,
    load_csv,
    split_by_group,
    write_csv,
)


def groups_of(split):
    return set(split.group_ids.tolist())


def test_class_il_pairs():
    tasks = gen_class_il(ScenarioSpec("class_il", 6, 12))
    assert [t.classes for t in tasks] == [{2 * j, 2 * j + 1} for j in range(6)]
    assert [t.name for t in tasks] == ["0-1", "2-3", "4-5", "6-7", "8-9", "10-11"]
    assert all(abs(len(t.train) - 200) <= 4 for t in tasks)  # whole groups of 4


def test_generation_is_bitwise_reproducible():
    spec = ScenarioSpec("class_il", 3, 6, seed=4, latent_dim=2, class_sep=3.0)
    for a, b in zip(generate(spec), generate(spec)):
        assert a.equals(b)


def test_seed_changes_data():
    a = generate(ScenarioSpec("class_il", 2, 4, seed=0))[0]
    b = generate(ScenarioSpec("class_il", 2, 4, seed=1))[0]
    assert not a.equals(b)


@pytest.mark.parametrize("kind,classes", [("class_il", 6), ("time_il", 4), ("domain_il", 4)])
def test_group_disjoint_splits(kind, classes):
    for t in generate(ScenarioSpec(kind, 3, classes)):
        tr, va, te = groups_of(t.train), groups_of(t.validation), groups_of(t.test)
        assert not (tr & va) and not (tr & te) and not (va & te)


def test_spec_validation():
    with pytest.raises(DataError):
        ScenarioSpec("class_il", 3, 5)
    with pytest.raises(DataError):
        ScenarioSpec("video_il", 3, 6)
    with pytest.raises(DataError):
        ScenarioSpec("class_il", 3, 6, latent_dim=40)
    with pytest.raises(DataError):
        ScenarioSpec("class_il", 3, 6, task_noise=(1.0, 2.0))
    with pytest.raises(DataError):
        ScenarioSpec("class_il", 3, 6, label_noise=0.6)
    with pytest.raises(DataError):
        ScenarioSpec("domain_il", 3, 4, label_noise=0.1)
    with pytest.raises(DataError):
        gen_class_il(ScenarioSpec("class_il", 1, 2, feature_dim=1))
    with pytest.raises(DataError):
        gen_time_il(ScenarioSpec("time_il", 1, 4))
    with pytest.raises(DataError):
        gen_domain_il(ScenarioSpec("domain_il", 1, 4))


def test_task_noise_scales_spread():
    spec = ScenarioSpec("class_il", 2, 4, class_sep=0.0, task_noise=(0.5, 2.0))
    a, b = generate(spec)
    assert a.train.features.std() == pytest.approx(0.5, rel=0.1)
    assert b.train.features.std() == pytest.approx(2.0, rel=0.1)


def test_latent_means_share_a_subspace():
    spec = ScenarioSpec("class_il", 6, 12, latent_dim=2, noise=0.0)
    x = np.vstack([t.train.features for t in generate(spec)])
    assert np.linalg.matrix_rank(x, tol=1e-8) == 2


def test_label_noise_flips_only_training_labels_within_task():
    clean = generate(ScenarioSpec("class_il", 2, 4))
    noisy = generate(ScenarioSpec("class_il", 2, 4, label_noise=0.3))
    for c, n in zip(clean, noisy):
        changed = (c.train.labels != n.train.labels).mean()
        assert 0.15 < changed < 0.45
        assert set(n.train.labels.tolist()) <= c.classes
        assert np.array_equal(c.validation.labels, n.validation.labels)
        assert np.array_equal(c.train.features, n.train.features)


def test_time_il_zero_drift_identically_distributed():
    tasks = gen_time_il(ScenarioSpec("time_il", 3, 4, drift_scale=0.0, train_per_task=3000))
    means = [[t.train.features[t.train.labels == c].mean(axis=0) for c in range(4)] for t in tasks]
    per_class = min(np.bincount(t.train.labels).min() for t in tasks)
    for m in means[1:]:
        # six standard errors of a difference of two sample means
        np.testing.assert_allclose(m, means[0], atol=6 * np.sqrt(2 / per_class))


def test_time_il_shape_and_labels():
    tasks = gen_time_il(ScenarioSpec("time_il", 3, 4))
    assert [t.name for t in tasks] == ["term-1", "term-2", "term-3"]
    counts = [np.bincount(np.concatenate([t.split(s).labels for s in ("train", "validation", "test")]), minlength=4)
              for t in tasks]
    assert all(np.array_equal(c, counts[0]) for c in counts)


def test_domain_il_identity_views_repeat_one_task():
    spec = ScenarioSpec("domain_il", 3, 4, feature_dim=6)
    tasks = gen_domain_il(spec, [np.eye(6)] * 3)
    for t in tasks[1:]:
        assert np.array_equal(t.train.features, tasks[0].train.features)
        assert np.array_equal(t.train.labels, tasks[0].train.labels)


def test_domain_il_default_has_twelve_views():
    spec = ScenarioSpec("domain_il", 12, 4)
    assert len(domain_projections(spec)) == 12
    assert [t.name for t in generate(spec)][-1] == "view-12"


def test_domain_il_opposite_view_defeats_probe():
    spec = ScenarioSpec("domain_il", 2, 4, feature_dim=8, class_sep=2.0)
    P = domain_projections(spec)[0]
    v1, v2 = gen_domain_il(spec, [P, -P])
    X = np.hstack([v1.train.features, np.ones((len(v1.train), 1))])
    W, *_ = np.linalg.lstsq(X, np.eye(4)[v1.train.labels], rcond=None)

    def auc(split):
        return macro_auc(np.hstack([split.features, np.ones((len(split), 1))]) @ W, split.labels)

    assert auc(v1.test) > 0.8
    assert auc(v2.test) < 0.5


def test_split_by_group_ten_groups():
    insts = [Instance(i, i // 5, 0, np.zeros(2), 0) for i in range(50)]
    parts = split_by_group(insts, rng=np.random.default_rng(0))
    assert [len({x.group_id for x in p}) for p in parts] == [6, 2, 2]


def test_split_by_group_giant_group():
    insts = [Instance(i, 0 if i < 90 else i, 0, np.zeros(2), 0) for i in range(100)]
    parts = split_by_group(insts, rng=np.random.default_rng(1))
    holding = [k for k, p in enumerate(parts) if any(x.group_id == 0 for x in p)]
    assert len(holding) == 1 and len(parts[holding[0]]) >= 90


def test_split_by_group_seeded_and_needs_groups():
    insts = [Instance(i, i // 2, 0, np.zeros(2), 0) for i in range(40)]
    a = split_by_group(insts, rng=np.random.default_rng(5))
    b = split_by_group(insts, rng=np.random.default_rng(5))
    assert [[x.instance_id for x in p] for p in a] == [[x.instance_id for x in p] for p in b]
    with pytest.raises(DataError):
        split_by_group(insts[:4])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 8), min_size=3, max_size=40), st.integers(0, 1000))
def test_split_by_group_partitions_instances(sizes, seed):
    insts, k = [], 0
    for g, size in enumerate(sizes):
        for _ in range(size):
            insts.append(Instance(k, g, 0, np.zeros(1), 0))
            k += 1
    parts = split_by_group(insts, rng=np.random.default_rng(seed))
    ids = sorted(x.instance_id for p in parts for x in p)
    assert ids == list(range(k))
    owners = {}
    for s, p in enumerate(parts):
        for x in p:
            assert owners.setdefault(x.group_id, s) == s


def test_instance_rejects_non_finite():
    with pytest.raises(DataError):
        Instance(0, 0, 0, np.array([np.inf]), 0)


def test_csv_round_trip(tmp_path):
    tasks = generate(ScenarioSpec("class_il", 2, 4, feature_dim=3))
    write_csv(tasks, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", n_features=3)
    assert len(back) == 2
    for a, b in zip(tasks, back):
        for s in ("train", "validation", "test"):
            assert a.split(s).equals(b.split(s))


def test_csv_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("")
    with pytest.raises(DataError, match="no data rows"):
        load_csv(p)
    head = "instance_id,group_id,task_id,split,label,f0\n"
    p.write_text(head)
    with pytest.raises(DataError, match="no data rows"):
        load_csv(p)
    p.write_text(head + "0,7,0,train,1,0.5\n1,7,0,test,0,0.1\n")
    with pytest.raises(DataError, match="group 7"):
        load_csv(p)
    p.write_text(head + "0,7,0,train,1,0.5\n1,8,0,holdout,0,0.1\n")
    with pytest.raises(DataError, match=":3:"):
        load_csv(p)
    p.write_text(head + "0,7,0,train,one,0.5\n")
    with pytest.raises(DataError, match=":2:"):
        load_csv(p)
    with pytest.raises(DataError):
        load_csv(p, n_features=4)
