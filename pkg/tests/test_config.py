import pytest

from replaycl.harness.config import SCHEMA, ConfigError, ExperimentConfig, from_dict, load_config
from replaycl.scenarios import ScenarioSpec

SC = ScenarioSpec("class_il", 3, 6)


def doc(**sections):
    d = {"schema": SCHEMA, "scenario": {"kind": "class_il", "n_tasks": 3, "n_classes": 6}}
    d.update(sections)
    return d


def test_defaults():
    cfg = ExperimentConfig(SC)
    assert (cfg.b, cfg.a, cfg.T, cfg.lam, cfg.tau, cfg.lr) == (0.25, 0.5, 20, 10.0, 20, 1e-4)
    assert cfg.use_weighting and cfg.effective_beta_lr == cfg.lr
    assert cfg.mc_start == cfg.sample_start == 20


def test_weighting_default_per_strategy():
    assert not ExperimentConfig(SC, strategy="random_both").use_weighting
    assert not ExperimentConfig(SC, strategy="fine_tune").use_weighting
    assert ExperimentConfig(SC, strategy="random_storage").use_weighting
    assert not ExperimentConfig(SC, weighting=False).use_weighting


@pytest.mark.parametrize("changes,field", [
    ({"strategy": "gem"}, "training.strategy"),
    ({"b": 0.0}, "buffer.b"),
    ({"a": 1.5}, "buffer.a"),
    ({"T": 0}, "buffer.T"),
    ({"lam": -1.0}, "weighting.lambda"),
    ({"tau_mc_offset": -1}, "buffer.tau_mc_offset"),
    ({"tau_mc_offset": 3, "tau_s_offset": 2}, "buffer.tau_s_offset"),
    ({"seeds": ()}, "training.seeds"),
    ({"hidden": ()}, "network.hidden"),
    ({"explicit_order": (0, 0, 1)}, "order.explicit"),
    ({"eval_split": "train"}, "evaluation.split"),
    ({"weighting": False, "weighted_replay": True}, "weighting.weighted_replay"),
    ({"strategy": "fine_tune", "weighting": True}, "weighting.enabled"),
    ({"beta_optimizer": "rmsprop"}, "weighting.beta_optimizer"),
])
def test_validation_names_the_field(changes, field):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig(SC, **changes)
    assert exc.value.field == field


def test_replace_merges_scenario_changes():
    cfg = ExperimentConfig(SC).replace(scenario={"class_sep": 4.0}, b=0.5)
    assert cfg.scenario.class_sep == 4.0 and cfg.scenario.n_tasks == 3 and cfg.b == 0.5
    with pytest.raises(ConfigError):
        cfg.replace(a=2.0)


def test_from_dict_maps_sections():
    cfg = from_dict(doc(
        network={"hidden": [8, 8]},
        training={"strategy": "mir", "seeds": [1, 2]},
        weighting={"lambda": 3.0},
        buffer={"replay_ratio": "2:1", "capacity": 50},
        order={"explicit": [2, 1, 0]},
    ))
    assert cfg.hidden == (8, 8) and cfg.seeds == (1, 2) and cfg.strategy == "mir"
    assert cfg.lam == 3.0 and cfg.replay_ratio == 2.0 and cfg.buffer_capacity == 50
    assert cfg.explicit_order == (2, 1, 0)


@pytest.mark.parametrize("bad,field", [
    ({"schema": "other"}, "schema"),
    ({"optimizer": {}}, "optimizer"),
    ({"training": {"epochs": 3}}, "training.epochs"),
    ({"training": 4}, "training"),
    ({"buffer": {"replay_ratio": "2:0"}}, "buffer.replay_ratio"),
    ({"scenario": {"n_tasks": 3}}, "scenario.kind"),
    ({"scenario": {"kind": "class_il", "n_tasks": 3, "n_classes": 5}}, "scenario"),
    ({"scenario": {"kind": "class_il", "n_tasks": 3, "n_classes": 6, "colour": 1}}, "scenario"),
])
def test_from_dict_errors(bad, field):
    with pytest.raises(ConfigError) as exc:
        from_dict(doc(**bad))
    assert exc.value.field == field


def test_load_config_and_task_noise(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(f'schema = "{SCHEMA}"\n[scenario]\nkind = "class_il"\nn_tasks = 2\nn_classes = 4\n'
                 'task_noise = [0.5, 2]\n[buffer]\nb = 0.5\n')
    cfg = load_config(p)
    assert cfg.scenario.task_noise == (0.5, 2.0) and cfg.b == 0.5
    p.write_text("schema = ")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.field == "file"


def test_to_dict_round_trips_through_from_dict():
    cfg = ExperimentConfig(SC, hidden=(5, 6), b=0.1, explicit_order=(1, 0, 2))
    d = cfg.to_dict()
    sections = {"network": {"hidden": d["hidden"]}, "buffer": {"b": d["b"]}, "order": {"explicit": d["explicit_order"]}}
    sc = {k: v for k, v in d["scenario"].items() if v is not None}
    back = from_dict({"schema": SCHEMA, "scenario": sc, **sections})
    assert back == cfg


def test_shipped_config_is_the_acceptance_config():
    from pathlib import Path

    from .test_acceptance import BASE, HETERO_NOISE

    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "class_il.toml") == BASE
    hetero = load_config(root / "class_il_hetero.toml")
    assert hetero == BASE.replace(scenario={"task_noise": HETERO_NOISE})
