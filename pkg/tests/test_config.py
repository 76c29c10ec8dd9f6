import pytest

import json

from fcg_robust.config import DEFAULTS, RunConfig

from fcg_robust.errors import ConfigError


def test_defaults():
    config = RunConfig.default()
    assert config.seed == 0
    assert config.scheme == "zero"
    assert config.batch_size == 64
    assert not config.progress
    assert config.feature_config().families == ("meta", "ldp")
    assert config.train_config().optimizer == "adam"
    assert config.adapt_config().method == "t3a"
    assert config.adapt_config("tent").method == "tent"
    assert config.synthetic_config().families == 5

    model = config.model_config(input_dim=7, classes=3)
    assert (model.input_dim, model.classes) == (7, 3)
    assert model.backbone == "gin"


def test_overrides():
    config = RunConfig.from_dict({
        "collate": {"scheme": "prune"},
        "model": {"backbone": "gcn", "input_dim": 12},
        "extract": {"features": "meta,llm,ldp", "llm_dim": 8},
    })
    assert config.scheme == "prune"
    model = config.model_config(input_dim=7, classes=2)
    assert model.backbone == "gcn"
    assert model.input_dim == 12
    assert model.layers == DEFAULTS["model"]["layers"]
    assert config.feature_config().llm_dim == 8


def test_all_violations_reported():
    with pytest.raises(ConfigError) as e:
        RunConfig.from_dict({
            "seed": 1,
            "colate": {},
            "collate": {"scheme": "average"},
            "model": {"layers": 0, "heads": 2},
            "train": {"lr": -1.0},
            "io": {"batch_size": 0},
        })
    violations = e.value.violations
    assert "unknown key colate" in violations
    assert "unknown key model.heads" in violations
    assert any(v.startswith("collate.scheme") for v in violations)
    assert any(v.startswith("model.layers") for v in violations)
    assert any(v.startswith("train.lr") for v in violations)
    assert any(v.startswith("io.batch_size") for v in violations)
    assert len(violations) == 6


def test_section_must_be_object():
    with pytest.raises(ConfigError) as e:
        RunConfig.from_dict({"train": 5})
    assert e.value.violations == ["train must be an object"]


def test_bad_features():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"extract": {"features": "meta,opcodes"}})


def test_zero_model_width_is_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"model": {"input_dim": 0}})


def test_seed_inheritance():
    config = RunConfig.from_dict({"seed": 7, "adapt": {"seed": 3}})
    assert config.train_config().seed == 7
    assert config.adapt_config().seed == 3
    assert config.synthetic_config().seed == 7

    with pytest.raises(ConfigError):
        RunConfig.from_dict({"seed": -1})


def test_config_hash():
    a = RunConfig.from_dict({"seed": 1, "train": {"epochs": 5}})
    b = RunConfig.from_dict({"train": {"epochs": 5}, "seed": 1})
    c = RunConfig.from_dict({"seed": 2, "train": {"epochs": 5}})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 64
    assert json.loads(a.dumps()) == json.loads(json.dumps(a.to_json()))


def test_from_json(tmpdir):
    path = tmpdir.join("run.json")
    path.write(json.dumps({"train": {"epochs": 2}}))
    assert RunConfig.from_json(str(path)).train_config().epochs == 2

    path.write("{not json")
    with pytest.raises(ConfigError):
        RunConfig.from_json(str(path))
    with pytest.raises(ConfigError):
        RunConfig.from_json(str(tmpdir.join("missing.json")))
