import json

import pytest

from t4pdm.config import ConfigError, RunConfig, env_overrides, from_dict, load_config


def test_defaults():
    cfg = RunConfig()
    assert cfg.signal.window_len == 5000
    assert cfg.features.variance_threshold == 3.68e-5
    assert cfg.features.pca_k == 4500
    assert (cfg.model.d_model, cfg.model.n_heads, cfg.model.d_ff, cfg.model.dropout_rate) == (32, 4, 64, 0.5)
    assert (cfg.train.epochs, cfg.train.batch_size, cfg.train.learning_rate) == (100, 32, 1e-4)
    assert (cfg.split.train_frac, cfg.split.val_frac) == (0.576, 0.18)
    assert len(cfg.ablation_presets) == 5


def test_round_trip_through_json():
    cfg = from_dict({"seed": 3, "train": {"epochs": 7}, "model": {"preset": "transformer_fs"}})
    again = from_dict(json.loads(cfg.to_json()))
    assert again == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match=r"train: unknown keys \['epoch'\]"):
        from_dict({"train": {"epoch": 3}})
    with pytest.raises(ConfigError, match="unknown keys"):
        from_dict({"nonsense": 1})


def test_type_errors():
    with pytest.raises(ConfigError, match="train.epochs"):
        from_dict({"train": {"epochs": "ten"}})
    with pytest.raises(ConfigError, match="features.scale"):
        from_dict({"features": {"scale": 1}})
    with pytest.raises(ConfigError, match="expected an object"):
        from_dict({"train": 5})


def test_int_accepted_for_float():
    cfg = from_dict({"train": {"learning_rate": 1}})
    assert isinstance(cfg.train.learning_rate, float)


def test_semantic_validation():
    with pytest.raises(ConfigError, match="unknown preset"):
        from_dict({"model": {"preset": "gpt"}})
    with pytest.raises(ConfigError, match="even"):
        from_dict({"signal": {"window_len": 5001}})
    with pytest.raises(ConfigError, match="divisible"):
        from_dict({"model": {"d_model": 30, "n_heads": 4}})


def test_env_overrides_nest_and_parse_json():
    env = {"T4PDM_TRAIN__EPOCHS": "20", "T4PDM_SEED": "9", "T4PDM_MODEL__PRESET": "transformer",
           "OTHER": "x"}
    assert env_overrides(env) == {"train": {"epochs": 20}, "seed": 9, "model": {"preset": "transformer"}}


def test_precedence_file_env_flag(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "train": {"epochs": 3, "batch_size": 4}}))
    cfg = load_config(path, environ={"T4PDM_TRAIN__EPOCHS": "8", "T4PDM_SEED": "2"})
    assert (cfg.seed, cfg.train.epochs, cfg.train.batch_size) == (2, 8, 4)
    assert load_config(path, seed=5, environ={"T4PDM_SEED": "2"}).seed == 5


def test_invalid_json_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path, environ={})
