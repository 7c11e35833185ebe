import math

import pytest

from crossqa.config import (
    ConfigError,
    DEFAULT_HOP_DISTRIBUTION,
    PipelineConfig,
)


def test_defaults_validate():
    config = PipelineConfig()
    config.validate()
    assert math.isclose(sum(DEFAULT_HOP_DISTRIBUTION.values()), 1.0)


def test_hop_distribution_must_sum_to_one():
    config = PipelineConfig(hop_distribution={2: 0.5, 3: 0.4})
    with pytest.raises(ConfigError, match="sums to"):
        config.validate()


def test_judge_count_enforced():
    config = PipelineConfig(judge_models=["a", "b"])
    with pytest.raises(ConfigError, match="three judge"):
        config.validate()


def test_image_count_range_bounds():
    with pytest.raises(ConfigError):
        PipelineConfig(image_count_range=(0, 6)).validate()
    with pytest.raises(ConfigError):
        PipelineConfig(image_count_range=(2, 9)).validate()


def test_domain_clipping_renormalizes():
    config = PipelineConfig()
    sp = config.hop_distribution_for("SP")
    assert 5 not in sp
    assert math.isclose(sum(sp.values()), 1.0)
    expected_mass = sum(
        w for h, w in DEFAULT_HOP_DISTRIBUTION.items() if h <= 4
    )
    assert math.isclose(sp[2], DEFAULT_HOP_DISTRIBUTION[2] / expected_mass)
    ni = config.hop_distribution_for("NI")
    assert math.isclose(sum(ni.values()), 1.0) and 5 in ni


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown configuration key"):
        PipelineConfig.from_dict({"sede": 3})


def test_from_dict_coerces_hop_keys():
    config = PipelineConfig.from_dict({"hop_distribution": {"2": 0.5, "3": 0.5}})
    assert config.hop_distribution == {2: 0.5, 3: 0.5}


def test_load_yaml_and_env_overrides(tmp_path, monkeypatch):
    path = tmp_path / "config.yaml"
    path.write_text("seed: 11\nqa_per_sample: 2\n")
    monkeypatch.setenv("CROSSQA_ENDPOINT", "http://localhost:9/v1")
    monkeypatch.setenv("CROSSQA_API_KEY", "secret-token")
    config = PipelineConfig.load(path)
    assert config.seed == 11 and config.qa_per_sample == 2
    assert config.provider_endpoint == "http://localhost:9/v1"
    assert config.api_key == "secret-token"


def test_secrets_never_read_from_file(tmp_path, monkeypatch):
    path = tmp_path / "config.yaml"
    path.write_text("api_key: in-file\n")
    monkeypatch.delenv("CROSSQA_API_KEY", raising=False)
    with pytest.raises(ConfigError, match="unknown configuration key"):
        PipelineConfig.load(path)


def test_load_non_mapping_rejected(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError, match="mapping"):
        PipelineConfig.load(path)
