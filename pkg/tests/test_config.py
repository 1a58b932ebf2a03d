from __future__ import annotations

from pathlib import Path

import pytest

from halluguard.config import ConfigError, build_run_config, load_toml
from halluguard.scoring import WeightVector


def test_defaults():
    cfg = build_run_config({}, {}, env={})
    assert cfg.backend == "mock" and cfg.workers == 4 and cfg.na == 3
    assert cfg.weights == WeightVector()
    pc = cfg.pipeline_config()
    assert pc.na == 3 and pc.judge_fallback and not pc.strict_envelope


def test_toml_env_and_overrides(tmp_path):
    p = tmp_path / "hg.toml"
    p.write_text(
        '[run]\nworkers = 2\nweights = [0.4, 0.2, 0.2, 0.2]\nbackend = "replay"\n'
        '[agents.third_reviewer]\nmodel = "m3"\ntemperature = 0.5\n'
        '[agents.front_end]\nmodel = "m1"\n'
        '[endpoint]\nurl = "https://x"\nmax_retries = 5\n', encoding="utf-8")
    doc = load_toml(p)
    cfg = build_run_config(doc, {"workers": 8, "na": None}, env={"HG_MODEL_FRONT_END": "env-model", "HG_API_KEY": "s"})
    assert cfg.workers == 8 and cfg.backend == "replay"
    assert cfg.weights.as_tuple() == (0.4, 0.2, 0.2, 0.2)
    assert cfg.roles["third_reviewer"].model_id == "m3" and cfg.roles["third_reviewer"].temperature == 0.5
    assert cfg.roles["front_end"].model_id == "env-model"
    prof = cfg.endpoint_profile({"HG_API_KEY": "s"})
    assert (prof.url, prof.api_key, prof.max_retries) == ("https://x", "s", 5)


@pytest.mark.parametrize("doc, overrides", [
    ({"run": {"colour": "red"}}, {}),
    ({"agents": {"fourth": {}}}, {}),
    ({}, {"weights": "1,1,1"}),
    ({}, {"weights": "1,1,1,-1"}),
])
def test_bad_options(doc, overrides):
    with pytest.raises(ConfigError):
        build_run_config(doc, overrides, env={})


def test_validate(tmp_path):
    prompts = tmp_path / "p.txt"
    prompts.write_text("a\n")
    ok = {"prompts": str(prompts)}
    build_run_config({}, ok, env={}).validate()
    for bad in ({}, {"prompts": str(tmp_path / "missing.txt")}, {**ok, "backend": "cloud"},
                {**ok, "backend": "replay"}, {**ok, "workers": 0}, {**ok, "na": 0},
                {**ok, "lexicon": str(tmp_path / "nolex.txt")}):
        with pytest.raises(ConfigError):
            build_run_config({}, bad, env={}).validate()


def test_load_toml_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_toml(tmp_path / "none.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[run\n")
    with pytest.raises(ConfigError):
        load_toml(bad)


def test_endpoint_needs_url():
    with pytest.raises(ConfigError):
        build_run_config({}, {}, env={}).endpoint_profile({})
    with pytest.raises(ConfigError):
        build_run_config({"endpoint": {"url": "u", "bogus": 1}}, {}, env={}).endpoint_profile({})


def test_paths_are_paths(tmp_path):
    cfg = build_run_config({"run": {"out": "o.jsonl", "replay_dir": "r"}}, {}, env={})
    assert cfg.out == Path("o.jsonl") and cfg.replay_dir == Path("r")
