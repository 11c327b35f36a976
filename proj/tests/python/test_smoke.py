import json

import pytest

import trrsim


def test_default_config_round_trips():
    cfg = trrsim.ScenarioConfig()
    again = trrsim.ScenarioConfig.from_text(cfg.render())
    assert again.render() == cfg.render()
    assert cfg.defense == "none"
    assert cfg.bank_fns == [0x12000, 0x24000, 0x48000]


def test_config_errors_are_value_errors():
    with pytest.raises(trrsim.ConfigError, match="count_limit"):
        trrsim.ScenarioConfig.from_text("[defense]\nmode = softtrr\ncount_limit = 1\n").validate()
    with pytest.raises(ValueError, match="unknown key"):
        trrsim.ScenarioConfig.from_text("[attack]\nvictims = 2\n")


def test_hammer_flips_without_defense_and_not_with_it():
    cfg = trrsim.ScenarioConfig.from_text("[attack]\nscenario = hammer\nduration = 20ms\n")
    r = trrsim.run(cfg)
    assert r.flips_in_pt_rows >= 1
    cfg.defense = "softtrr"
    r = trrsim.run(cfg)
    assert r.flips_in_pt_rows == 0
    assert r.rsvd_faults > 0


def test_metrics_formats():
    cfg = trrsim.ScenarioConfig.from_text("[defense]\nmode = softtrr\n[attack]\nscenario = idle\nduration = 5ms\n")
    r = trrsim.run(cfg)
    assert len(r.samples) == 5
    assert r.samples[-1]["sim_ns"] == 5_000_000
    csv = r.metrics("csv").splitlines()
    assert csv[0].split(",") == list(trrsim.METRIC_COLUMNS)
    assert csv[-1].startswith("# summary")
    doc = json.loads(r.metrics("json"))
    assert doc["columns"] == list(trrsim.METRIC_COLUMNS)
    assert doc["summary"]["defense"] == "softtrr"


def test_runs_are_deterministic():
    cfg = trrsim.ScenarioConfig.from_text("[defense]\nmode = softtrr\n[attack]\nscenario = pthammer\nm = 2\nduration = 1s\n")
    assert trrsim.run(cfg).metrics("json") == trrsim.run(cfg).metrics("json")


def test_map_address_and_probe():
    bank, row, column = trrsim.map_address(0x2000)
    assert (bank, row) == (1, 0)
    out = trrsim.probe_mapping(samples=10000, seed=3)
    assert out["matches_config"] and out["complete"]
    assert len(out["masks"]) == 3
