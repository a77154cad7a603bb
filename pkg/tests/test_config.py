import math

import pytest

from mobiswarm import Mode, ScenarioConfig, load_config, parse_config
from mobiswarm.config import Dist
from mobiswarm.errors import ConfigError


def test_defaults_validate():
    cfg = ScenarioConfig().validate()
    assert cfg.mode is Mode.HYBRID and cfg.churn_enabled


def test_parse_sections_and_ranges():
    cfg = parse_config("""
[scenario]
num_peers = 40
mode = baseline
[bandwidth]
static_up_kBps = 80..120   # uniform range
[churn]
mean_online = inf
[hybrid]
mobile_rotation = yes
""")
    assert cfg.num_peers == 40 and cfg.mode is Mode.BASELINE
    assert cfg.static_up_kBps == Dist(80.0, 120.0)
    assert not cfg.churn_enabled and cfg.mobile_rotation


def test_round_trip_through_ini():
    cfg = ScenarioConfig(num_peers=7, static_up_kBps="50..60", mean_online=math.inf, rank_by_our=True)
    assert parse_config(cfg.to_ini()) == cfg


def test_every_problem_is_reported():
    with pytest.raises(ConfigError) as exc:
        parse_config("""
[scenario]
num_peers = 0
mobile_fraction = 1.5
block_size = 1000
[protocol]
regular_slots = 5
""")
    text = "\n".join(exc.value.problems)
    for name in ("num_peers", "mobile_fraction", "piece_size", "regular_slots"):
        assert name in text


@pytest.mark.parametrize("text", [
    "[scenario]\nnum_peerz = 3\n",
    "[bandwidth]\nnum_peers = 3\n",
    "[scenario]\nnum_peers = many\n",
    "[hybrid]\nmobile_rotation = maybe\n",
    "[bandwidth]\nstatic_up_kBps = 1..2..3\n",
    "[bandwidth]\nstatic_up_kBps = 9..3\n",
    "no section header\n",
])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file_names_path(tmp_path):
    path = tmp_path / "nope.ini"
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert str(path) in exc.value.problems[0]


def test_dist_coercion():
    cfg = ScenarioConfig(seeder_up_kBps=100)
    assert cfg.seeder_up_kBps == Dist(100.0, 100.0)
    with pytest.raises(ConfigError):
        ScenarioConfig(seeder_up_kBps="fast")
