# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

import json
import unittest

import pytest

from pydsnc.configuration import (
    PRESETS,
    Arrangement,
    ConfigError,
    ExperimentConfig,
    load_configuration,
    parse_config,
)
from pydsnc.overlay import DeparturePolicy
from pydsnc.protocols import ProtocolKind
from pydsnc.simulator import KIB


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("PYDSNC_SEED", "PYDSNC_OUTPUT_DIR", "PYDSNC_JOBS"):
        monkeypatch.delenv(name, raising=False)


class ParseConfigTest(unittest.TestCase):
    def test_seed_is_required(self):
        with pytest.raises(ConfigError) as raised:
            parse_config("{}")
        assert raised.value.key == "seed"

    def test_defaults(self):
        config = parse_config(overrides={"seed": 7})
        assert config.seeds == [7]
        assert config.seed == 7
        assert config.protocols == list(ProtocolKind)
        assert config.arrangement is Arrangement.HOMOGENEOUS
        assert config.group_size == 8

    def test_preset(self):
        config = parse_config(preset="fig4", overrides={"seed": 1})
        assert config.peers == [100, 200, 400]
        assert config.arrangement is Arrangement.HOMOGENEOUS
        assert config.preset == "fig4"

    def test_preset_named_in_document(self):
        config = parse_config('{"preset": "smoke", "seed": 3}')
        assert config.peers == [8]
        assert config.chunk_size == 4 * KIB

    def test_unknown_preset(self):
        with pytest.raises(ConfigError) as raised:
            parse_config(preset="fig99", overrides={"seed": 1})
        assert raised.value.key == "preset"

    def test_negative_peers(self):
        with pytest.raises(ConfigError) as raised:
            parse_config('{"seed": 1, "peers": [-5]}')
        assert raised.value.key == "peers"

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as raised:
            parse_config('{"seed": 1, "peer_count": 5}')
        assert raised.value.key == "peer_count"

    def test_malformed_json_reports_line(self):
        with pytest.raises(ConfigError) as raised:
            parse_config('{\n  "seed": 1,\n  "peers": [10,\n}')
        assert raised.value.line == 4

    def test_not_an_object(self):
        with pytest.raises(ConfigError):
            parse_config("[1, 2]")

    def test_type_errors(self):
        for document in ('{"seed": 1, "group_size": "8"}', '{"seed": 1, "trace": 1}',
                         '{"seed": 1.5}', '{"seed": 1, "protocols": ["bittorrent"]}'):
            with pytest.raises(ConfigError):
                parse_config(document)

    def test_field_too_small_for_groups(self):
        with pytest.raises(ConfigError) as raised:
            parse_config(overrides={"seed": 1, "q": 2, "group_size": 8})
        assert raised.value.key == "group_size"
        parse_config(overrides={"seed": 1, "q": 2, "group_size": 8, "protocols": ["tnnc"]})

    def test_content_check_needs_byte_symbols(self):
        with pytest.raises(ConfigError) as raised:
            parse_config(overrides={"seed": 1, "q": 4, "verify_content": True})
        assert raised.value.key == "verify_content"

    def test_fraction_range(self):
        with pytest.raises(ConfigError) as raised:
            parse_config(overrides={"seed": 1, "link_failure": 1.5})
        assert raised.value.key == "link_failure"

    def test_segment_bound(self):
        with pytest.raises(ConfigError):
            parse_config(overrides={"seed": 1, "chunks_per_segment": 256})

    def test_capacity_tiers_get_default_weight(self):
        config = parse_config('{"seed": 1, "capacity_tiers": [[1000, 4000]]}')
        assert config.capacity_tiers == [[1000.0, 4000.0, 1.0]]
        with pytest.raises(ConfigError):
            parse_config('{"seed": 1, "capacity_tiers": [[1000]]}')


def test_precedence(monkeypatch):
    monkeypatch.setenv("PYDSNC_SEED", "11")
    monkeypatch.setenv("PYDSNC_JOBS", "3")
    monkeypatch.setenv("PYDSNC_OUTPUT_DIR", "from-env")

    config = parse_config(preset="smoke")
    assert config.seeds == [11]
    assert config.jobs == 3
    assert config.output_dir == "from-env"

    config = parse_config('{"seed": 12, "peers": [20]}', preset="smoke")
    assert config.seeds == [12]
    assert config.peers == [20]
    assert config.chunk_size == 4 * KIB

    config = parse_config('{"seed": 12}', preset="smoke", overrides={"seeds": [13, 14], "jobs": None})
    assert config.seeds == [13, 14]
    assert config.jobs == 3


def test_environment_seed_list(monkeypatch):
    monkeypatch.setenv("PYDSNC_SEED", "1,2 3")
    assert parse_config().seeds == [1, 2, 3]
    monkeypatch.setenv("PYDSNC_SEED", "x")
    with pytest.raises(ConfigError):
        parse_config()


def test_load_configuration(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 4, "preset": "smoke"}))
    config = load_configuration(str(path), overrides={"peers": [3]})
    assert config.seeds == [4]
    assert config.peers == [3]


def test_load_configuration_missing_file(tmp_path):
    with pytest.raises(ConfigError) as raised:
        load_configuration(str(tmp_path / "missing.json"))
    assert raised.value.key == "config"


def test_json_round_trip():
    config = parse_config(preset="fig8", overrides={"seeds": [1, 2]})
    assert ExperimentConfig.from_json(config.to_json()) == config
    assert json.loads(config.to_json())["arrangement"] == "dynamic-leave"


def test_run_configs_order():
    config = parse_config(overrides={"seeds": [1, 2], "peers": [10, 20], "protocols": ["tnnc", "dsnc"]})
    runs = [(r.peers, r.protocol.value, r.seed) for r in config.run_configs()]
    assert runs == [
        (10, "tnnc", 1), (10, "tnnc", 2), (10, "dsnc", 1), (10, "dsnc", 2),
        (20, "tnnc", 1), (20, "tnnc", 2), (20, "dsnc", 1), (20, "dsnc", 2),
    ]


def test_arrangements_shape_runs():
    static = parse_config(overrides={"seed": 1}).run_config(ProtocolKind.DSNC, 10, 1)
    assert static.link_failure == 0.0
    assert static.capacity_tiers == ()
    assert static.churn.initial_fraction == 1.0

    lossy = parse_config(preset="fig5", overrides={"seed": 1}).run_config(ProtocolKind.DSNC, 10, 1)
    assert lossy.link_failure == 0.1

    leaving = parse_config(preset="fig8", overrides={"seed": 1}).run_config(ProtocolKind.DSNC, 10, 1)
    assert leaving.churn.departure is DeparturePolicy.LEAVE
    assert leaving.churn.initial_fraction == 0.5
    assert len(leaving.capacity_tiers) == 3


def test_every_preset_resolves():
    for name, preset in PRESETS.items():
        config = parse_config(preset=name, overrides={"seed": 1})
        assert config.preset == name
        assert preset.summary


def test_presets_name_their_figure_unless_test_only():
    for name, preset in PRESETS.items():
        if preset.test_only:
            assert preset.summary.startswith("test-only")
        else:
            assert name.startswith("fig") and name[3:].isdigit()
    assert [name for name, preset in PRESETS.items() if preset.test_only] == ["smoke"]
