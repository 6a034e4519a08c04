import pytest

from fedpois.config import (
    ExperimentConfig,
    angle_regimes,
    defaults_text,
    load_config,
    parse_config,
    serialize,
    to_flat,
)
from fedpois.errors import ConfigInvalid, CrossFieldViolation, ParseError, UnknownKey


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(serialize(cfg)) == cfg
    assert parse_config(defaults_text()) == cfg


def test_round_trip_with_overrides():
    cfg = ExperimentConfig().replace(**{"model.hidden": "16", "attack.clip_bound": "2.5",
                                        "defense.kind": "krum", "defense.krum_f": "3", "root_seed": 9})
    back = parse_config(serialize(cfg))
    assert back == cfg
    assert back.model.hidden == (16,) and back.root_seed == 9
    assert to_flat(back)["defense.krum_f"] == "3"


def test_comments_blank_lines_and_partial_files():
    cfg = parse_config("# header\n\nfl.num_rounds = 7   # short run\n")
    assert cfg.fl.num_rounds == 7
    assert cfg.attack == ExperimentConfig().attack


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError, match="line 2"):
        parse_config("fl.num_rounds = 3\nnot a pair\n")
    with pytest.raises(ParseError, match="already set on line 1"):
        parse_config("fl.num_rounds = 3\nfl.num_rounds = 4\n")
    with pytest.raises(UnknownKey):
        parse_config("fl.rounds = 3\n")
    with pytest.raises(ConfigInvalid):
        parse_config("fl.num_rounds = many\n")


def test_cross_field_violations_are_collected():
    with pytest.raises(CrossFieldViolation) as err:
        parse_config("fl.num_rounds = 0\nattack.psi_low = 2\nattack.clip_bound = 1\nattack.upscale_floor = 2\n")
    text = str(err.value)
    assert "fl.num_rounds" in text and "psi" in text and "upscale" in text


@pytest.mark.parametrize("line", [
    "defense.trim_beta = 0.5", "fl.sample_prob = 0", "fl.sample_prob = 0.001",
    "attack.kind = backdoor", "data.alpha = 0", "theory.angle_regimes = 1.2",
])
def test_invalid_values(line):
    with pytest.raises(ConfigInvalid):
        parse_config(line + "\n")


def test_seed_environment_override(monkeypatch):
    monkeypatch.setenv("FEDPOIS_SEED", "42")
    assert parse_config("root_seed = 3\n").root_seed == 42


def test_load_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("data.alpha = 0.05\n")
    assert load_config(p).data.alpha == 0.05


def test_angle_regimes():
    assert angle_regimes("1.2:0.4,0.3:0.1") == [(1.2, 0.4), (0.3, 0.1)]
