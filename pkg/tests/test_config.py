import math
from importlib import resources

import pytest

from funnelmpc.cli import shipped_scenarios
from funnelmpc.config import (
    load_scenario,
    parse_number,
    parse_scenario,
    scenario_to_ini,
    with_override,
)
from funnelmpc.errors import ConfigError

BASE = """\
[scenario]
name = tiny
kind = fc_zoh
t_end = 0.5

[plant]
m1 = 4
alpha = pi/4

[funnel]
level_0 = 0.1, 5, 2
level_1 = 0.5, 10, 2

[zoh]
tau = 1/100, 1/200
"""


@pytest.mark.parametrize("text,value", [
    ("2", 2.0), ("-1.5e-3", -1.5e-3), ("1/600", 1 / 600), ("pi/4", math.pi / 4),
    ("0.5*pi", 0.5 * math.pi), ("pi", math.pi), ("2pi", 2 * math.pi),
])
def test_parse_number(text, value):
    assert parse_number(text) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text", ["", "abc", "1/0", "1//2", "pi*pi", "nan"])
def test_parse_number_rejects(text):
    with pytest.raises(ValueError):
        parse_number(text)


def test_parse_minimal():
    sc = parse_scenario(BASE)
    assert sc.name == "tiny" and sc.kind == "fc_zoh"
    assert sc.zoh.tau == pytest.approx((0.01, 0.005))
    assert sc.funnel.r == 2
    assert sc.plant.m1 == 4.0 and sc.plant.m2 == 1.0


@pytest.mark.parametrize("name", shipped_scenarios())
def test_shipped_scenarios_round_trip(name):
    path = resources.files("funnelmpc") / "scenarios" / f"{name}.ini"
    sc = load_scenario(path)
    assert parse_scenario(scenario_to_ini(sc)) == sc


def _error(text):
    with pytest.raises(ConfigError) as info:
        parse_scenario(text)
    return info.value


def test_unknown_key_reports_line():
    err = _error(BASE.replace("m1 = 4", "m1 = 4\nmass = 3"))
    assert err.line == 8 and err.section == "plant" and err.field == "mass"
    assert "line 8" in str(err)


def test_unknown_section():
    err = _error(BASE + "\n[solver]\nx = 1\n")
    assert err.section == "solver" and err.line == 17


def test_bad_number_reports_line():
    err = _error(BASE.replace("t_end = 0.5", "t_end = soon"))
    assert err.field == "t_end" and err.line == 4


def test_invalid_physical_value():
    err = _error(BASE.replace("m1 = 4", "m1 = -1"))
    assert err.section == "plant"


def test_level_count_must_match_relative_degree():
    err = _error(BASE.replace("level_1 = 0.5, 10, 2\n", ""))
    assert err.section == "funnel"
    # alpha = 0 raises the relative degree to three
    err = _error(BASE.replace("alpha = pi/4", "alpha = 0"))
    assert err.section == "funnel"


@pytest.mark.parametrize("old,new", [
    ("kind = fc_zoh", "kind = simulate"),
    ("name = tiny", "name = a b"),
    ("level_0 = 0.1, 5, 2", "level_0 = 0.1, 5"),
    ("tau = 1/100, 1/200", "tau = 0"),
])
def test_invalid_values(old, new):
    _error(BASE.replace(old, new))


def test_missing_required_key():
    err = _error(BASE.replace("kind = fc_zoh\n", ""))
    assert err.field == "kind"


def test_malformed_file():
    _error("no section header\n")


def test_override():
    sc = parse_scenario(BASE)
    sc2 = with_override(sc, "zoh.tau", "1/300")
    assert sc2.zoh.tau == pytest.approx((1 / 300,))
    sc3 = with_override(sc, "scenario.t_end", "2")
    assert sc3.t_end == 2.0 and sc3.zoh == sc.zoh
    with pytest.raises(ConfigError):
        with_override(sc, "zoh.speed", "1")
    with pytest.raises(ConfigError):
        with_override(sc, "tau", "1")
    with pytest.raises(ConfigError):
        with_override(sc, "plant.m1", "-3")
