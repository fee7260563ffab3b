"""Scenario files: an INI dialect read with :mod:`configparser`.

Dialect
-------
* One section per concern: ``[scenario]``, ``[plant]``, ``[funnel]``,
  ``[reference]``, ``[initial]``, ``[performance]``, ``[fc]``, ``[zoh]``,
  ``[mpc]``, ``[ident]``.  Every section and key is optional except
  ``[scenario] name`` and ``kind``; unknown sections or keys are errors.
* Numbers accept plain floats, ratios and multiples of pi: ``1/600``,
  ``pi/4``, ``0.5*pi``.  Lists are comma separated.
* ``[funnel]`` holds ``level_0``, ``level_1``, ... each ``a, b, c`` for the
  boundary ``a + b exp(-c t)``; the number of levels must equal the
  relative degree of the plant.
* Comments start with ``#`` or ``;`` on their own line.

Everything is validated before any computation starts.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .costs import CLASSICAL, FUNNEL, StageCost
from .errors import ConfigError
from .fmpc.ocp import AT_INITIAL_TIME, MIN_OVER_HORIZON, MpcConfig
from .funnel import FunnelSpec, ReferenceSignal
from .ident import PHYSICAL_NAMES, ParamBox
from .plant import MassOnCar, MassOnCarParams

__all__ = [
    "KINDS",
    "FcSettings",
    "ZohSettings",
    "IdentSettings",
    "Scenario",
    "parse_number",
    "load_scenario",
    "parse_scenario",
    "scenario_to_ini",
    "with_override",
]

KINDS = ("fc_continuous", "fc_zoh", "mpc", "ident")

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*(pi)?\s*$")


def _atom(text):
    m = _NUMBER.match(text)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ValueError(f"not a number: {text!r}")
    coef = float(m.group(1)) if m.group(1) is not None else 1.0
    return coef * math.pi if m.group(2) else coef


def parse_number(text):
    """``'0.25'``, ``'1/40'``, ``'pi/4'`` or ``'0.5*pi'`` to float."""
    text = text.strip()
    if text.startswith("-") and "/" in text:
        return -parse_number(text[1:])
    if "/" in text:
        num, den = text.split("/", 1)
        den = _atom(den)
        if den == 0:
            raise ValueError(f"division by zero in {text!r}")
        return _atom(num) / den
    return _atom(text)


def _numbers(text):
    return tuple(parse_number(p) for p in text.split(",") if p.strip())


def _integers(text):
    return tuple(int(p) for p in text.split(",") if p.strip())


def _boolean(text):
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class FcSettings:
    rtol: float = 1e-6
    atol: float = 1e-8
    dt_out: float = 1e-3


@dataclass(frozen=True)
class ZohSettings:
    tau: tuple = (1 / 600,)
    check_points: int = 10


@dataclass(frozen=True)
class IdentSettings:
    tau: float = 1e-3
    t_bar: tuple = (0.1, 0.2, 0.5, 1.0)
    seeds: tuple = (0,)
    multistart: int = 20
    max_fev: int = 2000
    t_predict: float = 100.0
    box: ParamBox = field(default_factory=ParamBox)


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    t_end: float = 10.0
    seed: int = 0
    plant: MassOnCarParams = field(default_factory=MassOnCarParams)
    funnel: FunnelSpec = field(
        default_factory=lambda: FunnelSpec.from_coefficients([(0.1, 5.0, 2.0), (0.5, 10.0, 2.0)]))
    reference: ReferenceSignal = field(default_factory=ReferenceSignal)
    z0: tuple = (0.0, 0.0, 0.0, 0.0)
    performance_delta: float = 1 / 40
    performance_lam: float = 0.005
    fc: FcSettings = field(default_factory=FcSettings)
    zoh: ZohSettings = field(default_factory=ZohSettings)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    cost: StageCost = field(default_factory=StageCost)
    ident: IdentSettings = field(default_factory=IdentSettings)

    def build_plant(self):
        return MassOnCar(self.plant)

    @property
    def performance_cost(self):
        return StageCost(CLASSICAL, self.performance_lam)

    def shared_settings(self):
        """Settings two scenarios must agree on to be compared."""
        return (self.plant, self.funnel, self.reference, self.z0, self.t_end,
                self.performance_delta, self.performance_lam)


# section -> key -> (parser, attribute path)
_SCHEMA = {
    "scenario": {
        "name": (str.strip, ("name",)),
        "kind": (str.strip, ("kind",)),
        "t_end": (parse_number, ("t_end",)),
        "seed": (int, ("seed",)),
    },
    "plant": {n: (parse_number, ("plant", n)) for n in ("m1", "m2", "k", "d", "alpha")},
    "reference": {n: (parse_number, ("reference", n))
                  for n in ("amplitude", "frequency", "phase", "offset")},
    "initial": {"z0": (_numbers, ("z0",))},
    "performance": {
        "delta": (parse_number, ("performance_delta",)),
        "lam": (parse_number, ("performance_lam",)),
    },
    "fc": {n: (parse_number, ("fc", n)) for n in ("rtol", "atol", "dt_out")},
    "zoh": {
        "tau": (_numbers, ("zoh", "tau")),
        "check_points": (int, ("zoh", "check_points")),
    },
    "mpc": {
        "horizon_steps": (int, ("mpc", "horizon_steps")),
        "delta": (parse_number, ("mpc", "delta")),
        "substeps": (int, ("mpc", "substeps")),
        "integrator": (str.strip, ("mpc", "integrator")),
        "max_iter": (int, ("mpc", "max_iter")),
        "fd_step": (parse_number, ("mpc", "fd_step")),
        "barrier_weights": (_numbers, ("mpc", "barrier_weights")),
        "tol": (parse_number, ("mpc", "tol")),
        "ftol": (parse_number, ("mpc", "ftol")),
        "enforce_feasibility_constraint": (_boolean, ("mpc", "enforce_feasibility_constraint")),
        "theta_mode": (str.strip, ("mpc", "theta_mode")),
        "rollout_rtol": (parse_number, ("mpc", "rollout_rtol")),
        "rollout_atol": (parse_number, ("mpc", "rollout_atol")),
        "rollout_points": (int, ("mpc", "rollout_points")),
        "cost": (str.strip, ("cost", "kind")),
        "lam": (parse_number, ("cost", "lam")),
    },
    "ident": {
        "tau": (parse_number, ("ident", "tau")),
        "t_bar": (_numbers, ("ident", "t_bar")),
        "seeds": (_integers, ("ident", "seeds")),
        "multistart": (int, ("ident", "multistart")),
        "max_fev": (int, ("ident", "max_fev")),
        "t_predict": (parse_number, ("ident", "t_predict")),
        **{n: (_numbers, ("ident", "box", n)) for n in PHYSICAL_NAMES},
        **{f"z0_{i}": (_numbers, ("ident", "box", f"z0_{i}")) for i in range(4)},
    },
}
_LEVEL_KEY = re.compile(r"^level_(\d+)$")


def _line_of(text, section, key):
    if text is None:
        return None
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current == section and key is None:
                return no
        elif current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return no
    return None


def _raw_values(text):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None,
                                   empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed file: {exc}", line=getattr(exc, "lineno", None)) from None
    if cp.defaults():
        raise ConfigError("a [DEFAULT] section is not supported", section="DEFAULT")
    return {s: dict(cp.items(s)) for s in cp.sections()}


def parse_scenario(text, source="<string>"):
    """Parse and validate scenario text; raises ``ConfigError``."""
    raw = _raw_values(text)
    values = {}
    levels = {}
    sigma = -1.0
    for section, items in raw.items():
        if section == "funnel":
            for key, val in items.items():
                err = lambda msg: ConfigError(msg, section, key, _line_of(text, section, key))
                m = _LEVEL_KEY.match(key)
                try:
                    if m:
                        coeffs = _numbers(val)
                        if len(coeffs) != 3:
                            raise ValueError("expected three numbers 'a, b, c'")
                        levels[int(m.group(1))] = coeffs
                    elif key == "sigma":
                        sigma = parse_number(val)
                    else:
                        raise err("unknown key")
                except ValueError as exc:
                    if isinstance(exc, ConfigError):
                        raise
                    raise err(str(exc)) from None
            continue
        if section not in _SCHEMA:
            raise ConfigError("unknown section", section, None, _line_of(text, section, None))
        schema = _SCHEMA[section]
        for key, val in items.items():
            line = _line_of(text, section, key)
            if key not in schema:
                raise ConfigError("unknown key", section, key, line)
            conv, path = schema[key]
            try:
                values[path] = conv(val)
            except ValueError as exc:
                raise ConfigError(str(exc), section, key, line) from None
    for req in ("name", "kind"):
        if (req,) not in values or not values[(req,)]:
            raise ConfigError("required key missing", "scenario", req)
    return _assemble(values, levels, sigma, text)


def _sub(values, prefix):
    n = len(prefix)
    return {p[n]: v for p, v in values.items() if len(p) == n + 1 and p[:n] == prefix}


def _assemble(values, levels, sigma, text):
    def guard(section, key, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), section, key, _line_of(text, section, key)) from None

    top = _sub(values, ())
    kind = top["kind"]
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {', '.join(KINDS)}", "scenario", "kind",
                          _line_of(text, "scenario", "kind"))
    if not re.match(r"^[A-Za-z0-9_.-]+$", top["name"]):
        raise ConfigError("name may only contain letters, digits, '_', '.', '-'",
                          "scenario", "name", _line_of(text, "scenario", "name"))
    plant = guard("plant", None, MassOnCarParams, **_sub(values, ("plant",)))
    r = MassOnCar(plant).relative_degree
    if levels:
        if sorted(levels) != list(range(len(levels))):
            raise ConfigError("levels must be numbered level_0, level_1, ... without gaps", "funnel")
        coeffs = [levels[i] for i in range(len(levels))]
    else:
        coeffs = Scenario.__dataclass_fields__["funnel"].default_factory().levels
        coeffs = [(lv.a, lv.b, lv.c) for lv in coeffs]
    if len(coeffs) != r:
        raise ConfigError(f"{len(coeffs)} funnel levels given but the plant has relative "
                          f"degree {r}", "funnel", None, _line_of(text, "funnel", None))
    funnel = guard("funnel", None, FunnelSpec.from_coefficients, coeffs, sigma)
    reference = guard("reference", None, ReferenceSignal, **_sub(values, ("reference",)))

    z0 = tuple(top.get("z0", (0.0, 0.0, 0.0, 0.0)))
    if len(z0) != 4:
        raise ConfigError("z0 needs four entries", "initial", "z0", _line_of(text, "initial", "z0"))
    for section, key, val in (("scenario", "t_end", top.get("t_end", 10.0)),
                              ("performance", "delta", top.get("performance_delta", 1 / 40)),
                              ("performance", "lam", top.get("performance_lam", 0.005))):
        if not (math.isfinite(val) and val > 0):
            raise ConfigError("must be positive", section, key, _line_of(text, section, key))
    fc = FcSettings(**_sub(values, ("fc",)))
    if not all(v > 0 for v in dataclasses.astuple(fc)):
        raise ConfigError("fc settings must be positive", "fc")
    zoh = ZohSettings(**_sub(values, ("zoh",)))
    if not zoh.tau or not all(t > 0 for t in zoh.tau):
        raise ConfigError("sampling periods must be positive", "zoh", "tau",
                          _line_of(text, "zoh", "tau"))
    if zoh.check_points < 0:
        raise ConfigError("must be >= 0", "zoh", "check_points")
    mpc = guard("mpc", None, MpcConfig, **_sub(values, ("mpc",)))
    cost_kw = _sub(values, ("cost",))
    if cost_kw.get("kind", CLASSICAL) not in (CLASSICAL, FUNNEL):
        raise ConfigError(f"cost must be {CLASSICAL!r} or {FUNNEL!r}", "mpc", "cost",
                          _line_of(text, "mpc", "cost"))
    cost = guard("mpc", None, StageCost, **cost_kw)
    if mpc.theta_mode not in (AT_INITIAL_TIME, MIN_OVER_HORIZON):
        raise ConfigError("unknown theta mode", "mpc", "theta_mode")

    box_kw = {}
    for n, v in _sub(values, ("ident", "box")).items():
        if len(v) != 2:
            raise ConfigError("expected an interval 'lower, upper'", "ident", n,
                              _line_of(text, "ident", n))
        box_kw[n] = v
    z0_box = list(ParamBox().z0)
    for i in range(4):
        if f"z0_{i}" in box_kw:
            z0_box[i] = box_kw.pop(f"z0_{i}")
    box = guard("ident", None, ParamBox, z0=tuple(z0_box), **box_kw)
    ident_kw = _sub(values, ("ident",))
    ident = IdentSettings(box=box, **ident_kw)
    if not (ident.tau > 0 and ident.t_predict > 0 and ident.t_bar and ident.seeds):
        raise ConfigError("tau, t_predict, t_bar and seeds must be non-empty and positive", "ident")
    if any(tb < 2 * ident.tau for tb in ident.t_bar):
        raise ConfigError("every t_bar must cover at least two sampling periods", "ident", "t_bar")
    if ident.multistart < 1 or ident.max_fev < 1:
        raise ConfigError("multistart and max_fev must be >= 1", "ident")

    return Scenario(
        name=top["name"], kind=kind, t_end=top.get("t_end", 10.0), seed=top.get("seed", 0),
        plant=plant, funnel=funnel, reference=reference, z0=z0,
        performance_delta=top.get("performance_delta", 1 / 40),
        performance_lam=top.get("performance_lam", 0.005),
        fc=fc, zoh=zoh, mpc=mpc, cost=cost, ident=ident,
    )


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text, str(path))


def scenario_to_ini(sc):
    """Complete INI text for ``sc``; parsing it back yields an equal scenario."""
    out = []

    def section(name, pairs):
        out.append(f"[{name}]")
        out.extend(f"{k} = {_fmt(v)}" for k, v in pairs)
        out.append("")

    section("scenario", [("name", sc.name), ("kind", sc.kind), ("t_end", float(sc.t_end)),
                         ("seed", sc.seed)])
    section("plant", [(n, float(getattr(sc.plant, n))) for n in ("m1", "m2", "k", "d", "alpha")])
    section("funnel", [(f"level_{i}", (float(lv.a), float(lv.b), float(lv.c)))
                       for i, lv in enumerate(sc.funnel.levels)] + [("sigma", float(sc.funnel.sigma))])
    section("reference", [(n, float(getattr(sc.reference, n)))
                          for n in ("amplitude", "frequency", "phase", "offset")])
    section("initial", [("z0", tuple(float(v) for v in sc.z0))])
    section("performance", [("delta", float(sc.performance_delta)),
                            ("lam", float(sc.performance_lam))])
    section("fc", [(n, float(v)) for n, v in dataclasses.asdict(sc.fc).items()])
    section("zoh", [("tau", tuple(float(t) for t in sc.zoh.tau)),
                    ("check_points", sc.zoh.check_points)])
    mpc = [(k, v) for k, v in dataclasses.asdict(sc.mpc).items()]
    mpc = [(k, float(v) if isinstance(v, float) else v) for k, v in mpc]
    section("mpc", mpc + [("cost", sc.cost.kind), ("lam", float(sc.cost.lam))])
    box = sc.ident.box
    section("ident", [
        ("tau", float(sc.ident.tau)), ("t_bar", tuple(float(t) for t in sc.ident.t_bar)),
        ("seeds", tuple(sc.ident.seeds)), ("multistart", sc.ident.multistart),
        ("max_fev", sc.ident.max_fev), ("t_predict", float(sc.ident.t_predict)),
        *[(n, tuple(float(v) for v in getattr(box, n))) for n in PHYSICAL_NAMES],
        *[(f"z0_{i}", tuple(float(v) for v in iv)) for i, iv in enumerate(box.z0)],
    ])
    return "\n".join(out)


def with_override(sc, dotted, value_text):
    """Copy of ``sc`` with ``section.key`` replaced, revalidated from text."""
    if "." not in dotted:
        raise ConfigError("parameter must be written 'section.key'", field=dotted)
    section, key = dotted.split(".", 1)
    text = scenario_to_ini(sc)
    lines = text.split("\n")
    current = None
    replaced = False
    for i, line in enumerate(lines):
        if line.startswith("["):
            current = line[1:-1]
        elif current == section and line.split("=", 1)[0].strip() == key:
            lines[i] = f"{key} = {value_text}"
            replaced = True
    if not replaced:
        if section != "funnel" and (section not in _SCHEMA or key not in _SCHEMA[section]):
            raise ConfigError("unknown key", section, key)
        idx = lines.index(f"[{section}]")
        lines.insert(idx + 1, f"{key} = {value_text}")
    return parse_scenario("\n".join(lines))
