"""Run configuration files.

The format is a strict INI subset read with :mod:`configparser`:

* ``[section]`` headers and ``key = value`` lines; ``#`` or ``;`` start a
  comment line.  Keys are case-sensitive.
* Only the sections and keys listed in :data:`SCHEMA` are accepted.
  Anything else is an error, as are duplicate keys and interpolation.
* Values are numbers, bare words, cells ``x,y`` or cell lists
  ``x,y; x,y``.  ``inf`` is accepted where a resistance may be infinite.

Every key has a default, so an empty file is a valid configuration.
:func:`echo_config` writes a complete file back with floats in ``repr``
form, and ``parse_config(echo_config(c)) == c``.

Example::

    [device]
    R_H = 2.73
    R_L = 0.67
    v_l = 1.0
    v_h = 2.0

    [scenario]
    template = wave
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

from ..cell import C0, T0, DDCellConfig, DRConfig, RhsModel
from ..device import DeviceParams
from ..lattice import CouplingParams

__all__ = [
    "ConfigError",
    "SimConfig",
    "SCHEMA",
    "parse_config",
    "load_config",
    "echo_config",
    "default_config",
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


def _float(text: str) -> float:
    x = float(text)
    if math.isnan(x):
        raise ValueError("NaN is not allowed")
    return x


def _int(text: str) -> int:
    return int(text)


def _word(*choices):
    def parse(text: str) -> str:
        if text not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}")
        return text
    parse.choices = choices
    return parse


def _cell(text: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError("expected a cell 'x,y'")
    return (int(parts[0]), int(parts[1]))


def _cells(text: str):
    text = text.strip()
    if not text:
        return ()
    return tuple(_cell(p) for p in text.split(";"))


def _optional_cell(text: str):
    return None if text.strip() == "none" else _cell(text)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        raise TypeError("booleans are not part of the format")
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return value
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return "; ".join(f"{x},{y}" for x, y in value)
    if isinstance(value, tuple) and len(value) == 2:
        return f"{value[0]},{value[1]}"
    if isinstance(value, tuple):
        return ""
    raise TypeError(f"cannot format {value!r}")


# section -> key -> (parser, default)
SCHEMA: Dict[str, Dict[str, tuple]] = {
    "units": {
        "R0": (_float, 1.0),
        "V0": (_float, 1.0),
        "C0": (_float, 1.0),
    },
    "device": {
        "R_H": (_float, 2.73),
        "R_L": (_float, 0.67),
        "v_l": (_float, 1.0),
        "v_h": (_float, 2.0),
    },
    "cell": {
        "kind": (_word("dd", "dr"), "dd"),
        "V_DD": (_float, 3.0),
        "cap": (_float, C0),
        "R_S": (_float, 1.0),
        "rhs_model": (_word("exact", "paper"), "exact"),
        "v_init": (_float, 1.5),
    },
    "coupling": {
        "r_on": (_float, 0.1),
        "r_off": (_float, 10.0),
        "c_couple": (_float, 0.25 * C0),
    },
    "grid": {
        "width": (_int, 30),
        "height": (_int, 30),
        "boundary": (_word("open", "periodic"), "open"),
        "edge_mode": (_word("on", "off"), "on"),
        "perturb_cell": (_optional_cell, None),
        "perturb_dv": (_float, 0.0),
    },
    "scenario": {
        "template": (_word("none", "vortex", "wave", "life"), "none"),
        "center": (_cell, (15, 15)),
        "radius": (_float, 7.0),
        "seed_cell": (_optional_cell, (2, 15)),
        "seed_amplitude": (_float, 1e-2),
        "alive": (_cells, ((1, 1), (2, 1), (1, 2), (2, 2))),
        "generation_period": (_float, 4.0 * T0),
        "life_mode": (_word("conway", "scripted"), "conway"),
        "edge_rule": (_word("boundary", "incident"), "boundary"),
    },
    "run": {
        "dt": (_float, 1e-3 * T0),
        "duration": (_float, 10.0 * T0),
        "snapshot_cadence": (_float, 0.05 * T0),
        "trace_cells": (_cells, ()),
        "output_dir": (str, "out"),
        "seed": (_int, 0),
    },
}


@dataclass(frozen=True)
class SimConfig:
    """Validated configuration: ``values[section][key]`` for every schema key.

    ``explicit`` records which keys were given in the source file, so
    callers can tell a defaulted duration from a requested one.
    """

    values: Dict[str, Dict[str, Any]]
    explicit: frozenset = frozenset()

    def __getitem__(self, path: str):
        section, key = path.split(".")
        return self.values[section][key]

    def __eq__(self, other):
        return isinstance(other, SimConfig) and self.values == other.values

    def replace(self, **paths) -> "SimConfig":
        """New config with ``section__key=value`` overrides, revalidated."""
        values = {s: dict(kv) for s, kv in self.values.items()}
        explicit = set(self.explicit)
        for name, value in paths.items():
            section, key = name.split("__")
            if key not in SCHEMA.get(section, {}):
                raise ConfigError(f"{section}.{key}: unknown key")
            values[section][key] = value
            explicit.add(f"{section}.{key}")
        cfg = SimConfig(values, frozenset(explicit))
        _validate(cfg)
        return cfg

    def device_params(self) -> DeviceParams:
        d = self.values["device"]
        return DeviceParams(d["R_H"], d["R_L"], d["v_l"], d["v_h"])

    def cell_config(self):
        c = self.values["cell"]
        dev = self.device_params()
        if c["kind"] == "dr":
            return DRConfig(dev, c["R_S"], c["V_DD"], c["cap"], RhsModel(c["rhs_model"]))
        return DDCellConfig(dev, dev, c["V_DD"], c["cap"], RhsModel(c["rhs_model"]))

    def dd_config(self) -> DDCellConfig:
        c = self.values["cell"]
        dev = self.device_params()
        return DDCellConfig(dev, dev, c["V_DD"], c["cap"], RhsModel(c["rhs_model"]))

    def coupling(self) -> CouplingParams:
        k = self.values["coupling"]
        return CouplingParams(k["r_on"], k["r_off"], k["c_couple"])


def _check(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _validate(cfg: SimConfig) -> None:
    v = cfg.values
    d = v["device"]
    _check(d["R_L"] > 0, "device.R_L", f"must be positive, got {d['R_L']}")
    _check(d["R_H"] > d["R_L"], "device.R_H",
           f"must exceed device.R_L ({d['R_L']}), got {d['R_H']}")
    _check(d["v_l"] > 0, "device.v_l", f"must be positive, got {d['v_l']}")
    _check(math.isfinite(d["v_h"]) and d["v_h"] > d["v_l"], "device.v_h/device.v_l",
           f"need device.v_l < device.v_h, got v_l={d['v_l']}, v_h={d['v_h']}")
    c = v["cell"]
    for key in ("V_DD", "cap", "R_S"):
        _check(math.isfinite(c[key]) and c[key] > 0, f"cell.{key}", f"must be positive, got {c[key]}")
    k = v["coupling"]
    _check(k["r_on"] > 0, "coupling.r_on", f"must be positive, got {k['r_on']}")
    _check(k["r_off"] >= k["r_on"], "coupling.r_off",
           f"must be >= coupling.r_on ({k['r_on']}), got {k['r_off']}")
    _check(math.isfinite(k["c_couple"]) and k["c_couple"] >= 0, "coupling.c_couple",
           f"must be >= 0, got {k['c_couple']}")
    for key in ("R0", "V0", "C0"):
        _check(math.isfinite(v["units"][key]) and v["units"][key] > 0, f"units.{key}",
               f"must be positive, got {v['units'][key]}")
    g = v["grid"]
    _check(g["width"] >= 1, "grid.width", f"must be >= 1, got {g['width']}")
    _check(g["height"] >= 1, "grid.height", f"must be >= 1, got {g['height']}")
    r = v["run"]
    _check(math.isfinite(r["dt"]) and r["dt"] > 0, "run.dt", f"must be positive, got {r['dt']}")
    _check(math.isfinite(r["duration"]) and r["duration"] >= 0, "run.duration",
           f"must be >= 0, got {r['duration']}")
    _check(r["snapshot_cadence"] > 0, "run.snapshot_cadence",
           f"must be positive, got {r['snapshot_cadence']}")
    s = v["scenario"]
    _check(s["radius"] >= 0, "scenario.radius", f"must be >= 0, got {s['radius']}")
    _check(s["generation_period"] > 0, "scenario.generation_period",
           f"must be positive, got {s['generation_period']}")
    bound = stability_bound_for(cfg)
    _check(r["dt"] < bound, "run.dt", f"{r['dt']} is not below the stability bound {bound:.6g}")


def stability_bound_for(cfg: SimConfig) -> float:
    """Explicit-step bound ``2*lambda_min(M)/g_max`` for the configured network.

    ``lambda_min(M)`` is the cell capacitance; ``g_max`` adds the largest
    cell branch conductance and four On edges (one for a single cell run).
    """
    d, c, k, g = (cfg.values[s] for s in ("device", "cell", "coupling", "grid"))
    g_dev = 1.0 / d["R_L"]
    if c["kind"] == "dr":
        g_cell = g_dev + 1.0 / c["R_S"]
    else:
        g_cell = 2.0 * g_dev
    if cfg.values["scenario"]["template"] != "none" or g["width"] * g["height"] > 1:
        deg = min(4, (g["width"] > 1) * 2 + (g["height"] > 1) * 2)
        g_cell += deg / k["r_on"]
    return 2.0 * c["cap"] / g_cell


def default_config() -> SimConfig:
    return parse_config("")


def parse_config(text: str) -> SimConfig:
    """Parse and validate configuration text; see the module docstring."""
    parser = configparser.ConfigParser(interpolation=None, strict=True,
                                       comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=None,
                                       default_section="\x00defaults")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    values = {s: {k: default for k, (_, default) in keys.items()} for s, keys in SCHEMA.items()}
    explicit = set()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{section}: unknown section (expected one of {', '.join(SCHEMA)})")
        for key, raw in parser.items(section):
            path = f"{section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key")
            parse: Callable = SCHEMA[section][key][0]
            try:
                values[section][key] = parse(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}: cannot parse {raw.strip()!r} ({exc})") from None
            explicit.add(path)
    cfg = SimConfig(values, frozenset(explicit))
    _validate(cfg)
    return cfg


def load_config(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def echo_config(cfg: SimConfig) -> str:
    """Complete configuration text with every default written out."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {_fmt(cfg.values[section][key])}".rstrip())
        lines.append("")
    return "\n".join(lines)
