"""Experiment configuration: TOML schema, validation, defaults, round-trip emission."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

KINDS = ("rates", "kinetic", "moments", "pdf-steady", "pdf-evolve", "ensemble", "cap-experiment", "scaling")
STOCHASTIC = ("ensemble", "cap-experiment")


class ConfigError(ValueError):
    """Parse or schema error; ``where`` is 'line L, column C' or a dotted key path."""

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


# section -> dotted key -> (type, default); a None default means optional with no value.
# Dotted keys are nested TOML tables, e.g. ``[wave_model.grid] n = 16``.
SCHEMA: dict[str, dict[str, tuple]] = {
    "wave_model": {
        "grid.d": (int, 1),
        "grid.n": (int, 16),
        "grid.length": (float, 2 * math.pi),
        "dispersion.kind": (str, "power_law"),
        "dispersion.c": (float, 1.0),
        "dispersion.alpha": (float, 2.0),
        "dispersion.g": (float, 9.81),
        "interaction.kind": (str, "constant"),
        "interaction.w0": (float, 1.0),
        "interaction.beta": (float, 0.0),
        "epsilon": (float, 0.1),
    },
    "spectrum": {
        "kind": (str, "lorentzian"),
        "amplitude": (float, 1.0),
        "width": (float, 1.0),
        "exponent": (float, 2.0),
    },
    "collision": {
        "T": (float, None),
        "convention": (str, "equilibrium"),
        "continuum": (bool, False),
        "quad_nodes": (int, 64),
        "quad_box": (float, 10.0),
        "root_tol": (float, 1e-12),
    },
    "kinetic": {
        "t_end": (float, None),
        "dt": (float, None),
        "record_every": (int, 1),
        "pmax": (int, 6),
        "n0": (float, 1.0),
        "eta": (float, None),
        "gamma": (float, None),
    },
    "pdf": {
        "n": (float, 1.0),
        "gamma": (float, 1.0),
        "flux": (float, 0.0),
        "smax_over_n": (float, 50.0),
        "snl_over_n": (float, None),
        "points": (int, 400),
        "cells": (int, 400),
        "boundary": (str, "zero_flux"),
        "cutoff_weight": (float, 0.4),
        "scheme": (str, "sg"),
        "t_end": (float, 10.0),
        "dt": (float, None),
        "snapshots": (int, 10),
    },
    "ensemble": {
        "realizations": (int, 100),
        "t_end": (float, 1.0),
        "dt": (float, None),
        "scheme": (str, "rk4"),
        "sampler": (str, "rayleigh"),
        "record_every": (int, None),
        "bins": (int, 30),
        "bin_max": (float, 6.0),
        "save_states": (bool, False),
        "t_spinup": (float, 100.0),
        "t_sample": (float, 100.0),
        "sample_every": (int, 100),
        "mode": (int, None),
    },
    "forcing": {"kmin": (float, 0.5), "kmax": (float, 2.5), "rate": (float, 0.01)},
    "damping": {"kmin": (float, 4.5), "rate": (float, 2.0)},
    "cap": {
        "s_nl": (float, None),
        "policy": (str, "clip"),
        "cadence": (int, 1),
        "excess_at": (float, 8.0),
        "excess_threshold": (float, 10.0),
    },
    "scaling": {
        "g": (float, 9.81),
        "energy_flux": (float, 1.0),
        "action_flux": (float, 1.0),
        "kmin": (float, 0.1),
        "kmax": (float, 100.0),
        "points": (int, 50),
    },
}

# sections each kind uses (filled with defaults)
NEEDS = {
    "rates": ("wave_model", "spectrum", "collision"),
    "kinetic": ("wave_model", "spectrum", "collision", "kinetic"),
    "moments": ("kinetic",),
    "pdf-steady": ("pdf",),
    "pdf-evolve": ("pdf",),
    "ensemble": ("wave_model", "spectrum", "ensemble"),
    "cap-experiment": ("wave_model", "ensemble", "forcing", "damping", "cap"),
    "scaling": ("scaling",),
}
# keys that must be given explicitly for a kind
REQUIRES = {
    "kinetic": ("kinetic.t_end", "kinetic.dt"),
    "moments": ("kinetic.t_end", "kinetic.dt", "kinetic.eta", "kinetic.gamma"),
    "cap-experiment": ("cap.s_nl",),
}

CHOICES = {
    ("wave_model", "dispersion.kind"): ("power_law", "deep_water"),
    ("wave_model", "interaction.kind"): ("constant", "product_power"),
    ("spectrum", "kind"): ("lorentzian", "gaussian", "power", "constant"),
    ("collision", "convention"): ("equilibrium", "literal"),
    ("pdf", "boundary"): ("zero_flux", "injection", "absorbing"),
    ("pdf", "scheme"): ("sg", "central"),
    ("ensemble", "scheme"): ("rk4", "ifrk4"),
    ("ensemble", "sampler"): ("rayleigh", "deterministic"),
    ("cap", "policy"): ("clip", "redistribute"),
}


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _nest(flat: dict) -> dict:
    out: dict = {}
    for key, v in flat.items():
        if v is None:
            continue
        node = out
        *head, last = key.split(".")
        for h in head:
            node = node.setdefault(h, {})
        node[last] = v
    return out


@dataclass
class ExperimentConfig:
    kind: str
    seed: int | None = None
    out: str | None = None
    sections: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.sections[name]

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.seed is not None:
            d["seed"] = self.seed
        if self.out is not None:
            d["out"] = self.out
        for name, sec in self.sections.items():
            d[name] = _nest(sec)
        return d


def _coerce(value, typ, where):
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", where)
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", where)
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", where)
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", where)
    return value


def validate(raw: dict) -> ExperimentConfig:
    """Check a parsed document against the schema and fill defaults."""
    if "kind" not in raw:
        raise ConfigError("missing key", "kind")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}", "kind")
    seed = raw.get("seed")
    if seed is not None:
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer", "seed")
    elif kind in STOCHASTIC:
        raise ConfigError(f"missing key (required for kind {kind!r})", "seed")
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("expected a string", "out")
    allowed = set(NEEDS[kind])
    sections = {}
    for key, val in raw.items():
        if key in ("kind", "seed", "out"):
            continue
        if key not in SCHEMA:
            raise ConfigError("unknown key", key)
        if key not in allowed:
            raise ConfigError(f"section not used by kind {kind!r}", key)
        if not isinstance(val, dict):
            raise ConfigError("expected a table", key)
    for name in NEEDS[kind]:
        given = _flatten(raw.get(name, {}))
        spec = SCHEMA[name]
        for key in given:
            if key not in spec:
                raise ConfigError("unknown key", f"{name}.{key}")
        sec = {}
        for key, (typ, default) in spec.items():
            where = f"{name}.{key}"
            if key in given:
                v = _coerce(given[key], typ, where)
            elif where in REQUIRES.get(kind, ()):
                raise ConfigError(f"missing key (required for kind {kind!r})", where)
            else:
                v = default
            if (name, key) in CHOICES and v not in CHOICES[(name, key)]:
                raise ConfigError(f"{v!r} not in {CHOICES[(name, key)]}", where)
            sec[key] = v
        sections[name] = sec
    return ExperimentConfig(kind, seed, out, sections)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        # tomli >= 2.1 exposes the position; older versions only put it in the message
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        where = f"line {line}, column {col}" if line is not None else None
        msg = getattr(exc, "msg", str(exc))
        raise ConfigError(f"parse error: {msg}", where) from exc
    return validate(raw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file not found", str(path))
    return parse_config(path.read_text())


def emit_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())
