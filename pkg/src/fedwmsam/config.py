"""INI experiment files and presets.

Layout (every section and key optional; unknown ones are errors)::

    [experiment]
    name = demo
    preset = paper-defaults
    out = results
    emit_plots = true

    [run]           ; n_clients, sample_rate, rounds, seed, problem_seed, eval_every, workers
    [optimizer]     ; kind, eta_l, eta_g, rho, alpha0, lambda, alpha_lo, alpha_hi, ...
    [objective]     ; kind, dim, hetero, cond, sigma, classes, features, ...
    [partition]     ; kind, beta, gamma
    [scan]          ; axis, values, seeds
    [compare]       ; kinds

Values left out come from the preset, then from the dataclass defaults.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace

from .algorithms import ConfigError, OptimizerConfig
from .engine import ObjectiveSpec, PartitionSpec, RunConfig

_SAFE_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")

PRESETS = {
    "paper-defaults": {
        "run": {"n_clients": "20", "sample_rate": "0.2", "rounds": "200", "eval_every": "5"},
        "optimizer": {"kind": "fedwmsam", "eta_l": "0.1", "eta_g": "1.0", "rho": "0.01",
                      "alpha0": "0.1", "lambda": "0.01", "alpha_lo": "0.1", "alpha_hi": "0.9",
                      "local_steps": "5", "batch_size": "10"},
        "objective": {"kind": "logistic", "classes": "10", "features": "10",
                      "per_class": "100", "test_per_class": "50", "spread": "1.0"},
        "partition": {"kind": "dirichlet", "beta": "0.1"},
    },
    "convex-sanity": {
        "run": {"n_clients": "20", "sample_rate": "1.0", "rounds": "500", "eval_every": "1"},
        "optimizer": {"kind": "fedwmsam", "local_steps": "1", "batch_size": "1"},
        "objective": {"kind": "quadratic", "dim": "50", "hetero": "1.0", "cond": "10",
                      "sigma": "0"},
    },
    "theory-checks": {
        "run": {"n_clients": "20", "sample_rate": "0.5", "rounds": "200", "eval_every": "50"},
        "optimizer": {"kind": "fedwmsam", "eta_l": "0.01", "local_steps": "5",
                      "scaffold_scaling": "true"},
        "objective": {"kind": "quadratic", "dim": "10", "hetero": "1.0", "cond": "10",
                      "sigma": "0.5"},
        "scan": {"axis": "R", "values": "50, 100, 200, 400", "seeds": "0, 1, 2, 3, 4"},
    },
}


@dataclass(frozen=True)
class ScanSpec:
    axis: str = "R"
    values: tuple = (50, 100, 200, 400)
    seeds: tuple = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "experiment"
    run: RunConfig = field(default_factory=RunConfig)
    outputs: str = "results"
    emit_plots: bool = True
    scan: ScanSpec = field(default_factory=ScanSpec)
    compare_kinds: tuple = ("fedavg", "fedwmsam")


# key aliases: INI name -> dataclass field
_ALIASES = {"optimizer": {"lambda": "lam"}}

_SECTIONS = {
    "experiment": {"name": "str", "preset": "str", "out": "str", "emit_plots": "bool"},
    "scan": {"axis": "str", "values": "ints", "seeds": "ints"},
    "compare": {"kinds": "strs"},
}


def _field_types(cls) -> dict:
    return {f.name: f.type for f in fields(cls)}


_SECTIONS["run"] = {k: t for k, t in _field_types(RunConfig).items()
                    if k not in ("optimizer", "objective", "partition")}
_SECTIONS["optimizer"] = {("lambda" if k == "lam" else k): t
                          for k, t in _field_types(OptimizerConfig).items()}
_SECTIONS["objective"] = _field_types(ObjectiveSpec)
_SECTIONS["partition"] = _field_types(PartitionSpec)


def _convert(raw: str, typ: str, where: str):
    raw = raw.strip()
    optional = "None" in typ
    if optional and raw.lower() in ("", "none"):
        return None
    base = typ.replace("| None", "").strip()
    try:
        if base == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        if base == "ints":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if base == "strs":
            return tuple(v for v in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {base}") from None


def _line_of(text: str, section: str, key: str) -> int | None:
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return i
    return None


def _read(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None,
                                   default_section="__defaults__")
    cp.optionxform = str  # keep keys as typed so errors quote them verbatim
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"line {exc.lineno}: key outside any [section]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate key {exc.option!r} "
                          f"in [{exc.section}]") from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else "?"
        raise ConfigError(f"line {lineno}: cannot parse {exc.errors[0][1].strip()!r}") from None
    return cp


def parse_config(text: str, preset: str | None = None) -> ExperimentSpec:
    """Validated experiment from INI ``text``; ``preset`` overrides the file's preset key."""
    cp = _read(text)
    values: dict[str, dict] = {}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}] (known: {', '.join(_SECTIONS)})")
        for key, raw in cp.items(sec):
            ln = _line_of(text, sec, key)
            where = f"line {ln}: [{sec}] {key}" if ln else f"[{sec}] {key}"
            if key not in _SECTIONS[sec]:
                raise ConfigError(f"{where}: unknown key {key!r} "
                                  f"(known: {', '.join(sorted(_SECTIONS[sec]))})")
            values.setdefault(sec, {})[key] = (raw, where)

    name = preset or (values.get("experiment", {}).get("preset", (None,))[0])
    merged: dict[str, dict] = {}
    if name is not None:
        name = name.strip()
        if name not in PRESETS:
            raise ConfigError(f"preset: unknown preset {name!r} (known: {', '.join(PRESETS)})")
        for sec, kv in PRESETS[name].items():
            for k, raw in kv.items():
                merged.setdefault(sec, {})[k] = (raw, f"preset {name}: [{sec}] {k}")
    for sec, kv in values.items():
        merged.setdefault(sec, {}).update(kv)

    def section(sec):
        out = {}
        for key, (raw, where) in merged.get(sec, {}).items():
            val = _convert(raw, _SECTIONS[sec][key], where)
            out[_ALIASES.get(sec, {}).get(key, key)] = val
        return out

    def build(cls, sec, **kw):
        try:
            return cls(**section(sec), **kw)
        except ConfigError as exc:
            raise ConfigError(f"[{sec}] {exc}") from None

    opt = build(OptimizerConfig, "optimizer")
    obj = build(ObjectiveSpec, "objective")
    part = build(PartitionSpec, "partition")
    run = build(RunConfig, "run", optimizer=opt, objective=obj, partition=part)
    exp = section("experiment")
    exp.pop("preset", None)
    sc = build(ScanSpec, "scan")
    if sc.axis not in ("S", "K", "R"):
        raise ConfigError("[scan] axis: must be S, K or R")
    kinds = section("compare").get("kinds", ExperimentSpec.compare_kinds)
    for k in kinds:
        try:
            replace(opt, kind=k)
        except ConfigError as exc:
            raise ConfigError(f"[compare] kinds: {exc}") from None
    spec = ExperimentSpec(name=exp.get("name", name or "experiment"), run=run,
                          outputs=exp.get("out", "results"),
                          emit_plots=exp.get("emit_plots", True), scan=sc,
                          compare_kinds=tuple(kinds))
    if not _SAFE_NAME.match(spec.name):
        raise ConfigError(f"[experiment] name: {spec.name!r} is not filesystem-safe")
    return spec


def load_config(path, preset: str | None = None) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), preset)
