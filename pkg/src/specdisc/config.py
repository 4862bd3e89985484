"""INI experiment configuration with lossless round trips."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields

SUBCOMMANDS = ("weyl", "agmon", "delta", "wkb", "finsler-dist")


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(t) for t in text.replace(";", ",").split(",") if t.strip())


def _vectors(text):
    # "1,0; 1,1" -> ((1, 0), (1, 1))
    return tuple(tuple(int(c) for c in part.split(",")) for part in text.split(";") if part.strip())


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(",".join(str(c) for c in v) for v in value)
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _opt_float(text):
    return None if text.strip().lower() in ("auto", "none", "") else float(text)


def _opt_floats(text):
    return None if text.strip().lower() in ("auto", "none", "") else _floats(text)


# name -> (section, parser)
SCHEMA = {
    "subcommand": ("experiment", str),
    "seed": ("experiment", int),
    "expr": ("potential", str),
    "dim": ("potential", int),
    "a": ("energies", float),
    "b": ("energies", float),
    "energy": ("energies", float),
    "h": ("mesh", _floats),
    "box": ("mesh", str),
    "margin": ("mesh", float),
    "radii": ("mesh", _opt_floats),
    "half_width": ("mesh", float),
    "rx": ("volume", _opt_float),
    "samples": ("volume", int),
    "replicates": ("volume", int),
    "ratio_tol": ("volume", float),
    "stencil": ("distance", int),
    "pitch": ("distance", float),
    "quad_nodes": ("distance", int),
    "extent": ("distance", float),
    "epsilon": ("decay", float),
    "fft_size": ("delta", int),
    "directions": ("delta", _vectors),
    "n_min": ("delta", int),
    "n_max": ("delta", int),
    "shift": ("delta", float),
    "tol": ("solver", float),
    "max_iter": ("solver", int),
    "wkb_pitch": ("wkb", float),
    "control_offset": ("wkb", float),
}


@dataclass(frozen=True)
class ExperimentConfig:
    subcommand: str
    expr: str = ""
    dim: int = 1
    seed: int = 0
    a: float = -1.5
    b: float = -0.5
    energy: float = -1.0
    h: tuple = (0.1, 0.05)
    box: str = "auto"  # "auto": Agmon margin; "radii": fixed physical half-widths
    margin: float = 25.0
    radii: tuple | None = None
    half_width: float = 3.0
    rx: float | None = None
    samples: int = 16384
    replicates: int = 16
    ratio_tol: float = 0.1
    stencil: int = 3
    pitch: float = 0.01
    quad_nodes: int = 5
    extent: float = 4.0
    epsilon: float = 0.1
    fft_size: int = 512
    directions: tuple = ((1, 0), (1, 1))
    n_min: int = 10
    n_max: int = 30
    shift: float = 0.1
    tol: float = 1e-12
    max_iter: int = 5000
    wkb_pitch: float = 0.005
    control_offset: float = 0.1

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}; expected one of {', '.join(SUBCOMMANDS)}")
        if self.dim not in (1, 2, 3):
            raise ConfigError("dim must be 1, 2 or 3")
        if self.box not in ("auto", "radii"):
            raise ConfigError("box must be 'auto' or 'radii'")
        if self.box == "radii" and self.radii is None:
            raise ConfigError("box = radii needs a radii entry")
        if self.subcommand != "delta" and not self.expr:
            raise ConfigError("[potential] expr is required")

    def to_ini(self) -> str:
        sections: dict[str, list[str]] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            sec = SCHEMA[f.name][0]
            text = "auto" if value is None else _fmt(value)
            sections.setdefault(sec, []).append(f"{f.name} = {text}")
        out = io.StringIO()
        for sec, lines in sections.items():
            out.write(f"[{sec}]\n")
            for line in lines:
                out.write(line + "\n")
            out.write("\n")
        return out.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()[:16]

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(_parse_values(overrides))
        return ExperimentConfig(**values)


def _parse_values(raw: dict) -> dict:
    out = {}
    for key, text in raw.items():
        name = key.split(".", 1)[-1]
        if name not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        try:
            out[name] = SCHEMA[name][1](text)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
    return out


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    raw = {}
    for sec in parser.sections():
        for key, value in parser.items(sec):
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            if SCHEMA[key][0] != sec:
                raise ConfigError(f"key {key!r} belongs in section [{SCHEMA[key][0]}], not [{sec}]")
            raw[key] = value
    if "subcommand" not in raw:
        raise ConfigError("[experiment] subcommand is required")
    values = _parse_values(raw)
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)
