"""Flat ``key = value`` run configuration.

One file configures data generation, the model and training.  Keys are the
field names of the dataclasses they feed; unknown keys are rejected so typos
do not pass silently.  ``#`` and ``;`` start comments.
"""

import configparser
import dataclasses
from pathlib import Path

from .datagen import SynthDiffusionSpec, SynthRankingSpec
from .layer import CoMGNNConfig
from .stcomgnn import STConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


_SECTION = "run"

# which dataclass consumes which key; "seed" and "task" come from flags
GROUPS = {
    "train": (TrainConfig, {"task", "seed"}),
    "model": (CoMGNNConfig, {"ablation"}),
    "st": (STConfig, {"spatial"}),
    "ranking_data": (SynthRankingSpec, {"seed"}),
    "forecast_data": (SynthDiffusionSpec, {"seed"}),
}


def _fields(group: str) -> dict:
    cls, skip = GROUPS[group]
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}


def known_keys() -> dict:
    """key -> list of groups reading it."""
    out = {}
    for g in GROUPS:
        for k in _fields(g):
            out.setdefault(k, []).append(g)
    return out


def _default_of(group: str, key: str):
    cls, _ = GROUPS[group]
    return getattr(cls(), key)


def _convert(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None
    return raw


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse config text into ``{key: typed value}``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), delimiters=("=",),
                                   interpolation=None)
    try:
        cp.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = known_keys()
    out = {}
    for key, raw in cp.items(_SECTION):
        if key not in known:
            raise ConfigError(f"{source}: unknown key {key!r}")
        out[key] = _convert(raw.strip(), _default_of(known[key][0], key), key)
    return out


def load(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_text(p.read_text(encoding="utf-8"), str(p))


def pick(values: dict, group: str) -> dict:
    """The subset of ``values`` that feeds ``group``."""
    names = _fields(group)
    return {k: v for k, v in values.items() if k in names}


def dump(values: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(values.items()))


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)
