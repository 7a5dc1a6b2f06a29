"""Run configuration: INI file plus command-line overrides, validated as a whole.

Schema (every key optional; unknown sections or keys are errors)::

    [run]
    seed = 0             ; required by stochastic commands
    out = runs           ; parent of the per-run directories
    dataset = path       ; tensor archive directory
    checkpoint = path
    seeds = 0,1,2,3,4    ; ablate
    test_fraction = 0.5  ; ablate
    n_jobs = 1           ; loso / ablate
    repeats = 3          ; bench

    [model]   ; any ArpgNetConfig field, e.g. variant, trs, P, heads, backbone
    [train]   ; any TrainConfig field, e.g. epochs, lr_other, loss
    [synth]   ; any SynthTaskConfig field, e.g. samples_per_class

Lists are comma separated; ``none`` maps to None for optional fields.
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthTaskConfig
from .model import ArpgNetConfig, ConfigError
from .training import TrainConfig


@dataclass
class RunOptions:
    seed: int | None = None
    out: str = "runs"
    dataset: str | None = None
    checkpoint: str | None = None
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    test_fraction: float = 0.5
    n_jobs: int = 1
    repeats: int = 3


SECTIONS = {"run": RunOptions, "model": ArpgNetConfig, "train": TrainConfig, "synth": SynthTaskConfig}


@dataclass
class RunConfig:
    run: RunOptions = field(default_factory=RunOptions)
    model: ArpgNetConfig = field(default_factory=ArpgNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthTaskConfig = field(default_factory=SynthTaskConfig)

    def to_dict(self) -> dict:
        return {
            "run": dataclasses.asdict(self.run),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "synth": self.synth.to_dict(),
        }

    def problems(self) -> list[str]:
        out = []
        for name in ("model", "train", "synth"):
            out += [f"[{name}] {p}" for p in getattr(self, name).problems()]
        r = self.run
        if not 0 < r.test_fraction < 1:
            out.append(f"[run] test_fraction: must lie in (0, 1), got {r.test_fraction}")
        if r.repeats < 1:
            out.append(f"[run] repeats: must be >= 1, got {r.repeats}")
        if not r.seeds:
            out.append("[run] seeds: need at least one seed")
        for key in ("dataset", "checkpoint"):
            p = getattr(r, key)
            if p is not None and not Path(p).exists():
                out.append(f"[run] {key}: path {p} does not exist")
        return out


def _coerce(raw: str, hint, default):
    """Parse ``raw`` according to a dataclass field's type hint."""
    text = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if text.lower() in ("none", "null", ""):
            if type(None) in args:
                return None
        hint = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(hint), typing.get_args(hint)
    if hint is bool:
        low = text.lower()
        if low in configparser.ConfigParser.BOOLEAN_STATES:
            return configparser.ConfigParser.BOOLEAN_STATES[low]
        raise ValueError(f"not a boolean: {raw!r}")
    if origin is tuple:
        elem = args[0] if args else int
        return tuple(elem(x.strip()) for x in text.split(",") if x.strip())
    if hint in (int, float, str):
        return hint(text)
    return type(default)(text) if default is not None else text


def _fields(cls) -> dict[str, tuple]:
    hints = typing.get_type_hints(cls)
    return {f.name: (hints[f.name], f) for f in dataclasses.fields(cls)}


def _build(cls, values: dict[str, str], section: str, problems: list[str]):
    spec = _fields(cls)
    kwargs = {}
    for key, raw in values.items():
        if key not in spec:
            problems.append(f"[{section}] {key}: unknown key")
            continue
        hint, f = spec[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        try:
            kwargs[key] = raw if not isinstance(raw, str) else _coerce(raw, hint, default)
        except (ValueError, TypeError) as exc:
            problems.append(f"[{section}] {key}: cannot parse {raw!r} ({exc})")
    return cls(**kwargs)


def load_run_config(path: str | None = None, overrides: dict[str, dict] | None = None) -> RunConfig:
    """Merge an optional INI file with ``overrides`` (section -> key -> value) and validate.

    Raises :class:`ConfigError` listing every problem found.
    """
    problems: list[str] = []
    values: dict[str, dict] = {name: {} for name in SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.optionxform = str  # keep key case (T, P, H, W)
        try:
            read = parser.read(path)
        except configparser.Error as exc:
            raise ConfigError([f"config file {path}: {exc}".replace("\n", " ")]) from exc
        if not read:
            raise ConfigError([f"config file {path}: cannot be read"])
        for section in parser.sections():
            if section not in SECTIONS:
                problems.append(f"[{section}]: unknown section")
                continue
            values[section].update(parser[section])
    for section, kv in (overrides or {}).items():
        values[section].update({k: v for k, v in kv.items() if v is not None})
    built = {name: _build(cls, values[name], name, problems) for name, cls in SECTIONS.items()}
    cfg = RunConfig(**built)
    problems += cfg.problems()
    if problems:
        raise ConfigError(problems)
    return cfg
