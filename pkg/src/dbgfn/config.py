"""Experiment configuration: INI-style sections, one per concern.

Every section maps onto a dataclass below; keys are the field names. Unknown
sections or keys raise :class:`ConfigInvalidError` so a typo cannot silently
fall back to a default. ``[backtrack]`` and ``[ls]`` may only appear when the
matching ``search`` mode is selected. ``[reward]`` holds the parameters of the
builtin reward named by ``env.reward``.

Example::

    [env]
    vocab_size = 4
    seq_len = 8
    reward = motif
    mode_threshold = 1.0

    [reward]
    seed = 3
    n_motifs = 12

    [train]
    objective = tb
    search = dbgfn

    [backtrack]
    s_max = 6
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .backtrack import CHOOSE_RULES, LS_FILTERS, BacktrackConfig
from .env import DEFAULT_ENUMERATION_CAP, BuiltinReward, EnvSpec, TableReward
from .errors import ConfigInvalidError
from .objectives import OBJECTIVE_KINDS

SEARCH_MODES = ("none", "ls", "dbgfn")

REWARD_KEYS = {
    "motif": {"seed", "n_motifs", "amplitude_min", "amplitude_max", "radius_min", "radius_max",
              "base", "motifs", "amplitudes", "radii"},
    "separable": {"seed", "scale", "weights"},
    "table": set(),
}
_REWARD_INT_KEYS = {"seed", "n_motifs", "radius_min", "radius_max"}
_REWARD_FLOAT_KEYS = {"amplitude_min", "amplitude_max", "base", "scale"}


@dataclass
class EnvConfig:
    vocab_size: int = 4
    seq_len: int = 8
    reward: str = "motif"
    reward_floor: float = 0.001
    table: str = ""
    symbols: str = "ACGT"
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    # empty -> 98th percentile of the reward landscape
    mode_threshold: str = ""


@dataclass
class TrainConfig:
    objective: str = "tb"
    search: str = "none"
    batch_size: int = 32
    rounds: int = 2000
    # 0 disables the cap; otherwise training stops before exceeding this many reward calls
    reward_budget: int = 0
    hidden: int = 256
    n_hidden: int = 2
    backward: str = "uniform"
    init_scale: float = 1.0


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    log_z_lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class LSConfig:
    k_steps: int = 4
    iterations: int = 1
    filter: str = "deterministic"


@dataclass
class ReplayConfig:
    enabled: bool = True
    capacity: int = 5000
    fraction: float = 0.5
    exponent: float = 1.0


@dataclass
class EvalConfig:
    every: int = 10
    batch: int = 128
    topk: int = 100


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    checkpoint: bool = True


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: dict[str, Any] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    backtrack: BacktrackConfig | None = None
    ls: LSConfig | None = None
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)
    base_dir: str = ""

    def env_spec(self) -> EnvSpec:
        e = self.env
        if e.reward == "table":
            src = TableReward(e.table, e.symbols)
        else:
            src = BuiltinReward(e.reward, dict(self.reward))
        return EnvSpec(e.vocab_size, e.seq_len, src, e.reward_floor, e.enumeration_cap)

    def validate(self) -> "ExperimentConfig":
        e, t = self.env, self.train
        _check(e.vocab_size >= 2, "env.vocab_size must be >= 2")
        _check(e.seq_len >= 1, "env.seq_len must be >= 1")
        _check(e.reward_floor > 0, "env.reward_floor must be > 0")
        _check(e.reward in REWARD_KEYS, f"env.reward must be one of {sorted(REWARD_KEYS)}")
        _check(e.reward != "table" or bool(e.table), "env.table is required when env.reward = table")
        _check(e.reward != "table" or len(e.symbols) == e.vocab_size, "env.symbols must have vocab_size symbols")
        unknown = set(self.reward) - REWARD_KEYS[e.reward]
        _check(not unknown, f"unknown [reward] keys for {e.reward!r}: {sorted(unknown)}")
        if e.mode_threshold:
            _check(_is_float(e.mode_threshold), "env.mode_threshold must be a number")
        _check(t.objective in OBJECTIVE_KINDS, f"train.objective must be one of {OBJECTIVE_KINDS}")
        _check(t.search in SEARCH_MODES, f"train.search must be one of {SEARCH_MODES}")
        _check(t.batch_size >= 1, "train.batch_size must be >= 1")
        _check(t.rounds >= 0, "train.rounds must be >= 0")
        _check(t.reward_budget >= 0, "train.reward_budget must be >= 0")
        _check(t.hidden >= 1 and t.n_hidden >= 1, "train.hidden and train.n_hidden must be >= 1")
        _check(t.backward in ("uniform", "learned"), "train.backward must be uniform or learned")
        _check(not (t.objective == "maxent" and t.backward == "learned"),
               "maxent fixes the backward policy to uniform")
        o = self.optimizer
        _check(o.lr > 0 and o.log_z_lr > 0, "learning rates must be > 0")
        _check(0 <= o.beta1 < 1 and 0 <= o.beta2 < 1 and o.eps > 0, "invalid Adam hyperparameters")
        if t.search == "dbgfn":
            if self.backtrack is None:
                # defaults, with the step range shrunk to fit short sequences
                d = BacktrackConfig()
                self.backtrack = dataclasses.replace(
                    d, s_max=min(d.s_max, e.seq_len), s_min=min(d.s_min, e.seq_len))
            try:
                self.backtrack.validate(e.seq_len)
            except Exception as exc:
                raise ConfigInvalidError(f"[backtrack]: {exc}") from None
        else:
            _check(self.backtrack is None, "[backtrack] is only allowed with train.search = dbgfn")
        if t.search == "ls":
            if self.ls is None:
                self.ls = LSConfig()
            _check(1 <= self.ls.k_steps <= e.seq_len, "ls.k_steps must be in [1, seq_len]")
            _check(self.ls.iterations >= 0, "ls.iterations must be >= 0")
            _check(self.ls.filter in LS_FILTERS, f"ls.filter must be one of {LS_FILTERS}")
        else:
            _check(self.ls is None, "[ls] is only allowed with train.search = ls")
        r = self.replay
        _check(r.capacity >= 1, "replay.capacity must be >= 1")
        _check(0 <= r.fraction < 1, "replay.fraction must be in [0, 1)")
        _check(r.exponent >= 0, "replay.exponent must be >= 0")
        v = self.eval
        _check(v.every >= 1 and v.batch >= 2 and v.topk >= 1, "invalid [eval] settings")
        return self

    # -- serialisation -----------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in _SECTIONS:
            obj = getattr(self, name)
            if obj is None:
                continue
            cp[name] = {f.name: _fmt(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if self.reward:
            cp["reward"] = {k: _fmt(v) for k, v in self.reward.items()}
        out = []
        for section in cp.sections():
            out.append(f"[{section}]")
            out.extend(f"{k} = {v}" for k, v in cp[section].items())
            out.append("")
        return "\n".join(out)

    def as_dict(self) -> dict[str, Any]:
        d = {}
        for name in _SECTIONS:
            obj = getattr(self, name)
            d[name] = None if obj is None else dataclasses.asdict(obj)
        d["reward"] = dict(self.reward)
        return d


_SECTIONS = {
    "env": EnvConfig,
    "train": TrainConfig,
    "optimizer": OptimizerConfig,
    "backtrack": BacktrackConfig,
    "ls": LSConfig,
    "replay": ReplayConfig,
    "eval": EvalConfig,
    "run": RunConfig,
}


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigInvalidError(msg)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw: str, default: Any, where: str) -> Any:
    raw = raw.strip()
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
    except ValueError:
        raise ConfigInvalidError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _coerce_reward(key: str, raw: str) -> Any:
    try:
        if key in _REWARD_INT_KEYS:
            return int(raw)
        if key in _REWARD_FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigInvalidError(f"reward.{key}: cannot parse {raw!r}") from None
    return raw.strip()


def apply_section(cfg: ExperimentConfig, section: str, values: dict[str, str]) -> None:
    if section == "reward":
        for k, v in values.items():
            cfg.reward[k] = _coerce_reward(k, v)
        return
    if section not in _SECTIONS:
        raise ConfigInvalidError(f"unknown section [{section}]")
    cls = _SECTIONS[section]
    obj = getattr(cfg, section) or cls()
    known = {f.name for f in dataclasses.fields(cls)}
    updates = {}
    for k, v in values.items():
        if k not in known:
            raise ConfigInvalidError(f"unknown key {section}.{k}")
        updates[k] = _coerce(v, getattr(obj, k), f"{section}.{k}")
    setattr(cfg, section, dataclasses.replace(obj, **updates))


def parse_config(text: str, base_dir: str | Path = "") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalidError(str(exc)) from None
    cfg = ExperimentConfig(base_dir=str(base_dir))
    for section in cp.sections():
        apply_section(cfg, section, dict(cp[section]))
    return cfg.validate()


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    cfg = parse_config(text, base_dir=path.parent)
    return apply_overrides(cfg, overrides) if overrides else cfg


def apply_overrides(cfg: ExperimentConfig, overrides: Sequence[str]) -> ExperimentConfig:
    """Apply ``section.key=value`` strings, then re-validate."""
    cfg = dataclasses.replace(cfg, reward=dict(cfg.reward))
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigInvalidError(f"override {item!r} is not of the form section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        apply_section(cfg, section, {key.strip(): value})
    return cfg.validate()
