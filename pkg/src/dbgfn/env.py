"""Append-only sequence-construction environment.

States are token prefixes of length ``0..seq_len``; each action appends one
token, so every non-initial state has exactly one parent. Terminal states are
the full-length sequences and carry a strictly positive reward.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    ActionOnTerminalError,
    BadSymbolError,
    DuplicateSequenceError,
    IncompleteTableError,
    MissingTableEntryError,
    NegativeRewardError,
    NonTerminalRewardError,
    SpaceTooLargeError,
    TokenOutOfRangeError,
)

DEFAULT_ENUMERATION_CAP = 2**24
DNA_SYMBOLS = "ACGT"


@dataclass(frozen=True)
class State:
    prefix: tuple[int, ...]
    is_terminal: bool

    def __len__(self) -> int:
        return len(self.prefix)


@dataclass(frozen=True)
class BuiltinReward:
    """A named synthetic reward (``"motif"`` or ``"separable"``) and its parameters."""

    name: str
    params: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class TableReward:
    path: str
    symbols: str = DNA_SYMBOLS


@dataclass(frozen=True)
class EnvSpec:
    vocab_size: int
    seq_len: int
    reward_source: BuiltinReward | TableReward
    reward_floor: float = 0.001
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if not self.reward_floor > 0:
            raise ValueError("reward_floor must be strictly positive")

    @property
    def num_terminals(self) -> int:
        return self.vocab_size**self.seq_len


@dataclass
class Trajectory:
    """A complete path s0 -> ... -> x, stored as its token sequence.

    ``logpf[t]`` is log P_F(s_{t+1} | s_t) and ``logpb[t]`` is
    log P_B(s_t | s_{t+1}), both as recorded at sampling time.
    """

    tokens: tuple[int, ...]
    logpf: np.ndarray
    logpb: np.ndarray
    reward: float

    @property
    def actions(self) -> tuple[int, ...]:
        return self.tokens

    @property
    def states(self) -> list[State]:
        n = len(self.tokens)
        return [State(self.tokens[:t], t == n) for t in range(n + 1)]

    @property
    def sum_logpf(self) -> float:
        return float(np.sum(self.logpf))

    @property
    def sum_logpb(self) -> float:
        return float(np.sum(self.logpb))


# ---------------------------------------------------------------------------
# reward tables


def load_reward_table(
    path: str | Path,
    vocab_size: int,
    seq_len: int,
    symbols: str = DNA_SYMBOLS,
) -> np.ndarray:
    """Read a ``sequence,reward`` CSV into a dense array indexed lexicographically.

    The table must list every one of ``vocab_size ** seq_len`` sequences exactly once.
    """
    if len(symbols) != vocab_size or len(set(symbols)) != vocab_size:
        raise BadSymbolError(f"symbol map {symbols!r} does not define {vocab_size} distinct symbols")
    lookup = {ch: i for i, ch in enumerate(symbols)}
    n = vocab_size**seq_len
    table = np.full(n, np.nan)
    seen = np.zeros(n, dtype=bool)
    powers = vocab_size ** np.arange(seq_len - 1, -1, -1)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sequence", "reward"]:
            raise IncompleteTableError(f"{path}: expected header 'sequence,reward', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            seq, value = row[0].strip(), row[1].strip()
            if len(seq) != seq_len:
                raise BadSymbolError(f"{path}:{lineno}: sequence {seq!r} has length {len(seq)}, expected {seq_len}")
            try:
                toks = [lookup[ch] for ch in seq]
            except KeyError as exc:
                raise BadSymbolError(f"{path}:{lineno}: unknown symbol {exc.args[0]!r} in {seq!r}") from None
            r = float(value)
            if not np.isfinite(r):
                raise NegativeRewardError(f"{path}:{lineno}: non-finite reward {value!r}")
            if r < 0:
                raise NegativeRewardError(f"{path}:{lineno}: negative reward {r}")
            idx = int(np.dot(toks, powers))
            if seen[idx]:
                raise DuplicateSequenceError(f"{path}:{lineno}: duplicate sequence {seq!r}")
            seen[idx] = True
            table[idx] = r
    missing = int(n - seen.sum())
    if missing:
        raise IncompleteTableError(f"{path}: {missing} of {n} sequences missing")
    return table


def write_reward_table(path: str | Path, rewards: np.ndarray, seq_len: int, symbols: str = DNA_SYMBOLS) -> None:
    """Inverse of :func:`load_reward_table`, used to export builtin landscapes."""
    vocab_size = len(symbols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "reward"])
        for idx, toks in enumerate(itertools.product(range(vocab_size), repeat=seq_len)):
            w.writerow(["".join(symbols[t] for t in toks), repr(float(rewards[idx]))])


# ---------------------------------------------------------------------------
# builtin rewards


def _all_tokens(vocab_size: int, seq_len: int) -> np.ndarray:
    idx = np.arange(vocab_size**seq_len)
    powers = vocab_size ** np.arange(seq_len - 1, -1, -1)
    return ((idx[:, None] // powers[None, :]) % vocab_size).astype(np.int64)


def _parse_token_string(s: str, vocab_size: int) -> list[int]:
    toks = [int(ch, 36) for ch in s.strip()]
    if any(t >= vocab_size for t in toks):
        raise TokenOutOfRangeError(f"motif {s!r} uses tokens >= {vocab_size}")
    return toks


@dataclass(frozen=True)
class MotifLandscape:
    """R(x) = base + sum_j A_j * [hamming(x, m_j) <= r_j]."""

    motifs: np.ndarray  # (n_motifs, seq_len)
    amplitudes: np.ndarray
    radii: np.ndarray
    base: float

    @classmethod
    def from_params(cls, params: Mapping[str, object], vocab_size: int, seq_len: int) -> "MotifLandscape":
        base = float(params.get("base", 0.1))
        if "motifs" in params:
            raw = params["motifs"]
            strings = raw.split(",") if isinstance(raw, str) else list(raw)
            motifs = np.array([_parse_token_string(s, vocab_size) for s in strings], dtype=np.int64)
            if motifs.shape[1] != seq_len:
                raise ValueError("motif length must equal seq_len")
            k = len(motifs)
            amps = _broadcast_floats(params.get("amplitudes", 1.0), k)
            radii = _broadcast_floats(params.get("radii", 0), k).astype(np.int64)
            return cls(motifs, amps, radii, base)
        rng = np.random.default_rng(int(params.get("seed", 0)))
        k = int(params.get("n_motifs", 8))
        motifs = rng.integers(0, vocab_size, size=(k, seq_len))
        amps = rng.uniform(float(params.get("amplitude_min", 1.0)), float(params.get("amplitude_max", 2.0)), size=k)
        radii = rng.integers(int(params.get("radius_min", 1)), int(params.get("radius_max", 2)) + 1, size=k)
        return cls(motifs, amps, radii, base)

    def __call__(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.atleast_2d(tokens)
        dist = (tokens[:, None, :] != self.motifs[None, :, :]).sum(axis=2)
        return self.base + ((dist <= self.radii[None, :]) * self.amplitudes[None, :]).sum(axis=1)


@dataclass(frozen=True)
class SeparableLandscape:
    """R(x) = prod_t w[t, x_t]; normaliser and target mean factorise over positions."""

    weights: np.ndarray  # (seq_len, vocab_size), strictly positive

    @classmethod
    def from_params(cls, params: Mapping[str, object], vocab_size: int, seq_len: int) -> "SeparableLandscape":
        if "weights" in params:
            raw = params["weights"]
            rows = raw.split(";") if isinstance(raw, str) else list(raw)
            w = np.array([[float(v) for v in (r.split(",") if isinstance(r, str) else r)] for r in rows])
            if w.shape == (vocab_size,):
                w = np.tile(w, (seq_len, 1))
            if w.shape == (1, vocab_size):
                w = np.repeat(w, seq_len, axis=0)
        else:
            rng = np.random.default_rng(int(params.get("seed", 0)))
            scale = float(params.get("scale", 0.35))
            w = np.exp(scale * rng.standard_normal((seq_len, vocab_size)))
        if w.shape != (seq_len, vocab_size) or not np.all(w > 0):
            raise ValueError("separable weights must be a positive (seq_len, vocab_size) table")
        return cls(w)

    def __call__(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.atleast_2d(tokens)
        return np.prod(self.weights[np.arange(tokens.shape[1])[None, :], tokens], axis=1)

    def closed_form_moments(self, floor: float) -> tuple[float, float]:
        """Return (sum_x R(x), sum_x R(x)^2) including an additive floor."""
        n = self.weights.shape[1] ** self.weights.shape[0]
        s1 = float(np.prod(self.weights.sum(axis=1)))
        s2 = float(np.prod((self.weights**2).sum(axis=1)))
        return s1 + floor * n, s2 + 2 * floor * s1 + floor**2 * n


def _broadcast_floats(value: object, k: int) -> np.ndarray:
    if isinstance(value, str):
        vals = [float(v) for v in value.split(",")]
    elif np.isscalar(value):
        vals = [float(value)]
    else:
        vals = [float(v) for v in value]  # type: ignore[union-attr]
    if len(vals) == 1:
        vals = vals * k
    if len(vals) != k:
        raise ValueError(f"expected 1 or {k} values, got {len(vals)}")
    return np.array(vals)


# ---------------------------------------------------------------------------
# the environment


class SequenceEnv:
    """Immutable environment built from an :class:`EnvSpec`.

    For enumerable specs the whole reward landscape is materialised once, so
    ``reward`` is a table lookup and the oracle can reuse the dense array.
    """

    def __init__(self, spec: EnvSpec, base_dir: str | Path | None = None):
        self.spec = spec
        self.vocab_size = spec.vocab_size
        self.seq_len = spec.seq_len
        self._powers = spec.vocab_size ** np.arange(spec.seq_len - 1, -1, -1, dtype=np.int64)
        self.landscape = None
        src = spec.reward_source
        if isinstance(src, TableReward):
            path = Path(src.path)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            self._table = load_reward_table(path, spec.vocab_size, spec.seq_len, src.symbols) + spec.reward_floor
        else:
            if src.name == "motif":
                self.landscape = MotifLandscape.from_params(src.params, spec.vocab_size, spec.seq_len)
            elif src.name == "separable":
                self.landscape = SeparableLandscape.from_params(src.params, spec.vocab_size, spec.seq_len)
            else:
                raise ValueError(f"unknown builtin reward {src.name!r}")
            self._table = None
            if self.enumerable:
                self._table = self.landscape(_all_tokens(spec.vocab_size, spec.seq_len)) + spec.reward_floor
        if self._table is not None:
            self._table.setflags(write=False)

    @property
    def enumerable(self) -> bool:
        return self.spec.num_terminals <= self.spec.enumeration_cap

    # -- MDP structure -----------------------------------------------------

    def initial_state(self) -> State:
        return State((), False)

    def apply_action(self, s: State, token: int) -> State:
        if s.is_terminal:
            raise ActionOnTerminalError(f"cannot act from terminal state {s.prefix}")
        if not 0 <= token < self.vocab_size:
            raise TokenOutOfRangeError(f"token {token} not in [0, {self.vocab_size})")
        prefix = s.prefix + (int(token),)
        return State(prefix, len(prefix) == self.seq_len)

    def parent(self, s: State) -> State | None:
        if not s.prefix:
            return None
        return State(s.prefix[:-1], False)

    def state(self, prefix: Sequence[int]) -> State:
        prefix = tuple(int(t) for t in prefix)
        if len(prefix) > self.seq_len or any(not 0 <= t < self.vocab_size for t in prefix):
            raise TokenOutOfRangeError(f"invalid prefix {prefix}")
        return State(prefix, len(prefix) == self.seq_len)

    # -- rewards -----------------------------------------------------------

    def index_of(self, tokens: np.ndarray) -> np.ndarray:
        return np.atleast_2d(tokens) @ self._powers

    def reward(self, x: State) -> float:
        if not x.is_terminal or len(x.prefix) != self.seq_len:
            raise NonTerminalRewardError(f"state {x.prefix} is not terminal")
        return float(self.rewards_of(np.asarray(x.prefix, dtype=np.int64))[0])

    def rewards_of(self, tokens: np.ndarray) -> np.ndarray:
        """Vectorised reward for an ``(n, seq_len)`` array of complete sequences."""
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        if tokens.shape[1] != self.seq_len:
            raise NonTerminalRewardError(f"expected sequences of length {self.seq_len}")
        if self._table is not None:
            idx = tokens @ self._powers
            if np.any((idx < 0) | (idx >= len(self._table))):
                raise MissingTableEntryError("sequence outside the reward table")
            return self._table[idx]
        return self.landscape(tokens) + self.spec.reward_floor

    def all_rewards(self) -> np.ndarray:
        """Dense lexicographic reward array over every terminal."""
        if self._table is None:
            raise SpaceTooLargeError(
                f"|X| = {self.spec.num_terminals} exceeds enumeration cap {self.spec.enumeration_cap}"
            )
        return self._table

    def all_terminal_tokens(self) -> np.ndarray:
        if not self.enumerable:
            raise SpaceTooLargeError(
                f"|X| = {self.spec.num_terminals} exceeds enumeration cap {self.spec.enumeration_cap}"
            )
        return _all_tokens(self.vocab_size, self.seq_len)

    def enumerate_terminals(self) -> Iterator[State]:
        if not self.enumerable:
            raise SpaceTooLargeError(
                f"|X| = {self.spec.num_terminals} exceeds enumeration cap {self.spec.enumeration_cap}"
            )
        return (State(toks, True) for toks in itertools.product(range(self.vocab_size), repeat=self.seq_len))
