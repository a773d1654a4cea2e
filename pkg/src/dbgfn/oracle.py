"""Exact terminal distribution by enumeration, and the evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .backtrack import pearson_r
from .env import SequenceEnv, State
from .errors import ConstantVectorError, SpaceTooLargeError
from .policy import PolicyParams, encode, forward_logprobs_batch

_CHUNK = 1 << 15


@dataclass
class ExactDistribution:
    """log P_theta(x) for every terminal, in lexicographic order of token sequences."""

    terminal_logprobs: np.ndarray
    partition_log: float
    vocab_size: int
    seq_len: int

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.terminal_logprobs)

    def logprob(self, x: State) -> float:
        idx = 0
        for t in x.prefix:
            idx = idx * self.vocab_size + t
        return float(self.terminal_logprobs[idx])


def exact_terminal_probs(params: PolicyParams, env: SequenceEnv) -> ExactDistribution:
    """Push log-probabilities level by level through the prefix tree.

    Each terminal has exactly one trajectory, so its probability is the product
    of forward probabilities along that path.
    """
    if not env.enumerable:
        raise SpaceTooLargeError(
            f"|X| = {env.spec.num_terminals} exceeds enumeration cap {env.spec.enumeration_cap}"
        )
    V, L = env.vocab_size, env.seq_len
    logp = np.zeros(1)
    tokens = np.zeros((1, L), dtype=np.int64)
    for level in range(L):
        n = len(logp)
        step = np.empty((n, V))
        lengths = np.full(n, level)
        for lo in range(0, n, _CHUNK):
            hi = min(n, lo + _CHUNK)
            step[lo:hi] = forward_logprobs_batch(params, encode(tokens[lo:hi], lengths[lo:hi], V, L))
        logp = (logp[:, None] + step).reshape(-1)
        tokens = np.repeat(tokens, V, axis=0)
        tokens[:, level] = np.tile(np.arange(V), n)
    rewards = env.all_rewards()
    return ExactDistribution(logp, float(np.log(np.sum(rewards))), V, L)


def target_mean_reward(env: SequenceEnv) -> float:
    """E[R] under p'(x) proportional to R(x), i.e. sum R^2 / sum R."""
    r = env.all_rewards()
    return float(np.sum(r * r) / np.sum(r))


def accuracy(mean_sampled_reward: float, env: SequenceEnv) -> float:
    return min(float(mean_sampled_reward) / target_mean_reward(env), 1.0)


def exact_accuracy(dist: ExactDistribution, env: SequenceEnv) -> float:
    """Accuracy with the model's exact expected reward in the numerator."""
    return accuracy(float(np.dot(dist.probs, env.all_rewards())), env)


def pearson_logp_reward(logp: Sequence[float] | ExactDistribution, rewards: Sequence[float]) -> float:
    """Pearson r between log P(x) and R(x); 0.0 when either side is constant."""
    if isinstance(logp, ExactDistribution):
        logp = logp.terminal_logprobs
    try:
        return pearson_r(logp, rewards)
    except ConstantVectorError:
        return 0.0


def l1_to_target(dist: ExactDistribution, env: SequenceEnv) -> float:
    r = env.all_rewards()
    return float(np.sum(np.abs(dist.probs - r / np.sum(r))))


class ModeTracker:
    """Cumulative record of every distinct terminal seen and its reward."""

    def __init__(self, threshold: float):
        self.threshold = float(threshold)
        self.rewards: dict[tuple[int, ...], float] = {}
        self.modes: set[tuple[int, ...]] = set()

    def add(self, tokens: Iterable[Sequence[int]], rewards: Iterable[float]) -> None:
        for tok, r in zip(tokens, rewards):
            key = tuple(int(t) for t in tok)
            r = float(r)
            self.rewards[key] = r
            if r >= self.threshold:
                self.modes.add(key)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def topk_mean(self, k: int = 100) -> float:
        if not self.rewards:
            return 0.0
        vals = np.fromiter(self.rewards.values(), dtype=np.float64)
        k = min(k, vals.size)
        return float(np.mean(np.partition(vals, vals.size - k)[vals.size - k :]))


def uniqueness(tokens: Sequence[Sequence[int]], rewards: Sequence[float], threshold: float) -> float:
    """Distinct / total among above-threshold samples; 1.0 if there are none."""
    hits = [tuple(int(t) for t in tok) for tok, r in zip(tokens, rewards) if r >= threshold]
    if not hits:
        return 1.0
    return len(set(hits)) / len(hits)


def mode_metrics(
    discovered: Iterable[tuple[Sequence[int], float]],
    threshold: float,
    eval_batch: Iterable[tuple[Sequence[int], float]],
    k: int = 100,
) -> tuple[int, float, float]:
    """(mode count, uniqueness, top-k mean reward) from ``(tokens, reward)`` pairs."""
    tracker = ModeTracker(threshold)
    disc = list(discovered)
    tracker.add([d[0] for d in disc], [d[1] for d in disc])
    ev = list(eval_batch)
    uniq = uniqueness([e[0] for e in ev], [e[1] for e in ev], threshold)
    return tracker.n_modes, uniq, tracker.topk_mean(k)


@dataclass
class MetricsRow:
    round: int
    accuracy: float
    modes: int
    pearson_logp_reward: float
    uniqueness: float
    topk_mean: float
    mean_loss: float
    reward_calls: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_record(self) -> list[str]:
        return [repr(getattr(self, name)) if isinstance(getattr(self, name), float) else str(getattr(self, name))
                for name in self.columns()]
