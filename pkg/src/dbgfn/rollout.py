"""Batched forward sampling of complete trajectories, optionally from given prefixes."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .env import Trajectory
from .policy import PolicyParams, _draw, backward_logprobs_batch, encode, forward_logprobs_batch


def rollout(
    params: PolicyParams,
    env,
    rngs: Sequence[np.random.Generator],
    start_tokens: np.ndarray | None = None,
    start_lengths: np.ndarray | None = None,
    start_logpf: np.ndarray | None = None,
) -> list[Trajectory]:
    """Sample one trajectory per generator, continuing each from its start prefix.

    ``start_tokens[i, :start_lengths[i]]`` is kept verbatim, as are the first
    ``start_lengths[i]`` entries of ``start_logpf[i]``. Each slot draws its
    uniforms only from ``rngs[i]`` so results do not depend on batch layout.
    ``env`` needs ``vocab_size``, ``seq_len`` and ``rewards_of``.
    """
    n = len(rngs)
    L, V = env.seq_len, env.vocab_size
    tokens = np.zeros((n, L), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    logpf = np.zeros((n, L))
    if start_tokens is not None:
        tokens[:] = start_tokens
        lengths[:] = start_lengths
        if start_logpf is not None:
            logpf[:] = start_logpf
        pos = np.arange(L)[None, :]
        tokens = np.where(pos < lengths[:, None], tokens, 0)
        logpf = np.where(pos < lengths[:, None], logpf, 0.0)
    for t in range(L):
        active = np.nonzero(lengths == t)[0]
        if active.size == 0:
            continue
        x = encode(tokens[active], lengths[active], V, L)
        logp = forward_logprobs_batch(params, x)
        u = np.array([rngs[i].random() for i in active])
        a = _draw(np.exp(logp), u)
        tokens[active, t] = a
        logpf[active, t] = logp[np.arange(active.size), a]
        lengths[active] += 1
    rewards = env.rewards_of(tokens)
    logpb = _trajectory_logpb(params, tokens)
    return [
        Trajectory(tuple(int(v) for v in tokens[i]), logpf[i].copy(), logpb[i].copy(), float(rewards[i]))
        for i in range(n)
    ]


def _trajectory_logpb(params: PolicyParams, tokens: np.ndarray) -> np.ndarray:
    n, L = tokens.shape
    if params.backward_net is None:
        return np.zeros((n, L))
    child_tokens = np.repeat(tokens, L, axis=0)
    child_lengths = np.tile(np.arange(1, L + 1), n)
    return backward_logprobs_batch(params, child_tokens, child_lengths).reshape(n, L)


def as_arrays(batch: Sequence[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    tokens = np.array([tr.tokens for tr in batch], dtype=np.int64)
    rewards = np.array([tr.reward for tr in batch], dtype=np.float64)
    return tokens, rewards
