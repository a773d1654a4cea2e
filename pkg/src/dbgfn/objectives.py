"""Trajectory balance, detailed balance and MaxEnt losses with analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import State, Trajectory
from .errors import NonPositiveRewardError
from .policy import PolicyParams, encode, log_softmax, parent_mask, prefix_batch

OBJECTIVE_KINDS = ("tb", "db", "maxent")


@dataclass
class LossReport:
    loss: float
    grads: dict[str, np.ndarray]
    batch_size: int


def _check_rewards(rewards: np.ndarray) -> np.ndarray:
    if not np.all(rewards > 0) or not np.all(np.isfinite(rewards)):
        raise NonPositiveRewardError(f"rewards must be finite and > 0, got min {np.min(rewards)}")
    return np.log(rewards)


def _batch_arrays(batch: Sequence[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    tokens = np.array([tr.tokens for tr in batch], dtype=np.int64)
    rewards = np.array([tr.reward for tr in batch], dtype=np.float64)
    return tokens, rewards


def _forward_terms(params: PolicyParams, tokens: np.ndarray, lengths: np.ndarray, actions: np.ndarray):
    """Selected forward log-probs plus what is needed to backprop into the forward net."""
    x = encode(tokens, lengths, params.vocab_size, params.seq_len)
    logits, cache = params.forward_net.forward(x)
    logp = log_softmax(logits)
    rows = np.arange(len(actions))
    return logp[rows, actions], (cache, np.exp(logp), actions)


def _forward_grads(params: PolicyParams, terms, coef: np.ndarray) -> dict[str, np.ndarray]:
    # d logp[a] / d logits = onehot(a) - softmax
    cache, probs, actions = terms
    dlogits = -probs * coef[:, None]
    dlogits[np.arange(len(actions)), actions] += coef
    return params.forward_net.backward(cache, dlogits, "forward")


def _backward_terms(params: PolicyParams, child_tokens: np.ndarray, child_lengths: np.ndarray):
    x = encode(child_tokens, child_lengths, params.vocab_size, params.seq_len)
    logits, cache = params.backward_net.forward(x)
    mask = parent_mask(child_tokens, child_lengths, params.vocab_size)
    logp = log_softmax(logits, mask)
    rows = np.arange(len(child_lengths))
    last = child_tokens[rows, child_lengths - 1]
    probs = np.where(mask, np.exp(logp), 0.0)
    return logp[rows, last], (cache, probs, last)


def _backward_grads(params: PolicyParams, terms, coef: np.ndarray) -> dict[str, np.ndarray]:
    cache, probs, last = terms
    dlogits = -probs * coef[:, None]
    dlogits[np.arange(len(last)), last] += coef
    return params.backward_net.backward(cache, dlogits, "backward")


# ---------------------------------------------------------------------------
# trajectory balance / MaxEnt


def tb_loss_batch(params: PolicyParams, batch: Sequence[Trajectory], fixed_backward: bool = False) -> LossReport:
    """Mean over the batch of (log Z + sum log P_F - log R - sum log P_B)^2."""
    tokens, rewards = _batch_arrays(batch)
    log_r = _check_rewards(rewards)
    B, L = tokens.shape
    ptoks, plens = prefix_batch(tokens)
    actions = tokens.reshape(-1)
    logpf, fterms = _forward_terms(params, ptoks, plens, actions)
    sum_pf = logpf.reshape(B, L).sum(axis=1)

    learned_pb = params.backward_net is not None and not fixed_backward
    if learned_pb:
        clens = plens + 1
        logpb, bterms = _backward_terms(params, ptoks, clens)
        sum_pb = logpb.reshape(B, L).sum(axis=1)
    else:
        # uniform over the single parent: log 1 = 0
        sum_pb = np.zeros(B)

    delta = params.log_z + sum_pf - log_r - sum_pb
    loss = float(np.mean(delta**2))
    dd = 2.0 * delta / B
    coef = np.repeat(dd, L)
    grads = {"log_z": np.array(dd.sum())}
    grads.update(_forward_grads(params, fterms, coef))
    if learned_pb:
        grads.update(_backward_grads(params, bterms, -coef))
    return LossReport(loss, grads, B)


def maxent_loss_batch(params: PolicyParams, batch: Sequence[Trajectory]) -> LossReport:
    """Trajectory balance with P_B fixed to uniform over parents."""
    return tb_loss_batch(params, batch, fixed_backward=True)


def tb_loss(params: PolicyParams, traj: Trajectory) -> LossReport:
    return tb_loss_batch(params, [traj])


def maxent_loss(params: PolicyParams, traj: Trajectory) -> LossReport:
    return maxent_loss_batch(params, [traj])


# ---------------------------------------------------------------------------
# detailed balance


def _db_edges(
    params: PolicyParams,
    parent_tokens: np.ndarray,
    parent_lengths: np.ndarray,
    actions: np.ndarray,
    log_r: np.ndarray,
    weight: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """weight * sum_i delta_i^2 over edges s -> s + a.

    ``log_r[i]`` is used in place of log F(child) when the child is terminal.
    """
    n = len(actions)
    L = params.seq_len
    child_tokens = parent_tokens.copy()
    child_tokens[np.arange(n), parent_lengths] = actions
    child_lengths = parent_lengths + 1
    final = child_lengths == L

    logpf, fterms = _forward_terms(params, parent_tokens, parent_lengths, actions)
    nf = np.nonzero(~final)[0]
    x_flow = np.concatenate([
        encode(parent_tokens, parent_lengths, params.vocab_size, L),
        encode(child_tokens[nf], child_lengths[nf], params.vocab_size, L),
    ])
    flow_out, flow_cache = params.flow_net.forward(x_flow)
    log_f = flow_out[:, 0]
    log_f_parent = log_f[:n]
    log_f_child = np.array(log_r, dtype=np.float64, copy=True)
    log_f_child[nf] = log_f[n:]

    if params.backward_net is not None:
        logpb, bterms = _backward_terms(params, child_tokens, child_lengths)
    else:
        logpb = np.zeros(n)

    delta = log_f_parent + logpf - log_f_child - logpb
    loss = float(weight * np.sum(delta**2))
    dd = 2.0 * weight * delta
    dflow = np.concatenate([dd, -dd[nf]])[:, None]
    grads = params.flow_net.backward(flow_cache, dflow, "flow")
    grads.update(_forward_grads(params, fterms, dd))
    if params.backward_net is not None:
        grads.update(_backward_grads(params, bterms, -dd))
    return loss, grads


def db_loss_batch(params: PolicyParams, batch: Sequence[Trajectory]) -> LossReport:
    """Per-edge detailed balance summed along each trajectory, averaged over the batch."""
    tokens, rewards = _batch_arrays(batch)
    log_r = _check_rewards(rewards)
    B, L = tokens.shape
    ptoks, plens = prefix_batch(tokens)
    actions = tokens.reshape(-1)
    edge_log_r = np.full(B * L, np.nan)
    edge_log_r[L - 1 :: L] = log_r
    loss, grads = _db_edges(params, ptoks, plens, actions, edge_log_r, 1.0 / B)
    return LossReport(loss, grads, B)


def db_loss(
    params: PolicyParams,
    transition: tuple[State, State, bool, float | None],
) -> LossReport:
    """Detailed-balance loss of a single edge ``(s_t, s_{t+1}, is_final, R)``."""
    s, s_next, is_final, reward = transition
    L = params.seq_len
    tokens = np.zeros((1, L), dtype=np.int64)
    tokens[0, : len(s.prefix)] = s.prefix
    action = np.array([s_next.prefix[-1]])
    if is_final:
        log_r = _check_rewards(np.array([reward], dtype=np.float64))
    else:
        log_r = np.array([np.nan])
    loss, grads = _db_edges(params, tokens, np.array([len(s.prefix)]), action, log_r, 1.0)
    return LossReport(loss, grads, 1)


def loss_fn(kind: str):
    """Batch loss function for an objective name."""
    try:
        return {"tb": tb_loss_batch, "db": db_loss_batch, "maxent": maxent_loss_batch}[kind]
    except KeyError:
        raise ValueError(f"unknown objective {kind!r}; expected one of {OBJECTIVE_KINDS}") from None
