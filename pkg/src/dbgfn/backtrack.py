"""Reward-driven backtracking search over sampled trajectories.

A sampled batch is revised before it is used for training: each trajectory
may (with the regret probability) be rewound by a reward-dependent number of
steps, re-completed by the current forward policy, and the new completion is
kept or discarded by one of three choose rules. The fixed-step local-search
baseline (``ls_revise_batch``) shares the rewind/refill machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import State, Trajectory
from .errors import ConstantVectorError, DegenerateThresholdsError, StepsOutOfRangeError
from .policy import PolicyParams
from .rollout import rollout

CHOOSE_RULES = ("reward", "pearson", "mh")
LS_FILTERS = ("deterministic", "stochastic")


@dataclass(frozen=True)
class BacktrackConfig:
    tg: float = 20.0
    s_max: int = 5
    s_min: int = 2
    t_max: float = 5.0
    t_min: float = 0.4
    choose: str = "reward"
    # affine map applied to the reward before the step schedule only
    schedule_scale: float = 1.0
    schedule_shift: float = 0.0

    def validate(self, seq_len: int | None = None) -> "BacktrackConfig":
        if self.tg < 0 or math.isnan(self.tg):
            raise ValueError("tg must be >= 0")
        if self.s_min < 1 or self.s_min > self.s_max:
            raise ValueError("need 1 <= s_min <= s_max")
        if seq_len is not None and self.s_max > seq_len:
            raise ValueError(f"s_max={self.s_max} exceeds sequence length {seq_len}")
        if not self.t_min < self.t_max:
            raise DegenerateThresholdsError(f"need t_min < t_max, got {self.t_min}, {self.t_max}")
        if self.choose not in CHOOSE_RULES:
            raise ValueError(f"choose must be one of {CHOOSE_RULES}")
        return self


@dataclass
class ChooseContext:
    original: Trajectory
    candidate: Trajectory
    divergence_index: int


def make_context(original: Trajectory, candidate: Trajectory) -> ChooseContext:
    """Pair two trajectories with the length of their longest shared prefix."""
    d = 0
    for a, b in zip(original.tokens, candidate.tokens):
        if a != b:
            break
        d += 1
    return ChooseContext(original, candidate, d)


# ---------------------------------------------------------------------------
# gating and step schedule


def regret_probability(tg: float) -> float:
    return -math.expm1(-tg)


def regret_gate(cfg: BacktrackConfig, rng: np.random.Generator) -> bool:
    return bool(rng.random() < regret_probability(cfg.tg))


def dynamic_steps(cfg: BacktrackConfig, r: float) -> int:
    """Number of steps to rewind: ``s_max`` for poor rewards, ``s_min`` for good ones.

    Linear interpolation (floored) between ``t_min`` and ``t_max``, so the
    result never increases with the reward.
    """
    if not cfg.t_min < cfg.t_max:
        raise DegenerateThresholdsError(f"need t_min < t_max, got {cfg.t_min}, {cfg.t_max}")
    r = cfg.schedule_scale * r + cfg.schedule_shift
    if r <= cfg.t_min:
        return cfg.s_max
    if r >= cfg.t_max:
        return cfg.s_min
    steps = math.floor(cfg.s_max - (cfg.s_max - cfg.s_min) * (r - cfg.t_min) / (cfg.t_max - cfg.t_min))
    return min(max(steps, cfg.s_min), cfg.s_max)


# ---------------------------------------------------------------------------
# rewind / refill


def rewind(traj: Trajectory, steps: int) -> State:
    L = len(traj.tokens)
    if not 1 <= steps <= L:
        raise StepsOutOfRangeError(f"steps must be in [1, {L}], got {steps}")
    return traj.states[L - steps]


def refill_batch(
    params: PolicyParams,
    env,
    batch: Sequence[Trajectory],
    keep: Sequence[int],
    rngs: Sequence[np.random.Generator],
) -> list[Trajectory]:
    """Resample every trajectory after its first ``keep[i]`` tokens."""
    if not batch:
        return []
    tokens = np.array([tr.tokens for tr in batch], dtype=np.int64)
    logpf = np.array([tr.logpf for tr in batch])
    return rollout(params, env, rngs, tokens, np.asarray(keep, dtype=np.int64), logpf)


def refill(params: PolicyParams, env, start: State, traj: Trajectory, rng: np.random.Generator) -> Trajectory:
    """Complete ``traj``'s prefix up to ``start`` with a freshly sampled suffix."""
    k = len(start.prefix)
    if tuple(traj.tokens[:k]) != tuple(start.prefix):
        raise ValueError(f"state {start.prefix} does not lie on the trajectory {traj.tokens}")
    return refill_batch(params, env, [traj], [k], [rng])[0]


# ---------------------------------------------------------------------------
# choose rules


def choose_reward(ctx: ChooseContext) -> bool:
    return ctx.candidate.reward > ctx.original.reward


def pearson_r(p: Sequence[float], r: Sequence[float]) -> float:
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if p.shape != r.shape or p.ndim != 1 or p.size < 2:
        raise ValueError("pearson_r needs two equal-length vectors of length >= 2")
    dp = p - p.mean()
    dr = r - r.mean()
    sp = math.sqrt(float(np.dot(dp, dp)))
    sr = math.sqrt(float(np.dot(dr, dr)))
    if sp == 0.0 or sr == 0.0:
        raise ConstantVectorError("Pearson correlation undefined for a constant vector")
    return max(-1.0, min(1.0, float(np.dot(dp, dr)) / (sp * sr)))


def _batch_pearson(batch: Sequence[Trajectory]) -> float:
    s = np.array([tr.sum_logpf for tr in batch])
    # exp(s - max s): a positive rescaling of P(x), which Pearson r ignores
    p = np.exp(s - s.max())
    return pearson_r(p, [tr.reward for tr in batch])


def choose_pearson(batch_orig: Sequence[Trajectory], batch_cand: Sequence[Trajectory]) -> bool:
    """Accept the candidate batch iff its (P, R) correlation is strictly higher."""
    if len(batch_orig) != len(batch_cand) or len(batch_orig) < 2:
        raise ValueError("choose_pearson needs two equal batches of size >= 2")
    try:
        return _batch_pearson(batch_cand) > _batch_pearson(batch_orig)
    except ConstantVectorError:
        return False


def mh_log_ratio(ctx: ChooseContext) -> float:
    d = ctx.divergence_index
    old, new = ctx.original, ctx.candidate
    return float(
        math.log(new.reward) - math.log(old.reward)
        + np.sum(new.logpb[d:]) + np.sum(old.logpf[d:])
        - np.sum(new.logpf[d:]) - np.sum(old.logpb[d:])
    )


def choose_mh(ctx: ChooseContext, rng: np.random.Generator) -> bool:
    """Metropolis-Hastings acceptance with probability min(1, C), C taken in log space."""
    log_c = mh_log_ratio(ctx)
    u = rng.random()
    return bool(u < math.exp(min(0.0, log_c)))


# ---------------------------------------------------------------------------
# batch revision


def _slot_rngs(rng, n: int) -> list[np.random.Generator]:
    if isinstance(rng, np.random.Generator):
        return [rng] * n
    rngs = list(rng)
    if len(rngs) != n:
        raise ValueError(f"need {n} generators, got {len(rngs)}")
    return rngs


def dbgfn_revise_batch(
    params: PolicyParams,
    env,
    cfg: BacktrackConfig,
    batch: Sequence[Trajectory],
    rng,
    counters: dict | None = None,
) -> list[Trajectory]:
    """One gate -> rewind -> refill -> choose pass over a batch.

    ``rng`` is either one generator or one per slot. ``counters`` (optional)
    accumulates ``gated`` and ``accepted`` slot counts.
    """
    rngs = _slot_rngs(rng, len(batch))
    L = env.seq_len
    gated = [i for i in range(len(batch)) if regret_gate(cfg, rngs[i])]
    out = list(batch)
    if not gated:
        return out
    keep = []
    for i in gated:
        steps = min(dynamic_steps(cfg, batch[i].reward), L)
        keep.append(L - steps)
    cands = refill_batch(params, env, [batch[i] for i in gated], keep, [rngs[i] for i in gated])

    accepted = 0
    if cfg.choose == "pearson":
        cand_batch = list(batch)
        for i, c in zip(gated, cands):
            cand_batch[i] = c
        if len(batch) >= 2 and choose_pearson(batch, cand_batch):
            out = cand_batch
            accepted = len(gated)
    else:
        for i, c in zip(gated, cands):
            ctx = make_context(batch[i], c)
            ok = choose_reward(ctx) if cfg.choose == "reward" else choose_mh(ctx, rngs[i])
            if ok:
                out[i] = c
                accepted += 1
    if counters is not None:
        counters["gated"] = counters.get("gated", 0) + len(gated)
        counters["accepted"] = counters.get("accepted", 0) + accepted
    return out


def ls_revise_batch(
    params: PolicyParams,
    env,
    k_steps: int,
    iterations: int,
    filter: str,
    batch: Sequence[Trajectory],
    rng,
    counters: dict | None = None,
) -> list[Trajectory]:
    """Fixed-depth local search: rewind every slot ``k_steps``, refill, filter; repeat."""
    L = env.seq_len
    if not 1 <= k_steps <= L:
        raise StepsOutOfRangeError(f"k_steps must be in [1, {L}], got {k_steps}")
    if filter not in LS_FILTERS:
        raise ValueError(f"filter must be one of {LS_FILTERS}")
    rngs = _slot_rngs(rng, len(batch))
    out = list(batch)
    accepted = 0
    for _ in range(iterations):
        cands = refill_batch(params, env, out, [L - k_steps] * len(out), rngs)
        for i, c in enumerate(cands):
            ctx = make_context(out[i], c)
            ok = choose_reward(ctx) if filter == "deterministic" else choose_mh(ctx, rngs[i])
            if ok:
                out[i] = c
                accepted += 1
    if counters is not None:
        counters["gated"] = counters.get("gated", 0) + iterations * len(batch)
        counters["accepted"] = counters.get("accepted", 0) + accepted
    return out
