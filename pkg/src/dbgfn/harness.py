"""Training loop, evaluation protocol and multi-seed sweeps."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import streams
from .backtrack import dbgfn_revise_batch, ls_revise_batch
from .config import ExperimentConfig
from .env import SequenceEnv
from .objectives import loss_fn
from .oracle import (
    MetricsRow,
    ModeTracker,
    accuracy,
    exact_accuracy,
    exact_terminal_probs,
    l1_to_target,
    pearson_logp_reward,
    uniqueness,
)
from .policy import OptimizerState, PolicyParams, grad_step, init_params, save_checkpoint
from .replay import ReplayBuffer
from .rollout import rollout

log = logging.getLogger(__name__)

METRICS_COLUMNS = MetricsRow.columns()


class CountingEnv:
    """Forwards reward queries to the environment, counting them and recording discoveries."""

    def __init__(self, env: SequenceEnv, tracker: ModeTracker):
        self.env = env
        self.tracker = tracker
        self.vocab_size = env.vocab_size
        self.seq_len = env.seq_len
        self.calls = 0

    def rewards_of(self, tokens: np.ndarray) -> np.ndarray:
        r = self.env.rewards_of(tokens)
        self.calls += len(r)
        self.tracker.add(np.atleast_2d(tokens), r)
        return r


def make_env(cfg: ExperimentConfig) -> SequenceEnv:
    return SequenceEnv(cfg.env_spec(), base_dir=cfg.base_dir or None)


def mode_threshold(cfg: ExperimentConfig, env: SequenceEnv) -> float:
    if cfg.env.mode_threshold:
        return float(cfg.env.mode_threshold)
    if env.enumerable:
        return float(np.quantile(env.all_rewards(), 0.98))
    rng = np.random.default_rng(0)
    sample = rng.integers(0, env.vocab_size, size=(100_000, env.seq_len))
    return float(np.quantile(env.rewards_of(sample), 0.98))


@dataclass
class RunResult:
    metrics_path: Path
    summary_path: Path
    checkpoint_path: Path | None
    summary: dict
    rows: list[MetricsRow]
    params: PolicyParams


class Trainer:
    """Holds the mutable state of one run; ``run_experiment`` drives it to completion."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg.validate()
        self.seed = cfg.run.seed
        self.env = make_env(cfg)
        self.threshold = mode_threshold(cfg, self.env)
        self.tracker = ModeTracker(self.threshold)
        self.counted = CountingEnv(self.env, self.tracker)
        t = cfg.train
        self.params = init_params(
            cfg.env.vocab_size, cfg.env.seq_len, t.hidden, t.n_hidden,
            "uniform" if t.objective == "maxent" else t.backward,
            streams.seed_streams(self.seed, 0, 0, streams.INIT), t.init_scale,
        )
        o = cfg.optimizer
        self.opt = OptimizerState(o.lr, o.log_z_lr, o.beta1, o.beta2, o.eps)
        self.loss = loss_fn(t.objective)
        self.replay = ReplayBuffer(cfg.replay.capacity, cfg.replay.exponent) if cfg.replay.enabled else None
        self.round = 0
        self.pending_losses: list[float] = []
        self.revision = {"gated": 0, "accepted": 0, "slot_decreases": 0}

    @property
    def reward_calls(self) -> int:
        return self.counted.calls

    def max_calls_per_round(self) -> int:
        t = self.cfg.train
        extra = 0
        if t.search == "dbgfn":
            extra = 1
        elif t.search == "ls":
            extra = self.cfg.ls.iterations
        return t.batch_size * (1 + extra)

    def budget_allows_round(self) -> bool:
        budget = self.cfg.train.reward_budget
        return budget == 0 or self.reward_calls + self.max_calls_per_round() <= budget

    def sample_batch(self):
        B = self.cfg.train.batch_size
        batch = rollout(self.params, self.counted, streams.slot_streams(self.seed, self.round, B, streams.SAMPLE))
        return self.revise(batch)

    def revise(self, batch):
        t = self.cfg.train
        if t.search == "none":
            return batch
        rngs = streams.slot_streams(self.seed, self.round, len(batch), streams.REVISE)
        if t.search == "dbgfn":
            out = dbgfn_revise_batch(self.params, self.counted, self.cfg.backtrack, batch, rngs, self.revision)
        else:
            ls = self.cfg.ls
            out = ls_revise_batch(self.params, self.counted, ls.k_steps, ls.iterations, ls.filter, batch, rngs,
                                  self.revision)
        self.revision["slot_decreases"] += sum(o.reward < b.reward for o, b in zip(out, batch))
        return out

    def train_round(self) -> float:
        self.round += 1
        batch = self.sample_batch()
        train = list(batch)
        B = self.cfg.train.batch_size
        if self.replay is not None and len(self.replay) >= B and self.cfg.replay.fraction > 0:
            f = self.cfg.replay.fraction
            n_rep = int(round(B * f / (1.0 - f)))
            if n_rep:
                train += self.replay.sample(n_rep, streams.seed_streams(self.seed, self.round, 0, streams.REPLAY))
        report = self.loss(self.params, train)
        grad_step(self.params, self.opt, report.grads)
        if self.replay is not None:
            self.replay.extend(batch)
        self.pending_losses.append(report.loss)
        return report.loss

    def evaluate(self) -> MetricsRow:
        """Revision-free rollouts with no update; training reward calls are not charged."""
        n = self.cfg.eval.batch
        trajs = rollout(self.params, self.env, streams.slot_streams(self.seed, self.round, n, streams.EVAL))
        rewards = np.array([tr.reward for tr in trajs])
        logp = np.array([tr.sum_logpf for tr in trajs])
        acc = accuracy(float(rewards.mean()), self.env) if self.env.enumerable else float("nan")
        row = MetricsRow(
            round=self.round,
            accuracy=acc,
            modes=self.tracker.n_modes,
            pearson_logp_reward=pearson_logp_reward(logp, rewards),
            uniqueness=uniqueness([tr.tokens for tr in trajs], rewards, self.threshold),
            topk_mean=self.tracker.topk_mean(self.cfg.eval.topk),
            mean_loss=float(np.mean(self.pending_losses)) if self.pending_losses else float("nan"),
            reward_calls=self.reward_calls,
        )
        self.pending_losses = []
        return row

    def exact_summary(self) -> dict:
        if not self.env.enumerable:
            return {}
        dist = exact_terminal_probs(self.params, self.env)
        rewards = self.env.all_rewards()
        return {
            "accuracy_exact": exact_accuracy(dist, self.env),
            "l1_to_target": l1_to_target(dist, self.env),
            "pearson_logp_reward_exact": pearson_logp_reward(dist, rewards),
            "log_z": float(self.params.log_z),
            "log_partition": dist.partition_log,
            "modes_available": int(np.sum(rewards >= self.threshold)),
        }


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> RunResult:
    """Train for ``train.rounds`` rounds (or until the reward budget), evaluating periodically.

    Writes ``metrics.csv``, ``summary.json``, ``config.ini`` and optionally
    ``checkpoint.npz`` into ``out_dir`` (default ``run.out``).
    """
    start = time.perf_counter()
    trainer = Trainer(cfg)
    out = Path(out_dir if out_dir is not None else cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    metrics_path = out / "metrics.csv"
    rows: list[MetricsRow] = []
    stopped_by_budget = False
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for _ in range(cfg.train.rounds):
            if not trainer.budget_allows_round():
                stopped_by_budget = True
                break
            trainer.train_round()
            if trainer.round % cfg.eval.every == 0:
                row = trainer.evaluate()
                rows.append(row)
                writer.writerow(row.as_record())
                log.info("round %d acc=%.4f modes=%d loss=%.4g calls=%d", row.round, row.accuracy, row.modes,
                         row.mean_loss, row.reward_calls)
    ckpt = None
    if cfg.run.checkpoint:
        ckpt = out / "checkpoint.npz"
        save_checkpoint(trainer.params, ckpt)
    summary = {
        "seed": cfg.run.seed,
        "rounds_completed": trainer.round,
        "stopped_by_budget": stopped_by_budget,
        "reward_calls": trainer.reward_calls,
        "mode_threshold": trainer.threshold,
        "modes": trainer.tracker.n_modes,
        "distinct_discovered": len(trainer.tracker.rewards),
        "topk_mean": trainer.tracker.topk_mean(cfg.eval.topk),
        "final": dataclasses.asdict(rows[-1]) if rows else None,
        "revision": dict(trainer.revision),
        "elapsed_seconds": time.perf_counter() - start,
        "config": cfg.as_dict(),
    }
    summary.update(trainer.exact_summary())
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True), encoding="utf-8")
    return RunResult(metrics_path, summary_path, ckpt, summary, rows, trainer.params)


SWEEP_KEYS = ("modes", "topk_mean", "accuracy_exact", "l1_to_target", "pearson_logp_reward_exact", "reward_calls")
SWEEP_FINAL_KEYS = ("accuracy", "pearson_logp_reward", "uniqueness", "mean_loss")


def sweep(cfg: ExperimentConfig, seeds: Sequence[int], out_dir: str | Path | None = None) -> dict:
    """Run one experiment per seed and aggregate mean and sample std of the final metrics."""
    out = Path(out_dir if out_dir is not None else cfg.run.out)
    per_seed = {}
    for s in seeds:
        run_cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, seed=int(s)))
        res = run_experiment(run_cfg, out / f"seed_{s}")
        flat = {k: res.summary[k] for k in SWEEP_KEYS if k in res.summary}
        if res.summary["final"]:
            flat.update({f"final_{k}": res.summary["final"][k] for k in SWEEP_FINAL_KEYS})
        per_seed[str(s)] = flat
    agg = {}
    keys = sorted({k for v in per_seed.values() for k in v})
    for k in keys:
        vals = np.array([v[k] for v in per_seed.values() if k in v], dtype=np.float64)
        agg[k] = {
            "mean": float(np.mean(vals)),
            "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
        }
    summary = {"seeds": [int(s) for s in seeds], "per_seed": per_seed, "aggregate": agg, "config": cfg.as_dict()}
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True), encoding="utf-8")
    return summary


def oracle_report(cfg: ExperimentConfig, params: PolicyParams, top: int = 10) -> dict:
    """Exact-distribution diagnostics of a trained policy on an enumerable environment."""
    env = make_env(cfg)
    dist = exact_terminal_probs(params, env)
    rewards = env.all_rewards()
    target = rewards / rewards.sum()
    probs = dist.probs
    order = np.argsort(-probs, kind="stable")[:top]
    tokens = env.all_terminal_tokens()
    threshold = mode_threshold(cfg, env)
    return {
        "num_terminals": int(len(probs)),
        "prob_sum": float(probs.sum()),
        "accuracy_exact": exact_accuracy(dist, env),
        "l1_to_target": l1_to_target(dist, env),
        "pearson_logp_reward_exact": pearson_logp_reward(dist, rewards),
        "log_partition": dist.partition_log,
        "log_z": float(params.log_z),
        "mode_threshold": threshold,
        "mode_mass": float(probs[rewards >= threshold].sum()),
        "target_mode_mass": float(target[rewards >= threshold].sum()),
        "top": [
            {"tokens": tokens[i].tolist(), "prob": float(probs[i]), "target": float(target[i]),
             "reward": float(rewards[i])}
            for i in order
        ],
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj
