import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbgfn.env import BuiltinReward, EnvSpec, SequenceEnv, State, TableReward
from dbgfn.errors import SpaceTooLargeError
from dbgfn.oracle import (
    ModeTracker,
    accuracy,
    exact_accuracy,
    exact_terminal_probs,
    l1_to_target,
    mode_metrics,
    pearson_logp_reward,
    target_mean_reward,
    uniqueness,
)
from dbgfn.policy import init_params
from dbgfn.rollout import rollout


class FixedRewards:
    """Minimal stand-in exposing only ``all_rewards``."""

    def __init__(self, rewards):
        self.r = np.asarray(rewards, dtype=np.float64)

    def all_rewards(self):
        return self.r


def table_env(tmp_path, values, symbols="AB", L=2, floor=1e-12):
    import itertools

    seqs = ["".join(p) for p in itertools.product(symbols, repeat=L)]
    path = tmp_path / "r.csv"
    path.write_text("sequence,reward\n" + "".join(f"{s},{v!r}\n" for s, v in zip(seqs, values)))
    return SequenceEnv(EnvSpec(len(symbols), L, TableReward(str(path), symbols), reward_floor=floor))


class TestExactDistribution:
    def test_uniform_small(self):
        env = SequenceEnv(EnvSpec(2, 2, BuiltinReward("separable", {"seed": 0})))
        dist = exact_terminal_probs(init_params(2, 2, hidden=4), env)
        np.testing.assert_allclose(dist.probs, 0.25, atol=1e-15)
        assert dist.logprob(State((1, 0), True)) == pytest.approx(math.log(0.25))

    @pytest.mark.parametrize("seed", range(3))
    def test_sums_to_one(self, random_params, small_env, seed):
        dist = exact_terminal_probs(random_params(seed=seed, jitter=1.0), small_env)
        assert abs(dist.probs.sum() - 1.0) <= 1e-9

    def test_matches_monte_carlo(self, random_params, small_env):
        p = random_params(seed=2, jitter=0.6)
        dist = exact_terminal_probs(p, small_env)
        rng = np.random.default_rng(0)
        n = 100_000
        trajs = rollout(p, small_env, [rng] * n)
        idx = small_env.index_of(np.array([t.tokens for t in trajs]))
        freq = np.bincount(idx, minlength=256) / n
        assert 0.5 * np.abs(freq - dist.probs).sum() < 0.02

    def test_too_large(self):
        env = SequenceEnv(EnvSpec(4, 3, BuiltinReward("motif"), enumeration_cap=10))
        with pytest.raises(SpaceTooLargeError):
            exact_terminal_probs(init_params(4, 3, hidden=4), env)


class TestAccuracy:
    def test_ratio_and_clamp(self):
        env = FixedRewards([0.6, 0.6])
        assert target_mean_reward(env) == pytest.approx(0.6)
        assert accuracy(0.3, env) == pytest.approx(0.5)
        assert accuracy(0.6, env) == 1.0
        assert accuracy(0.9, env) == 1.0

    @settings(max_examples=1000, deadline=None)
    @given(st.lists(st.floats(0.001, 100.0), min_size=2, max_size=20), st.floats(0.0, 200.0))
    def test_clipping_scan(self, rewards, mean):
        env = FixedRewards(rewards)
        r = np.asarray(rewards)
        target = float(np.sum(r * r) / np.sum(r))
        acc = accuracy(mean, env)
        if mean >= target:
            assert acc == 1.0
        else:
            assert acc == mean / target

    def test_exact_accuracy_uniform(self, tmp_path):
        env = table_env(tmp_path, [0.9, 0.1, 0.1, 0.1])
        dist = exact_terminal_probs(init_params(2, 2, hidden=4), env)
        r = env.all_rewards()
        assert exact_accuracy(dist, env) == pytest.approx(r.mean() / (np.sum(r * r) / r.sum()))


class TestCorrelationAndL1:
    def test_pearson_constant_convention(self):
        assert pearson_logp_reward([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) == 0.0
        assert pearson_logp_reward([1.0, 2.0, 3.0], [5.0, 5.0, 5.0]) == 0.0

    def test_pearson_value(self):
        assert pearson_logp_reward([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    def test_l1_example(self, tmp_path):
        env = table_env(tmp_path, [0.9, 0.1 / 3, 0.1 / 3, 0.1 / 3])
        dist = exact_terminal_probs(init_params(2, 2, hidden=4), env)
        assert l1_to_target(dist, env) == pytest.approx(1.3, abs=1e-9)

    def test_l1_zero_when_matched(self, tmp_path):
        env = table_env(tmp_path, [0.25] * 4)
        dist = exact_terminal_probs(init_params(2, 2, hidden=4), env)
        assert l1_to_target(dist, env) == pytest.approx(0.0, abs=1e-12)


class TestModes:
    def test_example(self):
        a, b = (0, 1), (1, 1)
        disc = [(a, 0.9), (a, 0.9), (b, 0.2)]
        modes, uniq, top = mode_metrics(disc, 0.5, disc, k=100)
        assert modes == 1
        assert uniq == 0.5
        assert top == pytest.approx((0.9 + 0.2) / 2)

    def test_topk(self):
        disc = [((0,), 0.9), ((1,), 0.7), ((2,), 0.2)]
        assert mode_metrics(disc, 0.5, disc, k=2)[2] == pytest.approx(0.8)

    def test_uniqueness_without_hits(self):
        assert uniqueness([(0, 0), (0, 0)], [0.1, 0.1], 0.5) == 1.0

    def test_tracker_is_cumulative(self):
        t = ModeTracker(1.0)
        t.add([(0, 0), (0, 1)], [1.5, 0.2])
        t.add([(0, 0), (1, 1)], [1.5, 1.0])
        assert t.n_modes == 2
        assert t.topk_mean(1) == 1.5
        assert ModeTracker(1.0).topk_mean() == 0.0
