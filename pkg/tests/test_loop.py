"""Control loop: episodes, the gate retry path, buffers, training, eval."""

import numpy as np
import pytest

from satgate import actions
from satgate import loop as L
from satgate.config import ExperimentConfig
from satgate.constraints import PreCheck
from satgate.learner import OutcomeKind, record_outcome
from satgate.loop import (Agent, RolloutBuffer, evaluate,
                          greedy_fallback_assignment, normalize_curve,
                          smooth_curve, train)
from satgate.ppo import PolicyParams, compute_advantages

from conftest import random_topology


def _tiny_cfg(**env_overrides):
    cfg = ExperimentConfig()
    cfg.env.n_devices = 12
    cfg.env.initial_compromised = 3
    cfg.env.episode_cap = 40
    cfg.run.episodes = 3
    cfg.run.eval_episodes = 4
    for k, v in env_overrides.items():
        setattr(cfg.env, k, v)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- fallback

def test_fallback_assignment_properties():
    rng = np.random.default_rng(3)
    for _ in range(25):
        topo = random_topology(rng)
        target = int(rng.integers(0, topo.m + 1))
        enabled = greedy_fallback_assignment(topo, 1, target)
        for v in range(topo.n_devices):
            assert np.count_nonzero(enabled[topo.incident(v)]) >= 1
        assert np.count_nonzero(enabled) >= min(target, topo.m)
        again = greedy_fallback_assignment(topo, 1, target)
        assert np.array_equal(enabled, again)


def test_fallback_assignment_extremes(path3):
    assert greedy_fallback_assignment(path3, 1, 0).tolist() == [True, True]
    full = greedy_fallback_assignment(path3, 1, 2)
    assert full.tolist() == [True, True]


# ------------------------------------------------------------------ buffer

def test_buffer_finalize_then_drain():
    buf = RolloutBuffer()
    for i in range(3):
        buf.add(state=i, action=i, log_prob=-1.0, reward=float(i),
                value=0.5 * i, done=False)
    assert buf.size == 0, "unfinalized records are not usable yet"
    buf.finalize_episode(bootstrap_value=2.0, gamma=0.9)
    assert buf.size == 3

    # records of a half-finished episode stay out of the drained batch
    buf.add(state=9, action=1, log_prob=-2.0, reward=7.0, value=0.0, done=False)
    assert buf.size == 3

    expected_adv, expected_tgt = compute_advantages(
        np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.5, 1.0]), 2.0, 0.9)
    batch = buf.drain()
    assert batch["actions"].tolist() == [0, 1, 2]
    assert np.allclose(batch["advantages"], expected_adv)
    assert np.allclose(batch["value_targets"], expected_tgt)
    assert batch["features"].shape == (3, 20)
    assert buf.size == 0 and not buf.rewards


def test_buffer_finalize_empty_segment_is_noop():
    buf = RolloutBuffer()
    buf.finalize_episode(0.0, 0.9)
    assert buf.size == 0


# ---------------------------------------------------------------- episodes

def test_no_compromise_ends_immediately():
    cfg = _tiny_cfg(initial_compromised=0)
    agent = Agent(cfg, collect=False)
    result = agent.run_episode((0, 3, 0))
    assert result.steps == 0
    assert result.outcome == "attack_end"
    assert result.total_reward == 0.0


def test_do_nothing_policy_loses_to_certain_propagation():
    cfg = _tiny_cfg(p_compromise=1.0)
    cfg.attacker.kind = "aggressive"
    agent = Agent(cfg, collect=False)
    agent.params.actor.biases[-1][actions.DO_NOTHING] = 50.0
    result = agent.run_episode((0, 3, 0), greedy=True, keep_log=True)
    assert result.outcome == "attack_goal"
    assert 0 < result.steps < cfg.env.episode_cap
    assert all(rec.action == actions.DO_NOTHING for rec in result.log)


def test_episode_determinism():
    cfg = _tiny_cfg()
    a = Agent(cfg, collect=False).run_episode((5, 3, 2), keep_log=True)
    b = Agent(cfg, collect=False).run_episode((5, 3, 2), keep_log=True)
    assert (a.steps, a.outcome) == (b.steps, b.outcome)
    assert a.total_reward == b.total_reward
    assert [r.tsv() for r in a.log] == [r.tsv() for r in b.log]


def test_step_records_advance_one_env_step_each():
    cfg = _tiny_cfg()
    agent = Agent(cfg, collect=False)
    result = agent.run_episode((1, 3, 0), keep_log=True)
    assert len(result.log) == result.steps
    assert [rec.t for rec in result.log] == list(range(1, result.steps + 1))
    terminals = [rec.terminal for rec in result.log]
    assert all(t == "running" for t in terminals[:-1])


def test_retry_exhaustion_falls_back_to_do_nothing(monkeypatch):
    # With every recommendation rejected, the loop burns the retry budget,
    # executes do-nothing anyway, and the environment still advances.
    cfg = _tiny_cfg()
    cfg.env.episode_cap = 3
    agent = Agent(cfg, collect=True)
    initial = agent.params.actor.flat().copy()
    monkeypatch.setattr(L, "check_pre",
                        lambda a, s, f, cs, solver: PreCheck(False, violated=("energy",)))
    result = agent.run_episode((2, 3, 0), keep_log=True)
    assert result.steps >= 1
    for rec in result.log:
        assert rec.action == actions.DO_NOTHING
        assert len(rec.rejected) == cfg.ppo.retry_cap + 1
    # every rejection fed the immediate penalty path
    assert not np.array_equal(agent.params.actor.flat(), initial)
    per_step = cfg.ppo.retry_cap + 2          # rejections plus the executed action
    assert len(agent.buffer.rewards) == result.steps * per_step


# ---------------------------------------------------------------- training

def test_train_zero_episodes_returns_fresh_policy():
    cfg = _tiny_cfg()
    cfg.run.episodes = 0
    result = train(cfg)
    assert result.curve == [] and result.outcomes == []
    fresh = Agent(cfg, collect=True)
    assert np.array_equal(result.params.actor.flat(), fresh.params.actor.flat())
    assert result.agent.updates == 0


def test_train_curve_shape():
    cfg = _tiny_cfg()
    result = train(cfg)
    assert len(result.curve) == cfg.run.episodes
    assert len(result.outcomes) == cfg.run.episodes
    assert set(result.outcomes) <= {"attack_end", "attack_goal", "truncated"}
    assert all(np.isfinite(r) for r in result.curve)


def test_learn_rules_promotes_and_respects_existing():
    cfg = _tiny_cfg()
    agent = Agent(cfg, collect=True)
    for _ in range(cfg.learner.m_events):
        record_outcome(agent.stats, 4, 9, OutcomeKind.PRE_PENALTY, -10.0)
    assert agent.learn_rules() == 1
    assert agent.cs.excluded(4, 9) is not None
    assert agent.solver.cs is agent.cs
    assert agent.learn_rules() == 0


# ------------------------------------------------------------------- curves

def test_normalize_curve_basics():
    assert normalize_curve([]).size == 0
    assert np.array_equal(normalize_curve([3.0, 3.0]), [0.0, 0.0])
    assert np.allclose(normalize_curve([-5.0, -1.0, -3.0]), [0.0, 1.0, 0.5])
    rng = np.random.default_rng(0)
    raw = rng.standard_normal(50)
    norm = normalize_curve(raw)
    assert norm.min() == 0.0 and norm.max() == 1.0
    assert np.array_equal(np.argsort(norm), np.argsort(raw))


def test_smooth_curve_values():
    assert smooth_curve([], 5).size == 0
    assert np.allclose(smooth_curve([1.0, 2.0, 3.0, 4.0], 1), [1, 2, 3, 4])
    assert np.allclose(smooth_curve([1.0, 2.0, 3.0, 4.0], 2), [1.0, 1.5, 2.5, 3.5])
    # warmup: window wider than the series is the running mean
    assert np.allclose(smooth_curve([2.0, 4.0, 6.0], 10), [2.0, 3.0, 4.0])


# --------------------------------------------------------------- evaluation

def test_evaluate_metrics_partition():
    cfg = _tiny_cfg()
    params = PolicyParams.create(hidden=cfg.ppo.hidden_units)
    metrics = evaluate(params, cfg, n_episodes=6)
    assert metrics.episodes == 6
    total = metrics.success_rate + metrics.goal_rate + metrics.truncation_rate
    assert total == pytest.approx(1.0)
    cdf = metrics.cdf()
    fracs = [f for _, f in cdf]
    assert fracs == sorted(fracs)
    if cdf:
        assert fracs[-1] == pytest.approx(metrics.success_rate)


def test_evaluate_sharding_invariance():
    cfg = _tiny_cfg()
    params = PolicyParams.create(hidden=cfg.ppo.hidden_units)
    solo = evaluate(params, cfg, n_episodes=6, jobs=1)
    split = evaluate(params, cfg, n_episodes=6, jobs=2)
    assert solo.success_rate == split.success_rate
    assert solo.mean_reward == split.mean_reward
    assert np.array_equal(solo.end_times, split.end_times)


def test_evaluate_leaves_params_untouched():
    cfg = _tiny_cfg()
    params = PolicyParams.create(hidden=cfg.ppo.hidden_units)
    before = params.actor.flat().copy()
    evaluate(params, cfg, n_episodes=3)
    assert np.array_equal(params.actor.flat(), before)
