"""Episode control loop, training, and evaluation.

One decision step: characterize the agent state from the last observation,
sample the policy until the pre-execution gate accepts (each rejection
penalizes the policy immediately, masks the action for this step, and never
touches the environment), execute the accepted action, let the attacker
move, emit the next observation, then score the step through the
post-execution gate.  The environment advances exactly once per step no
matter how many recommendations the gate burned.

Training interleaves episodes with buffer updates and constraint learning;
evaluation runs the frozen policy greedily with the gates still active.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import actions
from .attackers import (AttackerKind, attack_shape_k, attempt_propagation,
                        select_exploration_set)
from .config import ExperimentConfig
from .constraints import (ConstraintSet, PreSolver, check_post, check_pre,
                          formulate_initial, update_set)
from .env import CpsEnv, Terminal, apply_reimage, emit_observation, terminal_check
from .learner import ExperienceStats, OutcomeKind, propose_rules, record_outcome
from .ppo import (PolicyParams, action_probs, compute_advantages, greedy_action,
                  penalty_update, sample_action, update, value_estimate)
from .rewards import compute_penalty, compute_reward
from .states import characterize, estimate_compromised_ratio, state_features
from .topology import Topology, generate_topology

log = logging.getLogger(__name__)

# Seed stream tags so the independent random consumers never overlap.
_STREAM_POLICY = 1
_STREAM_UPDATE = 2
_STREAM_EPISODE = 3
_STREAM_EVAL = 4


class RolloutBuffer:
    def __init__(self):
        self._keys = ("states", "actions", "log_probs", "rewards", "values", "dones")
        self.clear()

    def clear(self):
        for k in self._keys:
            setattr(self, k, [])
        self.advantages = []
        self.value_targets = []
        self._episode_start = 0

    def add(self, state, action, log_prob, reward, value, done):
        self.states.append(state)
        self.actions.append(action)
        self.log_probs.append(log_prob)
        self.rewards.append(reward)
        self.values.append(value)
        self.dones.append(done)

    def finalize_episode(self, bootstrap_value: float, gamma: float):
        """Compute advantages for the records since the last finalize."""
        lo = self._episode_start
        if lo == len(self.rewards):
            return
        adv, targets = compute_advantages(
            np.array(self.rewards[lo:]), np.array(self.values[lo:]),
            bootstrap_value, gamma)
        self.advantages.extend(adv)
        self.value_targets.extend(targets)
        self._episode_start = len(self.rewards)

    @property
    def size(self) -> int:
        return self._episode_start      # only finalized records are usable

    def drain(self) -> dict:
        n = self.size
        batch = {
            "features": np.stack([state_features(s) for s in self.states[:n]]),
            "actions": np.array(self.actions[:n], dtype=np.int64),
            "log_probs_old": np.array(self.log_probs[:n]),
            "advantages": np.array(self.advantages[:n]),
            "value_targets": np.array(self.value_targets[:n]),
        }
        self.clear()
        return batch


@dataclass(slots=True)
class StepRecord:
    t: int
    state: int
    action: int
    rejected: tuple[int, ...]
    feedback: float
    post_violated: tuple[str, ...]
    terminal: str

    def tsv(self) -> str:
        rej = ",".join(str(a) for a in self.rejected) or "-"
        post = ",".join(self.post_violated) or "-"
        return (f"{self.t}\t{self.state}\t{self.action}\t{rej}\t"
                f"{self.feedback:.6f}\t{post}\t{self.terminal}")


@dataclass
class EpisodeResult:
    steps: int
    outcome: str                      # "attack_end", "attack_goal", "truncated"
    total_reward: float
    log: list[StepRecord] = field(default_factory=list)


def greedy_fallback_assignment(topology: Topology, l_min: int,
                               target_count: int) -> np.ndarray:
    """Ungated detector plan: cover every device, then fill toward the
    requested count, both in plain detector-index order.  Deliberately
    blind to cost; with the pre-execution gate off, energy overdraws are
    only felt through post penalties."""
    enabled = np.zeros(topology.m, dtype=bool)
    for v in range(topology.n_devices):
        inc = topology.incident(v)
        need = l_min - int(np.count_nonzero(enabled[inc]))
        if need > 0:
            enabled[inc[~enabled[inc]][:need]] = True
    target = min(max(target_count, int(np.count_nonzero(enabled))), topology.m)
    remaining = np.flatnonzero(~enabled)
    short = target - int(np.count_nonzero(enabled))
    if short > 0:
        enabled[remaining[:short]] = True
    return enabled


class Agent:
    """Everything one run owns: policy, constraints, stats, buffer."""

    def __init__(self, cfg: ExperimentConfig, topology: Topology | None = None,
                 params: PolicyParams | None = None, collect: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.kind = AttackerKind.from_str(cfg.attacker.kind)
        self.topology = topology if topology is not None \
            else generate_topology(cfg.env, cfg.env.topo_seed)
        self.cs = formulate_initial(self.topology, cfg.env)
        self.solver = PreSolver(self.cs)
        self.params = params if params is not None else PolicyParams.create(
            hidden=cfg.ppo.hidden_units,
            rng=np.random.default_rng(np.random.SeedSequence((cfg.run.seed, _STREAM_POLICY))))
        self.stats = ExperienceStats()
        self.buffer = RolloutBuffer() if collect else None
        self.presat = not cfg.run.disable_pre_sat
        self.update_rng = np.random.default_rng(
            np.random.SeedSequence((cfg.run.seed, _STREAM_UPDATE)))
        self.updates = 0

    # -- episode mechanics -------------------------------------------------

    def _initial_assignment(self) -> np.ndarray:
        cfg = self.cfg
        if self.presat:
            result = self.solver.solve(cfg.env.ratio_init)
            if not result.sat:
                raise RuntimeError(
                    "initial detector-ratio target is infeasible under the "
                    f"pre-constraints (status {result.status}, core {result.violated})")
            return result.assignment
        target = int(round(cfg.env.ratio_init * self.topology.m))
        return greedy_fallback_assignment(self.topology, cfg.env.l_min, target)

    def run_episode(self, episode_seed, collect: bool | None = None,
                    greedy: bool = False, keep_log: bool = False) -> EpisodeResult:
        cfg = self.cfg
        collect = (self.buffer is not None) if collect is None else collect
        rng = np.random.default_rng(np.random.SeedSequence(episode_seed))
        env = CpsEnv(self.topology, cfg.env, attack_shape_k(self.kind, cfg.env), rng)
        env.reset(self._initial_assignment())

        total = 0.0
        records = []
        while env.terminal == Terminal.RUNNING and env.t < cfg.env.episode_cap:
            total += self._step(env, rng, collect, greedy,
                                records if keep_log else None)
        if collect:
            bootstrap = 0.0
            if env.terminal == Terminal.RUNNING:
                # Truncated, not terminal: the value of where we stopped.
                s = characterize(
                    estimate_compromised_ratio(env.last_obs, env.threshold),
                    env.ratio, env.terminal, cfg.state)
                bootstrap = value_estimate(self.params, state_features(s))
            self.buffer.finalize_episode(bootstrap, cfg.ppo.gamma)
        outcome = {Terminal.ATTACK_END: "attack_end",
                   Terminal.ATTACK_GOAL: "attack_goal",
                   Terminal.RUNNING: "truncated"}[env.terminal]
        return EpisodeResult(env.t, outcome, total, records)

    def _step(self, env: CpsEnv, rng, collect: bool, greedy: bool,
              records: list | None) -> float:
        cfg = self.cfg
        obs = env.last_obs
        s = characterize(estimate_compromised_ratio(obs, env.threshold),
                         env.ratio, env.terminal, cfg.state)
        feats = state_features(s)
        value = value_estimate(self.params, feats)

        step_total = 0.0
        mask: set[int] = set()
        rejected = []
        # The gate loop: do-nothing always passes and is never masked, so
        # this settles within retry_cap resamples or falls back to it.
        for _ in range(cfg.ppo.retry_cap + 1):
            probs = action_probs(self.params, feats)
            if greedy:
                a = greedy_action(probs, mask)
                lp = float(np.log(probs[a]))
            else:
                a, lp = sample_action(probs, mask, rng)
            if not self.presat:
                pre = None
                break
            pre = check_pre(a, s, env.ratio, self.cs, self.solver)
            if pre.ok:
                break
            penalty = compute_penalty("pre", 0.0, cfg.reward)
            step_total += penalty
            rejected.append(a)
            if collect:
                self.params = penalty_update(self.params, feats, a, penalty, cfg.ppo)
                self.buffer.add(s, a, lp, penalty, value, False)
                record_outcome(self.stats, s, a, OutcomeKind.PRE_PENALTY, penalty)
            mask.add(a)
        else:
            # Retry budget burned before anything satisfied the gate.
            a = actions.DO_NOTHING
            probs = action_probs(self.params, feats)
            lp = float(np.log(probs[a]))
            pre = check_pre(a, s, env.ratio, self.cs, self.solver)

        effect = actions.apply_action(a, env.threshold, env.ratio, obs.device_risk)
        if effect.needs_assignment:
            if self.presat:
                env.enabled = pre.assignment.copy()
            else:
                target = int(round(effect.ratio * self.topology.m))
                env.enabled = greedy_fallback_assignment(
                    self.topology, cfg.env.l_min, target)
        env.threshold = effect.threshold
        env.ratio = effect.ratio
        benign, total_reimaged = apply_reimage(env, effect.reimage_targets)

        explored = select_exploration_set(self.kind, env, cfg.attacker, rng)
        attempt_propagation(env, explored, cfg.env.p_compromise, rng)
        env.t += 1
        env.terminal = terminal_check(env)
        env.last_obs = emit_observation(env, rng)

        post = check_post(env.last_obs, self.cs, cfg.reward)
        if post.ok:
            feedback = compute_reward(benign, total_reimaged,
                                      env.last_obs.attack_ended,
                                      env.last_obs.attack_goal, cfg.reward)
            outcome_kind = OutcomeKind.REWARD
        else:
            feedback = compute_penalty("post", post.severity, cfg.reward)
            outcome_kind = OutcomeKind.POST_PENALTY
        step_total += feedback
        done = env.terminal != Terminal.RUNNING
        if collect:
            self.buffer.add(s, a, lp, feedback, value, done)
            record_outcome(self.stats, s, a, outcome_kind, feedback)
        if records is not None:
            records.append(StepRecord(env.t, s, a, tuple(rejected), feedback,
                                      post.violated, env.terminal.name.lower()))
        return step_total

    # -- training-side bookkeeping ----------------------------------------

    def maybe_update(self) -> bool:
        if self.buffer is None or self.buffer.size < self.cfg.ppo.horizon:
            return False
        self.params = update(self.params, self.buffer.drain(), self.cfg.ppo,
                             self.update_rng)
        self.updates += 1
        return True

    def learn_rules(self) -> int:
        existing = {(r.state_index, r.action_index) for r in self.cs.exclusions}
        rules = propose_rules(self.stats, self.cfg.learner, existing)
        if rules:
            self.cs = update_set(self.cs, add=rules)
            # The linear problem is untouched, so the solver cache survives.
            self.solver.cs = self.cs
        return len(rules)


@dataclass
class TrainResult:
    params: PolicyParams
    curve: list[float]
    cs: ConstraintSet
    stats: ExperienceStats
    outcomes: list[str]
    agent: Agent
    step_rows: list = field(default_factory=list)   # (episode, StepRecord)


def train(cfg: ExperimentConfig, seed: int | None = None) -> TrainResult:
    cfg = cfg.copy()
    if seed is not None:
        cfg.run.seed = seed
    agent = Agent(cfg, collect=True)
    curve, outcomes, step_rows = [], [], []
    for ep in range(cfg.run.episodes):
        result = agent.run_episode((cfg.run.seed, _STREAM_EPISODE, ep),
                                   keep_log=cfg.run.step_log)
        curve.append(result.total_reward)
        outcomes.append(result.outcome)
        step_rows.extend((ep, rec) for rec in result.log)
        agent.maybe_update()
        agent.learn_rules()
    return TrainResult(agent.params, curve, agent.cs, agent.stats, outcomes,
                       agent, step_rows)


def normalize_curve(curve) -> np.ndarray:
    """Min-max rescale of per-episode rewards to [0, 1].

    Affine, so the shape is unchanged; a flat curve maps to all zeros.
    Raw rewards are mostly negative early on, so a plain divide-by-peak
    would flip the curve's direction; min-max keeps rising curves rising.
    """
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        return curve
    lo, hi = curve.min(), curve.max()
    if hi == lo:
        return np.zeros_like(curve)
    return (curve - lo) / (hi - lo)


def smooth_curve(curve, window: int) -> np.ndarray:
    """Trailing moving average with a warmup-shortened window."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        return curve
    cums = np.concatenate([[0.0], np.cumsum(curve)])
    out = np.empty_like(curve)
    for i in range(curve.size):
        lo = max(0, i + 1 - window)
        out[i] = (cums[i + 1] - cums[lo]) / (i + 1 - lo)
    return out


@dataclass
class EvalMetrics:
    episodes: int
    success_rate: float
    goal_rate: float
    truncation_rate: float
    mean_reward: float
    end_times: np.ndarray             # sorted steps-to-attack-end, successes only

    def cdf(self) -> list[tuple[int, float]]:
        """(t, fraction of all episodes ended by t); tops out at success_rate."""
        if self.episodes == 0:
            return []
        points = []
        for t in np.unique(self.end_times):
            frac = float(np.count_nonzero(self.end_times <= t)) / self.episodes
            points.append((int(t), frac))
        return points


def _eval_chunk(args):
    cfg, params, episode_seeds = args
    agent = Agent(cfg, params=params, collect=False)
    out = []
    for es in episode_seeds:
        r = agent.run_episode(es, collect=False, greedy=True)
        out.append((r.outcome, r.steps, r.total_reward))
    return out


def evaluate(params: PolicyParams, cfg: ExperimentConfig, n_episodes: int,
             seed: int | None = None, jobs: int = 1) -> EvalMetrics:
    """Frozen-policy evaluation: greedy action choice, gates active, no
    learning of any kind.  Episodes are seeded independently, so sharding
    across jobs cannot change the result."""
    cfg = cfg.copy()
    if seed is not None:
        cfg.run.seed = seed
    seeds = [(cfg.run.seed, _STREAM_EVAL, i) for i in range(n_episodes)]
    if jobs > 1 and n_episodes > 1:
        shards = [(cfg, params, seeds[i::jobs]) for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_shard = list(pool.map(_eval_chunk, shards))
        results = [None] * n_episodes
        for w, shard in enumerate(per_shard):
            for j, item in enumerate(shard):
                results[w + j * jobs] = item
    else:
        results = _eval_chunk((cfg, params, seeds))

    outcomes = [r[0] for r in results]
    ends = np.array(sorted(r[1] for r in results if r[0] == "attack_end"),
                    dtype=np.int64)
    n = max(n_episodes, 1)
    return EvalMetrics(
        episodes=n_episodes,
        success_rate=outcomes.count("attack_end") / n,
        goal_rate=outcomes.count("attack_goal") / n,
        truncation_rate=outcomes.count("truncated") / n,
        mean_reward=float(np.mean([r[2] for r in results])) if results else 0.0,
        end_times=ends,
    )
