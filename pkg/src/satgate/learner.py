"""Constraint learning from experience.

Per (state, action) cell the learner keeps how often the pair was tried,
how often it drew a gate penalty, and the summed feedback.  Once a cell has
enough evidence and a high enough violation ratio, the pair is proposed as
an ActionExclusionRule; promotion into the constraint set happens between
episodes and is never revoked automatically.
"""

from __future__ import annotations

import enum

import numpy as np

from .actions import N_ACTIONS
from .config import LearnerConfig
from .constraints import ActionExclusionRule, exclusion_rule
from .states import N_STATES


class OutcomeKind(enum.Enum):
    REWARD = "reward"
    PRE_PENALTY = "pre_penalty"
    POST_PENALTY = "post_penalty"


class ExperienceStats:
    def __init__(self, n_states: int = N_STATES, n_actions: int = N_ACTIONS):
        self.events = np.zeros((n_states, n_actions), dtype=np.int64)
        self.violations = np.zeros((n_states, n_actions), dtype=np.int64)
        self.reward_sum = np.zeros((n_states, n_actions), dtype=np.float64)


def record_outcome(stats: ExperienceStats, state: int, action: int,
                   kind: OutcomeKind, value: float = 0.0) -> None:
    stats.events[state, action] += 1
    if kind is not OutcomeKind.REWARD:
        stats.violations[state, action] += 1
    stats.reward_sum[state, action] += value


def propose_rules(stats: ExperienceStats, config: LearnerConfig,
                  already_excluded=frozenset()) -> list[ActionExclusionRule]:
    """Pairs whose evidence clears both thresholds, in (state, action) order."""
    with np.errstate(invalid="ignore"):
        ratio = np.where(stats.events > 0,
                         stats.violations / np.maximum(stats.events, 1), 0.0)
    hot = (stats.events >= config.m_events) & (ratio >= config.violation_ratio)
    rules = []
    for s, a in zip(*np.nonzero(hot)):
        if (int(s), int(a)) in already_excluded:
            continue
        rules.append(exclusion_rule(int(s), int(a)))
    return rules
