"""Discrete agent state: estimated compromise ratio level x detector level.

The agent's view of the plant is compressed to 20 states.  18 of them are the
cross product of 6 estimated-compromise-ratio levels and 3 enabled-detector
ratio levels; two more absorb the terminal conditions.  Features are the
one-hot encoding of the state index.
"""

from __future__ import annotations

import numpy as np

from .config import StateConfig
from .env import Observation, Terminal

N_RATIO_LEVELS = 6
N_DETECTOR_LEVELS = 3
ATTACK_END_STATE = 18
ATTACK_GOAL_STATE = 19
N_STATES = 20

_EYE = np.eye(N_STATES)


def estimate_compromised_ratio(obs: Observation, threshold: float) -> float:
    """Fraction of devices whose observed risk reaches the threshold.

    Unobserved devices count as below threshold; NaN comparisons are False.
    """
    n = obs.device_risk.size
    return float(np.count_nonzero(obs.device_risk >= threshold)) / n


def ratio_level(ratio: float, cfg: StateConfig) -> int:
    # Estimates at or beyond the last edge saturate into the top level;
    # the terminal attack-goal state handles the >= 50% ground-truth case.
    inner = np.asarray(cfg.ratio_bins[1:-1])
    if ratio >= cfg.ratio_bins[-1]:
        return N_RATIO_LEVELS - 1
    return int(np.searchsorted(inner, ratio, side="right"))


def detector_level(ratio: float, cfg: StateConfig) -> int:
    inner = np.asarray(cfg.detector_bins[1:-1])
    if ratio >= cfg.detector_bins[-1]:
        return N_DETECTOR_LEVELS - 1
    return int(np.searchsorted(inner, ratio, side="right"))


def characterize(est_ratio: float, det_ratio: float, terminal: Terminal,
                 cfg: StateConfig) -> int:
    if terminal == Terminal.ATTACK_END:
        return ATTACK_END_STATE
    if terminal == Terminal.ATTACK_GOAL:
        return ATTACK_GOAL_STATE
    return ratio_level(est_ratio, cfg) * N_DETECTOR_LEVELS + detector_level(det_ratio, cfg)


def state_features(index: int) -> np.ndarray:
    if not 0 <= index < N_STATES:
        raise ValueError(f"state index {index} out of range")
    return _EYE[index]
