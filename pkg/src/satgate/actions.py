"""The 14 defense actions and their parameter effects.

Actions 0-5 move the risk threshold and immediately reimage every device
whose last observed risk reaches the new threshold.  Actions 6-11 move the
enabled-detector ratio target, which requires a fresh detector assignment.
Action 12 reimages at the current threshold; action 13 does nothing and is
the always-available fallback the pre-execution gate can never block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_ACTIONS = 14
REIMAGE = 12
DO_NOTHING = 13

THRESHOLD_STEPS = (0.02, 0.05, 0.10)
RATIO_STEPS = (1.0 / 12.0, 2.0 / 12.0, 3.0 / 12.0)

_SIZES = ("small", "medium", "large")


def is_threshold_action(action: int) -> bool:
    return 0 <= action <= 5

def is_ratio_action(action: int) -> bool:
    return 6 <= action <= 11


def threshold_delta(action: int) -> float:
    sign = -1.0 if action < 3 else 1.0
    return sign * THRESHOLD_STEPS[action % 3]


def ratio_delta(action: int) -> float:
    sign = -1.0 if action < 9 else 1.0
    return sign * RATIO_STEPS[(action - 6) % 3]


def ratio_target(action: int, current: float) -> float:
    return float(np.clip(current + ratio_delta(action), 0.0, 1.0))


def threshold_target(action: int, current: float) -> float:
    return float(np.clip(current + threshold_delta(action), 0.0, 1.0))


def action_name(action: int) -> str:
    if is_threshold_action(action):
        direction = "lower" if action < 3 else "raise"
        return f"{direction}-threshold-{_SIZES[action % 3]}"
    if is_ratio_action(action):
        direction = "lower" if action < 9 else "raise"
        return f"{direction}-detector-ratio-{_SIZES[(action - 6) % 3]}"
    if action == REIMAGE:
        return "reimage"
    if action == DO_NOTHING:
        return "do-nothing"
    raise ValueError(f"unknown action {action}")


@dataclass(slots=True)
class ActionEffect:
    threshold: float
    ratio: float
    reimage_targets: np.ndarray
    needs_assignment: bool


def apply_action(action: int, threshold: float, ratio: float,
                 observed_risk: np.ndarray) -> ActionEffect:
    """Resolve an action against the current parameters and last observation.

    Does not touch the environment; the control loop executes the returned
    effect once the gate clears it.
    """
    no_targets = np.empty(0, dtype=np.int64)
    if action == DO_NOTHING:
        return ActionEffect(threshold, ratio, no_targets, False)
    if action == REIMAGE:
        targets = np.flatnonzero(observed_risk >= threshold)
        return ActionEffect(threshold, ratio, targets, False)
    if is_threshold_action(action):
        new_thr = threshold_target(action, threshold)
        targets = np.flatnonzero(observed_risk >= new_thr)
        return ActionEffect(new_thr, ratio, targets, False)
    if is_ratio_action(action):
        return ActionEffect(threshold, ratio_target(action, ratio), no_targets, True)
    raise ValueError(f"unknown action {action}")
