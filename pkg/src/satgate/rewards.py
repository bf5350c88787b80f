"""Step feedback: operational reward and the two gate penalties."""

from __future__ import annotations

from .config import RewardParams


def compute_reward(benign_reimaged: int, total_reimaged: int, attack_ended: bool,
                   attack_goal: bool, params: RewardParams) -> float:
    """Linear cost/incentive balance for one executed step.

    Reimaging is charged per device plus an extra toll per benign device hit;
    ending the attack pays the incentive, losing half the plant costs the
    violation price.  The two terminal flags are mutually exclusive.
    """
    if benign_reimaged < 0 or total_reimaged < 0 or benign_reimaged > total_reimaged:
        raise ValueError("invalid reimage counts")
    if attack_ended and attack_goal:
        raise ValueError("attack_ended and attack_goal cannot both hold")
    return (-params.benign_reimage_cost * benign_reimaged
            - params.reimage_cost * total_reimaged
            + (params.attack_end_incentive if attack_ended else 0.0)
            - (params.attack_goal_cost if attack_goal else 0.0))


def compute_penalty(kind: str, severity: float, params: RewardParams) -> float:
    """Negative feedback from a gate: flat before execution, graduated after."""
    if kind == "pre":
        return -params.pre_penalty
    if kind == "post":
        if severity < 0:
            raise ValueError("severity must be nonnegative")
        return -params.post_penalty * (1.0 + severity)
    raise ValueError(f"unknown penalty kind {kind!r}")
