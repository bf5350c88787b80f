"""Attacker strategies: who explores, and how infection spreads.

Each step the attacker picks an exploration set among currently compromised
devices, then every explored device attacks one uniformly chosen
uncompromised neighbor with success probability p_compromise.  All new
compromises land after the draws, so ordering inside a step cannot matter.
"""

from __future__ import annotations

import enum

import numpy as np

from .config import AttackerConfig, EnvConfig
from .env import CpsEnv


class AttackerKind(enum.Enum):
    NAIVE = "naive"
    STEALTHY = "stealthy"
    AGGRESSIVE = "aggressive"

    @classmethod
    def from_str(cls, name: str) -> "AttackerKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown attacker kind {name!r}") from None


def attack_shape_k(kind: AttackerKind, env_cfg: EnvConfig) -> float:
    """Risk-score tail shape for links touched by this attacker's tooling."""
    if kind is AttackerKind.NAIVE:
        return env_cfg.k_naive
    return env_cfg.k_stealthy


def exploration_budget(kind: AttackerKind, n_explore: int) -> int:
    # Stealthy trades reach for a lower profile: half the exploration budget
    # on top of the harder-to-detect score distribution.
    if kind is AttackerKind.STEALTHY:
        return n_explore // 2
    return n_explore


def _uncompromised_neighbor_counts(env: CpsEnv) -> np.ndarray:
    edges = env.topology.edges
    comp = env.compromised
    n = env.topology.n_devices
    comp_nbrs = (np.bincount(edges[:, 0], weights=comp[edges[:, 1]], minlength=n)
                 + np.bincount(edges[:, 1], weights=comp[edges[:, 0]], minlength=n))
    return env.topology.degree - comp_nbrs.astype(np.int64)


def select_exploration_set(kind: AttackerKind, env: CpsEnv, config: AttackerConfig,
                           rng: np.random.Generator) -> np.ndarray:
    """Compromised device ids to explore this step, sorted ascending."""
    comp_ids = np.flatnonzero(env.compromised)
    if comp_ids.size == 0:
        return comp_ids
    budget = min(exploration_budget(kind, config.n_explore), comp_ids.size)
    if budget == 0:
        return comp_ids[:0]
    if kind is AttackerKind.NAIVE:
        picked = rng.choice(comp_ids, size=budget, replace=False)
        return np.sort(picked)
    # Stealthy and aggressive both look for frontier nodes with the most
    # uncompromised neighbors; ties go to the lowest device id.
    counts = _uncompromised_neighbor_counts(env)[comp_ids]
    order = np.lexsort((comp_ids, -counts))
    return np.sort(comp_ids[order[:budget]])


def attempt_propagation(env: CpsEnv, exploration: np.ndarray, p_compromise: float,
                        rng: np.random.Generator) -> np.ndarray:
    """One spread attempt per explored device; returns newly compromised ids."""
    newly = []
    for v in exploration:
        nbrs = env.topology.neighbors(int(v))
        open_nbrs = nbrs[~env.compromised[nbrs]]
        if open_nbrs.size == 0:
            continue
        target = int(open_nbrs[rng.integers(open_nbrs.size)])
        if rng.random() < p_compromise:
            newly.append(target)
    result = np.unique(np.array(newly, dtype=np.int64))
    env.compromised[result] = True
    return result
