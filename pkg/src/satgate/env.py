"""Simulated cyber-physical plant under intrusion.

Ground truth is a compromised flag per device.  The agent never sees it
directly: each enabled link detector samples a risk score once per step from
a power-law shaped distribution whose tail depends on whether either endpoint
of the link is compromised, and a device's observed risk is the mean of the
scores from its enabled incident detectors.  Devices with no enabled incident
detector are unobserved that step (NaN risk, treated as below any threshold).

Reimaging resets the compromised flag of the targeted devices.  The episode
terminates when the attacker holds at least half the devices (attack goal)
or when no compromised device remains (attack end).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .config import EnvConfig
from .topology import Device, Topology


class Terminal(enum.IntEnum):
    RUNNING = 0
    ATTACK_GOAL = 1
    ATTACK_END = 2


@dataclass(slots=True)
class Observation:
    device_risk: np.ndarray            # (n,) float, NaN where unobserved
    energy_actual: float
    benign_reimaged: int
    total_reimaged: int
    attack_ended: bool
    attack_goal: bool


def risk_score_sample(compromised: bool, shape_k: float, u: float) -> float:
    """One detector reading from the inverse-CDF of the score distribution.

    Compromised links concentrate near 1 (u ** (1/k)), benign links mirror
    that near 0.  Stealthier attack tooling uses a smaller k, which drags the
    compromised tail lower and makes the two distributions harder to separate.
    """
    if not shape_k > 1.0:
        raise ValueError("shape_k must exceed 1")
    if not 0.0 <= u <= 1.0:
        raise ValueError("u must be a unit sample")
    if compromised:
        return u ** (1.0 / shape_k)
    return 1.0 - u ** (1.0 / shape_k)


def device_risk_means(scores: np.ndarray, edge_ids: np.ndarray,
                      topology: Topology) -> np.ndarray:
    """Mean enabled-detector score per device; NaN for unobserved devices."""
    n = topology.n_devices
    ends = np.concatenate([topology.edges[edge_ids, 0], topology.edges[edge_ids, 1]])
    both = np.concatenate([scores, scores])
    sums = np.bincount(ends, weights=both, minlength=n)
    counts = np.bincount(ends, minlength=n)
    risk = np.full(n, np.nan)
    seen = counts > 0
    risk[seen] = sums[seen] / counts[seen]
    return risk


class CpsEnv:
    """Mutable episode state plus the step mechanics the control loop drives."""

    def __init__(self, topology: Topology, config: EnvConfig, attack_shape_k: float,
                 rng: np.random.Generator):
        self.topology = topology
        self.config = config
        self.attack_shape_k = float(attack_shape_k)
        self.rng = rng
        self.compromised = np.zeros(topology.n_devices, dtype=bool)
        self.enabled = np.zeros(topology.m, dtype=bool)
        self.threshold = config.threshold_init
        self.ratio = config.ratio_init
        self.t = 0
        self.terminal = Terminal.RUNNING
        self.last_obs: Observation | None = None
        self._step_reimaged = (0, 0)

    @property
    def devices(self) -> list[Device]:
        return [Device(i, bool(c)) for i, c in enumerate(self.compromised)]

    def reset(self, enabled: np.ndarray) -> Observation:
        cfg = self.config
        self.compromised[:] = False
        if cfg.initial_compromised > 0:
            seeds = self.rng.choice(self.topology.n_devices,
                                    size=cfg.initial_compromised, replace=False)
            self.compromised[seeds] = True
        self.enabled = np.asarray(enabled, dtype=bool).copy()
        self.threshold = cfg.threshold_init
        self.ratio = cfg.ratio_init
        self.t = 0
        self._step_reimaged = (0, 0)
        self.terminal = terminal_check(self)
        self.last_obs = emit_observation(self, self.rng)
        return self.last_obs


def apply_reimage(env: CpsEnv, targets: np.ndarray) -> tuple[int, int]:
    """Reimage the target devices; returns (benign_reimaged, total_reimaged).

    Reimaging a clean device wastes effort but is harmless otherwise, so the
    operation is idempotent.  Ground truth of the targets is revealed here
    only as the benign/total split used for cost bookkeeping.
    """
    targets = np.asarray(targets, dtype=np.int64)
    total = int(targets.size)
    benign = total - int(np.count_nonzero(env.compromised[targets]))
    env.compromised[targets] = False
    env._step_reimaged = (benign, total)
    return benign, total


def terminal_check(env: CpsEnv) -> Terminal:
    count = int(np.count_nonzero(env.compromised))
    if count * 2 >= env.topology.n_devices:
        return Terminal.ATTACK_GOAL
    if count == 0:
        return Terminal.ATTACK_END
    return Terminal.RUNNING


def emit_observation(env: CpsEnv, rng: np.random.Generator) -> Observation:
    cfg = env.config
    edge_ids = np.flatnonzero(env.enabled)
    edges = env.topology.edges
    link_comp = env.compromised[edges[edge_ids, 0]] | env.compromised[edges[edge_ids, 1]]
    u = rng.random(edge_ids.size)
    scores = np.where(link_comp,
                      u ** (1.0 / env.attack_shape_k),
                      1.0 - u ** (1.0 / cfg.k_benign))
    risk = device_risk_means(scores, edge_ids, env.topology)
    nominal = float(env.topology.costs[edge_ids].sum())
    noise = rng.uniform(-cfg.energy_noise, cfg.energy_noise)
    benign, total = env._step_reimaged
    return Observation(
        device_risk=risk,
        energy_actual=nominal * (1.0 + noise),
        benign_reimaged=benign,
        total_reimaged=total,
        attack_ended=env.terminal == Terminal.ATTACK_END,
        attack_goal=env.terminal == Terminal.ATTACK_GOAL,
    )
