import numpy as np
import pytest

from satgate.config import ExperimentConfig
from satgate.topology import Topology


@pytest.fixture
def path3():
    """A - B - C path: two detectors, costs 3 and 4."""
    return Topology(3, [(0, 1), (1, 2)], [3.0, 4.0])


@pytest.fixture
def small_cfg():
    cfg = ExperimentConfig()
    cfg.env.n_devices = 12
    cfg.env.initial_compromised = 3
    cfg.env.episode_cap = 60
    cfg.run.episodes = 4
    cfg.run.eval_episodes = 4
    cfg.validate()
    return cfg


def random_topology(rng, n_lo=4, n_hi=12):
    """Small random connected topology for property tests."""
    from satgate.config import EnvConfig
    from satgate.topology import generate_topology
    n = int(rng.integers(n_lo, n_hi + 1))
    cfg = EnvConfig(n_devices=n, mean_degree=float(rng.uniform(1.8, 3.5)))
    return generate_topology(cfg, int(rng.integers(0, 2 ** 31)))
