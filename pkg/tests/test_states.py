import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from satgate.config import StateConfig
from satgate.env import Observation, Terminal
from satgate.states import (ATTACK_END_STATE, ATTACK_GOAL_STATE, N_STATES,
                            characterize, detector_level,
                            estimate_compromised_ratio, ratio_level,
                            state_features)


def obs_with_risks(risks):
    r = np.asarray(risks, dtype=float)
    return Observation(device_risk=r, energy_actual=0.0, benign_reimaged=0,
                       total_reimaged=0, attack_ended=False, attack_goal=False)


def test_estimate_counts_threshold_crossings():
    obs = obs_with_risks([0.96, 0.2, 0.97, 0.1])
    assert estimate_compromised_ratio(obs, 0.95) == pytest.approx(0.5)


def test_estimate_all_absent_is_zero():
    obs = obs_with_risks([np.nan] * 4)
    assert estimate_compromised_ratio(obs, 0.5) == 0.0


def test_estimate_threshold_inclusive():
    obs = obs_with_risks([0.7, 0.7, 0.7])
    assert estimate_compromised_ratio(obs, 0.7) == 1.0


def test_default_bin_lookup():
    cfg = StateConfig()
    assert ratio_level(0.23, cfg) == 3
    assert detector_level(0.5, cfg) == 1
    assert characterize(0.23, 0.5, Terminal.RUNNING, cfg) == 10


def test_lowest_bins():
    cfg = StateConfig()
    assert characterize(0.0, 0.0, Terminal.RUNNING, cfg) == 0


def test_saturation_above_last_edge():
    cfg = StateConfig()
    # ground truth >= 50% is a terminal, but the estimate can exceed the
    # last edge while the episode keeps running (false positives)
    assert ratio_level(0.9, cfg) == 5
    assert detector_level(1.0, cfg) == 2


def test_terminal_states_override_levels():
    cfg = StateConfig()
    assert characterize(0.4, 0.9, Terminal.ATTACK_END, cfg) == ATTACK_END_STATE
    assert characterize(0.0, 0.0, Terminal.ATTACK_GOAL, cfg) == ATTACK_GOAL_STATE


def test_one_hot_encoding():
    f0 = state_features(0)
    f19 = state_features(19)
    assert f0[0] == 1.0 and f0.sum() == 1.0
    assert f19[19] == 1.0 and f19.sum() == 1.0


def test_features_reject_out_of_range():
    with pytest.raises(ValueError):
        state_features(20)
    with pytest.raises(ValueError):
        state_features(-1)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_characterize_always_in_range(est, det):
    cfg = StateConfig()
    s = characterize(est, det, Terminal.RUNNING, cfg)
    assert 0 <= s < ATTACK_END_STATE


@given(st.floats(0.0, 1.0))
def test_levels_monotone_in_ratio(x):
    cfg = StateConfig()
    assert ratio_level(x, cfg) <= ratio_level(min(x + 0.07, 1.0), cfg)


def test_bin_edges_are_half_open_left_inclusive():
    cfg = StateConfig()
    # 0.05 is the left edge of level 1
    assert ratio_level(0.05 - 1e-12, cfg) == 0
    assert ratio_level(0.05, cfg) == 1
    assert ratio_level(0.1, cfg) == 2


def test_state_count():
    assert N_STATES == 20
    labels = {characterize(r / 100, d / 2.0 * 0.99, Terminal.RUNNING, StateConfig())
              for r in range(0, 50, 2) for d in range(3)}
    assert labels <= set(range(18))
