import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import EXTENT, phantom_with
from tactilesense.env import DOWN, UP, ActionSpec, EnvConfig, EnvObservation, ProbeEnv
from tactilesense.phantom import InclusionSpec, PhantomSpec, SensorConfig, TactileSimulator


def make_env(phantom=None, **kw):
    cfg = SensorConfig.reduced(pos_noise_bound=0.0)
    sim = TactileSimulator(phantom or PhantomSpec(EXTENT), cfg, seed=0, start=(80, 100, 25))
    return ProbeEnv(sim, EnvConfig(**kw))


def test_action_spec():
    a = ActionSpec(2.0)
    assert a.delta(UP) == (0, 0, 2.0) and a.delta(DOWN) == (0, 0, -2.0)
    with pytest.raises(ValueError):
        ActionSpec(0.0)
    with pytest.raises(ValueError):
        a.delta(2)


@given(st.tuples(st.floats(0, 165.1), st.floats(0, 215.9), st.floats(-15, 30)))
def test_observation_invertible(p):
    lo, hi = (0, 0, -15), (165.1, 215.9, 30)
    obs = EnvObservation.build(p, lo, hi)
    assert np.all(obs.normalized >= -1 - 1e-12) and np.all(obs.normalized <= 1 + 1e-12)
    assert np.allclose(EnvObservation.denormalize(obs.normalized, lo, hi), p, atol=1e-9)


def test_reset_places_probe():
    env = make_env()
    obs = env.reset(xy=(50, 60))
    assert obs.end_effector_pos == (50.0, 60.0, 25.0)


def test_step_moves_and_rewards_pixel_sum(hard):
    env = make_env(phantom_with(hard))
    env.reset(xy=(80, 100), z=-1.0)
    obs, r, done, trunc, info = env.step(DOWN)
    assert obs.end_effector_pos[2] == -2.0
    assert r == pytest.approx(info["frame"].pixel_sum / env.sim.cfg.pixel_count)
    assert r >= 0 and not done


def test_safety_cutoff_terminal_zero_reward(hard):
    env = make_env(phantom_with(hard), max_force=10.0)
    env.reset(xy=(80, 100), z=-10.0)
    _, r, done, trunc, info = env.step(DOWN)
    assert info["force"] > 10.0 and done and r == 0.0 and not trunc


def test_plateau_truncates(hard):
    env = make_env(phantom_with(hard), plateau_steps=3, step_size=0.1)
    env.reset(xy=(80, 100), z=-1.5)
    flags = [env.step(DOWN)[3] for _ in range(3)]
    assert flags == [False, False, True]


def test_step_budget_truncates():
    env = make_env(max_steps=4)
    env.reset(xy=(80, 100))
    flags = [env.step(UP if k % 2 else DOWN)[3] for k in range(4)]
    assert flags == [False, False, False, True]


def test_training_reset_places_inclusion_under_probe():
    cfg = SensorConfig.reduced(pos_noise_bound=0.0)
    sim = TactileSimulator(PhantomSpec(EXTENT), cfg, seed=5, start=(80, 100, 25))
    incs = (InclusionSpec((0, 0, -6), 15.3, 94.4), InclusionSpec((0, 0, -6), 18.9, 628.0))
    env = ProbeEnv(sim, EnvConfig(randomize_xy=True, z_start_range=(0, 20), training_inclusions=incs))
    seen = set()
    for _ in range(20):
        obs = env.reset()
        (inc,) = sim.phantom.inclusions
        assert inc.center_roi[:2] == pytest.approx(obs.end_effector_pos[:2], abs=1e-9)
        assert 0 <= obs.end_effector_pos[2] <= 20
        seen.add(inc.diameter)
    assert seen == {15.3, 18.9}
