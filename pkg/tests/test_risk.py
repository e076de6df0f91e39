import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gazerisk import pipeline, scenegen as sg
from gazerisk.evaluation import AlarmEvent
from gazerisk.geometry import OrientedRect
from gazerisk.predictor import ctra_batch
from gazerisk.risk import (
    RiskConfig,
    RiskError,
    RiskTrace,
    alarm_stream,
    collision_probability,
    ctra_ra,
    extrapolate_obstacles,
    horizon_max,
    horizon_risk,
    mtp_ra,
    particle_centers,
    particle_rng,
    sample_particles,
)
from gazerisk.riskstats import StepErrorModel

UNIT = StepErrorModel(1, (0.0, 0.0), ((1.0, 0.0), (0.0, 1.0)), 100)
MODELS = [StepErrorModel(k, (0.0, 0.0), ((1.0, 0.0), (0.0, 1.0)), 100) for k in range(1, 11)]
POINT_EGO = RiskConfig(n_particles=10_000, ego_length=1e-9, ego_width=1e-9)
HALF_PLANE = OrientedRect((1e6, 0.0), 0.0, 2e6, 2e6)  # x >= 0


def still(pos, steps=10):
    return np.tile(np.asarray(pos, dtype=float), (1, steps, 1)).reshape(-1, steps, 2)


# ---------------------------------------------------------------------------
# particles


def test_particles_inside_ellipse_and_centred():
    m = StepErrorModel(1, (0.5, -0.2), ((2.0, 0.5), (0.5, 1.0)), 100)
    p = sample_particles(m, 10_000, particle_rng(0, 1, 1))
    assert p.shape == (10_000, 2)
    assert np.all(m.mahalanobis2(p) <= 5.991465 + 1e-9)
    u = sample_particles(UNIT, 10_000, particle_rng(3, 0, 1))
    assert np.all(np.abs(u.mean(axis=0)) < 0.05)


def test_particles_deterministic():
    a = sample_particles(UNIT, 500, particle_rng(1, 2, 3))
    b = sample_particles(UNIT, 500, particle_rng(1, 2, 3))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_particles(UNIT, 500, particle_rng(1, 2, 4)))
    assert np.array_equal(sample_particles(UNIT, 50, 7), sample_particles(UNIT, 50, 7))


def test_rejection_retry_cap():
    class Wild:
        def standard_normal(self, shape):
            return np.full(shape, 100.0)

    with pytest.raises(RiskError):
        sample_particles(UNIT, 100, Wild())


def test_particle_center_is_waypoint_minus_rotated_error():
    c = particle_centers((5.0, 1.0), math.pi / 2, np.array([[1.0, 0.0], [0.0, 2.0]]))
    np.testing.assert_allclose(c, [[5.0, 0.0], [7.0, 1.0]], atol=1e-12)


def test_config_validation():
    with pytest.raises(RiskError):
        RiskConfig(n_particles=50)
    for bad in (0.0, 1.0):
        with pytest.raises(RiskError):
            RiskConfig(threshold=bad)
    assert RiskConfig().horizon_steps == 7


# ---------------------------------------------------------------------------
# collision probability


def test_covering_and_distant_obstacles():
    cfg = RiskConfig()
    big = OrientedRect((0, 0), 0, 30, 30)
    far = OrientedRect((100, 0), 0, 0.5, 0.5)
    assert collision_probability((0, 0), UNIT, 0.0, [big], cfg, particle_rng(0, 0, 1)) == 1.0
    assert collision_probability((0, 0), UNIT, 0.0, [far], cfg, particle_rng(0, 0, 1)) == 0.0
    assert collision_probability((0, 0), UNIT, 0.0, [], cfg, particle_rng(0, 0, 1)) == 0.0
    with pytest.raises(RiskError):
        collision_probability((0, 0), None, 0.0, [far], cfg, 0)


def test_half_plane_monte_carlo():
    bound = 2 * math.sqrt(0.25 / POINT_EGO.n_particles) + 0.005
    for seed in range(20):
        p = collision_probability((0.0, 0.0), UNIT, 0.0, [HALF_PLANE], POINT_EGO, particle_rng(seed, 0, 1))
        assert abs(p - 0.5) <= 0.02
        assert abs(p - 0.5) <= bound


@settings(max_examples=60, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0, 3), st.floats(0, 3),
       st.floats(-math.pi, math.pi), st.integers(0, 1000))
def test_monotone_in_obstacle_size(x, y, l, w, dl, dw, heading, seed):
    cfg = RiskConfig(n_particles=400)
    small = OrientedRect((x, y), 0.3, l, w)
    large = OrientedRect((x, y), 0.3, l + dl, w + dw)
    p_small = collision_probability((0, 0), UNIT, heading, [small], cfg, particle_rng(seed, 0, 1))
    p_large = collision_probability((0, 0), UNIT, heading, [large], cfg, particle_rng(seed, 0, 1))
    assert 0.0 <= p_small <= p_large <= 1.0


# ---------------------------------------------------------------------------
# horizon aggregation


def test_horizon_max_example():
    assert horizon_max([0, 0.1, 0.6, 0.2, 0, 0, 0]) == (0.6, 3)
    assert horizon_max([0, 0, 0, 0, 0, 0, 0, 0.9, 1.0, 1.0]) == (0.0, 0)
    with pytest.raises(RiskError):
        horizon_max([])


def _straight(speed=10.0):
    return np.stack([speed * 0.3 * np.arange(1, 11), np.zeros(10)], axis=1)


def test_horizon_risk_picks_the_step_and_obstacle():
    traj = _straight()
    tracks = np.full((2, 10, 2), 500.0)
    tracks[1, 2] = traj[2]  # obstacle 1 sits on waypoint 3 only
    hr = horizon_risk(traj, MODELS, tracks, RiskConfig(), seed=1)
    assert hr.step == 3 and hr.obstacle == 1 and hr.p_max > 0.5
    assert hr.per_step[2] == hr.p_max and len(hr.per_step) == 7


def test_horizon_ignores_steps_beyond_risk_horizon():
    traj = _straight()
    tracks = np.full((1, 10, 2), 500.0)
    tracks[0, 8] = traj[8]
    hr = horizon_risk(traj, MODELS, tracks, RiskConfig())
    assert hr.p_max == 0.0 and hr.step == 0 and hr.obstacle == -1
    # the caller may pass only the in-horizon part of the tracks
    assert horizon_risk(traj, MODELS[:7], tracks[:, :7], RiskConfig()).p_max == 0.0


def test_horizon_without_obstacles():
    hr = horizon_risk(_straight(), MODELS, np.zeros((0, 10, 2)), RiskConfig())
    assert hr.p_max == 0.0 and hr.per_step == (0.0,) * 7
    with pytest.raises(RiskError):
        horizon_risk(_straight()[:5], MODELS, np.zeros((0, 10, 2)), RiskConfig())
    with pytest.raises(RiskError):
        horizon_risk(_straight(), MODELS[:3], np.zeros((0, 10, 2)), RiskConfig())


def test_horizon_risk_deterministic():
    traj = _straight()
    tracks = still(traj[4] + [0.5, 1.2])
    a = horizon_risk(traj, MODELS, tracks, RiskConfig(), seed=4, tick=30)
    b = horizon_risk(traj, MODELS, tracks, RiskConfig(), seed=4, tick=30)
    assert a == b and 0.0 < a.p_max < 1.0


# ---------------------------------------------------------------------------
# risk variants


def test_ctra_ra_examples():
    cfg = RiskConfig()
    traj = _straight()
    assert ctra_ra(traj, still((12.0, 0.3)), cfg) == (1, 0)
    assert ctra_ra(traj, np.zeros((0, 10, 2)), cfg) == (0, -1)
    assert ctra_ra(traj, still((12.0, 5.0)), cfg) == (0, -1)
    # beyond the horizon does not count
    assert ctra_ra(traj, still((27.0, 0.0)), cfg) == (0, -1)


def test_ctra_ra_false_alarm_on_early_turn():
    cfg = RiskConfig()
    baits = [ep for ep in sg.risk_suite(0, n_turns=6, n_conflicts=0, n_bait=4) if ep.meta["bait"]]
    fired = 0
    for ep in baits:
        assert not ep.meta["conflicts"]
        ticks = sg.episode_ticks(ep)
        ctra = ctra_batch(ticks.obs)
        flags = [ctra_ra(ctra[i], pipeline.obstacle_tracks(ep, int(round(t / 0.1)), 7), cfg)[0]
                 for i, t in enumerate(ticks.t0)]
        onsets = alarm_stream(flags, cfg)
        if onsets:
            fired += 1
            assert ticks.t0[onsets[0]] < ep.meta["turn_start"] + 1.0
    assert fired == len(baits) == 4


def test_mtp_ra_arithmetic():
    cfg = RiskConfig(ped_length=100.0, ped_width=100.0)
    hit = np.tile([10.0, 0.0], (10, 1))
    away = np.tile([1000.0, 1000.0], (10, 1)) + np.arange(10)[:, None]
    tracks = still((10.0, 0.0))
    trajs = np.stack([hit, away, away])
    p, top = mtp_ra(np.array([0.5, 0.3, 0.2]), trajs, MODELS, tracks, cfg)
    assert p == pytest.approx(0.5) and top.p_max == 1.0
    assert mtp_ra(np.array([0.5, 0.3, 0.2]), np.stack([away] * 3), MODELS, tracks, cfg)[0] == 0.0
    assert mtp_ra(np.array([0.5, 0.3, 0.2]), np.stack([hit] * 3), MODELS, tracks, cfg)[0] == pytest.approx(1.0)


def test_obstacle_extrapolation():
    out = extrapolate_obstacles([[0.0, 0.0], [5.0, 5.0]], [[0.1, 0.0], [5.0, 5.0]], 3)
    np.testing.assert_allclose(out[0], [[0.4, 0.0], [0.7, 0.0], [1.0, 0.0]])
    np.testing.assert_allclose(out[1], [[5.0, 5.0]] * 3)


# ---------------------------------------------------------------------------
# alarms


def test_alarm_examples():
    assert alarm_stream([0.5, 0.5, 0.41, 0.9, 0.1]) == [2]
    assert alarm_stream([0.5, 0.39, 0.5, 0.5]) == []
    assert alarm_stream([0.41] * 10) == [2]
    assert alarm_stream([0.4] * 10) == []  # the threshold itself does not count
    assert alarm_stream([0.5] * 3 + [0.0] + [0.5] * 3) == [2, 6]


def _alarm_oracle(seq, thr=0.4, k=3):
    out = []
    for i in range(len(seq)):
        window = seq[max(0, i - k + 1):i + 1]
        before = seq[i - k] if i - k >= 0 else 0.0
        if len(window) == k and all(v > thr for v in window) and not before > thr:
            out.append(i)
    return out


@settings(max_examples=300)
@given(st.lists(st.sampled_from([0.0, 0.39, 0.4, 0.41, 0.8, 1.0]), max_size=40))
def test_alarm_matches_three_consecutive_rule(seq):
    assert alarm_stream(seq) == _alarm_oracle(seq)


def test_trace_finalize():
    tr = RiskTrace("x")
    for i, p in enumerate([0.1, 0.5, 0.6, 0.7, 0.2]):
        tr.add(2.0 + 0.1 * i, p, 3, 0)
    events = tr.finalize(RiskConfig())
    assert events == [AlarmEvent(tr.times[3], 0)]
    rows = list(tr.rows())
    assert [r[4] for r in rows] == [0, 0, 0, 1, 0]
