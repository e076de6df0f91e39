import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gazerisk.evaluation import (
    AlarmEvent,
    AuditResult,
    Conflict,
    MetricError,
    alarm_audit,
    confusion_matrix,
    exceedance_table,
    first_stable_correct,
    intent_metrics,
    read_csv,
    time_to_maneuver,
    traj_metrics,
    write_csv,
)


# ---------------------------------------------------------------------------
# trajectory metrics


def test_perfect_prediction_is_zero():
    true = np.random.default_rng(0).normal(size=(4, 10, 2))
    m = traj_metrics(true, true.copy())
    assert (m.ade, m.fde, m.sde) == (0.0, 0.0, 0.0)
    assert m.exceedance == (0.0, 0.0, 0.0, 0.0)


def test_constant_offset():
    true = np.zeros((3, 10, 2))
    m = traj_metrics(true + [3.0, 4.0], true, horizon=2.1)
    assert m.ade == pytest.approx(5.0) and m.fde == pytest.approx(5.0) and m.sde == pytest.approx(5.0)
    assert m.exceedance == (1.0, 1.0, 1.0, 1.0)


def test_against_loop_oracle(rng):
    pred, true = rng.normal(size=(5, 10, 2)), rng.normal(size=(5, 10, 2))
    for horizon, k in ((0.9, 3), (2.1, 7), (3.0, 10)):
        dists = [[math.hypot(pred[i, t, 0] - true[i, t, 0], pred[i, t, 1] - true[i, t, 1]) for t in range(k)]
                 for i in range(5)]
        ade = sum(sum(r) for r in dists) / (5 * k)
        fde = sum(r[-1] for r in dists) / 5
        sde = math.sqrt(sum(d * d for r in dists for d in r) / (5 * k))
        m = traj_metrics(pred, true, horizon)
        assert abs(m.ade - ade) < 1e-12 and abs(m.fde - fde) < 1e-12 and abs(m.sde - sde) < 1e-12


@settings(max_examples=100)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100))
def test_ade_at_most_sde(n, seed, scale):
    r = np.random.default_rng(seed)
    m = traj_metrics(r.normal(size=(n, 10, 2)) * scale, np.zeros((n, 10, 2)))
    assert 0.0 <= m.ade <= m.sde * (1 + 1e-12)


def test_metric_errors():
    with pytest.raises(MetricError):
        traj_metrics(np.zeros((2, 10, 2)), np.zeros((2, 9, 2)))
    with pytest.raises(MetricError):
        traj_metrics(np.zeros((2, 10, 2)), np.zeros((2, 10, 2)), horizon=1.5)
    with pytest.raises(MetricError):
        traj_metrics(np.zeros((0, 10, 2)), np.zeros((0, 10, 2)))


def test_exceedance_examples():
    assert exceedance_table([0.5] * 4) == (0.0, 0.0, 0.0, 0.0)
    assert exceedance_table([0.5, 1.5, 2.5, 3.5, 4.5]) == (0.8, 0.6, 0.4, 0.2)


@settings(max_examples=100)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=50))
def test_exceedance_matches_count_and_is_nonincreasing(fde):
    table = exceedance_table(fde)
    for thr, frac in zip((1.0, 2.0, 3.0, 4.0), table):
        assert frac == sum(1 for v in fde if v > thr) / len(fde)
    assert all(a >= b for a, b in zip(table, table[1:]))


# ---------------------------------------------------------------------------
# intention metrics


def test_perfect_intentions():
    y = [0, 1, 2, 2, 1, 0]
    m = intent_metrics(y, y)
    assert np.all(m.precision == 1) and np.all(m.recall == 1) and np.all(m.f1 == 1)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60))
def test_prf_against_brute_force(pairs):
    pred = [p for p, _ in pairs]
    true = [t for _, t in pairs]
    m = intent_metrics(pred, true)
    for c in range(3):
        tp = sum(1 for p, t in pairs if p == c and t == c)
        fp = sum(1 for p, t in pairs if p == c and t != c)
        fn = sum(1 for p, t in pairs if p != c and t == c)
        pr = tp / (tp + fp) if tp + fp else 0.0
        re = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * pr * re / (pr + re) if pr + re else 0.0
        assert m.precision[c] == pytest.approx(pr, abs=1e-15)
        assert m.recall[c] == pytest.approx(re, abs=1e-15)
        assert m.f1[c] == pytest.approx(f1, abs=1e-15)
        for c2 in range(3):
            assert m.confusion[c, c2] == sum(1 for p, t in pairs if t == c and p == c2)


def test_confusion_length_mismatch():
    with pytest.raises(MetricError):
        confusion_matrix([0, 1], [0])


def test_t2m_example():
    times = np.round(np.arange(80, 121) * 0.1, 10)
    preds = [1 if t >= 10.0 - 1e-9 else 0 for t in times]
    assert time_to_maneuver(times, preds, 1, 10.9) == pytest.approx(0.9)


def test_t2m_ignores_flicker_and_lags():
    times = np.round(np.arange(80, 121) * 0.1, 10)
    preds = [0] * len(times)
    preds[5] = 1  # a single correct frame at 8.5 that does not last
    for i, t in enumerate(times):
        if t >= 11.2 - 1e-9:
            preds[i] = 1
    assert time_to_maneuver(times, preds, 1, 10.9) == pytest.approx(-0.3)
    assert first_stable_correct(times, [0] * len(times), 1, 10.9) is None


def test_t2m_missing_events_are_counted():
    m = intent_metrics([1], [1], t2m=[0.5, None, 1.5])
    assert m.t2m == (0.5, 1.5) and m.t2m_missing == 1 and m.mean_t2m == 1.0
    assert intent_metrics([1], [1]).mean_t2m is None


# ---------------------------------------------------------------------------
# alarm audit


def test_audit_examples():
    r = alarm_audit([AlarmEvent(7.0, 2)], [Conflict(2, 10.0)])
    assert r.as_tuple() == (1, 0, 0) and r.leads == [3.0]
    assert alarm_audit([AlarmEvent(7.0, 1)], []).as_tuple() == (0, 1, 0)
    assert alarm_audit([], []).as_tuple() == (0, 0, 0)
    assert alarm_audit([], [Conflict(0, 5.0)]).as_tuple() == (0, 0, 1)
    # an alarm after the collision or on another obstacle is false, and the conflict is missed
    assert alarm_audit([AlarmEvent(11.0, 2), AlarmEvent(8.0, 0)], [Conflict(2, 10.0)]).as_tuple() == (0, 2, 1)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(0, 20), st.integers(0, 3)), max_size=8),
       st.lists(st.tuples(st.integers(0, 3), st.floats(0, 20)), max_size=4))
def test_audit_partitions_alarms(alarms, conflicts):
    al = [AlarmEvent(t, o) for t, o in alarms]
    cf = [Conflict(o, t) for o, t in conflicts]
    r = alarm_audit(al, cf)
    assert r.true_alarms + r.false_alarms == len(al)
    assert 0 <= r.missed <= len(cf)
    assert len(r.leads) == len(cf) - r.missed
    assert all(v >= 0 for v in r.leads)


def test_audit_accumulates():
    total = AuditResult()
    total += alarm_audit([AlarmEvent(7.0, 2)], [Conflict(2, 10.0)])
    total += alarm_audit([AlarmEvent(1.0, 0)], [Conflict(1, 3.0)])
    assert total.as_tuple() == (1, 1, 1) and total.leads == [3.0]


def test_csv_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b", "c"], [[1, 0.1 + 0.2, None], ["x", float("nan"), 2.5]])
    rows = read_csv(path)
    assert rows == [{"a": "1", "b": repr(0.1 + 0.2), "c": ""}, {"a": "x", "b": "", "c": "2.5"}]
    assert float(rows[0]["b"]) == 0.1 + 0.2
