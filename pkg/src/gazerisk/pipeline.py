"""End-to-end experiment steps shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import aoi, evaluation as ev, risk as rk, riskstats, scenegen as sg
from .geometry import points_to_frame
from .predictor import (
    ModelBundle,
    TrainConfig,
    TrainedModel,
    ctra_batch,
    intent_probs,
    multipath_outputs,
    single_trajectories,
    train_model,
)

ABLATION_ROWS = ("S", "S+E", "S+E+C", "S+E+C+O")


def derived_seed(master: int, *counters: int) -> int:
    return int(np.random.SeedSequence([int(master), *counters]).generate_state(1, np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    episodes: list
    records: sg.RecordSet
    train: sg.RecordSet
    val: sg.RecordSet
    test: sg.RecordSet
    groups: tuple  # episode ids per split

    def episodes_in(self, split: int) -> list:
        ids = set(self.groups[split])
        return [e for e in self.episodes if e.episode_id in ids]


def build_dataset(spec: sg.CorpusSpec, seed: int, stride: float = 0.1) -> Dataset:
    episodes = sg.generate_corpus(spec, seed)
    return dataset_from_episodes(episodes, seed, stride)


def dataset_from_episodes(episodes, seed: int, stride: float = 0.1) -> Dataset:
    records = sg.window_dataset(episodes, stride)
    (train, val, test), groups = sg.split_dataset(records, seed=seed)
    return Dataset(list(episodes), records, train, val, test, groups)


# ---------------------------------------------------------------------------
# intentions


def episode_t2m(model: TrainedModel, episodes, min_hold: float = 0.2) -> list:
    """T2M of every turn episode, None where no stable correct prediction exists."""
    out = []
    for ep in episodes:
        if ep.config.turn == sg.STRAIGHT:
            continue
        onset = aoi.detect_steer_onset(ep.steer, aoi.OnsetParams(steer_threshold=ep.config.steer_threshold))
        if onset is None:
            out.append(None)
            continue
        ticks = sg.episode_ticks(ep)
        pred = np.argmax(intent_probs(model, ticks), axis=1)
        out.append(ev.time_to_maneuver(ticks.t0, pred, ep.config.turn, onset, min_hold))
    return out


def evaluate_intent(model: TrainedModel, records: sg.RecordSet, episodes, min_hold: float = 0.2) -> ev.IntentMetrics:
    pred = np.argmax(intent_probs(model, records), axis=1)
    return ev.intent_metrics(pred, records.labels, episode_t2m(model, episodes, min_hold))


def intent_rows(name: str, m: ev.IntentMetrics):
    for c, cname in enumerate(sg.CLASS_NAMES):
        yield (name, cname, m.precision[c], m.recall[c], m.f1[c], m.mean_t2m, len(m.t2m), m.t2m_missing)


INTENT_HEADER = ("model", "class", "precision", "recall", "f1", "mean_t2m_s", "n_turn_events", "t2m_missing")


# ---------------------------------------------------------------------------
# trajectories


def selected_trajectories(bundle: ModelBundle, records: sg.RecordSet) -> np.ndarray:
    """Trajectory filter output ``(N, 10, 2)``."""
    _, trajs, sel = bundle.predict(records)
    return trajs[np.arange(len(records)), sel]


def trajectory_predictions(records: sg.RecordSet, bundle: ModelBundle, ff: Optional[TrainedModel] = None,
                           mtp: Optional[TrainedModel] = None) -> dict:
    preds = {"S+E+C-LSTM": selected_trajectories(bundle, records), "CTRA": ctra_batch(records.obs)}
    if ff is not None:
        preds["FF-LSTM"] = single_trajectories(ff, records)
    if mtp is not None:
        traj, probs = multipath_outputs(mtp, records)
        preds["MTP-LSTM"] = traj[np.arange(len(records)), np.argmax(probs, axis=1)]
    return preds


def evaluate_trajectories(records: sg.RecordSet, preds: dict) -> dict:
    return {name: {h: ev.traj_metrics(p, records.future, h) for h in ev.HORIZON_STEPS} for name, p in preds.items()}


TRAJ_HEADER = ("model", "horizon_s", "ade", "fde", "sde", "n", "fde_gt_1m", "fde_gt_2m", "fde_gt_3m", "fde_gt_4m")


def traj_rows(metrics: dict):
    for name, per in metrics.items():
        for h, m in per.items():
            yield (name, h, m.ade, m.fde, m.sde, m.n, *m.exceedance)


# ---------------------------------------------------------------------------
# error models


def fit_error_models(bundle: ModelBundle, val: sg.RecordSet, min_samples: int = riskstats.MIN_SAMPLES):
    """Per-step error models of the filtered trajectory on the validation split."""
    errors = riskstats.error_samples(selected_trajectories(bundle, val), val.future)
    return riskstats.fit_step_models(errors, min_samples), errors


# ---------------------------------------------------------------------------
# risk


RISK_METHODS = ("S+E+C-RA", "CTRA-RA", "MTP-RA")


@dataclass
class EpisodeRisk:
    episode_id: str
    traces: dict
    alarms: dict
    audits: dict
    conflicts: list = field(default_factory=list)


def obstacle_tracks(episode: sg.Episode, k0: int, steps: int) -> np.ndarray:
    """Pedestrian tracks in the ego frame of frame ``k0``, extrapolated at constant velocity."""
    if episode.ped_pos.shape[1] == 0:
        return np.zeros((0, steps, 2))
    st = episode.states[k0]
    cur = points_to_frame(episode.ped_pos[k0], st[:2], st[4])
    prev = points_to_frame(episode.ped_pos[max(k0 - 1, 0)], st[:2], st[4])
    return rk.extrapolate_obstacles(prev, cur, steps)


def simulate_episode_risk(episode: sg.Episode, bundle: ModelBundle, models, config: rk.RiskConfig,
                          seed: int, mtp: Optional[TrainedModel] = None) -> EpisodeRisk:
    """Assess risk at every 10 Hz tick with each available method and audit the alarms."""
    ticks = sg.episode_ticks(episode)
    k = config.horizon_steps
    _, trajs, sel = bundle.predict(ticks)
    ctra = ctra_batch(ticks.obs)
    if mtp is not None:
        mtp_traj, mtp_probs = multipath_outputs(mtp, ticks)
    traces = {m: rk.RiskTrace(m) for m in RISK_METHODS if m != "MTP-RA" or mtp is not None}
    for i, t0 in enumerate(ticks.t0):
        k0 = int(round(t0 / sg.FRAME_DT))
        tracks = obstacle_tracks(episode, k0, k)
        hr = rk.horizon_risk(trajs[i, sel[i]], models, tracks, config, seed, k0)
        traces["S+E+C-RA"].add(t0, hr.p_max, hr.step, hr.obstacle)
        flag, obs = rk.ctra_ra(ctra[i], tracks, config)
        traces["CTRA-RA"].add(t0, float(flag), 0, obs)
        if mtp is not None:
            p, top = rk.mtp_ra(mtp_probs[i], mtp_traj[i], models, tracks, config, seed, k0)
            traces["MTP-RA"].add(t0, p, top.step, top.obstacle)
    conflicts = [ev.Conflict(c["obstacle"], c["collision_time"]) for c in episode.meta.get("conflicts", [])]
    alarms = {m: tr.finalize(config) for m, tr in traces.items()}
    audits = {m: ev.alarm_audit(a, conflicts) for m, a in alarms.items()}
    return EpisodeRisk(episode.episode_id, traces, alarms, audits, conflicts)


def simulate_suite(episodes, bundle: ModelBundle, models, config: rk.RiskConfig, seed: int,
                   mtp: Optional[TrainedModel] = None) -> list[EpisodeRisk]:
    return [simulate_episode_risk(ep, bundle, models, config, derived_seed(seed, 5, i), mtp)
            for i, ep in enumerate(episodes)]


def audit_totals(results: Sequence[EpisodeRisk]) -> dict:
    totals = {}
    for res in results:
        for m, a in res.audits.items():
            totals.setdefault(m, ev.AuditResult())
            totals[m] += a
    return totals


AUDIT_HEADER = ("method", "alarms", "true_alarms", "false_alarms", "missed", "min_lead_s", "mean_lead_s")


def audit_rows(totals: dict):
    for m, a in totals.items():
        leads = a.leads
        yield (m, a.true_alarms + a.false_alarms, a.true_alarms, a.false_alarms, a.missed,
               min(leads) if leads else None, float(np.mean(leads)) if leads else None)


TRACE_HEADER = ("episode_id", "method", "t", "p_c", "argmax_step", "obstacle_id", "alarm")


def trace_rows(results: Sequence[EpisodeRisk]):
    for res in results:
        for m, tr in res.traces.items():
            for row in tr.rows():
                yield (res.episode_id, m, *row)


# ---------------------------------------------------------------------------
# training shortcuts


def train_pipeline(data: Dataset, config: TrainConfig, baselines: bool = True) -> dict:
    out = {
        "di": train_model("di", data.train, data.val, config, "S+E+C"),
        "mt": train_model("mt", data.train, data.val, config, "S+E+C"),
    }
    if baselines:
        out["ff"] = train_model("ff", data.train, data.val, config, "S+E+C")
        out["mtp"] = train_model("mtp", data.train, data.val, config, "S+C")
    return out
