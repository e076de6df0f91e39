"""Command-line entry points.

All commands share one run directory (``--out``)::

    data/episodes.jsonl  data/records.jsonl  data/split.json  data/summary.json
    models/di.ckpt  models/mt.ckpt  models/ff.ckpt  models/mtp.ckpt  models/error_models.csv
    tables/*.csv
    manifests/<command>.json
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, aoi, evaluation as ev, pipeline as pl, riskstats, scenegen as sg
from .config import ConfigError, RunConfig, dump_config, load_config
from .micrograd.checkpoint import CheckpointError
from .predictor import ModelBundle, TrainedModel, intent_probs, load_model, train_model

log = logging.getLogger("gazerisk")


class MissingArtifact(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# run directory


class RunDir:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def output(self, *parts) -> Path:
        p = self.path(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    episodes = property(lambda self: self.path("data", "episodes.jsonl"))
    records = property(lambda self: self.path("data", "records.jsonl"))
    split = property(lambda self: self.path("data", "split.json"))
    error_models = property(lambda self: self.path("models", "error_models.csv"))

    def model(self, kind: str) -> Path:
        return self.path("models", f"{kind}.ckpt")

    def table(self, name: str) -> Path:
        return self.output("tables", f"{name}.csv")


PRODUCERS = {
    "data": "gen-data",
    "di": "train-di",
    "mt": "train-mt",
    "ff": "train-mt",
    "mtp": "train-mt",
    "errors": "fit-errors",
}


def require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {path}; run `gazerisk {producer}` first")
    return path


def git_blob_hash(path: Path) -> str:
    """Content hash computed the way git hashes a blob."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(run: RunDir, command: str, cfg: RunConfig, inputs, outputs, extra=None) -> Path:
    rel = lambda p: Path(p).relative_to(run.root).as_posix()
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "inputs": {rel(p): git_blob_hash(p) for p in inputs},
        "outputs": {rel(p): git_blob_hash(p) for p in outputs},
    }
    if extra:
        manifest["summary"] = extra
    path = run.output("manifests", f"{command}.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# loading upstream artifacts


def load_splits(run: RunDir):
    records = sg.read_records(require(run.records, PRODUCERS["data"]))
    groups = json.loads(require(run.split, PRODUCERS["data"]).read_text(encoding="utf-8"))
    return tuple(records.subset(np.isin(records.episode_ids, groups[name])) for name in ("train", "val", "test"))


def load_episodes(run: RunDir, split: str | None = None):
    episodes = sg.read_episodes(require(run.episodes, PRODUCERS["data"]))
    if split is None:
        return episodes
    ids = set(json.loads(require(run.split, PRODUCERS["data"]).read_text(encoding="utf-8"))[split])
    return [e for e in episodes if e.episode_id in ids]


def load_trained(run: RunDir, kind: str) -> TrainedModel:
    return load_model(require(run.model(kind), PRODUCERS[kind]), kind)


def data_inputs(run: RunDir):
    return [run.episodes, run.records, run.split]


def history_rows(name: str, model: TrainedModel):
    h = model.meta["history"]
    for epoch, (tr, va) in enumerate(zip(h["train_loss"], h["val_loss"])):
        yield (name, epoch, tr, va, int(epoch == h["best_epoch"]))


HISTORY_HEADER = ("model", "epoch", "train_loss", "val_loss", "best")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig, run: RunDir) -> None:
    data = pl.build_dataset(cfg.data.corpus, cfg.seed, cfg.data.window_stride)
    sg.write_episodes(run.output("data", "episodes.jsonl"), data.episodes)
    sg.write_records(run.output("data", "records.jsonl"), data.records)
    split = dict(zip(("train", "val", "test"), (list(g) for g in data.groups)))
    run.split.write_text(json.dumps(split, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    taus = [e.config.gaze_lead for e in data.episodes if e.config.turn != sg.STRAIGHT]
    leads = aoi.leading_time_distribution([aoi.onset_report(e.aoi[:, 0], e.steer) for e in data.episodes
                                           if e.config.turn != sg.STRAIGHT])
    edges = np.arange(0.0, 2.7 + 1e-9, 0.3)
    summary = {
        "episodes": len(data.episodes),
        "records": len(data.records),
        "records_per_class": sg.class_counts(data.records),
        "split_episodes": {k: len(v) for k, v in split.items()},
        "split_records": {"train": len(data.train), "val": len(data.val), "test": len(data.test)},
        "tau_histogram": {"edges": [round(e, 10) for e in edges.tolist()],
                          "counts": np.histogram(taus, edges)[0].tolist()},
        "detected_lead_mean": leads.mean,
        "detected_lead_excluded": leads.excluded,
    }
    run.output("data", "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs = data_inputs(run) + [run.path("data", "summary.json")]
    write_manifest(run, "gen-data", cfg, [], outputs, summary)
    print(f"{len(data.episodes)} episodes, {len(data.records)} records {summary['records_per_class']}")


def cmd_train_di(cfg: RunConfig, run: RunDir) -> None:
    train, val, _ = load_splits(run)
    model = train_model("di", train, val, cfg.train, "S+E+C")
    out = run.output("models", "di.ckpt")
    model.save(out)
    table = run.table("train_di")
    ev.write_csv(table, HISTORY_HEADER, history_rows("S+E+C-LSTM DI", model))
    write_manifest(run, "train-di", cfg, data_inputs(run), [out, table])
    print(f"DI trained, best epoch {model.meta['history']['best_epoch']}")


def cmd_train_mt(cfg: RunConfig, run: RunDir) -> None:
    # the trajectory model is trained after, and independently of, the intention model
    di_path = require(run.model("di"), PRODUCERS["di"])
    train, val, _ = load_splits(run)
    outputs, rows = [], []
    for kind, fs, name in (("mt", "S+E+C", "S+E+C-LSTM MT"), ("ff", "S+E+C", "FF-LSTM"), ("mtp", "S+C", "MTP-LSTM")):
        model = train_model(kind, train, val, cfg.train, fs)
        out = run.output("models", f"{kind}.ckpt")
        model.save(out)
        outputs.append(out)
        rows.extend(history_rows(name, model))
    table = run.table("train_mt")
    ev.write_csv(table, HISTORY_HEADER, rows)
    write_manifest(run, "train-mt", cfg, data_inputs(run) + [di_path], outputs + [table])
    print("MT, FF-LSTM and MTP-LSTM trained")


def cmd_eval_intent(cfg: RunConfig, run: RunDir) -> None:
    di = load_trained(run, "di")
    _, _, test = load_splits(run)
    episodes = load_episodes(run, "test")
    metrics = pl.evaluate_intent(di, test, episodes, cfg.eval.t2m_min_hold)
    table = run.table("intent")
    ev.write_csv(table, pl.INTENT_HEADER, pl.intent_rows("S+E+C-LSTM", metrics))
    series = run.table("intent_series")
    ev.write_csv(series, ("episode_id", "t", "label", "p_straight", "p_right", "p_left", "predicted"),
                 _intent_series(di, episodes))
    write_manifest(run, "eval-intent", cfg, data_inputs(run) + [run.model("di")], [table, series])
    print(f"F1 {np.round(metrics.f1, 3).tolist()}  mean T2M {metrics.mean_t2m}")


def _intent_series(model, episodes):
    for ep in episodes:
        if ep.config.turn == sg.STRAIGHT:
            continue
        ticks = sg.episode_ticks(ep)
        probs = intent_probs(model, ticks)
        for t, label, p in zip(ticks.t0, ticks.labels, probs):
            yield (ep.episode_id, float(t), int(label), *p, int(np.argmax(p)))


def _bundle(run: RunDir) -> ModelBundle:
    return ModelBundle(load_trained(run, "di"), load_trained(run, "mt"))


def cmd_eval_traj(cfg: RunConfig, run: RunDir) -> None:
    bundle = _bundle(run)
    ff, mtp = load_trained(run, "ff"), load_trained(run, "mtp")
    _, _, test = load_splits(run)
    outputs = []
    for subset, mask in (("all", np.ones(len(test), dtype=bool)), ("turns", test.labels != sg.STRAIGHT)):
        recs = test.subset(mask)
        if len(recs) == 0:
            continue
        metrics = pl.evaluate_trajectories(recs, pl.trajectory_predictions(recs, bundle, ff, mtp))
        table = run.table(f"traj_{subset}")
        ev.write_csv(table, pl.TRAJ_HEADER, pl.traj_rows(metrics))
        outputs.append(table)
    dump = run.table("traj_predictions")
    probs, trajs, sel = bundle.predict(test)
    ev.write_csv(dump, _dump_header(), _dump_rows(test, probs, trajs, sel))
    outputs.append(dump)
    inputs = data_inputs(run) + [run.model(k) for k in ("di", "mt", "ff", "mtp")]
    write_manifest(run, "eval-traj", cfg, inputs, outputs)
    print("trajectory tables written to", run.path("tables"))


def _dump_header():
    cols = ["record", "episode_id", "t0", "p_straight", "p_right", "p_left", "selected"]
    cols += [f"{a}{k}" for k in range(1, 11) for a in ("x", "y")]
    cols += [f"true_{a}{k}" for k in range(1, 11) for a in ("x", "y")]
    return cols


def _dump_rows(records, probs, trajs, sel):
    for i in range(len(records)):
        yield (i, records.episode_ids[i], float(records.t0[i]), *probs[i], int(sel[i]),
               *trajs[i, sel[i]].ravel(), *records.future[i].ravel())


def cmd_fit_errors(cfg: RunConfig, run: RunDir) -> None:
    bundle = _bundle(run)
    _, val, _ = load_splits(run)
    models, errors = pl.fit_error_models(bundle, val)
    out = run.output("models", "error_models.csv")
    riskstats.write_step_models(out, models)
    kde_rows = []
    for t in range(errors.shape[1]):
        k = riskstats.kde2d(errors[:, t])
        kde_rows.append((t + 1, k.x_std, k.y_std, k.corr, k.bandwidth[0], k.bandwidth[1], k.mass))
    table = run.table("error_kde")
    ev.write_csv(table, ("step", "x_std", "y_std", "corr", "bandwidth_x", "bandwidth_y", "grid_mass"), kde_rows)
    write_manifest(run, "fit-errors", cfg, data_inputs(run) + [run.model("di"), run.model("mt")], [out, table])
    print(f"error models for {len(models)} steps fit on {len(val)} validation records")


def cmd_risk_sim(cfg: RunConfig, run: RunDir) -> None:
    bundle = _bundle(run)
    models = riskstats.read_step_models(require(run.error_models, PRODUCERS["errors"]))
    mtp = load_trained(run, "mtp")
    s = cfg.suite
    suite = sg.risk_suite(cfg.seed, s.n_turns, s.n_conflicts, s.n_bait)
    results = pl.simulate_suite(suite, bundle, models, cfg.risk, cfg.seed, mtp)
    totals = pl.audit_totals(results)
    audit = run.table("risk_audit")
    ev.write_csv(audit, pl.AUDIT_HEADER, pl.audit_rows(totals))
    traces = run.table("risk_traces")
    ev.write_csv(traces, pl.TRACE_HEADER, pl.trace_rows(results))
    alarms = run.table("risk_alarms")
    ev.write_csv(alarms, ("episode_id", "kind", "method", "alarm_t", "obstacle_id", "collision_t"),
                 _alarm_rows(results, suite))
    inputs = [run.model(k) for k in ("di", "mt", "mtp")] + [run.error_models]
    write_manifest(run, "risk-sim", cfg, inputs, [audit, traces, alarms])
    for m, a in totals.items():
        print(f"{m}: {a.true_alarms} true, {a.false_alarms} false, {a.missed} missed")


def _alarm_rows(results, suite):
    for res, ep in zip(results, suite):
        collide = {c.obstacle: c.collision_time for c in res.conflicts}
        for m, alarms in res.alarms.items():
            for a in alarms:
                yield (res.episode_id, ep.meta["kind"], m, a.time, a.obstacle, collide.get(a.obstacle))


def cmd_ablate(cfg: RunConfig, run: RunDir) -> None:
    train, val, test = load_splits(run)
    episodes = load_episodes(run, "test")
    rows = []
    for fs in pl.ABLATION_ROWS:
        model = train_model("di", train, val, cfg.train, fs)
        metrics = pl.evaluate_intent(model, test, episodes, cfg.eval.t2m_min_hold)
        rows.extend(pl.intent_rows(f"{fs}-LSTM", metrics))
        print(f"{fs:8s} F1 {np.round(metrics.f1, 3).tolist()}  mean T2M {metrics.mean_t2m}")
    table = run.table("ablation")
    ev.write_csv(table, pl.INTENT_HEADER, rows)
    write_manifest(run, "ablate", cfg, data_inputs(run), [table])


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate episodes, windowed records and the 3:1:1 split"),
    "train-di": (cmd_train_di, "train the intention model"),
    "train-mt": (cmd_train_mt, "train the trajectory model and the FF-LSTM and MTP-LSTM baselines"),
    "eval-intent": (cmd_eval_intent, "precision/recall/F1 and T2M on the test split"),
    "eval-traj": (cmd_eval_traj, "ADE/FDE/SDE at 0.9, 2.1 and 3 s for all predictors"),
    "fit-errors": (cmd_fit_errors, "fit per-step error models on the validation split"),
    "risk-sim": (cmd_risk_sim, "run the scripted risk suite and audit alarms"),
    "ablate": (cmd_ablate, "train and score the four input-feature variants"),
    "show-config": (None, "print the effective configuration as YAML"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazerisk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default="run", help="run directory (default: ./run)")
        p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        if args.command == "show-config":
            sys.stdout.write(dump_config(cfg))
            return 0
        COMMANDS[args.command][0](cfg, RunDir(args.out))
    except (MissingArtifact, ConfigError, CheckpointError, sg.ScenarioError, OSError, ValueError) as exc:
        print(f"gazerisk {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
