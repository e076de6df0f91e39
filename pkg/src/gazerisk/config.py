"""Run configuration: one YAML file, every field defaulted."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from .predictor import TrainConfig
from .risk import RiskConfig
from .scenegen import CorpusSpec, FRAME_DT, OBS_STEPS, PRED_STEPS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HorizonConfig:
    obs_horizon: float = 2.0
    obs_step: float = FRAME_DT
    pred_steps: int = PRED_STEPS
    pred_step: float = 0.3

    def validate(self) -> None:
        if round(self.obs_horizon / self.obs_step) != OBS_STEPS or abs(self.obs_step - FRAME_DT) > 1e-12:
            raise ConfigError(f"record schema fixes the observation window at {OBS_STEPS} x {FRAME_DT} s")
        if self.pred_steps != PRED_STEPS or abs(self.pred_step - 0.3) > 1e-12:
            raise ConfigError(f"record schema fixes the prediction at {PRED_STEPS} x 0.3 s")


@dataclass(frozen=True)
class DataConfig:
    corpus: CorpusSpec = CorpusSpec()
    window_stride: float = 0.1


@dataclass(frozen=True)
class EvalConfig:
    t2m_min_hold: float = 0.2


@dataclass(frozen=True)
class SuiteConfig:
    n_turns: int = 20
    n_conflicts: int = 8
    n_bait: int = 4


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = DataConfig()
    horizons: HorizonConfig = HorizonConfig()
    train: TrainConfig = TrainConfig()
    risk: RiskConfig = RiskConfig()
    eval: EvalConfig = EvalConfig()
    suite: SuiteConfig = SuiteConfig()

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _merge(obj, updates: dict, where: str):
    if not isinstance(updates, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(obj)}
    changes = {}
    for key, value in updates.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where + key}")
        current = getattr(obj, key)
        if is_dataclass(current):
            changes[key] = _merge(current, value or {}, f"{where}{key}.")
        elif isinstance(current, tuple):
            changes[key] = tuple(value)
        elif isinstance(current, bool) or current is None:
            changes[key] = value
        elif isinstance(current, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where + key} must be an integer")
            changes[key] = value
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where + key} must be a number")
            changes[key] = float(value)
        else:
            changes[key] = value
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where or 'config'}: {exc}") from exc


def config_from_dict(data: Optional[dict], base: RunConfig = RunConfig()) -> RunConfig:
    cfg = _merge(base, data or {}, "")
    cfg.horizons.validate()
    return cfg


def load_config(path: Optional[str | Path] = None, seed: Optional[int] = None) -> RunConfig:
    data: Any = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    cfg = config_from_dict(data)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
