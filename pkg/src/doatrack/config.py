"""YAML run configuration.

A run configuration is a nested mapping; every key is optional and falls
back to the defaults below. Unknown keys are rejected so that typos fail
loudly instead of silently running a default experiment.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .enhancer import EnhancerConfig, EnhancerConfigError
from .motion import MotionError, SfmParams
from .scene import ScenarioConfig
from .trackers import TrackerConfig, TrackerError

DEFAULT_CELLS = [("kf", "concat"), ("kf", "miso-ar"), ("kf", "mimo-ar"),
                 ("pf", "concat"), ("pf", "miso-ar"), ("pf", "mimo-ar")]

# Per-cell parameters picked by grid search on validation seeds 1000-1007,
# disjoint from the benchmark seeds. Explicit YAML entries start from the
# plain TrackerConfig defaults instead.
TUNED = {
    ("kf", "concat"): {"sigma_nu_deg": 30.0, "sigma_phi_deg": 10.0},
    ("kf", "miso-ar"): {"sigma_nu_deg": 30.0, "sigma_phi_deg": 10.0},
    ("kf", "mimo-ar"): {"sigma_nu_deg": 100.0, "sigma_phi_deg": 10.0},
    ("pf", "concat"): {"sigma_nu_deg": 300.0, "kappa": 0.05, "tau_eff": 0.5},
    ("pf", "miso-ar"): {"sigma_nu_deg": 300.0, "alpha_ema": 0.95},
    ("pf", "mimo-ar"): {"sigma_nu_deg": 300.0, "kappa": 0.5},
}


# Near-static motion prior for stationary speakers, picked on stationary
# validation seeds. The walking-speed values above chase the noise-only
# measurements of speech pauses.
STATIC = {"sigma_nu_deg": 1.0}


def tuned(kind: str, mode: str) -> TrackerConfig:
    return TrackerConfig(kind=kind, mode=mode, **TUNED.get((kind, mode), {}))


def static(kind: str, mode: str = "concat") -> TrackerConfig:
    return TrackerConfig(kind=kind, mode=mode, **STATIC)


class ConfigError(ValueError):
    pass


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; allowed {sorted(known)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError, TrackerError, EnhancerConfigError, MotionError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sfm: SfmParams = field(default_factory=SfmParams)
    trackers: list = field(default_factory=lambda: [tuned(k, m) for k, m in DEFAULT_CELLS])
    enhancer: EnhancerConfig = field(default_factory=EnhancerConfig)
    n_scenes: int = 10
    seed: int = 0
    workers: int = 1
    save_audio: bool = False
    metric_gate_db: float | None = None
    array: dict | None = None
    sweep: dict = field(default_factory=dict)

    def scene_seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.n_scenes)]

    def to_dict(self) -> dict:
        return {
            "scenario": _plain(asdict(self.scenario)),
            "sfm": asdict(self.sfm),
            "trackers": [t.to_dict() for t in self.trackers],
            "enhancer": self.enhancer.to_dict(),
            "n_scenes": self.n_scenes,
            "seed": self.seed,
            "workers": self.workers,
            "save_audio": self.save_audio,
            "metric_gate_db": self.metric_gate_db,
            "array": self.array,
            "sweep": self.sweep,
        }

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


TOP_KEYS = {f.name for f in fields(RunConfig)}


def from_dict(data: dict | None) -> RunConfig:
    data = dict(data or {})
    unknown = sorted(set(data) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}; allowed {sorted(TOP_KEYS)}")
    cfg = RunConfig()
    if "scenario" in data:
        cfg.scenario = _build(ScenarioConfig, data["scenario"], "scenario")
    if "sfm" in data:
        cfg.sfm = _build(SfmParams, data["sfm"], "sfm")
    if "enhancer" in data:
        cfg.enhancer = _build(EnhancerConfig, data["enhancer"], "enhancer")
    if "trackers" in data:
        specs = data["trackers"]
        if not isinstance(specs, list) or not specs:
            raise ConfigError("trackers: expected a non-empty list")
        cfg.trackers = [_build(TrackerConfig, s, f"trackers[{i}]") for i, s in enumerate(specs)]
    for key, typ in (("n_scenes", int), ("seed", int), ("workers", int), ("save_audio", bool)):
        if key in data:
            if not isinstance(data[key], typ) or (typ is int and isinstance(data[key], bool)):
                raise ConfigError(f"{key}: expected {typ.__name__}")
            setattr(cfg, key, data[key])
    if data.get("metric_gate_db") is not None:
        g = data["metric_gate_db"]
        if isinstance(g, bool) or not isinstance(g, (int, float)) or g <= 0:
            raise ConfigError("metric_gate_db: expected a positive number or null")
        cfg.metric_gate_db = float(g)
    if cfg.n_scenes < 1 or cfg.workers < 1:
        raise ConfigError("n_scenes and workers must be >= 1")
    if "array" in data:
        arr = data["array"]
        if arr is not None and (not isinstance(arr, dict) or "positions" not in arr):
            raise ConfigError("array: expected a mapping with 'positions'")
        cfg.array = arr
    if "sweep" in data:
        sw = data["sweep"] or {}
        if not isinstance(sw, dict) or not isinstance(sw.get("grid", {}), dict):
            raise ConfigError("sweep: expected {'base': {...}, 'grid': {name: [values]}}")
        tracker_keys = {f.name for f in fields(TrackerConfig)}
        bad = sorted(set(sw.get("grid", {})) - tracker_keys)
        if bad:
            raise ConfigError(f"sweep.grid: unknown tracker parameters {bad}")
        for name, values in sw.get("grid", {}).items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep.grid.{name}: expected a non-empty list")
        if "base" in sw:
            _build(TrackerConfig, sw["base"], "sweep.base")
        cfg.sweep = sw
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(data)


def make_array(cfg: RunConfig):
    from .array import ArrayError, MicArray, default_array
    if cfg.array is None:
        return default_array()
    import numpy as np
    try:
        return MicArray(np.asarray(cfg.array["positions"], float), int(cfg.array.get("reference_index", 0)),
                        float(cfg.array.get("sound_speed", 343.0)))
    except ArrayError as exc:
        raise ConfigError(f"array: {exc}") from None


REFERENCE_HEADER = """\
# doatrack run configuration reference
#
# Every key is optional. Values shown are the defaults.
#
# scenario    scene sampling: duration (s), speakers, SNR range (dB, at the
#             reference mic), room size range (m), array placement fraction,
#             minimum initial azimuth separation (deg), stationary speakers,
#             number of plane waves in the diffuse noise field, optional
#             corpus_dir of mono 16 kHz WAVs (default: synthetic speech),
#             optional late_reverb_db stress corruption (off when null)
# sfm         social-force motion parameters (SI units)
# trackers    list of trackers; kind kf|pf, mode concat|miso-ar|mimo-ar.
#             sigma_nu_deg: process noise (deg/s^2); sigma_phi_deg: KF
#             measurement std; kappa: Watson concentration; tau_eff: PF
#             resampling threshold; alpha_ema: noise covariance smoothing
# enhancer    kind oracle|oracle-corrupted|delay-and-sum|mvdr, output miso|mimo;
#             snr_db / p_confuse / confuse_deg configure the corrupted oracle
# n_scenes    number of scenes; scene i uses seed + i
# workers     scene-level worker processes
# save_audio  write enhanced WAVs and compute SI-SDR during `track`
# metric_gate_db  score only frames where the target is within this many dB
#             of its loudest frame (null: score every frame)
# array       optional geometry {positions: [[x, y], ...], reference_index: 0}
# sweep       {base: {tracker params}, grid: {param: [values, ...]}}
"""


def reference_text() -> str:
    return REFERENCE_HEADER + "\n" + yaml.safe_dump(RunConfig().to_dict(), sort_keys=False)
