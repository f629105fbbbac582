"""Scene-level tracking runs, benchmarks and parameter sweeps."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .enhancer import EnhancerConfig, GroundTruth, make_enhancer
from .metrics import TrackMetrics, side_centers, si_sdr, track_metrics
from .opcount import OpCounter
from .scene import SceneBundle
from .stft import StftConfig, analyze, synthesize
from .trackers import DoaTrack, TrackerConfig, make_tracker, run_tracker


@dataclass
class SceneData:
    """A scene transformed to the STFT domain."""

    bundle: SceneBundle
    stft: StftConfig
    Y: np.ndarray  # (T, K, M)
    direct: list  # per speaker (T, K, M)
    azimuths: np.ndarray  # (speakers, T)
    complete: np.ndarray  # (T,) bool, frames without end padding

    @property
    def seed(self) -> int:
        return int(self.bundle.meta.get("seed", 0))

    @property
    def n_frames(self) -> int:
        return self.Y.shape[0]

    def truth(self, target: int) -> GroundTruth:
        others = [i for i in range(len(self.direct)) if i != target]
        return GroundTruth(self.direct[target], [self.direct[i] for i in others],
                           self.azimuths[others] if others else np.zeros((0, self.n_frames)),
                           self.azimuths[target])

    def active(self, target: int, gate_db: float) -> np.ndarray:
        """Frames where the target's reference-channel energy is within ``gate_db`` of its peak."""
        e = np.sum(np.abs(self.direct[target][..., self.bundle.array.reference_index]) ** 2, axis=1)
        return e >= e.max() * 10 ** (-gate_db / 10)

    def centers(self, target: int) -> np.ndarray | None:
        seg = self.bundle.meta.get("segment_azimuths")
        if seg is None or len(seg) < 2:
            return None
        other = 1 if target == 0 else 0
        return side_centers(seg[target], seg[other])


def prepare(bundle: SceneBundle, stft: StftConfig | None = None) -> SceneData:
    stft = stft or StftConfig(bundle.sample_rate)
    Y = analyze(bundle.mixture, stft).data
    direct = [analyze(d, stft).data for d in bundle.direct_paths]
    T = Y.shape[0]
    az = bundle.azimuths()
    if az.shape[1] < T:
        raise ValueError("trajectory shorter than the spectrogram")
    return SceneData(bundle, stft, Y, direct, az[:, :T], stft.complete_frames(bundle.n_samples))


def enhancer_for(tracker: TrackerConfig, enhancer: EnhancerConfig) -> EnhancerConfig:
    """Match the enhancer output shape to what the tracker mode consumes."""
    if tracker.mode == "mimo-ar" and enhancer.output != "mimo":
        return EnhancerConfig(**{**enhancer.to_dict(), "output": "mimo"})
    if tracker.mode == "miso-ar" and enhancer.output != "miso":
        return EnhancerConfig(**{**enhancer.to_dict(), "output": "miso"})
    return enhancer


@dataclass
class TargetResult:
    seed: int
    target: int
    label: str
    track: DoaTrack
    metrics: TrackMetrics
    si_sdr_db: float = float("nan")
    si_sdr_in_db: float = float("nan")
    enhanced: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {"seed": self.seed, "target": self.target, "label": self.label, **self.metrics.to_dict(),
                "si_sdr_db": self.si_sdr_db, "si_sdr_in_db": self.si_sdr_in_db}


def track_target(data: SceneData, target: int, tracker_cfg: TrackerConfig, enhancer_cfg: EnhancerConfig,
                 counter: OpCounter | None = None, with_audio: bool = False,
                 n_frames: int | None = None, gate_db: float | None = None) -> TargetResult:
    """Track speaker ``target`` given its true initial azimuth and score the result.

    Metrics cover every complete frame unless ``gate_db`` is set; then frames
    where the target's direct path is more than ``gate_db`` below its loudest
    frame are left out.
    """
    arr = data.bundle.array
    enh_cfg = enhancer_for(tracker_cfg, enhancer_cfg)
    enh = make_enhancer(enh_cfg, arr, data.stft, data.truth(target), seed=data.seed, stream=target)
    tracker = make_tracker(tracker_cfg, arr, data.stft, counter)
    Y = data.Y if n_frames is None else data.Y[:n_frames]
    theta0 = float(data.azimuths[target, 0])
    track, enhanced = run_tracker(tracker, Y, theta0, enh, seed=data.seed, stream=target)
    T = len(track)
    mask = data.complete[:T]
    if gate_db is not None:
        mask = mask & data.active(target, gate_db)[:T]
    m = track_metrics(track.theta, data.azimuths[target, :T], centers=data.centers(target), mask=mask)
    res = TargetResult(data.seed, target, tracker_cfg.label, track, m)
    if with_audio and enhanced is not None:
        ref = arr.reference_index
        S = enhanced[..., ref] if enhanced.ndim == 3 else enhanced
        from .stft import Spectrogram
        out = synthesize(Spectrogram(S[:, :, None], data.stft, data.bundle.n_samples))[:, 0]
        clean = data.bundle.direct_paths[target][:, ref]
        res.si_sdr_db = si_sdr(out, clean)
        res.si_sdr_in_db = si_sdr(data.bundle.mixture[:, ref], clean)
        res.enhanced = out
    return res


def strong_guidance_si_sdr(data: SceneData, target: int, enhancer_cfg: EnhancerConfig) -> tuple[float, float]:
    """SI-SDR (output, input) of an enhancer steered by the true azimuth every frame."""
    from .stft import Spectrogram
    arr = data.bundle.array
    enh = make_enhancer(EnhancerConfig(**{**enhancer_cfg.to_dict(), "output": "miso"}), arr, data.stft,
                        data.truth(target), seed=data.seed, stream=target)
    S = np.stack([enh.process(t, data.Y[t], data.azimuths[target, t]) for t in range(data.n_frames)])
    out = synthesize(Spectrogram(S[:, :, None], data.stft, data.bundle.n_samples))[:, 0]
    ref = arr.reference_index
    clean = data.bundle.direct_paths[target][:, ref]
    return si_sdr(out, clean), si_sdr(data.bundle.mixture[:, ref], clean)


CELLS = [(k, m) for k in ("kf", "pf") for m in ("concat", "miso-ar", "mimo-ar")]


def run_cells(scenes: list[SceneData], tracker_cfgs: dict[str, TrackerConfig], enhancer_cfg: EnhancerConfig,
              targets=None, with_audio: bool = False) -> list[TargetResult]:
    out = []
    for data in scenes:
        tgts = range(len(data.direct)) if targets is None else targets
        for label, cfg in tracker_cfgs.items():
            for tgt in tgts:
                out.append(track_target(data, tgt, cfg, enhancer_cfg, with_audio=with_audio))
    return out


def scene_mae(results: list[TargetResult]) -> dict[str, dict[int, float]]:
    """Per label, per scene seed: MAE averaged over targets."""
    acc: dict[str, dict[int, list]] = {}
    for r in results:
        acc.setdefault(r.label, {}).setdefault(r.seed, []).append(r.metrics.mae_deg)
    return {lab: {s: float(np.mean(v)) for s, v in d.items()} for lab, d in acc.items()}


def sweep_params(scenes: list[SceneData], base: TrackerConfig, grid: dict[str, list],
                 enhancer_cfg: EnhancerConfig | None = None) -> list[dict]:
    """Evaluate every grid point; rows sorted by mean MAE (best first)."""
    enhancer_cfg = enhancer_cfg or EnhancerConfig()
    names = list(grid)
    rows = []
    for values in itertools.product(*(grid[n] for n in names)):
        cfg = base.with_(**dict(zip(names, values)))
        res = run_cells(scenes, {cfg.label: cfg}, enhancer_cfg)
        mae = [r.metrics.mae_deg for r in res]
        acc = [r.metrics.acc_pct for r in res]
        rows.append({**dict(zip(names, values)), "mae_deg": float(np.mean(mae)), "acc_pct": float(np.mean(acc)),
                     "n": len(res)})
    rows.sort(key=lambda r: r["mae_deg"])
    return rows


def frame_rate(stft: StftConfig) -> float:
    return stft.sample_rate / stft.hop


def measure_complexity(data: SceneData, tracker_cfg: TrackerConfig, enhancer_cfg: EnhancerConfig,
                       target: int = 0, n_frames: int | None = None) -> OpCounter:
    counter = OpCounter()
    track_target(data, target, tracker_cfg, enhancer_cfg, counter=counter, n_frames=n_frames)
    return counter


def mmacs_per_second(counter: OpCounter, stft: StftConfig) -> float:
    return counter.macs_per_second(frame_rate(stft)) / 1e6
