"""Free-field multichannel scene synthesis.

Speakers are spatialized with time-varying far-field delays relative to the
reference microphone (windowed-sinc fractional delays) and a ``1 / distance``
gain. Spatially diffuse white noise is built from many plane waves and scaled
to a target SNR measured at the reference microphone.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .array import MicArray, default_array, dump_array, relative_delays
from .motion import (MotionError, RoomSpec, SfmParams, Trajectory, azimuth_of, angle_diff,
                     export_csv, generate_trajectory, load_csv, sample_room, stationary_trajectory)
from .stft import StftConfig, read_wav, write_wav


class SceneError(ValueError):
    pass


SINC_TAPS = 32
MIN_DISTANCE = 0.5


def _fractional_delay(x: np.ndarray, delay: np.ndarray, taps: int = SINC_TAPS) -> np.ndarray:
    """Sample ``x`` at ``n - delay[n]`` with a Blackman-windowed sinc kernel."""
    n = np.arange(len(x))
    pos = n - delay
    base = np.floor(pos).astype(int)
    frac = pos - base
    half = taps // 2
    offsets = np.arange(-half + 1, half + 1)  # taps samples around base
    idx = base[:, None] + offsets[None, :]
    dist = offsets[None, :] - frac[:, None]
    win = 0.42 + 0.5 * np.cos(np.pi * dist / half) + 0.08 * np.cos(2 * np.pi * dist / half)
    win[np.abs(dist) >= half] = 0.0
    h = np.sinc(dist) * win
    valid = (idx >= 0) & (idx < len(x))
    vals = np.where(valid, x[np.clip(idx, 0, len(x) - 1)], 0.0)
    return np.sum(h * vals, axis=1)


def spatialize(dry, trajectory: Trajectory, array: MicArray, sample_rate: int = 16000) -> np.ndarray:
    """Propagate a mono signal along ``trajectory`` to every microphone, shape (samples, M).

    Positions are linearly interpolated between trajectory samples. The
    reference channel is the dry signal scaled by ``1 / max(distance, 0.5)``.
    """
    dry = np.asarray(dry, float)
    if dry.ndim != 1:
        raise SceneError("dry signal must be mono")
    n = len(dry)
    t = np.arange(n) / sample_rate
    slack = trajectory.times[1] - trajectory.times[0] if len(trajectory) > 1 else 0.0
    if len(trajectory) == 0 or trajectory.times[-1] + slack + 1e-9 < t[-1]:
        raise SceneError("trajectory shorter than the audio")
    pos = trajectory.position_at(t)
    rel = pos - trajectory.array_center
    az = np.arctan2(rel[:, 1], rel[:, 0])
    gain = 1.0 / np.maximum(np.linalg.norm(rel, axis=1), MIN_DISTANCE)
    delays = relative_delays(array, az) * sample_rate  # (n, M) samples
    out = np.empty((n, array.n_mics))
    for m in range(array.n_mics):
        if m == array.reference_index:
            out[:, m] = dry
        else:
            out[:, m] = _fractional_delay(dry, delays[:, m])
    return out * gain[:, None]


def diffuse_noise(duration: float, array: MicArray, seed=0, sample_rate: int = 16000,
                  n_waves: int = 64) -> np.ndarray:
    """Spatially diffuse, white, stationary Gaussian noise with unit power per channel."""
    if duration <= 0:
        raise SceneError("duration must be positive")
    if n_waves < 1:
        raise SceneError("n_waves must be positive")
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    # stratified: each azimuth is uniform on [0, 2 pi) but the set covers the circle evenly
    az = 2 * np.pi * (np.arange(n_waves) + rng.uniform(0, 1, n_waves)) / n_waves
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    tau = relative_delays(array, az)  # (W, M)
    spec = np.zeros((len(freqs), array.n_mics), complex)
    for w in range(n_waves):
        src = np.fft.rfft(rng.standard_normal(n))
        spec += src[:, None] * np.exp(-2j * np.pi * freqs[:, None] * tau[w][None, :])
    out = np.fft.irfft(spec, n=n, axis=0)
    return out / np.sqrt(np.mean(out ** 2, axis=0, keepdims=True))


def speech_like(n_samples: int, rng: np.random.Generator, sample_rate: int = 16000,
                pause_prob: float = 0.25, unvoiced_prob: float = 0.3) -> np.ndarray:
    """Syllable-structured voiced/unvoiced signal with formants and pauses.

    Voiced syllables are harmonic series with a gliding pitch filtered by two
    random formant resonators; unvoiced ones are band-pass noise bursts in
    2-7 kHz (fricatives). Both are shaped by raised-cosine envelopes and
    separated by random pauses, giving the time-frequency sparsity of real
    speech. Output has unit power.
    """
    out = np.zeros(n_samples)
    pos = int(rng.integers(0, int(0.1 * sample_rate)))
    f0_base = rng.uniform(90, 220)
    nyq = sample_rate / 2
    while pos < n_samples:
        if rng.random() < pause_prob:
            pos += int(rng.uniform(0.08, 0.35) * sample_rate)
            continue
        if rng.random() < unvoiced_prob:
            length = int(rng.uniform(0.06, 0.15) * sample_rate)
            lo = rng.uniform(2000, 4000)
            hi = min(lo + rng.uniform(1500, 3000), 0.95 * nyq)
            b, a = signal.butter(2, [lo / nyq, hi / nyq], btype="band")
            seg = signal.lfilter(b, a, rng.standard_normal(length)) * rng.uniform(0.5, 1.5)
        else:
            length = int(rng.uniform(0.12, 0.3) * sample_rate)
            tt = np.arange(length) / sample_rate
            f0 = f0_base * rng.uniform(0.85, 1.15) * (1 + rng.uniform(-0.15, 0.15) * tt / tt[-1])
            phase = 2 * np.pi * np.cumsum(f0) / sample_rate
            n_harm = int(min(5000.0 / f0.max(), 50))
            amp = 1.0 / np.arange(1, n_harm + 1) ** 0.7
            seg = np.sum(amp[:, None] * np.sin(np.arange(1, n_harm + 1)[:, None] * phase[None, :]
                                               + rng.uniform(0, 2 * np.pi, (n_harm, 1))), axis=0)
            seg = seg + 0.1 * rng.standard_normal(length)
            for _ in range(2):
                fc = rng.uniform(300, 3500)
                bw = rng.uniform(80, 300)
                r = math.exp(-math.pi * bw / sample_rate)
                a = [1.0, -2 * r * math.cos(2 * math.pi * fc / sample_rate), r * r]
                seg = seg + 2.0 * signal.lfilter([1 - r], a, seg)
            seg *= rng.uniform(0.5, 1.5)
        seg_n = min(length, n_samples - pos)
        seg = seg * np.sin(np.pi * np.arange(length) / length) ** 2
        out[pos: pos + seg_n] += seg[:seg_n]
        pos += int(length * rng.uniform(0.7, 1.0))
    power = np.mean(out ** 2)
    if power <= 0:
        raise SceneError("generated an all-zero signal")
    return out / np.sqrt(power)


def late_reverb(direct: np.ndarray, rng: np.random.Generator, level_db: float = -15.0, t60: float = 0.3,
                sample_rate: int = 16000) -> np.ndarray:
    """Exponentially decaying noise tail convolved with ``direct``, per channel.

    A crude, non-physical corruption for stress tests: the tail starts 5 ms
    after the direct path and its power sits ``level_db`` below the direct
    path power on each channel.
    """
    n_tail = int(t60 * sample_rate)
    t = np.arange(n_tail) / sample_rate
    env = np.exp(-3 * math.log(10) * t / t60)
    gap = int(0.005 * sample_rate)
    out = np.empty_like(direct)
    for m in range(direct.shape[1]):
        h = np.concatenate([np.zeros(gap), rng.standard_normal(n_tail) * env])
        rev = signal.fftconvolve(direct[:, m], h)[: len(direct)]
        p_rev = power(rev)
        out[:, m] = 0.0 if p_rev == 0 else rev * math.sqrt(power(direct[:, m]) * 10 ** (level_db / 10) / p_rev)
    return out


def load_corpus(directory, n_samples: int, rng: np.random.Generator, sample_rate: int = 16000) -> np.ndarray:
    """Concatenate randomly chosen mono WAV files from ``directory`` to ``n_samples``."""
    files = sorted(Path(directory).glob("**/*.wav"))
    if not files:
        raise SceneError(f"no WAV files under {directory}")
    parts, total = [], 0
    for _ in range(10000):
        if total >= n_samples:
            break
        x, fs = read_wav(files[int(rng.integers(len(files)))])
        if fs != sample_rate:
            raise SceneError(f"corpus sample rate {fs} != {sample_rate}")
        x = x[:, 0] if x.ndim == 2 else x
        if power(x) > 0:
            parts.append(x)
            total += len(x)
    if total < n_samples:
        raise SceneError(f"corpus under {directory} is silent")
    return np.concatenate(parts)[:n_samples]


@dataclass
class SceneBundle:
    mixture: np.ndarray  # (samples, M)
    direct_paths: list[np.ndarray]  # per speaker (samples, M)
    noise: np.ndarray  # (samples, M), already scaled
    trajectories: list[Trajectory]
    snr_db: float
    array: MicArray
    sample_rate: int = 16000
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.mixture.shape[0]

    @property
    def n_speakers(self) -> int:
        return len(self.direct_paths)

    def azimuths(self, n_frames: int | None = None) -> np.ndarray:
        """Ground-truth azimuth per speaker on the frame grid, shape (speakers, T)."""
        az = np.stack([tr.azimuth for tr in self.trajectories])
        return az if n_frames is None else az[:, :n_frames]


def power(x) -> float:
    return float(np.mean(np.asarray(x, float) ** 2))


def mix(direct_paths: list[np.ndarray], noise: np.ndarray, snr_db: float, array: MicArray,
        trajectories: list[Trajectory], sample_rate: int = 16000, meta: dict | None = None) -> SceneBundle:
    """Scale ``noise`` to ``snr_db`` at the reference microphone and add it to the speech."""
    if not direct_paths:
        raise SceneError("need at least one speaker")
    n = direct_paths[0].shape[0]
    if any(d.shape != direct_paths[0].shape for d in direct_paths) or noise.shape[0] != n:
        raise SceneError("components are not aligned")
    ref = array.reference_index
    speech = np.sum(direct_paths, axis=0)
    p_speech = power(speech[:, ref])
    p_noise = power(noise[:, ref])
    if p_speech <= 0:
        raise SceneError("speech is silent")
    if p_noise <= 0 or not np.isfinite(snr_db):
        raise SceneError("noise must have positive power and the SNR must be finite")
    g = math.sqrt(p_speech / (p_noise * 10 ** (snr_db / 10)))
    scaled = noise * g
    return SceneBundle(speech + scaled, list(direct_paths), scaled, list(trajectories), float(snr_db),
                       array, sample_rate, dict(meta or {}))


def measured_snr(bundle: SceneBundle) -> float:
    ref = bundle.array.reference_index
    speech = np.sum(bundle.direct_paths, axis=0)[:, ref]
    return 10 * math.log10(power(speech) / power(bundle.noise[:, ref]))


# ---------------------------------------------------------------------------
# scenario sampling


@dataclass(frozen=True)
class ScenarioConfig:
    duration: float = 10.0
    n_speakers: int = 2
    snr_range: tuple = (20.0, 30.0)
    room_size_range: tuple = (4.0, 8.0)
    center_fraction: float = 0.2
    min_separation_deg: float = 15.0
    stationary: bool = False
    n_noise_waves: int = 64
    corpus_dir: str | None = None
    late_reverb_db: float | None = None
    sample_rate: int = 16000
    win_len: int = 512
    hop: int = 256

    def stft_config(self) -> StftConfig:
        return StftConfig(self.sample_rate, self.win_len, self.hop)


def quartile_azimuths(azimuths: np.ndarray, n_segments: int = 4) -> list[list[float]]:
    """Circular mean azimuth of each speaker in each time segment."""
    t = azimuths.shape[1]
    bounds = segment_bounds(t, n_segments)
    out = []
    for az in azimuths:
        out.append([float(np.mod(np.angle(np.mean(np.exp(1j * az[a:b]))), 2 * np.pi)) for a, b in bounds])
    return out


def segment_bounds(n_frames: int, n_segments: int = 4) -> list[tuple[int, int]]:
    """Half-open, equal-length segments; frame ``n_frames // 4`` starts segment 2."""
    edges = [(i * n_frames) // n_segments for i in range(n_segments + 1)]
    return list(zip(edges[:-1], edges[1:]))


def count_crossings(az_a: np.ndarray, az_b: np.ndarray) -> int:
    """Number of sign changes of the wrapped azimuth difference away from the antipode."""
    d = angle_diff(az_a, az_b)
    s = np.sign(d)
    change = (s[1:] != s[:-1]) & (np.abs(d[1:]) < np.pi / 2) & (np.abs(d[:-1]) < np.pi / 2)
    return int(np.sum(change))


def sample_geometry(seed: int, config: ScenarioConfig | None = None, sfm: SfmParams | None = None):
    """Room and speaker trajectories of scene ``seed`` without any audio.

    Returns ``(room, trajectories, rng)``; ``rng`` is the scene generator in
    the state :func:`sample_scene` continues from.
    """
    config = config or ScenarioConfig()
    sfm = sfm or SfmParams()
    rng = np.random.default_rng([seed, 0x5CE4E])
    fs = config.sample_rate
    n = int(round(config.duration * fs))
    cfg = config.stft_config()
    hop_s = config.hop / fs
    t0 = config.win_len / 2 / fs  # trajectory samples at frame centers
    for _ in range(50):
        room = sample_room(rng, config.room_size_range, config.center_fraction)
        try:
            if config.stationary:
                trajs = _stationary(room, config, sfm, rng, cfg.n_frames(n), hop_s, t0)
            else:
                trajs = generate_trajectory(room, config.n_speakers, n / fs, hop_s, sfm,
                                            seed=int(rng.integers(2 ** 63)), time_offset=t0,
                                            min_separation_deg=config.min_separation_deg)
            return room, trajs, rng
        except MotionError:
            continue
    raise SceneError(f"seed {seed}: could not sample a valid room")


def sample_scene(seed: int, config: ScenarioConfig | None = None, array: MicArray | None = None,
                 sfm: SfmParams | None = None, dry: list[np.ndarray] | None = None) -> SceneBundle:
    """Draw one random scene. Everything is a deterministic function of ``seed``."""
    config = config or ScenarioConfig()
    array = array or default_array()
    fs = config.sample_rate
    n = int(round(config.duration * fs))
    cfg = config.stft_config()
    room, trajs, rng = sample_geometry(seed, config, sfm)
    arr = array.with_center(room.array_center)
    if dry is None and config.corpus_dir:
        dry = [load_corpus(config.corpus_dir, n, rng, fs) for _ in range(config.n_speakers)]
    if dry is None:
        dry = [speech_like(n, rng, fs) for _ in range(config.n_speakers)]
    else:
        dry = [np.asarray(d, float)[:n] / math.sqrt(power(d[:n])) for d in dry]
        if any(len(d) < n for d in dry):
            raise SceneError("dry signals shorter than the scene duration")
    direct = [spatialize(d, tr, arr, fs) for d, tr in zip(dry, trajs)]
    noise = diffuse_noise(n / fs, arr, seed=int(rng.integers(2 ** 63)), sample_rate=fs,
                          n_waves=config.n_noise_waves)
    snr = float(rng.uniform(*config.snr_range))
    az = np.stack([tr.azimuth for tr in trajs])
    meta = {
        "seed": int(seed),
        "room": {"width": room.width, "length": room.length},
        "array_center": room.array_center.tolist(),
        "array": dump_array(arr),
        "snr_db": snr,
        "duration": config.duration,
        "sample_rate": fs,
        "n_frames": int(cfg.n_frames(n)),
        "segment_azimuths": quartile_azimuths(az),
        "crossings": count_crossings(az[0], az[1]) if len(trajs) > 1 else 0,
        "scenario": _jsonable(asdict(config)),
    }
    bundle = mix(direct, noise, snr, arr, trajs, fs, meta)
    if config.late_reverb_db is not None:
        # kept in the noise component so direct paths stay exact ground truth
        rev = sum(late_reverb(d, rng, config.late_reverb_db, sample_rate=fs) for d in direct)
        bundle.noise = bundle.noise + rev
        bundle.mixture = bundle.mixture + rev
    return bundle


def _stationary(room: RoomSpec, config: ScenarioConfig, sfm: SfmParams, rng, n_frames, hop_s, t0):
    times = t0 + hop_s * np.arange(n_frames)
    pts: list[np.ndarray] = []
    for _ in range(1000):
        if len(pts) == config.n_speakers:
            break
        p = rng.uniform([sfm.eps_wall] * 2, [room.width - sfm.eps_wall, room.length - sfm.eps_wall])
        if np.linalg.norm(p - room.array_center) < max(sfm.eps_array, 1.0):
            continue
        az = azimuth_of(p, room.array_center)
        if all(abs(angle_diff(az, azimuth_of(q, room.array_center))) >= math.radians(config.min_separation_deg)
               for q in pts):
            pts.append(p)
    if len(pts) < config.n_speakers:
        raise MotionError("could not place stationary speakers")
    return [stationary_trajectory(p, room.array_center, times, i) for i, p in enumerate(pts)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# persistence


def scene_dirname(seed: int) -> str:
    return f"scene_{seed:08d}"


def save_bundle(bundle: SceneBundle, root) -> Path:
    """Write mixture, per-speaker direct paths, noise, trajectories and metadata."""
    d = Path(root) / scene_dirname(int(bundle.meta.get("seed", 0)))
    d.mkdir(parents=True, exist_ok=True)
    write_wav(d / "mixture.wav", bundle.mixture, bundle.sample_rate)
    write_wav(d / "noise.wav", bundle.noise, bundle.sample_rate)
    for i, dp in enumerate(bundle.direct_paths):
        write_wav(d / f"direct_{i}.wav", dp, bundle.sample_rate)
    export_csv(bundle.trajectories, d / "trajectories.csv")
    meta = dict(bundle.meta)
    meta["snr_db"] = bundle.snr_db
    meta["n_speakers"] = bundle.n_speakers
    meta["times"] = bundle.trajectories[0].times.tolist()
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return d


def load_bundle(path) -> SceneBundle:
    d = Path(path)
    if not (d / "meta.json").exists():
        raise SceneError(f"{d}: not a scene directory")
    meta = json.loads((d / "meta.json").read_text())
    noise, fs = read_wav(d / "noise.wav")
    direct = [read_wav(d / f"direct_{i}.wav")[0] for i in range(int(meta["n_speakers"]))]
    arr_d = meta["array"]
    arr = MicArray(np.asarray(arr_d["positions"]), int(arr_d["reference_index"]), float(arr_d["sound_speed"]),
                   np.asarray(meta["array_center"], float))
    trajs = load_csv(d / "trajectories.csv", times=meta["times"], array_center=meta["array_center"])
    meta = {k: v for k, v in meta.items() if k != "times"}
    # the stored mixture is float32; recombine from the stored parts for exact additivity
    mixture = np.sum(direct, axis=0) + noise
    return SceneBundle(mixture, direct, noise, trajs, float(meta["snr_db"]), arr, int(fs), meta)
