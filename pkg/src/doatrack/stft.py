"""Frame-causal STFT with a square-root Hann window at 50 % overlap.

Frame ``t`` covers samples ``[t * hop, t * hop + win_len)``; the signal is
zero padded at the end so that ``ceil(n_samples / hop)`` frames exist. Since
the squared periodic Hann window sums to one at half overlap, weighted
overlap-add with the same window reconstructs every sample covered by two
frames exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class StftError(ValueError):
    pass


def sqrt_hann(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * k / n))


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    win_len: int = 512
    hop: int = 256
    window: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.win_len <= 0 or self.hop <= 0:
            raise StftError("win_len and hop must be positive")
        if 2 * self.hop != self.win_len:
            raise StftError("hop must be win_len / 2")
        if self.window is None:
            object.__setattr__(self, "window", sqrt_hann(self.win_len))
        elif len(self.window) != self.win_len:
            raise StftError("window length must equal win_len")

    @property
    def fft_size(self) -> int:
        return self.win_len

    @property
    def n_bins(self) -> int:
        return self.win_len // 2 + 1

    @property
    def frame_period(self) -> float:
        return self.hop / self.sample_rate

    def n_frames(self, n_samples: int) -> int:
        return -(-n_samples // self.hop)

    def frame_times(self, n_frames: int) -> np.ndarray:
        """Time stamp (s) of each frame center."""
        return (np.arange(n_frames) * self.hop + self.win_len / 2) / self.sample_rate

    def complete_frames(self, n_samples: int) -> np.ndarray:
        """Boolean mask of frames that do not reach into the end padding."""
        t = np.arange(self.n_frames(n_samples))
        return t * self.hop + self.win_len <= n_samples


@dataclass
class Spectrogram:
    data: np.ndarray  # (T, K, M) complex
    config: StftConfig
    n_samples: int

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]

    def frames(self, stop: int) -> "Spectrogram":
        """Leading ``stop`` frames (used for causality checks)."""
        return Spectrogram(self.data[:stop], self.config, min(self.n_samples, stop * self.config.hop))


def _as_2d(audio: np.ndarray) -> np.ndarray:
    audio = np.asarray(audio)
    if audio.ndim == 1:
        return audio[:, None]
    if audio.ndim != 2:
        raise StftError(f"expected (samples, channels), got shape {audio.shape}")
    return audio


def analyze(audio, config: StftConfig | None = None) -> Spectrogram:
    """Onesided STFT of a (samples, channels) waveform."""
    if isinstance(audio, (list, tuple)):
        lengths = {len(np.asarray(ch)) for ch in audio}
        if len(lengths) != 1:
            raise StftError(f"channel length mismatch: {sorted(lengths)}")
        audio = np.stack([np.asarray(ch, dtype=float) for ch in audio], axis=1)
    config = config or StftConfig()
    x = _as_2d(audio)
    n, m = x.shape
    if n < config.win_len:
        raise StftError(f"signal shorter than one window ({n} < {config.win_len})")
    t = config.n_frames(n)
    padded = np.zeros(((t - 1) * config.hop + config.win_len, m), dtype=x.dtype)
    padded[:n] = x
    idx = np.arange(t)[:, None] * config.hop + np.arange(config.win_len)[None, :]
    frames = padded[idx] * config.window[None, :, None]  # (T, N, M)
    return Spectrogram(np.fft.rfft(frames, n=config.fft_size, axis=1), config, n)


def synthesize(spec: Spectrogram, n_samples: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`analyze`, returns (samples, channels)."""
    cfg = spec.config
    data = spec.data
    if data.ndim == 2:
        data = data[:, :, None]
    t, _, m = data.shape
    frames = np.fft.irfft(data, n=cfg.fft_size, axis=1)[:, : cfg.win_len] * cfg.window[None, :, None]
    out = np.zeros(((t - 1) * cfg.hop + cfg.win_len, m))
    for i in range(t):
        out[i * cfg.hop: i * cfg.hop + cfg.win_len] += frames[i]
    n_samples = spec.n_samples if n_samples is None else n_samples
    return out[:n_samples]


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64 (samples, channels)."""
    rate, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        data = data.astype(np.float64)
    return _as_2d(data), int(rate)


def write_wav(path, audio, sample_rate: int = 16000, pcm16: bool = False) -> None:
    x = _as_2d(audio)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if pcm16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(str(path), sample_rate, data)
