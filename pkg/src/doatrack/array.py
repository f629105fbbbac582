"""Planar microphone array geometry and far-field steering vectors.

Sign convention: a plane wave from azimuth ``theta`` reaches microphone ``m``
with delay ``tau_m = -(u(theta) . (p_m - p_ref)) / c`` relative to the
reference microphone, and the steering vector entry is ``exp(-1j * w * tau_m)``.
Azimuth 0 points along +x, angles increase counter-clockwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

SOUND_SPEED = 343.0


class ArrayError(ValueError):
    """Invalid array geometry or steering parameters."""


@dataclass(frozen=True)
class MicArray:
    positions: np.ndarray  # (M, 2) meters, relative to the array center
    reference_index: int = 0
    sound_speed: float = SOUND_SPEED
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ArrayError(f"positions must be (M, 2), got {pos.shape}")
        if pos.shape[1] == 3:
            if not np.allclose(pos[:, 2], pos[0, 2]):
                raise ArrayError("microphones must lie in one horizontal plane")
            pos = pos[:, :2]
        if pos.shape[0] < 2:
            raise ArrayError("need at least two microphones")
        if not 0 <= self.reference_index < pos.shape[0]:
            raise ArrayError(f"reference_index {self.reference_index} out of range")
        if self.sound_speed <= 0:
            raise ArrayError("sound_speed must be positive")
        pos.setflags(write=False)
        center = np.asarray(self.center, dtype=float).reshape(2)
        center.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "center", center)

    @property
    def n_mics(self) -> int:
        return self.positions.shape[0]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        m = self.n_mics
        return [(i, j) for i in range(m) for j in range(i + 1, m)]

    @property
    def max_spacing(self) -> float:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return float(np.max(np.linalg.norm(diff, axis=-1)))

    def relative_positions(self) -> np.ndarray:
        return self.positions - self.positions[self.reference_index]

    def world_positions(self) -> np.ndarray:
        """Microphone positions in room coordinates."""
        return self.positions + self.center

    def with_center(self, center) -> "MicArray":
        return MicArray(self.positions, self.reference_index, self.sound_speed, np.asarray(center, float))

    def rotated(self, angle: float) -> "MicArray":
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return MicArray(self.positions @ rot.T, self.reference_index, self.sound_speed, self.center)


def circular_array(n_mics: int = 3, diameter: float = 0.10, reference_index: int = 0,
                   sound_speed: float = SOUND_SPEED) -> MicArray:
    """Uniform circular array with microphone 0 at azimuth 0."""
    phi = 2 * np.pi * np.arange(n_mics) / n_mics
    pos = 0.5 * diameter * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    return MicArray(pos, reference_index, sound_speed)


def default_array() -> MicArray:
    return circular_array(3, 0.10)


def unit_vector(azimuth) -> np.ndarray:
    azimuth = np.asarray(azimuth, dtype=float)
    return np.stack([np.cos(azimuth), np.sin(azimuth)], axis=-1)


def relative_delays(array: MicArray, azimuth) -> np.ndarray:
    """Far-field delays (seconds) relative to the reference mic, shape ``azimuth.shape + (M,)``."""
    u = unit_vector(azimuth)
    return -(u @ array.relative_positions().T) / array.sound_speed


def bin_frequencies(fft_size: int, sample_rate: float) -> np.ndarray:
    return np.arange(fft_size // 2 + 1) * sample_rate / fft_size


@dataclass(frozen=True)
class SteeringVector:
    values: np.ndarray
    bin_index: int
    azimuth: float


def steering_vector(array: MicArray, azimuth: float, bin: int, fft_size: int,
                    sample_rate: float) -> SteeringVector:
    if not 0 <= bin <= fft_size // 2:
        raise ArrayError(f"bin {bin} outside [0, {fft_size // 2}]")
    omega = 2 * np.pi * bin * sample_rate / fft_size
    tau = relative_delays(array, azimuth)
    return SteeringVector(np.exp(-1j * omega * tau), int(bin), float(np.mod(azimuth, 2 * np.pi)))


def steering_matrix(array: MicArray, azimuths, fft_size: int, sample_rate: float,
                    bins=None) -> np.ndarray:
    """Steering vectors for many azimuths and bins, shape ``azimuths.shape + (K, M)``."""
    if bins is None:
        bins = np.arange(fft_size // 2 + 1)
    omega = 2 * np.pi * np.asarray(bins) * sample_rate / fft_size
    tau = relative_delays(array, azimuths)
    return np.exp(-1j * omega[:, None] * tau[..., None, :])


def aliasing_bin_limit(array: MicArray, sample_rate: float, fft_size: int) -> int:
    """Largest bin at or below the half-wavelength frequency of the widest mic pair."""
    nyquist_bin = fft_size // 2
    d_max = array.max_spacing
    if d_max <= 0:
        return nyquist_bin
    f_alias = array.sound_speed / (2.0 * d_max)
    k = int(np.floor(f_alias / (sample_rate / fft_size) + 1e-9))
    return min(k, nyquist_bin)


def load_array(path) -> MicArray:
    """Read ``positions`` (xy list, meters) and ``reference_index`` from YAML or JSON."""
    path = Path(path)
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    try:
        return MicArray(np.asarray(data["positions"], float),
                        int(data.get("reference_index", 0)),
                        float(data.get("sound_speed", SOUND_SPEED)))
    except KeyError as exc:
        raise ArrayError(f"{path}: missing key {exc}") from None


def dump_array(array: MicArray) -> dict:
    return {
        "positions": array.positions.tolist(),
        "reference_index": array.reference_index,
        "sound_speed": array.sound_speed,
    }
