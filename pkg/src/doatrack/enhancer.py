"""Frame-causal spatially selective filters used in place of a neural enhancer.

Every backend exposes ``reset()`` and ``process(t, Y_t, theta_hat) -> S_hat_t``,
where ``S_hat_t`` has shape (K,) for MISO output (reference channel) or
(K, M) for MIMO output. Frames must be processed in order.

Backends
    oracle            ground-truth target direct path, ignores ``theta_hat``
    oracle-corrupted  oracle plus complex Gaussian perturbation; when the
                      steering direction is within ``confuse_deg`` of an
                      interferer it returns that interferer's frame with
                      probability ``p_confuse``
    delay-and-sum     ``(1/M) d^H Y``; MIMO output re-projects with ``d``
    mvdr              ``R^-1 d / (d^H R^-1 d)`` with an EMA noise covariance (MISO only)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .array import MicArray
from .doa import ema_noise_cov, loaded, omega
from .array import relative_delays
from .stft import StftConfig

KINDS = ("oracle", "oracle-corrupted", "delay-and-sum", "mvdr")
SHAPES = ("miso", "mimo")


class EnhancerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnhancerConfig:
    kind: str = "oracle-corrupted"
    output: str = "miso"
    snr_db: float = 15.0  # perturbation SNR of the corrupted oracle
    p_confuse: float = 0.8
    confuse_deg: float = 10.0
    alpha_ema: float = 0.95
    loading: float = 1e-4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EnhancerConfigError(f"unknown enhancer {self.kind!r}; choose from {KINDS}")
        if self.output not in SHAPES:
            raise EnhancerConfigError(f"output must be one of {SHAPES}")
        if self.kind == "mvdr" and self.output == "mimo":
            raise EnhancerConfigError("mvdr provides MISO output only")
        if not 0 <= self.p_confuse <= 1:
            raise EnhancerConfigError("p_confuse must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroundTruth:
    """Per-target oracle information on the STFT grid."""

    target: np.ndarray  # (T, K, M) direct-path STFT of the target
    interferers: list  # of (T, K, M)
    interferer_azimuths: np.ndarray  # (I, T) radians
    target_azimuth: np.ndarray  # (T,)


def steering(array: MicArray, theta: float, stft: StftConfig) -> np.ndarray:
    w = omega(np.arange(stft.n_bins), stft.fft_size, stft.sample_rate)
    tau = relative_delays(array, theta)
    return np.exp(-1j * w[:, None] * tau[None, :])


class Enhancer:
    def __init__(self, config: EnhancerConfig, array: MicArray, stft: StftConfig | None = None,
                 truth: GroundTruth | None = None, seed: int = 0, stream: int = 0):
        self.config = config
        self.array = array
        self.stft = stft or StftConfig()
        self.truth = truth
        self.seed, self.stream = seed, stream
        self.ref = array.reference_index
        self.t = 0

    @property
    def mimo(self) -> bool:
        return self.config.output == "mimo"

    def reset(self) -> None:
        self.t = 0

    def _check_order(self, t: int) -> None:
        if t != self.t:
            raise RuntimeError(f"frames must be processed in order (expected {self.t}, got {t})")
        self.t += 1

    def process(self, t: int, Y_t: np.ndarray, theta_hat: float) -> np.ndarray:
        raise NotImplementedError


class OracleEnhancer(Enhancer):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        if self.truth is None:
            raise EnhancerConfigError("oracle backends need ground truth")

    def _frame(self, t: int, theta_hat: float) -> np.ndarray:
        return self.truth.target[t]

    def process(self, t, Y_t, theta_hat):
        self._check_order(t)
        S = self._frame(t, theta_hat)
        return S.copy() if self.mimo else S[:, self.ref].copy()


class CorruptedOracleEnhancer(OracleEnhancer):
    def _frame(self, t, theta_hat):
        c = self.config
        rng = np.random.Generator(np.random.Philox(key=[self.seed & (2 ** 64 - 1), 1000 + self.stream],
                                                   counter=[t, 0, 0, 0]))
        S = self.truth.target[t]
        u = rng.random()
        if self.truth.interferers and c.p_confuse > 0:
            diff = np.abs(np.angle(np.exp(1j * (theta_hat - self.truth.interferer_azimuths[:, t]))))
            near = np.flatnonzero(diff < math.radians(c.confuse_deg))
            if near.size and u < c.p_confuse:
                S = self.truth.interferers[int(near[np.argmin(diff[near])])][t]
        if np.isfinite(c.snr_db):
            p = np.mean(np.abs(S) ** 2)
            sigma = math.sqrt(p / 10 ** (c.snr_db / 10) / 2)
            noise = sigma * (rng.standard_normal(S.shape) + 1j * rng.standard_normal(S.shape))
            S = S + noise
        return S


class DelaySumEnhancer(Enhancer):
    def process(self, t, Y_t, theta_hat):
        self._check_order(t)
        d = steering(self.array, theta_hat, self.stft)
        s = np.sum(np.conj(d) * Y_t, axis=1) / self.array.n_mics
        return d * s[:, None] if self.mimo else s


class MvdrEnhancer(Enhancer):
    """MVDR beamformer with its own broadband EMA noise covariance.

    The covariance tracks the residual ``Y - d(theta) S`` of its own output
    unless :meth:`set_covariance` supplies one (e.g. the tracker's estimate).
    """

    def reset(self):
        super().reset()
        self.R = None
        self._external = None

    def set_covariance(self, R) -> None:
        self._external = None if R is None else np.asarray(R)

    def process(self, t, Y_t, theta_hat):
        self._check_order(t)
        m = self.array.n_mics
        d = steering(self.array, theta_hat, self.stft)
        R = self._external if self._external is not None else self.R
        if R is None:
            s = np.sum(np.conj(d) * Y_t, axis=1) / m
        else:
            Rl = loaded(R, self.config.loading)
            if Rl.ndim == 2:
                x = np.linalg.solve(Rl, d.T).T  # (K, M)
            else:
                x = np.linalg.solve(Rl, d[..., None])[..., 0]
            wts = x / np.sum(np.conj(d) * x, axis=1, keepdims=True)
            s = np.sum(np.conj(wts) * Y_t, axis=1)
        self.R = ema_noise_cov(self.R, Y_t, s, theta_hat, self.config.alpha_ema, self.array,
                               self.stft.fft_size, self.stft.sample_rate)
        return s


def mvdr_weights(R: np.ndarray, d: np.ndarray, loading: float = 1e-4) -> np.ndarray:
    """Distortionless weights for one bin: ``w^H d = 1``."""
    x = np.linalg.solve(loaded(R, loading), d)
    return x / (np.conj(d) @ x)


def make_enhancer(config: EnhancerConfig, array: MicArray, stft: StftConfig | None = None,
                  truth: GroundTruth | None = None, seed: int = 0, stream: int = 0) -> Enhancer:
    cls = {"oracle": OracleEnhancer, "oracle-corrupted": CorruptedOracleEnhancer,
           "delay-and-sum": DelaySumEnhancer, "mvdr": MvdrEnhancer}[config.kind]
    enh = cls(config, array, stft, truth, seed, stream)
    enh.reset()
    return enh
