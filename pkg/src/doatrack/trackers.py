"""Recursive Bayesian DoA trackers.

Both trackers share the white-noise-acceleration model over ``[theta, theta_dot]``.

Wrapped Kalman filter
    Scalar measurement ``Phi_t`` (broadband LS DoA), nearest-mode wrapped
    innovation, Joseph-form covariance update.

Bootstrap particle filter
    ``N`` particles initialized at ``theta_0`` with zero angular velocity;
    systematic resampling when ``N_eff < tau_eff * N``; angular velocity
    follows from the degenerate state model,
    ``theta_dot_t = 2 / dT * (theta_t - theta_{t-1}) - theta_dot_{t-1}``.

Modes
    ``concat``   estimate from the filtering distribution given ``Y_{1:t}``.
    ``miso-ar``  weight with the previous frame and the previous enhanced
                 reference-channel speech, report the predictive mean.
    ``mimo-ar``  as ``miso-ar`` but the previous enhanced multichannel speech
                 replaces the observation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import logsumexp

from . import doa
from .array import MicArray, aliasing_bin_limit
from .opcount import OpCounter
from .stft import StftConfig

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
MODES = ("concat", "miso-ar", "mimo-ar")
KINDS = ("kf", "pf")


class TrackerError(RuntimeError):
    pass


def wrap_2pi(x):
    return np.mod(x, TWO_PI)


@dataclass(frozen=True)
class MotionModel:
    dT: float = 0.016
    sigma_nu: float = math.radians(30.0)  # rad/s^2

    def __post_init__(self):
        if not self.dT > 0:
            raise TrackerError("dT must be positive")
        if self.sigma_nu < 0:
            raise TrackerError("sigma_nu must be non-negative")

    @property
    def F(self) -> np.ndarray:
        return np.array([[1.0, self.dT], [0.0, 1.0]])

    @property
    def G(self) -> np.ndarray:
        return np.array([self.dT ** 2 / 2, self.dT])

    @property
    def Q(self) -> np.ndarray:
        g = self.G
        return np.outer(g, g) * self.sigma_nu ** 2


@dataclass(frozen=True)
class TrackerConfig:
    kind: str = "pf"
    mode: str = "concat"
    sigma_nu_deg: float = 30.0  # deg/s^2
    sigma_phi_deg: float = 15.0
    kappa: float = 5.0
    n_particles: int = 50
    tau_eff: float = 0.5
    alpha_ema: float = 0.95
    ls_resolution_deg: float = 1.0
    ls_window_deg: float | None = 10.0  # None: full-circle grid
    watson_bins: str = "all"  # or "aliasing"
    per_bin_cov: bool = False
    cov_loading: float = 1e-6
    ar_estimate: str = "propagated"  # "propagated" (theta_t with w_{t-1}) or "previous"
    skip_low_confidence: bool = True  # KF: skip updates when the resultant length is < 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TrackerError(f"unknown tracker kind {self.kind!r}; choose from {KINDS}")
        if self.mode not in MODES:
            raise TrackerError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.n_particles < 1:
            raise TrackerError("n_particles must be >= 1")
        if not 0 <= self.tau_eff <= 1:
            raise TrackerError("tau_eff must lie in [0, 1]")
        if not 0 <= self.alpha_ema < 1:
            raise TrackerError("alpha_ema must lie in [0, 1)")
        if self.sigma_phi_deg <= 0 or self.kappa < 0 or self.sigma_nu_deg < 0:
            raise TrackerError("sigma_phi must be positive, kappa and sigma_nu non-negative")
        if self.watson_bins not in ("all", "aliasing"):
            raise TrackerError("watson_bins must be 'all' or 'aliasing'")
        if self.ar_estimate not in ("propagated", "previous"):
            raise TrackerError("ar_estimate must be 'propagated' or 'previous'")

    @property
    def label(self) -> str:
        return f"{self.kind}-{self.mode}"

    def motion(self, dT: float) -> MotionModel:
        return MotionModel(dT, math.radians(self.sigma_nu_deg))

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "TrackerConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# Kalman filter


@dataclass
class KfState:
    mean: np.ndarray  # [theta (wrapped to [0, 2 pi)), theta_dot]
    cov: np.ndarray

    @classmethod
    def initial(cls, theta0: float, cov=None) -> "KfState":
        return cls(np.array([wrap_2pi(theta0), 0.0]), np.zeros((2, 2)) if cov is None else np.array(cov, float))


def kf_predict(state: KfState, model: MotionModel) -> KfState:
    F = model.F
    mean = F @ state.mean
    mean[0] = wrap_2pi(mean[0])
    cov = F @ state.cov @ F.T + model.Q
    return KfState(mean, 0.5 * (cov + cov.T))


def kf_update(state: KfState, phi: float, sigma_phi: float) -> tuple[KfState, float]:
    """Scalar update with the innovation wrapped to ``(-pi, pi]`` (nearest wrapped mode)."""
    H = np.array([1.0, 0.0])
    nu = float(doa.wrap(phi - state.mean[0]))
    s = state.cov[0, 0] + sigma_phi ** 2
    K = state.cov[:, 0] / s
    mean = state.mean + K * nu
    mean[0] = wrap_2pi(mean[0])
    A = np.eye(2) - np.outer(K, H)
    cov = A @ state.cov @ A.T + np.outer(K, K) * sigma_phi ** 2  # Joseph form
    cov = 0.5 * (cov + cov.T)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise TrackerError("non-finite Kalman state")
    return KfState(mean, cov), nu


def kf_step_concat(state: KfState, phi: float | None, model: MotionModel,
                   sigma_phi: float) -> tuple[KfState, float, float]:
    """Predict, then update with ``phi`` unless it is ``None``/``nan``.

    Returns ``(state, theta_hat, innovation)``; the innovation is ``nan``
    when the measurement was skipped.
    """
    pred = kf_predict(state, model)
    if phi is None or not np.isfinite(phi):
        return pred, float(pred.mean[0]), float("nan")
    post, nu = kf_update(pred, phi, sigma_phi)
    return post, float(post.mean[0]), nu


def kf_step_ar(state: KfState, phi_prev: float | None, model: MotionModel,
               sigma_phi: float) -> tuple[KfState, float, float]:
    """Update with the previous-frame measurement, then predict; report the predictive mean."""
    nu = float("nan")
    if phi_prev is not None and np.isfinite(phi_prev):
        state, nu = kf_update(state, phi_prev, sigma_phi)
    pred = kf_predict(state, model)
    return pred, float(pred.mean[0]), nu


# ---------------------------------------------------------------------------
# particle filter


@dataclass
class PfState:
    theta: np.ndarray  # (N,) unwrapped
    theta_dot: np.ndarray  # (N,)
    weights: np.ndarray  # (N,)

    @classmethod
    def initial(cls, theta0: float, n: int) -> "PfState":
        return cls(np.full(n, float(theta0)), np.zeros(n), np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return len(self.weights)

    def copy(self) -> "PfState":
        return PfState(self.theta.copy(), self.theta_dot.copy(), self.weights.copy())


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, float)
    return float(1.0 / np.sum(w ** 2))


def systematic_resample(weights, u0: float) -> np.ndarray:
    """Indices drawn by systematic resampling with offset ``u0`` in [0, 1)."""
    w = np.asarray(weights, float)
    n = len(w)
    positions = (u0 + np.arange(n)) / n
    cum = np.cumsum(w)
    cum[-1] = 1.0
    return np.minimum(np.searchsorted(cum, positions, side="right"), n - 1)


def pf_propagate(state: PfState, model: MotionModel, noise: np.ndarray) -> PfState:
    """Sample ``theta_t`` from the motion model and update velocities by the recursion."""
    dT = model.dT
    theta = state.theta + dT * state.theta_dot + 0.5 * dT ** 2 * model.sigma_nu * noise
    theta_dot = 2.0 / dT * (theta - state.theta) - state.theta_dot
    return PfState(theta, theta_dot, state.weights.copy())


def pf_reweight(state: PfState, loglik: np.ndarray) -> tuple[PfState, bool]:
    """Multiply weights by ``exp(loglik)`` and normalize; returns (state, reset_flag)."""
    with np.errstate(divide="ignore"):
        logw = np.log(state.weights) + np.asarray(loglik, float)
    if not np.any(np.isfinite(logw)):
        log.warning("all particle weights vanished; resetting to uniform")
        return PfState(state.theta, state.theta_dot, np.full(state.n, 1.0 / state.n)), True
    logw = np.where(np.isfinite(logw), logw, -np.inf)
    w = np.exp(logw - logsumexp(logw))
    w /= w.sum()
    return PfState(state.theta, state.theta_dot, w), False


def pf_resample(state: PfState, u0: float) -> PfState:
    idx = systematic_resample(state.weights, u0)
    return PfState(state.theta[idx], state.theta_dot[idx], np.full(state.n, 1.0 / state.n))


def pf_estimate(theta, weights) -> float:
    return float(wrap_2pi(np.angle(np.sum(np.asarray(weights) * np.exp(1j * np.asarray(theta))))))


def frame_rng(seed: int, stream: int, frame: int) -> np.random.Generator:
    """Counter-based generator: independent of how many draws earlier frames made."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2 ** 64 - 1), int(stream)],
                                                counter=[int(frame), 0, 0, 0]))


# ---------------------------------------------------------------------------
# tracker objects with a common frame-causal interface


@dataclass
class DoaTrack:
    theta: np.ndarray  # (T,) radians
    quality: np.ndarray  # (T,) N_eff (PF) or innovation in radians (KF)
    resampled: np.ndarray  # (T,) bool
    skipped: np.ndarray  # (T,) bool
    label: str = ""

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def theta_deg(self) -> np.ndarray:
        return np.degrees(self.theta)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("frame,theta_hat_deg,n_eff_or_innovation,resampled,skipped\n")
            for t in range(len(self)):
                fh.write(f"{t},{float(self.theta_deg[t])!r},{float(self.quality[t])!r},"
                         f"{int(self.resampled[t])},{int(self.skipped[t])}\n")

    @classmethod
    def from_csv(cls, path, label: str = "") -> "DoaTrack":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        return cls(np.radians(data["theta_hat_deg"]), data["n_eff_or_innovation"].astype(float),
                   data["resampled"].astype(bool), data["skipped"].astype(bool), label)


class Tracker:
    """Frame-causal tracker. Call :meth:`step` with ``Y_t`` and then
    :meth:`feedback` with the enhancer output for the same frame."""

    def __init__(self, config: TrackerConfig, array: MicArray, stft: StftConfig | None = None,
                 counter: OpCounter | None = None):
        self.config = config
        self.array = array
        self.stft = stft or StftConfig()
        self.model = config.motion(self.stft.frame_period)
        self.k_alias = aliasing_bin_limit(array, self.stft.sample_rate, self.stft.fft_size)
        self.alias_bins = np.arange(1, self.k_alias + 1)
        self.counter = counter
        self.t = 0
        self._prev_Y = None
        self._prev_S = None
        self._prev_theta = None

    @property
    def ar(self) -> bool:
        return self.config.mode != "concat"

    def reset(self, theta0: float, seed: int = 0, stream: int = 0) -> None:
        self.t = 0
        self.seed, self.stream = seed, stream
        self._prev_Y = self._prev_S = self._prev_theta = None

    def step(self, Y_t: np.ndarray) -> tuple[float, float, bool, bool]:
        raise NotImplementedError

    def feedback(self, S_hat_t) -> None:
        """Store the enhanced frame produced for the current estimate (AR modes)."""
        if self.ar:
            self._prev_S = None if S_hat_t is None else np.asarray(S_hat_t)

    def _remember(self, Y_t, theta_hat):
        self._prev_Y = Y_t
        self._prev_theta = theta_hat
        self._prev_S = None
        self.t += 1
        if self.counter is not None:
            self.counter.tick()

    # LS measurement shared by the KF modes
    def _phi(self, Y_t: np.ndarray, weights=None) -> float:
        c = self.config
        phi = doa.narrowband_doa_frame(Y_t[self.alias_bins], self.array, self.alias_bins, self.stft.fft_size,
                                       self.stft.sample_rate, c.ls_resolution_deg, c.ls_window_deg, self.counter)
        g = 1.0 if weights is None else np.asarray(weights)[self.alias_bins]
        agg = doa.aggregate_weighted(phi, g)
        if self.counter is not None:
            self.counter.add("aggregate", 2 * len(self.alias_bins))
        if not agg.valid or (self.config.skip_low_confidence and agg.low_confidence):
            return float("nan")
        return agg.phi


class KalmanTracker(Tracker):
    def reset(self, theta0: float, seed: int = 0, stream: int = 0) -> None:
        super().reset(theta0, seed, stream)
        self.state = KfState.initial(theta0)

    def step(self, Y_t):
        c = self.config
        sigma_phi = math.radians(c.sigma_phi_deg)
        if c.mode == "concat":
            phi = self._phi(Y_t)
            self.state, theta, nu = kf_step_concat(self.state, phi, self.model, sigma_phi)
        else:
            phi = float("nan")
            if self._prev_S is not None and self._prev_Y is not None:
                if c.mode == "miso-ar":
                    phi = self._phi(self._prev_Y, np.abs(self._prev_S) ** 2)
                else:
                    phi = self._phi(self._prev_S)
            self.state, theta, nu = kf_step_ar(self.state, phi, self.model, sigma_phi)
        if self.counter is not None:
            self.counter.add("kalman", 24)
        self._remember(Y_t, theta)
        return theta, nu, False, not np.isfinite(nu)


class ParticleTracker(Tracker):
    def reset(self, theta0: float, seed: int = 0, stream: int = 0) -> None:
        super().reset(theta0, seed, stream)
        self.state = PfState.initial(theta0, self.config.n_particles)
        self.R = None
        self.n_resets = 0

    def _watson_bins(self):
        if self.config.watson_bins == "aliasing":
            return self.alias_bins
        return np.arange(self.stft.n_bins)

    def _watson(self, X, theta):
        return doa.watson_loglik(X, theta, self.array, self.config.kappa, self.stft.fft_size,
                                 self.stft.sample_rate, self._watson_bins(), self.counter)

    def _reweight_resample(self, loglik, rng):
        n = self.state.n
        self.state, reset = pf_reweight(self.state, loglik)
        self.n_resets += int(reset)
        n_eff = effective_sample_size(self.state.weights)
        resampled = False
        if n_eff < self.config.tau_eff * n:
            self.state = pf_resample(self.state, rng.random())
            resampled = True
        if self.counter is not None:
            self.counter.add("pf_weights", 3 * n)
            if resampled:
                self.counter.add("pf_resample", n)
        return n_eff, resampled

    def step(self, Y_t):
        c = self.config
        rng = frame_rng(self.seed, self.stream, self.t)
        n = self.state.n
        skipped = True
        if c.mode == "concat":
            self.state = pf_propagate(self.state, self.model, rng.standard_normal(n))
            ll = self._watson(Y_t, self.state.theta)
            skipped = False
            self.state, reset = pf_reweight(self.state, ll)
            self.n_resets += int(reset)
            n_eff = effective_sample_size(self.state.weights)
            theta = pf_estimate(self.state.theta, self.state.weights)
            resampled = n_eff < c.tau_eff * n
            if resampled:
                self.state = pf_resample(self.state, rng.random())
            if self.counter is not None:
                self.counter.add("pf_weights", 3 * n)
                self.counter.add("pf_propagate", 4 * n)
                self.counter.add("pf_estimate", n)
                if resampled:
                    self.counter.add("pf_resample", n)
        else:
            n_eff, resampled = effective_sample_size(self.state.weights), False
            if self._prev_S is not None and self._prev_Y is not None:
                if c.mode == "miso-ar":
                    self.R = doa.ema_noise_cov(self.R, self._prev_Y, self._prev_S, self._prev_theta,
                                               c.alpha_ema, self.array, self.stft.fft_size, self.stft.sample_rate,
                                               c.per_bin_cov)
                    ll = doa.gaussian_loglik(self._prev_Y, self._prev_S, self.state.theta, self.R, self.array,
                                             self.stft.fft_size, self.stft.sample_rate, loading=c.cov_loading,
                                             counter=self.counter)
                    if self.counter is not None:
                        k, m = self._prev_Y.shape
                        self.counter.add("ema_cov", k * m + k * m * m + 2 * m * m)
                else:
                    ll = self._watson(self._prev_S, self.state.theta)
                skipped = False
                n_eff, resampled = self._reweight_resample(ll, rng)
            prev_theta = self.state.theta
            self.state = pf_propagate(self.state, self.model, rng.standard_normal(n))
            est_theta = self.state.theta if c.ar_estimate == "propagated" else prev_theta
            theta = pf_estimate(est_theta, self.state.weights)
            if self.counter is not None:
                self.counter.add("pf_propagate", 4 * n)
                self.counter.add("pf_estimate", n)
        if not np.all(np.isfinite(self.state.theta)):
            raise TrackerError(f"non-finite particles at frame {self.t}")
        self._remember(Y_t, theta)
        return theta, n_eff, resampled, skipped


def make_tracker(config: TrackerConfig, array: MicArray, stft: StftConfig | None = None,
                 counter: OpCounter | None = None) -> Tracker:
    cls = KalmanTracker if config.kind == "kf" else ParticleTracker
    return cls(config, array, stft, counter)


def run_tracker(tracker: Tracker, Y: np.ndarray, theta0: float, enhancer=None, seed: int = 0,
                stream: int = 0) -> tuple[DoaTrack, np.ndarray | None]:
    """Frame-causal loop over a spectrogram ``Y`` (T, K, M).

    For each frame the tracker produces ``theta_hat_t``; the enhancer (if any)
    then consumes ``(Y_t, theta_hat_t)`` and its output feeds the tracker at
    ``t + 1`` in AR modes. Returns the track and the stacked enhancer output.
    """
    if tracker.ar and enhancer is None:
        raise TrackerError(f"{tracker.config.label} needs an enhancer")
    T = Y.shape[0]
    tracker.reset(theta0, seed, stream)
    if enhancer is not None:
        enhancer.reset()
    theta = np.empty(T)
    quality = np.empty(T)
    resampled = np.zeros(T, bool)
    skipped = np.zeros(T, bool)
    outputs = []
    for t in range(T):
        theta[t], quality[t], resampled[t], skipped[t] = tracker.step(Y[t])
        if enhancer is not None:
            try:
                S = enhancer.process(t, Y[t], theta[t])
            except Exception as exc:
                raise TrackerError(f"enhancer failed at frame {t}: {exc}") from exc
            outputs.append(S)
            tracker.feedback(S)
    enhanced = np.stack(outputs) if outputs else None
    return DoaTrack(theta, quality, resampled, skipped, tracker.config.label), enhanced


@dataclass
class LinearGaussianResult:
    kf_mean: np.ndarray
    pf_mean: np.ndarray
    truth: np.ndarray


def linear_gaussian_check(n_frames: int = 200, n_particles: int = 2000, sigma_nu_deg: float = 30.0,
                          sigma_meas_deg: float = 5.0, dT: float = 0.016, seed: int = 0) -> LinearGaussianResult:
    """Run the exact KF and the bootstrap PF on a linear-Gaussian problem (no wrapping).

    The PF uses the same propagation and velocity recursion as the tracker
    with a Gaussian pseudo-likelihood on a scalar observation.
    """
    rng = np.random.default_rng(seed)
    model = MotionModel(dT, math.radians(sigma_nu_deg))
    r = math.radians(sigma_meas_deg)
    x = np.array([0.3, 0.0])
    truth, obs = [], []
    for _ in range(n_frames):
        x = model.F @ x + model.G * model.sigma_nu * rng.standard_normal()
        truth.append(x[0])
        obs.append(x[0] + r * rng.standard_normal())
    kf = KfState(np.array([0.3, 0.0]), np.zeros((2, 2)))
    pf = PfState.initial(0.3, n_particles)
    kf_mean, pf_mean = [], []
    for t, z in enumerate(obs):
        kf = kf_predict(kf, model)
        k_gain = kf.cov[:, 0] / (kf.cov[0, 0] + r ** 2)
        A = np.eye(2) - np.outer(k_gain, [1.0, 0.0])
        kf = KfState(kf.mean + k_gain * (z - kf.mean[0]), A @ kf.cov @ A.T + np.outer(k_gain, k_gain) * r ** 2)
        kf_mean.append(kf.mean[0])
        g = frame_rng(seed, 1, t)
        pf = pf_propagate(pf, model, g.standard_normal(n_particles))
        pf, _ = pf_reweight(pf, -0.5 * (z - pf.theta) ** 2 / r ** 2)
        pf_mean.append(float(np.sum(pf.weights * pf.theta)))
        if effective_sample_size(pf.weights) < 0.5 * n_particles:
            pf = pf_resample(pf, g.random())
    return LinearGaussianResult(np.array(kf_mean), np.array(pf_mean), np.array(truth))
