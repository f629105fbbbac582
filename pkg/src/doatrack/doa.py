"""Per-frame spatial observation models.

* narrow-band least-squares DoA from wrapped inter-channel phase differences
* broadband circular aggregation (uniform or speech weighted)
* complex Watson and complex Gaussian log-likelihoods over azimuth hypotheses
* exponential-moving-average spatial noise covariance

Azimuth hypotheses are vectorized: every likelihood accepts an array of
azimuths and returns one value per azimuth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array import MicArray, relative_delays

TWO_PI = 2 * np.pi
LOW_CONFIDENCE = 0.1
VALID_REL_ENERGY = 1e-12


def wrap(x):
    """Wrap to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(x, float), TWO_PI)


def omega(bins, fft_size: int, sample_rate: float) -> np.ndarray:
    return TWO_PI * np.asarray(bins, float) * sample_rate / fft_size


class _PairGeometry:
    """Cached pair delays of an array for fast IPD models."""

    def __init__(self, array: MicArray):
        self.array = array
        self.pairs = np.array(array.pairs)
        rel = array.relative_positions()
        self.baselines = rel[self.pairs[:, 0]] - rel[self.pairs[:, 1]]  # (P, 2)
        self.pinv = np.linalg.pinv(self.baselines)  # (2, P)

    def pair_delays(self, azimuth) -> np.ndarray:
        """``tau_m - tau_m'`` per pair, shape ``azimuth.shape + (P,)``."""
        tau = relative_delays(self.array, azimuth)
        return tau[..., self.pairs[:, 0]] - tau[..., self.pairs[:, 1]]


_GEOM_CACHE: dict[int, _PairGeometry] = {}


def pair_geometry(array: MicArray) -> _PairGeometry:
    g = _GEOM_CACHE.get(id(array))
    if g is None or g.array is not array:
        g = _PairGeometry(array)
        _GEOM_CACHE[id(array)] = g
    return g


@dataclass
class NarrowbandDoa:
    phi: np.ndarray  # (T, K) radians in [0, 2 pi)
    valid_mask: np.ndarray  # (T, K) bool


def observed_ipd(Y: np.ndarray, array: MicArray) -> np.ndarray:
    """Wrapped phase of ``Y_m conj(Y_m')`` per pair; ``Y`` has channels last."""
    pairs = pair_geometry(array).pairs
    return np.angle(Y[..., pairs[:, 0]] * np.conj(Y[..., pairs[:, 1]]))


def ls_cost(ipd: np.ndarray, azimuths: np.ndarray, w: np.ndarray, array: MicArray) -> np.ndarray:
    """Wrapped linear-phase LS cost for every (bin, azimuth).

    ``ipd`` is (K, P), ``w`` the angular frequencies (K,), ``azimuths`` (A,) or
    (K, A). Returns (K, A).
    """
    geo = pair_geometry(array)
    # observed phase of Y_m conj(Y_m') for a source at theta is -w (tau_m - tau_m')
    dtau = geo.pair_delays(azimuths)  # (..., A, P)
    if dtau.ndim == 2:
        model = -w[:, None, None] * dtau[None, :, :]
    else:
        model = -w[:, None, None] * dtau
    return np.sum(wrap(ipd[:, None, :] - model) ** 2, axis=-1)


def closed_form_doa(ipd: np.ndarray, w: np.ndarray, array: MicArray) -> np.ndarray:
    """Unwrapped linear-phase LS solution, valid below the aliasing limit."""
    geo = pair_geometry(array)
    # ipd_p = -w (tau_m - tau_m') = (w / c) u . (p_m - p_m')  =>  u ~ pinv(D) ipd
    u = ipd @ geo.pinv.T  # (K, 2)
    return np.mod(np.arctan2(u[..., 1], u[..., 0]), TWO_PI)


def narrowband_doa(Y_tk, array: MicArray, bin: int, fft_size: int = 512, sample_rate: float = 16000,
                   resolution_deg: float = 1.0, window_deg: float | None = None) -> float:
    """LS narrow-band DoA of one bin (radians), ``nan`` if the bin is unusable.

    With ``window_deg`` the grid search is restricted to ``+-window_deg`` around
    the closed-form unwrapped solution.
    """
    Y_tk = np.asarray(Y_tk, complex)
    if bin <= 0 or not np.any(np.abs(Y_tk) > 0):
        return float("nan")
    phi = narrowband_doa_frame(Y_tk[None, :], array, np.array([bin]), fft_size, sample_rate,
                               resolution_deg, window_deg)
    return float(phi[0])


def narrowband_doa_frame(Y_t: np.ndarray, array: MicArray, bins: np.ndarray, fft_size: int = 512,
                         sample_rate: float = 16000, resolution_deg: float = 1.0,
                         window_deg: float | None = None, counter=None) -> np.ndarray:
    """Narrow-band LS DoA of the bins ``bins`` of one frame ``Y_t`` (len(bins), M).

    Returns radians in ``[0, 2 pi)``; unusable bins are ``nan``.
    """
    Y_t = np.asarray(Y_t)
    bins = np.asarray(bins)
    w = omega(bins, fft_size, sample_rate)
    ipd = observed_ipd(Y_t, array)  # (K, P)
    n_pairs = ipd.shape[1]
    energy = np.sum(np.abs(Y_t) ** 2, axis=-1)
    valid = (bins > 0) & (energy > VALID_REL_ENERGY * max(np.sum(energy), 1e-300)) \
        & np.all(np.abs(Y_t) > 0, axis=-1)
    step = np.deg2rad(resolution_deg)
    if window_deg is None:
        grid = np.arange(0, TWO_PI, step)
        cost = ls_cost(ipd, grid, w, array)
        phi = grid[np.argmin(cost, axis=1)]
        if counter is not None:
            counter.add("ipd", len(bins) * n_pairs)
            counter.add("ls_grid", len(bins) * len(grid) * n_pairs)
    else:
        seed = closed_form_doa(ipd, w, array)
        half = int(round(window_deg / resolution_deg))
        offs = np.arange(-half, half + 1) * step
        grid = seed[:, None] + offs[None, :]  # (K, A)
        cost = ls_cost(ipd, grid, w, array)
        phi = grid[np.arange(len(bins)), np.argmin(cost, axis=1)]
        if counter is not None:
            counter.add("ipd", len(bins) * n_pairs)
            counter.add("ls_seed", len(bins) * 2 * n_pairs)
            counter.add("ls_grid", len(bins) * len(offs) * n_pairs)
    phi = np.mod(phi, TWO_PI)
    return np.where(valid, phi, np.nan)


def narrowband_doa_all(Y: np.ndarray, array: MicArray, k_max: int, fft_size: int = 512,
                       sample_rate: float = 16000, resolution_deg: float = 1.0,
                       window_deg: float | None = None) -> NarrowbandDoa:
    """Narrow-band DoAs for a whole spectrogram (T, K, M), bins 1..k_max valid."""
    T, K, _ = Y.shape
    phi = np.full((T, K), np.nan)
    bins = np.arange(1, k_max + 1)
    for t in range(T):
        phi[t, bins] = narrowband_doa_frame(Y[t, bins], array, bins, fft_size, sample_rate,
                                            resolution_deg, window_deg)
    valid = np.isfinite(phi)
    return NarrowbandDoa(np.where(valid, phi, 0.0), valid)


@dataclass
class Aggregate:
    phi: float  # radians in [0, 2 pi), nan when no valid bin
    resultant: float  # normalized resultant length in [0, 1]
    valid: bool

    @property
    def low_confidence(self) -> bool:
        return (not self.valid) or self.resultant < LOW_CONFIDENCE


def aggregate_weighted(phi: np.ndarray, weights, k_max: int | None = None, valid=None) -> Aggregate:
    """``arg(sum_k g_k exp(j phi_k))`` over valid bins ``k <= k_max``.

    ``phi`` holds one frame of narrow-band estimates indexed by bin; entries
    that are ``nan`` or masked out by ``valid`` are ignored.
    """
    phi = np.asarray(phi, float)
    g = np.broadcast_to(np.asarray(weights, float), phi.shape).copy()
    ok = np.isfinite(phi)
    if valid is not None:
        ok &= np.asarray(valid, bool)
    if k_max is not None:
        ok &= np.arange(len(phi)) <= k_max
    g = np.where(ok, g, 0.0)
    total = g.sum()
    if not total > 0:
        return Aggregate(float("nan"), 0.0, False)
    z = np.sum(g * np.exp(1j * np.where(ok, phi, 0.0)))
    return Aggregate(float(np.mod(np.angle(z), TWO_PI)), float(abs(z) / total), True)


def aggregate_uniform(phi: np.ndarray, k_max: int | None = None, valid=None) -> Aggregate:
    return aggregate_weighted(phi, 1.0, k_max, valid)


def _steering(array: MicArray, azimuths, w: np.ndarray) -> np.ndarray:
    """Steering vectors ``(A, K, M)`` for azimuths (A,) at angular frequencies w (K,)."""
    tau = relative_delays(array, np.atleast_1d(azimuths))  # (A, M)
    return np.exp(-1j * w[None, :, None] * tau[:, None, :])


def watson_loglik(Y_t: np.ndarray, azimuths, array: MicArray, kappa: float = 5.0,
                  fft_size: int = 512, sample_rate: float = 16000, bins=None, counter=None) -> np.ndarray:
    """Unnormalized complex Watson log-likelihood ``kappa sum_k |<d_k / sqrt(M), Y_k / |Y_k|>|^2``.

    ``Y_t`` is one frame (K, M); returns one value per azimuth. Silent bins
    are skipped; a silent frame gives zeros.
    """
    Y_t = np.asarray(Y_t)
    if bins is None:
        bins = np.arange(Y_t.shape[0])
    Yb = Y_t[bins]
    az = np.atleast_1d(np.asarray(azimuths, float))
    m = Yb.shape[-1]
    norm = np.linalg.norm(Yb, axis=-1)
    keep = norm > 0
    if not np.any(keep):
        return np.zeros(az.shape)
    Yn = Yb[keep] / norm[keep, None]
    w = omega(np.asarray(bins)[keep], fft_size, sample_rate)
    ref = array.reference_index
    others = [i for i in range(m) if i != ref]
    # d_ref = 1, so only the other channels need a complex product
    tau = relative_delays(array, az)[:, others]  # (A, M-1)
    conj_d = np.exp(1j * w[None, :, None] * tau[:, None, :])  # (A, K, M-1)
    inner = Yn[None, :, ref] + np.einsum("akm,km->ak", conj_d, Yn[:, others])
    if counter is not None:
        n_a, n_k = conj_d.shape[:2]
        counter.add("normalize", Yb.shape[0] * m)
        counter.add("watson", n_a * n_k * (m - 1) + n_a * n_k)
    return kappa * np.sum(np.abs(inner) ** 2, axis=1) / m


def loaded(R: np.ndarray, loading: float = 1e-6) -> np.ndarray:
    m = R.shape[-1]
    return R + loading * np.real(np.trace(R)) / m * np.eye(m)


def gaussian_loglik(Y_t: np.ndarray, S_t: np.ndarray, azimuths, R: np.ndarray, array: MicArray,
                    fft_size: int = 512, sample_rate: float = 16000, bins=None, loading: float = 1e-6,
                    counter=None) -> np.ndarray:
    """``-sum_k (Y_k - d_k S_k)^H R^-1 (Y_k - d_k S_k)`` for every azimuth.

    ``R`` is a broadband (M, M) covariance or per bin (K, M, M). Loaded with
    ``loading * trace / M`` before inversion.
    """
    Y_t = np.asarray(Y_t)
    S_t = np.asarray(S_t)
    if bins is None:
        bins = np.arange(Y_t.shape[0])
    Yb, Sb = Y_t[bins], S_t[bins]
    az = np.atleast_1d(np.asarray(azimuths, float))
    m = Yb.shape[-1]
    R = np.asarray(R)
    Rinv = np.linalg.inv(loaded(R, loading))
    if not np.all(np.isfinite(Rinv)):
        raise np.linalg.LinAlgError("noise covariance is singular after loading")
    if Rinv.ndim == 2:
        Rinv = np.broadcast_to(Rinv, (len(bins), m, m))
    w = omega(bins, fft_size, sample_rate)
    z = np.einsum("kab,kb->ka", Rinv, Yb)
    const = np.real(np.sum(np.conj(Yb) * z))
    a = np.conj(Sb)[:, None] * z  # (K, M)
    pow_s = np.abs(Sb) ** 2
    tau = relative_delays(array, az)  # (A, M)
    ref = array.reference_index
    others = [i for i in range(m) if i != ref]
    conj_d = np.exp(1j * w[None, :, None] * tau[:, None, others])  # (A, K, M-1)
    cross = np.real(np.sum(a[:, ref])) + np.real(np.einsum("akm,km->a", conj_d, a[:, others]))
    # d^H Rinv d = sum_m Rinv_mm + 2 Re sum_{m<m'} Rinv_mm' conj(d_m) d_m'
    pairs = np.array(array.pairs)
    diag = np.real(np.einsum("kmm->k", Rinv))
    b = 2 * pow_s[:, None] * Rinv[:, pairs[:, 0], pairs[:, 1]]  # (K, P)
    dtau = tau[:, pairs[:, 0]] - tau[:, pairs[:, 1]]  # (A, P)
    phasor = np.exp(1j * w[None, :, None] * dtau[:, None, :])  # (A, K, P)
    quad = np.sum(pow_s * diag) + np.real(np.einsum("akp,kp->a", phasor, b))
    if counter is not None:
        n_a, n_k = len(az), len(bins)
        counter.add("gauss_frame", n_k * (m * m + 2 * m + len(pairs)))
        counter.add("gaussian", n_a * n_k * ((m - 1) + len(pairs)))
    return -(const - 2 * cross + quad)


def gaussian_loglik_direct(Y_t, S_t, azimuths, R, array: MicArray, fft_size: int = 512,
                           sample_rate: float = 16000, loading: float = 1e-6) -> np.ndarray:
    """Reference implementation of :func:`gaussian_loglik` (slow, for tests)."""
    Y_t, S_t = np.asarray(Y_t), np.asarray(S_t)
    w = omega(np.arange(Y_t.shape[0]), fft_size, sample_rate)
    Rinv = np.linalg.inv(loaded(np.asarray(R), loading))
    out = []
    for theta in np.atleast_1d(azimuths):
        d = _steering(array, theta, w)[0]
        res = Y_t - d * S_t[:, None]
        Rk = Rinv if Rinv.ndim == 3 else np.broadcast_to(Rinv, (len(w),) + Rinv.shape)
        out.append(-np.real(np.einsum("ka,kab,kb->", np.conj(res), Rk, res)))
    return np.array(out)


def psd_clamp(R: np.ndarray) -> np.ndarray:
    """Hermitian part with negative eigenvalues clamped to zero."""
    H = 0.5 * (R + np.conj(np.swapaxes(R, -1, -2)))
    vals, vecs = np.linalg.eigh(H)
    if np.all(vals >= 0):
        return H
    vals = np.maximum(vals, 0.0)
    return (vecs * vals[..., None, :]) @ np.conj(np.swapaxes(vecs, -1, -2))


def residual(Y_t: np.ndarray, S_t: np.ndarray, theta: float, array: MicArray, fft_size: int = 512,
             sample_rate: float = 16000) -> np.ndarray:
    w = omega(np.arange(Y_t.shape[0]), fft_size, sample_rate)
    return Y_t - _steering(array, theta, w)[0] * np.asarray(S_t)[:, None]


def ema_noise_cov(prev: np.ndarray | None, Y_t: np.ndarray, S_t: np.ndarray, theta_hat: float,
                  alpha: float, array: MicArray, fft_size: int = 512, sample_rate: float = 16000,
                  per_bin: bool = False) -> np.ndarray:
    """``(1 - alpha) V V^H + alpha R_prev`` with ``V = Y - d(theta_hat) S``.

    Broadband by default: ``V V^H`` is averaged over bins. ``prev=None``
    starts from the instantaneous estimate.
    """
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    V = residual(Y_t, S_t, theta_hat, array, fft_size, sample_rate)
    outer = V[:, :, None] * np.conj(V[:, None, :])
    inst = outer if per_bin else outer.mean(axis=0)
    R = inst if prev is None else (1 - alpha) * inst + alpha * prev
    return psd_clamp(R)
