import math

import numpy as np
import pytest

from doatrack.array import default_array, relative_delays
from doatrack.motion import stationary_trajectory
from doatrack.scene import (ScenarioConfig, SceneError, count_crossings, diffuse_noise, late_reverb, load_bundle,
                            load_corpus, measured_snr, mix, power, quartile_azimuths, sample_scene, save_bundle,
                            segment_bounds, spatialize, speech_like)
from doatrack.stft import write_wav

FS = 16000


def static_traj(az, dist=2.0, n=700, center=(0.0, 0.0)):
    c = np.asarray(center, float)
    p = c + dist * np.array([math.cos(az), math.sin(az)])
    return stationary_trajectory(p, c, 0.016 + 0.016 * np.arange(n))


def xcorr_lag(a, b, max_lag=20):
    lags = np.arange(-max_lag, max_lag + 1)
    vals = [np.dot(a[max_lag:-max_lag], np.roll(b, -lag)[max_lag:-max_lag]) for lag in lags]
    return lags[int(np.argmax(vals))]


def upsampled_delay(a, b, factor=16):
    # fractional lag of b relative to a via the cross-spectrum peak on a fine grid
    n = len(a)
    spec = np.fft.rfft(b, n) * np.conj(np.fft.rfft(a, n))
    cc = np.fft.irfft(spec, n * factor)
    cc = np.roll(cc, 20 * factor)[: 40 * factor]
    return (np.argmax(cc) - 20 * factor) / factor


@pytest.mark.parametrize("az_deg", [0, 37, 140, 255])
def test_delays_match_far_field(az_deg):
    rng = np.random.default_rng(0)
    arr = default_array()
    dry = rng.standard_normal(FS)
    out = spatialize(dry, static_traj(math.radians(az_deg)), arr)
    tau = relative_delays(arr, math.radians(az_deg)) * FS
    for m in range(1, 3):
        assert abs(xcorr_lag(out[:, 0], out[:, m]) - tau[m]) <= 1.0
        assert abs(upsampled_delay(out[:, 0], out[:, m]) - tau[m]) < 0.1


def test_equidistant_mics_identical():
    # 180 deg is the bisector of mics 1 (120 deg) and 2 (240 deg)
    rng = np.random.default_rng(1)
    dry = rng.standard_normal(FS)
    out = spatialize(dry, static_traj(math.pi), default_array())
    err = power(out[200:-200, 1] - out[200:-200, 2]) / power(out[200:-200, 1])
    assert err < 1e-6


def test_zero_and_gain():
    arr = default_array()
    np.testing.assert_array_equal(spatialize(np.zeros(4000), static_traj(0.3), arr), 0.0)
    x = np.ones(4000)
    near = spatialize(x, static_traj(0.0, dist=0.2), arr)[:, 0]
    far = spatialize(x, static_traj(0.0, dist=4.0), arr)[:, 0]
    np.testing.assert_allclose(near, 2.0)
    np.testing.assert_allclose(far, 0.25)
    with pytest.raises(SceneError):
        spatialize(np.zeros(FS * 20), static_traj(0.0), arr)
    with pytest.raises(SceneError):
        spatialize(np.zeros((10, 2)), static_traj(0.0), arr)


def test_noise_power_and_seeds():
    arr = default_array()
    a = diffuse_noise(5.0, arr, seed=1)
    b = diffuse_noise(5.0, arr, seed=2)
    np.testing.assert_allclose(np.mean(a ** 2, axis=0), 1.0, atol=0.05)
    rho = np.dot(a[:, 0], b[:, 0]) / np.sqrt(np.dot(a[:, 0], a[:, 0]) * np.dot(b[:, 0], b[:, 0]))
    assert abs(rho) < 0.05
    np.testing.assert_array_equal(a, diffuse_noise(5.0, arr, seed=1))
    with pytest.raises(SceneError):
        diffuse_noise(0.0, arr)


def test_noise_coherence_decays_with_frequency():
    from scipy.signal import coherence
    x = diffuse_noise(60.0, default_array(), seed=3)
    f, c = coherence(x[:, 0], x[:, 1], fs=FS, nperseg=512)
    low = c[np.argmin(np.abs(f - 250))]
    high = c[np.argmin(np.abs(f - 4000))]
    assert low > 0.9
    assert high < low


def test_mix_snr_and_additivity():
    rng = np.random.default_rng(4)
    arr = default_array()
    trajs = [static_traj(0.5), static_traj(2.5)]
    direct = [spatialize(speech_like(FS * 2, rng), tr, arr) for tr in trajs]
    noise = diffuse_noise(2.0, arr, seed=5)
    b = mix(direct, noise, 20.0, arr, trajs)
    assert measured_snr(b) == pytest.approx(20.0, abs=0.1)
    np.testing.assert_allclose(b.mixture, direct[0] + direct[1] + b.noise, atol=1e-12)
    # equal-power speakers at equal distance: input SIR about 0 dB
    sir = 10 * math.log10(power(direct[0][:, 0]) / power(direct[1][:, 0]))
    assert abs(sir) < 0.5
    with pytest.raises(SceneError):
        mix(direct, np.zeros_like(noise), 20.0, arr, trajs)
    with pytest.raises(SceneError):
        mix(direct, noise, math.inf, arr, trajs)
    with pytest.raises(SceneError):
        mix([np.zeros_like(direct[0])], noise, 20.0, arr, trajs)


def test_speech_like_is_sparse_and_normalized():
    x = speech_like(FS * 5, np.random.default_rng(6))
    assert power(x) == pytest.approx(1.0)
    frames = x[: len(x) // 512 * 512].reshape(-1, 512)
    e = np.mean(frames ** 2, axis=1)
    # pauses: a sizeable share of frames is far below the mean level
    assert np.mean(e < 0.01) > 0.1


def test_segments():
    assert segment_bounds(625) == [(0, 156), (156, 312), (312, 468), (468, 625)]
    az = np.stack([np.full(8, 0.1), np.linspace(0, 1, 8)])
    q = quartile_azimuths(az)
    assert q[0] == pytest.approx([0.1] * 4)
    assert count_crossings(np.zeros(5), np.array([-0.2, -0.1, 0.1, 0.2, -0.1])) == 2
    # wrapping through the antipode is not a crossing
    assert count_crossings(np.zeros(2), np.array([3.1, -3.1])) == 0


def test_sample_scene_determinism_and_meta():
    cfg = ScenarioConfig(duration=2.0)
    a = sample_scene(11, cfg)
    b = sample_scene(11, cfg)
    np.testing.assert_array_equal(a.mixture, b.mixture)
    assert a.meta["seed"] == 11 and a.meta["n_frames"] == 125
    assert 20 <= a.snr_db <= 30
    assert a.azimuths().shape == (2, 125)
    np.testing.assert_allclose(a.mixture, sum(a.direct_paths) + a.noise, atol=1e-12)


def test_stationary_azimuth_recovered_from_delays():
    b = sample_scene(3, ScenarioConfig(duration=2.0, n_speakers=1, stationary=True))
    arr = b.array
    truth = b.trajectories[0].azimuth[0]
    lags = [upsampled_delay(b.direct_paths[0][:, 0], b.direct_paths[0][:, m], 64) for m in range(3)]
    grid = np.radians(np.arange(0, 360, 0.1))
    model = relative_delays(arr, grid) * FS
    est = grid[np.argmin(np.sum((model - np.array(lags)) ** 2, axis=1))]
    err = abs((est - truth + np.pi) % (2 * np.pi) - np.pi)
    assert math.degrees(err) < 2.0


def test_bundle_roundtrip(tmp_path):
    b = sample_scene(5, ScenarioConfig(duration=1.0))
    d = save_bundle(b, tmp_path)
    assert d.name == "scene_00000005"
    back = load_bundle(d)
    assert back.snr_db == b.snr_db
    for x, y in zip(back.direct_paths, b.direct_paths):
        np.testing.assert_allclose(x, y, atol=1e-6)
    np.testing.assert_allclose(back.mixture, sum(back.direct_paths) + back.noise, atol=1e-12)
    np.testing.assert_allclose(back.azimuths(), b.azimuths(), atol=1e-12)
    with pytest.raises(SceneError):
        load_bundle(tmp_path / "missing")


def test_corpus_and_late_reverb(tmp_path):
    rng = np.random.default_rng(7)
    write_wav(tmp_path / "a.wav", 0.1 * rng.standard_normal(FS // 2))
    write_wav(tmp_path / "b.wav", 0.1 * rng.standard_normal(FS // 3))
    x = load_corpus(tmp_path, FS * 2, rng)
    assert x.shape == (FS * 2,)
    with pytest.raises(SceneError):
        load_corpus(tmp_path / "none", 10, rng)
    cfg = ScenarioConfig(duration=1.0, corpus_dir=str(tmp_path), late_reverb_db=-15.0)
    b = sample_scene(2, cfg)
    np.testing.assert_allclose(b.mixture, sum(b.direct_paths) + b.noise, atol=1e-12)
    d = b.direct_paths[0]
    rev = late_reverb(d, np.random.default_rng(0))
    assert 10 * math.log10(power(rev[:, 0]) / power(d[:, 0])) == pytest.approx(-15.0, abs=1e-6)
