import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doatrack.stft import Spectrogram, StftConfig, StftError, analyze, read_wav, sqrt_hann, synthesize, write_wav

CFG = StftConfig()


def interior(n, cfg=CFG):
    return slice(cfg.win_len, n - cfg.win_len)


def test_config_defaults():
    assert (CFG.sample_rate, CFG.win_len, CFG.hop, CFG.fft_size, CFG.n_bins) == (16000, 512, 256, 512, 257)
    np.testing.assert_allclose(CFG.window ** 2 + np.roll(CFG.window, 256) ** 2, 1.0, atol=1e-12)
    with pytest.raises(StftError):
        StftConfig(win_len=512, hop=128)


def test_zero_in_zero_out():
    spec = analyze(np.zeros((4000, 3)))
    assert spec.data.shape == (16, 257, 3)
    assert not np.any(spec.data)
    assert not np.any(synthesize(spec))


def test_frame_count_and_layout():
    x = np.random.default_rng(0).standard_normal((1000, 2))
    spec = analyze(x)
    assert spec.n_frames == 4  # ceil(1000 / 256)
    frame1 = x[256:768, 0] * CFG.window
    np.testing.assert_allclose(spec.data[1, :, 0], np.fft.rfft(frame1))


def test_sinusoid_at_bin_frequency():
    k = 40
    n = np.arange(16000)
    x = np.cos(2 * np.pi * k * n / 512)
    X = analyze(x).data[10, :, 0]
    e = np.abs(X) ** 2
    # closed form for the sqrt-Hann window: DFT coefficients at k and k +- 1
    w = sqrt_hann(512)
    W = np.fft.fft(w)
    # the positive and negative frequency images both contribute at bin k
    expected_center = np.abs(W[0] / 2 + W[2 * k] / 2) ** 2
    assert e[k] == pytest.approx(expected_center, rel=1e-9)
    main_lobe = e[k - 1:k + 2].sum() / e.sum()
    assert main_lobe > 0.99


def test_roundtrip_white_noise():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20000, 3))
    y = synthesize(analyze(x))
    sl = interior(len(x))
    assert np.max(np.abs(y[sl] - x[sl])) / np.max(np.abs(x)) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(600, 5000), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_roundtrip_property(n, m, seed):
    x = np.random.default_rng(seed).standard_normal((n, m))
    y = synthesize(analyze(x))
    assert y.shape == x.shape
    # every sample after the first hop is covered by two frames
    sl = slice(CFG.hop, n)
    assert np.max(np.abs(y[sl] - x[sl])) <= 1e-6 * np.max(np.abs(x))


def test_linearity():
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((3000, 2)), rng.standard_normal((3000, 2))
    a, b = 0.3, -2.1
    lhs = analyze(a * x + b * y).data
    rhs = a * analyze(x).data + b * analyze(y).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_frame_causality():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((8000, 1))
    t = 10
    x2 = x.copy()
    x2[t * CFG.hop + CFG.win_len:] += rng.standard_normal((len(x) - t * CFG.hop - CFG.win_len, 1))
    a, b = analyze(x).data, analyze(x2).data
    np.testing.assert_array_equal(a[: t + 1], b[: t + 1])
    assert not np.allclose(a[t + 1], b[t + 1])


def test_single_frame_impulse_response_length():
    spec = Spectrogram(np.zeros((5, 257, 1), complex), CFG, 5 * 256)
    spec.data[2, :, 0] = np.random.default_rng(5).standard_normal(257)
    y = synthesize(spec, n_samples=7 * 256)[:, 0]
    nz = np.flatnonzero(np.abs(y) > 1e-12)
    assert nz[-1] - nz[0] + 1 <= CFG.win_len
    assert nz[0] >= 2 * CFG.hop


def test_errors():
    with pytest.raises(StftError):
        analyze([np.zeros(1000), np.zeros(999)])
    with pytest.raises(StftError):
        analyze(np.zeros((100, 2)))


def test_complete_frames():
    mask = CFG.complete_frames(1000)
    np.testing.assert_array_equal(mask, [True, True, False, False])


def test_wav_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    x = 0.1 * rng.standard_normal((1600, 3))
    write_wav(tmp_path / "a.wav", x)
    y, sr = read_wav(tmp_path / "a.wav")
    assert sr == 16000
    np.testing.assert_allclose(y, x, atol=1e-7)
    write_wav(tmp_path / "b.wav", x, pcm16=True)
    z, _ = read_wav(tmp_path / "b.wav")
    np.testing.assert_allclose(z, x, atol=1 / 32768 + 1e-9)
