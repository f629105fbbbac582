import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doatrack.array import (ArrayError, MicArray, aliasing_bin_limit, circular_array, default_array, dump_array,
                            load_array, relative_delays, steering_matrix, steering_vector)


def test_default_geometry():
    arr = default_array()
    assert arr.n_mics == 3
    np.testing.assert_allclose(np.linalg.norm(arr.positions, axis=1), 0.05)
    np.testing.assert_allclose(arr.positions[0], [0.05, 0.0], atol=1e-15)
    # equilateral triangle inscribed in a 10 cm circle: side = 0.1 * sin(60 deg)
    assert arr.max_spacing == pytest.approx(0.10 * math.sin(math.radians(60)))


def test_invalid_arrays():
    with pytest.raises(ArrayError):
        MicArray(np.zeros((1, 2)))
    with pytest.raises(ArrayError):
        MicArray(np.zeros((3, 2)), reference_index=3)
    with pytest.raises(ArrayError):
        MicArray(np.array([[0, 0, 0], [1, 0, 0.1]]))
    # coplanar 3-D input is accepted and flattened
    arr = MicArray(np.array([[0, 0, 1.0], [0.1, 0, 1.0]]))
    assert arr.positions.shape == (2, 2)


def test_zero_bin_is_all_ones():
    for az in np.linspace(0, 2 * np.pi, 7):
        d = steering_vector(default_array(), az, 0, 512, 16000)
        np.testing.assert_array_equal(d.values, np.ones(3))


def test_reference_entry_is_one_and_unit_modulus():
    arr = circular_array(4, 0.2, reference_index=2)
    D = steering_matrix(arr, np.linspace(0, 6, 13), 512, 16000)
    np.testing.assert_array_equal(D[..., 2], 1.0 + 0j)
    np.testing.assert_allclose(np.abs(D), 1.0, atol=1e-15)


def test_bin_out_of_range():
    with pytest.raises(ArrayError):
        steering_vector(default_array(), 0.0, 257, 512, 16000)
    with pytest.raises(ArrayError):
        steering_vector(default_array(), 0.0, -1, 512, 16000)


def test_delay_matches_plane_wave_geometry():
    # source on +x: mic 0 (at +x) is closer, so it hears the wave 5 cm / c earlier
    arr = default_array()
    tau = relative_delays(arr, 0.0)
    assert tau[0] == 0.0
    expected = (0.05 - 0.05 * math.cos(2 * math.pi / 3)) / 343.0
    np.testing.assert_allclose(tau[1:], expected)


def test_steering_phase_is_delay():
    arr = default_array()
    az, k = 1.1, 40
    d = steering_vector(arr, az, k, 512, 16000).values
    w = 2 * np.pi * k * 16000 / 512
    np.testing.assert_allclose(d, np.exp(-1j * w * relative_delays(arr, az)))


def test_aliasing_limit_default():
    arr = default_array()
    f_alias = 343.0 / (2 * arr.max_spacing)
    assert f_alias == pytest.approx(1980.4, abs=0.5)
    assert aliasing_bin_limit(arr, 16000, 512) == int(f_alias // 31.25) == 63


def test_aliasing_limit_clamps_and_scales():
    tiny = circular_array(3, 1e-6)
    assert aliasing_bin_limit(tiny, 16000, 512) == 256
    arr = default_array()
    assert aliasing_bin_limit(arr, 16000, 1024) == 2 * aliasing_bin_limit(arr, 16000, 512)


def test_continuity():
    arr = default_array()
    D = steering_matrix(arr, np.array([0.7, 0.7 + 1e-6]), 512, 16000)
    assert np.max(np.linalg.norm(D[1] - D[0], axis=-1)) < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2 * np.pi), st.integers(0, 256))
def test_rotation_equivariance(az, k):
    arr = default_array()
    d = steering_vector(arr, az, k, 512, 16000).values
    # rotating array and source together leaves the steering vector unchanged
    for angle in (0.3, 2.0, -1.1):
        rot = steering_vector(arr.rotated(angle), az + angle, k, 512, 16000).values
        np.testing.assert_allclose(rot, d, atol=1e-12)
    # a 120 deg source rotation on the symmetric array is a cyclic relabelling
    d_rot = steering_vector(arr, az + 2 * np.pi / 3, k, 512, 16000).values
    np.testing.assert_allclose(d_rot, np.roll(d, 1) / d[2], atol=1e-12)


def test_conjugate_product_is_one():
    D = steering_matrix(default_array(), np.linspace(0, 6, 20), 512, 16000)
    np.testing.assert_allclose(D * np.conj(D), 1.0, atol=1e-14)


def test_load_and_dump_roundtrip(tmp_path):
    arr = circular_array(4, 0.08, reference_index=1)
    import yaml
    p = tmp_path / "arr.yaml"
    p.write_text(yaml.safe_dump(dump_array(arr)))
    back = load_array(p)
    np.testing.assert_allclose(back.positions, arr.positions)
    assert back.reference_index == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"reference_index": 0}')
    with pytest.raises(ArrayError):
        load_array(bad)
