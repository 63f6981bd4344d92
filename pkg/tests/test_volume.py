import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from symreg.volume import (
    LabelMap,
    Volume,
    VolumeFormatError,
    load_field,
    load_volume,
    local_mean,
    sample_nearest,
    sample_trilinear,
    save_field,
    save_volume,
)

from conftest import scipy_sample

finite = st.floats(-100, 100, allow_nan=False, width=32)
small_vol = arrays(np.float64, st.tuples(*[st.integers(1, 5)] * 3), elements=finite)


@pytest.fixture
def vol(rng):
    return Volume(rng.standard_normal((5, 6, 4)))


# --- containers ------------------------------------------------------------


def test_volume_rejects_non_finite():
    data = np.zeros((2, 2, 2))
    data[1, 0, 1] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        Volume(data)


def test_volume_rejects_wrong_rank():
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 4)))


def test_labelmap_bounds():
    with pytest.raises(ValueError):
        LabelMap(np.full((2, 2, 2), -1))
    with pytest.raises(ValueError):
        LabelMap(np.full((2, 2, 2), 11), max_label=10)
    assert list(LabelMap(np.array([[[0, 3], [3, 7]]])).labels) == [0, 3, 7]


# --- trilinear ---------------------------------------------------------------


def test_trilinear_node(vol):
    assert sample_trilinear(vol, (2, 3, 1)) == vol.data[2, 3, 1]


def test_trilinear_midpoint(vol):
    d = vol.data
    assert sample_trilinear(vol, (0.5, 0, 0)) == pytest.approx((d[0, 0, 0] + d[1, 0, 0]) / 2, abs=1e-15)


def test_trilinear_clamps_outside(vol):
    assert sample_trilinear(vol, (-5.7, 0, 0)) == vol.data[0, 0, 0]
    assert sample_trilinear(vol, (99, 99, 99)) == vol.data[-1, -1, -1]


def test_trilinear_matches_scipy(rng, vol):
    pts = rng.uniform(-2, 7, size=(3, 200))
    ours = np.array([sample_trilinear(vol, pts[:, i]) for i in range(pts.shape[1])])
    np.testing.assert_allclose(ours, scipy_sample(vol.data, pts), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(small_vol, st.data())
def test_trilinear_exact_on_nodes(data, draw):
    i = tuple(draw.draw(st.integers(0, n - 1)) for n in data.shape)
    assert sample_trilinear(Volume(data), i) == data[i]


@settings(max_examples=50, deadline=None)
@given(small_vol, st.tuples(*[st.floats(-2, 7, allow_nan=False)] * 3))
def test_trilinear_within_neighbour_range(data, p):
    idx = []
    for c, n in zip(p, data.shape):
        c = min(max(c, 0), n - 1)
        lo = int(np.floor(c))
        idx.append(slice(lo, min(lo + 2, n)))
    nb = data[tuple(idx)]
    value = sample_trilinear(Volume(data), p)
    assert nb.min() - 1e-9 <= value <= nb.max() + 1e-9


# --- nearest ---------------------------------------------------------------------


def test_nearest_examples():
    lm = LabelMap(np.arange(27).reshape(3, 3, 3))
    assert sample_nearest(lm, (1.2, 0.9, 0.0)) == lm.data[1, 1, 0]
    assert sample_nearest(lm, (2, 1, 0)) == lm.data[2, 1, 0]
    assert sample_nearest(lm, (0.5, 0, 0)) == lm.data[1, 0, 0]
    assert sample_nearest(lm, (-3, 9, 0.49)) == lm.data[0, 2, 0]


# --- local mean --------------------------------------------------------------------


def test_local_mean_constant():
    v = Volume(np.full((4, 5, 3), 5.0))
    for w in (1, 3, 5, 7):
        np.testing.assert_allclose(local_mean(v, w).data, 5.0)


def test_local_mean_w1_is_identity(vol):
    np.testing.assert_allclose(local_mean(vol, 1).data, vol.data, rtol=0, atol=1e-13)


def test_local_mean_truncated_window():
    out = local_mean(Volume(np.array([1.0, 2.0, 4.0]).reshape(3, 1, 1)), 3).data.ravel()
    np.testing.assert_allclose(out, [1.5, 7 / 3, 3.0])


def test_local_mean_brute_force(rng):
    data = rng.standard_normal((6, 5, 7))
    w, r = 5, 2
    expect = np.empty_like(data)
    for i, j, k in np.ndindex(data.shape):
        expect[i, j, k] = data[max(i - r, 0):i + r + 1, max(j - r, 0):j + r + 1, max(k - r, 0):k + r + 1].mean()
    np.testing.assert_allclose(local_mean(data, w), expect, atol=1e-12)


@pytest.mark.parametrize("w", [0, 2, -3, 4])
def test_local_mean_rejects_bad_window(vol, w):
    with pytest.raises(ValueError):
        local_mean(vol, w)


@settings(max_examples=40, deadline=None)
@given(small_vol, small_vol, st.floats(-3, 3), st.floats(-3, 3), st.sampled_from([1, 3, 5]))
def test_local_mean_linear(I, J, a, b, w):
    if I.shape != J.shape:
        J = np.resize(J, I.shape)
    lhs = local_mean(a * I + b * J, w)
    rhs = a * local_mean(I, w) + b * local_mean(J, w)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(I).max() + np.abs(J).max()))


# --- file IO ---------------------------------------------------------------------------


def test_roundtrip_bit_exact(tmp_path, rng):
    data = rng.standard_normal((8, 8, 8)).astype(np.float32)
    save_volume(Volume(data, (1.0, 1.5, 2.0)), tmp_path / "v.json")
    back = load_volume(tmp_path / "v.json")
    assert isinstance(back, Volume)
    assert back.data.tobytes() == data.tobytes()
    assert back.spacing == (1.0, 1.5, 2.0)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.tuples(*[st.integers(1, 4)] * 3), elements=finite))
def test_roundtrip_property(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("rt") / "v.json"
    save_volume(Volume(data), path)
    assert np.array_equal(load_volume(path).data, data)


def test_labels_roundtrip(tmp_path, rng):
    lm = LabelMap(rng.integers(0, 500, size=(3, 4, 5)))
    save_volume(lm, tmp_path / "l.json")
    back = load_volume(tmp_path / "l.json")
    assert isinstance(back, LabelMap)
    assert np.array_equal(back.data, lm.data)


def test_payload_is_x_fastest(tmp_path):
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    save_volume(Volume(data), tmp_path / "v")
    raw = np.frombuffer((tmp_path / "v.raw").read_bytes(), dtype="<f4")
    assert raw[1] == data[1, 0, 0]
    assert raw[2] == data[0, 1, 0]
    header = json.loads((tmp_path / "v.json").read_text())
    assert header == {
        "dims": [2, 3, 4],
        "spacing": [1.0, 1.0, 1.0],
        "dtype": "f32",
        "order": "x-fastest",
        "endianness": "little",
    }


def test_field_roundtrip_planar(tmp_path, rng):
    u = rng.standard_normal((3, 4, 3, 2)).astype(np.float32)
    save_field(u, tmp_path / "u.json", (2.0, 2.0, 2.0))
    header = json.loads((tmp_path / "u.json").read_text())
    assert header["channels"] == 3 and header["layout"] == "planar"
    raw = np.frombuffer((tmp_path / "u.raw").read_bytes(), dtype="<f4")
    assert np.array_equal(raw[:24], u[0].ravel(order="F"))
    back, spacing = load_field(tmp_path / "u.json")
    assert np.array_equal(back, u) and spacing == (2.0, 2.0, 2.0)


def _write_raw(tmp_path, header, values, dtype="<f4"):
    (tmp_path / "bad.json").write_text(json.dumps(header))
    (tmp_path / "bad.raw").write_bytes(np.asarray(values, dtype=dtype).tobytes())
    return tmp_path / "bad.json"


def test_length_mismatch(tmp_path):
    path = _write_raw(tmp_path, {"dims": [2, 2, 2], "spacing": [1, 1, 1], "dtype": "f32"}, np.zeros(7))
    with pytest.raises(VolumeFormatError, match="payload"):
        load_volume(path)


def test_nan_payload(tmp_path):
    values = np.zeros(8)
    values[3] = np.nan
    path = _write_raw(tmp_path, {"dims": [2, 2, 2], "spacing": [1, 1, 1], "dtype": "f32"}, values)
    with pytest.raises(VolumeFormatError, match="non-finite"):
        load_volume(path)


@pytest.mark.parametrize(
    "header",
    [
        "not json",
        {"spacing": [1, 1, 1], "dtype": "f32"},
        {"dims": [2, 2], "spacing": [1, 1, 1], "dtype": "f32"},
        {"dims": [2, 2, 2], "spacing": [1, 1, 1], "dtype": "f64"},
        {"dims": [2, 2, 2], "spacing": [1, 1, 1], "dtype": "f32", "endianness": "big"},
    ],
)
def test_malformed_header(tmp_path, header):
    (tmp_path / "bad.json").write_text(header if isinstance(header, str) else json.dumps(header))
    (tmp_path / "bad.raw").write_bytes(np.zeros(8, dtype="<f4").tobytes())
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "bad.json")


def test_missing_payload(tmp_path):
    (tmp_path / "v.json").write_text(json.dumps({"dims": [1, 1, 1], "spacing": [1, 1, 1], "dtype": "f32"}))
    with pytest.raises(VolumeFormatError, match="missing"):
        load_volume(tmp_path / "v.json")
