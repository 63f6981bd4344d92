import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symreg.evaluate import content_mask, dice, fold_report, smooth_velocity, synth_pair, translation_pair
from symreg.field import exp_svf, identity_field
from symreg.loss import jacobian_det_field
from symreg.volume import LabelMap

from conftest import grid


def test_dice_identical(rng):
    a = LabelMap(rng.integers(0, 4, size=(6, 6, 6)))
    r = dice(a, a)
    assert all(s == 1.0 for s in r.scores.values()) and r.mean == 1.0
    assert r.labels == [1, 2, 3]


def test_dice_disjoint():
    a = np.zeros((4, 4, 4), int)
    b = np.zeros((4, 4, 4), int)
    a[0] = 5
    b[3] = 5
    assert dice(a, b).scores == {5: 0.0}


def test_dice_shifted_cube():
    a = np.zeros((4, 4, 4), int)
    b = np.zeros((4, 4, 4), int)
    a[0:2, 0:2, 0:2] = 1
    b[1:3, 0:2, 0:2] = 1
    assert dice(a, b).scores[1] == 0.5


def test_dice_absent_labels_excluded():
    a = np.ones((2, 2, 2), int)
    r = dice(a, a, labels=[1, 7])
    assert r.absent == [7] and r.mean == 1.0 and r.labels == [1]


def test_dice_dims_mismatch():
    with pytest.raises(ValueError):
        dice(np.zeros((2, 2, 2), int), np.zeros((2, 2, 3), int))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dice_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 5, size=(2, 5, 5, 5))
    ab, ba = dice(a, b), dice(b, a)
    assert ab.scores == ba.scores
    assert all(0.0 <= s <= 1.0 for s in ab.scores.values())
    assert ab.mean == pytest.approx(np.mean(list(ab.scores.values())))


def test_fold_report_identity():
    r = fold_report(identity_field((5, 5, 5)))
    assert (r.total, r.count, r.min_det, r.fraction) == (125, 0, 1.0, 0.0)


def test_fold_report_uniform_scale():
    r = fold_report(grid((6, 6, 6)))
    assert r.count == 0 and r.min_det == pytest.approx(8.0)


def test_fold_report_constructed_fold():
    u = np.zeros((3, 6, 3, 3))
    u[0, 3] = -3.0
    # the determinant is negative only in column x = 2 (hand stencil -0.5), 3 x 3 voxels
    r = fold_report(u)
    assert r.count == 9 and r.min_det == pytest.approx(-0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fold_count_matches_naive_scan(seed):
    u = np.random.default_rng(seed).uniform(-1.5, 1.5, size=(3, 4, 5, 4))
    det = jacobian_det_field(u)
    naive = sum(1 for x in np.ndindex(det.shape) if det[x] <= 0)
    r = fold_report(u)
    assert r.count == naive and 0 <= r.count <= r.total


def test_synth_zero_amplitude():
    p = synth_pair(3, (16, 16, 16), amplitude=0.0)
    assert p.X.data.tobytes() == p.Y.data.tobytes()
    assert not p.v_true.any()
    assert np.array_equal(p.labels_x.data, p.labels_y.data)


def test_synth_deterministic():
    a, b = synth_pair(5, (12, 12, 12)), synth_pair(5, (12, 12, 12))
    assert np.array_equal(a.X.data, b.X.data) and np.array_equal(a.Y.data, b.Y.data)
    assert np.array_equal(a.v_true, b.v_true)
    assert not np.array_equal(a.X.data, synth_pair(6, (12, 12, 12)).X.data)


@pytest.mark.parametrize("seed", range(5))
def test_synth_is_diffeomorphic(seed):
    p = synth_pair(seed, (32, 32, 32), amplitude=3.0)
    assert np.sqrt((p.v_true**2).sum(0)).max() == pytest.approx(3.0)
    assert fold_report(exp_svf(p.v_true)).count == 0
    assert p.labels_x.labels.size > 2


def test_synth_rejects_bad_parameters():
    with pytest.raises(ValueError):
        synth_pair(amplitude=-1)
    with pytest.raises(ValueError):
        synth_pair(smoothness=0)


def test_smooth_velocity_scaling(rng):
    v = smooth_velocity(rng, (10, 10, 10), 2.0, 1.5)
    assert np.sqrt((v**2).sum(0)).max() == pytest.approx(1.5)


def test_translation_pair():
    p = translation_pair(0, (16, 16, 16), (2.0, 0.0, 0.0))
    np.testing.assert_array_equal(p.Y.data[:-2], p.X.data[2:])
    mask = content_mask(p.X)
    assert mask.any() and not mask[:3].any() and not mask[-3:].any()
