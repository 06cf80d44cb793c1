import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strokelocus.errors import DegenerateRange, GridMismatch
from strokelocus.fusion import FusionConfig, FusionMode, fuse, fuse_arrays, minmax_normalize
from strokelocus.nifti_io import Volume3D

MODES = list(FusionMode)
RAW = dict(normalize_inputs=False, clip_output=False)


def vol(a, affine=None):
    a = np.asarray(a, dtype=float).reshape((1, 1, -1)) if np.ndim(a) < 3 else np.asarray(a, float)
    return Volume3D(a) if affine is None else Volume3D(a, affine)


@pytest.mark.parametrize("mode, expected", [("mean", 0.5), ("sum", 1.0), ("max", 0.8)])
def test_two_voxel_values(mode, expected):
    out = fuse(vol([0.2]), vol([0.8]), FusionConfig(mode, **RAW))
    assert out.data.item() == expected


def test_descrip_records_mode():
    out = fuse(vol([0.2, 0.4]), vol([0.8, 0.1]), FusionConfig("max"))
    assert out.description == "fusion mode=max"


def test_normalized_inputs():
    a = vol([10.0, 20.0, 30.0])
    b = vol([0.0, 4.0, 2.0])
    out = fuse(a, b, FusionConfig("mean")).data.ravel()
    np.testing.assert_allclose(out, [0.0, 0.75, 0.75])


def test_sum_is_clipped_by_default():
    a = vol([0.0, 1.0, 0.5])
    out = fuse(a, a, FusionConfig("sum")).data.ravel()
    np.testing.assert_array_equal(out, [0.0, 1.0, 1.0])
    raw = fuse(a, a, FusionConfig("sum", normalize_inputs=True, clip_output=False)).data.ravel()
    np.testing.assert_array_equal(raw, [0.0, 2.0, 1.0])


def test_constant_input_cannot_be_normalized():
    with pytest.raises(DegenerateRange):
        fuse(vol([3.0, 3.0]), vol([0.0, 1.0]))
    with pytest.raises(DegenerateRange):
        minmax_normalize(np.zeros(4))
    # without normalisation a constant volume is fine
    fuse(vol([3.0, 3.0]), vol([0.0, 1.0]), FusionConfig("mean", **RAW))


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        fuse(vol(np.ones((2, 2, 2))), vol(np.ones((2, 2, 2)), np.diag([1, 1, 2.0, 1])))
    with pytest.raises(GridMismatch):
        fuse(vol(np.ones((2, 2, 2))), vol(np.ones((2, 2, 3))))


def test_string_and_enum_modes_agree():
    assert FusionConfig("SUM").mode is FusionMode.SUM
    with pytest.raises(ValueError):
        FusionConfig("median")


unit = st.floats(0.0, 1.0, allow_nan=False)
pairs = st.lists(st.tuples(unit, unit), min_size=1, max_size=40)


@settings(max_examples=100, deadline=None)
@given(pairs)
def test_commutative(ps):
    a, b = (np.array(x) for x in zip(*ps))
    for mode in MODES:
        np.testing.assert_array_equal(fuse_arrays(a, b, mode), fuse_arrays(b, a, mode))


@settings(max_examples=100, deadline=None)
@given(pairs)
def test_bounds(ps):
    a, b = (np.array(x) for x in zip(*ps))
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    mean = fuse_arrays(a, b, FusionMode.MEAN)
    assert np.all(lo <= mean) and np.all(mean <= hi)
    np.testing.assert_array_equal(fuse_arrays(a, b, FusionMode.MAX), hi)
    s = fuse_arrays(a, b, FusionMode.SUM)
    assert np.all(s >= hi) and np.all(s <= 2.0)
    assert np.all(fuse_arrays(a, b, FusionMode.MAX) >= mean)


@settings(max_examples=100, deadline=None)
@given(pairs, st.floats(0.0, 0.5))
def test_monotone_in_each_input(ps, bump):
    a, b = (np.array(x) for x in zip(*ps))
    for mode in MODES:
        cfg = FusionConfig(mode, normalize_inputs=False, clip_output=True)
        before = fuse(vol(a), vol(b), cfg).data
        after = fuse(vol(a + bump), vol(b), cfg).data
        assert np.all(after >= before)


@settings(max_examples=50, deadline=None)
@given(pairs)
def test_idempotence(ps):
    a = np.array([p[0] for p in ps])
    np.testing.assert_array_equal(fuse_arrays(a, a, FusionMode.MEAN), a)
    np.testing.assert_array_equal(fuse_arrays(a, a, FusionMode.MAX), a)
    np.testing.assert_array_equal(fuse_arrays(a, a, FusionMode.SUM), 2 * a)


def test_monotone_with_normalisation_inside_range():
    a = np.array([0.0, 0.3, 0.6, 1.0])
    b = np.array([1.0, 0.2, 0.5, 0.0])
    a2 = a.copy()
    a2[1] = 0.4  # range [0, 1] unchanged
    for mode in MODES:
        before = fuse(vol(a), vol(b), FusionConfig(mode)).data
        after = fuse(vol(a2), vol(b), FusionConfig(mode)).data
        assert np.all(after >= before)
