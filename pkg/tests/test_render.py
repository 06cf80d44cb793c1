import io

import numpy as np
import pytest
from PIL import Image

from strokelocus.errors import GridMismatch, InputError, NoSlicesSelected
from strokelocus.nifti_io import Volume3D
from strokelocus.render import (
    DEFAULT_PALETTE,
    LESION_RGB,
    OverlaySpec,
    encode_png,
    montage_shape,
    render_overlay,
    select_slices,
    tile_origin,
)
from strokelocus.territory import AtlasVolume


def ramp(shape=(8, 10, 4)):
    return Volume3D(np.arange(np.prod(shape), dtype=float).reshape(shape, order="F"))


def test_grayscale_only_has_equal_channels():
    img = render_overlay(OverlaySpec(ramp(), slices=[0, 1, 2, 3], columns=2))
    assert img.shape == montage_shape(4, 2, (8, 10, 4)) + (3,) == (21, 17, 3)
    assert np.array_equal(img[..., 0], img[..., 1]) and np.array_equal(img[..., 1], img[..., 2])


def test_single_voxel_lands_in_its_tile():
    base = Volume3D(np.zeros((8, 10, 4)))
    lesion = np.zeros((8, 10, 4))
    x, y, z = 3, 5, 2
    lesion[x, y, z] = 1
    img = render_overlay(OverlaySpec(base, lesion=Volume3D(lesion), slices=[0, 2], columns=2))
    r0, c0 = tile_origin(1, 2, (8, 10, 4))
    assert (r0, c0) == (0, 9)
    red = np.all(img == LESION_RGB, axis=-1)
    assert list(zip(*np.nonzero(red))) == [(r0 + y, c0 + x)]


def test_tile_pixels_follow_the_voxel_grid():
    v = ramp()
    img = render_overlay(OverlaySpec(v, slices=[1], columns=1))
    # intensity increases with x along a row and with y down a column
    assert np.all(np.diff(img[:, :, 0].astype(int), axis=1) >= 0)
    assert np.all(np.diff(img[:, :, 0].astype(int), axis=0) >= 0)


def test_separators_and_empty_slots():
    img = render_overlay(OverlaySpec(ramp(), slices=[0, 1, 2], columns=2))
    assert np.all(img[:, 8] == 255)  # vertical separator
    assert np.all(img[10, :] == 255)  # horizontal separator
    assert np.all(img[11:, 9:] == 0)  # unused fourth slot


def test_zero_alpha_matches_no_atlas(micro_labels):
    base = Volume3D(np.random.default_rng(1).random((16, 16, 16)))
    atlas = AtlasVolume(Volume3D(micro_labels))
    plain = render_overlay(OverlaySpec(base, slices=[4, 8]))
    faded = render_overlay(OverlaySpec(base, atlas=atlas, slices=[4, 8], atlas_alpha=0.0))
    assert np.array_equal(plain, faded)
    tinted = render_overlay(OverlaySpec(base, atlas=atlas, slices=[4, 8]))
    assert not np.array_equal(plain, tinted)


def test_full_alpha_shows_palette(micro_labels):
    base = Volume3D(np.zeros((16, 16, 16)))
    atlas = AtlasVolume(Volume3D(micro_labels))
    img = render_overlay(OverlaySpec(base, atlas=atlas, slices=[8], atlas_alpha=1.0, columns=1))
    for x, y in [(4, 4), (12, 10)]:
        label = int(micro_labels[x, y, 8])
        expected = DEFAULT_PALETTE[label] if label else (0, 0, 0)
        assert tuple(img[y, x]) == tuple(expected)


def test_palette_stays_clear_of_lesion_red():
    for rgb in DEFAULT_PALETTE.values():
        assert np.linalg.norm(np.subtract(rgb, LESION_RGB)) >= 60


def test_png_is_deterministic_and_decodes(micro_labels):
    base = Volume3D(np.random.default_rng(2).random((16, 16, 16)))
    lesion = Volume3D((micro_labels == 4).astype(float))
    spec = OverlaySpec(base, atlas=AtlasVolume(Volume3D(micro_labels)), lesion=lesion)
    first, second = encode_png(render_overlay(spec)), encode_png(render_overlay(spec))
    assert first == second
    decoded = np.asarray(Image.open(io.BytesIO(first)))
    assert np.array_equal(decoded, render_overlay(spec))


def test_auto_selection_prefers_large_lesion_area():
    lesion = np.zeros((6, 6, 10))
    for z, area in {1: 3, 4: 9, 7: 1, 8: 9}.items():
        lesion[:, :, z].flat[:area] = 1
    spec = OverlaySpec(Volume3D(np.zeros((6, 6, 10))), lesion=Volume3D(lesion), n_auto=2)
    assert select_slices(spec) == [4, 8]
    spec.n_auto = 6
    assert select_slices(spec) == [1, 4, 7, 8]


def test_no_slices_selected():
    base = Volume3D(np.zeros((4, 4, 4)))
    with pytest.raises(NoSlicesSelected):
        render_overlay(OverlaySpec(base))
    with pytest.raises(NoSlicesSelected):
        render_overlay(OverlaySpec(base, lesion=Volume3D(np.zeros((4, 4, 4)))))
    with pytest.raises(NoSlicesSelected):
        render_overlay(OverlaySpec(base, slices=[]))


def test_invalid_specs():
    base = Volume3D(np.zeros((4, 4, 4)))
    with pytest.raises(InputError):
        render_overlay(OverlaySpec(base, slices=[4]))
    with pytest.raises(InputError):
        render_overlay(OverlaySpec(base, slices=[0], columns=0))
    with pytest.raises(InputError):
        render_overlay(OverlaySpec(base, slices=[0], atlas_alpha=1.5))
    with pytest.raises(GridMismatch):
        render_overlay(OverlaySpec(base, lesion=Volume3D(np.ones((4, 4, 5))), slices=[0]))
