"""Multi-slice axial montages: grayscale base, translucent atlas, red lesion."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .errors import GridMismatch, InputError, NoSlicesSelected
from .nifti_io import Volume3D
from .territory import AtlasVolume, TerritoryLabel
from .volume_core import MASK_THRESHOLD, same_grid

LESION_RGB = (255, 0, 0)
SEPARATOR_RGB = (255, 255, 255)
DEFAULT_AUTO_SLICES = 6

DEFAULT_PALETTE: Dict[TerritoryLabel, Tuple[int, int, int]] = {
    TerritoryLabel.MCAR: (0, 114, 178),
    TerritoryLabel.MCAL: (86, 180, 233),
    TerritoryLabel.ACAR: (0, 158, 115),
    TerritoryLabel.ACAL: (240, 228, 66),
    TerritoryLabel.PCAR: (204, 121, 167),
    TerritoryLabel.PCAL: (230, 159, 0),
    TerritoryLabel.VBR: (148, 103, 189),
    TerritoryLabel.VBL: (140, 86, 75),
    TerritoryLabel.LVR: (127, 127, 127),
    TerritoryLabel.LVL: (23, 190, 207),
}


@dataclass
class OverlaySpec:
    base: Volume3D
    atlas: Optional[AtlasVolume] = None
    lesion: Optional[Volume3D] = None
    slices: Union[str, Sequence[int]] = "auto"
    columns: int = 3
    atlas_alpha: float = 0.35
    n_auto: int = DEFAULT_AUTO_SLICES
    palette: Optional[Dict[TerritoryLabel, Tuple[int, int, int]]] = None

    def validate(self) -> None:
        for name, vol in (("atlas", self.atlas.labels if self.atlas else None), ("lesion", self.lesion)):
            if vol is not None and not same_grid(vol, self.base):
                raise GridMismatch(f"{name} grid differs from the base volume")
        if self.columns < 1:
            raise InputError("columns must be >= 1")
        if not 0.0 <= self.atlas_alpha <= 1.0:
            raise InputError("atlas_alpha must lie in [0, 1]")
        if not isinstance(self.slices, str):
            nz = self.base.extents[2]
            bad = [z for z in self.slices if not 0 <= int(z) < nz]
            if bad:
                raise InputError(f"slice indices out of range 0..{nz - 1}: {bad}")


def select_slices(spec: OverlaySpec) -> List[int]:
    """Explicit slices as given, or the ``n_auto`` largest-lesion-area slices sorted by z."""
    if not isinstance(spec.slices, str):
        chosen = [int(z) for z in spec.slices]
    else:
        if spec.slices != "auto":
            raise InputError(f"unknown slice selection {spec.slices!r}")
        chosen = []
        if spec.lesion is not None:
            area = np.count_nonzero(spec.lesion.data >= MASK_THRESHOLD, axis=(0, 1))
            # stable sort: larger area first, lower z on ties
            order = np.argsort(-area, kind="stable")
            chosen = sorted(int(z) for z in order[: spec.n_auto] if area[z] > 0)
    if not chosen:
        raise NoSlicesSelected("no slices selected (empty lesion with automatic selection?)")
    return chosen


def window_base(data: np.ndarray) -> np.ndarray:
    """Map to 0..255 using the 1st-99th percentile range of the whole volume."""
    lo, hi = np.percentile(data, [1.0, 99.0])
    if hi <= lo:
        return np.zeros(data.shape)
    return np.clip((data - lo) / (hi - lo), 0.0, 1.0) * 255.0


def montage_shape(n_tiles: int, columns: int, extents) -> Tuple[int, int]:
    """(height, width) of a montage with 1-pixel separators between tiles."""
    nx, ny = extents[0], extents[1]
    rows = math.ceil(n_tiles / columns)
    return rows * (ny + 1) - 1, columns * (nx + 1) - 1


def tile_origin(i: int, columns: int, extents) -> Tuple[int, int]:
    """(row, col) pixel of the top-left corner of tile ``i``."""
    nx, ny = extents[0], extents[1]
    return (i // columns) * (ny + 1), (i % columns) * (nx + 1)


def render_overlay(spec: OverlaySpec) -> np.ndarray:
    """Render the montage as an (H, W, 3) uint8 array.

    Tile pixel ``(row=y, col=x)`` shows voxel ``(x, y, z)``. Paint order:
    windowed base, alpha-blended atlas colour, opaque red lesion.
    """
    spec.validate()
    slices = select_slices(spec)
    extents = spec.base.extents
    nx, ny = extents[0], extents[1]
    height, width = montage_shape(len(slices), spec.columns, extents)
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    # separator lines; unused tile slots stay black
    for c in range(1, spec.columns):
        canvas[:, c * (nx + 1) - 1] = SEPARATOR_RGB
    for r in range(1, math.ceil(len(slices) / spec.columns)):
        canvas[r * (ny + 1) - 1, :] = SEPARATOR_RGB

    gray = window_base(spec.base.data)
    palette = spec.palette or DEFAULT_PALETTE
    lut = np.zeros((len(TerritoryLabel) + 1, 3))
    for label, rgb in palette.items():
        lut[int(label)] = rgb
    territory = spec.atlas.territory_map() if spec.atlas is not None else None
    alpha = spec.atlas_alpha

    for i, z in enumerate(slices):
        g = gray[:, :, z].T
        rgb = np.repeat(g[:, :, None], 3, axis=2)
        if territory is not None:
            lab = territory[:, :, z].T
            on = lab > 0
            rgb[on] = rgb[on] * (1.0 - alpha) + lut[lab[on]] * alpha
        tile = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
        if spec.lesion is not None:
            tile[spec.lesion.data[:, :, z].T >= MASK_THRESHOLD] = LESION_RGB
        r0, c0 = tile_origin(i, spec.columns, extents)
        canvas[r0 : r0 + ny, c0 : c0 + nx] = tile
    return canvas


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_png(image))
