"""Grid geometry and reslicing of volumes onto other voxel grids."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import GridMismatch, InvalidVolume, SingularAffine
from .nifti_io import Volume3D

MASK_THRESHOLD = 0.5
# coordinates this close to an integer are treated as lying on the voxel centre
_SNAP_TOL = 1e-9


class Interpolation(enum.Enum):
    NEAREST = "nearest"
    TRILINEAR = "trilinear"


@dataclass(frozen=True, eq=False)
class GridSpec:
    extents: Tuple[int, int, int]
    affine: np.ndarray

    def __post_init__(self):
        aff = np.array(self.affine, dtype=np.float64)
        if aff.shape != (4, 4):
            raise InvalidVolume(f"affine must be 4x4, got {aff.shape}")
        if abs(np.linalg.det(aff[:3, :3])) < 1e-12:
            raise SingularAffine("grid affine is singular")
        object.__setattr__(self, "extents", tuple(int(n) for n in self.extents))
        object.__setattr__(self, "affine", aff)


def grid_of(v: Volume3D) -> GridSpec:
    return GridSpec(v.extents, v.affine)


def same_grid(a, b, tol: float = 1e-4) -> bool:
    return tuple(a.extents) == tuple(b.extents) and np.allclose(a.affine, b.affine, atol=tol, rtol=0)


def check_same_grid(a, b, what: str = "volumes") -> None:
    if not same_grid(a, b):
        raise GridMismatch(f"{what} do not share extents and affine")


def _inverse(affine: np.ndarray) -> np.ndarray:
    if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
        raise SingularAffine("affine is not invertible")
    return np.linalg.inv(affine)


def voxel_to_world(v, ijk) -> np.ndarray:
    ijk = np.asarray(ijk, dtype=np.float64)
    return ijk @ v.affine[:3, :3].T + v.affine[:3, 3]


def world_to_voxel(v, p) -> np.ndarray:
    """Continuous voxel coordinate of world point(s) ``p`` (mm)."""
    inv = _inverse(np.asarray(v.affine, dtype=np.float64))
    p = np.asarray(p, dtype=np.float64)
    return p @ inv[:3, :3].T + inv[:3, 3]


def grid_center(grid) -> np.ndarray:
    """World-space centre of the bounding box of the grid's voxel centres."""
    n = np.asarray(grid.extents, dtype=np.float64)
    return voxel_to_world(grid, (n - 1.0) / 2.0)


def grid_indices(extents) -> np.ndarray:
    """All voxel indices of a grid as an (N, 3) array in x-fastest order."""
    nx, ny, nz = extents
    z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1).astype(np.float64)


def sample(data: np.ndarray, coords: np.ndarray, interp: Interpolation, fill: float = 0.0):
    """Sample ``data`` at continuous voxel coordinates.

    Returns ``(values, inside)`` where ``inside`` marks coordinates that fell
    within the sampling domain; outside points get ``fill``.
    """
    coords = np.asarray(coords, dtype=np.float64)
    snapped = np.rint(coords)
    coords = np.where(np.abs(coords - snapped) < _SNAP_TOL, snapped, coords)
    shape = np.asarray(data.shape)
    out = np.full(coords.shape[0], fill, dtype=np.float64)

    if interp is Interpolation.NEAREST:
        idx = np.floor(coords + 0.5).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < shape), axis=1)
        i = idx[inside]
        out[inside] = data[i[:, 0], i[:, 1], i[:, 2]]
        return out, inside

    inside = np.all((coords >= 0) & (coords <= shape - 1), axis=1)
    c = coords[inside]
    i0 = np.minimum(np.floor(c).astype(np.int64), np.maximum(shape - 2, 0))
    f = c - i0
    i1 = np.minimum(i0 + 1, shape - 1)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    x1, y1, z1 = i1[:, 0], i1[:, 1], i1[:, 2]
    c00 = data[x0, y0, z0] * (1 - fx) + data[x1, y0, z0] * fx
    c10 = data[x0, y1, z0] * (1 - fx) + data[x1, y1, z0] * fx
    c01 = data[x0, y0, z1] * (1 - fx) + data[x1, y0, z1] * fx
    c11 = data[x0, y1, z1] * (1 - fx) + data[x1, y1, z1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    out[inside] = c0 * (1 - fz) + c1 * fz
    return out, inside


def source_coordinates(src, target, world_map: Optional[np.ndarray] = None) -> np.ndarray:
    """Source voxel coordinates for every target voxel.

    ``world_map`` is an optional 4x4 applied in world space, taking target
    world points to source world points.
    """
    m = _inverse(np.asarray(src.affine, dtype=np.float64))
    if world_map is not None:
        m = m @ world_map
    m = m @ np.asarray(target.affine, dtype=np.float64)
    idx = grid_indices(target.extents)
    return idx @ m[:3, :3].T + m[:3, 3]


def _to_volume(values: np.ndarray, target, src: Volume3D) -> Volume3D:
    data = values.reshape(target.extents, order="F")
    return Volume3D(data, target.affine, src.datatype, src.description)


def resample(
    src: Volume3D,
    target,
    interp: Interpolation = Interpolation.TRILINEAR,
    fill: float = 0.0,
    world_map: Optional[np.ndarray] = None,
) -> Volume3D:
    """Reslice ``src`` onto ``target`` (a GridSpec or Volume3D)."""
    coords = source_coordinates(src, target, world_map)
    values, _ = sample(src.data, coords, interp, fill)
    return _to_volume(values, target, src)


def binarize(v: Volume3D) -> Volume3D:
    return v.with_data((v.data >= MASK_THRESHOLD).astype(np.float64))


def apply_transform(mask: Volume3D, t, target) -> Volume3D:
    """Carry a binary mask through rigid transform ``t`` onto ``target``.

    ``t`` maps the mask's world space to the target's world space and rotates
    about the mask grid's bounding-box centre.
    """
    center = grid_center(mask)
    backward = np.linalg.inv(t.matrix(center))
    out = resample(binarize(mask), target, Interpolation.NEAREST, 0.0, backward)
    return binarize(out)


def downsample2(v: Volume3D) -> Volume3D:
    """Mean-pool by 2 along every axis; odd trailing planes are dropped."""
    nx, ny, nz = (max(n // 2, 1) for n in v.extents)
    d = v.data
    # axes of extent 1 cannot be pooled
    fx, fy, fz = (2 if n >= 2 else 1 for n in v.extents)
    d = d[: nx * fx, : ny * fy, : nz * fz]
    pooled = d.reshape(nx, fx, ny, fy, nz, fz).mean(axis=(1, 3, 5))
    scale = np.diag([fx, fy, fz, 1.0]).astype(np.float64)
    scale[:3, 3] = [(fx - 1) / 2.0, (fy - 1) / 2.0, (fz - 1) / 2.0]
    return Volume3D(pooled, v.affine @ scale, v.datatype, v.description)
