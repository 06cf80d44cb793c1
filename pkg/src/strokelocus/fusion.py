"""Pixel-wise fusion of a co-registered MRI/MRA pair."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRange
from .nifti_io import DT_FLOAT32, Volume3D
from .volume_core import check_same_grid


class FusionMode(enum.Enum):
    MEAN = "mean"
    SUM = "sum"
    MAX = "max"


@dataclass(frozen=True)
class FusionConfig:
    mode: FusionMode = FusionMode.MEAN
    normalize_inputs: bool = True  # per-volume min-max to [0, 1]
    clip_output: bool = True  # clamp Sum output to [0, 1]

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", FusionMode(self.mode.lower()))


def minmax_normalize(data: np.ndarray) -> np.ndarray:
    lo, hi = float(data.min()), float(data.max())
    if hi <= lo:
        raise DegenerateRange("cannot min-max normalize a constant volume")
    return (data - lo) / (hi - lo)


def fuse_arrays(a: np.ndarray, b: np.ndarray, mode: FusionMode) -> np.ndarray:
    if mode is FusionMode.MEAN:
        return (a + b) / 2.0
    if mode is FusionMode.SUM:
        return a + b
    return np.maximum(a, b)


def fuse(mri: Volume3D, mra: Volume3D, cfg: FusionConfig = FusionConfig()) -> Volume3D:
    """Fuse two volumes on a shared grid voxel by voxel."""
    check_same_grid(mri, mra, "MRI and MRA")
    a, b = mri.data, mra.data
    if cfg.normalize_inputs:
        a, b = minmax_normalize(a), minmax_normalize(b)
    out = fuse_arrays(a, b, cfg.mode)
    if cfg.clip_output and cfg.mode is FusionMode.SUM:
        out = np.clip(out, 0.0, 1.0)
    return mri.with_data(out, datatype=DT_FLOAT32, description=f"fusion mode={cfg.mode.value}")
