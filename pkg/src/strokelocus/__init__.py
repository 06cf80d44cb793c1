"""Deterministic core of an MRI stroke-localisation pipeline.

Rigid registration into arterial-atlas space, territory overlap statistics,
territory-to-vessel mapping, MRI/MRA fusion, synthesis metrics and overlay
rendering. Neural-network stages are out of scope; their NIfTI outputs are
this package's inputs.
"""
from .errors import *  # noqa: F401,F403
from .fusion import FusionConfig, FusionMode, fuse
from .metrics import LossBreakdown, adversarial_loss, l1_loss, perceptual_loss, pgan_loss, psnr, ssim
from .nifti_io import NiftiHeader, Volume3D, read_nifti, write_nifti
from .registration import (
    Cost,
    RegistrationConfig,
    RegistrationResult,
    RigidTransform,
    register_rigid,
    registration_cost,
)
from .render import OverlaySpec, render_overlay
from .territory import (
    AtlasOverlapReport,
    AtlasVolume,
    TerritoryLabel,
    VesselClass,
    analyze_lesion,
    compute_overlap,
    map_territory,
)
from .volume_core import GridSpec, Interpolation, apply_transform, grid_of, resample, world_to_voxel

__version__ = "0.1.0"
