"""Synthetic volumes for tests, experiments and the bundled fixture."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .nifti_io import DT_FLOAT32, DT_UINT8, Volume3D, write_nifti
from .volume_core import grid_center, grid_indices


def random_blobs(rng: np.random.Generator, n_blobs: int = 6, extent: int = 32, margin: float = 0.3):
    """Random Gaussian blob parameters (centres in voxels, sigmas, amplitudes)."""
    lo, hi = margin * (extent - 1), (1 - margin) * (extent - 1)
    centers = rng.uniform(lo, hi, size=(n_blobs, 3))
    sigmas = rng.uniform(0.08, 0.16, size=n_blobs) * extent
    amps = rng.uniform(0.5, 1.5, size=n_blobs)
    return centers, sigmas, amps


def blob_field(points: np.ndarray, centers, sigmas, amps) -> np.ndarray:
    """Evaluate a sum of isotropic Gaussians at world points (N, 3)."""
    out = np.zeros(points.shape[0])
    for c, s, a in zip(centers, sigmas, amps):
        d2 = np.sum((points - c) ** 2, axis=1)
        out += a * np.exp(-d2 / (2.0 * s * s))
    return out


def blob_volume(blobs, extent: int = 32, affine=None, world_map=None) -> Volume3D:
    """Sample a blob phantom on a cubic grid.

    With ``world_map`` (4x4), voxel ``p`` takes the phantom value at
    ``world_map @ p``, so ``RigidTransform.matrix`` of the true transform
    produces a moving image that the transform aligns to the unmapped one.
    """
    affine = np.eye(4) if affine is None else np.asarray(affine, dtype=np.float64)
    idx = grid_indices((extent,) * 3)
    world = idx @ affine[:3, :3].T + affine[:3, 3]
    if world_map is not None:
        world = world @ world_map[:3, :3].T + world_map[:3, 3]
    data = blob_field(world, *blobs).reshape((extent,) * 3, order="F")
    return Volume3D(data, affine, DT_FLOAT32)


def transformed_phantom(blobs, t, extent: int = 32, affine=None) -> Volume3D:
    """Moving image whose correct alignment to ``blob_volume(blobs)`` is ``t``."""
    ref = blob_volume(blobs, extent, affine)
    return blob_volume(blobs, extent, affine, world_map=t.matrix(grid_center(ref)))


def micro_atlas_labels(extent: int = 16) -> np.ndarray:
    """A toy 10-territory label layout: left/right halves split into bands.

    x < extent/2 is the right hemisphere (codes MCAR, ACAR, PCAR, VBR, LVR),
    the other half mirrors it with the left codes. The outermost shell of
    voxels is background.
    """
    labels = np.zeros((extent,) * 3, dtype=np.int64)
    half = extent // 2
    right = [1, 3, 5, 7, 9]
    left = [2, 4, 6, 8, 10]
    inner = slice(1, extent - 1)
    bands = np.array_split(np.arange(1, extent - 1), 5)
    for codes, xs in ((right, slice(1, half)), (left, slice(half, extent - 1))):
        for code, ys in zip(codes, bands):
            labels[xs, ys[0] : ys[-1] + 1, inner] = code
    return labels


def write_fixture(out_dir, extent: int = 16, shift_mm=(-4.0, 0.0, 0.0), seed: int = 7) -> dict:
    """Write the end-to-end fixture set and return the file paths.

    The patient MRI is the template content displaced by ``shift_mm`` (keep
    it integral); the lesion is drawn in patient space so that, once
    registered, it falls in ACAL.
    """
    from .registration import RigidTransform

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    centers, sigmas, amps = random_blobs(rng, n_blobs=5, extent=extent, margin=0.25)
    sigmas = np.maximum(sigmas, 2.0)
    blobs = (centers, sigmas, amps)

    template = blob_volume(blobs, extent)
    labels = micro_atlas_labels(extent)
    atlas = Volume3D(labels, np.eye(4), DT_UINT8)

    # patient voxel p shows template content at p - shift; the aligning transform is -shift
    t = RigidTransform((0.0, 0.0, 0.0), tuple(-np.asarray(shift_mm, dtype=float)))
    patient = transformed_phantom(blobs, t, extent)

    acal = np.argwhere(labels == 4)
    lo, hi = acal.min(axis=0), acal.max(axis=0)
    mid = (lo + hi) // 2
    lesion_atlas = np.zeros_like(labels, dtype=np.float64)
    lesion_atlas[mid[0] - 1 : mid[0] + 2, lo[1] : hi[1] + 1, mid[2] - 2 : mid[2] + 2] = 1.0
    lesion_atlas *= labels == 4
    # patient index = atlas index + shift (unit spacing, integral shift)
    shift_vox = np.rint(np.asarray(shift_mm)).astype(int)
    lesion_patient = np.zeros_like(lesion_atlas)
    pts = np.argwhere(lesion_atlas > 0) + shift_vox
    lesion_patient[tuple(pts.T)] = 1.0

    # a vessel-like MRA on the patient grid
    mra = np.zeros((extent,) * 3)
    c = extent // 2
    mra[c - 1 : c + 1, :, c - 1 : c + 1] = 1.0
    mra[:, c - 3, c] = 0.8
    mra = mra + 0.05 * rng.random(mra.shape)

    paths = {
        "template": out / "template.nii.gz",
        "atlas": out / "atlas.nii.gz",
        "atlas_names": out / "atlas_names.json",
        "mri": out / "patient_mri.nii.gz",
        "lesion": out / "lesion.nii.gz",
        "mra": out / "patient_mra.nii.gz",
    }
    write_nifti(template, paths["template"])
    write_nifti(atlas, paths["atlas"], DT_UINT8)
    from .territory import write_atlas_names

    write_atlas_names(paths["atlas_names"])
    write_nifti(patient, paths["mri"])
    write_nifti(Volume3D(lesion_patient, np.eye(4), DT_UINT8), paths["lesion"], DT_UINT8)
    write_nifti(Volume3D(mra, np.eye(4)), paths["mra"])
    return paths
