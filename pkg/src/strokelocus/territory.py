"""Lesion overlap with the 10-territory arterial atlas and vessel-class mapping."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np

from .errors import EmptyLesion, InputError
from .nifti_io import Volume3D, read_nifti
from .registration import RegistrationConfig, RigidTransform, register_rigid
from .volume_core import MASK_THRESHOLD, apply_transform, check_same_grid, grid_of


class TerritoryLabel(enum.IntEnum):
    MCAR = 1
    MCAL = 2
    ACAR = 3
    ACAL = 4
    PCAR = 5
    PCAL = 6
    VBR = 7
    VBL = 8
    LVR = 9
    LVL = 10


class VesselClass(str, enum.Enum):
    ANTERIOR_CIRCULATION = "AnteriorCirculation"
    POSTERIOR_CIRCULATION = "PosteriorCirculation"
    LEFT_MCA = "LeftMCA"
    RIGHT_MCA = "RightMCA"
    UNMAPPED = "Unmapped"


_VESSEL_OF = {
    TerritoryLabel.MCAR: VesselClass.RIGHT_MCA,
    TerritoryLabel.MCAL: VesselClass.LEFT_MCA,
    TerritoryLabel.ACAR: VesselClass.ANTERIOR_CIRCULATION,
    TerritoryLabel.ACAL: VesselClass.ANTERIOR_CIRCULATION,
    TerritoryLabel.PCAR: VesselClass.POSTERIOR_CIRCULATION,
    TerritoryLabel.PCAL: VesselClass.POSTERIOR_CIRCULATION,
    TerritoryLabel.VBR: VesselClass.UNMAPPED,
    TerritoryLabel.VBL: VesselClass.UNMAPPED,
    TerritoryLabel.LVR: VesselClass.UNMAPPED,
    TerritoryLabel.LVL: VesselClass.UNMAPPED,
}


def map_territory(t: TerritoryLabel) -> VesselClass:
    """Consolidate an atlas territory into the four-class vessel scheme.

    Vertebrobasilar and lateral-ventricular territories have no vessel class
    and map to ``VesselClass.UNMAPPED``.
    """
    return _VESSEL_OF[TerritoryLabel(t)]


DEFAULT_NAMES: Dict[int, TerritoryLabel] = {int(t): t for t in TerritoryLabel}


def write_atlas_names(path, names: Optional[Mapping[int, TerritoryLabel]] = None) -> None:
    names = DEFAULT_NAMES if names is None else names
    Path(path).write_text(json.dumps({str(k): TerritoryLabel(v).name for k, v in names.items()}, indent=2) + "\n")


def read_atlas_names(path) -> Dict[int, TerritoryLabel]:
    try:
        raw = json.loads(Path(path).read_text())
        names = {int(k): TerritoryLabel[v] for k, v in raw.items()}
    except (OSError, ValueError, KeyError, AttributeError) as exc:
        raise InputError(f"bad atlas sidecar {path}: {exc}") from exc
    if sorted(names.values()) != sorted(TerritoryLabel):
        raise InputError(f"atlas sidecar {path} must name each of the 10 territories exactly once")
    return names


@dataclass(frozen=True)
class AtlasVolume:
    labels: Volume3D
    names: Mapping[int, TerritoryLabel] = field(default_factory=lambda: dict(DEFAULT_NAMES))

    def __post_init__(self):
        values = np.unique(self.labels.data)
        legal = set(self.names) | {0}
        bad = [v for v in values if v not in legal]
        if bad:
            raise InputError(f"atlas contains codes outside the sidecar: {bad[:5]}")

    def territory_map(self) -> np.ndarray:
        """Label volume re-coded to canonical TerritoryLabel values (0 = background)."""
        codes = np.rint(self.labels.data).astype(np.int64)
        lut = np.zeros(max(max(self.names), 0) + 1, dtype=np.int64)
        for code, label in self.names.items():
            lut[code] = int(label)
        return lut[codes]


def load_atlas(labels_path, names_path=None) -> AtlasVolume:
    labels = read_nifti(labels_path)
    names = read_atlas_names(names_path) if names_path else dict(DEFAULT_NAMES)
    return AtlasVolume(labels, names)


@dataclass
class TerritoryCount:
    voxel_count: int
    percentage: float


@dataclass
class AtlasOverlapReport:
    territories: Dict[TerritoryLabel, TerritoryCount]
    total_lesion_voxels: int
    outside_atlas_voxels: int
    dominant: Optional[TerritoryLabel]
    dominant_vessel: Optional[VesselClass]
    tie: bool = False
    tied_territories: List[TerritoryLabel] = field(default_factory=list)
    # set only when the dominant territory has no vessel class
    advisory_runner_up: Optional[TerritoryLabel] = None
    advisory_vessel: Optional[VesselClass] = None
    transform_used: Optional[RigidTransform] = None

    def to_json(self) -> dict:
        advisory = None
        if self.advisory_runner_up is not None:
            advisory = {
                "advisory": True,
                "territory": self.advisory_runner_up.name,
                "vessel_class": self.advisory_vessel.value,
            }
        return {
            "territories": {
                t.name: {"voxel_count": c.voxel_count, "percentage": round(c.percentage, 4)}
                for t, c in self.territories.items()
            },
            "total_lesion_voxels": self.total_lesion_voxels,
            "outside_atlas_voxels": self.outside_atlas_voxels,
            "dominant": self.dominant.name if self.dominant is not None else None,
            "dominant_vessel": self.dominant_vessel.value if self.dominant_vessel is not None else None,
            "tie": self.tie,
            "tied_territories": [t.name for t in self.tied_territories],
            "advisory_runner_up": advisory,
            "transform_used": self.transform_used.to_json() if self.transform_used is not None else None,
        }

    def summary_line(self) -> str:
        dom = self.dominant.name if self.dominant is not None else "NONE"
        vessel = self.dominant_vessel.value if self.dominant_vessel is not None else "NONE"
        return f"DOMINANT={dom} VESSEL={vessel}"


def compute_overlap(lesion: Volume3D, atlas: AtlasVolume) -> AtlasOverlapReport:
    """Count lesion voxels per atlas territory and pick the dominant one.

    Percentages are relative to the whole lesion, so voxels on atlas
    background are reported separately in ``outside_atlas_voxels``. Ties go
    to the lowest territory code and set ``tie``.
    """
    check_same_grid(lesion, atlas.labels, "lesion and atlas")
    in_lesion = lesion.data >= MASK_THRESHOLD
    total = int(np.count_nonzero(in_lesion))
    if total == 0:
        raise EmptyLesion("lesion mask has no voxels")
    hits = atlas.territory_map()[in_lesion]
    counts = np.bincount(hits, minlength=len(TerritoryLabel) + 1)

    territories = {
        t: TerritoryCount(int(counts[t]), 100.0 * int(counts[t]) / total) for t in TerritoryLabel
    }
    report = AtlasOverlapReport(
        territories=territories,
        total_lesion_voxels=total,
        outside_atlas_voxels=int(counts[0]),
        dominant=None,
        dominant_vessel=None,
    )
    best = int(counts[1:].max())
    if best == 0:
        return report
    leaders = [t for t in TerritoryLabel if counts[t] == best]
    report.dominant = leaders[0]
    report.dominant_vessel = map_territory(leaders[0])
    report.tie = len(leaders) > 1
    report.tied_territories = leaders if report.tie else []

    if report.dominant_vessel is VesselClass.UNMAPPED:
        mapped = [t for t in TerritoryLabel if counts[t] > 0 and map_territory(t) is not VesselClass.UNMAPPED]
        if mapped:
            runner = max(mapped, key=lambda t: (counts[t], -int(t)))
            report.advisory_runner_up = runner
            report.advisory_vessel = map_territory(runner)
    return report


def analyze_lesion(
    lesion_native: Volume3D,
    patient_mri: Volume3D,
    atlas: AtlasVolume,
    atlas_template: Volume3D,
    cfg: Optional[RegistrationConfig] = None,
    transform: Optional[RigidTransform] = None,
) -> AtlasOverlapReport:
    """Register the patient to the atlas template, carry the lesion over, count overlap.

    A precomputed ``transform`` skips the registration step.
    """
    check_same_grid(lesion_native, patient_mri, "lesion and patient MRI")
    if not np.any(lesion_native.data >= MASK_THRESHOLD):
        raise EmptyLesion("lesion mask has no voxels")
    if transform is None:
        transform = register_rigid(atlas_template, patient_mri, cfg).transform
    lesion_atlas = apply_transform(lesion_native, transform, grid_of(atlas.labels))
    report = compute_overlap(lesion_atlas, atlas)
    report.transform_used = transform
    return report
