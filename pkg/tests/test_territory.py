import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strokelocus.errors import EmptyLesion, GridMismatch, InputError
from strokelocus.nifti_io import Volume3D
from strokelocus.phantoms import blob_volume, micro_atlas_labels, random_blobs, transformed_phantom
from strokelocus.registration import RigidTransform
from strokelocus.territory import (
    AtlasVolume,
    TerritoryLabel,
    VesselClass,
    analyze_lesion,
    compute_overlap,
    map_territory,
    read_atlas_names,
    write_atlas_names,
)

T = TerritoryLabel


def enumerate_overlap(labels, lesion):
    """Per-voxel loop oracle: (counts per code 0..10, total)."""
    counts = [0] * 11
    total = 0
    nx, ny, nz = labels.shape
    for x, y, z in itertools.product(range(nx), range(ny), range(nz)):
        if lesion[x, y, z] >= 0.5:
            total += 1
            counts[int(labels[x, y, z])] += 1
    return counts, total


@pytest.mark.parametrize(
    "label, vessel",
    [
        (T.MCAR, VesselClass.RIGHT_MCA),
        (T.MCAL, VesselClass.LEFT_MCA),
        (T.ACAR, VesselClass.ANTERIOR_CIRCULATION),
        (T.ACAL, VesselClass.ANTERIOR_CIRCULATION),
        (T.PCAR, VesselClass.POSTERIOR_CIRCULATION),
        (T.PCAL, VesselClass.POSTERIOR_CIRCULATION),
        (T.VBR, VesselClass.UNMAPPED),
        (T.VBL, VesselClass.UNMAPPED),
        (T.LVR, VesselClass.UNMAPPED),
        (T.LVL, VesselClass.UNMAPPED),
    ],
)
def test_territory_to_vessel_table(label, vessel):
    assert map_territory(label) is vessel


def test_label_codes():
    assert [t.name for t in T] == ["MCAR", "MCAL", "ACAR", "ACAL", "PCAR", "PCAL", "VBR", "VBL", "LVR", "LVL"]
    assert [int(t) for t in T] == list(range(1, 11))


def test_lesion_inside_mcar(micro_labels):
    atlas = AtlasVolume(Volume3D(micro_labels))
    lesion = (micro_labels == T.MCAR).astype(float)
    lesion[:, :, :5] = 0
    r = compute_overlap(Volume3D(lesion), atlas)
    assert r.territories[T.MCAR].voxel_count == lesion.sum()
    assert r.territories[T.MCAR].percentage == 100.0
    assert r.dominant is T.MCAR and r.dominant_vessel is VesselClass.RIGHT_MCA
    assert r.summary_line() == "DOMINANT=MCAR VESSEL=RightMCA"


def five_cube_atlas():
    labels = np.zeros((5, 5, 5))
    labels[0:2] = T.MCAL
    labels[2:4] = T.ACAL
    lesion = np.zeros((5, 5, 5))
    lesion[1, 0:3, 0:2] = 1  # 6 voxels in MCAL
    lesion[2, 0:2, 0:2] = 1  # 4 voxels in ACAL
    return labels, lesion


def test_sixty_forty_split_micro_atlas():
    labels, lesion = five_cube_atlas()
    counts, total = enumerate_overlap(labels, lesion)
    assert (counts[T.MCAL], counts[T.ACAL], total) == (6, 4, 10)
    r = compute_overlap(Volume3D(lesion), AtlasVolume(Volume3D(labels)))
    assert r.territories[T.MCAL].percentage == 60.0
    assert r.territories[T.ACAL].percentage == 40.0
    assert r.dominant is T.MCAL and r.dominant_vessel is VesselClass.LEFT_MCA
    assert not r.tie


def test_lesion_on_background_only():
    labels, _ = five_cube_atlas()
    lesion = np.zeros((5, 5, 5))
    lesion[4, :, :2] = 1
    r = compute_overlap(Volume3D(lesion), AtlasVolume(Volume3D(labels)))
    assert all(c.voxel_count == 0 for c in r.territories.values())
    assert r.outside_atlas_voxels == r.total_lesion_voxels == 10
    assert r.dominant is None and r.dominant_vessel is None
    assert r.summary_line() == "DOMINANT=NONE VESSEL=NONE"


def test_empty_lesion():
    labels, _ = five_cube_atlas()
    with pytest.raises(EmptyLesion):
        compute_overlap(Volume3D(np.zeros((5, 5, 5))), AtlasVolume(Volume3D(labels)))


def test_grid_mismatch():
    labels, lesion = five_cube_atlas()
    with pytest.raises(GridMismatch):
        compute_overlap(Volume3D(lesion, np.diag([2.0, 1, 1, 1])), AtlasVolume(Volume3D(labels)))


def test_tie_goes_to_lowest_code_and_is_flagged():
    labels = np.zeros((4, 4, 4))
    labels[:2] = T.PCAL
    labels[2:] = T.ACAR
    lesion = np.zeros((4, 4, 4))
    lesion[1:3, 0, 0] = 1
    r = compute_overlap(Volume3D(lesion), AtlasVolume(Volume3D(labels)))
    assert r.dominant is T.ACAR
    assert r.tie and r.tied_territories == [T.ACAR, T.PCAL]


def test_unmapped_dominant_reports_advisory_runner_up():
    labels = np.zeros((4, 4, 4))
    labels[:2] = T.VBL
    labels[2:] = T.PCAR
    lesion = np.zeros((4, 4, 4))
    lesion[0:2, 0:2, 0] = 1
    lesion[2, 0, 0] = 1
    r = compute_overlap(Volume3D(lesion), AtlasVolume(Volume3D(labels)))
    assert r.dominant is T.VBL and r.dominant_vessel is VesselClass.UNMAPPED
    assert r.advisory_runner_up is T.PCAR
    assert r.advisory_vessel is VesselClass.POSTERIOR_CIRCULATION
    js = r.to_json()
    assert js["advisory_runner_up"] == {"advisory": True, "territory": "PCAR", "vessel_class": "PosteriorCirculation"}


def test_report_json_layout():
    labels, lesion = five_cube_atlas()
    lesion[1, 4, 4] = 1  # one more MCAL voxel: 7/11
    r = compute_overlap(Volume3D(lesion), AtlasVolume(Volume3D(labels)))
    js = json.loads(json.dumps(r.to_json()))
    assert list(js["territories"]) == [t.name for t in T]
    assert js["territories"]["MCAL"] == {"voxel_count": 7, "percentage": 63.6364}
    assert js["dominant"] == "MCAL" and js["dominant_vessel"] == "LeftMCA"
    assert js["transform_used"] is None


def test_sidecar_remaps_codes(tmp_path):
    names = {int(t): t for t in T}
    names[1], names[4] = T.ACAL, T.MCAR  # code 1 now means ACAL
    write_atlas_names(tmp_path / "names.json", names)
    loaded = read_atlas_names(tmp_path / "names.json")
    labels = np.zeros((3, 3, 3))
    labels[0] = 1
    lesion = np.zeros((3, 3, 3))
    lesion[0, 0, 0] = 1
    r = compute_overlap(Volume3D(lesion), AtlasVolume(Volume3D(labels), loaded))
    assert r.dominant is T.ACAL


def test_sidecar_default_format(tmp_path):
    write_atlas_names(tmp_path / "n.json")
    assert json.loads((tmp_path / "n.json").read_text()) == {str(int(t)): t.name for t in T}


def test_bad_sidecar(tmp_path):
    (tmp_path / "n.json").write_text(json.dumps({"1": "MCAR"}))
    with pytest.raises(InputError):
        read_atlas_names(tmp_path / "n.json")


def test_illegal_atlas_code():
    with pytest.raises(InputError):
        AtlasVolume(Volume3D(np.full((2, 2, 2), 11.0)))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), density=st.floats(0.05, 0.9))
def test_matches_enumeration_oracle(seed, density):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 11, size=(8, 8, 8)).astype(float)
    lesion = (rng.random((8, 8, 8)) < density).astype(float)
    if lesion.sum() == 0:
        lesion[0, 0, 0] = 1
    counts, total = enumerate_overlap(labels, lesion)
    r = compute_overlap(Volume3D(lesion), AtlasVolume(Volume3D(labels)))
    assert r.total_lesion_voxels == total
    assert r.outside_atlas_voxels == counts[0]
    for t in T:
        assert r.territories[t].voxel_count == counts[t]
        assert abs(r.territories[t].percentage - 100.0 * counts[t] / total) <= 1e-9
    assert sum(c.voxel_count for c in r.territories.values()) + r.outside_atlas_voxels == total
    best = max(counts[1:])
    if best:
        assert r.dominant == T(counts.index(best, 1))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), reps=st.integers(2, 3))
def test_dominant_invariant_under_replication(seed, reps):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 11, size=(6, 6, 6)).astype(float)
    lesion = (rng.random((6, 6, 6)) < 0.4).astype(float)
    lesion[0, 0, 0] = 1
    base = compute_overlap(Volume3D(lesion), AtlasVolume(Volume3D(labels)))
    tiled = compute_overlap(
        Volume3D(np.tile(lesion, (reps, 1, 1))), AtlasVolume(Volume3D(np.tile(labels, (reps, 1, 1))))
    )
    assert tiled.dominant == base.dominant
    assert tiled.total_lesion_voxels == reps * base.total_lesion_voxels


def test_analyze_identity_matches_compute_overlap(micro_labels):
    blobs = random_blobs(np.random.default_rng(4), n_blobs=5, extent=16, margin=0.25)
    template = blob_volume(blobs, extent=16)
    atlas = AtlasVolume(Volume3D(micro_labels))
    lesion = np.zeros((16, 16, 16))
    lesion[3:6, 2:4, 5:9] = 1.0 * (micro_labels[3:6, 2:4, 5:9] == T.MCAR)
    direct = compute_overlap(Volume3D(lesion), atlas)
    r = analyze_lesion(Volume3D(lesion), template, atlas, template)
    assert r.dominant is T.MCAR
    assert r.to_json()["territories"] == direct.to_json()["territories"]
    assert np.abs(r.transform_used.params()).max() < 1e-3


def test_analyze_recovers_shifted_patient(tmp_path):
    from strokelocus.nifti_io import read_nifti
    from strokelocus.phantoms import write_fixture
    from strokelocus.territory import load_atlas

    paths = write_fixture(tmp_path)
    atlas = load_atlas(paths["atlas"], paths["atlas_names"])
    r = analyze_lesion(read_nifti(paths["lesion"]), read_nifti(paths["mri"]), atlas, read_nifti(paths["template"]))
    assert r.dominant is T.ACAL and r.dominant_vessel is VesselClass.ANTERIOR_CIRCULATION
    np.testing.assert_allclose(r.transform_used.translations, (4.0, 0.0, 0.0), atol=0.5)


def test_analyze_empty_lesion(micro_labels):
    v = Volume3D(micro_labels.astype(float))
    with pytest.raises(EmptyLesion):
        analyze_lesion(Volume3D(np.zeros((16, 16, 16))), v, AtlasVolume(v), v)
