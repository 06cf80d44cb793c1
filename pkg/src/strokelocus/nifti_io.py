"""NIfTI-1 single-file reader/writer and the :class:`Volume3D` value type.

Only little-endian ``.nii`` / ``.nii.gz`` files are handled. All voxel data is
promoted to float64 after applying ``scl_slope``/``scl_inter``.
"""
from __future__ import annotations

import gzip
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    BadHeader,
    BadMagic,
    InvalidVolume,
    IoFailure,
    TruncatedData,
    UnsupportedDatatype,
)

PathLike = Union[str, os.PathLike]

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# NIfTI-1 datatype code -> little-endian numpy dtype
DATATYPES = {
    2: np.dtype("u1"),
    4: np.dtype("<i2"),
    8: np.dtype("<i4"),
    16: np.dtype("<f4"),
    64: np.dtype("<f8"),
}
DT_UINT8, DT_INT16, DT_INT32, DT_FLOAT32, DT_FLOAT64 = 2, 4, 8, 16, 64

HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p1", "<f4"),
        ("intent_p2", "<f4"),
        ("intent_p3", "<f4"),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern_b", "<f4"),
        ("quatern_c", "<f4"),
        ("quatern_d", "<f4"),
        ("qoffset_x", "<f4"),
        ("qoffset_y", "<f4"),
        ("qoffset_z", "<f4"),
        ("srow_x", "<f4", (4,)),
        ("srow_y", "<f4", (4,)),
        ("srow_z", "<f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert HEADER_DTYPE.itemsize == HEADER_SIZE


@dataclass(frozen=True)
class NiftiHeader:
    """The subset of NIfTI-1 header fields this package interprets."""

    sizeof_hdr: int
    dim: tuple
    datatype: int
    pixdim: tuple
    vox_offset: float
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    quatern: tuple  # (b, c, d)
    qoffset: tuple  # (x, y, z)
    srow: tuple  # three 4-tuples
    magic: bytes
    descrip: str = ""

    @classmethod
    def from_bytes(cls, raw: bytes) -> "NiftiHeader":
        if len(raw) < HEADER_SIZE:
            raise TruncatedData(f"header is {len(raw)} bytes, need {HEADER_SIZE}")
        sizeof_hdr = int.from_bytes(raw[:4], "little", signed=True)
        if sizeof_hdr != HEADER_SIZE:
            if int.from_bytes(raw[:4], "big", signed=True) == HEADER_SIZE:
                raise BadHeader("big-endian NIfTI files are not supported")
            raise BadHeader(f"sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}")
        h = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE)[0]
        magic = bytes(raw[344:348])
        if magic == MAGIC_PAIR:
            raise BadMagic("header/image pairs (.hdr/.img) are not supported")
        if magic != MAGIC_SINGLE:
            raise BadMagic(f"not a NIfTI-1 file (magic {magic!r})")
        return cls(
            sizeof_hdr=sizeof_hdr,
            dim=tuple(int(d) for d in h["dim"]),
            datatype=int(h["datatype"]),
            pixdim=tuple(float(p) for p in h["pixdim"]),
            vox_offset=float(h["vox_offset"]),
            scl_slope=float(h["scl_slope"]),
            scl_inter=float(h["scl_inter"]),
            qform_code=int(h["qform_code"]),
            sform_code=int(h["sform_code"]),
            quatern=(float(h["quatern_b"]), float(h["quatern_c"]), float(h["quatern_d"])),
            qoffset=(float(h["qoffset_x"]), float(h["qoffset_y"]), float(h["qoffset_z"])),
            srow=tuple(tuple(float(v) for v in h[k]) for k in ("srow_x", "srow_y", "srow_z")),
            magic=magic,
            descrip=bytes(h["descrip"]).split(b"\x00", 1)[0].decode("latin-1"),
        )

    def extents(self) -> tuple:
        ndim = self.dim[0]
        if not 1 <= ndim <= 7:
            raise BadHeader(f"dim[0]={ndim} outside 1..7")
        if ndim < 3:
            raise BadHeader(f"need a 3-D volume, got dim[0]={ndim}")
        shape = self.dim[1 : ndim + 1]
        if any(n < 1 for n in shape):
            raise BadHeader(f"non-positive extent in dim {self.dim}")
        if any(n != 1 for n in shape[3:]):
            raise BadHeader(f"4-D and higher volumes are not supported (dim {self.dim})")
        return tuple(shape[:3])

    def affine(self) -> np.ndarray:
        """Voxel-to-world matrix: sform, else qform, else pixdim diagonal."""
        if self.sform_code > 0:
            aff = np.eye(4)
            aff[:3, :] = np.array(self.srow, dtype=np.float64)
            return aff
        if self.qform_code > 0:
            return quaternion_affine(self.quatern, self.qoffset, self.pixdim)
        return np.diag([self.pixdim[1], self.pixdim[2], self.pixdim[3], 1.0])


def quaternion_affine(quatern, qoffset, pixdim) -> np.ndarray:
    b, c, d = (float(q) for q in quatern)
    a2 = 1.0 - (b * b + c * c + d * d)
    # rounding can push the sum slightly past 1
    a = math.sqrt(a2) if a2 > 1e-7 else 0.0
    if a == 0.0:
        norm = math.sqrt(b * b + c * c + d * d)
        b, c, d = b / norm, c / norm, d / norm
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    scale = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    aff = np.eye(4)
    aff[:3, :3] = rot * scale
    aff[:3, 3] = qoffset
    return aff


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Scalar voxel grid indexed ``data[x, y, z]`` with a voxel-to-world affine.

    ``spacing`` is derived from the affine's column norms, so it can never
    disagree with the geometry.
    """

    data: np.ndarray
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))
    datatype: int = DT_FLOAT32
    description: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise InvalidVolume(f"expected a 3-D array, got shape {data.shape}")
        if min(data.shape) < 1:
            raise InvalidVolume(f"empty extent in shape {data.shape}")
        aff = np.array(self.affine, dtype=np.float64)
        if aff.shape != (4, 4):
            raise InvalidVolume(f"affine must be 4x4, got {aff.shape}")
        if not np.all(np.isfinite(aff)) or abs(np.linalg.det(aff[:3, :3])) < 1e-12:
            raise InvalidVolume("affine upper-left 3x3 is singular")
        if self.datatype not in DATATYPES:
            raise UnsupportedDatatype(f"datatype code {self.datatype}")
        data.flags.writeable = False
        aff.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "affine", aff)

    @property
    def extents(self) -> tuple:
        return self.data.shape

    @property
    def spacing(self) -> tuple:
        return tuple(float(s) for s in np.linalg.norm(self.affine[:3, :3], axis=0))

    def with_data(self, data, datatype: Optional[int] = None, description: Optional[str] = None):
        """Copy of this volume on the same grid with new voxel values."""
        return Volume3D(
            data,
            self.affine,
            self.datatype if datatype is None else datatype,
            self.description if description is None else description,
        )


def _read_bytes(path: PathLike) -> bytes:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise TruncatedData(f"corrupt gzip stream in {path}: {exc}") from exc
    return raw


def parse_nifti(raw: bytes) -> Volume3D:
    """Decode an uncompressed single-file NIfTI-1 byte string."""
    hdr = NiftiHeader.from_bytes(raw)
    extents = hdr.extents()
    if hdr.datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {hdr.datatype} not supported")
    if any(p <= 0 for p in hdr.pixdim[1:4]):
        raise BadHeader(f"pixdim[1..3] must be positive, got {hdr.pixdim[1:4]}")
    dtype = DATATYPES[hdr.datatype]
    offset = int(hdr.vox_offset)
    if offset < HEADER_SIZE:
        raise BadHeader(f"vox_offset {hdr.vox_offset} inside the header")
    count = int(np.prod(extents))
    nbytes = count * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise TruncatedData(f"need {offset + nbytes} bytes, file has {len(raw)}")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = flat.reshape(extents, order="F").astype(np.float64)
    slope, inter = hdr.scl_slope, hdr.scl_inter
    if slope != 0 and math.isfinite(slope):
        data = data * slope + (inter if math.isfinite(inter) else 0.0)
    try:
        return Volume3D(data, hdr.affine(), hdr.datatype, hdr.descrip)
    except InvalidVolume as exc:
        raise BadHeader(str(exc)) from exc


def read_nifti(path: PathLike) -> Volume3D:
    """Read a ``.nii`` or ``.nii.gz`` file (gzip detected from content)."""
    return parse_nifti(_read_bytes(path))


def _encode_values(data: np.ndarray, datatype: int) -> np.ndarray:
    dtype = DATATYPES[datatype]
    if dtype.kind in "iu":
        info = np.iinfo(dtype)
        data = np.clip(np.rint(data), info.min, info.max)
    return data.astype(dtype)


def encode_nifti(v: Volume3D, datatype: int = DT_FLOAT32, description: Optional[str] = None) -> bytes:
    """Serialize ``v`` to single-file NIfTI-1 bytes (sform only, no scaling)."""
    if not isinstance(v, Volume3D):
        raise InvalidVolume(f"expected Volume3D, got {type(v).__name__}")
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype}")
    h = np.zeros((), dtype=HEADER_DTYPE)
    h["sizeof_hdr"] = HEADER_SIZE
    h["regular"] = b"r"
    h["dim"] = [3, *v.extents, 1, 1, 1, 1]
    h["datatype"] = datatype
    h["bitpix"] = DATATYPES[datatype].itemsize * 8
    h["pixdim"] = [1.0, *v.spacing, 0.0, 0.0, 0.0, 0.0]
    h["vox_offset"] = VOX_OFFSET
    h["scl_slope"] = 1.0
    h["scl_inter"] = 0.0
    h["xyzt_units"] = 2  # mm
    desc = v.description if description is None else description
    h["descrip"] = desc.encode("latin-1", "replace")[:79]
    h["qform_code"] = 0
    h["sform_code"] = 1
    h["srow_x"] = v.affine[0]
    h["srow_y"] = v.affine[1]
    h["srow_z"] = v.affine[2]
    h["magic"] = MAGIC_SINGLE
    values = _encode_values(v.data, datatype)
    return h.tobytes() + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + values.tobytes(order="F")


def write_nifti(
    v: Volume3D,
    path: PathLike,
    datatype: int = DT_FLOAT32,
    description: Optional[str] = None,
) -> None:
    """Write ``v`` as NIfTI-1; a ``.gz`` suffix selects gzip.

    Gzip output uses a zero mtime and no embedded filename so repeated
    writes are byte-identical.
    """
    payload = encode_nifti(v, datatype, description)
    path = Path(path)
    try:
        if path.suffix == ".gz":
            buf = io.BytesIO()
            with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
                gz.write(payload)
            payload = buf.getvalue()
        path.write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
