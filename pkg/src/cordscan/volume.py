"""Single-file NIfTI-1 reader/writer.

Covers exactly what the pipeline needs: 3D/4D single-file NIfTI-1
(.nii, optionally gzipped), datatypes uint8/int16/float32/float64 on
read, float32 on write. Data on disk is Fortran-ordered as the format
requires; gzip is detected by magic bytes, not filename.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cordscan.errors import CorruptHeader, IoFailure, UnsupportedFormat

HEADER_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"
_GZIP_MAGIC = b"\x1f\x8b"

# NIfTI-1 datatype codes we accept on read
_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32, 64: np.float64}
_DT_FLOAT32 = 16

_HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
])
assert _HEADER_DTYPE.itemsize == HEADER_SIZE


@dataclass
class Volume:
    """A 3D or 4D image on a regular grid.

    data: scalar per voxel, 4th axis = measurement index when present.
    voxel_size: edge lengths in mm.
    affine: voxel index -> world mm, last row (0, 0, 0, 1).
    """

    data: np.ndarray
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim not in (3, 4):
            raise ValueError(f"volume must be 3D or 4D, got {self.data.ndim}D")
        if any(d <= 0 for d in self.data.shape):
            raise ValueError(f"non-positive dimension in {self.data.shape}")
        self.voxel_size = tuple(float(v) for v in self.voxel_size)
        if len(self.voxel_size) != 3 or any(v <= 0 for v in self.voxel_size):
            raise ValueError(f"voxel_size must be 3 positive reals, got {self.voxel_size}")
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")
        if not np.array_equal(self.affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("affine last row must be (0, 0, 0, 1)")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def spatial_dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    def like(self, data: np.ndarray) -> "Volume":
        """New volume on the same grid."""
        return Volume(data, self.voxel_size, self.affine.copy())


def same_grid(a: Volume, b: Volume) -> bool:
    return a.spatial_dims == b.spatial_dims


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == _GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise CorruptHeader(f"{path}: bad gzip stream: {exc}") from exc
    return raw


def _affine_from_header(hdr) -> np.ndarray:
    if hdr["sform_code"] > 0:
        aff = np.eye(4)
        aff[0, :] = hdr["srow_x"]
        aff[1, :] = hdr["srow_y"]
        aff[2, :] = hdr["srow_z"]
        return aff
    pixdim = hdr["pixdim"]
    if hdr["qform_code"] > 0:
        b, c, d = float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])
        a = np.sqrt(max(0.0, 1.0 - b * b - c * c - d * d))
        R = np.array([
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ])
        qfac = -1.0 if pixdim[0] == -1.0 else 1.0
        aff = np.eye(4)
        aff[:3, :3] = R * np.array([pixdim[1], pixdim[2], qfac * pixdim[3]])
        aff[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
        return aff
    return np.diag([pixdim[1], pixdim[2], pixdim[3], 1.0]).astype(np.float64)


def read_volume(path) -> Volume:
    """Read a single-file NIfTI-1 volume, applying scl_slope/scl_inter.

    Raises UnsupportedFormat for non-NIfTI-1 input or a datatype outside
    {uint8, int16, float32, float64}, CorruptHeader for truncated or
    inconsistent files.
    """
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"no such file: {path}")
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise CorruptHeader(f"{path}: {len(raw)} bytes, header needs {HEADER_SIZE}")

    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_HEADER_DTYPE)[0]
    swapped = False
    if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
        hdr = np.frombuffer(raw[:HEADER_SIZE],
                            dtype=_HEADER_DTYPE.newbyteorder("S"))[0]
        swapped = True
        if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
            raise UnsupportedFormat(f"{path}: not a NIfTI-1 file (sizeof_hdr)")

    magic = bytes(hdr["magic"])[:3]  # numpy strips the trailing NUL
    if magic == _MAGIC_PAIR[:3]:
        raise UnsupportedFormat(f"{path}: two-file NIfTI-1 (.hdr/.img) not supported")
    if magic != _MAGIC_SINGLE[:3]:
        raise UnsupportedFormat(f"{path}: not a NIfTI-1 file (magic {magic!r})")

    dtcode = int(hdr["datatype"])
    if dtcode not in _DTYPES:
        raise UnsupportedFormat(f"{path}: datatype code {dtcode} not supported")
    dtype = np.dtype(_DTYPES[dtcode])
    if swapped:
        dtype = dtype.newbyteorder("S")

    ndim = int(hdr["dim"][0])
    if ndim not in (3, 4):
        raise UnsupportedFormat(f"{path}: {ndim}D image, need 3D or 4D")
    dims = tuple(int(d) for d in hdr["dim"][1:1 + ndim])
    if any(d <= 0 for d in dims):
        raise CorruptHeader(f"{path}: non-positive dim {dims}")

    pixdim = hdr["pixdim"]
    if any(pixdim[i] <= 0 for i in (1, 2, 3)):
        raise CorruptHeader(f"{path}: non-positive pixdim {tuple(pixdim[1:4])}")

    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise CorruptHeader(f"{path}: vox_offset {offset} inside header")
    nbytes = int(np.prod(dims)) * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise CorruptHeader(f"{path}: need {offset + nbytes} bytes, file has {len(raw)}")

    data = np.frombuffer(raw[offset:offset + nbytes], dtype=dtype)
    data = data.reshape(dims, order="F")
    if swapped:
        data = data.astype(dtype.newbyteorder("="))

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope != 0.0 and not (slope == 1.0 and inter == 0.0):
        data = data.astype(np.float64) * slope + inter

    affine = _affine_from_header(hdr)
    voxel_size = tuple(float(abs(pixdim[i])) for i in (1, 2, 3))
    return Volume(np.ascontiguousarray(data), voxel_size, affine)


def write_volume(v: Volume, path) -> None:
    """Write a volume as single-file NIfTI-1, float32 on disk.

    Gzip-compresses when the filename ends in .gz.
    """
    hdr = np.zeros((), dtype=_HEADER_DTYPE if np.little_endian
                   else _HEADER_DTYPE.newbyteorder("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dim = np.zeros(8, dtype=np.int16)
    dim[0] = v.data.ndim
    dim[1:1 + v.data.ndim] = v.data.shape
    dim[1 + v.data.ndim:] = 1
    hdr["dim"] = dim
    hdr["datatype"] = _DT_FLOAT32
    hdr["bitpix"] = 32
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = v.voxel_size
    if v.data.ndim == 4:
        pixdim[4] = 1.0
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = HEADER_SIZE + 4
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 10 if v.data.ndim == 4 else 2  # mm (+ sec for 4D)
    hdr["descrip"] = b"cordscan"
    hdr["qform_code"] = 0
    hdr["sform_code"] = 1
    hdr["srow_x"] = v.affine[0].astype(np.float32)
    hdr["srow_y"] = v.affine[1].astype(np.float32)
    hdr["srow_z"] = v.affine[2].astype(np.float32)
    hdr["magic"] = _MAGIC_SINGLE

    payload = np.asfortranarray(v.data.astype("<f4", copy=False)).tobytes(order="F")
    blob = hdr.tobytes() + b"\x00\x00\x00\x00" + payload

    path = Path(path)
    try:
        if path.name.endswith(".gz"):
            # mtime pinned so identical volumes give identical files
            blob = gzip.compress(blob, mtime=0)
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
