"""Volume container I/O.

Native format: a text header ``<base>.hdr`` plus raw little-endian IEEE-754
binary ``<base>.raw`` in row-major order (x1 outermost).  Vector fields store
three concatenated component blocks.  Label maps are stored as integer-valued
float32.

A read-only subset of NIfTI-1 (single file, datatypes uint8/int16/float32,
voxel extraction only, no affine) is accepted for importing real volumes.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import VolumeIOError
from .grid import Grid, LabelMap, ScalarField, VectorField

LAYOUT_TAG = "row-major-x1-outer"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def _base_path(path) -> Path:
    p = Path(path)
    if p.suffix in (".hdr", ".raw"):
        return p.with_suffix("")
    return p


def save_volume(path, field) -> Path:
    """Write a ScalarField, VectorField, or LabelMap; returns the header path."""
    base = _base_path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(field, ScalarField):
        kind, data = "scalar", field.values
    elif isinstance(field, VectorField):
        kind, data = "vector", field.data
    elif isinstance(field, LabelMap):
        kind, data = "labels", field.labels.astype(np.float32)
    else:
        raise TypeError(f"cannot save {type(field).__name__}")
    dtype = np.dtype(data.dtype)
    if dtype not in _TAGS:
        data = data.astype(np.float64)
        dtype = np.dtype(np.float64)
    tag = _TAGS[dtype]
    dims = field.grid.dims
    hdr = base.with_suffix(".hdr")
    raw = base.with_suffix(".raw")
    with open(hdr, "w") as fh:
        fh.write(f"dims: {dims[0]} {dims[1]} {dims[2]}\n")
        fh.write(f"dtype: {tag}\n")
        fh.write(f"kind: {kind}\n")
        fh.write(f"layout: {LAYOUT_TAG}\n")
    with open(raw, "wb") as fh:
        fh.write(np.ascontiguousarray(data, dtype=dtype.newbyteorder("<")).tobytes())
    return hdr


def load_volume(path):
    """Read a volume written by save_volume; the kind tag selects the type."""
    base = _base_path(path)
    hdr = base.with_suffix(".hdr")
    raw = base.with_suffix(".raw")
    if not hdr.exists() or not raw.exists():
        raise VolumeIOError(f"cannot open volume '{base}' (missing .hdr or .raw)")
    meta = {}
    for line in hdr.read_text().splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    try:
        dims = tuple(int(t) for t in meta["dims"].split())
        tag = meta["dtype"]
        kind = meta["kind"]
        layout = meta["layout"]
    except KeyError as exc:
        raise VolumeIOError(f"header {hdr} missing field {exc}") from exc
    if layout != LAYOUT_TAG:
        raise VolumeIOError(f"unsupported layout tag '{layout}'")
    if tag not in _DTYPES:
        raise VolumeIOError(f"unsupported dtype tag '{tag}'")
    grid = Grid(dims)
    count = grid.num_voxels * (3 if kind == "vector" else 1)
    data = np.fromfile(raw, dtype=_DTYPES[tag])
    if data.size != count:
        raise VolumeIOError(
            f"{raw} holds {data.size} samples, expected {count} for dims {dims} kind {kind}"
        )
    data = data.astype(data.dtype.newbyteorder("="))
    if kind == "scalar":
        return ScalarField(grid, data.reshape(dims))
    if kind == "vector":
        return VectorField(grid, data.reshape((3,) + dims))
    if kind == "labels":
        return LabelMap(grid, np.rint(data.reshape(dims)).astype(np.int32))
    raise VolumeIOError(f"unsupported kind tag '{kind}'")


_NIFTI_DTYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}


def load_nifti(path, as_labels: bool = False, dtype=np.float64):
    """Import a single-file NIfTI-1 volume (voxel data only)."""
    p = Path(path)
    if not p.exists():
        raise VolumeIOError(f"cannot open volume '{p}'")
    opener = gzip.open if p.suffix == ".gz" else open
    with opener(p, "rb") as fh:
        blob = fh.read()
    if len(blob) < 352:
        raise VolumeIOError(f"{p} is too short to be a NIfTI-1 file")
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr != 348:
        raise VolumeIOError(f"{p}: bad NIfTI-1 header size {sizeof_hdr}")
    magic = blob[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise VolumeIOError(f"{p}: bad NIfTI magic {magic!r}")
    if magic == b"ni1\x00":
        raise VolumeIOError(f"{p}: two-file NIfTI (.hdr/.img) is not supported")
    dim = struct.unpack_from("<8h", blob, 40)
    (datatype,) = struct.unpack_from("<h", blob, 70)
    (vox_offset,) = struct.unpack_from("<f", blob, 108)
    if dim[0] < 3 or any(d != 1 for d in dim[4 : dim[0] + 1]):
        raise VolumeIOError(f"{p}: only 3D volumes are supported, dim={dim}")
    dims = tuple(int(d) for d in dim[1:4])
    if datatype not in _NIFTI_DTYPES:
        raise VolumeIOError(f"{p}: unsupported NIfTI datatype code {datatype}")
    raw_dtype = _NIFTI_DTYPES[datatype]
    offset = int(vox_offset)
    count = dims[0] * dims[1] * dims[2]
    data = np.frombuffer(blob, dtype=raw_dtype, count=count, offset=offset)
    # NIfTI stores i fastest; remap so voxel (i,j,k) lands at values[i,j,k].
    values = np.ascontiguousarray(data.reshape(dims, order="F"))
    grid = Grid(dims)
    if as_labels:
        return LabelMap(grid, np.rint(values).astype(np.int32))
    return ScalarField(grid, values.astype(dtype))
