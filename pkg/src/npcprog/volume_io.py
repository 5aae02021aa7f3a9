"""Volume I/O: a NIfTI-1 subset, trilinear resampling, z-score normalization,
and JSON-lines dataset manifests.

Supported NIfTI files are uncompressed single-file .nii, little-endian,
NIfTI-1 (348-byte header, magic "n+1\\0"), 3-D only, datatypes uint8/int16/
float32. Orientation matrices (qform/sform) are ignored: axes are assumed
consistently ordered across a case. Spacing is interpreted in millimetres.

Volume data is stored as a C-contiguous float32 array indexed (x, y, z);
on disk the x index varies fastest, as NIfTI requires.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

# NIfTI-1 datatype codes accepted on read; writes are always float32.
_DTYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
_DT_FLOAT32 = 16


class MalformedHeader(ValueError):
    """Header is not a little-endian NIfTI-1 header this subset accepts."""


class UnsupportedDatatype(ValueError):
    """Datatype code outside {uint8, int16, float32}."""


class TruncatedData(ValueError):
    """Voxel payload shorter than dim product times element size."""


class ParseError(ValueError):
    """Manifest line is not a valid record; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"manifest line {line}: {message}")
        self.line = line


class DuplicateCaseId(ValueError):
    def __init__(self, case_id: str):
        super().__init__(f"duplicate case_id {case_id!r}")
        self.case_id = case_id


@dataclass(frozen=True)
class Volume:
    """3-D scalar voxel grid with physical spacing, immutable after construction."""

    data: np.ndarray                 # float32, shape (nx, ny, nz)
    spacing: tuple[float, float, float]  # mm per voxel

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if arr.ndim != 3 or any(n < 1 for n in arr.shape):
            raise ValueError(f"volume dims must be 3-D and >= 1, got {arr.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing components must be > 0, got {self.spacing}")
        if not np.isfinite(arr).all():
            raise ValueError("volume contains NaN/Inf voxels")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class StudyRecord:
    """One patient case: image paths and outcome labels."""

    case_id: str
    t1c_path: Path
    t2_path: Path
    mask_path: Path | None = None
    overall_stage: int | None = None  # class 0..3
    t_stage: int | None = None        # class 0..3
    progression_3yr: int = 0          # binary outcome label
    split_tag: str | None = None


def read_nifti(path) -> Volume:
    """Parse a NIfTI-1 file into a Volume.

    Raises MalformedHeader (size/magic/dim violations), UnsupportedDatatype,
    or TruncatedData. Integer payloads are scaled by scl_slope/scl_inter when
    scl_slope != 0 and converted to float32.
    """
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE + 4:
        raise MalformedHeader(f"{path}: file shorter than a NIfTI-1 header")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise MalformedHeader(f"{path}: sizeof_hdr {sizeof_hdr} != {HEADER_SIZE} "
                              "(not little-endian NIfTI-1)")
    magic = raw[344:348]
    if magic != MAGIC:
        raise MalformedHeader(f"{path}: magic {magic!r} != {MAGIC!r}")
    dim = struct.unpack_from("<8h", raw, 40)
    (datatype,) = struct.unpack_from("<h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)

    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"{path}: datatype code {datatype}")
    if dim[0] != 3:
        raise MalformedHeader(f"{path}: dim[0] {dim[0]} != 3 (only 3-D volumes)")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if min(nx, ny, nz) < 1:
        raise MalformedHeader(f"{path}: non-positive dims {(nx, ny, nz)}")
    spacing = pixdim[1:4]
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise MalformedHeader(f"{path}: non-positive pixdim {spacing}")

    offset = int(vox_offset)
    dtype = _DTYPES[datatype]
    nvox = nx * ny * nz
    payload = raw[offset:]
    if len(payload) < nvox * dtype.itemsize:
        raise TruncatedData(f"{path}: payload {len(payload)} bytes < "
                            f"{nvox * dtype.itemsize} required")
    flat = np.frombuffer(payload, dtype=dtype, count=nvox)
    data = flat.reshape((nx, ny, nz), order="F").astype(np.float32)
    if scl_slope != 0.0:
        data = data * np.float32(scl_slope) + np.float32(scl_inter)
    return Volume(data=data, spacing=spacing)


def write_nifti(vol: Volume, path) -> None:
    """Write a Volume as uncompressed little-endian NIfTI-1 float32.

    Layout: 348-byte header, 4-byte extension flag, payload at vox_offset 352.
    read_nifti(write_nifti(v)) reproduces data and spacing bit-exactly.
    Raises OSError on I/O failure.
    """
    nx, ny, nz = vol.dims
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, _DT_FLOAT32)
    struct.pack_into("<h", hdr, 72, 32)  # bitpix
    sx, sy, sz = vol.spacing
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 0.0, 0.0)  # scl_slope 0: no scaling on read
    hdr[344:348] = MAGIC
    payload = np.asfortranarray(vol.data).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(b"\x00\x00\x00\x00")  # no extensions
        fh.write(payload)


def resample_trilinear(vol: Volume, target_spacing) -> Volume:
    """Resample to a target physical spacing by trilinear interpolation.

    Voxel i sits at physical coordinate i * spacing along each axis. Output
    dims are max(1, round(n * s / t)) per axis (round half up). Samples
    outside the input grid clamp to the nearest border voxel, so outputs are
    convex combinations of input voxels.
    """
    target = tuple(float(t) for t in target_spacing)
    if any(t <= 0 for t in target):
        raise ValueError(f"target spacing must be > 0, got {target}")
    data = vol.data.astype(np.float64)
    out_dims = tuple(max(1, int(np.floor(n * s / t + 0.5)))
                     for n, s, t in zip(vol.dims, vol.spacing, target))
    for axis in range(3):
        n_in = data.shape[axis]
        coords = np.arange(out_dims[axis]) * target[axis] / vol.spacing[axis]
        coords = np.clip(coords, 0.0, n_in - 1)
        lo = np.floor(coords).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = coords - lo
        shape = [1, 1, 1]
        shape[axis] = -1
        frac = frac.reshape(shape)
        data = (np.take(data, lo, axis=axis) * (1.0 - frac)
                + np.take(data, hi, axis=axis) * frac)
    return Volume(data=data.astype(np.float32), spacing=target)


def normalize_zscore(vol: Volume) -> Volume:
    """Standardize to mean 0 / population std 1 over all voxels.

    Inputs with std below 1e-8 come back as all zeros.
    """
    data = vol.data.astype(np.float64)
    mu = data.mean()
    sigma = data.std()
    if sigma < 1e-8:
        out = np.zeros_like(vol.data)
    else:
        out = ((data - mu) / sigma).astype(np.float32)
    return Volume(data=out, spacing=vol.spacing)


_REQUIRED_KEYS = {"case_id", "t1c", "t2", "progression"}
_OPTIONAL_KEYS = {"mask", "overall_stage", "t_stage", "split_tag"}


def load_manifest(path) -> list[StudyRecord]:
    """Load a JSON-lines manifest into StudyRecords, in file order.

    Relative image paths are resolved against the manifest's directory.
    Raises ParseError with the offending 1-based line number, or
    DuplicateCaseId.
    """
    path = Path(path)
    base = path.parent
    records: list[StudyRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ParseError(lineno, "record is not a JSON object")
            missing = _REQUIRED_KEYS - obj.keys()
            if missing:
                raise ParseError(lineno, f"missing required key(s) {sorted(missing)}")
            unknown = obj.keys() - _REQUIRED_KEYS - _OPTIONAL_KEYS
            if unknown:
                raise ParseError(lineno, f"unknown key(s) {sorted(unknown)}")
            case_id = obj["case_id"]
            if not isinstance(case_id, str) or not case_id:
                raise ParseError(lineno, "case_id must be a non-empty string")
            if case_id in seen:
                raise DuplicateCaseId(case_id)
            seen.add(case_id)
            progression = obj["progression"]
            if progression not in (0, 1):
                raise ParseError(lineno, f"progression must be 0/1, got {progression!r}")
            stages = {}
            for key in ("overall_stage", "t_stage"):
                value = obj.get(key)
                if value is not None and (not isinstance(value, int)
                                          or not 0 <= value <= 3):
                    raise ParseError(lineno, f"{key} must be an int in 0..3, "
                                             f"got {value!r}")
                stages[key] = value

            def _resolve(p):
                p = Path(p)
                return p if p.is_absolute() else base / p

            records.append(StudyRecord(
                case_id=case_id,
                t1c_path=_resolve(obj["t1c"]),
                t2_path=_resolve(obj["t2"]),
                mask_path=_resolve(obj["mask"]) if obj.get("mask") else None,
                overall_stage=stages["overall_stage"],
                t_stage=stages["t_stage"],
                progression_3yr=int(progression),
                split_tag=obj.get("split_tag"),
            ))
    return records


def write_manifest(records: list[StudyRecord], path) -> Path:
    """Write records as JSON-lines; image paths are stored relative to the
    manifest directory when they live under it."""
    path = Path(path)
    base = path.parent

    def _rel(p: Path | None):
        if p is None:
            return None
        p = Path(p)
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"case_id": rec.case_id, "t1c": _rel(rec.t1c_path),
                   "t2": _rel(rec.t2_path)}
            if rec.mask_path is not None:
                obj["mask"] = _rel(rec.mask_path)
            if rec.overall_stage is not None:
                obj["overall_stage"] = rec.overall_stage
            if rec.t_stage is not None:
                obj["t_stage"] = rec.t_stage
            obj["progression"] = rec.progression_3yr
            if rec.split_tag is not None:
                obj["split_tag"] = rec.split_tag
            fh.write(json.dumps(obj) + "\n")
    return path
