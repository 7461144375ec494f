"""Volumes on disk and in memory.

NIfTI-1 single-file reading and writing, the subject manifest CSV,
per-scan intensity normalization, axial slice extraction, trilinear
resampling and the stratified train/test split.

Volume data is held as ``(depth, height, width)``, which is the NIfTI
``(k, j, i)`` index order, so the voxel block maps onto a C-ordered array
without transposition. ``spacing_mm`` follows the same axis order.
"""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    NiftiError,
    NiftiHeaderSizeError,
    NiftiMagicError,
    TruncatedDataError,
    UnsupportedDatatypeError,
)

HEADER_SIZE = 348
WRITE_VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"

# Field order of the 348-byte NIfTI-1 header.
_HEADER_FMT = "i10s18sihcB8h3f4h8f3fhBB4f2i80s24s2h6f4f4f4f16s4s"
_HEADER_FIELDS = (
    "sizeof_hdr", "data_type", "db_name", "extents", "session_error", "regular",
    "dim_info", *(f"dim{i}" for i in range(8)), "intent_p1", "intent_p2",
    "intent_p3", "intent_code", "datatype", "bitpix", "slice_start",
    *(f"pixdim{i}" for i in range(8)), "vox_offset", "scl_slope", "scl_inter",
    "slice_end", "slice_code", "xyzt_units", "cal_max", "cal_min",
    "slice_duration", "toffset", "glmax", "glmin", "descrip", "aux_file",
    "qform_code", "sform_code", "quatern_b", "quatern_c", "quatern_d",
    "qoffset_x", "qoffset_y", "qoffset_z", *(f"srow_x{i}" for i in range(4)),
    *(f"srow_y{i}" for i in range(4)), *(f"srow_z{i}" for i in range(4)),
    "intent_name", "magic",
)
assert struct.calcsize("<" + _HEADER_FMT) == HEADER_SIZE

DATATYPES = {4: np.dtype(np.int16), 16: np.dtype(np.float32), 64: np.dtype(np.float64)}

CN, SCZ = 0, 1
LABEL_NAMES = {CN: "CN", SCZ: "SCZ"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}
MANIFEST_COLUMNS = (
    "subject_id", "path", "label", "tr_ms", "te_ms", "flip_angle_deg", "slice_thickness_mm",
)


@dataclass(frozen=True)
class NiftiHeader:
    dim: tuple
    datatype: int
    pixdim: tuple
    vox_offset: float
    scl_slope: float
    scl_inter: float
    srow_x: tuple
    srow_y: tuple
    srow_z: tuple
    byte_order: str = "<"

    @property
    def shape(self) -> tuple:
        """Data extents as ``(depth, height, width)``."""
        nx, ny = self.dim[1], self.dim[2]
        nz = self.dim[3] if self.dim[0] >= 3 else 1
        return (nz, ny, nx)


@dataclass(frozen=True, eq=False)
class Volume:
    data: np.ndarray
    spacing_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise DataError(f"volume data must be rank 3, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.spacing_mm == other.spacing_mm
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True)
class LabeledSample:
    data: np.ndarray
    label: int
    subject_id: str


def _open(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode) if "r" in mode else gzip.GzipFile(path, mode, mtime=0)
    return open(path, mode)


def parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedDataError(f"header truncated: {len(raw)} of {HEADER_SIZE} bytes")
    order = "<"
    dim0 = struct.unpack_from("<h", raw, 40)[0]
    if not 1 <= dim0 <= 7:
        order = ">"
        dim0 = struct.unpack_from(">h", raw, 40)[0]
    values = dict(zip(_HEADER_FIELDS, struct.unpack(order + _HEADER_FMT, raw[:HEADER_SIZE])))
    if values["sizeof_hdr"] != HEADER_SIZE:
        raise NiftiHeaderSizeError(f"sizeof_hdr is {values['sizeof_hdr']}, expected {HEADER_SIZE}")
    if values["magic"] != MAGIC_SINGLE:
        raise NiftiMagicError(f"magic {values['magic']!r} is not single-file NIfTI-1 {MAGIC_SINGLE!r}")
    dim = tuple(values[f"dim{i}"] for i in range(8))
    if dim[0] not in (2, 3):
        raise NiftiError(f"dim[0]={dim[0]}; only 2D and 3D volumes are supported")
    if any(d < 1 for d in dim[1:dim[0] + 1]):
        raise NiftiError(f"non-positive extent in dim {dim}")
    return NiftiHeader(
        dim=dim,
        datatype=values["datatype"],
        pixdim=tuple(values[f"pixdim{i}"] for i in range(8)),
        vox_offset=values["vox_offset"],
        scl_slope=values["scl_slope"],
        scl_inter=values["scl_inter"],
        srow_x=tuple(values[f"srow_x{i}"] for i in range(4)),
        srow_y=tuple(values[f"srow_y{i}"] for i in range(4)),
        srow_z=tuple(values[f"srow_z{i}"] for i in range(4)),
        byte_order=order,
    )


def read_nifti(path) -> tuple[NiftiHeader, Volume]:
    path = Path(path)
    with _open(path, "rb") as fh:
        raw = fh.read()
    hdr = parse_header(raw)
    if hdr.datatype not in DATATYPES:
        raise UnsupportedDatatypeError(f"datatype code {hdr.datatype} is not one of {sorted(DATATYPES)}")
    dtype = DATATYPES[hdr.datatype].newbyteorder(hdr.byte_order)
    shape = hdr.shape
    offset = int(hdr.vox_offset)
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if offset < HEADER_SIZE or len(raw) < offset + nbytes:
        raise TruncatedDataError(
            f"{path}: data section needs {nbytes} bytes at offset {offset}, file has {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape)
    slope, inter = hdr.scl_slope, hdr.scl_inter
    if slope != 0 and not (slope == 1 and inter == 0):
        data = data.astype(np.float64) * slope + inter
    data = data.astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite intensities")
    spacing = tuple(abs(float(p)) or 1.0 for p in (hdr.pixdim[3], hdr.pixdim[2], hdr.pixdim[1]))
    if hdr.dim[0] == 2:
        spacing = (1.0, spacing[1], spacing[2])
    return hdr, Volume(data, spacing)


def build_header(volume: Volume) -> bytes:
    nz, ny, nx = volume.shape
    sz, sy, sx = volume.spacing_mm
    values = dict.fromkeys(_HEADER_FIELDS, 0)
    values.update(
        sizeof_hdr=HEADER_SIZE, data_type=b"", db_name=b"", regular=b"r",
        dim0=3, dim1=nx, dim2=ny, dim3=nz, dim4=1, dim5=1, dim6=1, dim7=1,
        datatype=16, bitpix=32,
        pixdim0=1.0, pixdim1=sx, pixdim2=sy, pixdim3=sz, pixdim4=1.0,
        vox_offset=float(WRITE_VOX_OFFSET), scl_slope=1.0, scl_inter=0.0,
        xyzt_units=2, descrip=b"voxbag", aux_file=b"", sform_code=1,
        srow_x0=sx, srow_y1=sy, srow_z2=sz, intent_name=b"", magic=MAGIC_SINGLE,
    )
    for i in range(5, 8):
        values[f"pixdim{i}"] = 1.0
    return struct.pack("<" + _HEADER_FMT, *(values[name] for name in _HEADER_FIELDS))


def write_nifti(volume: Volume, path) -> None:
    """Write a single-file little-endian float32 ``.nii`` (``.nii.gz`` if so named)."""
    path = Path(path)
    payload = build_header(volume) + b"\x00" * (WRITE_VOX_OFFSET - HEADER_SIZE)
    payload += volume.data.astype("<f4").tobytes()
    with _open(path, "wb") as fh:
        fh.write(payload)


def intensity_normalize(volume: Volume) -> tuple[Volume, bool]:
    """Zero-mean, unit-variance rescale of one scan.

    Returns ``(normalized, degenerate)``. A (near-)constant scan maps to
    zeros with ``degenerate`` set.
    """
    x = volume.data.astype(np.float64)
    mu = x.mean()
    sd = math.sqrt(((x - mu) ** 2).mean())
    if sd < 1e-8:
        return replace(volume, data=np.zeros_like(volume.data)), True
    return replace(volume, data=((x - mu) / sd).astype(np.float32)), False


def axial_slice_indices(depth: int, k: int) -> list[int]:
    """Depth indices of ``k`` evenly spaced slices around the middle.

    The step is ``depth // (k + 1)`` (at least 1) and the run is centred on
    ``(depth - 1) // 2``, shifted inward if it would leave the volume.
    """
    if not 1 <= k <= depth:
        raise DataError(f"cannot take {k} slices from depth {depth}")
    step = max(1, depth // (k + 1))
    span = (k - 1) * step
    start = (depth - 1) // 2 - span // 2
    start = min(max(start, 0), depth - 1 - span)
    return [start + i * step for i in range(k)]


def extract_axial_slices(volume: Volume, k: int) -> list[np.ndarray]:
    return [volume.data[i].copy() for i in axial_slice_indices(volume.shape[0], k)]


def _interp_axis(x: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = x.shape[axis]
    if n_out == n_in:
        return x
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    shape = [1] * x.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return np.take(x, lo, axis=axis) * (1.0 - frac) + np.take(x, hi, axis=axis) * frac


def resample_trilinear(volume: Volume, dims: Sequence[int]) -> Volume:
    """Align-corners trilinear resampling to ``dims`` (depth, height, width)."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise DataError(f"target dims must be three positive extents, got {dims}")
    x = volume.data.astype(np.float64)
    for axis, n in enumerate(dims):
        x = _interp_axis(x, axis, n)
    spacing = []
    for s, n_in, n_out in zip(volume.spacing_mm, volume.shape, dims):
        if n_in > 1 and n_out > 1:
            spacing.append(s * (n_in - 1) / (n_out - 1))
        else:
            spacing.append(s * n_in / n_out)
    return Volume(x.astype(np.float32), tuple(spacing))


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    subject_id: str
    path: str
    label: int
    tr_ms: Optional[float] = None
    te_ms: Optional[float] = None
    flip_angle_deg: Optional[float] = None
    slice_thickness_mm: Optional[float] = None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    root: Path = field(default=Path("."))

    def __post_init__(self):
        records = tuple(self.records)
        ids = [r.subject_id for r in records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate subject ids: {dupes}")
        for r in records:
            if r.label not in LABEL_NAMES:
                raise DataError(f"{r.subject_id}: label {r.label!r} is not CN(0) or SCZ(1)")
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "root", Path(self.root))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, record: ManifestRecord) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.root / p

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def subset(self, subject_ids) -> "DatasetManifest":
        keep = set(subject_ids)
        return DatasetManifest(tuple(r for r in self.records if r.subject_id in keep), self.root)


def _opt_float(text: str) -> Optional[float]:
    text = text.strip()
    return float(text) if text else None


def _fmt_opt(value: Optional[float]) -> str:
    return "" if value is None else format(value, "g")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise DataError(f"{path}: manifest header must be {','.join(MANIFEST_COLUMNS)}")
        records = []
        for row in reader:
            label = row["label"].strip()
            if label not in LABEL_CODES:
                raise DataError(f"{path}: label {label!r} must be CN or SCZ")
            try:
                records.append(ManifestRecord(
                    subject_id=row["subject_id"].strip(),
                    path=row["path"].strip(),
                    label=LABEL_CODES[label],
                    tr_ms=_opt_float(row["tr_ms"]),
                    te_ms=_opt_float(row["te_ms"]),
                    flip_angle_deg=_opt_float(row["flip_angle_deg"]),
                    slice_thickness_mm=_opt_float(row["slice_thickness_mm"]),
                ))
            except ValueError as exc:
                raise DataError(f"{path}: bad numeric field in row {row}: {exc}") from exc
    return DatasetManifest(tuple(records), path.parent)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            writer.writerow([
                r.subject_id, r.path, LABEL_NAMES[r.label], _fmt_opt(r.tr_ms),
                _fmt_opt(r.te_ms), _fmt_opt(r.flip_angle_deg), _fmt_opt(r.slice_thickness_mm),
            ])


def split_dataset(manifest: DatasetManifest, train_fraction: float = 0.70, seed: int = 0):
    """Stratified, seeded split into ``(train, test)`` manifests.

    Each class contributes ``round(train_fraction * count)`` records to the
    training side (halves round up). Both outputs keep manifest order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    labels = manifest.labels()
    train_idx = []
    for cls in sorted(LABEL_NAMES):
        members = np.flatnonzero(labels == cls)
        if len(members) < 2:
            raise DataError(f"class {LABEL_NAMES[cls]} has {len(members)} records; need at least 2")
        n_train = int(math.floor(train_fraction * len(members) + 0.5))
        train_idx.extend(rng.permutation(members)[:n_train].tolist())
    chosen = set(train_idx)
    train = tuple(r for i, r in enumerate(manifest.records) if i in chosen)
    test = tuple(r for i, r in enumerate(manifest.records) if i not in chosen)
    return DatasetManifest(train, manifest.root), DatasetManifest(test, manifest.root)
