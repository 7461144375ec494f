import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from voxbag.errors import (
    DataError, NiftiHeaderSizeError, NiftiMagicError, TruncatedDataError, UnsupportedDatatypeError,
)
from voxbag.volume import (
    DatasetManifest, ManifestRecord, Volume, axial_slice_indices, extract_axial_slices,
    intensity_normalize, parse_header, read_manifest, read_nifti, resample_trilinear,
    split_dataset, write_manifest, write_nifti,
)


def raw_header(dims, datatype, bitpix, pixdim=(1, 1, 1), slope=0.0, inter=0.0, order="<",
               magic=b"n+1\x00", vox_offset=352.0, sizeof_hdr=348):
    """Header assembled field by field at the offsets of the NIfTI-1 layout."""
    h = bytearray(348)
    struct.pack_into(order + "i", h, 0, sizeof_hdr)
    dim = [len(dims), *dims] + [1] * (7 - len(dims))
    struct.pack_into(order + "8h", h, 40, *dim)
    struct.pack_into(order + "h", h, 70, datatype)
    struct.pack_into(order + "h", h, 72, bitpix)
    struct.pack_into(order + "8f", h, 76, 1.0, *pixdim, 1, 1, 1, 1)
    struct.pack_into(order + "f", h, 108, vox_offset)
    struct.pack_into(order + "f", h, 112, slope)
    struct.pack_into(order + "f", h, 116, inter)
    h[344:348] = magic
    return bytes(h)


def test_hand_assembled_header(tmp_path):
    data = np.arange(8, dtype="<f4")
    p = tmp_path / "h.nii"
    p.write_bytes(raw_header((2, 2, 2), 16, 32) + b"\0" * 4 + data.tobytes())
    hdr, vol = read_nifti(p)
    assert list(hdr.dim[1:4]) == [2, 2, 2]
    assert vol.shape == (2, 2, 2)
    # x runs fastest on disk
    assert vol.data[0, 0, 1] == 1 and vol.data[0, 1, 0] == 2 and vol.data[1, 0, 0] == 4


def test_big_endian_header(tmp_path):
    data = np.arange(6, dtype=">f4")
    p = tmp_path / "be.nii"
    p.write_bytes(raw_header((3, 2, 1), 16, 32, order=">") + b"\0" * 4 + data.tobytes())
    hdr, vol = read_nifti(p)
    assert hdr.byte_order == ">"
    assert vol.shape == (1, 2, 3)
    np.testing.assert_array_equal(vol.data.ravel(), np.arange(6))


def test_int16_rescale(tmp_path):
    p = tmp_path / "i16.nii"
    p.write_bytes(raw_header((1, 1, 1), 4, 16, slope=2.0, inter=1.0) + b"\0" * 4 + struct.pack("<h", 3))
    _, vol = read_nifti(p)
    assert vol.data.item() == 7.0


def test_header_errors(tmp_path):
    good = raw_header((2, 2, 2), 16, 32) + b"\0" * 4 + b"\0" * 32
    with pytest.raises(NiftiMagicError):
        parse_header(raw_header((2, 2, 2), 16, 32, magic=b"ni1\x00"))
    with pytest.raises(NiftiHeaderSizeError):
        parse_header(raw_header((2, 2, 2), 16, 32, sizeof_hdr=540))
    with pytest.raises(TruncatedDataError):
        parse_header(good[:100])
    p = tmp_path / "short.nii"
    p.write_bytes(good[:-4])
    with pytest.raises(TruncatedDataError):
        read_nifti(p)
    p.write_bytes(raw_header((2, 2, 2), 2, 8) + b"\0" * 12)
    with pytest.raises(UnsupportedDatatypeError):
        read_nifti(p)


def test_roundtrip_small(tmp_path, rng):
    vol = Volume(rng.standard_normal((4, 4, 4)).astype(np.float32))
    write_nifti(vol, tmp_path / "a.nii")
    assert read_nifti(tmp_path / "a.nii")[1] == vol


def test_zero_volume_file_size(tmp_path):
    write_nifti(Volume(np.zeros((2, 2, 2))), tmp_path / "z.nii")
    assert (tmp_path / "z.nii").stat().st_size == 352 + 32


def test_roundtrip_random_8_bit_exact(tmp_path, rng):
    vol = Volume(rng.standard_normal((8, 8, 8)).astype(np.float32) * 1e3)
    write_nifti(vol, tmp_path / "b.nii.gz")
    back = read_nifti(tmp_path / "b.nii.gz")[1]
    assert back.data.tobytes() == vol.data.tobytes()
    # gzip output carries no timestamp
    with gzip.open(tmp_path / "b.nii.gz") as fh:
        assert len(fh.read()) == 352 + 8 ** 3 * 4


def test_anisotropic_spacing_survives(tmp_path):
    vol = Volume(np.ones((3, 4, 5)), spacing_mm=(4.0, 1.0, 1.0))
    write_nifti(vol, tmp_path / "s.nii")
    hdr, back = read_nifti(tmp_path / "s.nii")
    assert back.spacing_mm == (4.0, 1.0, 1.0)
    assert hdr.pixdim[1:4] == (1.0, 1.0, 4.0)


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_write_read_identity(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("rt") / "v.nii"
    write_nifti(Volume(data), p)
    assert read_nifti(p)[1].data.tobytes() == data.tobytes()


def test_normalize_three_points():
    vol, flag = intensity_normalize(Volume(np.array([2, 4, 6], np.float32).reshape(3, 1, 1)))
    np.testing.assert_allclose(vol.data.ravel(), [-1.2247, 0, 1.2247], atol=1e-4)
    assert not flag


def test_normalize_constant():
    vol, flag = intensity_normalize(Volume(np.full((3, 3, 3), 5.0)))
    assert flag and not vol.data.any()


def test_normalize_two_pass(rng):
    x = rng.standard_normal((16, 16, 16)) * 7 + 3
    vol, _ = intensity_normalize(Volume(x))
    v = [float(a) for a in vol.data.ravel()]
    m = sum(v) / len(v)
    sd = (sum((a - m) ** 2 for a in v) / len(v)) ** 0.5
    assert abs(m) <= 1e-5
    assert abs(sd - 1) <= 1e-4


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float32, (4, 4, 4), elements=st.floats(-100, 100, width=32)))
def test_normalize_idempotent(data):
    once, flag = intensity_normalize(Volume(data))
    if flag:
        return
    twice, _ = intensity_normalize(once)
    assert np.max(np.abs(twice.data - once.data)) <= 1e-4


def test_slice_indices():
    assert axial_slice_indices(10, 1) == [4]
    assert axial_slice_indices(9, 5) == [2, 3, 4, 5, 6]
    assert 300 * len(axial_slice_indices(32, 5)) == 1500
    with pytest.raises(DataError):
        axial_slice_indices(3, 4)


@given(st.integers(1, 64), st.data())
def test_slice_indices_in_range_and_distinct(depth, data):
    k = data.draw(st.integers(1, depth))
    idx = axial_slice_indices(depth, k)
    assert len(set(idx)) == k and idx == sorted(idx)
    assert 0 <= idx[0] and idx[-1] < depth


def test_slices_are_copies(rng):
    vol = Volume(rng.standard_normal((12, 4, 5)))
    slices = extract_axial_slices(vol, 5)
    for s, i in zip(slices, axial_slice_indices(12, 5)):
        assert s.tobytes() == vol.data[i].tobytes()
    slices[0][:] = 99
    assert not (vol.data == 99).any()


def test_resample_constant_and_ramp():
    out = resample_trilinear(Volume(np.full((8, 8, 8), 2.5)), (5, 5, 5))
    assert out.shape == (5, 5, 5) and np.all(out.data == 2.5)
    ramp = Volume(np.array([0.0, 1.0]).reshape(1, 1, 2))
    np.testing.assert_allclose(resample_trilinear(ramp, (1, 1, 3)).data.ravel(), [0, 0.5, 1])


def test_resample_per_voxel_oracle(rng):
    src = rng.standard_normal((6, 6, 6))
    out = resample_trilinear(Volume(src), (4, 4, 4)).data
    scale = 5 / 3
    for idx in np.ndindex(4, 4, 4):
        pos = [i * scale for i in idx]
        lo = [min(int(np.floor(p)), 5) for p in pos]
        acc = 0.0
        for corner in np.ndindex(2, 2, 2):
            w, at = 1.0, []
            for p, l, c in zip(pos, lo, corner):
                f = p - l
                w *= f if c else 1 - f
                at.append(min(l + c, 5))
            acc += w * src[tuple(at)]
        assert out[idx] == pytest.approx(acc, abs=1e-5)


def test_resample_spacing():
    out = resample_trilinear(Volume(np.zeros((9, 5, 5)), (1.0, 2.0, 2.0)), (5, 9, 5))
    assert out.spacing_mm == (2.0, 1.0, 2.0)


def _manifest(n0, n1):
    recs = [ManifestRecord(f"s{i:03d}", f"v{i}.nii", 0 if i < n0 else 1, 2000, 30, 9, 4)
            for i in range(n0 + n1)]
    return DatasetManifest(tuple(recs))


def test_split_counts():
    train, test = split_dataset(_manifest(300, 300), 0.7, seed=1)
    assert (train.labels() == 0).sum() == 210 and (train.labels() == 1).sum() == 210
    assert (test.labels() == 0).sum() == 90 and (test.labels() == 1).sum() == 90
    train, test = split_dataset(_manifest(10, 10), 0.7)
    assert len(train) == 14 and len(test) == 6


def test_split_deterministic():
    a = split_dataset(_manifest(20, 15), 0.7, seed=3)
    b = split_dataset(_manifest(20, 15), 0.7, seed=3)
    assert a == b


def test_split_needs_two_per_class():
    with pytest.raises(DataError):
        split_dataset(_manifest(5, 1))


@settings(max_examples=40)
@given(st.integers(2, 40), st.integers(2, 40), st.floats(0.1, 0.9), st.integers(0, 2 ** 32))
def test_split_partition_properties(n0, n1, frac, seed):
    m = _manifest(n0, n1)
    train, test = split_dataset(m, frac, seed)
    tr = {r.subject_id for r in train}
    te = {r.subject_id for r in test}
    assert not tr & te
    assert tr | te == {r.subject_id for r in m}
    for cls, n in ((0, n0), (1, n1)):
        assert (train.labels() == cls).sum() == int(np.floor(frac * n + 0.5))


def test_manifest_roundtrip(tmp_path):
    m = _manifest(2, 3)
    write_manifest(m, tmp_path / "m.csv")
    back = read_manifest(tmp_path / "m.csv")
    assert back.records == m.records
    assert (tmp_path / "m.csv").read_text().splitlines()[1] == "s000,v0.nii,CN,2000,30,9,4"


def test_manifest_rejects_bad_rows(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("subject_id,path,label\ns1,a.nii,CN\n")
    with pytest.raises(DataError):
        read_manifest(p)
    p.write_text("subject_id,path,label,tr_ms,te_ms,flip_angle_deg,slice_thickness_mm\ns1,a.nii,XX,,,,\n")
    with pytest.raises(DataError):
        read_manifest(p)
    with pytest.raises(DataError):
        DatasetManifest((ManifestRecord("a", "x", 0), ManifestRecord("a", "y", 1)))
