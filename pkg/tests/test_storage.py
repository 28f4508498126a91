import json

import numpy as np
import pytest

from csfnet.data import generate, split
from csfnet.storage import FormatError, decode_tensor, encode_tensor, read_dataset, read_tensor, write_dataset


@pytest.fixture
def written(tmp_path):
    cases = generate(12, seed=5)
    splits = split(cases, (0.5, 0.25, 0.25), seed=5)
    manifest = tmp_path / "ds" / "manifest.json"
    write_dataset(cases, manifest, splits=splits, seed=5)
    return cases, splits, manifest


def test_tensor_round_trip_bit_exact():
    for dtype in (np.float32, np.float64):
        arr = np.random.default_rng(0).normal(size=(2, 3, 4)).astype(dtype)
        out = decode_tensor(encode_tensor(arr))
        assert out.dtype == dtype and out.tobytes() == arr.tobytes()


def test_tensor_header_layout():
    blob = encode_tensor(np.zeros((1, 2, 3), dtype=np.float32))
    assert blob[:4] == b"CSFV" and blob[4] == 1 and blob[5] == 1 and blob[6:16] == bytes(10)
    assert np.frombuffer(blob[16:28], "<u4").tolist() == [1, 2, 3]
    assert len(blob) == 16 + 12 + 6 * 4 + 4


def test_tensor_corruption_detected():
    blob = bytearray(encode_tensor(np.ones((2, 2, 2), dtype=np.float32)))
    blob[30] ^= 0xFF
    with pytest.raises(FormatError, match="CRC|checksum"):
        decode_tensor(bytes(blob))
    with pytest.raises(FormatError, match="truncated|payload has"):
        decode_tensor(bytes(blob[:-6]))
    with pytest.raises(FormatError, match="magic"):
        decode_tensor(b"XXXX" + bytes(blob[4:]))


def test_dataset_round_trip(written):
    cases, splits, manifest = written
    ds = read_dataset(manifest)
    assert ds.cases == cases
    for a, b in zip(ds.cases, cases):
        assert a.t0_volume.tobytes() == b.t0_volume.tobytes()
        assert a.t1_volume.tobytes() == b.t1_volume.tobytes()
    assert {k: sorted(v) for k, v in ds.splits.items()} == {k: sorted(v) for k, v in splits.items()}
    assert ds.seed == 5
    doc = json.loads(manifest.read_text())
    assert doc["n_cases"] == 12 and doc["volume_shape"] == [8, 16, 16]
    assert all(not e["t0"].startswith("/") for e in doc["cases"])


def test_rewrite_is_byte_identical(written, tmp_path):
    cases, splits, manifest = written
    other = tmp_path / "again" / "manifest.json"
    write_dataset(cases, other, splits=splits, seed=5)
    assert other.read_bytes() == manifest.read_bytes()
    for f in (manifest.parent / "volumes").iterdir():
        assert (other.parent / "volumes" / f.name).read_bytes() == f.read_bytes()


def test_truncated_volume_names_case(written):
    cases, _, manifest = written
    victim = manifest.parent / "volumes" / f"{cases[3].case_id}_t1.csfv"
    victim.write_bytes(victim.read_bytes()[:40])
    with pytest.raises(FormatError, match=cases[3].case_id):
        read_dataset(manifest)


def test_duplicate_case_id_rejected(written):
    _, _, manifest = written
    doc = json.loads(manifest.read_text())
    doc["cases"][1]["case_id"] = doc["cases"][0]["case_id"]
    manifest.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="duplicate"):
        read_dataset(manifest)


def test_shape_mismatch_rejected(written):
    _, _, manifest = written
    doc = json.loads(manifest.read_text())
    doc["volume_shape"] = [8, 16, 8]
    manifest.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="shape"):
        read_dataset(manifest)


def test_bad_clinical_rejected(written):
    _, _, manifest = written
    doc = json.loads(manifest.read_text())
    doc["cases"][2]["clinical"]["age"] = 99
    manifest.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match=doc["cases"][2]["case_id"]):
        read_dataset(manifest)


def test_missing_manifest(tmp_path):
    with pytest.raises(FormatError, match="not found"):
        read_dataset(tmp_path / "nope.json")


def test_read_tensor_names_file(tmp_path):
    path = tmp_path / "x.csfv"
    path.write_bytes(b"CSFV")
    with pytest.raises(FormatError, match="x.csfv|thing"):
        read_tensor(path, what="thing")
