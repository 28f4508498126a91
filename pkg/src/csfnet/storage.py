"""Binary tensor files and the JSON dataset manifest.

Tensor file layout (little-endian):

    offset 0   4 bytes  magic b"CSFV"
    offset 4   u8       format version (1)
    offset 5   u8       dtype code (1 = float32, 2 = float64)
    offset 6   10 bytes reserved, zero
    offset 16  3 x u32  dims (D, H, W)
    offset 28  payload  row-major values
    trailer    u32      CRC32 of the payload bytes
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .data import SPLITS, ClinicalRecord, FollowupCase, FollowupDataset

MAGIC = b"CSFV"
FORMAT_VERSION = 1
MANIFEST_VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}
_HEADER = struct.Struct("<4sBB10s3I")


class FormatError(ValueError):
    """A tensor file or manifest failed validation."""


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("<")
    if dtype not in DTYPE_CODES:
        raise FormatError(f"unsupported dtype {array.dtype}")
    if array.ndim == 4 and array.shape[0] == 1:
        array = array[0]
    if array.ndim != 3:
        raise FormatError(f"tensor files hold 3-D arrays, got shape {array.shape}")
    payload = np.ascontiguousarray(array, dtype=dtype).tobytes()
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_CODES[dtype], b"\0" * 10, *array.shape)
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def decode_tensor(blob: bytes, what: str = "tensor") -> np.ndarray:
    if len(blob) < _HEADER.size + 4:
        raise FormatError(f"{what}: file truncated ({len(blob)} bytes)")
    magic, version, code, _, d, h, w = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{what}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{what}: unsupported format version {version}")
    if code not in CODE_DTYPES:
        raise FormatError(f"{what}: unknown dtype code {code}")
    dtype = CODE_DTYPES[code]
    expected = d * h * w * dtype.itemsize
    payload = blob[_HEADER.size:-4]
    if len(payload) != expected:
        raise FormatError(f"{what}: payload has {len(payload)} bytes, expected {expected} for dims {(d, h, w)}")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise FormatError(f"{what}: checksum mismatch")
    return np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="), copy=True).reshape(d, h, w)


def write_tensor(path: Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: Path, what: str | None = None) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{what or path}: file not found: {path}") from None
    return decode_tensor(blob, what or str(path))


def write_dataset(cases: list[FollowupCase], manifest_path, data_dir=None, splits: dict | None = None,
                  seed: int | None = None, extra: dict | None = None) -> dict:
    """Write every case's volumes plus a manifest; volume paths are stored relative to the manifest."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    data_dir = Path(data_dir) if data_dir is not None else root / "volumes"
    if not data_dir.is_absolute():
        data_dir = root / data_dir
    data_dir.mkdir(parents=True, exist_ok=True)
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate case ids")
    split_of = {}
    for name, members in (splits or {}).items():
        for cid in members:
            if cid in split_of:
                raise FormatError(f"{cid}: assigned to both {split_of[cid]!r} and {name!r}")
            split_of[cid] = name
    shapes = {c.t0_volume.shape for c in cases}
    if len(shapes) != 1:
        raise FormatError(f"cases have mixed volume shapes {sorted(shapes)}")
    entries = []
    for case in cases:
        paths = {}
        for tp, vol in (("t0", case.t0_volume), ("t1", case.t1_volume)):
            fpath = data_dir / f"{case.case_id}_{tp}.csfv"
            write_tensor(fpath, vol.astype(np.float32))
            paths[tp] = fpath.relative_to(root).as_posix() if fpath.is_relative_to(root) else str(fpath)
        entries.append({
            "case_id": case.case_id,
            "t0": paths["t0"],
            "t1": paths["t1"],
            "clinical": case.clinical.to_dict(),
            "label": case.label,
            "split": split_of.get(case.case_id, "train"),
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "volume_shape": list(next(iter(shapes))[1:]),
        "seed": seed,
        "n_cases": len(cases),
        "cases": entries,
    }
    if extra:
        manifest.update(extra)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_dataset(manifest_path) -> FollowupDataset:
    """Load and validate a manifest and all referenced volumes."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise FormatError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {manifest.get('version')!r}")
    shape = tuple(manifest.get("volume_shape", ()))
    if len(shape) != 3:
        raise FormatError(f"manifest volume_shape must have 3 dims, got {shape}")
    root = manifest_path.parent
    cases, seen = [], set()
    splits: dict[str, list[str]] = {name: [] for name in SPLITS}
    for entry in manifest.get("cases", []):
        cid = entry.get("case_id")
        if cid in seen:
            raise FormatError(f"duplicate case_id {cid!r} in manifest")
        seen.add(cid)
        if entry.get("split") not in SPLITS:
            raise FormatError(f"{cid}: unknown split {entry.get('split')!r}")
        vols = []
        for tp in ("t0", "t1"):
            vol = read_tensor(root / entry[tp], what=f"{cid} {tp}")
            if vol.shape != shape:
                raise FormatError(f"{cid} {tp}: shape {vol.shape} != manifest volume_shape {shape}")
            vols.append(vol[None])
        try:
            case = FollowupCase(cid, vols[0], vols[1], ClinicalRecord.from_dict(entry["clinical"]), entry["label"])
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{cid}: {exc}") from None
        cases.append(case)
        splits[entry["split"]].append(cid)
    if "n_cases" in manifest and manifest["n_cases"] != len(cases):
        raise FormatError(f"manifest lists {len(cases)} cases but declares n_cases={manifest['n_cases']}")
    return FollowupDataset(cases, splits, seed=manifest.get("seed"))
