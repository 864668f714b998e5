"""On-disk formats: DSTT tensors, DSCK checkpoints, JSON Lines manifests.

DSTT layout (little-endian)::

    b"DSTT" | u32 version=1 | u8 rank | rank x u32 dims | f32 payload (row-major)

DSCK layout (little-endian)::

    b"DSCK" | u32 version=1 | u32 header_len | header JSON (utf-8) | f32 payloads

The checkpoint header holds the run config plus a ``tensors`` index of
``{"name", "offset", "shape"}`` entries; offsets are in bytes from the start
of the payload section.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

DSTT_MAGIC = b"DSTT"
DSCK_MAGIC = b"DSCK"
VERSION = 1


class FormatError(ValueError):
    pass


def _as_f32(array, what: str = "tensor") -> np.ndarray:
    src = np.asarray(array)
    with np.errstate(over="ignore"):
        arr = np.asarray(src, dtype="<f4", order="C")
    if np.any(np.isinf(arr) & np.isfinite(src)):
        raise FormatError(f"{what}: values exceed the float32 range")
    return arr


def encode_tensor(array) -> bytes:
    arr = _as_f32(array)
    head = DSTT_MAGIC + struct.pack("<IB", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
    if blob[:4] != DSTT_MAGIC:
        raise FormatError("not a DSTT tensor (bad magic)")
    version, rank = struct.unpack_from("<IB", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported DSTT version {version}")
    dims = struct.unpack_from(f"<{rank}I", blob, 9)
    start = 9 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    payload = blob[start:start + 4 * count]
    if len(payload) != 4 * count:
        raise FormatError("truncated DSTT payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def save_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def dumps_json(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, so reruns are byte-identical."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_checkpoint(path, tensors: dict, header: dict) -> None:
    index, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = _as_f32(tensors[name], name)
        index.append({"name": name, "offset": offset, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    meta = dict(header)
    meta["tensors"] = index
    head = dumps_json(meta).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(DSCK_MAGIC + struct.pack("<II", VERSION, len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns (header, tensors)."""
    blob = Path(path).read_bytes()
    if blob[:4] != DSCK_MAGIC:
        raise FormatError(f"{path}: not a DSCK checkpoint")
    version, head_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[12:12 + head_len].decode("utf-8"))
        index = header.pop("tensors")
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, AttributeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    base = 12 + head_len
    tensors = {}
    for entry in index:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        if start + 4 * count > len(blob):
            raise FormatError(f"{path}: truncated payload for {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape).copy()
    return header, tensors


def read_jsonl(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(dumps_json(r) + "\n")


def load_vocab(path) -> list[str]:
    symbols = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(symbols, list) or not all(isinstance(s, str) for s in symbols):
        raise FormatError(f"{path}: vocabulary must be a JSON array of strings")
    return symbols


def save_vocab(path, symbols: list[str]) -> None:
    Path(path).write_text(json.dumps(symbols) + "\n", encoding="utf-8")


def write_pgm(path, image: np.ndarray) -> None:
    """Binary greyscale PGM, values linearly scaled to 0..255."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
