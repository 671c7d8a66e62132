"""On-disk formats: raw mosaic frames, multi-channel float maps, JSON and
line-delimited JSON datasets.

All writers are atomic (temp file in the target directory + rename) and
byte-deterministic for identical inputs: JSON is emitted with sorted keys
and no timestamps, binary payloads are explicit little-endian.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .mosaic import RawMosaicFrame, validate_layout

FLOAT_MAP_MAGIC = b"PLFM"
FLOAT_MAP_VERSION = 1
RAW_MOSAIC_FORMAT = "polarkit.raw-mosaic/v1"


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}") from exc


def write_jsonl(path, records) -> None:
    lines = [json.dumps(rec, sort_keys=True) for rec in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_jsonl(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: malformed JSON on line {lineno}: {exc.msg}") from exc
    return records


def _sidecar_path(raw_path) -> Path:
    return Path(str(raw_path) + ".json")


def write_raw_mosaic(path, frame: RawMosaicFrame, transfer_function: str = "linear") -> None:
    """16-bit little-endian unsigned samples, row-major, with a JSON sidecar.

    Samples are rounded to the nearest integer; values outside [0, 65535]
    are a data error rather than a silent clip.
    """
    samples = np.asarray(frame.samples)
    rounded = np.rint(samples)
    if (rounded < 0).any() or (rounded > 65535).any():
        raise DataError("raw mosaic samples must fit uint16 (0..65535)")
    atomic_write_bytes(path, rounded.astype("<u2").tobytes(order="C"))
    write_json(
        _sidecar_path(path),
        {
            "format": RAW_MOSAIC_FORMAT,
            "width": frame.width,
            "height": frame.height,
            "dtype": "uint16-le",
            "layout": list(frame.layout),
            "transfer_function": transfer_function,
        },
    )


def read_raw_mosaic(path) -> RawMosaicFrame:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FormatError(f"missing sidecar {sidecar} for raw mosaic {path}")
    meta = read_json(sidecar)
    if meta.get("format") != RAW_MOSAIC_FORMAT:
        raise FormatError(f"{sidecar}: unexpected format tag {meta.get('format')!r}")
    width, height = int(meta["width"]), int(meta["height"])
    layout = validate_layout(meta["layout"])
    payload = Path(path).read_bytes()
    expected = width * height * 2
    if len(payload) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {width}x{height} uint16, got {len(payload)}"
        )
    samples = np.frombuffer(payload, dtype="<u2").reshape(height, width).astype(np.float64)
    return RawMosaicFrame(samples=samples, layout=layout)


def write_float_map(path, channels, channel_names, meta: dict | None = None) -> None:
    """Multi-channel float map: binary header + 32-bit LE planes.

    Layout: magic 'PLFM', u32 version, u32 header length, UTF-8 JSON header
    (width, height, channel names, free-form meta), then the channel planes
    in declared order, row-major float32.
    """
    arr = np.asarray(channels, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataError(f"float map channels must be (C, H, W), got shape {arr.shape}")
    names = list(channel_names)
    if len(names) != arr.shape[0]:
        raise DataError(f"{len(names)} channel names for {arr.shape[0]} channels")
    header = json.dumps(
        {
            "width": int(arr.shape[2]),
            "height": int(arr.shape[1]),
            "channels": names,
            "meta": meta or {},
        },
        sort_keys=True,
    ).encode("utf-8")
    blob = b"".join(
        [
            FLOAT_MAP_MAGIC,
            struct.pack("<II", FLOAT_MAP_VERSION, len(header)),
            header,
            arr.astype("<f4").tobytes(order="C"),
        ]
    )
    atomic_write_bytes(path, blob)


def read_float_map(path) -> tuple[np.ndarray, list[str], dict]:
    """Returns (channels float64 (C, H, W), channel names, meta dict)."""
    payload = Path(path).read_bytes()
    if payload[:4] != FLOAT_MAP_MAGIC:
        raise FormatError(f"{path}: bad magic {payload[:4]!r}")
    version, header_len = struct.unpack_from("<II", payload, 4)
    if version != FLOAT_MAP_VERSION:
        raise FormatError(f"{path}: unsupported float-map version {version}")
    header_end = 12 + header_len
    try:
        header = json.loads(payload[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed float-map header") from exc
    width, height = int(header["width"]), int(header["height"])
    names = list(header["channels"])
    expected = len(names) * width * height * 4
    data = payload[header_end:]
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, got {len(data)}")
    channels = (
        np.frombuffer(data, dtype="<f4").reshape(len(names), height, width).astype(np.float64)
    )
    return channels, names, header.get("meta", {})
