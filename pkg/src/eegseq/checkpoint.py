"""Model checkpoints.

A checkpoint is an uncompressed zip archive with fixed member timestamps
(so identical models give identical bytes) holding:

``config.json``
    ``{"format": "eegseq-checkpoint", "version": 1, "model": <ModelConfig>,
    "seed": int, "dtype": "float32"|"float64", "extra": {...}}``
``manifest.txt``
    one line per parameter: ``name<TAB>dtype<TAB>dim0xdim1...<TAB>offset<TAB>nbytes``
``params.bin``
    raw parameter values, IEEE-754 little-endian, concatenated in manifest order.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError, EegSeqError
from .models import Model, ModelConfig, build

FORMAT = "eegseq-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    dtype = np.dtype(model.dtype)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "model": model.config.to_dict(),
        "seed": model.seed,
        "dtype": dtype.name,
        "extra": extra or {},
    }
    lines, blobs, offset = [], [], 0
    le = dtype.newbyteorder("<")
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype=le).tobytes()
        shape = "x".join(str(n) for n in p.shape)
        lines.append(f"{name}\t{dtype.name}\t{shape}\t{offset}\t{len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _member(zf, "config.json", json.dumps(header, indent=2, sort_keys=True).encode("utf-8"))
        _member(zf, "manifest.txt", ("\n".join(lines) + "\n").encode("utf-8"))
        _member(zf, "params.bin", b"".join(blobs))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild the model stored at ``path``; return it with the header dict."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: checkpoint not found")
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("config.json").decode("utf-8"))
            manifest = zf.read("manifest.txt").decode("utf-8")
            blob = zf.read("params.bin")
    except (zipfile.BadZipFile, KeyError, UnicodeDecodeError, json.JSONDecodeError, OSError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise CheckpointError(f"{path}: not a version-{VERSION} {FORMAT} file")
    try:
        config = ModelConfig.from_dict(header["model"])
        dtype = np.dtype(header["dtype"])
        model = build(config, seed=int(header["seed"]), dtype=dtype)
        le = dtype.newbyteorder("<")
        state = {}
        for line in manifest.splitlines():
            if not line:
                continue
            name, dt, shape_s, off_s, nbytes_s = line.split("\t")
            if np.dtype(dt) != dtype:
                raise CheckpointError(f"{path}: parameter {name} has dtype {dt}, expected {dtype.name}")
            shape = tuple(int(n) for n in shape_s.split("x")) if shape_s else ()
            off, nbytes = int(off_s), int(nbytes_s)
            if off + nbytes > len(blob) or nbytes != int(np.prod(shape)) * dtype.itemsize:
                raise CheckpointError(f"{path}: parameter {name} lies outside params.bin")
            state[name] = np.frombuffer(blob, dtype=le, count=int(np.prod(shape)), offset=off).reshape(shape)
        model.load_state_dict(state)
    except CheckpointError:
        raise
    except (EegSeqError, KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from None
    return model, header
