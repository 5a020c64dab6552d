"""On-disk formats: k-space binary files, PGM images, CSV phantoms and profiles.

K-space file layout: one line of JSON (the header) terminated by ``\\n``,
followed by little-endian float64 ``(re, im)`` pairs in row-major order
with the readout index fastest.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .kspace import KSpaceMatrix

FORMAT_VERSION = 1


def write_kspace(path, k: KSpaceMatrix, seed: int | None = None, config_hash: str = "", **extra) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "dims": [k.n_phase, k.n_read],
        "dwell": k.dwell,
        "channel": k.channel,
        "seed": seed,
        "config_hash": config_hash,
        **extra,
    }
    payload = np.empty(k.data.shape + (2,), dtype="<f8")
    payload[..., 0] = k.data.real
    payload[..., 1] = k.data.imag
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload.tobytes())


def read_kspace(path) -> tuple[KSpaceMatrix, dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise InvalidInputError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl])
        n_phase, n_read = (int(v) for v in header["dims"])
    except (ValueError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"{path}: bad header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise InvalidInputError(f"{path}: unsupported format version {header.get('format_version')}")
    body = raw[nl + 1:]
    if len(body) != 16 * n_phase * n_read:
        raise InvalidInputError(f"{path}: payload is {len(body)} bytes, header implies {16 * n_phase * n_read}")
    pairs = np.frombuffer(body, dtype="<f8").reshape(n_phase, n_read, 2)
    data = pairs[..., 0] + 1j * pairs[..., 1]
    meta = {k: v for k, v in header.items() if k not in ("dims", "dwell", "channel")}
    return KSpaceMatrix(data, float(header["dwell"]), header.get("channel", ""), meta), header


def write_pgm(path, image: np.ndarray, maxval: int = 255, scale: float | None = None) -> None:
    """Binary (P5) PGM of a non-negative image, linearly mapped to ``[0, maxval]``."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise InvalidInputError("PGM images are 2-D")
    if maxval not in (255, 65535):
        raise InvalidInputError("maxval must be 255 or 65535")
    top = float(img.max()) if scale is None else scale
    q = np.zeros(img.shape) if top <= 0 else np.clip(np.round(img / top * maxval), 0, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        fh.write(q.astype(dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidInputError(f"{path}: truncated PGM header")
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise InvalidInputError(f"{path}: only binary P5 PGM is supported")
    w, h, maxval = (int(f) for f in fields[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(raw) - pos < n:
        raise InvalidInputError(f"{path}: truncated PGM payload")
    return np.frombuffer(raw[pos:pos + n], dtype=dtype).reshape(h, w).astype(float)


def read_phantom_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def load_image(path) -> np.ndarray:
    p = Path(path)
    if p.suffix.lower() == ".pgm":
        return read_pgm(p)
    if p.suffix.lower() == ".csv":
        return read_phantom_csv(p)
    raise InvalidInputError(f"{path}: phantoms must be .pgm or .csv")


def write_complex_csv(path, data: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "re", "im"])
        for (r, c), v in np.ndenumerate(np.asarray(data)):
            w.writerow([r, c, repr(float(v.real)), repr(float(v.imag))])


def write_columns_csv(path, columns: dict) -> None:
    """Equal-length named columns, one row per index."""
    names = list(columns)
    cols = [np.asarray(columns[n]).ravel() for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
