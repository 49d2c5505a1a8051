"""File formats: PGM images, CSV curves/surfaces and atomic writes."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidGrid, ParseError
from .geometry import GrayImage, SampledCurve, SampledSurface, uniform_nodes


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def fmt(x):
    return format(float(x), ".17g")


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, (str, bool, np.bool_)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write_text(path, csv_text(header, rows))


# -- PGM -------------------------------------------------------------------


def _pgm_tokens(data, count, pos):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise ParseError("truncated PGM header")
        if data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def parse_pgm(data):
    """Decode a plain (P2) or raw (P5) PGM byte string into a :class:`GrayImage`."""
    if data[:2] not in (b"P2", b"P5"):
        raise ParseError("not a P2/P5 PGM file")
    magic = data[:2]
    try:
        (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ParseError(f"bad PGM header: {exc}") from None
    if not (0 < maxval <= 65535) or width <= 0 or height <= 0:
        raise ParseError(f"unsupported PGM dimensions/maxval {width}x{height}/{maxval}")
    n = width * height
    if magic == b"P2":
        try:
            pix = np.array(data[pos:].split(), dtype=np.int64)
        except ValueError:
            raise ParseError("non-integer pixel in P2 data") from None
        if pix.size < n:
            raise ParseError(f"expected {n} pixels, found {pix.size}")
        pix = pix[:n]
    else:
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[pos : pos + n * dtype.itemsize]
        if len(raw) < n * dtype.itemsize:
            raise ParseError("truncated P5 pixel data")
        pix = np.frombuffer(raw, dtype=dtype).astype(np.int64)
    if pix.min() < 0 or pix.max() > maxval:
        raise ParseError("pixel value outside [0, maxval]")
    try:
        return GrayImage(pix.reshape(height, width) / maxval)
    except InvalidGrid as exc:
        raise ParseError(str(exc)) from None


def read_pgm(path):
    return parse_pgm(Path(path).read_bytes())


def encode_pgm(img, maxval=255, binary=True):
    q = np.rint(np.clip(img.intensities, 0, 1) * maxval).astype(np.int64)
    header = f"{'P5' if binary else 'P2'}\n{img.width} {img.height}\n{maxval}\n".encode()
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        return header + q.astype(dtype).tobytes()
    body = "\n".join(" ".join(str(v) for v in row) for row in q) + "\n"
    return header + body.encode()


def write_pgm(path, img, maxval=255, binary=True):
    atomic_write_bytes(path, encode_pgm(img, maxval, binary))


# -- CSV shapes ------------------------------------------------------------


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ParseError(f"{path}: no data rows")
    header = [c.strip() for c in rows[0]]
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ParseError(f"{path}: ragged rows")
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path}: non-finite value")
    return header, data


def read_curve_csv(path):
    """Read a curve CSV with header ``t,v1,...,vd``."""
    header, data = _read_rows(path)
    if header[0] != "t" or len(header) < 2:
        raise ParseError(f"{path}: curve header must be t,v1..vd")
    try:
        return SampledCurve.from_nodes(data[:, 0], data[:, 1:])
    except InvalidGrid as exc:
        raise ParseError(f"{path}: {exc}") from None


def curve_csv_text(curve):
    header = ["t"] + [f"v{i + 1}" for i in range(curve.dim)]
    return csv_text(header, np.column_stack([curve.nodes, curve.values]))


def write_curve_csv(path, curve):
    atomic_write_text(path, curve_csv_text(curve))


def read_surface_csv(path):
    """Read a surface CSV with header ``x,y,v1,v2,v3`` on a full ``K x K`` grid."""
    header, data = _read_rows(path)
    if header != ["x", "y", "v1", "v2", "v3"]:
        raise ParseError(f"{path}: surface header must be x,y,v1,v2,v3")
    n = data.shape[0]
    K = int(round(np.sqrt(n)))
    if K * K != n:
        raise ParseError(f"{path}: {n} rows do not form a square grid")
    nodes = uniform_nodes(K)
    h = 1.0 / (K - 1) if K > 1 else 1.0
    ix = np.rint(data[:, 0] / h).astype(int)
    iy = np.rint(data[:, 1] / h).astype(int)
    if (
        ix.min() < 0 or iy.min() < 0 or ix.max() >= K or iy.max() >= K
        or np.max(np.abs(nodes[ix] - data[:, 0])) > 1e-9
        or np.max(np.abs(nodes[iy] - data[:, 1])) > 1e-9
    ):
        raise ParseError(f"{path}: coordinates are not a uniform grid on [0,1]^2")
    values = np.full((K, K, 3), np.nan)
    values[ix, iy] = data[:, 2:]
    if np.isnan(values).any():
        raise ParseError(f"{path}: grid has missing or duplicate nodes")
    try:
        return SampledSurface(values)
    except InvalidGrid as exc:
        raise ParseError(f"{path}: {exc}") from None


def surface_csv_text(surface):
    K = surface.K
    t = uniform_nodes(K)
    X, Y = np.meshgrid(t, t, indexing="ij")
    rows = np.column_stack([X.ravel(), Y.ravel(), surface.values.reshape(-1, 3)])
    return csv_text(["x", "y", "v1", "v2", "v3"], rows)


def write_surface_csv(path, surface):
    atomic_write_text(path, surface_csv_text(surface))
