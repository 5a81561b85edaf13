"""Text file formats for scans, label images and plane lists.

All floats are written with 17 significant digits, so every format
round-trips bit-exactly.  Paths ending in ``.gz`` are transparently gzipped.

Scan file::

    opc 1
    size <width> <height>
    origin <x> <y> <z>
    sigma <noise sigma in m>
    <row> <col> <x> <y> <z> <valid>      (width*height records, row-major)

For invalid cells ``x y z`` is ``origin + direction``.

Label file: plain PGM (``P2``), one label per pixel, maxval = max(1, max label).

Plane list::

    # id nx ny nz d count
    <id> <nx> <ny> <nz> <d> <count>

with ``n . p = d`` for points ``p`` on the plane and ``|n| = 1`` within 1e-6.
"""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, ParseError
from .geometry import OrganizedScan, PlaneGeometry
from .segmentation import PlaneEntry, Segmentation

PathLike = Union[str, Path]
MAGIC = "opc 1"
NORMAL_TOL = 1e-6
MAX_LABEL = 65535


def _fmt(x: float) -> str:
    return "%.17g" % x


def _open_text(path: PathLike, mode: str):
    path = Path(path)
    if path.suffix == ".gz":
        # fixed mtime keeps gzipped output byte-identical across runs
        raw = open(path, mode + "b")
        gz = gzip.GzipFile(filename="", mode=mode + "b", fileobj=raw, mtime=0)
        return _Closing(io.TextIOWrapper(gz, encoding="ascii", newline="\n"), raw)
    return open(path, mode, encoding="ascii", newline="\n")


class _Closing:
    def __init__(self, text, raw):
        self.text, self.raw = text, raw

    def __enter__(self):
        return self.text

    def __exit__(self, *exc):
        self.text.close()
        self.raw.close()


def _read_lines(path: PathLike) -> List[str]:
    try:
        with _open_text(path, "r") as fh:
            return fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(f"not a text file ({exc.reason})", path) from None
    except (OSError, EOFError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise ParseError(f"unreadable: {exc}", path) from None


def _floats(tokens, path, line, what) -> List[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"bad number in {what}", path, line) from None


def _int(token, path, line, what) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"bad integer for {what}: {token!r}", path, line) from None


# ------------------------------------------------------------------ scans

def save_scan(scan: OrganizedScan, path: PathLike) -> None:
    with _open_text(path, "w") as fh:
        fh.write(f"{MAGIC}\n")
        fh.write(f"size {scan.width} {scan.height}\n")
        fh.write("origin " + " ".join(_fmt(v) for v in scan.origin) + "\n")
        fh.write(f"sigma {_fmt(scan.noise_sigma)}\n")
        P = scan.points
        for k in range(scan.size):
            r, c = divmod(k, scan.width)
            x, y, z = P[k]
            fh.write(f"{r} {c} {_fmt(x)} {_fmt(y)} {_fmt(z)} {int(scan.valid[k])}\n")


def _header_field(lines, i, key, count, path):
    if i >= len(lines):
        raise ParseError(f"missing '{key}' header line", path, i + 1)
    tok = lines[i].split()
    if not tok or tok[0] != key or len(tok) != count + 1:
        raise ParseError(f"expected '{key}' with {count} values", path, i + 1)
    return tok[1:]


def load_scan(path: PathLike) -> OrganizedScan:
    lines = _read_lines(path)
    if not lines or lines[0].strip() != MAGIC:
        raise ParseError(f"missing magic '{MAGIC}'", path, 1)
    w, h = (_int(t, path, 2, "size") for t in _header_field(lines, 1, "size", 2, path))
    if w < 1 or h < 1:
        raise ParseError("size must be positive", path, 2)
    origin = _floats(_header_field(lines, 2, "origin", 3, path), path, 3, "origin")
    (sigma,) = _floats(_header_field(lines, 3, "sigma", 1, path), path, 4, "sigma")
    if not sigma > 0:
        raise ParseError("sigma must be positive", path, 4)
    K = w * h
    body = lines[4:]
    pts = np.empty((K, 3))
    valid = np.empty(K, dtype=bool)
    for k in range(K):
        r, c = divmod(k, w)
        lineno = 5 + k
        if k >= len(body):
            raise ParseError(f"missing record for row {r} col {c} "
                             f"(expected {K} records, found {len(body)})", path, lineno)
        tok = body[k].split()
        if len(tok) != 6:
            raise ParseError("expected 'row col x y z valid'", path, lineno)
        if _int(tok[0], path, lineno, "row") != r or _int(tok[1], path, lineno, "col") != c:
            raise ParseError(f"expected record for row {r} col {c}", path, lineno)
        pts[k] = _floats(tok[2:5], path, lineno, "point")
        if tok[5] not in ("0", "1"):
            raise ParseError("valid flag must be 0 or 1", path, lineno)
        valid[k] = tok[5] == "1"
    extra = [i for i, ln in enumerate(body[K:]) if ln.strip()]
    if extra:
        raise ParseError("unexpected data after the last record", path, 5 + K + extra[0])
    if not np.isfinite(pts).all():
        bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
        raise ParseError("non-finite coordinate", path, 5 + bad)
    o = np.asarray(origin)
    same = np.all(pts == o, axis=1)
    if same.any():
        raise ParseError("point coincides with the origin", path, 5 + int(np.flatnonzero(same)[0]))
    return OrganizedScan(w, h, o, pts, valid, sigma)


# ----------------------------------------------------------------- labels

def save_labels(labels, path: PathLike) -> None:
    lab = labels.labels if isinstance(labels, Segmentation) else np.asarray(labels)
    if lab.ndim != 2:
        raise ValueError("labels must be a 2-D grid")
    if lab.size and (lab.min() < 0 or lab.max() > MAX_LABEL):
        raise ValueError(f"labels must lie in [0, {MAX_LABEL}]")
    h, w = lab.shape
    with _open_text(path, "w") as fh:
        fh.write(f"P2\n{w} {h}\n{max(1, int(lab.max()) if lab.size else 1)}\n")
        for row in lab:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def _pgm_tokens(lines) -> Iterator[Tuple[str, int]]:
    for i, ln in enumerate(lines, start=1):
        ln = ln.split("#", 1)[0]
        for tok in ln.split():
            yield tok, i


def load_labels(path: PathLike, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Read a P2 label image as an ``(height, width)`` int64 array.

    ``shape`` is the expected ``(height, width)``; a different size raises
    DimensionMismatch.
    """
    lines = _read_lines(path)
    toks = _pgm_tokens(lines)

    def nxt(what):
        try:
            return next(toks)
        except StopIteration:
            raise ParseError(f"unexpected end of file reading {what}", path, len(lines)) from None

    magic, ln = nxt("magic")
    if magic != "P2":
        raise ParseError("expected plain PGM magic 'P2'", path, ln)
    tok, ln = nxt("width")
    w = _int(tok, path, ln, "width")
    tok, ln = nxt("height")
    h = _int(tok, path, ln, "height")
    tok, ln = nxt("maxval")
    maxval = _int(tok, path, ln, "maxval")
    if w < 1 or h < 1 or not 0 < maxval <= MAX_LABEL:
        raise ParseError("bad PGM header values", path, ln)
    if shape is not None and tuple(shape) != (h, w):
        raise DimensionMismatch(f"{path}: labels are {h}x{w}, expected {shape[0]}x{shape[1]}")
    out = np.empty(h * w, dtype=np.int64)
    for k in range(h * w):
        tok, ln = nxt(f"pixel {k} (row {k // w}, col {k % w})")
        v = _int(tok, path, ln, "pixel")
        if not 0 <= v <= maxval:
            raise ParseError(f"pixel value {v} outside [0, {maxval}]", path, ln)
        out[k] = v
    for tok, ln in toks:
        raise ParseError("unexpected data after the last pixel", path, ln)
    return out.reshape(h, w)


# ----------------------------------------------------------------- planes

@dataclass(frozen=True)
class PlaneRecord:
    id: int
    normal: Tuple[float, float, float]
    offset: float
    count: int

    @property
    def geometry(self) -> PlaneGeometry:
        n = np.asarray(self.normal)
        n = n / np.linalg.norm(n)
        return PlaneGeometry(self.offset * n, n)

    @classmethod
    def from_entry(cls, pid: int, entry: PlaneEntry) -> "PlaneRecord":
        g = entry.geometry
        if g is None:
            raise ValueError(f"plane {pid} has no geometry")
        return cls(int(pid), tuple(float(v) for v in g.normal), float(g.offset), int(entry.count))


def save_planes(planes, path: PathLike) -> None:
    """Write a Segmentation's planes or an iterable of PlaneRecord."""
    if isinstance(planes, Segmentation):
        records = [PlaneRecord.from_entry(i, planes.planes[i]) for i in planes.ids]
    elif isinstance(planes, Mapping):
        records = [planes[i] for i in sorted(planes)]
    else:
        records = sorted(planes, key=lambda r: r.id)
    with _open_text(path, "w") as fh:
        fh.write("# id nx ny nz d count\n")
        for r in records:
            fh.write(f"{r.id} {' '.join(_fmt(v) for v in r.normal)} {_fmt(r.offset)} {r.count}\n")


def load_planes(path: PathLike) -> Dict[int, PlaneRecord]:
    out: Dict[int, PlaneRecord] = {}
    for i, ln in enumerate(_read_lines(path), start=1):
        body = ln.split("#", 1)[0].strip()
        if not body:
            continue
        tok = body.split()
        if len(tok) != 6:
            raise ParseError("expected 'id nx ny nz d count'", path, i)
        pid = _int(tok[0], path, i, "id")
        n = _floats(tok[1:4], path, i, "normal")
        (d,) = _floats(tok[4:5], path, i, "offset")
        count = _int(tok[5], path, i, "count")
        if pid <= 0 or count < 0:
            raise ParseError("id must be positive and count nonnegative", path, i)
        if not np.isfinite(n + [d]).all():
            raise ParseError("non-finite plane parameters", path, i)
        if abs(np.linalg.norm(n) - 1.0) > NORMAL_TOL:
            raise ParseError(f"normal of plane {pid} is not unit length", path, i)
        if pid in out:
            raise ParseError(f"duplicate plane id {pid}", path, i)
        out[pid] = PlaneRecord(pid, tuple(n), d, count)
    return out


# ------------------------------------------------------------ segmentations

def save_segmentation(seg: Segmentation, labels_path: PathLike,
                      planes_path: Optional[PathLike] = None) -> None:
    save_labels(seg.labels, labels_path)
    if planes_path is not None:
        save_planes(seg, planes_path)


def load_segmentation(labels_path: PathLike, planes_path: Optional[PathLike] = None,
                      scan: Optional[OrganizedScan] = None) -> Segmentation:
    """Load labels (and plane geometry), cross-checking against ``scan``."""
    shape = (scan.height, scan.width) if scan is not None else None
    labels = load_labels(labels_path, shape)
    if planes_path is None:
        return Segmentation.from_labels(labels)
    records = load_planes(planes_path)
    ids, counts = np.unique(labels[labels > 0], return_counts=True)
    present = dict(zip(ids.tolist(), counts.tolist()))
    if set(present) != set(records):
        raise DimensionMismatch(
            f"plane ids in {planes_path} do not match the labels in {labels_path}")
    for pid, c in present.items():
        if records[pid].count != c:
            raise DimensionMismatch(
                f"plane {pid}: count {records[pid].count} but {c} labeled pixels")
    return Segmentation.from_labels(labels, {i: r.geometry for i, r in records.items()})
