"""Image ingestion, preprocessing and manifests.

An ``ImageTensor`` is a ``side x side`` float64 array with values in
``[0, 1]``.  Manifests are delimited text files with a header row::

    path,subject_id,role,x,y,w,h
    imgs/a.png,alice,reference,10,12,40,40
    imgs/b.png,alice,probe,,,,

The delimiter is a tab if the header contains one, else a comma.  Bounding
box columns are optional but must be all present or all empty per row.
"""

import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kernels
from .tabular import TableError, read_table, write_table

LUMA = (0.299, 0.587, 0.114)
MANIFEST_COLUMNS = ("path", "subject_id", "role", "x", "y", "w", "h")
ROLES = ("reference", "probe")


class ImageError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def to_gray(rgb):
    """Luma grayscale of an ``H x W x 3`` array; constant images map exactly."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    # Written relative to R so that equal channels reproduce R bit-exactly.
    return r + LUMA[1] * (g - r) + LUMA[2] * (b - r)


def read_image(path):
    """Read an 8-bit PNG or PGM as a float array in ``[0, 255]`` (gray or RGB)."""
    try:
        with Image.open(path) as im:
            if im.mode in ("1", "L", "LA"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    return arr


def crop_box(shape, bbox):
    """Integer pixel window ``(x0, y0, x1, y1)`` covering ``bbox`` clipped to the image."""
    h, w = shape[:2]
    x, y, bw, bh = bbox
    if bw <= 0 or bh <= 0:
        raise ImageError(f"bounding box {bbox} has non-positive size")
    x0, y0 = max(0, int(math.floor(x))), max(0, int(math.floor(y)))
    x1, y1 = min(w, int(math.ceil(x + bw))), min(h, int(math.ceil(y + bh)))
    if x1 <= x0 or y1 <= y0:
        raise ImageError(f"bounding box {bbox} does not intersect the {w}x{h} image")
    return x0, y0, x1, y1


def preprocess(raw_image, bbox=None, side=64):
    """Crop, convert to grayscale, resize to ``side x side`` and scale to [0, 1].

    ``raw_image`` is a path or an array of 8-bit intensities (``H x W`` or
    ``H x W x 3``).
    """
    if isinstance(raw_image, (str, os.PathLike)):
        arr = read_image(raw_image)
    else:
        arr = np.asarray(raw_image, dtype=np.float64)
    if arr.ndim not in (2, 3) or arr.size == 0:
        raise ImageError(f"unsupported image array shape {arr.shape}")
    if bbox is not None:
        x0, y0, x1, y1 = crop_box(arr.shape, bbox)
        arr = arr[y0:y1, x0:x1]
    gray = to_gray(arr) / 255.0
    if gray.shape != (side, side):
        gray = kernels.bilinear_resize(gray, side, side)
    return np.clip(gray, 0.0, 1.0)


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    subject_id: str
    role: str
    bbox: tuple = None


@dataclass
class Manifest:
    records: list
    root: str = "."

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, record):
        return record.path if os.path.isabs(record.path) else os.path.join(self.root, record.path)

    def probes(self):
        return [r for r in self.records if r.role == "probe"]


def _parse_bbox(row, lineno):
    fields = [row.get(k, "") or "" for k in ("x", "y", "w", "h")]
    if all(f.strip() == "" for f in fields):
        return None
    try:
        vals = tuple(float(f) for f in fields)
    except ValueError:
        raise ManifestError(f"line {lineno}: malformed bounding box {fields}") from None
    if not all(math.isfinite(v) for v in vals) or vals[2] <= 0 or vals[3] <= 0:
        raise ManifestError(f"line {lineno}: malformed bounding box {fields}")
    return vals


def load_manifest(path):
    try:
        rows = read_table(path, required=("path", "subject_id", "role"))
    except TableError as exc:
        raise ManifestError(str(exc)) from exc
    records, seen_paths, refs = [], {}, {}
    for lineno, row in rows:
        rec = ManifestRecord(
            path=row["path"].strip(),
            subject_id=row["subject_id"].strip(),
            role=row["role"].strip().lower(),
            bbox=_parse_bbox(row, lineno),
        )
        if not rec.path:
            raise ManifestError(f"line {lineno}: empty path")
        if rec.role not in ROLES:
            raise ManifestError(f"line {lineno}: role must be one of {ROLES}, got {rec.role!r}")
        if rec.path in seen_paths:
            raise ManifestError(
                f"line {lineno}: duplicate path {rec.path!r} (first on line {seen_paths[rec.path]})"
            )
        seen_paths[rec.path] = lineno
        if rec.role == "reference":
            if rec.subject_id in refs:
                raise ManifestError(
                    f"line {lineno}: second reference for subject {rec.subject_id!r} "
                    f"(first on line {refs[rec.subject_id]})"
                )
            refs[rec.subject_id] = lineno
        records.append(rec)
    return Manifest(records, root=os.path.dirname(os.path.abspath(path)))


def write_manifest(manifest, path, delimiter=","):
    rows = []
    for r in manifest.records:
        box = ["", "", "", ""] if r.bbox is None else [_fmt(v) for v in r.bbox]
        rows.append([r.path, r.subject_id, r.role] + box)
    write_table(path, MANIFEST_COLUMNS, rows, delimiter=delimiter)


def _fmt(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def load_images(manifest, side, records=None):
    """Preprocess every record (or the given subset) to a ``N x side x side`` stack."""
    records = manifest.records if records is None else records
    if not records:
        return np.zeros((0, side, side))
    return np.stack([preprocess(manifest.resolve(r), r.bbox, side) for r in records])
