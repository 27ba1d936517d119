"""File formats: fixation-log CSV, P5/P6 netpbm images, raw float64 grids."""

from __future__ import annotations

import csv
import struct
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

import numpy as np

from agcnn.attention.groundtruth import CAPTURE_SIZE, FixationLog
from agcnn.errors import InputError

GRID_MAGIC = b"AGM1"


# fixation logs -----------------------------------------------------------------

def read_fixation_logs(path, source_size: Tuple[int, int] = (CAPTURE_SIZE, CAPTURE_SIZE)
                       ) -> Dict[str, List[FixationLog]]:
    """Parse ``image_id,observer_id,order,x,y`` lines into logs grouped by image.

    Order indices must run 1..n without gaps per (image, observer); a header
    line starting with ``image`` is skipped.
    """
    records: Dict[Tuple[str, str], Dict[int, Tuple[float, float]]] = defaultdict(dict)
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower().startswith("image"):
                continue
            if len(row) != 5:
                raise InputError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            image_id, observer = row[0].strip(), row[1].strip()
            try:
                order, x, y = int(row[2]), float(row[3]), float(row[4])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            key = (image_id, observer)
            if order in records[key]:
                raise InputError(f"{path}:{lineno}: duplicate order index {order}")
            records[key][order] = (x, y)
    out: Dict[str, List[FixationLog]] = defaultdict(list)
    for (image_id, observer), fixes in sorted(records.items()):
        orders = sorted(fixes)
        if orders != list(range(1, len(orders) + 1)):
            raise InputError(f"{path}: image {image_id} observer {observer}: order indices "
                             f"{orders} are not 1..{len(orders)}")
        out[image_id].append(FixationLog(observer, image_id, [fixes[i] for i in orders],
                                         source_size))
    return dict(out)


def write_fixation_logs(path, logs: Iterable[FixationLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "observer_id", "order", "x", "y"])
        for log in logs:
            for i, (x, y) in enumerate(log.fixations, start=1):
                w.writerow([log.image_id, log.observer, i, repr(x), repr(y)])


# netpbm ------------------------------------------------------------------------

def to_uint8(grid: np.ndarray) -> np.ndarray:
    """Scale values in [0, 1] to 0..255 with rounding."""
    return np.clip(np.rint(np.asarray(grid) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, grid: np.ndarray) -> None:
    """8-bit P5 graymap of a [0, 1] grid."""
    data = to_uint8(grid)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_ppm(path, image: np.ndarray) -> None:
    """8-bit P6 pixmap; ``image`` is H x W x 3 uint8 or 3 x H x W floats in [0, 1]."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = to_uint8(img.transpose(1, 2, 0) if img.shape[0] == 3 else img)
    h, w, c = img.shape
    if c != 3:
        raise InputError(f"P6 needs 3 channels, got {c}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def _read_netpbm(path, magic: bytes) -> Tuple[np.ndarray, int, int]:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputError(f"{path}: truncated netpbm header")
        tokens.append(data[start:pos])
    if tokens[0] != magic:
        raise InputError(f"{path}: expected {magic.decode()} file, found {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit netpbm is supported (maxval {maxval})")
    return np.frombuffer(data, dtype=np.uint8, offset=pos + 1), h, w


def read_pgm(path) -> np.ndarray:
    """Returns the P5 grid as floats in [0, 1]."""
    raw, h, w = _read_netpbm(path, b"P5")
    if raw.size < h * w:
        raise InputError(f"{path}: truncated P5 payload")
    return raw[:h * w].reshape(h, w) / 255.0


def read_ppm(path) -> np.ndarray:
    """Returns the P6 image as a 3 x H x W float array in [0, 1]."""
    raw, h, w = _read_netpbm(path, b"P6")
    if raw.size < h * w * 3:
        raise InputError(f"{path}: truncated P6 payload")
    return raw[:h * w * 3].reshape(h, w, 3).transpose(2, 0, 1) / 255.0


# raw grids ---------------------------------------------------------------------

def write_grid(path, grid: np.ndarray) -> None:
    """Lossless float64 grid: b"AGM1", H:u64, W:u64, then row-major little-endian f64."""
    grid = np.asarray(grid, dtype="<f8")
    if grid.ndim != 2:
        raise InputError(f"grid must be 2-d, got shape {grid.shape}")
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC + struct.pack("<QQ", *grid.shape))
        fh.write(np.ascontiguousarray(grid).tobytes())


def read_grid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != GRID_MAGIC or len(data) < 20:
        raise InputError(f"{path}: not a raw attention grid")
    h, w = struct.unpack_from("<QQ", data, 4)
    if len(data) != 20 + 8 * h * w:
        raise InputError(f"{path}: payload size does not match {h}x{w}")
    return np.frombuffer(data, dtype="<f8", offset=20).reshape(h, w).astype(np.float64)
