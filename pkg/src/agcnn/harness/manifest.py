"""Dataset manifests: CSV of (path, label, fixlog, attnmap, split)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Sequence

import numpy as np

from agcnn.attention.groundtruth import render_attention
from agcnn.core.functional import resize_bilinear
from agcnn.core.tensor import Tensor
from agcnn.data import Dataset, Split
from agcnn.errors import ConfigError, InputError
from agcnn.io import read_fixation_logs, read_grid, read_ppm

COLUMNS = ("path", "label", "fixlog", "attnmap", "split")
SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (4792 / 5824, 200 / 5824, 832 / 5824)


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int
    fixlog: str = ""
    attnmap: str = ""
    split: str = ""


@dataclass
class DatasetManifest:
    records: List[ManifestRecord]
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        return isinstance(other, DatasetManifest) and self.records == other.records

    def in_split(self, name: str) -> List[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in self.records:
                w.writerow([r.path, r.label, r.fixlog, r.attnmap, r.split])


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse a manifest; relative paths resolve against the manifest's directory."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"manifest {path} does not exist")
    root = path.parent
    records = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and [c.strip() for c in row] == list(COLUMNS):
                continue
            if len(row) != len(COLUMNS):
                raise InputError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(row)}")
            p, label, fixlog, attnmap, sp = (c.strip() for c in row)
            if label not in ("0", "1"):
                raise InputError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            if sp not in SPLITS + ("",):
                raise InputError(f"{path}:{lineno}: unknown split {sp!r}")
            if check_files:
                for ref in (p, fixlog, attnmap):
                    if ref and not (root / ref).exists():
                        raise InputError(f"{path}:{lineno}: file {ref} not found under {root}")
            records.append(ManifestRecord(p, int(label), fixlog, attnmap, sp))
    if not records:
        raise InputError(f"manifest {path} has no records")
    return DatasetManifest(records, root)


def split_sizes(n: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment of ``n`` items to the given ratios."""
    r = np.asarray(ratios, dtype=np.float64)
    if r.ndim != 1 or len(r) != 3 or np.any(r < 0) or r.sum() <= 0:
        raise ConfigError(f"split ratios must be three non-negative numbers, got {list(ratios)}")
    exact = n * r / r.sum()
    # round away float fuzz before flooring so 5824 * 4792/5824 counts as 4792
    exact = np.where(np.abs(exact - np.rint(exact)) < 1e-9, np.rint(exact), exact)
    sizes = np.floor(exact).astype(int)
    rem = exact - sizes
    for i in np.argsort(-rem, kind="stable")[: n - sizes.sum()]:
        sizes[i] += 1
    return sizes.tolist()


def split(manifest: DatasetManifest, ratios: Sequence[float] = DEFAULT_RATIOS,
          seed: int = 0) -> DatasetManifest:
    sizes = split_sizes(len(manifest), ratios)
    order = np.random.default_rng(seed).permutation(len(manifest))
    names = np.empty(len(manifest), dtype=object)
    start = 0
    for name, size in zip(SPLITS, sizes):
        names[order[start:start + size]] = name
        start += size
    records = [replace(r, split=str(names[i])) for i, r in enumerate(manifest.records)]
    return DatasetManifest(records, manifest.root)


def parse_ratios(text: str):
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        vals = []
    if len(vals) != 3 or any(not math.isfinite(v) or v < 0 for v in vals) or sum(vals) <= 0:
        raise ConfigError(f"--split expects a:b:c with non-negative numbers, got {text!r}")
    return tuple(vals)


def _resize_grid(a: np.ndarray, size: int) -> np.ndarray:
    if a.shape[-2:] == (size, size):
        return a
    x = Tensor(a.reshape((-1, 1) + a.shape[-2:]))
    return resize_bilinear(x, (size, size)).data.reshape(a.shape[:-2] + (size, size))


def load_records(manifest: DatasetManifest, records: Sequence[ManifestRecord],
                 image_size: int) -> Split:
    """Read images (resized to S, scaled to [0, 1]) and any ground-truth attention at S/2."""
    half = image_size // 2
    images, labels, maps = [], [], []
    have_all_maps = True
    for r in records:
        images.append(_resize_grid(read_ppm(manifest.root / r.path), image_size))
        labels.append(r.label)
        att = None
        if r.attnmap:
            att = _resize_grid(read_grid(manifest.root / r.attnmap), half)
        elif r.fixlog:
            logs = [log for group in read_fixation_logs(manifest.root / r.fixlog).values()
                    for log in group]
            att = render_attention(logs, (half, half)).grid
        have_all_maps &= att is not None
        maps.append(att)
    attention = np.stack(maps) if (have_all_maps and maps) else None
    return Split(np.stack(images) if images else np.zeros((0, 3, image_size, image_size)),
                 np.asarray(labels), attention)


def load_dataset(manifest: DatasetManifest, image_size: int) -> Dataset:
    parts = {name: load_records(manifest, manifest.in_split(name), image_size) for name in SPLITS}
    return Dataset(parts["train"], parts["val"], parts["test"])
