"""Synthetic fundus-like benchmark with planted labels and fixation logs.

Each image shows a bright optic disc with an inner cup on a textured,
vessel-crossed background.  Positives have a large cup (linear cup/disc
ratio in [0.7, 0.85], sometimes with a rim notch); negatives a small one
(ratio <= 0.5).  Observers "fixate" around the disc, so ground-truth
attention sits on the region that decides the label.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from agcnn.attention.groundtruth import CAPTURE_SIZE, FixationLog, render_attention
from agcnn.core.functional import resize_bilinear
from agcnn.core.tensor import Tensor
from agcnn.errors import ConfigError
from agcnn.harness.manifest import DEFAULT_RATIOS, DatasetManifest, ManifestRecord, split
from agcnn.io import write_fixation_logs, write_grid, write_ppm

LAG_POSITIVE_FRACTION = 2392 / 5824


@dataclass(frozen=True)
class SyntheticConfig:
    image_size: int = 56
    count: int = 800
    positive_fraction: float = LAG_POSITIVE_FRACTION
    disc_radius: Tuple[float, float] = (0.10, 0.14)     # fraction of S
    positive_cup: Tuple[float, float] = (0.70, 0.85)    # linear cup/disc ratio
    negative_cup: Tuple[float, float] = (0.30, 0.50)
    notch_probability: float = 0.5
    distractor: bool = False
    observers: int = 4
    fixations_per_observer: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("disc_radius", "positive_cup", "negative_cup"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.image_size < 16:
            raise ConfigError(f"image size must be at least 16, got {self.image_size}")
        if self.count < 1:
            raise ConfigError("count must be positive")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ConfigError(f"positive fraction must lie in (0, 1), got {self.positive_fraction}")
        lo, hi = self.disc_radius
        if not 0 < lo <= hi <= 0.25:
            raise ConfigError(f"disc radius range must satisfy 0 < lo <= hi <= 0.25, got {self.disc_radius}")
        plo, phi = self.positive_cup
        nlo, nhi = self.negative_cup
        if not (0 < nlo <= nhi <= 0.5 and 0.7 <= plo <= phi < 1.0):
            raise ConfigError("cup ratios need negatives within (0, 0.5] and positives within [0.7, 1)")
        if not 0.0 <= self.notch_probability <= 1.0:
            raise ConfigError("notch probability must lie in [0, 1]")
        if self.observers < 1 or self.fixations_per_observer < 1:
            raise ConfigError("need at least one observer and one fixation")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Geometry:
    """Construction parameters of one image, in pixels of the S x S image."""

    label: int
    cx: float
    cy: float
    rx: float
    ry: float
    angle: float
    cup_ratio: float
    notch_angle: Optional[float]
    distractor: Optional[Tuple[float, float, float, float]]  # cx, cy, radius, inner ratio

    @property
    def cup_area_ratio(self) -> float:
        return self.cup_ratio ** 2


def exact_positive_count(count: int, fraction: float) -> int:
    return int(math.floor(count * fraction + 0.5))


def _smooth_noise(rng, size: int, cells: int) -> np.ndarray:
    coarse = rng.standard_normal((1, 1, cells, cells))
    return resize_bilinear(Tensor(coarse), (size, size)).data[0, 0]


def _ellipse_rho(xx, yy, cx, cy, rx, ry, angle):
    c, s = math.cos(angle), math.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return np.sqrt((u / rx) ** 2 + (v / ry) ** 2), np.arctan2(v / ry, u / rx)


def _soft(rho, radius_px):
    """Anti-aliased coverage of the region rho <= 1 with a ~1 px edge."""
    return np.clip(0.5 - (rho - 1.0) * radius_px, 0.0, 1.0)


def _segment_distance(xx, yy, p0, p1):
    d = p1 - p0
    t = np.clip(((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / max(d @ d, 1e-12), 0, 1)
    return np.hypot(xx - (p0[0] + t * d[0]), yy - (p0[1] + t * d[1]))


def _sample_geometry(rng, cfg: SyntheticConfig, label: int) -> Geometry:
    s = cfg.image_size
    r = rng.uniform(*cfg.disc_radius) * s
    rx, ry = r, r * rng.uniform(0.9, 1.1)
    margin = 0.22 * s + r
    cx, cy = rng.uniform(margin, s - margin, size=2)
    cup = rng.uniform(*(cfg.positive_cup if label else cfg.negative_cup))
    notch = rng.uniform(-math.pi, math.pi) if (label and rng.random() < cfg.notch_probability) else None
    angle = rng.uniform(-0.3, 0.3)
    decoy = None
    if cfg.distractor:
        dr = rng.uniform(*cfg.disc_radius) * s
        for _ in range(100):
            dx, dy = rng.uniform(0.15 * s + dr, 0.85 * s - dr, size=2)
            if math.hypot(dx - cx, dy - cy) > r * 1.1 + dr + 2:
                break
        decoy = (float(dx), float(dy), float(dr), float(rng.uniform(0.3, 0.85)))
    return Geometry(label, float(cx), float(cy), float(rx), float(ry), float(angle),
                    float(cup), None if notch is None else float(notch), decoy)


def render_image(rng, cfg: SyntheticConfig, g: Geometry) -> np.ndarray:
    """3 x S x S image in [0, 1]."""
    s = cfg.image_size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    base = np.array([0.62, 0.30, 0.14]) * rng.uniform(0.85, 1.15)
    tex = 0.08 * _smooth_noise(rng, s, 6) + 0.03 * _smooth_noise(rng, s, 14)
    img = base[:, None, None] * (1.0 + tex)[None]
    # vessels leave the disc in random directions
    vessels = np.zeros((s, s))
    for k in range(int(rng.integers(4, 7))):
        theta = rng.uniform(-math.pi, math.pi)
        p = np.array([g.cx, g.cy])
        width = rng.uniform(0.5, 0.9) * s / 56
        for _ in range(8):
            theta += rng.normal(0, 0.35)
            q = p + 0.09 * s * np.array([math.cos(theta), math.sin(theta)])
            dist = _segment_distance(xx, yy, p, q)
            vessels = np.maximum(vessels, np.clip(1.0 - dist / width, 0, 1) * 0.8)
            p = q
    img = img * (1 - vessels)[None] + (np.array([0.35, 0.06, 0.04])[:, None, None] * vessels[None])
    # disc with cup; a notch widens the cup toward the rim in one sector
    rho, phi = _ellipse_rho(xx, yy, g.cx, g.cy, g.rx, g.ry, g.angle)
    disc = _soft(rho, (g.rx + g.ry) / 2)
    ratio = np.full_like(rho, g.cup_ratio)
    if g.notch_angle is not None:
        dphi = np.angle(np.exp(1j * (phi - g.notch_angle)))
        ratio = ratio + (0.95 - g.cup_ratio) * np.exp(-0.5 * (dphi / 0.3) ** 2)
    cup = _soft(rho / ratio, (g.rx + g.ry) / 2 * ratio)
    disc_col = np.array([0.95, 0.78, 0.45]) * rng.uniform(0.92, 1.05)
    cup_col = np.array([1.0, 0.96, 0.82])
    img = img * (1 - disc)[None] + disc_col[:, None, None] * disc[None] * (1 - 0.5 * vessels)[None]
    img = img * (1 - cup)[None] + cup_col[:, None, None] * cup[None]
    if g.distractor is not None:
        dx, dy, dr, inner = g.distractor
        rho_d = np.hypot(xx - dx, yy - dy) / dr
        ring = _soft(rho_d, dr) - _soft(rho_d / inner, dr * inner)
        img = img * (1 - ring)[None] + np.array([0.85, 0.92, 1.0])[:, None, None] * ring[None]
    # circular field of view
    fov = _soft(np.hypot(xx - (s - 1) / 2, yy - (s - 1) / 2) / (0.5 * s), 0.5 * s)
    img = img * fov[None]
    img = img + rng.normal(0, 0.015, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def planted_fixations(rng, cfg: SyntheticConfig, g: Geometry, image_id: str) -> List[FixationLog]:
    """Observer logs in capture coordinates: first looks land on the disc centre, later ones roam the disc."""
    scale = CAPTURE_SIZE / cfg.image_size
    r = (g.rx + g.ry) / 2
    logs = []
    for o in range(cfg.observers):
        pts = []
        for i in range(cfg.fixations_per_observer):
            spread = 0.25 * r if i == 0 else 0.6 * r
            x = (g.cx + rng.normal(0, spread) + 0.5) * scale - 0.5
            y = (g.cy + rng.normal(0, spread) + 0.5) * scale - 0.5
            pts.append((float(np.clip(x, 0, CAPTURE_SIZE - 1)), float(np.clip(y, 0, CAPTURE_SIZE - 1))))
        logs.append(FixationLog(f"obs{o + 1}", image_id, pts))
    return logs


def generate_record(cfg: SyntheticConfig, index: int, label: int):
    """(image, geometry, logs, attention grid) for one record, seeded by (seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    g = _sample_geometry(rng, cfg, label)
    img = render_image(rng, cfg, g)
    image_id = f"img{index:05d}"
    logs = planted_fixations(rng, cfg, g, image_id)
    half = cfg.image_size // 2
    att = render_attention(logs, (half, half)).grid
    return img, g, logs, att


def _labels(cfg: SyntheticConfig) -> np.ndarray:
    n_pos = exact_positive_count(cfg.count, cfg.positive_fraction)
    labels = np.zeros(cfg.count, dtype=int)
    labels[:n_pos] = 1
    np.random.default_rng([cfg.seed, 2**31 - 1]).shuffle(labels)
    return labels


def worker_count() -> int:
    try:
        cap = int(os.environ.get("AGCNN_THREADS", "1"))
    except ValueError as exc:
        raise ConfigError(f"AGCNN_THREADS must be an integer: {exc}") from exc
    return max(1, min(cap, os.cpu_count() or 1))


def synth_generate(cfg: SyntheticConfig, out_dir, ratios=DEFAULT_RATIOS,
                   split_seed: Optional[int] = None) -> DatasetManifest:
    """Write images, fixation logs, attention grids and a manifest under ``out_dir``."""
    out = Path(out_dir)
    for sub in ("images", "fixations", "attention"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    labels = _labels(cfg)

    def make(i):
        img, g, logs, att = generate_record(cfg, i, int(labels[i]))
        stem = f"img{i:05d}"
        write_ppm(out / "images" / f"{stem}.ppm", img)
        write_fixation_logs(out / "fixations" / f"{stem}.csv", logs)
        write_grid(out / "attention" / f"{stem}.agm", att)
        rec = ManifestRecord(f"images/{stem}.ppm", int(labels[i]), f"fixations/{stem}.csv",
                             f"attention/{stem}.agm", "")
        return rec, g

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(make, range(cfg.count)))
    manifest = DatasetManifest([r for r, _ in results], root=out)
    manifest = split(manifest, ratios, cfg.seed if split_seed is None else split_seed)
    manifest.save(out / "manifest.csv")
    geometry = {f"img{i:05d}": asdict(g) for i, (_, g) in enumerate(results)}
    (out / "geometry.json").write_text(json.dumps(geometry, indent=1))
    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    return manifest


def load_geometry(out_dir) -> dict:
    return json.loads((Path(out_dir) / "geometry.json").read_text())
