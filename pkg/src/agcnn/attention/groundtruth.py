"""Fixation logs to attention maps, and the database analyses built on them."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from agcnn.errors import InputError, UndefinedCorrelationError

CAPTURE_SIZE = 500       # capture resolution of the clearing experiment (pixels)
CAPTURE_SIGMA = 25.0     # Gaussian std at the capture resolution
CAPTURE_RADIUS = 40.0    # radius of one cleared circle at the capture resolution


@dataclass(frozen=True)
class FixationLog:
    """Ordered cleared-circle centres of one observer on one image.

    ``fixations[i]`` is the ``(x, y)`` centre of the (i+1)-th cleared circle,
    in pixels of the source image (x to the right, y down).
    """

    observer: str
    image_id: str
    fixations: Tuple[Tuple[float, float], ...]
    source_size: Tuple[int, int] = (CAPTURE_SIZE, CAPTURE_SIZE)  # (H, W)

    def __post_init__(self):
        object.__setattr__(self, "fixations", tuple((float(x), float(y)) for x, y in self.fixations))
        h, w = self.source_size
        for i, (x, y) in enumerate(self.fixations, start=1):
            if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
                raise InputError(f"fixation {i} of observer {self.observer} on image "
                                 f"{self.image_id} at ({x}, {y}) is outside {w}x{h}")

    def __len__(self) -> int:
        return len(self.fixations)

    def appended(self, x: float, y: float) -> "FixationLog":
        return FixationLog(self.observer, self.image_id, self.fixations + ((x, y),), self.source_size)


@dataclass
class AttentionMap:
    grid: np.ndarray
    source_size: Tuple[int, int] = (CAPTURE_SIZE, CAPTURE_SIZE)
    peak_scale: float = field(default=1.0, compare=False)

    @property
    def shape(self) -> tuple:
        return self.grid.shape


def square_decay(order: np.ndarray) -> np.ndarray:
    """Weight 1/i^2 for the i-th fixation (i starts at 1)."""
    return 1.0 / np.asarray(order, dtype=np.float64) ** 2


def default_sigma(out_size: Tuple[int, int]) -> float:
    """Gaussian std in output pixels: 25 px at 500 px width, scaled linearly."""
    return CAPTURE_SIGMA * out_size[1] / CAPTURE_SIZE


def accumulate_fixations(
    logs: Sequence[FixationLog],
    out_size: Tuple[int, int],
    sigma: Optional[float] = None,
    decay: Callable[[np.ndarray], np.ndarray] = square_decay,
) -> np.ndarray:
    """Unnormalized sum of order-weighted Gaussians over all observers.

    ``sigma`` is in output pixels (default from :func:`default_sigma`).
    Gaussians are truncated at the border without renormalization.
    """
    logs = list(logs)
    if not logs or all(len(log) == 0 for log in logs):
        raise InputError("no fixations to render")
    images = {log.image_id for log in logs}
    if len(images) > 1:
        raise InputError(f"logs mix several images: {sorted(images)}")
    h, w = out_size
    sigma = default_sigma(out_size) if sigma is None else float(sigma)
    if sigma <= 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    acc = np.zeros((h, w))
    for log in logs:
        if not log.fixations:
            continue
        sh, sw = log.source_size
        pts = np.asarray(log.fixations)
        # pixel-centre mapping from source to output grid
        cx = (pts[:, 0] + 0.5) * (w / sw) - 0.5
        cy = (pts[:, 1] + 0.5) * (h / sh) - 0.5
        weights = decay(np.arange(1, len(pts) + 1))
        for x0, y0, wt in zip(cx, cy, weights):
            gy = np.exp(-0.5 * ((ys - y0) / sigma) ** 2)
            gx = np.exp(-0.5 * ((xs - x0) / sigma) ** 2)
            acc += wt * (gy * gx)
    return acc


def render_attention(
    logs: Sequence[FixationLog],
    out_size: Tuple[int, int],
    sigma: Optional[float] = None,
    decay: Callable[[np.ndarray], np.ndarray] = square_decay,
) -> AttentionMap:
    """Render fixation logs into an attention map rescaled so its maximum is 1."""
    acc = accumulate_fixations(logs, out_size, sigma, decay)
    peak = acc.max()
    if not peak > 0:
        raise InputError("fixations contribute nothing to the output grid")
    grid = acc / peak
    return AttentionMap(grid, tuple(logs[0].source_size), peak_scale=float(peak))


def _grid(m) -> np.ndarray:
    return m.grid if isinstance(m, AttentionMap) else np.asarray(m, dtype=np.float64)


def pearson_cc(a, b) -> float:
    """Pearson correlation over all cells of two equally sized maps."""
    a, b = _grid(a).ravel(), _grid(b).ravel()
    if a.shape != b.shape:
        raise InputError(f"map sizes differ: {a.size} vs {b.size} cells")
    if a.max() == a.min() or b.max() == b.min():
        raise UndefinedCorrelationError("correlation undefined for a constant map")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    return float(np.clip(np.dot(da, db) / (na * nb), -1.0, 1.0))


def random_baseline_map(shape, rng: np.random.Generator) -> np.ndarray:
    """Independent unit Gaussians per cell, min-max normalized to [0, 1]."""
    noise = rng.standard_normal(shape)
    return (noise - noise.min()) / (noise.max() - noise.min())


@dataclass
class ConsistencyRow:
    observer: str
    mean_cc: float
    mean_random_cc: float
    n_images: int


def observer_consistency(
    logs_by_image: Mapping[str, Sequence[FixationLog]],
    out_size: Tuple[int, int],
    sigma: Optional[float] = None,
    seed: int = 0,
) -> List[ConsistencyRow]:
    """One-vs-rest CC per observer, averaged over images, with a random baseline.

    For every image, each observer's map is correlated with the map rendered
    from all remaining observers of that image, and with a seeded
    Gaussian-noise map.
    """
    rng = np.random.default_rng(seed)
    per_obs: Dict[str, List[float]] = defaultdict(list)
    per_obs_rand: Dict[str, List[float]] = defaultdict(list)
    for image_id in sorted(logs_by_image):
        logs = [log for log in logs_by_image[image_id] if len(log) > 0]
        if len({log.observer for log in logs}) < 2:
            raise InputError(f"image {image_id} needs at least two observers with fixations")
        for log in sorted(logs, key=lambda l: l.observer):
            own = render_attention([log], out_size, sigma).grid
            rest = render_attention([l for l in logs if l.observer != log.observer],
                                    out_size, sigma).grid
            per_obs[log.observer].append(_cc_or_nan(own, rest))
            per_obs_rand[log.observer].append(
                _cc_or_nan(own, random_baseline_map(out_size, rng)))
    return [ConsistencyRow(obs, float(np.nanmean(per_obs[obs])),
                           float(np.nanmean(per_obs_rand[obs])), len(per_obs[obs]))
            for obs in sorted(per_obs)]


def _cc_or_nan(a, b) -> float:
    try:
        return pearson_cc(a, b)
    except UndefinedCorrelationError:
        return float("nan")


def proportion_above(m, threshold: float) -> float:
    """Fraction of cells whose value is strictly above ``threshold``."""
    if not np.isfinite(threshold):
        raise InputError(f"threshold must be finite, got {threshold}")
    g = _grid(m)
    return float(np.count_nonzero(g > threshold)) / g.size


def proportion_curve(m, thresholds: Iterable[float]) -> np.ndarray:
    return np.array([proportion_above(m, t) for t in thresholds])


def cleared_mask(log: FixationLog, radius: float) -> np.ndarray:
    """Boolean union of cleared discs, rasterized on the source pixel grid."""
    if radius <= 0:
        raise InputError(f"radius must be positive, got {radius}")
    h, w = log.source_size
    mask = np.zeros((h, w), dtype=bool)
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    for x0, y0 in log.fixations:
        mask |= (xs - x0) ** 2 + (ys - y0) ** 2 <= radius * radius
    return mask


def cleared_fraction(log: FixationLog, radius: Optional[float] = None) -> float:
    """Area of the union of cleared circles over the image area.

    The default radius is 40 px at the 500 px capture width, scaled to the
    log's source size.
    """
    if radius is None:
        radius = CAPTURE_RADIUS * log.source_size[1] / CAPTURE_SIZE
    if radius <= 0:
        raise InputError(f"radius must be positive, got {radius}")
    if len(log) == 0:
        return 0.0
    mask = cleared_mask(log, radius)
    return float(mask.mean())
