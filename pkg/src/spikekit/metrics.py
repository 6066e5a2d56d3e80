"""Image quality and pipeline performance measures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

__all__ = ["QualityReport", "mse", "psnr", "ssim", "quality", "ThroughputReport",
           "throughput_report", "replay_event_log"]

PEAK = 255.0


@dataclass(frozen=True)
class QualityReport:
    psnr_db: float
    ssim: float
    mse: float

    def as_dict(self) -> dict[str, float]:
        return {"psnr_db": self.psnr_db, "ssim": self.ssim, "mse": self.mse}


def _pair(ref, test) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("images are empty")
    return a, b


def mse(ref, test) -> float:
    a, b = _pair(ref, test)
    return float(np.mean((a - b) ** 2))


def psnr(ref, test) -> float:
    err = mse(ref, test)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / err)


def ssim(ref, test, window: int = 8, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over non-overlapping ``window x window`` tiles.

    Tiles are uniform (unweighted) and statistics are population moments.
    Rows and columns that do not fill a whole tile are ignored.
    """
    a, b = _pair(ref, test)
    if a.ndim != 2 or a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} SSIM window")
    h = a.shape[0] // window * window
    w = a.shape[1] // window * window

    def tiles(x: np.ndarray) -> np.ndarray:
        return x[:h, :w].reshape(h // window, window, w // window, window).swapaxes(1, 2)

    ta, tb = tiles(a), tiles(b)
    mu_a = ta.mean(axis=(2, 3))
    mu_b = tb.mean(axis=(2, 3))
    var_a = ta.var(axis=(2, 3))
    var_b = tb.var(axis=(2, 3))
    cov = ((ta - mu_a[..., None, None]) * (tb - mu_b[..., None, None])).mean(axis=(2, 3))
    c1 = (k1 * PEAK) ** 2
    c2 = (k2 * PEAK) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def quality(ref, test) -> QualityReport:
    return QualityReport(psnr(ref, test), ssim(ref, test), mse(ref, test))


@dataclass(frozen=True)
class ThroughputReport:
    fps: float
    drop_ratio: float
    produced: int
    dropped: int
    wall_time: float


def throughput_report(stats, wall_time: float) -> ThroughputReport:
    """Frames per second and the fraction dropped.

    ``stats`` is anything with integer ``produced`` and ``dropped``
    attributes, normally a :class:`spikekit.pipeline.PipelineStats`.
    """
    if not wall_time > 0:
        raise ValueError(f"wall_time must be > 0, got {wall_time}")
    produced, dropped = int(stats.produced), int(stats.dropped)
    ratio = dropped / produced if produced else 0.0
    return ThroughputReport(produced / wall_time, ratio, produced, dropped, wall_time)


def replay_event_log(events: Iterable[tuple[float, str, int]]) -> dict[str, int]:
    """Recount ``(timestamp, kind, index)`` pipeline events by kind."""
    counts: dict[str, int] = {}
    for _, kind, _ in events:
        counts[kind] = counts.get(kind, 0) + 1
    return counts
