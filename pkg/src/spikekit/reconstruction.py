"""Statistics-based image reconstruction.

Two estimators share one gray scale (calibrated so that gray value ``L``
corresponds to ``L`` spikes per 255 polls):

* TFP maps the spike count inside a window to gray, ``255 * count / full_scale``.
* TFI maps the inter-spike interval bracketing an anchor step to gray,
  ``full_scale / interval`` (``full_scale`` = 255 for the canonical calibration).

All rounding is half away from zero. Pixels without evidence render as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stream import SpikeStream, from_dense, spike_count_map, to_dense, get_block

__all__ = [
    "ReconImage",
    "round_half_away",
    "tfp",
    "tfi",
    "brighten",
    "sliding_tfp",
    "median_despike",
]


@dataclass(frozen=True)
class ReconImage:
    pixels: np.ndarray  # (H, W) uint8
    method: str
    window_start: int
    window_len: int
    anchor: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def round_half_away(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _to_gray(values: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(values), 0, 255).astype(np.uint8)


def tfp(stream: SpikeStream, start: int, window: int, full_scale: int | None = None) -> ReconImage:
    """Gray image from spike counts in ``[start, start + window)``."""
    if window < 1:
        raise IndexError(f"window must be >= 1, got {window}")
    full_scale = window if full_scale is None else full_scale
    if full_scale < 1:
        raise ValueError(f"full_scale must be >= 1, got {full_scale}")
    counts = spike_count_map(stream, start, window)
    return ReconImage(_to_gray(255.0 * counts / full_scale), "TFP", start, window)


def tfi(stream: SpikeStream, anchor: int, max_search: int, full_scale: float = 255.0) -> ReconImage:
    """Gray image from the interval between the spikes bracketing ``anchor``.

    The earlier spike is the last one at or before ``anchor`` and within
    ``max_search`` steps of it (``anchor - max_search < t0 <= anchor``); the
    later spike is the first one in ``anchor < t1 <= anchor + max_search``.
    """
    if not 0 <= anchor < stream.num_steps:
        raise IndexError(f"anchor {anchor} outside stream of {stream.num_steps} steps")
    if max_search < 1:
        raise ValueError(f"max_search must be >= 1, got {max_search}")
    lo = max(0, anchor - max_search + 1)
    hi = min(stream.num_steps, anchor + max_search + 1)
    dense = to_dense(get_block(stream, lo, hi - lo)).astype(bool)
    split = anchor - lo + 1
    before, after = dense[:split], dense[split:]

    has_before = before.any(axis=0)
    # index of last True in `before`, counted from the anchor backwards
    back = np.argmax(before[::-1], axis=0)
    t0 = anchor - back
    has_after = after.any(axis=0) if after.shape[0] else np.zeros(has_before.shape, dtype=bool)
    fwd = np.argmax(after, axis=0) if after.shape[0] else np.zeros(has_before.shape, dtype=np.intp)
    t1 = anchor + 1 + fwd

    valid = has_before & has_after
    interval = np.where(valid, t1 - t0, 1)
    gray = np.where(valid, full_scale / interval, 0.0)
    return ReconImage(_to_gray(gray), "TFI", lo, hi - lo, anchor)


def brighten(img: ReconImage, gamma: float) -> ReconImage:
    """Gamma lift for display, ``255 * (p / 255) ** (1 / gamma)``."""
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if gamma == 1:
        return img
    lifted = 255.0 * (img.pixels / 255.0) ** (1.0 / gamma)
    return ReconImage(_to_gray(lifted), img.method, img.window_start, img.window_len, img.anchor)


def sliding_tfp(stream: SpikeStream, window: int, stride: int,
                full_scale: int | None = None) -> list[ReconImage]:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if window < 1 or window > stream.num_steps:
        raise IndexError(f"window {window} does not fit stream of {stream.num_steps} steps")
    return [tfp(stream, start, window, full_scale)
            for start in range(0, stream.num_steps - window + 1, stride)]


def median_despike(stream: SpikeStream) -> SpikeStream:
    """3-step temporal median: drops isolated spikes, fills isolated gaps.

    For binary data the median of three is the majority vote. The first and
    last frames reuse their single neighbour (edge replication).
    """
    if stream.num_steps < 3:
        return stream
    d = to_dense(stream)
    prev = np.concatenate([d[:1], d[:-1]])
    nxt = np.concatenate([d[1:], d[-1:]])
    majority = (d.astype(np.uint8) + prev + nxt) >= 2
    return from_dense(majority)
