"""Integrate-and-fire spike generation.

Every pixel integrates ``gain * intensity`` into an accumulator. The sensor
is polled once per interval ``tau``; a pixel whose accumulator has reached
the threshold emits a spike at that poll and keeps ``accum mod threshold``.

Intensity is held constant across a polling interval, so each step adds
``gain * tau * intensity``. A poll emits at most one spike per pixel; if a
single step crosses the threshold more than once the extra crossings are
lost while the residual still wraps modulo the threshold. Configurations
where one step adds ``2 * threshold`` or more are outside the sensor's
useful range and trigger a :class:`SaturationWarning`.

The canonical calibration is ``threshold = 255`` and ``gain * tau = 1``:
an 8-bit pixel value ``L`` then fires ``L`` spikes every 255 steps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .stream import SpikeStream, StreamGeometry, spike_count_map

__all__ = [
    "SaturationWarning",
    "SensorConfig",
    "PixelState",
    "step",
    "simulate",
    "firing_rate",
]


class SaturationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SensorConfig:
    height: int
    width: int
    threshold: float = 255.0
    gain: float = 40_000.0  # per second; with tau = 25 us this gives gain*tau = 1
    polling_interval_us: float = 25.0
    noise_std: float = 0.0  # additive accumulator noise per step, off by default

    def __post_init__(self) -> None:
        StreamGeometry(self.height, self.width)
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")
        if not self.gain > 0:
            raise ValueError(f"gain must be > 0, got {self.gain}")
        if not self.polling_interval_us > 0:
            raise ValueError(f"polling_interval_us must be > 0, got {self.polling_interval_us}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")

    @classmethod
    def from_gain_tau(cls, height: int, width: int, gain_tau: float = 1.0, threshold: float = 255.0,
                      polling_interval_us: float = 25.0, noise_std: float = 0.0) -> SensorConfig:
        """Build a config from the per-step charge factor ``gain * tau``."""
        return cls(height, width, threshold, gain_tau * 1e6 / polling_interval_us,
                   polling_interval_us, noise_std)

    @property
    def geometry(self) -> StreamGeometry:
        return StreamGeometry(self.height, self.width)

    @property
    def gain_tau(self) -> float:
        """Charge added per step per unit intensity."""
        return self.gain * self.polling_interval_us / 1e6


@dataclass
class PixelState:
    """Per-pixel accumulator residual, always in ``[0, threshold)``."""

    residual: np.ndarray

    @classmethod
    def zeros(cls, config: SensorConfig) -> PixelState:
        return cls(np.zeros((config.height, config.width), dtype=np.float64))

    @classmethod
    def uniform(cls, config: SensorConfig, seed: int | None = None) -> PixelState:
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(0.0, config.threshold, size=(config.height, config.width)))

    def copy(self) -> PixelState:
        return PixelState(self.residual.copy())


def _check_frame(frame: np.ndarray, config: SensorConfig) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (config.height, config.width):
        raise ValueError(f"intensity frame shape {frame.shape} != sensor {(config.height, config.width)}")
    if np.any(frame < 0) or not np.all(np.isfinite(frame)):
        raise ValueError("intensity must be finite and nonnegative")
    return frame


def _warn_if_saturating(charge: np.ndarray, config: SensorConfig) -> None:
    if charge.size and charge.max() >= 2 * config.threshold:
        warnings.warn(
            f"per-step charge {charge.max():g} >= 2*threshold ({2 * config.threshold:g}); "
            "multiple crossings per poll collapse to one spike",
            SaturationWarning,
            stacklevel=3,
        )


def _advance(residual: np.ndarray, charge: np.ndarray, threshold: float,
             out: np.ndarray, rng: np.random.Generator | None, noise_std: float) -> None:
    """One poll in place: ``out`` receives the spike mask, ``residual`` wraps."""
    np.add(residual, charge, out=residual)
    if rng is not None:
        residual += rng.normal(0.0, noise_std, size=residual.shape)
        np.maximum(residual, 0.0, out=residual)
    np.greater_equal(residual, threshold, out=out)
    np.fmod(residual, threshold, out=residual)


def step(state: PixelState, intensity_frame: np.ndarray, config: SensorConfig,
         rng: np.random.Generator | None = None) -> tuple[PixelState, np.ndarray]:
    """Advance every pixel by one polling interval.

    Returns the new state and the ``H x W`` uint8 spike frame. ``rng`` is
    only consulted when ``config.noise_std > 0``.
    """
    frame = _check_frame(intensity_frame, config)
    charge = frame * config.gain_tau
    _warn_if_saturating(charge, config)
    residual = np.array(state.residual, dtype=np.float64, copy=True)
    spikes = np.empty(residual.shape, dtype=bool)
    if config.noise_std > 0 and rng is None:
        rng = np.random.default_rng()
    _advance(residual, charge, config.threshold, spikes,
             rng if config.noise_std > 0 else None, config.noise_std)
    return PixelState(residual), spikes.view(np.uint8)


def simulate(frames: Sequence[np.ndarray] | Iterable[np.ndarray], repeats_per_frame: int,
             config: SensorConfig, initial: PixelState | str = "zeros",
             seed: int | None = None, return_state: bool = False):
    """Turn a sequence of intensity frames into a spike stream.

    Each frame is held for ``repeats_per_frame`` polls. ``initial`` is a
    :class:`PixelState` or one of ``"zeros"`` / ``"uniform"``; the uniform
    policy and the noise hook draw from ``seed``.
    """
    if repeats_per_frame < 1:
        raise ValueError(f"repeats_per_frame must be >= 1, got {repeats_per_frame}")
    frames = [_check_frame(f, config) for f in frames]
    if not frames:
        raise ValueError("need at least one intensity frame")

    rng = np.random.default_rng(seed)
    if isinstance(initial, PixelState):
        residual = np.array(initial.residual, dtype=np.float64, copy=True)
        if residual.shape != (config.height, config.width):
            raise ValueError(f"initial state shape {residual.shape} does not match sensor")
    elif initial == "zeros":
        residual = np.zeros((config.height, config.width), dtype=np.float64)
    elif initial == "uniform":
        residual = rng.uniform(0.0, config.threshold, size=(config.height, config.width))
    else:
        raise ValueError(f"unknown initial policy {initial!r}")
    noise_rng = rng if config.noise_std > 0 else None

    geometry = config.geometry.with_steps(len(frames) * repeats_per_frame)
    packed = np.empty((geometry.num_steps, geometry.bytes_per_frame), dtype=np.uint8)
    spikes = np.empty(residual.shape, dtype=bool)
    flat = spikes.reshape(-1)
    k = 0
    for frame in frames:
        charge = frame * config.gain_tau
        _warn_if_saturating(charge, config)
        for _ in range(repeats_per_frame):
            _advance(residual, charge, config.threshold, spikes, noise_rng, config.noise_std)
            packed[k] = np.packbits(flat, bitorder="little")
            k += 1

    stream = SpikeStream(geometry, packed)
    if return_state:
        return stream, PixelState(residual)
    return stream


def firing_rate(stream: SpikeStream, window: int) -> np.ndarray:
    """Spike rate per step over the trailing ``window`` polls, in ``[0, 1]``."""
    if window <= 0:
        raise ValueError(f"window must be >= 1, got {window}")
    if window > stream.num_steps:
        raise IndexError(f"window {window} longer than stream ({stream.num_steps} steps)")
    counts = spike_count_map(stream, stream.num_steps - window, window)
    return counts / float(window)
