"""Bit-packed spike cube.

A stream of ``T`` binary frames of ``H x W`` pixels is stored as ``T``
consecutive packed frames. Inside a frame pixels are row-major and each
byte holds eight pixels, least significant bit first. Pixel ``(i, j)`` of
frame ``k`` therefore lives in bit ``(i*W + j) % 8`` of byte
``k*bytes_per_frame + (i*W + j) // 8``.

When ``H*W`` is not a multiple of 8 the trailing bits of each frame's last
byte are padding: :func:`from_dense` writes them as zero and every reader
ignores them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "StreamGeometry",
    "SpikeStream",
    "from_packed",
    "from_dense",
    "get_block",
    "to_dense",
    "spike_count_map",
]

# frames unpacked at once when summing; bounds scratch memory to ~CHUNK*H*W bytes
_COUNT_CHUNK = 256


@dataclass(frozen=True)
class StreamGeometry:
    height: int
    width: int
    num_steps: int = 0

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"height and width must be >= 1, got {self.height}x{self.width}")
        if self.num_steps < 0:
            raise ValueError(f"num_steps must be >= 0, got {self.num_steps}")

    @property
    def pixels(self) -> int:
        return self.height * self.width

    @property
    def bytes_per_frame(self) -> int:
        return (self.pixels + 7) // 8

    @property
    def nbytes(self) -> int:
        return self.num_steps * self.bytes_per_frame

    def with_steps(self, num_steps: int) -> StreamGeometry:
        return StreamGeometry(self.height, self.width, num_steps)


class SpikeStream:
    """Immutable ``H x W x T`` binary spike cube backed by packed bytes.

    ``packed`` is a read-only ``(T, bytes_per_frame)`` uint8 array. It may be
    a view into a larger buffer (a file map or a pipeline frame slot).
    """

    __slots__ = ("geometry", "packed")

    def __init__(self, geometry: StreamGeometry, packed: np.ndarray):
        expected = (geometry.num_steps, geometry.bytes_per_frame)
        if packed.shape != expected or packed.dtype != np.uint8:
            raise ValueError(f"packed array must be uint8 {expected}, got {packed.dtype} {packed.shape}")
        if packed.flags.writeable:
            packed = packed.view()
            packed.flags.writeable = False
        object.__setattr__(self, "geometry", geometry)
        object.__setattr__(self, "packed", packed)

    def __setattr__(self, name, value):
        raise AttributeError("SpikeStream is immutable")

    @property
    def height(self) -> int:
        return self.geometry.height

    @property
    def width(self) -> int:
        return self.geometry.width

    @property
    def num_steps(self) -> int:
        return self.geometry.num_steps

    def __len__(self) -> int:
        return self.geometry.num_steps

    def __repr__(self) -> str:
        g = self.geometry
        return f"SpikeStream(H={g.height}, W={g.width}, T={g.num_steps})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpikeStream):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.packed, other.packed)

    __hash__ = None  # type: ignore[assignment]

    def tobytes(self) -> bytes:
        return self.packed.tobytes()

    def get(self, i: int, j: int, k: int) -> int:
        g = self.geometry
        if not (0 <= i < g.height and 0 <= j < g.width and 0 <= k < g.num_steps):
            raise IndexError(f"({i}, {j}, {k}) outside {g.height}x{g.width}x{g.num_steps}")
        bit = i * g.width + j
        return int(self.packed[k, bit >> 3] >> (bit & 7)) & 1

    def frame_bytes(self, k: int) -> bytes:
        return self.packed[k].tobytes()

    def total_spikes(self) -> int:
        """Number of set bits, padding excluded."""
        if self.num_steps == 0:
            return 0
        total = int(np.bitwise_count(self.packed).sum(dtype=np.int64))
        pad = self.geometry.bytes_per_frame * 8 - self.geometry.pixels
        if pad:
            total -= int(np.bitwise_count(self.packed[:, -1] >> (8 - pad)).sum(dtype=np.int64))
        return total


def from_packed(data, geometry: StreamGeometry, *, flip_vertical: bool = False) -> SpikeStream:
    """Wrap a packed byte buffer as a stream.

    ``data`` can be anything exposing the buffer protocol; it is not copied.
    With ``flip_vertical`` the rows of every frame are reversed, for sensors
    that read out bottom-up.
    """
    buf = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) else data.reshape(-1)
    if buf.size != geometry.nbytes:
        raise ValueError(
            f"packed size mismatch: expected {geometry.nbytes} bytes "
            f"({geometry.num_steps} frames x {geometry.bytes_per_frame}), got {buf.size}"
        )
    packed = buf.reshape(geometry.num_steps, geometry.bytes_per_frame)
    stream = SpikeStream(geometry, packed)
    if flip_vertical:
        return from_dense(to_dense(stream)[:, ::-1, :])
    return stream


def from_dense(dense: np.ndarray) -> SpikeStream:
    """Pack a ``(T, H, W)`` array of {0, 1} (or bool) into a stream."""
    dense = np.asarray(dense)
    if dense.ndim != 3:
        raise ValueError(f"dense spikes must be (T, H, W), got shape {dense.shape}")
    t, h, w = dense.shape
    geometry = StreamGeometry(h, w, t)
    flat = dense.reshape(t, h * w)
    if flat.dtype != np.bool_:
        flat = flat != 0
    packed = np.packbits(flat, axis=1, bitorder="little")
    # packbits on a zero-length axis yields width 0; keep the frame width exact
    if packed.shape[1] != geometry.bytes_per_frame:
        packed = np.zeros((t, geometry.bytes_per_frame), dtype=np.uint8)
    return SpikeStream(geometry, packed)


def _check_window(stream: SpikeStream, start: int, length: int) -> None:
    if start < 0 or length < 0 or start + length > stream.num_steps:
        raise IndexError(
            f"window [{start}, {start + length}) outside stream of {stream.num_steps} steps"
        )


def get_block(stream: SpikeStream, start: int, length: int) -> SpikeStream:
    """Frames ``start .. start+length-1`` as a new stream (shares memory)."""
    _check_window(stream, start, length)
    return SpikeStream(stream.geometry.with_steps(length), stream.packed[start:start + length])


def to_dense(stream: SpikeStream) -> np.ndarray:
    """Unpack to a ``(T, H, W)`` uint8 array of zeros and ones."""
    g = stream.geometry
    bits = np.unpackbits(stream.packed, axis=1, count=g.pixels, bitorder="little")
    return bits.reshape(g.num_steps, g.height, g.width)


def spike_count_map(stream: SpikeStream, start: int, length: int) -> np.ndarray:
    """Per-pixel spike counts over steps ``start .. start+length-1``."""
    _check_window(stream, start, length)
    g = stream.geometry
    counts = np.zeros(g.pixels, dtype=np.int64)
    for lo in range(start, start + length, _COUNT_CHUNK):
        hi = min(lo + _COUNT_CHUNK, start + length)
        bits = np.unpackbits(stream.packed[lo:hi], axis=1, count=g.pixels, bitorder="little")
        counts += bits.sum(axis=0, dtype=np.int64)
    return counts.reshape(g.height, g.width)
