"""Spike files (``.dat``) and their sidecar metadata (``.info``).

A ``.dat`` file is nothing but packed frames back to back; it has no header
and no magic bytes, so it can be appended to during a live capture. The
geometry comes from the sidecar ``<stem>.info``, a UTF-8 text file of
``key = value`` lines where ``#`` starts a comment.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .stream import SpikeStream, StreamGeometry, from_packed

__all__ = [
    "LABEL_TYPES",
    "CorruptFileError",
    "MetaSchemaError",
    "StreamMeta",
    "read_dat",
    "write_dat",
    "read_meta",
    "write_meta",
    "meta_path_for",
    "load_stream",
]

LABEL_TYPES = ("raw", "image", "flow", "depth", "detection", "tracking", "recognition")

DEFAULT_POLLING_INTERVAL_US = 25.0
_KNOWN_KEYS = ("width", "height", "polling_interval_us", "label_type")


class CorruptFileError(ValueError):
    pass


class MetaSchemaError(ValueError):
    pass


@dataclass
class StreamMeta:
    width: int
    height: int
    polling_interval_us: float = DEFAULT_POLLING_INTERVAL_US
    label_type: str = "raw"
    extra: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise MetaSchemaError(f"width and height must be >= 1, got {self.width}x{self.height}")
        if not self.polling_interval_us > 0:
            raise MetaSchemaError(f"polling_interval_us must be > 0, got {self.polling_interval_us}")
        if self.label_type not in LABEL_TYPES:
            raise MetaSchemaError(f"unknown label_type {self.label_type!r}; expected one of {LABEL_TYPES}")

    def geometry(self, num_steps: int = 0) -> StreamGeometry:
        return StreamGeometry(self.height, self.width, num_steps)

    @property
    def bytes_per_frame(self) -> int:
        return (self.width * self.height + 7) // 8


def meta_path_for(dat_path: str | os.PathLike) -> Path:
    return Path(dat_path).with_suffix(".info")


def read_dat(path: str | os.PathLike, meta: StreamMeta, *, flip_vertical: bool = False,
             mmap: bool = False) -> SpikeStream:
    """Load a headerless spike file.

    With ``mmap=True`` the frames are memory-mapped instead of read, which
    is what the replay source wants for large recordings.
    """
    path = Path(path)
    bpf = meta.bytes_per_frame
    size = path.stat().st_size
    if size % bpf:
        raise CorruptFileError(
            f"{path}: size {size} is not a multiple of {bpf} bytes/frame "
            f"({meta.height}x{meta.width}); {size % bpf} trailing bytes"
        )
    geometry = meta.geometry(size // bpf)
    if mmap and size:
        data = np.memmap(path, dtype=np.uint8, mode="r", shape=(size,))
    else:
        data = path.read_bytes()
    return from_packed(data, geometry, flip_vertical=flip_vertical)


def write_dat(stream: SpikeStream, path: str | os.PathLike) -> None:
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(np.ascontiguousarray(stream.packed).data)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write spike file {path}: {exc.strerror}") from exc


def _parse_int(key: str, value: str, path) -> int:
    try:
        return int(value)
    except ValueError:
        raise MetaSchemaError(f"{path}: {key} must be an integer, got {value!r}") from None


def read_meta(path: str | os.PathLike) -> StreamMeta:
    path = Path(path)
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise MetaSchemaError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        entries[key.strip()] = value.strip()

    for key in ("width", "height"):
        if key not in entries:
            raise MetaSchemaError(f"{path}: missing required key {key!r}")
    interval = entries.get("polling_interval_us", str(DEFAULT_POLLING_INTERVAL_US))
    try:
        polling = float(interval)
    except ValueError:
        raise MetaSchemaError(f"{path}: polling_interval_us must be a number, got {interval!r}") from None
    return StreamMeta(
        width=_parse_int("width", entries["width"], path),
        height=_parse_int("height", entries["height"], path),
        polling_interval_us=polling,
        label_type=entries.get("label_type", "raw"),
        extra={k: v for k, v in entries.items() if k not in _KNOWN_KEYS},
    )


def _fmt_number(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def write_meta(meta: StreamMeta, path: str | os.PathLike) -> None:
    lines = [
        f"width = {meta.width}",
        f"height = {meta.height}",
        f"polling_interval_us = {_fmt_number(meta.polling_interval_us)}",
        f"label_type = {meta.label_type}",
    ]
    for key, value in meta.extra.items():
        if "=" in key or "\n" in key or "\n" in value or not key.strip() or key.strip().startswith("#"):
            raise MetaSchemaError(f"extra entry {key!r} cannot be written as a key = value line")
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_stream(dat_path: str | os.PathLike, meta_path: str | os.PathLike | None = None,
                **kwargs) -> tuple[SpikeStream, StreamMeta]:
    """Read a ``.dat`` together with its sidecar (or an explicit meta file)."""
    meta = read_meta(meta_path if meta_path is not None else meta_path_for(dat_path))
    return read_dat(dat_path, meta, **kwargs), meta
