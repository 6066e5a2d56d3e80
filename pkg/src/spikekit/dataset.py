"""Standardized spike datasets on disk.

Layout::

    <root>/<root-name>.info     shared stream metadata
    <root>/<stem>.dat           one spike recording per sample
    <root>/gt/<stem>.pgm|.png   optional ground-truth image per sample

:func:`scan` builds a :class:`DatasetDescriptor`, whose
:meth:`~DatasetDescriptor.data_parameter_dict` is the plain-dict form used
to configure loaders, and which round-trips through a ``key = value``
manifest file.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import CorruptFileError, MetaSchemaError, StreamMeta, read_dat, read_meta
from .imageio import IMAGE_SUFFIXES, read_gray
from .stream import SpikeStream, from_packed, get_block

__all__ = [
    "SampleEntry",
    "DatasetDescriptor",
    "Sample",
    "UnmatchedLabelsWarning",
    "scan",
    "load_sample",
    "write_manifest",
    "read_manifest",
    "MANIFEST_NAME",
]

MANIFEST_NAME = "dataset.manifest"


class UnmatchedLabelsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SampleEntry:
    stem: str
    spike_path: Path
    label_path: Path | None
    num_steps: int


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    root: Path
    width: int
    height: int
    label_type: str
    meta: StreamMeta
    samples: tuple[SampleEntry, ...]

    def __len__(self) -> int:
        return len(self.samples)

    def data_parameter_dict(self) -> dict:
        return {
            "name": self.name,
            "root": str(self.root),
            "spike_h": self.height,
            "spike_w": self.width,
            "label_type": self.label_type,
            "polling_interval_us": self.meta.polling_interval_us,
            "path_list": [str(s.spike_path) for s in self.samples],
            "label_list": [None if s.label_path is None else str(s.label_path) for s in self.samples],
        }


@dataclass
class Sample:
    stem: str
    spikes: SpikeStream
    label: np.ndarray | None = None


def _find_meta(root: Path) -> Path:
    preferred = root / f"{root.name}.info"
    if preferred.is_file():
        return preferred
    infos = sorted(root.glob("*.info"))
    if len(infos) == 1:
        return infos[0]
    if not infos:
        raise MetaSchemaError(f"{root}: no .info metadata file")
    raise MetaSchemaError(f"{root}: several .info files and none named {preferred.name}")


def scan(root: str | os.PathLike, name: str | None = None) -> DatasetDescriptor:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    meta = read_meta(_find_meta(root))
    bpf = meta.bytes_per_frame

    gt_dir = root / "gt"
    labels: dict[str, Path] = {}
    if gt_dir.is_dir():
        for p in sorted(gt_dir.iterdir()):
            if p.suffix.lower() in IMAGE_SUFFIXES and p.stem not in labels:
                labels[p.stem] = p

    samples = []
    for dat in sorted(root.glob("*.dat")):
        size = dat.stat().st_size
        if size % bpf:
            raise CorruptFileError(
                f"{dat}: size {size} does not match {meta.height}x{meta.width} frames "
                f"({bpf} bytes each, {size % bpf} left over)")
        samples.append(SampleEntry(dat.stem, dat, labels.get(dat.stem), size // bpf))

    unmatched = [s.stem for s in samples if s.label_path is None]
    if samples and not unmatched:
        label_type = "image"
    else:
        label_type = "raw"
        if labels and unmatched:
            warnings.warn(f"{root}: no ground truth for {', '.join(unmatched)}; treating dataset as raw",
                          UnmatchedLabelsWarning, stacklevel=2)
    return DatasetDescriptor(name or root.name, root, meta.width, meta.height, label_type, meta,
                             tuple(samples))


def load_sample(desc: DatasetDescriptor, index: int, block: tuple[int, int] | None = None) -> Sample:
    """Load sample ``index``; ``block=(start, length)`` restricts it to a frame window."""
    if not 0 <= index < len(desc.samples):
        raise IndexError(f"sample index {index} outside 0..{len(desc.samples) - 1}")
    entry = desc.samples[index]
    if block is None:
        spikes = read_dat(entry.spike_path, desc.meta)
    else:
        start, length = block
        if start < 0 or length < 0 or start + length > entry.num_steps:
            raise IndexError(f"block [{start}, {start + length}) outside {entry.num_steps} frames "
                             f"of {entry.spike_path.name}")
        bpf = desc.meta.bytes_per_frame
        with open(entry.spike_path, "rb") as fh:
            fh.seek(start * bpf)
            data = fh.read(length * bpf)
        spikes = from_packed(data, desc.meta.geometry(length))
    label = None
    if entry.label_path is not None:
        label = read_gray(entry.label_path)
        if label.shape != (desc.height, desc.width):
            raise ValueError(f"{entry.label_path}: label shape {label.shape} != "
                             f"spike geometry {(desc.height, desc.width)}")
    return Sample(entry.stem, spikes, label)


def load_block_via_full(desc: DatasetDescriptor, index: int, start: int, length: int) -> SpikeStream:
    """Reference path: load the whole file, then slice."""
    return get_block(read_dat(desc.samples[index].spike_path, desc.meta), start, length)


def write_manifest(desc: DatasetDescriptor, path: str | os.PathLike | None = None) -> Path:
    path = Path(path) if path is not None else desc.root / MANIFEST_NAME
    lines = [
        f"name = {desc.name}",
        f"root = {desc.root}",
        f"width = {desc.width}",
        f"height = {desc.height}",
        f"polling_interval_us = {desc.meta.polling_interval_us!r}",
        f"label_type = {desc.label_type}",
        f"meta.label_type = {desc.meta.label_type}",
        *(f"meta.extra.{k} = {v}" for k, v in desc.meta.extra.items()),
        f"samples = {len(desc.samples)}",
    ]
    for i, s in enumerate(desc.samples):
        lines.append(f"sample.{i}.stem = {s.stem}")
        lines.append(f"sample.{i}.spikes = {os.path.relpath(s.spike_path, desc.root)}")
        lines.append(f"sample.{i}.frames = {s.num_steps}")
        if s.label_path is not None:
            lines.append(f"sample.{i}.label = {os.path.relpath(s.label_path, desc.root)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | os.PathLike) -> DatasetDescriptor:
    entries: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise MetaSchemaError(f"{path}: malformed manifest line {raw!r}")
        entries[key.strip()] = value.strip()
    try:
        root = Path(entries["root"])
        extra = {k[len("meta.extra."):]: v for k, v in entries.items() if k.startswith("meta.extra.")}
        meta = StreamMeta(int(entries["width"]), int(entries["height"]),
                          float(entries["polling_interval_us"]),
                          entries.get("meta.label_type", "raw"), extra)
        samples = []
        for i in range(int(entries["samples"])):
            label = entries.get(f"sample.{i}.label")
            samples.append(SampleEntry(
                entries[f"sample.{i}.stem"],
                root / entries[f"sample.{i}.spikes"],
                None if label is None else root / label,
                int(entries[f"sample.{i}.frames"]),
            ))
        return DatasetDescriptor(entries["name"], root, meta.width, meta.height, entries["label_type"],
                                 meta, tuple(samples))
    except KeyError as exc:
        raise MetaSchemaError(f"{path}: manifest missing key {exc.args[0]!r}") from None
