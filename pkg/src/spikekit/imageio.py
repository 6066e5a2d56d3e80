"""8-bit grayscale image files: binary PGM natively, PNG through Pillow."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

__all__ = ["read_pgm", "write_pgm", "read_gray", "write_gray", "IMAGE_SUFFIXES"]

IMAGE_SUFFIXES = (".pgm", ".png")


def write_pgm(pixels: np.ndarray, path: str | os.PathLike) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {pixels.shape}")
    h, w = pixels.shape
    data = np.clip(pixels, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(data).tobytes())


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ValueError("malformed PGM header")
        tokens.append(int(buf[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    (w, h, maxval), offset = _pgm_tokens(buf, 3)
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    raster = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=offset)
    return raster.reshape(h, w).copy()


def read_gray(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit grayscale PGM or PNG as an ``(H, W)`` uint8 array."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - Pillow is optional
        raise RuntimeError(f"reading {path.suffix} files needs Pillow") from exc
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8).copy()


def write_gray(pixels: np.ndarray, path: str | os.PathLike) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(pixels, path)
        return
    from PIL import Image

    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)
