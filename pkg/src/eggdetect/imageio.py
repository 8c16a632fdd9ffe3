"""Grayscale frame I/O: binary PGM (P5) read/write, PNG via Pillow."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw


def save_pgm(path, pixels: np.ndarray) -> None:
    """Write an 8-bit grayscale P5 file."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    arr = arr.astype(np.uint8, copy=False)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def load_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")

    # header tokens: magic, width, height, maxval; '#' starts a comment
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).copy()


def save_png(path, pixels: np.ndarray) -> None:
    arr = np.asarray(pixels).astype(np.uint8, copy=False)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"))


def load_frame_pixels(path) -> np.ndarray:
    """Load a grayscale frame (uint8) from .pgm or .png by extension."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return load_pgm(path)
    if path.suffix.lower() == ".png":
        return load_png(path)
    raise ValueError(f"unsupported frame format: {path.suffix}")


def png_bytes(pixels: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(np.asarray(pixels).astype(np.uint8, copy=False), mode="L").save(
        buf, format="PNG"
    )
    return buf.getvalue()


def save_overlay(path, pixels: np.ndarray, boxes_with_colors) -> None:
    """Burn colored box outlines into a grayscale frame and save as PNG.

    boxes_with_colors: iterable of ((x, y, w, h), (r, g, b)).
    """
    base = Image.fromarray(np.asarray(pixels).astype(np.uint8, copy=False), mode="L")
    canvas = base.convert("RGB")
    draw = ImageDraw.Draw(canvas)
    for (x, y, w, h), color in boxes_with_colors:
        draw.rectangle([x, y, x + w - 1, y + h - 1], outline=tuple(color), width=1)
    canvas.save(path, format="PNG")
