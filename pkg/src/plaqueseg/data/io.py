"""8-bit grayscale image and mask files (binary PGM, or PNG through Pillow)."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    """File is not an 8-bit grayscale PGM/PNG we can read."""


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\d+)")


def read_pgm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P5"):
        raise ImageFormatError("not a binary PGM (missing P5 magic)")
    pos = 2
    values = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError("malformed PGM header")
        values.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = values
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise ImageFormatError("malformed PGM header")
    pos += 1
    if maxval > 255:
        raise ImageFormatError(f"only 8-bit PGM is supported (maxval {maxval})")
    if maxval < 1 or width < 1 or height < 1:
        raise ImageFormatError("invalid PGM dimensions or maxval")
    payload = data[pos:pos + width * height]
    if len(payload) != width * height:
        raise ImageFormatError(f"truncated PGM: expected {width * height} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    if maxval != 255:
        arr = np.round(arr.astype(np.float64) * 255.0 / maxval).astype(np.uint8)
    return arr.copy()


def pgm_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise ImageFormatError("PGM writer expects a 2-D uint8 array")
    h, w = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode != "L":
            raise ImageFormatError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode}")
        return np.array(im, dtype=np.uint8)


def read_u8(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        return _read_png(path)
    try:
        return read_pgm(path.read_bytes())
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from None


def write_u8(path, arr: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path)
    else:
        path.write_bytes(pgm_bytes(arr))
    return path


def to_u8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Grayscale image as float64 in [0, 1]."""
    return read_u8(path).astype(np.float64) / 255.0


def save_image(path, image: np.ndarray) -> Path:
    return write_u8(path, to_u8(image))


def load_mask(path) -> np.ndarray:
    return (read_u8(path) >= 128).astype(np.uint8)


def save_mask(path, mask: np.ndarray) -> Path:
    return write_u8(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)
