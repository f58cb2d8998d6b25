"""PNG and raw-array file helpers. Every writer goes through a temp file and a rename."""

import contextlib
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from errors import DimensionError, MissingFileError

# Part-segmentation palette, index 0 is background
SEG_PALETTE = [
    (0, 0, 0),
    (200, 200, 200), (255, 80, 80), (80, 255, 80), (80, 80, 255), (255, 255, 80),
    (255, 80, 255), (80, 255, 255), (160, 80, 0), (0, 160, 80), (80, 0, 160),
    (200, 120, 60), (60, 200, 120), (120, 60, 200), (255, 180, 120),
]


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temp path in the target directory; rename onto path on success."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=target.suffix or ".tmp", dir=target.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, target)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.remove(tmp)
        raise


def write_text_atomic(path, text: str) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(text)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_rgb(path, rgb: np.ndarray) -> None:
    """Write a float [0, 1] (or uint8) RGB image as 8-bit PNG."""
    data = rgb if rgb.dtype == np.uint8 else to_uint8(rgb)
    with atomic_path(path) as tmp:
        Image.fromarray(data).save(tmp, format="PNG")


def load_rgb(path) -> np.ndarray:
    """Read an image as float RGB in [0, 1]."""
    file_path = Path(path)
    if not file_path.is_file():
        raise MissingFileError(f"missing file: {file_path}")
    with Image.open(file_path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def load_rgba(path) -> np.ndarray:
    file_path = Path(path)
    if not file_path.is_file():
        raise MissingFileError(f"missing file: {file_path}")
    with Image.open(file_path) as img:
        return np.asarray(img.convert("RGBA"), dtype=np.float64) / 255.0


def save_rgba(path, rgba: np.ndarray) -> None:
    with atomic_path(path) as tmp:
        Image.fromarray(to_uint8(rgba)).save(tmp, format="PNG")


def save_iuv(path, iuv: np.ndarray, sixteen_bit: bool = False) -> list[Path]:
    """
    Write an IUV buffer (H, W, 3: chart, U, V).

    8-bit: one RGB PNG holding (I, round(255 U), round(255 V)). 16-bit: the
    chart as 8-bit grayscale plus U and V as separate 16-bit grayscale PNGs
    (round(65535 U), round(65535 V)) named *_u16.png and *_v16.png.
    """
    path = Path(path)
    chart = iuv[..., 0].astype(np.uint8)
    if not sixteen_bit:
        packed = np.stack([chart, to_uint8(iuv[..., 1]), to_uint8(iuv[..., 2])], axis=-1)
        with atomic_path(path) as tmp:
            Image.fromarray(packed).save(tmp, format="PNG")
        return [path]

    written = [path]
    with atomic_path(path) as tmp:
        Image.fromarray(chart).save(tmp, format="PNG")
    for index, suffix in ((1, "_u16.png"), (2, "_v16.png")):
        target = path.with_name(path.stem + suffix)
        values = np.clip(np.rint(iuv[..., index] * 65535.0), 0, 65535).astype(np.uint16)
        with atomic_path(target) as tmp:
            Image.fromarray(values).save(tmp, format="PNG")
        written.append(target)
    return written


def load_iuv(path) -> np.ndarray:
    """Read an 8-bit IUV PNG back to (chart, U, V) floats."""
    file_path = Path(path)
    if not file_path.is_file():
        raise MissingFileError(f"missing file: {file_path}")
    with Image.open(file_path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64)
    return np.stack([data[..., 0], data[..., 1] / 255.0, data[..., 2] / 255.0], axis=-1)


def save_seg(path, part_seg: np.ndarray) -> None:
    seg = np.ascontiguousarray(part_seg, dtype=np.uint8)
    img = Image.frombytes("P", (seg.shape[1], seg.shape[0]), seg.tobytes())
    img.putpalette([c for rgb in SEG_PALETTE for c in rgb])
    with atomic_path(path) as tmp:
        img.save(tmp, format="PNG")


def load_seg(path) -> np.ndarray:
    file_path = Path(path)
    if not file_path.is_file():
        raise MissingFileError(f"missing file: {file_path}")
    with Image.open(file_path) as img:
        return np.asarray(img, dtype=np.uint8)


def save_depth(path, depth: np.ndarray) -> None:
    """Raw little-endian float32, row-major (H, W); +inf marks background."""
    with atomic_path(path) as tmp:
        np.ascontiguousarray(depth, dtype="<f4").tofile(tmp)


def load_depth(path, height: int, width: int) -> np.ndarray:
    file_path = Path(path)
    if not file_path.is_file():
        raise MissingFileError(f"missing file: {file_path}")
    data = np.fromfile(file_path, dtype="<f4")
    if data.size != height * width:
        raise DimensionError(f"{file_path.name}: {data.size} values for a {width}x{height} image")
    return data.reshape(height, width)
