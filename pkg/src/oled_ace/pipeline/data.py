"""PNG image I/O and the seeded train/test split."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..colorpower import ImageRGB

IMAGE_SUFFIXES = (".png",)


@dataclass(frozen=True)
class Dataset:
    train: tuple[ImageRGB, ...]
    test: tuple[ImageRGB, ...]


def read_image(path: str | Path) -> ImageRGB:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I", "F"):
                raise ValueError(f"{path.name}: expected 8-bit channels, got mode {im.mode}")
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise ValueError(f"no such image: {path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"cannot decode {path}: {exc}") from None
    return ImageRGB(rgb, name=path.name)


def to_uint8(pixels) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_image(path: str | Path, image) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")
    return path


def list_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_images(directory: str | Path) -> list[ImageRGB]:
    """Decode every PNG in ``directory``; undecodable files are skipped with a warning."""
    paths = list_images(directory)
    if not paths:
        raise ValueError(f"no PNG images in {directory}")
    images = []
    for p in paths:
        try:
            images.append(read_image(p))
        except ValueError as exc:
            warnings.warn(f"skipping {p.name}: {exc}", stacklevel=2)
    if not images:
        raise ValueError(f"none of the {len(paths)} files in {directory} could be decoded")
    return images


def split(images, n_train: int, n_test: int, seed: int) -> Dataset:
    if n_train < 1 or n_test < 1:
        raise ValueError("split sizes must be positive")
    need = n_train + n_test
    if need > len(images):
        raise ValueError(f"split {n_train}+{n_test}={need} exceeds the {len(images)} usable images")
    order = np.random.default_rng(seed).permutation(len(images))
    picked = [images[i] for i in order]
    return Dataset(tuple(picked[:n_train]), tuple(picked[n_train:need]))


def load_dataset(directory: str | Path, n_train: int, n_test: int, seed: int = 0) -> Dataset:
    return split(load_images(directory), n_train, n_test, seed)


def random_crop(plane: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Square crop at a random offset; ``size=0`` or an oversized crop keeps what fits."""
    H, W = plane.shape[:2]
    if size == 0:
        return plane
    ch, cw = min(size, H), min(size, W)
    y = int(rng.integers(H - ch + 1))
    x = int(rng.integers(W - cw + 1))
    return plane[y : y + ch, x : x + cw]
