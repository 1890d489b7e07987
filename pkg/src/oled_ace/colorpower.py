"""Colour decomposition, the OLED power model and dimming algebra."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RGB_TO_YUV",
    "YUV_TO_RGB",
    "ChromaPlanes",
    "DimSpec",
    "ImageRGB",
    "LumaPlane",
    "PanelModel",
    "VideoPolicy",
    "ZeroPowerError",
    "achieved_rate",
    "apply_dim",
    "dim_ratio",
    "plan_dim",
    "rgb_to_yuv",
    "tdp_luma",
    "tdp_rgb",
    "video_rate",
    "yuv_to_rgb",
]

# BT.601 full-range (JFIF) YUV with zero-centred chroma.
RGB_TO_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
YUV_TO_RGB = np.linalg.inv(RGB_TO_YUV)


class ZeroPowerError(ValueError):
    """The reference image dissipates no power, so a rate is undefined."""


@dataclass(frozen=True)
class PanelModel:
    gamma: float = 2.2
    w0: float = 0.0
    wR: float = 1.0
    wG: float = 1.0
    wB: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if min(self.w0, self.wR, self.wG, self.wB) < 0:
            raise ValueError("panel coefficients must be non-negative")


def _check_unit_range(a: np.ndarray, what: str) -> None:
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError(f"{what} values must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class ImageRGB:
    """H x W x 3 image with values in [0, 1]."""

    pixels: np.ndarray
    name: str = ""
    out_of_gamut: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"ImageRGB needs an H x W x 3 array, got {px.shape}")
        _check_unit_range(px, "ImageRGB")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.pixels, dtype=dtype)


@dataclass(frozen=True, eq=False)
class LumaPlane:
    """Luminance plane; ``role`` is one of original, dimmed, enhanced."""

    values: np.ndarray
    role: str = "original"

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"LumaPlane needs a 2-D array, got shape {v.shape}")
        if self.role not in ("original", "dimmed", "enhanced"):
            raise ValueError(f"unknown luma role {self.role!r}")
        _check_unit_range(v, "LumaPlane")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True, eq=False)
class ChromaPlanes:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if np.shape(self.u) != np.shape(self.v) or np.ndim(self.u) != 2:
            raise ValueError("chroma planes must be 2-D and equally sized")

    @property
    def shape(self) -> tuple[int, int]:
        return np.shape(self.u)


@dataclass(frozen=True)
class DimSpec:
    rate: float
    ratio: float
    p_in: float
    p_dim: float
    achieved: float


@dataclass(frozen=True)
class VideoPolicy:
    rho: float = 1.5
    clamp: tuple[float, float] = field(default=(0.01, 0.8))

    def __post_init__(self):
        lo, hi = self.clamp
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not 0.0 <= lo <= hi < 1.0:
            raise ValueError(f"clamp interval {self.clamp} must lie within [0, 1)")


def rgb_to_yuv(image) -> tuple[LumaPlane, ChromaPlanes]:
    px = np.asarray(image, dtype=np.float64)
    yuv = px @ RGB_TO_YUV.T
    y = np.clip(yuv[..., 0], 0.0, 1.0)  # only rounding can push Y outside
    return LumaPlane(y), ChromaPlanes(yuv[..., 1], yuv[..., 2])


def yuv_to_rgb(luma, chroma: ChromaPlanes, name: str = "") -> ImageRGB:
    """Recombine luminance and chrominance, clamping out-of-gamut pixels.

    The number of pixels with at least one clamped channel is recorded in
    ``ImageRGB.out_of_gamut``.
    """
    y = np.asarray(luma, dtype=np.float64)
    if y.shape != chroma.shape:
        raise ValueError(f"luma {y.shape} and chroma {chroma.shape} differ in size")
    yuv = np.stack([y, chroma.u, chroma.v], axis=-1)
    rgb = yuv @ YUV_TO_RGB.T
    # rounding noise of the matrix pair is not a gamut violation
    tol = 1e-9
    outside = np.any((rgb < -tol) | (rgb > 1.0 + tol), axis=-1)
    return ImageRGB(np.clip(rgb, 0.0, 1.0), name=name, out_of_gamut=int(outside.sum()))


def tdp_luma(luma, panel: PanelModel = PanelModel()) -> float:
    y = np.asarray(luma, dtype=np.float64)
    return float(np.sum(np.power(y, panel.gamma)))


def tdp_rgb(image, panel: PanelModel = PanelModel()) -> float:
    px = np.asarray(image, dtype=np.float64)
    g = panel.gamma
    per_pixel = (
        panel.w0
        + panel.wR * np.power(px[..., 0], g)
        + panel.wG * np.power(px[..., 1], g)
        + panel.wB * np.power(px[..., 2], g)
    )
    return float(per_pixel.sum())


def dim_ratio(rate: float, panel: PanelModel = PanelModel()) -> float:
    """Uniform luminance scale k that removes a fraction ``rate`` of power."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"power-saving rate must lie in [0, 1), got {rate}")
    return float((1.0 - rate) ** (1.0 / panel.gamma))


def apply_dim(luma, k: float) -> LumaPlane:
    if not 0.0 < k <= 1.0:
        raise ValueError(f"dimming ratio must lie in (0, 1], got {k}")
    return LumaPlane(np.asarray(luma, dtype=np.float64) * k, role="dimmed")


def achieved_rate(original, output, panel: PanelModel = PanelModel()) -> float:
    p_in = tdp_luma(original, panel)
    if p_in <= 0.0:
        raise ZeroPowerError("input luminance has zero power; rate is undefined")
    return 1.0 - tdp_luma(output, panel) / p_in


def plan_dim(luma, rate: float, panel: PanelModel = PanelModel()) -> tuple[LumaPlane, DimSpec]:
    """Dim ``luma`` to save ``rate`` of its power and describe the result."""
    k = dim_ratio(rate, panel)
    dimmed = apply_dim(luma, k)
    p_in = tdp_luma(luma, panel)
    p_dim = tdp_luma(dimmed, panel)
    achieved = 1.0 - p_dim / p_in if p_in > 0 else float("nan")
    return dimmed, DimSpec(rate=rate, ratio=k, p_in=p_in, p_dim=p_dim, achieved=achieved)


def video_rate(luma, policy: VideoPolicy = VideoPolicy()) -> float:
    y_mean = float(np.mean(np.asarray(luma, dtype=np.float64)))
    lo, hi = policy.clamp
    return float(np.clip(y_mean**policy.rho, lo, hi))
