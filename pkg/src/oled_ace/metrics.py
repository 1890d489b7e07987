"""Reference quality metrics: SSIM, EME and NDE, plus Table-style reports.

These are plain numpy/scipy implementations with no gradient support. The
SSIM here is deliberately independent of the differentiable one in
:mod:`oled_ace.losses` so each can check the other.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

__all__ = [
    "CSV_HEADER",
    "MetricRow",
    "MetricsReport",
    "SsimParams",
    "eme",
    "gaussian_taps",
    "nde",
    "quantize8",
    "report",
    "ssim",
    "ssim_map",
]

CSV_HEADER = ("image", "R_requested", "R_measured", "EME", "NDE", "SSIM")


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 1:
            raise ValueError("SSIM window must be a positive odd size")
        if not self.sigma > 0:
            raise ValueError("SSIM gaussian sigma must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def gaussian_taps(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalised 1-D Gaussian; its outer product is the SSIM window."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def ssim_map(a, b, params: SsimParams = SsimParams()) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"SSIM inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < params.window:
        raise ValueError(f"SSIM needs 2-D planes of at least {params.window}x{params.window}")

    g = gaussian_taps(params.window, params.sigma)
    win = np.outer(g, g)

    def blur(z):
        return convolve2d(z, win, mode="valid")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    c1, c2 = params.c1, params.c2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, params: SsimParams = SsimParams()) -> float:
    """Mean SSIM over the valid region of the Gaussian window."""
    return float(ssim_map(a, b, params).mean())


def quantize8(plane) -> np.ndarray:
    y = np.asarray(plane, dtype=np.float64)
    return np.clip(np.rint(y * 255.0), 0, 255).astype(np.int64)


def eme(plane, block: int = 8) -> float:
    """Measure of enhancement over complete, non-overlapping blocks.

    Each block scores ``20*log10((max + 1) / (min + 1))`` on 8-bit levels;
    partial blocks at the right and bottom edges are dropped.
    """
    q = quantize8(plane)
    if q.ndim != 2:
        raise ValueError("EME expects a 2-D plane")
    H, W = q.shape
    by, bx = H // block, W // block
    if by == 0 or bx == 0:
        raise ValueError(f"image {H}x{W} is smaller than one {block}x{block} block")
    tiles = q[: by * block, : bx * block].reshape(by, block, bx, block)
    hi = tiles.max(axis=(1, 3)).astype(np.float64)
    lo = tiles.min(axis=(1, 3)).astype(np.float64)
    return float(np.mean(20.0 * np.log10((hi + 1.0) / (lo + 1.0))))


def nde(plane) -> float:
    """Discrete entropy of the 8-bit histogram, divided by 8 bits."""
    q = quantize8(plane)
    if q.size == 0:
        raise ValueError("NDE of an empty plane")
    counts = np.bincount(q.ravel(), minlength=256).astype(np.float64)
    p = counts[counts > 0] / q.size
    return float(-(p * np.log2(p)).sum() / 8.0)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricRow:
    image: str
    r_requested: float
    r_measured: float
    eme: float
    nde: float
    ssim: float

    def values(self) -> tuple[float, ...]:
        return (self.r_requested, self.r_measured, self.eme, self.nde, self.ssim)


def _mean_row(label: str, rows: Sequence[MetricRow]) -> MetricRow:
    cols = np.array([r.values() for r in rows], dtype=np.float64)
    means = cols.mean(axis=0)
    return MetricRow(label, *(float(v) for v in means))


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[MetricRow, ...]
    by_rate: dict[float, MetricRow]
    overall: MetricRow

    def to_csv(self, path: str | Path | None = None) -> str:
        """Serialise as CSV; per-rate means are labelled ``avg@R``, the grand mean ``avg``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in (*self.rows, *self.by_rate.values(), self.overall):
            w.writerow([row.image, *(repr(v) for v in row.values())])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> MetricsReport:
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        rows = [
            MetricRow(rec[0], *(float(v) for v in rec[1:]))
            for rec in reader
            if rec and not rec[0].startswith("avg")
        ]
        return report(rows)


def report(rows: Iterable[MetricRow]) -> MetricsReport:
    rows = tuple(rows)
    if not rows:
        raise ValueError("cannot build a metrics report from zero rows")
    groups: dict[float, list[MetricRow]] = defaultdict(list)
    for r in rows:
        groups[round(r.r_requested, 12)].append(r)
    by_rate = {rate: _mean_row(f"avg@{rate:g}", grp) for rate, grp in sorted(groups.items())}
    return MetricsReport(rows=rows, by_rate=by_rate, overall=_mean_row("avg", rows))
