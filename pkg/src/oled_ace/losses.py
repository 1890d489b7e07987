"""Unsupervised training losses: power, similarity and contrast.

All functions accept numpy arrays or :class:`~oled_ace.ndops.Tensor`
planes (H x W) and return scalar tensors, so the total can be
back-propagated through the enhanced plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndops as nd
from .colorpower import PanelModel, ZeroPowerError
from .metrics import SsimParams, gaussian_taps
from .ndops import Tensor

__all__ = [
    "ALL_TERMS",
    "EPS",
    "LOCAL_WINDOW",
    "LossBreakdown",
    "LossWeights",
    "PatchStats",
    "achieved_rate_tensor",
    "global_contrast_loss",
    "local_contrast_loss",
    "patch_stats",
    "power_loss",
    "similarity_loss",
    "ssim_tensor",
    "total_loss",
    "w_std",
]

EPS = 1e-4
LOCAL_WINDOW = 11
ALL_TERMS = frozenset({"power", "similarity", "global", "local"})


@dataclass(frozen=True)
class LossWeights:
    lambda_p: float = 10.0
    lambda_s: float = 2.0
    lambda_c: float = 0.25
    lambda_g: float = 2.0

    def __post_init__(self):
        if min(self.lambda_p, self.lambda_s, self.lambda_c, self.lambda_g) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    l_p: float
    l_s: float
    l_c_global: float
    l_c_local: float
    l_total: float
    rate: float
    achieved: float
    total: Tensor = field(repr=False, compare=False)


@dataclass(frozen=True)
class PatchStats:
    mean: np.ndarray
    std: np.ndarray


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _check_same(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"planes differ in shape: {a.shape} vs {b.shape}")


def patch_stats(plane, size: int = LOCAL_WINDOW) -> PatchStats:
    t = _as_tensor(plane)
    return PatchStats(nd.patch_mean(t, size).data, nd.patch_std(t, size).data)


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------


def achieved_rate_tensor(f_out, original_power: float, gamma: float) -> Tensor:
    if original_power <= 0:
        raise ZeroPowerError("original luminance has zero power; rate is undefined")
    f = _as_tensor(f_out)
    return 1.0 - nd.scale(nd.total(nd.power(f, gamma)), 1.0 / original_power)


def power_loss(rate: float, f_out, original_power: float, panel: PanelModel = PanelModel()) -> Tensor:
    """``|R - R_hat|`` where ``R_hat`` is measured against the undimmed power."""
    r_hat = achieved_rate_tensor(f_out, original_power, panel.gamma)
    return nd.absolute(rate - r_hat)


# ---------------------------------------------------------------------------
# similarity
# ---------------------------------------------------------------------------


def ssim_tensor(a, b, params: SsimParams = SsimParams()) -> Tensor:
    """Differentiable mean SSIM with a Gaussian window, valid region only."""
    b = _as_tensor(b)
    a = _as_tensor(a, b.dtype)
    _check_same(a, b)
    if min(a.shape[-2:]) < params.window:
        raise ValueError(f"SSIM needs planes of at least {params.window}x{params.window}")
    taps = gaussian_taps(params.window, params.sigma)

    def blur(z):
        return nd.separable_filter(z, taps, padding="none")

    mu_a, mu_b = blur(a), blur(b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = blur(a * a) - mu_aa
    var_b = blur(b * b) - mu_bb
    cov = blur(a * b) - mu_ab
    num = (nd.scale(mu_ab, 2.0) + params.c1) * (nd.scale(cov, 2.0) + params.c2)
    den = (mu_aa + mu_bb + params.c1) * (var_a + var_b + params.c2)
    return nd.mean(num / den)


def similarity_loss(original, f_out, params: SsimParams = SsimParams()) -> Tensor:
    return 1.0 - ssim_tensor(original, f_out, params)


# ---------------------------------------------------------------------------
# contrast
# ---------------------------------------------------------------------------


def w_std(rate: float) -> float:
    return max(0.0, 1.0 - 2.0 * rate)


def _contrast_term(mu_d, mu_f, sd_d, sd_f, rate: float, eps: float) -> Tensor:
    w = w_std(rate)
    term = nd.absolute(mu_d - mu_f)
    if w < 1.0:
        ratio = (sd_f + eps) / (sd_d + eps)
        term = term - nd.scale(nd.log(ratio), 1.0 - w)
    if w > 0.0:
        term = term + nd.scale(nd.absolute(sd_d - sd_f), w)
    return term


def global_contrast_loss(dimmed, f_out, rate: float, eps: float = EPS) -> Tensor:
    f = _as_tensor(f_out)
    d = _as_tensor(dimmed, f.dtype)
    _check_same(d, f)
    return _contrast_term(nd.mean(d), nd.mean(f), nd.std(d), nd.std(f), rate, eps)


def local_contrast_loss(
    dimmed, f_out, rate: float, eps: float = EPS, size: int = LOCAL_WINDOW
) -> Tensor:
    """Pixel average of the contrast term on ``size x size`` patch statistics."""
    f = _as_tensor(f_out)
    d = _as_tensor(dimmed, f.dtype)
    _check_same(d, f)
    if min(f.shape[-2:]) < size:
        raise ValueError(f"plane {f.shape[-2:]} is smaller than the {size}x{size} patch")
    per_pixel = _contrast_term(
        nd.patch_mean(d, size),
        nd.patch_mean(f, size),
        nd.patch_std(d, size),
        nd.patch_std(f, size),
        rate,
        eps,
    )
    return nd.mean(per_pixel)


# ---------------------------------------------------------------------------
# total
# ---------------------------------------------------------------------------


def total_loss(
    original,
    dimmed,
    f_out,
    rate: float,
    weights: LossWeights = LossWeights(),
    panel: PanelModel = PanelModel(),
    terms: frozenset[str] = ALL_TERMS,
    ssim_params: SsimParams = SsimParams(),
) -> LossBreakdown:
    """Weighted sum of the loss terms.

    ``terms`` selects which terms enter ``l_total`` (for ablations); all four
    are still evaluated and reported.
    """
    unknown = set(terms) - ALL_TERMS
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    f = _as_tensor(f_out)
    x = _as_tensor(original, f.dtype)
    d = _as_tensor(dimmed, f.dtype)
    _check_same(x, f)
    _check_same(d, f)

    p_in = float(np.sum(np.power(x.data.astype(np.float64), panel.gamma)))
    r_hat = achieved_rate_tensor(f, p_in, panel.gamma)
    l_p = nd.absolute(rate - r_hat)
    l_s = similarity_loss(x, f, ssim_params)
    l_g = global_contrast_loss(d, f, rate)
    l_l = local_contrast_loss(d, f, rate)

    lc = weights.lambda_c
    parts = [
        ("power", l_p, weights.lambda_p),
        ("similarity", l_s, weights.lambda_s),
        ("global", l_g, lc * weights.lambda_g),
        ("local", l_l, lc),
    ]
    tot = Tensor(np.zeros((), dtype=f.dtype))
    for name, term, w in parts:
        if name in terms:
            tot = tot + nd.scale(term, w)

    return LossBreakdown(
        l_p=l_p.item(),
        l_s=l_s.item(),
        l_c_global=l_g.item(),
        l_c_local=l_l.item(),
        l_total=tot.item(),
        rate=float(rate),
        achieved=r_hat.item(),
        total=tot,
    )
