"""Rate-conditioned context-aggregation network for dimmed luminance.

Layer stack for the default ``depth=7``::

    head         (1+1) -> 32, 3x3, LReLU, 2x2 average pool
    dilated0..2  (32+1) -> 32, 3x3, dilation 4, 8, 16, LReLU   (half resolution)
    subpixel     (32+1) -> 128, 3x3, LReLU, pixel shuffle x2 -> 32
    penultimate  32 -> 32, 3x3, LReLU
    output       32 -> 1, 1x1, linear, then clamp to [0, 1]

"+1" marks layers whose input is concatenated with a constant plane
holding the requested power-saving rate. All convolutions use reflection
padding.
"""

from __future__ import annotations

import json
import struct
from collections.abc import Iterator
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ndops as nd
from .colorpower import LumaPlane
from .ndops import Tensor

__all__ = [
    "INITS",
    "AceConfig",
    "AceParams",
    "LayerSpec",
    "WeightsFormatError",
    "WeightsMagicError",
    "WeightsShapeError",
    "WeightsTruncatedError",
    "WeightsVersionError",
    "apply",
    "build",
    "forward",
    "layer_specs",
    "load_params",
    "parameter_count",
    "receptive_radius",
    "save_params",
]

MAGIC = b"ACEW"
FORMAT_VERSION = 1
UPSCALE = 2


@dataclass(frozen=True)
class AceConfig:
    depth: int = 7
    channels: int = 32
    kernel: int = 3
    lrelu_slope: float = 0.2
    dilations: tuple[int, ...] = (4, 8, 16)
    # layer names whose input receives the rate plane; None = head, every dilated conv, subpixel
    inject: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.depth < 5:
            raise ValueError(f"depth must be at least 5, got {self.depth}")
        if len(self.dilations) != self.depth - 4:
            raise ValueError(
                f"depth {self.depth} needs {self.depth - 4} dilation rates, got {len(self.dilations)}"
            )
        if any(d < 1 for d in self.dilations):
            raise ValueError("dilation rates must be positive")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError("kernel size must be odd")
        if not 0 < self.lrelu_slope < 1:
            raise ValueError("lrelu_slope must lie in (0, 1)")
        names = self.layer_names()
        if self.inject is None:
            default = ("head", *(n for n in names if n.startswith("dilated")), "subpixel")
            object.__setattr__(self, "inject", default)
        else:
            object.__setattr__(self, "inject", tuple(self.inject))
            bad = set(self.inject) - set(names)
            if bad:
                raise ValueError(f"unknown injection layers: {sorted(bad)}")

    def layer_names(self) -> list[str]:
        dil = [f"dilated{i}" for i in range(len(self.dilations))]
        return ["head", *dil, "subpixel", "penultimate", "output"]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        d["inject"] = list(self.inject)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AceConfig:
        d = dict(d)
        if "dilations" in d:
            d["dilations"] = tuple(d["dilations"])
        if d.get("inject") is not None:
            d["inject"] = tuple(d["inject"])
        return cls(**d)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    c_in: int
    c_out: int
    kernel: int
    dilation: int

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.c_out, self.c_in, self.kernel, self.kernel)


def layer_specs(config: AceConfig) -> list[LayerSpec]:
    c, k = config.channels, config.kernel

    def extra(name):
        return 1 if name in config.inject else 0

    specs = [LayerSpec("head", 1 + extra("head"), c, k, 1)]
    for i, d in enumerate(config.dilations):
        name = f"dilated{i}"
        specs.append(LayerSpec(name, c + extra(name), c, k, d))
    specs.append(LayerSpec("subpixel", c + extra("subpixel"), c * UPSCALE**2, k, 1))
    specs.append(LayerSpec("penultimate", c + extra("penultimate"), c, k, 1))
    specs.append(LayerSpec("output", c + extra("output"), 1, 1, 1))
    return specs


def parameter_count(config: AceConfig) -> int:
    return sum(s.c_out * s.c_in * s.kernel**2 + s.c_out for s in layer_specs(config))


def receptive_radius(config: AceConfig) -> int:
    """Upper bound, in full-resolution pixels, on how far one input pixel can
    influence the output (ignoring reflections at the border)."""
    half = config.kernel // 2
    pooled = sum(d * half for d in config.dilations) + half  # dilated stack + subpixel conv
    # head conv, pooling-block alignment, pooled stack, penultimate conv
    return half + (UPSCALE - 1) + UPSCALE * pooled + half


@dataclass
class AceParams:
    config: AceConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> AceParams:
        return AceParams(
            self.config,
            {k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in self.tensors.items()},
        )

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


INITS = ("he", "detail")


def build(
    config: AceConfig = AceConfig(),
    seed: int = 0,
    dtype=np.float32,
    init: str = "he",
    noise_scale: float = 0.1,
    sharpen: float = 0.5,
) -> AceParams:
    """Initialise parameters.

    ``init="he"``: He-normal with the LReLU gain, zero biases; the final 1x1
    layer is linear and uses unit gain.

    ``init="detail"``: the He weights scaled by ``noise_scale`` plus a
    deterministic path that reproduces the input at start. The head copies
    the k*k neighbourhood taps into the first channels, the dilated layers
    pass them through, the subpixel layer rebuilds each output phase from
    the pooled windows covering it, and the penultimate conv applies a
    separable ``[-s, 1+2s, -s]`` sharpen to undo the resulting tent blur.
    """
    if init not in INITS:
        raise ValueError(f"unknown init {init!r}; expected one of {INITS}")
    rng = np.random.default_rng(seed)
    a = config.lrelu_slope
    taps = config.kernel**2
    if init == "detail" and (config.kernel < 3 or config.channels < taps):
        raise ValueError(f"detail init needs kernel >= 3 and at least {taps} channels")
    tensors: dict[str, Tensor] = {}
    for spec in layer_specs(config):
        fan_in = spec.c_in * spec.kernel**2
        gain2 = 1.0 if spec.name == "output" else 2.0 / (1.0 + a * a)
        w = rng.standard_normal(spec.weight_shape) * np.sqrt(gain2 / fan_in)
        if init == "detail":
            w *= noise_scale
            _add_detail_path(w, spec, config, sharpen)
        tensors[f"{spec.name}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
        tensors[f"{spec.name}.bias"] = Tensor(np.zeros(spec.c_out, dtype=dtype), requires_grad=True)
    return AceParams(config, tensors)


def _add_detail_path(w: np.ndarray, spec: LayerSpec, config: AceConfig, sharpen: float) -> None:
    k = config.kernel
    c = k // 2
    if spec.name == "head":
        for ky in range(k):
            for kx in range(k):
                w[ky * k + kx, 0, ky, kx] += 1.0
    elif spec.name == "subpixel":
        # output phase (dy, dx) lies in the pooled windows at tap offsets dy-1, dy
        for dy in range(UPSCALE):
            for dx in range(UPSCALE):
                for ky in (c + dy - 1, c + dy):
                    for kx in (c + dx - 1, c + dx):
                        w[dy * UPSCALE + dx, ky * k + kx, c, c] += 0.25
    elif spec.name == "penultimate":
        s = np.array([-sharpen, 1.0 + 2.0 * sharpen, -sharpen])
        w[0, 0, c - 1 : c + 2, c - 1 : c + 2] += np.outer(s, s)
    elif spec.name == "output":
        w[0, 0, 0, 0] += 1.0
    else:
        for ch in range(k * k):
            w[ch, ch, c, c] += 1.0


def _min_side(config: AceConfig) -> int:
    # the pooled map must exceed the widest reflection pad
    widest = max(config.dilations) * (config.kernel // 2)
    return UPSCALE * (widest + 1)


def _prepare_input(plane: np.ndarray, config: AceConfig) -> np.ndarray:
    H, W = plane.shape
    m = _min_side(config)
    Hp = max(H + H % 2, m)
    Wp = max(W + W % 2, m)
    if (Hp, Wp) == (H, W):
        return plane
    mode = "reflect" if min(H, W) > 1 else "symmetric"
    return np.pad(plane, ((0, Hp - H), (0, Wp - W)), mode=mode)


def _rate_plane(rate: float, like: Tensor) -> Tensor:
    N, _, H, W = like.shape
    return Tensor(np.full((N, 1, H, W), rate, dtype=like.dtype))


def apply(params: AceParams, dimmed, rate: float) -> Tensor:
    """Differentiable forward pass; returns an H x W tensor in [0, 1]."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"rate must lie in [0, 1), got {rate}")
    cfg = params.config
    plane = np.asarray(dimmed)
    if plane.ndim != 2 or plane.size == 0:
        raise ValueError(f"expected a non-empty 2-D luminance plane, got shape {plane.shape}")
    H, W = plane.shape
    dtype = params["head.weight"].dtype
    x = Tensor(_prepare_input(plane.astype(dtype, copy=False), cfg)[None, None])
    slope = cfg.lrelu_slope

    def conv(name: str, h: Tensor, dilation: int = 1) -> Tensor:
        if name in cfg.inject:
            h = nd.concat_channels([h, _rate_plane(rate, h)])
        return nd.conv2d(h, params[f"{name}.weight"], params[f"{name}.bias"], dilation=dilation)

    h = nd.avg_pool2(nd.lrelu(conv("head", x), slope))
    for i, d in enumerate(cfg.dilations):
        h = nd.lrelu(conv(f"dilated{i}", h, d), slope)
    h = nd.pixel_shuffle(nd.lrelu(conv("subpixel", h), slope), UPSCALE)
    h = nd.lrelu(conv("penultimate", h), slope)
    out = conv("output", h)
    out = nd.crop(out, H, W)
    return nd.reshape(nd.clamp(out, 0.0, 1.0), (H, W))


def forward(params: AceParams, dimmed, rate: float) -> LumaPlane:
    out = apply(params, dimmed, rate).data.astype(np.float64)
    return LumaPlane(out, role="enhanced")


# ---------------------------------------------------------------------------
# weights file
# ---------------------------------------------------------------------------


class WeightsFormatError(ValueError):
    """Base class for unreadable weights files."""


class WeightsMagicError(WeightsFormatError):
    pass


class WeightsVersionError(WeightsFormatError):
    pass


class WeightsTruncatedError(WeightsFormatError):
    pass


class WeightsShapeError(WeightsFormatError):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def save_params(params: AceParams, path: str | Path) -> None:
    """Write ``params`` in the little-endian ACEW format.

    Layout: magic, u32 version, u32 config length + JSON config, u32 tensor
    count, then per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims,
    raw float32 data.
    """
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    chunks = [MAGIC, _u32(FORMAT_VERSION), _u32(len(cfg)), cfg, _u32(len(params.tensors))]
    for name, t in params.tensors.items():
        raw = name.encode()
        chunks += [_u32(len(raw)), raw, _u32(t.ndim)]
        chunks += [_u32(d) for d in t.shape]
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightsTruncatedError(f"weights file truncated while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_params(path: str | Path) -> AceParams:
    r = _Reader(Path(path).read_bytes())
    if r.buf[:4] != MAGIC:
        raise WeightsMagicError(f"{path}: not an ACEW weights file")
    r.pos = 4
    version = r.u32("format version")
    if version != FORMAT_VERSION:
        raise WeightsVersionError(f"{path}: unsupported ACEW version {version}")
    cfg_raw = r.take(r.u32("config length"), "config")
    try:
        config = AceConfig.from_dict(json.loads(cfg_raw.decode()))
    except (ValueError, TypeError) as exc:
        raise WeightsShapeError(f"{path}: embedded config is invalid ({exc})") from exc

    expected = {}
    for spec in layer_specs(config):
        expected[f"{spec.name}.weight"] = spec.weight_shape
        expected[f"{spec.name}.bias"] = (spec.c_out,)

    count = r.u32("tensor count")
    tensors: dict[str, Tensor] = {}
    for i in range(count):
        name_len = r.u32(f"name length of tensor #{i}")
        name = r.take(name_len, f"name of tensor #{i}").decode()
        rank = r.u32(f"rank of tensor {name!r}")
        dims = tuple(r.u32(f"dims of tensor {name!r}") for _ in range(rank))
        if expected.get(name) != dims:
            raise WeightsShapeError(
                f"{path}: tensor {name!r} has shape {dims}, config expects {expected.get(name)}"
            )
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        raw = r.take(nbytes, f"data of tensor {name!r}")
        data = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
        tensors[name] = Tensor(data, requires_grad=True)
    missing = set(expected) - set(tensors)
    if missing:
        raise WeightsShapeError(f"{path}: missing tensors {sorted(missing)}")
    if r.pos != len(r.buf):
        raise WeightsFormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return AceParams(config, {k: tensors[k] for k in expected})
