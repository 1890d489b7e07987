"""Training configuration and the named ``desk`` / ``paper`` profiles."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..acenet import INITS, AceConfig
from ..colorpower import PanelModel
from ..losses import ALL_TERMS, LossWeights

PROFILES = ("desk", "paper")


@dataclass(frozen=True)
class TrainConfig:
    data_dir: str = ""
    n_train: int = 16
    n_test: int = 4
    iterations: int = 2000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    rate_range: tuple[float, float] = (0.01, 0.8)
    crop: int = 128  # square random crop side; 0 keeps the full image
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 500
    heldout_images: int = 4  # held-out images scored at each log row
    weights: LossWeights = field(default_factory=LossWeights)
    terms: tuple[str, ...] = tuple(sorted(ALL_TERMS))
    panel: PanelModel = field(default_factory=PanelModel)
    ace: AceConfig = field(default_factory=AceConfig)
    init: str = "detail"
    init_noise: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "rate_range", tuple(float(r) for r in self.rate_range))
        object.__setattr__(self, "terms", tuple(sorted(set(self.terms))))
        lo, hi = self.rate_range
        if not 0.0 <= lo <= hi < 1.0:
            raise ValueError(f"rate_range must satisfy 0 <= lo <= hi < 1, got {self.rate_range}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("split sizes must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.crop < 0 or 0 < self.crop < 32:
            raise ValueError("crop must be 0 (full image) or at least 32")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ValueError("log_every and checkpoint_every must be positive")
        if self.heldout_images < 0:
            raise ValueError("heldout_images must be non-negative")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        bad = set(self.terms) - ALL_TERMS
        if bad:
            raise ValueError(f"unknown loss terms {sorted(bad)}; expected a subset of {sorted(ALL_TERMS)}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}; expected one of {INITS}")

    @property
    def term_set(self) -> frozenset[str]:
        return frozenset(self.terms)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rate_range"] = list(self.rate_range)
        d["terms"] = list(self.terms)
        d["ace"] = self.ace.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "panel" in d:
            d["panel"] = PanelModel(**d["panel"])
        if "ace" in d:
            d["ace"] = AceConfig.from_dict(d["ace"])
        if "rate_range" in d:
            d["rate_range"] = tuple(d["rate_range"])
        if "terms" in d:
            d["terms"] = tuple(d["terms"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> TrainConfig:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ValueError("config JSON must be an object")
        return cls.from_dict(d)


def profile(name: str, **overrides) -> TrainConfig:
    """Named defaults. ``desk`` runs in minutes on a CPU; ``paper`` is full scale."""
    if name == "desk":
        base = TrainConfig()
    elif name == "paper":
        base = TrainConfig(
            n_train=400,
            n_test=100,
            iterations=300_000,
            crop=0,
            log_every=1000,
            checkpoint_every=10_000,
            heldout_images=10,
        )
    else:
        raise ValueError(f"unknown profile {name!r}; expected one of {PROFILES}")
    return replace(base, **overrides) if overrides else base


def load_config(path: str | Path, base: TrainConfig) -> TrainConfig:
    """Overlay the keys of a JSON file on ``base``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc.strerror}") from None
    merged = base.to_dict()
    try:
        overlay = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(overlay, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
            if key == "ace" and "inject" not in value:
                # injection layers follow the (possibly new) layer stack
                merged[key]["inject"] = None
        else:
            merged[key] = value
    return TrainConfig.from_dict(merged)
