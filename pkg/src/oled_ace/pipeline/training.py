"""Unsupervised training loop with bit-exact checkpoint/resume."""

from __future__ import annotations

import csv
import io
import json
import os
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import acenet
from .. import ndops as nd
from ..acenet import AceParams
from ..colorpower import ImageRGB, apply_dim, dim_ratio, rgb_to_yuv
from ..losses import LossBreakdown, total_loss
from ..ndops import AdamState
from .config import TrainConfig
from .data import Dataset, load_dataset, random_crop

WEIGHTS_FILE = "weights.acew"
OPTIMIZER_FILE = "optimizer.npz"
STATE_FILE = "state.json"
LOG_FILE = "loss_log.csv"
LOG_HEADER = ("iteration", "l_total", "l_p", "l_s", "l_c_global", "l_c_local", "heldout_l_total")
STATE_VERSION = 1


@dataclass(frozen=True)
class LogRow:
    iteration: int
    l_total: float
    l_p: float
    l_s: float
    l_c_global: float
    l_c_local: float
    heldout_l_total: float

    def values(self) -> tuple:
        return (self.iteration, self.l_total, self.l_p, self.l_s, self.l_c_global, self.l_c_local, self.heldout_l_total)


@dataclass
class Checkpoint:
    params: AceParams
    config: TrainConfig
    iteration: int = 0
    optimizer: AdamState = field(default_factory=AdamState)
    rng_train: dict = field(default_factory=dict)
    rng_heldout: dict = field(default_factory=dict)
    # running sums of (l_total, l_p, l_s, l_c_global, l_c_local) and the count since the last log row
    window: list[float] = field(default_factory=lambda: [0.0] * 5)
    window_count: int = 0
    log: list[LogRow] = field(default_factory=list)

    def save(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        _atomic(d / WEIGHTS_FILE, lambda p: acenet.save_params(self.params, p))

        arrays = {f"m/{k}": v for k, v in self.optimizer.m.items()}
        arrays.update({f"v/{k}": v for k, v in self.optimizer.v.items()})
        arrays["t"] = np.array(self.optimizer.t, dtype=np.int64)

        def write_npz(p):
            with open(p, "wb") as fh:
                np.savez(fh, **arrays)

        _atomic(d / OPTIMIZER_FILE, write_npz)
        _atomic(d / LOG_FILE, lambda p: Path(p).write_text(log_to_csv(self.log)))
        state = {
            "version": STATE_VERSION,
            "iteration": self.iteration,
            "config": self.config.to_dict(),
            "rng_train": self.rng_train,
            "rng_heldout": self.rng_heldout,
            "window": self.window,
            "window_count": self.window_count,
        }
        # state.json last: its presence marks a complete checkpoint
        _atomic(d / STATE_FILE, lambda p: Path(p).write_text(json.dumps(state, indent=1)))
        return d

    @classmethod
    def load(cls, directory: str | Path) -> Checkpoint:
        d = Path(directory)
        if not (d / STATE_FILE).is_file():
            raise ValueError(f"not a checkpoint directory (missing {STATE_FILE}): {d}")
        try:
            state = json.loads((d / STATE_FILE).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt {STATE_FILE} in {d}: {exc}") from None
        if state.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported checkpoint version {state.get('version')}")
        params = acenet.load_params(d / WEIGHTS_FILE)
        opt = AdamState()
        with np.load(d / OPTIMIZER_FILE) as npz:
            for key in npz.files:
                if key == "t":
                    opt.t = int(npz[key])
                else:
                    kind, name = key.split("/", 1)
                    (opt.m if kind == "m" else opt.v)[name] = npz[key]
        return cls(
            params=params,
            config=TrainConfig.from_dict(state["config"]),
            iteration=int(state["iteration"]),
            optimizer=opt,
            rng_train=state["rng_train"],
            rng_heldout=state["rng_heldout"],
            window=[float(v) for v in state["window"]],
            window_count=int(state["window_count"]),
            log=log_from_csv((d / LOG_FILE).read_text()),
        )


def _atomic(path: Path, write: Callable) -> None:
    tmp = path.with_name(path.name + ".tmp")
    write(tmp)
    os.replace(tmp, path)


def log_to_csv(rows: Sequence[LogRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for r in rows:
        w.writerow([r.iteration, *(repr(v) for v in r.values()[1:])])
    return buf.getvalue()


def log_from_csv(text: str) -> list[LogRow]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header != LOG_HEADER:
        raise ValueError(f"unexpected loss log header {header}")
    return [LogRow(int(rec[0]), *(float(v) for v in rec[1:])) for rec in reader if rec]


def luma_of(image) -> np.ndarray:
    if isinstance(image, ImageRGB):
        return rgb_to_yuv(image)[0].values
    plane = np.asarray(image, dtype=np.float64)
    if plane.ndim == 3:
        return rgb_to_yuv(plane)[0].values
    return plane


def sample_loss(params: AceParams, x: np.ndarray, rate: float, config: TrainConfig) -> LossBreakdown:
    """Dim ``x`` to ``rate``, enhance, and evaluate the configured loss."""
    dtype = params["head.weight"].dtype
    x = np.asarray(x, dtype=dtype)
    xd = apply_dim(x, dim_ratio(rate, config.panel)).values.astype(dtype, copy=False)
    f = acenet.apply(params, xd, rate)
    return total_loss(x, xd, f, rate, config.weights, config.panel, config.term_set)


def train_step(
    params: AceParams,
    optimizer: AdamState,
    batch,
    rng: np.random.Generator,
    config: TrainConfig,
) -> LossBreakdown:
    """One Adam update on ``batch`` (an image or a sequence of images).

    Each sample draws its own rate from ``config.rate_range``. Gradients are
    averaged over the batch; the returned breakdown holds batch means.
    """
    items = list(batch) if isinstance(batch, (list, tuple)) else [batch]
    if not items:
        raise ValueError("empty training batch")
    params.zero_grad()
    parts = []
    for item in items:
        rate = float(rng.uniform(*config.rate_range))
        b = sample_loss(params, luma_of(item), rate, config)
        nd.scale(b.total, 1.0 / len(items)).backward()
        parts.append(b)
    nd.adam_step(params.tensors, optimizer, config.lr, config.beta1, config.beta2, config.adam_eps)
    if len(parts) == 1:
        return parts[0]
    mean = lambda attr: float(np.mean([getattr(p, attr) for p in parts]))
    return LossBreakdown(
        l_p=mean("l_p"),
        l_s=mean("l_s"),
        l_c_global=mean("l_c_global"),
        l_c_local=mean("l_c_local"),
        l_total=mean("l_total"),
        rate=mean("rate"),
        achieved=mean("achieved"),
        total=parts[-1].total,
    )


def init_checkpoint(config: TrainConfig) -> Checkpoint:
    params = acenet.build(config.ace, config.seed, init=config.init, noise_scale=config.init_noise)
    # separate streams: weight init, training draws (images, crops, rates), held-out rates
    return Checkpoint(
        params=params,
        config=config,
        rng_train=np.random.default_rng([config.seed, 1]).bit_generator.state,
        rng_heldout=np.random.default_rng([config.seed, 2]).bit_generator.state,
    )


def _generator(state: dict) -> np.random.Generator:
    g = np.random.default_rng()
    g.bit_generator.state = state
    return g


def _center_crop(plane: np.ndarray, size: int) -> np.ndarray:
    if size == 0:
        return plane
    H, W = plane.shape
    ch, cw = min(size, H), min(size, W)
    y, x = (H - ch) // 2, (W - cw) // 2
    return plane[y : y + ch, x : x + cw]


def heldout_loss(params: AceParams, planes: Sequence[np.ndarray], rng: np.random.Generator, config: TrainConfig) -> float:
    """Mean total loss on held-out planes, each with a freshly drawn rate."""
    if not planes:
        return float("nan")
    vals = [sample_loss(params, p, float(rng.uniform(*config.rate_range)), config).l_total for p in planes]
    return float(np.mean(vals))


def _compatible(saved: TrainConfig, wanted: TrainConfig) -> bool:
    return replace(saved, iterations=wanted.iterations) == wanted


def train(
    config: TrainConfig,
    out_dir: str | Path | None = None,
    resume: bool = True,
    dataset: Dataset | None = None,
    on_log: Callable[[LogRow], None] | None = None,
) -> Checkpoint:
    """Run (or continue) training up to ``config.iterations``.

    With ``out_dir`` set, checkpoints are written every
    ``config.checkpoint_every`` iterations and at the end; when ``resume`` is
    true and ``out_dir`` already holds a checkpoint, training continues from
    it. Only ``iterations`` may differ from the saved configuration.
    """
    if dataset is None:
        if not config.data_dir:
            raise ValueError("no dataset given and config.data_dir is empty")
        dataset = load_dataset(config.data_dir, config.n_train, config.n_test, config.seed)
    if not dataset.train:
        raise ValueError("training set is empty")

    ck = None
    if out_dir is not None and resume and (Path(out_dir) / STATE_FILE).is_file():
        ck = Checkpoint.load(out_dir)
        if not _compatible(ck.config, config):
            raise ValueError(f"checkpoint in {out_dir} was written with a different configuration")
        if ck.iteration > config.iterations:
            raise ValueError(f"checkpoint is at iteration {ck.iteration}, beyond the requested {config.iterations}")
        ck.config = config
    if ck is None:
        ck = init_checkpoint(config)

    train_planes = [luma_of(im) for im in dataset.train]
    held = [_center_crop(luma_of(im), config.crop) for im in dataset.test[: config.heldout_images]]
    rng = _generator(ck.rng_train)
    rng_held = _generator(ck.rng_heldout)

    while ck.iteration < config.iterations:
        batch = [
            random_crop(train_planes[int(rng.integers(len(train_planes)))], config.crop, rng)
            for _ in range(config.batch_size)
        ]
        b = train_step(ck.params, ck.optimizer, batch, rng, config)
        ck.iteration += 1
        for i, v in enumerate((b.l_total, b.l_p, b.l_s, b.l_c_global, b.l_c_local)):
            ck.window[i] += v
        ck.window_count += 1
        if ck.iteration % config.log_every == 0:
            means = [s / ck.window_count for s in ck.window]
            row = LogRow(ck.iteration, *means, heldout_loss(ck.params, held, rng_held, config))
            ck.log.append(row)
            ck.window, ck.window_count = [0.0] * 5, 0
            if on_log is not None:
                on_log(row)
        if out_dir is not None and ck.iteration % config.checkpoint_every == 0:
            _snapshot(ck, rng, rng_held).save(out_dir)

    ck = _snapshot(ck, rng, rng_held)
    if out_dir is not None:
        ck.save(out_dir)
    return ck


def _snapshot(ck: Checkpoint, rng: np.random.Generator, rng_held: np.random.Generator) -> Checkpoint:
    ck.rng_train = rng.bit_generator.state
    ck.rng_heldout = rng_held.bit_generator.state
    return ck
