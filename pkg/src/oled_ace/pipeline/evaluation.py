"""Inference, the dim-only baseline, the R-grid evaluation and loss ablations."""

from __future__ import annotations

import csv
import io
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import acenet
from ..acenet import AceParams
from ..colorpower import (
    ImageRGB,
    PanelModel,
    ZeroPowerError,
    achieved_rate,
    apply_dim,
    dim_ratio,
    rgb_to_yuv,
    yuv_to_rgb,
)
from ..losses import ALL_TERMS
from ..metrics import CSV_HEADER, MetricRow, MetricsReport, eme, nde, report, ssim
from .config import TrainConfig
from .data import Dataset, load_dataset
from .training import train

R_GRID = tuple(round(0.1 * i, 1) for i in range(1, 8))
METHODS = ("ace", "dim_only")


@dataclass(frozen=True)
class Enhanced:
    image: ImageRGB
    luma: np.ndarray
    rate: float
    achieved: float  # NaN when the input has zero power


def _measured(original, output, panel: PanelModel) -> float:
    try:
        return achieved_rate(original, output, panel)
    except ZeroPowerError:
        return float("nan")


def enhance(params: AceParams, image: ImageRGB, rate: float, panel: PanelModel = PanelModel()) -> Enhanced:
    """Decompose, dim the luminance to ``rate``, enhance it, recombine with the chroma."""
    y, chroma = rgb_to_yuv(image)
    dimmed = apply_dim(y, dim_ratio(rate, panel))
    out = acenet.forward(params, dimmed.values, rate)
    rgb = yuv_to_rgb(out, chroma, name=getattr(image, "name", ""))
    return Enhanced(rgb, out.values, float(rate), _measured(y, out, panel))


def dim_only(image: ImageRGB, rate: float, panel: PanelModel = PanelModel()) -> Enhanced:
    y, chroma = rgb_to_yuv(image)
    dimmed = apply_dim(y, dim_ratio(rate, panel))
    rgb = yuv_to_rgb(dimmed, chroma, name=getattr(image, "name", ""))
    return Enhanced(rgb, dimmed.values, float(rate), _measured(y, dimmed, panel))


def score(name: str, original: np.ndarray, result: Enhanced) -> MetricRow:
    """Luminance metrics of one output against its undimmed original."""
    return MetricRow(
        name,
        result.rate,
        result.achieved,
        eme(result.luma),
        nde(result.luma),
        ssim(original, result.luma),
    )


@dataclass(frozen=True)
class EvalTable:
    reports: dict[str, MetricsReport]

    def rows(self, method: str, rate: float | None = None) -> list[MetricRow]:
        rows = self.reports[method].rows
        if rate is None:
            return list(rows)
        return [r for r in rows if abs(r.r_requested - rate) < 1e-12]

    def mean(self, method: str, rate: float, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.rows(method, rate)]))

    def to_csv(self, path: str | Path | None = None) -> str:
        """Metrics CSV; labels are ``<method>:<image>`` and ``<method>:avg@R``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for method, rep in self.reports.items():
            for row in (*rep.rows, *rep.by_rate.values(), rep.overall):
                w.writerow([f"{method}:{row.image}", *(repr(v) for v in row.values())])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> EvalTable:
        reader = csv.reader(io.StringIO(text))
        if tuple(next(reader, ())) != CSV_HEADER:
            raise ValueError("unexpected evaluation CSV header")
        grouped: dict[str, list[MetricRow]] = {}
        for rec in reader:
            if not rec:
                continue
            method, _, image = rec[0].partition(":")
            if image.startswith("avg"):
                continue
            grouped.setdefault(method, []).append(MetricRow(image, *(float(v) for v in rec[1:])))
        return cls({m: report(rows) for m, rows in grouped.items()})


def evaluate(
    params: AceParams,
    images: Sequence[ImageRGB],
    rates: Sequence[float] = R_GRID,
    panel: PanelModel = PanelModel(),
) -> EvalTable:
    """Score the network and the dim-only baseline on every image at every rate."""
    if not images:
        raise ValueError("evaluation needs at least one image")
    rows: dict[str, list[MetricRow]] = {m: [] for m in METHODS}
    for idx, image in enumerate(images):
        name = image.name or f"image{idx:04d}"
        y = rgb_to_yuv(image)[0].values
        for rate in rates:
            rows["ace"].append(score(name, y, enhance(params, image, rate, panel)))
            rows["dim_only"].append(score(name, y, dim_only(image, rate, panel)))
    return EvalTable({m: report(r) for m, r in rows.items()})


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

VARIANT_TERMS = {
    "i": frozenset({"power", "similarity"}),
    "ii": frozenset({"power", "similarity", "local"}),
    "iii": frozenset({"power", "similarity", "global"}),
    "iv": ALL_TERMS,
    "full": ALL_TERMS,
    "no_p": ALL_TERMS - {"power"},
    "no_s": ALL_TERMS - {"similarity"},
    "no_c": ALL_TERMS - {"global", "local"},
    "no_g": ALL_TERMS - {"global"},
    "no_l": ALL_TERMS - {"local"},
}
ABLATION_HEADER = ("variant", "terms", "lambda_c", "R", "R_measured", "rate_error", "EME", "NDE", "SSIM")


@dataclass(frozen=True)
class Variant:
    label: str
    terms: frozenset[str]
    lambda_c: float | None = None  # None keeps the base configuration's value


def parse_variants(spec: str) -> list[Variant]:
    """Parse e.g. ``"i,ii,iii,iv"`` or ``"iv,no_p,lc=0.5,i+lc=1"``.

    A token is a term set name, ``lc=<value>`` (full loss with that lambda_c),
    or ``<name>+lc=<value>``.
    """
    variants = []
    for token in (t.strip() for t in spec.split(",")):
        if not token:
            continue
        base, lc = token, None
        if "lc=" in token:
            head, _, value = token.partition("lc=")
            base = head.rstrip("+") or "iv"
            try:
                lc = float(value)
            except ValueError:
                raise ValueError(f"bad lambda_c in variant {token!r}") from None
            if lc < 0:
                raise ValueError(f"lambda_c must be non-negative in variant {token!r}")
        if base not in VARIANT_TERMS:
            raise ValueError(f"unknown variant {base!r}; expected one of {sorted(VARIANT_TERMS)} or lc=<value>")
        variants.append(Variant(token, VARIANT_TERMS[base], lc))
    if not variants:
        raise ValueError("no ablation variants given")
    labels = [v.label for v in variants]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate ablation variants")
    return variants


@dataclass(frozen=True)
class AblationRow:
    variant: str
    terms: str
    lambda_c: float
    rate: str  # grid value, or "avg"
    r_measured: float
    rate_error: float
    eme: float
    nde: float
    ssim: float


@dataclass(frozen=True)
class AblationTable:
    rows: tuple[AblationRow, ...]

    def get(self, variant: str, rate: float | str) -> AblationRow:
        key = rate if isinstance(rate, str) else f"{rate:g}"
        for r in self.rows:
            if r.variant == variant and r.rate == key:
                return r
        raise KeyError((variant, rate))

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ABLATION_HEADER)
        for r in self.rows:
            w.writerow(
                [r.variant, r.terms, repr(r.lambda_c), r.rate]
                + [repr(v) for v in (r.r_measured, r.rate_error, r.eme, r.nde, r.ssim)]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def variant_config(base: TrainConfig, variant: Variant) -> TrainConfig:
    weights = base.weights if variant.lambda_c is None else replace(base.weights, lambda_c=variant.lambda_c)
    return replace(base, terms=tuple(sorted(variant.terms)), weights=weights)


def ablation_rows(variant: Variant, config: TrainConfig, table: EvalTable, rates: Sequence[float]) -> list[AblationRow]:
    out = []
    terms = "+".join(sorted(config.terms))
    lc = config.weights.lambda_c
    every = []
    for rate in rates:
        rows = table.rows("ace", rate)
        every.extend(rows)
        out.append(_ablation_row(variant.label, terms, lc, f"{rate:g}", rows))
    out.append(_ablation_row(variant.label, terms, lc, "avg", every))
    return out


def _ablation_row(label, terms, lc, rate_label, rows: Sequence[MetricRow]) -> AblationRow:
    return AblationRow(
        label,
        terms,
        lc,
        rate_label,
        float(np.mean([r.r_measured for r in rows])),
        float(np.mean([abs(r.r_measured - r.r_requested) for r in rows])),
        float(np.mean([r.eme for r in rows])),
        float(np.mean([r.nde for r in rows])),
        float(np.mean([r.ssim for r in rows])),
    )


def ablate(
    config: TrainConfig,
    variants: Sequence[Variant],
    dataset: Dataset | None = None,
    rates: Sequence[float] = R_GRID,
    out_dir: str | Path | None = None,
) -> AblationTable:
    """Train one model per variant under the same seed and data, then score each on the R grid."""
    if not variants:
        raise ValueError("no ablation variants given")
    if dataset is None:
        dataset = load_dataset(config.data_dir, config.n_train, config.n_test, config.seed)
    rows: list[AblationRow] = []
    for v in variants:
        cfg = variant_config(config, v)
        ck_dir = None if out_dir is None else Path(out_dir) / _safe(v.label)
        ck = train(cfg, out_dir=ck_dir, dataset=dataset)
        table = evaluate(ck.params, dataset.test, rates, cfg.panel)
        rows.extend(ablation_rows(v, cfg, table, rates))
    return AblationTable(tuple(rows))


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in label)
