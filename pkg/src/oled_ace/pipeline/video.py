"""Frame-sequence processing with a per-frame rate from the frame's mean luminance."""

from __future__ import annotations

import csv
import io
import re
import time
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

from ..acenet import AceParams
from ..colorpower import ImageRGB, PanelModel, VideoPolicy, rgb_to_yuv, video_rate
from .data import read_image, write_image
from .evaluation import enhance

FRAME_RE = re.compile(r"^frame_(\d{6})\.png$")
FRAME_PATTERN = "frame_{:06d}.png"
FRAMES_CSV = "frames.csv"
FRAMES_HEADER = ("frame", "R", "R_measured", "ms")


@dataclass(frozen=True)
class FrameRecord:
    frame: str
    rate: float
    achieved: float
    ms: float


def list_frames(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"not a directory: {directory}")
    frames = sorted(p for p in directory.iterdir() if FRAME_RE.match(p.name))
    if not frames:
        raise ValueError(f"no frame_NNNNNN.png files in {directory}")
    return frames


def process_video(
    params: AceParams,
    frames: Iterable[ImageRGB],
    policy: VideoPolicy = VideoPolicy(),
    panel: PanelModel = PanelModel(),
) -> Iterator[tuple[ImageRGB, FrameRecord]]:
    """Yield each enhanced frame with its rate, measured rate and wall time."""
    seen = False
    for idx, frame in enumerate(frames):
        seen = True
        t0 = time.perf_counter()
        rate = video_rate(rgb_to_yuv(frame)[0], policy)
        result = enhance(params, frame, rate, panel)
        ms = (time.perf_counter() - t0) * 1e3
        yield result.image, FrameRecord(frame.name or FRAME_PATTERN.format(idx), rate, result.achieved, ms)
    if not seen:
        raise ValueError("empty frame sequence")


def records_to_csv(records: Iterable[FrameRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FRAMES_HEADER)
    for r in records:
        w.writerow([r.frame, repr(r.rate), repr(r.achieved), f"{r.ms:.3f}"])
    return buf.getvalue()


def process_video_dir(
    params: AceParams,
    frames_dir: str | Path,
    out_dir: str | Path,
    policy: VideoPolicy = VideoPolicy(),
    panel: PanelModel = PanelModel(),
) -> list[FrameRecord]:
    """Enhance ``frame_NNNNNN.png`` files into ``out_dir`` and write ``frames.csv`` there."""
    paths = list_frames(frames_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for image, rec in process_video(params, (read_image(p) for p in paths), policy, panel):
        write_image(out / rec.frame, image)
        records.append(rec)
    (out / FRAMES_CSV).write_text(records_to_csv(records))
    return records
