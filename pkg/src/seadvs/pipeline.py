"""Stage-by-stage pipeline over an artifact directory.

Each stage reads the files written by earlier stages and writes only its
own outputs, so running the stages one after another produces the same
bytes as :func:`run_pipeline`.

==========  ==========================================  ======================================
stage       reads                                       writes
==========  ==========================================  ======================================
scene       (config)                                    config.txt, scene.txt
render      config.txt, scene.txt                       frames.elum, frames/, masks/
events      config.txt, frames.elum                     events.erev, events.csv
frames      config.txt, events.erev                     dvs/ef_*.pgm
export      config.txt, events.erev, masks/             yolo/
eval        config.txt, events.erev, masks/             detections.txt, eval.txt, metrics.txt
==========  ==========================================  ======================================
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import detect, pnm, render, streamio
from .config import RunConfig, config_hash, format_config, load_config, parse_config
from .events import EventStream, frame_time_us, frames_to_events, inject_noise
from .render import LabelMask, LuminanceFrame
from .scene import format_scene, generate_scene, parse_scene

STAGES = ("scene", "render", "events", "frames", "export", "eval")
SWEEP_HEADER = "scale\tevents\tclutter\tmap"


class MissingInputError(FileNotFoundError):
    def __init__(self, path: Path, stage: str) -> None:
        self.path = Path(path)
        self.stage = stage
        super().__init__(f"{stage}: missing input {self.path}")


class SweepError(RuntimeError):
    """A sweep run failed; ``scale`` names the run, ``__cause__`` the reason."""

    def __init__(self, scale: float, cause: Exception) -> None:
        self.scale = scale
        super().__init__(f"scale {format_scale(scale)}: {cause}")


def _need(out: Path, name: str, stage: str) -> Path:
    path = out / name
    if not path.exists():
        raise MissingInputError(path, stage)
    return path


def _load_run_config(out: Path, stage: str) -> RunConfig:
    return parse_config(_need(out, "config.txt", stage).read_text())


def _frame_name(k: int) -> str:
    return f"{k:05d}"


# -- stages -------------------------------------------------------------------

def stage_scene(cfg: RunConfig, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    render.frame_times(cfg.scene)  # fail early on < 2 frames
    (out / "config.txt").write_text(format_config(cfg))
    (out / "scene.txt").write_text(format_scene(generate_scene(cfg.scene)))


def stage_render(out, workers: int = 1) -> None:
    out = Path(out)
    cfg = _load_run_config(out, "render")
    scene = parse_scene(_need(out, "scene.txt", "render").read_text(), cfg.scene)
    seq = render.render_sequence(scene, cfg.scene, workers=workers)
    (out / "frames").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    (out / "frames.elum").write_bytes(pnm.encode_elum([f.pixels for f, _ in seq]))
    for k, (frame, mask) in enumerate(seq):
        name = _frame_name(k)
        (out / "frames" / f"preview_{name}.pgm").write_bytes(
            pnm.encode_pgm(render.tone_map(frame, cfg.options.exposure))
        )
        (out / "masks" / f"mask_{name}.pgm").write_bytes(pnm.encode_pgm(mask.labels))


def _load_frames(out: Path, cfg: RunConfig, stage: str) -> list:
    stack = pnm.decode_elum(_need(out, "frames.elum", stage).read_bytes())
    times = render.frame_times(cfg.scene)
    if stack.shape != (len(times), cfg.scene.height, cfg.scene.width):
        raise ValueError(f"{stage}: frames.elum shape {stack.shape} does not match the config")
    return [LuminanceFrame(cfg.scene.width, cfg.scene.height, t, px) for t, px in zip(times, stack)]


def _load_masks(out: Path, cfg: RunConfig, stage: str) -> list:
    times = render.frame_times(cfg.scene)
    masks = []
    for k, t in enumerate(times):
        labels = pnm.decode_pgm(_need(out, f"masks/mask_{_frame_name(k)}.pgm", stage).read_bytes())
        masks.append(LabelMask(cfg.scene.width, cfg.scene.height, t, labels.astype(np.uint16)))
    return masks


def _load_stream(out: Path, stage: str) -> EventStream:
    return streamio.read_binary(_need(out, "events.erev", stage).read_bytes())


def stage_events(out, workers: int = 1) -> None:
    out = Path(out)
    cfg = _load_run_config(out, "events")
    frames = _load_frames(out, cfg, "events")
    stream = frames_to_events(frames, cfg.dvs, workers=workers)
    if cfg.dvs.noise_enabled:
        stream = inject_noise(stream, cfg.dvs, frame_time_us(frames[0].timestamp), frame_time_us(frames[-1].timestamp))
    (out / "events.erev").write_bytes(streamio.write_binary(stream))
    (out / "events.csv").write_text(streamio.write_csv(stream))


def stage_frames(out, window_us: Optional[int] = None) -> int:
    """DVS video: one image per window until the last event is covered."""
    out = Path(out)
    cfg = _load_run_config(out, "frames")
    stream = _load_stream(out, "frames")
    window = cfg.options.window_us if window_us is None else int(window_us)
    if window <= 0:
        raise ValueError("window_us must be positive")
    dvs = out / "dvs"
    dvs.mkdir(exist_ok=True)
    for old in dvs.glob("ef_*.pgm"):
        old.unlink()
    frames = streamio.event_frames(stream, window)
    for k, ef in enumerate(frames):
        image = streamio.event_frame_to_image(ef, cfg.options.gain)
        (dvs / f"ef_{_frame_name(k)}.pgm").write_bytes(pnm.encode_pgm(image))
    return len(frames)


def ground_truth(cfg: RunConfig, mask: LabelMask) -> list:
    """Boxes a detector is asked to find in the event frame ending at ``mask``."""
    labels = mask.labels
    if cfg.options.gt_in_beam:
        labels = np.where(render.beam_mask(cfg.scene), labels, 0).astype(np.uint16)
    area = cfg.options.min_visible_area or render.min_visible_area(cfg.scene.width, cfg.scene.height)
    boxes = render.mask_to_boxes(replace(mask, labels=labels), area)
    return [detect.BBox(*b.bbox) for b in boxes]


def paired_windows(cfg: RunConfig, stream: EventStream, masks: Sequence[LabelMask]):
    """(name, EventFrame, mask) for windows [kW, (k+1)W), k < n_frames - 1.

    Window k holds the events of frame pair (k, k+1) when W is one frame
    interval, so it is scored against the mask of frame k + 1.
    """
    w = cfg.options.window_us
    for k in range(len(masks) - 1):
        yield _frame_name(k), streamio.accumulate(stream, k * w, (k + 1) * w), masks[k + 1]


def stage_export(out, split_ratio: Optional[float] = None, seed: Optional[int] = None) -> Path:
    out = Path(out)
    cfg = _load_run_config(out, "export")
    stream = _load_stream(out, "export")
    masks = _load_masks(out, cfg, "export")
    samples = [
        (f"ef_{name}", streamio.event_frame_to_image(ef, cfg.options.gain), ground_truth(cfg, mask))
        for name, ef, mask in paired_windows(cfg, stream, masks)
    ]
    ratio = cfg.options.split_ratio if split_ratio is None else split_ratio
    seed = cfg.options.split_seed if seed is None else seed
    return detect.export_yolo(samples, out / "yolo", ratio, seed)


def clutter_ratio(stream: EventStream, masks: Sequence[LabelMask], frame_times_us: Sequence[int]) -> float:
    """Fraction of events on pixels that are background in both frames of their pair.

    An event at time t comes from the pair (k, k+1) with T_k < t <= T_{k+1}
    (events at T_0 belong to the first pair).
    """
    if len(stream) == 0:
        return 0.0
    times = np.asarray(frame_times_us, dtype=np.int64)
    k = np.searchsorted(times, stream.t.astype(np.int64), side="left") - 1
    k = np.clip(k, 0, len(times) - 2)
    labels = np.stack([m.labels for m in masks])
    x = stream.x.astype(np.int64)
    y = stream.y.astype(np.int64)
    background = (labels[k, y, x] == 0) & (labels[k + 1, y, x] == 0)
    return float(np.count_nonzero(background)) / len(stream)


def format_detections(dets: dict) -> str:
    lines = []
    for name in sorted(dets):
        for d in dets[name]:
            b = d.bbox
            lines.append(f"{name} {b.x_min} {b.y_min} {b.x_max} {b.y_max} {d.score:.6f}")
    return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class Metrics:
    events: int
    clutter: float
    map: float

    def to_text(self) -> str:
        return f"events {self.events}\nclutter {self.clutter:.6f}\nmap {self.map:.6f}\n"

    @classmethod
    def from_text(cls, text: str) -> "Metrics":
        vals = dict(line.split(None, 1) for line in text.splitlines() if line.strip())
        return cls(int(vals["events"]), float(vals["clutter"]), float(vals["map"]))


def stage_eval(out) -> Metrics:
    out = Path(out)
    cfg = _load_run_config(out, "eval")
    stream = _load_stream(out, "eval")
    masks = _load_masks(out, cfg, "eval")
    opts = cfg.options
    dets, gts = {}, {}
    for name, ef, mask in paired_windows(cfg, stream, masks):
        dets[name] = detect.blob_detect(ef, opts.density_threshold, opts.min_area)
        gts[name] = ground_truth(cfg, mask)
    report = detect.evaluate_map(dets, gts, opts.iou_threshold)
    times_us = [frame_time_us(t) for t in render.frame_times(cfg.scene)]
    metrics = Metrics(len(stream), clutter_ratio(stream, masks, times_us), report.map)
    (out / "detections.txt").write_text(format_detections(dets))
    (out / "eval.txt").write_text(report.to_text())
    (out / "metrics.txt").write_text(metrics.to_text())
    return metrics


# -- orchestration ------------------------------------------------------------

def _as_config(config) -> RunConfig:
    return config if isinstance(config, RunConfig) else load_config(config)


def run_pipeline(config, out, workers: int = 1, window_us: Optional[int] = None) -> Metrics:
    """All stages in order; ``run.txt`` gets the config hash and stage wall times."""
    cfg = _as_config(config)
    out = Path(out)
    timings = []
    steps = (
        ("scene", lambda: stage_scene(cfg, out)),
        ("render", lambda: stage_render(out, workers)),
        ("events", lambda: stage_events(out, workers)),
        ("frames", lambda: stage_frames(out, window_us)),
        ("export", lambda: stage_export(out)),
        ("eval", lambda: stage_eval(out)),
    )
    result = None
    for name, fn in steps:
        start = time.perf_counter()
        result = fn()
        timings.append((name, time.perf_counter() - start))
    lines = [f"config_hash {config_hash(cfg)}"]
    lines.extend(f"stage {name} {secs:.3f}" for name, secs in timings)
    (out / "run.txt").write_text("\n".join(lines) + "\n")
    return result


def format_scale(scale: float) -> str:
    return f"{scale:g}"


def sweep_particles(config, out, scales: Sequence[float] = (1, 2, 4, 8), seed: Optional[int] = None,
                    axis: str = "size", workers: int = 1) -> list:
    """Run the pipeline once per scale; returns (scale, events, clutter, map) rows.

    ``axis="size"`` multiplies particle radii (``particle_scale``);
    ``axis="count"`` multiplies ``particle_count`` instead. Each run lives in
    ``out/scale_<k>/`` and the table goes to ``out/sweep.tsv``.
    """
    cfg = _as_config(config)
    if not scales:
        raise ValueError("need at least one scale")
    if any(not (s > 0 and math.isfinite(s)) for s in scales):
        raise ValueError(f"scales must be positive, got {list(scales)}")
    if axis not in ("size", "count"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    if seed is not None:
        cfg = cfg.with_scene(seed=seed)
    out = Path(out)
    rows = []
    for scale in scales:
        if axis == "size":
            run_cfg = cfg.with_scene(particle_scale=float(scale))
        else:
            run_cfg = cfg.with_scene(particle_count=int(round(cfg.scene.particle_count * scale)))
        try:
            m = run_pipeline(run_cfg, out / f"scale_{format_scale(scale)}", workers=workers)
        except Exception as exc:
            raise SweepError(scale, exc) from exc
        rows.append((float(scale), m.events, m.clutter, m.map))
    table = [SWEEP_HEADER]
    table.extend(f"{format_scale(s)}\t{n}\t{c:.6f}\t{a:.6f}" for s, n, c, a in rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.tsv").write_text("\n".join(table) + "\n")
    return rows


def read_sweep(path) -> list:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SWEEP_HEADER:
        raise ValueError(f"{path}: not a sweep table")
    rows = []
    for line in lines[1:]:
        s, n, c, a = line.split("\t")
        rows.append((float(s), int(n), float(c), float(a)))
    return rows
