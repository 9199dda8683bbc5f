"""YOLO dataset export, event-density blob detector and IoU-matched mAP."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from . import pnm, rng
from .streamio import EventFrame


class BBox(NamedTuple):
    """Pixel box, min inclusive and max exclusive."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


def make_bbox(x_min, y_min, x_max, y_max) -> BBox:
    if not (x_min < x_max and y_min < y_max):
        raise ValueError(f"degenerate box {(x_min, y_min, x_max, y_max)}")
    return BBox(x_min, y_min, x_max, y_max)


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float
    class_id: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class EvalReport:
    iou_threshold: float
    ap_per_class: dict
    map: float
    per_image: dict = field(default_factory=dict)  # name -> (tp, fp, fn)

    def to_text(self) -> str:
        lines = [f"{cls} {ap:.6f}" for cls, ap in sorted(self.ap_per_class.items())]
        lines.append(f"map {self.map:.6f}")
        lines.extend(f"{name} {tp} {fp} {fn}" for name, (tp, fp, fn) in sorted(self.per_image.items()))
        return "\n".join(lines) + "\n"


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


# -- detector ---------------------------------------------------------------

def blob_detect(frame: EventFrame, density_threshold: float = 1.0, min_area: int = 16) -> list:
    """Connected regions of high event density.

    Pixels with ``count >= density_threshold`` are grouped into 4-connected
    components; each component of at least ``min_area`` pixels becomes a
    detection with score ``min(1, mean count / (2 * density_threshold))``.
    Sorted by descending score, ties in raster order of the component.
    """
    count = frame.count
    binary = count >= density_threshold
    labels, n = ndimage.label(binary)
    if n == 0:
        return []
    index = np.arange(1, n + 1)
    areas = ndimage.sum_labels(np.ones_like(count, dtype=np.int64), labels, index)
    totals = ndimage.sum_labels(count.astype(np.int64), labels, index)
    dets = []
    for k, sl in enumerate(ndimage.find_objects(labels)):
        if areas[k] < min_area:
            continue
        ys, xs = sl
        score = min(1.0, float(totals[k]) / float(areas[k]) / (2.0 * density_threshold))
        dets.append(Detection(BBox(xs.start, ys.start, xs.stop, ys.stop), score))
    # stable sort keeps raster order among equal scores
    return sorted(dets, key=lambda d: -d.score)


# -- evaluation -------------------------------------------------------------

def average_precision(tp_flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP from TP/FP flags in descending-score order."""
    if n_gt == 0 or len(tp_flags) == 0:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # precision envelope: running max from the right
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * envelope))


def evaluate_map(detections: Mapping[str, Sequence[Detection]],
                 ground_truths: Mapping[str, Sequence[BBox]],
                 iou_threshold: float = 0.5) -> EvalReport:
    """Greedy IoU matching over all images, highest score first.

    A detection is a true positive when some still-unmatched ground truth in
    its image overlaps it with IoU >= ``iou_threshold``; it claims the one
    with the highest IoU (lowest index on ties). Score ties are processed in
    sorted image-name order, then detection order.
    """
    unknown = set(detections) - set(ground_truths)
    if unknown:
        raise ValueError(f"detections for images without ground truth: {sorted(unknown)}")
    names = sorted(ground_truths)
    pool = []
    for rank, name in enumerate(names):
        for j, det in enumerate(detections.get(name, ())):
            pool.append((-det.score, rank, j, name, det))
    pool.sort(key=lambda item: item[:3])

    matched = {name: [False] * len(ground_truths[name]) for name in names}
    per_image = {name: [0, 0] for name in names}
    flags = []
    for _, _, _, name, det in pool:
        best, best_iou = -1, -1.0
        for g, gt in enumerate(ground_truths[name]):
            if matched[name][g]:
                continue
            ov = iou(det.bbox, gt)
            if ov >= iou_threshold and ov > best_iou:
                best, best_iou = g, ov
        if best >= 0:
            matched[name][best] = True
            per_image[name][0] += 1
        else:
            per_image[name][1] += 1
        flags.append(best >= 0)

    n_gt = sum(len(ground_truths[n]) for n in names)
    ap = average_precision(flags, n_gt)
    report_images = {
        name: (tp, fp, len(ground_truths[name]) - tp) for name, (tp, fp) in per_image.items()
    }
    return EvalReport(iou_threshold, {0: ap}, ap, report_images)


# -- YOLO export ------------------------------------------------------------

def yolo_label_line(box: BBox, width: int, height: int, class_id: int = 0) -> str:
    cx = (box.x_min + box.x_max) / 2.0 / width
    cy = (box.y_min + box.y_max) / 2.0 / height
    bw = (box.x_max - box.x_min) / width
    bh = (box.y_max - box.y_min) / height
    return f"{class_id} {cx:.6f} {cy:.6f} {bw:.6f} {bh:.6f}"


def parse_yolo_line(line: str, width: int, height: int) -> tuple:
    """Inverse of :func:`yolo_label_line`: (class_id, BBox in pixels)."""
    cls, cx, cy, bw, bh = line.split()
    cx, bw = float(cx) * width, float(bw) * width
    cy, bh = float(cy) * height, float(bh) * height
    return int(cls), BBox(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2)


def split_names(names: Sequence[str], split_ratio: float, seed: int) -> dict:
    """Seeded shuffle; the first round(n * split_ratio) names go to train."""
    if not 0.0 <= split_ratio <= 1.0:
        raise ValueError("split_ratio must lie in [0, 1]")
    order = rng.shuffled(sorted(names), seed)
    n_train = int(np.floor(len(order) * split_ratio + 0.5))
    return {name: ("train" if k < n_train else "val") for k, name in enumerate(order)}


def export_yolo(samples: Sequence[tuple], out_dir, split_ratio: float = 0.5, seed: int = 0) -> Path:
    """Write a YOLO detection dataset.

    ``samples`` holds ``(name, image, boxes)`` with ``image`` an 8-bit array
    (e.g. a rendered event frame) and ``boxes`` the ground-truth BBoxes in
    its pixel coordinates. Produces ``images/{name}.pgm``,
    ``labels/{name}.txt`` (possibly empty) and ``manifest.txt``.
    """
    if not samples:
        raise ValueError("empty dataset")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    shape = np.shape(samples[0][1])
    for name, image, boxes in samples:
        if np.shape(image) != shape:
            raise ValueError(f"{name}: image size {np.shape(image)} differs from {shape}")
        h, w = shape
        for b in boxes:
            if b.x_min < 0 or b.y_min < 0 or b.x_max > w or b.y_max > h:
                raise ValueError(f"{name}: box {tuple(b)} outside {w}x{h} frame")
        (out / "images" / f"{name}.pgm").write_bytes(pnm.encode_pgm(np.asarray(image, dtype=np.uint8)))
        text = "".join(yolo_label_line(b, w, h) + "\n" for b in boxes)
        (out / "labels" / f"{name}.txt").write_text(text)
    splits = split_names([s[0] for s in samples], split_ratio, seed)
    manifest = "".join(f"{name} {splits[name]}\n" for name, _, _ in samples)
    (out / "manifest.txt").write_text(manifest)
    return out
