import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import iou_by_pixels, map_brute_force
from seadvs.detect import (
    BBox,
    Detection,
    average_precision,
    blob_detect,
    evaluate_map,
    export_yolo,
    iou,
    make_bbox,
    parse_yolo_line,
    split_names,
    yolo_label_line,
)
from seadvs.streamio import EventFrame


@st.composite
def boxes(draw, size=20):
    x0 = draw(st.integers(0, size - 1))
    y0 = draw(st.integers(0, size - 1))
    return BBox(x0, y0, draw(st.integers(x0 + 1, size)), draw(st.integers(y0 + 1, size)))


def frame(count):
    count = np.asarray(count, dtype=np.uint32)
    h, w = count.shape
    return EventFrame(w, h, 0, 1, count.astype(np.int32), count)


def test_iou_examples():
    a = BBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(5, 5, 6, 6)) == 0.0
    assert iou(a, BBox(1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)
    assert iou(a, BBox(2, 0, 4, 2)) == 0.0  # touching edges


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, a) == 1.0
    assert iou(a, b) == pytest.approx(iou_by_pixels(a, b), abs=1e-12)


def test_make_bbox_rejects_degenerate():
    with pytest.raises(ValueError):
        make_bbox(3, 0, 3, 5)


def test_detection_score_range():
    with pytest.raises(ValueError):
        Detection(BBox(0, 0, 1, 1), 1.5)
    with pytest.raises(ValueError):
        Detection(BBox(0, 0, 1, 1), float("nan"))


# -- blob detector -------------------------------------------------------------

def test_blob_empty():
    assert blob_detect(frame(np.zeros((30, 40)))) == []


def test_blob_single_block():
    c = np.zeros((30, 40))
    c[5:15, 12:22] = 5
    (d,) = blob_detect(frame(c), 1.0, 16)
    assert d.bbox == BBox(12, 5, 22, 15)
    assert d.score == 1.0


def test_blob_two_blocks_split_by_zero_column():
    c = np.zeros((30, 40))
    c[5:15, 10:20] = 1
    c[5:15, 21:30] = 3
    dets = blob_detect(frame(c), 1.0, 16)
    assert [d.bbox for d in dets] == [BBox(21, 5, 30, 15), BBox(10, 5, 20, 15)]
    assert [d.score for d in dets] == [1.0, 0.5]


def test_blob_diagonal_is_not_connected():
    c = np.zeros((10, 10))
    c[2, 2] = c[3, 3] = 4
    assert len(blob_detect(frame(c), 1.0, 1)) == 2


def test_blob_min_area_and_threshold():
    c = np.zeros((20, 20))
    c[0:3, 0:5] = 9  # 15 px
    c[10:13, 10:14] = 1  # 12 px, below threshold 2
    assert blob_detect(frame(c), 1.0, 16) == []
    assert blob_detect(frame(c), 2.0, 1)[0].bbox == BBox(0, 0, 5, 3)


@given(st.integers(0, 40), st.integers(0, 10), st.integers(0, 10))
@settings(max_examples=30, deadline=None)
def test_blob_translation_covariance(seed, dx, dy):
    gen = np.random.default_rng(seed)
    c = np.zeros((40, 50))
    c[10:30, 10:40] = gen.poisson(1.2, (20, 30))
    base = blob_detect(frame(c), 1.0, 4)
    shifted = np.zeros_like(c)
    shifted[dy:, dx:] = c[: c.shape[0] - dy, : c.shape[1] - dx]
    moved = blob_detect(frame(shifted), 1.0, 4)
    assert [d.bbox.shifted(dx, dy) for d in base] == [d.bbox for d in moved]
    assert [d.score for d in base] == [d.score for d in moved]


# -- mAP -----------------------------------------------------------------------

GT = BBox(0, 0, 10, 10)


def test_map_perfect():
    dets = {"a": [Detection(GT, 1.0)], "b": [Detection(BBox(5, 5, 9, 9), 1.0)]}
    gts = {"a": [GT], "b": [BBox(5, 5, 9, 9)]}
    assert evaluate_map(dets, gts).map == 1.0


def test_map_empty():
    assert evaluate_map({}, {"a": [GT]}).map == 0.0


def test_map_swapped_scores():
    tp_box = BBox(0, 0, 10, 6)  # IoU 0.6 with GT
    assert iou(tp_box, GT) == pytest.approx(0.6)
    fp_box = BBox(20, 20, 30, 30)
    first = evaluate_map({"a": [Detection(tp_box, 0.9), Detection(fp_box, 0.8)]}, {"a": [GT]})
    assert first.map == 1.0
    assert first.per_image["a"] == (1, 1, 0)
    swapped = evaluate_map({"a": [Detection(tp_box, 0.8), Detection(fp_box, 0.9)]}, {"a": [GT]})
    assert swapped.map == 0.5


def test_map_tie_prefers_highest_iou_then_lowest_index():
    gts = {"a": [BBox(0, 0, 10, 10), BBox(0, 0, 10, 12), BBox(0, 0, 10, 10)]}
    det = Detection(BBox(0, 0, 10, 10), 0.7)
    rep = evaluate_map({"a": [det, det, det]}, gts)
    assert rep.per_image["a"] == (3, 0, 0)
    assert rep.map == 1.0


def test_map_rejects_unknown_images():
    with pytest.raises(ValueError):
        evaluate_map({"zz": [Detection(GT, 0.5)]}, {"a": [GT]})


def test_report_text():
    rep = evaluate_map({"a": [Detection(GT, 1.0)]}, {"a": [GT], "b": []})
    assert rep.to_text() == "0 1.000000\nmap 1.000000\na 1 0 0\nb 0 0 0\n"


@st.composite
def instances(draw):
    names = [f"im{i}" for i in range(draw(st.integers(1, 3)))]
    gts = {n: draw(st.lists(boxes(12), max_size=3)) for n in names}
    scores = st.sampled_from([0.1, 0.3, 0.5, 0.5, 0.7, 0.9, 1.0])
    dets = {n: draw(st.lists(st.tuples(boxes(12), scores), max_size=4)) for n in names}
    return dets, gts


def as_detections(dets):
    return {n: [Detection(b, s) for b, s in v] for n, v in dets.items()}


@given(instances(), st.sampled_from([0.3, 0.5, 0.75]))
@settings(max_examples=200, deadline=None)
def test_map_matches_brute_force(inst, thr):
    dets, gts = inst
    rep = evaluate_map(as_detections(dets), gts, thr)
    ap, per_image = map_brute_force(dets, gts, thr)
    assert rep.map == pytest.approx(ap, abs=1e-12)
    assert rep.per_image == per_image
    assert 0.0 <= rep.map <= 1.0


@given(instances())
@settings(max_examples=100, deadline=None)
def test_low_scoring_false_positives_never_raise_ap(inst):
    dets, gts = inst
    before = evaluate_map(as_detections(dets), gts).map
    name = sorted(gts)[0]
    dets = {**dets, name: list(dets.get(name, [])) + [(BBox(50, 50, 51, 51), 0.0)]}
    gts = dict(gts)
    assert evaluate_map(as_detections(dets), gts).map <= before + 1e-12


@given(instances())
@settings(max_examples=100, deadline=None)
def test_adding_a_true_positive_never_lowers_ap(inst):
    dets, gts = inst
    # a fresh ground truth far away, matched by a top-scoring exact detection
    name = sorted(gts)[0]
    new_gt = BBox(100, 100, 110, 110)
    gts2 = {**gts, name: list(gts[name]) + [new_gt]}
    dets2 = {**dets, name: list(dets.get(name, [])) + [(new_gt, 1.0)]}
    rep_gt_only = evaluate_map(as_detections(dets), gts2).map
    assert evaluate_map(as_detections(dets2), gts2).map >= rep_gt_only - 1e-12


def test_average_precision_edge_cases():
    assert average_precision([], 3) == 0.0
    assert average_precision([True], 0) == 0.0
    assert average_precision([True, False, True], 2) == pytest.approx(1 * 0.5 + (2 / 3) * 0.5)


# -- YOLO export ---------------------------------------------------------------

def test_yolo_example_line():
    assert yolo_label_line(BBox(80, 60, 160, 120), 320, 240) == "0 0.375000 0.375000 0.250000 0.250000"


@given(boxes(240))
def test_yolo_roundtrip_within_half_pixel(b):
    b = BBox(b.x_min, b.y_min, min(b.x_max, 320), b.y_max)
    cls, back = parse_yolo_line(yolo_label_line(b, 320, 240), 320, 240)
    assert cls == 0
    assert all(abs(u - v) <= 0.5 for u, v in zip(back, b))


def test_export_layout(tmp_path):
    img = np.full((24, 32), 128, dtype=np.uint8)
    samples = [(f"f{i:02d}", img, [BBox(1, 2, 5, 6)] if i % 2 else []) for i in range(10)]
    out = export_yolo(samples, tmp_path / "ds", 0.5, seed=3)
    assert sorted(p.name for p in (out / "images").iterdir()) == [f"f{i:02d}.pgm" for i in range(10)]
    assert (out / "labels" / "f00.txt").read_text() == ""
    assert (out / "labels" / "f01.txt").read_text().count("\n") == 1
    lines = (out / "manifest.txt").read_text().splitlines()
    splits = [line.split()[1] for line in lines]
    assert splits.count("train") == 5 and splits.count("val") == 5
    again = export_yolo(samples, tmp_path / "ds2", 0.5, seed=3)
    assert (again / "manifest.txt").read_text() == (out / "manifest.txt").read_text()


def test_split_is_seeded():
    names = [f"n{i}" for i in range(10)]
    a = split_names(names, 0.5, 7)
    assert a == split_names(list(reversed(names)), 0.5, 7)
    assert sum(v == "train" for v in a.values()) == 5
    assert any(split_names(names, 0.5, s) != a for s in range(8, 20))


def test_export_errors(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        export_yolo([], tmp_path / "x")
    img = np.zeros((24, 32), dtype=np.uint8)
    with pytest.raises(ValueError, match="differs"):
        export_yolo([("a", img, []), ("b", np.zeros((10, 10), np.uint8), [])], tmp_path / "y")
    with pytest.raises(ValueError, match="outside"):
        export_yolo([("a", img, [BBox(0, 0, 40, 5)])], tmp_path / "z")
