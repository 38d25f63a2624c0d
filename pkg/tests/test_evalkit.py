import json

import numpy as np
import pytest

from annotate import Generator, Provenance, PseudoLabel
from errors import InvalidParameterError, UndefinedMetricError
from evalkit import (
    Detection,
    average_precision,
    average_recall,
    evaluate,
    format_report_table,
    load_detections,
    match,
)
from geometry import OcclusionBucket, PixelBox


def _gt(box, image_id=0, bucket=0):
    generator = Generator.ODA if bucket else Generator.PDA
    return PseudoLabel(
        box=PixelBox(*box),
        bucket=OcclusionBucket(bucket),
        generator=generator,
        provenance=Provenance("p", "b", 0, image_id),
        posture="standing",
        occluder_kind="car_front" if bucket else None,
    )


def _det(box, score, image_id=0):
    return Detection(image_id, PixelBox(*box), score)


def test_hand_computed_ap():
    gts = [_gt((0, 0, 10, 10)), _gt((20, 0, 30, 10))]
    dets = [_det((0, 0, 10, 10), 0.9), _det((50, 50, 60, 60), 0.8), _det((20, 0, 30, 10), 0.7)]
    m = match(dets, gts, 0.75)
    assert m.is_tp == (True, False, True)
    assert average_precision([m]) == pytest.approx(5 / 6, abs=1e-9)
    assert average_recall([m]) == 1.0


def test_perfect_and_empty_detectors():
    gts = [_gt((0, 0, 10, 10), 0), _gt((5, 5, 20, 30), 1)]
    perfect = [_det(g.box.as_tuple(), 0.9, g.image_id) for g in gts]
    report = evaluate(perfect, gts)
    assert report.ap == 1.0 and report.ar == 1.0
    assert (report.tp, report.fp, report.fn) == (2, 0, 0)
    empty = evaluate([], gts)
    assert empty.ap == 0.0 and empty.ar == 0.0
    assert empty.fn == 2


def test_no_ground_truth_is_undefined():
    with pytest.raises(UndefinedMetricError):
        evaluate([_det((0, 0, 5, 5), 0.5)], [])
    with pytest.raises(UndefinedMetricError):
        average_precision([])


def test_match_prefers_highest_iou_then_lower_index():
    gts = [_gt((0, 0, 10, 10)), _gt((0, 0, 10, 10))]
    m = match([_det((0, 0, 10, 10), 0.5)], gts, 0.5)
    assert m.pairs == ((0, 0),)
    gts = [_gt((1, 0, 11, 10)), _gt((0, 0, 10, 10))]
    m = match([_det((0, 0, 10, 10), 0.5)], gts, 0.5)
    assert m.pairs == ((0, 1),)


def test_match_threshold_is_inclusive():
    # IoU of these boxes is exactly 0.75.
    gt = _gt((0, 0, 8, 10))
    det = _det((0, 0, 6, 10), 0.5)
    assert match([det], [gt], 0.75).is_tp == (True,)


def test_match_rejects_mixed_images():
    with pytest.raises(InvalidParameterError):
        match([_det((0, 0, 5, 5), 0.5, image_id=1)], [_gt((0, 0, 5, 5), image_id=2)], 0.75)


def _exhaustive_tp(dets, gt_boxes, threshold):
    """Score-ordered assignment with rasterized IoU."""
    def raster(box):
        grid = np.zeros((16, 16), dtype=bool)
        grid[box.y1:box.y2, box.x1:box.x2] = True
        return grid

    gt_grids = [raster(b) for b in gt_boxes]
    taken = set()
    tp = 0
    for i in sorted(range(len(dets)), key=lambda i: (-dets[i].score, i)):
        grid = raster(dets[i].box)
        best, best_j = -1.0, None
        for j, g in enumerate(gt_grids):
            if j in taken:
                continue
            value = (grid & g).sum() / (grid | g).sum()
            if value >= threshold and value > best:
                best, best_j = value, j
        if best_j is not None:
            taken.add(best_j)
            tp += 1
    return tp


def _random_box(rng):
    x1, y1 = (int(v) for v in rng.integers(0, 10, size=2))
    w, h = (int(v) for v in rng.integers(1, 6, size=2))
    return PixelBox(x1, y1, x1 + w, y1 + h)


def test_greedy_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        gts = [_random_box(rng) for _ in range(int(rng.integers(0, 6)))]
        dets = [Detection(0, _random_box(rng), float(rng.choice([0.2, 0.5, 0.9])))
                for _ in range(int(rng.integers(0, 6)))]
        for threshold in (0.5, 0.75):
            assert match(dets, gts, threshold).tp == _exhaustive_tp(dets, gts, threshold)


def test_ap_invariant_under_monotone_score_rescaling():
    rng = np.random.default_rng(1)
    gts = [_gt((int(x), 0, int(x) + 5, 5), image_id=i % 3) for i, x in enumerate(rng.integers(0, 40, size=9))]
    dets = [_det((g.box.x1 + int(rng.integers(0, 2)), 0, g.box.x2, 5), float(rng.uniform(0.1, 1.0)), g.image_id)
            for g in gts]
    base = evaluate(dets, gts, 0.75)
    scaled = evaluate([Detection(d.image_id, d.box, d.score * 0.5) for d in dets], gts, 0.75)
    assert scaled.ap == base.ap and scaled.ar == base.ar


def test_average_recall_counts_top_detections_only():
    gts = [_gt((0, 0, 10, 10)), _gt((20, 0, 30, 10))]
    dets = [_det((50, 50, 60, 60), 0.9), _det((0, 0, 10, 10), 0.8), _det((20, 0, 30, 10), 0.7)]
    m = match(dets, gts, 0.75)
    assert average_recall([m], max_dets=1) == 0.0
    assert average_recall([m], max_dets=2) == 0.5
    assert evaluate(dets, gts, max_dets=2).ar == 0.5


def test_per_bucket_breakdown():
    gts = [_gt((0, 0, 10, 10), bucket=0), _gt((20, 0, 30, 10), bucket=7)]
    dets = [_det((0, 0, 10, 10), 0.9)]
    report = evaluate(dets, gts)
    assert report.per_bucket[0].ar == 1.0
    assert report.per_bucket[7].ar == 0.0
    assert report.per_bucket[7].num_gt == 1
    assert "AP75" in format_report_table(report)
    assert report.to_dict()["AP75"] == report.ap


def test_load_detections_rounds_and_skips_degenerate(tmp_path):
    path = tmp_path / "dets.json"
    path.write_text(json.dumps([
        {"image_id": 0, "bbox": [1.4, 2.6, 10.2, 5.0], "score": 0.9},
        {"image_id": 0, "bbox": [3.0, 3.0, 0.2, 4.0], "score": 0.5},
        {"image_id": 1, "bbox": [-2.0, 0.0, 5.0, 5.0], "score": 0.1},
    ]))
    dets = load_detections(path)
    assert [d.box.as_tuple() for d in dets] == [(1, 3, 12, 8), (0, 0, 3, 5)]


def test_detection_score_must_be_probability():
    with pytest.raises(InvalidParameterError):
        _det((0, 0, 1, 1), 1.5)
    with pytest.raises(InvalidParameterError):
        _det((0, 0, 1, 1), float("nan"))
