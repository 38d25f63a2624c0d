"""Single-class detection scoring at a strict IoU threshold: greedy matching, AP and AR."""
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from annotate import PseudoLabel
from errors import InvalidParameterError, UndefinedMetricError
from geometry import PixelBox, iou

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.75
DEFAULT_MAX_DETS = 100


@dataclass(frozen=True)
class Detection:
    image_id: int
    box: PixelBox
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise InvalidParameterError(f"Detection score must be finite and in [0, 1], got {self.score}")


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one image; detections listed in descending score order."""
    image_id: Optional[int]
    scores: Tuple[float, ...]
    is_tp: Tuple[bool, ...]
    pairs: Tuple[Tuple[int, int], ...]
    num_gt: int

    @property
    def tp(self) -> int:
        return sum(self.is_tp)

    @property
    def fp(self) -> int:
        return len(self.is_tp) - self.tp

    @property
    def fn(self) -> int:
        return self.num_gt - self.tp


def _gt_box(gt) -> PixelBox:
    return gt.box if isinstance(gt, PseudoLabel) else gt


def score_order(dets: Sequence[Detection]) -> List[int]:
    """Detection indices by descending score; equal scores keep input order."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def match(dets: Sequence[Detection], gts: Sequence, iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MatchResult:
    """Greedy one-to-one matching of one image.

    Detections are visited by descending score; each takes the unmatched
    ground truth of highest IoU >= threshold, lower index winning ties.
    `pairs` holds (detection index, ground-truth index) in input indexing.
    """
    if not 0 < iou_threshold <= 1:
        raise InvalidParameterError(f"IoU threshold must be in (0, 1], got {iou_threshold}")
    image_ids = {d.image_id for d in dets} | {g.image_id for g in gts if isinstance(g, PseudoLabel)}
    if len(image_ids) > 1:
        raise InvalidParameterError(f"match() expects a single image, got ids {sorted(image_ids)}")

    gt_boxes = [_gt_box(g) for g in gts]
    taken = [False] * len(gt_boxes)
    order = score_order(dets)
    is_tp = []
    pairs = []
    for di in order:
        best_j, best_iou = -1, -1.0
        for j, gt_box in enumerate(gt_boxes):
            if taken[j]:
                continue
            overlap = iou(dets[di].box, gt_box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_j, best_iou = j, overlap
        if best_j >= 0:
            taken[best_j] = True
            pairs.append((di, best_j))
        is_tp.append(best_j >= 0)

    return MatchResult(
        image_id=next(iter(image_ids)) if image_ids else None,
        scores=tuple(dets[i].score for i in order),
        is_tp=tuple(is_tp),
        pairs=tuple(pairs),
        num_gt=len(gt_boxes),
    )


def average_precision(matches: Sequence[MatchResult]) -> float:
    """Area under the all-point interpolated precision-recall curve.

    Detections of every image are pooled and sorted by score.

    Raises:
        UndefinedMetricError: there is no ground truth at all
    """
    num_gt = sum(m.num_gt for m in matches)
    if num_gt == 0:
        raise UndefinedMetricError("AP is undefined without ground truth")

    pooled = [(score, tp) for m in matches for score, tp in zip(m.scores, m.is_tp)]
    if not pooled:
        return 0.0
    pooled.sort(key=lambda item: -item[0])
    tp_flags = np.array([tp for _, tp in pooled], dtype=bool)
    tp_cum = np.cumsum(tp_flags)
    fp_cum = np.cumsum(~tp_flags)
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(envelope[tp_flags]) / num_gt)


def average_recall(matches: Sequence[MatchResult], max_dets: int = DEFAULT_MAX_DETS) -> float:
    """Share of ground truth recovered by the top max_dets detections of each image.

    Greedy matching is decided in score order, so truncating after matching
    equals matching only the top max_dets.

    Raises:
        UndefinedMetricError: there is no ground truth at all
    """
    if max_dets < 1:
        raise InvalidParameterError(f"max_dets must be >= 1, got {max_dets}")
    num_gt = sum(m.num_gt for m in matches)
    if num_gt == 0:
        raise UndefinedMetricError("AR is undefined without ground truth")
    recovered = sum(sum(m.is_tp[:max_dets]) for m in matches)
    return recovered / num_gt


@dataclass(frozen=True)
class BucketScore:
    ap: float
    ar: float
    num_gt: int


@dataclass
class EvalReport:
    ap: float
    ar: float
    tp: int
    fp: int
    fn: int
    num_gt: int
    num_det: int
    iou_threshold: float
    max_dets: int
    per_bucket: Dict[int, BucketScore] = field(default_factory=dict)

    def to_dict(self) -> dict:
        key = f"{round(self.iou_threshold * 100):d}"
        return {
            f"AP{key}": self.ap,
            f"AR{key}": self.ar,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "num_gt": self.num_gt,
            "num_det": self.num_det,
            "iou_threshold": self.iou_threshold,
            "max_dets": self.max_dets,
            "per_bucket": {
                str(b): {"ap": s.ap, "ar": s.ar, "num_gt": s.num_gt} for b, s in sorted(self.per_bucket.items())
            },
        }


def _group_by_image(items: Iterable, key) -> Dict:
    grouped: Dict = {}
    for item in items:
        grouped.setdefault(key(item), []).append(item)
    return grouped


def _match_all(dets_by_image: Mapping, gts_by_image: Mapping, iou_threshold: float,
               max_dets: int) -> List[MatchResult]:
    results = []
    for image_id in sorted(set(dets_by_image) | set(gts_by_image), key=str):
        dets = dets_by_image.get(image_id, [])
        dets = [dets[i] for i in score_order(dets)[:max_dets]]
        results.append(match(dets, gts_by_image.get(image_id, []), iou_threshold))
    return results


def evaluate(detections: Sequence[Detection], ground_truth: Sequence[PseudoLabel],
             iou_threshold: float = DEFAULT_IOU_THRESHOLD, max_dets: int = DEFAULT_MAX_DETS) -> EvalReport:
    """AP and AR over all images plus a per-occlusion-bucket breakdown.

    Each bucket is scored by keeping only its ground truth and matching again.
    At most max_dets detections per image take part.

    Raises:
        UndefinedMetricError: no ground truth
    """
    dets_by_image = _group_by_image(detections, lambda d: d.image_id)
    gts_by_image = _group_by_image(ground_truth, lambda g: g.image_id)
    matches = _match_all(dets_by_image, gts_by_image, iou_threshold, max_dets)

    report = EvalReport(
        ap=average_precision(matches),
        ar=average_recall(matches, max_dets),
        tp=sum(m.tp for m in matches),
        fp=sum(m.fp for m in matches),
        fn=sum(m.fn for m in matches),
        num_gt=sum(m.num_gt for m in matches),
        num_det=sum(len(m.is_tp) for m in matches),
        iou_threshold=iou_threshold,
        max_dets=max_dets,
    )

    for bucket in sorted({g.bucket.index for g in ground_truth}):
        subset = [g for g in ground_truth if g.bucket.index == bucket]
        bucket_matches = _match_all(dets_by_image, _group_by_image(subset, lambda g: g.image_id),
                                    iou_threshold, max_dets)
        report.per_bucket[bucket] = BucketScore(
            ap=average_precision(bucket_matches),
            ar=average_recall(bucket_matches, max_dets),
            num_gt=len(subset),
        )

    logger.info(
        f"Evaluated {report.num_det} detections against {report.num_gt} ground truths: "
        f"AP={report.ap:.4f} AR={report.ar:.4f}"
    )
    return report


def format_report_table(report: EvalReport) -> str:
    pct = round(report.iou_threshold * 100)
    lines = [
        f"{'metric':<16}{'value':>12}",
        "-" * 28,
        f"{f'AP{pct}':<16}{report.ap:>12.4f}",
        f"{f'AR{pct}':<16}{report.ar:>12.4f}",
        f"{'TP':<16}{report.tp:>12d}",
        f"{'FP':<16}{report.fp:>12d}",
        f"{'FN':<16}{report.fn:>12d}",
    ]
    if report.per_bucket:
        lines += ["", f"{'bucket':<10}{'#gt':>8}{f'AP{pct}':>10}{f'AR{pct}':>10}", "-" * 38]
        for bucket, score in sorted(report.per_bucket.items()):
            lines.append(f"{bucket:<10d}{score.num_gt:>8d}{score.ap:>10.4f}{score.ar:>10.4f}")
    return "\n".join(lines)


def _round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


def parse_detection(raw: dict) -> Optional[Detection]:
    """Detection from {image_id, bbox [x, y, w, h], score}; None when the box rounds to nothing."""
    x, y, w, h = (float(v) for v in raw["bbox"])
    x1, y1 = max(_round_half_up(x), 0), max(_round_half_up(y), 0)
    x2, y2 = _round_half_up(x + w), _round_half_up(y + h)
    if x2 <= x1 or y2 <= y1:
        return None
    return Detection(raw["image_id"], PixelBox(x1, y1, x2, y2), float(raw["score"]))


def load_detections(path) -> List[Detection]:
    with open(path, encoding="utf-8") as f:
        document = json.load(f)
    if not isinstance(document, list):
        raise InvalidParameterError(f"Detections file {path} must hold a JSON array")
    detections = []
    skipped = 0
    for raw in document:
        det = parse_detection(raw)
        if det is None:
            skipped += 1
            continue
        detections.append(det)
    if skipped:
        logger.warning(f"Skipped {skipped} detections whose boxes round to zero area")
    return detections
