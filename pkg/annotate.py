"""Pseudo-labels, synthetic records, the occluded-box size estimator, dataset splitting and corpus statistics."""
import json
import logging
import math
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from errors import InvalidDepthError, InvalidParameterError
from geometry import OcclusionBucket, PixelBox, bucket_of, occlusion_rate
from corpus import seeded_shuffle
from raster import BinaryMask, RasterImage, place_mask

logger = logging.getLogger(__name__)

# Average pedestrian size in meters used by the occluded-box estimator.
HUMAN_HEIGHT_M = 1.7
HUMAN_WIDTH_M = 0.3

CATEGORY_ID = 1
CATEGORY_NAME = "pedestrian"

# Namespaced key carrying custom fields inside COCO images and annotations.
EXTENSION_KEY = "augment"

SPLIT_NAMES = ("train", "val", "test")


class Generator(str, Enum):
    ODA = "oda"
    PDA = "pda"
    COPY_PASTE = "copy_paste"
    MANUAL = "manual"


@dataclass(frozen=True)
class Provenance:
    asset_id: Optional[str]
    background_id: Optional[str]
    seed: Optional[int]
    record_index: Optional[int]
    occluder_index: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "background_id": self.background_id,
            "seed": self.seed,
            "record_index": self.record_index,
            "occluder_index": self.occluder_index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Provenance":
        return cls(
            data.get("asset_id"),
            data.get("background_id"),
            data.get("seed"),
            data.get("record_index"),
            data.get("occluder_index"),
        )


@dataclass(frozen=True)
class PseudoLabel:
    """One pedestrian instance of ground truth, generated or manual."""
    box: PixelBox
    bucket: OcclusionBucket
    generator: Generator
    provenance: Provenance
    posture: Optional[str] = None
    occluder_kind: Optional[str] = None
    orientation: Optional[str] = None
    occlusion_rate: float = 0.0
    category: str = CATEGORY_NAME

    def __post_init__(self):
        if self.generator == Generator.ODA and self.occluder_kind is None:
            raise InvalidParameterError("ODA labels must carry an occluder kind")
        if self.generator == Generator.PDA:
            if self.posture is None:
                raise InvalidParameterError("PDA labels must carry a posture")
            if self.bucket.index != 0:
                raise InvalidParameterError(f"PDA labels must be in bucket 0, got {self.bucket.index}")

    @property
    def image_id(self) -> Optional[int]:
        return self.provenance.record_index


@dataclass(frozen=True, eq=False)
class PastedLayer:
    """One pasted pedestrian as it ends up in the composite.

    `visible` is in background coordinates and already reflects every later
    layer pasted on top; `mask` is the full resized mask in local coordinates.
    `trimmed` holds the carved pixels dropped by visible-mask cleanup.
    """
    asset_id: str
    offset: Tuple[int, int]
    pixels: RasterImage
    mask: BinaryMask
    visible: BinaryMask
    occluder_index: Optional[int] = None
    trimmed: Optional[BinaryMask] = None

    def placed(self, width: int, height: int) -> BinaryMask:
        return place_mask(self.mask, self.offset, width, height)


@dataclass(frozen=True, eq=False)
class SyntheticRecord:
    record_index: int
    background_id: str
    generator: Generator
    image: RasterImage
    labels: Tuple[PseudoLabel, ...]
    layers: Tuple[PastedLayer, ...] = ()


def label_for_layer(layer: PastedLayer, generator: Generator, provenance: Provenance,
                    posture: Optional[str] = None, occluder_kind: Optional[str] = None,
                    orientation: Optional[str] = None) -> PseudoLabel:
    """Box and bucket recomputed from the layer's final visible pixels."""
    rate = occlusion_rate(layer.visible.population, layer.mask.population)
    return PseudoLabel(
        box=layer.visible.tight_box(),
        bucket=bucket_of(rate),
        generator=generator,
        provenance=provenance,
        posture=posture,
        occluder_kind=occluder_kind,
        orientation=orientation,
        occlusion_rate=rate,
    )


# ==================== OCCLUDED BOX ESTIMATOR ====================

@dataclass(frozen=True)
class OccludedBoxEstimate:
    """Expected metric size of a pedestrian at depth d_o out of d_max."""
    width_m: float
    height_m: float
    d_o: float
    d_max: float
    human_height_m: float = HUMAN_HEIGHT_M
    human_width_m: float = HUMAN_WIDTH_M


def estimate_occluded_box(d_o: float, d_max: float, human_height_m: float = HUMAN_HEIGHT_M,
                          human_width_m: float = HUMAN_WIDTH_M) -> OccludedBoxEstimate:
    """Shrink the average pedestrian size linearly with depth.

    W_o = W_p * (1 - D_o / D_max) and H_o = H_p * (1 - D_o / D_max).

    Raises:
        InvalidDepthError: d_max <= 0 or d_o outside [0, d_max]
    """
    if not d_max > 0 or not math.isfinite(d_max):
        raise InvalidDepthError(f"D_max must be a positive depth, got {d_max}")
    if not 0 <= d_o <= d_max:
        raise InvalidDepthError(f"D_o must be within [0, {d_max}], got {d_o}")
    if human_height_m <= 0 or human_width_m <= 0:
        raise InvalidParameterError("Average human height and width must be positive")
    factor = 1 - d_o / d_max
    return OccludedBoxEstimate(
        width_m=human_width_m * factor,
        height_m=human_height_m * factor,
        d_o=d_o,
        d_max=d_max,
        human_height_m=human_height_m,
        human_width_m=human_width_m,
    )


def _round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


def to_pixels(est: OccludedBoxEstimate, pixels_per_meter: float) -> Tuple[int, int]:
    if not pixels_per_meter > 0:
        raise InvalidParameterError(f"pixels_per_meter must be positive, got {pixels_per_meter}")
    return _round_half_up(est.width_m * pixels_per_meter), _round_half_up(est.height_m * pixels_per_meter)


# ==================== SPLIT ====================

@dataclass(frozen=True)
class SplitAssignment:
    train: Tuple = ()
    val: Tuple = ()
    test: Tuple = ()
    seed: Optional[int] = None

    def of(self, record_id) -> Optional[str]:
        for name in SPLIT_NAMES:
            if record_id in getattr(self, name):
                return name
        return None

    def as_mapping(self) -> Dict:
        return {rid: name for name in SPLIT_NAMES for rid in getattr(self, name)}

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": list(self.train), "val": list(self.val), "test": list(self.test)}

    @classmethod
    def from_dict(cls, data: dict) -> "SplitAssignment":
        return cls(tuple(data.get("train", ())), tuple(data.get("val", ())), tuple(data.get("test", ())), data.get("seed"))


def split(record_ids: Sequence, seed: int) -> SplitAssignment:
    """Shuffle then cut at floor(0.5n) and floor(0.8n): train/val/test at 5:3:2."""
    ids = list(record_ids)
    if len(set(ids)) != len(ids):
        raise InvalidParameterError("Record ids passed to split must be unique")
    shuffled = seeded_shuffle(ids, seed, "split")
    n = len(shuffled)
    cut_train = n // 2
    cut_val = (4 * n) // 5
    return SplitAssignment(
        train=tuple(shuffled[:cut_train]),
        val=tuple(shuffled[cut_train:cut_val]),
        test=tuple(shuffled[cut_val:]),
        seed=seed,
    )


# ==================== STATS ====================

def sub_dataset_of(label: PseudoLabel) -> str:
    if label.generator == Generator.ODA or label.occluder_kind is not None:
        return "occlusion"
    if label.posture == "lying_down":
        return "lying_down"
    return "posture"


@dataclass
class StatsTable:
    total_labels: int = 0
    total_images: int = 0
    by_generator: Dict[str, int] = field(default_factory=dict)
    by_occluder_kind: Dict[str, int] = field(default_factory=dict)
    by_posture: Dict[str, int] = field(default_factory=dict)
    by_orientation: Dict[str, int] = field(default_factory=dict)
    by_bucket: Dict[str, int] = field(default_factory=dict)
    by_split: Dict[str, int] = field(default_factory=dict)
    images_by_split: Dict[str, int] = field(default_factory=dict)
    by_sub_dataset: Dict[str, Dict[str, int]] = field(default_factory=dict)
    by_split_sub_dataset: Dict[str, Dict[str, Dict[str, int]]] = field(default_factory=dict)
    failure_reasons: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total_labels": self.total_labels,
            "total_images": self.total_images,
            "by_generator": self.by_generator,
            "by_occluder_kind": self.by_occluder_kind,
            "by_posture": self.by_posture,
            "by_orientation": self.by_orientation,
            "by_bucket": self.by_bucket,
            "by_split": self.by_split,
            "images_by_split": self.images_by_split,
            "by_sub_dataset": self.by_sub_dataset,
            "by_split_sub_dataset": self.by_split_sub_dataset,
            "failure_reasons": self.failure_reasons,
        }


def stats(labels: Sequence[PseudoLabel], assignment: Optional[SplitAssignment] = None) -> StatsTable:
    """Counts by generator, occluder kind, posture, bucket and split.

    Labels without a value for a grouping are counted under "none", so every
    grouping sums to len(labels).
    """
    split_of = assignment.as_mapping() if assignment is not None else {}

    def count(values: Iterable) -> Dict[str, int]:
        counter = Counter("none" if v is None else str(v) for v in values)
        return dict(sorted(counter.items()))

    table = StatsTable(total_labels=len(labels))
    table.total_images = len({label.image_id for label in labels})
    table.by_generator = {g.value: 0 for g in Generator}
    table.by_generator.update(count(label.generator.value for label in labels))
    table.by_occluder_kind = count(label.occluder_kind for label in labels)
    table.by_posture = count(label.posture for label in labels)
    table.by_orientation = count(label.orientation for label in labels)
    table.by_bucket = {str(i): 0 for i in range(10)}
    table.by_bucket.update(count(label.bucket.index for label in labels))
    table.by_split = count(split_of.get(label.image_id) for label in labels)

    table.images_by_split = count(
        split_of.get(image_id) for image_id in {label.image_id for label in labels}
    )
    table.by_sub_dataset = _sub_dataset_rows(labels)
    if assignment is not None:
        per_split: Dict[str, List[PseudoLabel]] = {}
        for label in labels:
            per_split.setdefault(split_of.get(label.image_id) or "none", []).append(label)
        table.by_split_sub_dataset = {
            name: _sub_dataset_rows(rows) for name, rows in sorted(per_split.items())
        }
    return table


def _sub_dataset_rows(labels: Sequence[PseudoLabel]) -> Dict[str, Dict[str, int]]:
    """#images and #pedestrians per sub-dataset."""
    rows: Dict[str, Dict[str, int]] = {}
    images_seen: Dict[str, set] = {}
    for label in labels:
        name = sub_dataset_of(label)
        row = rows.setdefault(name, {"images": 0, "pedestrians": 0})
        row["pedestrians"] += 1
        images_seen.setdefault(name, set()).add(label.image_id)
    for name, ids in images_seen.items():
        rows[name]["images"] = len(ids)
    return dict(sorted(rows.items()))


def _sub_dataset_lines(title: str, rows: Dict[str, Dict[str, int]]) -> List[str]:
    lines = [f"{title:<22}{'#images':>10}{'#pedestrians':>14}", "-" * 46]
    for name, row in rows.items():
        lines.append(f"  {name:<20}{row['images']:>10}{row['pedestrians']:>14}")
    return lines


def format_stats_table(table: StatsTable) -> str:
    """Fixed-width text rendering of a StatsTable."""
    lines = [f"{'labels':<24}{table.total_labels:>10}", f"{'images':<24}{table.total_images:>10}"]
    sections = [
        ("generator", table.by_generator),
        ("occluder kind", table.by_occluder_kind),
        ("posture", table.by_posture),
        ("orientation", table.by_orientation),
        ("occlusion bucket", table.by_bucket),
        ("split (pedestrians)", table.by_split),
        ("split (images)", table.images_by_split),
        ("failure reason", table.failure_reasons),
    ]
    for title, rows in sections:
        if not rows:
            continue
        lines.append("")
        lines.append(title)
        lines.append("-" * 34)
        for key, value in rows.items():
            if title == "occlusion bucket":
                key = OcclusionBucket(int(key)).label
            lines.append(f"  {key:<22}{value:>10}")
    if table.by_sub_dataset:
        lines.append("")
        lines.extend(_sub_dataset_lines("sub-dataset", table.by_sub_dataset))
    for split_name, rows in table.by_split_sub_dataset.items():
        lines.append("")
        lines.extend(_sub_dataset_lines(f"{split_name} sub-dataset", rows))
    return "\n".join(lines)


# ==================== LABEL FILES ====================

def write_json_atomic(path, document):
    """Write JSON via a temp file in the same directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def label_to_annotation(label: PseudoLabel, annotation_id: int, image_id: int) -> dict:
    box = label.box
    return {
        "id": annotation_id,
        "image_id": image_id,
        "category_id": CATEGORY_ID,
        "bbox": box.to_xywh(),
        "area": box.width * box.height,
        "iscrowd": 0,
        EXTENSION_KEY: {
            "bucket": label.bucket.index,
            "occlusion_rate": label.occlusion_rate,
            "posture": label.posture,
            "orientation": label.orientation,
            "occluder_kind": label.occluder_kind,
            "generator": label.generator.value,
            "provenance": label.provenance.to_dict(),
        },
    }


def annotation_to_label(annotation: dict) -> PseudoLabel:
    """Read a COCO annotation; entries without the extension key are manual labels."""
    x, y, w, h = (int(round(v)) for v in annotation["bbox"])
    box = PixelBox.from_xywh(x, y, w, h)
    ext = annotation.get(EXTENSION_KEY)
    if ext is None:
        return PseudoLabel(
            box=box,
            bucket=OcclusionBucket(0),
            generator=Generator.MANUAL,
            provenance=Provenance(None, None, None, annotation["image_id"]),
        )
    provenance = Provenance.from_dict(ext.get("provenance", {}))
    if provenance.record_index is None:
        provenance = Provenance(provenance.asset_id, provenance.background_id, provenance.seed,
                                annotation["image_id"], provenance.occluder_index)
    return PseudoLabel(
        box=box,
        bucket=OcclusionBucket(int(ext.get("bucket", 0))),
        generator=Generator(ext.get("generator", Generator.MANUAL.value)),
        provenance=provenance,
        posture=ext.get("posture"),
        occluder_kind=ext.get("occluder_kind"),
        orientation=ext.get("orientation"),
        occlusion_rate=float(ext.get("occlusion_rate", 0.0)),
    )


def build_label_document(images: List[dict], labels: Sequence[PseudoLabel]) -> dict:
    """COCO-style document; annotation ids follow label order."""
    annotations = [
        label_to_annotation(label, i + 1, label.image_id) for i, label in enumerate(labels)
    ]
    return {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": CATEGORY_ID, "name": CATEGORY_NAME}],
    }


def write_labels(path, images: List[dict], labels: Sequence[PseudoLabel]):
    write_json_atomic(path, build_label_document(images, labels))
    logger.info(f"Wrote {len(labels)} labels for {len(images)} images to {path}")


def load_labels(path) -> Tuple[List[dict], List[PseudoLabel]]:
    """Images and labels of a COCO-style label file."""
    with open(path, encoding="utf-8") as f:
        document = json.load(f)
    images = document.get("images", [])
    labels = [annotation_to_label(a) for a in document.get("annotations", [])]
    return images, labels
