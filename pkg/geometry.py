"""Integer pixel geometry: boxes, IoU, occlusion rates and the 10-bucket taxonomy."""
import math
import numbers
from dataclasses import dataclass
from typing import Optional

from errors import DegenerateMaskError, InvalidParameterError, RejectedInstanceError

# Highest occlusion rate the taxonomy accepts.
MAX_OCCLUSION_RATE = 0.99
NUM_BUCKETS = 10

# Absorbs representation error so that k/10 lands in bucket k.
_BUCKET_EPS = 1e-9


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned box in pixels, origin top-left.

    x2 and y2 are exclusive, so the box covers (x2 - x1) * (y2 - y1) pixels.
    """
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, numbers.Integral):
                raise InvalidParameterError(f"PixelBox.{name} must be an int, got {value!r}")
            object.__setattr__(self, name, int(value))
        if min(self.x1, self.y1, self.x2, self.y2) < 0:
            raise InvalidParameterError(f"PixelBox coordinates must be >= 0: {self.as_tuple()}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise InvalidParameterError(f"PixelBox must have positive extent: {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    def as_tuple(self) -> tuple:
        return (self.x1, self.y1, self.x2, self.y2)

    def to_xywh(self) -> list:
        """COCO-style [x, y, width, height]."""
        return [self.x1, self.y1, self.width, self.height]

    @classmethod
    def from_xywh(cls, x: int, y: int, w: int, h: int) -> "PixelBox":
        return cls(x, y, x + w, y + h)

    def inside(self, width: int, height: int) -> bool:
        """True when the box lies within an image of the given size."""
        return self.x2 <= width and self.y2 <= height


@dataclass(frozen=True)
class OcclusionBucket:
    """Decile class of an occlusion rate; 0 is unoccluded, 9 covers [90%, 99%]."""
    index: int

    def __post_init__(self):
        if not 0 <= self.index < NUM_BUCKETS:
            raise InvalidParameterError(f"Occlusion bucket must be in [0, 9], got {self.index}")

    @property
    def lower_percent(self) -> int:
        return 10 * self.index

    @property
    def label(self) -> str:
        if self.index == 0:
            return "not_occluded"
        upper = 99 if self.index == NUM_BUCKETS - 1 else 10 * self.index + 9
        return f"{self.lower_percent}-{upper}%"


def box_area(b: PixelBox) -> int:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersect(a: PixelBox, b: PixelBox) -> Optional[PixelBox]:
    """Largest box contained in both, or None when they share no pixel."""
    x1 = max(a.x1, b.x1)
    y1 = max(a.y1, b.y1)
    x2 = min(a.x2, b.x2)
    y2 = min(a.y2, b.y2)
    if x2 <= x1 or y2 <= y1:
        return None
    return PixelBox(x1, y1, x2, y2)


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection over union; exact integer areas, one final division."""
    inter = intersect(a, b)
    if inter is None:
        return 0.0
    inter_area = box_area(inter)
    union = box_area(a) + box_area(b) - inter_area
    return inter_area / union


def occlusion_rate(visible_pixels: int, full_pixels: int) -> float:
    """Fraction of the full mask that is hidden."""
    if full_pixels <= 0:
        raise DegenerateMaskError(f"Full mask has {full_pixels} pixels")
    if visible_pixels < 0 or visible_pixels > full_pixels:
        raise InvalidParameterError(
            f"Visible pixel count {visible_pixels} outside [0, {full_pixels}]"
        )
    return (full_pixels - visible_pixels) / full_pixels


def bucket_of(rate: float) -> OcclusionBucket:
    """Map an occlusion rate to its decile bucket.

    Raises:
        RejectedInstanceError: rate above 0.99, outside the taxonomy
    """
    if not 0.0 <= rate <= 1.0 or math.isnan(rate):
        raise InvalidParameterError(f"Occlusion rate must be in [0, 1], got {rate}")
    if rate > MAX_OCCLUSION_RATE:
        raise RejectedInstanceError(f"Occlusion rate {rate:.4f} exceeds {MAX_OCCLUSION_RATE}")
    index = min(math.floor(rate * NUM_BUCKETS + _BUCKET_EPS), NUM_BUCKETS - 1)
    return OcclusionBucket(index)
