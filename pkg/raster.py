"""Pixel-level primitives: binary masks, RGB rasters, morphology, resizing and binary-alpha fusion."""
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from errors import DegenerateMaskError, InvalidParameterError, PlacementError
from geometry import PixelBox

logger = logging.getLogger(__name__)

# Alpha or gray values at or above this count as foreground.
MASK_THRESHOLD = 128

PathLike = Union[str, Path]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


class BinaryMask:
    """Immutable bit grid of shape (height, width)."""

    __slots__ = ("bits", "__dict__")

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits)
        if bits.ndim != 2:
            raise InvalidParameterError(f"Mask must be 2-D, got shape {bits.shape}")
        if bits.shape[0] <= 0 or bits.shape[1] <= 0:
            raise InvalidParameterError(f"Mask dimensions must be positive, got {bits.shape}")
        self.bits = _frozen(bits.astype(bool, copy=True))

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @cached_property
    def population(self) -> int:
        return int(np.count_nonzero(self.bits))

    def is_empty(self) -> bool:
        return self.population == 0

    def tight_box(self) -> PixelBox:
        """Minimal box containing every set bit."""
        if self.is_empty():
            raise DegenerateMaskError("Tight box of an empty mask is undefined")
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        return PixelBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)

    def crop(self, box: PixelBox) -> "BinaryMask":
        return BinaryMask(self.bits[box.y1:box.y2, box.x1:box.x2])

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        _check_same_shape(self, other)
        return BinaryMask(self.bits & other.bits)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        _check_same_shape(self, other)
        return BinaryMask(self.bits | other.bits)

    def __sub__(self, other: "BinaryMask") -> "BinaryMask":
        _check_same_shape(self, other)
        return BinaryMask(self.bits & ~other.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, population={self.population})"


class RasterImage:
    """Immutable 8-bit RGB image of shape (height, width, 3)."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        pixels = np.asarray(pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise InvalidParameterError(f"RasterImage must be HxWx3, got shape {pixels.shape}")
        if pixels.shape[0] <= 0 or pixels.shape[1] <= 0:
            raise InvalidParameterError(f"RasterImage dimensions must be positive, got {pixels.shape}")
        self.pixels = _frozen(pixels.astype(np.uint8, copy=True))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def crop(self, box: PixelBox) -> "RasterImage":
        return RasterImage(self.pixels[box.y1:box.y2, box.x1:box.x2])

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None

    def __repr__(self) -> str:
        return f"RasterImage({self.width}x{self.height})"


@dataclass(frozen=True)
class StructuringElement:
    """Square structuring element with an odd side."""
    side: int = 3

    def __post_init__(self):
        if self.side < 1 or self.side % 2 == 0:
            raise InvalidParameterError(f"Structuring element side must be odd and >= 1, got {self.side}")


def _check_same_shape(a: BinaryMask, b: BinaryMask):
    if a.bits.shape != b.bits.shape:
        raise InvalidParameterError(
            f"Mask shapes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def _check_element(m: BinaryMask, k: StructuringElement):
    if k.side > min(m.width, m.height):
        raise InvalidParameterError(
            f"Structuring element side {k.side} exceeds mask size {m.width}x{m.height}"
        )


def _rank_filter(m: BinaryMask, k: StructuringElement, flt: ImageFilter.Filter) -> BinaryMask:
    """Run a Pillow rank filter with out-of-bounds pixels treated as unset."""
    pad = k.side // 2
    # Pillow replicates edge pixels, so pad with zeros first and crop afterwards.
    padded = np.pad(m.bits, pad, mode="constant", constant_values=False)
    img = Image.fromarray(padded.astype(np.uint8) * 255)
    filtered = np.asarray(img.filter(flt)) > 0
    return BinaryMask(filtered[pad:pad + m.height, pad:pad + m.width])


def erode(m: BinaryMask, k: StructuringElement) -> BinaryMask:
    """A pixel survives iff every pixel under the footprint is set."""
    _check_element(m, k)
    if k.side == 1:
        return m
    return _rank_filter(m, k, ImageFilter.MinFilter(k.side))


def dilate(m: BinaryMask, k: StructuringElement) -> BinaryMask:
    """A pixel is set iff any pixel under the footprint is set."""
    _check_element(m, k)
    if k.side == 1:
        return m
    return _rank_filter(m, k, ImageFilter.MaxFilter(k.side))


def opening(m: BinaryMask, k: StructuringElement) -> BinaryMask:
    """Erosion followed by dilation with the same element."""
    return dilate(erode(m, k), k)


def clean_mask(m: BinaryMask, k: StructuringElement, open_passes: int = 1, erode_passes: int = 1) -> BinaryMask:
    """Default mask cleanup: OPEN then ERODE."""
    for _ in range(open_passes):
        m = opening(m, k)
    for _ in range(erode_passes):
        m = erode(m, k)
    return m


def _nearest_indices(src: int, dst: int) -> np.ndarray:
    # Sample at pixel centres: floor((i + 0.5) * src / dst), in integers.
    return ((2 * np.arange(dst, dtype=np.int64) + 1) * src) // (2 * dst)


def resize_mask_and_pixels(
    pixels: RasterImage, m: BinaryMask, new_w: int, new_h: int
) -> Tuple[RasterImage, BinaryMask]:
    """Nearest-neighbor resize of an asset's pixels and mask to exactly (new_w, new_h).

    A nonempty mask never resizes to an empty one: if sampling misses every
    set bit, the pixel under the mapped centroid is set.
    """
    if new_w < 1 or new_h < 1:
        raise InvalidParameterError(f"Target size must be >= 1x1, got {new_w}x{new_h}")
    if (pixels.width, pixels.height) != (m.width, m.height):
        raise InvalidParameterError(
            f"Pixels {pixels.width}x{pixels.height} and mask {m.width}x{m.height} differ"
        )
    if (new_w, new_h) == (m.width, m.height):
        return pixels, m

    rows = _nearest_indices(m.height, new_h)
    cols = _nearest_indices(m.width, new_w)
    bits = m.bits[rows[:, None], cols[None, :]]
    out_pixels = pixels.pixels[rows[:, None], cols[None, :]]

    if not bits.any() and not m.is_empty():
        ys, xs = np.nonzero(m.bits)
        cy = min(int(ys.mean() * new_h / m.height), new_h - 1)
        cx = min(int(xs.mean() * new_w / m.width), new_w - 1)
        bits = bits.copy()
        bits[cy, cx] = True
        logger.debug(f"Resize to {new_w}x{new_h} lost every mask bit; kept centroid ({cx}, {cy})")

    return RasterImage(out_pixels), BinaryMask(bits)


def _clip_window(offset: Tuple[int, int], w: int, h: int, width: int, height: int):
    """Source and destination slices of a w x h footprint placed at offset inside width x height."""
    ox, oy = offset
    x0, y0 = max(ox, 0), max(oy, 0)
    x1, y1 = min(ox + w, width), min(oy + h, height)
    if x1 <= x0 or y1 <= y0:
        return None
    dst = (slice(y0, y1), slice(x0, x1))
    src = (slice(y0 - oy, y1 - oy), slice(x0 - ox, x1 - ox))
    return src, dst


def place_mask(m: BinaryMask, offset: Tuple[int, int], width: int, height: int) -> BinaryMask:
    """Translate a local mask by offset into a width x height canvas, clipping at the borders."""
    canvas = np.zeros((height, width), dtype=bool)
    window = _clip_window(offset, m.width, m.height, width, height)
    if window is not None:
        src, dst = window
        canvas[dst] = m.bits[src]
    return BinaryMask(canvas)


def crop_mask(m: BinaryMask, offset: Tuple[int, int], w: int, h: int) -> BinaryMask:
    """Inverse of place_mask: read a w x h window at offset; outside pixels are unset."""
    local = np.zeros((h, w), dtype=bool)
    window = _clip_window(offset, w, h, m.width, m.height)
    if window is not None:
        src, dst = window
        local[src] = m.bits[dst]
    return BinaryMask(local)


def fuse(bg: RasterImage, fg: RasterImage, visible: BinaryMask, offset: Tuple[int, int]) -> RasterImage:
    """Paste fg over bg where visible is set; alpha is strictly 0 or 1.

    Raises:
        PlacementError: the visible footprint has no pixel inside bg
    """
    if (fg.width, fg.height) != (visible.width, visible.height):
        raise InvalidParameterError(
            f"Foreground {fg.width}x{fg.height} and visible mask {visible.width}x{visible.height} differ"
        )
    window = _clip_window(offset, fg.width, fg.height, bg.width, bg.height)
    if window is None:
        raise PlacementError(f"Footprint at {offset} lies outside the {bg.width}x{bg.height} background")
    src, dst = window
    alpha = visible.bits[src]
    if not alpha.any():
        raise PlacementError(f"Visible footprint at {offset} is empty after clipping")

    out = bg.pixels.copy()
    region = out[dst]
    region[alpha] = fg.pixels[src][alpha]
    return RasterImage(out)


def rasterize_polygon(vertices, width: int, height: int) -> BinaryMask:
    """Fill a polygon given as [[x, y], ...] into a width x height mask."""
    canvas = Image.new("L", (width, height), 0)
    ImageDraw.Draw(canvas).polygon([(float(x), float(y)) for x, y in vertices], fill=255, outline=255)
    return BinaryMask(np.asarray(canvas) >= MASK_THRESHOLD)


# ==================== PNG I/O ====================

def load_image(path: PathLike) -> RasterImage:
    with Image.open(path) as img:
        return RasterImage(np.asarray(img.convert("RGB")))


def load_mask(path: PathLike) -> BinaryMask:
    """Read a mask from the alpha channel of an RGBA PNG or from a single-channel PNG."""
    with Image.open(path) as img:
        if img.mode in ("RGBA", "LA") or (img.mode == "P" and "transparency" in img.info):
            channel = np.asarray(img.convert("RGBA"))[:, :, 3]
        else:
            channel = np.asarray(img.convert("L"))
    return BinaryMask(channel >= MASK_THRESHOLD)


def load_rgba_asset(path: PathLike, mask_path: Optional[PathLike] = None) -> Tuple[RasterImage, BinaryMask]:
    """Pixels plus mask of a cut-out: alpha channel, or a separate mask file when given."""
    pixels = load_image(path)
    mask = load_mask(mask_path if mask_path is not None else path)
    if (mask.width, mask.height) != (pixels.width, pixels.height):
        raise InvalidParameterError(
            f"Mask {mask_path} is {mask.width}x{mask.height}, image {path} is {pixels.width}x{pixels.height}"
        )
    return pixels, mask


def save_image(image: RasterImage, path: PathLike):
    Image.fromarray(np.asarray(image.pixels)).save(path, format="PNG", optimize=False)


def save_mask(m: BinaryMask, path: PathLike):
    Image.fromarray(m.bits.astype(np.uint8) * 255).save(path, format="PNG", optimize=False)


def save_rgba(image: RasterImage, m: BinaryMask, path: PathLike):
    rgba = np.dstack([image.pixels, m.bits.astype(np.uint8) * 255])
    Image.fromarray(rgba).save(path, format="PNG", optimize=False)
