"""Posture augmentation: paste posture-varied pedestrians, fully visible, on the freespace of a background."""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from annotate import Generator, PastedLayer, Provenance, SyntheticRecord, label_for_layer
from corpus import PedestrianAsset, SceneBackground, randint
from errors import (
    DegenerateAssetError,
    EmptyPoolError,
    InvalidParameterError,
    MissingFreespaceError,
    PlacementInfeasibleError,
)
from raster import BinaryMask, RasterImage, fuse, place_mask, resize_mask_and_pixels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PdaParams:
    """Knobs of the posture augmentation.

    Attributes:
        scale_range: (lo, hi) multipliers of the limited rescale
        min_coverage: fraction of the feet row that must rest on freespace
        retry_budget: attempts per pedestrian, and anchor draws per attempt
        per_record: pedestrians pasted per record
    """
    scale_range: Tuple[float, float] = (0.8, 1.2)
    min_coverage: float = 0.5
    retry_budget: int = 20
    per_record: int = 1

    def __post_init__(self):
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise InvalidParameterError(f"PDA scale range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if not 0 < self.min_coverage <= 1:
            raise InvalidParameterError(f"min_coverage must be in (0, 1], got {self.min_coverage}")
        if self.retry_budget < 1:
            raise InvalidParameterError(f"retry_budget must be >= 1, got {self.retry_budget}")
        if self.per_record < 1:
            raise InvalidParameterError(f"per_record must be >= 1, got {self.per_record}")


def draw_scale(params: PdaParams, rng: np.random.Generator) -> float:
    lo, hi = params.scale_range
    if lo == hi:
        return lo
    return float(rng.uniform(lo, hi))


def scaled_size(width: int, height: int, scale: float) -> Tuple[int, int]:
    """Scale both dimensions, rounding half up."""
    return math.floor(width * scale + 0.5), math.floor(height * scale + 0.5)


def limited_rescale(asset: PedestrianAsset, params: PdaParams,
                    rng: np.random.Generator) -> Tuple[RasterImage, BinaryMask]:
    """Resize by one uniform factor drawn from the configured range.

    Raises:
        DegenerateAssetError: a scaled dimension rounds to zero
    """
    scale = draw_scale(params, rng)
    new_w, new_h = scaled_size(asset.box.width, asset.box.height, scale)
    if new_w < 1 or new_h < 1:
        raise DegenerateAssetError(
            f"Asset '{asset.asset_id}' collapses to {new_w}x{new_h} at scale {scale:.3f}"
        )
    return resize_mask_and_pixels(asset.pixels, asset.mask, new_w, new_h)


def _anchor_for(px: int, py: int, footprint_w: int, footprint_h: int) -> Tuple[int, int]:
    # The anchor bit is the ground pixel right under the footprint's bottom-center column.
    return px - footprint_w // 2, py - footprint_h


def sample_freespace_anchor(freespace: BinaryMask, footprint_w: int, footprint_h: int,
                            rng: np.random.Generator, retry_budget: int = 20,
                            contact: Optional[np.ndarray] = None,
                            min_coverage: Optional[float] = None) -> Tuple[int, int]:
    """Top-left offset whose footprint stands on a freespace pixel and stays inside the image.

    A set freespace bit is drawn uniformly; the footprint is hung so that its
    bottom-center column rests on that bit. Anchors that push the footprint
    out of the image, or whose contact columns cover less than min_coverage
    of freespace on the ground row, are rejected and redrawn.

    Raises:
        PlacementInfeasibleError: no feasible anchor within retry_budget draws
    """
    width, height = freespace.width, freespace.height
    candidates = np.flatnonzero(freespace.bits)
    if candidates.size == 0:
        raise PlacementInfeasibleError("Freespace mask is empty")
    if footprint_w > width or footprint_h > height:
        raise PlacementInfeasibleError(
            f"Footprint {footprint_w}x{footprint_h} does not fit a {width}x{height} image"
        )

    for _ in range(retry_budget):
        py, px = divmod(int(candidates[randint(rng, 0, candidates.size - 1)]), width)
        x, y = _anchor_for(px, py, footprint_w, footprint_h)
        if x < 0 or y < 0 or x + footprint_w > width or y + footprint_h > height:
            continue
        if contact is not None and min_coverage is not None and contact.any():
            ground = freespace.bits[py, x:x + footprint_w][contact]
            if ground.mean() < min_coverage:
                continue
        return x, y

    raise PlacementInfeasibleError(
        f"No freespace anchor for a {footprint_w}x{footprint_h} footprint within {retry_budget} draws"
    )


def generate_pda(bg: SceneBackground, assets: Sequence[PedestrianAsset], params: PdaParams,
                 rng: np.random.Generator, seed: Optional[int] = None, record_index: int = 0) -> SyntheticRecord:
    """Compose one posture record with per_record fully visible pedestrians.

    Raises:
        MissingFreespaceError, EmptyPoolError: unusable inputs
        PlacementInfeasibleError: the first pedestrian found no anchor within budget
    """
    if bg.freespace is None:
        raise MissingFreespaceError(f"Background '{bg.background_id}' has no freespace mask")
    if not assets:
        raise EmptyPoolError("PDA needs at least one pedestrian asset")

    canvas = bg.pixels
    occupied = BinaryMask.empty(bg.width, bg.height)
    layers: List[PastedLayer] = []
    labels = []

    for slot in range(params.per_record):
        for attempt in range(params.retry_budget):
            asset = assets[randint(rng, 0, len(assets) - 1)]
            try:
                pixels, mask = limited_rescale(asset, params, rng)
                offset = sample_freespace_anchor(
                    bg.freespace, mask.width, mask.height, rng,
                    retry_budget=params.retry_budget,
                    contact=mask.bits[-1],
                    min_coverage=params.min_coverage,
                )
            except (DegenerateAssetError, PlacementInfeasibleError) as e:
                logger.debug(f"Record {record_index}: PDA slot {slot} attempt {attempt} rejected: {e}")
                continue

            placed = place_mask(mask, offset, bg.width, bg.height)
            # Pedestrians of one record never overlap, so every one stays unoccluded.
            if (placed & occupied).population:
                continue

            canvas = fuse(canvas, pixels, mask, offset)
            occupied = occupied | placed
            layer = PastedLayer(asset.asset_id, offset, pixels, mask, placed)
            layers.append(layer)
            labels.append(label_for_layer(
                layer,
                Generator.PDA,
                Provenance(asset.asset_id, bg.background_id, seed, record_index),
                posture=asset.posture,
                orientation=asset.orientation,
            ))
            break
        else:
            if slot == 0:
                raise PlacementInfeasibleError(
                    f"No PDA placement on background '{bg.background_id}' within {params.retry_budget} attempts"
                )
            logger.debug(f"Record {record_index}: PDA slot {slot} skipped")

    return SyntheticRecord(
        record_index=record_index,
        background_id=bg.background_id,
        generator=Generator.PDA,
        image=canvas,
        labels=tuple(labels),
        layers=tuple(layers),
    )
