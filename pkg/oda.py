"""Occlusion augmentation: paste pedestrians partly behind annotated occluders.

For each chosen occluder the asset is scaled to the occluder height, its
top-left corner is dropped 20-30% of that height above the occluder top, the
part covered by the occluder is carved away and the rest is fused onto the
background with a hard alpha.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np

from annotate import Generator, PastedLayer, Provenance, SyntheticRecord, label_for_layer
from corpus import PedestrianAsset, SceneBackground, randint
from errors import (
    DegenerateAssetError,
    EmptyPoolError,
    FullyOccludedError,
    GenerationFailedError,
    InvalidParameterError,
    NoOccludersError,
    PlacementError,
    PlacementInfeasibleError,
    RejectedInstanceError,
)
from geometry import OcclusionBucket, PixelBox, bucket_of, occlusion_rate
from raster import (
    BinaryMask,
    RasterImage,
    StructuringElement,
    crop_mask,
    fuse,
    opening,
    place_mask,
    resize_mask_and_pixels,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OdaParams:
    """Knobs of the occlusion augmentation.

    Attributes:
        human_height_m: average pedestrian height in meters
        human_width_m: average pedestrian width in meters
        band: (lo, hi) fractions of the occluder height by which the paste
            offset sits above the occluder top
        max_occluders: upper bound on occluders used per record
        retry_budget: placement attempts per chosen occluder
        element: when set, the carved visible mask is opened with it to drop
            slivers left along the occluder edge
    """
    human_height_m: float = 1.7
    human_width_m: float = 0.3
    band: Tuple[float, float] = (0.2, 0.3)
    max_occluders: int = 3
    retry_budget: int = 5
    element: Optional[StructuringElement] = None

    def __post_init__(self):
        lo, hi = self.band
        if not 0 <= lo < hi <= 1:
            raise InvalidParameterError(f"ODA band must satisfy 0 <= lo < hi <= 1, got {self.band}")
        if self.human_height_m <= 0 or self.human_width_m <= 0:
            raise InvalidParameterError("Average human height and width must be positive")
        if self.max_occluders < 1:
            raise InvalidParameterError(f"max_occluders must be >= 1, got {self.max_occluders}")
        if self.retry_budget < 1:
            raise InvalidParameterError(f"retry_budget must be >= 1, got {self.retry_budget}")


@dataclass(frozen=True, eq=False)
class Placement:
    """One pedestrian placed against one occluder."""
    asset_id: str
    offset: Tuple[int, int]
    size: Tuple[int, int]
    visible: BinaryMask
    occluded_count: int
    bucket: OcclusionBucket
    occluder_index: int
    pixels: RasterImage
    mask: BinaryMask
    trimmed: Optional[BinaryMask] = None


def band_bounds(band: Tuple[float, float], h_car: int) -> Tuple[int, int]:
    """Floored pixel bounds of the vertical offset band for an occluder of height h_car."""
    lo, hi = band
    return math.floor(Fraction(str(lo)) * h_car), math.floor(Fraction(str(hi)) * h_car)


def occlusion_aware_scale(asset: PedestrianAsset, h_car: int) -> Tuple[RasterImage, BinaryMask]:
    """Resize so the asset is exactly h_car tall; width rounds half up.

    Raises:
        DegenerateAssetError: the scaled width rounds to zero
    """
    if h_car < 1:
        raise InvalidParameterError(f"Occluder height must be >= 1, got {h_car}")
    w_p, h_p = asset.box.width, asset.box.height
    new_w = (2 * w_p * h_car + h_p) // (2 * h_p)
    if new_w == 0:
        raise DegenerateAssetError(
            f"Asset '{asset.asset_id}' ({w_p}x{h_p}) collapses to zero width at height {h_car}"
        )
    return resize_mask_and_pixels(asset.pixels, asset.mask, new_w, h_car)


def sample_offset(car_box: PixelBox, w_p_resized: int, band: Tuple[float, float],
                  rng: np.random.Generator) -> Tuple[int, int]:
    """Top-left paste point: x uniform over the occluder span, y above the occluder top.

    Raises:
        PlacementInfeasibleError: the pedestrian is wider than the occluder
    """
    if car_box.x2 - w_p_resized < car_box.x1:
        raise PlacementInfeasibleError(
            f"Pedestrian width {w_p_resized} exceeds occluder width {car_box.width}"
        )
    lo_px, hi_px = band_bounds(band, car_box.height)
    x = randint(rng, car_box.x1, car_box.x2 - w_p_resized)
    y = car_box.y1 - randint(rng, lo_px, hi_px)
    return x, y


def carve_occlusion(ped_mask_placed: BinaryMask, car_mask: BinaryMask) -> Tuple[BinaryMask, int]:
    """Split a placed pedestrian into the part left visible and the count hidden by the occluder.

    Raises:
        FullyOccludedError: nothing of the pedestrian stays visible
    """
    visible = ped_mask_placed - car_mask
    occluded_count = (ped_mask_placed & car_mask).population
    if visible.is_empty():
        raise FullyOccludedError(f"Occluder hides all {ped_mask_placed.population} pedestrian pixels")
    return visible, occluded_count


def _place_against(bg: SceneBackground, occluder_index: int, asset: PedestrianAsset,
                   params: OdaParams, rng: np.random.Generator) -> Placement:
    occluder = bg.occluders[occluder_index]
    pixels, mask = occlusion_aware_scale(asset, occluder.box.height)
    offset = sample_offset(occluder.box, mask.width, params.band, rng)

    lo_px, hi_px = band_bounds(params.band, occluder.box.height)
    assert lo_px <= occluder.box.y1 - offset[1] <= hi_px
    assert occluder.box.x1 <= offset[0] <= occluder.box.x2 - mask.width

    placed = place_mask(mask, offset, bg.width, bg.height)
    if placed.is_empty():
        raise PlacementError(f"Placement at {offset} falls outside the background")
    visible, occluded_count = carve_occlusion(placed, occluder.mask)
    trimmed = None
    if params.element is not None and params.element.side <= min(visible.width, visible.height):
        carved = visible
        visible = opening(carved, params.element)
        if visible.is_empty():
            raise FullyOccludedError("Visible part vanished after mask cleanup")
        trimmed = carved - visible
    rate = occlusion_rate(visible.population, mask.population)
    return Placement(
        asset_id=asset.asset_id,
        offset=offset,
        size=(mask.width, mask.height),
        visible=visible,
        occluded_count=occluded_count,
        bucket=bucket_of(rate),
        occluder_index=occluder_index,
        pixels=pixels,
        mask=mask,
        trimmed=trimmed,
    )


def _survives_overlay(earlier: Sequence[Placement], visible: List[BinaryMask], candidate: Placement) -> bool:
    """True when every earlier placement keeps a labelable visible part under the candidate."""
    for placement, current in zip(earlier, visible):
        remaining = current - candidate.visible
        if remaining.is_empty():
            return False
        try:
            bucket_of(occlusion_rate(remaining.population, placement.mask.population))
        except RejectedInstanceError:
            return False
    return True


def generate_oda(bg: SceneBackground, assets: Sequence[PedestrianAsset], params: OdaParams,
                 rng: np.random.Generator, seed: Optional[int] = None, record_index: int = 0) -> SyntheticRecord:
    """Compose one occlusion record.

    Picks t occluders (1 <= t <= min(max_occluders, #occluders), without
    replacement), places one asset against each, and labels the final
    visible pixels. Later placements lie on top of earlier ones.

    Raises:
        EmptyPoolError, NoOccludersError: unusable inputs
        GenerationFailedError: no occluder received a placement
    """
    if not assets:
        raise EmptyPoolError("ODA needs at least one pedestrian asset")
    if not bg.occluders:
        raise NoOccludersError(f"Background '{bg.background_id}' has no occluder regions")

    available = len(bg.occluders)
    t = randint(rng, 1, min(params.max_occluders, available))
    chosen = [int(i) for i in rng.choice(available, size=t, replace=False)]

    canvas = bg.pixels
    placements: List[Placement] = []
    visible: List[BinaryMask] = []
    assets_used = {}
    reasons = []

    for occluder_index in chosen:
        for attempt in range(params.retry_budget):
            asset = assets[randint(rng, 0, len(assets) - 1)]
            try:
                placement = _place_against(bg, occluder_index, asset, params, rng)
            except (DegenerateAssetError, PlacementError, RejectedInstanceError) as e:
                reasons.append(type(e).__name__)
                logger.debug(
                    f"Record {record_index}: occluder {occluder_index} attempt {attempt} rejected: {e}"
                )
                continue
            if not _survives_overlay(placements, visible, placement):
                reasons.append("OverlayRejected")
                continue

            local_visible = crop_mask(placement.visible, placement.offset, *placement.size)
            canvas = fuse(canvas, placement.pixels, local_visible, placement.offset)
            visible = [current - placement.visible for current in visible]
            placements.append(placement)
            visible.append(placement.visible)
            assets_used[occluder_index] = asset
            break
        else:
            logger.debug(f"Record {record_index}: occluder {occluder_index} skipped after {params.retry_budget} attempts")

    if not placements:
        summary = ", ".join(sorted(set(reasons))) or "no attempts"
        raise GenerationFailedError(
            f"No placement succeeded on background '{bg.background_id}' ({summary})"
        )

    layers = []
    labels = []
    for placement, final_visible in zip(placements, visible):
        layer = PastedLayer(
            asset_id=placement.asset_id,
            offset=placement.offset,
            pixels=placement.pixels,
            mask=placement.mask,
            visible=final_visible,
            occluder_index=placement.occluder_index,
            trimmed=placement.trimmed,
        )
        asset = assets_used[placement.occluder_index]
        provenance = Provenance(asset.asset_id, bg.background_id, seed, record_index, placement.occluder_index)
        layers.append(layer)
        labels.append(label_for_layer(
            layer,
            Generator.ODA,
            provenance,
            posture=asset.posture,
            occluder_kind=bg.occluders[placement.occluder_index].kind,
            orientation=asset.orientation,
        ))

    return SyntheticRecord(
        record_index=record_index,
        background_id=bg.background_id,
        generator=Generator.ODA,
        image=canvas,
        labels=tuple(labels),
        layers=tuple(layers),
    )
