"""Naive copy-paste baseline: one asset at its original size, anywhere in the image, no scene awareness."""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from annotate import Generator, PastedLayer, Provenance, SyntheticRecord, label_for_layer
from corpus import PedestrianAsset, SceneBackground, randint
from errors import EmptyPoolError, InvalidParameterError, PlacementInfeasibleError
from raster import fuse, place_mask

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CopyPasteParams:
    retry_budget: int = 10

    def __post_init__(self):
        if self.retry_budget < 1:
            raise InvalidParameterError(f"retry_budget must be >= 1, got {self.retry_budget}")


def generate_copy_paste(bg: SceneBackground, assets: Sequence[PedestrianAsset], params: CopyPasteParams,
                        rng: np.random.Generator, seed: Optional[int] = None,
                        record_index: int = 0) -> SyntheticRecord:
    """Paste one randomly chosen asset at a uniformly random in-bounds location.

    Raises:
        EmptyPoolError: no assets
        PlacementInfeasibleError: no drawn asset fits inside the background
    """
    if not assets:
        raise EmptyPoolError("Copy-paste needs at least one pedestrian asset")

    for _ in range(params.retry_budget):
        asset = assets[randint(rng, 0, len(assets) - 1)]
        w, h = asset.box.width, asset.box.height
        if w > bg.width or h > bg.height:
            continue
        offset = (randint(rng, 0, bg.width - w), randint(rng, 0, bg.height - h))
        canvas = fuse(bg.pixels, asset.pixels, asset.mask, offset)
        layer = PastedLayer(asset.asset_id, offset, asset.pixels, asset.mask,
                            place_mask(asset.mask, offset, bg.width, bg.height))
        label = label_for_layer(
            layer,
            Generator.COPY_PASTE,
            Provenance(asset.asset_id, bg.background_id, seed, record_index),
            posture=asset.posture,
            orientation=asset.orientation,
        )
        return SyntheticRecord(record_index, bg.background_id, Generator.COPY_PASTE, canvas, (label,), (layer,))

    raise PlacementInfeasibleError(
        f"No asset fits background '{bg.background_id}' ({bg.width}x{bg.height}) within {params.retry_budget} draws"
    )
