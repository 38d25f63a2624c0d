import os

import numpy as np
import pytest

from corpus import OccluderRegion, PedestrianAsset, SceneBackground, load_corpus, load_manifest
from raster import BinaryMask, RasterImage
from setup_demo_corpus import build_demo_corpus


def pytest_collection_modifyitems(config, items):
    if os.getenv("AUGMENT_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set AUGMENT_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def demo_manifest_path(tmp_path_factory):
    return build_demo_corpus(tmp_path_factory.mktemp("corpus"), n_assets=10, n_backgrounds=3, seed=0)


@pytest.fixture(scope="session")
def demo_corpus(demo_manifest_path):
    return load_corpus(load_manifest(demo_manifest_path))


def make_asset(width=10, height=40, asset_id="ped", posture="standing", color=200, source="real_cutout"):
    pixels = np.zeros((height, width, 3), dtype=np.uint8)
    pixels[:] = (color, color // 2, 255 - color)
    # Vary rows so misplaced pixels are detectable.
    pixels[:, :, 1] = np.arange(height, dtype=np.uint8)[:, None]
    return PedestrianAsset.from_cutout(
        asset_id, RasterImage(pixels), BinaryMask.full(width, height), posture, source
    )


def make_background(width=100, height=60, occluder_boxes=(), freespace_rows=None, bg_id="bg"):
    """Flat background with rectangular occluders and an optional freespace band of rows."""
    pixels = np.full((height, width, 3), 50, dtype=np.uint8)
    occluders = []
    for x1, y1, x2, y2 in occluder_boxes:
        bits = np.zeros((height, width), dtype=bool)
        bits[y1:y2, x1:x2] = True
        mask = BinaryMask(bits)
        occluders.append(OccluderRegion("car_front", mask, mask.tight_box()))
    freespace = None
    if freespace_rows is not None:
        bits = np.zeros((height, width), dtype=bool)
        bits[freespace_rows[0]:freespace_rows[1]] = True
        freespace = BinaryMask(bits)
    return SceneBackground(bg_id, RasterImage(pixels), tuple(occluders), freespace)
