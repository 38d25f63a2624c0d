"""Setup script that draws a small procedural corpus and its manifest.

Backgrounds are parking-lot like scenes with car fronts, car rears and cube
obstacles annotated as polygons, plus a freespace mask over the open ground.
Assets are silhouette cut-outs in every posture.
"""
import argparse
import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np
from PIL import Image, ImageDraw

from annotate import write_json_atomic
from corpus import ORIENTATIONS, POSTURES, SCHEMA_VERSION

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Height/width of each silhouette relative to a standing pedestrian.
POSTURE_SHAPES = {
    "standing": (1.0, 0.4),
    "sitting": (0.7, 0.45),
    "squatting": (0.6, 0.5),
    "bending_over": (0.75, 0.6),
    "lying_down": (0.35, 1.0),
}
OCCLUDER_LAYOUT = ("car_front", "car_rear", "cube_obstacle")


def _color(rng: np.random.Generator, lo: int = 30, hi: int = 230) -> Tuple[int, int, int]:
    return tuple(int(c) for c in rng.integers(lo, hi, size=3))


def draw_pedestrian(posture: str, standing_height: int, rng: np.random.Generator) -> Image.Image:
    """RGBA silhouette with a hard alpha; transparent margin of 2 pixels."""
    rel_h, rel_w = POSTURE_SHAPES[posture]
    h = max(6, round(standing_height * rel_h))
    w = max(4, round(standing_height * rel_w))
    img = Image.new("RGBA", (w + 4, h + 4), (0, 0, 0, 0))
    draw = ImageDraw.Draw(img)
    skin, shirt, trousers = (224, 172, 105, 255), _color(rng) + (255,), _color(rng, 10, 120) + (255,)
    x0, y0 = 2, 2

    if posture == "lying_down":
        head = h - 1
        draw.ellipse([x0, y0, x0 + head, y0 + head], fill=skin)
        draw.rectangle([x0 + head, y0 + h // 6, x0 + w * 3 // 5, y0 + h - h // 6], fill=shirt)
        draw.rectangle([x0 + w * 3 // 5, y0 + h // 4, x0 + w - 1, y0 + h - h // 4], fill=trousers)
        return img

    head = max(3, w // 2)
    cx = x0 + w // 2
    draw.ellipse([cx - head // 2, y0, cx + head // 2, y0 + head], fill=skin)
    torso_top = y0 + head
    torso_bottom = y0 + head + (h - head) // 2
    draw.rectangle([x0, torso_top, x0 + w - 1, torso_bottom], fill=shirt)
    if posture == "bending_over":
        draw.rectangle([x0 + w // 3, torso_bottom, x0 + w - 1, y0 + h - 1], fill=trousers)
    else:
        draw.rectangle([x0 + w // 8, torso_bottom, x0 + w // 2 - 1, y0 + h - 1], fill=trousers)
        draw.rectangle([x0 + w // 2 + 1, torso_bottom, x0 + w - 1 - w // 8, y0 + h - 1], fill=trousers)
    return img


def occluder_polygon(kind: str, x1: int, y1: int, x2: int, y2: int) -> List[List[int]]:
    w, h = x2 - x1, y2 - y1
    if kind == "car_front":
        # Hood slopes down from the windshield.
        return [[x1 + w // 6, y1], [x2 - w // 6, y1], [x2, y1 + h * 2 // 5], [x2, y2], [x1, y2], [x1, y1 + h * 2 // 5]]
    if kind == "car_rear":
        return [[x1 + w // 5, y1], [x2 - w // 5, y1], [x2, y1 + h // 3], [x2, y2], [x1, y2], [x1, y1 + h // 3]]
    return [[x1, y1], [x2, y1], [x2, y2], [x1, y2]]


def draw_background(width: int, height: int, rng: np.random.Generator):
    """Scene image, occluder polygons and the freespace mask."""
    horizon = height // 2
    sky = np.linspace(200, 140, horizon, dtype=np.float64)[:, None]
    pixels = np.zeros((height, width, 3), dtype=np.uint8)
    pixels[:horizon] = np.stack([sky * 0.6, sky * 0.8, sky], axis=-1).astype(np.uint8).repeat(width, axis=1)
    ground = rng.integers(95, 115, size=(height - horizon, width, 1)).astype(np.uint8)
    pixels[horizon:] = ground.repeat(3, axis=2)

    img = Image.fromarray(pixels)
    draw = ImageDraw.Draw(img)
    freespace = Image.new("L", (width, height), 0)
    ImageDraw.Draw(freespace).rectangle([0, horizon, width - 1, height - 1], fill=255)
    fs_draw = ImageDraw.Draw(freespace)

    slot = width // len(OCCLUDER_LAYOUT)
    car_h = max(8, height // 4)
    occluders = []
    for j, kind in enumerate(OCCLUDER_LAYOUT):
        car_w = max(car_h, slot * 2 // 3) if kind != "cube_obstacle" else car_h
        x1 = j * slot + int(rng.integers(0, max(1, slot - car_w)))
        y1 = horizon - car_h // 3 + int(rng.integers(0, max(1, car_h // 4)))
        polygon = occluder_polygon(kind, x1, y1, x1 + car_w, y1 + car_h)
        draw.polygon([tuple(v) for v in polygon], fill=_color(rng))
        fs_draw.polygon([tuple(v) for v in polygon], fill=0)
        occluders.append({"kind": kind, "polygon": polygon})
    return img, occluders, freespace


def build_demo_corpus(out_dir, n_assets: int = 10, n_backgrounds: int = 3, seed: int = 0,
                      size: Tuple[int, int] = (160, 96), master_seed: int = 7) -> Path:
    """Draw the corpus under out_dir and return the manifest path.

    Args:
        out_dir: Target directory, created if needed
        n_assets: Pedestrian cut-outs; postures cycle so every posture appears once n_assets >= 5
        n_backgrounds: Scenes, each with one occluder of every kind
        seed: Drawing seed
        size: Background (width, height)
        master_seed: Seed written into the manifest
    """
    out_dir = Path(out_dir)
    (out_dir / "assets").mkdir(parents=True, exist_ok=True)
    (out_dir / "backgrounds").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    width, height = size
    standing_height = max(12, height * 2 // 5)

    assets = []
    for i in range(n_assets):
        posture = POSTURES[i % len(POSTURES)]
        asset_id = f"ped_{i:03d}"
        draw_pedestrian(posture, standing_height, rng).save(out_dir / "assets" / f"{asset_id}.png")
        assets.append({
            "id": asset_id,
            "image": f"assets/{asset_id}.png",
            "posture": posture,
            "source": "real_cutout" if posture == "standing" else "synthesized_pose",
            "orientation": ORIENTATIONS[i % len(ORIENTATIONS)],
        })

    backgrounds = []
    for i in range(n_backgrounds):
        bg_id = f"scene_{i:03d}"
        img, occluders, freespace = draw_background(width, height, rng)
        img.save(out_dir / "backgrounds" / f"{bg_id}.png")
        freespace.save(out_dir / "backgrounds" / f"{bg_id}_freespace.png")
        backgrounds.append({
            "id": bg_id,
            "image": f"backgrounds/{bg_id}.png",
            "occluders": occluders,
            "freespace": f"backgrounds/{bg_id}_freespace.png",
        })

    manifest_path = out_dir / "manifest.json"
    write_json_atomic(manifest_path, {
        "schema_version": SCHEMA_VERSION,
        "master_seed": master_seed,
        "assets": assets,
        "backgrounds": backgrounds,
    })
    logger.info(f"✓ Demo corpus with {n_assets} assets and {n_backgrounds} backgrounds at {out_dir}")
    return manifest_path


def main():
    parser = argparse.ArgumentParser(description="Draw a procedural demo corpus")
    parser.add_argument("--out", default="demo_corpus", help="output directory")
    parser.add_argument("--assets", type=int, default=10, help="number of pedestrian cut-outs")
    parser.add_argument("--backgrounds", type=int, default=3, help="number of scenes")
    parser.add_argument("--seed", type=int, default=0, help="drawing seed")
    parser.add_argument("--width", type=int, default=640, help="scene width")
    parser.add_argument("--height", type=int, default=290, help="scene height")
    args = parser.parse_args()

    manifest = build_demo_corpus(args.out, args.assets, args.backgrounds, args.seed, (args.width, args.height))
    print(f"Manifest written to {manifest}")


if __name__ == "__main__":
    main()
