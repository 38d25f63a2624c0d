"""Corpus manifest, asset/background loading, and the seeded random streams every generator draws from."""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from errors import (
    DegenerateMaskError,
    DuplicateIdError,
    InvalidParameterError,
    ManifestError,
    ManifestFileMissingError,
    MalformedPolygonError,
    UnknownVocabularyError,
)
from geometry import PixelBox
from raster import BinaryMask, RasterImage, load_image, load_mask, load_rgba_asset, rasterize_polygon

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

POSTURES = ("standing", "sitting", "squatting", "bending_over", "lying_down")
SOURCES = ("real_cutout", "synthesized_pose")
ORIENTATIONS = (
    "front", "rear", "left", "right",
    "left_front", "right_front", "left_rear", "right_rear",
)
OCCLUDER_KINDS = ("car_front", "car_rear", "cube_obstacle")

_UINT64_MASK = (1 << 64) - 1


# ==================== MANIFEST ====================

@dataclass(frozen=True)
class AssetEntry:
    id: str
    image: str
    posture: str
    source: str = "real_cutout"
    mask: Optional[str] = None
    orientation: Optional[str] = None


@dataclass(frozen=True)
class OccluderEntry:
    kind: str
    polygon: Optional[Tuple[Tuple[float, float], ...]] = None
    mask: Optional[str] = None


@dataclass(frozen=True)
class BackgroundEntry:
    id: str
    image: str
    occluders: Tuple[OccluderEntry, ...] = ()
    freespace: Optional[str] = None


@dataclass(frozen=True)
class CorpusManifest:
    """Validated manifest; all file paths are relative to `root`."""
    schema_version: int
    assets: Tuple[AssetEntry, ...]
    backgrounds: Tuple[BackgroundEntry, ...]
    master_seed: int
    root: Path = field(default=Path("."), compare=False)

    def resolve(self, relative: str) -> Path:
        return self.root / relative


def _require(entry: dict, key: str, where: str):
    if key not in entry or entry[key] in (None, ""):
        raise ManifestError(f"{where}: missing required field '{key}'")
    return entry[key]


def _check_vocab(value: str, vocab: Sequence[str], what: str, where: str):
    if value not in vocab:
        raise UnknownVocabularyError(f"{where}: unknown {what} '{value}' (expected one of {', '.join(vocab)})")


def _check_file(root: Path, relative: str, where: str):
    if not (root / relative).is_file():
        raise ManifestFileMissingError(f"{where}: file not found: {root / relative}")


def _parse_polygon(raw, where: str) -> Tuple[Tuple[float, float], ...]:
    if not isinstance(raw, list) or len(raw) < 3:
        raise MalformedPolygonError(f"{where}: polygon needs at least 3 vertices")
    vertices = []
    for vertex in raw:
        if not isinstance(vertex, (list, tuple)) or len(vertex) != 2:
            raise MalformedPolygonError(f"{where}: vertex {vertex!r} is not an [x, y] pair")
        x, y = vertex
        if isinstance(x, bool) or isinstance(y, bool) or not all(isinstance(v, (int, float)) for v in (x, y)):
            raise MalformedPolygonError(f"{where}: vertex {vertex!r} has non-numeric coordinates")
        vertices.append((x, y))
    return tuple(vertices)


def _parse_seed(raw) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int) or not 0 <= raw <= _UINT64_MASK:
        raise ManifestError(f"master_seed must be an unsigned 64-bit integer, got {raw!r}")
    return raw


def parse_manifest(document: dict, root: Path) -> CorpusManifest:
    """Validate a manifest document; every invariant is checked eagerly."""
    version = document.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ManifestError(f"Unsupported schema_version {version} (expected {SCHEMA_VERSION})")

    assets = []
    seen = set()
    for i, raw in enumerate(document.get("assets", [])):
        where = f"assets[{i}]"
        asset_id = str(_require(raw, "id", where))
        where = f"asset '{asset_id}'"
        if asset_id in seen:
            raise DuplicateIdError(f"Duplicate asset id '{asset_id}'")
        seen.add(asset_id)

        image = _require(raw, "image", where)
        _check_file(root, image, where)
        mask = raw.get("mask")
        if mask:
            _check_file(root, mask, where)
        posture = _require(raw, "posture", where)
        _check_vocab(posture, POSTURES, "posture", where)
        source = raw.get("source", "real_cutout")
        _check_vocab(source, SOURCES, "source", where)
        orientation = raw.get("orientation")
        if orientation is not None:
            _check_vocab(orientation, ORIENTATIONS, "orientation", where)
        assets.append(AssetEntry(asset_id, image, posture, source, mask or None, orientation))

    backgrounds = []
    seen = set()
    for i, raw in enumerate(document.get("backgrounds", [])):
        where = f"backgrounds[{i}]"
        bg_id = str(_require(raw, "id", where))
        where = f"background '{bg_id}'"
        if bg_id in seen:
            raise DuplicateIdError(f"Duplicate background id '{bg_id}'")
        seen.add(bg_id)

        image = _require(raw, "image", where)
        _check_file(root, image, where)
        occluders = []
        for j, occ in enumerate(raw.get("occluders", [])):
            occ_where = f"{where} occluder {j}"
            kind = _require(occ, "kind", occ_where)
            _check_vocab(kind, OCCLUDER_KINDS, "occluder kind", occ_where)
            polygon = occ.get("polygon")
            mask = occ.get("mask")
            if (polygon is None) == (mask is None):
                raise ManifestError(f"{occ_where}: exactly one of 'polygon' or 'mask' is required")
            if mask is not None:
                _check_file(root, mask, occ_where)
                occluders.append(OccluderEntry(kind, mask=mask))
            else:
                occluders.append(OccluderEntry(kind, polygon=_parse_polygon(polygon, occ_where)))
        freespace = raw.get("freespace")
        if freespace:
            _check_file(root, freespace, where)
        backgrounds.append(BackgroundEntry(bg_id, image, tuple(occluders), freespace or None))

    return CorpusManifest(
        schema_version=version,
        assets=tuple(assets),
        backgrounds=tuple(backgrounds),
        master_seed=_parse_seed(document.get("master_seed", 0)),
        root=root,
    )


def load_manifest(path) -> CorpusManifest:
    """Load and validate a manifest JSON file.

    Raises:
        ManifestFileMissingError: manifest or a referenced file is missing
        DuplicateIdError, MalformedPolygonError, UnknownVocabularyError: invalid entries
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestFileMissingError(f"Manifest not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"Manifest {path} is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise ManifestError(f"Manifest {path} must be a JSON object")
    manifest = parse_manifest(document, path.parent)
    logger.info(
        f"Loaded manifest {path}: {len(manifest.assets)} assets, "
        f"{len(manifest.backgrounds)} backgrounds, seed {manifest.master_seed}"
    )
    return manifest


def manifest_to_dict(manifest: CorpusManifest) -> dict:
    assets = []
    for a in manifest.assets:
        entry = {"id": a.id, "image": a.image, "posture": a.posture, "source": a.source}
        if a.mask:
            entry["mask"] = a.mask
        if a.orientation:
            entry["orientation"] = a.orientation
        assets.append(entry)
    backgrounds = []
    for b in manifest.backgrounds:
        occluders = []
        for o in b.occluders:
            occ = {"kind": o.kind}
            if o.polygon is not None:
                occ["polygon"] = [list(v) for v in o.polygon]
            else:
                occ["mask"] = o.mask
            occluders.append(occ)
        entry = {"id": b.id, "image": b.image, "occluders": occluders}
        if b.freespace:
            entry["freespace"] = b.freespace
        backgrounds.append(entry)
    return {
        "schema_version": manifest.schema_version,
        "master_seed": manifest.master_seed,
        "assets": assets,
        "backgrounds": backgrounds,
    }


def save_manifest(manifest: CorpusManifest, path):
    path = Path(path)
    path.write_text(json.dumps(manifest_to_dict(manifest), indent=2) + "\n", encoding="utf-8")


# ==================== LOADED CORPUS ====================

@dataclass(frozen=True, eq=False)
class PedestrianAsset:
    """A cut-out pedestrian cropped to the tight box of its mask."""
    asset_id: str
    pixels: RasterImage
    mask: BinaryMask
    box: PixelBox
    posture: str
    source: str = "real_cutout"
    orientation: Optional[str] = None

    def __post_init__(self):
        if self.mask.is_empty():
            raise DegenerateMaskError(f"Asset '{self.asset_id}' has an empty mask")
        if self.mask.tight_box() != self.box:
            raise InvalidParameterError(f"Asset '{self.asset_id}' box {self.box} is not the tight box of its mask")
        if (self.pixels.width, self.pixels.height) != (self.mask.width, self.mask.height):
            raise InvalidParameterError(f"Asset '{self.asset_id}' pixels and mask sizes differ")
        _check_vocab(self.posture, POSTURES, "posture", f"asset '{self.asset_id}'")
        _check_vocab(self.source, SOURCES, "source", f"asset '{self.asset_id}'")

    @classmethod
    def from_cutout(cls, asset_id: str, pixels: RasterImage, mask: BinaryMask, posture: str,
                    source: str = "real_cutout", orientation: Optional[str] = None) -> "PedestrianAsset":
        """Crop a full cut-out to its tight box."""
        if mask.is_empty():
            raise DegenerateMaskError(f"Asset '{asset_id}' has an empty mask")
        box = mask.tight_box()
        cropped = mask.crop(box)
        return cls(asset_id, pixels.crop(box), cropped, cropped.tight_box(), posture, source, orientation)


@dataclass(frozen=True, eq=False)
class OccluderRegion:
    kind: str
    mask: BinaryMask
    box: PixelBox


@dataclass(frozen=True, eq=False)
class SceneBackground:
    background_id: str
    pixels: RasterImage
    occluders: Tuple[OccluderRegion, ...] = ()
    freespace: Optional[BinaryMask] = None

    def __post_init__(self):
        for occ in self.occluders:
            _check_vocab(occ.kind, OCCLUDER_KINDS, "occluder kind", f"background '{self.background_id}'")
            if (occ.mask.width, occ.mask.height) != (self.pixels.width, self.pixels.height):
                raise InvalidParameterError(f"Background '{self.background_id}': occluder mask size differs")
            if occ.mask.tight_box() != occ.box:
                raise InvalidParameterError(f"Background '{self.background_id}': occluder box is not tight")
        if self.freespace is not None and (self.freespace.width, self.freespace.height) != (
            self.pixels.width, self.pixels.height
        ):
            raise InvalidParameterError(f"Background '{self.background_id}': freespace size differs")

    @property
    def width(self) -> int:
        return self.pixels.width

    @property
    def height(self) -> int:
        return self.pixels.height


@dataclass(frozen=True, eq=False)
class Corpus:
    manifest: CorpusManifest
    assets: Tuple[PedestrianAsset, ...]
    backgrounds: Tuple[SceneBackground, ...]

    def asset_pool(self, preferred_source: Optional[str] = None) -> Tuple[PedestrianAsset, ...]:
        """Assets of the preferred source, or every asset when none match."""
        if preferred_source is None:
            return self.assets
        preferred = tuple(a for a in self.assets if a.source == preferred_source)
        return preferred or self.assets


def load_asset(manifest: CorpusManifest, entry: AssetEntry) -> PedestrianAsset:
    mask_path = manifest.resolve(entry.mask) if entry.mask else None
    pixels, mask = load_rgba_asset(manifest.resolve(entry.image), mask_path)
    return PedestrianAsset.from_cutout(entry.id, pixels, mask, entry.posture, entry.source, entry.orientation)


def load_background(manifest: CorpusManifest, entry: BackgroundEntry) -> SceneBackground:
    pixels = load_image(manifest.resolve(entry.image))
    occluders = []
    for j, occ in enumerate(entry.occluders):
        if occ.polygon is not None:
            mask = rasterize_polygon(occ.polygon, pixels.width, pixels.height)
        else:
            mask = load_mask(manifest.resolve(occ.mask))
        if mask.is_empty():
            raise DegenerateMaskError(f"Background '{entry.id}' occluder {j} covers no pixel")
        occluders.append(OccluderRegion(occ.kind, mask, mask.tight_box()))
    freespace = load_mask(manifest.resolve(entry.freespace)) if entry.freespace else None
    return SceneBackground(entry.id, pixels, tuple(occluders), freespace)


def load_corpus(manifest: CorpusManifest) -> Corpus:
    """Decode every asset and background referenced by the manifest."""
    assets = tuple(load_asset(manifest, e) for e in manifest.assets)
    backgrounds = tuple(load_background(manifest, e) for e in manifest.backgrounds)
    logger.info(f"Corpus decoded: {len(assets)} assets, {len(backgrounds)} backgrounds")
    return Corpus(manifest, assets, backgrounds)


# ==================== RANDOM STREAMS ====================

def _derive_key(seed: int, *parts) -> int:
    """128-bit Philox key from BLAKE2b over the seed and a label path."""
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed & _UINT64_MASK).to_bytes(8, "little"))
    for part in parts:
        data = str(part).encode("utf-8")
        h.update(len(data).to_bytes(4, "little"))
        h.update(data)
    return int.from_bytes(h.digest(), "little")


def stream_rng(seed: int, stream_label: str) -> np.random.Generator:
    """Named stream: Philox4x64 keyed by BLAKE2b(seed, label)."""
    return np.random.Generator(np.random.Philox(key=_derive_key(seed, "stream", stream_label)))


def record_rng(master_seed: int, record_index: int) -> np.random.Generator:
    """Sole randomness source for one record, independent of every other index."""
    return np.random.Generator(np.random.Philox(key=_derive_key(master_seed, "record", record_index)))


def seeded_shuffle(items: Sequence, seed: int, stream_label: str) -> list:
    """Fisher-Yates permutation that depends only on (seed, label, len(items))."""
    items = list(items)
    if len(items) < 2:
        return items
    order = stream_rng(seed, stream_label).permutation(len(items))
    return [items[i] for i in order]


def randint(rng: np.random.Generator, low: int, high: int) -> int:
    """Uniform integer on the inclusive range [low, high]."""
    if high < low:
        raise InvalidParameterError(f"Empty integer range [{low}, {high}]")
    return int(rng.integers(low, high, endpoint=True))

