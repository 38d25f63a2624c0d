"""Batch generation of synthetic records over a worker pool, with ledger and label output."""
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from annotate import Generator, PastedLayer, PseudoLabel, SyntheticRecord, write_json_atomic, write_labels
from copy_paste import CopyPasteParams, generate_copy_paste
from corpus import Corpus, SceneBackground, load_corpus, load_manifest, record_rng, seeded_shuffle
from database import Database
from errors import AugmentError, EmptyPoolError, MissingFreespaceError, NoOccludersError
from geometry import bucket_of, occlusion_rate
from oda import OdaParams, generate_oda
from pda import PdaParams, generate_pda
from raster import load_image, load_mask, save_image, save_mask

logger = logging.getLogger(__name__)

MODE_GENERATORS = {
    "oda": Generator.ODA,
    "pda": Generator.PDA,
    "copy-paste": Generator.COPY_PASTE,
}

# Asset source each generator prefers; None means the whole pool.
PREFERRED_SOURCE = {
    Generator.ODA: "real_cutout",
    Generator.PDA: "synthesized_pose",
    Generator.COPY_PASTE: None,
}


@dataclass(frozen=True)
class GenerationPlan:
    """Picklable description of a run, shipped to every worker."""
    manifest_path: Path
    out_dir: Path
    seed: int
    count: int
    mode: str = "mixed"
    mix_ratio: float = 0.5
    oda: OdaParams = field(default_factory=OdaParams)
    pda: PdaParams = field(default_factory=PdaParams)
    copy_paste: CopyPasteParams = field(default_factory=CopyPasteParams)
    save_masks: bool = False


@dataclass(frozen=True)
class RecordOutcome:
    record_index: int
    generator: str
    background_id: Optional[str]
    status: str
    reason: Optional[str] = None
    image_entry: Optional[dict] = None
    labels: Tuple[PseudoLabel, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "record_index": self.record_index,
            "generator": self.generator,
            "background_id": self.background_id,
            "status": self.status,
            "reason": self.reason,
            "label_count": len(self.labels),
        }


@dataclass
class GenerationSummary:
    seed: int
    count: int
    succeeded: Dict[str, int] = field(default_factory=dict)
    failed: Dict[str, int] = field(default_factory=dict)
    failure_reasons: Dict[str, int] = field(default_factory=dict)
    label_count: int = 0

    @property
    def total_succeeded(self) -> int:
        return sum(self.succeeded.values())

    @property
    def total_failed(self) -> int:
        return sum(self.failed.values())

    def format(self) -> str:
        lines = [f"{'generator':<14}{'succeeded':>11}{'failed':>9}"]
        for gen in sorted(set(self.succeeded) | set(self.failed)):
            lines.append(f"{gen:<14}{self.succeeded.get(gen, 0):>11}{self.failed.get(gen, 0):>9}")
        lines.append(f"{'total':<14}{self.total_succeeded:>11}{self.total_failed:>9}")
        if self.failure_reasons:
            lines.append("")
            lines.append("failure reasons")
            for reason, n in sorted(self.failure_reasons.items()):
                lines.append(f"  {reason:<30}{n:>6}")
        return "\n".join(lines)


class RecordFactory:
    """Builds the record of one index from (plan, index) alone."""

    def __init__(self, plan: GenerationPlan, corpus: Corpus):
        self.plan = plan
        self.corpus = corpus
        self._eligible = {
            Generator.ODA: [bg for bg in corpus.backgrounds if bg.occluders],
            Generator.PDA: [bg for bg in corpus.backgrounds if bg.freespace is not None],
            Generator.COPY_PASTE: list(corpus.backgrounds),
        }
        self._order = {
            gen: seeded_shuffle(bgs, plan.seed, f"{gen.value}/backgrounds")
            for gen, bgs in self._eligible.items()
        }

    def choose_generator(self, rng: np.random.Generator) -> Generator:
        """First draw of every record stream."""
        if self.plan.mode == "mixed":
            return Generator.ODA if rng.random() < self.plan.mix_ratio else Generator.PDA
        return MODE_GENERATORS[self.plan.mode]

    def background_for(self, generator: Generator, rng: np.random.Generator) -> SceneBackground:
        """Draw from the shuffled eligible backgrounds, with replacement across records."""
        order = self._order[generator]
        if not order:
            if generator == Generator.ODA:
                raise NoOccludersError("No background has occluder regions")
            if generator == Generator.PDA:
                raise MissingFreespaceError("No background has a freespace mask")
            raise EmptyPoolError("Corpus has no backgrounds")
        return order[int(rng.integers(len(order)))]

    def build(self, record_index: int) -> Tuple[Generator, Optional[str], SyntheticRecord]:
        rng = record_rng(self.plan.seed, record_index)
        generator = self.choose_generator(rng)
        try:
            bg = self.background_for(generator, rng)
            assets = self.corpus.asset_pool(PREFERRED_SOURCE[generator])
            if generator == Generator.ODA:
                record = generate_oda(bg, assets, self.plan.oda, rng, self.plan.seed, record_index)
            elif generator == Generator.PDA:
                record = generate_pda(bg, assets, self.plan.pda, rng, self.plan.seed, record_index)
            else:
                record = generate_copy_paste(bg, assets, self.plan.copy_paste, rng, self.plan.seed, record_index)
        except AugmentError as e:
            e.generator = generator
            raise
        return generator, bg.background_id, record

    def run(self, record_index: int) -> RecordOutcome:
        """Build, write and describe one record; failures become a failed outcome."""
        try:
            generator, background_id, record = self.build(record_index)
        except AugmentError as e:
            generator = getattr(e, "generator", None)
            reason = type(e).__name__
            logger.warning("record_failed", extra={"fields": {
                "record_index": record_index, "reason": reason, "detail": str(e),
            }})
            return RecordOutcome(record_index, generator.value if generator else "none", None, "failed", reason)

        image_entry = write_record(self.plan.out_dir, record, self.plan.save_masks)
        logger.debug("record_written", extra={"fields": {
            "record_index": record_index, "generator": generator.value, "labels": len(record.labels),
        }})
        return RecordOutcome(record_index, generator.value, background_id, "ok", None, image_entry, record.labels)


def image_file_name(record_index: int) -> str:
    return f"images/{record_index:06d}.png"


def mask_file_names(record_index: int, k: int) -> Tuple[str, str, str]:
    """Visible and clipped placed masks in image coordinates, full resized mask in local coordinates."""
    stem = f"masks/{record_index:06d}_{k}"
    return f"{stem}_visible.png", f"{stem}_placed.png", f"{stem}_full.png"


def write_record(out_dir: Path, record: SyntheticRecord, save_masks: bool = False) -> dict:
    """Write the composite (and debug masks); returns its COCO image entry."""
    out_dir = Path(out_dir)
    file_name = image_file_name(record.record_index)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    save_image(record.image, out_dir / file_name)
    if save_masks:
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)
        for k, layer in enumerate(record.layers):
            visible_name, placed_name, full_name = mask_file_names(record.record_index, k)
            save_mask(layer.visible, out_dir / visible_name)
            save_mask(layer.placed(record.image.width, record.image.height), out_dir / placed_name)
            save_mask(layer.mask, out_dir / full_name)
    return {
        "id": record.record_index,
        "file_name": file_name,
        "width": record.image.width,
        "height": record.image.height,
        "augment": {"generator": record.generator.value, "background_id": record.background_id},
    }


# Per-process state of pool workers.
_factory: Optional[RecordFactory] = None


def _init_worker(plan: GenerationPlan):
    global _factory
    _factory = RecordFactory(plan, load_corpus(load_manifest(plan.manifest_path)))


def _run_index(record_index: int) -> RecordOutcome:
    return _factory.run(record_index)


class GenerationRunner:
    """Runs indices 0..count-1, collects outcomes in index order and writes the dataset files."""

    def __init__(self, plan: GenerationPlan, workers: int = 1, progress: bool = True,
                 ledger_name: str = "ledger.db"):
        """Initialize the runner.

        Args:
            plan: What to generate and where
            workers: Process count; 1 runs in-process
            progress: Show a tqdm progress bar
            ledger_name: SQLite ledger file name inside the output directory
        """
        self.plan = plan
        self.workers = workers
        self.progress = progress
        self.ledger_name = ledger_name

    def _outcomes(self) -> List[RecordOutcome]:
        indices = range(self.plan.count)
        bar = dict(total=self.plan.count, desc="Generating", unit="rec", disable=not self.progress)
        if self.workers == 1:
            factory = RecordFactory(self.plan, load_corpus(load_manifest(self.plan.manifest_path)))
            return [factory.run(i) for i in tqdm(indices, **bar)]

        chunksize = max(1, self.plan.count // (self.workers * 8))
        with ProcessPoolExecutor(max_workers=self.workers, initializer=_init_worker,
                                 initargs=(self.plan,)) as pool:
            # map() yields in submission order, so outcomes stay index-ordered.
            return list(tqdm(pool.map(_run_index, indices, chunksize=chunksize), **bar))

    def run(self) -> GenerationSummary:
        out_dir = Path(self.plan.out_dir)
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        ledger = Database(out_dir / self.ledger_name)
        try:
            run_id = ledger.start_run(self.plan.seed, self.plan.count, self.plan.mode, self.workers,
                                      self.plan.mix_ratio if self.plan.mode == "mixed" else None)
            logger.info("generation_started", extra={"fields": {
                "seed": self.plan.seed, "count": self.plan.count, "mode": self.plan.mode, "workers": self.workers,
            }})

            outcomes = self._outcomes()
            summary = summarize(self.plan.seed, outcomes)

            images = [o.image_entry for o in outcomes if o.ok]
            labels = [label for o in outcomes for label in o.labels]
            write_labels(out_dir / "labels.json", images, labels)
            write_json_atomic(out_dir / "records.json", {
                "seed": self.plan.seed,
                "count": self.plan.count,
                "mode": self.plan.mode,
                "records": [o.to_dict() for o in outcomes],
            })

            ledger.add_records(run_id, [o.to_dict() for o in outcomes])
            ledger.finish_run(run_id, summary.total_succeeded, summary.total_failed)
        finally:
            ledger.close()

        logger.info("generation_finished", extra={"fields": {
            "succeeded": summary.total_succeeded, "failed": summary.total_failed,
            "labels": summary.label_count, "failure_reasons": summary.failure_reasons,
        }})
        return summary


def summarize(seed: int, outcomes: Sequence[RecordOutcome]) -> GenerationSummary:
    summary = GenerationSummary(seed=seed, count=len(outcomes))
    succeeded, failed, reasons = Counter(), Counter(), Counter()
    for o in outcomes:
        if o.ok:
            succeeded[o.generator] += 1
            summary.label_count += len(o.labels)
        else:
            failed[o.generator] += 1
            reasons[o.reason] += 1
    summary.succeeded = dict(succeeded)
    summary.failed = dict(failed)
    summary.failure_reasons = dict(reasons)
    return summary


# ==================== VERIFICATION ====================

def _later_visible(record: SyntheticRecord, width: int, height: int) -> List[np.ndarray]:
    """For each layer, the union of the visible masks of the layers pasted after it."""
    above = np.zeros((height, width), dtype=bool)
    unions = []
    for layer in reversed(record.layers):
        unions.append(above.copy())
        above |= layer.visible.bits
    return unions[::-1]


def verify_record(record: SyntheticRecord, bg: SceneBackground) -> List[str]:
    """Re-check fusion conservation, carving and label accounting of an in-memory record.

    Every placed pixel of a layer must be exactly one of: visible, under its
    occluder, under a later layer, or trimmed by cleanup.

    Returns:
        Problems found; empty when the record is consistent
    """
    problems = []
    image = record.image.pixels
    width, height = record.image.width, record.image.height

    union = np.zeros((height, width), dtype=bool)
    for layer in record.layers:
        union |= layer.visible.bits
    if not np.array_equal(image[~union], bg.pixels.pixels[~union]):
        problems.append("pixels outside visible masks differ from the background")

    later = _later_visible(record, width, height)
    for k, (layer, label) in enumerate(zip(record.layers, record.labels)):
        placed = layer.placed(width, height).bits
        visible = layer.visible.bits
        if (visible & ~placed).any():
            problems.append(f"layer {k}: visible pixels outside the placed mask")
        if (visible & later[k]).any():
            problems.append(f"layer {k}: visible pixels covered by a later layer")

        ys, xs = np.nonzero(visible)
        ox, oy = layer.offset
        if not np.array_equal(image[ys, xs], layer.pixels.pixels[ys - oy, xs - ox]):
            problems.append(f"layer {k}: visible pixels differ from the pasted asset")

        hidden = placed & later[k]
        if layer.occluder_index is not None:
            occluder = bg.occluders[layer.occluder_index].mask.bits
            if (visible & occluder).any():
                problems.append(f"layer {k}: visible pixels overlap the occluder")
            hidden = hidden | (placed & occluder)
        if layer.trimmed is not None:
            if (layer.trimmed.bits & visible).any():
                problems.append(f"layer {k}: trimmed pixels are still visible")
            hidden = hidden | layer.trimmed.bits
        if not np.array_equal(visible | hidden, placed):
            problems.append(f"layer {k}: visible and occluded pixels do not partition the placed mask")

        if record.generator == Generator.PDA:
            problems.extend(_freespace_problems(k, layer, bg))

        if label.box != layer.visible.tight_box():
            problems.append(f"layer {k}: label box is not the tight box of the visible mask")
        expected = bucket_of(occlusion_rate(layer.visible.population, layer.mask.population))
        if label.bucket != expected:
            problems.append(f"layer {k}: bucket {label.bucket.index} != recomputed {expected.index}")
    return problems


def _freespace_problems(k: int, layer: PastedLayer, bg: SceneBackground) -> List[str]:
    # The ground pixel sits right under the footprint's bottom-center column.
    if bg.freespace is None:
        return [f"layer {k}: posture layer on a background without freespace"]
    ox, oy = layer.offset
    gx, gy = ox + layer.mask.width // 2, oy + layer.mask.height
    if not (0 <= gx < bg.width and 0 <= gy < bg.height) or not bg.freespace.bits[gy, gx]:
        return [f"layer {k}: anchor ({gx}, {gy}) is not a freespace pixel"]
    return []


def verify_saved_record(out_dir: Path, record_index: int, labels: Sequence[PseudoLabel],
                        bg: SceneBackground) -> List[str]:
    """Same idea from files written with --save-masks.

    Buckets are recomputed from the saved visible mask and the saved full
    local mask, never from the stored rate.
    """
    out_dir = Path(out_dir)
    problems = []
    image = load_image(out_dir / image_file_name(record_index)).pixels
    union = np.zeros(image.shape[:2], dtype=bool)
    for k, label in enumerate(labels):
        visible_name, placed_name, full_name = mask_file_names(record_index, k)
        visible = load_mask(out_dir / visible_name)
        placed = load_mask(out_dir / placed_name)
        full = load_mask(out_dir / full_name)
        union |= visible.bits
        if (visible - placed).population:
            problems.append(f"mask {k}: visible pixels outside the placed mask")
        if placed.population > full.population:
            problems.append(f"mask {k}: placed mask is larger than the full mask")
        if not visible.is_empty() and visible.tight_box() != label.box:
            problems.append(f"mask {k}: label box is not the tight box of the saved visible mask")
        expected = bucket_of(occlusion_rate(visible.population, full.population))
        if expected != label.bucket:
            problems.append(f"mask {k}: bucket {label.bucket.index} != recomputed {expected.index}")
    if not np.array_equal(image[~union], bg.pixels.pixels[~union]):
        problems.append("pixels outside visible masks differ from the background")
    return problems
