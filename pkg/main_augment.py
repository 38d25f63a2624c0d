"""Command-line entry point: prepare-masks, gen, split, stats and eval."""
import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence

from PIL import Image

from annotate import load_labels, split, stats, format_stats_table, write_json_atomic, SplitAssignment
from config import Config, RunConfig, MODES
from copy_paste import CopyPasteParams
from corpus import load_manifest
from database import Database
from errors import (
    AugmentError,
    ConfigError,
    DegenerateMaskError,
    InvalidParameterError,
    ManifestError,
    UndefinedMetricError,
)
from evalkit import DEFAULT_IOU_THRESHOLD, DEFAULT_MAX_DETS, evaluate, format_report_table, load_detections
from generation_runner import GenerationPlan, GenerationRunner
from oda import OdaParams
from pda import PdaParams
from raster import StructuringElement, clean_mask, load_rgba_asset, save_rgba

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NO_SUCCESS = 4
EXIT_UNDEFINED_METRIC = 5

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
MASK_SUFFIX = "_mask"


# ==================== LOGGING ====================

class JsonFormatter(logging.Formatter):
    """One JSON object per line: ts, level, logger, event plus any `fields` extra."""

    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "event": record.getMessage(),
        }
        entry.update(getattr(record, "fields", {}) or {})
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


class TextFormatter(logging.Formatter):
    def __init__(self):
        super().__init__('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    def format(self, record: logging.LogRecord) -> str:
        text = super().format(record)
        fields = getattr(record, "fields", None)
        if fields:
            text += " " + " ".join(f"{k}={v}" for k, v in fields.items())
        return text


def configure_logging(level: str, fmt: str):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter() if fmt == "json" else TextFormatter())
    handler.set_name("augment")
    root = logging.getLogger()
    # Replace only our own handler so repeated calls never stack output.
    for old in [h for h in root.handlers if h.get_name() == "augment"]:
        root.removeHandler(old)
    root.addHandler(handler)
    root.setLevel(level.upper())


# ==================== SUBCOMMANDS ====================

def _raw_asset_files(input_dir: Path) -> List[Path]:
    return sorted(
        p for p in input_dir.iterdir()
        if p.suffix.lower() in IMAGE_SUFFIXES and not p.stem.endswith(MASK_SUFFIX)
    )


def _mask_partner(path: Path) -> Optional[Path]:
    partner = path.with_name(f"{path.stem}{MASK_SUFFIX}.png")
    return partner if partner.exists() else None


def cmd_prepare_masks(args) -> int:
    """Clean raw cut-out masks with OPEN then ERODE and write RGBA assets."""
    input_dir, out_dir = Path(args.input), Path(args.out)
    if not input_dir.is_dir():
        raise ConfigError(f"Input directory not found: {input_dir}")
    element = StructuringElement(args.element_side)
    out_dir.mkdir(parents=True, exist_ok=True)

    files = _raw_asset_files(input_dir)
    cleaned, excluded, errors, entries = [], [], [], []
    for path in files:
        try:
            pixels, mask = load_rgba_asset(path, _mask_partner(path))
            mask = clean_mask(mask, element)
            if mask.is_empty():
                raise DegenerateMaskError("mask is empty after cleanup")
        except DegenerateMaskError as e:
            excluded.append({"file": path.name, "reason": str(e)})
            logger.warning("asset_excluded", extra={"fields": {"file": path.name, "reason": str(e)}})
            continue
        except (OSError, Image.DecompressionBombError, AugmentError) as e:
            errors.append({"file": path.name, "error": f"{type(e).__name__}: {e}"})
            logger.error("asset_unreadable", extra={"fields": {"file": path.name, "error": type(e).__name__}})
            continue

        out_name = f"{path.stem}.png"
        save_rgba(pixels, mask, out_dir / out_name)
        cleaned.append(out_name)
        entries.append({"id": path.stem, "image": out_name, "posture": args.posture, "source": args.source})

    report = {
        "input": len(files),
        "cleaned": len(cleaned),
        "excluded": excluded,
        "errors": errors,
        "element_side": element.side,
    }
    write_json_atomic(out_dir / "prepare_report.json", report)
    write_json_atomic(out_dir / "prepared_assets.json", {"assets": entries})

    print(f"prepared {len(cleaned)} of {len(files)} assets "
          f"({len(excluded)} excluded, {len(errors)} errors) -> {out_dir}")
    if files and len(errors) == len(files):
        logger.error("prepare_failed", extra={"fields": {"input": len(files)}})
        return EXIT_IO
    return EXIT_OK


def _given(**values) -> dict:
    return {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items() if v is not None}


def build_run_config(args) -> RunConfig:
    """Flags win over the environment, which wins over the manifest and built-ins."""
    element = StructuringElement(args.element_side) if args.element_side and args.element_side > 1 else None
    oda = OdaParams(element=element, **_given(
        max_occluders=args.max_occluders, band=args.band, retry_budget=args.oda_retries,
    ))
    pda = PdaParams(**_given(
        scale_range=args.scale_range, min_coverage=args.min_coverage,
        per_record=args.per_record, retry_budget=args.pda_retries,
    ))
    copy_paste = CopyPasteParams(**_given(retry_budget=args.copy_paste_retries))
    return RunConfig(
        manifest_path=Path(args.manifest),
        out_dir=Path(args.out),
        count=args.count,
        seed=args.seed if args.seed is not None else Config.SEED,
        mode=args.mode,
        mix_ratio=args.mix_ratio,
        workers=args.workers if args.workers is not None else Config.WORKERS,
        save_masks=args.save_masks or Config.SAVE_MASKS,
        progress=not args.no_progress,
        oda=oda,
        pda=pda,
        copy_paste=copy_paste,
        ledger_name=Config.LEDGER_NAME,
    )


def cmd_generate(args) -> int:
    run_config = build_run_config(args)
    run_config.validate()

    manifest = load_manifest(run_config.manifest_path)
    seed = run_config.seed if run_config.seed is not None else manifest.master_seed
    plan = GenerationPlan(
        manifest_path=run_config.manifest_path,
        out_dir=run_config.out_dir,
        seed=seed,
        count=run_config.count,
        mode=run_config.mode,
        mix_ratio=run_config.mix_ratio,
        oda=run_config.oda,
        pda=run_config.pda,
        copy_paste=run_config.copy_paste,
        save_masks=run_config.save_masks,
    )
    runner = GenerationRunner(plan, workers=run_config.workers, progress=run_config.progress,
                              ledger_name=run_config.ledger_name)
    summary = runner.run()
    print(summary.format())

    if summary.total_succeeded == 0:
        logger.error("generation_failed", extra={"fields": {"failure_reasons": summary.failure_reasons}})
        return EXIT_NO_SUCCESS
    return EXIT_OK


def _record_ids(images: Sequence[dict], labels) -> list:
    if images:
        return [image["id"] for image in images]
    return sorted({label.image_id for label in labels})


def cmd_split(args) -> int:
    labels_path = Path(args.labels)
    images, labels = load_labels(labels_path)
    seed = args.seed if args.seed is not None else (Config.SEED if Config.SEED is not None else 0)
    assignment = split(_record_ids(images, labels), seed)

    out_path = Path(args.out) if args.out else labels_path.with_name("split.json")
    write_json_atomic(out_path, assignment.to_dict())
    print(f"train {len(assignment.train)}  val {len(assignment.val)}  test {len(assignment.test)} -> {out_path}")
    return EXIT_OK


def cmd_stats(args) -> int:
    labels_path = Path(args.labels)
    _, labels = load_labels(labels_path)

    assignment = None
    if args.split:
        with open(args.split, encoding="utf-8") as f:
            assignment = SplitAssignment.from_dict(json.load(f))
    table = stats(labels, assignment)

    ledger_path = labels_path.with_name(Config.LEDGER_NAME)
    if ledger_path.exists():
        ledger = Database(ledger_path)
        try:
            table.failure_reasons = ledger.failure_reasons()
        finally:
            ledger.close()

    print(format_stats_table(table))
    out_path = Path(args.out) if args.out else labels_path.with_name("stats.json")
    write_json_atomic(out_path, table.to_dict())
    return EXIT_OK


def cmd_eval(args) -> int:
    detections = load_detections(args.detections)
    _, ground_truth = load_labels(args.labels)
    report = evaluate(detections, ground_truth, iou_threshold=args.iou, max_dets=args.max_dets)
    print(format_report_table(report))
    if args.out:
        write_json_atomic(args.out, report.to_dict())
    return EXIT_OK


# ==================== PARSER ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="augment",
        description="Occlusion and posture augmentation for pedestrian detection datasets",
    )
    parser.add_argument("--log-level", type=str.upper, choices=("DEBUG", "INFO", "WARNING", "ERROR"), default=None,
                        help="log level (env AUGMENT_LOG_LEVEL)")
    parser.add_argument("--log-format", choices=("json", "text"), default=None,
                        help="log line format (env AUGMENT_LOG_FORMAT)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-masks", help="clean raw cut-out masks with OPEN then ERODE")
    p.add_argument("--input", required=True, help="directory of RGBA cut-outs or image + <stem>_mask.png pairs")
    p.add_argument("--out", required=True, help="directory for cleaned RGBA assets and the report")
    p.add_argument("--element-side", type=int, default=3, help="odd side of the square structuring element")
    p.add_argument("--posture", default="standing", help="posture written to prepared_assets.json")
    p.add_argument("--source", default="real_cutout", help="source written to prepared_assets.json")
    p.set_defaults(handler=cmd_prepare_masks)

    p = sub.add_parser("gen", help="generate synthetic records")
    p.add_argument("--manifest", required=True, help="corpus manifest JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, required=True, help="number of records to attempt")
    p.add_argument("--seed", type=int, default=None, help="master seed (env AUGMENT_SEED, then manifest)")
    p.add_argument("--mode", choices=MODES, default="mixed", help="generator selection")
    p.add_argument("--mix-ratio", type=float, default=0.5, help="probability of ODA per record in mixed mode")
    p.add_argument("--workers", type=int, default=None, help="worker processes (env AUGMENT_WORKERS)")
    p.add_argument("--element-side", type=int, default=None,
                   help="open carved visible masks with this element to drop slivers")
    p.add_argument("--max-occluders", type=int, default=None, help="ODA: most occluders used per record")
    p.add_argument("--band", type=float, nargs=2, metavar=("LO", "HI"), default=None,
                   help="ODA: offset band above the occluder top, as fractions of its height")
    p.add_argument("--oda-retries", type=int, default=None, help="ODA: placement attempts per occluder")
    p.add_argument("--scale-range", type=float, nargs=2, metavar=("LO", "HI"), default=None,
                   help="PDA: limited rescale multipliers")
    p.add_argument("--min-coverage", type=float, default=None,
                   help="PDA: share of the feet row that must rest on freespace")
    p.add_argument("--per-record", type=int, default=None, help="PDA: pedestrians per record")
    p.add_argument("--pda-retries", type=int, default=None, help="PDA: attempts per pedestrian")
    p.add_argument("--copy-paste-retries", type=int, default=None, help="copy-paste: asset draws per record")
    p.add_argument("--save-masks", action="store_true", help="also write visible, placed and full masks per label")
    p.add_argument("--no-progress", action="store_true", help="hide the progress bar")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("split", help="assign records to train/val/test at 5:3:2")
    p.add_argument("--labels", required=True, help="labels.json")
    p.add_argument("--seed", type=int, default=None, help="split seed (env AUGMENT_SEED, default 0)")
    p.add_argument("--out", default=None, help="split JSON path (default: split.json next to the labels)")
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("stats", help="count labels by generator, occluder, posture, bucket and split")
    p.add_argument("--labels", required=True, help="labels.json")
    p.add_argument("--split", default=None, help="split JSON from the split command")
    p.add_argument("--out", default=None, help="stats JSON path (default: stats.json next to the labels)")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("eval", help="score detections with AP and AR at a strict IoU")
    p.add_argument("--detections", required=True, help="JSON array of {image_id, bbox, score}")
    p.add_argument("--labels", required=True, help="ground-truth labels.json")
    p.add_argument("--iou", type=float, default=DEFAULT_IOU_THRESHOLD, help="IoU threshold")
    p.add_argument("--max-dets", type=int, default=DEFAULT_MAX_DETS, help="detections per image for AR")
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(handler=cmd_eval)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)

    try:
        Config.validate()
    except ConfigError as e:
        configure_logging("INFO", "text")
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    configure_logging(args.log_level or Config.LOG_LEVEL, args.log_format or Config.LOG_FORMAT)

    try:
        return args.handler(args)
    except (ConfigError, ManifestError, InvalidParameterError) as e:
        logger.error("config_error", extra={"fields": {"error": type(e).__name__, "detail": str(e)}})
        return EXIT_CONFIG
    except UndefinedMetricError as e:
        logger.error("undefined_metric", extra={"fields": {"detail": str(e)}})
        return EXIT_UNDEFINED_METRIC
    except (OSError, json.JSONDecodeError) as e:
        logger.error("io_error", extra={"fields": {"error": type(e).__name__, "detail": str(e)}})
        return EXIT_IO
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_UNEXPECTED
    except Exception as e:
        logger.exception("unexpected_error", extra={"fields": {"error": type(e).__name__}})
        return EXIT_UNEXPECTED


if __name__ == '__main__':
    sys.exit(main())
