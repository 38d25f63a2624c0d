import json
import logging
import os
import time

import pytest

from annotate import Generator, load_labels
from conftest import make_asset, make_background
from corpus import record_rng, stream_rng
from database import Database
from errors import AugmentError
from generation_runner import (
    GenerationPlan,
    GenerationRunner,
    RecordFactory,
    mask_file_names,
    verify_record,
    verify_saved_record,
    write_record,
)
from geometry import bucket_of, occlusion_rate
from oda import OdaParams, generate_oda
from raster import load_mask, save_mask
from setup_demo_corpus import build_demo_corpus


def _plan(manifest_path, out_dir, count=12, **kwargs):
    return GenerationPlan(manifest_path=manifest_path, out_dir=out_dir, seed=kwargs.pop("seed", 7),
                          count=count, **kwargs)


def _output_bytes(out_dir):
    files = {}
    for root, _, names in os.walk(out_dir):
        for name in names:
            if name.startswith("ledger"):
                continue
            path = os.path.join(root, name)
            with open(path, "rb") as f:
                files[os.path.relpath(path, out_dir)] = f.read()
    return files


def test_runs_are_byte_identical_across_reruns_and_workers(demo_manifest_path, tmp_path):
    outputs = []
    for name, workers in (("a", 1), ("b", 1), ("c", 2)):
        plan = _plan(demo_manifest_path, tmp_path / name, count=16)
        GenerationRunner(plan, workers=workers, progress=False).run()
        outputs.append(_output_bytes(tmp_path / name))
    assert outputs[0] == outputs[1] == outputs[2]
    assert "labels.json" in outputs[0] and "records.json" in outputs[0]


def test_every_record_is_conserved_and_carved(demo_corpus, tmp_path):
    plan = _plan(demo_corpus.manifest.root / "manifest.json", tmp_path, count=40, mode="mixed")
    factory = RecordFactory(plan, demo_corpus)
    backgrounds = {bg.background_id: bg for bg in demo_corpus.backgrounds}
    built = 0
    for i in range(plan.count):
        try:
            generator, background_id, record = factory.build(i)
        except AugmentError:
            continue
        built += 1
        assert record.generator == generator
        assert verify_record(record, backgrounds[background_id]) == []
        for label in record.labels:
            assert label.image_id == i
    assert built > plan.count // 2


def test_saved_masks_verify_from_disk(demo_manifest_path, demo_corpus, tmp_path):
    plan = _plan(demo_manifest_path, tmp_path, count=10, save_masks=True)
    summary = GenerationRunner(plan, progress=False).run()
    assert summary.total_succeeded > 0
    images, labels = load_labels(tmp_path / "labels.json")
    backgrounds = {bg.background_id: bg for bg in demo_corpus.backgrounds}
    for image in images:
        own = [label for label in labels if label.image_id == image["id"]]
        bg = backgrounds[image["augment"]["background_id"]]
        assert verify_saved_record(tmp_path, image["id"], own, bg) == []


def test_generator_assignment_is_a_function_of_seed_and_index(demo_corpus, tmp_path):
    plan = _plan(demo_corpus.manifest.root / "manifest.json", tmp_path, count=400, mix_ratio=0.5)
    factory = RecordFactory(plan, demo_corpus)
    first = [factory.choose_generator(record_rng(plan.seed, i)) for i in range(plan.count)]
    again = [factory.choose_generator(record_rng(plan.seed, i)) for i in reversed(range(plan.count))]
    assert first == list(reversed(again))
    n_oda = sum(g == Generator.ODA for g in first)
    # Binomial(400, 0.5) stays within 4 standard deviations.
    assert 160 <= n_oda <= 240

    all_oda = RecordFactory(_plan(plan.manifest_path, tmp_path, mix_ratio=1.0), demo_corpus)
    assert {all_oda.choose_generator(record_rng(7, i)) for i in range(50)} == {Generator.ODA}
    all_pda = RecordFactory(_plan(plan.manifest_path, tmp_path, mix_ratio=0.0), demo_corpus)
    assert {all_pda.choose_generator(record_rng(7, i)) for i in range(50)} == {Generator.PDA}


def test_records_file_and_ledger(demo_manifest_path, tmp_path):
    plan = _plan(demo_manifest_path, tmp_path, count=8, mode="copy-paste")
    summary = GenerationRunner(plan, progress=False).run()
    records = json.loads((tmp_path / "records.json").read_text())
    assert [r["record_index"] for r in records["records"]] == list(range(8))
    assert summary.succeeded == {"copy_paste": 8}

    ledger = Database(tmp_path / "ledger.db")
    try:
        runs = ledger.get_runs()
        assert len(runs) == 1 and runs[0]["succeeded"] == 8 and runs[0]["finished_at"]
        assert len(ledger.get_records(runs[0]["id"])) == 8
        assert ledger.failure_reasons() == {}
    finally:
        ledger.close()


def test_zero_success_run_reports_reasons(demo_manifest_path, tmp_path, caplog):
    doc = json.loads(demo_manifest_path.read_text())
    root = demo_manifest_path.parent
    for asset in doc["assets"]:
        asset["image"] = str(root / asset["image"])
    for bg in doc["backgrounds"]:
        bg["image"] = str(root / bg["image"])
        bg["freespace"] = str(root / bg["freespace"])
        bg["occluders"] = []
    manifest = tmp_path / "no_occluders.json"
    manifest.write_text(json.dumps(doc))

    with caplog.at_level(logging.WARNING, logger="generation_runner"):
        summary = GenerationRunner(_plan(manifest, tmp_path / "out", count=5, mode="oda"), progress=False).run()
    assert summary.total_succeeded == 0
    assert summary.failure_reasons == {"NoOccludersError": 5}
    failed = [r for r in caplog.records if r.getMessage() == "record_failed"]
    assert len(failed) == 5
    assert failed[0].fields["reason"] == "NoOccludersError"

    ledger = Database(tmp_path / "out" / "ledger.db")
    try:
        assert ledger.failure_reasons() == {"NoOccludersError": 5}
    finally:
        ledger.close()


@pytest.mark.slow
def test_throughput_at_full_resolution(tmp_path):
    manifest = build_demo_corpus(tmp_path / "big", n_assets=10, n_backgrounds=4, seed=1, size=(1280, 580))
    plan = _plan(manifest, tmp_path / "out", count=1000)
    start = time.monotonic()
    summary = GenerationRunner(plan, workers=4, progress=False).run()
    assert time.monotonic() - start < 300
    assert summary.total_succeeded > 900


def test_saved_masks_recompute_bucket_when_clipped_at_top(tmp_path):
    # Pedestrians hang above an occluder two rows below the image top, so most rows are clipped.
    bg = make_background(occluder_boxes=[(20, 2, 70, 22)])
    asset = make_asset(10, 40)
    for seed in range(10):
        record = generate_oda(bg, [asset], OdaParams(), stream_rng(seed, "top"), seed, seed)
        write_record(tmp_path, record, save_masks=True)
        assert verify_saved_record(tmp_path, seed, record.labels, bg) == []

        visible_name, placed_name, full_name = mask_file_names(seed, 0)
        visible = load_mask(tmp_path / visible_name)
        placed = load_mask(tmp_path / placed_name)
        full = load_mask(tmp_path / full_name)
        assert placed.population < full.population
        assert record.labels[0].bucket == bucket_of(occlusion_rate(visible.population, full.population))

        # The clipped mask alone would understate the hidden share.
        save_mask(placed, tmp_path / full_name)
        assert verify_saved_record(tmp_path, seed, record.labels, bg) != []
