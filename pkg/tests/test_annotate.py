import json

import numpy as np
import pytest

from annotate import (
    Generator,
    Provenance,
    PseudoLabel,
    SplitAssignment,
    annotation_to_label,
    estimate_occluded_box,
    format_stats_table,
    load_labels,
    split,
    stats,
    sub_dataset_of,
    to_pixels,
    write_labels,
)
from errors import InvalidDepthError, InvalidParameterError
from geometry import OcclusionBucket, PixelBox


def _label(generator=Generator.PDA, bucket=0, image_id=0, posture="standing", occluder_kind=None, orientation=None):
    return PseudoLabel(
        box=PixelBox(1, 2, 11, 32),
        bucket=OcclusionBucket(bucket),
        generator=generator,
        provenance=Provenance("ped", "bg", 7, image_id, 0 if occluder_kind else None),
        posture=posture,
        occluder_kind=occluder_kind,
        orientation=orientation,
        occlusion_rate=bucket / 10,
    )


@pytest.mark.parametrize("d_o,expected", [(0.0, (0.3, 1.7)), (5.0, (0.15, 0.85)), (10.0, (0.0, 0.0))])
def test_estimator_reference_points(d_o, expected):
    est = estimate_occluded_box(d_o, 10.0)
    assert est.width_m == pytest.approx(expected[0], abs=1e-12)
    assert est.height_m == pytest.approx(expected[1], abs=1e-12)


def test_estimator_is_linear_in_depth():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d_max = float(rng.uniform(0.1, 100))
        d_o = float(rng.uniform(0, d_max))
        est = estimate_occluded_box(d_o, d_max)
        assert est.height_m == pytest.approx(1.7 * (1 - d_o / d_max), abs=1e-12)
        assert est.width_m == pytest.approx(0.3 * (1 - d_o / d_max), abs=1e-12)
        assert est.height_m / 1.7 == pytest.approx(est.width_m / 0.3, abs=1e-12)


def test_estimator_rejects_bad_depths():
    with pytest.raises(InvalidDepthError):
        estimate_occluded_box(1.0, 0.0)
    with pytest.raises(InvalidDepthError):
        estimate_occluded_box(11.0, 10.0)
    with pytest.raises(InvalidDepthError):
        estimate_occluded_box(-1.0, 10.0)


def test_to_pixels_rounds_half_up():
    est = estimate_occluded_box(0.0, 10.0)
    assert to_pixels(est, 100.0) == (30, 170)
    assert to_pixels(estimate_occluded_box(5.0, 10.0), 10.0) == (2, 9)


@pytest.mark.parametrize("n", [1, 2, 10, 99, 100_000])
def test_split_sizes(n):
    assignment = split(range(n), seed=3)
    assert len(assignment.train) == n // 2
    assert len(assignment.val) == (4 * n) // 5 - n // 2
    assert len(assignment.test) == n - (4 * n) // 5
    assert sorted(assignment.train + assignment.val + assignment.test) == list(range(n))
    if n % 10 == 0:
        assert (len(assignment.train), len(assignment.val), len(assignment.test)) == (n // 2, 3 * n // 10, n // 5)


def test_split_is_deterministic_and_seeded():
    ids = list(range(40))
    assert split(ids, 1) == split(ids, 1)
    assert split(ids, 1).train != split(ids, 2).train
    assert split([], 0) == SplitAssignment(seed=0)
    with pytest.raises(InvalidParameterError):
        split([1, 1], 0)


def test_split_assignment_lookup():
    assignment = split(range(10), 4)
    mapping = assignment.as_mapping()
    assert len(mapping) == 10
    for rid, name in mapping.items():
        assert assignment.of(rid) == name
    assert SplitAssignment.from_dict(json.loads(json.dumps(assignment.to_dict()))) == assignment


def test_label_invariants():
    with pytest.raises(InvalidParameterError):
        _label(generator=Generator.ODA, bucket=5)
    with pytest.raises(InvalidParameterError):
        _label(generator=Generator.PDA, bucket=3)
    with pytest.raises(InvalidParameterError):
        _label(generator=Generator.PDA, posture=None)


def test_stats_groupings_sum_to_total():
    labels = [
        _label(Generator.ODA, 7, 0, occluder_kind="car_front", orientation="front"),
        _label(Generator.ODA, 9, 0, occluder_kind="cube_obstacle"),
        _label(Generator.PDA, 0, 1, posture="lying_down"),
        _label(Generator.PDA, 0, 2, posture="sitting"),
        _label(Generator.COPY_PASTE, 0, 3, posture=None),
    ]
    table = stats(labels, split(range(4), 0))
    for grouping in (table.by_generator, table.by_occluder_kind, table.by_posture,
                     table.by_orientation, table.by_bucket, table.by_split):
        assert sum(grouping.values()) == len(labels)
    assert table.by_generator == {"oda": 2, "pda": 2, "copy_paste": 1, "manual": 0}
    assert table.by_bucket["7"] == 1 and table.by_bucket["9"] == 1 and table.by_bucket["0"] == 3
    assert table.by_occluder_kind["none"] == 3
    assert table.total_images == 4
    assert table.by_sub_dataset == {
        "lying_down": {"images": 1, "pedestrians": 1},
        "occlusion": {"images": 1, "pedestrians": 2},
        "posture": {"images": 2, "pedestrians": 2},
    }
    text = format_stats_table(table)
    assert "70-79%" in text and "lying_down" in text


def test_stats_counts_images_per_split():
    labels = [
        _label(Generator.ODA, 7, 0, occluder_kind="car_front"),
        _label(Generator.ODA, 4, 0, occluder_kind="car_rear"),
        _label(Generator.PDA, 0, 1, posture="lying_down"),
        _label(Generator.PDA, 0, 2, posture="sitting"),
        _label(Generator.PDA, 0, 3, posture="squatting"),
    ]
    assignment = SplitAssignment(train=(0, 1), val=(2,), test=(3,), seed=0)
    table = stats(labels, assignment)
    assert table.by_split == {"test": 1, "train": 3, "val": 1}
    assert table.images_by_split == {"test": 1, "train": 2, "val": 1}
    assert table.by_split_sub_dataset == {
        "test": {"posture": {"images": 1, "pedestrians": 1}},
        "train": {
            "lying_down": {"images": 1, "pedestrians": 1},
            "occlusion": {"images": 1, "pedestrians": 2},
        },
        "val": {"posture": {"images": 1, "pedestrians": 1}},
    }
    text = format_stats_table(table)
    assert "split (images)" in text and "train sub-dataset" in text
    assert stats(labels).by_split_sub_dataset == {}


def test_stats_of_nothing():
    table = stats([])
    assert table.total_labels == 0
    assert all(v == 0 for v in table.by_generator.values())


def test_sub_dataset_of():
    assert sub_dataset_of(_label(Generator.ODA, 3, occluder_kind="car_rear")) == "occlusion"
    assert sub_dataset_of(_label(posture="lying_down")) == "lying_down"
    assert sub_dataset_of(_label(posture="bending_over")) == "posture"


def test_label_file_keeps_extension_fields(tmp_path):
    labels = [_label(Generator.ODA, 7, 0, occluder_kind="car_front", orientation="left"), _label(image_id=1)]
    images = [{"id": 0, "file_name": "images/000000.png", "width": 100, "height": 60},
              {"id": 1, "file_name": "images/000001.png", "width": 100, "height": 60}]
    write_labels(tmp_path / "labels.json", images, labels)
    document = json.loads((tmp_path / "labels.json").read_text())
    assert [a["id"] for a in document["annotations"]] == [1, 2]
    assert document["annotations"][0]["bbox"] == [1, 2, 10, 30]
    assert document["annotations"][0]["area"] == 300
    assert document["categories"] == [{"id": 1, "name": "pedestrian"}]
    loaded_images, loaded = load_labels(tmp_path / "labels.json")
    assert loaded_images == images
    assert loaded == labels


def test_plain_coco_annotation_is_manual():
    label = annotation_to_label({"id": 1, "image_id": 4, "category_id": 1, "bbox": [3, 4, 5, 6]})
    assert label.generator == Generator.MANUAL
    assert label.bucket.index == 0
    assert label.image_id == 4
    assert label.box == PixelBox(3, 4, 8, 10)
