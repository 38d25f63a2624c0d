import numpy as np
import pytest

from errors import DegenerateMaskError, InvalidParameterError, RejectedInstanceError
from geometry import OcclusionBucket, PixelBox, box_area, bucket_of, intersect, iou, occlusion_rate


def test_pixel_box_rejects_bad_coordinates():
    with pytest.raises(InvalidParameterError):
        PixelBox(-1, 0, 5, 5)
    with pytest.raises(InvalidParameterError):
        PixelBox(3, 0, 3, 5)
    with pytest.raises(InvalidParameterError):
        PixelBox(0, 0, 2.5, 5)


def test_pixel_box_accepts_numpy_ints():
    box = PixelBox(np.int64(1), np.int32(2), np.int64(4), np.int64(6))
    assert box.as_tuple() == (1, 2, 4, 6)
    assert type(box.x1) is int
    assert box.to_xywh() == [1, 2, 3, 4]
    assert PixelBox.from_xywh(1, 2, 3, 4) == box


def test_iou_simple_cases():
    a = PixelBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, PixelBox(10, 0, 20, 10)) == 0.0
    assert intersect(a, PixelBox(10, 0, 20, 10)) is None
    assert iou(a, PixelBox(5, 0, 15, 10)) == pytest.approx(50 / 150)


def test_iou_matches_rasterized_oracle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        coords = []
        for _ in range(2):
            x1, y1 = rng.integers(0, 15, size=2)
            w, h = rng.integers(1, 8, size=2)
            coords.append(PixelBox(int(x1), int(y1), int(x1 + w), int(y1 + h)))
        a, b = coords
        grid_a = np.zeros((24, 24), dtype=bool)
        grid_b = np.zeros((24, 24), dtype=bool)
        grid_a[a.y1:a.y2, a.x1:a.x2] = True
        grid_b[b.y1:b.y2, b.x1:b.x2] = True
        inter = int((grid_a & grid_b).sum())
        union = int((grid_a | grid_b).sum())
        assert iou(a, b) == inter / union
        assert iou(a, b) == iou(b, a)
        assert box_area(a) == int(grid_a.sum())


@pytest.mark.parametrize("rate,bucket", [
    (0.0, 0), (0.05, 0), (0.1, 1), (0.3, 3), (0.7, 7), (0.95, 9), (0.99, 9),
])
def test_bucket_of(rate, bucket):
    assert bucket_of(rate) == OcclusionBucket(bucket)


def test_bucket_of_rejects_out_of_taxonomy():
    with pytest.raises(RejectedInstanceError):
        bucket_of(0.991)
    with pytest.raises(RejectedInstanceError):
        bucket_of(1.0)
    with pytest.raises(InvalidParameterError):
        bucket_of(-0.1)


def test_bucket_of_exact_deciles():
    for k in range(10):
        assert bucket_of(occlusion_rate(100 - 10 * k, 100)).index == k


def test_occlusion_rate():
    assert occlusion_rate(75, 100) == 0.25
    assert occlusion_rate(100, 100) == 0.0
    with pytest.raises(DegenerateMaskError):
        occlusion_rate(0, 0)
    with pytest.raises(InvalidParameterError):
        occlusion_rate(11, 10)


def test_bucket_labels():
    assert OcclusionBucket(0).label == "not_occluded"
    assert OcclusionBucket(3).label == "30-39%"
    assert OcclusionBucket(9).label == "90-99%"
    with pytest.raises(InvalidParameterError):
        OcclusionBucket(10)
