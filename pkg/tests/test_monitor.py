from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from lichenmon.dataset import Category, Dataset, ImageRecord, InstanceAnnotation
from lichenmon.errors import OrderingError, ParameterError, ValidationError
from lichenmon.mask import Box, Polygon
from lichenmon.monitor import (
    BiomassSeries, Frame, Instance, SeriesPoint, Track, biomass_series, change_report, change_report_csv,
    frames_from_dataset, link_instances, rolling_median, series_csv, series_json, track_dataset)

T0 = datetime(2021, 6, 1, tzinfo=timezone.utc)
H2 = timedelta(hours=2)


def sq(x, y, s):
    return Polygon(((x, y), (x + s, y), (x + s, y + s), (x, y + s)))


def frame(k, insts, t=None):
    return Frame(k + 1, t or T0 + k * H2, "C", 40, 40, tuple(insts))


def series(areas, step=H2, start=T0):
    return BiomassSeries(1, 1, tuple(SeriesPoint(start + k * step, a) for k, a in enumerate(areas)))


def test_identical_mask_two_frames():
    fr = [frame(0, [Instance(1, 1, sq(2, 2, 6))]), frame(1, [Instance(2, 1, sq(2, 2, 6))])]
    (t,) = link_instances(fr)
    assert len(t) == 2 and t.gap_count == 0


def test_two_disjoint_lichens_five_frames():
    fr = [frame(k, [Instance(10 * k + 1, 1, sq(1, 1, 8)), Instance(10 * k + 2, 1, sq(20, 20, 8 + k))])
          for k in range(5)]
    tracks = link_instances(fr)
    assert sorted(len(t) for t in tracks) == [5, 5]
    assert [m.ref_id % 10 for m in tracks[0].members] == [1] * 5


def test_gap_within_tolerance_is_bridged():
    fr = [frame(k, [] if k == 2 else [Instance(k + 1, 1, sq(5, 5, 10))]) for k in range(5)]
    (t,) = link_instances(fr, max_gap=3)
    assert len(t) == 4 and t.gap_count == 1


def test_gap_beyond_tolerance_splits():
    fr = [frame(k, [] if 1 <= k <= 2 else [Instance(k + 1, 1, sq(5, 5, 10))]) for k in range(5)]
    assert [len(t) for t in link_instances(fr, max_gap=1)] == [1, 2]
    assert [len(t) for t in link_instances(fr, max_gap=2)] == [3]


def test_category_must_match():
    fr = [frame(0, [Instance(1, 1, sq(2, 2, 6))]), frame(1, [Instance(2, 2, sq(2, 2, 6))])]
    assert len(link_instances(fr)) == 2


def test_unsorted_frames_rejected():
    fr = [frame(1, []), frame(0, [])]
    with pytest.raises(OrderingError):
        link_instances(fr)


def test_bad_parameters():
    with pytest.raises(ParameterError):
        link_instances([], link_iou=0)
    with pytest.raises(ParameterError):
        link_instances([], max_gap=-1)


def test_higher_iou_wins_contested_instance():
    # both open tracks overlap the new instance; the better overlap claims it
    fr = [frame(0, [Instance(1, 1, sq(0, 0, 10)), Instance(2, 1, sq(3, 0, 10))]),
          frame(1, [Instance(3, 1, sq(2, 0, 10))])]
    tracks = link_instances(fr, link_iou=0.3)
    assert [m.ref_id for m in tracks[1].members] == [2, 3]


def test_iou_one_keeps_distinct_masks_apart(rng):
    fr = [frame(k, [Instance(k + 1, 1, sq(2, 2, 4 + k))]) for k in range(4)]
    assert len(link_instances(fr, link_iou=1.0)) == 4


@pytest.mark.parametrize("seed", range(10))
def test_partition_independent_of_instance_order(seed):
    rng = np.random.default_rng(seed)
    frames, ref = [], 0
    for k in range(6):
        insts = []
        for j in range(4):
            ref += 1
            x, y = 10 * j + int(rng.integers(0, 3)), int(rng.integers(0, 3))
            insts.append(Instance(ref, 1, sq(x, y, 6)))
        frames.append(frame(k, insts))
    shuffled = [Frame(f.image_id, f.captured_at, f.camera_id, f.height, f.width,
                      tuple(f.instances[i] for i in rng.permutation(len(f.instances)))) for f in frames]

    def partition(tracks):
        return sorted(tuple(m.ref_id for m in t.members) for t in tracks)

    a, b = link_instances(frames), link_instances(shuffled)
    assert partition(a) == partition(b)
    ids = [m.ref_id for t in a for m in t.members]
    assert sorted(ids) == list(range(1, ref + 1))


def test_rolling_median_examples():
    assert rolling_median([100, 500, 102], 3)[1] == 102
    assert rolling_median([7, 7, 7, 7], 3) == (7, 7, 7, 7)
    assert rolling_median([1, 9, 2, 8, 3], 5)[2] == 3
    with pytest.raises(ParameterError):
        rolling_median([1, 2], 2)


def test_biomass_series_scale_and_smoothing():
    t = Track(1, 1, "C")
    from lichenmon.monitor import Member
    t.members = [Member(k + 1, T0 + k * H2, k, a) for k, a in enumerate([100, 500, 102])]
    s = biomass_series(t, px_to_cm2=0.01, smooth_window=3)
    assert [p.area_cm2 for p in s.points] == [1.0, 5.0, 1.02]
    assert s.smoothed[1] == 102
    with pytest.raises(ParameterError):
        biomass_series(t, smooth_window=4)
    with pytest.raises(ValidationError):
        biomass_series(Track(2, 1, "C"))


def test_change_whole():
    (row,) = change_report([series([100, 121])])
    assert row.abs_change == 21 and row.rel_change == pytest.approx(0.21)
    assert row.growth_per_frame == pytest.approx(1.21)


def test_growth_counts_missing_frames():
    s = BiomassSeries(1, 1, (SeriesPoint(T0, 100), SeriesPoint(T0 + H2, 110),
                             SeriesPoint(T0 + 3 * H2, 133.1)))
    (row,) = change_report([s])
    assert row.growth_per_frame == pytest.approx(1.1)


def test_change_monthly_omits_empty_months():
    pts = (SeriesPoint(datetime(2021, 1, 5, tzinfo=timezone.utc), 100),
           SeriesPoint(datetime(2021, 1, 20, tzinfo=timezone.utc), 110),
           SeriesPoint(datetime(2021, 3, 2, tzinfo=timezone.utc), 150))
    rows = change_report([BiomassSeries(4, 1, pts)], period="month")
    assert [(r.period, r.n_obs) for r in rows] == [("2021-01", 2), ("2021-03", 1)]
    assert rows[1].rel_change == 0 and rows[1].growth_per_frame is None


def test_change_report_needs_series():
    with pytest.raises(ValidationError):
        change_report([])


def test_dataset_roundtrip_exports():
    cats = (Category(1, "Lobaria pulmonaria", "LP"),)
    images = [ImageRecord(k + 1, f"f{k}.png", 40, 40, "C", T0 + k * H2) for k in range(3)]
    anns = [InstanceAnnotation(k + 1, k + 1, 1, sq(4, 4, 10 + k), Box(4, 4, 10 + k, 10 + k)) for k in range(3)]
    ds = Dataset(images, cats, anns)
    (t,) = track_dataset(ds)
    s = biomass_series(t)
    assert s.areas == [100, 121, 144]
    lines = series_csv([s]).splitlines()
    assert lines[0] == "track_id,timestamp,area_px,area_cm2,smoothed"
    assert lines[1] == "1,2021-06-01T00:00:00Z,100,,"
    assert '"gap_count": 0' in series_json([s], [t])
    assert change_report_csv(change_report([s])).splitlines()[1].startswith("1,whole,100,144,44,0.44,3,")


def test_frames_require_timestamps():
    cats = (Category(1, "x", "X"),)
    ds = Dataset([ImageRecord(1, "a.png", 8, 8, "C", None)], cats, [])
    with pytest.raises(ValidationError):
        frames_from_dataset(ds)
