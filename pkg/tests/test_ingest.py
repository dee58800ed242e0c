import datetime as dt
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soymat.ingest import (GroundTruth, Orthomosaic, PlotBoundary, PlotSeries, PlotSnip, assemble_series,
                           extract_plot, extract_snips, parse_plot_boundaries, read_ground_truth, resize,
                           rm_day_decode, rm_day_encode, select_flights, write_plot_boundaries)


def rect(x0, y0, w, h):
    return [[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]]


def rotate(corners, deg, center=None):
    c = np.asarray(corners, float)
    center = c.mean(axis=0) if center is None else center
    a = math.radians(deg)
    r = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return (c - center) @ r.T + center


def write_json(path, records):
    path.write_text(json.dumps(records))
    return path


# ---- boundaries

def test_axis_aligned_rectangle(tmp_path):
    p = write_json(tmp_path / "b.json", [{"plot_id": "a", "environment_id": "e", "corners": rect(0, 0, 10, 4)}])
    (b,) = parse_plot_boundaries(p)
    assert b.area == 40
    assert b.signed_area > 0


def test_winding_normalized(tmp_path):
    cw = rect(0, 0, 10, 4)[::-1]
    p = write_json(tmp_path / "b.json", [{"plot_id": "a", "environment_id": "e", "corners": cw}])
    (b,) = parse_plot_boundaries(p)
    assert b.signed_area == 40


def test_rotated_area_preserved(tmp_path):
    c = rotate(rect(5, 5, 10, 4), 15)
    p = write_json(tmp_path / "b.json", [{"plot_id": "a", "environment_id": "e", "corners": c.tolist()}])
    (b,) = parse_plot_boundaries(p)
    assert b.area == pytest.approx(40, rel=1e-6)


def test_duplicate_plot_rejected(tmp_path):
    rec = {"plot_id": "a", "environment_id": "e", "corners": rect(0, 0, 2, 2)}
    p = write_json(tmp_path / "b.json", [rec, rec])
    with pytest.raises(ValueError, match="duplicate"):
        parse_plot_boundaries(p)
    # the same id in another environment is fine
    p = write_json(tmp_path / "c.json", [rec, {**rec, "environment_id": "f"}])
    assert len(parse_plot_boundaries(p)) == 2


def test_malformed_and_degenerate_records(tmp_path):
    p = write_json(tmp_path / "m.json", [{"plot_id": "a", "corners": rect(0, 0, 2, 2)}])
    with pytest.raises(ValueError, match="record 0"):
        parse_plot_boundaries(p)
    p = write_json(tmp_path / "d.json", [{"plot_id": "flat", "environment_id": "e",
                                          "corners": [[0, 0], [1, 0], [2, 0], [3, 0]]}])
    with pytest.raises(ValueError, match="flat"):
        parse_plot_boundaries(p)
    bad = tmp_path / "x.json"
    bad.write_text('[\n{"plot_id": }\n]')
    with pytest.raises(ValueError, match="line 2"):
        parse_plot_boundaries(bad)


def test_boundary_json_round_trip(tmp_path):
    bs = [PlotBoundary("a", "e", rect(1, 2, 3, 9)), PlotBoundary("b", "e", rotate(rect(10, 10, 4, 8), 7))]
    (loaded_a, loaded_b) = parse_plot_boundaries(write_plot_boundaries(tmp_path / "o.json", bs))
    assert np.allclose(loaded_a.corners, bs[0].corners)
    assert loaded_b.area == pytest.approx(32)


# ---- extraction

def test_axis_aligned_extract_is_plain_crop(rng):
    img = rng.integers(0, 256, (40, 30, 3), dtype=np.uint8)
    b = PlotBoundary("p", "e", rect(3, 5, 6, 20))
    assert np.array_equal(extract_plot(img, b), img[5:25, 3:9])


def test_horizontal_plot_turned_upright(rng):
    img = rng.integers(0, 256, (20, 40, 3), dtype=np.uint8)
    b = PlotBoundary("p", "e", rect(2, 3, 30, 5))
    out = extract_plot(img, b)
    assert out.shape == (30, 5, 3)
    assert np.array_equal(out, img[3:8, 2:32].transpose(1, 0, 2))


def test_non_integer_axis_aligned_uses_interpolation(rng):
    img = rng.integers(0, 256, (40, 30, 3), dtype=np.uint8)
    b = PlotBoundary("p", "e", rect(3, 5, 6, 20))
    shifted = PlotBoundary("p", "e", np.asarray(rect(3, 5, 6, 20), float) + 1e-9)
    assert np.abs(extract_plot(img, shifted).astype(int) - extract_plot(img, b)).max() <= 1


@pytest.mark.parametrize("deg", [0, 10, 33, 90, 137])
def test_constant_region_constant_crop(deg):
    img = np.full((80, 80, 3), (10, 200, 30), np.uint8)
    b = PlotBoundary("p", "e", rotate(rect(30, 20, 12, 40), deg))
    out = extract_plot(img, b)
    assert np.all(out == np.array([10, 200, 30], np.uint8))
    assert out.shape[0] >= out.shape[1]


def test_outside_raster_reports_overlap():
    img = np.zeros((20, 20, 3), np.uint8)
    with pytest.raises(ValueError, match="overlap fraction 0.500"):
        extract_plot(img, PlotBoundary("p", "e", rect(10, 0, 20, 10)))
    # within the 2-pixel tolerance
    out = extract_plot(img, PlotBoundary("p", "e", np.asarray(rect(0, 0, 10, 21.5), float)))
    assert out.shape == (22, 10, 3)


def test_rotation_matches_upright_crop_exactly_for_right_angles(rng):
    img = rng.integers(0, 256, (30, 30, 3), dtype=np.uint8)
    b = PlotBoundary("p", "e", rect(5, 4, 6, 16))
    # same rectangle given by rotating corner order 90 degrees around its centre
    c = np.asarray(rect(5, 4, 6, 16), float)
    b2 = PlotBoundary("p", "e", np.roll(c, 1, axis=0))
    assert np.array_equal(extract_plot(img, b), extract_plot(img, b2))


# ---- resize

def naive_resize(img, out_h, out_w):
    """Per-pixel bilinear with half-pixel centres, written as plainly as possible."""
    h, w = img.shape[:2]
    out = np.zeros((out_h, out_w, img.shape[2]))
    for i in range(out_h):
        y = min(max((i + 0.5) * h / out_h - 0.5, 0), h - 1)
        y0 = int(math.floor(y)); y1 = min(y0 + 1, h - 1); fy = y - y0
        for j in range(out_w):
            x = min(max((j + 0.5) * w / out_w - 0.5, 0), w - 1)
            x0 = int(math.floor(x)); x1 = min(x0 + 1, w - 1); fx = x - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                         + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def test_resize_matches_naive_oracle(rng):
    img = rng.integers(0, 256, (37, 11, 3), dtype=np.uint8)
    assert np.array_equal(resize(img), naive_resize(img, 256, 64))
    big = rng.integers(0, 256, (300, 70, 3), dtype=np.uint8)
    assert np.array_equal(resize(big, 40, 9), naive_resize(big, 40, 9))


def test_resize_identity_and_constant(rng):
    img = rng.integers(0, 256, (256, 64, 3), dtype=np.uint8)
    out = resize(img)
    assert np.array_equal(out, img) and out is not img
    assert np.array_equal(resize(resize(img)), img)
    const = np.full((13, 7, 3), 77, np.uint8)
    assert np.all(resize(const) == 77)


def test_resize_two_pixel_gradient():
    img = np.array([[[0, 0, 0], [255, 255, 255]]], np.uint8)
    out = resize(img)
    assert out.shape == (256, 64, 3)
    row = out[0, :, 0].astype(int)
    assert np.all(np.diff(row) >= 0) and np.all(out == out[:1])
    # column j samples source x = (j + 0.5) * 2 / 64 - 0.5, clamped to [0, 1]
    assert row[0] == 0          # x < 0 clamps to the black pixel
    assert row[16] == 4         # x = 0.015625 -> 3.98
    assert row[32] == 131       # x = 0.515625 -> 131.48
    assert row[63] == 255       # x > 1 clamps to the white pixel


# ---- series

def _snip(pid, day, env="e", value=0):
    return PlotSnip(pid, day, np.full((256, 64, 3), value, np.uint8), env)


def test_snip_shape_enforced():
    with pytest.raises(ValueError):
        PlotSnip("p", 1, np.zeros((64, 256, 3), np.uint8))


def test_assemble_orders_and_joins():
    snips = [_snip("a", d) for d in (37, 27, 20, 13, 6)] + [_snip("b", 6), _snip("b", 13)]
    out = assemble_series(snips, [GroundTruth("a", "e", 21)])
    assert [s.plot_id for s in out] == ["a", "b"]
    assert out[0].days == [6, 13, 20, 27, 37] and out[0].rm_day == 21
    assert out[1].rm_day is None


def test_assemble_rejects_duplicate_day():
    with pytest.raises(ValueError, match="duplicate"):
        assemble_series([_snip("a", 6), _snip("a", 6)])


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(8))))
def test_assemble_permutation_invariant(perm):
    base = [_snip(p, d, value=k) for k, (p, d) in
            enumerate([("a", 6), ("a", 13), ("a", 20), ("b", 6), ("b", 9), ("c", 1), ("c", 2), ("c", 40)])]
    ref = assemble_series(base)
    got = assemble_series([base[i] for i in perm])
    assert [(s.key, s.days) for s in got] == [(s.key, s.days) for s in ref]
    assert all(a.snips[k] is b.snips[k] for a, b in zip(got, ref) for k in range(len(a.snips)))


def test_series_with_unordered_snips_rejected():
    with pytest.raises(ValueError):
        PlotSeries("a", "e", [_snip("a", 13), _snip("a", 6)])


@pytest.mark.parametrize("days,expected", [
    ([6, 13, 20, 27, 37], [6, 20, 37]),
    ([5, 14, 17, 25, 34], [5, 17, 34]),
])
def test_select_flights_biweekly(days, expected):
    s = PlotSeries("a", "e", [_snip("a", d) for d in days])
    assert select_flights(s, "biweekly").days == expected
    assert select_flights(s, "weekly").days == days


def test_select_flights_errors_and_long_series():
    s = PlotSeries("a", "e", [_snip("a", d) for d in (6, 13)])
    with pytest.raises(ValueError, match=r"\[6, 13\]"):
        select_flights(s, "biweekly")
    with pytest.raises(ValueError):
        select_flights(s, "daily")
    long = PlotSeries("a", "e", [_snip("a", d) for d in range(1, 10)])
    assert select_flights(long, "weekly").days == [1, 3, 5, 7, 9]
    assert select_flights(long, "biweekly").days == [1, 5, 9]


def test_trials_dates_give_five_snip_series():
    from soymat.synthetic import TRIAL_ENVIRONMENTS
    for env, spec in TRIAL_ENVIRONMENTS.items():
        snips = [_snip("p", d, env) for d in spec["flight_days"]]
        (s,) = assemble_series(snips)
        assert len(s.snips) == 5


def test_extract_snips_from_environment(small_series, small_env):
    cfg = small_env[0]
    assert len(small_series) == cfg.n_plots
    assert all(s.days == list(cfg.flight_days) for s in small_series)
    assert small_series[0].stack().shape == (5, 256, 64, 3)


# ---- dates

def test_rm_day_examples():
    assert rm_day_encode(dt.date(2019, 9, 20)) == 20
    assert rm_day_encode(dt.date(2019, 8, 31)) == 0
    assert rm_day_encode(dt.date(2019, 10, 7)) == 37
    assert rm_day_decode(37) == dt.date(2019, 10, 7)


def test_rm_day_round_trip_whole_season():
    d = dt.date(2021, 8, 31)
    while d <= dt.date(2021, 11, 30):
        assert rm_day_decode(rm_day_encode(d), 2021) == d
        d += dt.timedelta(days=1)


def test_rm_day_out_of_season():
    with pytest.raises(ValueError):
        rm_day_encode(dt.date(2019, 8, 30))
    with pytest.raises(ValueError):
        rm_day_encode(dt.date(2019, 12, 1))
    with pytest.raises(ValueError):
        rm_day_decode(92)


def test_ground_truth_csv(tmp_path):
    p = tmp_path / "gt.csv"
    p.write_text("plot_id,environment_id,rm_day\na,e,20\nb,e,x\n")
    with pytest.raises(ValueError, match=":3"):
        read_ground_truth(p)
    p.write_text("plot_id,environment_id,rm_day\na,e,20\na,e,21\n")
    with pytest.raises(ValueError, match="duplicate"):
        read_ground_truth(p)
    p.write_text("id,env,day\n")
    with pytest.raises(ValueError, match="header"):
        read_ground_truth(p)
