import math
from datetime import datetime, timezone

import numpy as np
import pytest

from sensorgp import data
from sensorgp.errors import FormatError, InputError


def write_csv(path, rows, header=data.SENSOR_COLUMNS):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# sensor CSV loading


def test_load_basic_and_sorting(tmp_path):
    p = tmp_path / "s.csv"
    write_csv(
        p,
        [
            ("b", 0.35, 32.6, "2021-11-01T05:00:00Z", 12.0),
            ("a", 0.30, 32.5, "2021-11-01T05:00:00Z", 10.0),
            ("a", 0.30, 32.5, "2021-11-01T04:00:00Z", 11.0),
        ],
    )
    readings, report = data.load_sensor_csv(p)
    assert [r.site_id for r in readings] == ["a", "a", "b"]
    assert report.rows_read == 3
    assert report.dropped_bad_value == 0
    assert readings[0].timestamp == datetime(2021, 11, 1, 4, tzinfo=timezone.utc)
    assert readings[0].pm25 == 11.0
    assert readings[0].latitude == 0.30


def test_load_drops_unparseable_values(tmp_path):
    p = tmp_path / "s.csv"
    write_csv(
        p,
        [
            ("a", 0.3, 32.5, "2021-11-01T00:00:00Z", 10.0),
            ("a", 0.3, 32.5, "2021-11-01T01:00:00Z", ""),
            ("a", 0.3, 32.5, "2021-11-01T02:00:00Z", "n/a"),
            ("a", 0.3, 32.5, "2021-11-01T03:00:00Z", -4.0),
            ("a", 0.3, 32.5, "2021-11-01T04:00:00Z", 12.5),
        ],
    )
    readings, report = data.load_sensor_csv(p)
    assert len(readings) == 2
    assert report.dropped_bad_value == 3
    assert report.rows_read == 5


def test_load_averages_duplicate_site_hours(tmp_path):
    p = tmp_path / "s.csv"
    write_csv(
        p,
        [
            ("a", 0.3, 32.5, "2021-11-01T00:10:00Z", 10.0),
            ("a", 0.3, 32.5, "2021-11-01T00:50:00Z", 14.0),
            ("a", 0.3, 32.5, "2021-11-01T01:00:00Z", 9.0),
        ],
    )
    readings, report = data.load_sensor_csv(p)
    assert len(readings) == 2
    assert report.duplicates_averaged == 1
    assert readings[0].pm25 == pytest.approx(12.0)
    assert readings[0].timestamp.minute == 0  # floored to the hour


def test_load_timestamp_forms(tmp_path):
    p = tmp_path / "s.csv"
    write_csv(
        p,
        [
            ("a", 0.3, 32.5, "2021-11-01T00:00:00Z", 1.0),
            ("a", 0.3, 32.5, "2021-11-01T01:00:00+00:00", 2.0),
            ("a", 0.3, 32.5, "2021-11-01 02:00:00", 3.0),  # naive, assumed UTC
            ("a", 0.3, 32.5, "2021-11-01T06:30:00+03:30", 4.0),
        ],
    )
    readings, _ = data.load_sensor_csv(p)
    hours = [r.timestamp.hour for r in readings]
    assert hours == [0, 1, 2, 3]
    assert all(r.timestamp.tzinfo is timezone.utc for r in readings)


def test_load_bad_timestamp_names_line(tmp_path):
    p = tmp_path / "s.csv"
    write_csv(
        p,
        [
            ("a", 0.3, 32.5, "2021-11-01T00:00:00Z", 1.0),
            ("a", 0.3, 32.5, "yesterday", 2.0),
        ],
    )
    with pytest.raises(FormatError, match="line 3"):
        data.load_sensor_csv(p)


def test_load_bad_coordinates_rejected(tmp_path):
    p = tmp_path / "s.csv"
    write_csv(p, [("a", "north", 32.5, "2021-11-01T00:00:00Z", 1.0)])
    with pytest.raises(FormatError):
        data.load_sensor_csv(p)


def test_load_missing_column_names_header_line(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("site_id,latitude,timestamp,pm2_5\na,0.3,2021-11-01T00:00:00Z,1.0\n")
    with pytest.raises(FormatError, match="longitude"):
        data.load_sensor_csv(p)


def test_load_empty_file(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("")
    with pytest.raises(InputError):
        data.load_sensor_csv(p)


def test_load_extra_columns_tolerated(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(
        "site_id,latitude,longitude,timestamp,pm2_5,battery\n"
        "a,0.3,32.5,2021-11-01T00:00:00Z,7.5,88\n"
    )
    readings, _ = data.load_sensor_csv(p)
    assert len(readings) == 1 and readings[0].pm25 == 7.5


# ---------------------------------------------------------------------------
# sparse-site filtering


def make_reading(site, hour, value, lat=0.3, lon=32.5):
    return data.SensorReading(
        site, lat, lon, datetime(2021, 11, 1, tzinfo=timezone.utc).replace(hour=hour % 24), value
    )


def test_drop_sparse_sites():
    readings = []
    for site, count in (("a", 6), ("b", 3), ("c", 6), ("d", 1)):
        readings += [make_reading(site, h, 10.0) for h in range(count)]
    kept, dropped = data.drop_sparse_sites(readings, min_count=5)
    assert sorted({r.site_id for r in kept}) == ["a", "c"]
    assert sorted(dropped) == ["b", "d"]
    assert data.drop_sparse_sites(readings, min_count=0)[0] == sorted(
        readings, key=lambda r: (r.timestamp, r.site_id)
    ) or len(data.drop_sparse_sites(readings, min_count=0)[0]) == len(readings)


# ---------------------------------------------------------------------------
# outlier fences


def fence_data(values, site="a"):
    return [make_reading(site, i, v) for i, v in enumerate(values)]


def test_tukey_fences_worked_example():
    kept, report = data.remove_outliers(fence_data([1.0, 2.0, 3.0, 4.0, 100.0]))
    g = report.groups["a"]
    assert g.q1 == pytest.approx(2.0)
    assert g.q3 == pytest.approx(4.0)
    assert g.lower == pytest.approx(-1.0)
    assert g.upper == pytest.approx(7.0)
    assert [r.pm25 for r in kept] == [1.0, 2.0, 3.0, 4.0]
    assert report.total_removed == 1
    assert report.removed_fraction == pytest.approx(0.2)


def test_fences_frozen_reapplication_idempotent():
    readings = fence_data([1.0, 2.0, 3.0, 4.0, 100.0, -50.0])
    kept, report = data.remove_outliers(readings)
    again = data.filter_with_fences(kept, report)
    assert again == kept
    # and the original filtered through the frozen fences gives the same survivors
    assert data.filter_with_fences(readings, report) == kept


def test_infinite_factor_removes_nothing():
    readings = fence_data([1.0, 2.0, 3.0, 4.0, 1e6])
    kept, report = data.remove_outliers(readings, factor=math.inf)
    assert len(kept) == 5
    assert report.total_removed == 0


def test_identical_values_not_removed():
    kept, report = data.remove_outliers(fence_data([5.0] * 10))
    assert len(kept) == 10
    assert report.groups["a"].iqr == 0.0


def test_small_groups_skipped():
    kept, report = data.remove_outliers(fence_data([1.0, 2.0, 1e9]))
    assert len(kept) == 3
    assert report.groups["a"].skipped


def test_per_site_vs_global_scope():
    readings = fence_data([10.0] * 8) + fence_data([1000.0] * 8, site="b")
    kept_ps, rep_ps = data.remove_outliers(readings, scope="per-site")
    assert len(kept_ps) == 16  # each site is self-consistent
    kept_g, rep_g = data.remove_outliers(readings, scope="global")
    assert set(rep_g.groups) == {"__all__"}
    with pytest.raises(InputError):
        data.remove_outliers(readings, scope="per-country")


def test_mean_mode_centers_on_mean():
    values = [0.0, 0.0, 0.0, 0.0, 10.0]
    _, rep_mean = data.remove_outliers(fence_data(values), mode="mean")
    g = rep_mean.groups["a"]
    # fences centered on the mean (2.0) with half-width factor*IQR
    assert (g.lower + g.upper) / 2.0 == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# weather join


def write_weather(path, hours, base=None):
    rows = []
    for h in hours:
        rows.append(
            (f"2021-11-01T{h:02d}:00:00Z", 2.0 + h, 90.0, 3.5, 0.7, 24.0, 0.0)
        )
    write_csv(path, rows, header=data.WEATHER_COLUMNS)


def test_join_weather_full_coverage(tmp_path):
    wpath = tmp_path / "w.csv"
    write_weather(wpath, range(4))
    weather = data.load_weather_csv(wpath)
    readings = [make_reading("a", h, 10.0 + h) for h in range(4)]
    joined, dropped = data.join_weather(readings, weather)
    assert dropped == 0
    r = joined[2]
    assert r.covariates["windspeed"] == pytest.approx(4.0)
    # wind direction becomes a unit vector
    assert r.covariates["winddir_sin"] == pytest.approx(np.sin(np.radians(90.0)))
    assert r.covariates["winddir_cos"] == pytest.approx(np.cos(np.radians(90.0)), abs=1e-12)


def test_join_weather_drops_unmatched_hours(tmp_path):
    wpath = tmp_path / "w.csv"
    write_weather(wpath, [0, 1, 3])
    weather = data.load_weather_csv(wpath)
    readings = [make_reading("a", h, 10.0) for h in range(4)]
    joined, dropped = data.join_weather(readings, weather)
    assert dropped == 1
    assert [r.timestamp.hour for r in joined] == [0, 1, 3]


def test_weather_duplicate_hour_rejected(tmp_path):
    wpath = tmp_path / "w.csv"
    rows = [("2021-11-01T00:00:00Z", 1, 0, 0, 0, 20, 0), ("2021-11-01T00:30:00Z", 2, 0, 0, 0, 21, 0)]
    write_csv(wpath, rows, header=data.WEATHER_COLUMNS)
    with pytest.raises(FormatError):
        data.load_weather_csv(wpath)


# ---------------------------------------------------------------------------
# dataset assembly


def test_build_dataset_normalization_roundtrip():
    res = data.synth_generate(sites=6, days=4, seed=1, missing_rate=0.0)
    ds = data.build_dataset(res.readings)
    assert tuple(ds.columns) == data.BASE_INPUT_COLUMNS
    assert ds.d == 3 and ds.n == len(res.readings)
    np.testing.assert_allclose(ds.X.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(ds.X.std(axis=0), 1.0, atol=1e-10)
    np.testing.assert_allclose(ds.y.mean(), 0.0, atol=1e-10)
    raw = ds.raw_inputs()
    np.testing.assert_allclose(raw, ds.X * ds.col_scale + ds.col_mean, atol=1e-10)
    values = np.array([r.pm25 for r in res.readings])
    np.testing.assert_allclose(ds.decode_targets(ds.y), values, atol=1e-10)
    np.testing.assert_allclose(ds.encode_targets(values), ds.y, atol=1e-12)


def test_build_dataset_time_axis_in_hours():
    readings = [make_reading("a", h, 10.0) for h in range(5)]
    ds = data.build_dataset(readings)
    t = ds.raw_inputs()[:, 2]
    np.testing.assert_allclose(np.diff(np.sort(t)), 1.0, atol=1e-12)


def test_build_dataset_constant_column_scale_one():
    readings = [make_reading("a", h, 10.0) for h in range(5)]
    ds = data.build_dataset(readings)
    # single site: lat and lon are constant, scale must fall back to 1.0
    assert ds.col_scale[0] == 1.0 and ds.col_scale[1] == 1.0


def test_build_dataset_with_covariates(tmp_path):
    wpath = tmp_path / "w.csv"
    write_weather(wpath, range(6))
    weather = data.load_weather_csv(wpath)
    readings = [make_reading(s, h, 10.0 + h) for s in ("a", "b") for h in range(6)]
    joined, _ = data.join_weather(readings, weather)
    ds = data.build_dataset(joined, include_covariates=True)
    assert tuple(ds.columns) == data.BASE_INPUT_COLUMNS + data.COVARIATE_INPUT_COLUMNS
    assert ds.d == 10


def test_build_dataset_missing_covariate_named():
    readings = [make_reading("a", h, 10.0) for h in range(4)]
    with pytest.raises(InputError, match="windspeed"):
        data.build_dataset(readings, include_covariates=True)


def test_encode_inputs_matches_training_rows():
    res = data.synth_generate(sites=3, days=2, seed=2, missing_rate=0.0)
    ds = data.build_dataset(res.readings)
    X2 = ds.encode_inputs(res.readings)
    np.testing.assert_allclose(X2, ds.X, atol=1e-12)


def test_decode_variance_scales_quadratically():
    res = data.synth_generate(sites=3, days=2, seed=3, missing_rate=0.0)
    ds = data.build_dataset(res.readings)
    np.testing.assert_allclose(ds.decode_variance(np.array([1.0])), ds.y_scale**2, atol=1e-10)


def test_dataset_take_subset():
    res = data.synth_generate(sites=3, days=2, seed=4, missing_rate=0.0)
    ds = data.build_dataset(res.readings)
    sub = ds.take(np.array([0, 2, 4]))
    np.testing.assert_array_equal(sub.X, ds.X[[0, 2, 4]])
    assert sub.y_mean == ds.y_mean and sub.t0 == ds.t0


# ---------------------------------------------------------------------------
# summaries


def test_summary_stats_diurnal_peaks():
    # two sinusoidal bumps at hours 8 and 21, several days of data
    readings = []
    for day in range(1, 8):
        for hour in range(24):
            value = (
                40.0
                + 10.0 * math.exp(-0.5 * ((hour - 8.0) / 2.0) ** 2)
                + 12.0 * math.exp(-0.5 * ((hour - 21.0) / 2.0) ** 2)
            )
            ts = datetime(2021, 11, day, hour, tzinfo=timezone.utc)
            readings.append(data.SensorReading("a", 0.3, 32.5, ts, value))
    stats = data.summary_stats(readings)
    hours = sorted(stats.overall_hourly_mean)
    means = [stats.overall_hourly_mean[h] for h in hours]
    morning = max(range(0, 15), key=lambda h: means[h])
    evening = max(range(15, 24), key=lambda h: means[h])
    assert morning == 8 and evening == 21
    box8 = [b for b in stats.boxes["a"] if b.hour == 8][0]
    assert box8.count == 7
    assert box8.median == pytest.approx(means[8], abs=1e-9)


def test_summary_stats_constant_values():
    readings = [make_reading("a", h, 5.0) for h in range(24)] * 4
    stats = data.summary_stats(readings)
    for box in stats.boxes["a"]:
        assert box.q1 == box.q3 == box.median == 5.0
        assert box.outliers == []


# ---------------------------------------------------------------------------
# synthetic generator


def test_synth_deterministic():
    a = data.synth_generate(sites=4, days=2, seed=7)
    b = data.synth_generate(sites=4, days=2, seed=7)
    assert [r.pm25 for r in a.readings] == [r.pm25 for r in b.readings]
    assert [r.timestamp for r in a.readings] == [r.timestamp for r in b.readings]
    c = data.synth_generate(sites=4, days=2, seed=8)
    assert [r.pm25 for r in c.readings] != [r.pm25 for r in a.readings]


def test_synth_shapes_and_missingness():
    res = data.synth_generate(sites=5, days=3, seed=0, missing_rate=0.0)
    assert len(res.readings) == 5 * 72
    assert len(res.latents) == len(res.readings)
    assert len({r.site_id for r in res.readings}) == 5
    res2 = data.synth_generate(sites=5, days=3, seed=0, missing_rate=0.4)
    frac = 1.0 - len(res2.readings) / (5 * 72)
    assert 0.25 < frac < 0.55


def test_synth_no_spikes_bounds_noise():
    res = data.synth_generate(
        sites=14, days=30, seed=5, spike_rate=0.0, missing_rate=0.0
    )
    assert len(res.readings) >= 10000
    resid = np.array([r.pm25 for r in res.readings]) - np.array(res.latents)
    assert np.max(np.abs(resid)) <= 5.0 * res.config.noise_std
    assert np.std(resid) == pytest.approx(res.config.noise_std, rel=0.1)


def test_synth_spikes_positive_and_rare():
    cfg = dict(sites=10, days=10, seed=6, missing_rate=0.0)
    with_spikes = data.synth_generate(spike_rate=0.02, **cfg)
    without = data.synth_generate(spike_rate=0.0, **cfg)
    delta = np.array([r.pm25 for r in with_spikes.readings]) - np.array(
        [r.pm25 for r in without.readings]
    )
    spiked = delta > 1e-9
    assert 0.005 < spiked.mean() < 0.05
    assert np.all(delta >= -1e-9)


def test_synth_input_validation():
    with pytest.raises(InputError):
        data.synth_generate(sites=0)
    with pytest.raises(InputError):
        data.synth_generate(missing_rate=1.5)
