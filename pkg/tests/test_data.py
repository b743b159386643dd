from __future__ import annotations

import numpy as np
import pytest

from edlab import data
from edlab.errors import GapError, InsufficientData, InvalidParams, NegativeLoad, NonMonotoneTimestamps, ParseError


def write(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def hourly(n, start="2012-01-01T00:00:00", value=None, seed=0):
    ts = np.datetime64(start, "s") + np.arange(n) * data.HOUR
    load = np.full(n, value) if value is not None else np.random.default_rng(seed).uniform(1, 2, n)
    return data.LoadSeries(ts, load)


def test_load_two_rows(tmp_path):
    s = data.load_csv(write(tmp_path, "timestamp,load_mw\n2012-01-01T00:00:00,812.5\n2012-01-01T01:00:00,790.1\n"))
    assert len(s) == 2 and s.total_load.tolist() == [812.5, 790.1]
    assert s.hours.tolist() == [0, 1]


def test_load_errors(tmp_path):
    with pytest.raises(NonMonotoneTimestamps):
        data.load_csv(write(tmp_path, "timestamp,load_mw\n2012-01-01T01:00:00,1\n2012-01-01T00:00:00,1\n"))
    with pytest.raises(GapError, match="2012-01-01T03:00:00"):
        data.load_csv(write(tmp_path, "timestamp,load_mw\n2012-01-01T01:00:00,1\n2012-01-01T03:00:00,1\n"))
    ok = data.load_csv(write(tmp_path, "timestamp,load_mw\n2012-01-01T01:00:00,1\n2012-01-01T03:00:00,1\n"),
                       allow_gaps=True)
    assert len(ok) == 2
    with pytest.raises(NegativeLoad):
        data.load_csv(write(tmp_path, "timestamp,load_mw\n2012-01-01T01:00:00,-1\n"))
    with pytest.raises(ParseError) as exc:
        data.load_csv(write(tmp_path, "timestamp,load_mw\n2012-01-01T01:00:00,1\nnot-a-time,2\n"))
    assert exc.value.line == 3
    with pytest.raises(ParseError):
        data.load_csv(write(tmp_path, "time,mw\n"))
    with pytest.raises(ParseError):
        data.load_csv(write(tmp_path, "timestamp,load_mw\n2012-01-01T01:00:00,abc\n"))


def test_round_trip_with_bus_columns(tmp_path):
    text = ("timestamp,load_mw,bus_0,bus_1\n2012-01-01T00:00:00,3.25,1.25,2\n"
            "2012-01-01T01:00:00,3.5,1.5,2\n")
    p = write(tmp_path, text)
    s = data.load_csv(p)
    assert s.bus_names == ("bus_0", "bus_1") and s.bus_loads.shape == (2, 2)
    q = tmp_path / "back.csv"
    data.write_csv(s, q)
    assert q.read_text() == text


def test_round_trip_twelve_digits(tmp_path):
    s = hourly(50)
    p = tmp_path / "a.csv"
    data.write_csv(s, p)
    back = data.load_csv(p)
    assert np.array_equal(back.timestamps, s.timestamps)
    assert np.allclose(back.total_load, s.total_load, rtol=1e-11, atol=0)
    q = tmp_path / "b.csv"
    data.write_csv(back, q)
    assert q.read_text() == p.read_text()


def test_boundary_one_sample():
    # 25 hours from midnight: the only target is hour 0 of the second day
    tr, va, te = data.make_samples(hourly(25), data.SplitSpec(2, 0, 0))
    assert len(tr) == 1 and len(va) == 0 and len(te) == 0
    assert tr.X.shape == (1, 25)
    with pytest.raises(InsufficientData):
        data.make_samples(hourly(24), data.SplitSpec(1, 0, 0))


def test_split_sizes_and_no_leakage():
    s = hourly(1800 * 24)
    tr, va, te = data.make_samples(s, data.SplitSpec(1200, 200, 400))
    assert (len(tr), len(va), len(te)) == (1200 * 24 - 24, 200 * 24, 400 * 24)
    for part in (tr, va, te):
        assert np.all(part.feature_times < part.timestamps)
    assert tr.timestamps.max() < va.timestamps.min() and va.timestamps.max() < te.timestamps.min()
    # features are the previous 24 hours, oldest first
    i = 100
    t = np.searchsorted(s.timestamps, tr.timestamps[i])
    assert np.array_equal(tr.X[i, :24], s.total_load[t - 24:t])
    assert tr.y[i] == s.total_load[t]


def test_weekday_flag():
    ts = np.array(["2012-01-06T10:00", "2012-01-07T10:00", "2012-01-08T10:00", "2012-01-09T10:00"],
                  dtype="datetime64[s]")  # Fri, Sat, Sun, Mon
    assert data.weekday_flag(ts).tolist() == [1.0, 0.0, 0.0, 1.0]


def test_constant_series_normalises_to_zero():
    tr, _, _ = data.make_samples(hourly(24 * 3, value=5.0), data.SplitSpec(3, 0, 0))
    Z = data.Normalizer.fit(tr.X[:, :24])(tr.X[:, :24])
    assert np.all(Z == 0.0)


def test_gaps_drop_windows():
    s = hourly(24 * 4)
    keep = np.ones(len(s), dtype=bool)
    keep[50] = False
    gappy = data.LoadSeries(s.timestamps[keep], s.total_load[keep])
    tr, _, _ = data.make_samples(gappy, data.SplitSpec(4, 0, 0))
    assert len(tr) == len(s) - 24 - 25  # every window touching the missing hour is dropped
    assert np.all(tr.feature_times < tr.timestamps)


def test_synth_determinism_and_support():
    spec = data.SynthSpec({"family": "uniform", "a": 0.0, "b": 2.0}, hours=1000, seed=4)
    a, b = data.synth(spec), data.synth(spec)
    assert a.total_load.tobytes() == b.total_load.tobytes()
    assert a.total_load.min() >= 0.0 and a.total_load.max() <= 2.0
    c = data.synth(data.SynthSpec({"family": "uniform", "a": 0.0, "b": 2.0}, hours=1000, seed=5))
    assert not np.array_equal(a.total_load, c.total_load)


def test_synth_normal_mean():
    s = data.synth(data.SynthSpec({"family": "normal", "mu": 1.0, "sigma": 0.1}, hours=1_000_000, seed=0))
    assert abs(s.total_load.mean() - 1.0) < 0.001


def test_synth_diurnal():
    spec = data.SynthSpec.from_dict({
        "family": {"family": "bounded_pareto", "L": 0.5, "H": 3.0, "alpha": 2.0}, "hours": 24 * 400, "seed": 1,
        "diurnal": {"level": 1.7, "amplitude": 0.25, "peak_hour": 18, "hetero": 1.0, "weekend_factor": 0.9},
    })
    s = data.synth(spec)
    by_hour = np.array([s.total_load[s.hours == h].mean() for h in range(24)])
    assert abs(int(np.argmax(by_hour)) - 18) <= 1 and abs(int(np.argmin(by_hour)) - 6) <= 1
    assert data.SynthSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(InvalidParams):
        data.synth(data.SynthSpec({"family": "normal", "mu": 1.0, "sigma": 0.1}, hours=0))
