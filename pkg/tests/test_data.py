import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from esdp.data import (
    DataError,
    EpidemicTimeSeries,
    MobilityTimeSeries,
    align,
    load_cases_csv,
    load_index_csv,
    load_mobility_csv,
    moving_average,
    read_aligned_csv,
    write_aligned_csv,
)
from esdp.synthetic import synthetic_panel, write_panel_csvs

D0 = dt.date(2020, 3, 1)


def days(n, start=D0):
    return [start + dt.timedelta(days=k) for k in range(n)]


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_mobility_single_zero_row(tmp_path):
    p = write(tmp_path, "m.csv", "date,rr,gp,pa,ts,wp,re\n2020-03-01, 0,0,0,0,0,0\n")
    m = load_mobility_csv(p)
    assert len(m) == 1
    assert m.values.tolist() == [[0.0] * 6]


def test_mobility_stored_exactly(tmp_path):
    p = write(tmp_path, "m.csv", "date,rr,gp,pa,ts,wp,re\n2020-06-01,-0.3,-0.07,0.06,-0.42,-0.4,0.15\n")
    assert load_mobility_csv(p).values[0].tolist() == [-0.3, -0.07, 0.06, -0.42, -0.4, 0.15]


def test_mobility_percent_units(tmp_path):
    p = write(tmp_path, "m.csv", "date,rr,gp,pa,ts,wp,re\n2020-06-01,-30,-7,6,-42,-40,15\n")
    v = load_mobility_csv(p, units="percent").values[0]
    assert v == pytest.approx([-0.3, -0.07, 0.06, -0.42, -0.4, 0.15], abs=1e-15)


@pytest.mark.parametrize("body, match", [
    ("date,rr,gp,pa,ts,wp,re\n2020-03-01,1.5,0,0,0,0,0\n", "outside"),
    ("date,rr,gp,pa,ts,wp\n2020-03-01,0,0,0,0,0\n", "missing column"),
    ("date,rr,gp,pa,ts,wp,re\n2020-03-01,x,0,0,0,0,0\n", "row 2"),
    ("date,rr,gp,pa,ts,wp,re\n2020-03-01,0,0,0,0,0,0\n2020-03-01,0,0,0,0,0,0\n", "duplicate"),
    ("date,rr,gp,pa,ts,wp,re\n2020-03-01,0,0,0,0,0,0\n2020-03-03,0,0,0,0,0,0\n", "gap"),
])
def test_mobility_errors(tmp_path, body, match):
    with pytest.raises(DataError, match=match):
        load_mobility_csv(write(tmp_path, "m.csv", body))


def test_cases_fractions(tmp_path):
    p = write(tmp_path, "c.csv", "date,active,recovered,deaths\n2020-03-01,10,5,1\n2020-03-02,0,0,0\n")
    with pytest.raises(DataError, match="decreases"):
        load_cases_csv(p, 100)
    p = write(tmp_path, "c2.csv", "date,active,recovered,deaths\n2020-03-01,0,0,0\n2020-03-02,10,5,1\n")
    e = load_cases_csv(p, 100)
    assert e.states[0].tolist() == [1.0, 0.0, 0.0, 0.0]
    assert e.states[1] == pytest.approx([0.84, 0.10, 0.05, 0.01], abs=1e-15)


def test_cases_decrease_before_cleaning_start_warns(tmp_path):
    p = write(tmp_path, "c.csv",
              "date,active,recovered,deaths\n2020-03-01,10,5,1\n2020-03-02,9,5,1\n2020-03-03,12,5,1\n")
    with pytest.warns(RuntimeWarning, match="tolerated"):
        load_cases_csv(p, 100, cleaning_start=dt.date(2020, 3, 3))
    with pytest.raises(DataError):
        load_cases_csv(p, 100, cleaning_start=dt.date(2020, 3, 2))


@pytest.mark.parametrize("row", ["-1,0,0", "60,30,10"])
def test_cases_errors(tmp_path, row):
    p = write(tmp_path, "c.csv", f"date,active,recovered,deaths\n2020-03-01,{row}\n")
    with pytest.raises(DataError):
        load_cases_csv(p, 100)


def test_index_loader(tmp_path):
    p = write(tmp_path, "i.csv", "date,close\n2020-03-02,3000\n2020-03-03,3010.5\n")
    x = load_index_csv(p)
    assert x.closes.tolist() == [3000.0, 3010.5]
    with pytest.raises(DataError):
        load_index_csv(write(tmp_path, "j.csv", "date,close\n2020-03-02,-1\n"))
    with pytest.raises(DataError, match="no such file"):
        load_index_csv(tmp_path / "nope.csv")


def _epi(n, start=D0):
    i = np.linspace(0.01, 0.02, n)
    states = np.column_stack([1 - i - 0.001, i, np.full(n, 0.001), np.zeros(n)])
    return EpidemicTimeSeries(tuple(days(n, start)), states, 1e6)


def test_align_constant_mobility():
    v = np.array([-0.3, -0.07, 0.06, -0.42, -0.4, 0.15])
    mob = MobilityTimeSeries(tuple(days(20)), np.tile(v, (20, 1)))
    ds = align(mob, _epi(20))
    defined = ~np.isnan(ds.mobility_ma[:, 0])
    assert defined.sum() == 16
    assert np.allclose(ds.mobility_ma[defined], v, atol=1e-15, rtol=0)


def test_align_moving_average_hand_value():
    vals = np.zeros((12, 6))
    vals[:5, 2] = [0.0, 0.1, 0.2, 0.3, 0.4]
    ds = align(MobilityTimeSeries(tuple(days(12)), vals), _epi(12))
    assert ds.mobility_ma[4, 2] == pytest.approx(0.2, abs=1e-15)
    assert np.isnan(ds.mobility_ma[3]).all()


def test_align_errors():
    mob = MobilityTimeSeries(tuple(days(20)), np.zeros((20, 6)))
    with pytest.raises(DataError, match="no mobility"):
        align(mob, _epi(15, start=D0 + dt.timedelta(days=10)))
    with pytest.raises(DataError, match="overlap"):
        align(mob, _epi(8))


@given(arrays(float, (15, 6), elements=st.floats(-0.5, 0.5)),
       arrays(float, (15, 6), elements=st.floats(-0.5, 0.5)))
def test_moving_average_linearity(a, b):
    lhs = moving_average(a + b)
    rhs = moving_average(a) + moving_average(b)
    assert np.allclose(lhs, rhs, atol=1e-15, equal_nan=True)


def test_aligned_csv_round_trip(tmp_path):
    p = synthetic_panel(n_days=30, seed=3)
    ds = align(p.mobility, p.epidemic, p.index)
    path = tmp_path / "aligned.csv"
    text = write_aligned_csv(ds, path)
    back = read_aligned_csv(path)
    assert back.dates == ds.dates
    for a, b in [(back.mobility, ds.mobility), (back.mobility_ma, ds.mobility_ma),
                 (back.epidemic, ds.epidemic), (back.index_close, ds.index_close)]:
        assert np.array_equal(a, b, equal_nan=True)
    assert write_aligned_csv(back) == text


def test_aligned_csv_round_trip_short_decimals(tmp_path):
    # values with at most 12 significant digits reproduce exactly
    p = synthetic_panel(n_days=30, seed=4)
    ds = align(p.mobility, p.epidemic, p.index)
    short = np.vectorize(lambda x: float(f"{x:.12g}"))
    path = tmp_path / "a.csv"
    ds2 = type(ds)(ds.dates, short(ds.mobility), short(ds.mobility_ma), ds.epidemic,
                   short(ds.index_close))
    write_aligned_csv(ds2, path)
    back = read_aligned_csv(path)
    assert np.array_equal(back.mobility, ds2.mobility)
    assert np.array_equal(back.index_close, ds2.index_close, equal_nan=True)


def test_loaded_epidemic_conserves_mass(tmp_path):
    paths = write_panel_csvs(synthetic_panel(n_days=40, seed=5), tmp_path)
    e = load_cases_csv(paths["cases"], 3.3e8)
    assert np.abs(e.states.sum(axis=1) - 1).max() <= 1e-12
