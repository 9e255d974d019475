import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from derivedbayes.dataset import (
    Dataset,
    DerivedDefinition,
    VariableSpec,
    derive_outcome,
    derived_definition,
    load_csv,
    pattern_table,
    registered_names,
    write_csv,
)
from derivedbayes.growth import hc_zscore, is_microcephalic
from derivedbayes.synthetic import BOYS_SPECS, SIM_SPECS

TABLE = """group,y,z1,z2
A,NA,NA,1.71
A,1.59,-0.08,1.68
A,NA,1.23,NA
B,2.40,2.20,0.20
B,4.49,2.35,2.14
B,3.53,0.49,3.03
"""


@pytest.fixture
def six_rows(tmp_path):
    p = tmp_path / "six.csv"
    p.write_text(TABLE)
    specs = [*SIM_SPECS, VariableSpec("y", "derived", definition=derived_definition("sum2"))]
    return load_csv(p, specs)


def test_load_marks_na_cells(six_rows):
    ds = six_rows
    assert ds.n == 6
    assert not ds.observed("y")[0] and not ds.observed("z1")[0]
    assert ds.observed("z2")[0] and ds["z2"][0] == 1.71
    assert list(ds["group"]) == [0, 0, 0, 1, 1, 1]
    assert sorted(ds.missing_vars) == ["y", "z1", "z2"]


def test_fully_observed_file(tmp_path):
    p = tmp_path / "full.csv"
    p.write_text("group,z1,z2\nA,1,2\nB,3,4\n")
    ds = load_csv(p, SIM_SPECS)
    assert ds.missing_vars == []
    assert all(ds.observed(n).all() for n in ds.names)


def test_load_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("group,z1\nA,1\n")
    with pytest.raises(ValueError, match="z2"):
        load_csv(p, SIM_SPECS)
    p.write_text("group,z1,z2\nA,abc,1\n")
    with pytest.raises(ValueError, match="non-numeric"):
        load_csv(p, SIM_SPECS)
    p.write_text("group,z1,z2\n2,1,1\n")
    with pytest.raises(ValueError, match="binary"):
        load_csv(p, SIM_SPECS)


def test_custom_na_token(tmp_path):
    p = tmp_path / "dot.csv"
    p.write_text("group,z1,z2\nA,.,1\n")
    ds = load_csv(p, SIM_SPECS, na_token=".")
    assert ds.n_missing("z1") == 1


def test_derive_sum():
    ds = Dataset.from_arrays(SIM_SPECS, {"group": [0, 0], "z1": [-0.08, np.nan], "z2": [1.68, 1.0]})
    out = derive_outcome(ds, derived_definition("sum2"), "y")
    assert out["y"][0] == pytest.approx(1.60)
    assert not out.observed("y")[1]
    assert out.spec("y").role == "derived"


def test_derive_logbmi_unit_case():
    d = derived_definition("logbmi")
    assert d(np.array(100.0), np.array(math.e)) == pytest.approx(1.0, abs=1e-15)


@given(
    z1=st.floats(1.0, 250.0),
    z2=st.floats(0.5, 200.0),
)
def test_logbmi_identity(z1, z2):
    f = derived_definition("logbmi")
    assert f(z1, z2) == pytest.approx(math.log(z2) - 2 * math.log(z1) + 2 * math.log(100), abs=1e-12)


def test_registry():
    assert {"sum2", "logbmi", "identity", "microcephaly"} <= set(registered_names())
    with pytest.raises(KeyError):
        derived_definition("nope")
    with pytest.raises(ValueError):
        DerivedDefinition("empty", (), lambda: 0)


def test_derive_needs_sources():
    ds = Dataset.from_arrays(SIM_SPECS, {"group": [0], "z1": [1.0], "z2": [1.0]})
    with pytest.raises(KeyError):
        derive_outcome(ds, derived_definition("logbmi"), "bmi")


def test_pattern_table_six_rows(six_rows):
    pt = pattern_table(six_rows, ["z1", "z2"])
    assert pt.as_dict() == {(False, True): 1, (True, False): 1, (True, True): 4}
    assert pt.n == 6
    assert pt.rows[0][1] == (True, True)


def test_pattern_table_fully_observed():
    ds = Dataset.from_arrays(SIM_SPECS, {"group": [0, 1, 1], "z1": [1, 2, 3], "z2": [1, 2, 3]})
    assert pattern_table(ds, ["z1", "z2"]).as_dict() == {(True, True): 3}


def test_pattern_counts_boys_shape():
    rng = np.random.default_rng(0)
    n = 537
    data = {"age": rng.uniform(0, 20, n), "city": (rng.random(n) < 0.09).astype(float), "hgt": rng.normal(150, 20, n), "wgt": rng.normal(40, 10, n)}
    data["city"][[5]] = np.nan
    data["hgt"][20:38] = np.nan
    data["wgt"][[100, 200]] = np.nan
    ds = Dataset.from_arrays(BOYS_SPECS, data)
    pt = pattern_table(ds, ["city", "hgt", "wgt"])
    assert pt.n == 537
    assert sum(c for f, c in pt.as_dict().items() if not f[1]) == 18
    assert sum(c for f, c in pt.as_dict().items() if not f[2]) == 2
    assert pt.count((True, True, True)) == 537 - 21


def test_dataset_validation():
    with pytest.raises(ValueError, match="duplicate"):
        Dataset.from_arrays([VariableSpec("a"), VariableSpec("a")], {"a": [1.0]})
    with pytest.raises(ValueError, match="binary"):
        Dataset.from_arrays([VariableSpec("b", kind="binary")], {"b": [0.5]})
    with pytest.raises(ValueError):
        Dataset.from_arrays([VariableSpec("a"), VariableSpec("c")], {"a": [1.0], "c": [1.0, 2.0]})


def test_columns_are_read_only(six_rows):
    with pytest.raises(ValueError):
        six_rows["z1"][0] = 3.0


column = hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e6, 1e6) | st.just(np.nan))


@st.composite
def datasets(draw):
    z1 = draw(column)
    n = z1.size
    z2 = draw(hnp.arrays(np.float64, n, elements=st.floats(-1e6, 1e6) | st.just(np.nan)))
    g = draw(hnp.arrays(np.float64, n, elements=st.sampled_from([0.0, 1.0, np.nan])))
    return Dataset.from_arrays(SIM_SPECS, {"group": g, "z1": z1, "z2": z2})


@given(ds=datasets())
@settings(max_examples=40, deadline=None)
def test_csv_round_trip(tmp_path_factory, ds):
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(ds, p)
    back = load_csv(p, SIM_SPECS)
    assert back.equals(ds)
    for n in ds.names:
        m = ds.observed(n)
        assert np.array_equal(back[n][m].view(np.int64), ds[n][m].view(np.int64))


@given(ds=datasets())
@settings(max_examples=40, deadline=None)
def test_derive_idempotent_and_na_iff_source_na(ds):
    d = derived_definition("sum2")
    once = derive_outcome(ds, d, "y")
    twice = derive_outcome(once, d, "y")
    assert once.equals(twice)
    assert np.array_equal(once.observed("y"), ds.observed("z1") & ds.observed("z2"))


def test_zscore_centered_case():
    assert hc_zscore(0, 39.0, 33.912) == pytest.approx(0.0, abs=1e-12)


def test_microcephaly_boundary_is_strict():
    from derivedbayes.growth import DEFAULT_STANDARD as std

    hc = std.mean(1, 38.0) - 2.0 * std.sd
    assert hc_zscore(1, 38.0, hc) == pytest.approx(-2.0, abs=1e-12)
    # nudge in both directions around the boundary
    assert is_microcephalic(1, 38.0, hc + 1e-9) == 0.0
    assert is_microcephalic(1, 38.0, hc - 1e-9) == 1.0


def test_zscore_range_check():
    with pytest.raises(ValueError):
        hc_zscore(0, 20.0, 30.0)
    assert np.isfinite(hc_zscore(0, 20.0, 30.0, check_range=False))


@given(
    sex=st.sampled_from([0, 1]),
    ga=st.floats(24, 45),
    hc=st.floats(20, 45),
    dh=st.floats(0.01, 5),
)
def test_zscore_monotone_in_head_circumference(sex, ga, hc, dh):
    assert hc_zscore(sex, ga, hc + dh) > hc_zscore(sex, ga, hc)


def test_zscore_continuous_in_ga():
    ga = np.linspace(24, 45, 10001)
    z = hc_zscore(0, ga, 33.0)
    assert np.max(np.abs(np.diff(z))) < 5e-3


def test_healthy_cohort_rate():
    from derivedbayes.growth import DEFAULT_STANDARD as std

    rng = np.random.default_rng(4)
    n = 200_000
    sex = (rng.random(n) < 0.5).astype(float)
    ga = np.clip(rng.normal(39, 1.5, n), 24, 45)
    hc = rng.normal(std.mean(sex, ga), std.sd)
    rate = is_microcephalic(sex, ga, hc).mean()
    assert abs(rate - 0.0228) < 0.003
