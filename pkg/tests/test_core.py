import numpy as np
import pytest
from hypothesis import given, strategies as st

from slice_attrib.core import (
    BoundConstants,
    InputError,
    ModelParams,
    TelemetryWindow,
    extract_pair,
    load_window,
    save_window,
    validate_window,
)


def make_window(t=20, n=3, k=2, d=2, seed=0):
    rng = np.random.default_rng(seed)
    alloc = rng.dirichlet(np.ones(n + 1), size=(t, k)).transpose(0, 2, 1)[:, :n, :]
    return TelemetryWindow(
        telemetry=rng.standard_normal((t, n, d)),
        allocation=np.ascontiguousarray(alloc),
        utilization=rng.uniform(0, 1, (t, k)),
    )


def test_well_formed_window_has_no_violations():
    assert validate_window(make_window()) == []


def test_oversubscribed_column_is_reported_at_its_index():
    w = make_window()
    alloc = w.allocation.copy()
    alloc[7, :, 1] = [0.4, 0.4, 0.4]
    v = validate_window(TelemetryWindow(w.telemetry, alloc, w.utilization))
    assert len(v) == 1
    assert v[0].field == "allocation" and v[0].index == (7, 1)
    assert v[0].value == pytest.approx(1.2)


def test_empty_horizon_is_reported():
    w = TelemetryWindow(np.zeros((0, 2, 1)), np.zeros((0, 2, 1)), np.zeros((0, 1)))
    msgs = [x.message for x in validate_window(w)]
    assert any("horizon" in m for m in msgs)


def test_out_of_range_and_nonfinite_entries():
    w = make_window()
    util = w.utilization.copy()
    util[3, 0] = 1.5
    tel = w.telemetry.copy()
    tel[2, 1, 0] = np.nan
    v = validate_window(TelemetryWindow(tel, w.allocation, util))
    fields = sorted(x.field for x in v)
    assert fields == ["telemetry", "utilization"]


def test_simplex_tolerance_accepts_rounding():
    w = make_window(n=2, k=1)
    alloc = np.full_like(w.allocation, 0.5)
    alloc[0, 0, 0] += 5e-10
    assert validate_window(TelemetryWindow(w.telemetry, alloc, w.utilization)) == []


def test_extract_pair_projects_columns():
    w = make_window()
    ps = extract_pair(w, 0, 1, 0)
    assert ps.horizon == w.horizon
    np.testing.assert_array_equal(ps.x, w.telemetry[:, 0, 0])
    np.testing.assert_array_equal(ps.y, w.telemetry[:, 1, 0])
    np.testing.assert_array_equal(ps.z, w.utilization)


def test_extract_pair_errors():
    w = make_window(d=2)
    with pytest.raises(InputError, match="self-pair"):
        extract_pair(w, 2, 2, 0)
    with pytest.raises(IndexError):
        extract_pair(w, 0, 1, coord=2)
    with pytest.raises(IndexError):
        extract_pair(w, 0, 3)


@given(st.integers(0, 2), st.integers(0, 2), st.integers(0, 1))
def test_extract_pair_is_pure_and_idempotent(i, j, c):
    if i == j:
        return
    w = make_window()
    before = w.telemetry.copy()
    a = extract_pair(w, i, j, c)
    a.x[:] = 99.0  # returned arrays are copies
    b = extract_pair(w, i, j, c)
    np.testing.assert_array_equal(w.telemetry, before)
    np.testing.assert_array_equal(b.y, extract_pair(w, i, j, c).y)


def test_window_roundtrip(tmp_path):
    w = make_window(t=13, n=4, k=3, d=2, seed=3)
    load = load_window(save_window(w, tmp_path / "w"))
    np.testing.assert_array_equal(load.telemetry, w.telemetry)
    np.testing.assert_array_equal(load.allocation, w.allocation)
    np.testing.assert_array_equal(load.utilization, w.utilization)


def test_load_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_window(tmp_path / "nope")


def test_params_validation_and_roundtrip():
    p = ModelParams()
    assert ModelParams.from_dict(p.to_dict()) == p
    with pytest.raises(InputError):
        ModelParams(omega1=0.5, omega2=0.4)
    with pytest.raises(InputError):
        ModelParams(w=(0.5, -0.1, 0.2))
    with pytest.raises(InputError):
        BoundConstants(sigma_gamma=0.5)
