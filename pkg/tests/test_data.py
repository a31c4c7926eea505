import math

import numpy as np
import pytest

from swimquad.data import (
    COLUMNS,
    FS,
    Grid,
    GridError,
    InsufficientLength,
    NoiseSpec,
    RecordSet,
    SamplingError,
    SchemaError,
    gait_record_set,
    interpolate_velocity,
    load_force_log,
    lowpass,
    make_windows,
    preprocess,
    read_log_meta,
    split_dataset,
    synth_generate,
    synthetic_wrench,
    windows_for,
    write_force_log,
)
from swimquad.hydro import EfParams
from swimquad.kinematics import GaitParams, LinkageGeometry

SMALL = Grid(theta_H_min_deg=(10.0, -30.0), theta_K_max_deg=(-20.0, -60.0), freq=(0.6,),
             phi=(math.pi / 3,), speeds=(0.0, 0.1, 0.2, 0.3))


@pytest.fixture(scope="module")
def small_sets():
    return synth_generate(SMALL, seed=5)


def test_log_roundtrip_is_exact(tmp_path, small_sets):
    path = tmp_path / "log.csv"
    write_force_log(path, small_sets[:3], meta={"note": "x"})
    back = load_force_log(path)
    assert [s.set_id for s in back] == [s.set_id for s in small_sets[:3]]
    for a, b in zip(small_sets, back):
        np.testing.assert_array_equal(a.data, b.data)
        assert a.params_key == b.params_key and a.V_flow == b.V_flow
    assert read_log_meta(path) == {"note": "x"}


def test_record_accessor(small_sets):
    r = small_sets[0].record(3)
    assert r.t == pytest.approx(3 / FS)
    np.testing.assert_array_equal(r.wrench, small_sets[0].wrench[3])


def _log_lines(small_sets, tmp_path):
    path = tmp_path / "ok.csv"
    write_force_log(path, small_sets[:1])
    return path.read_text().splitlines()


def test_bad_header_rejected(tmp_path, small_sets):
    lines = _log_lines(small_sets, tmp_path)
    lines[2] = lines[2].replace("theta_H", "theta_h")
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(lines))
    with pytest.raises(SchemaError, match="unexpected header"):
        load_force_log(p)


def test_short_row_rejected_with_line_number(tmp_path, small_sets):
    lines = _log_lines(small_sets, tmp_path)
    lines[5] = ",".join(lines[5].split(",")[:-1])
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(lines))
    with pytest.raises(SchemaError, match=":6: expected 12 columns"):
        load_force_log(p)


def test_missing_rate_rejected(tmp_path, small_sets):
    lines = [ln for ln in _log_lines(small_sets, tmp_path) if not ln.startswith("# fs=")]
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(lines))
    with pytest.raises(SchemaError, match="fs="):
        load_force_log(p)


def test_irregular_sampling_rejected(tmp_path, small_sets):
    rs = small_sets[0]
    data = rs.data.copy()
    data[10:, 0] += 0.5 / FS
    p = tmp_path / "gap.csv"
    write_force_log(p, [RecordSet(rs.params, rs.V_flow, data, rs.set_id)])
    with pytest.raises(SamplingError):
        load_force_log(p)


def test_lowpass_keeps_dc_and_kills_high_frequency():
    t = np.arange(2000) / FS
    x = 1.5 + np.sin(2 * math.pi * 25.0 * t)
    y = lowpass(x)
    assert np.max(np.abs(y[200:-200] - 1.5)) < 0.01


def test_lowpass_is_zero_phase_and_half_power_at_cutoff():
    t = np.arange(4000) / FS
    x = np.sin(2 * math.pi * 6.0 * t)
    y = lowpass(x)
    mid = slice(1000, 3000)
    # forward-backward squares the magnitude response: |H(fc)|^2 = 1/2
    gain = np.dot(y[mid], x[mid]) / np.dot(x[mid], x[mid])
    assert gain == pytest.approx(0.5, abs=0.01)
    resid = y[mid] - gain * x[mid]
    assert np.max(np.abs(resid)) < 0.01


def test_lowpass_needs_samples():
    with pytest.raises(InsufficientLength):
        lowpass(np.zeros(9))
    with pytest.raises(ValueError):
        lowpass(np.zeros(100), cutoff=40.0)


def _quadratic_family(speeds):
    g = GaitParams.from_degrees(-10, -40, 0.5)
    sets = []
    n = 400
    t = np.arange(n) / FS
    base = np.stack([np.sin(2 * math.pi * 0.5 * t + k) for k in range(6)], axis=1)
    for v in speeds:
        rs = gait_record_set(g, v, n=n, set_id=f"g0@{v:g}")
        sets.append(rs.with_wrench(base * (1.0 + 3.0 * v - 7.0 * v * v) + 0.2 * v))
    return sets


def test_interpolation_matches_polyfit_oracle():
    speeds = (0.0, 0.1, 0.2, 0.3)
    sets = _quadratic_family(speeds)
    out = interpolate_velocity(sets, (0.05, 0.15, 0.25))
    for rs in out:
        near = sorted(sorted(speeds, key=lambda v: (abs(v - rs.V_flow), v))[:3])
        stack = np.stack([next(s for s in sets if s.V_flow == v).wrench for v in near])
        coef = np.polyfit(near, stack.reshape(3, -1), 2)
        raw = np.polyval(coef, rs.V_flow).reshape(stack.shape[1:])
        np.testing.assert_allclose(rs.wrench, lowpass(raw), atol=1e-10)
        np.testing.assert_array_equal(rs.inputs[:, 0], rs.V_flow)
        assert rs.set_id == f"g0@{rs.V_flow:g}"


def test_interpolation_errors():
    sets = _quadratic_family((0.0, 0.1))
    with pytest.raises(GridError, match=">= 3"):
        interpolate_velocity(sets)
    other = _quadratic_family((0.0, 0.1, 0.2))
    other[1] = gait_record_set(GaitParams.from_degrees(10, -20, 0.3), 0.1, n=400)
    with pytest.raises(GridError, match="sharing"):
        interpolate_velocity(other)
    with pytest.raises(GridError):
        interpolate_velocity([])


def test_preprocess_adds_three_speeds_per_gait(small_sets):
    out = preprocess(small_sets)
    assert len(out) == len(small_sets) + 3 * 4
    assert sorted({s.V_flow for s in out}) == [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3]


def test_windows_align_with_rows(small_sets):
    rs = small_sets[1]
    w = make_windows(rs, 16)
    assert len(w) == len(rs) - 15
    k = 37
    np.testing.assert_array_equal(w.inputs[k], rs.inputs[k:k + 16])
    np.testing.assert_array_equal(w.targets[k], rs.wrench[k + 15])
    assert w.row[k] == k + 15
    assert w[k].set_id == rs.set_id
    with pytest.raises(InsufficientLength):
        make_windows(gait_record_set(rs.params, 0.0, n=10), 16)


def test_windows_concat(small_sets):
    w = windows_for(small_sets[:2])
    assert len(w) == sum(len(s) - 15 for s in small_sets[:2])
    assert w.inputs.shape[1:] == (16, 5)


def test_split_keeps_gaits_whole_and_is_seeded():
    grid = Grid(theta_H_min_deg=(10.0, -10.0, -30.0, -50.0), theta_K_max_deg=(-20.0, -40.0, -60.0),
                freq=(0.6,), phi=(math.pi / 3,), speeds=(0.0, 0.1, 0.2, 0.3))
    sets = synth_generate(grid, NoiseSpec.silent())
    tr, va, te = split_dataset(sets, seed=1)
    assert (len(tr), len(va), len(te)) == (8 * 4, 1 * 4, 3 * 4)
    keys = [{s.params_key for s in part} for part in (tr, va, te)]
    assert not (keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2])
    again = split_dataset(sets, seed=1)
    assert [s.set_id for s in again[2]] == [s.set_id for s in te]
    assert any([s.set_id for s in split_dataset(sets, seed=s)[2]] != [s.set_id for s in te]
               for s in range(2, 6))
    with pytest.raises(ValueError):
        split_dataset(sets[:9], seed=0)


def test_synth_is_deterministic_and_silent_equals_ef(small_sets):
    again = synth_generate(SMALL, seed=5)
    for a, b in zip(small_sets, again):
        np.testing.assert_array_equal(a.data, b.data)
    different = synth_generate(SMALL, seed=6)
    assert not np.array_equal(small_sets[0].wrench, different[0].wrench)
    silent = synth_generate(SMALL, NoiseSpec.silent(), seed=5)
    rs = silent[5]
    ef = synthetic_wrench(rs, EfParams(), LinkageGeometry(), NoiseSpec.silent(), None)
    np.testing.assert_array_equal(rs.wrench, ef)


def test_grid_size_and_columns():
    assert len(Grid()) == 4 * 4 * 4 * 5 * 4
    assert len(Grid().gaits()) == 320
    assert COLUMNS[0] == "t" and len(COLUMNS) == 12
