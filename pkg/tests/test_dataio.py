import hashlib
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from graybox_dryer import calib, dataio, pbm
from graybox_dryer.dataio import COLUMNS, Dataset
from graybox_dryer.errors import ConfigError, DomainError, SchemaError
from graybox_dryer.props import MaterialParams

BASE_ROW = {"t": 0.0, "T_hot_C": 160.0, "feed_kgph": 6600.0, "Xin_wb_pct": 21.0, "Tair_C": 30.0,
            "RH": 0.4, "w": 0.018, "flow_kgph": 6700.0, "y_moist_wb_pct": 15.0, "y_temp_C": 55.0}


def frame(n=10, t0=0.0, **over):
    rows = []
    for i in range(n):
        r = dict(BASE_ROW, t=t0 + i)
        r.update({k: (v[i] if isinstance(v, (list, np.ndarray)) else v) for k, v in over.items()})
        rows.append(r)
    return pd.DataFrame(rows, columns=list(COLUMNS))


def test_clean_rejects_and_counts():
    df = frame(4, y_moist_wb_pct=[10.9, 11.0, 15.0, 15.0], y_temp_C=[60.0, 50.0, 49.9, 55.0],
               flow_kgph=[6000.0, 5800.0, 5700.0, 6000.0])
    out = dataio.clean(Dataset([df]))
    kept = out.concat()
    assert list(kept["y_moist_wb_pct"]) == [11.0, 15.0]
    assert out.rejected == {"moisture_below_11pct": 1, "temperature_below_50C": 1,
                            "flow_below_5800kgph": 1, "total": 2}


def test_clean_empty_and_idempotent():
    empty = dataio.clean(Dataset([]))
    assert len(empty) == 0 and empty.rejected["total"] == 0
    df = frame(6, y_moist_wb_pct=[9, 12, 13, 10, 14, 15])
    once = dataio.clean(Dataset([df]))
    twice = dataio.clean(once)
    pd.testing.assert_frame_equal(once.concat(), twice.concat())
    assert twice.rejected["total"] == 0


def test_schema_check():
    with pytest.raises(SchemaError):
        Dataset([frame(3).drop(columns=["RH"])])


def test_unit_conversion_examples():
    assert dataio.wb_to_db(0.5) == 1.0
    assert dataio.wb_to_db(0.13) == pytest.approx(0.14943, abs=1e-5)
    x = dataio.convert_units({"flow_kgph": 5800.0, "T_hot_C": 0.0, "Xin_wb_pct": 50.0})
    assert x["flow_kgps"] == pytest.approx(1.6111, abs=1e-4)
    assert x["T_hot_K"] == 273.15
    assert x["Xin_db"] == 1.0
    with pytest.raises(DomainError):
        dataio.wb_to_db(1.0)


def test_unit_conversion_frame_round_trip():
    df = frame(5, Xin_wb_pct=np.linspace(18, 24, 5))
    back = dataio.to_boundary_units(dataio.convert_units(df))[list(COLUMNS)]
    np.testing.assert_allclose(back.to_numpy(), df.to_numpy(), rtol=1e-12)


@given(st.floats(0.0, 99.0), st.floats(-20.0, 300.0), st.floats(0.0, 20000.0))
def test_unit_conversion_invertible(xwb, tc, flow):
    row = {"Xin_wb_pct": xwb, "Tair_C": tc, "flow_kgph": flow}
    back = dataio.to_boundary_units(dataio.convert_units(row))
    for k, v in row.items():
        assert back[k] == pytest.approx(v, rel=1e-12, abs=1e-12)


def test_split_ten_samples():
    tr, te = dataio.split(Dataset([frame(10)]), 0.7)
    assert len(tr) == 7 and len(te) == 3
    assert tr.concat()["t"].max() < te.concat()["t"].min()


def test_split_cuts_straddling_batch():
    ds = Dataset([frame(6), frame(6, t0=100.0)], [4, 9])
    tr, te = dataio.split(ds, 0.75)
    assert tr.batch_ids == [4, 9] and te.batch_ids == [9]
    assert tr.segment_lengths() == [6, 3] and te.segment_lengths() == [3]


def test_split_full_train_warns():
    with pytest.warns(UserWarning):
        _, te = dataio.split(Dataset([frame(5)]), 1.0)
    assert len(te) == 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=1, max_size=5), st.floats(0.05, 0.95))
def test_split_preserves_each_sample_once(lengths, frac):
    t0, batches = 0.0, []
    for n in lengths:
        batches.append(frame(n, t0=t0))
        t0 += n + 50
    ds = Dataset(batches)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr, te = dataio.split(ds, frac)
    t = np.concatenate([tr.concat()["t"].to_numpy(), te.concat()["t"].to_numpy()])
    assert np.array_equal(t, ds.concat()["t"].to_numpy())
    if len(tr) and len(te):
        assert tr.concat()["t"].max() < te.concat()["t"].min()


def test_calibration_subset_sizes():
    sub = dataio.calibration_subset(Dataset([frame(2000), frame(3000, t0=5000.0)]))
    assert len(sub) == 300
    assert np.array_equal(sub.calib_index, np.arange(0, 3000, 10))
    assert np.all(np.diff(sub.calib_index) == 10)
    assert len(dataio.calibration_subset(Dataset([frame(1000)]))) == 100


def test_csv_round_trip_is_exact(tmp_path, small_data):
    ds, _ = small_data
    paths = dataio.save_dataset(ds, tmp_path)
    assert [p.name for p in paths] == ["batch_000.csv", "batch_001.csv", "batch_002.csv"]
    assert paths[0].read_text().splitlines()[0] == ",".join(COLUMNS)
    back = dataio.load_dataset(tmp_path)
    for a, b in zip(ds.batches, back.batches):
        assert np.array_equal(a[list(COLUMNS)].to_numpy(), b.to_numpy())


def test_load_dataset_missing_dir(tmp_path):
    with pytest.raises(SchemaError):
        dataio.load_dataset(tmp_path)


def _digest(ds):
    return hashlib.sha256(ds.concat().to_numpy().tobytes()).hexdigest()


def test_gen_synthetic_deterministic(small_data):
    ds, truth = small_data
    again, truth2 = dataio.gen_synthetic(dataio.ScenarioSpec(n_batches=3, samples_per_batch=500), seed=3)
    assert _digest(ds) == _digest(again) and truth == truth2
    other, _ = dataio.gen_synthetic(dataio.ScenarioSpec(n_batches=3, samples_per_batch=500), seed=4)
    assert _digest(other) != _digest(ds)


def test_gen_synthetic_sizes_and_time_order():
    ds, truth = dataio.gen_synthetic(dataio.ScenarioSpec(n_batches=4, samples_per_batch=50), seed=0)
    assert ds.segment_lengths() == [50] * 4
    t = ds.concat()["t"].to_numpy()
    assert np.all(np.diff(t) > 0)
    assert len(truth.fouling_depth) == 4
    assert dataio.ScenarioSpec().n_batches * dataio.ScenarioSpec().samples_per_batch == 63000


def test_ideal_plant_is_reproduced_exactly():
    scn = dataio.ScenarioSpec(n_batches=2, samples_per_batch=200).ideal()
    ds, _ = dataio.gen_synthetic(scn, seed=1)
    res = calib.pbm_outputs(ds, pbm.SectionConfig(), MaterialParams())
    np.testing.assert_allclose(res.outputs, ds.columns(dataio.Y_COLS), rtol=1e-12, atol=1e-12)


def test_fouling_leaves_low_frequency_residual():
    from graybox_dryer import diag
    scn = dataio.ScenarioSpec(n_batches=2, samples_per_batch=3000)
    ds, _ = dataio.gen_synthetic(scn, seed=2)
    res = calib.pbm_outputs(ds, pbm.SectionConfig(), MaterialParams())
    e = ds.columns(dataio.Y_COLS)[:, 0] - res.outputs[:, 0]
    assert diag.psd_welch(e).low_fraction > 0.5


def test_noise_is_ar1():
    rng = np.random.default_rng(0)
    x = dataio.ar1(rng, 200000, 0.9, 0.02)
    assert np.std(x) == pytest.approx(0.02, rel=0.05)
    assert np.corrcoef(x[:-1], x[1:])[0, 1] == pytest.approx(0.9, abs=0.01)


def test_first_order_lag_step_response():
    y = dataio.first_order_lag(np.ones(40), 6.0, 1.0, y0=0.0)
    np.testing.assert_allclose(y, 1.0 - np.exp(-np.arange(1, 41) / 6.0), rtol=1e-12)
    assert np.array_equal(dataio.first_order_lag([1.0, 2.0], 0.0, 1.0), [1.0, 2.0])


def test_truth_plant_without_noise_matches_batch_evaluation():
    scn = dataio.ScenarioSpec(noise_std_moist=0.0, noise_std_temp=0.0, actuator_tau=0.0)
    truth = dataio.truth_parameters(scn, pbm.SectionConfig(), MaterialParams(), seed=0)
    plant = dataio.TruthPlant(truth, sample_time=1.0)
    d = (21.0, 30.0, 0.4, 0.018, 6700.0)
    y = plant.step((160.0, 6600.0), d)
    req = plant.request((160.0, 6600.0), d)
    y2 = plant.observe(dataio.evaluate_requests([req], pbm.SectionConfig(), MaterialParams())[0])
    np.testing.assert_allclose(y, y2, rtol=1e-14)
    with pytest.raises(RuntimeError):
        plant.observe(y)


def test_scenario_config_round_trip_and_validation():
    scn = dataio.ScenarioSpec()
    assert dataio.ScenarioSpec.from_dict(scn.to_dict()) == scn
    with pytest.raises(ConfigError):
        dataio.ScenarioSpec.from_dict({"n_batchez": 3})
    with pytest.raises(ConfigError):
        dataio.ScenarioSpec(T_hot_range=(180.0, 120.0))
