import math

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st

from mola import data


def write_csv(path, rows, header):
    lines = [",".join(header)]
    lines += [",".join(str(x) for x in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def sine_spec(**over):
    base = dict(
        n_points=48,
        d_channels=1,
        components=(data.SynthComponent(kind="sine", amplitude=1.0, period=24.0, phase=0.3),),
        noise_std=0.0,
        seed=0,
    )
    base.update(over)
    return data.SynthSpec(**base)


# --- synthetic generation ---


def test_sine_periodicity():
    ds = data.generate_synthetic(sine_spec())
    assert ds.values.shape == (48, 1)
    assert ds.values[0, 0] == pytest.approx(math.sin(0.3), abs=1e-12)
    assert abs(ds.values[24, 0] - ds.values[0, 0]) <= 1e-12


def test_synthetic_determinism():
    spec = sine_spec(noise_std=0.5, d_channels=3, seed=9)
    a = data.generate_synthetic(spec)
    b = data.generate_synthetic(spec)
    assert np.array_equal(a.values, b.values)


def test_ar1_lag1_autocorrelation():
    # Monte-Carlo check against AR(1) theory: with coeff 0.9 and small
    # observation noise the sample lag-1 autocorrelation stays near 0.9.
    spec = data.SynthSpec(
        n_points=10_000,
        d_channels=1,
        components=(data.SynthComponent(kind="ar1", amplitude=1.0, ar_coeff=0.9),),
        noise_std=0.1,
        seed=4,
    )
    x = data.generate_synthetic(spec).values[:, 0]
    x = x - x.mean()
    rho = float((x[1:] @ x[:-1]) / (x @ x))
    assert 0.85 <= rho <= 0.95


def test_trend_component_is_monotone():
    spec = sine_spec(
        components=(data.SynthComponent(kind="trend", amplitude=2.0),), n_points=10
    )
    v = data.generate_synthetic(spec).values[:, 0]
    assert v[0] == 0.0
    assert v[-1] == pytest.approx(2.0)
    assert np.all(np.diff(v) > 0)


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        data.SynthSpec(n_points=0, d_channels=1, components=(), seed=0)
    with pytest.raises(ValueError):
        sine_spec(components=(data.SynthComponent(kind="sine", period=0.0),))
    with pytest.raises(ValueError):
        sine_spec(components=(data.SynthComponent(kind="ar1", ar_coeff=1.0),))
    with pytest.raises(ValueError):
        sine_spec(noise_std=-0.1)
    with pytest.raises(ValueError):
        sine_spec(components=(data.SynthComponent(kind="square"),))


def test_default_synth_spec_is_two_channel_mixed():
    spec = data.default_synth_spec()
    assert spec.d_channels == 2
    kinds = [c.kind for c in spec.components]
    assert kinds.count("sine") == 2 and "trend" in kinds
    assert spec.noise_std == 0.1
    ds = data.generate_synthetic(spec)
    assert ds.values.shape == (spec.n_points, 2)
    # channels must not be identical copies
    assert not np.allclose(ds.values[:, 0], ds.values[:, 1])


# --- csv loading ---


def test_load_csv_ratio_split(tmp_path):
    rows = [[f"t{i}", float(i), float(2 * i)] for i in range(10)]
    p = tmp_path / "small.csv"
    write_csv(p, rows, header=["date", "a", "b"])
    ds = data.load_csv(p, ratios=(0.7, 0.1, 0.2))
    assert ds.values.shape == (10, 2)
    assert ds.channel_names == ["a", "b"]
    assert ds.train_end == 7 and ds.val_end == 8
    assert ds.values[3, 1] == 6.0


def test_load_csv_explicit_counts(tmp_path):
    rows = [[f"t{i:02d}", float(i)] for i in range(20)]
    p = tmp_path / "counts.csv"
    write_csv(p, rows, header=["date", "a"])
    ds = data.load_csv(p, counts=(12, 3, 4))
    assert ds.values.shape == (19, 1)  # truncated to the requested total
    assert ds.train_end == 12 and ds.val_end == 15
    with pytest.raises(ValueError):
        data.load_csv(p, counts=(18, 2, 2))  # more rows than the file has


def test_load_csv_non_numeric_cell_names_row(tmp_path):
    rows = [[f"t{i}", float(i)] for i in range(10)]
    rows[4][1] = "oops"  # data row 5, 1-based
    p = tmp_path / "bad.csv"
    write_csv(p, rows, header=["date", "a"])
    with pytest.raises(ValueError, match="row 5"):
        data.load_csv(p, ratios=(0.7, 0.1, 0.2))


def test_load_csv_missing_value_is_hard_error(tmp_path):
    rows = [[f"t{i}", float(i), float(i)] for i in range(10)]
    rows[6][2] = ""
    p = tmp_path / "missing.csv"
    write_csv(p, rows, header=["date", "a", "b"])
    with pytest.raises(ValueError, match="row 7"):
        data.load_csv(p, ratios=(0.7, 0.1, 0.2))


def test_load_csv_non_monotone_timestamp_warns(tmp_path):
    rows = [[f"t{i}", float(i)] for i in range(10)]
    rows[3][0] = "t0"
    p = tmp_path / "swap.csv"
    write_csv(p, rows, header=["date", "a"])
    with pytest.warns(UserWarning, match="monoton"):
        data.load_csv(p, ratios=(0.7, 0.1, 0.2))


def test_load_csv_requires_exactly_one_split_mode(tmp_path):
    rows = [[f"t{i}", float(i)] for i in range(10)]
    p = tmp_path / "x.csv"
    write_csv(p, rows, header=["date", "a"])
    with pytest.raises(ValueError):
        data.load_csv(p)
    with pytest.raises(ValueError):
        data.load_csv(p, ratios=(0.7, 0.1, 0.2), counts=(7, 1, 2))


# --- standardization ---


def make_ds(n=50, d=2, seed=0):
    spec = data.SynthSpec(
        n_points=n,
        d_channels=d,
        components=(
            data.SynthComponent(kind="sine", amplitude=1.0, period=12.0),
            data.SynthComponent(kind="trend", amplitude=3.0),
        ),
        noise_std=0.2,
        seed=seed,
    )
    return data.generate_synthetic(spec)


def test_standardize_train_stats():
    ds = data.standardize(make_ds())
    train = ds.values[: ds.train_end]
    assert np.all(np.abs(train.mean(axis=0)) <= 1e-10)
    assert np.all(np.abs(train.std(axis=0) - 1.0) <= 1e-10)
    # stats come from the train split only, so val/test are generally off-center
    assert np.any(np.abs(ds.values[ds.train_end :].mean(axis=0)) > 1e-3)


def test_standardize_round_trip():
    raw = make_ds()
    ds = data.standardize(raw)
    back = data.destandardize(ds.values, ds.norm_stats)
    assert np.allclose(back, raw.values, atol=1e-10)


def test_standardize_rejects_constant_train_channel():
    raw = make_ds()
    vals = raw.values.copy()
    vals[: raw.train_end, 1] = 5.0
    ds = data.SeriesDataset(
        values=vals,
        channel_names=raw.channel_names,
        train_end=raw.train_end,
        val_end=raw.val_end,
    )
    with pytest.raises(ValueError, match="channel"):
        data.standardize(ds)


def test_standardize_twice_rejected():
    ds = data.standardize(make_ds())
    with pytest.raises(ValueError):
        data.standardize(ds)


# --- windows ---


def test_window_count_formula_train():
    ds = make_ds(n=143)  # floor(143*0.7) = 100 train rows
    assert ds.train_end == 100
    ws = data.windows(ds, lookback=96, horizon=4, split="train")
    assert len(ws) == 1
    assert ws[0].origin == 95


def test_windows_reconstruct_from_origin():
    ds = make_ds(n=80)
    for split in ("train", "val", "test"):
        for w in data.windows(ds, lookback=5, horizon=3, split=split):
            n = w.origin
            assert np.array_equal(w.history, ds.values[n - 4 : n + 1])
            assert np.array_equal(w.label, ds.values[n + 1 : n + 4])


def test_windows_case_study_setting():
    ds = data.generate_synthetic(data.default_synth_spec())
    ws = data.windows(ds, lookback=16, horizon=32, split="test")
    assert len(ws) > 0
    assert ws[0].history.shape == (16, 2) and ws[0].label.shape == (32, 2)


def test_windows_no_leakage():
    ds = make_ds(n=120)
    L, T = 8, 4
    for w in data.windows(ds, L, T, "val"):
        assert w.origin + 1 >= ds.train_end  # labels stay inside val
    for w in data.windows(ds, L, T, "test"):
        assert w.origin - L + 1 >= ds.val_end - L
        assert w.origin + 1 >= ds.val_end


def test_windows_split_too_short():
    ds = make_ds(n=40)
    with pytest.raises(ValueError):
        data.windows(ds, lookback=16, horizon=32, split="val")
    with pytest.raises(ValueError):
        data.windows(ds, lookback=0, horizon=1, split="train")
    with pytest.raises(ValueError):
        data.windows(ds, lookback=2, horizon=2, split="middle")


@hyp_settings(max_examples=40)
@given(
    n=st.integers(40, 300),
    lookback=st.integers(1, 12),
    horizon=st.integers(1, 10),
    seed=st.integers(0, 100),
)
def test_window_counts_property(n, lookback, horizon, seed):
    ds = make_ds(n=n, seed=seed)
    train_len = ds.train_end
    val_len = ds.val_end - ds.train_end
    test_len = ds.values.shape[0] - ds.val_end
    expected = {
        "train": train_len - lookback - horizon + 1,
        "val": val_len - horizon + 1 if ds.train_end >= lookback else None,
        "test": test_len - horizon + 1 if ds.val_end >= lookback else None,
    }
    for split, want in expected.items():
        if want is None:
            continue
        if want <= 0:
            with pytest.raises(ValueError):
                data.windows(ds, lookback, horizon, split)
        else:
            assert len(data.windows(ds, lookback, horizon, split)) == want
