import numpy as np
import pytest

from mola import data, model


def make_batch(lookback, horizon, d, n, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(lookback + horizon + n, d))
    ds = data.SeriesDataset(
        values=vals,
        channel_names=[f"c{i}" for i in range(d)],
        train_end=vals.shape[0] - 1,
        val_end=vals.shape[0],
    )
    return data.windows(ds, lookback, horizon, "train")


def linear_spec(lookback, activation="relu"):
    return model.EncoderSpec(kind="linear", in_len=lookback, activation=activation)


def mlp_spec(lookback, h1=6, rep=3, activation="tanh"):
    return model.EncoderSpec(kind="mlp2", in_len=lookback, hidden=(h1, rep), activation=activation)


def forward_by_hand(m, history):
    """Independent recomputation: per-channel loops, no batched reshapes."""
    spec = m.encoder_spec
    acts = {"relu": lambda z: np.maximum(z, 0.0), "tanh": np.tanh}[spec.activation]
    n_layers = 1 if spec.kind == "linear" else 2
    d = history.shape[1]
    rep = np.zeros((spec.rep_dim, d))
    for c in range(d):
        x = history[:, c]
        for i in range(n_layers):
            w = m.params.get(f"enc{i}.w")
            b = m.params.get(f"enc{i}.b")
            z = w @ x + b
            x = acts(z) if i < n_layers - 1 else z
        rep[:, c] = x
    wh, bh = m.params.get("head.w"), m.params.get("head.b")
    out = np.zeros((m.head_out, d))
    for c in range(d):
        out[:, c] = wh @ rep[:, c] + bh
    return rep, out


def fd_gradient(m, batch, target_slice, name, h=1e-5):
    arr = m.params.get(name)
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        keep = arr[idx]
        arr[idx] = keep + h
        up = model.mse_loss(m, batch, target_slice)
        arr[idx] = keep - h
        down = model.mse_loss(m, batch, target_slice)
        arr[idx] = keep
        grad[idx] = (up - down) / (2.0 * h)
    return grad


# --- specs and construction ---


def test_encoder_spec_validation():
    with pytest.raises(ValueError):
        model.EncoderSpec(kind="mlp2", in_len=8, hidden=(4,))
    with pytest.raises(ValueError):
        model.EncoderSpec(kind="linear", in_len=8, hidden=(4,))
    with pytest.raises(ValueError):
        model.EncoderSpec(kind="cnn", in_len=8)
    with pytest.raises(ValueError):
        model.EncoderSpec(kind="linear", in_len=0)
    with pytest.raises(ValueError):
        model.EncoderSpec(kind="linear", in_len=8, activation="gelu")
    with pytest.raises(ValueError):
        model.EncoderSpec(kind="linear", in_len=8, channel_mode="independent")
    assert mlp_spec(16, 16, 2).rep_dim == 2
    assert linear_spec(16).rep_dim == 16


def test_new_model_init_and_determinism():
    spec = mlp_spec(8, 6, 3)
    m = model.new_model(spec, head_out=4, seed=5)
    assert m.params.get("enc0.w").shape == (6, 8)
    assert m.params.get("enc1.w").shape == (3, 6)
    assert m.params.get("head.w").shape == (4, 3)
    for name in ("enc0.b", "enc1.b", "head.b"):
        assert np.all(m.params.get(name) == 0.0)
    for name, fan_in in (("enc0.w", 8), ("enc1.w", 6), ("head.w", 3)):
        assert np.all(np.abs(m.params.get(name)) <= 1.0 / np.sqrt(fan_in))
    m2 = model.new_model(spec, head_out=4, seed=5)
    for name in m.params.names():
        assert np.array_equal(m.params.get(name), m2.params.get(name))


# --- forward paths ---


def test_encode_identity_linear():
    m = model.new_model(linear_spec(5), head_out=2, seed=0)
    m.params.get("enc0.w")[:] = np.eye(5)
    m.params.get("enc0.b")[:] = 0.0
    hist = np.random.default_rng(1).normal(size=(5, 3))
    assert np.array_equal(model.encode(m, hist), hist)


def test_encode_mlp2_zero_final_weights():
    m = model.new_model(mlp_spec(6, 4, 2), head_out=1, seed=0)
    m.params.get("enc1.w")[:] = 0.0
    m.params.get("enc1.b")[:] = np.array([0.5, -1.5])
    hist = np.random.default_rng(2).normal(size=(6, 4))
    rep = model.encode(m, hist)
    assert rep.shape == (2, 4)
    assert np.allclose(rep, np.array([[0.5], [-1.5]]))


def test_forward_matches_independent_recomputation():
    for seed in range(4):
        for spec in (linear_spec(7), mlp_spec(7, 5, 3, "relu"), mlp_spec(7, 5, 3, "tanh")):
            m = model.new_model(spec, head_out=4, seed=seed)
            hist = np.random.default_rng(100 + seed).normal(size=(7, 3))
            rep_ref, out_ref = forward_by_hand(m, hist)
            assert np.allclose(model.encode(m, hist), rep_ref, atol=1e-12)
            assert np.allclose(model.forecast(m, hist), out_ref, atol=1e-12)


def test_decode_constant_head():
    m = model.new_model(linear_spec(4), head_out=3, seed=0)
    m.params.get("head.w")[:] = 0.0
    m.params.get("head.b")[:] = np.array([1.0, 2.0, 3.0])
    rep = np.random.default_rng(0).normal(size=(4, 2))
    out = model.decode(m, rep)
    assert np.allclose(out, np.array([[1.0], [2.0], [3.0]]) @ np.ones((1, 2)))


def test_single_output_head_shape():
    m = model.new_model(linear_spec(4), head_out=1, seed=0)
    out = model.forecast(m, np.zeros((4, 2)))
    assert out.shape == (1, 2)


def test_channel_permutation_equivariance():
    m = model.new_model(mlp_spec(6, 5, 2), head_out=3, seed=3)
    hist = np.random.default_rng(4).normal(size=(6, 4))
    perm = [2, 0, 3, 1]
    out = model.forecast(m, hist)
    out_perm = model.forecast(m, hist[:, perm])
    assert np.array_equal(out[:, perm], out_perm)


def test_forward_shape_errors():
    m = model.new_model(linear_spec(4), head_out=2, seed=0)
    with pytest.raises(ValueError):
        model.encode(m, np.zeros((5, 2)))
    with pytest.raises(ValueError):
        model.decode(m, np.zeros((3, 2)))


# --- loss and gradients ---


def test_loss_zero_at_perfect_fit():
    m = model.new_model(mlp_spec(5, 4, 2), head_out=3, seed=1)
    hist = np.random.default_rng(5).normal(size=(5, 2))
    label = model.forecast(m, hist)
    batch = [data.WindowSample(history=hist, label=label, origin=4)]
    loss, grads = model.loss_and_grads(m, batch)
    assert loss == pytest.approx(0.0, abs=1e-24)
    for g in grads.values():
        assert np.allclose(g, 0.0, atol=1e-12)


def test_closed_form_single_linear_layer():
    # freeze the encoder at identity so the head is the only live layer
    m = model.new_model(linear_spec(3), head_out=2, seed=0)
    m.params.get("enc0.w")[:] = np.eye(3)
    m.params.get("enc0.b")[:] = 0.0
    m.params.set_trainable("enc0.w", False)
    m.params.set_trainable("enc0.b", False)
    rng = np.random.default_rng(6)
    hist = rng.normal(size=(3, 1))
    label = rng.normal(size=(2, 1))
    batch = [data.WindowSample(history=hist, label=label, origin=2)]
    loss, grads = model.loss_and_grads(m, batch)
    pred = model.forecast(m, hist)
    norm = label.size
    assert set(grads) == {"head.w", "head.b"}
    assert np.allclose(grads["head.w"], 2.0 * (pred - label) @ hist.T / norm, atol=1e-12)
    assert np.allclose(grads["head.b"], (2.0 * (pred - label) / norm).sum(axis=1), atol=1e-12)


@pytest.mark.parametrize(
    "spec_fn",
    [
        lambda: linear_spec(6),
        lambda: mlp_spec(6, 5, 3, "tanh"),
        lambda: mlp_spec(6, 5, 3, "relu"),
    ],
)
def test_gradients_match_finite_differences(spec_fn):
    for seed in range(3):
        m = model.new_model(spec_fn(), head_out=4, seed=seed)
        batch = make_batch(6, 4, 2, n=5, seed=200 + seed)
        _, grads = model.loss_and_grads(m, batch)
        for name in m.params.trainable_names():
            fd = fd_gradient(m, batch, None, name)
            denom = np.maximum(np.maximum(np.abs(fd), np.abs(grads[name])), 1e-8)
            assert np.max(np.abs(grads[name] - fd) / denom) <= 1e-5, name


def test_target_slice_selects_steps():
    m = model.new_model(linear_spec(4), head_out=2, seed=2)
    batch = make_batch(4, 6, 1, n=3, seed=7)
    loss_a = model.mse_loss(m, batch, target_slice=(3, 4))
    hand = []
    for w in batch:
        pred = model.forecast(m, w.history)
        hand.append((pred - w.label[2:4]) ** 2)
    assert loss_a == pytest.approx(float(np.mean(hand)), rel=1e-12)
    with pytest.raises(ValueError):
        model.mse_loss(m, batch, target_slice=(1, 3))  # length 3 != head_out
    with pytest.raises(ValueError):
        model.mse_loss(m, batch, target_slice=(6, 7))  # runs past the label
    with pytest.raises(ValueError):
        model.loss_and_grads(m, [])


def test_frozen_entries_get_no_gradient_buffer():
    m = model.new_model(mlp_spec(5, 4, 2), head_out=2, seed=0)
    m.params.set_trainable("enc0.w", False)
    m.params.set_trainable("head.b", False)
    _, grads = model.loss_and_grads(m, make_batch(5, 2, 2, n=4, seed=8))
    assert "enc0.w" not in grads and "head.b" not in grads
    assert "enc1.w" in grads


def test_loss_and_grads_deterministic():
    m = model.new_model(mlp_spec(5, 4, 2), head_out=2, seed=9)
    batch = make_batch(5, 2, 3, n=6, seed=9)
    l1, g1 = model.loss_and_grads(m, batch)
    l2, g2 = model.loss_and_grads(m, batch)
    assert l1 == l2
    for name in g1:
        assert np.array_equal(g1[name], g2[name])


# --- autoregressive roll-out ---


def persistence_model(lookback):
    m = model.new_model(linear_spec(lookback), head_out=1, seed=0)
    m.params.get("enc0.w")[:] = np.eye(lookback)
    m.params.get("enc0.b")[:] = 0.0
    m.params.get("head.w")[:] = 0.0
    m.params.get("head.w")[0, -1] = 1.0
    m.params.get("head.b")[:] = 0.0
    return m


def test_ar_f_persistence_fixed_point():
    m = persistence_model(4)
    hist = np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 3.0], [5.0, -1.0]])
    out = model.ar_f_forecast(m, hist, horizon=6)
    assert out.shape == (6, 2)
    assert np.array_equal(out, np.tile(hist[-1], (6, 1)))


def test_ar_f_single_step_equals_decode():
    m = persistence_model(3)
    hist = np.random.default_rng(3).normal(size=(3, 2))
    assert np.array_equal(model.ar_f_forecast(m, hist, 1), model.forecast(m, hist))


def test_ar_f_requires_single_output_head():
    m = model.new_model(linear_spec(3), head_out=2, seed=0)
    with pytest.raises(ValueError):
        model.ar_f_forecast(m, np.zeros((3, 1)), 4)


def test_ar_f_exact_recursion_stays_exact_and_misfit_accumulates():
    # sin obeys x[n+1] = 2cos(w) x[n] - x[n-1]; a model implementing that
    # recursion rolls out with no error, while persistence drifts with t.
    period = 24.0
    spec = data.SynthSpec(
        n_points=400,
        d_channels=1,
        components=(data.SynthComponent(kind="sine", amplitude=1.0, period=period),),
        noise_std=0.0,
        seed=0,
    )
    ds = data.generate_synthetic(spec)
    exact = model.new_model(linear_spec(4), head_out=1, seed=0)
    exact.params.get("enc0.w")[:] = np.eye(4)
    exact.params.get("enc0.b")[:] = 0.0
    exact.params.get("head.w")[:] = np.array([[0.0, 0.0, -1.0, 2.0 * np.cos(2 * np.pi / period)]])
    exact.params.get("head.b")[:] = 0.0
    T = 8
    samples = data.windows(ds, 4, T, "test")[:20]
    for name, m in (("exact", exact), ("persistence", persistence_model(4))):
        errs = np.zeros(T)
        for w in samples:
            pred = model.ar_f_forecast(m, w.history, T)
            errs += ((pred - w.label) ** 2).mean(axis=1)
        errs /= len(samples)
        if name == "exact":
            assert np.all(errs <= 1e-16)
        else:
            assert errs[T - 1] > errs[0]


# --- metrics ---


def test_metrics_examples():
    a = np.random.default_rng(0).normal(size=(4, 3))
    assert model.metrics(a, a) == (0.0, 0.0)
    mse, mae = model.metrics(a + 2.0, a)
    assert mse == pytest.approx(4.0)
    assert mae == pytest.approx(2.0)
    b = np.random.default_rng(1).normal(size=(4, 3))
    mse, mae = model.metrics(a, b)
    assert mse == pytest.approx(float(((a - b) ** 2).mean()))
    assert mae == pytest.approx(float(np.abs(a - b).mean()))


# --- checkpoints ---


def test_checkpoint_round_trip_exact(tmp_path):
    m = model.new_model(mlp_spec(9, 7, 4, "relu"), head_out=5, seed=42)
    m.params.set_trainable("enc0.b", False)
    path = tmp_path / "model.json"
    model.save_checkpoint(m, path)
    loaded = model.load_checkpoint(path)
    assert loaded.encoder_spec == m.encoder_spec
    assert loaded.head_out == m.head_out
    assert loaded.params.names() == m.params.names()
    for name in m.params.names():
        assert np.array_equal(loaded.params.get(name), m.params.get(name))
        assert loaded.params.is_trainable(name) == m.params.is_trainable(name)
    # a second save of the loaded model is byte-identical
    path2 = tmp_path / "model2.json"
    model.save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()
