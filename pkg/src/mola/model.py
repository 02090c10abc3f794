"""Encoder/decoder forecasting core with hand-rolled reverse-mode gradients.

The architecture is deliberately small: a channel-shared temporal encoder
(one affine layer, or two with an activation between), a linear head with
one output per forecast step, and mean-squared-error training.  Every
channel of a multivariate window passes through the same L -> rep_dim
map, so a batch of B windows with D channels is processed as B*D columns.
Gradients are derived by hand for this fixed op set (affine, relu/tanh,
MSE); there is no general autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import __version__
from ._io import decode_array, encode_array, read_json, write_json
from .data import WindowSample

ENCODER_KINDS = ("linear", "mlp2")
ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncoderSpec:
    """Shape of the channel-shared temporal encoder.

    ``linear`` is a single square affine map (rep_dim = in_len, no
    activation).  ``mlp2`` is affine -> activation -> affine with widths
    ``hidden = (h1, rep_dim)``.
    """

    kind: str
    in_len: int
    hidden: tuple[int, ...] = ()
    activation: str = "relu"
    channel_mode: str = "per-channel-shared"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"encoder kind must be one of {ENCODER_KINDS}, got {self.kind!r}")
        if self.in_len < 1:
            raise ValueError(f"in_len must be >= 1, got {self.in_len}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.channel_mode != "per-channel-shared":
            raise ValueError("the only supported channel_mode is 'per-channel-shared'")
        if self.kind == "linear" and self.hidden != ():
            raise ValueError("linear encoders take no hidden widths")
        if self.kind == "mlp2":
            if len(self.hidden) != 2:
                raise ValueError(f"mlp2 needs exactly two hidden widths, got {self.hidden}")
            if min(self.hidden) < 1:
                raise ValueError(f"hidden widths must be >= 1, got {self.hidden}")

    @property
    def rep_dim(self) -> int:
        return self.in_len if self.kind == "linear" else self.hidden[1]

    @property
    def n_layers(self) -> int:
        return 1 if self.kind == "linear" else 2

    def layer_shape(self, i: int) -> tuple[int, int]:
        """(out, in) of encoder layer i."""
        if self.kind == "linear":
            return (self.in_len, self.in_len)
        return (self.hidden[0], self.in_len) if i == 0 else (self.hidden[1], self.hidden[0])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "in_len": self.in_len,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "channel_mode": self.channel_mode,
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderSpec":
        return EncoderSpec(
            kind=d["kind"],
            in_len=int(d["in_len"]),
            hidden=tuple(d["hidden"]),
            activation=d["activation"],
            channel_mode=d["channel_mode"],
        )


class ParamStore:
    """Ordered name -> float64 array map with a per-entry trainable flag."""

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, array, trainable: bool = True) -> None:
        if name in self._arrays:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._arrays[name] = np.asarray(array, dtype=np.float64)
        self._trainable[name] = bool(trainable)

    def names(self) -> list[str]:
        return list(self._arrays)

    def get(self, name: str) -> np.ndarray:
        try:
            return self._arrays[name]
        except KeyError:
            raise ValueError(f"unknown parameter {name!r}; have {self.names()}") from None

    def is_trainable(self, name: str) -> bool:
        self.get(name)
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        self.get(name)
        self._trainable[name] = bool(flag)

    def trainable_names(self) -> list[str]:
        return [n for n, t in self._trainable.items() if t]

    def freeze_all(self) -> None:
        for n in self._trainable:
            self._trainable[n] = False

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n in self.names():
            out.add(n, self._arrays[n].copy(), self._trainable[n])
        return out


@dataclass
class FoundationModel:
    """Encoder + linear head predicting ``head_out`` future steps at once."""

    encoder_spec: EncoderSpec
    head_out: int
    params: ParamStore

    def __post_init__(self):
        if self.head_out < 1:
            raise ValueError(f"head_out must be >= 1, got {self.head_out}")
        w = self.params.get("head.w")
        want = (self.head_out, self.encoder_spec.rep_dim)
        if w.shape != want:
            raise ValueError(f"head weight shape {w.shape} != {want}")

    @property
    def lookback(self) -> int:
        return self.encoder_spec.in_len

    @property
    def frozen(self) -> bool:
        return not self.params.trainable_names()

    def freeze(self) -> None:
        self.params.freeze_all()


def new_model(encoder_spec: EncoderSpec, head_out: int, seed: int) -> FoundationModel:
    """Seeded init: weights ~ Uniform(+-1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    params = ParamStore()
    for i in range(encoder_spec.n_layers):
        out, fan_in = encoder_spec.layer_shape(i)
        bound = 1.0 / np.sqrt(fan_in)
        params.add(f"enc{i}.w", rng.uniform(-bound, bound, size=(out, fan_in)))
        params.add(f"enc{i}.b", np.zeros(out))
    bound = 1.0 / np.sqrt(encoder_spec.rep_dim)
    params.add("head.w", rng.uniform(-bound, bound, size=(head_out, encoder_spec.rep_dim)))
    params.add("head.b", np.zeros(head_out))
    return FoundationModel(encoder_spec=encoder_spec, head_out=head_out, params=params)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else np.tanh(z)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    # relu subgradient at 0 is taken as 0
    return (z > 0.0).astype(np.float64) if activation == "relu" else 1.0 - a * a


def _encode_cols(m: FoundationModel, x: np.ndarray, keep_cache: bool):
    spec = m.encoder_spec
    caches = []
    for i in range(spec.n_layers):
        w = m.params.get(f"enc{i}.w")
        b = m.params.get(f"enc{i}.b")
        z = w @ x + b[:, None]
        activated = i < spec.n_layers - 1
        a = _activate(z, spec.activation) if activated else z
        if keep_cache:
            caches.append((x, z, a, activated))
        x = a
    return x, caches


def encode(m: FoundationModel, history: np.ndarray) -> np.ndarray:
    """Representation of one (L, D) history window, shape (rep_dim, D)."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[0] != m.lookback:
        raise ValueError(
            f"history must be (lookback={m.lookback}, D), got {history.shape}"
        )
    rep, _ = _encode_cols(m, history, keep_cache=False)
    return rep


def decode(m: FoundationModel, rep: np.ndarray) -> np.ndarray:
    """Linear head applied per channel: (rep_dim, D) -> (head_out, D)."""
    rep = np.asarray(rep, dtype=np.float64)
    if rep.ndim != 2 or rep.shape[0] != m.encoder_spec.rep_dim:
        raise ValueError(
            f"rep must be (rep_dim={m.encoder_spec.rep_dim}, D), got {rep.shape}"
        )
    return m.params.get("head.w") @ rep + m.params.get("head.b")[:, None]


def forecast(m: FoundationModel, history: np.ndarray) -> np.ndarray:
    return decode(m, encode(m, history))


def _stack_batch(m: FoundationModel, batch: Sequence[WindowSample], target_slice):
    if len(batch) == 0:
        raise ValueError("empty batch")
    label_len = batch[0].label.shape[0]
    if target_slice is None:
        target_slice = (1, m.head_out)
    first, last = target_slice
    if not (1 <= first <= last):
        raise ValueError(f"bad target_slice {target_slice}")
    if last - first + 1 != m.head_out:
        raise ValueError(
            f"target_slice {target_slice} selects {last - first + 1} steps "
            f"but the head has {m.head_out} outputs"
        )
    if last > label_len:
        raise ValueError(f"target_slice {target_slice} exceeds label length {label_len}")
    hist = np.stack([w.history for w in batch])  # (B, L, D)
    lab = np.stack([w.label[first - 1 : last] for w in batch])  # (B, S, D)
    if hist.shape[1] != m.lookback:
        raise ValueError(f"history length {hist.shape[1]} != lookback {m.lookback}")
    b, _, d = hist.shape
    x = hist.transpose(1, 0, 2).reshape(m.lookback, b * d)
    y = lab.transpose(1, 0, 2).reshape(m.head_out, b * d)
    return x, y


def mse_loss(m: FoundationModel, batch: Sequence[WindowSample], target_slice=None) -> float:
    """Mean squared error over batch x selected steps x channels."""
    x, y = _stack_batch(m, batch, target_slice)
    rep, _ = _encode_cols(m, x, keep_cache=False)
    pred = m.params.get("head.w") @ rep + m.params.get("head.b")[:, None]
    diff = pred - y
    return float((diff * diff).mean())


def loss_and_grads(
    m: FoundationModel, batch: Sequence[WindowSample], target_slice=None
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus gradients for the trainable entries only.

    Frozen entries get no buffer at all, which is what lets adapted
    views route gradients exclusively to their effective weights.
    """
    x, y = _stack_batch(m, batch, target_slice)
    rep, caches = _encode_cols(m, x, keep_cache=True)
    head_w = m.params.get("head.w")
    pred = head_w @ rep + m.params.get("head.b")[:, None]
    diff = pred - y
    loss = float((diff * diff).mean())

    grads: dict[str, np.ndarray] = {}
    d_out = (2.0 / diff.size) * diff
    if m.params.is_trainable("head.w"):
        grads["head.w"] = d_out @ rep.T
    if m.params.is_trainable("head.b"):
        grads["head.b"] = d_out.sum(axis=1)
    d_x = head_w.T @ d_out
    spec = m.encoder_spec
    for i in reversed(range(spec.n_layers)):
        x_in, z, a, activated = caches[i]
        d_z = d_x * _activation_grad(z, a, spec.activation) if activated else d_x
        if m.params.is_trainable(f"enc{i}.w"):
            grads[f"enc{i}.w"] = d_z @ x_in.T
        if m.params.is_trainable(f"enc{i}.b"):
            grads[f"enc{i}.b"] = d_z.sum(axis=1)
        if i > 0:
            d_x = m.params.get(f"enc{i}.w").T @ d_z
    return loss, grads


def ar_f_forecast(m: FoundationModel, history: np.ndarray, horizon: int) -> np.ndarray:
    """Recursive one-step roll-out: each prediction is appended to the window.

    Requires a single-output head; this is the autoregressive baseline and
    the place where per-step errors compound.
    """
    if m.head_out != 1:
        raise ValueError(f"ar_f_forecast needs head_out=1, got {m.head_out}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    history = np.asarray(history, dtype=np.float64)
    window = history.copy()
    out = np.zeros((horizon, history.shape[1]))
    for t in range(horizon):
        step = forecast(m, window)
        out[t] = step[0]
        window = np.vstack([window[1:], step])
    return out


def metrics(pred: np.ndarray, label: np.ndarray) -> tuple[float, float]:
    """(MSE, MAE) over all entries of equally shaped arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {label.shape}")
    diff = pred - label
    return float((diff * diff).mean()), float(np.abs(diff).mean())


def model_state(m: FoundationModel) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "tool_version": __version__,
        "kind": "foundation-model",
        "encoder_spec": m.encoder_spec.to_dict(),
        "head_out": m.head_out,
        "params": [
            {
                "name": name,
                "trainable": m.params.is_trainable(name),
                **encode_array(m.params.get(name)),
            }
            for name in m.params.names()
        ],
    }


def model_from_state(state: dict) -> FoundationModel:
    if state.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {state.get('format_version')!r}")
    if state.get("kind") != "foundation-model":
        raise ValueError(f"not a model checkpoint (kind={state.get('kind')!r})")
    params = ParamStore()
    for entry in state["params"]:
        params.add(entry["name"], decode_array(entry), entry["trainable"])
    return FoundationModel(
        encoder_spec=EncoderSpec.from_dict(state["encoder_spec"]),
        head_out=int(state["head_out"]),
        params=params,
    )


def save_checkpoint(m: FoundationModel, path) -> None:
    write_json(path, model_state(m))


def load_checkpoint(path) -> FoundationModel:
    return model_from_state(read_json(path))
