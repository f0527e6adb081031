"""Forward passes for the convolutional VAE and the predictive LSTM.

Weights live in float64 in memory but are always float32-representable, so a
model survives a save/load roundtrip unchanged.  No training happens here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, softmax

from .classes import CLASS_COUNT, FRAME_HEIGHT, FRAME_WIDTH
from .errors import ShapeError
from .model_store import LayerSpec, ModelManifest, records_for

ACTION_DIM = 3
ANGLE_SCALE = 360.0

_ACT = {
    "relu": lambda x: np.maximum(x, 0.0),
    "sigmoid": expit,
    "tanh": np.tanh,
    "identity": lambda x: x,
}


def activate(x, name: str):
    return _ACT[name](x)


def f32(a) -> np.ndarray:
    """Round to float32 precision, keep float64 storage."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def one_hot(frame: np.ndarray, class_count: int = CLASS_COUNT) -> np.ndarray:
    """(H, W) class indices -> (class_count, H, W) one-hot float64."""
    frame = np.asarray(frame)
    if frame.size and int(frame.max()) >= class_count:
        raise ShapeError("frame value exceeds class_count")
    return (np.arange(class_count)[:, None, None] == frame[None]).astype(np.float64)


def normalize_action(action) -> np.ndarray:
    """Movement flag as-is, angles divided by 360."""
    a = np.asarray(action, dtype=np.float64)
    return np.concatenate([a[..., :1], a[..., 1:] / ANGLE_SCALE], axis=-1)


def conv_out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def deconv_out_size(n: int, k: int, s: int, p: int, op: int) -> int:
    return (n - 1) * s - 2 * p + k + op


def conv_forward(x, weight, bias, stride=(1, 1), padding=(0, 0), activation="identity"):
    """Zero-padded cross-correlation.

    ``out[o, y, x] = act(b[o] + sum_{c,i,j} w[o, c, i, j] * in[c, y*s + i - p, x*s + j - p])``
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ShapeError(f"conv: input {x.shape} incompatible with weight {weight.shape}")
    (sh, sw), (ph, pw) = stride, padding
    kh, kw = weight.shape[2:]
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeError(f"conv: kernel {kh}x{kw} larger than padded input {xp.shape[1:]}")
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    out = np.tensordot(weight, win, axes=([1, 2, 3], [0, 3, 4]))
    return activate(out + np.asarray(bias, dtype=np.float64)[:, None, None], activation)


def deconv_forward(x, weight, bias, stride=(1, 1), padding=(0, 0), output_padding=(0, 0),
                   activation="identity"):
    """Transposed convolution; ``weight`` is (in, out, kh, kw)."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[0] != x.shape[0]:
        raise ShapeError(f"deconv: input {x.shape} incompatible with weight {weight.shape}")
    (sh, sw), (ph, pw), (oph, opw) = stride, padding, output_padding
    _, h, w = x.shape
    o, kh, kw = weight.shape[1:]
    contrib = np.tensordot(weight, x, axes=([0], [0]))  # o, kh, kw, h, w
    buf = np.zeros((o, (h - 1) * sh + kh + oph, (w - 1) * sw + kw + opw))
    for i in range(kh):
        for j in range(kw):
            buf[:, i:i + (h - 1) * sh + 1:sh, j:j + (w - 1) * sw + 1:sw] += contrib[:, i, j]
    ho = deconv_out_size(h, kh, sh, ph, oph)
    wo = deconv_out_size(w, kw, sw, pw, opw)
    out = buf[:, ph:ph + ho, pw:pw + wo]
    return activate(out + np.asarray(bias, dtype=np.float64)[:, None, None], activation)


def dense_forward(x, weight, bias, activation="identity"):
    return activate(np.asarray(weight) @ np.ravel(x) + bias, activation)


# -- VAE ---------------------------------------------------------------------

@dataclass
class Decoded:
    probs: np.ndarray  # (class_count, H, W)
    frame: np.ndarray  # (H, W) uint8 argmax


@dataclass
class VAE:
    """Convolutional VAE: conv encoder with mean/log-variance heads, dense +
    transposed-conv decoder with a per-pixel softmax over classes."""

    layers: list[LayerSpec]
    params: dict[str, np.ndarray]
    latent_dim: int
    input_shape: tuple[int, int, int] = (CLASS_COUNT, FRAME_HEIGHT, FRAME_WIDTH)
    config: str = "custom"

    def __post_init__(self):
        self.params = {k: f32(v) for k, v in self.params.items()}
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.check()

    @property
    def class_count(self) -> int:
        return self.input_shape[0]

    def _by_role(self, role):
        return [layer for layer in self.layers if layer.role == role]

    @property
    def encoder(self):
        return self._by_role("encoder")

    @property
    def decoder(self):
        return self._by_role("decoder")

    def layer_shapes(self):
        """Output shape of every layer, encoder then decoder."""
        shapes = {}
        shape = self.input_shape
        for layer in self.encoder:
            shape = _layer_out_shape(layer, shape)
            shapes[layer.name] = shape
        flat = math.prod(shape)
        for role in ("mean", "logvar"):
            for layer in self._by_role(role):
                if layer.in_channels != flat:
                    raise ShapeError(f"{layer.name}: expects {layer.in_channels} inputs, encoder gives {flat}")
                shapes[layer.name] = (layer.out_channels,)
        shape = (self.latent_dim,)
        for layer in self.decoder:
            shape = _layer_out_shape(layer, shape)
            shapes[layer.name] = shape
        if shape != self.input_shape:
            raise ShapeError(f"decoder output {shape} != input shape {self.input_shape}")
        return shapes

    def check(self):
        shapes = self.layer_shapes()
        mean = self._by_role("mean")
        if len(mean) != 1 or mean[0].out_channels != self.latent_dim:
            raise ShapeError("VAE needs exactly one mean head of size latent_dim")
        for layer in self.layers:
            for name, shape in _param_shapes(layer).items():
                got = self.params.get(name)
                if got is None:
                    raise ShapeError(f"missing tensor {name!r}")
                if got.shape != shape:
                    raise ShapeError(f"tensor {name}: shape {got.shape} != {shape}")
        if self.config == "reference":
            convs = [layer for layer in self.encoder if layer.kind == "conv"]
            if len(convs) != 4:
                raise ShapeError("reference configuration has exactly four conv layers")
            if shapes[convs[-1].name][1:] != (2, 2):
                raise ShapeError(f"reference configuration needs 2x2 layer-4 maps, got {shapes[convs[-1].name][1:]}")

    def run_layer(self, layer, x):
        w, b = self.params[f"{layer.name}.weight"], self.params[f"{layer.name}.bias"]
        if layer.kind == "conv":
            return conv_forward(x, w, b, layer.stride, layer.padding, layer.activation)
        if layer.kind == "deconv":
            return deconv_forward(x, w, b, layer.stride, layer.padding, layer.output_padding,
                                  layer.activation)
        out = dense_forward(x, w, b, layer.activation)
        return out.reshape(layer.out_shape) if layer.out_shape else out

    def encode(self, frame24, capture: list | None = None, return_logvar: bool = False):
        """Mean-path encoding of a one-hot frame (no sampling).

        When ``capture`` is a list, the post-activation output of every
        encoder layer is appended to it.
        """
        x = np.asarray(frame24, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ShapeError(f"expected input {self.input_shape}, got {x.shape}")
        for layer in self.encoder:
            x = self.run_layer(layer, x)
            if capture is not None:
                capture.append(x)
        z = self.run_layer(self._by_role("mean")[0], x)
        if return_logvar:
            heads = self._by_role("logvar")
            logvar = self.run_layer(heads[0], x) if heads else np.zeros_like(z)
            return z, logvar
        return z

    def encode_frame(self, frame) -> np.ndarray:
        return self.encode(one_hot(frame, self.class_count))

    def decode_logits(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise ShapeError(f"latent must have length {self.latent_dim}, got {z.shape}")
        x = z
        for layer in self.decoder:
            x = self.run_layer(layer, x)
        return x

    def decode(self, z) -> Decoded:
        probs = softmax(self.decode_logits(z), axis=0)
        return Decoded(probs, np.argmax(probs, axis=0).astype(np.uint8))

    def decode_probs(self, z) -> np.ndarray:
        return self.decode(z).probs

    # persistence
    def to_store(self):
        tensors = {k: self.params[k] for layer in self.layers for k in _param_shapes(layer)}
        manifest = ModelManifest(
            "vae", layers=list(self.layers), tensors=records_for(tensors),
            latent_dim=self.latent_dim,
            meta={"input_shape": list(self.input_shape), "config": self.config,
                  "class_count": self.class_count},
        )
        return manifest, tensors

    @classmethod
    def from_store(cls, manifest: ModelManifest, tensors):
        if manifest.model_kind != "vae":
            raise ShapeError(f"expected a vae container, got {manifest.model_kind}")
        return cls(list(manifest.layers), dict(tensors), manifest.latent_dim,
                   tuple(manifest.meta["input_shape"]), manifest.meta.get("config", "custom"))


def _layer_out_shape(layer: LayerSpec, shape):
    if layer.kind == "dense":
        if layer.in_channels != math.prod(shape):
            raise ShapeError(f"{layer.name}: expects {layer.in_channels} inputs, got {shape}")
        if layer.out_shape:
            if math.prod(layer.out_shape) != layer.out_channels:
                raise ShapeError(f"{layer.name}: out_shape does not match out_channels")
            return tuple(layer.out_shape)
        return (layer.out_channels,)
    if len(shape) != 3 or shape[0] != layer.in_channels:
        raise ShapeError(f"{layer.name}: expects {layer.in_channels} channels, got {shape}")
    (kh, kw), (sh, sw), (ph, pw) = layer.kernel, layer.stride, layer.padding
    if layer.kind == "conv":
        h, w = conv_out_size(shape[1], kh, sh, ph), conv_out_size(shape[2], kw, sw, pw)
    else:
        oph, opw = layer.output_padding
        h, w = deconv_out_size(shape[1], kh, sh, ph, oph), deconv_out_size(shape[2], kw, sw, pw, opw)
    if h < 1 or w < 1:
        raise ShapeError(f"{layer.name}: empty output for input {shape}")
    return (layer.out_channels, h, w)


def _param_shapes(layer: LayerSpec):
    kh, kw = layer.kernel
    if layer.kind == "conv":
        w = (layer.out_channels, layer.in_channels, kh, kw)
    elif layer.kind == "deconv":
        w = (layer.in_channels, layer.out_channels, kh, kw)
    elif layer.kind == "dense":
        w = (layer.out_channels, layer.in_channels)
    else:
        raise ShapeError(f"VAE cannot hold a {layer.kind} layer")
    return {f"{layer.name}.weight": w, f"{layer.name}.bias": (layer.out_channels,)}


# Encoder geometry giving 2x2 maps after four layers on 45x85 inputs:
# 45 -> 22 -> 11 -> 5 -> 2 rows, 85 -> 42 -> 21 -> 10 -> 2 columns.
REFERENCE_ENCODER = (
    # kernel, stride, padding
    ((4, 4), (2, 2), (1, 1)),
    ((4, 4), (2, 2), (1, 1)),
    ((4, 4), (2, 2), (1, 1)),
    ((3, 4), (2, 4), (0, 0)),
)
# Mirror decoder: output padding restores the exact encoder sizes.
REFERENCE_DECODER_OUTPUT_PADDING = ((0, 2), (1, 1), (0, 0), (1, 1))


def reference_vae_layers(channels=(16, 32, 64, 128), latent_dim=50,
                     class_count=CLASS_COUNT) -> list[LayerSpec]:
    layers = []
    c_in = class_count
    for n, ((k, s, p), c_out) in enumerate(zip(REFERENCE_ENCODER, channels), start=1):
        layers.append(LayerSpec("conv", f"conv{n}", "relu", c_in, c_out, list(k), list(s), list(p),
                                role="encoder"))
        c_in = c_out
    flat = channels[-1] * 4
    layers.append(LayerSpec("dense", "mu", "identity", flat, latent_dim, role="mean"))
    layers.append(LayerSpec("dense", "logvar", "identity", flat, latent_dim, role="logvar"))
    layers.append(LayerSpec("dense", "dec_fc", "relu", latent_dim, flat,
                            out_shape=[channels[-1], 2, 2], role="decoder"))
    outs = list(reversed(channels[:-1])) + [class_count]
    c_in = channels[-1]
    for n, ((k, s, p), op, c_out) in enumerate(
            zip(reversed(REFERENCE_ENCODER), REFERENCE_DECODER_OUTPUT_PADDING, outs), start=1):
        act = "identity" if n == 4 else "relu"
        layers.append(LayerSpec("deconv", f"deconv{n}", act, c_in, c_out, list(k), list(s), list(p),
                                list(op), role="decoder"))
        c_in = c_out
    return layers


def init_vae(seed: int = 0, channels=(16, 32, 64, 128), latent_dim: int = 50,
             class_count: int = CLASS_COUNT, bias: float = 0.05) -> VAE:
    """Random-weight VAE in the reference layout (He-scaled normal weights)."""
    rng = np.random.default_rng(seed)
    layers = reference_vae_layers(channels, latent_dim, class_count)
    params = {}
    for layer in layers:
        shapes = _param_shapes(layer)
        w_shape = shapes[f"{layer.name}.weight"]
        if layer.kind == "conv":
            fan_in = layer.in_channels * math.prod(layer.kernel)
        elif layer.kind == "deconv":
            fan_in = layer.in_channels * math.prod(layer.kernel) / math.prod(layer.stride)
        else:
            fan_in = layer.in_channels
        params[f"{layer.name}.weight"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), w_shape)
        params[f"{layer.name}.bias"] = np.full(layer.out_channels, bias)
    return VAE(layers, params, latent_dim, (class_count, FRAME_HEIGHT, FRAME_WIDTH), "reference")


def zero_vae(latent_dim=50, channels=(16, 32, 64, 128), mean_bias=None) -> VAE:
    vae = init_vae(0, channels, latent_dim)
    params = {k: np.zeros_like(v) for k, v in vae.params.items()}
    if mean_bias is not None:
        params["mu.bias"] = np.asarray(mean_bias, dtype=np.float64)
    return VAE(vae.layers, params, latent_dim, vae.input_shape, vae.config)


def permute_channels(vae: VAE, layer_name: str, perm) -> VAE:
    """Clone ``vae`` with the output channels of one conv layer permuted.

    Channel ``k`` of the clone is channel ``perm[k]`` of the original; the
    next layer's input channels are permuted to match so the rest of the
    network computes the same function.
    """
    perm = np.asarray(perm)
    params = {k: v.copy() for k, v in vae.params.items()}
    params[f"{layer_name}.weight"] = params[f"{layer_name}.weight"][perm]
    params[f"{layer_name}.bias"] = params[f"{layer_name}.bias"][perm]
    names = [layer.name for layer in vae.encoder]
    idx = names.index(layer_name)
    if idx + 1 < len(names):
        nxt = f"{names[idx + 1]}.weight"
        params[nxt] = params[nxt][:, perm]
    return VAE(vae.layers, params, vae.latent_dim, vae.input_shape, vae.config)


def hand_wire_autoencoder(frames, class_count: int = CLASS_COUNT) -> VAE:
    """Template-matching autoencoder that reproduces each of ``frames`` exactly.

    Encoder: one full-frame conv whose filter ``k`` is the one-hot template of
    frame ``k``; the bias leaves a positive response only for an exact match.
    The latent is therefore the one-hot index of the matched frame and the
    dense decoder writes that frame's template back as logits.
    """
    frames = np.asarray(frames)
    n, h, w = frames.shape
    if len({f.tobytes() for f in frames}) != n:
        raise ShapeError("template frames must be distinct")
    templates = np.stack([one_hot(f, class_count) for f in frames])
    area = float(h * w)
    layers = [
        LayerSpec("conv", "match", "relu", class_count, n, [h, w], role="encoder"),
        LayerSpec("dense", "mu", "identity", n, n, role="mean"),
        LayerSpec("dense", "dec_fc", "identity", n, class_count * h * w,
                  out_shape=[class_count, h, w], role="decoder"),
    ]
    params = {
        "match.weight": templates,
        "match.bias": np.full(n, -(area - 0.5)),
        "mu.weight": 2.0 * np.eye(n),
        "mu.bias": np.zeros(n),
        "dec_fc.weight": 10.0 * templates.reshape(n, -1).T,
        "dec_fc.bias": np.zeros(class_count * h * w),
    }
    return VAE(layers, params, n, (class_count, h, w), "custom")


# -- LSTM --------------------------------------------------------------------

@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, cells: int) -> "LstmState":
        return cls(np.zeros(cells), np.zeros(cells))


@dataclass
class StepCapture:
    """Everything the LRP backward pass needs for one step."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    pre: np.ndarray  # (4, C) gate pre-activations in order i, f, g, o
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray
    y: np.ndarray


@dataclass
class LSTM:
    """Single-layer LSTM with a dense latent head.

    Input is ``z (+) normalized action``; gate rows are stacked i, f, g, o.
    """

    w_x: np.ndarray
    w_h: np.ndarray
    bias: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("w_x", "w_h", "bias", "head_w", "head_b"):
            setattr(self, name, f32(getattr(self, name)))
        c = self.cells
        d = self.latent_dim
        if self.w_x.shape != (4 * c, d + ACTION_DIM) or self.w_h.shape != (4 * c, c):
            raise ShapeError("LSTM weight shapes inconsistent with cell count and latent size")
        if self.bias.shape != (4 * c,) or self.head_b.shape != (d,):
            raise ShapeError("LSTM bias shapes inconsistent")

    @property
    def cells(self) -> int:
        return self.w_h.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.head_w.shape[0]

    def step(self, state: LstmState, z, action):
        """One prediction step; returns (new state, predicted z, capture)."""
        x = np.concatenate([np.asarray(z, dtype=np.float64), normalize_action(action)])
        return self.step_raw(state, x)

    def step_raw(self, state: LstmState, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.latent_dim + ACTION_DIM,):
            raise ShapeError(f"LSTM input must have length {self.latent_dim + ACTION_DIM}, got {x.shape}")
        pre = (self.w_x @ x + self.w_h @ state.h + self.bias).reshape(4, self.cells)
        i, f, o = expit(pre[0]), expit(pre[1]), expit(pre[3])
        g = np.tanh(pre[2])
        c = f * state.c + i * g
        h = o * np.tanh(c)
        y = self.head_w @ h + self.head_b
        cap = StepCapture(x, state.h, state.c, pre, i, f, g, o, c, h, y)
        return LstmState(h, c), y, cap

    def to_store(self):
        tensors = {"lstm.w_x": self.w_x, "lstm.w_h": self.w_h, "lstm.bias": self.bias,
                   "head.weight": self.head_w, "head.bias": self.head_b}
        layers = [
            LayerSpec("lstm", "lstm", "tanh", self.latent_dim + ACTION_DIM, self.cells),
            LayerSpec("dense", "head", "identity", self.cells, self.latent_dim),
        ]
        meta = dict(self.meta)
        meta.update(cells=self.cells, action_dim=ACTION_DIM, gate_order="ifgo")
        return ModelManifest("lstm", layers, records_for(tensors), self.latent_dim, meta=meta), tensors

    @classmethod
    def from_store(cls, manifest: ModelManifest, tensors):
        if manifest.model_kind != "lstm":
            raise ShapeError(f"expected an lstm container, got {manifest.model_kind}")
        meta = {k: v for k, v in manifest.meta.items() if k not in ("cells", "action_dim", "gate_order")}
        model = cls(tensors["lstm.w_x"], tensors["lstm.w_h"], tensors["lstm.bias"],
                    tensors["head.weight"], tensors["head.bias"], meta)
        if model.cells != int(manifest.meta["cells"]):
            raise ShapeError("declared cell count does not match tensors")
        return model


@dataclass
class Rollout:
    z: np.ndarray  # (T, latent) predictions
    hidden: np.ndarray  # (T, C) raw h
    cell: np.ndarray  # (T, C)
    gates: np.ndarray  # (T, 4, C) activations i, f, g, o
    steps: list[StepCapture]


def rollout(model: LSTM, z0, actions, feedback: bool = True, z_inputs=None,
            state: LstmState | None = None, keep_steps: bool = True) -> Rollout:
    """Run ``len(actions)`` steps.

    With ``feedback`` each step consumes the previous prediction; otherwise
    ``z_inputs[t]`` is used at step ``t``.
    """
    actions = np.asarray(actions, dtype=np.float64)
    T = actions.shape[0]
    if T < 1:
        raise ValueError("rollout needs at least one step")
    if not feedback:
        if z_inputs is None or len(z_inputs) != T:
            raise ShapeError("feedback=False needs one input latent per step")
    state = state or LstmState.zeros(model.cells)
    z = np.asarray(z0, dtype=np.float64)
    preds = np.zeros((T, model.latent_dim))
    hidden = np.zeros((T, model.cells))
    cell = np.zeros((T, model.cells))
    gates = np.zeros((T, 4, model.cells))
    caps = []
    for t in range(T):
        z_in = z if feedback else np.asarray(z_inputs[t], dtype=np.float64)
        state, z, cap = model.step(state, z_in, actions[t])
        preds[t], hidden[t], cell[t] = z, state.h, state.c
        gates[t] = (cap.i, cap.f, cap.g, cap.o)
        if keep_steps:
            caps.append(cap)
    return Rollout(preds, hidden, cell, gates, caps)


# -- hand-wired LSTM fixtures -----------------------------------------------------

SAT = 30.0  # gate pre-activation that saturates sigmoid to within 1e-13


@dataclass
class CellDesign:
    """A designed cell.

    kind ``pulse``: hidden state high on frames [r1, r2), low elsewhere.
    kind ``track``: hidden state follows ``sign * action[component]``.
    kind ``latch``: stores ``value`` whenever the movement flag is 1 and holds
    it while the flag is 0.
    """

    kind: str
    cell: int
    r1: int = 0
    r2: int = 0
    component: int = 2
    sign: float = 1.0
    gain: float = 2.0
    value: float = 0.5


@dataclass
class WiringSpec:
    cells: int = 512
    latent_dim: int = 50
    designs: list[CellDesign] = field(default_factory=list)
    noise: float = 0.5
    seed: int = 0
    horizon: int = 400


def hand_wire(spec: WiringSpec) -> LSTM:
    """Build an LSTM whose designed cells provably show the requested profile.

    Undesigned cells get random weights scaled by ``noise``.  Pulse cells rely
    on auxiliary cells taken from the top of the index range: one clock cell
    whose state grows linearly in time and four edge detectors per pulse.
    The rows of designed and auxiliary cells read only what they need.
    """
    c, d = spec.cells, spec.latent_dim
    nin = d + ACTION_DIM
    rng = np.random.default_rng(spec.seed)
    scale = spec.noise
    w_x = rng.normal(0.0, scale / math.sqrt(nin), (4 * c, nin))
    w_h = rng.normal(0.0, scale / math.sqrt(c), (4 * c, c))
    bias = rng.normal(0.0, scale, 4 * c)
    head_w = rng.normal(0.0, scale / math.sqrt(c), (d, c))
    head_b = np.zeros(d)

    pulses = [dsg for dsg in spec.designs if dsg.kind == "pulse"]
    n_aux = (1 + 4 * len(pulses)) if pulses else 0
    designed = [dsg.cell for dsg in spec.designs]
    aux = list(range(c - n_aux, c))
    if len(set(designed)) != len(designed) or set(designed) & set(aux):
        raise ValueError("infeasible spec: designed cells collide with each other or with auxiliary cells")
    if any(not 0 <= k < c for k in designed):
        raise ValueError("infeasible spec: designed cell index out of range")

    def clear(k):
        for gate in range(4):
            w_x[gate * c + k] = 0.0
            w_h[gate * c + k] = 0.0
            bias[gate * c + k] = 0.0
        head_w[:, k] = 0.0

    def gate_row(gate, k):
        return gate * c + k

    for k in designed + aux:
        clear(k)

    def plain_gates(k, forget):
        # i = 1, o = 1, f = 1 or 0
        bias[gate_row(0, k)] = SAT
        bias[gate_row(1, k)] = SAT if forget else -SAT
        bias[gate_row(3, k)] = SAT

    if pulses:
        last = max(max(p.r1, p.r2) for p in pulses)
        for p in pulses:
            if not 1 <= p.r1 < p.r2:
                raise ValueError(f"infeasible spec: pulse needs 1 <= r1 < r2, got [{p.r1}, {p.r2})")
        clock = aux[0]
        plain_gates(clock, forget=True)
        # c_clock(t) = gamma * (t + 1); keep tanh well below saturation
        gamma = float(f32(math.atanh(0.9) / (last + 2)))
        bias[gate_row(2, clock)] = float(f32(math.atanh(gamma)))
        gamma = math.tanh(float(bias[gate_row(2, clock)]))
        i_sat, f_sat = expit(SAT), expit(SAT)

        # exact clock values so thresholds respect the actual gate arithmetic
        clk = np.zeros(last + 3)
        state = 0.0
        for t in range(last + 3):
            state = f_sat * state + i_sat * gamma
            clk[t] = expit(SAT) * math.tanh(state)

        def clock_at(t):  # h_clock(t - 1), with h(-1) = 0
            return 0.0 if t == 0 else clk[t - 1]

        edge_level = math.tanh(1.0)
        for n, p in enumerate(pulses):
            rise, rise2, fall, fall2 = aux[1 + 4 * n: 5 + 4 * n]
            for k, tau in ((rise, p.r1 - 1), (rise2, p.r1), (fall, p.r2 - 1), (fall2, p.r2)):
                # edge cell: h(t) = +tanh(1) for t >= tau, -tanh(1) before
                if tau == 0:
                    gap = clock_at(1) - clock_at(0)
                    theta = -0.5 * gap
                else:
                    gap = clock_at(tau) - clock_at(tau - 1)
                    theta = 0.5 * (clock_at(tau) + clock_at(tau - 1))
                gain = 40.0 / gap
                plain_gates(k, forget=False)
                w_h[gate_row(2, k), clock] = gain
                bias[gate_row(2, k)] = -gain * theta
            k = p.cell
            plain_gates(k, forget=True)
            kg = 40.0
            # candidate: +1 iff rise high and fall low, i.e. r1 <= t < r2
            w_h[gate_row(2, k), rise] = kg
            w_h[gate_row(2, k), fall] = -kg
            bias[gate_row(2, k)] = -kg * edge_level
            # forget gate closes on the two edge steps: rise-rise2 or fall-fall2 differ
            w_h[gate_row(1, k), rise] = -kg
            w_h[gate_row(1, k), rise2] = kg
            w_h[gate_row(1, k), fall] = -kg
            w_h[gate_row(1, k), fall2] = kg
            bias[gate_row(1, k)] = kg * edge_level

    for dsg in spec.designs:
        k = dsg.cell
        if dsg.kind == "track":
            if not 0 <= dsg.component < ACTION_DIM:
                raise ValueError("infeasible spec: action component out of range")
            plain_gates(k, forget=False)
            w_x[gate_row(2, k), d + dsg.component] = dsg.sign * dsg.gain
        elif dsg.kind == "latch":
            # write (i = 1, f = 0) while moving, hold (i = 0, f = 1) while stopped
            w_x[gate_row(1, k), d] = -2 * SAT
            bias[gate_row(1, k)] = SAT
            bias[gate_row(3, k)] = SAT
            w_x[gate_row(0, k), d] = 2 * SAT
            bias[gate_row(0, k)] = -SAT
            bias[gate_row(2, k)] = math.atanh(dsg.value)
        elif dsg.kind != "pulse":
            raise ValueError(f"infeasible spec: unknown design kind {dsg.kind!r}")

    meta = {"designs": [vars(dsg) for dsg in spec.designs], "aux_cells": aux,
            "noise": spec.noise, "seed": spec.seed}
    return LSTM(w_x, w_h, bias, head_w, head_b, meta)


def latent_map_lstm(matrix, scale: float = 1e-3) -> LSTM:
    """LSTM whose prediction is approximately ``matrix @ z``, ignoring actions.

    One cell per latent component: input gate open, forget gate shut, so
    ``h = tanh(tanh(scale * z))`` and the head divides the scale back out.
    The error is third order in ``scale * z``.
    """
    m = np.asarray(matrix, dtype=np.float64)
    d = m.shape[0]
    if m.shape != (d, d):
        raise ShapeError(f"latent map must be square, got {m.shape}")
    c = d
    w_x = np.zeros((4 * c, d + ACTION_DIM))
    w_x[2 * c:3 * c, :d] = scale * np.eye(d)
    bias = np.zeros(4 * c)
    bias[:c], bias[c:2 * c], bias[3 * c:] = SAT, -SAT, SAT
    return LSTM(w_x, np.zeros((4 * c, c)), bias, m / scale, np.zeros(d), {"latent_map": True})
