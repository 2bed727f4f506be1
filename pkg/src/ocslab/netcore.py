"""Fully connected ReLU networks: traced forward pass, backprop, SGD, checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, FormatError, NumericError
from .numcore import make_rng
from .objectives import LossSpec, batch_loss_grad

BIAS_MODES = ("full", "none", "final")
MAGIC = b"OCSLAB01"
DIVERGENCE_LIMIT = 1e10


@dataclass
class Mlp:
    """ReLU MLP. ``weights[i]`` maps layer ``i`` (width ``layer_sizes[i]``) to layer ``i+1``.

    ``bias_mode`` is ``"full"`` (ordinary net), ``"none"`` (homogeneous, every
    bias pinned at 0) or ``"final"`` (homogeneous plus a trainable output bias).
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bias_mode: str = "full"

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {self.layer_sizes}")
        if self.bias_mode not in BIAS_MODES:
            raise ValueError(f"bias_mode must be one of {BIAS_MODES}")
        if len(self.weights) != self.depth or len(self.biases) != self.depth:
            raise ValueError("need one weight matrix and one bias per layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != shape:
                raise ValueError(f"weight {i} has shape {w.shape}, expected {shape}")
            if b.shape != (shape[0],):
                raise ValueError(f"bias {i} has shape {b.shape}, expected {(shape[0],)}")
            if not self.bias_trainable(i) and np.any(b != 0):
                raise ValueError(f"bias {i} must be zero in bias_mode={self.bias_mode!r}")

    @property
    def depth(self) -> int:
        return len(self.layer_sizes) - 1

    def bias_trainable(self, i: int) -> bool:
        if self.bias_mode == "full":
            return True
        return self.bias_mode == "final" and i == self.depth - 1

    def copy(self) -> Mlp:
        return Mlp(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.bias_mode,
        )

    def scaled(self, alpha: float) -> Mlp:
        """Every weight matrix multiplied by ``alpha`` (biases untouched)."""
        out = self.copy()
        out.weights = [alpha * w for w in out.weights]
        return out

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def init_mlp(layer_sizes, seed: int, bias_mode: str = "full", scale: float = 1.0) -> Mlp:
    """Glorot-uniform weights (times ``scale``), zero biases."""
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = scale * np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(list(layer_sizes), weights, biases, bias_mode)


@dataclass
class ForwardTrace:
    """Per-layer values of a forward pass.

    ``inputs[i]`` is the representation fed to layer ``i`` (``inputs[0]`` is x),
    ``pre[i] = W_i inputs[i] + b_i`` and ``post[i]`` is its ReLU (identity on
    the output layer). Arrays keep the batch axis if x had one.
    """

    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    output: np.ndarray = field(repr=False)


def _as_batch(model: Mlp, x) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"input width {a.shape[-1]} != {model.layer_sizes[0]}")
    return a, single


def _run(model: Mlp, start: int, h: np.ndarray, record: bool):
    inputs, pre, post = [], [], []
    last = model.depth - 1
    for i in range(start, model.depth):
        if record:
            inputs.append(h)
        z = h @ model.weights[i].T + model.biases[i]
        h = z if i == last else np.maximum(z, 0.0)
        if record:
            pre.append(z)
            post.append(h)
    return h, inputs, pre, post


def forward_trace(model: Mlp, x) -> ForwardTrace:
    a, single = _as_batch(model, x)
    out, inputs, pre, post = _run(model, 0, a, record=True)
    if single:
        inputs, pre, post, out = [v[0] for v in inputs], [v[0] for v in pre], [v[0] for v in post], out[0]
    return ForwardTrace(inputs, pre, post, out)


def forward(model: Mlp, x) -> np.ndarray:
    a, single = _as_batch(model, x)
    out, *_ = _run(model, 0, a, record=False)
    return out[0] if single else out


def forward_from(model: Mlp, k: int, representation) -> np.ndarray:
    """Run layers ``k..L-1`` starting from the layer-``k`` input representation."""
    if not 0 <= k < model.depth:
        raise ValueError(f"layer {k} out of range for depth {model.depth}")
    h = np.asarray(representation, dtype=np.float64)
    single = h.ndim == 1
    if single:
        h = h[None, :]
    if h.shape[1] != model.layer_sizes[k]:
        raise ValueError(f"representation width {h.shape[1]} != {model.layer_sizes[k]}")
    out, *_ = _run(model, k, h, record=False)
    return out[0] if single else out


def _backprop(model: Mlp, trace: ForwardTrace, grad_out: np.ndarray):
    """Gradients of sum_i <grad_out_i, f(x_i)> w.r.t. weights, biases and inputs."""
    gw, gb = [None] * model.depth, [None] * model.depth
    g = grad_out
    for i in reversed(range(model.depth)):
        if i < model.depth - 1:
            # ReLU derivative at exactly 0 is taken as 0
            g = g * (trace.pre[i] > 0)
        gw[i] = g.T @ trace.inputs[i]
        gb[i] = g.sum(axis=0) if model.bias_trainable(i) else np.zeros_like(model.biases[i])
        g = g @ model.weights[i]
    return gw, gb, g


def backward(model: Mlp, inputs, targets, loss: LossSpec):
    """Exact gradients of the mean batch loss.

    Returns ``(weight_grads, bias_grads, mean_loss)``. Biases that are pinned
    by ``bias_mode`` get zero gradient.
    """
    x, _ = _as_batch(model, inputs)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if model.layer_sizes[-1] != loss.output_width:
        raise ValueError(f"model output width {model.layer_sizes[-1]} != loss width {loss.output_width}")
    trace = forward_trace(model, x)
    losses, grad = batch_loss_grad(loss, trace.output, targets)
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        raise NumericError(f"non-finite loss at sample {bad[0]}", index=int(bad[0]))
    gw, gb, _ = _backprop(model, trace, grad / n)
    return gw, gb, float(losses.mean())


def input_gradient(model: Mlp, inputs, targets, loss: LossSpec) -> np.ndarray:
    """d(loss_i)/d(x_i) for each sample (per-sample, not averaged)."""
    x, _ = _as_batch(model, inputs)
    trace = forward_trace(model, x)
    _, grad = batch_loss_grad(loss, trace.output, targets)
    *_, gx = _backprop(model, trace, grad)
    return gx


def mean_loss(model: Mlp, inputs, targets, loss: LossSpec) -> float:
    losses, _ = batch_loss_grad(loss, forward(model, inputs), targets)
    return float(losses.mean())


@dataclass
class TrainConfig:
    lr: float = 0.05
    batch_size: int = 64
    steps: int = 2000
    seed: int = 0
    weight_decay: float = 0.0


def train(model: Mlp, inputs, targets, loss: LossSpec, opt: TrainConfig):
    """Minibatch SGD without momentum. Returns ``(trained_copy, history)``.

    ``history`` holds ``(step, mean minibatch loss)`` for every step. Batches
    are drawn by reshuffling each epoch from a generator seeded by ``opt.seed``.
    """
    if opt.lr < 0 or opt.steps < 0:
        raise ValueError("lr and steps must be nonnegative")
    x = np.asarray(inputs, dtype=np.float64)
    t = np.asarray(targets)
    n = x.shape[0]
    bs = min(opt.batch_size, n)
    rng = make_rng(opt.seed)
    net = model.copy()
    history = []
    order = np.empty(0, dtype=np.int64)
    pos = 0
    for step in range(opt.steps):
        if pos + bs > order.size:
            order, pos = rng.permutation(n), 0
        idx = order[pos : pos + bs]
        pos += bs
        gw, gb, value = backward(net, x[idx], t[idx], loss)
        if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
            raise DivergenceError(f"training diverged at step {step} (loss={value})", step)
        history.append((step, value))
        if opt.lr == 0:
            continue
        for i in range(net.depth):
            if opt.weight_decay:
                gw[i] = gw[i] + opt.weight_decay * net.weights[i]
            net.weights[i] -= opt.lr * gw[i]
            net.biases[i] -= opt.lr * gb[i]
    return net, history


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(path, model: Mlp, loss: LossSpec | None = None, meta: dict | None = None) -> None:
    """Write ``model`` in the OCSLAB01 binary format."""
    fields = {
        "layer_sizes": ",".join(map(str, model.layer_sizes)),
        "bias_mode": model.bias_mode,
        "loss": loss.tag if loss is not None else "",
    }
    for key, value in (meta or {}).items():
        if "=" in str(key) or "\n" in str(key) or "\n" in str(value):
            raise ValueError(f"metadata entry {key!r} not representable")
        fields.setdefault(str(key), str(value))
    text = "".join(f"{k}={v}\n" for k, v in fields.items()).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(text)), text]
    for w, b in zip(model.weights, model.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    """Read a checkpoint. Returns ``(model, loss_or_None, meta)``."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic bytes", field="magic", offset=0)
    off = len(MAGIC)
    if len(data) < off + 4:
        raise FormatError("truncated metadata length", field="metadata_length", offset=off)
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + n:
        raise FormatError("truncated metadata", field="metadata", offset=off)
    try:
        text = data[off : off + n].decode("utf-8")
        meta = dict(line.split("=", 1) for line in text.splitlines() if line)
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"unparseable metadata: {exc}", field="metadata", offset=off) from exc
    off += n
    try:
        sizes = [int(s) for s in meta["layer_sizes"].split(",")]
    except (KeyError, ValueError) as exc:
        raise FormatError("missing or invalid layer_sizes", field="layer_sizes", offset=off) from exc
    if len(sizes) < 2 or min(sizes) < 1:
        raise FormatError(f"invalid layer_sizes {sizes}", field="layer_sizes")
    bias_mode = meta.get("bias_mode", "full")
    if bias_mode not in BIAS_MODES:
        raise FormatError(f"invalid bias_mode {bias_mode!r}", field="bias_mode")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        for name, count, shape in (
            (f"weight[{i}]", fan_in * fan_out, (fan_out, fan_in)),
            (f"bias[{i}]", fan_out, (fan_out,)),
        ):
            end = off + 8 * count
            if end > len(data):
                raise FormatError(f"truncated payload in {name}", field=name, offset=off)
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
            (weights if name.startswith("weight") else biases).append(arr.reshape(shape))
            off = end
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after payload", field="payload", offset=off)
    try:
        model = Mlp(sizes, weights, biases, bias_mode)
    except ValueError as exc:
        raise FormatError(str(exc), field="payload") from exc
    loss = None
    if meta.get("loss"):
        try:
            loss = LossSpec.from_tag(meta["loss"])
        except ValueError as exc:
            raise FormatError(str(exc), field="loss") from exc
        if loss.output_width != sizes[-1]:
            raise FormatError("loss width does not match output layer", field="loss")
    return model, loss, meta
