"""A small numpy convolutional regression network.

Layers run in NHWC layout internally: a heatmap tensor of shape
``(bins, n_theta, n_phi)`` is fed as an image with ``bins`` channels.
Every layer keeps the cache of its last forward pass so ``backward`` can be
called right after ``forward``.
"""

from __future__ import annotations

import copy
import io
import struct
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, NumericError

CHECKPOINT_MAGIC = b"STAPCNN1"
CHECKPOINT_VERSION = 1


class Layer:
    tag = 0
    trainable = True

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, dout, need_input_grad=True):
        raise NotImplementedError

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable buffers persisted alongside parameters."""
        return {}

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.params.items()}
        return f"{type(self).__name__}({shapes})"


class Conv2D(Layer):
    """3x3 'same' convolution. Weights are stored as ``(k, k, c_in, c_out)``."""

    tag = 1

    def __init__(self, c_in, c_out, k=3, rng=None, dtype=np.float32):
        super().__init__()
        self.k = k
        bound = np.sqrt(6.0 / (c_in * k * k))
        rng = rng or np.random.default_rng(0)
        self.params["W"] = rng.uniform(-bound, bound, (k, k, c_in, c_out)).astype(dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def _cols(self, x):
        B, H, W, C = x.shape
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        return np.concatenate(
            [xp[:, i:i + H, j:j + W, :] for i in range(self.k) for j in range(self.k)], axis=-1
        )

    def forward(self, x, train):
        B, H, W, C = x.shape
        cols = self._cols(x).reshape(B * H * W, -1)
        Wm = self.params["W"].reshape(-1, self.params["W"].shape[-1])
        self._cache = (x.shape, cols)
        out = cols @ Wm + self.params["b"]
        return out.reshape(B, H, W, -1)

    def backward(self, dout, need_input_grad=True):
        (B, H, W, C), cols = self._cache
        k, p = self.k, self.k // 2
        d2 = dout.reshape(B * H * W, -1)
        Wshape = self.params["W"].shape
        self.grads["W"] = (cols.T @ d2).reshape(Wshape)
        self.grads["b"] = d2.sum(axis=0)
        if not need_input_grad:
            return None
        dcols = (d2 @ self.params["W"].reshape(-1, Wshape[-1]).T).reshape(B, H, W, k * k, C)
        dxp = np.zeros((B, H + 2 * p, W + 2 * p, C), dtype=dout.dtype)
        n = 0
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + H, j:j + W, :] += dcols[:, :, :, n, :]
                n += 1
        return dxp[:, p:p + H, p:p + W, :]


class BatchNorm(Layer):
    """Per-channel normalization over all non-channel axes."""

    tag = 2

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x, train):
        shape = x.shape
        x2 = x.reshape(-1, shape[-1])
        n = x2.shape[0]
        # a frozen normalization layer behaves as in eval mode and keeps its statistics
        if train and self.trainable:
            ones = np.ones(n, dtype=x.dtype)
            mu = (ones @ x2) / n
            xc = x2 - mu
            var = (ones @ (xc * xc)) / n
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(self.running_mean.dtype)
            unbiased = var * n / max(n - 1, 1)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
            batch_stats = True
        else:
            xc = x2 - self.running_mean
            var = self.running_var
            batch_stats = False
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = xc * inv
        self._cache = (xhat, inv, batch_stats, shape)
        return (xhat * self.params["gamma"] + self.params["beta"]).reshape(shape)

    def backward(self, dout, need_input_grad=True):
        xhat, inv, batch_stats, shape = self._cache
        d2 = dout.reshape(-1, shape[-1])
        n = d2.shape[0]
        ones = np.ones(n, dtype=d2.dtype)
        gamma = self.params["gamma"]
        self.grads["gamma"] = ones @ (d2 * xhat)
        self.grads["beta"] = ones @ d2
        if not need_input_grad:
            return None
        if not batch_stats:
            return (d2 * (gamma * inv)).reshape(shape)
        g = gamma * inv
        dx = (d2 - (self.grads["beta"] + xhat * self.grads["gamma"]) / n) * g
        return dx.reshape(shape)

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class ReLU(Layer):
    tag = 3

    def forward(self, x, train):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout, need_input_grad=True):
        return dout * self._mask


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    tag = 4

    def forward(self, x, train):
        B, H, W, C = x.shape
        H2, W2 = H // 2, W // 2
        q = [x[:, i:2 * H2:2, j:2 * W2:2, :] for i in (0, 1) for j in (0, 1)]
        out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
        # route each gradient to the first maximal element of its window
        taken = np.zeros(out.shape, dtype=bool)
        masks = []
        for part in q:
            m = (part == out) & ~taken
            taken |= m
            masks.append(m)
        self._cache = (x.shape, masks)
        return out

    def backward(self, dout, need_input_grad=True):
        (B, H, W, C), masks = self._cache
        H2, W2 = H // 2, W // 2
        dx = np.zeros((B, H, W, C), dtype=dout.dtype)
        n = 0
        for i in (0, 1):
            for j in (0, 1):
                dx[:, i:2 * H2:2, j:2 * W2:2, :] = dout * masks[n]
                n += 1
        return dx


class Flatten(Layer):
    tag = 5

    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, need_input_grad=True):
        return dout.reshape(self._shape)


class Dense(Layer):
    tag = 6

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32, gain=6.0):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        bound = np.sqrt(gain / n_in)
        self.params["W"] = rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x, train):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout, need_input_grad=True):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        if not need_input_grad:
            return None
        return dout @ self.params["W"].T


class Tanh(Layer):
    tag = 7

    def forward(self, x, train):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dout, need_input_grad=True):
        return dout * (1 - self._y**2)


LAYER_TYPES = {cls.tag: cls for cls in (Conv2D, BatchNorm, ReLU, MaxPool2, Flatten, Dense, Tanh)}


class CnnModel:
    def __init__(self, layers: list[Layer], input_dims: tuple[int, int, int], dtype=np.float32):
        self.layers = layers
        self.input_dims = tuple(int(d) for d in input_dims)
        self.dtype = np.dtype(dtype)
        self.adam_m: dict = {}
        self.adam_v: dict = {}
        self.adam_step = 0

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield (i, name), layer, p

    def num_params(self, trainable_only=False) -> int:
        return sum(p.size for _, layer, p in self.named_params() if layer.trainable or not trainable_only)

    def copy(self) -> "CnnModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "CnnModel":
        m = self.copy()
        m.dtype = np.dtype(dtype)
        for layer in m.layers:
            for k in layer.params:
                layer.params[k] = layer.params[k].astype(dtype)
            if isinstance(layer, BatchNorm):
                layer.running_mean = layer.running_mean.astype(dtype)
                layer.running_var = layer.running_var.astype(dtype)
        m.adam_m, m.adam_v, m.adam_step = {}, {}, 0
        return m


def default_architecture(input_dims=(5, 26, 21), seed=0, dtype=np.float32) -> CnnModel:
    """conv32-bn-relu, conv64-bn-relu, pool, conv64-bn-relu, pool, dense256-relu, dense3-tanh.

    The second pool keeps the dense fan-in small enough that Adam at 1e-3
    does not drive the tanh output into saturation.
    """
    rng = np.random.default_rng(seed)
    kappa, nt, nph = input_dims
    flat = 64 * (nt // 4) * (nph // 4)
    layers = [
        Conv2D(kappa, 32, rng=rng, dtype=dtype), BatchNorm(32, dtype=dtype), ReLU(),
        Conv2D(32, 64, rng=rng, dtype=dtype), BatchNorm(64, dtype=dtype), ReLU(),
        MaxPool2(),
        Conv2D(64, 64, rng=rng, dtype=dtype), BatchNorm(64, dtype=dtype), ReLU(),
        MaxPool2(),
        Flatten(),
        Dense(flat, 256, rng=rng, dtype=dtype), ReLU(),
        Dense(256, 3, rng=rng, dtype=dtype, gain=3.0), Tanh(),
    ]
    return CnnModel(layers, input_dims, dtype)


def _to_nhwc(model: CnnModel, batch) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != model.input_dims:
        raise ValueError(f"batch shape {batch.shape} does not match model input (B, {model.input_dims})")
    return np.ascontiguousarray(batch.transpose(0, 2, 3, 1), dtype=model.dtype)


def _run(model, x, train, start=0, stop=None, check=False):
    for i, layer in enumerate(model.layers[start:stop], start):
        x = layer.forward(x, train)
        if check and not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite values after layer {i} ({type(layer).__name__})")
    return x


def forward(model: CnnModel, batch, mode: str = "eval") -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return _run(model, _to_nhwc(model, batch), mode == "train")


def predict(model: CnnModel, data, batch_size=256) -> np.ndarray:
    out = [forward(model, data[i:i + batch_size], "eval") for i in range(0, len(data), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, 3), dtype=model.dtype)


def _backward(model, dout, start=0):
    for i in range(len(model.layers) - 1, start - 1, -1):
        layer = model.layers[i]
        dout = layer.backward(dout, need_input_grad=i > start)
        if dout is None:
            break


def loss_and_gradients(model: CnnModel, batch, labels, mode: str = "train"):
    """Mean squared error over all ``B x 3`` entries and its exact gradients.

    Returns ``(loss, grads)`` with ``grads`` keyed by ``(layer_index, name)``.
    """
    labels = np.asarray(labels, dtype=model.dtype)
    x = _to_nhwc(model, batch)
    y = _run(model, x, mode == "train", check=True)
    if labels.shape != y.shape:
        raise ValueError(f"labels shape {labels.shape} does not match outputs {y.shape}")
    diff = y - labels
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    _backward(model, (2.0 / diff.size) * diff)
    grads = {key: layer.grads[key[1]] for key, layer, _ in model.named_params()}
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    rng_seed: int = 0
    freeze_features: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


def adam_step(model: CnnModel, gradients: dict, config: TrainConfig, step_index: Optional[int] = None) -> CnnModel:
    """Bias-corrected Adam update of every trainable parameter, in place.

    ``step_index`` is 1-based; by default the model's own counter advances.
    """
    t = model.adam_step + 1 if step_index is None else int(step_index)
    model.adam_step = t
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.epsilon
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for key, layer, p in model.named_params():
        if not layer.trainable:
            continue
        g = gradients[key]
        m = model.adam_m.get(key)
        if m is None:
            m = np.zeros_like(p)
            model.adam_v[key] = np.zeros_like(p)
        v = model.adam_v[key]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        model.adam_m[key] = m
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return model


def _frozen_prefix(model: CnnModel) -> int:
    """Number of leading layers whose output does not depend on trainable state."""
    n = 0
    for layer in model.layers:
        if layer.params and layer.trainable:
            break
        n += 1
    return n


def train(model: CnnModel, dataset, config: TrainConfig):
    """Minibatch Adam on ``dataset = (inputs, labels)``.

    Inputs are ``(N, bins, n_theta, n_phi)``; labels ``(N, 3)`` encoded
    coordinates. Shuffling is seeded per epoch. When the leading layers are
    frozen their (eval-mode) outputs are computed once and reused.
    """
    inputs, labels = dataset
    labels = np.asarray(labels, dtype=model.dtype)
    n = len(inputs)
    if n == 0:
        raise ValueError("empty dataset")
    history = []
    if config.epochs == 0:
        return model, history
    rng = np.random.default_rng(config.rng_seed)
    start = _frozen_prefix(model)
    if start:
        feats = np.concatenate(
            [_run(model, _to_nhwc(model, inputs[i:i + 256]), False, 0, start) for i in range(0, n, 256)]
        )
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b in range(0, n, config.batch_size):
            idx = order[b:b + config.batch_size]
            x = feats[idx] if start else _to_nhwc(model, inputs[idx])
            y = _run(model, x, True, start, check=True)
            diff = y - labels[idx]
            total += float(np.sum(diff.astype(np.float64) ** 2))
            _backward(model, (2.0 / diff.size) * diff, start)
            grads = {key: layer.grads.get(key[1]) for key, layer, _ in model.named_params() if layer.trainable}
            adam_step(model, grads, config)
        history.append(total / (3 * n))
    return model, history


def freeze_features(model: CnnModel) -> CnnModel:
    for layer in model.layers:
        if isinstance(layer, (Conv2D, BatchNorm)):
            layer.trainable = False
    return model


def freeze_and_finetune(model: CnnModel, fsl_examples, config: Optional[TrainConfig] = None):
    """Copy ``model``, freeze its convolution and normalization layers and
    fine-tune the dense head on the few-shot examples.

    Adam continues from the moments left by training. Restarted moments make
    the first updates ``lr * sign(g)`` on every head weight, which on a wide
    dense layer moves the output far more than the few examples justify.
    The default is full-batch steps over the whole few-shot set.
    """
    config = config or TrainConfig(learning_rate=5e-4, epochs=5, batch_size=64)
    inputs, labels = fsl_examples
    if len(inputs) == 0:
        raise ValueError("empty few-shot set")
    tuned = freeze_features(model.copy())
    total = tuned.num_params()
    trainable = tuned.num_params(trainable_only=True)
    if not total / 4 <= trainable <= total:
        raise AssertionError(f"{trainable} of {total} parameters trainable; expected about half")
    tuned, _ = train(tuned, (inputs, labels), replace(config, freeze_features=True))
    return tuned


# ---------------------------------------------------------- gradient checking


def _routing(model):
    """Snapshot of every piecewise-linear switch taken in the last forward pass."""
    return [m for layer in model.layers for m in _routing_of(layer)]


def finite_difference_check(model: CnnModel, batch, labels, samples=8, step=1e-4, floor=1e-6, seed=0, max_tries=50):
    """Compare analytic gradients with central differences, per parameter tensor.

    Entries whose +/- step evaluations take different ReLU or max-pool routes
    sit on a kink of the loss and are redrawn; relative error is
    ``|fd - an| / max(|fd| + |an|, floor)``. Returns ``{key: (max_rel_err, n_checked, n_skipped)}``.
    """
    m = model.astype(np.float64)
    x = _to_nhwc(m, batch)
    _, grads = loss_and_gradients(m, batch, labels)
    grads = {k: v.copy() for k, v in grads.items()}
    y_true = np.asarray(labels, dtype=np.float64)

    def loss_at():
        y = _run(m, x, True)
        return float(np.mean((y - y_true) ** 2)), _routing(m)

    rng = np.random.default_rng(seed)
    result = {}
    for key, layer, p in m.named_params():
        worst, checked, skipped = 0.0, 0, 0
        for _ in range(max_tries):
            if checked == min(samples, p.size):
                break
            ix = tuple(int(rng.integers(0, s)) for s in p.shape)
            old = p[ix]
            p[ix] = old + step
            lp, rp = loss_at()
            p[ix] = old - step
            lm, rm = loss_at()
            p[ix] = old
            if any(not np.array_equal(a, b) for a, b in zip(rp, rm)):
                skipped += 1
                continue
            fd = (lp - lm) / (2 * step)
            an = float(grads[key][ix])
            worst = max(worst, abs(fd - an) / max(abs(fd) + abs(an), floor))
            checked += 1
        result[key] = (worst, checked, skipped)
    return result


def layerwise_gradient_check(model: CnnModel, batch, samples=8, step=1e-4, floor=1e-6, seed=0, max_tries=50):
    """Check each layer's backward pass in isolation on its real activations.

    Every layer sees the input it receives in a train-mode forward pass of
    ``batch``; the scalar probe is ``sum(R * layer(x))`` for a fixed random
    ``R``. Both parameter and input gradients are compared with central
    differences. Stencils that change the layer's own routing are redrawn.
    Returns ``{(layer_index, name): (max_rel_err, n_checked, n_skipped)}``
    where ``name`` is a parameter name or ``"input"``.
    """
    m = model.astype(np.float64)
    rng = np.random.default_rng(seed)
    x = _to_nhwc(m, batch)
    result = {}
    for i, layer in enumerate(m.layers):
        x_in = x.copy()
        y = layer.forward(x_in, True)
        R = rng.standard_normal(y.shape)
        dx = layer.backward(R, need_input_grad=True)
        analytic = {name: g.copy() for name, g in layer.grads.items()}
        analytic["input"] = dx
        targets = dict(layer.params)
        targets["input"] = x_in
        # running statistics must not drift while probing
        saved = layer.state()
        saved = {k: v.copy() for k, v in saved.items()}

        def probe():
            out = float(np.sum(R * layer.forward(x_in, True)))
            return out, _routing_of(layer)

        for name, arr in targets.items():
            worst, checked, skipped = 0.0, 0, 0
            for _ in range(max_tries):
                if checked == min(samples, arr.size):
                    break
                ix = tuple(int(rng.integers(0, s)) for s in arr.shape)
                old = arr[ix]
                arr[ix] = old + step
                fp, rp = probe()
                arr[ix] = old - step
                fm, rm = probe()
                arr[ix] = old
                if any(not np.array_equal(a, b) for a, b in zip(rp, rm)):
                    skipped += 1
                    continue
                fd = (fp - fm) / (2 * step)
                an = float(analytic[name][ix])
                worst = max(worst, abs(fd - an) / max(abs(fd) + abs(an), floor))
                checked += 1
            result[(i, name)] = (worst, checked, skipped)
        for k, v in saved.items():
            setattr(layer, k, v)
        x = layer.forward(x, True)
    return result


def _routing_of(layer):
    if isinstance(layer, ReLU):
        return [layer._mask.copy()]
    if isinstance(layer, MaxPool2):
        return [m.copy() for m in layer._cache[1]]
    return []


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: CnnModel, path, include_adam: bool = True) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<3I", *model.input_dims))
    buf.write(struct.pack("<I", len(model.layers)))
    for layer in model.layers:
        buf.write(struct.pack("<III", layer.tag, int(layer.trainable), len(layer.params)))
        for name, p in layer.params.items():
            nb = name.encode()
            buf.write(struct.pack("<I", len(nb)) + nb)
            buf.write(struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
    params = [p for _, _, p in model.named_params()]
    for p in params:
        buf.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    has_adam = include_adam and model.adam_step > 0 and bool(model.adam_m)
    buf.write(struct.pack("<I", int(has_adam)))
    if has_adam:
        buf.write(struct.pack("<Q", model.adam_step))
        for key, _, p in model.named_params():
            m = model.adam_m.get(key, np.zeros_like(p))
            v = model.adam_v.get(key, np.zeros_like(p))
            buf.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
            buf.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    for layer in model.layers:
        if isinstance(layer, BatchNorm):
            buf.write(struct.pack("<dd", layer.momentum, layer.eps))
            buf.write(np.ascontiguousarray(layer.running_mean, dtype="<f4").tobytes())
            buf.write(np.ascontiguousarray(layer.running_var, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint: wanted {n} bytes", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape):
        count = int(np.prod(shape)) if len(shape) else 1
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)


def load_checkpoint(path) -> CnnModel:
    with open(path, "rb") as f:
        rd = _Reader(f.read())
    if rd.take(8) != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    (version,) = rd.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    dims = rd.unpack("<3I")
    (n_layers,) = rd.unpack("<I")
    manifest = []
    for _ in range(n_layers):
        at = rd.pos
        tag, trainable, n_params = rd.unpack("<III")
        if tag not in LAYER_TYPES:
            raise FormatError(f"unknown layer tag {tag}", at)
        shapes = []
        for _ in range(n_params):
            (ln,) = rd.unpack("<I")
            name = rd.take(ln).decode()
            (nd,) = rd.unpack("<I")
            shapes.append((name, rd.unpack(f"<{nd}I") if nd else ()))
        manifest.append((tag, bool(trainable), shapes))
    layers = []
    for tag, trainable, shapes in manifest:
        layer = LAYER_TYPES[tag].__new__(LAYER_TYPES[tag])
        Layer.__init__(layer)
        for name, shape in shapes:
            layer.params[name] = rd.floats(shape).copy()
        if tag == Conv2D.tag:
            layer.k = layer.params["W"].shape[0]
        layer.trainable = trainable
        layers.append(layer)
    model = CnnModel(layers, dims, np.float32)
    (has_adam,) = rd.unpack("<I")
    if has_adam:
        (model.adam_step,) = rd.unpack("<Q")
        for key, _, p in model.named_params():
            model.adam_m[key] = rd.floats(p.shape).copy()
            model.adam_v[key] = rd.floats(p.shape).copy()
    for layer in layers:
        if isinstance(layer, BatchNorm):
            layer.momentum, layer.eps = rd.unpack("<dd")
            c = layer.params["gamma"].shape[0]
            layer.running_mean = rd.floats((c,)).copy()
            layer.running_var = rd.floats((c,)).copy()
    if rd.pos != len(rd.data):
        raise FormatError("trailing bytes after checkpoint", rd.pos)
    return model
