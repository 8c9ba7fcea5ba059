"""Small differentiable layers with hand-written backward passes.

Every layer follows the same protocol::

    y, cache = layer.forward(x)
    dx = layer.backward(dy, cache)   # accumulates into layer gradients

Forward passes never mutate layer state, so a layer can run forward over
several inputs before the corresponding backward calls.
"""

import struct

import numpy as np

from .exceptions import EmptyGroup, IncompatibleCheckpoint, MalformedFile, ShapeMismatch

CHECKPOINT_MAGIC = b"RFN1"


def glorot_uniform(fan_in, fan_out, rng):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    """Fully connected layer ``act(x @ W + b)`` on ``(rows, fan_in)`` inputs."""

    def __init__(self, fan_in, fan_out, activation="relu", rng=None):
        if activation not in ("relu", None):
            raise ValueError(f"unsupported activation {activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.activation = activation
        self.W = glorot_uniform(fan_in, fan_out, rng)
        self.b = np.zeros(fan_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    @property
    def fan_in(self):
        return self.W.shape[0]

    @property
    def fan_out(self):
        return self.W.shape[1]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ShapeMismatch(f"dense layer expects (*, {self.fan_in}), got {x.shape}")
        z = x @ self.W + self.b
        if self.activation == "relu":
            return np.maximum(z, 0.0), (x, z)
        return z, (x, None)

    def backward(self, dy, cache):
        x, z = cache
        if z is not None:
            dy = dy * (z > 0)
        self.dW += x.T @ dy
        self.db += dy.sum(axis=0)
        return dy @ self.W.T

    def parameters(self):
        return [self.W, self.b]

    def gradients(self):
        return [self.dW, self.db]

    def layers(self):
        return [self]

    def zero_grad(self):
        self.dW.fill(0.0)
        self.db.fill(0.0)


def dense_forward(layer, x):
    return layer.forward(x)[0]


class MLP:
    """Stack of dense layers shared across all rows (a per-point perceptron)."""

    def __init__(self, fan_in, widths, rng=None, final_activation="relu"):
        rng = np.random.default_rng(0) if rng is None else rng
        self._layers = []
        prev = fan_in
        for i, w in enumerate(widths):
            act = final_activation if i == len(widths) - 1 else "relu"
            self._layers.append(Dense(prev, w, act, rng))
            prev = w
        self.fan_in = fan_in
        self.fan_out = prev

    def forward(self, x):
        caches = []
        for layer in self._layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, dy, caches):
        for layer, c in zip(reversed(self._layers), reversed(caches)):
            dy = layer.backward(dy, c)
        return dy

    def layers(self):
        return list(self._layers)

    def parameters(self):
        return [p for layer in self._layers for p in layer.parameters()]

    def gradients(self):
        return [g for layer in self._layers for g in layer.gradients()]

    def zero_grad(self):
        for layer in self._layers:
            layer.zero_grad()


class SharedMLP(MLP):
    """MLP applied to every point of a grouped ``(..., fan_in)`` tensor."""

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        lead = x.shape[:-1]
        y, caches = super().forward(x.reshape(-1, x.shape[-1]))
        return y.reshape(*lead, y.shape[-1]), (lead, caches)

    def backward(self, dy, cache):
        lead, caches = cache
        dx = super().backward(dy.reshape(-1, dy.shape[-1]), caches)
        return dx.reshape(*lead, dx.shape[-1])


class Identity:
    """Parameter-free stand-in where an MLP slot is configured empty."""

    def forward(self, x):
        return np.asarray(x, dtype=np.float64), None

    def backward(self, dy, cache):
        return dy

    def layers(self):
        return []

    def parameters(self):
        return []

    def gradients(self):
        return []

    def zero_grad(self):
        pass


def scatter_add(index, values, n_rows):
    """``out[index[i]] += values[i]`` row-wise, into a fresh ``(n_rows, F)`` array."""
    index = np.asarray(index).reshape(-1)
    values = np.asarray(values, dtype=np.float64).reshape(len(index), -1)
    F = values.shape[1]
    flat = (index[:, None] * F + np.arange(F)).reshape(-1)
    return np.bincount(flat, weights=values.reshape(-1), minlength=n_rows * F).reshape(n_rows, F)


def set_maxpool(grouped):
    """Channel-wise max over axis -2 of a ``(..., group_size, channels)`` array.

    Returns ``(pooled, argmax)``; ties resolve to the first index.
    """
    grouped = np.asarray(grouped, dtype=np.float64)
    if grouped.ndim < 2 or grouped.shape[-2] == 0:
        raise EmptyGroup("cannot max-pool an empty group")
    arg = np.argmax(grouped, axis=-2)
    pooled = np.take_along_axis(grouped, arg[..., None, :], axis=-2)[..., 0, :]
    return pooled, arg


def set_maxpool_backward(dpooled, arg, group_size):
    """Route ``dpooled`` to the arg-max rows recorded by :func:`set_maxpool`."""
    lead = arg.shape[:-1]
    channels = arg.shape[-1]
    out = np.zeros((*lead, group_size, channels))
    np.put_along_axis(out, arg[..., None, :], dpooled[..., None, :], axis=-2)
    return out


class SetMaxPool:
    """Layer wrapper around :func:`set_maxpool`."""

    def forward(self, grouped):
        pooled, arg = set_maxpool(grouped)
        return pooled, (arg, np.shape(grouped)[-2])

    def backward(self, dy, cache):
        arg, k = cache
        return set_maxpool_backward(dy, arg, k)

    def layers(self):
        return []

    def parameters(self):
        return []

    def gradients(self):
        return []

    def zero_grad(self):
        pass


# -- losses ------------------------------------------------------------------


def _reduce(values, reduction):
    if reduction == "sum":
        return float(values.sum())
    if reduction == "mean":
        return float(values.mean()) if values.size else 0.0
    if reduction == "none":
        return values
    raise ValueError(f"unknown reduction {reduction!r}")


def smooth_l1(pred, target, beta=1.0, reduction="sum"):
    """Huber-style loss: ``0.5 d^2 / beta`` below ``beta``, ``|d| - 0.5 beta`` above."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    ad = np.abs(d)
    values = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    return _reduce(values, reduction)


def smooth_l1_grad(pred, target, beta=1.0):
    """Gradient of the summed :func:`smooth_l1` with respect to ``pred``."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.where(np.abs(d) < beta, d / beta, np.sign(d))


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def cross_entropy(logits, labels, reduction="sum"):
    """Softmax cross entropy of ``(n, classes)`` logits against integer labels."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    lp = log_softmax(logits)
    values = -lp[np.arange(len(labels)), labels]
    return _reduce(values, reduction)


def cross_entropy_grad(logits, labels):
    """Gradient of the summed :func:`cross_entropy` with respect to ``logits``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    g = softmax(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    return g


def squared_error(y, target):
    """``0.5 * sum((y - target)^2)`` and its gradient; the usual grad-check loss."""
    d = np.asarray(y) - np.asarray(target)
    return 0.5 * float(np.sum(d * d)), d


# -- gradient checking ---------------------------------------------------------


def relative_error(analytic, numeric, floor=1e-10):
    a, n = float(analytic), float(numeric)
    scale = max(abs(a), abs(n))
    if scale < floor:
        return abs(a - n)
    return abs(a - n) / scale


def grad_check(network, x, loss, step=1e-5, max_entries=None, rng=None):
    """Worst relative error between analytic and central-difference gradients.

    ``network`` follows the layer protocol plus ``parameters()``,
    ``gradients()`` and ``zero_grad()``; ``loss(y)`` returns
    ``(value, dvalue/dy)``.  With ``max_entries`` only a random subset of
    parameter entries per array is probed.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    network.zero_grad()
    y, cache = network.forward(x)
    _, dy = loss(y)
    network.backward(dy, cache)
    analytic = [g.copy() for g in network.gradients()]

    def value():
        return loss(network.forward(x)[0])[0]

    worst = 0.0
    for p, g in zip(network.parameters(), analytic):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = value()
            flat[i] = orig - step
            down = value()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            worst = max(worst, relative_error(g.reshape(-1)[i], numeric))
    network.zero_grad()
    return worst


# -- optimisation -------------------------------------------------------------


class StepSchedule:
    """Learning rate divided by ``factor`` once ``epoch >= drop_epoch``."""

    def __init__(self, base_lr=0.002, drop_epoch=40, factor=10.0):
        self.base_lr = base_lr
        self.drop_epoch = drop_epoch
        self.factor = factor

    def __call__(self, epoch):
        if self.drop_epoch is not None and epoch >= self.drop_epoch:
            return self.base_lr / self.factor
        return self.base_lr


class Adam:
    def __init__(self, params, lr=0.002, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * corr * m / (np.sqrt(v) + self.eps)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, layers):
    """Write dense layers as ``RFN1`` + per layer (u32 in, u32 out, f64 W, f64 b)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for layer in layers:
            fh.write(struct.pack("<II", layer.fan_in, layer.fan_out))
            fh.write(np.ascontiguousarray(layer.W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Return the list of ``(W, b)`` arrays stored in a checkpoint file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise MalformedFile(f"{path}: not a parameter checkpoint")
    out = []
    pos = 4
    while pos < len(data):
        if pos + 8 > len(data):
            raise MalformedFile(f"{path}: truncated layer header")
        fan_in, fan_out = struct.unpack_from("<II", data, pos)
        pos += 8
        n = fan_in * fan_out + fan_out
        if pos + 8 * n > len(data):
            raise MalformedFile(f"{path}: truncated layer payload")
        vals = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        out.append((vals[:fan_in * fan_out].reshape(fan_in, fan_out), vals[fan_in * fan_out:].copy()))
    return out


def load_checkpoint(path, layers):
    """Copy checkpoint parameters into ``layers`` in order."""
    stored = read_checkpoint(path)
    if len(stored) != len(layers):
        raise IncompatibleCheckpoint(
            f"checkpoint has {len(stored)} layers, model expects {len(layers)}")
    for i, (layer, (W, b)) in enumerate(zip(layers, stored)):
        if W.shape != layer.W.shape:
            raise IncompatibleCheckpoint(
                f"layer {i}: checkpoint shape {W.shape}, model shape {layer.W.shape}")
        layer.W[...] = W
        layer.b[...] = b
