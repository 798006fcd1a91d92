"""Small dense-network toolkit in float64 numpy with hand-written backward passes.

Every layer exposes ``forward(x, training) -> (y, cache)`` and
``backward(cache, dy) -> (dx, grads)``. Caches are returned to the caller
instead of stored on the layer, so a frozen network can be evaluated from
several call sites without interference.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DGPN"
FORMAT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class NoCachedForward(RuntimeError):
    pass


class VersionMismatch(ValueError):
    pass


class ChecksumMismatch(ValueError):
    pass


class DivergedLoss(FloatingPointError):
    pass


class Layer:
    trainable = True

    def params(self) -> list[np.ndarray]:
        return []

    def buffers(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray, training: bool = False):
        raise NotImplementedError

    def backward(self, cache, dy: np.ndarray):
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, training=False)[0]


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        self.n_in, self.n_out = n_in, n_out
        bound = np.sqrt(6.0 / n_in)  # Kaiming-uniform, fan-in
        if rng is None:
            self.weight = np.zeros((n_out, n_in))
        else:
            self.weight = rng.uniform(-bound, bound, size=(n_out, n_in))
        self.bias = np.zeros(n_out)

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, training=False):
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"dense layer expects width {self.n_in}, got {x.shape[-1]}")
        return x @ self.weight.T + self.bias, x

    def backward(self, cache, dy):
        x = cache
        return dy @ self.weight, [dy.T @ x, dy.sum(axis=0)]

    def describe(self):
        return {"kind": "dense", "in": self.n_in, "out": self.n_out}


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.01):
        if not 0.0 < slope < 1.0:
            raise ValueError("slope must lie in (0, 1)")
        self.slope = slope

    def forward(self, x, training=False):
        pos = x > 0
        return np.where(pos, x, self.slope * x), pos

    def backward(self, cache, dy):
        return np.where(cache, dy, self.slope * dy), []

    def describe(self):
        return {"kind": "leaky_relu", "slope": self.slope}


class ReLU(Layer):
    def forward(self, x, training=False):
        pos = x > 0
        return np.where(pos, x, 0.0), pos

    def backward(self, cache, dy):
        return np.where(cache, dy, 0.0), []

    def describe(self):
        return {"kind": "relu"}


class Sigmoid(Layer):
    def forward(self, x, training=False):
        # split by sign to stay finite for large |x|
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return y, y

    def backward(self, cache, dy):
        y = cache
        return dy * y * (1.0 - y), []

    def describe(self):
        return {"kind": "sigmoid"}


class Affine(Layer):
    """Fixed elementwise ``y = (x - shift) * scale`` used for input/output normalization."""

    def __init__(self, shift, scale):
        self.shift = np.asarray(shift, dtype=float).copy()
        self.scale = np.asarray(scale, dtype=float).copy()

    def buffers(self):
        return [self.shift, self.scale]

    def forward(self, x, training=False):
        if x.shape[-1] != self.shift.shape[0]:
            raise ShapeMismatch(f"affine expects width {self.shift.shape[0]}, got {x.shape[-1]}")
        return (x - self.shift) * self.scale, None

    def backward(self, cache, dy):
        return dy * self.scale, []

    def describe(self):
        return {"kind": "affine", "width": int(self.shift.shape[0])}


class BatchNorm(Layer):
    def __init__(self, width: int, eps: float = 1e-5, momentum: float = 0.1):
        self.width = width
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(width)
        self.beta = np.zeros(width)
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.update_stats = True

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def forward(self, x, training=False):
        if x.shape[-1] != self.width:
            raise ShapeMismatch(f"batch norm expects width {self.width}, got {x.shape[-1]}")
        if not training:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv
            return self.gamma * xhat + self.beta, ("eval", inv, xhat)
        n = x.shape[0]
        mu = x.mean(axis=0)
        xc = x - mu
        var = (xc**2).mean(axis=0)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        if self.update_stats:
            unbiased = var * n / max(n - 1, 1)
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mu
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * unbiased
        return self.gamma * xhat + self.beta, ("train", inv, xhat)

    def backward(self, cache, dy):
        mode, inv, xhat = cache
        dgamma = (dy * xhat).sum(axis=0)
        dbeta = dy.sum(axis=0)
        dxhat = dy * self.gamma
        if mode == "eval":
            return dxhat * inv, [dgamma, dbeta]
        dx = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
        return dx, [dgamma, dbeta]

    def describe(self):
        return {"kind": "batch_norm", "width": self.width, "eps": self.eps, "momentum": self.momentum}


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def buffers(self):
        return [b for layer in self.layers for b in layer.buffers()]

    def forward(self, x, training=False):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x, training)
            caches.append(c)
        return x, caches

    def backward(self, cache, dy):
        if cache is None:
            raise NoCachedForward("backward called without a forward cache")
        grads: list[list[np.ndarray]] = []
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            dy, g = layer.backward(c, dy)
            grads.append(g)
        flat = [g for group in reversed(grads) for g in group]
        return dy, flat

    def describe(self):
        return {"kind": "sequential", "layers": [layer.describe() for layer in self.layers]}


class RevBlock(Layer):
    """Additive coupling: ``y1 = x1 + F(x2)``, ``y2 = x2 + G(y1)``."""

    def __init__(self, f: Sequential, g: Sequential):
        self.f, self.g = f, g

    def params(self):
        return self.f.params() + self.g.params()

    def buffers(self):
        return self.f.buffers() + self.g.buffers()

    def forward(self, x, training=False):
        h = x.shape[-1] // 2
        x1, x2 = x[:, :h], x[:, h:]
        fx, cf = self.f.forward(x2, training)
        y1 = x1 + fx
        gy, cg = self.g.forward(y1, training)
        y2 = x2 + gy
        return np.concatenate([y1, y2], axis=1), (cf, cg, h)

    def backward(self, cache, dy):
        cf, cg, h = cache
        dy1, dy2 = dy[:, :h], dy[:, h:]
        dg_in, g_grads = self.g.backward(cg, dy2)
        dy1_total = dy1 + dg_in
        df_in, f_grads = self.f.backward(cf, dy1_total)
        dx1 = dy1_total
        dx2 = dy2 + df_in
        return np.concatenate([dx1, dx2], axis=1), f_grads + g_grads

    def inverse(self, y: np.ndarray) -> np.ndarray:
        h = y.shape[-1] // 2
        y1, y2 = y[:, :h], y[:, h:]
        x2 = y2 - self.g(y1)
        x1 = y1 - self.f(x2)
        return np.concatenate([x1, x2], axis=1)

    def describe(self):
        return {"kind": "rev_block", "f": self.f.describe(), "g": self.g.describe()}


def build(desc: dict) -> Layer:
    """Instantiate a zero-initialized layer tree from its descriptor."""
    kind = desc["kind"]
    if kind == "dense":
        return Dense(desc["in"], desc["out"])
    if kind == "leaky_relu":
        return LeakyReLU(desc["slope"])
    if kind == "relu":
        return ReLU()
    if kind == "sigmoid":
        return Sigmoid()
    if kind == "affine":
        return Affine(np.zeros(desc["width"]), np.ones(desc["width"]))
    if kind == "batch_norm":
        return BatchNorm(desc["width"], desc["eps"], desc["momentum"])
    if kind == "sequential":
        return Sequential([build(d) for d in desc["layers"]])
    if kind == "rev_block":
        return RevBlock(build(desc["f"]), build(desc["g"]))
    raise ValueError(f"unknown layer kind {kind!r}")


def iter_layers(layer: Layer):
    yield layer
    if isinstance(layer, Sequential):
        for sub in layer.layers:
            yield from iter_layers(sub)
    elif isinstance(layer, RevBlock):
        yield from iter_layers(layer.f)
        yield from iter_layers(layer.g)


def set_batchnorm_stats_update(net: Layer, enabled: bool) -> None:
    for layer in iter_layers(net):
        if isinstance(layer, BatchNorm):
            layer.update_stats = enabled


def state_arrays(net: Layer) -> list[np.ndarray]:
    """Trainable parameters followed by buffers, in a fixed order."""
    return net.params() + net.buffers()


def input_gradient(net: Layer, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Eval-mode vector-Jacobian product ``upstream^T d net(x) / dx`` row by row."""
    y, cache = net.forward(x, training=False)
    if upstream.shape != y.shape:
        raise ShapeMismatch(f"upstream {upstream.shape} does not match output {y.shape}")
    return net.backward(cache, upstream)[0]


# ---------------------------------------------------------------- optimizer


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place Adam update of ``params``."""
        if len(params) != len(grads):
            raise ShapeMismatch("parameter and gradient lists differ in length")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def cosine_lr(base: float, step: int, total: int, floor: float = 0.01) -> float:
    frac = min(step / max(total, 1), 1.0)
    return base * (floor + (1.0 - floor) * 0.5 * (1.0 + np.cos(np.pi * frac)))


def train_loop(
    net: Layer,
    loss_grad,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    rng: np.random.Generator,
    batch_size: int = 256,
    lr: float = 1e-3,
    schedule: str = "cosine",
    log=None,
) -> list[float]:
    """Mini-batch Adam training; ``loss_grad(pred, target) -> (loss, dpred)``.

    Returns the per-epoch mean training loss. Raises ``DivergedLoss`` on a
    non-finite batch loss.
    """
    opt = Adam(lr=lr)
    params = net.params()
    n = x.shape[0]
    steps_per_epoch = (n + batch_size - 1) // batch_size
    total = epochs * steps_per_epoch
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        running = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * batch_size:(b + 1) * batch_size]
            if len(idx) < 2:
                continue
            pred, cache = net.forward(x[idx], training=True)
            loss, dpred = loss_grad(pred, y[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}, batch {b}")
            _, grads = net.backward(cache, dpred)
            if schedule == "cosine":
                opt.lr = cosine_lr(lr, opt.step_count, total)
            opt.step(params, grads)
            running += loss * len(idx)
        history.append(running / n)
        if log is not None:
            log(epoch, history[-1])
    return history


def bce_loss(prob: np.ndarray, target: np.ndarray, eps: float = 1e-12):
    """Binary cross-entropy on probabilities, with the gradient w.r.t. ``prob``."""
    p = np.clip(prob, eps, 1.0 - eps)
    t = target.reshape(p.shape)
    loss = -np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    return float(loss), (p - t) / (p * (1.0 - p)) / p.size


def mse_loss(pred: np.ndarray, target: np.ndarray):
    d = pred - target
    return float(np.mean(np.sum(d * d, axis=1))), 2.0 * d / d.shape[0]


# ---------------------------------------------------------------- persistence


def save_model(net: Layer, path, metadata: dict | None = None) -> None:
    """Write ``net`` as a little-endian DGPN file with a trailing CRC32."""
    arch = json.dumps({"architecture": net.describe(), "metadata": metadata or {}}, sort_keys=True).encode()
    flat = np.concatenate([a.ravel() for a in state_arrays(net)]) if state_arrays(net) else np.zeros(0)
    body = (
        MAGIC
        + struct.pack("<I", FORMAT_VERSION)
        + struct.pack("<I", len(arch))
        + arch
        + struct.pack("<Q", flat.size)
        + flat.astype("<f8").tobytes()
    )
    crc = zlib.crc32(body) & 0xFFFFFFFF
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(body + struct.pack("<I", crc))
    tmp.replace(path)


def load_model(path) -> tuple[Layer, dict]:
    """Read a DGPN file; returns ``(network, metadata)``."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 + 4 + 8 + 4 or raw[:4] != MAGIC:
        if raw[:4] == MAGIC:
            raise ChecksumMismatch("file truncated")
        raise ValueError("not a DGPN model file")
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch("CRC32 does not match file contents")
    (version,) = struct.unpack("<I", body[4:8])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format version {version}, expected {FORMAT_VERSION}")
    (arch_len,) = struct.unpack("<I", body[8:12])
    header = json.loads(body[12:12 + arch_len])
    off = 12 + arch_len
    (count,) = struct.unpack("<Q", body[off:off + 8])
    flat = np.frombuffer(body[off + 8:], dtype="<f8")
    if flat.size != count:
        raise ChecksumMismatch("parameter block length mismatch")
    net = build(header["architecture"])
    arrays = state_arrays(net)
    if sum(a.size for a in arrays) != count:
        raise ShapeMismatch("parameter count does not match architecture")
    pos = 0
    for a in arrays:
        a[...] = flat[pos:pos + a.size].reshape(a.shape)
        pos += a.size
    return net, header["metadata"]
