"""Minimal from-scratch CNN: the layers needed by the user-selection classifier.

LeNet-style stack: conv(16@3x3, same) -> maxpool 2x2/2 -> conv(32@3x3, same)
-> maxpool -> dense(1024) -> dropout -> dense(n_classes) with softmax
cross-entropy and plain SGD.  Everything is numpy; convolutions go through
im2col so the heavy lifting is a GEMM.  Layers take and return plain
ndarrays in whatever float dtype the caller chose (float64 for gradient
checking, float32 for production training).
"""

import csv
import struct
from dataclasses import dataclass
from math import ceil

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .channel import TAG_DROPOUT, TAG_INIT, TAG_SHUFFLE, substream

CHECKPOINT_MAGIC = b"MMWN"
CHECKPOINT_VERSION = 1
_CKPT_HEADER_FMT = "<4sIIIIIIIIIdQ"


@dataclass
class NetworkConfig:
    """Architecture constants; spatial sizes follow the input shape."""

    in_height: int
    in_width: int
    n_classes: int
    in_channels: int = 2
    conv1_filters: int = 16
    conv2_filters: int = 32
    kernel_size: int = 3
    dense_units: int = 1024
    keep_prob: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in (0, 1]")
        if min(self.in_height, self.in_width, self.n_classes, self.in_channels,
               self.conv1_filters, self.conv2_filters, self.dense_units) < 1:
            raise ValueError("all architecture sizes must be positive")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd (same padding)")

    def pool_shapes(self):
        """(h, w) after each of the two ceil-mode 2x2/2 pools."""
        h1, w1 = ceil(self.in_height / 2), ceil(self.in_width / 2)
        h2, w2 = ceil(h1 / 2), ceil(w1 / 2)
        return (h1, w1), (h2, w2)

    @property
    def flat_features(self) -> int:
        (_, _), (h2, w2) = self.pool_shapes()
        return self.conv2_filters * h2 * w2


def multiply_count(cfg: NetworkConfig) -> int:
    """Real multiplies of one inference pass (convs and dense layers)."""
    k2 = cfg.kernel_size ** 2
    (h1, w1), _ = cfg.pool_shapes()
    total = cfg.conv1_filters * cfg.in_height * cfg.in_width * cfg.in_channels * k2
    total += cfg.conv2_filters * h1 * w1 * cfg.conv1_filters * k2
    total += cfg.dense_units * cfg.flat_features
    total += cfg.n_classes * cfg.dense_units
    return total


# ---------------------------------------------------------------------------
# layer primitives


def _im2col(x_padded, k):
    win = sliding_window_view(x_padded, (k, k), axis=(2, 3))
    b, c, h, w = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k), (b, h, w)


def conv2d_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padding stride-1 convolution; x (B,C,H,W), w (O,C,k,k)."""
    if x.shape[1] != w.shape[1]:
        raise ValueError("input channels do not match kernel channels")
    k = w.shape[2]
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols, (b, h, wd) = _im2col(xp, k)
    y = cols @ w.reshape(w.shape[0], -1).T + bias
    return y.reshape(b, h, wd, w.shape[0]).transpose(0, 3, 1, 2)


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Exact gradients of conv2d_forward: (grad_x, grad_w, grad_b)."""
    if grad_out.shape[1] != w.shape[0] or x.shape[1] != w.shape[1]:
        raise ValueError("gradient/kernel shapes do not match the forward pass")
    n_out, n_in, k, _ = w.shape
    p = (k - 1) // 2
    b, _, h, wd = x.shape
    gy = grad_out.transpose(0, 2, 3, 1).reshape(-1, n_out)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols, _ = _im2col(xp, k)

    grad_w = (gy.T @ cols).reshape(w.shape)
    grad_b = gy.sum(axis=0)

    gcols = (gy @ w.reshape(n_out, -1)).reshape(b, h, wd, n_in, k, k)
    gxp = np.zeros_like(xp)
    for u in range(k):
        for v in range(k):
            gxp[:, :, u:u + h, v:v + wd] += gcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return gxp[:, :, p:p + h, p:p + wd], grad_w, grad_b


def maxpool2x2_forward(x: np.ndarray):
    """Ceil-mode 2x2/2 max pool; odd edges padded with -inf. Returns (y, cache)."""
    b, c, h, w = x.shape
    h2, w2 = ceil(h / 2), ceil(w / 2)
    xp = np.full((b, c, 2 * h2, 2 * w2), -np.inf, dtype=x.dtype)
    xp[:, :, :h, :w] = x
    win = xp.reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return y, (arg, (h, w))


def maxpool2x2_backward(grad_out: np.ndarray, cache):
    """Route gradients to the argmax positions recorded by the forward pass."""
    arg, (h, w) = cache
    b, c, h2, w2 = grad_out.shape
    gwin = np.zeros((b, c, h2, w2, 4), dtype=grad_out.dtype)
    np.put_along_axis(gwin, arg[..., None], grad_out[..., None], axis=-1)
    gxp = gwin.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return gxp.reshape(b, c, 2 * h2, 2 * w2)[:, :, :h, :w]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient 0 at exactly 0
    return grad_out * (x > 0)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w.T + b with x (B, F), w (U, F)."""
    if x.shape[1] != w.shape[1]:
        raise ValueError("input features do not match weight columns")
    return x @ w.T + b


def dense_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray):
    return grad_out @ w, grad_out.T @ x, grad_out.sum(axis=0)


def dropout(x: np.ndarray, keep_prob: float, rng=None, train: bool = False):
    """Inverted dropout. Eval mode (train=False) is the identity.

    Returns (y, mask); mask is None when nothing was dropped.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError("keep_prob must lie in (0, 1]")
    if not train or keep_prob == 1.0:
        return x, None
    mask = rng.random(x.shape) < keep_prob
    return x * mask / keep_prob, mask


def dropout_backward(grad_out: np.ndarray, mask, keep_prob: float) -> np.ndarray:
    if mask is None:
        return grad_out
    return grad_out * mask / keep_prob


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels):
    """Mean NLL over the batch and its logit gradient (softmax - onehot)/B."""
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape[0] != z.shape[0]:
        raise ValueError("labels do not match the batch size")
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise ValueError("label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(y.size), y]))
    grad = softmax(z)
    grad[np.arange(y.size), y] -= 1.0
    grad /= y.size
    if single:
        grad = grad[0]
    return loss, grad.astype(logits.dtype)


# ---------------------------------------------------------------------------
# network assembly


@dataclass
class NetworkState:
    """All trainable parameters plus the SGD step counter."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray
    step: int = 0

    PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4")

    def param_items(self):
        return [(name, getattr(self, name)) for name in self.PARAM_NAMES]


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 100
    learning_rate: float = 0.01
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("invalid training configuration")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


def init_network(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> NetworkState:
    """He fan-in Gaussian init, zero biases, seeded."""
    rng = substream(seed, tag=TAG_INIT)
    k = cfg.kernel_size

    def he(shape, fan_in):
        return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)

    w1 = he((cfg.conv1_filters, cfg.in_channels, k, k), cfg.in_channels * k * k)
    w2 = he((cfg.conv2_filters, cfg.conv1_filters, k, k), cfg.conv1_filters * k * k)
    w3 = he((cfg.dense_units, cfg.flat_features), cfg.flat_features)
    w4 = he((cfg.n_classes, cfg.dense_units), cfg.dense_units)
    zeros = lambda n: np.zeros(n, dtype=dtype)
    return NetworkState(w1, zeros(cfg.conv1_filters), w2, zeros(cfg.conv2_filters),
                        w3, zeros(cfg.dense_units), w4, zeros(cfg.n_classes))


def _forward(state: NetworkState, x: np.ndarray, cfg: NetworkConfig, dropout_rng=None):
    """Full forward pass. dropout_rng=None means eval mode."""
    train = dropout_rng is not None
    c1 = conv2d_forward(x, state.w1, state.b1)
    r1 = relu(c1)
    p1, pc1 = maxpool2x2_forward(r1)
    c2 = conv2d_forward(p1, state.w2, state.b2)
    r2 = relu(c2)
    p2, pc2 = maxpool2x2_forward(r2)
    flat = p2.reshape(p2.shape[0], -1)
    d1 = dense_forward(flat, state.w3, state.b3)
    r3 = relu(d1)
    dr, mask = dropout(r3, cfg.keep_prob, dropout_rng, train=train)
    logits = dense_forward(dr, state.w4, state.b4)
    cache = (x, c1, pc1, p1, c2, pc2, p2, flat, d1, dr, mask)
    return logits, cache


def _backward(state: NetworkState, cfg: NetworkConfig, grad_logits, cache):
    x, c1, pc1, p1, c2, pc2, p2, flat, d1, dr, mask = cache
    g_dr, gw4, gb4 = dense_backward(grad_logits, dr, state.w4)
    g_r3 = dropout_backward(g_dr, mask, cfg.keep_prob)
    g_d1 = relu_backward(g_r3, d1)
    g_flat, gw3, gb3 = dense_backward(g_d1, flat, state.w3)
    g_p2 = g_flat.reshape(p2.shape)
    g_r2 = maxpool2x2_backward(g_p2, pc2)
    g_c2 = relu_backward(g_r2, c2)
    g_p1, gw2, gb2 = conv2d_backward(g_c2, p1, state.w2)
    g_r1 = maxpool2x2_backward(g_p1, pc1)
    g_c1 = relu_backward(g_r1, c1)
    _, gw1, gb1 = conv2d_backward(g_c1, x, state.w1)
    return {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2,
            "w3": gw3, "b3": gb3, "w4": gw4, "b4": gb4}


def sgd_step(state: NetworkState, grads: dict, lr: float) -> NetworkState:
    """Plain SGD update w <- w - lr*g on every parameter; bumps the counter."""
    for name, param in state.param_items():
        param -= lr * grads[name].astype(param.dtype, copy=False)
    state.step += 1
    return state


def predict(state: NetworkState, planes: np.ndarray, cfg: NetworkConfig):
    """Class label(s) and softmax probabilities for one sample or a batch."""
    single = planes.ndim == 3
    x = planes[None] if single else planes
    x = np.ascontiguousarray(x, dtype=state.w1.dtype)
    logits, _ = _forward(state, x, cfg, dropout_rng=None)
    probs = softmax(logits)
    labels = probs.argmax(axis=1)
    if single:
        return int(labels[0]), probs[0]
    return labels, probs


def accuracy(state: NetworkState, cfg: NetworkConfig, x: np.ndarray, y: np.ndarray,
             batch: int = 1000) -> float:
    hits = 0
    for lo in range(0, x.shape[0], batch):
        labels, _ = predict(state, x[lo:lo + batch], cfg)
        hits += int(np.sum(labels == y[lo:lo + batch]))
    return hits / x.shape[0]


def train(x_train, y_train, x_test, y_test, net_cfg: NetworkConfig,
          train_cfg: TrainConfig, metrics_path=None, checkpoint_path=None,
          verbose: bool = False):
    """SGD training loop with seeded shuffling and dropout.

    Returns (state, metrics) where metrics is one dict per epoch with
    train_loss, train_acc and test_acc.  Single-threaded and bit
    deterministic for a fixed (config, seed).
    """
    x_train = np.ascontiguousarray(x_train, dtype=train_cfg.dtype)
    x_test = np.ascontiguousarray(x_test, dtype=train_cfg.dtype)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_test = np.asarray(y_test, dtype=np.int64)
    if x_train.shape[1:] != (net_cfg.in_channels, net_cfg.in_height, net_cfg.in_width):
        raise ValueError("training planes do not match the network input shape")
    for y in (y_train, y_test):
        if y.size and (y.min() < 0 or y.max() >= net_cfg.n_classes):
            raise ValueError("labels exceed the configured class count")

    state = init_network(net_cfg, seed=train_cfg.seed, dtype=train_cfg.dtype)
    shuffle_rng = substream(train_cfg.seed, tag=TAG_SHUFFLE)
    dropout_rng = substream(train_cfg.seed, tag=TAG_DROPOUT)

    metrics = []
    n = x_train.shape[0]
    for epoch in range(train_cfg.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, train_cfg.batch_size):
            sel = order[lo:lo + train_cfg.batch_size]
            logits, cache = _forward(state, x_train[sel], net_cfg, dropout_rng)
            loss, grad = softmax_cross_entropy(logits, y_train[sel])
            grads = _backward(state, net_cfg, grad, cache)
            sgd_step(state, grads, train_cfg.learning_rate)
            losses.append(loss)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "train_acc": accuracy(state, net_cfg, x_train, y_train),
            "test_acc": accuracy(state, net_cfg, x_test, y_test) if y_test.size else float("nan"),
        }
        metrics.append(row)
        if verbose:
            print(f"epoch {epoch:4d}  loss {row['train_loss']:.4f}  "
                  f"train {row['train_acc']:.3f}  test {row['test_acc']:.3f}")

    if metrics_path is not None:
        with open(metrics_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "train_acc", "test_acc"])
            writer.writeheader()
            writer.writerows(metrics)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, state, net_cfg)
    return state, metrics


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state: NetworkState, cfg: NetworkConfig) -> None:
    """Config echo header followed by float32 little-endian parameter blobs."""
    header = struct.pack(
        _CKPT_HEADER_FMT, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        cfg.in_channels, cfg.in_height, cfg.in_width,
        cfg.conv1_filters, cfg.conv2_filters, cfg.kernel_size,
        cfg.dense_units, cfg.n_classes, cfg.keep_prob, state.step,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for _, param in state.param_items():
            fh.write(np.ascontiguousarray(param, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (state, cfg) in float32."""
    size = struct.calcsize(_CKPT_HEADER_FMT)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < size or blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    fields = struct.unpack(_CKPT_HEADER_FMT, blob[:size])
    if fields[1] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {fields[1]}")
    cfg = NetworkConfig(
        in_channels=fields[2], in_height=fields[3], in_width=fields[4],
        conv1_filters=fields[5], conv2_filters=fields[6], kernel_size=fields[7],
        dense_units=fields[8], n_classes=fields[9], keep_prob=fields[10],
    )
    step = fields[11]
    k = cfg.kernel_size
    shapes = [
        (cfg.conv1_filters, cfg.in_channels, k, k), (cfg.conv1_filters,),
        (cfg.conv2_filters, cfg.conv1_filters, k, k), (cfg.conv2_filters,),
        (cfg.dense_units, cfg.flat_features), (cfg.dense_units,),
        (cfg.n_classes, cfg.dense_units), (cfg.n_classes,),
    ]
    offset = size
    params = []
    for shape in shapes:
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise ValueError(f"{path} is truncated")
        params.append(np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape).copy())
        offset = end
    if offset != len(blob):
        raise ValueError(f"{path} has trailing data")
    return NetworkState(*params, step=step), cfg
