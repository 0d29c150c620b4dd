"""Stereo U-Net magnitude masker.

Encoder: ``depth`` blocks of 5x5 stride-2 convolution, batch normalization and
leaky ReLU (0.2); channels double from ``base_channels``. Decoder: ``depth``
blocks of 5x5 stride-2 transposed convolution, batch normalization, ReLU and
dropout on the first three blocks, each (after the first) fed the previous
decoder output concatenated with the mirror encoder output. A 1x1 convolution
with a sigmoid produces one mask value per input channel and bin.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import InvalidInputError, NumericError, ShapeError
from . import layers as L


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 5
    base_channels: int = 16
    kernel: int = 5
    stride: int = 2
    dropout: float = 0.5
    dropout_layers: int = 3
    input_shape: tuple = (2, 512, 1024)
    leaky_slope: float = 0.2
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        _, frames, bins = self.input_shape
        div = self.stride ** self.depth
        if frames % div or bins % div:
            raise ValueError(f"input axes {frames}x{bins} not divisible by {div}")

    @property
    def encoder_channels(self) -> list[int]:
        return [self.base_channels * 2 ** i for i in range(self.depth)]

    def decoder_io(self) -> list[tuple[int, int]]:
        ch = self.encoder_channels
        io = []
        for j in range(self.depth):
            cin = ch[-1] if j == 0 else 2 * ch[self.depth - 1 - j]
            cout = ch[self.depth - 2 - j] if j < self.depth - 1 else self.base_channels
            io.append((cin, cout))
        return io

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d


@dataclass
class ModelParams:
    """Trainable weights plus normalization running statistics.

    ``weights`` and ``stats`` are ordered dicts; :meth:`flat` concatenates
    ``weights`` in that order.
    """

    config: UNetConfig
    weights: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights.values()])

    def with_flat(self, vector: np.ndarray) -> "ModelParams":
        out, i = {}, 0
        for k, w in self.weights.items():
            out[k] = np.asarray(vector[i:i + w.size], dtype=np.float64).reshape(w.shape)
            i += w.size
        if i != len(vector):
            raise ShapeError(f"flat vector has {len(vector)} values, model needs {i}")
        return ModelParams(self.config, out, {k: v.copy() for k, v in self.stats.items()})

    @property
    def size(self) -> int:
        return sum(w.size for w in self.weights.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()},
                           {k: v.copy() for k, v in self.stats.items()})

    def __call__(self, mixture: np.ndarray) -> np.ndarray:
        """Inference: estimated magnitude for ``mixture``."""
        return forward(self, mixture)[1]


def init_params(config: UNetConfig, seed: int = 0) -> ModelParams:
    """He-normal weights, unit gains, zero offsets."""
    rng = np.random.default_rng(seed)
    k = config.kernel
    w, s = {}, {}
    cin = config.input_shape[0]
    for i, cout in enumerate(config.encoder_channels):
        w[f"enc{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (cout, cin, k, k))
        w[f"enc{i}.gamma"] = np.ones(cout)
        w[f"enc{i}.beta"] = np.zeros(cout)
        s[f"enc{i}.mean"] = np.zeros(cout)
        s[f"enc{i}.var"] = np.ones(cout)
        cin = cout
    for j, (ci, co) in enumerate(config.decoder_io()):
        # transposed-conv fan-in: each output sees ~ci*k*k/stride^2 inputs
        fan_in = ci * k * k / config.stride ** 2
        w[f"dec{j}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (ci, co, k, k))
        w[f"dec{j}.gamma"] = np.ones(co)
        w[f"dec{j}.beta"] = np.zeros(co)
        s[f"dec{j}.mean"] = np.zeros(co)
        s[f"dec{j}.var"] = np.ones(co)
    n_out = config.input_shape[0]
    w["out.w"] = rng.normal(0.0, np.sqrt(1.0 / config.base_channels), (n_out, config.base_channels, 1, 1))
    w["out.b"] = np.zeros(n_out)
    return ModelParams(config, w, s)


def _check(x, name):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {name}", layer=name)


def _batched(mixture: np.ndarray, config: UNetConfig) -> np.ndarray:
    x = np.asarray(mixture, dtype=np.float64)
    if x.ndim == 3:
        x = x[np.newaxis]
    if x.ndim != 4 or x.shape[1:] != config.input_shape:
        raise ShapeError(f"expected input (…, {config.input_shape}), got {np.shape(mixture)}")
    return x


def _run(params: ModelParams, x: np.ndarray, training: bool, rng):
    """Forward pass on a batch. Returns (mask, cache)."""
    cfg = params.config
    w = params.weights
    cache = {"x": x, "enc": [], "dec": [], "batch_stats": {}}
    h = x
    skips = []
    for i in range(cfg.depth):
        z, conv_cache = L.conv2d(h, w[f"enc{i}.w"], cfg.stride)
        if training:
            zn, bn_cache, mean, var = L.batchnorm(z, w[f"enc{i}.gamma"], w[f"enc{i}.beta"], cfg.bn_eps)
            cache["batch_stats"][f"enc{i}"] = (mean, var)
        else:
            zn = L.batchnorm_inference(z, w[f"enc{i}.gamma"], w[f"enc{i}.beta"],
                                       params.stats[f"enc{i}.mean"], params.stats[f"enc{i}.var"], cfg.bn_eps)
            bn_cache = None
        h = L.leaky_relu(zn, cfg.leaky_slope)
        _check(h, f"enc{i}")
        cache["enc"].append((conv_cache, bn_cache, zn))
        skips.append(h)
    for j in range(cfg.depth):
        if j > 0:
            h = np.concatenate([h, skips[cfg.depth - 1 - j]], axis=1)
        z, conv_cache = L.conv_transpose2d(h, w[f"dec{j}.w"], cfg.stride)
        if training:
            zn, bn_cache, mean, var = L.batchnorm(z, w[f"dec{j}.gamma"], w[f"dec{j}.beta"], cfg.bn_eps)
            cache["batch_stats"][f"dec{j}"] = (mean, var)
        else:
            zn = L.batchnorm_inference(z, w[f"dec{j}.gamma"], w[f"dec{j}.beta"],
                                       params.stats[f"dec{j}.mean"], params.stats[f"dec{j}.var"], cfg.bn_eps)
            bn_cache = None
        h = np.maximum(zn, 0.0)
        drop = None
        if training and rng is not None and cfg.dropout > 0 and j < cfg.dropout_layers:
            keep = 1.0 - cfg.dropout
            drop = (rng.random(h.shape) < keep) / keep
            h = h * drop
        _check(h, f"dec{j}")
        cache["dec"].append((conv_cache, bn_cache, zn, drop))
    cache["head_in"] = h
    logits = np.tensordot(h, w["out.w"][:, :, 0, 0], axes=([1], [1])).transpose(0, 3, 1, 2)
    logits = logits + w["out.b"].reshape(1, -1, 1, 1)
    mask = L.sigmoid(logits)
    _check(mask, "out")
    cache["mask"] = mask
    return mask, cache


def forward(params: ModelParams, mixture: np.ndarray, training: bool = False, rng=None):
    """Return ``(mask, estimate)`` with ``estimate = mask * mixture``.

    Accepts a single ``(channels, frames, bins)`` grid or a batch of them; the
    output has the same layout as the input. In inference mode normalization
    uses the running statistics and dropout is off.
    """
    x = _batched(mixture, params.config)
    if np.any(x < 0):
        raise InvalidInputError("mixture magnitudes must be nonnegative")
    mask, _ = _run(params, x, training, rng)
    est = mask * x
    if np.ndim(mixture) == 3:
        return mask[0], est[0]
    return mask, est


def l1_masked_loss(estimate: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute difference between estimate and target."""
    if np.shape(estimate) != np.shape(target):
        raise ShapeError(f"shape mismatch {np.shape(estimate)} vs {np.shape(target)}")
    return float(np.mean(np.abs(np.asarray(estimate) - np.asarray(target))))


def loss_and_grads(params: ModelParams, mixture: np.ndarray, target: np.ndarray,
                   rng=None, training: bool = True):
    """Loss and gradient dict (same keys as ``params.weights``).

    Also returns the per-layer batch statistics used by the training-mode
    normalization, so callers can update running averages. The subgradient
    of ``|d|`` at ``d == 0`` is taken as 0.
    """
    cfg = params.config
    w = params.weights
    x = _batched(mixture, cfg)
    y = _batched(target, cfg)
    mask, cache = _run(params, x, training, rng)
    diff = mask * x - y
    loss = float(np.mean(np.abs(diff)))

    g = {}
    dmask = np.sign(diff) * x / diff.size
    dlogits = dmask * mask * (1.0 - mask)
    h = cache["head_in"]
    g["out.b"] = dlogits.sum(axis=(0, 2, 3))
    g["out.w"] = np.tensordot(dlogits, h, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
    dh = np.tensordot(dlogits, w["out.w"][:, :, 0, 0], axes=([1], [0])).transpose(0, 3, 1, 2)
    _check(dh, "out")

    dskips = [None] * cfg.depth
    for j in reversed(range(cfg.depth)):
        conv_cache, bn_cache, zn, drop = cache["dec"][j]
        if drop is not None:
            dh = dh * drop
        dz = dh * (zn > 0)
        if bn_cache is not None:
            dz, g[f"dec{j}.gamma"], g[f"dec{j}.beta"] = L.batchnorm_backward(dz, bn_cache)
        else:
            raise ValueError("gradients require training mode")
        dh, g[f"dec{j}.w"] = L.conv_transpose2d_backward(dz, w[f"dec{j}.w"], conv_cache)
        _check(dh, f"dec{j}")
        if j > 0:
            split = dh.shape[1] // 2
            dskips[cfg.depth - 1 - j] = dh[:, split:]
            dh = dh[:, :split]

    for i in reversed(range(cfg.depth)):
        conv_cache, bn_cache, zn = cache["enc"][i]
        if dskips[i] is not None:
            dh = dh + dskips[i]
        dz = L.leaky_relu_backward(dh, zn, cfg.leaky_slope)
        dz, g[f"enc{i}.gamma"], g[f"enc{i}.beta"] = L.batchnorm_backward(dz, bn_cache)
        dh, g[f"enc{i}.w"] = L.conv2d_backward(dz, w[f"enc{i}.w"], conv_cache)
        _check(dh, f"enc{i}")

    grads = {k: g[k] for k in w}
    return loss, grads, cache["batch_stats"]


def backward(params: ModelParams, mixture: np.ndarray, target: np.ndarray, rng=None) -> np.ndarray:
    """Flat gradient of the L1 masked loss, in :meth:`ModelParams.flat` order."""
    _, grads, _ = loss_and_grads(params, mixture, target, rng)
    return np.concatenate([v.ravel() for v in grads.values()])


def kink_signature(params: ModelParams, mixture: np.ndarray, target: np.ndarray, rng=None) -> np.ndarray:
    """Sign pattern of every piecewise-linear input (activations and L1 residual).

    Two parameter vectors with equal signatures lie in the same smooth piece
    of the training loss.
    """
    x = _batched(mixture, params.config)
    mask, cache = _run(params, x, True, rng)
    parts = [np.sign(zn).ravel() for _, _, zn in cache["enc"]]
    parts += [np.sign(zn).ravel() for _, _, zn, _ in cache["dec"]]
    parts.append(np.sign(mask * x - _batched(target, params.config)).ravel())
    return np.concatenate(parts)


def update_running_stats(params: ModelParams, batch_stats: dict) -> None:
    m = params.config.bn_momentum
    for name, (mean, var) in batch_stats.items():
        params.stats[f"{name}.mean"] = m * params.stats[f"{name}.mean"] + (1 - m) * mean
        params.stats[f"{name}.var"] = m * params.stats[f"{name}.var"] + (1 - m) * var
