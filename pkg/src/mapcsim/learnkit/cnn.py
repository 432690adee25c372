"""Three-stage conv/ReLU/max-pool network with a dense head.

Convolutions are 'same'-padded with stride 1 and run through an im2col
matrix product.  Pooling floors odd spatial sizes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import glorot_uniform


@dataclass(frozen=True)
class CnnSpec:
    in_channels: int = 3
    height: int = 16
    width: int = 8
    conv_filters: tuple[int, ...] = (32, 64, 128)
    kernel: int = 3
    pool: int = 2
    fc_units: int = 128
    output_dim: int = 4

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        if any(f < 1 for f in self.conv_filters) or self.fc_units < 1 or self.output_dim < 1:
            raise ValueError("filter counts and widths must be positive")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        min_side = self.pool ** len(self.conv_filters)
        if self.height < min_side or self.width < min_side:
            raise ValueError(
                f"input {self.height}x{self.width} too small for {len(self.conv_filters)} "
                f"{self.pool}x{self.pool} pooling stages (need >= {min_side})")

    def feature_shape(self):
        h, w = self.height, self.width
        for _ in self.conv_filters:
            h, w = h // self.pool, w // self.pool
        return self.conv_filters[-1], h, w

    def to_dict(self):
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        return d


def _im2col(x, k):
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, H, W, k, k
    N, C, H, W = x.shape
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * W, C * k * k)


def _col2im(dcols, shape, k):
    N, C, H, W = shape
    pad = k // 2
    d = dcols.reshape(N, H, W, C, k, k)
    dxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + H, j:j + W] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, pad:pad + H, pad:pad + W]


def conv2d(x, K, b):
    """'same' convolution (cross-correlation) of (N, C, H, W) with (F, C, k, k)."""
    N, _, H, W = x.shape
    F, _, k, _ = K.shape
    cols = _im2col(x, k)
    out = cols @ K.reshape(F, -1).T + b
    return out.reshape(N, H, W, F).transpose(0, 3, 1, 2), cols


def _maxpool(x, p):
    N, C, H, W = x.shape
    H2, W2 = H // p, W // p
    xc = x[:, :, :H2 * p, :W2 * p].reshape(N, C, H2, p, W2, p)
    win = xc.transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H2, W2, p * p)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _maxpool_backward(dout, arg, shape, p):
    N, C, H, W = shape
    H2, W2 = dout.shape[2], dout.shape[3]
    dwin = np.zeros((N, C, H2, W2, p * p))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(shape)
    dx[:, :, :H2 * p, :W2 * p] = (
        dwin.reshape(N, C, H2, W2, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H2 * p, W2 * p))
    return dx


class Cnn:
    kind = "cnn"

    def __init__(self, spec: CnnSpec, seed=0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        k = spec.kernel
        self.params = {}
        c_in = spec.in_channels
        for s, f in enumerate(spec.conv_filters):
            self.params[f"K{s}"] = glorot_uniform(rng, c_in * k * k, f * k * k, (f, c_in, k, k))
            self.params[f"c{s}"] = np.zeros(f)
            c_in = f
        flat = int(np.prod(spec.feature_shape()))
        self.params["W_fc"] = glorot_uniform(rng, flat, spec.fc_units, (flat, spec.fc_units))
        self.params["b_fc"] = np.zeros(spec.fc_units)
        self.params["W_out"] = glorot_uniform(rng, spec.fc_units, spec.output_dim,
                                              (spec.fc_units, spec.output_dim))
        self.params["b_out"] = np.zeros(spec.output_dim)

    def forward(self, x, train: bool = False, rng=None):
        x = np.asarray(x, dtype=float)
        spec = self.spec
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != (spec.in_channels, spec.height, spec.width):
            raise ValueError(
                f"expected input (N, {spec.in_channels}, {spec.height}, {spec.width}), got {x.shape}")
        caches = []
        a = x
        for s in range(len(spec.conv_filters)):
            z, cols = conv2d(a, self.params[f"K{s}"], self.params[f"c{s}"])
            r = np.maximum(z, 0.0)
            pooled, arg = _maxpool(r, spec.pool)
            caches.append((a.shape, cols, z, arg))
            a = pooled
        flat = a.reshape(a.shape[0], -1)
        zf = flat @ self.params["W_fc"] + self.params["b_fc"]
        hf = np.maximum(zf, 0.0)
        y = hf @ self.params["W_out"] + self.params["b_out"]
        return y, (caches, a.shape, flat, zf, hf)

    def backward(self, dy, cache):
        caches, feat_shape, flat, zf, hf = cache
        spec = self.spec
        p = self.params
        g = {"W_out": hf.T @ dy, "b_out": dy.sum(axis=0)}
        dzf = (dy @ p["W_out"].T) * (zf > 0)
        g["W_fc"] = flat.T @ dzf
        g["b_fc"] = dzf.sum(axis=0)
        da = (dzf @ p["W_fc"].T).reshape(feat_shape)
        for s in reversed(range(len(spec.conv_filters))):
            in_shape, cols, z, arg = caches[s]
            dr = _maxpool_backward(da, arg, z.shape, spec.pool)
            dz = dr * (z > 0)
            F = z.shape[1]
            dz_flat = dz.transpose(0, 2, 3, 1).reshape(-1, F)
            K = p[f"K{s}"]
            g[f"K{s}"] = (dz_flat.T @ cols).reshape(K.shape)
            g[f"c{s}"] = dz_flat.sum(axis=0)
            if s > 0:
                da = _col2im(dz_flat @ K.reshape(F, -1), in_shape, spec.kernel)
        return g

    def predict(self, x):
        return self.forward(x, train=False)[0]

    __call__ = predict
