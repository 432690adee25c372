"""Stacked LSTM regressor with a linear head on the last hidden state."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import glorot_uniform, sigmoid


@dataclass(frozen=True)
class LstmSpec:
    input_dim: int = 6
    hidden_units: int = 64
    layers: int = 2
    dropout: float = 0.2
    sequence_length: int = 5
    output_dim: int = 6

    def __post_init__(self):
        if self.hidden_units < 1 or self.layers < 1 or self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.sequence_length < 1:
            raise ValueError("sequence_length must be >= 1")

    def to_dict(self):
        return asdict(self)


class Lstm:
    """Gate order inside every ``(., 4H)`` weight block is input, forget, cell, output."""

    kind = "lstm"

    def __init__(self, spec: LstmSpec, seed=0, zero_head: bool = False):
        self.spec = spec
        rng = np.random.default_rng(seed)
        H = spec.hidden_units
        self.params = {}
        for layer in range(spec.layers):
            n_in = spec.input_dim if layer == 0 else H
            self.params[f"Wx{layer}"] = glorot_uniform(rng, n_in, 4 * H, (n_in, 4 * H))
            self.params[f"Wh{layer}"] = glorot_uniform(rng, H, 4 * H, (H, 4 * H))
            b = np.zeros(4 * H)
            b[H:2 * H] = 1.0
            self.params[f"b{layer}"] = b
        if zero_head:
            self.params["Wy"] = np.zeros((H, spec.output_dim))
        else:
            self.params["Wy"] = glorot_uniform(rng, H, spec.output_dim, (H, spec.output_dim))
        self.params["by"] = np.zeros(spec.output_dim)

    def forward(self, X, train: bool = False, rng: np.random.Generator | None = None):
        """``X`` has shape (N, T, input_dim); returns (N, output_dim) and a cache."""
        X = np.asarray(X, dtype=float)
        spec = self.spec
        if X.ndim != 3 or X.shape[1] != spec.sequence_length or X.shape[2] != spec.input_dim:
            raise ValueError(
                f"expected input (N, {spec.sequence_length}, {spec.input_dim}), got {X.shape}")
        N, T, _ = X.shape
        H = spec.hidden_units
        seq = X
        layer_caches = []
        masks = []
        for layer in range(spec.layers):
            if layer > 0 and train and spec.dropout > 0:
                if rng is None:
                    raise ValueError("train-mode dropout needs an rng")
                mask = (rng.random(seq.shape) >= spec.dropout) / (1.0 - spec.dropout)
                seq = seq * mask
                masks.append(mask)
            else:
                masks.append(None)
            Wx, Wh, b = self.params[f"Wx{layer}"], self.params[f"Wh{layer}"], self.params[f"b{layer}"]
            h = np.zeros((N, H))
            c = np.zeros((N, H))
            xw = seq @ Wx + b
            hs = np.empty((N, T, H))
            steps = []
            for t in range(T):
                z = xw[:, t] + h @ Wh
                i = sigmoid(z[:, :H])
                f = sigmoid(z[:, H:2 * H])
                g = np.tanh(z[:, 2 * H:3 * H])
                o = sigmoid(z[:, 3 * H:])
                c_prev = c
                c = f * c_prev + i * g
                tc = np.tanh(c)
                h_prev = h
                h = o * tc
                hs[:, t] = h
                steps.append((i, f, g, o, c_prev, tc, h_prev))
            layer_caches.append((seq, steps))
            seq = hs
        h_last = seq[:, -1]
        y = h_last @ self.params["Wy"] + self.params["by"]
        return y, (layer_caches, masks, h_last)

    def backward(self, dy, cache):
        layer_caches, masks, h_last = cache
        spec = self.spec
        H = spec.hidden_units
        grads = {"Wy": h_last.T @ dy, "by": dy.sum(axis=0)}
        N = dy.shape[0]
        T = spec.sequence_length
        dseq = np.zeros((N, T, H))
        dseq[:, -1] = dy @ self.params["Wy"].T
        for layer in reversed(range(spec.layers)):
            seq_in, steps = layer_caches[layer]
            Wx, Wh = self.params[f"Wx{layer}"], self.params[f"Wh{layer}"]
            dz_all = np.empty((N, T, 4 * H))
            dh_next = np.zeros((N, H))
            dc_next = np.zeros((N, H))
            for t in reversed(range(T)):
                i, f, g, o, c_prev, tc, _ = steps[t]
                dh = dseq[:, t] + dh_next
                do = dh * tc
                dc = dh * o * (1.0 - tc**2) + dc_next
                di = dc * g
                dg = dc * i
                df = dc * c_prev
                dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                                     dg * (1 - g**2), do * o * (1 - o)], axis=1)
                dz_all[:, t] = dz
                dh_next = dz @ Wh.T
                dc_next = dc * f
            h_prevs = np.stack([s[6] for s in steps], axis=1)
            grads[f"Wx{layer}"] = np.einsum("nti,ntj->ij", seq_in, dz_all)
            grads[f"Wh{layer}"] = np.einsum("nti,ntj->ij", h_prevs, dz_all)
            grads[f"b{layer}"] = dz_all.sum(axis=(0, 1))
            dseq = dz_all @ Wx.T
            if masks[layer] is not None:
                dseq = dseq * masks[layer]
        return grads

    def predict(self, X):
        return self.forward(X, train=False)[0]

    __call__ = predict
