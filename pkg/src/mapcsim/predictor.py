"""Hybrid mobility prediction: GM conditional mean plus an LSTM correction.

The LSTM sees the last ``sequence_length`` states, normalised per
component, with heading and azimuth unwrapped along the window so the
input has no artificial jumps at +/-pi.  It outputs the correction that
takes the GM mean step to the true next state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .learnkit import Lstm, LstmSpec, TrainConfig, fit, load_checkpoint, save_checkpoint
from .mobility import PHI, PSI, THETA, X, Y, GmParams, Room, clamp_states, gm_mean_step, wrap_angle

__all__ = [
    "PredictorModel",
    "gm_predict",
    "state_difference",
    "make_windows",
    "train",
    "predict",
    "predict_batch",
    "gm_only",
    "rollout",
    "rmse_vs_horizon",
    "write_rmse_csv",
    "save_predictor",
    "load_predictor",
]

_ANGLES = (PSI, PHI)


def gm_predict(s, p: GmParams, room: Room = Room()):
    """Noise-free GM extrapolation of one state (or a batch)."""
    return gm_mean_step(s, p, room)


def state_difference(a, b):
    """``a - b`` with heading and azimuth differences wrapped to (-pi, pi]."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    for k in _ANGLES:
        d[..., k] = wrap_angle(d[..., k])
    return d


def _unwrap_window(h):
    h = np.array(h, dtype=float, copy=True)
    for k in _ANGLES:
        ref = h[:, -1:, k]
        h[:, :, k] = ref + wrap_angle(h[:, :, k] - ref)
    return h


def _pad_history(history, length):
    h = np.asarray(history, dtype=float)
    if h.ndim == 2:
        h = h[None]
    if h.shape[1] == 0:
        raise ValueError("history must contain at least one state")
    if h.shape[1] < length:
        pad = np.repeat(h[:, :1], length - h.shape[1], axis=1)
        h = np.concatenate([pad, h], axis=1)
    return h[:, -length:]


@dataclass
class PredictorModel:
    gm_params: GmParams
    lstm: Lstm
    input_mean: np.ndarray
    input_scale: np.ndarray
    target_scale: np.ndarray
    room: Room = Room()
    final_loss: float = float("nan")
    val_loss: float = float("nan")

    def __post_init__(self):
        if np.any(np.asarray(self.input_scale) <= 0) or np.any(np.asarray(self.target_scale) <= 0):
            raise ValueError("normalisation scales must be > 0")
        spec = self.lstm.spec
        if spec.input_dim != 6 or spec.output_dim != 6:
            raise ValueError("predictor LSTM must map 6-dim states to 6-dim corrections")

    @property
    def sequence_length(self) -> int:
        return self.lstm.spec.sequence_length

    def encode(self, histories):
        return (_unwrap_window(histories) - self.input_mean) / self.input_scale

    @classmethod
    def untrained(cls, gm_params: GmParams, spec: LstmSpec = LstmSpec(), room: Room = Room(), seed=0):
        """Zero-correction model: predictions equal the GM mean step."""
        return cls(gm_params, Lstm(spec, seed=seed, zero_head=True), np.zeros(6), np.ones(6),
                   np.ones(6), room)


def predict_batch(model: PredictorModel, histories):
    """Predicted next states for histories of shape (N, T, 6); short histories are left-padded."""
    h = _pad_history(histories, model.sequence_length)
    base = gm_predict(h[:, -1], model.gm_params, model.room)
    corr = model.lstm.predict(model.encode(h)) * model.target_scale
    return clamp_states(base + corr, model.room, model.gm_params.v_max)


def predict(model: PredictorModel, history):
    """Next state for one time-ordered history of shape (T, 6)."""
    return predict_batch(model, np.asarray(history, dtype=float)[None])[0]


def gm_only(gm_params: GmParams, room: Room = Room()):
    """Predict function for the GM-only baseline."""
    return lambda h: clamp_states(gm_predict(np.asarray(h)[:, -1], gm_params, room), room, gm_params.v_max)


def make_windows(traces, p: GmParams, seq_len: int, room: Room = Room()):
    """Training windows ``(histories, corrections)`` from ``(n_users, n_steps, 6)`` traces."""
    traces = np.asarray(traces, dtype=float)
    if traces.ndim == 2:
        traces = traces[None]
    n_users, n_steps, _ = traces.shape
    if n_steps < seq_len + 1:
        raise ValueError(f"traces need at least {seq_len + 1} steps")
    view = np.lib.stride_tricks.sliding_window_view(traces, seq_len + 1, axis=1)
    w = np.moveaxis(view, -1, 2).reshape(-1, seq_len + 1, 6)
    hist, nxt = w[:, :-1], w[:, -1]
    return hist.copy(), state_difference(nxt, gm_predict(hist[:, -1], p, room))


def train(traces, spec: LstmSpec = LstmSpec(), cfg: TrainConfig = TrainConfig(), seed=0, *,
          gm_params: GmParams = GmParams(), room: Room = Room(), val_fraction: float = 0.1,
          epochs: int | None = None, callback=None, resume=None):
    """Fit the correction network to ``s(t+1) - f_GM(s(t))`` over all windows.

    ``resume=(model, optimizer, rng_state)`` continues an earlier run on the
    same traces and seed; the result matches an uninterrupted run.  The
    returned model carries ``history``, ``optimizer`` and ``rng``.
    """
    if resume is not None:
        spec, gm_params, room = resume[0].lstm.spec, resume[0].gm_params, resume[0].room
    hist, corr = make_windows(traces, gm_params, spec.sequence_length, room)
    if len(hist) < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} windows, got {len(hist)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(hist))
    n_val = int(round(val_fraction * len(hist)))
    val_idx, tr_idx = order[:n_val], order[n_val:]
    init_seed, fit_seed = (int(v) for v in rng.integers(2**31, size=2))

    if resume is None:
        unwrapped = _unwrap_window(hist[tr_idx])
        mean = unwrapped.reshape(-1, 6).mean(axis=0)
        scale = unwrapped.reshape(-1, 6).std(axis=0)
        scale = np.where(scale > 1e-8, scale, 1.0)
        tscale = corr[tr_idx].std(axis=0)
        tscale = np.where(tscale > 1e-8, tscale, 1.0)
        model = PredictorModel(gm_params, Lstm(spec, seed=init_seed, zero_head=True), mean, scale, tscale, room)
        optimizer, fit_rng, past = None, None, {"train_loss": [], "val_loss": []}
    else:
        model, optimizer, rng_state = resume
        fit_rng = np.random.default_rng()
        fit_rng.bit_generator.state = rng_state
        past = getattr(model, "history", None) or {"train_loss": [], "val_loss": []}
    X = model.encode(hist)
    T = corr / model.target_scale
    validation = (X[val_idx], T[val_idx]) if n_val else None
    history, optimizer, fit_rng = fit(model.lstm, X[tr_idx], T[tr_idx], cfg, seed=fit_seed,
                                      optimizer=optimizer, validation=validation, epochs=epochs,
                                      rng=fit_rng, callback=callback)
    history = {k: list(past.get(k, [])) + v for k, v in history.items()}
    model.final_loss = history["train_loss"][-1] if history["train_loss"] else float("nan")
    if history["val_loss"]:
        model.val_loss = history["val_loss"][-1]
    model.history, model.optimizer, model.rng = history, optimizer, fit_rng
    return model


def rollout(predict_fn, traces, horizon: int, seq_len: int = 5):
    """K-step recursive predictions from every admissible start of every trace.

    Returns ``(pred, truth)`` of shape ``(horizon, N, 6)``: ``pred[k-1]`` is
    the k-step-ahead prediction, built by appending earlier predictions to
    the history.
    """
    traces = np.asarray(traces, dtype=float)
    if traces.ndim == 2:
        traces = traces[None]
    n_users, n_steps, _ = traces.shape
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if n_steps < seq_len + horizon:
        raise ValueError(f"traces of {n_steps} steps are too short for horizon {horizon}")
    starts = np.arange(seq_len - 1, n_steps - horizon)
    hist = np.stack([traces[:, t - seq_len + 1:t + 1] for t in starts], axis=1).reshape(-1, seq_len, 6)
    truth = np.stack([np.stack([traces[:, t + k] for t in starts], axis=1).reshape(-1, 6)
                      for k in range(1, horizon + 1)])
    preds = np.empty_like(truth)
    for k in range(horizon):
        nxt = predict_fn(hist)
        preds[k] = nxt
        hist = np.concatenate([hist[:, 1:], nxt[:, None]], axis=1)
    return preds, truth


def rmse_vs_horizon(model, traces, horizons=range(1, 11), seq_len: int | None = None):
    """Position (m) and orientation (rad) RMSE per prediction horizon.

    ``model`` is a :class:`PredictorModel` or any callable mapping
    histories (N, T, 6) to next states (N, 6).  Orientation error combines
    elevation and wrapped azimuth differences.
    """
    horizons = sorted(int(h) for h in horizons)
    if isinstance(model, PredictorModel):
        fn, seq_len = (lambda h: predict_batch(model, h)), model.sequence_length
    else:
        fn, seq_len = model, seq_len or 5
    preds, truth = rollout(fn, traces, horizons[-1], seq_len)
    rows = []
    for k in horizons:
        d = state_difference(preds[k - 1], truth[k - 1])
        rows.append({
            "horizon": k,
            "position_rmse": float(np.sqrt(np.mean(d[:, X] ** 2 + d[:, Y] ** 2))),
            "orientation_rmse": float(np.sqrt(np.mean(d[:, THETA] ** 2 + d[:, PHI] ** 2))),
        })
    return rows


def write_rmse_csv(path, rows):
    path = Path(path)
    fields = list(rows[0].keys()) if rows else ["horizon", "position_rmse", "orientation_rmse"]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _training_extra(model):
    out = {}
    if getattr(model, "rng", None) is not None:
        out["rng_state"] = model.rng.bit_generator.state
    if getattr(model, "history", None) is not None:
        out["history"] = model.history
    return out


def save_predictor(path, model: PredictorModel, optimizer=None):
    """Checkpoint in learnkit format; the Adam state and shuffle RNG are kept for resuming."""
    from dataclasses import asdict

    optimizer = optimizer or getattr(model, "optimizer", None)
    extra = {"role": "predictor", "gm_params": asdict(model.gm_params), "room": asdict(model.room),
             "final_loss": model.final_loss, "val_loss": model.val_loss, **_training_extra(model)}
    arrays = {"input_mean": model.input_mean, "input_scale": model.input_scale,
              "target_scale": model.target_scale}
    return save_checkpoint(path, model.lstm, optimizer, extra, arrays)


def load_predictor(path):
    """Returns ``(model, optimizer_or_None, rng_state_or_None)``."""
    lstm, opt, meta, arrays = load_checkpoint(path)
    extra = meta["extra"]
    if extra.get("role") != "predictor":
        raise ValueError(f"{path}: not a predictor checkpoint")
    model = PredictorModel(GmParams(**extra["gm_params"]), lstm, arrays["input_mean"],
                           arrays["input_scale"], arrays["target_scale"], Room(**extra["room"]),
                           extra["final_loss"], extra["val_loss"])
    model.history = extra.get("history")
    return model, opt, extra.get("rng_state")
