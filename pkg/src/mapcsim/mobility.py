"""Gauss-Markov user mobility with device orientation and behaviour events.

Traces are float arrays of shape ``(..., 6)`` with columns
``x, y, v, psi, theta, phi`` (see :data:`STATE_FIELDS`).  The
:class:`MobilityState` dataclass is a convenience view of one row.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "STATE_FIELDS",
    "X", "Y", "V", "PSI", "THETA", "PHI",
    "Room",
    "MobilityState",
    "GmParams",
    "BehaviorParams",
    "wrap_angle",
    "clamp_states",
    "gm_step",
    "gm_mean_step",
    "apply_behavior",
    "generate_dataset",
    "save_traces_csv",
    "load_traces_csv",
    "TRACE_FORMAT_VERSION",
]

STATE_FIELDS = ("x", "y", "v", "psi", "theta", "phi")
X, Y, V, PSI, THETA, PHI = range(6)
TRACE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Room:
    x: float = 5.0
    y: float = 5.0
    z: float = 3.0

    def __post_init__(self):
        if not (self.x > 0 and self.y > 0 and self.z > 0):
            raise ValueError("room dimensions must be positive")


@dataclass(frozen=True)
class MobilityState:
    x: float
    y: float
    v: float
    psi: float
    theta: float
    phi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.psi, self.theta, self.phi])

    @classmethod
    def from_array(cls, a) -> "MobilityState":
        return cls(*(float(c) for c in np.asarray(a, dtype=float)[:6]))


@dataclass(frozen=True)
class GmParams:
    """Gauss-Markov memory, means and innovation variances.

    ``mean_heading=None`` selects per-user mean headings: each user draws a
    uniform mean direction that is mirrored with the heading on wall
    reflections.  A float fixes one room-wide mean direction.  Single-state
    helpers (:func:`gm_step`, :func:`gm_mean_step`) treat ``None`` as "mean
    direction equals the current heading".
    """

    alpha: float = 0.8
    mean_speed: float = 1.0
    mean_heading: float | None = None
    speed_noise_var: float = 0.1
    heading_noise_var: float = 0.05
    alpha_theta: float = 0.8
    alpha_phi: float = 0.8
    mean_theta: float = math.radians(30.0)
    mean_phi: float = 0.0
    theta_noise_var: float = 0.02
    phi_noise_var: float = 0.02
    dt: float = 0.1
    v_max: float = 1.5
    clamp_speed: bool = True

    def __post_init__(self):
        for name in ("alpha", "alpha_theta", "alpha_phi"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("speed_noise_var", "heading_noise_var", "theta_noise_var", "phi_noise_var"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.v_max <= 0:
            raise ValueError("v_max must be > 0")

    @property
    def orient_noise_var(self) -> float:
        return self.theta_noise_var

    def noiseless(self) -> "GmParams":
        return replace(self, speed_noise_var=0.0, heading_noise_var=0.0,
                       theta_noise_var=0.0, phi_noise_var=0.0)


@dataclass(frozen=True)
class BehaviorParams:
    """Marked Poisson behaviour events layered on a GM trace.

    Rates are events per second.  ``orient_jitter`` is the standard deviation
    (rad) of the per-step device jitter; it is Gaussian when walking and
    Laplace (same variance) when sitting.
    """

    turn_rate: float = 0.1
    turn_min: float = math.pi / 4
    turn_max: float = math.pi
    pause_rate: float = 0.05
    pause_mean: float = 2.0
    speed_burst_rate: float = 0.1
    burst_min: float = 1.2
    burst_max: float = 1.5
    burst_duration: float = 1.0
    orient_jitter: float = 0.05
    activity_mode: str = "walking"

    def __post_init__(self):
        for name in ("turn_rate", "pause_rate", "speed_burst_rate", "orient_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.pause_mean < 0 or self.burst_duration < 0:
            raise ValueError("durations must be >= 0")
        if not 0 <= self.turn_min <= self.turn_max:
            raise ValueError("need 0 <= turn_min <= turn_max")
        if not 0 < self.burst_min <= self.burst_max:
            raise ValueError("need 0 < burst_min <= burst_max")
        if self.activity_mode not in ("walking", "sitting"):
            raise ValueError("activity_mode must be 'walking' or 'sitting'")

    @classmethod
    def none(cls, activity_mode: str = "walking") -> "BehaviorParams":
        return cls(turn_rate=0.0, pause_rate=0.0, speed_burst_rate=0.0,
                   orient_jitter=0.0, activity_mode=activity_mode)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def clamp_states(s, room: Room = Room(), v_max: float = 1.5):
    """Project states onto the physical bounds (no reflection)."""
    s = np.array(s, dtype=float, copy=True)
    s[..., X] = np.clip(s[..., X], 0.0, room.x)
    s[..., Y] = np.clip(s[..., Y], 0.0, room.y)
    s[..., V] = np.clip(s[..., V], 0.0, v_max)
    s[..., PSI] = wrap_angle(s[..., PSI])
    s[..., THETA] = np.clip(s[..., THETA], 0.0, math.pi / 2)
    s[..., PHI] = wrap_angle(s[..., PHI])
    return s


def _reflect(pos, length):
    """Fold a single-step overshoot back into [0, length]; returns (pos, hit_wall)."""
    below = pos < 0.0
    above = pos > length
    folded = np.where(below, -pos, np.where(above, 2.0 * length - pos, pos))
    return np.clip(folded, 0.0, length), below | above


def _advance(s, mean_heading, p: GmParams, room: Room, noise):
    """Vectorised GM step for states ``s`` (n, 6).

    ``noise`` is an (n, 4) array of standard normals for (v, psi, theta, phi)
    or None for the noise-free mean.  Returns the new states and the
    (possibly mirrored) per-user mean headings.
    """
    s = np.asarray(s, dtype=float)
    a = p.alpha
    scale = math.sqrt(max(0.0, 1.0 - a * a))
    if noise is None:
        noise = np.zeros((s.shape[0], 4))
    v = a * s[:, V] + (1 - a) * p.mean_speed + scale * math.sqrt(p.speed_noise_var) * noise[:, 0]
    if p.clamp_speed:
        v = np.clip(v, 0.0, p.v_max)
    # angular mean reversion about the shortest arc to the mean
    psi = mean_heading + a * wrap_angle(s[:, PSI] - mean_heading) \
        + scale * math.sqrt(p.heading_noise_var) * noise[:, 1]
    theta = p.alpha_theta * s[:, THETA] + (1 - p.alpha_theta) * p.mean_theta \
        + math.sqrt(p.theta_noise_var) * noise[:, 2]
    theta = np.clip(theta, 0.0, math.pi / 2)
    phi = p.mean_phi + p.alpha_phi * wrap_angle(s[:, PHI] - p.mean_phi) \
        + math.sqrt(p.phi_noise_var) * noise[:, 3]

    x = s[:, X] + v * np.cos(psi) * p.dt
    y = s[:, Y] + v * np.sin(psi) * p.dt
    x, fx = _reflect(x, room.x)
    y, fy = _reflect(y, room.y)
    # specular reflection: mirror heading (and the mean it reverts to)
    psi = np.where(fx, math.pi - psi, psi)
    psi = np.where(fy, -psi, psi)
    mean_heading = np.where(fx, math.pi - mean_heading, mean_heading)
    mean_heading = np.where(fy, -mean_heading, mean_heading)

    out = np.column_stack([x, y, v, wrap_angle(psi), theta, wrap_angle(phi)])
    return out, wrap_angle(mean_heading)


def _mean_heading_for(s, p: GmParams):
    if p.mean_heading is None:
        return np.asarray(s, dtype=float)[:, PSI]
    return np.full(np.asarray(s).shape[0], float(p.mean_heading))


def gm_step(s, p: GmParams, rng: np.random.Generator, room: Room = Room()):
    """One stochastic GM step followed by wall reflection and clamping.

    Accepts a :class:`MobilityState` (returns one) or an array of shape
    ``(6,)`` / ``(n, 6)`` (returns the same shape).
    """
    as_state = isinstance(s, MobilityState)
    arr = s.as_array() if as_state else np.asarray(s, dtype=float)
    batch = np.atleast_2d(arr)
    noise = rng.standard_normal((batch.shape[0], 4))
    out, _ = _advance(batch, _mean_heading_for(batch, p), p, room, noise)
    if as_state:
        return MobilityState.from_array(out[0])
    return out.reshape(arr.shape)


def gm_mean_step(s, p: GmParams, room: Room = Room()):
    """Noise-free GM step: the conditional mean of :func:`gm_step`, same wall handling."""
    as_state = isinstance(s, MobilityState)
    arr = s.as_array() if as_state else np.asarray(s, dtype=float)
    batch = np.atleast_2d(arr)
    out, _ = _advance(batch, _mean_heading_for(batch, p), p, room, None)
    if as_state:
        return MobilityState.from_array(out[0])
    return out.reshape(arr.shape)


def _wrap_scalar(a: float) -> float:
    w = (a + math.pi) % (2 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


def _fold_scalar(x: float, length: float):
    if x < 0.0:
        return min(-x, length), True
    if x > length:
        return max(2.0 * length - x, 0.0), True
    return x, False


def _user_trace(s0, mean_heading: float, eps, p: GmParams, room: Room):
    """One user's GM trace from scaled innovations ``eps`` (n_steps-1, 4).

    Plain-float loop with the same arithmetic as :func:`_advance`, so the
    result is bit-identical to stepping with it while avoiding per-step
    array overhead.
    """
    out = np.empty((eps.shape[0] + 1, 6))
    out[0] = s0
    x, y, v, psi, th, phi = (float(c) for c in s0)
    a, a_th, a_ph = p.alpha, p.alpha_theta, p.alpha_phi
    v_mean, th_mean = (1 - a) * p.mean_speed, (1 - a_th) * p.mean_theta
    fixed = p.mean_heading is not None
    mh0 = mh = float(mean_heading)
    cos, sin, wrap, fold = math.cos, math.sin, _wrap_scalar, _fold_scalar
    rows = []
    for e0, e1, e2, e3 in eps.tolist():
        v = a * v + v_mean + e0
        if p.clamp_speed:
            v = min(max(v, 0.0), p.v_max)
        psi = mh + a * wrap(psi - mh) + e1
        th = min(max(a_th * th + th_mean + e2, 0.0), math.pi / 2)
        phi = p.mean_phi + a_ph * wrap(phi - p.mean_phi) + e3
        x, fx = fold(x + v * cos(psi) * p.dt, room.x)
        y, fy = fold(y + v * sin(psi) * p.dt, room.y)
        # specular reflection: mirror heading (and the mean it reverts to)
        if fx:
            psi, mh = math.pi - psi, math.pi - mh
        if fy:
            psi, mh = -psi, -mh
        psi, phi = wrap(psi), wrap(phi)
        mh = mh0 if fixed else wrap(mh)
        rows.append((x, y, v, psi, th, phi))
    out[1:] = rows
    return out


def _gm_traces(s0, mean_heading, noise, p: GmParams, room: Room):
    """Integrate GM traces for all users; ``noise`` has shape (n, n_steps-1, 4)."""
    scale = math.sqrt(max(0.0, 1.0 - p.alpha * p.alpha))
    c = np.array([scale * math.sqrt(p.speed_noise_var), scale * math.sqrt(p.heading_noise_var),
                  math.sqrt(p.theta_noise_var), math.sqrt(p.phi_noise_var)])
    return np.stack([_user_trace(s0[u], mean_heading[u], noise[u] * c, p, room) for u in range(s0.shape[0])])


def _event_steps(rng, rate, dt, n):
    if rate <= 0:
        return np.empty(0, dtype=int)
    return np.flatnonzero(rng.random(n) < -math.expm1(-rate * dt))


def _sample_behavior(rng, n, b: BehaviorParams, dt):
    heading_offset = np.zeros(n)
    for k in _event_steps(rng, b.turn_rate, dt, n):
        mag = rng.uniform(b.turn_min, b.turn_max)
        heading_offset[k:] += mag if rng.random() < 0.5 else -mag
    speed_scale = np.ones(n)
    burst_len = max(1, int(round(b.burst_duration / dt)))
    for k in _event_steps(rng, b.speed_burst_rate, dt, n):
        speed_scale[k:k + burst_len] *= rng.uniform(b.burst_min, b.burst_max)
    for k in _event_steps(rng, b.pause_rate, dt, n):
        steps = max(1, int(math.ceil(rng.exponential(b.pause_mean) / dt)))
        speed_scale[k:k + steps] = 0.0
    jitter = None
    if b.orient_jitter > 0:
        if b.activity_mode == "sitting":
            jitter = rng.laplace(0.0, b.orient_jitter / math.sqrt(2.0), size=(n, 2))
        else:
            jitter = rng.normal(0.0, b.orient_jitter, size=(n, 2))
    return heading_offset, speed_scale, jitter


def apply_behavior(trace, b: BehaviorParams, rng, *, dt: float = 0.1,
                   room: Room = Room(), v_max: float = 1.5):
    """Layer turns, pauses, speed bursts and orientation jitter on GM traces.

    ``trace`` is ``(n_steps, 6)`` with a single generator, or
    ``(n_users, n_steps, 6)`` with one generator per user.  Events start at
    Bernoulli-thinned Poisson times.  Turns offset the heading from the event
    onwards, pauses zero the speed for their duration, bursts scale it.
    Positions are then re-integrated from the first state with the same wall
    reflection as the GM step.
    """
    trace = np.asarray(trace, dtype=float)
    single = trace.ndim == 2
    if single:
        trace, rngs = trace[None], [rng]
    else:
        rngs = list(rng)
    if trace.ndim != 3 or trace.shape[1] == 0 or trace.shape[2] != 6:
        raise ValueError("trace must be a non-empty (n_steps, 6) array")
    if len(rngs) != trace.shape[0]:
        raise ValueError("need one generator per user")
    n_users, n, _ = trace.shape
    no_events = b.turn_rate == 0 and b.pause_rate == 0 and b.speed_burst_rate == 0
    if no_events and b.orient_jitter == 0:
        return trace[0].copy() if single else trace.copy()

    offsets = np.zeros((n_users, n))
    scales = np.ones((n_users, n))
    out = trace.copy()
    for u, g in enumerate(rngs):
        offsets[u], scales[u], jitter = _sample_behavior(g, n, b, dt)
        if jitter is not None:
            out[u, :, THETA] = np.clip(out[u, :, THETA] + jitter[:, 0], 0.0, math.pi / 2)
            out[u, :, PHI] = wrap_angle(out[u, :, PHI] + jitter[:, 1])

    if not no_events:
        out[:, :, V] = np.clip(trace[:, :, V] * scales, 0.0, v_max)
        psi = trace[:, :, PSI] + offsets
        flip_x = np.zeros(n_users, dtype=bool)
        flip_y = np.zeros(n_users, dtype=bool)
        out[:, 0, PSI] = psi[:, 0]
        for k in range(1, n):
            h = np.where(flip_x, math.pi - psi[:, k], psi[:, k])
            h = np.where(flip_y, -h, h)
            x = out[:, k - 1, X] + out[:, k, V] * np.cos(h) * dt
            y = out[:, k - 1, Y] + out[:, k, V] * np.sin(h) * dt
            out[:, k, X], fx = _reflect(x, room.x)
            out[:, k, Y], fy = _reflect(y, room.y)
            flip_x ^= fx
            flip_y ^= fy
            h = np.where(fx, math.pi - h, h)
            out[:, k, PSI] = np.where(fy, -h, h)
        out[:, :, PSI] = wrap_angle(out[:, :, PSI])
    return out[0] if single else out


def initial_states(n_users: int, p: GmParams, room: Room, rng: np.random.Generator):
    """Uniform positions and headings; speed and orientation at their means."""
    s = np.empty((n_users, 6))
    s[:, X] = rng.uniform(0.0, room.x, n_users)
    s[:, Y] = rng.uniform(0.0, room.y, n_users)
    s[:, V] = min(p.mean_speed, p.v_max)
    s[:, PSI] = rng.uniform(-math.pi, math.pi, n_users)
    s[:, THETA] = p.mean_theta
    s[:, PHI] = rng.uniform(-math.pi, math.pi, n_users)
    return s


def generate_dataset(n_users: int, n_steps: int, p: GmParams, b: BehaviorParams,
                     room: Room = Room(), seed=0):
    """Reproducible ``(n_users, n_steps, 6)`` array of behavioural GM traces.

    Every user gets an independent RNG stream spawned from ``seed`` so a
    user's trace does not depend on how many other users are generated.
    """
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    if not (room.x > 0 and room.y > 0):
        raise ValueError("room must have positive extent")
    rngs = [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(n_users)]
    s0 = np.concatenate([initial_states(1, p, room, g) for g in rngs])
    noise = np.stack([g.standard_normal((n_steps - 1, 4)) for g in rngs])
    if p.mean_heading is None:
        mh = s0[:, PSI].copy()
    else:
        mh = np.full(n_users, float(p.mean_heading))
    traces = _gm_traces(s0, mh, noise, p, room)
    return apply_behavior(traces, b, rngs, dt=p.dt, room=room, v_max=p.v_max)


def save_traces_csv(path, traces, dt: float = 0.1):
    """Write traces as ``user,step,t,x,y,v,psi,theta,phi`` rows.

    The first line is a ``# mapcsim-traces v<N>`` header.  Values are
    written with ``repr`` so a reload is bit-exact.
    """
    traces = np.asarray(traces, dtype=float)
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# mapcsim-traces v{TRACE_FORMAT_VERSION} dt={dt!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("user", "step", "t") + STATE_FIELDS)
        for u in range(traces.shape[0]):
            for k in range(traces.shape[1]):
                w.writerow([u, k, repr(round(k * dt, 10))] + [repr(float(c)) for c in traces[u, k]])


def load_traces_csv(path):
    """Inverse of :func:`save_traces_csv`; returns ``(traces, dt)``."""
    path = Path(path)
    with path.open() as fh:
        m = re.match(r"# mapcsim-traces v(\d+) dt=(\S+)", fh.readline())
        if m is None:
            raise ValueError(f"{path}: not a mapcsim trace file")
        version = int(m.group(1))
        if version != TRACE_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported trace format version {version}")
        dt = float(m.group(2))
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no trace rows")
    n_users = max(int(r["user"]) for r in rows) + 1
    n_steps = max(int(r["step"]) for r in rows) + 1
    traces = np.empty((n_users, n_steps, 6))
    for r in rows:
        traces[int(r["user"]), int(r["step"])] = [float(r[f]) for f in STATE_FIELDS]
    return traces, dt
