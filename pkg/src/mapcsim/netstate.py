"""Link geometry, channel matrices, association, noise and achievable rates.

Everything here is a pure function of one slot's snapshot.  Channel
matrices are ``(U, A)`` arrays; an association is an int array of AP
indices with :data:`UNASSOCIATED` (-1) for blocked users.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mobility import PHI, THETA, X, Y, Room
from .optics import BeamParams, LinkGeometry, ReceiverParams, ap_total_power, channel_gain

__all__ = [
    "UNASSOCIATED",
    "ApLayout",
    "NoiseModel",
    "grid_layout",
    "predicted_geometry",
    "link_geometry_matrix",
    "channel_matrix",
    "noise_variance",
    "associate",
    "interference",
    "achievable_rates",
    "predicted_rate",
    "min_power_for_rate",
    "write_channel_snapshot",
]

UNASSOCIATED = -1

Q_E = 1.602176634e-19
K_B = 1.380649e-23


@dataclass(frozen=True)
class ApLayout:
    positions: np.ndarray
    budgets: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        bud = np.broadcast_to(np.asarray(self.budgets, dtype=float), (pos.shape[0],)).copy()
        if pos.shape[0] < 1:
            raise ValueError("need at least one AP")
        if np.any(bud <= 0):
            raise ValueError("AP budgets must be > 0")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "budgets", bud)

    @property
    def n_aps(self) -> int:
        return self.positions.shape[0]


def grid_layout(room: Room = Room(), nx: int = 4, ny: int = 3, beam: BeamParams = BeamParams()) -> ApLayout:
    """Uniform ``nx`` x ``ny`` ceiling grid at cell centres; budgets from the array power."""
    xs = (np.arange(nx) + 0.5) * room.x / nx
    ys = (np.arange(ny) + 0.5) * room.y / ny
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    pos = np.column_stack([gx.ravel(), gy.ravel(), np.full(nx * ny, room.z)])
    return ApLayout(pos, np.full(nx * ny, ap_total_power(beam)))


@dataclass(frozen=True)
class NoiseModel:
    bandwidth: float = 1.5e9
    rin_psd_db: float = -155.0
    noise_figure_db: float = 5.0
    responsivity: float = 0.7
    temperature: float = 300.0
    load_resistance: float = 50.0
    fixed_sigma2: float | None = None

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        if self.fixed_sigma2 is not None and self.fixed_sigma2 < 0:
            raise ValueError("fixed_sigma2 must be >= 0")

    @property
    def thermal(self) -> float:
        f = 10.0 ** (self.noise_figure_db / 10.0)
        return 4.0 * K_B * self.temperature / self.load_resistance * f * self.bandwidth


def _detector_normals(theta, phi):
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def predicted_geometry(state, ap, z_u: float = 0.0) -> LinkGeometry:
    """Geometry of the link from the AP at ``ap=(x, y, z)`` to a user state row.

    The incidence angle is measured between the detector normal (tilted by
    ``theta`` from vertical towards azimuth ``phi``) and the user->AP line.
    """
    s = np.asarray(state, dtype=float)
    ap = np.asarray(ap, dtype=float)
    dx, dy, dz = s[..., X] - ap[0], s[..., Y] - ap[1], z_u - ap[2]
    r = np.hypot(dx, dy)
    d = np.sqrt(r**2 + dz**2)
    if np.any(d == 0):
        raise ValueError("user coincides with the AP")
    los = np.stack([-dx, -dy, -np.broadcast_to(dz, np.shape(dx))], axis=-1) / d[..., None]
    cos_inc = np.sum(_detector_normals(s[..., THETA], s[..., PHI]) * los, axis=-1)
    return LinkGeometry(d, r, np.arccos(np.clip(cos_inc, -1.0, 1.0)))


def link_geometry_matrix(states, layout: ApLayout, z_u: float = 0.0) -> LinkGeometry:
    """``(U, A)`` geometry for every user/AP pair."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    ap = layout.positions
    dx = s[:, None, X] - ap[None, :, 0]
    dy = s[:, None, Y] - ap[None, :, 1]
    dz = z_u - ap[None, :, 2]
    r = np.hypot(dx, dy)
    d = np.sqrt(r**2 + dz**2)
    if np.any(d == 0):
        raise ValueError("user coincides with an AP")
    los = np.stack([-dx, -dy, -np.broadcast_to(dz, dx.shape)], axis=-1) / d[..., None]
    n = _detector_normals(s[:, THETA], s[:, PHI])[:, None, :]
    inc = np.arccos(np.clip(np.sum(n * los, axis=-1), -1.0, 1.0))
    return LinkGeometry(d, r, inc)


def channel_matrix(states, layout: ApLayout, beam: BeamParams, recv: ReceiverParams,
                   z_u: float = 0.0) -> np.ndarray:
    return channel_gain(link_geometry_matrix(states, layout, z_u), beam, recv)


def noise_variance(nm: NoiseModel, received_power=0.0):
    """Receiver noise current variance (A^2): shot + thermal + laser RIN."""
    p = np.asarray(received_power, dtype=float)
    if np.any(p < 0):
        raise ValueError("received power must be >= 0")
    if nm.fixed_sigma2 is not None:
        return np.full(p.shape, nm.fixed_sigma2) if p.shape else nm.fixed_sigma2
    i_sig = nm.responsivity * p
    shot = 2.0 * Q_E * i_sig * nm.bandwidth
    rin = 10.0 ** (nm.rin_psd_db / 10.0) * i_sig**2 * nm.bandwidth
    return shot + nm.thermal + rin


def associate(gains) -> np.ndarray:
    """Max-gain AP per user; ties go to the lowest index, all-zero rows are unassociated."""
    g = np.atleast_2d(np.asarray(gains, dtype=float))
    best = np.argmax(g, axis=1)
    return np.where(g[np.arange(g.shape[0]), best] > 0, best, UNASSOCIATED)


def interference(powers, gains, assoc, responsivity: float, mode: str = "interferer"):
    """Inter-AP interference current variance seen by every user.

    ``mode="interferer"`` weights the victim's gain to each other AP by the
    powers of the users that AP serves; ``mode="victim"`` uses the victim's
    own power for every interfering stream.  Intra-AP interference is
    assumed nulled by zero-forcing.
    """
    p = np.asarray(powers, dtype=float)
    g = np.atleast_2d(np.asarray(gains, dtype=float))
    a = np.asarray(assoc)
    n_ap = g.shape[1]
    served = a >= 0
    member = np.zeros((p.shape[-1], n_ap))
    member[np.flatnonzero(served), a[served]] = 1.0
    # per-user coupling: mask out each victim's own AP
    mask = np.ones_like(g)
    mask[np.flatnonzero(served), a[served]] = 0.0
    w = (responsivity * g) ** 2 * mask
    if mode == "interferer":
        per_ap = (p**2) @ member  # sum of P^2 over users of each AP
        return per_ap @ w.T
    if mode == "victim":
        counts = member.sum(axis=0)
        return p**2 * (w @ counts)
    raise ValueError(f"unknown interference mode {mode!r}")


def achievable_rates(powers, gains, assoc, nm: NoiseModel, mode: str = "interferer"):
    """Rates (bit/s) of all users for allocations ``powers`` (shape (..., U)).

    Unassociated users, and users whose serving gain is zero, get rate 0.
    """
    p = np.asarray(powers, dtype=float)
    g = np.atleast_2d(np.asarray(gains, dtype=float))
    a = np.asarray(assoc)
    served = a >= 0
    h = np.where(served, g[np.arange(g.shape[0]), np.where(served, a, 0)], 0.0)
    sig_amp = nm.responsivity * p * h
    denom = noise_variance(nm, p * h) + interference(p, g, a, nm.responsivity, mode)
    rates = nm.bandwidth * np.log2(1.0 + sig_amp**2 / denom)
    return np.where(served & (h > 0), rates, 0.0)


def predicted_rate(power_u: float, u: int, gains, assoc, powers, nm: NoiseModel,
                   mode: str = "interferer") -> float:
    """Rate of user ``u`` when it transmits ``power_u`` and everybody else ``powers``."""
    p = np.array(powers, dtype=float, copy=True)
    p[u] = power_u
    return float(achievable_rates(p, gains, assoc, nm, mode)[u])


def min_power_for_rate(h, interference_var, r_min, nm: NoiseModel):
    """Smallest optical power reaching ``r_min`` on a link of gain ``h``.

    Solves the quadratic in P that the SINR threshold becomes once the
    shot and RIN terms are written in terms of P.  Returns ``inf`` when
    no finite power suffices (zero gain or RIN-limited).
    """
    h = np.asarray(h, dtype=float)
    s = 2.0 ** (np.asarray(r_min, dtype=float) / nm.bandwidth) - 1.0
    rh = nm.responsivity * h
    if nm.fixed_sigma2 is not None:
        a, b, c = rh**2, np.zeros_like(rh), -s * (nm.fixed_sigma2 + interference_var)
    else:
        rin = 10.0 ** (nm.rin_psd_db / 10.0) * nm.bandwidth
        a = rh**2 * (1.0 - s * rin)
        b = -s * 2.0 * Q_E * rh * nm.bandwidth
        c = -s * (nm.thermal + interference_var)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
    root = np.where((a > 0) & (rh > 0), root, np.inf)
    return np.where(s <= 0, 0.0, root)


def write_channel_snapshot(path, slot: int, gains, assoc, append: bool = False):
    """Dump ``slot,user,ap,gain,associated`` rows (one per user/AP pair)."""
    g = np.atleast_2d(np.asarray(gains, dtype=float))
    path = Path(path)
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["slot", "user", "ap", "gain", "associated"])
        for u in range(g.shape[0]):
            for a in range(g.shape[1]):
                w.writerow([slot, u, a, repr(float(g[u, a])), int(assoc[u] == a)])
