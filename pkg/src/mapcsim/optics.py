"""Gaussian-beam optics for a ceiling-mounted VCSEL access point.

All functions accept numpy arrays and broadcast; scalar inputs return
numpy scalars.  Lengths are in metres, powers in watts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "BeamParams",
    "ReceiverParams",
    "LinkGeometry",
    "rayleigh_range",
    "lensed_beam_radius",
    "intensity",
    "received_power_single",
    "ap_total_power",
    "channel_gain",
    "focal_length_for_footprint",
]

# Diverging micro-lens placed at the VCSEL waist; gives a 1/e^2 footprint
# of about 0.94 m at 3 m (see focal_length_for_footprint).
DEFAULT_FOCAL_LENGTH = -1.6729e-05
DEFAULT_LENS_DISTANCE = 0.0


@dataclass(frozen=True)
class BeamParams:
    waist_radius: float = 5e-6
    wavelength: float = 1550e-9
    lens_focal_length: float = DEFAULT_FOCAL_LENGTH
    lens_distance: float = DEFAULT_LENS_DISTANCE
    per_element_power: float = 10e-3
    array_dim: int = 10
    element_powers: tuple[float, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.waist_radius > 0:
            raise ValueError("waist_radius must be > 0")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be > 0")
        if self.per_element_power < 0:
            raise ValueError("per_element_power must be >= 0")
        if self.array_dim < 1:
            raise ValueError("array_dim must be >= 1")
        if self.lens_distance < 0:
            raise ValueError("lens_distance must be >= 0")
        if self.element_powers is not None:
            if len(self.element_powers) != self.array_dim**2:
                raise ValueError("element_powers must hold array_dim**2 values")
            if any(p < 0 for p in self.element_powers):
                raise ValueError("element powers must be >= 0")

    @classmethod
    def identity_lens(cls, **kw) -> "BeamParams":
        """Beam with no lens: free-space Gaussian propagation from the waist."""
        return cls(lens_focal_length=math.inf, lens_distance=0.0, **kw)


@dataclass(frozen=True)
class ReceiverParams:
    aperture_radius: float = 5.64e-3
    detector_area: float = 1e-4
    fov_half_angle: float = math.radians(60.0)
    responsivity: float = 0.7

    def __post_init__(self):
        if not self.aperture_radius > 0:
            raise ValueError("aperture_radius must be > 0")
        if not self.detector_area > 0:
            raise ValueError("detector_area must be > 0")
        if not 0 < self.fov_half_angle <= math.pi / 2:
            raise ValueError("fov_half_angle must lie in (0, pi/2]")
        if not self.responsivity > 0:
            raise ValueError("responsivity must be > 0")


@dataclass(frozen=True)
class LinkGeometry:
    """Distance, offset from the beam axis and incidence angle of one or many links.

    Fields may be arrays of a common broadcastable shape.
    """

    distance: float | np.ndarray
    radial_offset: float | np.ndarray
    incidence_angle: float | np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distance, dtype=float)
        r = np.asarray(self.radial_offset, dtype=float)
        th = np.asarray(self.incidence_angle, dtype=float)
        if not np.all(d > 0):
            raise ValueError("distance must be > 0")
        if not np.all(r >= 0):
            raise ValueError("radial_offset must be >= 0")
        if not np.all((th >= 0) & (th <= math.pi)):
            raise ValueError("incidence_angle must lie in [0, pi]")


def rayleigh_range(beam: BeamParams) -> float:
    return math.pi * beam.waist_radius**2 / beam.wavelength


def _q_after_lens(beam: BeamParams) -> complex:
    # q-parameter just after the lens plane
    q = complex(beam.lens_distance, rayleigh_range(beam))
    f = beam.lens_focal_length
    if math.isinf(f):
        return q
    # thin lens ABCD [[1, 0], [-1/f, 1]]: q' = q / (1 - q/f)
    return q / (1.0 - q / f)


def lensed_beam_radius(beam: BeamParams, z):
    """1/e^2 beam radius at distance ``z`` past the micro-lens.

    The waist q-parameter ``i*z_R`` is carried through free space to the
    lens, through the thin-lens ABCD matrix, and then through ``z`` of free
    space.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    if np.any(z < 0):
        raise ValueError("z must be >= 0 (measured from the lens plane)")
    q = _q_after_lens(beam) + z
    inv_q_imag = np.imag(1.0 / q)
    return np.sqrt(-beam.wavelength / (math.pi * inv_q_imag))


def intensity(beam: BeamParams, r, z):
    """Irradiance (W/m^2) of a single VCSEL element at radius ``r`` and distance ``z``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be >= 0")
    w2 = lensed_beam_radius(beam, z) ** 2
    return 2.0 * beam.per_element_power / (math.pi * w2) * np.exp(-2.0 * r**2 / w2)


def received_power_single(beam: BeamParams, r0, z):
    """Power from one element collected by a centred circular aperture of radius ``r0``."""
    r0 = np.asarray(r0, dtype=float)
    if np.any(r0 <= 0):
        raise ValueError("r0 must be > 0")
    w2 = lensed_beam_radius(beam, z) ** 2
    return beam.per_element_power * -np.expm1(-2.0 * r0**2 / w2)


def ap_total_power(beam: BeamParams) -> float:
    """Total optical power of a C x C array."""
    if beam.element_powers is not None:
        return math.fsum(beam.element_powers)
    return beam.array_dim**2 * beam.per_element_power


def channel_gain(geom: LinkGeometry, beam: BeamParams, recv: ReceiverParams):
    """Line-of-sight gain ``A_r/d^2 * exp(-2 r^2 / w^2(d)) * cos(theta)``.

    Links whose incidence angle exceeds the receiver FOV get exactly 0.
    """
    d = np.asarray(geom.distance, dtype=float)
    r = np.asarray(geom.radial_offset, dtype=float)
    th = np.asarray(geom.incidence_angle, dtype=float)
    w2 = lensed_beam_radius(beam, d) ** 2
    gain = recv.detector_area / d**2 * np.exp(-2.0 * r**2 / w2) * np.cos(th)
    return np.where(th <= recv.fov_half_angle, gain, 0.0)


def focal_length_for_footprint(beam: BeamParams, z: float, footprint: float) -> float:
    """Diverging focal length (negative, metres) giving a beam radius ``footprint`` at ``z``.

    The lens stays at ``beam.lens_distance``.  Raises ``ValueError`` when the
    unlensed beam is already wider than requested.
    """
    from dataclasses import replace

    free = lensed_beam_radius(replace(beam, lens_focal_length=math.inf), z)
    if free >= footprint:
        raise ValueError("free-space beam already exceeds the requested footprint")

    def excess(log_f):
        f = -math.exp(log_f)
        return float(lensed_beam_radius(replace(beam, lens_focal_length=f), z)) - footprint

    # radius grows as |f| shrinks; bracket over ten decades
    lo, hi = math.log(1e-12), math.log(1e3)
    return -math.exp(brentq(excess, lo, hi, xtol=1e-14, rtol=1e-14))
