"""Closed-form material laws for the freeze/thaw model.

Temperature is expressed in scaled units with the phase change at zero.
The liquid fraction follows an exponential equilibrium curve below
freezing and saturates at one above it; heat capacity and conductivity
blend their frozen/unfrozen values through that same curve.  A second,
calibrated curve bounds the liquid fraction from above when the freezing
branch is allowed to lag behind the thawing branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCalibration

# exp() arguments below this floor underflow to exactly zero, which keeps
# the deeply frozen branch free of denormals.
EXP_FLOOR = -700.0

THREE_CONDITION = "three-condition"
TWO_CONDITION = "two-condition"

_CALIBRATION_EPS = 1e-14


def _exp(z):
    z = np.asarray(z, dtype=float)
    return np.where(z < EXP_FLOOR, 0.0, np.exp(np.maximum(z, EXP_FLOOR)))


def equilibrium_fraction(u, b):
    """Liquid fraction at temperature ``u``: exp(b*u) below zero, 1 above."""
    if b <= 0.0:
        raise ValueError(f"steepness must be positive, got {b}")
    u = np.asarray(u, dtype=float)
    return np.where(u >= 0.0, 1.0, _exp(np.minimum(b * u, 0.0)))


def fraction_derivative(u, b):
    """Slope of the equilibrium fraction; frozen-side limit b at the kink."""
    if b <= 0.0:
        raise ValueError(f"steepness must be positive, got {b}")
    u = np.asarray(u, dtype=float)
    return np.where(u > 0.0, 0.0, b * _exp(np.minimum(b * u, 0.0)))


@dataclass(frozen=True)
class ScaledMaterial:
    """Scaled heat-capacity/conductivity coefficients and curve steepness.

    All coefficients are already divided by the latent-heat/porosity
    factor (see :func:`from_physical`), so the energy density is
    ``c(u) + chi`` with ``chi`` the dimensionless liquid fraction.
    """

    b: float
    c_u: float
    c_f: float
    k_u: float
    k_f: float

    def __post_init__(self):
        for name in ("b", "c_u", "c_f", "k_u", "k_f"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be positive, got {value}")


def from_physical(b, c_u, c_f, k_u, k_f, latent_heat, porosity, k_time_factor=1.0):
    """Scale physical capacities/conductivities by 1/(porosity*latent_heat).

    ``k_time_factor`` premultiplies the conductivities to express the time
    variable in a convenient unit (e.g. 1e6 seconds per time unit).
    """
    s = 1.0 / (porosity * latent_heat)
    return ScaledMaterial(b, c_u * s, c_f * s, k_time_factor * k_u * s, k_time_factor * k_f * s)


def capacity_energy(u, m):
    """Sensible part of the energy density; continuous, zero at u=0."""
    u = np.asarray(u, dtype=float)
    bu = np.minimum(m.b * u, 0.0)
    frozen = (m.c_u - m.c_f) * (_exp(bu) - 1.0) / m.b + m.c_f * u
    return np.where(u > 0.0, m.c_u * u, frozen)


def capacity_derivative(u, m):
    """Slope of the sensible energy; the two one-sided limits agree at 0."""
    u = np.asarray(u, dtype=float)
    bu = np.minimum(m.b * u, 0.0)
    return np.where(u > 0.0, m.c_u, (m.c_u - m.c_f) * _exp(bu) + m.c_f)


def conductivity(u, m):
    """Heat conductivity blended between frozen and unfrozen values."""
    return m.k_f + (m.k_u - m.k_f) * equilibrium_fraction(u, m.b)


def conductivity_derivative(u, m):
    """Slope of the conductivity; frozen-side limit at the kink."""
    return (m.k_u - m.k_f) * fraction_derivative(u, m.b)


@dataclass(frozen=True)
class HysteresisEnvelope:
    """Lower/upper liquid-fraction curves bounding the hysteresis loop.

    The lower curve is the equilibrium fraction with steepness ``b``.  The
    upper curve equals the lower one outside ``[theta0, 0]`` and follows
    ``a*exp(b_bar*theta) + D*theta + C`` inside, capped at the saturation
    value 1 so that both curves meet at zero.
    """

    b: float
    b_bar: float
    theta0: float
    a: float
    C: float
    D: float
    variant: str

    def lower(self, theta):
        return equilibrium_fraction(theta, self.b)

    def upper(self, theta):
        theta = np.asarray(theta, dtype=float)
        t_mid = np.clip(theta, self.theta0, 0.0)
        g_mid = self.a * np.exp(self.b_bar * t_mid) + self.D * t_mid + self.C
        g_mid = np.minimum(g_mid, 1.0)
        inside = (theta >= self.theta0) & (theta <= 0.0)
        return np.where(inside, g_mid, self.lower(theta))

    def gap(self, theta):
        """Width of the envelope, clipped at zero against float rounding."""
        return np.maximum(self.upper(theta) - self.lower(theta), 0.0)


def calibrate_envelope(b, b_bar, theta0, variant=THREE_CONDITION):
    """Fit the upper-curve constants (a, C, D) to the lower curve.

    The three-condition variant matches value and slope at ``theta0`` and
    the value 1 at zero.  The two-condition variant matches value and
    slope at ``theta0`` only (D is zero there).
    """
    if b <= 0.0 or b_bar <= 0.0:
        raise ValueError("curve steepness must be positive")
    if theta0 >= 0.0:
        raise ValueError(f"match temperature must be negative, got {theta0}")

    eb = np.exp(b * theta0)
    ebb = np.exp(b_bar * theta0)
    if variant == THREE_CONDITION:
        num = eb - b * theta0 * eb - 1.0
        den = ebb - b_bar * theta0 * ebb - 1.0
        if abs(den) < _CALIBRATION_EPS:
            raise DegenerateCalibration(f"vanishing calibration denominator {den!r}")
        a = num / den
        C = 1.0 - a
        D = b * eb - a * b_bar * ebb
    elif variant == TWO_CONDITION:
        den = b_bar * ebb
        if abs(den) < _CALIBRATION_EPS:
            raise DegenerateCalibration(f"vanishing calibration denominator {den!r}")
        a = b * eb / den
        C = eb * (1.0 - b / b_bar)
        D = 0.0
    else:
        raise ValueError(f"unknown envelope variant {variant!r}")
    return HysteresisEnvelope(b=b, b_bar=b_bar, theta0=theta0, a=a, C=C, D=D, variant=variant)
