"""
Perimetric-coordinate geometry of the (p, p, e) system.

Perimetric coordinates are built from the proton-proton distance ``R`` and
the electron-proton distances ``r1``, ``r2``::

    x = R + r1 - r2,   y = R - r1 + r2,   z = -R + r1 + r2.

Every function here accepts scalars or broadcastable arrays for ``x, y, z``;
the ``PerimetricPoint`` wrappers exist for clarity at call sites that deal
with a single configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

PROTON_MASS = 1836.152701


@dataclass(frozen=True)
class PerimetricPoint:
    """A single configuration in perimetric coordinates (atomic units)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if min(self.x, self.y, self.z) < 0:
            raise ValueError("perimetric coordinates must be nonnegative")

    def distances(self) -> tuple[float, float, float]:
        """Return ``(R, r1, r2)``."""
        return to_distances(self.x, self.y, self.z)


class BodyFrame(NamedTuple):
    """Body-frame electron position: ``R`` along the proton axis, cylindrical
    radius ``rho`` and axial offset ``zeta`` from the proton midpoint."""

    R: np.ndarray
    rho: np.ndarray
    zeta: np.ndarray


@dataclass(frozen=True)
class MassSet:
    """Particle masses in units of the electron mass.

    Parameters
    ----------
    m_p : float
        Proton mass. The electron mass is fixed at 1.
    """

    m_p: float = PROTON_MASS
    m_e: float = 1.0

    def __post_init__(self):
        if self.m_e != 1.0:
            raise ValueError("the electron mass is the unit of mass")
        if not self.m_p > 0:
            raise ValueError("m_p must be positive")

    @property
    def M(self) -> float:
        return 2.0 * self.m_p + self.m_e

    @property
    def gamma(self) -> float:
        """Quadrupole recoil factor ``1 - 2 m_e/M - m_e^2/M^2``."""
        M = self.M
        return 1.0 - 2.0 * self.m_e / M - (self.m_e / M) ** 2

    @property
    def mu_R(self) -> float:
        """Reduced mass of the proton pair."""
        return 0.5 * self.m_p

    @property
    def mu_r(self) -> float:
        """Reduced mass of the electron relative to the proton pair."""
        return 2.0 * self.m_p * self.m_e / self.M


def to_distances(x, y, z):
    """Perimetric ``(x, y, z)`` to interparticle distances ``(R, r1, r2)``."""
    return 0.5 * (x + y), 0.5 * (x + z), 0.5 * (y + z)


def from_distances(R, r1, r2):
    """Interparticle distances to perimetric coordinates."""
    return R + r1 - r2, R - r1 + r2, -R + r1 + r2


def body_frame_arrays(x, y, z) -> BodyFrame:
    """Vectorized ``(R, rho, zeta)``; see :func:`body_frame`."""
    x, y, z = (np.asarray(a, dtype=float) for a in (x, y, z))
    s = x + y
    if np.any(s <= 0):
        raise ValueError("x + y must be positive (protons coincide)")
    rho = np.sqrt(x * y * z * (s + z)) / s
    zeta = (x - y) * (2.0 * z + s) / (4.0 * s)
    return BodyFrame(0.5 * s, rho, zeta)


def body_frame(p: PerimetricPoint) -> BodyFrame:
    """Body-frame components of a configuration.

    ``rho`` is taken as one square root of ``xyz(x+y+z)/(x+y)^2`` so that no
    cancellation occurs near collinear geometries.

    Examples
    --------
    >>> body_frame(PerimetricPoint(1.0, 2.0, 3.0))
    BodyFrame(R=1.5, rho=2.0, zeta=-0.75)
    """
    R, rho, zeta = body_frame_arrays(p.x, p.y, p.z)
    return BodyFrame(float(R), float(rho), float(zeta))


def coulomb_potential_arrays(x, y, z):
    """Vectorized ``1/R - 1/r1 - 1/r2`` in hartree."""
    x, y, z = (np.asarray(a, dtype=float) for a in (x, y, z))
    sxy, sxz, syz = x + y, x + z, y + z
    if np.any(sxy <= 0) or np.any(sxz <= 0) or np.any(syz <= 0):
        raise ValueError("two particles coincide")
    return 2.0 / sxy - 2.0 / sxz - 2.0 / syz


def coulomb_potential(p: PerimetricPoint) -> float:
    """Coulomb energy of charges ``(+1, +1, -1)`` at the configuration."""
    return float(coulomb_potential_arrays(p.x, p.y, p.z))


def volume_weight_arrays(x, y, z):
    return (x + y) * (y + z) * (z + x)


def volume_weight(p: PerimetricPoint) -> float:
    """Perimetric volume element ``(x+y)(y+z)(z+x)``."""
    return float(volume_weight_arrays(p.x, p.y, p.z))


def quad_kernel_arrays(kappa: int, x, y, z, masses: MassSet):
    """Vectorized body-frame quadrupole kernel; see :func:`quad_kernel`."""
    if kappa not in (0, 1, 2):
        raise ValueError(f"kappa must be 0, 1 or 2, got {kappa!r}")
    R, rho, zeta = body_frame_arrays(x, y, z)
    g = masses.gamma
    if kappa == 0:
        return 0.5 * (R**2 - g * (2.0 * zeta**2 - rho**2))
    if kappa == 1:
        return -np.sqrt(1.5) * g * zeta * rho
    return -np.sqrt(0.375) * g * rho**2


def quad_kernel(kappa: int, p: PerimetricPoint, masses: MassSet) -> float:
    """Body-frame quadrupole kernel ``A_kappa`` in a.u.^2.

    ``A_0 = [R^2 - gamma (2 zeta^2 - rho^2)] / 2``,
    ``A_1 = -sqrt(3/2) gamma zeta rho`` and
    ``A_2 = -sqrt(3/8) gamma rho^2``.
    """
    return float(quad_kernel_arrays(kappa, p.x, p.y, p.z, masses))
