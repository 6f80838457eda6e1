"""Coordinate conversions and the scatterer <-> sinusoid mapping.

A confocal scan over a circle of radius ``r'`` centred at the origin of
the wall plane (z = 0) sees a scatterer at spherical position
``(r, theta, phi)`` at squared distance

    v(phi') = gamma - alpha * cos(beta - phi')

with ``alpha = 2 r r' sin(theta)``, ``beta = phi`` and
``gamma = r**2 + r'**2``.  Scenes are expressed relative to the circle
centre; off-centre circles are handled by translating the scene.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSinusoid

TWO_PI = 2.0 * np.pi

# relative slack accepted on sinusoid_to_scatterer preconditions
_REL_SLACK = 1e-12


@dataclass(frozen=True)
class CartesianPoint:
    x: float
    y: float
    z: float

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=float)

    def __sub__(self, other):
        return CartesianPoint(self.x - other.x, self.y - other.y, self.z - other.z)

    def __add__(self, other):
        return CartesianPoint(self.x + other.x, self.y + other.y, self.z + other.z)

    def distance(self, other):
        return float(np.linalg.norm(self.as_array() - other.as_array()))


@dataclass(frozen=True)
class SphericalPoint:
    r: float
    theta: float
    phi: float


@dataclass(frozen=True)
class ScanCircle:
    """Circle of confocal scan points on the wall plane.

    Angles are implicit: ``phi'_k = 2 pi k / num_angles``.
    """

    radius: float
    num_angles: int = 360
    center: CartesianPoint = field(default_factory=lambda: CartesianPoint(0.0, 0.0, 0.0))

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"scan radius must be positive, got {self.radius}")
        if self.num_angles < 3:
            raise ValueError(f"need at least 3 scan angles, got {self.num_angles}")
        if self.center.z != 0:
            raise ValueError("scan circle centre must lie on the wall plane z = 0")

    @property
    def angles(self):
        return TWO_PI * np.arange(self.num_angles) / self.num_angles

    def points(self):
        """Wall positions of the scan points, shape ``(num_angles, 3)``."""
        a = self.angles
        pts = np.zeros((self.num_angles, 3))
        pts[:, 0] = self.center.x + self.radius * np.cos(a)
        pts[:, 1] = self.center.y + self.radius * np.sin(a)
        return pts

    def to_dict(self):
        return {
            "radius": self.radius,
            "num_angles": self.num_angles,
            "center": [self.center.x, self.center.y],
        }

    @classmethod
    def from_dict(cls, d):
        cx, cy = d.get("center", (0.0, 0.0))[:2]
        return cls(float(d["radius"]), int(d.get("num_angles", 360)), CartesianPoint(float(cx), float(cy), 0.0))


@dataclass(frozen=True)
class SinusoidParams:
    """Amplitude (m^2), phase (rad) and offset (m^2) of one trace."""

    alpha: float
    beta: float
    gamma: float


def spherical_to_cartesian(p):
    st = np.sin(p.theta)
    return CartesianPoint(
        float(p.r * st * np.cos(p.phi)),
        float(p.r * st * np.sin(p.phi)),
        float(p.r * np.cos(p.theta)),
    )


def cartesian_to_spherical(p):
    """Inverse of :func:`spherical_to_cartesian`.

    The azimuth of points on the z axis (including the origin) is 0.
    """
    rho = np.hypot(p.x, p.y)
    r = float(np.sqrt(rho**2 + p.z**2))
    if r == 0.0:
        return SphericalPoint(0.0, 0.0, 0.0)
    theta = float(np.arctan2(rho, p.z))
    phi = float(np.arctan2(p.y, p.x) % TWO_PI) if rho > 0 else 0.0
    if phi >= TWO_PI:
        phi = 0.0
    return SphericalPoint(r, theta, phi)


def scatterer_to_sinusoid(p, circle):
    """Sinusoid traced by a scatterer given relative to the circle centre."""
    return SinusoidParams(
        alpha=float(2.0 * p.r * circle.radius * np.sin(p.theta)),
        beta=float(p.phi % TWO_PI),
        gamma=float(p.r**2 + circle.radius**2),
    )


def sinusoid_to_scatterer(s, circle):
    """Spherical position (relative to the circle centre) of a sinusoid.

    Raises
    ------
    InvalidSinusoid
        If ``gamma < r'^2`` or the amplitude exceeds ``2 r r'``.
    """
    rp = circle.radius
    r2 = s.gamma - rp**2
    if r2 < -_REL_SLACK * s.gamma or s.alpha < 0:
        raise InvalidSinusoid(f"offset {s.gamma} below r'^2 = {rp**2}")
    r = float(np.sqrt(max(r2, 0.0)))
    alpha_max = 2.0 * r * rp
    if s.alpha > alpha_max * (1 + _REL_SLACK) + _REL_SLACK:
        raise InvalidSinusoid(f"amplitude {s.alpha} exceeds 2 r r' = {alpha_max}")
    if alpha_max == 0.0:
        theta = 0.0
    else:
        theta = float(np.arcsin(min(s.alpha / alpha_max, 1.0)))
    return SphericalPoint(r, theta, float(s.beta % TWO_PI))


def sinusoid_value(s, phi_prime):
    """Squared wall-to-scatterer distance at scan angle ``phi_prime``."""
    return s.gamma - s.alpha * np.cos(s.beta - np.asarray(phi_prime))


def scatterer_position(s, circle):
    """Cartesian wall-frame position of the scatterer behind ``s``."""
    return spherical_to_cartesian(sinusoid_to_scatterer(s, circle)) + circle.center


def sinusoid_of_point(p, circle):
    """Sinusoid of a Cartesian wall-frame point (translated to the circle centre)."""
    return scatterer_to_sinusoid(cartesian_to_spherical(p - circle.center), circle)
