"""Closed-form kernels on the unit-area disk.

The domain is the open disk of radius R = 1/sqrt(pi), so its Lebesgue
measure is exactly 1.  The Dirichlet Green function of -Laplace splits as

    G(x, y) = -(1/2pi) log|x - y| + g(x, y),

where the harmonic part g is given by the image charge y* = R^2 y / |y|^2:

    g(x, y) = (1/2pi) log(|y| |x - y*| / R).

Everything here is expressed through the symmetric, everywhere-smooth
quantity

    A(x, y)^2 = |x|^2 |y|^2 - 2 R^2 (x . y) + R^4 = (|y| |x - y*|)^2,

which satisfies A^2 - R^2 |x - y|^2 = (R^2 - |x|^2)(R^2 - |y|^2) >= 0, so

    G(x, y) = (1/4pi) log(1 + (R^2 - |x|^2)(R^2 - |y|^2) / (R^2 |x-y|^2))

is manifestly positive in the interior and vanishes on the boundary.

The perpendicular convention is fixed once and for all as
a_perp = (-a2, a1); the Biot-Savart kernel is K = grad_x^perp G.
All functions broadcast over trailing shape (..., 2).
"""

import numpy as np

from vortexgas.errors import DomainError

#: Disk radius fixed by the unit-area normalization pi R^2 = 1.
RADIUS = 1.0 / np.sqrt(np.pi)

#: Pairs closer than this are treated as coincident (kernel singularity).
MIN_SEPARATION = 1e-12

_INV_2PI = 1.0 / (2.0 * np.pi)
_INV_4PI = 1.0 / (4.0 * np.pi)


class DiskDomain:
    """The unit-area disk; mostly a named constant with containment helpers."""

    def __init__(self, radius=RADIUS):
        if abs(np.pi * radius**2 - 1.0) > 1e-12:
            raise ValueError("disk must have unit area: pi R^2 = 1")
        self.radius = float(radius)

    @property
    def area(self):
        return np.pi * self.radius**2

    @property
    def diameter(self):
        return 2.0 * self.radius

    def contains(self, x, margin=0.0):
        """Boolean mask of points strictly inside the disk (by ``margin``)."""
        x = np.asarray(x, dtype=float)
        return np.hypot(x[..., 0], x[..., 1]) < self.radius - margin

    def boundary_distance(self, x):
        x = np.asarray(x, dtype=float)
        return self.radius - np.hypot(x[..., 0], x[..., 1])


UNIT_DISK = DiskDomain()


def perp(a):
    """Counterclockwise quarter turn: (a1, a2) -> (-a2, a1)."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    out[..., 0] = -a[..., 1]
    out[..., 1] = a[..., 0]
    return out


def _check_interior(*points):
    for x in points:
        if not np.all(UNIT_DISK.contains(x)):
            raise DomainError("point outside the open disk of radius R = 1/sqrt(pi)")


def _check_separated(x, y):
    d = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)
    if np.any(d < MIN_SEPARATION):
        raise DomainError(
            f"coincident evaluation points (|x - y| < {MIN_SEPARATION:g})"
        )


def _a_squared(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = RADIUS**2
    return (
        np.sum(x * x, axis=-1) * np.sum(y * y, axis=-1)
        - 2.0 * r2 * np.sum(x * y, axis=-1)
        + r2 * r2
    )


def green(x, y, validate=True):
    """Dirichlet Green function G(x, y) of -Laplace on the disk.

    Positive in the interior, symmetric, zero boundary trace; logarithmic
    singularity on the diagonal.  Raises for coincident or exterior points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if validate:
        _check_interior(x, y)
        _check_separated(x, y)
    r2 = RADIUS**2
    d2 = np.sum((x - y) ** 2, axis=-1)
    bx = r2 - np.sum(x * x, axis=-1)
    by = r2 - np.sum(y * y, axis=-1)
    return _INV_4PI * np.log1p(bx * by / (r2 * d2))


def harmonic_part(x, y, validate=True):
    """Harmonic continuation g(x, y); smooth through the diagonal.

    g(x, x) = (1/2pi) log((R^2 - |x|^2)/R), and g(x, 0) = (1/2pi) log R.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if validate:
        _check_interior(x, y)
    return _INV_4PI * np.log(_a_squared(x, y) / RADIUS**2)


def grad_harmonic(x, y, validate=True):
    """Gradient of g in the first slot: (d/dx) g(x, y).

    Smooth everywhere in the open disk (including x = y and y = 0); on the
    diagonal it equals half the gradient of the map x -> g(x, x).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if validate:
        _check_interior(x, y)
    a2 = _a_squared(x, y)
    num = x * np.sum(y * y, axis=-1)[..., None] - RADIUS**2 * y
    return _INV_2PI * num / a2[..., None]


def grad_perp_g_diag(x, validate=True):
    """Self-interaction drift (grad_x^perp g)(x, y)|_{y=x}.

    Equals -(1/2pi) x_perp / (R^2 - |x|^2): purely tangential, so a lone
    vortex orbits on a circle of constant radius.
    """
    x = np.asarray(x, dtype=float)
    if validate:
        _check_interior(x)
    denom = RADIUS**2 - np.sum(x * x, axis=-1)
    return -_INV_2PI * perp(x) / denom[..., None]


def free_kernel(x, y, validate=True):
    """Full-plane Biot-Savart kernel grad_x^perp(-(1/2pi) log|x-y|).

    Antisymmetric under argument swap, modulus 1/(2pi |x-y|).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if validate:
        _check_separated(x, y)
    d = x - y
    d2 = np.sum(d * d, axis=-1)
    return -_INV_2PI * perp(d) / d2[..., None]


def biot_savart(x, y, validate=True):
    """Disk Biot-Savart kernel K(x, y) = grad_x^perp G(x, y).

    By construction K - grad_x^perp g equals :func:`free_kernel`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if validate:
        _check_interior(x, y)
        _check_separated(x, y)
    return free_kernel(x, y, validate=False) + perp(grad_harmonic(x, y, validate=False))


def gbar_integral():
    """int_D g(x, x) dx = (R^2/2)(log R - 1), about -0.2503 on the unit disk.

    From int_0^R log((R^2 - r^2)/R) r dr after substituting u = R^2 - r^2.
    """
    return 0.5 * RADIUS**2 * (np.log(RADIUS) - 1.0)


def green_pair_integral():
    """int_D int_D G(x, y) dx dy = pi R^4 / 8 = 1/(8 pi).

    Equals the integral of the torsion function u(x) = (R^2 - |x|^2)/4.
    """
    return np.pi * RADIUS**4 / 8.0
