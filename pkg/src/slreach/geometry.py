"""Ellipsoids, spherical polar charts, and cap probabilities.

Reachsets are ellipsoids {y : ||y - c||_M <= delta} with SPD metric M and
factor A satisfying A^T A = M, so the metric norm is the Euclidean norm
of A (y - c).  Points on the initial sphere of radius delta0 are
addressed by n-1 polar angles; safety caps are surface balls around
visited anchors, measured by chordal radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import betainc, gammaln

from .errors import DomainError, SingularFlowError, ZeroDistanceError

_SYM_TOL = 1e-10


@dataclass(frozen=True)
class Ellipsoid:
    """Metric ellipsoid with factored form.

    ``metric`` is SPD, ``factor`` is the symmetric square root, and
    ``radius`` is the metric radius of the set.
    """

    center: np.ndarray
    metric: np.ndarray
    factor: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        m = np.asarray(self.metric, dtype=np.float64)
        a = np.asarray(self.factor, dtype=np.float64)
        n = c.size
        if m.shape != (n, n) or a.shape != (n, n):
            raise DomainError(f"metric/factor shapes {m.shape}/{a.shape} "
                              f"do not match dimension {n}")
        if not (np.isfinite(c).all() and np.isfinite(m).all()
                and np.isfinite(a).all()):
            raise DomainError("ellipsoid data must be finite")
        scale = max(1.0, float(np.abs(m).max()))
        if np.abs(m - m.T).max() > _SYM_TOL * scale:
            raise DomainError("metric must be symmetric")
        if np.abs(a.T @ a - m).max() > 1e-10 * scale:
            raise DomainError("factor does not reproduce the metric")
        if np.linalg.eigvalsh((m + m.T) / 2).min() <= 0:
            raise DomainError("metric must be positive definite")
        if not (self.radius >= 0 and math.isfinite(self.radius)):
            raise DomainError("radius must be finite and nonnegative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "metric", m)
        object.__setattr__(self, "factor", a)

    @property
    def dim(self) -> int:
        return self.center.size

    @classmethod
    def ball(cls, center, radius: float) -> "Ellipsoid":
        center = np.asarray(center, dtype=np.float64)
        n = center.size
        return cls(center=center, metric=np.eye(n), factor=np.eye(n),
                   radius=float(radius))

    @classmethod
    def from_metric(cls, center, metric, radius: float = 0.0) -> "Ellipsoid":
        metric = np.asarray(metric, dtype=np.float64)
        return cls(center=np.asarray(center, dtype=np.float64),
                   metric=metric, factor=symmetric_sqrt(metric),
                   radius=float(radius))


def symmetric_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    w, v = np.linalg.eigh((m + m.T) / 2)
    if w.min() <= 0:
        raise DomainError("matrix is not positive definite")
    return (v * np.sqrt(w)) @ v.T


def polar_to_cartesian(phi, center, delta0: float) -> np.ndarray:
    """Point on the sphere of radius delta0 addressed by n-1 angles."""
    phi = np.atleast_1d(np.asarray(phi, dtype=np.float64))
    center = np.asarray(center, dtype=np.float64)
    n = center.size
    if phi.size != n - 1:
        raise DomainError(f"need {n - 1} angles for dimension {n}, "
                          f"got {phi.size}")
    if delta0 <= 0:
        raise DomainError("sphere radius must be positive")
    out = np.empty(n)
    running = 1.0
    for i in range(n - 1):
        out[i] = running * math.cos(phi[i])
        running *= math.sin(phi[i])
    out[n - 1] = running
    return center + delta0 * out


def cartesian_to_polar(x, center, delta0: float,
                       tol: float = 1e-8) -> np.ndarray:
    """Angles of a sphere point; canonical ranges [0, pi] then [0, 2pi).

    Raises DomainError when x is farther than ``tol`` (relative) from the
    sphere.
    """
    x = np.asarray(x, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    n = center.size
    if delta0 <= 0:
        raise DomainError("sphere radius must be positive")
    u = (x - center) / delta0
    r = float(np.linalg.norm(u))
    if abs(r - 1.0) > tol:
        raise DomainError(f"point is off the sphere by {abs(r - 1.0):.3e} "
                          f"(relative), tolerance {tol:.3e}")
    phi = np.empty(n - 1)
    for k in range(n - 2):
        tail = float(np.linalg.norm(u[k + 1:]))
        phi[k] = math.atan2(tail, u[k])
    phi[n - 2] = math.atan2(u[n - 1], u[n - 2]) % (2.0 * math.pi)
    return phi


def canonicalize_angles(phi, n: int | None = None) -> np.ndarray:
    """Map arbitrary angles to the canonical chart of the same point."""
    phi = np.atleast_1d(np.asarray(phi, dtype=np.float64))
    x = polar_to_cartesian(phi, np.zeros(phi.size + 1), 1.0)
    return cartesian_to_polar(x, np.zeros(phi.size + 1), 1.0)


def polar_jacobian(phi, delta0: float) -> np.ndarray:
    """Derivative of the sphere chart, shape (n, n-1).

    Columns are tangent to the sphere; built by the product rule over the
    nested sine products, so no division by possibly-zero sines occurs.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=np.float64))
    m = phi.size
    n = m + 1
    if delta0 <= 0:
        raise DomainError("sphere radius must be positive")
    s = np.sin(phi)
    c = np.cos(phi)
    jac = np.zeros((n, m))
    for j in range(m):
        for i in range(n):
            if i < n - 1:
                if j > i:
                    continue
                prod = delta0
                for k in range(i):
                    prod *= c[k] if k == j else s[k]
                jac[i, j] = prod * (-s[i] if j == i else c[i])
            else:
                prod = delta0
                for k in range(n - 1):
                    prod *= c[k] if k == j else s[k]
                jac[i, j] = prod
    return jac


def dist_in_metric(y, ellipsoid: Ellipsoid) -> float:
    """Metric distance ||y - center||_M via the factor."""
    y = np.asarray(y, dtype=np.float64)
    return float(np.linalg.norm(ellipsoid.factor @ (y - ellipsoid.center)))


def dist_gradient(y, ellipsoid: Ellipsoid) -> np.ndarray:
    """Gradient of the metric distance: M (y - c) / ||y - c||_M."""
    y = np.asarray(y, dtype=np.float64)
    diff = y - ellipsoid.center
    d = float(np.linalg.norm(ellipsoid.factor @ diff))
    if d <= 0.0:
        raise ZeroDistanceError("distance gradient undefined at the center")
    return (ellipsoid.metric @ diff) / d


def optimal_metric(f_center: np.ndarray, mode: str = "optimal"):
    """Timestep metric from the center flow sensitivity.

    ``optimal`` returns M = det(C)^(1/n) C^{-1} with C = F F^T, which has
    unit determinant and makes the linearized surface image round;
    ``identity`` keeps the Euclidean metric.  Returns (metric, factor).
    """
    f_center = np.asarray(f_center, dtype=np.float64)
    n = f_center.shape[0]
    if mode == "identity":
        return np.eye(n), np.eye(n)
    if mode != "optimal":
        raise DomainError(f"unknown metric mode {mode!r}")
    sign, logdet = np.linalg.slogdet(f_center)
    if sign == 0 or logdet < math.log(1e-150):
        raise SingularFlowError("flow sensitivity is numerically singular")
    c = f_center @ f_center.T
    # scale first, then invert: keeps det(M) = 1 well conditioned
    c_scaled = c * math.exp(-2.0 * logdet / n)
    m = np.linalg.inv(c_scaled)
    m = (m + m.T) / 2
    return m, symmetric_sqrt(m)


@dataclass(frozen=True)
class SafetyCap:
    """Surface ball around a visited anchor, chordal radius ``radius``."""

    angles: np.ndarray
    anchor: np.ndarray
    radius: float
    loss_at_anchor: float


@dataclass
class CoverageSet:
    """Union of safety caps on one sphere, with fast membership tests."""

    sphere_center: np.ndarray
    sphere_radius: float
    caps: list = dc_field(default_factory=list)

    def __post_init__(self):
        self.sphere_center = np.asarray(self.sphere_center, dtype=np.float64)
        n = self.sphere_center.size
        self._anchors = np.empty((16, n))
        self._radii = np.empty(16)
        self._count = 0
        caps, self.caps = list(self.caps), []
        for cap in caps:
            self.add(cap)

    def __len__(self) -> int:
        return self._count

    def add(self, cap: SafetyCap) -> None:
        off = abs(np.linalg.norm(cap.anchor - self.sphere_center)
                  - self.sphere_radius)
        if off > 1e-10 * self.sphere_radius:
            raise DomainError(f"cap anchor off the sphere by {off:.3e}")
        if not (0.0 <= cap.radius <= 2.0 * self.sphere_radius * (1 + 1e-12)):
            raise DomainError(f"cap radius {cap.radius} outside "
                              f"[0, 2*delta0]")
        if self._count == self._anchors.shape[0]:
            self._anchors = np.vstack([self._anchors, self._anchors])
            self._radii = np.concatenate([self._radii, self._radii])
        self._anchors[self._count] = cap.anchor
        self._radii[self._count] = cap.radius
        self._count += 1
        self.caps.append(cap)

    def update_radius(self, index: int, radius: float) -> None:
        cap = self.caps[index]
        self.caps[index] = SafetyCap(angles=cap.angles, anchor=cap.anchor,
                                     radius=float(radius),
                                     loss_at_anchor=cap.loss_at_anchor)
        self._radii[index] = radius

    def contains(self, x) -> bool:
        """Boundary inclusive: chordal distance equal to a radius counts."""
        if self._count == 0:
            return False
        x = np.asarray(x, dtype=np.float64)
        d = np.linalg.norm(self._anchors[:self._count] - x[None, :], axis=1)
        return bool((d <= self._radii[:self._count]).any())


def cap_probability_exact(radius: float, delta0: float, n: int) -> float:
    """Probability that a uniform sphere point lands in a given cap.

    The cap with chordal radius r has colatitude theta = 2 asin(r/(2
    delta0)); its normalized area follows the regularized incomplete beta
    function of sin^2(theta).
    """
    _check_cap_args(radius, delta0, n)
    if radius == 0.0:
        return 0.0
    half = min(1.0, radius / (2.0 * delta0))
    theta = 2.0 * math.asin(half)
    s2 = math.sin(theta) ** 2
    tail = 0.5 * float(betainc((n - 1) / 2.0, 0.5, s2))
    return tail if theta <= math.pi / 2.0 else 1.0 - tail


def cap_probability_lower_bound(radius: float, delta0: float,
                                n: int) -> float:
    """Closed-form lower bound via the flat base disc of the cap.

    Valid (and monotone) for r <= sqrt(2) delta0, i.e. caps at most a
    hemisphere; beyond that the base radius shrinks again and the bound
    stays valid but loose.
    """
    _check_cap_args(radius, delta0, n)
    if radius == 0.0:
        return 0.0
    half = min(1.0, radius / (2.0 * delta0))
    rho = radius * math.sqrt(max(0.0, 1.0 - half * half))
    coef = 0.5 / math.sqrt(math.pi) * math.exp(
        gammaln(n / 2.0) - gammaln((n + 1) / 2.0))
    return coef * (rho / delta0) ** (n - 1)


def _check_cap_args(radius, delta0, n):
    if n < 2 or int(n) != n:
        raise DomainError("dimension must be an integer >= 2")
    if not (delta0 > 0 and math.isfinite(delta0)):
        raise DomainError("sphere radius must be positive and finite")
    if not (radius >= 0 and math.isfinite(radius)):
        raise DomainError("cap radius must be nonnegative and finite")
    if radius > 2.0 * delta0 * (1.0 + 1e-12):
        raise DomainError(f"cap radius {radius} exceeds sphere diameter "
                          f"{2 * delta0}")


def coverage_confidence(caps, delta0: float, n: int) -> float:
    """Confidence that a fresh uniform draw hits some listed cap.

    One minus the product of miss probabilities, accumulated in log space
    for stability with thousands of caps.
    """
    acc = 0.0
    for cap in caps:
        p = cap_probability_exact(cap.radius, delta0, n)
        if p >= 1.0:
            return 1.0
        acc += math.log1p(-p)
    return -math.expm1(acc)
