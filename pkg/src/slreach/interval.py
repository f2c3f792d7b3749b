"""Outward-rounded interval arithmetic and rigorous flow sensitivity.

Directed rounding is emulated by widening every elementary result a few
ulps outward, which over-approximates true round-to-nearest error.  The
sensitivity propagation encloses the variational flow over a box region
by stepwise Euler with a validated a-priori enclosure per step and an
exponential remainder term for the truncation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EnclosureError

_ULPS = 4.0


def widen(lo, hi, ulps: float = _ULPS):
    """Move bounds outward by ``ulps`` units in the last place."""
    lo = lo - ulps * np.spacing(np.abs(lo))
    hi = hi + ulps * np.spacing(np.abs(hi))
    return lo, hi


def interval_product(alo, ahi, blo, bhi):
    """Elementwise interval product over arrays (broadcasting allowed)."""
    p = np.stack(np.broadcast_arrays(alo * blo, alo * bhi,
                                     ahi * blo, ahi * bhi))
    return widen(p.min(axis=0), p.max(axis=0))


def interval_square(lo, hi):
    """Elementwise [x]^2; zero-crossing intervals floor at zero."""
    a, b = lo * lo, hi * hi
    sq_hi = np.maximum(a, b)
    sq_lo = np.where((lo <= 0.0) & (hi >= 0.0), 0.0, np.minimum(a, b))
    wlo, whi = widen(sq_lo, sq_hi)
    # squares are nonnegative; widening must not cross zero
    return np.maximum(wlo, 0.0), whi


def point_interval_matvec(a, lo, hi):
    """Point matrix times interval vector."""
    p1 = a * lo[None, :]
    p2 = a * hi[None, :]
    out_lo = np.minimum(p1, p2).sum(axis=1)
    out_hi = np.maximum(p1, p2).sum(axis=1)
    return widen(out_lo, out_hi, ulps=_ULPS * (lo.size + 1))


def point_interval_matmul(a, blo, bhi):
    """Point matrix times interval matrix."""
    p1 = a[:, :, None] * blo[None, :, :]
    p2 = a[:, :, None] * bhi[None, :, :]
    lo = np.minimum(p1, p2).sum(axis=1)
    hi = np.maximum(p1, p2).sum(axis=1)
    return widen(lo, hi, ulps=_ULPS * (a.shape[1] + 1))


def interval_matmul(alo, ahi, blo, bhi):
    """Interval matrix product [A] @ [B]."""
    a1 = alo[:, :, None]
    a2 = ahi[:, :, None]
    b1 = blo[None, :, :]
    b2 = bhi[None, :, :]
    p = np.stack([a1 * b1, a1 * b2, a2 * b1, a2 * b2])
    lo = p.min(axis=0).sum(axis=1)
    hi = p.max(axis=0).sum(axis=1)
    return widen(lo, hi, ulps=_ULPS * (alo.shape[1] + 1))


@dataclass(frozen=True)
class Interval:
    """Closed scalar interval with outward-rounded arithmetic."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise DomainError("interval endpoints must be finite")
        if self.lo > self.hi:
            raise DomainError(f"empty interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(float(x), float(x))

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> float:
        return 0.5 * (self.hi - self.lo)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def _wrap(self, lo, hi):
        lo, hi = widen(np.float64(lo), np.float64(hi))
        return Interval(float(lo), float(hi))

    def __add__(self, other):
        other = _coerce(other)
        return self._wrap(self.lo + other.lo, self.hi + other.hi)

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        other = _coerce(other)
        return self._wrap(self.lo - other.hi, self.hi - other.lo)

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        other = _coerce(other)
        prods = (self.lo * other.lo, self.lo * other.hi,
                 self.hi * other.lo, self.hi * other.hi)
        return self._wrap(min(prods), max(prods))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other)
        if other.lo <= 0.0 <= other.hi:
            raise DomainError(f"division by interval [{other.lo}, "
                              f"{other.hi}] containing zero")
        quots = (self.lo / other.lo, self.lo / other.hi,
                 self.hi / other.lo, self.hi / other.hi)
        return self._wrap(min(quots), max(quots))

    def __rtruediv__(self, other):
        return _coerce(other) / self


def _coerce(x) -> Interval:
    if isinstance(x, Interval):
        return x
    return Interval.point(float(x))


@dataclass(frozen=True)
class IntervalMatrix:
    """Entrywise interval enclosure of a matrix."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape:
            raise DomainError("bound shapes differ")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise DomainError("interval matrix bounds must be finite")
        if (lo > hi).any():
            raise DomainError("interval matrix has empty entries")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, m) -> "IntervalMatrix":
        m = np.asarray(m, dtype=np.float64)
        return cls(m.copy(), m.copy())

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    @property
    def magnitude(self) -> np.ndarray:
        """Entrywise max(|lo|, |hi|)."""
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def contains(self, m) -> bool:
        m = np.asarray(m, dtype=np.float64)
        return bool((self.lo <= m).all() and (m <= self.hi).all())

    def __matmul__(self, other: "IntervalMatrix") -> "IntervalMatrix":
        lo, hi = interval_matmul(self.lo, self.hi, other.lo, other.hi)
        return IntervalMatrix(lo, hi)


@dataclass(frozen=True)
class RegionBox:
    """Axis-aligned box, the region type fed to the rigorous propagation."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DomainError("box bounds must be matching vectors")
        if (lo > hi).any():
            raise DomainError("box has empty extent")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise DomainError("box bounds must be finite")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool((self.lo <= x).all() and (x <= self.hi).all())


def ball_box(center, delta0: float) -> RegionBox:
    """Bounding box of the initial ball."""
    center = np.asarray(center, dtype=np.float64)
    lo, hi = widen(center - delta0, center + delta0)
    return RegionBox(lo, hi)


def box_of_cap(anchor, chord_radius: float, center,
               delta0: float) -> RegionBox:
    """Box around a surface cap: chord box clipped to the sphere's box.

    Every sphere point within chordal distance ``chord_radius`` of the
    anchor lies inside, as does every segment between two such points
    (segments stay in both boxes by convexity).
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if chord_radius < 0:
        raise DomainError("chord radius must be nonnegative")
    alo, ahi = widen(anchor - chord_radius, anchor + chord_radius)
    blo, bhi = widen(center - delta0, center + delta0)
    return RegionBox(np.maximum(alo, blo), np.minimum(ahi, bhi))


def interval_sensitivity(field, region: RegionBox, t0: float, t1: float,
                         steps: int = 256) -> IntervalMatrix:
    """Enclose the flow sensitivity over all starts in ``region``.

    Stepwise Euler propagation: each step first validates a local
    a-priori box via Picard iteration with epsilon inflation, then
    multiplies the running enclosure by the one-step propagator
    I + h [J] + [-eta, eta] where eta = exp(beta h) - 1 - beta h bounds
    the truncation remainder with beta an upper bound on ||[J]||_inf.
    Raises EnclosureError when a step's box cannot be validated.
    """
    if t1 < t0:
        raise DomainError("backward sensitivity propagation not supported")
    n = region.dim
    eye = np.eye(n)
    if t1 == t0:
        return IntervalMatrix(eye.copy(), eye.copy())
    if steps < 1:
        raise DomainError("steps must be positive")
    lo = region.lo.copy()
    hi = region.hi.copy()
    flo = eye.copy()
    fhi = eye.copy()
    h = (t1 - t0) / steps
    t = t0
    for _ in range(steps):
        elo, ehi = _validated_enclosure(field, lo, hi, t, h)
        # state box advance, sound by the integral mean value theorem
        rlo, rhi = field.interval_rhs(elo, ehi, t)
        lo, hi = widen(lo + h * rlo, hi + h * rhi)
        # one-step propagator with exponential truncation remainder
        jlo, jhi = field.interval_jacobian(elo, ehi, t)
        beta = float(np.max(np.abs(np.stack([jlo, jhi])).max(axis=0)
                            .sum(axis=1)))
        eta = (math.expm1(beta * h) - beta * h) * (1.0 + 1e-12) + 1e-300
        plo, phi_ = widen(eye + h * jlo - eta, eye + h * jhi + eta)
        flo, fhi = interval_matmul(plo, phi_, flo, fhi)
        t += h
    return IntervalMatrix(flo, fhi)


def _validated_enclosure(field, lo, hi, t, h, rounds: int = 30):
    """Box containing all trajectories from [lo, hi] for the next step."""
    elo, ehi = widen(lo.copy(), hi.copy())
    for _ in range(rounds):
        rlo, rhi = field.interval_rhs(elo, ehi, t)
        clo = lo + np.minimum(0.0, h * rlo)
        chi = hi + np.maximum(0.0, h * rhi)
        clo, chi = widen(clo, chi)
        if (clo >= elo).all() and (chi <= ehi).all():
            return elo, ehi
        # epsilon inflation around the joint hull
        elo = np.minimum(elo, clo)
        ehi = np.maximum(ehi, chi)
        spread = 0.1 * (ehi - elo) + 1e-15
        elo = elo - spread
        ehi = ehi + spread
    raise EnclosureError(
        "could not validate a step enclosure; use more steps or a "
        "smaller region", t)


def lipschitz_bound(sensitivity: IntervalMatrix, factor_target,
                    factor_initial=None) -> float:
    """Upper bound on ||A_j F A_0^{-1}||_2 over the enclosure.

    Uses the entrywise magnitude matrix: |G| <= B implies
    ||G||_2 <= ||B||_2.  ``factor_initial`` defaults to the identity,
    the factor of the Euclidean initial metric.
    """
    a_j = np.asarray(factor_target, dtype=np.float64)
    b_lo, b_hi = point_interval_matmul(a_j, sensitivity.lo, sensitivity.hi)
    if factor_initial is not None:
        a0 = np.asarray(factor_initial, dtype=np.float64)
        if not np.allclose(a0, np.eye(a0.shape[0]), atol=1e-14):
            inv = np.linalg.inv(a0)
            b_lo, b_hi = interval_matmul(b_lo, b_hi,
                                         *widen(inv, inv.copy(), 8.0))
    mag = np.maximum(np.abs(b_lo), np.abs(b_hi))
    return float(np.linalg.norm(mag, 2) * (1.0 + 1e-10))


@dataclass(frozen=True)
class LipschitzEstimate:
    """A metric Lipschitz constant for losses over a region."""

    value: float
    mode: str       # "rigorous" or "sampled"
    detail: int     # interval steps used, or sample count


def _sample_region_points(rng, center, delta0, anchor, chord_radius, count):
    """Deterministic probe points in a ball or a cap (plus chords)."""
    n = center.size
    pts = []
    if anchor is None:
        # whole ball: surface, interior, and the center
        n_surf = max(1, count // 2)
        for _ in range(n_surf):
            v = _unit_vector(rng, n)
            pts.append(center + delta0 * v)
        for _ in range(count - n_surf):
            v = _unit_vector(rng, n)
            r = delta0 * rng.uniform() ** (1.0 / n)
            pts.append(center + r * v)
        pts.append(center.copy())
    else:
        e = (anchor - center) / delta0
        half = min(1.0, chord_radius / (2.0 * delta0))
        theta_max = 2.0 * math.asin(half)
        pts.append(anchor.copy())
        for _ in range(count):
            theta = theta_max * math.sqrt(rng.uniform())
            g = rng.standard_normal(n)
            g -= (g @ e) * e
            gn = np.linalg.norm(g)
            if gn < 1e-12:
                continue
            w = g / gn
            pts.append(center + delta0 * (math.cos(theta) * e
                                          + math.sin(theta) * w))
        # chord midpoints reach below the surface
        for i in range(1, len(pts) - 1, 2):
            pts.append(0.5 * (pts[i] + pts[i + 1]))
    return pts


def _unit_vector(rng, n):
    while True:
        v = rng.standard_normal(n)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm


def lipschitz_over_region(field, center, delta0, t0, t1, factor_target, *,
                          anchor=None, chord_radius=None,
                          mode: str = "rigorous",
                          inflation: float = 1.5,
                          samples: int = 32,
                          rng=None,
                          base_steps_per_unit: int = 64,
                          max_steps: int = 4096,
                          rel_change: float = 0.05,
                          ivp=None) -> LipschitzEstimate:
    """Metric Lipschitz constant of the loss over a ball or cap region.

    ``rigorous`` encloses the sensitivity with interval propagation,
    doubling the step count until the bound stabilizes; ``sampled``
    takes the max sensitivity norm over probe points times ``inflation``
    (fast, used where interval propagation is too conservative).
    """
    center = np.asarray(center, dtype=np.float64)
    a_j = np.asarray(factor_target, dtype=np.float64)
    if t1 == t0:
        return LipschitzEstimate(
            value=float(np.linalg.norm(a_j, 2) * (1.0 + 1e-10)),
            mode=mode, detail=0)
    if mode == "rigorous":
        if anchor is not None:
            region = box_of_cap(anchor, chord_radius, center, delta0)
        else:
            region = ball_box(center, delta0)
        steps = max(16, int(math.ceil(base_steps_per_unit * (t1 - t0))))
        value = None
        last_err = None
        while steps <= max_steps:
            try:
                fint = interval_sensitivity(field, region, t0, t1, steps)
            except EnclosureError as err:
                last_err = err
                steps *= 2
                continue
            new = lipschitz_bound(fint, a_j)
            if value is not None and abs(new - value) <= rel_change * value:
                return LipschitzEstimate(value=min(new, value),
                                         mode="rigorous", detail=steps)
            value = new
            steps *= 2
        if value is None:
            raise last_err
        return LipschitzEstimate(value=value, mode="rigorous",
                                 detail=steps // 2)
    if mode != "sampled":
        raise DomainError(f"unknown lipschitz mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    from .integrate import sensitivity_endpoint
    pts = _sample_region_points(rng, center, delta0, anchor,
                                chord_radius, samples)
    best = 0.0
    for p in pts:
        _, f = sensitivity_endpoint(field, p, t0, t1, ivp)
        norm = float(np.linalg.norm(a_j @ f, 2))
        if norm > best:
            best = norm
    return LipschitzEstimate(value=inflation * best, mode="sampled",
                             detail=len(pts))
