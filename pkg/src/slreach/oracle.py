"""Independent checks: Monte Carlo reach estimates, cap grid
verification, finite differences, and a step-doubling reference flow.

These deliberately avoid the engine's code paths: the reference flow is
a self-contained RK4 with Richardson control, and the Monte Carlo
estimators run the integrator at their own (tighter) tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, OracleError
from .geometry import cap_probability_exact, cartesian_to_polar
from .integrate import IvpSettings, flow_endpoint
from .engine import TimestepContext, loss as engine_loss

_MC_IVP = IvpSettings(rel_tol=1e-9, abs_tol=1e-12)
_FAILURE_BUDGET = 0.01


@dataclass(frozen=True)
class McEstimate:
    """Empirical reach distances of one timestep."""

    n_samples: int
    n_failures: int
    max_dist: float
    argmax_start: np.ndarray
    quantiles: dict


def _sphere_starts(rng, x0, delta0, count, dim):
    g = rng.standard_normal((count, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # resampling would break prefix stability; tiny norms are absurdly rare
    norms[norms < 1e-300] = 1.0
    return x0[None, :] + delta0 * (g / norms)


def _mc_distance_table(field, starts, t0, times, centers, factors, ivp):
    if field.supports_kernel:
        return _kernels.mc_distances(
            field.kernel_kind, field.dim, field.params, field.widths,
            field.act, 1 if field.depends_on_initial else 0,
            starts, t0, times, centers, factors,
            ivp.rel_tol, ivp.abs_tol, ivp.max_step, 10_000_000)
    n = starts.shape[0]
    k = times.size
    dists = np.full((n, k), np.nan)
    status = np.zeros(n, dtype=np.int64)
    for i in range(n):
        y = starts[i]
        t = t0
        try:
            for j in range(k):
                y = flow_endpoint(field, y, t, times[j], ivp)
                t = times[j]
                dists[i, j] = np.linalg.norm(factors[j] @ (y - centers[j]))
        except Exception:  # noqa: BLE001 - per-sample isolation
            status[i] = 1
    return dists, status


def mc_reachtube(field, x0, delta0, t0, times, ellipsoids, n_mc: int,
                 seed: int, ivp: IvpSettings | None = None) -> list:
    """Monte Carlo estimates at every grid time from shared trajectories.

    Draws ``n_mc`` uniform starts on the initial sphere (prefix-stable in
    ``n_mc`` for a fixed seed) and integrates each through the grid.
    Raises OracleError when more than 1% of trajectories fail.
    """
    if n_mc < 1:
        raise OracleError(f"need a positive sample count, got {n_mc}")
    x0 = np.asarray(x0, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0 or (np.diff(times) <= 0).any() or times[0] < t0:
        raise DomainError("grid times must be strictly increasing and "
                          "start at or after t0")
    centers = np.stack([e.center for e in ellipsoids])
    factors = np.stack([e.factor for e in ellipsoids])
    ivp = ivp or _MC_IVP
    rng = np.random.default_rng(seed)
    starts = _sphere_starts(rng, x0, delta0, n_mc, field.dim)
    dists, status = _mc_distance_table(field, starts, float(t0), times,
                                       centers, factors, ivp)
    n_fail = int((status != 0).sum())
    if n_fail > _FAILURE_BUDGET * n_mc:
        raise OracleError(
            f"{n_fail} of {n_mc} trajectories failed to integrate; the "
            "estimate would not be trustworthy")
    out = []
    ok = status == 0
    for j in range(times.size):
        col = dists[ok, j]
        imax_ok = int(np.argmax(col))
        imax = int(np.flatnonzero(ok)[imax_ok])
        out.append(McEstimate(
            n_samples=n_mc, n_failures=n_fail,
            max_dist=float(col[imax_ok]),
            argmax_start=starts[imax].copy(),
            quantiles={"q50": float(np.quantile(col, 0.5)),
                       "q90": float(np.quantile(col, 0.9)),
                       "q99": float(np.quantile(col, 0.99)),
                       "max": float(col[imax_ok])}))
    return out


def mc_reachset(field, x0, delta0, t0, t_j, ellipsoid, n_mc: int,
                seed: int, ivp: IvpSettings | None = None) -> McEstimate:
    """Single-time Monte Carlo reach estimate."""
    return mc_reachtube(field, x0, delta0, t0, np.array([float(t_j)]),
                        [ellipsoid], n_mc, seed, ivp)[0]


@dataclass(frozen=True)
class GridVerdict:
    min_loss: float
    slack: float
    passed: bool
    points_checked: int


def _cap_colatitude(radius, delta0):
    return 2.0 * math.asin(min(1.0, radius / (2.0 * delta0)))


def _cap_grid_points(cap, x0, delta0, count, dim):
    """Quasi-uniform probe points inside a cap (anchor included).

    Colatitudes are stratified by equal cap-area quantiles (bisection on
    the exact cap probability); tangent directions use the golden angle
    in 3d and a fixed-seed stream in higher dimensions, so the grid is
    deterministic.
    """
    theta_max = _cap_colatitude(cap.radius, delta0) * (1.0 - 1e-12)
    e = (cap.anchor - x0) / delta0
    pts = [cap.anchor.copy()]
    if theta_max <= 0.0 or count <= 1:
        return pts
    if dim == 2:
        # the cap is an arc; cover it evenly end to end
        base = math.atan2(e[1], e[0])
        for i in range(count - 1):
            t = -theta_max + 2.0 * theta_max * i / max(1, count - 2)
            pts.append(x0 + delta0 * np.array([math.cos(base + t),
                                               math.sin(base + t)]))
        return pts
    total = cap_probability_exact(2.0 * delta0 * math.sin(theta_max / 2.0),
                                  delta0, dim)
    rng = np.random.default_rng(1234509876)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    for i in range(count - 1):
        target = total * (i + 0.5) / (count - 1)
        lo_t, hi_t = 0.0, theta_max
        for _ in range(60):
            mid = 0.5 * (lo_t + hi_t)
            p = cap_probability_exact(2.0 * delta0 * math.sin(mid / 2.0),
                                      delta0, dim)
            if p < target:
                lo_t = mid
            else:
                hi_t = mid
        theta = 0.5 * (lo_t + hi_t)
        if dim == 3:
            az = i * golden
            u = np.zeros(3)
            # tangent basis at e
            b1 = np.cross(e, [1.0, 0.0, 0.0])
            if np.linalg.norm(b1) < 1e-8:
                b1 = np.cross(e, [0.0, 1.0, 0.0])
            b1 /= np.linalg.norm(b1)
            b2 = np.cross(e, b1)
            w = math.cos(az) * b1 + math.sin(az) * b2
        else:
            g = rng.standard_normal(dim)
            g -= (g @ e) * e
            gn = np.linalg.norm(g)
            if gn < 1e-12:
                continue
            w = g / gn
        pts.append(x0 + delta0 * (math.cos(theta) * e
                                  + math.sin(theta) * w))
    return pts


def grid_verify_cap(cap, mu: float, m_bar: float, ctx: TimestepContext,
                    grid_size: int = 1000,
                    tolerance: float = 1e-9) -> GridVerdict:
    """Check the cap certificate L >= mu * m_bar on a point grid.

    Passes when the minimum sampled loss undershoots the certified level
    by no more than ``tolerance``.
    """
    pts = np.asarray(
        _cap_grid_points(cap, ctx.x0, ctx.delta0, grid_size, ctx.x0.size))
    level = mu * m_bar
    ell = ctx.ellipsoid
    if ctx.field.supports_kernel:
        # one batched sweep instead of a python loop per grid point
        dists, status = _mc_distance_table(
            ctx.field, pts, ctx.t0, np.array([ctx.t]),
            ell.center[None, :], ell.factor[None, :, :], ctx.ivp)
        if np.any(status != 0):
            raise OracleError("grid point integration failed")
        min_loss = float(-np.max(dists[:, 0]))
    else:
        min_loss = math.inf
        for p in pts:
            phi = cartesian_to_polar(p, ctx.x0, ctx.delta0, tol=1e-6)
            val = engine_loss(phi, ctx)
            if val < min_loss:
                min_loss = val
    slack = min_loss - level
    return GridVerdict(min_loss=min_loss, slack=slack,
                       passed=slack >= -tolerance, points_checked=len(pts))


def fd_jacobian(fn, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e)))
                    / (2.0 * h))
    return np.stack(cols, axis=1)


def reference_flow(field, x_init, t0: float, t1: float,
                   target: float = 1e-12, max_doublings: int = 22):
    """Fixed-step RK4 with step doubling, independent of the main solver.

    Doubles the step count until the Richardson error estimate falls
    below ``target`` (relative to the state scale); returns
    (state, error_estimate).
    """
    x_init = np.asarray(x_init, dtype=np.float64)
    if t1 == t0:
        return x_init.copy(), 0.0

    def rk4(steps):
        y = x_init.copy()
        h = (t1 - t0) / steps
        for k in range(steps):
            t = t0 + k * h
            k1 = field(y, x_init, t)
            k2 = field(y + 0.5 * h * k1, x_init, t + 0.5 * h)
            k3 = field(y + 0.5 * h * k2, x_init, t + 0.5 * h)
            k4 = field(y + h * k3, x_init, t + h)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return y

    steps = max(8, int(math.ceil(8.0 * (t1 - t0))))
    prev = rk4(steps)
    err = math.inf
    for _ in range(max_doublings):
        steps *= 2
        cur = rk4(steps)
        scale = 1.0 + float(np.abs(cur).max())
        err = float(np.abs(cur - prev).max()) / (15.0 * scale)
        if err <= target:
            return cur, err
        prev = cur
    raise OracleError(f"reference flow did not reach target accuracy "
                      f"{target:g}; best error estimate {err:g}")
