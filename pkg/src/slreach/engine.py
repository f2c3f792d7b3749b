"""Per-timestep stochastic optimization that certifies reachset radii.

For each timestep the initial sphere is explored by uniform random
draws, each refined by gradient descent on the loss

    L(phi) = -|| chi(x(phi)) - chi(x0) ||_{M_j},

the negated metric distance between the flowed surface point and the
flowed center.  Around every visited point a safety cap is certified on
which the loss provably stays above mu * m_bar, where m_bar is the
running minimum.  Sampling stops once the probability that a fresh draw
lands in an already-certified cap reaches 1 - gamma; the reachset radius
-mu * m_bar then holds with confidence 1 - gamma and tolerance mu.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, ZeroDistanceError
from .fields import VectorField
from .geometry import (CoverageSet, Ellipsoid, SafetyCap,
                       canonicalize_angles, cap_probability_exact,
                       cap_probability_lower_bound, cartesian_to_polar,
                       dist_gradient, dist_in_metric, optimal_metric,
                       polar_jacobian, polar_to_cartesian)
from .integrate import (IvpSettings, flow_endpoint, sensitivity_endpoint)
from .interval import lipschitz_over_region

_METRIC_MODES = ("optimal", "identity")
_LIPSCHITZ_MODES = ("rigorous", "sampled")
_LIPSCHITZ_SCOPES = ("global", "per-cap")
_IMPROVE_RTOL = 1e-12
_MAX_FIXPOINT_ITERS = 64


@dataclass(frozen=True)
class SlrConfig:
    """Knobs of the per-timestep optimization.

    ``mu`` is the tolerance factor (>= 1); ``mu_schedule`` optionally
    replaces it with a decreasing refinement sequence.  ``gamma`` is the
    accepted miss probability.  ``alpha`` is the descent step in angle
    space, ``eps_gd`` the relative loss change that terminates descents,
    ``eps_fix`` the relative tolerance of the per-cap radius fixpoint.
    """

    gamma: float = 0.05
    mu: float = 1.05
    mu_schedule: Optional[tuple] = None
    eps_gd: float = 1e-6
    alpha: float = 0.1
    eps_fix: float = 0.1
    max_gd_iters: int = 100
    max_samples: int = 50_000
    seed: int = 0
    metric_mode: str = "optimal"
    lipschitz_mode: str = "rigorous"
    lipschitz_scope: str = "global"
    lipschitz_inflation: float = 1.5
    lipschitz_samples: int = 32
    backtracking: bool = True
    ivp: IvpSettings = dc_field(default_factory=IvpSettings)

    def validate(self) -> list:
        """Every problem found, not just the first."""
        errs = []
        if not (0.0 < self.gamma < 1.0):
            errs.append(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.mu >= 1.0:
            errs.append(f"mu must be >= 1, got {self.mu}")
        if self.mu_schedule is not None:
            sched = tuple(self.mu_schedule)
            if not sched:
                errs.append("mu_schedule must not be empty")
            if any(m < 1.0 for m in sched):
                errs.append("mu_schedule entries must be >= 1")
            if any(b >= a for a, b in zip(sched, sched[1:])):
                errs.append("mu_schedule must be strictly decreasing")
        if not self.eps_gd > 0:
            errs.append(f"eps_gd must be positive, got {self.eps_gd}")
        if not self.alpha > 0:
            errs.append(f"alpha must be positive, got {self.alpha}")
        if not self.eps_fix > 0:
            errs.append(f"eps_fix must be positive, got {self.eps_fix}")
        if self.max_gd_iters < 1:
            errs.append("max_gd_iters must be at least 1")
        if self.max_samples < 1:
            errs.append("max_samples must be at least 1")
        if not (isinstance(self.seed, (int, np.integer)) and self.seed >= 0):
            errs.append(f"seed must be a nonnegative integer, got {self.seed}")
        if self.metric_mode not in _METRIC_MODES:
            errs.append(f"metric_mode must be one of {_METRIC_MODES}, "
                        f"got {self.metric_mode!r}")
        if self.lipschitz_mode not in _LIPSCHITZ_MODES:
            errs.append(f"lipschitz_mode must be one of {_LIPSCHITZ_MODES}, "
                        f"got {self.lipschitz_mode!r}")
        if self.lipschitz_scope not in _LIPSCHITZ_SCOPES:
            errs.append(f"lipschitz_scope must be one of {_LIPSCHITZ_SCOPES},"
                        f" got {self.lipschitz_scope!r}")
        if not self.lipschitz_inflation >= 1.0:
            errs.append("lipschitz_inflation must be >= 1")
        if self.lipschitz_samples < 1:
            errs.append("lipschitz_samples must be at least 1")
        return errs

    def require_valid(self) -> "SlrConfig":
        errs = self.validate()
        if errs:
            raise ConfigError(errs)
        return self


@dataclass(frozen=True)
class TimestepContext:
    """Everything a loss evaluation needs for one timestep."""

    field: VectorField
    x0: np.ndarray
    delta0: float
    t0: float
    t: float
    ellipsoid: Ellipsoid
    ivp: IvpSettings


def loss(phi, ctx: TimestepContext) -> float:
    """Negated metric distance of the flowed surface point to the center."""
    x = polar_to_cartesian(phi, ctx.x0, ctx.delta0)
    y = flow_endpoint(ctx.field, x, ctx.t0, ctx.t, ctx.ivp)
    return -dist_in_metric(y, ctx.ellipsoid)


def loss_gradient(phi, ctx: TimestepContext):
    """Loss and its gradient in angle space.

    Chains the metric distance gradient through the flow sensitivity and
    the sphere chart derivative.  A zero-distance singularity is retried
    with slightly perturbed angles, then reported.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=np.float64))
    last = None
    for attempt in range(4):
        probe = phi if attempt == 0 else phi + attempt * 1e-9
        x = polar_to_cartesian(probe, ctx.x0, ctx.delta0)
        y, f_sens = sensitivity_endpoint(ctx.field, x, ctx.t0, ctx.t,
                                         ctx.ivp)
        try:
            g_dist = dist_gradient(y, ctx.ellipsoid)
        except ZeroDistanceError as err:
            last = err
            continue
        val = -dist_in_metric(y, ctx.ellipsoid)
        jac = polar_jacobian(probe, ctx.delta0)
        grad = -(jac.T @ (f_sens.T @ g_dist))
        return val, grad
    raise last


@dataclass(frozen=True)
class GdResult:
    angles: np.ndarray
    loss: float
    initial_loss: float
    iterations: int
    diverged: bool


def gradient_descent(phi0, ctx: TimestepContext, cfg: SlrConfig) -> GdResult:
    """Descend the loss from phi0; returns the best point seen.

    With backtracking (default) a step is halved up to 20 times until it
    decreases the loss; if no decrease is found the descent stops.
    Terminates when the relative loss change drops below eps_gd, always
    taking at least one step.
    """
    phi = np.atleast_1d(np.asarray(phi0, dtype=np.float64)).copy()
    l_cur, grad = loss_gradient(phi, ctx)
    l_init = l_cur
    best_phi, best_l = phi.copy(), l_cur
    l_prev = None
    iters = 0
    increases = 0
    while iters < cfg.max_gd_iters:
        if l_prev is not None and abs(l_cur - l_prev) <= cfg.eps_gd * abs(
                l_prev):
            break
        iters += 1
        if cfg.backtracking:
            step = cfg.alpha
            accepted = False
            for _ in range(20):
                cand = phi - step * grad
                l_cand = loss(cand, ctx)
                if l_cand < l_cur:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            phi = cand
        else:
            phi = phi - cfg.alpha * grad
        l_prev = l_cur
        l_cur, grad = loss_gradient(phi, ctx)
        if l_cur > l_prev:
            increases += 1
        else:
            increases = 0
        if l_cur < best_l:
            best_phi, best_l = phi.copy(), l_cur
    diverged = increases >= cfg.max_gd_iters
    return GdResult(angles=best_phi, loss=best_l, initial_loss=l_init,
                    iterations=iters, diverged=diverged)


def _clamped_radius(gap: float, lam: float, delta0: float) -> float:
    """Certified cap radius (loss gap over Lipschitz), capped at the
    sphere diameter; a vanishing Lipschitz constant means a frozen loss,
    so the whole sphere is certified."""
    if gap <= 0.0:
        return 0.0
    if lam <= 1e-300:
        return 2.0 * delta0
    return min(gap / lam, 2.0 * delta0)


def safety_radius(anchor, loss_at_anchor: float, m_bar: float, mu: float,
                  ctx: TimestepContext, cfg: SlrConfig, *,
                  lam: Optional[float] = None, rng=None):
    """Radius of the cap around ``anchor`` on which the loss provably
    stays above mu * m_bar.

    With a precomputed ball-wide Lipschitz constant (``lam``) this is a
    single division.  Otherwise the per-cap fixpoint runs: starting from
    the whole ball, alternate between bounding the Lipschitz constant
    over the current region and recomputing the radius it certifies,
    until the region and radius agree within eps_fix.  Returns
    (radius, lipschitz_used).
    """
    gap = loss_at_anchor - mu * m_bar
    delta0 = ctx.delta0
    if lam is not None:
        return _clamped_radius(gap, lam, delta0), lam
    if gap <= 0.0:
        est = lipschitz_over_region(
            ctx.field, ctx.x0, delta0, ctx.t0, ctx.t, ctx.ellipsoid.factor,
            mode=cfg.lipschitz_mode, inflation=cfg.lipschitz_inflation,
            samples=cfg.lipschitz_samples, rng=rng, ivp=ctx.ivp)
        return 0.0, est.value
    s = delta0
    est = lipschitz_over_region(
        ctx.field, ctx.x0, delta0, ctx.t0, ctx.t, ctx.ellipsoid.factor,
        mode=cfg.lipschitz_mode, inflation=cfg.lipschitz_inflation,
        samples=cfg.lipschitz_samples, rng=rng, ivp=ctx.ivp)
    r = _clamped_radius(gap, est.value, delta0)
    for _ in range(_MAX_FIXPOINT_ITERS):
        if s >= r and abs(r - s) <= cfg.eps_fix * r:
            return r, est.value
        s = r + 0.5 * abs(s - r)
        est = lipschitz_over_region(
            ctx.field, ctx.x0, delta0, ctx.t0, ctx.t, ctx.ellipsoid.factor,
            anchor=anchor, chord_radius=s,
            mode=cfg.lipschitz_mode, inflation=cfg.lipschitz_inflation,
            samples=cfg.lipschitz_samples, rng=rng, ivp=ctx.ivp)
        r = _clamped_radius(gap, est.value, delta0)
    # no fixpoint within budget: the intersection is certified either way
    return min(r, s), est.value


@dataclass
class TimestepResult:
    """Certified reachset and diagnostics for one timestep."""

    t: float
    status: str                      # converged | max-samples | failed
    gamma: float
    mu: float
    metric_mode: str
    lipschitz_mode: str
    lipschitz_scope: str
    center: Optional[np.ndarray] = None
    metric: Optional[np.ndarray] = None
    factor: Optional[np.ndarray] = None
    m_bar: Optional[float] = None
    delta_raw: Optional[float] = None
    delta_guaranteed: Optional[float] = None
    p_bar: Optional[float] = None
    samples_used: int = 0
    gd_runs: int = 0
    caps_count: int = 0
    lipschitz: Optional[float] = None
    first_loss: Optional[float] = None
    error: Optional[str] = None
    caps: Optional[list] = None      # SafetyCap list, not serialized

    @property
    def ellipsoid(self) -> Ellipsoid:
        if self.center is None:
            raise DomainError("timestep failed; no reachset available")
        return Ellipsoid(center=self.center, metric=self.metric,
                         factor=self.factor,
                         radius=float(self.delta_guaranteed))


class _Visit:
    """One visited surface point and its certified cap bookkeeping."""

    __slots__ = ("angles", "anchor", "loss", "radius", "prob", "is_random",
                 "lam")

    def __init__(self, angles, anchor, loss_value, is_random):
        self.angles = angles
        self.anchor = anchor
        self.loss = loss_value
        self.is_random = is_random
        self.radius = None
        self.prob = 0.0
        self.lam = None


class _TimestepRun:
    """Mutable state of one timestep's sampling loop.

    Kept separate from the public entry points so mu-schedule refinement
    can resume sampling without rebuilding the visit history.
    """

    def __init__(self, field, x0, delta0, t0, t_j, cfg, rng):
        self.cfg = cfg
        self.rng = rng
        self.n = field.dim
        center, f_center = sensitivity_endpoint(field, x0, t0, t_j, cfg.ivp)
        metric, factor = optimal_metric(f_center, cfg.metric_mode)
        ell = Ellipsoid(center=center, metric=metric, factor=factor,
                        radius=0.0)
        self.ctx = TimestepContext(field=field, x0=np.asarray(
            x0, dtype=np.float64), delta0=float(delta0), t0=float(t0),
            t=float(t_j), ellipsoid=ell, ivp=cfg.ivp)
        self.visits: list = []
        self.u_indices: list = []
        self.cov = CoverageSet(sphere_center=self.ctx.x0,
                               sphere_radius=self.ctx.delta0)
        self.m_bar = 0.0
        self.full_caps = 0           # caps with hit probability 1
        self.gd_runs = 0
        self.first_loss = None
        self.lam_global = None
        if cfg.lipschitz_scope == "global":
            est = lipschitz_over_region(
                field, self.ctx.x0, self.ctx.delta0, self.ctx.t0,
                self.ctx.t, ell.factor, mode=cfg.lipschitz_mode,
                inflation=cfg.lipschitz_inflation,
                samples=cfg.lipschitz_samples, rng=rng, ivp=cfg.ivp)
            self.lam_global = est.value
        self.max_lam_seen = self.lam_global or 0.0

    @property
    def p_bar(self) -> float:
        # summed fresh so the confidence is a pure function of the
        # current cap radii; a telescoping accumulator would keep a
        # rounding residue from every superseded intermediate radius
        if self.full_caps > 0:
            return 1.0
        acc = 0.0
        for idx in self.u_indices:
            acc += math.log1p(-self.visits[idx].prob)
        return min(1.0, max(0.0, -math.expm1(acc)))

    def _add_visit(self, angles, anchor, loss_value, is_random) -> int:
        visit = _Visit(angles, anchor, loss_value, is_random)
        idx = len(self.visits)
        self.visits.append(visit)
        self.cov.add(SafetyCap(angles=angles, anchor=anchor, radius=0.0,
                               loss_at_anchor=loss_value))
        if is_random:
            self.u_indices.append(idx)
        return idx

    def _assign_radius(self, idx: int, mu: float,
                       expect_monotone: bool) -> None:
        visit = self.visits[idx]
        if self.cfg.lipschitz_scope == "global":
            radius, lam = safety_radius(
                visit.anchor, visit.loss, self.m_bar, mu, self.ctx,
                self.cfg, lam=self.lam_global, rng=self.rng)
            if expect_monotone and visit.radius is not None:
                # fixed lambda and a lower floor can only grow the cap
                assert radius >= visit.radius * (1.0 - 1e-9), (
                    f"cap radius shrank under an improved floor: "
                    f"{visit.radius} -> {radius}")
        else:
            radius, lam = safety_radius(
                visit.anchor, visit.loss, self.m_bar, mu, self.ctx,
                self.cfg, rng=self.rng)
            if expect_monotone and visit.radius is not None:
                # a cap certified against a higher floor stays valid when
                # the floor drops, so never let a fresh (possibly coarser)
                # Lipschitz estimate shrink it
                radius = max(radius, visit.radius)
        visit.lam = lam
        if lam > self.max_lam_seen:
            self.max_lam_seen = lam
        old_prob = visit.prob
        visit.radius = radius
        self.cov.update_radius(idx, radius)
        if visit.is_random:
            new_prob = cap_probability_exact(radius, self.ctx.delta0, self.n)
            visit.prob = new_prob
            if old_prob >= 1.0:
                self.full_caps -= 1
            if new_prob >= 1.0:
                self.full_caps += 1

    def _rebuild_all(self, mu: float, expect_monotone: bool) -> None:
        for idx in range(len(self.visits)):
            self._assign_radius(idx, mu, expect_monotone)

    def _draw_surface_point(self) -> np.ndarray:
        while True:
            v = self.rng.standard_normal(self.n)
            norm = float(np.linalg.norm(v))
            if norm > 1e-12:
                return self.ctx.x0 + self.ctx.delta0 * (v / norm)

    def step(self, mu: float) -> None:
        """One sampling iteration: draw, maybe descend, certify a cap."""
        x_draw = self._draw_surface_point()
        phi = cartesian_to_polar(x_draw, self.ctx.x0, self.ctx.delta0)
        covered = self.cov.contains(x_draw)
        idx_min = None
        if covered:
            l_draw = loss(phi, self.ctx)
            idx_rand = self._add_visit(phi, x_draw, l_draw, is_random=True)
            m_new = l_draw
        else:
            gd = gradient_descent(phi, self.ctx, self.cfg)
            self.gd_runs += 1
            l_draw = gd.initial_loss
            idx_rand = self._add_visit(phi, x_draw, gd.initial_loss,
                                       is_random=True)
            angles_min = canonicalize_angles(gd.angles)
            anchor_min = polar_to_cartesian(angles_min, self.ctx.x0,
                                            self.ctx.delta0)
            idx_min = self._add_visit(angles_min, anchor_min, gd.loss,
                                      is_random=False)
            m_new = gd.loss
        if self.first_loss is None:
            self.first_loss = l_draw
        if m_new < self.m_bar - _IMPROVE_RTOL * abs(self.m_bar):
            self.m_bar = m_new
            self._rebuild_all(mu, expect_monotone=True)
        else:
            self._assign_radius(idx_rand, mu, expect_monotone=False)
            if idx_min is not None:
                self._assign_radius(idx_min, mu, expect_monotone=False)

    def run(self, mu: float) -> TimestepResult:
        cfg = self.cfg
        target = 1.0 - cfg.gamma
        while self.p_bar < target:
            if len(self.u_indices) >= cfg.max_samples:
                return self._result(mu, "max-samples")
            self.step(mu)
        return self._result(mu, "converged")

    def refine(self, mu: float) -> TimestepResult:
        """Shrink the tolerance and resume sampling until confident again."""
        self._rebuild_all(mu, expect_monotone=False)
        return self.run(mu)

    def _result(self, mu: float, status: str) -> TimestepResult:
        cfg = self.cfg
        lam_report = (self.lam_global if cfg.lipschitz_scope == "global"
                      else (self.max_lam_seen or None))
        return TimestepResult(
            t=self.ctx.t, status=status, gamma=cfg.gamma, mu=mu,
            metric_mode=cfg.metric_mode,
            lipschitz_mode=cfg.lipschitz_mode,
            lipschitz_scope=cfg.lipschitz_scope,
            center=self.ctx.ellipsoid.center.copy(),
            metric=self.ctx.ellipsoid.metric.copy(),
            factor=self.ctx.ellipsoid.factor.copy(),
            m_bar=self.m_bar, delta_raw=-self.m_bar,
            delta_guaranteed=-mu * self.m_bar, p_bar=self.p_bar,
            samples_used=len(self.u_indices), gd_runs=self.gd_runs,
            caps_count=len(self.visits), lipschitz=lam_report,
            first_loss=self.first_loss,
            caps=list(self.cov.caps))


def run_timestep(field: VectorField, x0, delta0: float, t0: float,
                 t_j: float, cfg: SlrConfig,
                 rng_seed=None) -> TimestepResult:
    """Certify one reachset at time t_j with confidence 1 - gamma."""
    cfg.require_valid()
    _validate_problem(field, x0, delta0, t0, [t_j])
    rng = np.random.default_rng(
        cfg.seed if rng_seed is None else rng_seed)
    run = _TimestepRun(field, x0, delta0, t0, t_j, cfg, rng)
    return run.run(cfg.mu)


def refine_with_mu_schedule(field: VectorField, x0, delta0: float,
                            t0: float, t_j: float, cfg: SlrConfig,
                            stop_when: Optional[Callable] = None,
                            rng_seed=None) -> list:
    """Run a timestep through the decreasing mu schedule.

    Returns one result per schedule stage (later stages reuse all visits
    and caps).  ``stop_when(result)`` can end refinement early, e.g. once
    the reachset clears an unsafe region.
    """
    cfg.require_valid()
    if not cfg.mu_schedule:
        raise ConfigError(["mu_schedule must be set for refinement"])
    _validate_problem(field, x0, delta0, t0, [t_j])
    rng = np.random.default_rng(
        cfg.seed if rng_seed is None else rng_seed)
    run = _TimestepRun(field, x0, delta0, t0, t_j, cfg, rng)
    results = []
    for stage, mu in enumerate(cfg.mu_schedule):
        res = run.run(mu) if stage == 0 else run.refine(mu)
        results.append(res)
        if stop_when is not None and stop_when(res):
            break
    return results


@dataclass
class ReachtubeResult:
    """Reachsets for a whole time grid plus run-level metadata."""

    t0: float
    x0: np.ndarray
    delta0: float
    times: np.ndarray
    timesteps: list
    seed: int
    wall_seconds: float = 0.0
    step_wall_seconds: Optional[list] = None

    @property
    def all_converged(self) -> bool:
        return all(r.status == "converged" for r in self.timesteps)


def _validate_problem(field, x0, delta0, t0, times):
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (field.dim,):
        raise ConfigError([f"initial center has shape {x0.shape}, field "
                           f"dimension is {field.dim}"])
    errs = []
    if not (delta0 > 0 and math.isfinite(delta0)):
        errs.append(f"initial radius must be positive, got {delta0}")
    if not math.isfinite(t0):
        errs.append("t0 must be finite")
    arr = np.asarray(times, dtype=np.float64)
    if arr.size == 0:
        errs.append("need at least one timestep")
    elif not np.isfinite(arr).all():
        errs.append("timesteps must be finite")
    else:
        if (arr < t0).any():
            errs.append("timesteps must not precede t0")
        if (np.diff(arr) <= 0).any():
            errs.append("timesteps must be strictly increasing")
    if errs:
        raise ConfigError(errs)


def run_reachtube(field: VectorField, x0, delta0: float, t0: float,
                  times, cfg: SlrConfig, workers: int = 1,
                  mu_schedule_stop: Optional[Callable] = None
                  ) -> ReachtubeResult:
    """Certify reachsets at every grid time.

    Timesteps are independent: each gets its own deterministic random
    stream derived from the configured seed, so results are identical
    for any worker count.  A failing timestep is reported in its result
    slot without affecting the others.
    """
    cfg.require_valid()
    _validate_problem(field, x0, delta0, t0, times)
    times = np.asarray(times, dtype=np.float64)
    seeds = np.random.SeedSequence(cfg.seed).spawn(times.size)
    t_start = time.perf_counter()

    def one(j: int) -> tuple:
        started = time.perf_counter()
        rng = np.random.default_rng(seeds[j])
        try:
            run = _TimestepRun(field, x0, delta0, t0, float(times[j]),
                               cfg, rng)
            if cfg.mu_schedule:
                res = run.run(cfg.mu_schedule[0])
                for mu in cfg.mu_schedule[1:]:
                    if mu_schedule_stop is not None and mu_schedule_stop(res):
                        break
                    res = run.refine(mu)
            else:
                res = run.run(cfg.mu)
        except Exception as err:  # noqa: BLE001 - isolate per timestep
            res = TimestepResult(
                t=float(times[j]), status="failed", gamma=cfg.gamma,
                mu=cfg.mu, metric_mode=cfg.metric_mode,
                lipschitz_mode=cfg.lipschitz_mode,
                lipschitz_scope=cfg.lipschitz_scope,
                error=f"{type(err).__name__}: {err}")
        return res, time.perf_counter() - started

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(one, range(times.size)))
    else:
        pairs = [one(j) for j in range(times.size)]
    results = [p[0] for p in pairs]
    walls = [p[1] for p in pairs]
    return ReachtubeResult(
        t0=float(t0), x0=np.asarray(x0, dtype=np.float64),
        delta0=float(delta0), times=times, timesteps=results,
        seed=int(cfg.seed), wall_seconds=time.perf_counter() - t_start,
        step_wall_seconds=walls)


@dataclass(frozen=True)
class PlanResult:
    """A-priori sample budget that guarantees termination."""

    max_samples: float          # math.inf when no finite bound exists
    max_samples_exact: float    # the un-ceiled ratio
    hit_probability: float      # lower bound per fresh draw
    r_bound: float              # certified minimum cap radius


def plan_iterations(gamma: float, mu: float, lam: float,
                    first_loss: float, delta0: float, n: int) -> PlanResult:
    """Worst-case number of random draws before confidence is reached.

    Every certified cap has radius at least (1 - mu) L(phi_1) / lam, so
    each fresh draw hits the certified region with at least the
    probability of one such cap; the geometric tail gives the bound
    ln(gamma) / ln(1 - p).  Returns an infinite sentinel when the bound
    degenerates (mu = 1 or a vanishing first loss).
    """
    errs = []
    if not (0.0 < gamma < 1.0):
        errs.append(f"gamma must lie in (0, 1), got {gamma}")
    if not mu >= 1.0:
        errs.append(f"mu must be >= 1, got {mu}")
    if not (lam > 0 and math.isfinite(lam)):
        errs.append(f"lipschitz constant must be positive, got {lam}")
    if not first_loss <= 0:
        errs.append(f"losses are nonpositive, got {first_loss}")
    if not (delta0 > 0 and math.isfinite(delta0)):
        errs.append(f"initial radius must be positive, got {delta0}")
    if n < 2:
        errs.append(f"dimension must be >= 2, got {n}")
    if errs:
        raise ConfigError(errs)
    r_bound = min((1.0 - mu) * first_loss / lam, 2.0 * delta0)
    if r_bound <= 0.0:
        return PlanResult(max_samples=math.inf, max_samples_exact=math.inf,
                          hit_probability=0.0, r_bound=0.0)
    if r_bound >= math.sqrt(2.0) * delta0:
        # beyond a hemisphere the disc bound loses monotonicity; the
        # exact cap probability is the sharper safe choice
        p = cap_probability_exact(r_bound, delta0, n)
    else:
        p = cap_probability_lower_bound(r_bound, delta0, n)
    if p <= 0.0:
        return PlanResult(max_samples=math.inf, max_samples_exact=math.inf,
                          hit_probability=0.0, r_bound=r_bound)
    if p >= 1.0:
        return PlanResult(max_samples=1, max_samples_exact=1.0,
                          hit_probability=1.0, r_bound=r_bound)
    exact = math.log(gamma) / math.log1p(-p)
    return PlanResult(max_samples=float(math.ceil(exact)),
                      max_samples_exact=exact, hit_probability=p,
                      r_bound=r_bound)


def plan_reachtube(field: VectorField, x0, delta0: float, t0: float,
                   times, cfg: SlrConfig) -> list:
    """Per-timestep sample budgets using each timestep's own seed stream.

    Mirrors the run setup (metric, Lipschitz constant, first draw) so
    the reported budgets bound what the actual run would consume.
    Returns dicts with t, lipschitz, first_loss and the plan.
    """
    cfg.require_valid()
    _validate_problem(field, x0, delta0, t0, times)
    times = np.asarray(times, dtype=np.float64)
    seeds = np.random.SeedSequence(cfg.seed).spawn(times.size)
    mu_plan = cfg.mu_schedule[0] if cfg.mu_schedule else cfg.mu
    out = []
    for j in range(times.size):
        rng = np.random.default_rng(seeds[j])
        run = _TimestepRun(field, x0, delta0, t0, float(times[j]), cfg, rng)
        lam = run.lam_global
        if lam is None:
            est = lipschitz_over_region(
                field, run.ctx.x0, run.ctx.delta0, t0, float(times[j]),
                run.ctx.ellipsoid.factor, mode=cfg.lipschitz_mode,
                inflation=cfg.lipschitz_inflation,
                samples=cfg.lipschitz_samples, rng=rng, ivp=cfg.ivp)
            lam = est.value
        draw = run._draw_surface_point()
        phi = cartesian_to_polar(draw, run.ctx.x0, run.ctx.delta0)
        first = loss(phi, run.ctx)
        plan = plan_iterations(cfg.gamma, mu_plan, lam, first, delta0,
                               field.dim)
        out.append({"t": float(times[j]), "lipschitz": lam,
                    "first_loss": first, "plan": plan})
    return out
