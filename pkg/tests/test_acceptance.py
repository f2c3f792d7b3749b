"""End-to-end guarantees of the shipped pipeline.

Each class pins one user-facing promise: exactness under isometries,
Monte-Carlo containment at the certified confidence, derivative and
probability formulas against independent references, soundness of every
emitted safety region, a-priori sample budgets, interval enclosures, and
bit-level determinism across worker counts.
"""

import math
import time

import mpmath
import numpy as np
import pytest
from numpy.random import default_rng
from numpy.testing import assert_allclose
from scipy.linalg import expm

import slreach as sr
from slreach.engine import TimestepContext
from slreach.interval import (interval_matmul, interval_product,
                              interval_square)
from helpers import (ROTATION, bundled_systems, make_neural, make_rotation,
                     make_vdp)

GAMMA = 0.05
MU = 1.05
N_MC = 100_000
N_SEEDS = 20
TIGHT_IVP = sr.IvpSettings(rel_tol=1e-11, abs_tol=1e-13)


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="module")
def rotation_tube():
    """Pure-rotation tube on a quarter/half/full-turn grid."""
    field = make_rotation()
    cfg = sr.SlrConfig(gamma=GAMMA, mu=MU, seed=0, metric_mode="identity")
    start = time.perf_counter()
    tube = sr.run_reachtube(field, np.array([1.0, 0.0]), 0.1, 0.0,
                            [np.pi / 4, np.pi / 2, np.pi], cfg)
    return tube, time.perf_counter() - start


@pytest.fixture(scope="module")
def containment_data():
    """Twenty seeded tubes per nonlinear system plus one shared
    Monte-Carlo distance table.

    The reachset centers and metrics are deterministic functions of the
    problem (no randomness flows into them), so the expensive MC table
    is computed once against the seed-0 ellipsoids and compared with
    every seed's guaranteed radii; the invariance itself is asserted in
    a test below.
    """
    start = time.perf_counter()
    data = {}
    for name, field, x0, delta0, horizon in bundled_systems():
        if name == "rotation":
            continue
        times = np.linspace(horizon / 8, horizon, 8)
        tubes = []
        for seed in range(N_SEEDS):
            cfg = sr.SlrConfig(gamma=GAMMA, mu=MU, seed=seed,
                               lipschitz_mode="sampled")
            tubes.append(sr.run_reachtube(field, x0, delta0, 0.0, times,
                                          cfg))
        ells = [r.ellipsoid for r in tubes[0].timesteps]
        ests = sr.mc_reachtube(field, x0, delta0, 0.0, times, ells,
                               N_MC, seed=107)
        mc_max = np.array([e.max_dist for e in ests])
        data[name] = {"field": field, "x0": x0, "delta0": delta0,
                      "times": times, "tubes": tubes, "mc_max": mc_max}
    return data, time.perf_counter() - start


# ------------------------------------------------- exactness on isometries

class TestIsometricRotationExactness:
    """A rotation flow moves spheres to spheres, so the certified radius
    must land between the true radius and its mu-tolerance multiple."""

    def test_guaranteed_radii_within_mu_of_truth(self, rotation_tube):
        tube, _ = rotation_tube
        assert tube.all_converged
        for res in tube.timesteps:
            assert res.delta_guaranteed >= 0.1
            assert res.delta_guaranteed <= MU * 0.1 * (1.0 + 1e-6)

    def test_runtime_budget(self, rotation_tube):
        _, elapsed = rotation_tube
        assert elapsed < 60.0


# ------------------------------------------------- stochastic containment

class TestStochasticContainment:
    """With gamma = 0.05, at least 19 of 20 seeded runs must contain the
    full Monte-Carlo cloud at every timestep."""

    def test_reachsets_are_seed_independent(self, containment_data):
        data, _ = containment_data
        for entry in data.values():
            base = entry["tubes"][0]
            for tube in entry["tubes"][1:]:
                for a, b in zip(base.timesteps, tube.timesteps):
                    assert np.array_equal(a.center, b.center)
                    assert np.array_equal(a.factor, b.factor)

    def test_all_runs_converged(self, containment_data):
        data, _ = containment_data
        for entry in data.values():
            for tube in entry["tubes"]:
                assert tube.all_converged

    @pytest.mark.parametrize("name", ["vanderpol", "neural"])
    def test_nineteen_of_twenty_runs_contain_the_cloud(
            self, containment_data, name):
        data, _ = containment_data
        entry = data[name]
        ok = 0
        for tube in entry["tubes"]:
            deltas = np.array([r.delta_guaranteed for r in tube.timesteps])
            ok += bool(np.all(entry["mc_max"] <= deltas))
        assert ok >= 19, f"{name}: only {ok} of {N_SEEDS} runs contained"

    def test_runtime_budget(self, containment_data):
        _, elapsed = containment_data
        assert elapsed < 600.0


# ------------------------------------------------------ gradient fidelity

class TestGradientFidelity:
    def _context(self, field, x0, delta0, t):
        center, f_mat = sr.sensitivity_endpoint(field, x0, 0.0, t,
                                                TIGHT_IVP)
        metric, factor = sr.optimal_metric(f_mat)
        ell = sr.Ellipsoid(center=center, metric=metric, factor=factor,
                           radius=delta0)
        return TimestepContext(field=field, x0=x0, delta0=delta0,
                               t0=0.0, t=t, ellipsoid=ell, ivp=TIGHT_IVP)

    def test_loss_gradient_and_sensitivity_match_finite_differences(self):
        start = time.perf_counter()
        h = 1e-4
        for name, field, x0, delta0, horizon in bundled_systems():
            rng = default_rng(hash(name) % 2**32)
            for _ in range(100):
                t = rng.uniform(0.05 * horizon, horizon)
                phi = np.array([rng.uniform(-np.pi, np.pi)])
                ctx = self._context(field, x0, delta0, t)

                _, grad = sr.loss_gradient(phi, ctx)
                fd = (sr.loss(phi + h, ctx) - sr.loss(phi - h, ctx)) / (2 * h)
                # the denominator floor is the finite-difference noise
                # level; an isometry's angular gradient is exactly zero
                # and central differences only return integration noise
                err = abs(grad[0] - fd) / max(abs(fd), abs(grad[0]), 1e-6)
                assert err <= 1e-4, f"{name}: d loss mismatch {err:.2e}"

                x = sr.polar_to_cartesian(phi, x0, delta0)
                _, f_mat = sr.sensitivity_endpoint(field, x, 0.0, t,
                                                   TIGHT_IVP)
                jac = sr.fd_jacobian(
                    lambda s: sr.flow_endpoint(field, s, 0.0, t, TIGHT_IVP),
                    x)
                rel = (np.linalg.norm(f_mat - jac, 2)
                       / np.linalg.norm(jac, 2))
                assert rel <= 1e-4, f"{name}: sensitivity mismatch {rel:.2e}"
        assert time.perf_counter() - start < 120.0

    def test_linear_sensitivity_equals_matrix_exponential(self):
        field = make_rotation()
        a_mat = np.array(ROTATION)
        rng = default_rng(3)
        for t in rng.uniform(0.1, np.pi, size=10):
            _, f_mat = sr.sensitivity_endpoint(field, np.array([1.0, 0.0]),
                                               0.0, t)
            exact = expm(t * a_mat)
            assert np.linalg.norm(f_mat - exact, 2) <= 1e-6


# ------------------------------------------------- safety-region soundness

class TestSafetyRegionSoundness:
    """Every cap emitted by the seed-0 containment runs must survive an
    independent dense grid check of its certified loss floor."""

    def test_every_cap_passes_grid_verification(self, containment_data):
        data, _ = containment_data
        checked = 0
        for entry in data.values():
            ivp = sr.IvpSettings()
            for res in entry["tubes"][0].timesteps:
                ctx = TimestepContext(
                    field=entry["field"], x0=entry["x0"],
                    delta0=entry["delta0"], t0=0.0, t=res.t,
                    ellipsoid=res.ellipsoid, ivp=ivp)
                for cap in res.caps:
                    verdict = sr.grid_verify_cap(cap, res.mu, res.m_bar,
                                                 ctx, grid_size=1000)
                    assert verdict.slack >= -1e-9, (
                        f"cap at t={res.t}: slack {verdict.slack:.3e}")
                    checked += 1
        assert checked > 0


# ------------------------------------------------ cap probability formulas

class TestCapProbability:
    NS = (2, 3, 4, 6)
    RATIOS = (0.1, 0.5, 1.0, math.sqrt(2.0))

    def test_exact_formula_matches_monte_carlo(self):
        start = time.perf_counter()
        n_samples = 10_000_000
        chunk = 1_000_000
        for idx, n in enumerate(self.NS):
            rng = default_rng(424242 + idx)
            counts = np.zeros(len(self.RATIOS), dtype=np.int64)
            thresholds = np.array([1.0 - r * r / 2.0 for r in self.RATIOS])
            for _ in range(n_samples // chunk):
                g = rng.standard_normal((chunk, n))
                cosang = g[:, 0] / np.linalg.norm(g, axis=1)
                counts += (cosang[:, None] >= thresholds[None, :]).sum(0)
            for r, count in zip(self.RATIOS, counts):
                p = sr.cap_probability_exact(r, 1.0, n)
                se = math.sqrt(p * (1.0 - p) / n_samples)
                err = abs(count / n_samples - p)
                assert err <= 3.0 * se + 1e-12, (
                    f"n={n} r={r}: |mc-exact|={err:.3e} > 3 se={3*se:.3e}")
        assert time.perf_counter() - start < 180.0

    def test_lower_bound_never_exceeds_exact(self):
        for n in range(2, 9):
            for r in np.linspace(1e-3, math.sqrt(2.0), 200):
                lower = sr.cap_probability_lower_bound(r, 1.0, n)
                exact = sr.cap_probability_exact(r, 1.0, n)
                assert lower <= exact + 1e-15, f"n={n} r={r}"


# ------------------------------------------------------ sample budget law

def _mp_plan(gamma, mu, lam, first_loss, delta0, n):
    """Independent 50-digit evaluation of the draw budget."""
    g, m, lm, fl, d = (mpmath.mpf(repr(v))
                       for v in (gamma, mu, lam, first_loss, delta0))
    r = min((1 - m) * fl / lm, 2 * d)
    if r <= 0:
        return mpmath.inf, mpmath.inf, mpmath.mpf(0)
    half = min(mpmath.mpf(1), r / (2 * d))
    if r >= mpmath.sqrt(2) * d:
        theta = 2 * mpmath.asin(half)
        s2 = mpmath.sin(theta) ** 2
        tail = mpmath.betainc((n - 1) / mpmath.mpf(2), mpmath.mpf(1) / 2,
                              0, s2, regularized=True) / 2
        p = tail if theta <= mpmath.pi / 2 else 1 - tail
    else:
        rho = r * mpmath.sqrt(1 - half ** 2)
        p = (mpmath.gamma(n / mpmath.mpf(2))
             / mpmath.gamma((n + 1) / mpmath.mpf(2))
             / (2 * mpmath.sqrt(mpmath.pi)) * (rho / d) ** (n - 1))
    if p >= 1:
        return mpmath.mpf(1), mpmath.mpf(1), mpmath.mpf(1)
    exact = mpmath.log(g) / mpmath.log(1 - p)
    return mpmath.ceil(exact), exact, p


class TestSampleBudget:
    def test_budget_matches_high_precision_reference(self):
        mpmath.mp.dps = 50
        rng = default_rng(61)
        for _ in range(50):
            gamma = 10.0 ** rng.uniform(-6.0, -0.7)
            mu = rng.uniform(1.01, 1.6)
            lam = rng.uniform(0.3, 5.0)
            delta0 = rng.uniform(0.02, 1.0)
            first_loss = -rng.uniform(0.05, 4.0) * delta0
            n = int(rng.integers(2, 9))
            plan = sr.plan_iterations(gamma, mu, lam, first_loss, delta0, n)
            ref_n, ref_exact, ref_p = _mp_plan(gamma, mu, lam, first_loss,
                                               delta0, n)
            assert abs(plan.hit_probability - ref_p) <= 1e-9 * ref_p
            assert abs(plan.max_samples_exact - ref_exact) \
                <= 1e-9 * ref_exact
            near_edge = abs(ref_exact - mpmath.nint(ref_exact)) \
                <= 1e-9 * ref_exact
            assert plan.max_samples == float(ref_n) or near_edge

    def test_budget_grows_as_gamma_shrinks(self):
        budgets = [sr.plan_iterations(g, 1.05, 1.5, -0.1, 0.1, 2).max_samples
                   for g in (0.2, 0.1, 0.05, 0.01, 1e-3, 1e-6)]
        assert all(b2 >= b1 for b1, b2 in zip(budgets, budgets[1:]))

    def test_rotation_runs_finish_within_budget(self, rotation_tube):
        tube, _ = rotation_tube
        for res in tube.timesteps:
            plan = sr.plan_iterations(GAMMA, MU, res.lipschitz,
                                      res.first_loss, 0.1, 2)
            assert res.samples_used <= plan.max_samples


# ------------------------------------------------------ interval soundness

class TestIntervalSoundness:
    HORIZONS = {"rotation": np.pi, "vanderpol": 0.3, "neural": 0.5}
    RADII = {"rotation": 0.1, "vanderpol": 0.02, "neural": 0.05}

    def _samples(self, rng, x0, delta0, count):
        g = rng.standard_normal((count, x0.size))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        radii = delta0 * rng.random(count) ** (1.0 / x0.size)
        return x0[None, :] + radii[:, None] * g

    def test_enclosure_contains_sampled_jacobians(self):
        for name, field, x0, _, _ in bundled_systems():
            t1 = self.HORIZONS[name]
            delta0 = self.RADII[name]
            sens = sr.interval_sensitivity(field, sr.ball_box(x0, delta0),
                                           0.0, t1)
            rng = default_rng(97)
            jacs = []
            for start in self._samples(rng, x0, delta0, 100):
                jac = sr.fd_jacobian(
                    lambda s: sr.flow_endpoint(field, s, 0.0, t1), start)
                jacs.append(jac)
                assert sens.contains(jac), f"{name}: jacobian escapes"
            center, f_mat = sr.sensitivity_endpoint(field, x0, 0.0, t1)
            _, factor = sr.optimal_metric(f_mat)
            bound = sr.lipschitz_bound(sens, factor)
            worst = max(np.linalg.norm(factor @ j, 2) for j in jacs)
            assert bound >= worst, f"{name}: {bound} < sampled {worst}"

    def test_interval_arithmetic_inclusion(self):
        rng = default_rng(5)
        size = 100_000
        alo = rng.normal(size=size)
        ahi = alo + rng.exponential(size=size)
        blo = rng.normal(size=size)
        bhi = blo + rng.exponential(size=size)
        pa = alo + (ahi - alo) * rng.random(size)
        pb = blo + (bhi - blo) * rng.random(size)

        lo, hi = interval_product(alo, ahi, blo, bhi)
        assert np.all(lo <= pa * pb) and np.all(pa * pb <= hi)
        lo, hi = interval_square(alo, ahi)
        assert np.all(lo <= pa * pa) and np.all(pa * pa <= hi)

        for _ in range(50):
            mlo = rng.normal(size=(4, 4))
            mhi = mlo + rng.exponential(size=(4, 4))
            nlo = rng.normal(size=(4, 4))
            nhi = nlo + rng.exponential(size=(4, 4))
            pm = mlo + (mhi - mlo) * rng.random((4, 4))
            pn = nlo + (nhi - nlo) * rng.random((4, 4))
            lo, hi = interval_matmul(mlo, mhi, nlo, nhi)
            prod = pm @ pn
            assert np.all(lo <= prod) and np.all(prod <= hi)


# ------------------------------------------- determinism and mu refinement

CONFIG_TEMPLATE = """
[system]
kind = "vanderpol"
dim = 2
params = [1.0]

[initial_set]
center = [2.0, 0.0]
radius = 0.05

[time_grid]
t0 = 0.0
times = [0.5, 1.0, 1.5, 2.0]

[slr]
gamma = 0.05
mu = 1.05
lipschitz = "sampled"
seed = 5
"""


class TestDeterminism:
    def test_worker_counts_give_bit_identical_files(self, tmp_path):
        from slreach.cli import main
        cfg = tmp_path / "run.toml"
        cfg.write_text(CONFIG_TEMPLATE)
        assert main(["run", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["run", str(cfg), "--out", str(tmp_path / "b"),
                     "--parallel", "4"]) == 0
        first = (tmp_path / "a" / "reachtube.json").read_bytes()
        second = (tmp_path / "b" / "reachtube.json").read_bytes()
        assert first == second

    @pytest.mark.parametrize("t_j", [0.8, 1.6])
    def test_mu_refinement_never_loosens_the_radius(self, t_j):
        field = make_vdp()
        cfg = sr.SlrConfig(gamma=GAMMA, mu=MU, mu_schedule=(1.2, 1.1, 1.05),
                           seed=2, lipschitz_mode="sampled")
        stages = sr.refine_with_mu_schedule(field, np.array([2.0, 0.0]),
                                            0.05, 0.0, t_j, cfg)
        assert len(stages) == 3
        deltas = [s.delta_guaranteed for s in stages]
        assert all(b <= a * (1.0 + 1e-12)
                   for a, b in zip(deltas, deltas[1:]))
