"""Session setup: compile the accelerated kernels before any test runs.

The first call into each jitted kernel pays a compile (cached on disk
afterwards); doing it here keeps that cost out of timed test bodies.
"""

import numpy as np
import pytest

import slreach as sr


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    field = sr.vanderpol_field(1.0)
    x0 = np.array([2.0, 0.0])
    cfg = sr.SlrConfig(gamma=0.5, mu=1.2, lipschitz_mode="sampled",
                       max_samples=16, seed=0)
    sr.run_timestep(field, x0, 0.05, 0.0, 0.05, cfg)
    ell = sr.Ellipsoid.ball(x0, 1.0)
    sr.mc_reachtube(field, x0, 0.05, 0.0, np.array([0.05]), [ell],
                    n_mc=8, seed=1)
    fixed = sr.IvpSettings(method="rk4-fixed", fixed_step=0.01)
    sr.solve_flow(field, x0, 0.0, 0.05, fixed)
    sr.solve_flow(field, x0, 0.0, 0.05, sr.IvpSettings(dense_output=True))
