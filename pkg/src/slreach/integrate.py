"""Initial value problem solving, with and without flow sensitivities.

The flow map chi maps an initial state at t0 to the state at t1; the
sensitivity F(t) is its derivative with respect to the initial state and
is obtained by integrating the variational system F' = (df/dx) F jointly
with the state, starting from F(t0) = I.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import _kernels
from .errors import IntegrationError, UnsupportedFieldError
from .fields import VectorField

_METHODS = ("dormand-prince-45", "rk4-fixed")
_STEP_BUDGET = 10_000_000


@dataclass(frozen=True)
class IvpSettings:
    """Solver selection and tolerances.

    ``fixed_step`` only applies to the rk4-fixed method; ``max_step``
    bounds the adaptive step.  ``dense_output`` records every accepted
    step instead of just the endpoints.
    """

    method: str = "dormand-prince-45"
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    fixed_step: float = 1e-3
    dense_output: bool = False

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}; "
                             f"choose one of {_METHODS}")
        if not (self.rel_tol > 0 and math.isfinite(self.rel_tol)):
            raise ValueError("rel_tol must be positive and finite")
        if not (self.abs_tol > 0 and math.isfinite(self.abs_tol)):
            raise ValueError("abs_tol must be positive and finite")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if not (self.fixed_step > 0 and math.isfinite(self.fixed_step)):
            raise ValueError("fixed_step must be positive and finite")


@dataclass(frozen=True)
class SolveResult:
    times: np.ndarray       # (k,), strictly increasing, starts at t0
    states: np.ndarray      # (k, n)


@dataclass(frozen=True)
class SensitivitySolution:
    times: np.ndarray
    states: np.ndarray          # (k, n)
    sensitivities: np.ndarray   # (k, n, n), identity at t0


def _validate_span(t0, t1):
    t0, t1 = float(t0), float(t1)
    if not (math.isfinite(t0) and math.isfinite(t1)):
        raise ValueError("time span must be finite")
    if t1 < t0:
        raise ValueError(f"backward integration not supported "
                         f"(t0={t0}, t1={t1})")
    return t0, t1


def _kernel_args(field: VectorField):
    return (field.kernel_kind, field.dim, field.params, field.widths,
            field.act, 1 if field.depends_on_initial else 0)


def _run_kernel(field, aug, y0, x0, t0, t1, settings, record):
    if settings.method == "rk4-fixed":
        nsteps = max(1, int(math.ceil((t1 - t0) / settings.fixed_step)))
        return _kernels.rk4_fixed(*_kernel_args(field), aug, y0, x0,
                                  t0, t1, nsteps, record)
    return _kernels.integrate(*_kernel_args(field), aug, y0, x0, t0, t1,
                              settings.rel_tol, settings.abs_tol,
                              settings.max_step, _STEP_BUDGET, record)


def _generic_adaptive(rhs, y0, t0, t1, rtol, atol, max_step, record):
    """Dormand-Prince 5(4) over a plain Python callable (user fields)."""
    a = _kernels._DP_A
    c = _kernels._DP_C
    ecf = _kernels._DP_E
    y = y0.copy()
    t = t0
    rec = [(t0, y0.copy())] if record else []
    if t1 <= t0:
        return y, _kernels.STATUS_OK, 0, t0, rec
    k = np.empty((7, y.size))
    k[0] = rhs(t, y)
    sc = atol + rtol * np.abs(y)
    d0 = math.sqrt(float(np.mean((y / sc) ** 2)))
    d1 = math.sqrt(float(np.mean((k[0] / sc) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, t1 - t0)
    f1 = rhs(t0 + h0, y + h0 * k[0])
    d2 = math.sqrt(float(np.mean(((f1 - k[0]) / sc) ** 2))) / h0
    dm = max(d1, d2)
    h1 = max(1e-6, h0 * 1e-3) if dm <= 1e-15 else (0.01 / dm) ** 0.2
    h = min(100.0 * h0, h1, t1 - t0, max_step)
    status = _kernels.STATUS_OK
    naccept = 0
    nsteps = 0
    while t < t1:
        nsteps += 1
        if nsteps > _STEP_BUDGET:
            status = _kernels.STATUS_STEP_BUDGET
            break
        if h < 16.0 * _kernels._EPS * max(abs(t), 1.0):
            status = _kernels.STATUS_STEP_UNDERFLOW
            break
        last = False
        if t + h >= t1:
            h = t1 - t
            last = True
        for s in range(1, 7):
            ytmp = y + h * (a[s, :s] @ k[:s])
            if s == 6:
                ynew = ytmp
            k[s] = rhs(t + c[s] * h, ytmp)
        err = h * (ecf @ k)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        errn = math.sqrt(float(np.mean((err / sc) ** 2)))
        if math.isnan(errn) or math.isinf(errn):
            h *= 0.2
            continue
        if errn <= 1.0:
            t = t1 if last else t + h
            y = ynew
            k[0] = k[6]
            naccept += 1
            if record:
                rec.append((t, y.copy()))
            fac = 10.0 if errn == 0.0 else min(10.0, max(0.2, 0.9 * errn ** -0.2))
            h = min(h * fac, max_step)
        else:
            h *= max(0.2, min(0.9, 0.9 * errn ** -0.2))
    return y, status, naccept, t, rec


def _generic_rk4(rhs, y0, t0, t1, nsteps, record):
    y = y0.copy()
    rec = [(t0, y0.copy())] if record else []
    h = (t1 - t0) / nsteps
    for step in range(nsteps):
        t = t0 + step * h
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if record:
            rec.append((t0 + (step + 1) * (t1 - t0) / nsteps, y.copy()))
    return y, _kernels.STATUS_OK, nsteps, t1, rec


def _run_generic(field, aug, y0, x0, t0, t1, settings, record):
    n = field.dim
    if aug:
        def rhs(t, y):
            x = y[:n]
            out = np.empty(y.size)
            out[:n] = field.py_rhs(x, x0, t)
            j = np.asarray(field.py_jac(x, x0, t), dtype=np.float64)
            out[n:] = (j @ y[n:].reshape(n, n)).ravel()
            return out
    else:
        def rhs(t, y):
            return np.asarray(field.py_rhs(y, x0, t), dtype=np.float64)
    if settings.method == "rk4-fixed":
        nsteps = max(1, int(math.ceil((t1 - t0) / settings.fixed_step)))
        y, status, nacc, tr, rec = _generic_rk4(rhs, y0, t0, t1, nsteps,
                                                record)
    else:
        y, status, nacc, tr, rec = _generic_adaptive(
            rhs, y0, t0, t1, settings.rel_tol, settings.abs_tol,
            settings.max_step, record)
    if rec:
        rec_t = np.array([r[0] for r in rec])
        rec_y = np.stack([r[1] for r in rec])
    else:
        rec_t = np.empty(0)
        rec_y = np.empty((0, y0.size))
    return y, status, nacc, tr, rec_t, rec_y


def _raise_on_status(status, t_reached, what):
    if status == _kernels.STATUS_STEP_UNDERFLOW:
        raise IntegrationError(f"step size underflow during {what}",
                               t_reached)
    if status == _kernels.STATUS_STEP_BUDGET:
        raise IntegrationError(f"step budget exhausted during {what}",
                               t_reached)


def _dispatch(field, aug, y0, x0, t0, t1, settings, record):
    if field.supports_kernel:
        y, status, nacc, tr, rec_t, rec_y = _run_kernel(
            field, aug, y0, x0, t0, t1, settings, 1 if record else 0)
    else:
        if field.py_rhs is None:
            raise UnsupportedFieldError("field has no evaluation callable")
        if aug and field.py_jac is None:
            raise UnsupportedFieldError(
                f"sensitivity integration needs a jacobian; field "
                f"{field.kind!r} was registered without one")
        y, status, nacc, tr, rec_t, rec_y = _run_generic(
            field, aug, y0, x0, t0, t1, settings, record)
    return y, status, tr, rec_t, rec_y


def solve_flow(field: VectorField, x_init, t0: float, t1: float,
               settings: IvpSettings | None = None) -> SolveResult:
    """Integrate the state from t0 to t1.

    With ``dense_output`` the result holds every accepted step, otherwise
    just the two endpoints (one row when t1 == t0).
    """
    settings = settings or IvpSettings()
    t0, t1 = _validate_span(t0, t1)
    x_init = np.ascontiguousarray(x_init, dtype=np.float64)
    if x_init.shape != (field.dim,):
        raise ValueError(f"initial state has shape {x_init.shape}, "
                         f"field dimension is {field.dim}")
    if t1 == t0:
        return SolveResult(times=np.array([t0]),
                           states=x_init[None, :].copy())
    y, status, tr, rec_t, rec_y = _dispatch(
        field, False, x_init, x_init, t0, t1, settings,
        settings.dense_output)
    _raise_on_status(status, tr, "flow integration")
    if settings.dense_output:
        return SolveResult(times=rec_t, states=rec_y)
    return SolveResult(times=np.array([t0, t1]),
                       states=np.stack([x_init, y]))


def solve_flow_with_sensitivity(
        field: VectorField, x_init, t0: float, t1: float,
        settings: IvpSettings | None = None) -> SensitivitySolution:
    """Jointly integrate the state and its sensitivity to x_init."""
    settings = settings or IvpSettings()
    t0, t1 = _validate_span(t0, t1)
    if field.depends_on_initial:
        raise UnsupportedFieldError(
            "sensitivity propagation for fields that read the initial "
            "state would need an extra variational term and is not "
            "supported")
    x_init = np.ascontiguousarray(x_init, dtype=np.float64)
    if x_init.shape != (field.dim,):
        raise ValueError(f"initial state has shape {x_init.shape}, "
                         f"field dimension is {field.dim}")
    n = field.dim
    eye = np.eye(n).ravel()
    if t1 == t0:
        return SensitivitySolution(times=np.array([t0]),
                                   states=x_init[None, :].copy(),
                                   sensitivities=np.eye(n)[None, :, :])
    y0 = np.concatenate([x_init, eye])
    y, status, tr, rec_t, rec_y = _dispatch(
        field, True, y0, x_init, t0, t1, settings, settings.dense_output)
    _raise_on_status(status, tr, "sensitivity integration")
    if settings.dense_output:
        return SensitivitySolution(
            times=rec_t, states=rec_y[:, :n],
            sensitivities=rec_y[:, n:].reshape(-1, n, n))
    return SensitivitySolution(
        times=np.array([t0, t1]),
        states=np.stack([x_init, y[:n]]),
        sensitivities=np.stack([np.eye(n), y[n:].reshape(n, n)]))


def flow_endpoint(field, x_init, t0, t1, settings=None) -> np.ndarray:
    """State at t1 only; the cheap path used in sampling loops."""
    return solve_flow(field, x_init, t0, t1, settings).states[-1]


def sensitivity_endpoint(field, x_init, t0, t1, settings=None):
    """(state, sensitivity) at t1 only."""
    sol = solve_flow_with_sensitivity(field, x_init, t0, t1, settings)
    return sol.states[-1], sol.sensitivities[-1]
