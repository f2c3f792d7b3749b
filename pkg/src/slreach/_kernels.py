"""Hot numerical kernels shared by the integrator, the engine, and the oracles.

Field families are encoded as flat float64 parameter vectors plus a small
integer header so the kernels stay free of Python objects:

* ``KIND_LINEAR``:     ``params`` is the row-major system matrix ``A``.
* ``KIND_VANDERPOL``:  ``params = [mu]``, state dimension 2.
* ``KIND_NEURAL``:     ``params`` concatenates per layer the row-major weight
  matrix followed by the bias vector; ``widths`` holds the layer sizes
  including input and output; ``act`` selects tanh or sigmoid for all
  hidden layers; ``use_x0 = 1`` appends the trajectory's initial state to
  the network input.

Everything is written with explicit loops so the module works unchanged
under numba's ``njit`` (default) and as plain Python (``SLR_NUMBA=0``).
"""

import math

import numpy as np

from ._accel import jit

KIND_LINEAR = 0
KIND_VANDERPOL = 1
KIND_NEURAL = 2

ACT_TANH = 0
ACT_SIGMOID = 1

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_STEP_BUDGET = 2

_EPS = 2.220446049250313e-16

# Dormand-Prince 5(4) tableau.  The last stage row doubles as the 5th order
# solution weights (first-same-as-last pair).
_DP_C = np.array([0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0])
_DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0,
     -212.0 / 729.0, 0.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
     -5103.0 / 18656.0, 0.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
     11.0 / 84.0, 0.0],
])
# 5th order weights minus the embedded 4th order weights.
_DP_E = np.array([71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
                  -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0])


@jit
def field_eval(kind, n, params, widths, act, use_x0, x, x0, t, out, ws):
    """Evaluate f(x, x0, t) into ``out``; ``ws`` is scratch of size 2*wmax."""
    if kind == KIND_LINEAR:
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += params[i * n + j] * x[j]
            out[i] = s
    elif kind == KIND_VANDERPOL:
        mu = params[0]
        out[0] = x[1]
        out[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0]
    else:
        nl = widths.shape[0] - 1
        wmax = 0
        for i in range(widths.shape[0]):
            if widths[i] > wmax:
                wmax = widths[i]
        a = ws[:wmax]
        z = ws[wmax:2 * wmax]
        for i in range(n):
            a[i] = x[i]
        if use_x0 == 1:
            for i in range(n):
                a[n + i] = x0[i]
        off = 0
        for l in range(nl):
            cin = widths[l]
            cout = widths[l + 1]
            for i in range(cout):
                s = params[off + cin * cout + i]
                base = off + i * cin
                for j in range(cin):
                    s += params[base + j] * a[j]
                z[i] = s
            off += cin * cout + cout
            if l < nl - 1:
                if act == ACT_TANH:
                    for i in range(cout):
                        a[i] = math.tanh(z[i])
                else:
                    for i in range(cout):
                        a[i] = 1.0 / (1.0 + math.exp(-z[i]))
            else:
                for i in range(cout):
                    out[i] = z[i]


@jit
def field_jac(kind, n, params, widths, act, use_x0, x, x0, t, out):
    """Jacobian of f with respect to x (not x0) into ``out`` (n, n)."""
    if kind == KIND_LINEAR:
        for i in range(n):
            for j in range(n):
                out[i, j] = params[i * n + j]
    elif kind == KIND_VANDERPOL:
        mu = params[0]
        out[0, 0] = 0.0
        out[0, 1] = 1.0
        out[1, 0] = -2.0 * mu * x[0] * x[1] - 1.0
        out[1, 1] = mu * (1.0 - x[0] * x[0])
    else:
        nl = widths.shape[0] - 1
        wmax = 0
        for i in range(widths.shape[0]):
            if widths[i] > wmax:
                wmax = widths[i]
        zs = np.empty((nl, wmax))
        a = np.empty(wmax)
        for i in range(n):
            a[i] = x[i]
        if use_x0 == 1:
            for i in range(n):
                a[n + i] = x0[i]
        off = 0
        for l in range(nl):
            cin = widths[l]
            cout = widths[l + 1]
            for i in range(cout):
                s = params[off + cin * cout + i]
                base = off + i * cin
                for j in range(cin):
                    s += params[base + j] * a[j]
                zs[l, i] = s
            off += cin * cout + cout
            if l < nl - 1:
                if act == ACT_TANH:
                    for i in range(cout):
                        a[i] = math.tanh(zs[l, i])
                else:
                    for i in range(cout):
                        a[i] = 1.0 / (1.0 + math.exp(-zs[l, i]))
        # chain rule product, seeded with the x block of the first layer
        g = np.empty((wmax, n))
        g2 = np.empty((wmax, n))
        cin = widths[0]
        cout = widths[1]
        for i in range(cout):
            for j in range(n):
                g[i, j] = params[i * cin + j]
        off = cin * cout + cout
        for l in range(1, nl):
            cin = widths[l]
            cout = widths[l + 1]
            for i in range(cin):
                if act == ACT_TANH:
                    th = math.tanh(zs[l - 1, i])
                    d = 1.0 - th * th
                else:
                    sg = 1.0 / (1.0 + math.exp(-zs[l - 1, i]))
                    d = sg * (1.0 - sg)
                for j in range(n):
                    g[i, j] *= d
            for i in range(cout):
                base = off + i * cin
                for j in range(n):
                    s = 0.0
                    for k in range(cin):
                        s += params[base + k] * g[k, j]
                    g2[i, j] = s
            off += cin * cout + cout
            for i in range(cout):
                for j in range(n):
                    g[i, j] = g2[i, j]
        for i in range(n):
            for j in range(n):
                out[i, j] = g[i, j]


@jit
def _rhs(kind, n, params, widths, act, use_x0, aug, t, y, x0, out, ws, jbuf):
    """Plain (aug=0) or variational (aug=1) right-hand side.

    The augmented state is [x, F.ravel()] with F' = (df/dx) F.
    """
    field_eval(kind, n, params, widths, act, use_x0, y[:n], x0, t, out[:n], ws)
    if aug == 1:
        field_jac(kind, n, params, widths, act, use_x0, y[:n], x0, t, jbuf)
        for i in range(n):
            for j in range(n):
                s = 0.0
                for k in range(n):
                    s += jbuf[i, k] * y[n + k * n + j]
                out[n + i * n + j] = s


@jit
def integrate(kind, n, params, widths, act, use_x0, aug, y_init, x0,
              t0, t1, rtol, atol, max_step, step_budget, record):
    """Adaptive Dormand-Prince 5(4) from t0 to t1 (t1 >= t0).

    Returns (y_final, status, accepted_steps, t_reached, rec_t, rec_y).
    With record=1 the rec arrays hold every accepted step including the
    initial point; otherwise they are empty.
    """
    dim = y_init.shape[0]
    y = y_init.copy()
    wmax = n
    for i in range(widths.shape[0]):
        if widths[i] > wmax:
            wmax = widths[i]
    ws = np.empty(2 * wmax)
    jbuf = np.empty((n, n))
    stages = np.empty((7, dim))
    ytmp = np.empty(dim)
    ynew = np.empty(dim)

    cap = 512
    if record == 1:
        rec_t = np.empty(cap)
        rec_y = np.empty((cap, dim))
        rec_t[0] = t0
        for i in range(dim):
            rec_y[0, i] = y[i]
        nrec = 1
    else:
        rec_t = np.empty(0)
        rec_y = np.empty((0, dim))
        nrec = 0

    if t1 <= t0:
        return y, STATUS_OK, 0, t0, rec_t[:nrec], rec_y[:nrec]

    t = t0
    _rhs(kind, n, params, widths, act, use_x0, aug, t, y, x0,
         stages[0], ws, jbuf)

    # initial step heuristic (Hairer); squares are spelled as products
    # because libm pow(x, 2.0) can be an ulp off the rounded square,
    # which would let the two backends drift apart bit-wise
    d0 = 0.0
    d1 = 0.0
    for i in range(dim):
        sc = atol + rtol * abs(y[i])
        r0 = y[i] / sc
        r1 = stages[0][i] / sc
        d0 += r0 * r0
        d1 += r1 * r1
    d0 = math.sqrt(d0 / dim)
    d1 = math.sqrt(d1 / dim)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, t1 - t0)
    for i in range(dim):
        ytmp[i] = y[i] + h0 * stages[0][i]
    _rhs(kind, n, params, widths, act, use_x0, aug, t + h0, ytmp, x0,
         stages[1], ws, jbuf)
    d2 = 0.0
    for i in range(dim):
        sc = atol + rtol * abs(y[i])
        r2 = (stages[1][i] - stages[0][i]) / sc
        d2 += r2 * r2
    d2 = math.sqrt(d2 / dim) / h0
    dm = max(d1, d2)
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    h = min(100.0 * h0, h1, t1 - t0, max_step)

    status = STATUS_OK
    naccept = 0
    nsteps = 0
    while t < t1:
        nsteps += 1
        if nsteps > step_budget:
            status = STATUS_STEP_BUDGET
            break
        if h < 16.0 * _EPS * max(abs(t), 1.0):
            status = STATUS_STEP_UNDERFLOW
            break
        last = False
        if t + h >= t1:
            h = t1 - t
            last = True
        for s in range(1, 7):
            for i in range(dim):
                acc = 0.0
                for j in range(s):
                    acc += _DP_A[s, j] * stages[j][i]
                ytmp[i] = y[i] + h * acc
            if s == 6:
                for i in range(dim):
                    ynew[i] = ytmp[i]
            _rhs(kind, n, params, widths, act, use_x0, aug,
                 t + _DP_C[s] * h, ytmp, x0, stages[s], ws, jbuf)
        errn = 0.0
        for i in range(dim):
            e = 0.0
            for j in range(7):
                e += _DP_E[j] * stages[j][i]
            e *= h
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            q = e / sc
            errn += q * q
        errn = math.sqrt(errn / dim)
        if math.isnan(errn) or math.isinf(errn):
            h *= 0.2
            continue
        if errn <= 1.0:
            t = t + h if not last else t1
            for i in range(dim):
                y[i] = ynew[i]
                stages[0][i] = stages[6][i]
            naccept += 1
            if record == 1:
                if nrec == cap:
                    cap2 = cap * 2
                    nt = np.empty(cap2)
                    ny = np.empty((cap2, dim))
                    for r in range(cap):
                        nt[r] = rec_t[r]
                        for i in range(dim):
                            ny[r, i] = rec_y[r, i]
                    rec_t = nt
                    rec_y = ny
                    cap = cap2
                rec_t[nrec] = t
                for i in range(dim):
                    rec_y[nrec, i] = y[i]
                nrec += 1
            if errn == 0.0:
                fac = 10.0
            else:
                fac = min(10.0, max(0.2, 0.9 * errn ** -0.2))
            h = min(h * fac, max_step)
        else:
            h *= max(0.2, min(0.9, 0.9 * errn ** -0.2))
    return y, status, naccept, t, rec_t[:nrec], rec_y[:nrec]


@jit
def rk4_fixed(kind, n, params, widths, act, use_x0, aug, y_init, x0,
              t0, t1, nsteps, record):
    """Classic fixed-step RK4; used by the rk4-fixed method selection."""
    dim = y_init.shape[0]
    y = y_init.copy()
    wmax = n
    for i in range(widths.shape[0]):
        if widths[i] > wmax:
            wmax = widths[i]
    ws = np.empty(2 * wmax)
    jbuf = np.empty((n, n))
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    ytmp = np.empty(dim)
    if record == 1:
        rec_t = np.empty(nsteps + 1)
        rec_y = np.empty((nsteps + 1, dim))
        rec_t[0] = t0
        for i in range(dim):
            rec_y[0, i] = y[i]
    else:
        rec_t = np.empty(0)
        rec_y = np.empty((0, dim))
    if t1 <= t0:
        return y, STATUS_OK, 0, t0, rec_t[:1] if record == 1 else rec_t, \
            rec_y[:1] if record == 1 else rec_y
    h = (t1 - t0) / nsteps
    t = t0
    for step in range(nsteps):
        _rhs(kind, n, params, widths, act, use_x0, aug, t, y, x0,
             k1, ws, jbuf)
        for i in range(dim):
            ytmp[i] = y[i] + 0.5 * h * k1[i]
        _rhs(kind, n, params, widths, act, use_x0, aug, t + 0.5 * h, ytmp,
             x0, k2, ws, jbuf)
        for i in range(dim):
            ytmp[i] = y[i] + 0.5 * h * k2[i]
        _rhs(kind, n, params, widths, act, use_x0, aug, t + 0.5 * h, ytmp,
             x0, k3, ws, jbuf)
        for i in range(dim):
            ytmp[i] = y[i] + h * k3[i]
        _rhs(kind, n, params, widths, act, use_x0, aug, t + h, ytmp,
             x0, k4, ws, jbuf)
        for i in range(dim):
            y[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        t = t0 + (step + 1) * (t1 - t0) / nsteps
        if record == 1:
            rec_t[step + 1] = t
            for i in range(dim):
                rec_y[step + 1, i] = y[i]
    if record == 1:
        return y, STATUS_OK, nsteps, t1, rec_t, rec_y
    return y, STATUS_OK, nsteps, t1, rec_t, rec_y


@jit
def mc_distances(kind, n, params, widths, act, use_x0, starts, t0, t_grid,
                 centers, factors, rtol, atol, max_step, step_budget):
    """Metric distances of Monte Carlo endpoints at each grid time.

    ``starts`` is (N, n); each row integrates through the increasing
    ``t_grid`` and, at grid point j, records ||factors[j] @ (x - centers[j])||.
    Rows whose integration fails carry NaN from the failure onward and a
    nonzero status.
    """
    nsamp = starts.shape[0]
    ngrid = t_grid.shape[0]
    dists = np.full((nsamp, ngrid), np.nan)
    status = np.zeros(nsamp, dtype=np.int64)
    for i in range(nsamp):
        y = starts[i].copy()
        xinit = starts[i].copy()
        t = t0
        for j in range(ngrid):
            y, st, nacc, tr, rt, ry = integrate(
                kind, n, params, widths, act, use_x0, 0, y, xinit,
                t, t_grid[j], rtol, atol, max_step, step_budget, 0)
            if st != STATUS_OK:
                status[i] = st
                break
            t = t_grid[j]
            s = 0.0
            for a in range(n):
                acc = 0.0
                for b in range(n):
                    acc += factors[j, a, b] * (y[b] - centers[j, b])
                s += acc * acc
            dists[i, j] = math.sqrt(s)
    return dists, status
