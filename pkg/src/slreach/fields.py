"""Vector field families for the ODE x' = f(x, x(0), t, theta).

Bundled families (linear, Van der Pol, feed-forward neural) evaluate
through the compiled kernels; user-registered families supply plain
Python callables and run on the generic integrator path.  All weights
and parameters are fixed inputs; nothing here trains or fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .errors import FieldConfigError, UnsupportedFieldError
from .interval import (interval_product, interval_square,
                       point_interval_matmul, point_interval_matvec, widen)

_ACTIVATIONS = {"tanh": _kernels.ACT_TANH, "sigmoid": _kernels.ACT_SIGMOID}


@dataclass
class NeuralFieldSpec:
    """Shapes and weights of a feed-forward network field.

    ``widths`` lists layer sizes from input to output; hidden layers all
    use ``activation`` and the output layer is affine.  ``weights`` and
    ``biases`` hold one entry per layer, weights[l] of shape
    (widths[l+1], widths[l]).
    """

    widths: tuple
    activation: str
    weights: list
    biases: list

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise FieldConfigError(
                f"unsupported activation {self.activation!r}; "
                f"choose one of {sorted(_ACTIVATIONS)}")
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2:
            raise FieldConfigError("widths must list input and output sizes")
        if any(w < 1 for w in self.widths):
            raise FieldConfigError("layer widths must be positive")
        nl = len(self.widths) - 1
        if len(self.weights) != nl or len(self.biases) != nl:
            raise FieldConfigError(
                f"expected {nl} weight and bias entries, got "
                f"{len(self.weights)} and {len(self.biases)}")
        ws, bs = [], []
        for l in range(nl):
            w = np.asarray(self.weights[l], dtype=np.float64)
            b = np.asarray(self.biases[l], dtype=np.float64)
            want = (self.widths[l + 1], self.widths[l])
            if w.shape != want:
                raise FieldConfigError(
                    f"layer {l}: weight shape {w.shape} != {want}")
            if b.shape != (self.widths[l + 1],):
                raise FieldConfigError(
                    f"layer {l}: bias shape {b.shape} != "
                    f"({self.widths[l + 1]},)")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise FieldConfigError(f"layer {l}: non-finite parameters")
            ws.append(w)
            bs.append(b)
        self.weights = ws
        self.biases = bs

    def flatten(self) -> np.ndarray:
        """Row-major weight block then bias, layer by layer."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, widths, activation, flat) -> "NeuralFieldSpec":
        flat = np.asarray(flat, dtype=np.float64).ravel()
        widths = tuple(int(w) for w in widths)
        need = sum(widths[l + 1] * widths[l] + widths[l + 1]
                   for l in range(len(widths) - 1))
        if flat.size != need:
            raise FieldConfigError(
                f"flat weight vector has {flat.size} entries, widths "
                f"{widths} need {need}")
        ws, bs, off = [], [], 0
        for l in range(len(widths) - 1):
            cin, cout = widths[l], widths[l + 1]
            ws.append(flat[off:off + cin * cout].reshape(cout, cin))
            off += cin * cout
            bs.append(flat[off:off + cout])
            off += cout
        return cls(widths=widths, activation=activation, weights=ws, biases=bs)

    @classmethod
    def load(cls, path, widths, activation) -> "NeuralFieldSpec":
        """Read flat weights from a .npy or whitespace text file."""
        path = Path(path)
        if not path.exists():
            raise FieldConfigError(f"weights file not found: {path}")
        if path.suffix == ".npy":
            flat = np.load(path)
        else:
            flat = np.loadtxt(path)
        return cls.from_flat(widths, activation, flat)


@dataclass
class VectorField:
    """A concrete field instance; build through the factory functions."""

    kind: str
    dim: int
    kernel_kind: int
    params: np.ndarray
    widths: np.ndarray
    act: int = 0
    depends_on_initial: bool = False
    py_rhs: Optional[Callable] = None
    py_jac: Optional[Callable] = None
    neural: Optional[NeuralFieldSpec] = None

    @property
    def supports_kernel(self) -> bool:
        return self.kernel_kind >= 0

    def _check_x(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise FieldConfigError(
                f"state has shape {x.shape}, field dimension is {self.dim}")
        return x

    def __call__(self, x, x0=None, t=0.0):
        x = self._check_x(x)
        x0 = x if x0 is None else self._check_x(x0)
        if self.kernel_kind >= 0:
            out = np.empty(self.dim)
            wmax = max([self.dim] + list(self.widths))
            ws = np.empty(2 * wmax)
            _kernels.field_eval(self.kernel_kind, self.dim, self.params,
                                self.widths, self.act,
                                1 if self.depends_on_initial else 0,
                                x, x0, t, out, ws)
            return out
        return np.asarray(self.py_rhs(x, x0, t), dtype=np.float64)

    def jacobian(self, x, x0=None, t=0.0):
        """d f / d x at (x, x0, t)."""
        x = self._check_x(x)
        x0 = x if x0 is None else self._check_x(x0)
        if self.kernel_kind >= 0:
            out = np.empty((self.dim, self.dim))
            _kernels.field_jac(self.kernel_kind, self.dim, self.params,
                               self.widths, self.act,
                               1 if self.depends_on_initial else 0,
                               x, x0, t, out)
            return out
        if self.py_jac is None:
            raise UnsupportedFieldError(
                f"field family {self.kind!r} was registered without a "
                "jacobian")
        return np.asarray(self.py_jac(x, x0, t), dtype=np.float64)

    # Interval extensions, used by the rigorous sensitivity propagation.
    # Boxes are (lo, hi) float64 vectors with lo <= hi.

    def interval_rhs(self, lo, hi, t=0.0):
        if self.kernel_kind == _kernels.KIND_LINEAR:
            a = self.params.reshape(self.dim, self.dim)
            return point_interval_matvec(a, lo, hi)
        if self.kernel_kind == _kernels.KIND_VANDERPOL:
            return _vdp_interval_rhs(self.params[0], lo, hi)
        if self.kernel_kind == _kernels.KIND_NEURAL:
            if self.depends_on_initial:
                raise UnsupportedFieldError(
                    "interval evaluation of initial-state-dependent "
                    "networks is not supported")
            return _neural_interval_forward(self.neural, lo, hi)[0]
        raise UnsupportedFieldError(
            f"field family {self.kind!r} has no interval extension")

    def interval_jacobian(self, lo, hi, t=0.0):
        if self.kernel_kind == _kernels.KIND_LINEAR:
            a = self.params.reshape(self.dim, self.dim)
            return a.copy(), a.copy()
        if self.kernel_kind == _kernels.KIND_VANDERPOL:
            return _vdp_interval_jac(self.params[0], lo, hi)
        if self.kernel_kind == _kernels.KIND_NEURAL:
            if self.depends_on_initial:
                raise UnsupportedFieldError(
                    "interval evaluation of initial-state-dependent "
                    "networks is not supported")
            return _neural_interval_jac(self.neural, lo, hi)
        raise UnsupportedFieldError(
            f"field family {self.kind!r} has no interval extension")


def _vdp_interval_rhs(mu, lo, hi):
    x1l, x1h, x2l, x2h = lo[0], hi[0], lo[1], hi[1]
    sql, sqh = interval_square(np.array([x1l]), np.array([x1h]))
    one_m_l, one_m_h = 1.0 - sqh[0], 1.0 - sql[0]
    fl, fh = interval_product(
        np.array([mu * one_m_l if mu >= 0 else mu * one_m_h]),
        np.array([mu * one_m_h if mu >= 0 else mu * one_m_l]),
        np.array([x2l]), np.array([x2h]))
    out_lo = np.array([x2l, fl[0] - x1h])
    out_hi = np.array([x2h, fh[0] - x1l])
    return widen(out_lo, out_hi, ulps=16.0)


def _vdp_interval_jac(mu, lo, hi):
    x1l, x1h, x2l, x2h = lo[0], hi[0], lo[1], hi[1]
    pl, ph = interval_product(np.array([x1l]), np.array([x1h]),
                              np.array([x2l]), np.array([x2h]))
    j10l = -2.0 * mu * ph[0] - 1.0
    j10h = -2.0 * mu * pl[0] - 1.0
    if mu < 0:
        j10l, j10h = -2.0 * mu * pl[0] - 1.0, -2.0 * mu * ph[0] - 1.0
    sql, sqh = interval_square(np.array([x1l]), np.array([x1h]))
    d = np.array([1.0 - sqh[0], 1.0 - sql[0]])
    j11l, j11h = (mu * d[0], mu * d[1]) if mu >= 0 else (mu * d[1], mu * d[0])
    jlo = np.array([[0.0, 1.0], [j10l, j11l]])
    jhi = np.array([[0.0, 1.0], [j10h, j11h]])
    return widen(jlo, jhi, ulps=16.0)


def _act_interval(act, lo, hi):
    # tanh and sigmoid are increasing, so bounds map through directly
    if act == "tanh":
        return np.tanh(lo), np.tanh(hi)
    s = lambda z: 1.0 / (1.0 + np.exp(-z))
    return s(lo), s(hi)


def _act_deriv_interval(act, lo, hi):
    # derivative is unimodal with peak at 0
    if act == "tanh":
        dl, dh = 1.0 - np.tanh(lo) ** 2, 1.0 - np.tanh(hi) ** 2
        peak = 1.0
    else:
        sl = 1.0 / (1.0 + np.exp(-lo))
        sh = 1.0 / (1.0 + np.exp(-hi))
        dl, dh = sl * (1.0 - sl), sh * (1.0 - sh)
        peak = 0.25
    out_lo = np.minimum(dl, dh)
    out_hi = np.where((lo <= 0.0) & (hi >= 0.0), peak, np.maximum(dl, dh))
    return widen(np.maximum(out_lo, 0.0), out_hi, ulps=8.0)


def _affine_interval(w, b, lo, hi):
    zl, zh = point_interval_matvec(w, lo, hi)
    return widen(zl + b, zh + b)


def _neural_interval_forward(spec, lo, hi):
    """Interval forward pass; also returns per-layer preactivation boxes."""
    al, ah = lo, hi
    zs = []
    nl = len(spec.widths) - 1
    for l in range(nl):
        zl, zh = _affine_interval(spec.weights[l], spec.biases[l], al, ah)
        zs.append((zl, zh))
        if l < nl - 1:
            al, ah = _act_interval(spec.activation, zl, zh)
    return (zl, zh), zs


def _neural_interval_jac(spec, lo, hi):
    _, zs = _neural_interval_forward(spec, lo, hi)
    nl = len(spec.widths) - 1
    glo = spec.weights[0].copy()
    ghi = spec.weights[0].copy()
    for l in range(1, nl):
        dl, dh = _act_deriv_interval(spec.activation, zs[l - 1][0],
                                     zs[l - 1][1])
        slo, shi = interval_product(glo, ghi, dl[:, None], dh[:, None])
        glo, ghi = point_interval_matmul(spec.weights[l], slo, shi)
    return glo, ghi


def linear_field(a_matrix) -> VectorField:
    """x' = A x."""
    a = np.asarray(a_matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise FieldConfigError(f"system matrix must be square, got {a.shape}")
    if not np.isfinite(a).all():
        raise FieldConfigError("system matrix has non-finite entries")
    n = a.shape[0]
    if n < 2:
        raise FieldConfigError("state dimension must be at least 2")
    return VectorField(kind="linear", dim=n,
                       kernel_kind=_kernels.KIND_LINEAR,
                       params=a.ravel().copy(),
                       widths=np.empty(0, dtype=np.int64))


def vanderpol_field(mu: float = 1.0) -> VectorField:
    """Van der Pol oscillator with damping parameter mu."""
    mu = float(mu)
    if not np.isfinite(mu):
        raise FieldConfigError("mu must be finite")
    return VectorField(kind="vanderpol", dim=2,
                       kernel_kind=_kernels.KIND_VANDERPOL,
                       params=np.array([mu]),
                       widths=np.empty(0, dtype=np.int64))


def neural_field(spec: NeuralFieldSpec,
                 depends_on_initial: bool = False) -> VectorField:
    """Feed-forward network field; output width fixes the state dimension."""
    n = spec.widths[-1]
    din = spec.widths[0]
    expect = 2 * n if depends_on_initial else n
    if din != expect:
        raise FieldConfigError(
            f"input width {din} incompatible with state dimension {n}"
            + (" (initial-state input doubles it)" if depends_on_initial
               else ""))
    if n < 2:
        raise FieldConfigError("state dimension must be at least 2")
    return VectorField(kind="neural", dim=n,
                       kernel_kind=_kernels.KIND_NEURAL,
                       params=spec.flatten(),
                       widths=np.asarray(spec.widths, dtype=np.int64),
                       act=_ACTIVATIONS[spec.activation],
                       depends_on_initial=depends_on_initial,
                       neural=spec)


_REGISTRY: dict = {}


def register_field_family(name: str, builder: Callable) -> None:
    """Register a custom family; ``builder(dim, params)`` -> VectorField.

    Registered names become usable as the system kind in run
    configurations alongside the bundled families.
    """
    if name in ("linear", "vanderpol", "neural"):
        raise FieldConfigError(f"cannot shadow bundled family {name!r}")
    _REGISTRY[name] = builder


def registered_families() -> tuple:
    """Every usable system kind: bundled families plus registrations."""
    return tuple(sorted(("linear", "vanderpol", "neural", *_REGISTRY)))


def user_field(dim: int, rhs: Callable, jac: Optional[Callable] = None,
               name: str = "user") -> VectorField:
    """Wrap plain callables ``rhs(x, x0, t)`` and ``jac(x, x0, t)``."""
    dim = int(dim)
    if dim < 2:
        raise FieldConfigError("state dimension must be at least 2")
    return VectorField(kind=name, dim=dim, kernel_kind=-1,
                       params=np.empty(0),
                       widths=np.empty(0, dtype=np.int64),
                       py_rhs=rhs, py_jac=jac)


def build_field(kind: str, dim: int, params=None, *, widths=None,
                activation: str = "tanh", weights=None,
                depends_on_initial: bool = False) -> VectorField:
    """Construct a field from configuration-level values."""
    if kind == "linear":
        a = np.asarray(params, dtype=np.float64).reshape(dim, dim)
        return linear_field(a)
    if kind == "vanderpol":
        p = np.atleast_1d(np.asarray(params, dtype=np.float64))
        if dim != 2:
            raise FieldConfigError("vanderpol fields are two-dimensional")
        return vanderpol_field(p[0] if p.size else 1.0)
    if kind == "neural":
        spec = NeuralFieldSpec.from_flat(widths, activation, weights)
        fld = neural_field(spec, depends_on_initial=depends_on_initial)
        if fld.dim != dim:
            raise FieldConfigError(
                f"network output width {fld.dim} != declared dimension {dim}")
        return fld
    if kind in _REGISTRY:
        return _REGISTRY[kind](dim, params)
    raise FieldConfigError(
        f"unknown field kind {kind!r}; known kinds: linear, vanderpol, "
        f"neural{', ' + ', '.join(registered_families()) if _REGISTRY else ''}")
