"""Run configuration: TOML parsing with exhaustive validation.

A run file describes the system, the initial ball, the time grid, the
optimization knobs, and the output layout.  Parsing collects every
problem it can find and reports them together instead of failing on the
first one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .engine import SlrConfig
from .errors import ConfigError, FieldConfigError
from .fields import (NeuralFieldSpec, VectorField, build_field,
                     neural_field, registered_families)
from .integrate import IvpSettings

_SECTIONS = ("system", "initial_set", "time_grid", "slr", "ivp", "output")

_SYSTEM_KEYS = {"kind", "dim", "params", "weights_file", "weights",
                "widths", "activation", "depends_on_initial"}
_INITIAL_KEYS = {"center", "radius"}
_GRID_KEYS = {"t0", "times", "horizon", "steps"}
_SLR_KEYS = {"gamma", "mu", "mu_schedule", "seed", "alpha", "eps_gd",
             "eps_fix", "max_gd_iters", "max_samples", "metric",
             "lipschitz", "lipschitz_scope", "lipschitz_inflation",
             "lipschitz_samples", "backtracking"}
_IVP_KEYS = {"method", "rel_tol", "abs_tol", "max_step", "fixed_step"}
_OUTPUT_KEYS = {"dir", "result", "log", "projection", "write_projections"}


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "slr-out"
    result_name: str = "reachtube.json"
    log_name: str = "run.log"
    projection: Optional[tuple] = (0, 1)
    write_projections: bool = True


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run description."""

    field: VectorField
    x0: np.ndarray
    delta0: float
    t0: float
    times: np.ndarray
    slr: SlrConfig
    output: OutputConfig
    raw: dict = dc_field(default_factory=dict, repr=False)


def _unknown_keys(section: str, table: dict, allowed: set, errs: list):
    for key in table:
        if key not in allowed:
            errs.append(f"[{section}] unknown key {key!r}; allowed: "
                        f"{', '.join(sorted(allowed))}")


def _want(table, key, types, section, errs, default=None, required=False):
    if key not in table:
        if required:
            errs.append(f"[{section}] missing required key {key!r}")
        return default
    val = table[key]
    if isinstance(val, bool) and bool not in (types if isinstance(
            types, tuple) else (types,)):
        errs.append(f"[{section}] {key} must not be a boolean")
        return default
    if not isinstance(val, types):
        tname = " or ".join(t.__name__ for t in (
            types if isinstance(types, tuple) else (types,)))
        errs.append(f"[{section}] {key} must be {tname}, got "
                    f"{type(val).__name__}")
        return default
    return val


def _float_list(table, key, section, errs, required=False):
    val = table.get(key)
    if val is None:
        if required:
            errs.append(f"[{section}] missing required key {key!r}")
        return None
    if not isinstance(val, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool)
            for v in val):
        errs.append(f"[{section}] {key} must be a list of numbers")
        return None
    return [float(v) for v in val]


def parse_config(path) -> RunConfig:
    """Parse and validate a run file; raises ConfigError listing every
    problem found."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError([f"cannot read config file {path}: {err}"])
    return parse_config_text(text, base_dir=path.parent)


def parse_config_text(text: str, base_dir=".") -> RunConfig:
    base_dir = Path(base_dir)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError([f"config is not valid TOML: {err}"])
    errs: list = []
    for section in doc:
        if section not in _SECTIONS:
            errs.append(f"unknown section [{section}]; expected one of "
                        f"{', '.join(_SECTIONS)}")

    system = doc.get("system", {})
    initial = doc.get("initial_set", {})
    grid = doc.get("time_grid", {})
    slr_tbl = doc.get("slr", {})
    ivp_tbl = doc.get("ivp", {})
    out_tbl = doc.get("output", {})
    for name, tbl, allowed in (
            ("system", system, _SYSTEM_KEYS),
            ("initial_set", initial, _INITIAL_KEYS),
            ("time_grid", grid, _GRID_KEYS),
            ("slr", slr_tbl, _SLR_KEYS),
            ("ivp", ivp_tbl, _IVP_KEYS),
            ("output", out_tbl, _OUTPUT_KEYS)):
        if not isinstance(tbl, dict):
            errs.append(f"[{name}] must be a table")
            return _fail(errs)
        _unknown_keys(name, tbl, allowed, errs)
    if "system" not in doc:
        errs.append("missing required section [system]")
    if "initial_set" not in doc:
        errs.append("missing required section [initial_set]")
    if "time_grid" not in doc:
        errs.append("missing required section [time_grid]")

    field = _parse_system(system, base_dir, errs)
    x0, delta0 = _parse_initial(initial, field, errs)
    t0, times = _parse_grid(grid, errs)
    ivp = _parse_ivp(ivp_tbl, errs)
    slr_cfg = _parse_slr(slr_tbl, ivp, errs)
    output = _parse_output(out_tbl, field, errs)

    if errs:
        raise ConfigError(errs)
    return RunConfig(field=field, x0=x0, delta0=delta0, t0=t0, times=times,
                     slr=slr_cfg, output=output, raw=doc)


def _fail(errs):
    raise ConfigError(errs)


def _parse_system(tbl, base_dir, errs) -> Optional[VectorField]:
    kind = _want(tbl, "kind", str, "system", errs, required=True)
    dim = _want(tbl, "dim", int, "system", errs, required=True)
    if kind is None or dim is None:
        return None
    if dim < 2:
        errs.append(f"[system] dim must be at least 2, got {dim}")
        return None
    try:
        if kind == "neural":
            widths = tbl.get("widths")
            if not isinstance(widths, list) or not all(
                    isinstance(w, int) and not isinstance(w, bool)
                    for w in widths):
                errs.append("[system] widths must be a list of integers")
                return None
            activation = _want(tbl, "activation", str, "system", errs,
                               default="tanh")
            depends = _want(tbl, "depends_on_initial", bool, "system",
                            errs, default=False)
            if "weights_file" in tbl:
                wf = _want(tbl, "weights_file", str, "system", errs)
                if wf is None:
                    return None
                spec = NeuralFieldSpec.load(base_dir / wf, widths,
                                            activation)
            elif "weights" in tbl:
                flat = _float_list(tbl, "weights", "system", errs)
                if flat is None:
                    return None
                spec = NeuralFieldSpec.from_flat(widths, activation, flat)
            else:
                errs.append("[system] neural fields need weights_file "
                            "or weights")
                return None
            fld = neural_field(spec, depends_on_initial=bool(depends))
            if fld.dim != dim:
                errs.append(f"[system] network output width {fld.dim} "
                            f"does not match dim {dim}")
                return None
            return fld
        params = _float_list(tbl, "params", "system", errs)
        if kind == "linear":
            if params is None:
                errs.append("[system] linear fields need params (the "
                            "row-major system matrix)")
                return None
            if len(params) != dim * dim:
                errs.append(f"[system] linear params must have dim*dim = "
                            f"{dim * dim} entries, got {len(params)}")
                return None
        return build_field(kind, dim, params)
    except FieldConfigError as err:
        errs.append(f"[system] {err}")
        return None


def _parse_initial(tbl, field, errs):
    center = _float_list(tbl, "center", "initial_set", errs, required=True)
    radius = _want(tbl, "radius", (int, float), "initial_set", errs,
                   required=True)
    x0 = None
    if center is not None:
        x0 = np.asarray(center, dtype=np.float64)
        if field is not None and x0.size != field.dim:
            errs.append(f"[initial_set] center has {x0.size} entries, "
                        f"system dimension is {field.dim}")
            x0 = None
    delta0 = None
    if radius is not None:
        delta0 = float(radius)
        if not (delta0 > 0 and math.isfinite(delta0)):
            errs.append(f"[initial_set] radius must be positive and "
                        f"finite, got {radius}")
    return x0, delta0


def _parse_grid(tbl, errs):
    t0 = _want(tbl, "t0", (int, float), "time_grid", errs, default=0.0)
    t0 = float(t0) if t0 is not None else 0.0
    times = _float_list(tbl, "times", "time_grid", errs)
    horizon = _want(tbl, "horizon", (int, float), "time_grid", errs)
    steps = _want(tbl, "steps", int, "time_grid", errs)
    if times is not None and (horizon is not None or steps is not None):
        errs.append("[time_grid] give either times or horizon+steps, "
                    "not both")
        return t0, None
    if times is not None:
        arr = np.asarray(times, dtype=np.float64)
    elif horizon is not None and steps is not None:
        if steps < 1:
            errs.append(f"[time_grid] steps must be positive, got {steps}")
            return t0, None
        if not horizon > 0:
            errs.append(f"[time_grid] horizon must be positive, "
                        f"got {horizon}")
            return t0, None
        arr = t0 + float(horizon) * np.arange(1, steps + 1) / steps
    else:
        errs.append("[time_grid] needs times or horizon+steps")
        return t0, None
    if arr.size == 0:
        errs.append("[time_grid] times must not be empty")
        return t0, None
    if (arr < t0).any():
        errs.append("[time_grid] times must not precede t0")
    if (np.diff(arr) <= 0).any():
        errs.append("[time_grid] times must be strictly increasing")
    return t0, arr


def _parse_ivp(tbl, errs) -> Optional[IvpSettings]:
    kwargs = {}
    method = _want(tbl, "method", str, "ivp", errs)
    if method is not None:
        kwargs["method"] = method
    for key, dest in (("rel_tol", "rel_tol"), ("abs_tol", "abs_tol"),
                      ("fixed_step", "fixed_step")):
        val = _want(tbl, key, (int, float), "ivp", errs)
        if val is not None:
            kwargs[dest] = float(val)
    max_step = _want(tbl, "max_step", (int, float), "ivp", errs)
    if max_step is not None:
        # zero means unlimited, the TOML-friendly stand-in for infinity
        kwargs["max_step"] = math.inf if max_step == 0 else float(max_step)
    try:
        return IvpSettings(**kwargs)
    except ValueError as err:
        errs.append(f"[ivp] {err}")
        return None


def _parse_slr(tbl, ivp, errs) -> Optional[SlrConfig]:
    kwargs = {}
    if ivp is not None:
        kwargs["ivp"] = ivp
    for key, dest, types in (
            ("gamma", "gamma", (int, float)),
            ("mu", "mu", (int, float)),
            ("alpha", "alpha", (int, float)),
            ("eps_gd", "eps_gd", (int, float)),
            ("eps_fix", "eps_fix", (int, float)),
            ("lipschitz_inflation", "lipschitz_inflation", (int, float)),
            ("seed", "seed", int),
            ("max_gd_iters", "max_gd_iters", int),
            ("max_samples", "max_samples", int),
            ("lipschitz_samples", "lipschitz_samples", int),
            ("metric", "metric_mode", str),
            ("lipschitz", "lipschitz_mode", str),
            ("lipschitz_scope", "lipschitz_scope", str),
            ("backtracking", "backtracking", bool)):
        val = _want(tbl, key, types, "slr", errs)
        if val is not None:
            if types == (int, float):
                val = float(val)
            kwargs[dest] = val
    sched = _float_list(tbl, "mu_schedule", "slr", errs)
    if sched is not None:
        kwargs["mu_schedule"] = tuple(sched)
        kwargs.setdefault("mu", sched[-1] if sched else 1.0)
    cfg = SlrConfig(**kwargs)
    for problem in cfg.validate():
        errs.append(f"[slr] {problem}")
    return cfg


def _parse_output(tbl, field, errs) -> OutputConfig:
    directory = _want(tbl, "dir", str, "output", errs, default="slr-out")
    result = _want(tbl, "result", str, "output", errs,
                   default="reachtube.json")
    log = _want(tbl, "log", str, "output", errs, default="run.log")
    write_proj = _want(tbl, "write_projections", bool, "output", errs,
                       default=True)
    projection = (0, 1)
    if "projection" in tbl:
        pj = tbl["projection"]
        if (not isinstance(pj, list) or len(pj) != 2 or not all(
                isinstance(v, int) and not isinstance(v, bool)
                for v in pj)):
            errs.append("[output] projection must be a pair of "
                        "coordinate indices")
            projection = None
        else:
            projection = (pj[0], pj[1])
            if field is not None and not all(
                    0 <= v < field.dim for v in projection):
                errs.append(f"[output] projection indices {projection} "
                            f"out of range for dimension {field.dim}")
                projection = None
            elif projection[0] == projection[1]:
                errs.append("[output] projection indices must differ")
                projection = None
    return OutputConfig(directory=directory or "slr-out",
                        result_name=result or "reachtube.json",
                        log_name=log or "run.log",
                        projection=projection,
                        write_projections=bool(write_proj))
