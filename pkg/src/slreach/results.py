"""Versioned result documents and projection exports.

Result files are JSON with sorted keys, no wall-clock data, and floats
emitted through repr so that parse(emit(x)) returns exactly x and a
rerun with the same seed produces byte-identical files.  Matrices are
stored flat in row-major order next to the explicit dimension.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .engine import ReachtubeResult, TimestepResult
from .errors import DomainError
from .geometry import Ellipsoid, symmetric_sqrt

SCHEMA_VERSION = 1


def _py(value):
    """Plain Python scalars/lists for JSON, rejecting non-finite numbers."""
    if isinstance(value, (np.generic,)):
        value = value.item()
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DomainError("result documents must contain only finite "
                              "numbers")
        return value
    if isinstance(value, np.ndarray):
        return [_py(v) for v in value.ravel().tolist()]
    if isinstance(value, (list, tuple)):
        return [_py(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _py(v) for k, v in value.items()}
    return value


def timestep_document(res: TimestepResult) -> dict:
    doc = {
        "t": _py(res.t),
        "status": res.status,
        "gamma": _py(res.gamma),
        "mu": _py(res.mu),
        "metric_mode": res.metric_mode,
        "lipschitz_mode": res.lipschitz_mode,
        "lipschitz_scope": res.lipschitz_scope,
        "samples_used": int(res.samples_used),
        "gd_runs": int(res.gd_runs),
        "caps_count": int(res.caps_count),
    }
    if res.status == "failed":
        doc["error"] = res.error or "unknown failure"
        return doc
    doc.update({
        "center": _py(res.center),
        "metric": _py(res.metric),
        "factor": _py(res.factor),
        "m_bar": _py(res.m_bar),
        "delta_raw": _py(res.delta_raw),
        "delta_guaranteed": _py(res.delta_guaranteed),
        "p_bar": _py(res.p_bar),
        "lipschitz": _py(res.lipschitz),
        "first_loss": _py(res.first_loss),
    })
    return doc


def reachtube_document(result: ReachtubeResult,
                       config_echo: dict | None = None) -> dict:
    """Serializable document for a whole run (no wall-clock fields)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "reachtube",
        "seed": int(result.seed),
        "dim": int(result.x0.size),
        "t0": _py(result.t0),
        "initial_center": _py(result.x0),
        "initial_radius": _py(result.delta0),
        "times": _py(result.times),
        "timesteps": [timestep_document(r) for r in result.timesteps],
    }
    if config_echo is not None:
        doc["config"] = _py(config_echo)
    return doc


def document_timestep_result(doc: dict, entry: dict) -> TimestepResult:
    n = int(doc["dim"])
    common = dict(
        t=entry["t"], status=entry["status"], gamma=entry["gamma"],
        mu=entry["mu"], metric_mode=entry["metric_mode"],
        lipschitz_mode=entry["lipschitz_mode"],
        lipschitz_scope=entry["lipschitz_scope"],
        samples_used=entry["samples_used"], gd_runs=entry["gd_runs"],
        caps_count=entry["caps_count"])
    if entry["status"] == "failed":
        return TimestepResult(error=entry.get("error"), **common)
    return TimestepResult(
        center=np.array(entry["center"], dtype=np.float64),
        metric=np.array(entry["metric"], dtype=np.float64).reshape(n, n),
        factor=np.array(entry["factor"], dtype=np.float64).reshape(n, n),
        m_bar=entry["m_bar"], delta_raw=entry["delta_raw"],
        delta_guaranteed=entry["delta_guaranteed"], p_bar=entry["p_bar"],
        lipschitz=entry["lipschitz"], first_loss=entry["first_loss"],
        **common)


def load_reachtube(doc: dict) -> ReachtubeResult:
    """Rebuild the in-memory result from a parsed document."""
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DomainError(f"unsupported result schema "
                          f"{doc.get('schema_version')!r}; this build "
                          f"reads version {SCHEMA_VERSION}")
    if doc.get("kind") != "reachtube":
        raise DomainError(f"not a reachtube document: kind="
                          f"{doc.get('kind')!r}")
    return ReachtubeResult(
        t0=doc["t0"],
        x0=np.array(doc["initial_center"], dtype=np.float64),
        delta0=doc["initial_radius"],
        times=np.array(doc["times"], dtype=np.float64),
        timesteps=[document_timestep_result(doc, e)
                   for e in doc["timesteps"]],
        seed=doc["seed"])


def dumps_document(doc: dict) -> str:
    try:
        text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=False)
    except ValueError as err:
        raise DomainError(f"document not serializable: {err}") from err
    return text + "\n"


def save_result(path, doc: dict) -> None:
    Path(path).write_text(dumps_document(doc))


def load_result(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def ellipse_polyline(center, metric, radius: float, pair,
                     count: int = 256) -> np.ndarray:
    """Boundary of the ellipsoid's shadow on a coordinate pair.

    The shadow of {y : (y-c)^T M (y-c) <= r^2} onto coordinates (i, j)
    is the ellipse with shape matrix given by the corresponding block of
    M^{-1}.  Returns (count, 2) points tracing the boundary.
    """
    center = np.asarray(center, dtype=np.float64)
    metric = np.asarray(metric, dtype=np.float64)
    i, j = pair
    inv = np.linalg.inv(metric)
    block = inv[np.ix_([i, j], [i, j])]
    b = symmetric_sqrt(block)
    ts = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
    circle = np.stack([np.cos(ts), np.sin(ts)])
    pts = (radius * (b @ circle)).T
    return pts + center[[i, j]][None, :]


def projection_csv(res: TimestepResult, pair, count: int = 256) -> str:
    """CSV polyline of one reachset's 2d shadow."""
    if res.center is None:
        raise DomainError("cannot project a failed timestep")
    pts = ellipse_polyline(res.center, res.metric,
                           float(res.delta_guaranteed), pair, count)
    lines = ["x,y"]
    for row in pts:
        lines.append(f"{float(row[0])!r},{float(row[1])!r}")
    return "\n".join(lines) + "\n"


def reachset_of_entry(doc: dict, entry: dict) -> Ellipsoid:
    """Ellipsoid recorded in one timestep entry of a document."""
    n = int(doc["dim"])
    return Ellipsoid(
        center=np.array(entry["center"], dtype=np.float64),
        metric=np.array(entry["metric"], dtype=np.float64).reshape(n, n),
        factor=np.array(entry["factor"], dtype=np.float64).reshape(n, n),
        radius=float(entry["delta_guaranteed"]))
