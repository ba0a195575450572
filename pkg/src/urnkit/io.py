"""CSV and JSON serialization for trajectories, covariances and reports.

Floats are written with 17 significant digits so a parse of the output
reproduces the exact binary values; NaN and infinities are serialization
errors rather than silent report corruption.
"""

from __future__ import annotations

import json
import math
import os
from typing import Optional, Sequence

import numpy as np

REPORT_SCHEMA = "urnkit.report/1"
COVARIANCE_SCHEMA = "urnkit.covariance/1"


class SerializationError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        if not math.isfinite(x):
            raise SerializationError(f"non-finite value {x!r} in CSV output")
        return format(x, ".17g")
    return str(x)


def write_csv(path: str, header: Sequence[str], rows) -> None:
    """Plain CSV with a declared header; floats round-trip exactly."""
    try:
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(x) for x in row) + "\n")
    except OSError as exc:
        raise SerializationError(f"cannot write CSV {path}: {exc}") from exc


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def ensemble_to_csv(result, path: str, taus: Optional[np.ndarray] = None) -> None:
    """Replicate-major rows: replicate, grid point, one column per colour,
    optional death time."""
    R, G, d = result.states.shape
    header = ["replicate", "grid_point"] + [f"colour_{j}" for j in range(d)]
    if taus is not None:
        header.append("tau")

    def rows():
        for r in range(R):
            for g in range(G):
                row = [r, result.draw_indices[g]] + [float(x) for x in result.states[r, g]]
                if taus is not None:
                    row.append(float(taus[r, g]))
                yield row

    write_csv(path, header, rows())


def _scrub(obj, path="$"):
    """Reject NaN/inf and convert numpy scalars/arrays to JSON-native types."""
    if isinstance(obj, dict):
        return {str(k): _scrub(v, f"{path}.{k}") for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_scrub(v, f"{path}[{i}]") for i, v in enumerate(obj)]
    if isinstance(obj, np.ndarray):
        return _scrub(obj.tolist(), path)
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, complex):
        return {"re": _scrub(obj.real, path), "im": _scrub(obj.imag, path)}
    if isinstance(obj, float) and not math.isfinite(obj):
        raise SerializationError(f"non-finite value at {path}")
    return obj


def write_report(data: dict, path: str) -> None:
    """Schema-versioned JSON report; deterministic key order, no NaN."""
    payload = dict(data)
    payload.setdefault("schema", REPORT_SCHEMA)
    try:
        text = json.dumps(_scrub(payload), sort_keys=True, indent=2, allow_nan=False)
    except ValueError as exc:
        raise SerializationError(str(exc)) from exc
    try:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    except OSError as exc:
        raise SerializationError(f"cannot write report {path}: {exc}") from exc


def read_report(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _matrix_payload(M: np.ndarray) -> dict:
    M = np.asarray(M)
    return {
        "shape": list(M.shape),
        "re": np.real(M).tolist(),
        "im": np.imag(M).tolist() if np.iscomplexobj(M) else None,
    }


def _matrix_from_payload(p: dict) -> np.ndarray:
    re = np.asarray(p["re"], dtype=float)
    if p.get("im") is not None:
        return re + 1j * np.asarray(p["im"], dtype=float)
    return re


def covariance_report(lc) -> dict:
    """JSON payload for a LimitCovariance: law id, parameters, matrices
    (re/im), quadrature error estimate and truncation horizon."""
    params = {}
    for k, v in lc.params.items():
        params[k] = {"re": v.real, "im": v.imag} if isinstance(v, complex) else v
    return {
        "schema": COVARIANCE_SCHEMA,
        "law": lc.law,
        "params": params,
        "cov": _matrix_payload(lc.cov),
        "pseudo_cov": _matrix_payload(lc.pseudo_cov) if lc.pseudo_cov is not None else None,
        "quad_error": float(lc.quad_error),
        "truncation_horizon": None if lc.horizon is None else float(lc.horizon),
    }


def covariance_from_report(data: dict):
    from .limits import LimitCovariance

    params = {}
    for k, v in data["params"].items():
        params[k] = complex(v["re"], v["im"]) if isinstance(v, dict) else v
    return LimitCovariance(
        law=data["law"],
        params=params,
        cov=_matrix_from_payload(data["cov"]),
        pseudo_cov=(
            _matrix_from_payload(data["pseudo_cov"])
            if data.get("pseudo_cov") is not None
            else None
        ),
        quad_error=data.get("quad_error", 0.0),
        horizon=data.get("truncation_horizon"),
    )


def moment_report(result) -> dict:
    """Streamed-moment view of an ensemble: per grid point, the replicate
    count, mean composition and unbiased covariance."""
    R, G, d = result.states.shape
    points = []
    for g in range(G):
        x = result.states[:, g, :]
        xc = x - x.mean(axis=0)
        cov = xc.T @ xc / (R - 1) if R > 1 else np.zeros((d, d))
        points.append({
            "draw_index": int(result.draw_indices[g]),
            "mean": x.mean(axis=0).tolist(),
            "cov": cov.tolist(),
        })
    return {
        "schema": "urnkit.moments/1",
        "replicates": int(R),
        "extinct_fraction": float(np.mean(result.extinct_at >= 0)),
        "points": points,
    }


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
