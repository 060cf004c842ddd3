"""Python access to the fisherflow core and its report files."""

import json
from pathlib import Path

from ._core import (
    DomainSpec,
    Mesh,
    MeshError,
    NumericError,
    ValidationError,
    build_mesh,
    bump_density,
    eigenfunction_density,
    entropy,
    experiments,
    fisher,
    fisher_m,
    heat_flow,
    random_smooth_density,
)
from . import _core

__all__ = [
    "DomainSpec",
    "Mesh",
    "MeshError",
    "NumericError",
    "ValidationError",
    "build_mesh",
    "bump_density",
    "curvature",
    "default_config",
    "eigenfunction_density",
    "entropy",
    "experiments",
    "fisher",
    "fisher_m",
    "heat_flow",
    "load_report",
    "load_series",
    "random_smooth_density",
    "run_experiment",
]


def curvature(spec):
    """Boundary curvature summary {S, K, kappa_min, theta_at_min} of a domain."""
    return json.loads(_core.curvature_json(spec))


def default_config(name):
    return json.loads(_core.default_config_json(name))


def run_experiment(name, overrides=None):
    """Run one experiment; `overrides` uses the same keys as a CLI config file."""
    return json.loads(_core.run_experiment_json(name, json.dumps(overrides or {})))


def load_report(path):
    return json.loads(Path(path).read_text())


def load_series(path):
    """Read a report CSV into {series name: (t list, value list)}."""
    out = {}
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "series,t,value":
        raise ValueError(f"{path}: not a report CSV")
    for line in lines[1:]:
        name, t, v = line.rsplit(",", 2)
        ts, vs = out.setdefault(name, ([], []))
        ts.append(float(t))
        vs.append(float(v))
    return out
