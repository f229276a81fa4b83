"""CSV/JSON ingestion and serialization for datasets, configs, and results.

Matrices travel as headerless CSV with 17-significant-digit floats, which
round-trips IEEE doubles exactly; configs and result records travel as
JSON.  Penalty descriptors are small dicts ({"kind": "derivative",
"order": 2, "shift": 0.1} and friends) validated strictly: unknown kinds
or keys are errors, not warnings.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, ShapeMismatch
from .gsvd import DesignMatrix, PenaltyOperator
from .penalties import (
    derivative_penalty,
    goutis_penalty,
    identity_penalty,
    multispace_penalty,
    orthonormal_projector,
    projection_penalty,
    stein_penalty,
)
from .simulate import SimulationSpec

_FMT = "%.17g"

_SCENARIO_DEFAULTS = {
    "bumps": {"n": 50, "p": 250, "snr_target": 10.0},
    "cosine": {"n": 200, "p": 100, "snr_target": 10.0},
    "mixtures": {"n": 50, "p": 600, "snr_target": 10.0},
}


def save_matrix(path, A):
    """Write a 2-d array as headerless CSV, one row per line."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    with open(path, "w") as fh:
        for row in A:
            fh.write(",".join(_FMT % v for v in row))
            fh.write("\n")


def load_matrix(path):
    """Read a numeric CSV into a 2-d array.

    A single non-numeric first line is treated as a header and skipped;
    any other non-numeric cell raises ParseError with its 1-based line and
    column.  Ragged rows raise ParseError at the offending line.
    """
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            parsed = []
            for col, cell in enumerate(cells, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    if lineno == 1:
                        parsed = None
                        break
                    raise ParseError(str(path), lineno, col, f"not a number: {cell!r}")
            if parsed is None:  # header line
                continue
            if width is None:
                width = len(parsed)
            elif len(parsed) != width:
                raise ParseError(
                    str(path), lineno, 1,
                    f"row has {len(parsed)} cells, expected {width}",
                )
            rows.append(parsed)
    if not rows:
        raise ParseError(str(path), 1, 1, "no numeric rows")
    return np.asarray(rows)


def save_vector(path, v):
    save_matrix(path, np.asarray(v, dtype=float).reshape(-1, 1))


def load_vector(path):
    A = load_matrix(path)
    if 1 not in A.shape:
        raise ShapeMismatch(f"{path} holds a {A.shape} matrix, expected a vector")
    return A.ravel()


def load_dataset(x_path, y_path, center=False):
    """Load a design/response pair, optionally centering both.

    Centering removes column means from X and the mean from y, which is
    what makes an intercept-free linear model appropriate; the centered
    flag travels with the design so downstream code knows.
    """
    X = load_matrix(x_path)
    y = load_vector(y_path)
    if y.size != X.shape[0]:
        raise ShapeMismatch(
            f"{x_path} has {X.shape[0]} rows but {y_path} has {y.size} values"
        )
    if center:
        X = X - X.mean(axis=0)
        y = y - y.mean()
    return DesignMatrix(values=X, centered=bool(center)), y


def _as_matrix(value, what):
    """Resolve an inline 2-d list or a CSV path reference to an array."""
    if isinstance(value, str):
        return load_matrix(value)
    try:
        A = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a CSV path or a 2-d numeric list")
    if A.ndim != 2:
        raise ConfigError(f"{what} must be 2-d, got shape {A.shape}")
    return A


def _check_keys(cfg, allowed, kind):
    extra = set(cfg) - set(allowed) - {"kind"}
    if extra:
        raise ConfigError(f"penalty kind {kind!r} does not accept keys {sorted(extra)}")


def penalty_from_config(cfg, p, X=None):
    """Build a PenaltyOperator from a descriptor dict.

    Kinds: identity; derivative (order 0|1|2, shift >= 0); projection
    (basis + weights a, b); multispace (projectors + weights); goutis;
    stein (needs the design); custom (explicit values).  Anything not in
    the schema is rejected.
    """
    if not isinstance(cfg, dict):
        raise ConfigError(f"penalty config must be a dict, got {type(cfg)}")
    kind = cfg.get("kind")
    if kind == "identity":
        _check_keys(cfg, (), kind)
        return identity_penalty(p)
    if kind == "derivative":
        _check_keys(cfg, ("order", "shift"), kind)
        return derivative_penalty(
            p, order=int(cfg.get("order", 2)), shift_a=float(cfg.get("shift", 0.0))
        )
    if kind == "projection":
        _check_keys(cfg, ("basis", "a", "b"), kind)
        if "basis" not in cfg:
            raise ConfigError("projection penalty needs a basis")
        basis = _as_matrix(cfg["basis"], "basis")
        if basis.shape[0] != p:
            raise ConfigError(f"basis has {basis.shape[0]} rows, expected {p}")
        prior = orthonormal_projector(basis)
        return projection_penalty(
            prior, a=float(cfg.get("a", 1.0)), b=float(cfg.get("b", 0.0))
        )
    if kind == "multispace":
        _check_keys(cfg, ("projectors", "weights"), kind)
        if "projectors" not in cfg or "weights" not in cfg:
            raise ConfigError("multispace penalty needs projectors and weights")
        Ps = [_as_matrix(v, "projector") for v in cfg["projectors"]]
        return multispace_penalty(Ps, [float(w) for w in cfg["weights"]])
    if kind == "goutis":
        _check_keys(cfg, (), kind)
        return goutis_penalty(p)
    if kind == "stein":
        _check_keys(cfg, (), kind)
        if X is None:
            raise ConfigError("stein penalty needs the design matrix")
        return stein_penalty(X)
    if kind == "custom":
        _check_keys(cfg, ("values",), kind)
        if "values" not in cfg:
            raise ConfigError("custom penalty needs values")
        A = _as_matrix(cfg["values"], "values")
        if A.shape[1] != p:
            raise ConfigError(f"penalty has {A.shape[1]} columns, expected {p}")
        if A.shape[0] > p:
            # tall operators carry no extra information beyond their Gram
            # matrix; reduce so the operator type's row bound holds
            from .gsvd import reduce_penalty_rows

            A = reduce_penalty_rows(A)[0]
        return PenaltyOperator(values=A, kind="custom")
    raise ConfigError(f"unknown penalty kind {kind!r}")


def spec_from_config(cfg):
    """Build a SimulationSpec from a config dict with per-scenario defaults."""
    if not isinstance(cfg, dict):
        raise ConfigError(f"spec config must be a dict, got {type(cfg)}")
    allowed = {
        "scenario", "n", "p", "r2_target", "snr_target",
        "replicates", "master_seed", "methods", "test_size",
    }
    extra = set(cfg) - allowed
    if extra:
        raise ConfigError(f"spec does not accept keys {sorted(extra)}")
    scenario = cfg.get("scenario")
    if scenario not in _SCENARIO_DEFAULTS:
        raise ConfigError(f"unknown scenario {scenario!r}")
    defaults = _SCENARIO_DEFAULTS[scenario]
    return SimulationSpec(
        scenario=scenario,
        n=int(cfg.get("n", defaults["n"])),
        p=int(cfg.get("p", defaults["p"])),
        r2_target=float(cfg.get("r2_target", 0.8)),
        snr_target=(
            None if cfg.get("snr_target", defaults["snr_target"]) is None
            else float(cfg.get("snr_target", defaults["snr_target"]))
        ),
        replicates=int(cfg.get("replicates", 100)),
        master_seed=int(cfg.get("master_seed", 0)),
        methods=tuple(cfg["methods"]) if "methods" in cfg else None,
        test_size=int(cfg["test_size"]) if "test_size" in cfg else None,
    )


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def parse_penalty_arg(arg):
    """Accept a penalty descriptor as inline JSON or as a path to a JSON file."""
    text = arg.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad inline penalty JSON: {exc}")
    return read_json(arg)


def fit_to_dict(fit):
    return {
        "beta": fit.beta,
        "alpha": fit.alpha,
        "method": fit.method,
        "filters": fit.filters,
        "fitted": fit.fitted,
        "jitter": fit.jitter,
    }


def tuning_to_dict(res):
    return {
        "alpha_hat": res.alpha_hat,
        "sigma_eps_hat": res.sigma_eps_hat,
        "sigma_b_hat": res.sigma_b_hat,
        "a_hat": res.a_hat,
        "b_hat": res.b_hat,
        "method": res.method,
        "criterion_trace": [list(pair) for pair in res.criterion_trace],
    }
