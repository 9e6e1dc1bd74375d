"""Spec config documents: load YAML/JSON, validate, and build an :class:`SdeSpec`.

Schema (every expression is a string in the expression language, plain
numbers are also accepted)::

    name: ou                      # optional label
    dimension: 2                  # required, >= 1
    A: [["2", "0"], ["0", "2"]]   # required, symmetric d x d
    inv_psi: "1"                  # required, the function 1/psi, >= 0
    H_hat: ["-x[0]", "-x[1]"]     # required, drift of the simulated SDE
    sigma: [[...]]                # optional explicit factor, sigma sigma^T = A
    C: [[...]]                    # optional anti-symmetric matrix
    H: [...]                      # optional, the field H of G = (1/2psi) div(A+C) + H
    div_A: [...]                  # optional closed-form row divergence of A
    singular_points: [[0, 0]]     # optional declared singularities of psi
    factorization: cholesky       # cholesky | sqrt | explicit
    eps_ladder: [0.1, 0.05, 0.01] # decreasing occupation thresholds
    domain_radius_max: 1000.0
    gaussian:                     # optional closed-form law dX = (b + B X)dt + S dW, Q = S S^T
      B: [[-1, 0], [0, -1]]
      b: [0, 0]
      Q: [[2, 0], [0, 2]]
    metadata: {...}               # free-form, e.g. a declared VMO modulus
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import exprlang
from .coeff import CoefficientSet, Factorization, LinearGaussian, MatrixField, SdeSpec, VectorField
from .errors import ConfigError, DegsdeError

REQUIRED = ("dimension", "A", "inv_psi", "H_hat")
KNOWN = set(REQUIRED) | {
    "name", "sigma", "C", "H", "div_A", "singular_points", "factorization",
    "eps_ladder", "domain_radius_max", "gaussian", "metadata", "family", "params", "family_params",
}


def _expr(value: Any, d: int, where: str):
    src = repr(float(value)) if isinstance(value, (int, float)) and not isinstance(value, bool) else value
    if not isinstance(src, str):
        raise ConfigError(f"{where}: expected an expression string, got {value!r}")
    try:
        return exprlang.field(src, d)
    except DegsdeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _vector(values: Any, d: int, where: str) -> VectorField:
    if not isinstance(values, (list, tuple)) or len(values) != d:
        raise ConfigError(f"{where}: expected a list of {d} expressions")
    comps = [_expr(v, d, f"{where}[{i}]") for i, v in enumerate(values)]
    return VectorField.from_components(comps, label=str(list(values)))


def _matrix(values: Any, d: int, where: str, divergence=None) -> MatrixField:
    if not isinstance(values, (list, tuple)) or len(values) != d or any(
        not isinstance(r, (list, tuple)) or len(r) != d for r in values
    ):
        raise ConfigError(f"{where}: expected a {d}x{d} list of expressions")
    comps = [[_expr(v, d, f"{where}[{i}][{j}]") for j, v in enumerate(row)] for i, row in enumerate(values)]
    return MatrixField.from_components(comps, label=str(values), divergence=divergence)


def build_spec(doc: dict) -> SdeSpec:
    """Validate a config document and build the SdeSpec it describes."""
    if "family" in doc:
        from .families import family_config

        doc = family_config(doc["family"], **doc.get("params", {}))
    unknown = set(doc) - KNOWN
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = [k for k in REQUIRED if k not in doc]
    if missing:
        raise ConfigError(f"missing required config keys: {missing}")
    d = doc["dimension"]
    if not isinstance(d, int) or d < 1:
        raise ConfigError(f"dimension must be a positive integer, got {d!r}")

    div = None
    if "div_A" in doc:
        div_field = _vector(doc["div_A"], d, "div_A")
        div = div_field.__call__
    A = _matrix(doc["A"], d, "A", divergence=div)
    coeffs = CoefficientSet(
        d=d,
        A=A,
        inv_psi=_expr(doc["inv_psi"], d, "inv_psi"),
        H_hat=_vector(doc["H_hat"], d, "H_hat"),
        C=_matrix(doc["C"], d, "C") if "C" in doc else None,
        sigma=_matrix(doc["sigma"], d, "sigma") if "sigma" in doc else None,
        H=_vector(doc["H"], d, "H") if "H" in doc else None,
        singular_points=tuple(tuple(float(c) for c in p) for p in doc.get("singular_points", [])),
        metadata=dict(doc.get("metadata", {})),
    )
    for p in coeffs.singular_points:
        if len(p) != d:
            raise ConfigError(f"singular point {p} does not have dimension {d}")

    gaussian = None
    if "gaussian" in doc:
        g = doc["gaussian"]
        try:
            gaussian = LinearGaussian(
                B=np.array(g.get("B", np.zeros((d, d))), dtype=float).reshape(d, d),
                b=np.array(g.get("b", np.zeros(d)), dtype=float).reshape(d),
                Q=np.array(g["Q"], dtype=float).reshape(d, d),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"gaussian: {exc}") from exc
    try:
        return SdeSpec(
            coeffs=coeffs,
            factorization=Factorization(doc.get("factorization", "cholesky")),
            degeneracy_eps_ladder=tuple(doc.get("eps_ladder", (0.1, 0.05, 0.01))),
            domain_radius_max=float(doc.get("domain_radius_max", 1e3)),
            gaussian=gaussian,
            name=str(doc.get("name", "custom")),
            source=_canonical(doc),
        )
    except (ValueError, DegsdeError) as exc:
        raise ConfigError(str(exc)) from exc


def _canonical(doc: dict) -> dict:
    return json.loads(json.dumps(doc, sort_keys=True, default=str))


def load_document(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}{line}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def load_spec(ref: str, **overrides) -> SdeSpec:
    """Build a spec from a file path or from ``family:<name>`` with keyword parameters."""
    if ref.startswith("family:"):
        from .families import family_config

        return build_spec(family_config(ref.split(":", 1)[1], **overrides))
    doc = load_document(ref)
    if overrides and "family" in doc:
        doc = dict(doc)
        doc["params"] = {**doc.get("params", {}), **overrides}
    try:
        return build_spec(doc)
    except ConfigError as exc:
        raise ConfigError(f"{ref}: {exc}") from exc
