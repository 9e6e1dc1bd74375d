"""Built-in coefficient families, expressed as config documents.

========================  =====================================================
name                      dynamics
========================  =====================================================
``brownian``              A = Id, psi = 1, H_hat = 0
``ou``                    A = noise Id, psi = 1, H_hat = -theta x
``constant_gaussian``     constant SPD A, psi = 1, H_hat = 0
``example512``            sqrt(1/psi) = |x|^(alpha/2) sqrt(phi) + gamma 1_{0}
``girsanov``              sqrt(1/psi) = |x|^(alpha/2), A = Id (trivial solution from 0)
``discontinuous_diag``    a_ii(x) = zeta(x_{i+1 mod d}), div A = 0
``piecewise``             sqrt(1/psi) piecewise constant across {x_0 = 0}
``quartic``               H_hat = x |x|^2, explodes in finite time
========================  =====================================================
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigError


def _num(v: float) -> str:
    return repr(float(v))


def _identity(d: int, scale: float = 1.0) -> list:
    return [[_num(scale) if i == j else "0" for j in range(d)] for i in range(d)]


def _zeros(d: int) -> list:
    return ["0"] * d


def _as_matrix(A, d: int) -> list:
    return [[a if isinstance(a, str) else _num(a) for a in row] for row in A] if A is not None else _identity(d)


def brownian(d: int = 2) -> dict:
    return {
        "name": "brownian",
        "dimension": d,
        "A": _identity(d),
        "inv_psi": "1",
        "H_hat": _zeros(d),
        "gaussian": {"B": np.zeros((d, d)).tolist(), "b": [0.0] * d, "Q": np.eye(d).tolist()},
    }


def ou(d: int = 2, theta: float = 1.0, noise: float = 2.0) -> dict:
    return {
        "name": "ou",
        "dimension": d,
        "A": _identity(d, noise),
        "inv_psi": "1",
        "H_hat": [f"-{_num(theta)}*x[{i}]" for i in range(d)],
        "gaussian": {"B": (-theta * np.eye(d)).tolist(), "b": [0.0] * d, "Q": (noise * np.eye(d)).tolist()},
    }


def constant_gaussian(A=((2.0, 1.0), (1.0, 2.0))) -> dict:
    M = np.asarray(A, dtype=float)
    d = M.shape[0]
    return {
        "name": "constant_gaussian",
        "dimension": d,
        "A": [[_num(v) for v in row] for row in M],
        "inv_psi": "1",
        "H_hat": _zeros(d),
        "gaussian": {"B": np.zeros((d, d)).tolist(), "b": [0.0] * d, "Q": M.tolist()},
    }


def example512(alpha: float = 0.5, phi: str = "1", gamma: float = 1.0, A=None, H_hat=None, d: int = 2) -> dict:
    """Power-law degeneracy at the origin, optionally lifted there by ``gamma``."""
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    if A is not None:
        d = len(A)
    root = f"norm(x)^{_num(alpha / 2)}*sqrt({phi})"
    if gamma:
        root = f"{root} + {_num(gamma)}*if(norm(x)==0, 1, 0)"
    return {
        "name": "example512",
        "dimension": d,
        "A": _as_matrix(A, d),
        "inv_psi": f"({root})^2",
        "H_hat": list(H_hat) if H_hat is not None else _zeros(d),
        "singular_points": [[0.0] * d],
        "metadata": {"alpha": alpha, "phi": phi, "gamma": gamma},
    }


def girsanov(alpha: float = 1.0, d: int = 2, H_hat=None) -> dict:
    """Multidimensional Girsanov equation dX = |X|^(alpha/2) dW + H_hat(X) dt."""
    if not 0 < alpha < 2:
        raise ConfigError("alpha must lie in (0, 2)")
    return {
        "name": "girsanov",
        "dimension": d,
        "A": _identity(d),
        "inv_psi": f"norm(x)^{_num(alpha)}",
        "H_hat": list(H_hat) if H_hat is not None else _zeros(d),
        "singular_points": [[0.0] * d],
        "eps_ladder": [0.1, 0.05, 0.01],
        "metadata": {"alpha": alpha},
    }


def discontinuous_diag(d: int = 2, zeta: str = "1 + step({})") -> dict:
    """Diagonal A with a_ii depending only on the next coordinate, so div A = 0."""
    A = [[zeta.format(f"x[{(i + 1) % d}]") if i == j else "0" for j in range(d)] for i in range(d)]
    return {
        "name": "discontinuous_diag",
        "dimension": d,
        "A": A,
        "inv_psi": "1",
        "H_hat": [f"-x[{i}]" for i in range(d)],
        "div_A": _zeros(d),
    }


def piecewise(levels=(1.0, 0.25), d: int = 2) -> dict:
    """sqrt(1/psi) equal to ``levels[0]`` on {x_0 >= 0} and ``levels[1]`` elsewhere."""
    a, b = (float(v) for v in levels)
    if a <= 0 or b <= 0:
        raise ConfigError("levels must be positive")
    return {
        "name": "piecewise",
        "dimension": d,
        "A": _identity(d),
        "inv_psi": f"if(x[0] >= 0, {_num(a * a)}, {_num(b * b)})",
        "H_hat": [f"-x[{i}]" for i in range(d)],
    }


def quartic(d: int = 2) -> dict:
    return {
        "name": "quartic",
        "dimension": d,
        "A": _identity(d),
        "inv_psi": "1",
        "H_hat": [f"x[{i}]*norm(x)^2" for i in range(d)],
    }


FAMILIES: dict[str, Callable[..., dict]] = {
    "brownian": brownian,
    "ou": ou,
    "constant_gaussian": constant_gaussian,
    "example512": example512,
    "girsanov": girsanov,
    "discontinuous_diag": discontinuous_diag,
    "piecewise": piecewise,
    "quartic": quartic,
}


def family_config(name: str, **params) -> dict:
    try:
        make = FAMILIES[name]
    except KeyError:
        raise ConfigError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}") from None
    try:
        doc = make(**params)
    except TypeError as exc:
        raise ConfigError(f"family {name}: {exc}") from exc
    doc["family_params"] = {"family": name, **params}
    return doc


def family_spec(name: str, factorization: str | None = None, **params):
    from .config import build_spec

    doc = family_config(name, **params)
    if factorization is not None:
        doc["factorization"] = factorization
    return build_spec(doc)
