"""Parameters, constitutive laws and algebraic helpers of the tumor model.

The reaction term governing the extracellular-matrix density ``E`` is

    Q(sigma, m, E) = -gamma * m * E + phi(E) - E * mu(E) * (sigma - sigma_bar)

with ``phi`` the matrix production rate and ``mu`` the proliferation rate.
Every function here accepts scalars or numpy arrays.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import InvalidParams, NoSignChange

ArrayLike = Any

# JSON key <-> dataclass attribute (``lambda`` is a Python keyword).
_JSON_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_JSON = {v: k for k, v in _JSON_TO_ATTR.items()}

# Reference ranges for the physical parameters. Values outside only warn.
TABLE_RANGES: dict[str, tuple[float, float]] = {
    "c": (1e-5, 1e-3),
    "lambda": (0.05, 2.0),
    "D_m": (1e-3, 10.0),
    "mu": (0.9, 1.45),
    "mu1": (0.15, 2.5),
    "gamma": (1.0, 20.0),
    "alpha": (0.01, 5.0),
    "beta": (0.1, 10.0),
}


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the model.

    All values must be strictly positive and ``0 < sigma_bar < 1``.  The JSON
    form is a flat object whose keys are the attribute names, except that
    ``lam`` is spelled ``lambda``.
    """

    c: float = 1e-3
    lam: float = 2.0
    D_m: float = 1.0
    alpha: float = 0.5
    beta: float = 1.0
    gamma: float = 10.0
    sigma_bar: float = 0.7
    mu: float = 0.5
    mu1: float = 0.8
    E_cap: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidParams(f"{_ATTR_TO_JSON.get(f.name, f.name)} must be a number")
            if not math.isfinite(value) or value <= 0.0:
                raise InvalidParams(f"{_ATTR_TO_JSON.get(f.name, f.name)} must be positive, got {value}")
        if not self.sigma_bar < 1.0:
            raise InvalidParams(f"sigma_bar must lie in (0, 1), got {self.sigma_bar}")

    @property
    def m_eq(self) -> float:
        """Equilibrium MDE density ``alpha / beta``."""
        return self.alpha / self.beta

    def to_dict(self) -> dict[str, float]:
        return {_ATTR_TO_JSON.get(k, k): float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelParams":
        known = {_ATTR_TO_JSON.get(f.name, f.name) for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidParams(f"unknown parameter keys: {', '.join(unknown)}")
        kwargs = {_JSON_TO_ATTR.get(k, k): v for k, v in data.items()}
        return cls(**kwargs)

    def replace(self, **changes: float) -> "ModelParams":
        merged = self.to_dict()
        for key, value in changes.items():
            merged[_ATTR_TO_JSON.get(key, key)] = value
        return ModelParams.from_dict(merged)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise InvalidParams("parameter JSON must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        return cls.from_json(Path(path).read_text())


def table_warnings(params: ModelParams) -> list[str]:
    """Return one message for each parameter outside its reference range."""
    out = []
    values = params.to_dict()
    for key, (lo, hi) in TABLE_RANGES.items():
        v = values[key]
        if not lo <= v <= hi:
            out.append(f"{key}={v:g} outside reference range [{lo:g}, {hi:g}]")
    return out


# ---------------------------------------------------------------------------
# Constitutive laws
# ---------------------------------------------------------------------------


def _mu_rational(E, mu):
    return mu / (1.0 + E)


def _mu_rational_prime(E, mu):
    return -mu / (1.0 + E) ** 2


def _phi_linear(E, mu1):
    return mu1 * (1.0 - E)


def _phi_linear_prime(E, mu1):
    return -mu1 if np.isscalar(E) else np.full(np.shape(E), -mu1)


@dataclass(frozen=True)
class ConstitutiveSet:
    """Proliferation rate ``mu(E)`` and matrix production ``phi(E)`` with derivatives.

    The callables must be vectorised over numpy arrays.  Module-level functions
    wrapped in :func:`functools.partial` keep the set picklable, which the
    parallel sweep relies on.
    """

    mu_of_E: Callable[[ArrayLike], ArrayLike]
    mu_prime: Callable[[ArrayLike], ArrayLike]
    phi_of_E: Callable[[ArrayLike], ArrayLike]
    phi_prime: Callable[[ArrayLike], ArrayLike]
    name: str = field(default="custom")


def default_laws(params: ModelParams) -> ConstitutiveSet:
    """``mu(E) = mu / (1 + E)`` and ``phi(E) = mu1 (1 - E)``."""
    return ConstitutiveSet(
        mu_of_E=functools.partial(_mu_rational, mu=params.mu),
        mu_prime=functools.partial(_mu_rational_prime, mu=params.mu),
        phi_of_E=functools.partial(_phi_linear, mu1=params.mu1),
        phi_prime=functools.partial(_phi_linear_prime, mu1=params.mu1),
        name="default",
    )


def _const(E, value):
    return value if np.isscalar(E) else np.full(np.shape(E), value)


def constant_mu_laws(params: ModelParams) -> ConstitutiveSet:
    """Laws with ``mu(E) = mu`` constant, used by closed-form checks."""
    return ConstitutiveSet(
        mu_of_E=functools.partial(_const, value=params.mu),
        mu_prime=functools.partial(_const, value=0.0),
        phi_of_E=functools.partial(_phi_linear, mu1=params.mu1),
        phi_prime=functools.partial(_phi_linear_prime, mu1=params.mu1),
        name="constant-mu",
    )


# ---------------------------------------------------------------------------
# Reaction term
# ---------------------------------------------------------------------------


def eval_Q(sigma, m, E, params: ModelParams, laws: ConstitutiveSet):
    """Reaction term of the matrix equation."""
    return (
        -params.gamma * m * E
        + laws.phi_of_E(E)
        - E * laws.mu_of_E(E) * (sigma - params.sigma_bar)
    )


def dQ_dsigma(sigma, m, E, params: ModelParams, laws: ConstitutiveSet):
    return -E * laws.mu_of_E(E) + 0.0 * sigma


def dQ_dE(sigma, m, E, params: ModelParams, laws: ConstitutiveSet):
    d_Emu = laws.mu_of_E(E) + E * laws.mu_prime(E)
    return -params.gamma * m + laws.phi_prime(E) - d_Emu * (sigma - params.sigma_bar)


def dQ_dm(sigma, m, E, params: ModelParams, laws: ConstitutiveSet):
    return -params.gamma * E + 0.0 * sigma


def h_root(sigma, m, params: ModelParams, laws: ConstitutiveSet, tol: float = 1e-12):
    """Root ``E = h(sigma, m)`` of ``Q(sigma, m, E) = 0`` in ``(0, E_cap]``.

    Vectorised bisection; ``Q(., ., 0) > 0`` and ``Q(., ., E_cap) < 0`` are
    required at every point, otherwise :class:`NoSignChange` is raised.
    """
    sigma_a, m_a = np.broadcast_arrays(np.asarray(sigma, dtype=float), np.asarray(m, dtype=float))
    lo = np.zeros(sigma_a.shape)
    hi = np.full(sigma_a.shape, params.E_cap)
    q_lo = eval_Q(sigma_a, m_a, lo, params, laws)
    q_hi = eval_Q(sigma_a, m_a, hi, params, laws)
    bad = ~((q_lo > 0.0) & (q_hi < 0.0))
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        s_bad = np.atleast_1d(sigma_a)[tuple(idx)]
        m_bad = np.atleast_1d(m_a)[tuple(idx)]
        raise NoSignChange(
            f"Q(sigma={s_bad:g}, m={m_bad:g}, E) has no sign change on (0, {params.E_cap:g}]"
        )
    n_iter = int(math.ceil(math.log2(params.E_cap / tol))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        pos = eval_Q(sigma_a, m_a, mid, params, laws) > 0.0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    root = 0.5 * (lo + hi)
    return float(root) if root.ndim == 0 else root


# ---------------------------------------------------------------------------
# Nutrient profile
# ---------------------------------------------------------------------------

_SERIES_CUT = 0.5
_N_SERIES = 14
_FACT = np.array([math.factorial(2 * k + 1) for k in range(_N_SERIES + 1)], dtype=float)


def _sinhc_derivs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``S, S', S''`` for ``S(x) = sinh(x) / x`` (``S(0) = 1``)."""
    x = np.asarray(x, dtype=float)
    S = np.empty_like(x)
    S1 = np.empty_like(x)
    S2 = np.empty_like(x)
    small = np.abs(x) < _SERIES_CUT
    if np.any(small):
        xs = x[small]
        x2 = xs * xs
        s0 = np.zeros_like(xs)
        s1 = np.zeros_like(xs)
        s2 = np.zeros_like(xs)
        for k in range(_N_SERIES, -1, -1):
            s0 = s0 * x2 + 1.0 / _FACT[k]
            if k >= 1:
                s1 = s1 * x2 + 2 * k / _FACT[k]
                s2 = s2 * x2 + 2 * k * (2 * k - 1) / _FACT[k]
        S[small] = s0
        S1[small] = s1 * xs
        S2[small] = s2
    big = ~small
    if np.any(big):
        xb = x[big]
        sh = np.sinh(xb)
        ch = np.cosh(xb)
        S[big] = sh / xb
        S1[big] = (xb * ch - sh) / xb**2
        S2[big] = S[big] - 2.0 * S1[big] / xb
    return S, S1, S2


def sigma_stationary(r, R: float, lam: float):
    """Stationary nutrient ``R sinh(sqrt(lam) r) / (r sinh(sqrt(lam) R))``."""
    a = math.sqrt(lam)
    S, _, _ = _sinhc_derivs(np.asarray(r, dtype=float) * a)
    SR, _, _ = _sinhc_derivs(np.asarray([a * R]))
    out = S / SR[0]
    return float(out) if np.ndim(r) == 0 else out


def sigma_stationary_derivs(r, R: float, lam: float):
    """Return ``(sigma, sigma_r, sigma_rr)`` of the stationary nutrient."""
    a = math.sqrt(lam)
    r = np.asarray(r, dtype=float)
    S, S1, S2 = _sinhc_derivs(r * a)
    SR, _, _ = _sinhc_derivs(np.asarray([a * R]))
    return S / SR[0], a * S1 / SR[0], a * a * S2 / SR[0]


def viability(R: float, params: ModelParams) -> bool:
    """True when the central nutrient is below ``sigma_bar``."""
    x = math.sqrt(params.lam) * R
    return x / math.sinh(x) < params.sigma_bar if x > 0 else False


# ---------------------------------------------------------------------------
# Structural conditions
# ---------------------------------------------------------------------------


@dataclass
class StructuralReport:
    """Grid scan of the sufficient structural conditions."""

    violations: list[dict[str, float | str]]
    n: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, "n": self.n, "violations": self.violations}


def check_structural(
    params: ModelParams, laws: ConstitutiveSet, n: int = 200, max_report: int = 50
) -> StructuralReport:
    """Scan ``(sigma, E)`` on an ``n x n`` grid of ``(0, 1] x (0, E_cap]``.

    Two conditions are checked at ``m = alpha / beta``:

    * ``monotonicity``: ``dQ/dE + mu(E) sigma_bar < 0``;
    * ``cap``: ``Q(sigma, m, E_cap) < 0``.

    Each failing grid point is listed with its value, capped at
    ``max_report`` entries per kind.
    """
    m = params.m_eq
    s = np.arange(1, n + 1) / n
    e = np.arange(1, n + 1) * params.E_cap / n
    S, E = np.meshgrid(s, e, indexing="ij")
    mono = dQ_dE(S, m, E, params, laws) + laws.mu_of_E(E) * params.sigma_bar
    viol: list[dict[str, float | str]] = []
    for i, j in np.argwhere(mono >= 0.0)[:max_report]:
        viol.append({"kind": "monotonicity", "sigma": float(S[i, j]), "E": float(E[i, j]),
                     "value": float(mono[i, j])})
    cap = eval_Q(s, m, params.E_cap, params, laws)
    for i in np.flatnonzero(cap >= 0.0)[:max_report]:
        viol.append({"kind": "cap", "sigma": float(s[i]), "E": params.E_cap, "value": float(cap[i])})
    return StructuralReport(violations=viol, n=n)
