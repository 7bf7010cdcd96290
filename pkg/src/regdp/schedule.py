"""Temperature / error-magnitude schedules and convergence-regime labels.

Schedules are 1-indexed: ``lambda_at(s, t)`` is defined for ``t >= 1``.
They are named in configs by a small string grammar::

    zero | const:c | geo:c:q | invpoly:c:k | loglin:c | invlog:c | tab:v1,v2,...

``geo:c:q`` is ``c q^t``, ``invpoly:c:k`` is ``c / t^k``, ``loglin:c`` is
``c log(t+1) / t`` and ``invlog:c`` is ``c / log(t+1)``.  A tabulated
schedule repeats its last value past the end of the table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import ContractError

__all__ = [
    "Schedule",
    "Zero", "Constant", "Geometric", "InversePoly", "InverseLog", "LogOverN", "Tabulated",
    "parse_schedule",
    "lambda_at",
    "lambdas",
    "mean_lambda",
    "rate_limits",
    "empirical_rate_limits",
    "Regime",
    "classify_regime",
    "RATIO_WINDOW",
    "FLOAT_TOL",
]

RATIO_WINDOW = 100
FLOAT_TOL = 1e-12


class Schedule:
    """Base class; subclasses implement ``_values(t)`` for an int array t >= 1."""

    analytic = True

    def _values(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t):
        return lambda_at(self, t)

    def spec(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.spec()


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ContractError(f"{name} must be a positive finite number, got {value}")
    return value


@dataclass(frozen=True)
class Zero(Schedule):
    def _values(self, t):
        return np.zeros(t.shape)

    def spec(self):
        return "zero"


@dataclass(frozen=True)
class Constant(Schedule):
    c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "c", _positive("c", self.c))

    def _values(self, t):
        return np.full(t.shape, self.c)

    def spec(self):
        return f"const:{self.c!r}"


@dataclass(frozen=True)
class Geometric(Schedule):
    c: float = 1.0
    q: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "c", _positive("c", self.c))
        q = float(self.q)
        if not 0 < q < 1:
            raise ContractError(f"geometric ratio must lie in (0, 1), got {q}")
        object.__setattr__(self, "q", q)

    def _values(self, t):
        return self.c * self.q ** t.astype(float)

    def spec(self):
        return f"geo:{self.c!r}:{self.q!r}"


@dataclass(frozen=True)
class InversePoly(Schedule):
    c: float = 1.0
    k: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "c", _positive("c", self.c))
        object.__setattr__(self, "k", _positive("k", self.k))

    def _values(self, t):
        return self.c / t.astype(float) ** self.k

    def spec(self):
        return f"invpoly:{self.c!r}:{self.k!r}"


@dataclass(frozen=True)
class InverseLog(Schedule):
    c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "c", _positive("c", self.c))

    def _values(self, t):
        return self.c / np.log(t + 1.0)

    def spec(self):
        return f"invlog:{self.c!r}"


@dataclass(frozen=True)
class LogOverN(Schedule):
    c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "c", _positive("c", self.c))

    def _values(self, t):
        t = t.astype(float)
        return self.c * np.log(t + 1.0) / t

    def spec(self):
        return f"loglin:{self.c!r}"


@dataclass(frozen=True, eq=False)
class Tabulated(Schedule):
    values: tuple = ()
    analytic = False

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ContractError("tabulated schedule needs at least one value")
        if any(not (v >= 0 and math.isfinite(v)) for v in vals):
            raise ContractError("tabulated values must be finite and nonnegative")
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        return isinstance(other, Tabulated) and self.values == other.values

    def __hash__(self):
        return hash(self.values)

    def _values(self, t):
        arr = np.asarray(self.values)
        return arr[np.minimum(t, arr.size) - 1]

    def spec(self):
        return "tab:" + ",".join(repr(v) for v in self.values)


_FAMILIES = {
    "zero": (Zero, 0),
    "const": (Constant, 1),
    "geo": (Geometric, 2),
    "invpoly": (InversePoly, 2),
    "loglin": (LogOverN, 1),
    "invlog": (InverseLog, 1),
}


def parse_schedule(text: str) -> Schedule:
    """Parse the schedule grammar; raises ContractError on malformed input."""
    if isinstance(text, Schedule):
        return text
    text = str(text).strip()
    head, _, rest = text.partition(":")
    if head == "tab":
        try:
            return Tabulated(tuple(float(x) for x in rest.split(",")))
        except ValueError:
            raise ContractError(f"malformed tabulated schedule {text!r}") from None
    if head not in _FAMILIES:
        raise ContractError(f"unknown schedule family in {text!r}")
    cls, nargs = _FAMILIES[head]
    args = rest.split(":") if rest else []
    if len(args) != nargs:
        raise ContractError(f"schedule {head!r} takes {nargs} parameter(s), got {text!r}")
    try:
        return cls(*(float(a) for a in args))
    except ValueError:
        raise ContractError(f"non-numeric parameter in schedule {text!r}") from None


def lambda_at(s: Schedule, t):
    """λ_t for scalar or array t (1-indexed)."""
    arr = np.asarray(t)
    if not np.issubdtype(arr.dtype, np.integer):
        if np.any(arr != np.floor(arr)):
            raise ContractError("schedule index must be an integer")
        arr = arr.astype(np.int64)
    if np.any(arr < 1):
        raise ContractError("schedule index t must be >= 1")
    out = s._values(arr)
    return float(out) if np.ndim(out) == 0 else out


def lambdas(s: Schedule, n: int) -> np.ndarray:
    """Array ``[λ_1, ..., λ_n]``."""
    if n < 1:
        return np.zeros(0)
    return np.asarray(lambda_at(s, np.arange(1, n + 1)), dtype=float)


def mean_lambda(s: Schedule, n: int) -> float:
    """``λ̄_N = (1/N) Σ_{t=1}^N λ_t``."""
    if n < 1:
        raise ContractError("N must be >= 1")
    return float(lambdas(s, n).mean())


def rate_limits(s: Schedule) -> tuple[float, float]:
    """Analytic ``(lim inf, lim sup)`` of ``λ_N / λ_{N-1}``."""
    if isinstance(s, Zero):
        return 0.0, 0.0
    if isinstance(s, Geometric):
        return s.q, s.q
    if isinstance(s, (Constant, InversePoly, InverseLog, LogOverN)):
        return 1.0, 1.0
    raise ContractError(f"schedule {s} has no analytic rate limit; use empirical_rate_limits")


def empirical_rate_limits(values, window: int = RATIO_WINDOW) -> tuple[float, float]:
    """Min and max of consecutive ratios over the last ``window`` terms."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ContractError("need at least two terms to estimate ratios")
    tail = v[-(window + 1):]
    prev, cur = tail[:-1], tail[1:]
    live = (prev > 0) | (cur > 0)
    if not live.any():
        return 0.0, 0.0
    prev, cur = prev[live], cur[live]
    with np.errstate(divide="ignore"):
        ratios = np.where(prev > 0, cur / np.where(prev > 0, prev, 1.0), np.inf)
    return float(ratios.min()), float(ratios.max())


def _mean_rate_limits(s: Schedule, window: int) -> tuple[float, float]:
    """Ratio limits of the running mean λ̄_N, used when α = 1."""
    if isinstance(s, Zero):
        return 0.0, 0.0
    if s.analytic:
        # Any nonzero analytic family has λ̄_N / λ̄_{N-1} -> 1.
        return 1.0, 1.0
    vals = np.asarray(s.values, dtype=float)
    means = np.cumsum(vals) / np.arange(1, vals.size + 1)
    return empirical_rate_limits(means, window)


@dataclass(frozen=True)
class Regime:
    """Convergence regime; ``base`` is γ or α∨γ where it enters the rate."""

    label: str
    gamma: float
    alpha: float | None = None
    base: float | None = None

    LABELS = (
        "LinearGamma", "AlmostLinear", "SlowLambda",
        "CVIAlmostLinear", "CVIInverseN", "CVIMeanLambda", "Unclassified",
    )

    @property
    def rate(self) -> str:
        return {
            "LinearGamma": "O(gamma^N)",
            "AlmostLinear": "O(N gamma^N)",
            "SlowLambda": "O(lambda_N)",
            "CVIAlmostLinear": "O(N (alpha v gamma)^N)",
            "CVIInverseN": "O(1/N)",
            "CVIMeanLambda": "O(mean_lambda_N v 1/N)",
            "Unclassified": "n/a",
        }[self.label]

    @property
    def classified(self) -> bool:
        return self.label != "Unclassified"


def _le(a, b):
    return a <= b + FLOAT_TOL


def _lt(a, b):
    return a < b - FLOAT_TOL


def classify_regime(s: Schedule, gamma: float, alpha: float | None = None,
                    window: int = RATIO_WINDOW) -> Regime:
    """Regime from the position of the ratio limits against γ or α∨γ.

    Parameter combinations the case analysis does not cover give the
    ``Unclassified`` label.
    """
    gamma = float(gamma)
    if not 0 <= gamma < 1:
        raise ContractError(f"gamma must lie in [0, 1), got {gamma}")
    if alpha is not None:
        alpha = float(alpha)
        if not 0 <= alpha <= 1:
            raise ContractError(f"alpha must lie in [0, 1], got {alpha}")

    if alpha is not None and abs(alpha - 1.0) <= FLOAT_TOL:
        lo, hi = _mean_rate_limits(s, window)
    elif s.analytic:
        lo, hi = rate_limits(s)
    else:
        lo, hi = empirical_rate_limits(s.values, window)

    if alpha is None:
        if _lt(gamma, lo):
            return Regime("SlowLambda", gamma)
        if _lt(hi, gamma):
            return Regime("LinearGamma", gamma, base=gamma)
        if abs(hi - gamma) <= FLOAT_TOL:
            return Regime("AlmostLinear", gamma, base=gamma)
        return Regime("Unclassified", gamma)

    if abs(alpha - 1.0) <= FLOAT_TOL:
        if _le(hi, gamma):
            return Regime("CVIInverseN", gamma, alpha)
        if _lt(gamma, lo):
            return Regime("CVIMeanLambda", gamma, alpha)
        return Regime("Unclassified", gamma, alpha)

    base = max(alpha, gamma)
    if _le(hi, gamma):
        return Regime("CVIAlmostLinear", gamma, alpha, base=base)
    if _lt(base, lo):
        return Regime("SlowLambda", gamma, alpha)
    return Regime("Unclassified", gamma, alpha)
