"""Finite-time error bounds and asymptotic rate envelopes.

Indexing conventions (iteration N produces V_N or Q_N and uses λ_N):

* AMPI: ``eval_errs[i]`` and ``impr_errs[i]`` are the errors of update i+1.
  The error term sums t = 1..N-1.
* reg-MPI: the schedule enters as λ_t, t = 1..N-1, optionally times log|A|.
* AL / CVI: ``errs[k]`` is the error of the update that produces Q_{k+1}.
  The ``sound_k`` schedule variant bounds ``errs[k]`` by λ_{k+1} (times
  log|A|); the ``paper_t`` variant uses λ_t inside the inner sum with the
  outer sum running t = 1..N-1.

Each scalar evaluator has a ``*_curve`` twin that returns the values for
N = 1..n_max in O(n_max).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .mdp import ContractError
from .schedule import Regime, Schedule, lambdas, mean_lambda, parse_schedule

__all__ = [
    "ampi_bound",
    "ampi_bound_curve",
    "reg_mpi_bound",
    "reg_mpi_bound_curve",
    "cvi_bound",
    "cvi_bound_curve",
    "al_realized_bound",
    "al_realized_bound_curve",
    "a_n",
    "gamma_n",
    "tail_sum",
    "rate_envelope",
    "EnvelopeFit",
    "fit_envelope",
]


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not 0 <= gamma < 1:
        raise ContractError(f"gamma must lie in [0, 1), got {gamma}")
    return gamma


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0 <= alpha <= 1:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def _check_n(N: int) -> int:
    if int(N) != N or N < 1:
        raise ContractError(f"N must be a positive integer, got {N}")
    return int(N)


def _errs(seq, need: int, name: str) -> np.ndarray:
    arr = np.asarray(seq, dtype=float).ravel()
    if arr.size < need:
        raise ContractError(f"{name} needs at least {need} entries, got {arr.size}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} must be finite and nonnegative")
    return arr


def ampi_bound_curve(eval_errs, impr_errs, gamma: float, init_gap: float, n_max: int) -> np.ndarray:
    """``(2/(1-γ)) (E_N + γ^N ||V_0 - V*||)`` for N = 1..n_max."""
    gamma = _check_gamma(gamma)
    n_max = _check_n(n_max)
    if init_gap < 0:
        raise ContractError("init_gap must be nonnegative")
    e = _errs(eval_errs, n_max - 1, "eval_errs")[: n_max - 1]
    ep = _errs(impr_errs, n_max - 1, "impr_errs")[: n_max - 1]
    total = e + ep
    out = np.empty(n_max)
    E = 0.0
    g_pow = gamma
    for i in range(n_max):
        N = i + 1
        if N > 1:
            E = gamma * (E + total[N - 2])
        out[i] = 2.0 / (1.0 - gamma) * (E + g_pow * init_gap)
        g_pow *= gamma
    return out


def ampi_bound(eval_errs, impr_errs, gamma: float, init_gap: float, N: int) -> float:
    return float(ampi_bound_curve(eval_errs, impr_errs, gamma, init_gap, _check_n(N))[-1])


def _reg_scale(include_logA: bool, n_actions: int | None) -> float:
    if not include_logA:
        return 1.0
    if n_actions is None or n_actions < 1:
        raise ContractError("n_actions is required when include_logA is set")
    return math.log(n_actions)


def reg_mpi_bound_curve(sched, gamma: float, m: int, init_gap: float, n_max: int,
                        include_logA: bool = True, n_actions: int | None = None) -> np.ndarray:
    """``(2/(1-γ)) (Λ_N + γ^N ||V_0 - V*||)`` with
    ``Λ_N = (1 + (1-γ^m)/(1-γ)) Σ_{t=1}^{N-1} γ^{N-t} λ_t``."""
    gamma = _check_gamma(gamma)
    if int(m) != m or m < 1:
        raise ContractError("m must be a positive integer")
    n_max = _check_n(n_max)
    lam = lambdas(parse_schedule(sched), n_max) * _reg_scale(include_logA, n_actions)
    zero = np.zeros(n_max)
    pref = 1.0 + (1.0 - gamma ** m) / (1.0 - gamma)
    return ampi_bound_curve(pref * lam, zero, gamma, init_gap, n_max)


def reg_mpi_bound(sched, gamma: float, m: int, init_gap: float, N: int,
                  include_logA: bool = True, n_actions: int | None = None) -> float:
    return float(reg_mpi_bound_curve(sched, gamma, m, init_gap, _check_n(N),
                                     include_logA, n_actions)[-1])


def a_n(alpha: float, N: int) -> float:
    """``A_N = Σ_{k=0}^N α^k``."""
    alpha = _check_alpha(alpha)
    if alpha == 1.0:
        return float(N + 1)
    return (1.0 - alpha ** (N + 1)) / (1.0 - alpha)


def _a_gamma_curves(gamma: float, alpha: float, n_max: int):
    """A_N and Γ_N for N = 1..n_max."""
    A = np.empty(n_max)
    G = np.empty(n_max)
    a_sum, g_sum, a_pow = 1.0, 1.0, 1.0  # N = 0
    for i in range(n_max):
        a_pow *= alpha
        a_sum += a_pow
        g_sum = gamma * g_sum + a_pow
        A[i] = a_sum
        G[i] = g_sum / a_sum
    return A, G


def gamma_n(gamma: float, alpha: float, N: int) -> float:
    """``Γ_N = (1/A_N) Σ_{t=0}^N γ^{N-t} α^t``."""
    gamma, alpha = _check_gamma(gamma), _check_alpha(alpha)
    return float(_a_gamma_curves(gamma, alpha, _check_n(N))[1][-1])


def al_realized_bound_curve(errs, gamma: float, alpha: float, v_max: float, n_max: int) -> np.ndarray:
    """``2γ V_max Γ_N + (2γ/(1-γ)) Σ_{t=1}^N γ^{N-t} (Σ_{k=0}^t α^{t-k} e_k) / A_N``.

    Entries of ``errs`` past its end count as 0: the error e_N belongs to the
    update that produces Q_{N+1}.
    """
    gamma, alpha = _check_gamma(gamma), _check_alpha(alpha)
    n_max = _check_n(n_max)
    if v_max < 0:
        raise ContractError("v_max must be nonnegative")
    e = _errs(errs, n_max, "errs")
    e = np.concatenate([e[: n_max + 1], np.zeros(max(0, n_max + 1 - e.size))])
    A, G = _a_gamma_curves(gamma, alpha, n_max)
    out = np.empty(n_max)
    conv = e[0]
    D = 0.0
    for i in range(n_max):
        t = i + 1
        conv = alpha * conv + e[t]
        D = gamma * D + conv
        out[i] = 2.0 * gamma * v_max * G[i] + 2.0 * gamma / (1.0 - gamma) * D / A[i]
    return out


def al_realized_bound(errs, gamma: float, alpha: float, v_max: float, N: int) -> float:
    return float(al_realized_bound_curve(errs, gamma, alpha, v_max, _check_n(N))[-1])


def cvi_bound_curve(sched, gamma: float, alpha: float, v_max: float, n_max: int,
                    variant: str = "sound_k", include_logA: bool = True,
                    n_actions: int | None = None) -> np.ndarray:
    """``2γ V_max Γ_N + (2γ/(1-γ)) Λ_N`` for N = 1..n_max."""
    gamma, alpha = _check_gamma(gamma), _check_alpha(alpha)
    n_max = _check_n(n_max)
    if v_max < 0:
        raise ContractError("v_max must be nonnegative")
    scale = _reg_scale(include_logA, n_actions)
    lam = lambdas(parse_schedule(sched), n_max + 1) * scale  # lam[i] = λ_{i+1}
    if variant == "sound_k":
        return al_realized_bound_curve(lam, gamma, alpha, v_max, n_max)
    if variant != "paper_t":
        raise ContractError(f"variant must be 'sound_k' or 'paper_t', got {variant!r}")
    A, G = _a_gamma_curves(gamma, alpha, n_max)
    out = np.empty(n_max)
    D = 0.0
    for i in range(n_max):
        N = i + 1
        if N > 1:
            t = N - 1
            a_t = A[t - 1]
            D = gamma * (D + lam[t - 1] * a_t)
        out[i] = 2.0 * gamma * v_max * G[i] + 2.0 * gamma / (1.0 - gamma) * D / A[i]
    return out


def cvi_bound(sched, gamma: float, alpha: float, v_max: float, N: int,
              variant: str = "sound_k", include_logA: bool = True,
              n_actions: int | None = None) -> float:
    return float(cvi_bound_curve(sched, gamma, alpha, v_max, _check_n(N), variant,
                                 include_logA, n_actions)[-1])


def tail_sum(theta: float, r, N: int) -> float:
    """``S_N = Σ_{t=0}^{N-1} θ^{N-t} r_t`` with ``r[t] = r_t``."""
    theta = float(theta)
    if not 0 <= theta < 1:
        raise ContractError(f"theta must lie in [0, 1), got {theta}")
    N = _check_n(N)
    arr = _errs(r, N, "r")[:N]
    powers = theta ** np.arange(N, 0, -1, dtype=float)
    return float(np.dot(powers, arr))


def _shape(regime: Regime, N, sched: Schedule | None):
    N = np.asarray(N, dtype=float)
    label = regime.label
    if label == "LinearGamma":
        return regime.gamma ** N
    if label == "AlmostLinear":
        return N * regime.gamma ** N
    if label == "CVIAlmostLinear":
        return N * regime.base ** N
    if label == "CVIInverseN":
        return 1.0 / N
    if label in ("SlowLambda", "CVIMeanLambda"):
        if sched is None:
            raise ContractError(f"regime {label} needs the schedule to evaluate λ_N")
        sched = parse_schedule(sched)
        n_int = N.astype(np.int64)
        lam = lambdas(sched, int(n_int.max()))[n_int - 1]
        if label == "SlowLambda":
            return lam
        means = np.array([mean_lambda(sched, int(k)) for k in np.atleast_1d(n_int)])
        return np.maximum(means.reshape(N.shape), 1.0 / N)
    raise ContractError(f"regime {label} has no rate envelope")


def rate_envelope(regime: Regime, N, constant: float = 1.0, sched: Schedule | None = None):
    """``c * shape(N)`` for the regime's asymptotic rate."""
    out = constant * _shape(regime, N, sched)
    return float(out) if np.ndim(out) == 0 else out


ENVELOPE_FLOOR = 1e-12


@dataclass(frozen=True)
class EnvelopeFit:
    regime: str
    constant: float
    constant_ls: float
    fit_range: tuple[int, int]

    def to_json(self) -> str:
        return json.dumps({
            "regime": self.regime,
            "constant": self.constant,
            "constant_ls": self.constant_ls,
            "fit_range": list(self.fit_range),
        })


def fit_envelope(regime: Regime, iters, errors, sched: Schedule | None = None) -> EnvelopeFit:
    """Fit the envelope constant on the last quartile of a run.

    Iterations after the error has dropped to the floating-point floor
    (``<= ENVELOPE_FLOOR``) are excluded before taking the quartile.
    ``constant_ls`` is the least-squares fit of ``log err = log c + log shape``;
    ``constant`` is the smallest c that dominates the data on the fit range.
    """
    if not regime.classified:
        raise ContractError("cannot fit an envelope for an unclassified regime")
    iters = np.asarray(iters, dtype=np.int64)
    errors = np.asarray(errors, dtype=float)
    if iters.size == 0 or iters.shape != errors.shape:
        raise ContractError("iters and errors must be non-empty and aligned")
    above = np.flatnonzero(errors > ENVELOPE_FLOOR)
    end = int(above[-1]) + 1 if above.size else iters.size
    lo = end - max(1, end // 4)
    n, e = iters[lo:end], errors[lo:end]
    shape = np.asarray(_shape(regime, n, sched), dtype=float)
    ok = (e > 0) & (shape > 0)
    if not ok.any():
        return EnvelopeFit(regime.label, 0.0, 0.0, (int(n[0]), int(n[-1])))
    ratio = e[ok] / shape[ok]
    c_ls = float(np.exp(np.mean(np.log(ratio))))
    return EnvelopeFit(regime.label, float(ratio.max()), c_ls, (int(n[0]), int(n[-1])))
