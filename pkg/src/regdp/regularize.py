"""Entropy regularization: smoothed max, Boltzmann policies and regularized
Bellman operators for values and Q-functions.

All routines accept a single row (shape ``(A,)``) or a batch of rows
(shape ``(S, A)``) and reduce over the last axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import (
    PROB_TOL,
    ContractError,
    TabularMDP,
    bellman_apply,
    check_policy,
    q_from_v,
)

__all__ = [
    "UNDERFLOW_RATIO",
    "Regularizer",
    "EntropyRegularizer",
    "neg_entropy",
    "smoothed_max",
    "soft_backup",
    "boltzmann",
    "reg_bellman_apply",
    "reg_bellman_max",
    "reg_bellman_q_max",
    "m_step_reg_apply",
]

# Below lambda < UNDERFLOW_RATIO * spread(q) the softmax is a one-hot in
# double precision anyway, so the hard max / greedy one-hot is returned.
UNDERFLOW_RATIO = 1e-10


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam >= 0 or not math.isfinite(lam):
        raise ContractError(f"temperature must be finite and >= 0, got {lam}")
    return lam


def neg_entropy(dist) -> np.ndarray | float:
    """``sum_a p(a) log p(a)`` with ``0 log 0 = 0``."""
    p = np.asarray(dist, dtype=float)
    if p.ndim == 0 or p.shape[-1] == 0:
        raise ContractError("distribution must be a non-empty vector")
    if np.any(p < 0) or np.max(np.abs(p.sum(axis=-1) - 1.0)) > PROB_TOL:
        raise ContractError("argument is not a probability distribution")
    safe = np.where(p > 0, p, 1.0)
    out = np.sum(p * np.log(safe), axis=-1)
    return float(out) if out.ndim == 0 else out


def soft_backup(q, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed max and Boltzmann policy of a batch of rows in one pass.

    Rows whose temperature is below ``UNDERFLOW_RATIO`` times their spread
    fall back to the hard max and the lowest-index greedy one-hot.
    """
    q = np.asarray(q, dtype=float)
    lam = _check_lambda(lam)
    q2 = q.reshape(-1, q.shape[-1])
    m = q2.max(axis=1)
    if lam == 0.0:
        cold = np.ones(m.shape, dtype=bool)
        v = m.copy()
        pi = np.zeros_like(q2)
    else:
        z = np.exp((q2 - m[:, None]) / lam)
        total = z.sum(axis=1)
        v = m + lam * np.log(total)
        pi = z / total[:, None]
        cold = lam < UNDERFLOW_RATIO * (m - q2.min(axis=1))
    if cold.any():
        rows = np.flatnonzero(cold)
        v[rows] = m[rows]
        pi[rows] = 0.0
        pi[rows, np.argmax(q2[rows], axis=1)] = 1.0
    return v.reshape(q.shape[:-1]), pi.reshape(q.shape)


def smoothed_max(q_row, lam: float):
    """``lam * log sum_a exp(q(a) / lam)``, evaluated with max subtraction."""
    v, _ = soft_backup(q_row, lam)
    return float(v) if v.ndim == 0 else v


def boltzmann(q_row, lam: float) -> np.ndarray:
    """``pi(a) ∝ exp(q(a) / lam)``; lam == 0 or underflow gives the greedy one-hot."""
    return soft_backup(q_row, lam)[1]


class Regularizer:
    """Interface for a per-state convex regularizer Ω with conjugate Ω*."""

    weight: float

    def omega(self, policy) -> np.ndarray:
        raise NotImplementedError

    def conjugate(self, q) -> np.ndarray:
        raise NotImplementedError

    def maximizer(self, q) -> np.ndarray:
        raise NotImplementedError

    def uniform_bound(self, n_actions: int) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class EntropyRegularizer(Regularizer):
    """``Ω(π) = weight * sum_a π(a) log π(a)``; weight 0 is the hard-max limit."""

    weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weight", _check_lambda(self.weight))

    def omega(self, policy) -> np.ndarray:
        if self.weight == 0.0:
            return np.zeros(np.shape(policy)[:-1])
        return self.weight * np.asarray(neg_entropy(policy))

    def conjugate(self, q) -> np.ndarray:
        return smoothed_max(q, self.weight)

    def maximizer(self, q) -> np.ndarray:
        return boltzmann(q, self.weight)

    def uniform_bound(self, n_actions: int) -> float:
        return self.weight * math.log(n_actions)


def _as_reg(reg) -> Regularizer:
    return reg if isinstance(reg, Regularizer) else EntropyRegularizer(reg)


def reg_bellman_apply(mdp: TabularMDP, policy, v, reg) -> np.ndarray:
    """``T^π_Ω V = T^π V − Ω(π)``; Ω is not charged at terminal states."""
    reg = _as_reg(reg)
    pi = check_policy(mdp, policy)
    out = bellman_apply(mdp, pi, v) - reg.omega(pi)
    return mdp.pin(out)


def reg_bellman_max(mdp: TabularMDP, v, lam: float) -> np.ndarray:
    """``T*_Ω V``: per-state smoothed max of the rows of ``Q_V``."""
    return mdp.pin(np.asarray(smoothed_max(q_from_v(mdp, v), lam), dtype=float))


def reg_bellman_q_max(mdp: TabularMDP, q, lam: float) -> np.ndarray:
    """``[T*_Ω Q](s, a) = r(s, a) + γ Σ_s' P(s'|s, a) Ω*(Q(s', ·))``."""
    q = np.asarray(q, dtype=float)
    if q.shape != (mdp.n_states, mdp.n_actions):
        raise ContractError(f"Q must have shape {(mdp.n_states, mdp.n_actions)}, got {q.shape}")
    v = mdp.pin(np.asarray(smoothed_max(q, lam), dtype=float))
    return q_from_v(mdp, v)


def m_step_reg_apply(mdp: TabularMDP, policy, v, reg, m: int) -> np.ndarray:
    """Apply ``T^π_Ω`` m times."""
    if int(m) != m or m < 1:
        raise ContractError(f"m must be a positive integer, got {m}")
    reg = _as_reg(reg)
    pi = check_policy(mdp, policy)
    omega = mdp.pin(np.array(reg.omega(pi), dtype=float))
    out = np.asarray(v, dtype=float)
    for _ in range(int(m)):
        out = bellman_apply(mdp, pi, out) - omega
    return mdp.pin(out)
