"""Tabular MDPs and exact Bellman machinery.

Value functions are float vectors of shape ``(S,)``, Q-functions and
stochastic policies are float matrices of shape ``(S, A)``.  Everything here
is a pure function of its inputs.

States flagged in ``TabularMDP.terminal`` have their value pinned at zero:
every operator returns 0 there, and no regularization is charged there.  A
terminal state must be a zero-reward self-loop, so for the unregularized
operators the pin changes nothing once V is 0 at those states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ContractError",
    "ConvergenceError",
    "TabularMDP",
    "bellman_apply",
    "bellman_max",
    "q_from_v",
    "greedy_policy",
    "policy_evaluation_exact",
    "q_policy_evaluation",
    "exact_optimal",
    "sup_dist",
    "check_policy",
    "deterministic_policy",
    "random_mdp",
]

PROB_TOL = 1e-12


class ContractError(ValueError):
    """An argument violates an operation's precondition."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap."""


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite MDP ``(S, A, P, r, gamma)``.

    ``transitions[s, a, s']`` is ``P(s'|s, a)`` and ``rewards[s, a]`` is
    ``r(s, a)``.  Arrays are copied and made read-only on construction.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    discount: float
    terminal: np.ndarray | None = None
    layout: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        P = np.array(self.transitions, dtype=float)
        r = np.array(self.rewards, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise ContractError(f"transitions must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise ContractError(f"rewards shape {r.shape} does not match transitions {P.shape[:2]}")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise ContractError("transition probabilities must be finite and nonnegative")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > PROB_TOL:
            raise ContractError("every transitions[s, a] must sum to 1")
        if not np.all(np.isfinite(r)):
            raise ContractError("rewards must be finite")
        gamma = float(self.discount)
        if not 0.0 <= gamma < 1.0:
            raise ContractError(f"discount must lie in [0, 1), got {gamma}")
        S, A = r.shape
        if self.terminal is None:
            term = np.zeros(S, dtype=bool)
        else:
            term = np.array(self.terminal, dtype=bool)
            if term.shape != (S,):
                raise ContractError("terminal mask must have one entry per state")
        for s in np.flatnonzero(term):
            if np.any(r[s] != 0) or np.any(P[s, :, s] != 1.0):
                raise ContractError(f"terminal state {s} must be a zero-reward self-loop")
        for arr in (P, r, term):
            arr.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "discount", gamma)
        object.__setattr__(self, "terminal", term)
        object.__setattr__(self, "_has_terminal", bool(term.any()))

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.rewards)))

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.discount)

    @property
    def has_terminal(self) -> bool:
        return self._has_terminal

    def pin(self, v: np.ndarray) -> np.ndarray:
        """Zero ``v`` at terminal states (in place) and return it."""
        if self._has_terminal:
            v[self.terminal] = 0.0
        return v

    def to_json(self) -> dict:
        d = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "rewards": self.rewards.tolist(),
            "transitions": self.transitions.tolist(),
        }
        if self.has_terminal:
            d["terminal"] = np.flatnonzero(self.terminal).tolist()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TabularMDP":
        P = np.asarray(d["transitions"], dtype=float)
        r = np.asarray(d["rewards"], dtype=float)
        if P.shape[:2] != (d["n_states"], d["n_actions"]):
            raise ContractError("n_states/n_actions disagree with the arrays")
        term = None
        if d.get("terminal"):
            term = np.zeros(d["n_states"], dtype=bool)
            term[list(d["terminal"])] = True
        return cls(P, r, d["discount"], terminal=term)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "TabularMDP":
        return cls.from_json(json.loads(Path(path).read_text()))


def _check_v(mdp: TabularMDP, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise ContractError(f"value function must have shape ({mdp.n_states},), got {v.shape}")
    return v


def check_policy(mdp: TabularMDP, policy) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ContractError(f"policy must have shape {(mdp.n_states, mdp.n_actions)}, got {pi.shape}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > PROB_TOL:
        raise ContractError("policy rows must be probability distributions")
    return pi


def deterministic_policy(actions, n_actions: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=int)
    pi = np.zeros((actions.size, n_actions))
    pi[np.arange(actions.size), actions] = 1.0
    return pi


def q_from_v(mdp: TabularMDP, v) -> np.ndarray:
    """``Q_V(s, a) = r(s, a) + gamma * sum_s' P(s'|s, a) V(s')``."""
    v = _check_v(mdp, v)
    return mdp.rewards + mdp.discount * (mdp.transitions @ v)


def bellman_apply(mdp: TabularMDP, policy, v) -> np.ndarray:
    """``T^pi V = r^pi + gamma P^pi V``."""
    pi = check_policy(mdp, policy)
    out = np.einsum("sa,sa->s", pi, q_from_v(mdp, v))
    return mdp.pin(out)


def bellman_max(mdp: TabularMDP, v) -> np.ndarray:
    return mdp.pin(q_from_v(mdp, v).max(axis=1))


def greedy_policy(mdp: TabularMDP, v) -> np.ndarray:
    """Deterministic greedy policy; ties go to the lowest action index."""
    q = q_from_v(mdp, v)
    return deterministic_policy(np.argmax(q, axis=1), mdp.n_actions)


def _induced(mdp: TabularMDP, pi: np.ndarray):
    r_pi = np.einsum("sa,sa->s", pi, mdp.rewards)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    return r_pi, P_pi


def policy_evaluation_exact(mdp: TabularMDP, policy, tol: float = 1e-12) -> np.ndarray:
    """V^pi by a direct solve of ``(I - gamma P^pi) V = r^pi``.

    The solve is refined by fixed-point sweeps until the Bellman residual
    certifies ``||V - V^pi|| <= tol``.
    """
    if not tol > 0:
        raise ContractError("tol must be positive")
    pi = check_policy(mdp, policy)
    r_pi, P_pi = _induced(mdp, pi)
    gamma = mdp.discount
    v = np.linalg.solve(np.eye(mdp.n_states) - gamma * P_pi, r_pi)
    mdp.pin(v)
    limit = tol * (1.0 - gamma) / max(gamma, 1e-300)
    for _ in range(10_000):
        tv = mdp.pin(r_pi + gamma * (P_pi @ v))
        if np.max(np.abs(tv - v)) <= limit:
            return tv
        v = tv
    raise ConvergenceError("policy evaluation did not reach the requested tolerance")


def q_policy_evaluation(mdp: TabularMDP, policy, tol: float = 1e-12) -> np.ndarray:
    """Q^pi = Q_{V^pi}."""
    return q_from_v(mdp, policy_evaluation_exact(mdp, policy, tol))


def exact_optimal(mdp: TabularMDP, tol: float = 1e-13, max_iters: int = 1_000_000):
    """Reference V* and greedy pi* by value iteration.

    Stops once ``||V_{k+1} - V_k|| <= tol (1 - gamma) / gamma``, which
    guarantees ``||V_{k+1} - V*|| <= tol``.
    """
    if not tol > 0:
        raise ContractError("tol must be positive")
    gamma = mdp.discount
    limit = tol * (1.0 - gamma) / gamma if gamma > 0 else np.inf
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        tv = bellman_max(mdp, v)
        if np.max(np.abs(tv - v)) <= limit:
            return tv, greedy_policy(mdp, tv)
        v = tv
    raise ConvergenceError(f"value iteration exceeded {max_iters} iterations")


def sup_dist(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def random_mdp(rng, n_states: int, n_actions: int, discount: float | None = None,
               sparsity: float = 0.0) -> TabularMDP:
    """Random MDP with Dirichlet rows and rewards in [-1, 1]."""
    rng = np.random.default_rng(rng)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0:
        mask = rng.random(P.shape) < sparsity
        mask[..., 0] = False
        P = np.where(mask, 0.0, P)
        P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(-1, 1, size=(n_states, n_actions))
    if discount is None:
        discount = float(rng.uniform(0.5, 0.95))
    return TabularMDP(P, r, discount)
