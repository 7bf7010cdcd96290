"""Iterative schemes: MPI, AMPI, reg-MPI, soft VI, advantage learning, CVI.

Every run returns a ``RunTrace``.  Iteration N is the update producing
``V_N`` (or ``Q_N``) from the previous iterate and uses temperature λ_N.

Stopping (``Stop``):

``rule="opt"``
    first N with ``sup_err(N) < eps``, where sup_err is ``||V_N - V*||`` for
    value-based runs and the Q-regret ``||Q^{π_N} - Q*||`` (π_N greedy on
    Q_N) for Q-based runs.
``rule="gap"``
    first N with ``||V_N - V_{N-1}|| < eps`` (``Q`` for Q-based runs).

Without ``max_iters`` a run is bounded by the hard cap ``HARD_CAP``
(overridable through the ``REGDP_MAX_ITERS`` environment variable); hitting it
raises ``CapExceeded`` carrying the partial trace.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .mdp import (
    ContractError,
    ConvergenceError,
    TabularMDP,
    deterministic_policy,
    exact_optimal,
    q_from_v,
)
from .regularize import boltzmann, neg_entropy, soft_backup
from .schedule import Schedule, Zero, lambda_at, lambdas, parse_schedule

__all__ = [
    "HARD_CAP",
    "DENSE_LIMIT",
    "CapExceeded",
    "Stop",
    "ErrorInjector",
    "RunTrace",
    "hard_cap",
    "run_mpi",
    "run_ampi",
    "run_reg_mpi",
    "run_soft_vi",
    "run_advantage_learning",
    "run_cvi",
    "policy_snapshot",
    "TRACE_HEADER",
    "SNAPSHOT_HEADER",
]

HARD_CAP = 10_000_000
DENSE_LIMIT = 10_000
THIN_RATIO = 1.02
TRACE_HEADER = ("iter", "lambda", "sup_err", "eval_err", "impr_err", "bound")
SNAPSHOT_HEADER = ("col", "row", "value", "best_action")


def hard_cap() -> int:
    raw = os.environ.get("REGDP_MAX_ITERS")
    if raw is None:
        return HARD_CAP
    try:
        cap = int(raw)
    except ValueError:
        raise ContractError(f"REGDP_MAX_ITERS must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ContractError("REGDP_MAX_ITERS must be positive")
    return cap


class CapExceeded(ConvergenceError):
    """The hard iteration cap was reached before the stopping rule fired."""

    def __init__(self, message: str, trace: "RunTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Stop:
    eps: float | None = None
    max_iters: int | None = None
    rule: str = "opt"

    def __post_init__(self):
        if self.eps is None and self.max_iters is None:
            raise ContractError("a stopping rule needs eps, max_iters or both")
        if self.eps is not None and not self.eps > 0:
            raise ContractError("eps must be positive")
        if self.max_iters is not None and int(self.max_iters) < 1:
            raise ContractError("max_iters must be >= 1")
        if self.rule not in ("opt", "gap"):
            raise ContractError(f"stop rule must be 'opt' or 'gap', got {self.rule!r}")


def _as_stop(stop) -> Stop:
    if isinstance(stop, Stop):
        return stop
    if isinstance(stop, dict):
        return Stop(**stop)
    if isinstance(stop, int):
        return Stop(max_iters=stop)
    raise ContractError(f"cannot interpret stopping rule {stop!r}")


NOISE_MODES = ("eval_only", "improve_only", "both")
NOISE_SHAPES = ("constant_sign", "signed_uniform")


@dataclass(frozen=True)
class ErrorInjector:
    """Draws evaluation / improvement noise with ``||noise_N|| <= r_N``.

    ``constant_sign`` evaluation noise is ``+r_N`` at every state;
    ``signed_uniform`` draws each entry from U[-r_N, r_N].  Improvement noise
    perturbs ``Q_{V}`` before the greedy step: ``constant_sign`` adds ``+r_N``
    to one uniformly chosen action per state, ``signed_uniform`` adds
    U[-r_N, r_N] to every entry.
    """

    magnitude: Schedule = field(default_factory=Zero)
    mode: str = "eval_only"
    shape: str = "constant_sign"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "magnitude", parse_schedule(self.magnitude))
        if self.mode not in NOISE_MODES:
            raise ContractError(f"injector mode must be one of {NOISE_MODES}")
        if self.shape not in NOISE_SHAPES:
            raise ContractError(f"injector shape must be one of {NOISE_SHAPES}")
        if int(self.seed) < 0:
            raise ContractError("seed must be a nonnegative integer")

    @property
    def evaluates(self) -> bool:
        return self.mode in ("eval_only", "both")

    @property
    def improves(self) -> bool:
        return self.mode in ("improve_only", "both")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(int(self.seed))

    def eval_noise(self, rng, t: int, shape) -> np.ndarray:
        r = lambda_at(self.magnitude, t)
        if not self.evaluates or r == 0:
            return np.zeros(shape)
        if self.shape == "constant_sign":
            return np.full(shape, r)
        return rng.uniform(-r, r, size=shape)

    def impr_noise(self, rng, t: int, shape) -> np.ndarray:
        r = lambda_at(self.magnitude, t)
        if not self.improves or r == 0:
            return np.zeros(shape)
        if self.shape == "constant_sign":
            out = np.zeros(shape)
            out[np.arange(shape[0]), rng.integers(0, shape[1], size=shape[0])] = r
            return out
        return rng.uniform(-r, r, size=shape)

    def describe(self) -> str:
        return f"{self.magnitude.spec()}/{self.mode}/{self.shape}/seed={self.seed}"


class RunTrace:
    """Per-iteration record of a run.

    Scalar series are numpy arrays indexed by position (``iters[i]`` is the
    iteration number).  Iterates are kept for every N up to ``DENSE_LIMIT``
    and on a logarithmically thinned grid beyond; the final iterate is always
    kept.  ``init_err`` is the sup error of the initial iterate.
    """

    def __init__(self, mdp: TabularMDP, kind: str, metadata: dict):
        self.mdp = mdp
        self.kind = kind
        self.metadata = dict(metadata)
        self.iterates: dict[int, np.ndarray] = {}
        self.policies: dict[int, np.ndarray] = {}
        self.converged = False
        self.init_err = float("nan")
        self.bound: np.ndarray | None = None
        self._cols = {k: [] for k in ("iter", "lambda", "sup_err", "gap", "eval_err", "impr_err")}

    def _append(self, n, lam, sup_err, gap, eval_err, impr_err):
        c = self._cols
        c["iter"].append(n)
        c["lambda"].append(lam)
        c["sup_err"].append(sup_err)
        c["gap"].append(gap)
        c["eval_err"].append(eval_err)
        c["impr_err"].append(impr_err)

    def _finish(self):
        self.iters = np.asarray(self._cols["iter"], dtype=np.int64)
        for name in ("lambda", "sup_err", "gap", "eval_err", "impr_err"):
            setattr(self, name if name != "lambda" else "lambdas",
                    np.asarray(self._cols[name], dtype=float))
        del self._cols

    @property
    def n_iters(self) -> int:
        return int(self.iters[-1]) if self.iters.size else 0

    @property
    def final(self) -> np.ndarray:
        return self.iterates[self.n_iters]

    @property
    def final_err(self) -> float:
        return float(self.sup_err[-1]) if self.sup_err.size else self.init_err

    @property
    def count(self) -> int:
        """Iteration count in the tables' convention: iterates V_0..V_N."""
        return self.n_iters + 1

    def value(self, n: int) -> np.ndarray:
        """V_N for value runs, or the greedy value max_a Q_N for Q runs."""
        x = self._iterate(n)
        return x if self.kind == "v" else x.max(axis=1)

    def q_values(self, n: int) -> np.ndarray:
        x = self._iterate(n)
        return q_from_v(self.mdp, x) if self.kind == "v" else x

    def _iterate(self, n: int) -> np.ndarray:
        try:
            return self.iterates[n]
        except KeyError:
            raise ContractError(f"iteration {n} was not stored in this trace") from None

    def write_csv(self, path_or_file) -> None:
        rows = self.csv_rows()
        if hasattr(path_or_file, "write"):
            _write_rows(path_or_file, TRACE_HEADER, rows)
        else:
            with open(path_or_file, "w", newline="") as fh:
                _write_rows(fh, TRACE_HEADER, rows)

    def csv_rows(self) -> list:
        bound = self.bound if self.bound is not None else np.full(self.iters.size, np.nan)
        return [
            (int(n), _fmt(l), _fmt(e), _fmt(ee), _fmt(ie), _fmt(b))
            for n, l, e, ee, ie, b in zip(self.iters, self.lambdas, self.sup_err,
                                          self.eval_err, self.impr_err, bound)
        ]


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _write_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


_OPT_CACHE: dict = {}


def _optimum(mdp: TabularMDP):
    key = id(mdp)
    hit = _OPT_CACHE.get(key)
    if hit is None or hit[0] is not mdp:
        v_star, _ = exact_optimal(mdp)
        hit = (mdp, v_star, q_from_v(mdp, v_star))
        if len(_OPT_CACHE) > 64:
            _OPT_CACHE.clear()
        _OPT_CACHE[key] = hit
    return hit[1], hit[2]


class _Regret:
    """Q-regret of the greedy policy on a Q iterate, cached per policy."""

    def __init__(self, mdp: TabularMDP, q_star: np.ndarray):
        self.mdp = mdp
        self.q_star = q_star
        self.cache: dict = {}
        S = mdp.n_states
        self.eye = np.eye(S)

    def __call__(self, q: np.ndarray) -> float:
        actions = np.argmax(q, axis=1)
        key = actions.tobytes()
        hit = self.cache.get(key)
        if hit is None:
            mdp = self.mdp
            idx = np.arange(mdp.n_states)
            r_pi = mdp.rewards[idx, actions]
            P_pi = mdp.transitions[idx, actions]
            v = np.linalg.solve(self.eye - mdp.discount * P_pi, r_pi)
            mdp.pin(v)
            # a few sweeps polish the direct solve to fixed-point accuracy
            for _ in range(3):
                v = mdp.pin(r_pi + mdp.discount * (P_pi @ v))
            hit = float(np.max(np.abs(q_from_v(mdp, v) - self.q_star)))
            self.cache[key] = hit
        return hit


def _keep(n: int, state: list) -> bool:
    if n <= DENSE_LIMIT:
        return True
    if n >= state[0]:
        state[0] = max(n + 1, int(state[0] * THIN_RATIO))
        return True
    return False


def _loop(mdp, kind, x0, step, stop, metadata, keep_iterates=True, err_fn=None):
    """Shared driver.  ``step(n, x) -> (x_new, policy, lam, eval_err, impr_err)``."""
    stop = _as_stop(stop)
    cap = hard_cap()
    limit = min(int(stop.max_iters), cap) if stop.max_iters is not None else cap
    trace = RunTrace(mdp, kind, {**metadata, "stop": stop.rule, "eps": stop.eps})
    x = np.array(x0, dtype=float)
    trace.iterates[0] = x.copy()
    trace.init_err = err_fn(x)
    thin = [int(DENSE_LIMIT * THIN_RATIO)]
    last_policy = None
    n = 0
    for n in range(1, limit + 1):
        x_new, pi, lam, e_eval, e_impr = step(n, x)
        err = err_fn(x_new)
        gap = float(np.max(np.abs(x_new - x)))
        trace._append(n, lam, err, gap, e_eval, e_impr)
        x = x_new
        last_policy = pi
        if keep_iterates and _keep(n, thin):
            trace.iterates[n] = x.copy()
            trace.policies[n] = pi.copy()
        if stop.eps is not None:
            metric = err if stop.rule == "opt" else gap
            if metric < stop.eps:
                trace.converged = True
                break
    trace.iterates[n] = x.copy()
    if last_policy is not None:
        trace.policies[n] = last_policy.copy()
    trace._finish()
    if stop.eps is not None and not trace.converged:
        if stop.max_iters is None or int(stop.max_iters) > cap:
            raise CapExceeded(f"no convergence within the iteration cap of {cap}", trace)
    elif stop.eps is None and stop.max_iters is not None and int(stop.max_iters) > cap:
        raise CapExceeded(f"max_iters {stop.max_iters} exceeds the iteration cap of {cap}", trace)
    return trace


class _LambdaCache:
    """λ_t looked up from precomputed blocks of the schedule."""

    BLOCK = 8192

    def __init__(self, sched: Schedule):
        self.sched = sched
        self.values = np.zeros(0)

    def __call__(self, t: int) -> float:
        if t > self.values.size:
            n = max(t, self.values.size + self.BLOCK)
            self.values = lambdas(self.sched, n)
        return float(self.values[t - 1])


def _check_m(m):
    if int(m) != m or m < 1:
        raise ContractError(f"m must be a positive integer, got {m}")
    return int(m)


def _check_alpha(alpha):
    alpha = float(alpha)
    if not 0 <= alpha <= 1:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def _v0(mdp, v0):
    v = np.zeros(mdp.n_states) if v0 is None else np.array(v0, dtype=float)
    if v.shape != (mdp.n_states,) or not np.all(np.isfinite(v)):
        raise ContractError("v0 must be a finite vector with one entry per state")
    return mdp.pin(v)


def _q0(mdp, q0):
    q = np.zeros((mdp.n_states, mdp.n_actions)) if q0 is None else np.array(q0, dtype=float)
    if q.shape != (mdp.n_states, mdp.n_actions) or not np.all(np.isfinite(q)):
        raise ContractError("q0 must be a finite (S, A) matrix")
    if mdp.has_terminal:
        q[mdp.terminal] = 0.0
    return q


def _policy_step(mdp, pi, v, omega, m):
    """Apply ``v -> r^π - ω + γ P^π v`` m times, pinning terminal states."""
    r_pi = np.einsum("sa,sa->s", pi, mdp.rewards) - omega
    P_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    for _ in range(m):
        v = mdp.pin(r_pi + mdp.discount * (P_pi @ v))
    return v


def _policy_step_plain(mdp, pi, v, m):
    r_pi = np.einsum("sa,sa->s", pi, mdp.rewards)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    for _ in range(m):
        v = mdp.pin(r_pi + mdp.discount * (P_pi @ v))
    return v


def _greedy(q):
    return deterministic_policy(np.argmax(q, axis=1), q.shape[1])


def run_mpi(mdp: TabularMDP, m: int = 1, v0=None, stop=Stop(eps=1e-8), keep_iterates=True) -> RunTrace:
    """Exact MPI: greedy improvement then m applications of ``T^π``."""
    m = _check_m(m)
    v_star, _ = _optimum(mdp)

    def step(n, v):
        pi = _greedy(q_from_v(mdp, v))
        return _policy_step_plain(mdp, pi, v, m), pi, 0.0, 0.0, 0.0

    return _loop(mdp, "v", _v0(mdp, v0), step, stop,
                 {"algorithm": "mpi", "m": m, "alpha": None, "schedule": "zero",
                  "gamma": mdp.discount, "v0": _describe(v0), "seed": None},
                 keep_iterates, lambda v: float(np.max(np.abs(v - v_star))))


def run_ampi(mdp: TabularMDP, m: int = 1, v0=None, injector: ErrorInjector | None = None,
             stop=Stop(eps=1e-8), keep_iterates=True) -> RunTrace:
    """MPI with injected evaluation and improvement errors.

    The recorded ``eval_err`` is ``||V_N - (T^{π_N})^m V_{N-1}||`` and
    ``impr_err`` is ``||T* V_{N-1} - T^{π_N} V_{N-1}||``.
    """
    m = _check_m(m)
    inj = injector or ErrorInjector()
    rng = inj.rng()
    v_star, _ = _optimum(mdp)
    S, A = mdp.n_states, mdp.n_actions

    def step(n, v):
        q = q_from_v(mdp, v)
        noisy = q + inj.impr_noise(rng, n, (S, A))
        pi = _greedy(noisy)
        exact = _policy_step_plain(mdp, pi, v, m)
        v_new = mdp.pin(exact + inj.eval_noise(rng, n, S))
        t_star = mdp.pin(q.max(axis=1))
        t_pi = mdp.pin(np.einsum("sa,sa->s", pi, q))
        return (v_new, pi, lambda_at(inj.magnitude, n),
                float(np.max(np.abs(v_new - exact))), float(np.max(t_star - t_pi)))

    return _loop(mdp, "v", _v0(mdp, v0), step, stop,
                 {"algorithm": "ampi", "m": m, "alpha": None, "schedule": inj.magnitude.spec(),
                  "gamma": mdp.discount, "v0": _describe(v0), "seed": inj.seed,
                  "injector": inj.describe()},
                 keep_iterates, lambda v: float(np.max(np.abs(v - v_star))))


def _entropy_term(mdp, pi, lam):
    if lam == 0.0:
        return np.zeros(mdp.n_states)
    return mdp.pin(lam * np.asarray(neg_entropy(pi)))


def run_reg_mpi(mdp: TabularMDP, m: int = 1, v0=None, sched: Schedule | str = "zero",
                stop=Stop(eps=1e-8), keep_iterates=True) -> RunTrace:
    """reg-MPI with entropy regularization: Boltzmann improvement at λ_N and
    m applications of ``T^π_Ω``.  Realized errors are measured against the
    unregularized operators."""
    m = _check_m(m)
    sched = parse_schedule(sched)
    v_star, _ = _optimum(mdp)

    lam_at = _LambdaCache(sched)

    def step(n, v):
        lam = lam_at(n)
        q = q_from_v(mdp, v)
        pi = boltzmann(q, lam)
        omega = _entropy_term(mdp, pi, lam)
        v_new = _policy_step(mdp, pi, v, omega, m)
        exact = _policy_step_plain(mdp, pi, v, m) if m > 1 else mdp.pin(np.einsum("sa,sa->s", pi, q))
        t_star = mdp.pin(q.max(axis=1))
        t_pi = exact if m == 1 else mdp.pin(np.einsum("sa,sa->s", pi, q))
        return (v_new, pi, lam, float(np.max(np.abs(v_new - exact))),
                float(np.max(t_star - t_pi)))

    return _loop(mdp, "v", _v0(mdp, v0), step, stop,
                 {"algorithm": "reg_mpi", "m": m, "alpha": None, "schedule": sched.spec(),
                  "gamma": mdp.discount, "v0": _describe(v0), "seed": None},
                 keep_iterates, lambda v: float(np.max(np.abs(v - v_star))))


def run_soft_vi(mdp: TabularMDP, v0=None, sched: Schedule | str = "zero",
                stop=Stop(eps=1e-8), keep_iterates=True) -> RunTrace:
    """Soft VI: ``V_N = λ_N log Σ_a exp(Q_{V_{N-1}}(·, a) / λ_N)``."""
    sched = parse_schedule(sched)
    v_star, _ = _optimum(mdp)

    lam_at = _LambdaCache(sched)
    R, P, gamma = mdp.rewards, mdp.transitions, mdp.discount

    def step(n, v):
        lam = lam_at(n)
        q = R + gamma * (P @ v)
        v_new, pi = soft_backup(q, lam)
        mdp.pin(v_new)
        t_pi = mdp.pin((pi * q).sum(axis=1))
        t_star = mdp.pin(q.max(axis=1))
        return (v_new, pi, lam, float(np.max(np.abs(v_new - t_pi))),
                float(np.max(t_star - t_pi)))

    return _loop(mdp, "v", _v0(mdp, v0), step, stop,
                 {"algorithm": "soft_vi", "m": 1, "alpha": None, "schedule": sched.spec(),
                  "gamma": mdp.discount, "v0": _describe(v0), "seed": None},
                 keep_iterates, lambda v: float(np.max(np.abs(v - v_star))))


def _pin_q(mdp, q):
    if mdp.has_terminal:
        q[mdp.terminal] = 0.0
    return q


def run_advantage_learning(mdp: TabularMDP, q0=None, alpha: float = 0.0,
                           injector: ErrorInjector | None = None, stop=Stop(eps=1e-8),
                           keep_iterates=True) -> RunTrace:
    """Approximate AL: ``Q_N = T*Q_{N-1} + α(Q_{N-1} - max_a Q_{N-1}) + ε_N``.

    Only the evaluation component of the injector is used; its noise has
    shape (S, A).
    """
    alpha = _check_alpha(alpha)
    inj = injector or ErrorInjector()
    rng = inj.rng()
    _, q_star = _optimum(mdp)
    regret = _Regret(mdp, q_star)
    shape = (mdp.n_states, mdp.n_actions)

    def step(n, q):
        vmax = mdp.pin(q.max(axis=1))
        exact = q_from_v(mdp, vmax) + alpha * (q - vmax[:, None])
        q_new = _pin_q(mdp, exact + inj.eval_noise(rng, n, shape))
        return (q_new, _greedy(q_new), lambda_at(inj.magnitude, n),
                float(np.max(np.abs(q_new - exact))), 0.0)

    return _loop(mdp, "q", _q0(mdp, q0), step, stop,
                 {"algorithm": "al", "m": 1, "alpha": alpha, "schedule": inj.magnitude.spec(),
                  "gamma": mdp.discount, "v0": _describe(q0), "seed": inj.seed,
                  "injector": inj.describe()},
                 keep_iterates, regret)


def run_cvi(mdp: TabularMDP, q0=None, sched: Schedule | str = "zero", alpha: float = 0.0,
            stop=Stop(eps=1e-8), keep_iterates=True) -> RunTrace:
    """CVI: ``Q_N = r + γ P Ω*_N(Q_{N-1}) + α(Q_{N-1} - Ω*_N(Q_{N-1}))``.

    ``eval_err`` records the difference to the unregularized AL update, which
    makes CVI an instance of approximate AL.  The stored policy is the
    Boltzmann policy of Q_N at λ_N; the regret uses the greedy policy on Q_N.
    """
    alpha = _check_alpha(alpha)
    sched = parse_schedule(sched)
    _, q_star = _optimum(mdp)
    regret = _Regret(mdp, q_star)

    lam_at = _LambdaCache(sched)

    def step(n, q):
        lam = lam_at(n)
        soft, _ = soft_backup(q, lam)
        mdp.pin(soft)
        q_new = _pin_q(mdp, q_from_v(mdp, soft) + alpha * (q - soft[:, None]))
        hard = mdp.pin(q.max(axis=1))
        al = _pin_q(mdp, q_from_v(mdp, hard) + alpha * (q - hard[:, None]))
        return (q_new, boltzmann(q_new, lam), lam, float(np.max(np.abs(q_new - al))), 0.0)

    return _loop(mdp, "q", _q0(mdp, q0), step, stop,
                 {"algorithm": "cvi", "m": 1, "alpha": alpha, "schedule": sched.spec(),
                  "gamma": mdp.discount, "v0": _describe(q0), "seed": None},
                 keep_iterates, regret)


def _describe(x0) -> str:
    if x0 is None:
        return "zeros"
    arr = np.asarray(x0, dtype=float)
    return "zeros" if not np.any(arr) else "custom"


def policy_snapshot(trace: RunTrace, n: int) -> list[tuple[int, int, float, int]]:
    """Per-cell ``(col, row, value, best_action)`` at iteration n.

    ``best_action`` is the argmax of ``Q_{V_N}`` (of ``Q_N`` for Q runs) with
    lowest-index tie-breaking.
    """
    layout = trace.mdp.layout
    if not layout or "width" not in layout:
        raise ContractError("no spatial layout: the MDP is not a grid build")
    q = trace.q_values(n)
    v = trace.value(n)
    best = np.argmax(q, axis=1)
    W = layout["width"]
    return [(s % W, s // W, float(v[s]), int(best[s])) for s in range(trace.mdp.n_states)]
