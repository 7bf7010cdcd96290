"""Run configurations, table reproduction, calibration and figure data.

A run config is a JSON object::

    {
      "env": {"type": "cliff", "wind_prob": 0.0, "preset": "table1"},
      "algorithm": "soft_vi",
      "schedule": "geo:1:0.9",
      "stop": {"eps": 1e-8, "rule": "gap"},
      "output": "trace.csv"
    }

``env`` is one of ``{"type": "cliff", "wind_prob", "preset"}``,
``{"type": "file", "path"}`` or ``{"type": "random", "seed", "n_states",
"n_actions", "discount"}``.  Optional keys: ``m``, ``alpha``,
``injector`` (``{"magnitude", "mode", "shape", "seed"}``), ``seed`` (used
as the injector seed when the injector has none) and ``bound``
(``{"include_logA", "variant", "v_max"}``).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import algorithms as alg
from .bounds import (
    al_realized_bound_curve,
    ampi_bound_curve,
    cvi_bound_curve,
    fit_envelope,
    rate_envelope,
    reg_mpi_bound_curve,
)
from .cliff import PRESETS, build_cliff, preset
from .mdp import ContractError, TabularMDP, random_mdp
from .schedule import (
    Constant, Geometric, InverseLog, InversePoly, LogOverN, Schedule,
    classify_regime, parse_schedule,
)

__all__ = [
    "ALGORITHMS",
    "RunConfig",
    "load_config",
    "build_env",
    "execute",
    "bound_curve",
    "TableCell",
    "TableReport",
    "TABLE1_SCHEDULES",
    "TABLE1_WIND",
    "TABLE1_REFERENCE",
    "TABLE2_SCHEDULES",
    "TABLE2_ALPHAS",
    "TABLE2_REFERENCE",
    "TABLE2_COLOURS",
    "table1",
    "table2",
    "calibrate_table1",
    "regime_colour",
    "figure_overlay",
    "figure_snapshots",
]

ALGORITHMS = ("mpi", "ampi", "reg_mpi", "soft_vi", "al", "cvi")
_USES_SCHEDULE = {"reg_mpi", "soft_vi", "cvi"}
_USES_ALPHA = {"al", "cvi"}
_USES_INJECTOR = {"ampi", "al"}
_USES_M = {"mpi", "ampi", "reg_mpi"}
_CONFIG_KEYS = {"env", "algorithm", "m", "alpha", "schedule", "injector", "stop",
                "seed", "output", "bound", "figure", "schedules", "alphas", "runs", "iters"}


@dataclass
class RunConfig:
    env: dict
    algorithm: str
    m: int = 1
    alpha: float | None = None
    schedule: str = "zero"
    injector: dict | None = None
    stop: dict = field(default_factory=lambda: {"eps": 1e-8, "rule": "gap"})
    seed: int = 0
    output: str | None = None
    bound: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ContractError("config must be a JSON object")
        unknown = set(d) - _CONFIG_KEYS
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        for key in ("env", "algorithm"):
            if key not in d:
                raise ContractError(f"config is missing {key!r}")
        algo = d["algorithm"]
        if algo not in ALGORITHMS:
            raise ContractError(f"unknown algorithm {algo!r}; choose from {ALGORITHMS}")
        if "alpha" in d and d["alpha"] is not None and algo not in _USES_ALPHA:
            raise ContractError(f"alpha is only meaningful for al and cvi, not {algo}")
        if "schedule" in d and algo not in _USES_SCHEDULE:
            raise ContractError(f"schedule is only meaningful for reg_mpi, soft_vi and cvi, not {algo}")
        if "injector" in d and algo not in _USES_INJECTOR:
            raise ContractError(f"injector is only meaningful for ampi and al, not {algo}")
        if "m" in d and algo not in _USES_M:
            raise ContractError(f"m is only meaningful for mpi, ampi and reg_mpi, not {algo}")
        cfg = cls(
            env=dict(d["env"]),
            algorithm=algo,
            m=int(d.get("m", 1)),
            alpha=None if d.get("alpha") is None else float(d["alpha"]),
            schedule=str(d.get("schedule", "zero")),
            injector=d.get("injector"),
            stop=dict(d.get("stop", {"eps": 1e-8, "rule": "gap"})),
            seed=int(d.get("seed", 0)),
            output=d.get("output"),
            bound=dict(d.get("bound", {})),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        parse_schedule(self.schedule)
        alg.Stop(**self.stop)
        if self.algorithm in _USES_ALPHA:
            a = 0.0 if self.alpha is None else self.alpha
            if not 0 <= a <= 1:
                raise ContractError("alpha must lie in [0, 1]")
        if self.m < 1:
            raise ContractError("m must be >= 1")
        if self.injector is not None:
            self.make_injector()
        extra = set(self.bound) - {"include_logA", "variant", "v_max"}
        if extra:
            raise ContractError(f"unknown bound options {sorted(extra)}")
        if self.bound.get("variant", "sound_k") not in ("sound_k", "paper_t"):
            raise ContractError("bound variant must be sound_k or paper_t")
        _env_check(self.env)

    def make_injector(self) -> alg.ErrorInjector | None:
        if self.injector is None:
            return None
        spec = dict(self.injector)
        extra = set(spec) - {"magnitude", "mode", "shape", "seed"}
        if extra:
            raise ContractError(f"unknown injector keys {sorted(extra)}")
        spec.setdefault("seed", self.seed)
        return alg.ErrorInjector(**spec)


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ContractError(f"cannot read config {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ContractError(f"config {path} is not valid JSON: {exc}") from None


def _env_check(env: dict) -> None:
    kind = env.get("type")
    if kind == "cliff":
        extra = set(env) - {"type", "wind_prob", "preset"}
        if extra:
            raise ContractError(f"unknown cliff env keys {sorted(extra)}")
        if env.get("preset", "table1") not in PRESETS:
            raise ContractError(f"unknown cliff preset {env.get('preset')!r}")
    elif kind == "file":
        if "path" not in env:
            raise ContractError("file env needs a path")
    elif kind == "random":
        for key in ("n_states", "n_actions"):
            if key not in env:
                raise ContractError(f"random env needs {key}")
    else:
        raise ContractError(f"env type must be cliff, file or random, got {kind!r}")


def build_env(env: dict) -> TabularMDP:
    _env_check(env)
    kind = env["type"]
    if kind == "cliff":
        return build_cliff(preset(env.get("preset", "table1"), float(env.get("wind_prob", 0.0))))
    if kind == "file":
        try:
            return TabularMDP.load(env["path"])
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ContractError(f"cannot load MDP file {env['path']}: {exc}") from None
    return random_mdp(int(env.get("seed", 0)), int(env["n_states"]), int(env["n_actions"]),
                      env.get("discount"))


def execute(cfg: RunConfig, mdp: TabularMDP | None = None, keep_iterates: bool = True) -> alg.RunTrace:
    """Run the configured algorithm and attach the bound column."""
    mdp = mdp if mdp is not None else build_env(cfg.env)
    stop = alg.Stop(**cfg.stop)
    a = cfg.algorithm
    if a == "mpi":
        trace = alg.run_mpi(mdp, cfg.m, stop=stop, keep_iterates=keep_iterates)
    elif a == "ampi":
        trace = alg.run_ampi(mdp, cfg.m, injector=cfg.make_injector(), stop=stop,
                             keep_iterates=keep_iterates)
    elif a == "reg_mpi":
        trace = alg.run_reg_mpi(mdp, cfg.m, sched=cfg.schedule, stop=stop, keep_iterates=keep_iterates)
    elif a == "soft_vi":
        trace = alg.run_soft_vi(mdp, sched=cfg.schedule, stop=stop, keep_iterates=keep_iterates)
    elif a == "al":
        trace = alg.run_advantage_learning(mdp, alpha=cfg.alpha or 0.0, injector=cfg.make_injector(),
                                           stop=stop, keep_iterates=keep_iterates)
    else:
        trace = alg.run_cvi(mdp, sched=cfg.schedule, alpha=cfg.alpha or 0.0, stop=stop,
                            keep_iterates=keep_iterates)
    trace.bound = bound_curve(trace, **cfg.bound)
    return trace


def bound_curve(trace: alg.RunTrace, include_logA: bool = True, variant: str = "sound_k",
                v_max: float | None = None) -> np.ndarray:
    """Bound value at every recorded iteration of a trace."""
    mdp = trace.mdp
    n = trace.n_iters
    if n == 0:
        return np.zeros(0)
    meta = trace.metadata
    algo = meta["algorithm"]
    gamma = mdp.discount
    if algo in ("mpi", "ampi"):
        return ampi_bound_curve(trace.eval_err, trace.impr_err, gamma, trace.init_err, n)
    if algo in ("reg_mpi", "soft_vi"):
        return reg_mpi_bound_curve(meta["schedule"], gamma, meta["m"], trace.init_err, n,
                                   include_logA, mdp.n_actions)
    vm = mdp.v_max if v_max is None else float(v_max)
    if algo == "al":
        return al_realized_bound_curve(trace.eval_err, gamma, meta["alpha"], vm, n)
    return cvi_bound_curve(meta["schedule"], gamma, meta["alpha"], vm, n, variant,
                           include_logA, mdp.n_actions)


# Tables ---------------------------------------------------------------------

TABLE1_SCHEDULES = ("zero", "geo:1:0.45", "geo:1:0.9", "invpoly:1:1", "invpoly:1:0.5")
TABLE1_LABELS = ("0", "(gamma/2)^N", "gamma^N", "1/N", "1/sqrt(N)")
TABLE1_WIND = (0.0, 0.15, 0.3)
TABLE1_REFERENCE = {
    "zero": (18, 24, 31),
    "geo:1:0.45": (29, 27, 32),
    "geo:1:0.9": (166, 55, 54),
    "invpoly:1:1": (15691, 136, 93),
    "invpoly:1:0.5": (247394, 6379, 3440),
}
TABLE2_SCHEDULES = ("geo:1:0.45", "geo:1:0.8", "geo:1:0.9", "invpoly:1:2")
TABLE2_ALPHAS = (0.0, 0.6, 0.95)
TABLE2_REFERENCE = {
    "geo:1:0.45": (167, 156, 399),
    "geo:1:0.8": (179, 168, 399),
    "geo:1:0.9": (208, 197, 399),
    "invpoly:1:2": (1367, 1058, 907),
}
TABLE2_COLOURS = {
    "geo:1:0.45": ("red", "red", "blue"),
    "geo:1:0.8": ("red", "red", "blue"),
    "geo:1:0.9": ("red", "red", "blue"),
    "invpoly:1:2": ("green", "green", "green"),
}
CAP_SENTINEL = "cap-exceeded"


def regime_colour(regime) -> str:
    """Colour class of a CVI regime: red O(Nγ^N), blue O(Nα^N), green slow."""
    if regime.label == "CVIAlmostLinear":
        return "red" if regime.alpha is None or regime.alpha <= regime.gamma else "blue"
    if regime.label in ("SlowLambda", "CVIMeanLambda", "CVIInverseN"):
        return "green"
    return "none"


@dataclass
class TableCell:
    schedule: str
    wind_prob: float
    alpha: float | None
    iterations: int | None
    reference: int | None
    regime: str
    colour: str = ""

    @property
    def rel_err(self) -> float | None:
        if self.iterations is None or not self.reference:
            return None
        return self.iterations / self.reference - 1.0

    def within(self, tol: float) -> bool:
        r = self.rel_err
        return r is not None and abs(r) <= tol + 1e-12


@dataclass
class TableReport:
    name: str
    cells: list
    notes: list = field(default_factory=list)

    HEADER = ("schedule", "wind_prob", "alpha", "iterations", "reference", "rel_err", "regime", "colour")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for c in self.cells:
            w.writerow([
                c.schedule, repr(c.wind_prob), "" if c.alpha is None else repr(c.alpha),
                CAP_SENTINEL if c.iterations is None else c.iterations,
                "" if c.reference is None else c.reference,
                "" if c.rel_err is None else f"{c.rel_err:+.4f}",
                c.regime, c.colour,
            ])
        return buf.getvalue()

    def diff_report(self, tol: float) -> list[str]:
        lines = []
        for c in self.cells:
            if not c.within(tol):
                got = CAP_SENTINEL if c.iterations is None else c.iterations
                rel = "n/a" if c.rel_err is None else f"{c.rel_err:+.1%}"
                where = f"p={c.wind_prob}" if c.alpha is None else f"alpha={c.alpha}"
                lines.append(f"MISMATCH {c.schedule} {where}: got {got}, reference {c.reference} ({rel})")
        return lines

    def cell(self, schedule: str, wind_prob: float = 0.0, alpha: float | None = None) -> TableCell:
        for c in self.cells:
            if c.schedule == schedule and c.wind_prob == wind_prob and c.alpha == alpha:
                return c
        raise KeyError((schedule, wind_prob, alpha))


def _count_soft_vi(args) -> int | None:
    preset_name, p, sched, eps, cap = args
    mdp = build_cliff(preset(preset_name, p))
    stop = alg.Stop(eps=eps, rule="gap", max_iters=cap)
    try:
        trace = alg.run_soft_vi(mdp, sched=sched, stop=stop, keep_iterates=False)
    except alg.CapExceeded:
        return None
    return trace.count if trace.converged else None


def _count_cvi(args) -> int | None:
    preset_name, p, sched, alpha, eps, cap = args
    mdp = build_cliff(preset(preset_name, p))
    stop = alg.Stop(eps=eps, rule="gap", max_iters=cap)
    try:
        trace = alg.run_cvi(mdp, sched=sched, alpha=alpha, stop=stop, keep_iterates=False)
    except alg.CapExceeded:
        return None
    return trace.count if trace.converged else None


def _pmap(fn, jobs, workers: int | None):
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(fn, jobs))


def table1(eps: float = 1e-8, preset_name: str = "table1", workers: int | None = None,
           schedules=TABLE1_SCHEDULES, winds=TABLE1_WIND, cap: int | None = None) -> TableReport:
    """Soft VI iteration counts over schedules x wind probabilities (γ = 0.9)."""
    cap = cap or alg.hard_cap()
    jobs = [(preset_name, p, s, eps, cap) for s in schedules for p in winds]
    counts = _pmap(_count_soft_vi, jobs, workers)
    gamma = PRESETS[preset_name].discount
    cells = []
    for (pn, p, s, _, _), n in zip(jobs, counts):
        ref = TABLE1_REFERENCE.get(s)
        ref = ref[TABLE1_WIND.index(p)] if ref and p in TABLE1_WIND else None
        regime = classify_regime(parse_schedule(s), gamma)
        cells.append(TableCell(s, p, None, n, ref, regime.label))
    return TableReport("table1", cells)


def table2(eps: float = 1e-8, preset_name: str = "table2", workers: int | None = None,
           schedules=TABLE2_SCHEDULES, alphas=TABLE2_ALPHAS, cap: int | None = None) -> TableReport:
    """CVI iteration counts over schedules x α on the deterministic cliff."""
    cap = cap or alg.hard_cap()
    jobs = [(preset_name, 0.0, s, a, eps, cap) for s in schedules for a in alphas]
    counts = _pmap(_count_cvi, jobs, workers)
    gamma = PRESETS[preset_name].discount
    cells = []
    for (_, _, s, a, _, _), n in zip(jobs, counts):
        ref = TABLE2_REFERENCE.get(s)
        ref = ref[TABLE2_ALPHAS.index(a)] if ref and a in TABLE2_ALPHAS else None
        regime = classify_regime(parse_schedule(s), gamma, a)
        cells.append(TableCell(s, 0.0, a, n, ref, regime.label, regime_colour(regime)))
    return TableReport("table2", cells)


# Calibration ------------------------------------------------------------------

def _scaled(sched: Schedule, c: float) -> Schedule | None:
    if isinstance(sched, Geometric):
        return Geometric(sched.c * c, sched.q)
    if isinstance(sched, InversePoly):
        return InversePoly(sched.c * c, sched.k)
    if isinstance(sched, (Constant, InverseLog, LogOverN)):
        return type(sched)(sched.c * c)
    return None


@dataclass
class Calibration:
    schedule: str
    constant: float | None
    counts: tuple
    references: tuple
    max_rel_err: float
    within_10: bool
    note: str = ""

    def line(self) -> str:
        if self.constant is None:
            return f"{self.schedule}: no multiplicative constant to calibrate ({self.note})"
        status = "PASS" if self.within_10 else "FAIL"
        extra = f" ({self.note})" if self.note else ""
        bound = ">=" if self.note else "="
        return (f"{self.schedule}: best c={self.constant:.4g} counts={list(self.counts)} "
                f"reference={list(self.references)} max|rel|{bound}{self.max_rel_err:.1%} [{status}]{extra}")


CHEAP_CELL = 10_000


def _row_score(preset_name, sched, c, winds, refs, eps, budget):
    """Max relative error of a row at constant c; aborts once above ``budget``."""
    s = _scaled(sched, c)
    counts = [None] * len(winds)
    worst = 0.0
    # cheapest cells first so expensive ones are skipped once the row is lost
    for i in sorted(range(len(winds)), key=lambda i: refs[i]):
        # caps loose enough that near misses are measured, not just flagged
        slack = max(budget, 0.25) if refs[i] > CHEAP_CELL else max(budget, 9.0)
        cap = max(1, math.ceil((1.0 + slack) * refs[i]))
        n = _count_soft_vi((preset_name, winds[i], s, eps, cap))
        counts[i] = n
        # a capped cell missed by at least cap/ref - 1
        err = abs(n / refs[i] - 1.0) if n is not None else cap / refs[i] - 1.0
        worst = max(worst, err)
        if n is None or worst > budget:
            return worst, counts
    return worst, counts


def calibrate_table1(report: TableReport | None = None, tol: float = 0.25, eps: float = 1e-8,
                     preset_name: str = "table1", grid: int = 13, refine: int = 6,
                     rows=None, budget: float = 1.0) -> list[Calibration]:
    """Scan c in [0.25, 4] for every row with a cell outside ``tol``.

    A row is abandoned at a given c as soon as one cell misses its reference
    by more than ``budget`` (or by more than the best row so far); abandoned
    rows report the cells run so far.
    """
    if rows is None:
        report = report or table1(eps, preset_name)
        rows = [s for s in TABLE1_SCHEDULES
                if any(not c.within(tol) for c in report.cells if c.schedule == s)]
    out = []
    for s_text in rows:
        sched = parse_schedule(s_text)
        refs = TABLE1_REFERENCE[s_text]
        if _scaled(sched, 1.0) is None:
            out.append(Calibration(s_text, None, (), refs, math.inf, False,
                                   "schedule has no multiplicative constant"))
            continue
        best = (math.inf, None, None)
        for c in np.geomspace(0.25, 4.0, grid):
            score, counts = _row_score(preset_name, sched, float(c), TABLE1_WIND, refs, eps,
                                       min(budget, best[0]))
            if score < best[0]:
                best = (score, float(c), counts)
        if best[1] is not None:
            step = (4.0 / 0.25) ** (1.0 / (grid - 1))
            for c in np.geomspace(best[1] / step, best[1] * step, refine):
                if not 0.25 <= c <= 4.0:
                    continue
                score, counts = _row_score(preset_name, sched, float(c), TABLE1_WIND, refs, eps, best[0])
                if score < best[0]:
                    best = (score, float(c), counts)
        score, c, counts = best
        if c is None:
            out.append(Calibration(s_text, None, (), refs, math.inf, False, "no finite score"))
            continue
        note = "" if None not in counts else "row abandoned early"
        out.append(Calibration(s_text, c, tuple(counts), refs, score, score <= 0.10 + 1e-12, note))
    return out


# Figures ----------------------------------------------------------------------

OVERLAY_HEADER = ("schedule", "alpha", "iter", "empirical", "bound", "envelope")
SNAPSHOT_SERIES_HEADER = ("algorithm", "iter", "col", "row", "value", "best_action")


def figure_overlay(d: dict) -> tuple[str, list]:
    """Long-format error/bound/envelope CSV for each schedule (and α for CVI)."""
    base = {k: v for k, v in d.items() if k not in ("figure", "schedules", "alphas", "output")}
    schedules = d.get("schedules") or [d.get("schedule", "zero")]
    alphas = d.get("alphas") or [d.get("alpha")]
    mdp = build_env(base["env"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OVERLAY_HEADER)
    fits = []
    for s in schedules:
        for a in alphas:
            spec = dict(base, schedule=s)
            if a is not None:
                spec["alpha"] = a
            cfg = RunConfig.from_dict(spec)
            trace = execute(cfg, mdp, keep_iterates=False)
            regime = classify_regime(parse_schedule(s), mdp.discount,
                                     cfg.alpha if cfg.algorithm in _USES_ALPHA else None)
            env_col = np.full(trace.iters.size, np.nan)
            if regime.classified and trace.iters.size:
                fit = fit_envelope(regime, trace.iters, trace.sup_err, parse_schedule(s))
                fits.append({"schedule": s, "alpha": a, **json.loads(fit.to_json())})
                env_col = np.asarray(rate_envelope(regime, trace.iters, fit.constant,
                                                   parse_schedule(s)), dtype=float)
            for n, e, b, v in zip(trace.iters, trace.sup_err, trace.bound, env_col):
                w.writerow([s, "" if a is None else repr(a), int(n), repr(float(e)),
                            repr(float(b)), "" if math.isnan(v) else repr(float(v))])
    return buf.getvalue(), fits


def figure_snapshots(d: dict) -> str:
    """Figure-3 style series of per-cell value and best action."""
    mdp = build_env(d["env"])
    iters = [int(n) for n in d.get("iters", [1, 2, 3, 5, 10, 20])]
    runs = d.get("runs") or [{"algorithm": "mpi"}, {"algorithm": "soft_vi", "schedule": "geo:1:0.9"}]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SNAPSHOT_SERIES_HEADER)
    for run in runs:
        spec = {"env": d["env"], "stop": d.get("stop", {"eps": 1e-8, "rule": "gap"}), **run}
        cfg = RunConfig.from_dict(spec)
        trace = execute(cfg, mdp)
        label = run["algorithm"] if "schedule" not in run else f"{run['algorithm']}:{run['schedule']}"
        for n in sorted({n for n in iters if n <= trace.n_iters} | {trace.n_iters}):
            for col, row, val, act in alg.policy_snapshot(trace, n):
                w.writerow([label, n, col, row, repr(val), act])
    return buf.getvalue()
