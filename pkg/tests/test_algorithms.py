import io
import math

import numpy as np
import pytest

from regdp.algorithms import (
    TRACE_HEADER, CapExceeded, ErrorInjector, Stop, policy_snapshot, run_advantage_learning,
    run_ampi, run_cvi, run_mpi, run_reg_mpi, run_soft_vi,
)
from regdp.cliff import DOWN, RIGHT, UP, build_cliff, preset, state_index
from regdp.mdp import ContractError, exact_optimal, policy_evaluation_exact, q_from_v
from regdp.schedule import lambda_at, parse_schedule

from conftest import make_m2, random_mdps

STEPS = Stop(max_iters=40)


def assert_same_values(a, b, tol=1e-12):
    assert a.n_iters == b.n_iters
    for n in range(a.n_iters + 1):
        np.testing.assert_allclose(a.value(n), b.value(n), atol=tol, rtol=0)


class TestStop:
    def test_needs_a_rule(self):
        with pytest.raises(ContractError):
            Stop()

    def test_bad_rule(self):
        with pytest.raises(ContractError):
            Stop(eps=1e-3, rule="other")

    def test_max_iters(self, m2):
        tr = run_mpi(m2, stop=Stop(max_iters=7))
        assert tr.n_iters == 7 and tr.count == 8
        np.testing.assert_array_equal(tr.iters, np.arange(1, 8))

    def test_eps_opt(self, m2):
        tr = run_mpi(m2, stop=Stop(eps=1e-6))
        assert tr.converged and tr.final_err < 1e-6 and tr.sup_err[-2] >= 1e-6

    def test_eps_gap(self, m2):
        tr = run_mpi(m2, stop=Stop(eps=1e-6, rule="gap"))
        assert tr.converged and tr.gap[-1] < 1e-6 and tr.gap[-2] >= 1e-6

    def test_cap(self, m2, monkeypatch):
        monkeypatch.setenv("REGDP_MAX_ITERS", "5")
        with pytest.raises(CapExceeded) as info:
            run_mpi(m2, stop=Stop(eps=1e-14))
        assert info.value.trace.n_iters == 5

    def test_bad_cap(self, m2, monkeypatch):
        monkeypatch.setenv("REGDP_MAX_ITERS", "lots")
        with pytest.raises(ContractError):
            run_mpi(m2, stop=STEPS)


class TestMPI:
    def test_m2_contraction(self):
        mdp = make_m2()
        tr = run_mpi(mdp, stop=Stop(eps=1e-12))
        errs = np.concatenate([[tr.init_err], tr.sup_err])
        assert np.all(errs[1:] <= mdp.discount * errs[:-1] + 1e-15)

    def test_monotone_on_random_mdps(self):
        for mdp in random_mdps(20, seed=3):
            tr = run_mpi(mdp, stop=Stop(max_iters=60))
            errs = np.concatenate([[tr.init_err], tr.sup_err])
            assert np.all(errs[1:] <= mdp.discount * errs[:-1] + 1e-12)

    def test_policy_iteration_limit(self):
        """m=1000 on M2 is optimal after at most two improvements.

        Enumerating the four deterministic policies gives the oracle.
        """
        import itertools
        from regdp.mdp import deterministic_policy
        mdp = make_m2()
        values = {acts: policy_evaluation_exact(mdp, deterministic_policy(acts, 2))
                  for acts in itertools.product(range(2), repeat=2)}
        best = max(values, key=lambda a: values[a].sum())
        tr = run_mpi(mdp, m=1000, stop=Stop(max_iters=2))
        assert tuple(tr.policies[2].argmax(axis=1)) == best
        np.testing.assert_allclose(tr.final, values[best], atol=1e-12)

    def test_v0_shape(self, m2):
        with pytest.raises(ContractError):
            run_mpi(m2, v0=np.zeros(3), stop=STEPS)

    def test_bad_m(self, m2):
        with pytest.raises(ContractError):
            run_mpi(m2, m=0, stop=STEPS)

    def test_exact_vi_on_cliff(self):
        tr = run_mpi(build_cliff(preset("table1", 0.0)), stop=Stop(eps=1e-8))
        assert tr.converged
        assert tr.final_err < 1e-8


class TestReductions:
    """Each identity holds to 1e-12 per iteration on 50 random MDPs."""

    MDPS = random_mdps(50, seed=21)

    @pytest.mark.parametrize("sched", ["geo:1:0.7", "invpoly:1:1", "const:0.3"])
    def test_soft_vi_is_reg_mpi_m1(self, sched):
        for mdp in self.MDPS:
            assert_same_values(run_soft_vi(mdp, sched=sched, stop=STEPS),
                               run_reg_mpi(mdp, m=1, sched=sched, stop=STEPS))

    @pytest.mark.parametrize("m", [1, 3])
    def test_reg_mpi_zero_is_mpi(self, m):
        for mdp in self.MDPS:
            assert_same_values(run_reg_mpi(mdp, m=m, sched="zero", stop=STEPS),
                               run_mpi(mdp, m=m, stop=STEPS))

    def test_cvi_alpha0_zero_is_vi(self):
        for mdp in self.MDPS:
            cvi = run_cvi(mdp, sched="zero", alpha=0.0, stop=STEPS)
            vi = run_mpi(mdp, stop=STEPS)
            for n in range(1, STEPS.max_iters + 1):
                np.testing.assert_allclose(cvi.q_values(n), q_from_v(mdp, vi.value(n - 1)), atol=1e-12, rtol=0)

    def test_al_alpha0_is_approximate_vi(self):
        for mdp in self.MDPS:
            al = run_advantage_learning(mdp, alpha=0.0, stop=STEPS)
            vi = run_ampi(mdp, m=1, injector=ErrorInjector(), stop=STEPS)
            for n in range(1, STEPS.max_iters + 1):
                np.testing.assert_allclose(al.q_values(n), q_from_v(mdp, vi.value(n - 1)), atol=1e-12, rtol=0)

    def test_zero_injector_is_mpi(self):
        for mdp in self.MDPS[:20]:
            for m in (1, 2):
                a = run_ampi(mdp, m=m, injector=ErrorInjector(), stop=STEPS)
                b = run_mpi(mdp, m=m, stop=STEPS)
                assert_same_values(a, b, tol=0.0)


class TestInjector:
    @pytest.mark.parametrize("shape", ["constant_sign", "signed_uniform"])
    def test_magnitudes(self, shape):
        cliff = build_cliff(preset("table1", 0.15))
        inj = ErrorInjector("geo:0.5:0.9", mode="both", shape=shape, seed=3)
        tr = run_ampi(cliff, injector=inj, stop=Stop(max_iters=150))
        r = np.array([lambda_at(inj.magnitude, int(n)) for n in tr.iters])
        assert np.all(tr.eval_err <= r + 1e-12)
        assert np.all(tr.impr_err <= 2 * r + 1e-12)

    def test_constant_sign_is_exact(self):
        inj = ErrorInjector("invpoly:1:1", mode="eval_only", seed=0)
        tr = run_ampi(make_m2(0.9), injector=inj, stop=Stop(max_iters=50))
        np.testing.assert_allclose(tr.eval_err, 1.0 / tr.iters, rtol=1e-12)

    def test_determinism(self):
        mdp = random_mdps(1, seed=8)[0]
        inj = ErrorInjector("const:0.1", mode="both", shape="signed_uniform", seed=17)
        a = run_ampi(mdp, m=2, injector=inj, stop=Stop(max_iters=30))
        b = run_ampi(mdp, m=2, injector=inj, stop=Stop(max_iters=30))
        for n in range(31):
            np.testing.assert_array_equal(a.value(n), b.value(n))
        np.testing.assert_array_equal(a.sup_err, b.sup_err)

    def test_seed_matters(self):
        mdp = random_mdps(1, seed=8)[0]
        runs = [run_ampi(mdp, injector=ErrorInjector("const:0.1", shape="signed_uniform", seed=s),
                         stop=Stop(max_iters=5)) for s in (1, 2)]
        assert not np.array_equal(runs[0].final, runs[1].final)

    def test_invalid(self):
        with pytest.raises(ContractError):
            ErrorInjector(mode="sometimes")
        with pytest.raises(ContractError):
            ErrorInjector(shape="round")


class TestRegularizedRuns:
    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_realized_error_bounds(self, m):
        """||ε_t|| <= (1-γ^m)/(1-γ) λ_t log|A| and ||ε'_t|| <= λ_t log|A|."""
        for mdp in random_mdps(15, seed=30 + m):
            tr = run_reg_mpi(mdp, m=m, sched="geo:2:0.8", stop=Stop(max_iters=40))
            g, logA = mdp.discount, math.log(mdp.n_actions)
            cap = tr.lambdas * logA
            assert np.all(tr.eval_err <= (1 - g ** m) / (1 - g) * cap + 1e-12)
            assert np.all(tr.impr_err <= cap + 1e-12)

    def test_soft_vi_table1_cells(self):
        mdp = build_cliff(preset("table1", 0.0))
        tr = run_soft_vi(mdp, sched="geo:1:0.9", stop=Stop(eps=1e-8, rule="gap"))
        assert tr.count == pytest.approx(166, rel=0.25)

    def test_fixed_temperature_plateau(self):
        mdp = build_cliff(preset("table1", 0.0))
        tr = run_soft_vi(mdp, sched="const:0.01", stop=Stop(max_iters=600))
        tail = tr.sup_err[-100:]
        assert tail.min() > 1e-6
        assert np.ptp(tail) < 1e-10

    def test_geometric_reaches_tiny_error(self):
        mdp = build_cliff(preset("table1", 0.0))
        tr = run_soft_vi(mdp, sched="geo:1:0.9", stop=Stop(max_iters=600))
        assert tr.final_err < 1e-12

    def test_cvi_policy_is_boltzmann(self):
        from regdp.regularize import boltzmann
        mdp = random_mdps(1, seed=2)[0]
        tr = run_cvi(mdp, sched="geo:1:0.5", alpha=0.6, stop=Stop(max_iters=10))
        np.testing.assert_allclose(tr.policies[10], boltzmann(tr.q_values(10), tr.lambdas[-1]))


class TestAdvantageLearning:
    def test_gap_increasing(self):
        mdp = build_cliff(preset("table1", 0.0))
        base = run_advantage_learning(mdp, alpha=0.0, stop=Stop(max_iters=100))
        wide = run_advantage_learning(mdp, alpha=0.6, stop=Stop(max_iters=100))
        for n in range(1, 101):
            q0, q1 = base.q_values(n), wide.q_values(n)
            gap0 = q0.max(axis=1, keepdims=True) - q0
            gap1 = q1.max(axis=1, keepdims=True) - q1
            assert np.all(gap1 >= gap0 - 1e-9)

    def test_alpha_one_inverse_n(self):
        mdp = make_m2(0.9)
        # regret sits under the α=1 bound, whose N-scaled value stays bounded
        from regdp.bounds import al_realized_bound_curve
        tr = run_advantage_learning(mdp, alpha=1.0, stop=Stop(max_iters=2000))
        bound = al_realized_bound_curve(np.zeros(2000), 0.9, 1.0, mdp.v_max, 2000)
        assert np.all(tr.sup_err <= bound + 1e-12)
        scaled = tr.iters * bound
        # N Γ_N = N/(N+1) Σ γ^{N-t} < 1/(1-γ)
        assert scaled.max() <= 2 * 0.9 * mdp.v_max / 0.1 + 1e-9
        assert tr.sup_err[-1] < 1e-9

    def test_regret_is_greedy_policy_regret(self):
        mdp = random_mdps(1, seed=12)[0]
        tr = run_advantage_learning(mdp, alpha=0.3, stop=Stop(max_iters=3))
        _, pi_star = exact_optimal(mdp)
        v_star = policy_evaluation_exact(mdp, pi_star)
        q = tr.q_values(3)
        from regdp.mdp import deterministic_policy
        pi = deterministic_policy(q.argmax(axis=1), mdp.n_actions)
        v_pi = policy_evaluation_exact(mdp, pi)
        expected = np.max(np.abs(q_from_v(mdp, v_pi) - q_from_v(mdp, v_star)))
        assert tr.sup_err[-1] == pytest.approx(expected, abs=1e-9)

    def test_bad_alpha(self, m2):
        with pytest.raises(ContractError):
            run_advantage_learning(m2, alpha=1.5, stop=STEPS)
        with pytest.raises(ContractError):
            run_cvi(m2, alpha=-0.1, stop=STEPS)


class TestTraceExport:
    def test_csv_header_and_rows(self, m2):
        tr = run_mpi(m2, stop=Stop(max_iters=4))
        buf = io.StringIO()
        tr.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == ",".join(TRACE_HEADER)
        assert len(lines) == 5
        assert lines[1].split(",")[0] == "1"

    def test_metadata(self):
        tr = run_cvi(make_m2(), sched="geo:1:0.45", alpha=0.6, stop=STEPS)
        md = tr.metadata
        assert md["algorithm"] == "cvi" and md["alpha"] == 0.6 and md["schedule"] == parse_schedule("geo:1:0.45").spec()

    def test_missing_iterate(self, m2):
        tr = run_mpi(m2, stop=STEPS, keep_iterates=False)
        tr.value(tr.n_iters)
        with pytest.raises(ContractError):
            tr.value(3)

    def test_thinning_keeps_final(self, monkeypatch):
        import regdp.algorithms as alg
        monkeypatch.setattr(alg, "DENSE_LIMIT", 50)
        tr = run_mpi(make_m2(0.99), stop=Stop(max_iters=400))
        kept = sorted(tr.iterates)
        assert kept[:51] == list(range(51))
        assert 400 in kept and len(kept) < 200


class TestSnapshot:
    def test_non_grid(self, m2):
        with pytest.raises(ContractError):
            policy_snapshot(run_mpi(m2, stop=STEPS), 1)

    def test_layout(self):
        tr = run_mpi(build_cliff(preset("table1")), stop=Stop(eps=1e-8))
        snap = policy_snapshot(tr, tr.n_iters)
        assert len(snap) == 24
        assert snap[state_index(2, 1)][:2] == (2, 1)

    def test_converged_route_hugs_the_cliff(self):
        tr = run_mpi(build_cliff(preset("table1")), stop=Stop(eps=1e-8))
        best = {(c, r): a for c, r, _, a in policy_snapshot(tr, tr.n_iters)}
        # start goes up, then right along row 1, then down into the goal
        assert best[(0, 0)] == UP
        assert all(best[(c, 1)] == RIGHT for c in range(5))
        assert best[(5, 1)] == DOWN

    def test_early_soft_vi_avoids_edge(self):
        tr = run_soft_vi(build_cliff(preset("table1")), sched="geo:1:0.9", stop=Stop(max_iters=5))
        best = {(c, r): a for c, r, _, a in policy_snapshot(tr, 3)}
        assert any(best[(c, 1)] == UP for c in range(1, 5))
