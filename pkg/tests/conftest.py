import numpy as np
import pytest

from regdp.mdp import TabularMDP, random_mdp


def make_m2(discount: float = 0.5) -> TabularMDP:
    """Two states, two actions, deterministic.

    s0: a0 -> s0 (r=0), a1 -> s1 (r=1);  s1: a0 -> s1 (r=1), a1 -> s0 (r=0).
    """
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = 1.0
    P[0, 1, 1] = 1.0
    P[1, 0, 1] = 1.0
    P[1, 1, 0] = 1.0
    r = np.array([[0.0, 1.0], [1.0, 0.0]])
    return TabularMDP(P, r, discount)


@pytest.fixture
def m2():
    return make_m2()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_mdps(count: int, seed: int = 42, max_states: int = 6, max_actions: int = 4):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        S = int(rng.integers(1, max_states + 1))
        A = int(rng.integers(1, max_actions + 1))
        out.append(random_mdp(rng, S, A, sparsity=float(rng.choice([0.0, 0.5]))))
    return out


def random_policy(rng, S: int, A: int) -> np.ndarray:
    return rng.dirichlet(np.ones(A), size=S)
