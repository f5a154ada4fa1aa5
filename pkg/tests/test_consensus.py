import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atobs import consensus as cs
from atobs.errors import AssumptionViolated, ConfigError
from atobs.reference import A, B, C, PRINTED_Q, design_config
from atobs.sim import SimConfig

ONE = np.ones((1, 1))


@pytest.fixture(scope="module")
def design():
    return cs.design_protocol(A, B, C, design_config())


# ---------------------------------------------------------------- graphs

def test_digraph_validation():
    with pytest.raises(ConfigError):
        cs.DiGraph(np.ones((2, 3)))
    with pytest.raises(ConfigError):
        cs.DiGraph(np.eye(2))
    with pytest.raises(ConfigError):
        cs.DiGraph([[0.0, -1.0], [0.0, 0.0]])
    assert cs.DiGraph.from_edges(3, [(1, 0)]).adjacency[1, 0] == 1.0


def test_laplacian_examples():
    assert not cs.laplacian(cs.DiGraph(np.zeros((3, 3)))).any()
    two = cs.DiGraph([[0, 1], [1, 0]])
    assert np.array_equal(cs.laplacian(two), [[1, -1], [-1, 1]])
    chain = cs.DiGraph.from_edges(3, [(0, 1), (1, 2)])  # 1 <- 2 <- 3: agent 3 is the root
    L = cs.laplacian(chain)
    assert np.array_equal(L, [[1, -1, 0], [0, 1, -1], [0, 0, 0]])
    assert not L.sum(axis=1).any() and sum(1 for row in L if not row.any()) == 1


def test_spanning_tree_examples():
    N = 5
    assert cs.has_directed_spanning_tree(cs.DiGraph(np.ones((N, N)) - np.eye(N)))
    assert not cs.has_directed_spanning_tree(cs.DiGraph.from_edges(4, [(0, 1), (1, 0), (2, 3), (3, 2)]))
    star = cs.DiGraph.from_edges(N, [(i, 0) for i in range(1, N)])
    assert cs.has_directed_spanning_tree(star)
    assert np.linalg.matrix_rank(cs.laplacian(star)) == N - 1
    # reversed star: the hub measures everyone, nobody measures the hub
    assert not cs.has_directed_spanning_tree(cs.DiGraph.from_edges(N, [(0, i) for i in range(1, N)]))
    for name, make in cs.SHIPPED_GRAPHS.items():
        assert cs.has_directed_spanning_tree(make()), name


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 7), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
def test_spanning_tree_agrees_with_rank(N, density, seed):
    rng = np.random.default_rng(seed)
    Adj = (rng.random((N, N)) < density).astype(float)
    np.fill_diagonal(Adj, 0.0)
    g = cs.DiGraph(Adj)
    # the function raises if its two decision routes disagree
    assert cs.has_directed_spanning_tree(g) == (np.linalg.matrix_rank(cs.laplacian(g)) == N - 1)


def test_consensus_error_examples():
    g = cs.six_agent_digraph()
    assert not cs.consensus_error(np.ones((6, 3)), g).any()
    two = cs.DiGraph([[0, 1], [1, 0]])
    assert np.array_equal(cs.consensus_error(np.array([[1.0], [0.0]]), two), [[1.0], [-1.0]])
    rng = np.random.default_rng(0)
    xs = rng.standard_normal((6, 3))
    adj = g.adjacency
    direct = np.array([sum(adj[i, j] * (xs[i] - xs[j]) for j in range(6)) for i in range(6)])
    assert np.allclose(cs.consensus_error(xs, g), direct, atol=1e-12)
    stacked = np.kron(cs.laplacian(g), np.eye(3)) @ xs.ravel()
    assert np.allclose(cs.consensus_error(xs, g).ravel(), stacked, atol=1e-12)


# ---------------------------------------------------------------- design

def test_design_example(design):
    assert np.allclose(design.T1, [[0.0, 1.0, -1.0]], atol=1e-9)
    assert np.allclose(design.T2, [[1.0, -1.0, 0.5]], atol=1e-9)
    assert np.allclose(design.N1, [[1.0, 1.0]], atol=1e-9)
    assert np.allclose(design.N2, [[1.0, -1.0]], atol=1e-9)
    assert np.allclose(design.D, np.hstack([-0.582 * np.eye(3), 1.582 * np.eye(3)]), atol=1e-3)
    assert np.allclose(design.Ghat, np.diag([1.0, 1.0, 0.0]), atol=1e-12)
    ev = np.sort(np.linalg.eigvals(design.Ghat @ A).real)
    assert np.allclose(ev, [-1.618, 0.0, 0.618], atol=1e-3)
    assert design.lmi_margin(A) < 0
    S = A @ PRINTED_Q + PRINTED_Q @ A.T - 2 * B @ B.T
    assert np.linalg.eigvalsh(S).max() < 0
    assert np.linalg.eigvalsh(design.Q).min() > 0
    assert np.allclose(design.P @ design.Q, np.eye(3), atol=1e-8)
    for Ti, Mi, Hi in ((design.T1, design.M1, design.H1), (design.T2, design.M2, design.H2)):
        lhs = Ti @ design.Ghat @ A - Mi @ Ti
        assert np.linalg.norm(lhs - Hi @ C) <= 1e-9


def test_design_assumption_violations():
    with pytest.raises(AssumptionViolated):
        cs.design_protocol(A, B, np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))  # C B = 0
    with pytest.raises(AssumptionViolated):
        cs.check_protocol_assumption(A, np.hstack([B, B]), C)


# ---------------------------------------------------------------- protocol structure

def test_agent_sees_only_relative_output():
    params = list(inspect.signature(cs.Agent.sample).parameters)
    assert params == ["self", "zeta"]
    assert list(inspect.signature(cs.Agent.branch_rates).parameters) == ["self", "zeta", "w1", "w2"]
    init = list(inspect.signature(cs.Agent.__init__).parameters)
    assert init == ["self", "design", "K", "w1", "w2", "rho"]


def test_agent_zero_before_tau(design):
    ag = cs.Agent(design, 3, np.zeros(1), np.zeros(1), 1.0)
    for _ in range(3):
        assert not ag.sample(np.ones(2)).any() and ag.xi_hat is None
    ag.sample(np.ones(2))
    assert ag.xi_hat is not None


# ---------------------------------------------------------------- simulation

def test_kernel_matches_agentwise(design):
    g = cs.six_agent_digraph()
    init = cs.random_init(6, design, seed=3)
    cfg = SimConfig(dt=5e-3, t_end=3.0)
    a = cs.simulate_consensus(g, A, B, C, design, init, cfg)
    b = cs.simulate_consensus_agentwise(g, A, B, C, design, init, cfg)
    assert np.allclose(a.x, b.x, rtol=1e-12, atol=1e-12)
    assert np.allclose(a.rho, b.rho, rtol=1e-12, atol=1e-12)
    post = a.defined.astype(bool)
    assert np.allclose(a.xi_hat[post], b.xi_hat[post], rtol=1e-12, atol=1e-12)


def test_identical_initial_states(design):
    g = cs.directed_ring()
    x0 = np.tile([0.3, -0.1, 0.2], (6, 1))
    init = cs.SwarmInit(x0, np.zeros((6, 1)), np.zeros((6, 1)), np.ones(6))
    res = cs.simulate_consensus(g, A, B, C, design, init, SimConfig(dt=1e-3, t_end=2.0))
    post = res.defined.astype(bool)
    assert not res.xi.any() and not res.u.any()
    assert np.max(np.abs(res.xi_hat[post])) <= 1e-12
    assert np.all(res.rho == 1.0)


def test_no_spanning_tree_rejected(design):
    g = cs.DiGraph.from_edges(4, [(0, 1), (1, 0), (2, 3), (3, 2)])
    with pytest.raises(ConfigError):
        cs.simulate_consensus(g, A, B, C, design, None, SimConfig(dt=1e-3, t_end=2.0))


def test_two_scalar_integrators():
    d = cs.design_protocol(np.zeros((1, 1)), ONE, ONE, cs.SynthesisConfig(tau=0.5))
    assert d.realization.is_static
    g = cs.DiGraph([[0, 1], [1, 0]])
    init = cs.SwarmInit(np.array([[1.0], [-0.5]]), np.zeros((2, 0)), np.zeros((2, 0)), np.ones(2))
    res = cs.simulate_consensus(g, np.zeros((1, 1)), ONE, ONE, d, init, SimConfig(dt=1e-3, t_end=10.0))
    post = res.defined.astype(bool)
    e = np.abs(res.xi[post, 0, 0])
    assert np.all(np.diff(e) <= 0) and e[-1] < 1e-8 * e[0]
    assert np.all(res.xi[~post] == res.xi[0])
    assert abs(res.rho[-1, 0] - res.rho[-2000, 0]) <= 1e-10
    other = cs.simulate_consensus_agentwise(g, np.zeros((1, 1)), ONE, ONE, d, init,
                                            SimConfig(dt=1e-3, t_end=10.0))
    assert np.allclose(res.x, other.x, rtol=0, atol=1e-13)


def test_csv_layout(design):
    g = cs.six_agent_digraph()
    res = cs.simulate_consensus(g, A, B, C, design, cs.random_init(6, design, 0),
                                SimConfig(dt=5e-3, t_end=1.5))
    lines = res.to_csv(0).splitlines()
    assert lines[0] == "t,xi1,xi2,xi3,xihat1,xihat2,xihat3,rho,u1"
    assert len(lines) == 302  # header plus 301 samples
