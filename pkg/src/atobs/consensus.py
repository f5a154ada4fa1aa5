"""Attack-free adaptive consensus driven by relative outputs only.

Each agent runs a minimal-order appointed-time unknown input observer of its
own consensus error, treating the neighbours' (unknown) control inputs as
the unknown input, and closes the loop with an adaptive gain after tau.
"""
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, matlib
from .errors import AssumptionViolated, ConfigError, Divergence
from .matlib import rank
from .sim import DIVERGENCE_LIMIT, SimConfig
from .synth import Kind, SynthesisConfig, _static_realization, synth_uio_minimal
from .sysmodel import LtiSystem, reconfigure_breve


@dataclass(frozen=True)
class DiGraph:
    """Weighted digraph; ``adjacency[i, j] > 0`` means agent i measures y_i - y_j."""
    adjacency: np.ndarray

    def __post_init__(self):
        A = np.array(self.adjacency, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigError("adjacency must be square")
        if np.any(A < 0) or not np.all(np.isfinite(A)):
            raise ConfigError("adjacency weights must be finite and nonnegative")
        if np.any(np.diag(A) != 0):
            raise ConfigError("self loops are not allowed")
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)

    @classmethod
    def from_edges(cls, N, edges):
        """Build from ``(i, j)`` pairs (0-based): agent i measures against j."""
        A = np.zeros((N, N))
        for i, j in edges:
            A[i, j] = 1.0
        return cls(A)

    @property
    def N(self):
        return self.adjacency.shape[0]


def laplacian(g):
    A = g.adjacency
    return np.diag(A.sum(axis=1)) - A


def has_directed_spanning_tree(g):
    """True iff some root's information reaches every agent.

    Information flows from j to i when i measures j, so the search follows
    ``a_ij > 0`` from j to i. The BFS verdict is checked against
    ``rank(L) == N - 1``.
    """
    N = g.N
    if N <= 1:
        return True
    A = g.adjacency
    found = False
    for root in range(N):
        seen = {root}
        queue = deque([root])
        while queue:
            j = queue.popleft()
            for i in np.nonzero(A[:, j] > 0)[0]:
                if i not in seen:
                    seen.add(int(i))
                    queue.append(int(i))
        if len(seen) == N:
            found = True
            break
    by_rank = rank(laplacian(g)) == N - 1
    if found != by_rank:
        raise AssertionError("spanning-tree search disagrees with the Laplacian rank")
    return found


def consensus_error(xs, g):
    """xi_i = sum_j a_ij (x_i - x_j) for states shaped (..., N, n)."""
    return np.einsum("ij,...jk->...ik", laplacian(g), np.asarray(xs, dtype=float))


def six_agent_digraph():
    """Six agents, root 0, a directed spanning tree plus two cycles."""
    return DiGraph.from_edges(6, [(1, 0), (2, 1), (3, 1), (4, 3), (5, 4), (2, 3), (3, 5)])


def directed_ring(N=6):
    return DiGraph.from_edges(N, [(i, (i + 1) % N) for i in range(N)])


SHIPPED_GRAPHS = {"six_agent": six_agent_digraph, "ring": directed_ring}


@dataclass(frozen=True)
class ProtocolDesign:
    """Agent-independent observer and feedback matrices of the protocol."""
    tau: float
    M1: np.ndarray
    M2: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    T1: np.ndarray
    T2: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    D: np.ndarray
    Mtilde1: np.ndarray
    Mtilde2: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    Ghat: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    static: np.ndarray
    B: np.ndarray
    realization: object = field(repr=False)

    def lmi_margin(self, A):
        """Largest eigenvalue of A Q + Q A^T - 2 B B^T (negative when feasible)."""
        S = A @ self.Q + self.Q @ A.T - 2.0 * self.B @ self.B.T
        return float(np.linalg.eigvalsh(0.5 * (S + S.T)).max())


def check_protocol_assumption(A, B, C):
    """rank(CB) = rank(B) = p and the Rosenbrock condition with (B, 0) as unknown input."""
    p = B.shape[1]
    if not (rank(C @ B) == rank(B) == p):
        raise AssumptionViolated("rank(CB) = rank(B) = p fails")
    if not matlib.rosenbrock_rank_condition(A, B, C, np.zeros((C.shape[0], p))):
        raise AssumptionViolated("Rosenbrock condition fails for (A, B, C)")


def design_protocol(A, B, C, cfg=None):
    """Observer of the consensus error plus the LMI pair for the feedback.

    The observer is the minimal-order unknown input observer of
    x' = A x + B w, y = C x, so neighbour inputs never need to be known.
    """
    cfg = SynthesisConfig() if cfg is None else cfg
    A = matlib.as_matrix(A)
    B = matlib.as_matrix(B)
    C = matlib.as_matrix(C)
    n = A.shape[0]
    check_protocol_assumption(A, B, C)
    if not matlib.is_observable(A, C):
        raise AssumptionViolated("(A, C) is not observable")
    C0, S = matlib.row_basis_selector(C)
    if C0.shape[0] == n:
        # full measurement: the consensus error is read off the relative outputs
        real = _static_realization(Kind.MINIMAL_UIO, n, C0, np.zeros((n, 0)), S, cfg.tau, cfg)
        G = np.eye(n) - B @ matlib.pinv(C0 @ B) @ C0
    else:
        br = reconfigure_breve(LtiSystem.from_matrices(A, C, B=np.zeros((n, 0)), E=B))
        real = synth_uio_minimal(br, cfg)
        G = br.G
    Q, P = matlib.stabilizing_lmi_pair(A, B)
    mats = real.matrices
    d = real.branch_state_dims[0]
    k = C0.shape[0]
    empty = {"H1": (d, k), "H2": (d, k), "T1": (d, n), "T2": (d, n), "M1hat": (0, 0),
             "M2hat": (0, 0)}
    mats = {**{key: np.zeros(shape) for key, shape in empty.items()}, **mats}
    return ProtocolDesign(
        tau=real.tau, M1=real.A1, M2=real.A2, H1=mats["H1"], H2=mats["H2"],
        T1=mats["T1"], T2=mats["T2"], U1=real.U1, U2=real.U2, D=real.recon_D,
        Mtilde1=mats["M1hat"], Mtilde2=mats["M2hat"], P=P, Q=Q, Ghat=G,
        N1=real.Ny1, N2=real.Ny2, static=real.static_y, B=B, realization=real,
    )


class Agent:
    """One agent's protocol state; its only external input is zeta_i.

    ``zeta`` is the relative output sum_j a_ij (y_i - y_j). Nothing here can
    read a neighbour's observer or gain.
    """

    def __init__(self, design, K, w1, w2, rho):
        real = design.realization
        self.design = design
        self.w1 = np.array(w1, dtype=float)
        self.w2 = np.array(w2, dtype=float)
        self.rho = float(rho)
        self._ring = deque(maxlen=K + 1)
        self._K = K
        self._est_now = real.out_map @ real.w_now
        self._est_del = real.out_map @ real.w_del
        self._inj = real.inj_y
        self.u = np.zeros(design.B.shape[1])
        self.rho_rate = 0.0
        self.xi_hat = None

    def branch_rates(self, zeta, w1, w2):
        d = self.design
        return d.M1 @ w1 + d.N1 @ zeta, d.M2 @ w2 + d.N2 @ zeta

    def sample(self, zeta):
        """Record the grid sample at the current time and refresh u and the gain rate."""
        r = self._inj @ zeta
        self._ring.append(np.concatenate([self.w1, r, self.w2, r]))
        if len(self._ring) <= self._K:
            self.xi_hat = None
            return self.u
        d = self.design
        xh = self._est_now @ self._ring[-1] + self._est_del @ self._ring[0] + d.static @ zeta
        self.xi_hat = xh
        g = d.B.T @ d.P @ xh
        self.u = -(self.rho + xh @ d.P @ xh) * g
        self.rho_rate = float(g @ g)
        return self.u


@dataclass
class SwarmSimResult:
    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    xi_hat: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    tau: float
    defined: np.ndarray

    def max_post_tau_rel_error(self):
        mask = self.defined.astype(bool)
        e = np.linalg.norm(self.xi_hat[mask] - self.xi[mask], axis=2)
        return float(np.max(e / (1.0 + np.linalg.norm(self.xi[mask], axis=2))))

    def xi_norm_at(self, t):
        k = int(np.argmin(np.abs(self.t - t)))
        return float(np.linalg.norm(self.xi[k], axis=1).max())

    def to_csv(self, agent):
        n = self.xi.shape[2]
        p = self.u.shape[2]
        head = (["t"] + [f"xi{j + 1}" for j in range(n)] + [f"xihat{j + 1}" for j in range(n)]
                + ["rho"] + [f"u{j + 1}" for j in range(p)])
        data = np.column_stack([self.t, self.xi[:, agent], self.xi_hat[:, agent],
                                self.rho[:, agent], self.u[:, agent]])
        lines = [",".join(head)]
        lines += [",".join(format(v, ".17g") for v in row) for row in data]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SwarmInit:
    x0: np.ndarray
    w10: np.ndarray
    w20: np.ndarray
    rho0: np.ndarray


def random_init(N, design, seed, observers=True, rho0=1.0):
    """Uniform(-1, 1) agent states, optionally random observer states, rho = rho0."""
    rng = np.random.default_rng(seed)
    n = design.B.shape[0]
    d = design.M1.shape[0]
    x0 = rng.uniform(-1.0, 1.0, (N, n))
    if observers:
        w10, w20 = rng.uniform(-1.0, 1.0, (N, d)), rng.uniform(-1.0, 1.0, (N, d))
    else:
        w10, w20 = np.zeros((N, d)), np.zeros((N, d))
    return SwarmInit(x0, w10, w20, np.full(N, float(rho0)))


def _prepare(g, A, B, C, design, init, cfg):
    if not has_directed_spanning_tree(g):
        raise ConfigError("the graph has no directed spanning tree")
    tau = design.tau if cfg.tau is None else cfg.tau
    if abs(tau - design.tau) > 1e-12 * max(1.0, tau):
        raise ConfigError("SimConfig.tau differs from the design tau")
    K, steps = cfg.steps(tau)
    if init is None:
        init = random_init(g.N, design, cfg.seed, observers=False)
    return tau, K, steps, init


def simulate_consensus(g, A, B, C, design, init=None, cfg=None):
    """Closed-loop swarm: RK4 for states, control and gain rate held per step.

    Parameters
    ----------
    g : DiGraph
    A, B, C : array_like
        Agent dynamics.
    design : ProtocolDesign
    init : SwarmInit, optional
        Defaults to seeded uniform(-1, 1) agent states, zero observers, rho = 1.
    cfg : SimConfig, optional
    """
    cfg = SimConfig(t_end=20.0) if cfg is None else cfg
    A, B, C = (matlib.as_matrix(M) for M in (A, B, C))
    tau, K, steps, init = _prepare(g, A, B, C, design, init, cfg)
    real = design.realization
    c = np.ascontiguousarray
    Xs, XIH, RHO, US, status = _kernels.swarm_loop(
        c(A.T), c(B.T), c(C.T), c(laplacian(g)), c(design.M1.T), c(design.M2.T),
        c(design.N1.T), c(design.N2.T), c(real.inj_y.T), c((real.out_map @ real.w_now).T),
        c((real.out_map @ real.w_del).T), c(design.static.T), c(design.P), c(design.P @ B),
        c(np.asarray(init.x0, dtype=float)), c(np.asarray(init.w10, dtype=float)),
        c(np.asarray(init.w20, dtype=float)), c(np.asarray(init.rho0, dtype=float)),
        float(cfg.dt), int(K), int(steps), float(DIVERGENCE_LIMIT))
    if status >= 0:
        raise Divergence(f"swarm state exceeded {DIVERGENCE_LIMIT:g} at t={status * cfg.dt:g}")
    t = np.arange(steps + 1) * cfg.dt
    defined = (np.arange(steps + 1) >= K).astype(np.int8)
    XIH = XIH.copy()
    XIH[:K] = np.nan
    return SwarmSimResult(t=t, x=Xs, xi=consensus_error(Xs, g), xi_hat=XIH, rho=RHO, u=US,
                          tau=float(tau), defined=defined)


def simulate_consensus_agentwise(g, A, B, C, design, init=None, cfg=None):
    """Same scheme as :func:`simulate_consensus`, one :class:`Agent` object per node.

    Slow; kept as an independent route for cross-checking the vectorized loop.
    """
    cfg = SimConfig(t_end=20.0) if cfg is None else cfg
    A, B, C = (matlib.as_matrix(M) for M in (A, B, C))
    tau, K, steps, init = _prepare(g, A, B, C, design, init, cfg)
    N, h = g.N, cfg.dt
    L = laplacian(g)
    agents = [Agent(design, K, init.w10[i], init.w20[i], init.rho0[i]) for i in range(N)]
    X = np.array(init.x0, dtype=float)
    n, p = A.shape[0], B.shape[1]
    xs = np.zeros((steps + 1, N, n))
    xih = np.full((steps + 1, N, n), np.nan)
    rho = np.zeros((steps + 1, N))
    us = np.zeros((steps + 1, N, p))

    def rates(X, W, U):
        Z = L @ (X @ C.T)
        dX = X @ A.T + U @ B.T
        dW = [agents[i].branch_rates(Z[i], W[i][0], W[i][1]) for i in range(N)]
        return dX, dW

    for k in range(steps + 1):
        Z = L @ (X @ C.T)
        U = np.array([agents[i].sample(Z[i]) for i in range(N)])
        xs[k] = X
        rho[k] = [a.rho for a in agents]
        us[k] = U
        for i, a in enumerate(agents):
            if a.xi_hat is not None:
                xih[k, i] = a.xi_hat
        if k == steps:
            break
        W = [(a.w1, a.w2) for a in agents]

        def shift(W, dW, s):
            return [(W[i][0] + s * dW[i][0], W[i][1] + s * dW[i][1]) for i in range(N)]
        a1, b1 = rates(X, W, U)
        a2, b2 = rates(X + 0.5 * h * a1, shift(W, b1, 0.5 * h), U)
        a3, b3 = rates(X + 0.5 * h * a2, shift(W, b2, 0.5 * h), U)
        a4, b4 = rates(X + h * a3, shift(W, b3, h), U)
        X = X + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        for i, a in enumerate(agents):
            a.w1 = a.w1 + (h / 6.0) * (b1[i][0] + 2 * b2[i][0] + 2 * b3[i][0] + b4[i][0])
            a.w2 = a.w2 + (h / 6.0) * (b1[i][1] + 2 * b2[i][1] + 2 * b3[i][1] + b4[i][1])
            if k >= K:
                a.rho += h * a.rho_rate
        if not np.all(np.isfinite(X)) or np.abs(X).max() > DIVERGENCE_LIMIT:
            raise Divergence(f"swarm state exceeded {DIVERGENCE_LIMIT:g} at t={(k + 1) * h:g}")
    t = np.arange(steps + 1) * h
    defined = (np.arange(steps + 1) >= K).astype(np.int8)
    return SwarmSimResult(t=t, x=xs, xi=consensus_error(xs, g), xi_hat=xih, rho=rho, u=us,
                          tau=float(tau), defined=defined)
