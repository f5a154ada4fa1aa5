"""Built-in worked example: a three-state agent with one unknown input channel.

``GOLDEN`` holds the reference design values; ``run_repro`` rebuilds the
design, simulates observer and swarm, and compares item by item.
"""
import json
from dataclasses import dataclass

import numpy as np

from . import consensus as cs
from .sim import SignalSpec, SimConfig, make_signal, simulate
from .synth import SynthesisConfig, synth_uio_minimal
from .sysmodel import LtiSystem, reconfigure_breve

A = np.array([[0.0, 1.0, 0.0], [1.0, -1.0, 1.0], [0.0, -8.0, 1.0]])
B = np.array([[0.0], [0.0], [1.0]])
C = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
TAU = 1.0

# Feasible Q printed with the example (4 decimals); any feasible Q is acceptable.
PRINTED_Q = np.array([[0.8695, -0.1369, -1.1761],
                      [-0.1369, 0.2512, 0.3033],
                      [-1.1761, 0.3033, 2.9821]])

GOLDEN = {
    "T1": {"value": [[0.0, 1.0, -1.0]], "tol": 1e-9},
    "T2": {"value": [[1.0, -1.0, 0.5]], "tol": 1e-9},
    "N1": {"value": [[1.0, 1.0]], "tol": 1e-9},
    "N2": {"value": [[1.0, -1.0]], "tol": 1e-9},
    "U1": {"value": [[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 0.0, 1.0]], "tol": 1e-9},
    "U2": {"value": [[0.0, 1.0, 0.0], [-1.0, 1.0, 0.5], [0.0, 0.0, 1.0]], "tol": 1e-9},
    "D": {"value": np.hstack([-0.582 * np.eye(3), 1.582 * np.eye(3)]).tolist(), "tol": 1e-3},
    "Ghat": {"value": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]], "tol": 1e-9},
    "eig_GA": {"value": [-1.618, 0.0, 0.618], "tol": 1e-3},
}


def plant():
    """The agent with its input channel treated as the unknown input."""
    return LtiSystem.from_matrices(A, C, B=np.zeros((3, 0)), E=B)


def design_config(tau=TAU, seed=0):
    return SynthesisConfig(tau=tau, sigma=-1.5, M1=[[-1.0]], M2=[[-2.0]], H1=[[1.0, 0.0]],
                           H2=[[1.0, 0.0]], bar1_poles=(-1.0, -1.0), bar2_poles=(-2.0, -2.0),
                           seed=seed)


def load_golden(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class Item:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _compare(name, got, spec):
    want = np.asarray(spec["value"], dtype=float)
    got = np.asarray(got, dtype=float)
    if got.shape != want.shape:
        return Item(name, False, f"shape {got.shape} != {want.shape}")
    diff = float(np.max(np.abs(got - want))) if got.size else 0.0
    return Item(name, diff <= spec["tol"], f"max |diff| {diff:.3e} (tol {spec['tol']:g})")


def run_repro(golden=None, seed=0, tol=1e-5, t_end=20.0, dt=1e-3):
    """Rebuild the example and return a list of :class:`Item`."""
    golden = GOLDEN if golden is None else golden
    design = cs.design_protocol(A, B, C, design_config(seed=seed))
    eig = np.sort(np.linalg.eigvals(design.Ghat @ A).real)
    got = {"T1": design.T1, "T2": design.T2, "N1": design.N1, "N2": design.N2,
           "U1": design.U1, "U2": design.U2, "D": design.D, "Ghat": design.Ghat, "eig_GA": eig}
    items = [_compare(k, got[k], golden[k]) for k in golden if k in got]
    items += [Item(k, False, "unknown golden item") for k in golden if k not in got]

    S = A @ PRINTED_Q + PRINTED_Q @ A.T - 2.0 * B @ B.T
    lam = float(np.linalg.eigvalsh(0.5 * (S + S.T)).max())
    items.append(Item("lmi_printed_Q", lam < 0, f"max eig {lam:.4g}"))
    lam_own = design.lmi_margin(A)
    pq = float(np.max(np.abs(design.P @ design.Q - np.eye(3))))
    items.append(Item("lmi_own_pair", lam_own < 0 and pq <= 1e-8,
                      f"max eig {lam_own:.4g}, |PQ - I| {pq:.1e}"))

    real = synth_uio_minimal(reconfigure_breve(plant()), design_config(seed=seed))
    w = make_signal([SignalSpec("sinusoid", 1, amplitude=1.0, frequency=2.0),
                     SignalSpec("piecewise_constant", 1, switch_times=(0.7, 1.6), seed=seed)])
    res = simulate(plant(), real, None, w, SimConfig(dt=dt, t_end=3.0, seed=seed))
    e = res.max_post_tau_rel_error()
    items.append(Item("observer_exactness", e <= tol, f"max rel error {e:.3e} (tol {tol:g})"))

    g = cs.six_agent_digraph()
    sw = cs.simulate_consensus(g, A, B, C, design, cs.random_init(g.N, design, seed),
                               SimConfig(dt=dt, t_end=t_end, seed=seed))
    es = sw.max_post_tau_rel_error()
    items.append(Item("consensus_estimate", es <= tol, f"max rel error {es:.3e} (tol {tol:g})"))
    r = sw.xi_norm_at(t_end) / sw.xi_norm_at(TAU)
    items.append(Item("consensus_decay", r <= 1e-2, f"|xi({t_end:g})| / |xi(tau)| = {r:.3e}"))
    pre = sw.t < TAU
    items.append(Item("zero_input_before_tau", bool(np.all(sw.u[pre] == 0.0)), "u on [0, tau)"))
    mono = bool(np.all(np.diff(sw.rho, axis=0) >= 0.0))
    items.append(Item("gain_monotone", mono, "rho nondecreasing"))
    return items
