import dataclasses
import os
import subprocess
import sys

import numpy as np
import pytest

from atobs import _kernels
from atobs.errors import ConfigError, Divergence
from atobs.reference import A as A_EX, B as B_EX, C as C_EX, design_config, plant
from atobs.sim import (HistoryBuffer, SignalSpec, SimConfig, make_signal, simulate,
                       verify_appointed_time)
from atobs.synth import Kind, SynthesisConfig, synthesize
from atobs.sysmodel import LtiSystem


def _system(seed, n=4, m=2):
    rng = np.random.default_rng(seed)
    return LtiSystem.from_matrices(rng.standard_normal((n, n)), rng.standard_normal((m, n)),
                                   B=rng.standard_normal((n, 1)))


U_SIN = SignalSpec("sinusoid", 1, amplitude=1.0, frequency=1.0)


# ---------------------------------------------------------------- signals

def test_signal_examples():
    assert not make_signal(SignalSpec("zero", 2))(np.linspace(0, 5, 11)).any()
    assert np.isclose(make_signal(SignalSpec("sinusoid", 1, amplitude=1.0, frequency=2.0))(np.pi / 4)[0, 0], 1.0)
    f = make_signal(SignalSpec("piecewise_constant", 1, switch_times=(1.0,), seed=2))
    v = f(np.array([0.0, 0.5, 0.999, 1.0, 1.5, 3.0]))[:, 0]
    assert v[0] == v[1] == v[2] and v[3] == v[4] == v[5] and v[0] != v[3]
    st = make_signal(SignalSpec("step", 2, amplitude=(1.0, -2.0), switch_times=(0.5,)))
    assert np.array_equal(st(np.array([0.4, 0.5])), [[0.0, 0.0], [1.0, -2.0]])


def test_signal_sum_and_validation():
    f = make_signal([SignalSpec("sinusoid", 1), SignalSpec("step", 1, switch_times=(0.0,))])
    assert np.isclose(f(np.pi / 2)[0, 0], 2.0)
    with pytest.raises(ConfigError):
        SignalSpec("square", 1)
    with pytest.raises(ConfigError):
        make_signal([SignalSpec("zero", 1), SignalSpec("zero", 2)])
    with pytest.raises(ConfigError):
        make_signal(SignalSpec("piecewise_constant", 1, switch_times=(1.0,), values=(1.0,)))
    with pytest.raises(ConfigError):
        make_signal(SignalSpec("sinusoid", 2, amplitude=(1.0, 2.0, 3.0)))


def test_filtered_noise_deterministic_and_bounded():
    spec = SignalSpec("filtered_noise", 2, seed=4, horizon=10.0)
    t = np.linspace(0, 12, 1201)
    a, b = make_signal(spec)(t), make_signal(spec)(t)
    assert np.array_equal(a, b)
    assert np.all(np.isfinite(a)) and np.abs(a).max() < 10
    assert not np.array_equal(a, make_signal(dataclasses.replace(spec, seed=5))(t))
    assert np.array_equal(a[-1], a[-50])  # held beyond the horizon


# ---------------------------------------------------------------- grid

def test_grid_checks():
    assert SimConfig(dt=1e-3, t_end=2.0).steps(0.5) == (500, 2000)
    with pytest.raises(ConfigError):
        SimConfig(dt=0.003, t_end=3.0).steps(1.0)
    with pytest.raises(ConfigError):
        SimConfig(dt=1e-3, t_end=1.0005).steps(0.5)
    with pytest.raises(ConfigError):
        SimConfig(dt=1e-3, t_end=0.5).steps(0.5)
    with pytest.raises(ConfigError):
        SimConfig(dt=0.0).steps(1.0)


def test_history_buffer_exact_delay():
    hb = HistoryBuffer(3, np.zeros(2))
    for k in range(10):
        hb.push(np.array([k, -k]))
        if k >= 3:
            assert np.array_equal(hb.delayed(), [k - 3, 3 - k])
    assert hb.full()


def test_tau_mismatch_rejected():
    s = _system(0)
    real = synthesize(s, Kind.MINIMAL_NOUI, SynthesisConfig(tau=0.5))
    with pytest.raises(ConfigError):
        simulate(s, real, U_SIN, None, SimConfig(tau=0.4, t_end=1.0))


def test_divergence_guard():
    s = LtiSystem.from_matrices([[60.0]], [[1.0]])
    real = synthesize(s, Kind.MINIMAL_NOUI, SynthesisConfig(tau=0.1))
    with pytest.raises(Divergence):
        simulate(s, real, None, None, SimConfig(dt=1e-3, t_end=1.0, x0=np.ones(1)))


# ---------------------------------------------------------------- exactness

def test_static_scalar_observer():
    s = LtiSystem.from_matrices([[-1.0]], [[1.0]])
    real = synthesize(s, Kind.MINIMAL_NOUI, SynthesisConfig(tau=0.2))
    res = simulate(s, real, None, None, SimConfig(dt=1e-3, t_end=1.0))
    assert np.array_equal(res.xhat, res.x) and not res.err.any()


def test_minimal_noui_exact_after_tau():
    s = _system(1)
    real = synthesize(s, Kind.MINIMAL_NOUI, SynthesisConfig(tau=0.5, seed=1))
    res = simulate(s, real, U_SIN, None, SimConfig(dt=1e-3, t_end=1.5, seed=2))
    assert res.max_post_tau_rel_error() <= 1e-6
    assert verify_appointed_time(res, 0.5, 1e-6)
    K = 500
    assert np.all(np.isnan(res.xhat[:K])) and np.all(res.defined[:K] == 0)
    pre = np.linalg.norm(res.xhat_provisional[K - 1] - res.x[K - 1]) / (1 + np.linalg.norm(res.x[K - 1]))
    assert pre > 1e-3


def test_uio_exact_under_unknown_input():
    s = plant()
    real = synthesize(s, Kind.MINIMAL_UIO, design_config())
    w = [SignalSpec("sinusoid", 1, frequency=2.0), SignalSpec("piecewise_constant", 1, switch_times=(0.4, 1.3))]
    res = simulate(s, real, None, w, SimConfig(dt=1e-3, t_end=2.5, seed=1))
    assert res.max_post_tau_rel_error() <= 1e-6 and verify_appointed_time(res, 1.0, 1e-6)


def test_random_observer_initialisation():
    s = _system(2)
    real = synthesize(s, Kind.MINIMAL_NOUI, SynthesisConfig(tau=0.5, seed=0))
    rng = np.random.default_rng(0)
    init = (rng.standard_normal(2), rng.standard_normal(2))
    res = simulate(s, real, U_SIN, None, SimConfig(dt=1e-3, t_end=1.0, observer_init=init))
    assert res.max_post_tau_rel_error() <= 1e-6


# ---------------------------------------------------------------- verify_appointed_time

@pytest.fixture(scope="module")
def full_run():
    s = _system(3)
    real = synthesize(s, Kind.FULL_NOUI, SynthesisConfig(tau=0.5, seed=0))
    res = simulate(s, real, U_SIN, None, SimConfig(dt=1e-3, t_end=1.5, seed=3))
    return s, real, res


def test_verify_exact_trace(full_run):
    assert verify_appointed_time(full_run[2], 0.5, 1e-6)


def test_verify_rejects_single_branch(full_run):
    _, _, res = full_run
    S1 = res.branches[0]  # one Luenberger observer of the full state: only asymptotic
    one = dataclasses.replace(res, xhat=S1.copy(), xhat_provisional=S1.copy())
    assert not verify_appointed_time(one, 0.5, 1e-6)


def test_verify_rejects_spike(full_run):
    _, _, res = full_run
    xh = res.xhat.copy()
    xh[503] += 1e-3
    assert not verify_appointed_time(dataclasses.replace(res, xhat=xh), 0.5, 1e-6)


def test_verify_rejects_exact_from_start(full_run):
    _, _, res = full_run
    fake = dataclasses.replace(res, xhat=res.x.copy(), xhat_provisional=res.x.copy())
    assert not verify_appointed_time(fake, 0.5, 1e-6)
    assert verify_appointed_time(fake, 0.5, 1e-6, require_onset=False)


# ---------------------------------------------------------------- numerics

def test_convergence_order():
    s = _system(4)
    real = synthesize(s, Kind.FULL_NOUI, SynthesisConfig(tau=0.5, seed=0))
    u = SignalSpec("sinusoid", 1, frequency=1.0)
    x0 = np.array([0.5, -0.3, 0.2, 0.1])

    def branch(dt):
        r = simulate(s, real, u, None, SimConfig(dt=dt, t_end=0.5 + 0.05, x0=x0))
        return r.branches[0][:: int(round(0.05 / dt))], r.x[:: int(round(0.05 / dt))]

    ref_b, ref_x = branch(0.05 / 64)
    errs = []
    for dt in (0.05, 0.025):
        b, x = branch(dt)
        errs.append(max(np.abs(b - ref_b).max(), np.abs(x - ref_x).max()))
    ratio = errs[0] / errs[1]
    assert 12.0 < ratio < 20.0


def test_zero_unknown_input_matches_plain_observer():
    # same plant, once with the input channel as unknown input and w = 0,
    # once without it; both reconstruct x, so the estimates agree
    su = plant()
    sp = LtiSystem.from_matrices(A_EX, C_EX)
    a = synthesize(su, Kind.MINIMAL_UIO, design_config())
    b = synthesize(sp, Kind.MINIMAL_NOUI, SynthesisConfig(tau=1.0))
    x0 = np.array([0.3, -0.2, 0.5])
    cfg = SimConfig(dt=1e-3, t_end=2.0, x0=x0)
    ra = simulate(su, a, None, None, cfg)
    rb = simulate(sp, b, None, None, cfg)
    post = ra.defined.astype(bool)
    assert np.array_equal(ra.x, rb.x)
    assert np.max(np.abs(ra.xhat[post] - rb.xhat[post])) <= 1e-8


def test_methodology_residual_minimal_noui():
    s = _system(5)
    real = synthesize(s, Kind.MINIMAL_NOUI, SynthesisConfig(tau=0.5, seed=0))
    res = simulate(s, real, U_SIN, None, SimConfig(dt=1e-3, t_end=1.5, seed=5))
    K = 500
    Phi = real.phi(res.branches[0], res.branches[1], res.y, res.u)
    q = real.U1.shape[0]
    target = np.hstack([res.x @ np.linalg.inv(real.U1).T, res.x @ np.linalg.inv(real.U2).T])
    tilde = target - Phi
    d = real.branch_state_dims[0]
    assert np.max(np.abs(tilde[:, d:q])) <= 1e-12 and np.max(np.abs(tilde[:, q + d:])) <= 1e-12
    E = np.zeros((2 * q, 2 * q))
    E[:q, :q], E[q:, q:] = real.exp1, real.exp2
    pred = tilde[:-K] @ E.T
    scale = 1.0 + np.abs(tilde).max()
    assert np.max(np.abs(tilde[K:] - pred)) <= 1e-5 * scale


def test_csv_deterministic():
    s = _system(6)
    real = synthesize(s, Kind.MINIMAL_DIRECT, SynthesisConfig(tau=0.2, seed=0))
    cfg = SimConfig(dt=1e-3, t_end=0.4, seed=9)
    a = simulate(s, real, U_SIN, None, cfg).to_csv()
    b = simulate(s, real, U_SIN, None, cfg).to_csv()
    assert a == b
    lines = a.splitlines()
    assert lines[0] == "t,x1,x2,x3,x4,xhat1,xhat2,xhat3,xhat4,err,defined"
    assert len(lines) == 402 and lines[1].endswith(",0") and lines[-1].endswith(",1")


# ---------------------------------------------------------------- kernels

def test_kernel_paths_agree():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5)) - 2 * np.eye(5)
    B = rng.standard_normal((5, 2))
    V = rng.standard_normal((201, 2))
    z0 = rng.standard_normal(5)
    Z1, s1 = _kernels.rk4_linear(A, B, z0, V, 0.01, 1e12)
    Z2, s2 = _kernels._rk4_linear(A, B, z0, V, 0.01, 1e12)
    assert s1 == s2 == -1
    assert np.allclose(Z1, Z2, rtol=1e-13, atol=1e-14)


def test_disable_flag_selects_numpy_path():
    env = dict(os.environ, ATOBS_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from atobs import _kernels; print(_kernels.USING_NUMBA)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
