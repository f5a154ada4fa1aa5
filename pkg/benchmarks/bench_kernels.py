"""Time the hot kernels with numba and with the pure-numpy fallback.

Each mode runs in its own interpreter because the backend is chosen when
``atobs._kernels`` is imported. Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from atobs import _kernels, consensus as cs
from atobs.reference import A, B, C, design_config
from atobs.sim import SimConfig

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
Az = rng.standard_normal((12, 12)) - 4.0 * np.eye(12)
Bz = rng.standard_normal((12, 2))
V = rng.standard_normal((2 * 20000 + 1, 2))
z0 = rng.standard_normal(12)

design = cs.design_protocol(A, B, C, design_config())
g = cs.six_agent_digraph()
init = cs.random_init(g.N, design, seed=11)
cfg = SimConfig(dt=1e-3, t_end=5.0)


def best(fn):
    fn()  # first call pays for compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


out = {
    "numba": _kernels.USING_NUMBA,
    "rk4_linear_20k_steps": best(lambda: _kernels.rk4_linear(Az, Bz, z0, V, 1e-3, 1e12)),
    "swarm_6_agents_5000_steps": best(lambda: cs.simulate_consensus(g, A, B, C, design, init, cfg)),
}
print(json.dumps(out))
"""


def run(disable, repeat):
    env = dict(os.environ)
    env.pop("ATOBS_DISABLE_NUMBA", None)
    if disable:
        env["ATOBS_DISABLE_NUMBA"] = "1"
    r = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env,
                       capture_output=True, text=True, check=True)
    return json.loads(r.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    if not fast["numba"]:
        print("numba is not importable; both runs used the numpy path")
    print(f"{'kernel':30s} {'numba [s]':>11s} {'numpy [s]':>11s} {'speedup':>8s}")
    for key in ("rk4_linear_20k_steps", "swarm_6_agents_5000_steps"):
        print(f"{key:30s} {fast[key]:11.4f} {slow[key]:11.4f} {slow[key] / fast[key]:8.1f}")


if __name__ == "__main__":
    main()
