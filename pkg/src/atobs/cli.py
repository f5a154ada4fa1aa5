"""Command-line entry point.

Exit codes: 0 success; 1 unreadable or malformed configuration; 2 existence
conditions fail (assumptions, observability, design conditions, missing
spanning tree); 3 inadmissible tau; 4 divergence; 5 a verification or golden
comparison failed.
"""
import argparse
import json
import os
import sys

from . import __version__
from . import config as cfgio
from .errors import AtobsError, ConfigError, Divergence, TauInadmissible

EXIT_OK, EXIT_CONFIG, EXIT_CONDITION, EXIT_TAU, EXIT_DIVERGE, EXIT_MISMATCH = range(6)


def _out_dir(args, default):
    d = args.out or default
    os.makedirs(d, exist_ok=True)
    return d


def cmd_check(args, out):
    from .sysmodel import check_assumptions
    from .matlib import is_observable

    sc = cfgio.load(args.config)
    sys_ = cfgio.system_from(sc)
    if sys_.has_unknown_input:
        rep = check_assumptions(sys_)
        for k, v in vars(rep).items():
            out.append(f"{k}: {v}")
        ok = rep.cond1_holds and rep.cond2_holds and rep.observability_holds
    else:
        ok = is_observable(sys_.A, sys_.C)
        out.append(f"observability_holds: {ok}")
    out.append("conditions: " + ("hold" if ok else "fail"))
    return EXIT_OK if ok else EXIT_CONDITION, []


def _synthesize(sc, args):
    from .synth import synthesize

    sys_ = cfgio.system_from(sc)
    kind, scfg = cfgio.synthesis_from(sc, args.seed)
    return sys_, synthesize(sys_, kind, scfg)


def cmd_synth(args, out):
    sc = cfgio.load(args.config)
    _, real = _synthesize(sc, args)
    d = _out_dir(args, ".")
    path = os.path.join(d, "realization.json")
    cfgio.save_realization(path, real)
    out.append(f"kind: {real.kind.value}")
    out.append(f"branch_state_dims: {real.branch_state_dims}")
    out.append(f"tau: {real.tau:g}  reciprocal condition: {real.rcond:.3e}")
    out.append(f"wrote {path}")
    return EXIT_OK, [path]


def cmd_simulate(args, out):
    from .sim import make_signal, simulate, verify_appointed_time

    sc = cfgio.load(args.config)
    real_path = sc.section("simulation").get("realization")
    if real_path:
        sys_ = cfgio.system_from(sc)
        base = os.path.dirname(os.path.abspath(args.config))
        real = cfgio.load_realization(os.path.join(base, real_path))
    else:
        sys_, real = _synthesize(sc, args)
    scfg, tol = cfgio.simulation_from(sc, args.seed)
    if args.tol is not None:
        tol = args.tol
    u = cfgio.signals_from(sc, "u", sys_.p)
    w = cfgio.signals_from(sc, "w", sys_.q)
    res = simulate(sys_, real, make_signal(u) if u else None, make_signal(w) if w else None, scfg)
    d = _out_dir(args, ".")
    path = os.path.join(d, "trajectory.csv")
    cfgio.atomic_write(path, res.to_csv())
    err = res.max_post_tau_rel_error()
    ok = verify_appointed_time(res, res.tau, tol, require_onset=False)
    out.append(f"max post-tau relative error: {err:.3e} (tol {tol:g}) {'PASS' if ok else 'FAIL'}")
    out.append(f"wrote {path}")
    return (EXIT_OK if ok else EXIT_MISMATCH), [path]


def cmd_consensus(args, out):
    from . import consensus as cs

    sc = cfgio.load(args.config)
    sys_ = cfgio.system_from(sc)
    g = cfgio.graph_from(sc)
    if not cs.has_directed_spanning_tree(g):
        out.append("graph has no directed spanning tree")
        return EXIT_CONDITION, []
    _, scfg = cfgio.synthesis_from(sc, args.seed)
    simcfg, _ = cfgio.simulation_from(sc, args.seed)
    sec = sc.section("consensus")
    tol = float(args.tol if args.tol is not None else sec.get("tol", 1e-5))
    seed = int(args.seed if args.seed is not None else sec.get("seed", simcfg.seed))
    design = cs.design_protocol(sys_.A, sys_.B, sys_.C, scfg)
    init = cs.random_init(g.N, design, seed, observers=bool(sec.get("random_observers", True)),
                          rho0=float(sec.get("rho0", 1.0)))
    res = cs.simulate_consensus(g, sys_.A, sys_.B, sys_.C, design, init, simcfg)
    d = _out_dir(args, ".")
    paths = []
    for i in range(g.N):
        p = os.path.join(d, f"agent_{i + 1}.csv")
        cfgio.atomic_write(p, res.to_csv(i))
        paths.append(p)
    err = res.max_post_tau_rel_error()
    ok = err <= tol
    out.append(f"max |xi(t_end)|: {res.xi_norm_at(res.t[-1]):.3e}")
    out.append(f"max |xi(tau)|: {res.xi_norm_at(res.tau):.3e}")
    out.append(f"max post-tau estimation error: {err:.3e} (tol {tol:g}) {'PASS' if ok else 'FAIL'}")
    return (EXIT_OK if ok else EXIT_MISMATCH), paths


def cmd_repro(args, out):
    from .reference import load_golden, run_repro

    golden = load_golden(args.golden) if args.golden else None
    items = run_repro(golden, seed=args.seed or 0, tol=1e-5 if args.tol is None else args.tol)
    out.extend(it.line() for it in items)
    ok = all(it.passed for it in items)
    out.append("all golden items PASS" if ok else "golden comparison FAILED")
    paths = []
    if args.out:
        d = _out_dir(args, ".")
        p = os.path.join(d, "repro_report.json")
        cfgio.atomic_write(p, json.dumps([vars(i) for i in items], indent=1) + "\n")
        paths.append(p)
    return (EXIT_OK if ok else EXIT_MISMATCH), paths


COMMANDS = {"check": cmd_check, "synth": cmd_synth, "simulate": cmd_simulate,
            "consensus": cmd_consensus, "repro-example": cmd_repro}


def build_parser():
    ap = argparse.ArgumentParser(prog="atobs", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "repro-example")
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
        if name == "repro-example":
            p.add_argument("--golden", default=None, help="JSON file overriding the built-in values")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = []
    timer = cfgio.Timer()
    paths = []
    with timer:
        try:
            code, paths = COMMANDS[args.command](args, out)
        except ConfigError as e:
            out.append(f"config error: {e}")
            code = EXIT_CONFIG
        except TauInadmissible as e:
            out.append(f"tau inadmissible: {e}")
            if e.suggestions:
                out.append("suggested tau: " + " ".join(f"{s:.6g}" for s in e.suggestions))
            code = EXIT_TAU
        except Divergence as e:
            out.append(f"divergence: {e}")
            code = EXIT_DIVERGE
        except AtobsError as e:
            out.append(f"{type(e).__name__}: {e}")
            code = EXIT_CONDITION
    print("\n".join(out))
    if args.out:
        man = cfgio.RunManifest(command=args.command, config_path=args.config, seed=args.seed,
                                output_dir=args.out, tool_version=__version__,
                                duration_s=round(timer.elapsed, 6), outputs=paths, exit_code=code)
        os.makedirs(args.out, exist_ok=True)
        man.write()
    return code


if __name__ == "__main__":
    sys.exit(main())
