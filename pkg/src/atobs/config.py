"""TOML scenario files, realization JSON, atomic writes and run manifests.

Schema (all sections optional except where a command needs them)::

    [system]        A, C (required); B, D, E, F as nested arrays
    [synthesis]     kind, tau, sigma, seed, M1, M2, H1, H2, branch1_poles,
                    branch2_poles, bar1_poles, bar2_poles, pole_candidates,
                    nominal_dt, admissibility_margin
    [[signals.u]]   kind, amplitude, frequency, phase, switch_times, values, ...
    [[signals.w]]   same fields, for the unknown input
    [simulation]    dt, t_end, x0, seed, tol
    [graph]         adjacency = [[...]] | edges = [[i, j], ...] | shipped = "six_agent"
    [consensus]     seed, rho0, random_observers, tol

Poles are numbers or ``[re, im]`` pairs.
"""
import json
import os
import re
import tempfile
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import tomli

from .errors import ConfigError, ConfigParseError
from .sim import SignalSpec, SimConfig
from .synth import Kind, PairwiseObserverRealization, SynthesisConfig

_SYNTH_SCALARS = {"tau": float, "sigma": float, "seed": int, "pole_candidates": int,
                  "nominal_dt": float, "admissibility_margin": float}
_SYNTH_MATRICES = ("M1", "M2", "H1", "H2")
_SYNTH_POLES = ("branch1_poles", "branch2_poles", "bar1_poles", "bar2_poles")
_SIGNAL_FIELDS = {"kind", "dim", "amplitude", "frequency", "phase", "switch_times", "values",
                  "cutoff", "sample_dt", "horizon", "seed"}


@dataclass
class Scenario:
    """Parsed configuration with the raw text kept for diagnostics."""
    data: dict
    text: str = ""
    path: str = None

    def section(self, name):
        sec = self.data.get(name, {})
        if not isinstance(sec, dict):
            raise self.error(f"[{name}] must be a table", name)
        return sec

    def error(self, message, section=None, key=None, row=None):
        line, col = locate(self.text, section, key, row)
        return ConfigParseError(message, line, col, self.path)

    def matrix(self, section, key, required=False):
        sec = self.section(section)
        if key not in sec:
            if required:
                raise self.error(f"[{section}] needs '{key}'", section)
            return None
        return self._to_matrix(sec[key], section, key)

    def _to_matrix(self, value, section, key):
        if not isinstance(value, list):
            raise self.error(f"{key} must be a nested array", section, key)
        if not value:
            return np.zeros((0, 0))
        if not all(isinstance(r, list) for r in value):
            raise self.error(f"{key} must be an array of rows", section, key)
        width = len(value[0])
        for i, r in enumerate(value):
            if len(r) != width:
                raise self.error(f"{key} row {i + 1} has {len(r)} entries, expected {width}",
                                 section, key, i)
            for v in r:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise self.error(f"{key} row {i + 1} holds a non-number", section, key, i)
        return np.array(value, dtype=float).reshape(len(value), width)


def locate(text, section=None, key=None, row=None):
    """1-based (line, column) of ``key`` inside ``[section]``, or of its ``row``-th row."""
    if not text:
        return 0, 0
    lines = text.splitlines()
    start = 0
    if section:
        pat = re.compile(r"^\s*\[+\s*" + re.escape(section) + r"(\s*\]|\.)")
        for i, ln in enumerate(lines):
            if pat.match(ln):
                start = i
                break
        else:
            return 0, 0
    if key is None:
        return start + 1, 1
    kpat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for i in range(start, len(lines)):
        if kpat.match(lines[i]):
            if row is None:
                return i + 1, lines[i].index(key) + 1
            return _row_position(lines, i, lines[i].index("=") + 1, row)
    return start + 1, 1


def _row_position(lines, li, ci, row):
    depth, seen = 0, -1
    for i in range(li, len(lines)):
        for j in range(ci if i == li else 0, len(lines[i])):
            ch = lines[i][j]
            if ch == "[":
                depth += 1
                if depth == 2:
                    seen += 1
                    if seen == row:
                        return i + 1, j + 1
            elif ch == "]":
                depth -= 1
                if depth == 0:
                    return li + 1, ci + 1
    return li + 1, ci + 1


def parse_text(text, path=None):
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        line, col = getattr(e, "lineno", 0), getattr(e, "colno", 0)
        if not line:
            m = re.search(r"line (\d+), column (\d+)", str(e))
            line, col = (int(m.group(1)), int(m.group(2))) if m else (0, 0)
        msg = re.sub(r"\s*\(at (line \d+, column \d+|end of document)\)", "", str(e))
        raise ConfigParseError(msg, line, col, path) from None
    return Scenario(data=data, text=text, path=path)


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    return parse_text(text, str(path))


def system_from(sc):
    from .sysmodel import LtiSystem

    mats = {k: sc.matrix("system", k) for k in ("B", "E", "D", "F")}
    A = sc.matrix("system", "A", required=True)
    C = sc.matrix("system", "C", required=True)
    try:
        return LtiSystem.from_matrices(A, C, **mats)
    except (ValueError, ConfigError) as e:
        raise sc.error(f"inconsistent system matrices: {e}", "system") from None


def _poles(sc, value, key):
    out = []
    for v in value if isinstance(value, list) else [value]:
        if isinstance(v, list) and len(v) == 2:
            out.append(complex(float(v[0]), float(v[1])))
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            out.append(float(v))
        else:
            raise sc.error(f"{key} entries must be numbers or [re, im] pairs", "synthesis", key)
    return tuple(out)


def synthesis_from(sc, seed=None):
    """``(kind, SynthesisConfig)``; ``seed`` overrides the file value."""
    sec = sc.section("synthesis")
    kw = {}
    for k, conv in _SYNTH_SCALARS.items():
        if k in sec:
            try:
                kw[k] = conv(sec[k])
            except (TypeError, ValueError):
                raise sc.error(f"{k} must be a number", "synthesis", k) from None
    for k in _SYNTH_MATRICES:
        M = sc.matrix("synthesis", k)
        if M is not None:
            kw[k] = M
    for k in _SYNTH_POLES:
        if k in sec:
            kw[k] = _poles(sc, sec[k], k)
    unknown = set(sec) - set(_SYNTH_SCALARS) - set(_SYNTH_MATRICES) - set(_SYNTH_POLES) - {"kind"}
    if unknown:
        raise sc.error(f"unknown synthesis keys: {sorted(unknown)}", "synthesis", sorted(unknown)[0])
    if seed is not None:
        kw["seed"] = int(seed)
    try:
        kind = Kind(sec.get("kind", "MinimalUIO"))
    except ValueError:
        raise sc.error(f"unknown kind {sec.get('kind')!r}; choose from "
                       f"{[k.value for k in Kind]}", "synthesis", "kind") from None
    return kind, SynthesisConfig(**kw)


def signals_from(sc, name, dim):
    """List of SignalSpec for ``signals.<name>`` (dimension filled in), or None."""
    specs = sc.data.get("signals", {}).get(name)
    if not specs:
        return None
    if isinstance(specs, dict):
        specs = [specs]
    out = []
    for s in specs:
        bad = set(s) - _SIGNAL_FIELDS
        if bad:
            raise sc.error(f"unknown signal keys {sorted(bad)}", "signals." + name)
        kw = dict(s)
        kw.setdefault("dim", dim)
        for k in ("switch_times", "values"):
            if k in kw and isinstance(kw[k], list):
                kw[k] = tuple(tuple(v) if isinstance(v, list) else v for v in kw[k])
        try:
            out.append(SignalSpec(**kw))
        except (TypeError, ValueError) as e:
            raise sc.error(f"bad signal: {e}", "signals." + name) from None
    return out


def simulation_from(sc, seed=None):
    sec = dict(sc.section("simulation"))
    tol = float(sec.pop("tol", 1e-6))
    sec.pop("realization", None)
    if "x0" in sec:
        sec["x0"] = np.asarray(sec["x0"], dtype=float)
    if seed is not None:
        sec["seed"] = int(seed)
    try:
        return SimConfig(**sec), tol
    except TypeError as e:
        raise sc.error(f"bad simulation settings: {e}", "simulation") from None


def graph_from(sc):
    from .consensus import SHIPPED_GRAPHS, DiGraph

    sec = sc.section("graph")
    if "adjacency" in sec:
        return DiGraph(sc.matrix("graph", "adjacency"))
    if "edges" in sec:
        N = int(sec.get("agents", 0)) or 1 + max(max(e) for e in sec["edges"])
        return DiGraph.from_edges(N, [tuple(int(v) for v in e) for e in sec["edges"]])
    name = sec.get("shipped", "six_agent")
    if name not in SHIPPED_GRAPHS:
        raise sc.error(f"unknown shipped graph {name!r}", "graph", "shipped")
    return SHIPPED_GRAPHS[name]()


# ---------------------------------------------------------------- output files


def atomic_write(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_realization(path, real):
    atomic_write(path, json.dumps(real.to_dict(), indent=1) + "\n")


def load_realization(path):
    with open(path, encoding="utf-8") as fh:
        return PairwiseObserverRealization.from_dict(json.load(fh))


@dataclass
class RunManifest:
    command: str
    config_path: str
    seed: object
    output_dir: str
    tool_version: str
    duration_s: float = 0.0
    outputs: list = field(default_factory=list)
    exit_code: int = 0

    def write(self):
        atomic_write(os.path.join(self.output_dir, "manifest.json"),
                     json.dumps(asdict(self), indent=1) + "\n")


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        return False
