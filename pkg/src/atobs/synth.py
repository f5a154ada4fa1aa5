"""Synthesis of pairwise appointed-time observers.

All six observer variants are returned as one data structure,
:class:`PairwiseObserverRealization`. Two stable branches

    s_i' = A_i s_i + Ny_i y + Nu_i u,        i = 1, 2

feed a stacked signal ``phi = [s_1; r; s_2; r]`` where ``r = inj_y y + inj_u u``
holds output-injection rows (empty for the full-order variants). The estimate is

    q(t)  = W_now phi(t) + W_del phi(t - tau)
    xhat  = out_map q(t) + static_y y(t) + static_u u(t)

For the pairwise variants ``W_now = D diag(U_1, U_2)`` and
``W_del = -W_now diag(exp(Mhat_1 tau), exp(Mhat_2 tau))``; for the direct
variant both maps are read off the first n rows of the inverse of the
(6n - 4m)-dimensional coefficient matrix.
"""
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import matlib
from .errors import (
    ConfigError, EigenvalueClash, NotObservable, PlacementFailed, SpectraOverlap,
    StackSingular, TauInadmissible,
)
from .matlib import block_diag, expm, pinv, rank
from .sysmodel import BreveModel, EtaModel, PsiModel

SYLVESTER_RESIDUAL_TOL = 1e-9
STACK_RCOND_MIN = 1e-10


class Kind(str, Enum):
    FULL_NOUI = "FullNoUI"
    MINIMAL_DIRECT = "MinimalDirect"
    MINIMAL_NOUI = "MinimalNoUI"
    FULL_UIO = "FullUIO"
    REDUCED_UIO = "ReducedUIO"
    MINIMAL_UIO = "MinimalUIO"


def _opt_matrix(M):
    return None if M is None else np.atleast_2d(np.asarray(M, dtype=float))


def default_poles(d, sigma, branch):
    """Distinct real poles: branch 1 in (sigma, 0), branch 2 below sigma."""
    j = np.arange(d)
    if branch == 1:
        return sigma * (2.0 / 3.0 + (4.0 / 15.0) * j / max(d, 1))
    return sigma * (4.0 / 3.0 + j / 3.0)


def random_poles(rng, d, lo, hi, im_scale):
    """Conjugate-closed pole list with real parts uniform in (lo, hi)."""
    out = []
    while len(out) < d:
        if d - len(out) >= 2 and rng.random() < 0.5:
            re = rng.uniform(lo, hi)
            im = rng.uniform(0.1, 2.0) * im_scale
            out += [complex(re, im), complex(re, -im)]
        else:
            out.append(float(rng.uniform(lo, hi)))
    return tuple(out)


@dataclass(frozen=True)
class SynthesisConfig:
    """Design parameters shared by all observer kinds.

    Branch and auxiliary spectra that are not given explicitly are chosen by
    a seeded search over ``pole_candidates`` admissible pole sets, keeping
    the set whose reconstruction amplifies rounding errors least. Explicit
    ``M1``/``M2`` or pole lists are always used verbatim.
    """
    tau: float = 1.0
    sigma: float = -1.5
    branch1_poles: tuple = None
    branch2_poles: tuple = None
    M1: np.ndarray = None
    M2: np.ndarray = None
    H1: np.ndarray = None
    H2: np.ndarray = None
    bar1_poles: tuple = None
    bar2_poles: tuple = None
    seed: int = 0
    admissibility_margin: float = 1e-8
    max_retries: int = 16
    pole_candidates: int = 24
    nominal_dt: float = 1e-3

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau < 0:
            raise ConfigError(f"tau must be a nonnegative real, got {self.tau}")
        if not self.sigma < 0:
            raise ConfigError(f"sigma must be negative, got {self.sigma}")
        if not self.nominal_dt > 0:
            raise ConfigError(f"nominal_dt must be positive, got {self.nominal_dt}")
        if self.pole_candidates < 1:
            raise ConfigError("pole_candidates must be at least 1")
        for name in ("M1", "M2", "H1", "H2"):
            object.__setattr__(self, name, _opt_matrix(getattr(self, name)))

    def with_tau(self, tau):
        return replace(self, tau=tau)

    def _matrix(self, given, poles, d, branch, label, drawn=None):
        if given is not None:
            if given.shape != (d, d):
                raise ConfigError(f"{label} must be {d}x{d}, got {given.shape}")
            return given
        if poles is not None:
            if len(poles) != d:
                raise ConfigError(f"{label} needs {d} poles, got {len(poles)}")
            return matlib.poles_to_matrix(poles)
        if drawn is not None:
            return matlib.poles_to_matrix(drawn)
        return np.diag(default_poles(d, self.sigma, branch))

    def branch_matrices(self, d):
        return (self._matrix(self.M1, self.branch1_poles, d, 1, "M1"),
                self._matrix(self.M2, self.branch2_poles, d, 2, "M2"))

    def bar_matrices(self, k):
        return (self._matrix(None, self.bar1_poles, k, 1, "bar block 1"),
                self._matrix(None, self.bar2_poles, k, 2, "bar block 2"))

    def _free(self, with_bar):
        free = [self.M1 is None and self.branch1_poles is None,
                self.M2 is None and self.branch2_poles is None]
        if with_bar:
            free += [self.bar1_poles is None, self.bar2_poles is None]
        return free

    def spectra_candidates(self, d, k=None):
        """Candidate ``(M1, M2)`` or ``(M1, M2, Mbar1, Mbar2)`` tuples.

        The first candidate is the deterministic default; further ones redraw
        every matrix that was not fixed by the user. Returns the list and
        whether any matrix was free.
        """
        with_bar = k is not None
        free = self._free(with_bar)
        first = self.branch_matrices(d) + (self.bar_matrices(k) if with_bar else ())
        if not any(free):
            return [first], False
        rng = np.random.default_rng([self.seed, 7919])
        s = self.sigma
        ranges = [(0.98 * s, 0.02 * s), (4.0 * s, 1.02 * s)]
        dims = [d, d] + ([k, k] if with_bar else [])
        cands = [first]
        for _ in range(self.pole_candidates - 1):
            cand = []
            for j, (dim, base) in enumerate(zip(dims, first)):
                if free[j]:
                    lo, hi = ranges[j % 2]
                    cand.append(matlib.poles_to_matrix(random_poles(rng, dim, lo, hi, abs(s))))
                else:
                    cand.append(base)
            cands.append(tuple(cand))
        return cands, True

    def injection(self, i, shape):
        H = self.H1 if i == 1 else self.H2
        if H is not None and H.shape != shape:
            raise ConfigError(f"H{i} must have shape {shape}, got {H.shape}")
        return H


def _require_separation(M1, M2, sigma, what):
    if M1.size == 0 and M2.size == 0:
        return
    if not matlib.check_spectral_separation(M1, M2, sigma):
        raise ConfigError(
            f"{what}: need Re(lambda(M2)) < sigma={sigma} < Re(lambda(M1)) < 0"
        )


def _sylvester_checked(A, M, HC):
    T = matlib.solve_sylvester(A, M, HC)
    res = np.linalg.norm(T @ A - M @ T - HC)
    if res > SYLVESTER_RESIDUAL_TOL * (1.0 + np.linalg.norm(HC)):
        raise SpectraOverlap(f"Sylvester residual {res:.3e} too large")
    return T


def _rcond(M):
    if M.size == 0:
        return 1.0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0.0
    rc = s[-1] / s[0]
    return 0.0 if rc < M.shape[0] * np.finfo(float).eps else float(rc)


@dataclass(frozen=True)
class ReconstructionParts:
    """Data that the tau-dependent reconstruction matrix is built from."""
    U1: np.ndarray = None
    U2: np.ndarray = None
    Mhat1: np.ndarray = None
    Mhat2: np.ndarray = None
    # direct variant only
    T1: np.ndarray = None
    T2: np.ndarray = None
    C: np.ndarray = None
    M1: np.ndarray = None
    M2: np.ndarray = None

    @property
    def direct(self):
        return self.T1 is not None


def reconstruction_matrix(parts, tau):
    """[[I, U1 e^{Mh1 tau} U1^-1], [I, U2 e^{Mh2 tau} U2^-1]] (2q x 2q)."""
    q = parts.U1.shape[0]
    I = np.eye(q)
    P1 = parts.U1 @ expm(parts.Mhat1 * tau) @ np.linalg.inv(parts.U1)
    P2 = parts.U2 @ expm(parts.Mhat2 * tau) @ np.linalg.inv(parts.U2)
    return np.block([[I, P1], [I, P2]])


def _propagators(parts, tau):
    P1 = parts.U1 @ expm(parts.Mhat1 * tau) @ np.linalg.inv(parts.U1)
    P2 = parts.U2 @ expm(parts.Mhat2 * tau) @ np.linalg.inv(parts.U2)
    return P1, P2


def left_inverse(parts, tau):
    """First block row ``[I - X, X]`` of the inverse of :func:`reconstruction_matrix`.

    With ``P_i = U_i e^{Mhat_i tau} U_i^-1`` the conditions ``D [I; I] = I``
    and ``D [P1; P2] = 0`` give ``X = P1 (P1 - P2)^-1``; one solve with the
    difference is better conditioned than inverting the full stack.
    """
    P1, P2 = _propagators(parts, tau)
    X = np.linalg.solve((P1 - P2).T, P1.T).T
    return np.hstack([np.eye(P1.shape[0]) - X, X])


def _pairwise_rcond(parts, tau):
    """Reciprocal 2-norm condition of the reconstruction matrix.

    Uses the explicit inverse [[I - X, X], [Z, -Z]] with Z = (P1 - P2)^-1, so
    that tiny values (large tau) are resolved instead of lost to rounding.
    """
    P1, P2 = _propagators(parts, tau)
    q = P1.shape[0]
    try:
        Z = np.linalg.inv(P1 - P2)
    except np.linalg.LinAlgError:
        return 0.0
    if not np.all(np.isfinite(Z)):
        return 0.0
    X = P1 @ Z
    R = np.block([[np.eye(q), P1], [np.eye(q), P2]])
    Rinv = np.block([[np.eye(q) - X, X], [Z, -Z]])
    return float(1.0 / (np.linalg.norm(R, 2) * np.linalg.norm(Rinv, 2)))


def direct_coefficient_matrix(parts, tau):
    """Coefficient matrix A0 of the (6n-4m) linear equations, unknowns ordered
    [x(t); v1~(t); v2~(t); x(t-tau); v1~(t-tau); v2~(t-tau)]."""
    T1, T2, C = parts.T1, parts.T2, parts.C
    k, n = C.shape
    d = n - k
    I = np.eye(d)
    Z = lambda r, c: np.zeros((r, c))  # noqa: E731
    e1 = expm(parts.M1 * tau)
    e2 = expm(parts.M2 * tau)
    return np.block([
        [T1, I, Z(d, d), Z(d, n), Z(d, d), Z(d, d)],
        [C, Z(k, d), Z(k, d), Z(k, n), Z(k, d), Z(k, d)],
        [Z(d, n), I, Z(d, d), Z(d, n), -e1, Z(d, d)],
        [T2, Z(d, d), I, Z(d, n), Z(d, d), Z(d, d)],
        [Z(d, n), Z(d, d), Z(d, d), T1, I, Z(d, d)],
        [Z(k, n), Z(k, d), Z(k, d), C, Z(k, d), Z(k, d)],
        [Z(d, n), Z(d, d), I, Z(d, n), Z(d, d), -e2],
        [Z(d, n), Z(d, d), Z(d, d), T2, Z(d, d), I],
    ])


def admissibility(parts, tau):
    """Reciprocal 2-norm condition number of the tau-dependent matrix to invert."""
    if tau <= 0:
        return 0.0
    if parts.direct:
        return _rcond(direct_coefficient_matrix(parts, tau))
    return _pairwise_rcond(parts, tau)


def suggest_taus(parts, tau, margin):
    out = []
    for k in range(1, 6):
        for t in (tau * (1 - k / 100), tau * (1 + k / 100)):
            if t > 0 and admissibility(parts, t) >= margin:
                out.append(t)
    return out


def _check_tau(parts, tau, margin):
    rc = admissibility(parts, tau)
    if rc < margin:
        raise TauInadmissible(tau, rc, suggest_taus(parts, tau, margin))
    return rc


@dataclass(frozen=True)
class PairwiseObserverRealization:
    kind: Kind
    tau: float
    A1: np.ndarray
    A2: np.ndarray
    Ny1: np.ndarray
    Ny2: np.ndarray
    Nu1: np.ndarray
    Nu2: np.ndarray
    inj_y: np.ndarray
    inj_u: np.ndarray
    exp1: np.ndarray
    exp2: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    recon_D: np.ndarray
    w_now: np.ndarray
    w_del: np.ndarray
    out_map: np.ndarray
    static_y: np.ndarray
    static_u: np.ndarray
    rcond: float = 1.0
    seed: int = 0
    a0_inverse_rows: np.ndarray = None
    matrices: dict = field(default_factory=dict)

    @property
    def branch_state_dims(self):
        return (self.A1.shape[0], self.A2.shape[0])

    @property
    def n(self):
        return self.static_y.shape[0]

    @property
    def m(self):
        return self.static_y.shape[1]

    @property
    def p(self):
        return self.static_u.shape[1]

    @property
    def phi_dim(self):
        return self.w_now.shape[1]

    @property
    def is_static(self):
        return self.phi_dim == 0

    def injection_rows(self, y, u):
        return y @ self.inj_y.T + u @ self.inj_u.T

    def phi(self, s1, s2, y, u):
        """Stack [s1; r; s2; r]; arguments may be single samples or (T, .) series."""
        s1, s2, y, u = (np.atleast_2d(a) for a in (s1, s2, y, u))
        r = self.injection_rows(y, u)
        return np.hstack([s1, r, s2, r])

    def estimate(self, phi_now, phi_del, y, u):
        y = np.atleast_2d(y)
        u = np.atleast_2d(u)
        q = np.atleast_2d(phi_now) @ self.w_now.T + np.atleast_2d(phi_del) @ self.w_del.T
        return q @ self.out_map.T + y @ self.static_y.T + u @ self.static_u.T

    def left_inverse_residuals(self):
        """Norms of D [I; I] - I and D [U1 e1 U1^-1; U2 e2 U2^-1] (pairwise kinds)."""
        if self.kind == Kind.MINIMAL_DIRECT or self.is_static:
            return 0.0, 0.0
        q = self.U1.shape[0]
        stack_I = np.vstack([np.eye(q), np.eye(q)])
        P = np.vstack([self.U1 @ self.exp1 @ np.linalg.inv(self.U1),
                       self.U2 @ self.exp2 @ np.linalg.inv(self.U2)])
        return (float(np.linalg.norm(self.recon_D @ stack_I - np.eye(q))),
                float(np.linalg.norm(self.recon_D @ P)))

    def to_dict(self):
        mats = {}
        for name in ("A1", "A2", "Ny1", "Ny2", "Nu1", "Nu2", "inj_y", "inj_u", "exp1",
                     "exp2", "U1", "U2", "recon_D", "w_now", "w_del", "out_map",
                     "static_y", "static_u", "a0_inverse_rows"):
            M = getattr(self, name)
            if M is not None:
                mats[name] = _mat_to_dict(M)
        return {
            "kind": self.kind.value,
            "tau": self.tau,
            "seed": self.seed,
            "rcond": self.rcond,
            "branch_state_dims": list(self.branch_state_dims),
            "matrices": mats,
            "design": {k: _mat_to_dict(v) for k, v in self.matrices.items()},
        }

    @classmethod
    def from_dict(cls, d):
        mats = {k: _mat_from_dict(v) for k, v in d["matrices"].items()}
        design = {k: _mat_from_dict(v) for k, v in d.get("design", {}).items()}
        return cls(kind=Kind(d["kind"]), tau=float(d["tau"]), rcond=float(d.get("rcond", 1.0)),
                   seed=int(d.get("seed", 0)), matrices=design, **mats)


def _mat_to_dict(M):
    M = np.asarray(M, dtype=float)
    return {"shape": list(M.shape), "data": [float(v) for v in M.ravel()]}


def _mat_from_dict(d):
    return np.array(d["data"], dtype=float).reshape(d["shape"])


def _finish(kind, tau, branches, inj_y, inj_u, Mhat, U, parts, out_map, static_y,
            static_u, cfg, matrices, expected_dim):
    """Compute the reconstruction maps and run the shared postcondition checks."""
    (A1, Ny1, Nu1), (A2, Ny2, Nu2) = branches
    if A1.shape[0] != expected_dim or A2.shape[0] != expected_dim:
        raise AssertionError(f"{kind.value}: branch dims {A1.shape[0]}, {A2.shape[0]} != {expected_dim}")
    for Ai in (A1, A2):
        if matlib.spectrum(Ai).max_real >= 0:
            raise PlacementFailed(f"{kind.value}: branch matrix is not Hurwitz")
    rc = _check_tau(parts, tau, cfg.admissibility_margin)
    e1, e2 = expm(Mhat[0] * tau), expm(Mhat[1] * tau)
    Dc = left_inverse(parts, tau)
    w_now = Dc @ block_diag(U[0], U[1])
    w_del = -w_now @ block_diag(e1, e2)
    return PairwiseObserverRealization(
        kind=kind, tau=float(tau), A1=A1, A2=A2, Ny1=Ny1, Ny2=Ny2, Nu1=Nu1, Nu2=Nu2,
        inj_y=inj_y, inj_u=inj_u, exp1=e1, exp2=e2, U1=U[0], U2=U[1], recon_D=Dc,
        w_now=w_now, w_del=w_del, out_map=out_map, static_y=static_y, static_u=static_u,
        rcond=rc, seed=cfg.seed, matrices=matrices,
    )


_RETRYABLE = (StackSingular, SpectraOverlap, PlacementFailed, TauInadmissible)


def _select(cands, searched, build):
    """Build every candidate and keep the lowest score; errors propagate
    directly when nothing was searched, otherwise the last one is re-raised
    only if no candidate succeeds."""
    best, last = None, None
    for cand in cands:
        try:
            res = build(*cand)
        except _RETRYABLE as e:
            if not searched:
                raise
            last = e
            continue
        if best is None or res["score"] < best["score"]:
            best = res
    if best is None:
        raise last
    return best


def _rk4_propagator(M, h, K):
    """K steps of classical RK4 applied to z' = M z."""
    Z = h * M
    Z2 = Z @ Z
    R = np.eye(M.shape[0]) + Z + Z2 / 2.0 + Z2 @ Z / 6.0 + Z2 @ Z2 / 24.0
    return np.linalg.matrix_power(R, K)


def _error_score(parts, tau, h):
    """Predicted relative estimation error of a design run at step ``h``.

    Two terms: rounding in the branch states amplified by
    ||[w_now w_del]|| max ||U_i^-1||, and the mismatch between the RK4
    transition over tau and exp(Mhat tau) seen through w_now.
    """
    try:
        Dc = left_inverse(parts, tau)
    except np.linalg.LinAlgError:
        return np.inf
    W = Dc @ block_diag(parts.U1, parts.U2)
    E = block_diag(expm(parts.Mhat1 * tau), expm(parts.Mhat2 * tau))
    inv_norm = max(np.linalg.norm(np.linalg.inv(parts.U1), 2),
                   np.linalg.norm(np.linalg.inv(parts.U2), 2))
    rounding = np.finfo(float).eps * np.linalg.norm(np.hstack([W, W @ E]), 2)
    K = int(round(tau / h)) if h > 0 else 0
    drift = 0.0
    if K > 0:
        P = block_diag(_rk4_propagator(parts.Mhat1, tau / K, K),
                       _rk4_propagator(parts.Mhat2, tau / K, K))
        drift = np.linalg.norm(W @ (P - E), 2)
    return float((rounding + drift) * inv_norm)


def _minimal_core(Aq, Cq, cfg, clash_check=False, direct=False):
    """Branch design for a (state matrix, full-row-rank output) pair.

    Solves T_i Aq - M_i T_i = H_i Cq and inverts [T_i; Cq]; H_i is resampled
    from a seeded generator while the stack is singular.
    """
    n = Aq.shape[0]
    k = Cq.shape[0]
    d = n - k
    lam = np.linalg.eigvals(Aq)
    cands, searched = cfg.spectra_candidates(d, k)

    def build(M1, M2, Mb1, Mb2):
        M, Mb = (M1, M2), (Mb1, Mb2)
        Mhat = (block_diag(M1, Mb1), block_diag(M2, Mb2))
        _require_separation(Mhat[0], Mhat[1], cfg.sigma, "branch spectra")
        if clash_check:
            for Mi in M:
                mu = np.linalg.eigvals(Mi)
                gap = np.min(np.abs(lam[:, None] - mu[None, :])) if lam.size and mu.size else np.inf
                if gap < 1e-8 * (1.0 + np.abs(lam).max()):
                    raise EigenvalueClash(f"branch spectrum {mu} meets the decoupled state spectrum")
        rng = np.random.default_rng(cfg.seed)
        H, T, U = [], [], []
        for i in (1, 2):
            Hgiven = cfg.injection(i, (d, k))
            for _ in range(cfg.max_retries):
                Hi = Hgiven if Hgiven is not None else rng.standard_normal((d, k))
                Ti = _sylvester_checked(Aq, M[i - 1], Hi @ Cq)
                stack = np.vstack([Ti, Cq])
                if _rcond(stack) > STACK_RCOND_MIN:
                    break
                if Hgiven is not None:
                    raise StackSingular(f"[T{i}; C] is singular for the given H{i}")
            else:
                raise StackSingular(f"[T{i}; C] stayed singular after {cfg.max_retries} draws")
            H.append(Hi)
            T.append(Ti)
            U.append(np.linalg.inv(stack))
        parts = ReconstructionParts(U1=U[0], U2=U[1], Mhat1=Mhat[0], Mhat2=Mhat[1])
        if direct:
            dparts = ReconstructionParts(T1=T[0], T2=T[1], C=Cq, M1=M1, M2=M2)
            rc = _check_tau(dparts, cfg.tau, cfg.admissibility_margin)
        else:
            dparts = None
            rc = _check_tau(parts, cfg.tau, cfg.admissibility_margin)
        return {"M": M, "Mbar": Mb, "Mhat": Mhat, "H": H, "T": T, "U": U, "parts": parts,
                "direct_parts": dparts, "rcond": rc, "score": _error_score(parts, cfg.tau, cfg.nominal_dt)}

    return _select(cands, searched, build)


def _full_core(Aq, Cq, cfg):
    """Output-injection gains L_i with spec(Aq + L_i Cq) = spec(M_i).

    X_i Aq - M_i X_i = Ht_i Cq gives Aq + L_i Cq = X_i^-1 M_i X_i for
    L_i = -X_i^-1 Ht_i.
    """
    n = Aq.shape[0]
    mq = Cq.shape[0]
    cands, searched = cfg.spectra_candidates(n)
    I = np.eye(n)

    def build(M1, M2):
        M = (M1, M2)
        _require_separation(M1, M2, cfg.sigma, "branch spectra")
        rng = np.random.default_rng(cfg.seed)
        L, X = [], []
        for i in (1, 2):
            Hgiven = cfg.injection(i, (n, mq))
            for _ in range(cfg.max_retries):
                Ht = Hgiven if Hgiven is not None else rng.standard_normal((n, mq))
                Xi = _sylvester_checked(Aq, M[i - 1], Ht @ Cq)
                if _rcond(Xi) > STACK_RCOND_MIN:
                    Li = -np.linalg.solve(Xi, Ht)
                    if _spectra_match(Aq + Li @ Cq, M[i - 1]):
                        break
                if Hgiven is not None:
                    raise PlacementFailed(f"gain placement failed for the given H{i}")
            else:
                raise PlacementFailed(f"gain placement failed after {cfg.max_retries} draws")
            L.append(Li)
            X.append(Xi)
        A_cl = (Aq + L[0] @ Cq, Aq + L[1] @ Cq)
        if not matlib.check_spectral_separation(A_cl[0], A_cl[1], cfg.sigma):
            raise PlacementFailed("placed spectra lost the sigma separation")
        parts = ReconstructionParts(U1=I, U2=I, Mhat1=A_cl[0], Mhat2=A_cl[1])
        rc = _check_tau(parts, cfg.tau, cfg.admissibility_margin)
        return {"M": M, "L": L, "X": X, "A_cl": A_cl, "parts": parts, "rcond": rc,
                "score": _error_score(parts, cfg.tau, cfg.nominal_dt)}

    return _select(cands, searched, build)


def _spectra_match(A, M, tol=1e-6):
    a = np.linalg.eigvals(A)
    b = np.linalg.eigvals(M)
    dist = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(dist)
    return bool(dist[rows, cols].max() <= tol * (1.0 + np.abs(b).max()))


def _compress_output(C, D):
    C0, S = matlib.row_basis_selector(C)
    return C0, S @ D, S


def _static_realization(kind, sys_n, C0, D0, S, tau, cfg):
    Cinv = np.linalg.inv(C0)
    empty = lambda r, c: np.zeros((r, c))  # noqa: E731
    m, p = S.shape[1], D0.shape[1]
    return PairwiseObserverRealization(
        kind=kind, tau=float(tau), A1=empty(0, 0), A2=empty(0, 0), Ny1=empty(0, m),
        Ny2=empty(0, m), Nu1=empty(0, p), Nu2=empty(0, p), inj_y=empty(0, m),
        inj_u=empty(0, p), exp1=empty(0, 0), exp2=empty(0, 0), U1=empty(0, 0),
        U2=empty(0, 0), recon_D=empty(0, 0), w_now=empty(0, 0), w_del=empty(0, 0),
        out_map=empty(sys_n, 0), static_y=Cinv @ S, static_u=-Cinv @ D0, seed=cfg.seed,
    )


def _prepare_noui(A, B, C, D):
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    B = np.zeros((n, 0)) if B is None else np.asarray(B, dtype=float).reshape(n, -1)
    D = np.zeros((C.shape[0], B.shape[1])) if D is None else np.asarray(D, dtype=float).reshape(C.shape[0], -1)
    if not matlib.is_observable(A, C):
        raise NotObservable("(A, C) is not observable")
    return A, B, C, D


def synth_minimal_noui(A, B, C, D, cfg):
    """Pairwise (n - m)-order observer with delayed reconstruction."""
    A, B, C, D = _prepare_noui(A, B, C, D)
    n = A.shape[0]
    C0, D0, S = _compress_output(C, D)
    if C0.shape[0] == n:
        return _static_realization(Kind.MINIMAL_NOUI, n, C0, D0, S, cfg.tau, cfg)
    core = _minimal_core(A, C0, cfg)
    branches = [(core["M"][i], core["H"][i] @ S, core["T"][i] @ B - core["H"][i] @ D0)
                for i in (0, 1)]
    parts = ReconstructionParts(U1=core["U"][0], U2=core["U"][1],
                                Mhat1=core["Mhat"][0], Mhat2=core["Mhat"][1])
    mats = {"T1": core["T"][0], "T2": core["T"][1], "H1": core["H"][0], "H2": core["H"][1],
            "M1hat": core["Mhat"][0], "M2hat": core["Mhat"][1], "C0": C0, "S": S}
    return _finish(Kind.MINIMAL_NOUI, cfg.tau, branches, S, -D0, core["Mhat"], core["U"],
                   parts, np.eye(n), np.zeros((n, C.shape[0])), np.zeros((n, B.shape[1])),
                   cfg, mats, n - C0.shape[0])


def synth_minimal_direct(A, B, C, D, cfg):
    """Same branches as :func:`synth_minimal_noui`; estimate from A0^-1 b0."""
    A, B, C, D = _prepare_noui(A, B, C, D)
    n = A.shape[0]
    C0, D0, S = _compress_output(C, D)
    k = C0.shape[0]
    if k == n:
        return _static_realization(Kind.MINIMAL_DIRECT, n, C0, D0, S, cfg.tau, cfg)
    d = n - k
    core = _minimal_core(A, C0, cfg, direct=True)
    M1, M2 = core["M"]
    parts = core["direct_parts"]
    rc = core["rcond"]
    A0 = direct_coefficient_matrix(parts, cfg.tau)
    rows = np.linalg.inv(A0)[:n]
    # b0 = Snow phi(t) + Sdel phi(t - tau), phi = [v1; yc; v2; yc]
    nb = 6 * n - 4 * k
    Snow = np.zeros((nb, 2 * n))
    Sdel = np.zeros((nb, 2 * n))
    Id, Ik = np.eye(d), np.eye(k)
    Snow[0:d, 0:d] = Id
    Snow[d:d + k, d:d + k] = Ik
    Snow[2 * d + k:3 * d + k, d + k:2 * d + k] = Id
    o = 3 * d + k
    Sdel[o:o + d, 0:d] = Id
    Sdel[o + d:o + d + k, d:d + k] = Ik
    Sdel[o + 2 * d + k:o + 3 * d + k, d + k:2 * d + k] = Id
    branches = [(core["M"][i], core["H"][i] @ S, core["T"][i] @ B - core["H"][i] @ D0)
                for i in (0, 1)]
    for Ai, _, _ in branches:
        if matlib.spectrum(Ai).max_real >= 0:
            raise PlacementFailed("branch matrix is not Hurwitz")
    mats = {"T1": core["T"][0], "T2": core["T"][1], "H1": core["H"][0], "H2": core["H"][1],
            "A0": A0, "C0": C0, "S": S}
    empty = np.zeros((0, 0))
    return PairwiseObserverRealization(
        kind=Kind.MINIMAL_DIRECT, tau=float(cfg.tau),
        A1=branches[0][0], A2=branches[1][0], Ny1=branches[0][1], Ny2=branches[1][1],
        Nu1=branches[0][2], Nu2=branches[1][2], inj_y=S, inj_u=-D0,
        exp1=expm(M1 * cfg.tau), exp2=expm(M2 * cfg.tau), U1=core["U"][0], U2=core["U"][1],
        recon_D=empty, w_now=rows @ Snow, w_del=rows @ Sdel, out_map=np.eye(n),
        static_y=np.zeros((n, C.shape[0])), static_u=np.zeros((n, B.shape[1])),
        rcond=rc, seed=cfg.seed, a0_inverse_rows=rows, matrices=mats,
    )


def synth_full_noui(A, B, C, D, cfg):
    """Two full-order Luenberger branches with separated spectra."""
    A, B, C, D = _prepare_noui(A, B, C, D)
    n = A.shape[0]
    core = _full_core(A, C, cfg)
    L = core["L"]
    branches = [(core["A_cl"][i], -L[i], B + L[i] @ D) for i in (0, 1)]
    I = np.eye(n)
    parts = ReconstructionParts(U1=I, U2=I, Mhat1=core["A_cl"][0], Mhat2=core["A_cl"][1])
    mats = {"L1": L[0], "L2": L[1], "X1": core["X"][0], "X2": core["X"][1]}
    return _finish(Kind.FULL_NOUI, cfg.tau, branches, np.zeros((0, C.shape[0])),
                   np.zeros((0, B.shape[1])), core["A_cl"], (I, I), parts, I,
                   np.zeros((n, C.shape[0])), np.zeros((n, B.shape[1])), cfg, mats, n)


def synth_uio_full(eta, cfg):
    """Full-order unknown input observer on the eta-model."""
    sys = eta.sys
    n, m, p = sys.n, sys.m, sys.p
    core = _full_core(eta.A_eta, eta.C_bar, cfg)
    K = core["L"]
    branches = [(core["A_cl"][i], eta.H - K[i] @ eta.C_hat, eta.B_bar + K[i] @ eta.C_hat @ sys.D)
                for i in (0, 1)]
    I = np.eye(n)
    parts = ReconstructionParts(U1=I, U2=I, Mhat1=core["A_cl"][0], Mhat2=core["A_cl"][1])
    mats = {"K1": K[0], "K2": K[1], "G": eta.G}
    return _finish(Kind.FULL_UIO, cfg.tau, branches, np.zeros((0, m)), np.zeros((0, p)),
                   core["A_cl"], (I, I), parts, I, eta.correction_y, eta.correction_u,
                   cfg, mats, n)


def synth_uio_reduced(psi, cfg):
    """Pairwise full-order observers on the psi-model (order n - rank Ebar each)."""
    sys = psi.sys
    m, p = sys.m, sys.p
    dpsi = psi.A_psi.shape[0]
    core = _full_core(psi.A_psi, psi.Y, cfg)
    K = core["L"]
    UPi = psi.U1_out @ psi.PiF
    branches = [(core["A_cl"][i], psi.H_hat - K[i] @ UPi, psi.B_hat_bar + K[i] @ UPi @ sys.D)
                for i in (0, 1)]
    I = np.eye(dpsi)
    parts = ReconstructionParts(U1=I, U2=I, Mhat1=core["A_cl"][0], Mhat2=core["A_cl"][1])
    mats = {"K1": K[0], "K2": K[1], "T0": psi.T0, "T1bar": psi.T1}
    expected = sys.n - rank(np.vstack([sys.E, sys.F])) + (rank(sys.F) if np.any(sys.F) else 0)
    return _finish(Kind.REDUCED_UIO, cfg.tau, branches, np.zeros((0, m)), np.zeros((0, p)),
                   core["A_cl"], (I, I), parts, psi.correction_psi, psi.correction_y,
                   psi.correction_u, cfg, mats, expected)


def synth_uio_minimal(model, cfg):
    """Minimal-order unknown input observer.

    Accepts an :class:`EtaModel` (general case) or a :class:`BreveModel`
    (the F = 0 specialization); both give identical estimates when F = 0.
    """
    if isinstance(model, BreveModel):
        return _synth_uio_minimal_breve(model, cfg)
    if not isinstance(model, EtaModel):
        raise TypeError("expected an EtaModel or BreveModel")
    eta = model
    sys = eta.sys
    n = sys.n
    C0 = eta.C0
    core = _minimal_core(eta.A_eta, C0, cfg, clash_check=True)
    Cy = eta.C1 @ eta.C_hat
    branches = []
    for i in (0, 1):
        Hi, Ti = core["H"][i], core["T"][i]
        branches.append((core["M"][i], Hi @ Cy + Ti @ eta.H, Ti @ eta.B_bar - Hi @ Cy @ sys.D))
    parts = ReconstructionParts(U1=core["U"][0], U2=core["U"][1],
                                Mhat1=core["Mhat"][0], Mhat2=core["Mhat"][1])
    mats = {"T1": core["T"][0], "T2": core["T"][1], "H1": core["H"][0], "H2": core["H"][1],
            "N1": branches[0][1], "N2": branches[1][1], "N1hat": branches[0][2],
            "N2hat": branches[1][2], "M1hat": core["Mhat"][0], "M2hat": core["Mhat"][1],
            "G": eta.G, "C0": C0, "C1": eta.C1}
    expected = n - rank(np.hstack([sys.C, sys.F])) + (rank(sys.F) if np.any(sys.F) else 0)
    real = _finish(Kind.MINIMAL_UIO, cfg.tau, branches, Cy, -Cy @ sys.D, core["Mhat"],
                   core["U"], parts, np.eye(n), eta.correction_y, eta.correction_u, cfg,
                   mats, expected)
    return real


def _synth_uio_minimal_breve(br, cfg):
    sys = br.sys
    n = sys.n
    core = _minimal_core(br.A_breve, br.C, cfg, clash_check=True)
    Cy = br.out_map @ br.S
    Du = br.out_map @ br.D
    branches = []
    for i in (0, 1):
        Hi, Ti = core["H"][i], core["T"][i]
        branches.append((core["M"][i], Hi @ Cy + Ti @ br.H @ br.S, Ti @ br.B_breve - Hi @ Du))
    parts = ReconstructionParts(U1=core["U"][0], U2=core["U"][1],
                                Mhat1=core["Mhat"][0], Mhat2=core["Mhat"][1])
    mats = {"T1": core["T"][0], "T2": core["T"][1], "H1": core["H"][0], "H2": core["H"][1],
            "N1": branches[0][1], "N2": branches[1][1], "N1hat": branches[0][2],
            "N2hat": branches[1][2], "M1hat": core["Mhat"][0], "M2hat": core["Mhat"][1],
            "G": br.G}
    return _finish(Kind.MINIMAL_UIO, cfg.tau, branches, Cy, -Du, core["Mhat"], core["U"],
                   parts, np.eye(n), br.correction_y, br.correction_u, cfg, mats,
                   n - br.C.shape[0])


def synthesize(sys, kind, cfg):
    """Dispatch on ``kind`` for an :class:`~atobs.sysmodel.LtiSystem`."""
    from .sysmodel import reconfigure_eta, reconfigure_psi

    kind = Kind(kind)
    if kind in (Kind.FULL_NOUI, Kind.MINIMAL_NOUI, Kind.MINIMAL_DIRECT):
        if sys.has_unknown_input:
            raise ConfigError(f"{kind.value} ignores the unknown input; use a UIO kind")
        fn = {Kind.FULL_NOUI: synth_full_noui, Kind.MINIMAL_NOUI: synth_minimal_noui,
              Kind.MINIMAL_DIRECT: synth_minimal_direct}[kind]
        return fn(sys.A, sys.B, sys.C, sys.D, cfg)
    if kind == Kind.FULL_UIO:
        return synth_uio_full(reconfigure_eta(sys), cfg)
    if kind == Kind.REDUCED_UIO:
        return synth_uio_reduced(reconfigure_psi(sys), cfg)
    return synth_uio_minimal(reconfigure_eta(sys), cfg)
