"""LTI plants with unknown inputs, existence conditions and the
unknown-input-decoupling model reconfigurations.

The plant is ``x' = A x + B u + E w``, ``y = C x + D u + F w``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import matlib
from .errors import AssumptionViolated, TrivialCase, ZeroMatrix, ZeroUnknownInput
from .matlib import as_matrix, pinv, rank

# Relative scale for the hard postcondition checks (G Ebar = 0 etc.).
POSTCONDITION_TOL = 1e-10


def _frozen(M):
    M = np.array(M, dtype=float)
    M.setflags(write=False)
    return M


@dataclass(frozen=True)
class LtiSystem:
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray

    @classmethod
    def from_matrices(cls, A, C, B=None, E=None, D=None, F=None):
        """Build a system; absent B/E/D/F default to conformant zeros."""
        A = as_matrix(A, name="A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        C = as_matrix(C, cols=n, name="C")
        m = C.shape[0]
        B = np.zeros((n, 0)) if B is None else as_matrix(B, rows=n, name="B")
        p = B.shape[1]
        D = np.zeros((m, p)) if D is None else as_matrix(D, rows=m, cols=p, name="D")
        if F is not None:
            F = as_matrix(F, rows=m, name="F")
        if E is None:
            E = np.zeros((n, 0 if F is None else F.shape[1]))
        else:
            E = as_matrix(E, rows=n, name="E")
        q = E.shape[1]
        if F is None:
            F = np.zeros((m, q))
        elif F.shape[1] != q:
            raise ValueError(f"F must have {q} columns, got {F.shape[1]}")
        if n < 1 or m < 1:
            raise ValueError("need n >= 1 and m >= 1")
        return cls(*(_frozen(M) for M in (A, B, E, C, D, F)))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def q(self):
        return self.E.shape[1]

    @property
    def m(self):
        return self.C.shape[0]

    @property
    def has_unknown_input(self):
        return self.q > 0 and (np.any(self.E) or np.any(self.F))


@dataclass(frozen=True)
class AssumptionReport:
    cond1_holds: bool
    cond2_holds: bool
    observability_holds: bool
    rank_CF: int
    rank_EF: int
    rank_F: int
    rank_CE: int
    rank_E: int
    trivial_case: bool

    @property
    def all_hold(self):
        return self.cond1_holds and self.cond2_holds and self.observability_holds

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__} | {"all_hold": self.all_hold}


def _decouple(sys):
    """Shared quantities of the output-decoupled model x' = Abar x + E F^+ y + Bhat u + Ebar w."""
    m, q = sys.m, sys.q
    Fp = pinv(sys.F)
    PiF = np.eye(m) - sys.F @ Fp
    Cbar = PiF @ sys.C
    Abar = sys.A - sys.E @ Fp @ sys.C
    Bhat = sys.B - sys.E @ Fp @ sys.D
    Ebar = sys.E @ (np.eye(q) - Fp @ sys.F)
    return Fp, PiF, Cbar, Abar, Bhat, Ebar


def check_assumptions(sys):
    """Evaluate the rank, Rosenbrock and observability existence conditions."""
    E, F, C = sys.E, sys.F, sys.C
    m, q = sys.m, sys.q
    rF = rank(F) if F.size else 0
    rEF = rank(np.vstack([E, F])) if q else 0
    rCF = rank(np.hstack([C, F]))
    rCE = rank(C @ E) if q else 0
    rE = rank(E) if q else 0
    if q:
        big = np.block([[np.zeros((m, q)), F], [F, C @ E]])
        cond1 = rank(big) == rF + rEF
    else:
        cond1 = True
    cond2 = matlib.rosenbrock_rank_condition(sys.A, E, C, F)
    Fp, PiF, Cbar, Abar, Bhat, Ebar = _decouple(sys)
    rCbar = rank(Cbar)
    if cond1:
        G = np.eye(sys.n) - Ebar @ pinv(Cbar @ Ebar) @ Cbar
        obs = matlib.is_observable(G @ Abar, Cbar)
    else:
        obs = False
    return AssumptionReport(
        cond1_holds=bool(cond1), cond2_holds=bool(cond2), observability_holds=bool(obs),
        rank_CF=rCF, rank_EF=rEF, rank_F=rF, rank_CE=rCE, rank_E=rE,
        trivial_case=rCbar == sys.n,
    )


def _check_zero(M, scale, what):
    size = np.linalg.norm(M) if M.size else 0.0
    if size > POSTCONDITION_TOL * max(1.0, scale):
        raise AssumptionViolated(f"postcondition failed: {what} (norm {size:.3e})")


@dataclass(frozen=True)
class EtaModel:
    """eta = G x with eta' = A_eta eta + H y + B_bar u and C_bar eta = C_hat (y - D u)."""
    sys: LtiSystem
    G: np.ndarray
    A_eta: np.ndarray
    H: np.ndarray
    B_bar: np.ndarray
    C_bar: np.ndarray
    C_hat: np.ndarray
    C0: np.ndarray
    C1: np.ndarray
    E_bar: np.ndarray
    correction_y: np.ndarray
    correction_u: np.ndarray

    def state_from_eta(self, eta, y, u):
        return eta + self.correction_y @ y + self.correction_u @ u


def reconfigure_eta(sys):
    report = check_assumptions(sys)
    if not report.cond1_holds:
        raise AssumptionViolated("rank condition on [[0, F], [F, CE]] fails")
    if not (report.cond2_holds and report.observability_holds):
        raise AssumptionViolated("Rosenbrock/observability condition fails")
    if report.trivial_case:
        raise TrivialCase("rank(Cbar) = n: x = (C^T C)^{-1} C^T (y - D u) directly")
    n, m = sys.n, sys.m
    Fp, PiF, Cbar, Abar, Bhat, Ebar = _decouple(sys)
    CEp = pinv(Cbar @ Ebar)
    G = np.eye(n) - Ebar @ CEp @ Cbar
    _check_zero(G @ Ebar, np.linalg.norm(Ebar), "G Ebar = 0")
    GA = G @ Abar
    H = G @ sys.E @ Fp + GA @ Ebar @ CEp @ PiF
    B_bar = G @ Bhat - GA @ Ebar @ CEp @ PiF @ sys.D
    C_hat = (np.eye(m) - Cbar @ Ebar @ CEp) @ PiF
    C0, C1 = matlib.row_basis_selector(Cbar)
    corr_y = Ebar @ CEp @ PiF
    return EtaModel(
        sys=sys, G=_frozen(G), A_eta=_frozen(GA), H=_frozen(H), B_bar=_frozen(B_bar),
        C_bar=_frozen(Cbar), C_hat=_frozen(C_hat), C0=_frozen(C0), C1=_frozen(C1),
        E_bar=_frozen(Ebar), correction_y=_frozen(corr_y),
        correction_u=_frozen(-corr_y @ sys.D),
    )


def _complete_basis(fixed, cond_limit=1e6):
    """Standard basis columns ``K`` such that ``[K fixed]`` is invertible.

    Columns are tried in index order and kept while the candidate stack stays
    well conditioned; an orthonormal complement is used if greedy selection
    cannot reach a full basis.
    """
    n, r = fixed.shape
    picked = []
    for j in range(n):
        if len(picked) == n - r:
            break
        e = np.zeros((n, 1))
        e[j] = 1.0
        trial = np.hstack([np.eye(n)[:, picked], e, fixed])
        s = np.linalg.svd(trial, compute_uv=False)
        if s[-1] > 0 and s[0] / s[-1] < cond_limit:
            picked.append(j)
    if len(picked) == n - r:
        return np.eye(n)[:, picked]
    U, _, _ = np.linalg.svd(fixed, full_matrices=True)
    return U[:, r:]


@dataclass(frozen=True)
class PsiModel:
    """psi = T1 x; psi' = A_psi psi + H_hat y + B_hat_bar u, U1_out ybar = Y psi."""
    sys: LtiSystem
    T0: np.ndarray
    T1: np.ndarray
    E0: np.ndarray
    E1: np.ndarray
    U0: np.ndarray
    U1_out: np.ndarray
    U2: np.ndarray
    C_bar: np.ndarray
    A_psi: np.ndarray
    H_hat: np.ndarray
    B_hat_bar: np.ndarray
    Y: np.ndarray
    PiF: np.ndarray
    correction_psi: np.ndarray
    correction_y: np.ndarray
    correction_u: np.ndarray

    def state_from_psi(self, psi, y, u):
        return self.correction_psi @ psi + self.correction_y @ y + self.correction_u @ u


def reconfigure_psi(sys):
    report = check_assumptions(sys)
    if not report.cond1_holds:
        raise AssumptionViolated("rank condition on [[0, F], [F, CE]] fails")
    if not (report.cond2_holds and report.observability_holds):
        raise AssumptionViolated("Rosenbrock/observability condition fails")
    n, m = sys.n, sys.m
    Fp, PiF, Cbar, Abar, Bhat, Ebar = _decouple(sys)
    try:
        E0, E1 = matlib.full_column_factor(Ebar) if Ebar.size else (None, None)
    except ZeroMatrix:
        E0 = None
    if E0 is None:
        raise ZeroUnknownInput("Ebar = 0; use an observer without unknown-input decoupling")
    re = E0.shape[1]
    CE0 = Cbar @ E0
    if rank(CE0) != re:
        raise AssumptionViolated("Cbar E0 is not of full column rank")
    T0 = _complete_basis(E0)
    Tbar = np.hstack([T0, E0])
    Tinv = np.linalg.inv(Tbar)
    T1, T2 = Tinv[: n - re], Tinv[n - re:]
    U0 = _complete_basis(CE0)
    Ubar = np.hstack([U0, CE0])
    Uinv = np.linalg.inv(Ubar)
    U1, U2 = Uinv[: m - re], Uinv[m - re:]
    _check_zero(T1 @ E0, 1.0, "T1 E0 = 0")
    proj = np.eye(n) - E0 @ U2 @ Cbar
    A_psi = T1 @ Abar @ proj @ T0
    H_hat = T1 @ sys.E @ Fp + T1 @ Abar @ E0 @ U2 @ PiF
    B_hb = T1 @ Bhat - T1 @ Abar @ E0 @ U2 @ PiF @ sys.D
    corr_y = E0 @ U2 @ PiF
    return PsiModel(
        sys=sys, T0=_frozen(T0), T1=_frozen(T1), E0=_frozen(E0), E1=_frozen(E1),
        U0=_frozen(U0), U1_out=_frozen(U1), U2=_frozen(U2), C_bar=_frozen(Cbar),
        A_psi=_frozen(A_psi), H_hat=_frozen(H_hat), B_hat_bar=_frozen(B_hb),
        Y=_frozen(U1 @ Cbar @ T0), PiF=_frozen(PiF),
        correction_psi=_frozen(proj @ T0), correction_y=_frozen(corr_y),
        correction_u=_frozen(-corr_y @ sys.D),
    )


@dataclass(frozen=True)
class BreveModel:
    """F = 0 specialization: eta = G x with G = I - E (C E)^+ C.

    ``S`` row-compresses the output when C is not of full row rank; all maps
    below act on the compressed output ``S y``.
    """
    sys: LtiSystem
    S: np.ndarray
    C: np.ndarray
    D: np.ndarray
    G: np.ndarray
    A_breve: np.ndarray
    H: np.ndarray
    B_breve: np.ndarray
    out_map: np.ndarray
    correction_y: np.ndarray
    correction_u: np.ndarray = field(repr=False)

    def state_from_eta(self, eta, y, u):
        return eta + self.correction_y @ y + self.correction_u @ u


def reconfigure_breve(sys):
    if np.any(sys.F):
        raise AssumptionViolated("the F = 0 specialization requires F = 0")
    C, S = matlib.row_basis_selector(sys.C)
    D = S @ sys.D
    n, mc = sys.n, C.shape[0]
    E = sys.E
    CE = C @ E
    if sys.q and rank(CE) != rank(E):
        raise AssumptionViolated("rank(CE) != rank(E)")
    if not matlib.rosenbrock_rank_condition(sys.A, E, C, np.zeros((mc, sys.q))):
        raise AssumptionViolated("Rosenbrock condition fails")
    if mc == n:
        raise TrivialCase("C has full column rank: x = C^{-1} (y - D u)")
    K = E @ pinv(CE) if sys.q else np.zeros((n, mc))
    G = np.eye(n) - K @ C
    _check_zero(G @ E, np.linalg.norm(E), "G E = 0")
    GA = G @ sys.A
    if not matlib.is_observable(GA, C):
        raise AssumptionViolated("(G A, C) is not observable")
    H = GA @ K
    B_breve = G @ sys.B - GA @ K @ D
    out = np.eye(mc) - C @ K
    return BreveModel(
        sys=sys, S=_frozen(S), C=_frozen(C), D=_frozen(D), G=_frozen(G),
        A_breve=_frozen(GA), H=_frozen(H), B_breve=_frozen(B_breve), out_map=_frozen(out),
        correction_y=_frozen(K @ S), correction_u=_frozen(-K @ D),
    )
