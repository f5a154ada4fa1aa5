"""Dense real-matrix kernels: generalized inverses, exponentials, Sylvester and
Riccati solvers, rank decisions and spectral checks.

Every function is pure; inputs are converted with ``np.asarray`` and never
modified.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NotStabilizable, SpectraOverlap, ZeroMatrix

DEFAULT_RANK_TOL = 1e-9
# Singular values below this are zero whatever the matrix scale: derived
# matrices such as E(I - F^+ F) are pure rounding noise when they vanish.
ABS_RANK_FLOOR = 1e-12

# Fixed seed for the random complex probes used by the Rosenbrock check.
ROSENBROCK_PROBE_SEED = 7331
ROSENBROCK_NUM_PROBES = 32

_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray

    @property
    def real_parts(self):
        return self.eigenvalues.real

    @property
    def max_real(self):
        return float(np.max(self.eigenvalues.real)) if self.eigenvalues.size else -np.inf

    @property
    def min_real(self):
        return float(np.min(self.eigenvalues.real)) if self.eigenvalues.size else np.inf

    def __len__(self):
        return self.eigenvalues.size


@dataclass(frozen=True)
class RankReport:
    rank: int
    singular_values: np.ndarray
    tolerance_used: float


def as_matrix(M, rows=None, cols=None, name="matrix"):
    """Coerce to a finite 2-D float array, optionally checking the shape."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        as_row = rows == 1 or (cols is not None and M.size == cols and rows != M.size)
        M = M.reshape(1, -1) if as_row else M.reshape(-1, 1)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {M.shape}")
    if rows is not None and M.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {M.shape[1]}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def _threshold(s, rel_tol):
    return max(rel_tol * s[0], ABS_RANK_FLOOR) if s.size else ABS_RANK_FLOOR


def pinv(M, rel_tol=DEFAULT_RANK_TOL):
    """Moore-Penrose inverse via the SVD.

    Singular values below ``max(rel_tol * s_max, ABS_RANK_FLOOR)`` are treated
    as zero, so a zero matrix maps to the zero transpose.
    """
    M = np.asarray(M)
    r, c = M.shape
    if M.size == 0:
        return np.zeros((c, r), dtype=M.dtype)
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    keep = s > _threshold(s, rel_tol)
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (Vh.conj().T * inv_s) @ U.conj().T


def expm(M):
    """Matrix exponential by scaling and squaring with a [13/13] Pade approximant.

    The scaling exponent is chosen so that ``||M / 2**s||_1 <= 0.5``.
    """
    M = np.asarray(M, dtype=float if not np.iscomplexobj(M) else complex)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError("expm requires a square matrix")
    if n == 0:
        return M.copy()
    norm = np.linalg.norm(M, 1)
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    A = M / (2.0 ** s)
    b = _PADE13
    ident = np.eye(n, dtype=A.dtype)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def spectrum(M):
    M = np.asarray(M)
    if M.shape[0] != M.shape[1]:
        raise ValueError("spectrum requires a square matrix")
    if M.size == 0:
        return Spectrum(np.zeros(0, dtype=complex))
    return Spectrum(np.linalg.eigvals(M).astype(complex))


def solve_sylvester(A, B, C, gap_tol=1e-8):
    """Solve ``X A - B X = C`` for X by Kronecker vectorization.

    ``A`` is k x k, ``B`` is l x l and ``C`` is l x k. Raises
    :class:`SpectraOverlap` when some eigenvalue of ``A`` is within
    ``gap_tol * (1 + max(|A|, |B|))`` of an eigenvalue of ``B``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    k, l = A.shape[0], B.shape[0]
    if C.shape != (l, k):
        raise ValueError(f"C must be {l}x{k}, got {C.shape}")
    if k == 0 or l == 0:
        return np.zeros((l, k))
    la = np.linalg.eigvals(A)
    lb = np.linalg.eigvals(B)
    gap = np.min(np.abs(la[:, None] - lb[None, :]))
    scale = 1.0 + max(np.abs(la).max(), np.abs(lb).max())
    if gap < gap_tol * scale:
        raise SpectraOverlap(f"spectra of A and B overlap (min gap {gap:.3e})")
    # column-major vec: vec(X A) = (A^T kron I) vec X, vec(B X) = (I kron B) vec X
    K = np.kron(A.T, np.eye(l)) - np.kron(np.eye(k), B)
    x = np.linalg.solve(K, C.reshape(-1, order="F"))
    return x.reshape((l, k), order="F")


def solve_care_identity(A, B):
    """Stabilizing solution P of ``A^T P + P A + I - P B B^T P = 0``.

    Uses the ordered real Schur form of the Hamiltonian matrix; the stable
    invariant subspace ``[U11; U21]`` gives ``P = U21 U11^{-1}``.
    """
    A = as_matrix(A, name="A")
    n = A.shape[0]
    B = as_matrix(B, rows=n, name="B")
    G = B @ B.T
    H = np.block([[A, -G], [-np.eye(n), -A.T]])
    eig = np.linalg.eigvals(H)
    hscale = max(1.0, np.linalg.norm(H, 1))
    if np.min(np.abs(eig.real)) < 1e-10 * hscale:
        raise NotStabilizable("Hamiltonian matrix has eigenvalues on the imaginary axis")
    T, Z, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NotStabilizable(f"stable invariant subspace has dimension {sdim}, expected {n}")
    U11 = Z[:n, :n]
    U21 = Z[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise NotStabilizable("stable invariant subspace is not a graph subspace")
    P = np.linalg.solve(U11.T, U21.T).T
    return 0.5 * (P + P.T)


def stabilizing_lmi_pair(A, B):
    """Return ``(Q, P)`` with Q > 0, ``A Q + Q A^T - 2 B B^T < 0`` and ``P = Q^{-1}``.

    P solves ``A^T P + P A + I - P B B^T P = 0``, which gives
    ``A Q + Q A^T - 2 B B^T = -Q^2 - B B^T``.
    """
    P = solve_care_identity(A, B)
    if np.linalg.eigvalsh(P).min() <= 0.0:
        raise NotStabilizable("Riccati solution is not positive definite")
    Q = np.linalg.inv(P)
    Q = 0.5 * (Q + Q.T)
    return Q, P


def rank_of(M, rel_tol=DEFAULT_RANK_TOL):
    M = np.asarray(M)
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    if M.size == 0:
        return RankReport(0, np.zeros(0), rel_tol)
    s = np.linalg.svd(M, compute_uv=False)
    tol = _threshold(s, rel_tol)
    return RankReport(int(np.sum(s > tol)), s, float(tol))


def rank(M, rel_tol=DEFAULT_RANK_TOL):
    return rank_of(M, rel_tol).rank


def full_column_factor(M, rel_tol=DEFAULT_RANK_TOL):
    """Split ``M = M0 @ M1`` with M0 of full column rank and M1 of full row rank."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        raise ZeroMatrix("cannot factor an empty matrix")
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > _threshold(s, rel_tol)))
    if r == 0:
        raise ZeroMatrix("matrix has rank 0")
    return U[:, :r].copy(), s[:r, None] * Vh[:r]


def row_basis_selector(M, rel_tol=DEFAULT_RANK_TOL):
    """Greedy maximal independent row subset.

    Returns ``(M0, S)`` where ``S`` is a 0/1 selection matrix with
    ``M0 = S @ M``; rows are visited in order and kept when they raise the rank.
    """
    M = np.asarray(M, dtype=float)
    total = rank(M, rel_tol) if M.size else 0
    if total == 0:
        raise ZeroMatrix("matrix has rank 0")
    scale = np.linalg.norm(M, 2)
    chosen = []
    for i in range(M.shape[0]):
        trial = M[chosen + [i]]
        s = np.linalg.svd(trial, compute_uv=False)
        if np.sum(s > max(rel_tol * scale, ABS_RANK_FLOOR)) == len(chosen) + 1:
            chosen.append(i)
        if len(chosen) == total:
            break
    S = np.zeros((len(chosen), M.shape[0]))
    S[np.arange(len(chosen)), chosen] = 1.0
    return M[chosen].copy(), S


def check_spectral_separation(M1, M2, sigma):
    """True iff Re(lambda(M2)) < sigma < Re(lambda(M1)) < 0 for all eigenvalues."""
    r1 = spectrum(M1).real_parts
    r2 = spectrum(M2).real_parts
    if sigma >= 0:
        return False
    return bool(np.all(r2 < sigma) and np.all((r1 > sigma) & (r1 < 0.0)))


def is_observable(A, C, rel_tol=DEFAULT_RANK_TOL):
    """PBH test: rank [A - lambda I; C] = n at every eigenvalue of A."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    if n == 0:
        return True
    scale = max(1.0, np.linalg.norm(A, 2), np.linalg.norm(C, 2))
    for lam in np.linalg.eigvals(A):
        pencil = np.vstack([A - lam * np.eye(n), C])
        s = np.linalg.svd(pencil, compute_uv=False)
        if np.sum(s > rel_tol * scale) < n:
            return False
    return True


def _decoupled_state_matrix(A, E, C, F):
    """G (A - E F^+ C) with G = I - Ebar (Cbar Ebar)^+ Cbar, or None if unusable."""
    n = A.shape[0]
    m = C.shape[0]
    Fp = pinv(F)
    Cbar = (np.eye(m) - F @ Fp) @ C
    Abar = A - E @ Fp @ C
    Ebar = E @ (np.eye(F.shape[1]) - Fp @ F)
    G = np.eye(n) - Ebar @ pinv(Cbar @ Ebar) @ Cbar
    if np.linalg.norm(G @ Ebar) > 1e-8 * max(1.0, np.linalg.norm(Ebar)):
        return None
    return G @ Abar


def rosenbrock_rank_condition(A, E, C, F, rel_tol=DEFAULT_RANK_TOL):
    """Decide rank [[A - sI, E], [C, F]] == n + rank [E; F] for all complex s.

    Rank drops at finitely many points only, so the pencil is evaluated at
    the eigenvalues of A, the eigenvalues of the decoupled state matrix
    G*Abar (where unobservable modes coincide with invariant zeros), and
    32 seeded random probes in a disk of radius ``10 * ||A||``.
    """
    A = np.asarray(A, dtype=float)
    E = np.asarray(E, dtype=float)
    C = np.asarray(C, dtype=float)
    F = np.asarray(F, dtype=float)
    n = A.shape[0]
    target = n + rank(np.vstack([E, F]), rel_tol) if E.size else n
    cands = list(np.linalg.eigvals(A)) if n else []
    GA = _decoupled_state_matrix(A, E, C, F) if E.size else A
    if GA is not None and n:
        cands.extend(np.linalg.eigvals(GA))
    rng = np.random.default_rng(ROSENBROCK_PROBE_SEED)
    radius = 10.0 * max(np.linalg.norm(A, 2) if n else 0.0, 1.0)
    rad = radius * np.sqrt(rng.uniform(size=ROSENBROCK_NUM_PROBES))
    ang = rng.uniform(0.0, 2 * np.pi, size=ROSENBROCK_NUM_PROBES)
    cands.extend(rad * np.exp(1j * ang))
    blocks = [np.hstack([A, E]), np.hstack([C, F])]
    base = np.vstack(blocks).astype(complex)
    shift = np.zeros_like(base)
    shift[:n, :n] = np.eye(n)
    scale = max(1.0, np.linalg.norm(base, 2))
    for s in cands:
        sv = np.linalg.svd(base - s * shift, compute_uv=False)
        r = int(np.sum(sv > rel_tol * max(scale, abs(s))))
        if r != target:
            return False
    return True


def block_diag(*blocks):
    """Block-diagonal stack of 2-D blocks; zero-size blocks are allowed."""
    blocks = [np.asarray(b, dtype=float).reshape(np.shape(b) if np.ndim(b) == 2 else (1, 1)) for b in blocks]
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def poles_to_matrix(poles):
    """Real block-diagonal matrix with the given eigenvalues.

    Complex poles must come in conjugate pairs and become 2x2 blocks
    ``[[a, b], [-b, a]]``.
    """
    poles = [complex(p) for p in poles]
    blocks = []
    used = [False] * len(poles)
    for i, p in enumerate(poles):
        if used[i]:
            continue
        used[i] = True
        if abs(p.imag) < 1e-14:
            blocks.append(np.array([[p.real]]))
            continue
        for j in range(i + 1, len(poles)):
            if not used[j] and abs(poles[j] - p.conjugate()) < 1e-12:
                used[j] = True
                break
        else:
            raise ValueError(f"complex pole {p} has no conjugate partner")
        a, b = p.real, abs(p.imag)
        blocks.append(np.array([[a, b], [-b, a]]))
    return block_diag(*blocks) if blocks else np.zeros((0, 0))
