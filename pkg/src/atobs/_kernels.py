"""Hot loops: fixed-step RK4 for linear systems and the swarm protocol loop.

The function bodies are plain numpy and are compiled with ``numba.njit``
when numba is importable. Setting ``ATOBS_DISABLE_NUMBA=1`` (read at import
time) forces the interpreted numpy path; both paths run the same code.
"""
import os

import numpy as np

DISABLE_ENV = "ATOBS_DISABLE_NUMBA"


def _want_numba():
    if os.environ.get(DISABLE_ENV, "").strip().lower() in ("1", "true", "yes", "on"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USING_NUMBA = _want_numba()


def _rk4_linear(A, B, z0, V, h, blowup):
    """Integrate z' = A z + B v(t) with classical RK4.

    ``V`` holds input samples on the half-step grid: row 2k is t_k, row 2k+1
    is t_k + h/2, row 2k+2 is t_{k+1}. Returns the trajectory and the first
    step index whose state exceeded ``blowup`` in absolute value (-1 if none).
    """
    steps = (V.shape[0] - 1) // 2
    nz = z0.shape[0]
    Z = np.empty((steps + 1, nz))
    Z[0] = z0
    z = z0.copy()
    hh = 0.5 * h
    for k in range(steps):
        b0 = B @ V[2 * k]
        bh = B @ V[2 * k + 1]
        b1 = B @ V[2 * k + 2]
        k1 = A @ z + b0
        k2 = A @ (z + hh * k1) + bh
        k3 = A @ (z + hh * k2) + bh
        k4 = A @ (z + h * k3) + b1
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Z[k + 1] = z
        if np.max(np.abs(z)) > blowup or not np.all(np.isfinite(z)):
            return Z, k + 1
    return Z, -1


def _swarm_rates(X, W1, W2, U, At, Bt, Ct, Lap, M1t, M2t, N1t, N2t):
    Zeta = Lap @ (X @ Ct)
    return X @ At + U @ Bt, W1 @ M1t + Zeta @ N1t, W2 @ M2t + Zeta @ N2t


def _swarm_loop(At, Bt, Ct, Lap, M1t, M2t, N1t, N2t, injt, wnowt, wdelt, staticyt,
                P, PB, X0, W10, W20, rho0, h, K, steps, blowup):
    """Closed-loop swarm with per-agent delayed observers and adaptive gains.

    Matrices arrive transposed so that agent-stacked rows multiply on the
    right. Control and gain rates are held over each step; plant and observer
    states advance by RK4. Before step K (t < tau) the control and gain rate
    are zero and no estimate is formed.
    """
    N, n = X0.shape
    d = W10.shape[1]
    r = injt.shape[1]
    p = Bt.shape[0]
    q = wnowt.shape[0]
    Xs = np.zeros((steps + 1, N, n))
    XIH = np.zeros((steps + 1, N, n))
    RHO = np.zeros((steps + 1, N))
    US = np.zeros((steps + 1, N, p))
    ring = np.zeros((K + 1, N, q))
    X = X0.copy()
    W1 = W10.copy()
    W2 = W20.copy()
    rho = rho0.copy()
    U = np.zeros((N, p))
    rate = np.zeros(N)
    hh = 0.5 * h
    status = -1
    for k in range(steps + 1):
        Zeta = Lap @ (X @ Ct)
        R = Zeta @ injt
        slot = k % (K + 1)
        ring[slot, :, 0:d] = W1
        ring[slot, :, d:d + r] = R
        ring[slot, :, d + r:2 * d + r] = W2
        ring[slot, :, 2 * d + r:2 * d + 2 * r] = R
        Xs[k] = X
        RHO[k] = rho
        if k >= K:
            XH = ring[slot] @ wnowt + ring[(k + 1) % (K + 1)] @ wdelt + Zeta @ staticyt
            XIH[k] = XH
            for i in range(N):
                xi = XH[i]
                g = xi @ PB
                quad = xi @ (P @ xi)
                for j in range(p):
                    U[i, j] = -(rho[i] + quad) * g[j]
                rate[i] = g @ g
        US[k] = U
        if k == steps:
            break
        a1, b1, c1 = _swarm_rates(X, W1, W2, U, At, Bt, Ct, Lap, M1t, M2t, N1t, N2t)
        a2, b2, c2 = _swarm_rates(X + hh * a1, W1 + hh * b1, W2 + hh * c1, U,
                                  At, Bt, Ct, Lap, M1t, M2t, N1t, N2t)
        a3, b3, c3 = _swarm_rates(X + hh * a2, W1 + hh * b2, W2 + hh * c2, U,
                                  At, Bt, Ct, Lap, M1t, M2t, N1t, N2t)
        a4, b4, c4 = _swarm_rates(X + h * a3, W1 + h * b3, W2 + h * c3, U,
                                  At, Bt, Ct, Lap, M1t, M2t, N1t, N2t)
        X = X + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        W1 = W1 + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        W2 = W2 + (h / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        rho = rho + h * rate
        big = max(np.max(np.abs(X)), np.max(rho))
        if d > 0:
            big = max(big, np.max(np.abs(W1)), np.max(np.abs(W2)))
        if big > blowup or not np.isfinite(big):
            status = k + 1
            Xs[k + 1] = X
            RHO[k + 1] = rho
            return Xs[:k + 2], XIH[:k + 2], RHO[:k + 2], US[:k + 2], status
    return Xs, XIH, RHO, US, status


if USING_NUMBA:
    from numba import njit

    rk4_linear = njit(cache=True)(_rk4_linear)
    _swarm_rates_jit = njit(cache=True)(_swarm_rates)
    # the loop calls the rate function by its global name, so rebind before compiling
    _swarm_rates = _swarm_rates_jit
    swarm_loop = njit(cache=True)(_swarm_loop)
else:
    rk4_linear = _rk4_linear
    swarm_loop = _swarm_loop
