"""numba-compiled RK4 loop over the packed plant + observer + oracle state.

This mirrors ``sim.augmented_rhs`` (which is built from the numpy reference
operations) term by term; ``tests/test_sim.py`` checks the two against each
other. Everything writes into preallocated buffers, the state dimensions are
tiny and allocation would dominate otherwise. Determinants use the fully
expanded cofactor sum over permutations, with the tables built once in Python.
"""
import itertools
import math

import numpy as np
from numba import njit

OK, NONFINITE, DIVERGED, PSI_BOUND = 0, 1, 2, 3


def permutation_table(n):
    """All permutations of ``range(n)`` with their signs, as int/float arrays."""
    if n == 0:
        return np.zeros((1, 1), dtype=np.int64), np.ones(1)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    signs = np.empty(len(perms))
    for k, perm in enumerate(perms):
        inversions = sum(1 for a in range(n) for b in range(a + 1, n) if perm[a] > perm[b])
        signs[k] = -1.0 if inversions % 2 else 1.0
    return perms, signs


def workspace(n_x, n_u, n_y, p):
    return (
        np.zeros(n_u),          # 0 u
        np.zeros(n_y),          # 1 y
        np.zeros((n_x, n_x)),   # 2 A
        np.zeros((n_x, p)),     # 3 Omega
        np.zeros((n_x, 1)),     # 4 L
        np.zeros((n_y, n_x)),   # 5 C
        np.zeros((n_y, p)),     # 6 Psi
        np.zeros((n_x, n_y)),   # 7 Gamma
        np.zeros((n_x, n_x)),   # 8 Lambda
        np.zeros((n_y, p)),     # 9 Xi
        np.zeros((n_x, p)),     # 10 T
        np.zeros((n_x, p)),     # 11 C' Xi
        np.zeros(n_x),          # 12 zbar
        np.zeros(n_y),          # 13 innovation / C zbar
        np.zeros(p),            # 14 residual
        np.zeros((p, p)),       # 15 Phi
        np.zeros((p, p)),       # 16 adj
        np.zeros(max(p - 1, 1), dtype=np.int64),  # 17 minor rows
        np.zeros(max(p - 1, 1), dtype=np.int64),  # 18 minor cols
        np.zeros(p),            # 19 theta_dot
    )


@njit(cache=True)
def _affine_into(out, base, du, dy, u, y, use_y):
    r, c = base.shape
    for i in range(r):
        for j in range(c):
            v = base[i, j]
            for k in range(u.shape[0]):
                v += u[k] * du[k, i, j]
            if use_y:
                for k in range(y.shape[0]):
                    v += y[k] * dy[k, i, j]
            out[i, j] = v


@njit(cache=True)
def _input_into(u, t, sig):
    u[:] = 0.0
    for r in range(sig.shape[0]):
        if sig[r, 6] <= t and t < sig[r, 7]:
            v = sig[r, 2]
            if sig[r, 5] != 0.0:
                v *= math.exp(-sig[r, 5] * t)
            if sig[r, 1] == 1.0:
                v *= math.sin(sig[r, 3] * t + sig[r, 4])
            elif sig[r, 1] == 2.0:
                v *= math.cos(sig[r, 3] * t + sig[r, 4])
            u[int(sig[r, 0])] += v


@njit(cache=True)
def _det_perm(M, rows, cols, n, perms, signs):
    total = 0.0
    for k in range(perms.shape[0]):
        prod = signs[k]
        for a in range(n):
            prod *= M[rows[a], cols[perms[k, a]]]
        total += prod
    return total


@njit(cache=True)
def _det_adj(M, adj, rows, cols, perms, signs, mperms, msigns):
    """Determinant of M, adjugate written into ``adj``."""
    p = M.shape[0]
    if p == 1:
        adj[0, 0] = 1.0
        return M[0, 0]
    full = np.arange(p)
    det = _det_perm(M, full, full, p, perms, signs)
    for i in range(p):
        r = 0
        for a in range(p):
            if a != i:
                rows[r] = a
                r += 1
        for j in range(p):
            c = 0
            for b in range(p):
                if b != j:
                    cols[c] = b
                    c += 1
            sign = 1.0 if (i + j) % 2 == 0 else -1.0
            adj[j, i] = sign * _det_perm(M, rows, cols, p - 1, mperms, msigns)
    return det


@njit(cache=True)
def rhs_into(out, t, s, dims, theta, maps, sig, P_inv, lam, kappa, rho, prop2, mode, tables, work):
    nx, ny, p = dims[0], dims[2], dims[3]
    Ab, Adu, Ady, Ob, Odu, Ody, Lb, Ldu, Ldy, Cb, Cdu, Cdy, Sb, Sdu, Sdy, Gb, Gdu, Gdy = maps
    perms, signs, mperms, msigns = tables
    (u, y, A, Om, L, C, Psi, G, Lam, Xi, T, CtXi, zbar, innov, res, Phi, adj, rows, cols, dth) = work

    ox, oz, oth = 0, nx, 2 * nx
    oY = oth + p
    oYs = oY + nx * p
    oP = oYs + p
    oe = oP + p * p

    _input_into(u, t, sig)
    _affine_into(C, Cb, Cdu, Cdy, u, y, False)
    _affine_into(Psi, Sb, Sdu, Sdy, u, y, False)
    for i in range(ny):
        v = 0.0
        for j in range(nx):
            v += C[i, j] * s[ox + j]
        for j in range(p):
            v += Psi[i, j] * theta[j]
        y[i] = v
    _affine_into(A, Ab, Adu, Ady, u, y, True)
    _affine_into(Om, Ob, Odu, Ody, u, y, True)
    _affine_into(L, Lb, Ldu, Ldy, u, y, True)
    _affine_into(G, Gb, Gdu, Gdy, u, y, True)

    for i in range(nx):
        for j in range(nx):
            v = A[i, j]
            for k in range(ny):
                v -= G[i, k] * C[k, j]
            Lam[i, j] = v
    for i in range(ny):
        for j in range(p):
            v = Psi[i, j]
            for k in range(nx):
                v += C[i, k] * s[oY + k * p + j]
            Xi[i, j] = v
    for i in range(p):
        for j in range(p):
            Phi[i, j] = s[oP + i * p + j]
    if prop2:
        for a in range(nx):
            for j in range(p):
                v = 0.0
                for i in range(ny):
                    v += C[i, a] * Xi[i, j]
                CtXi[a, j] = v
        for i in range(nx):
            for j in range(p):
                v = 0.0
                for a in range(nx):
                    v += P_inv[i, a] * CtXi[a, j]
                T[i, j] = v

    # plant
    for i in range(nx):
        v = 0.0
        for j in range(nx):
            v += A[i, j] * s[ox + j]
        for j in range(p):
            v += Om[i, j] * theta[j]
        out[ox + i] = v + L[i, 0]
    # state estimator
    for i in range(nx):
        v = 0.0
        for j in range(nx):
            v += Lam[i, j] * s[oz + j]
        w = 0.0
        for j in range(ny):
            w += G[i, j] * y[j]
        v = v + w + L[i, 0]
        if prop2:
            w = 0.0
            for j in range(p):
                w += T[i, j] * s[oYs + j]
            v = v + rho * w
        out[oz + i] = v
    # regressor filter
    for i in range(nx):
        for j in range(p):
            v = 0.0
            for k in range(nx):
                v += Lam[i, k] * s[oY + k * p + j]
            w = 0.0
            for k in range(ny):
                w += G[i, k] * Psi[k, j]
            v = v + Om[i, j] - w
            if prop2:
                w = 0.0
                for k in range(p):
                    w += T[i, k] * Phi[k, j]
                v = v - rho * w
            out[oY + i * p + j] = v
    # extension
    for i in range(ny):
        v = y[i]
        for j in range(nx):
            v -= C[i, j] * s[oz + j]
        innov[i] = v
    for j in range(p):
        v = 0.0
        for i in range(ny):
            v += Xi[i, j] * innov[i]
        out[oYs + j] = -kappa * s[oYs + j] + v
    for i in range(p):
        for j in range(p):
            v = 0.0
            for k in range(ny):
                v += Xi[k, i] * Xi[k, j]
            out[oP + i * p + j] = -kappa * Phi[i, j] + v
    # mixing
    for i in range(p):
        v = 0.0
        for j in range(p):
            v += Phi[i, j] * s[oth + j]
        res[i] = s[oYs + i] - v
    if mode == 2:
        for i in range(p):
            out[oth + i] = lam * res[i]
    else:
        det = _det_adj(Phi, adj, rows, cols, perms, signs, mperms, msigns)
        scale = math.sqrt(max(det, 0.0)) if mode == 1 else 1.0
        for i in range(p):
            v = 0.0
            for j in range(p):
                v += adj[i, j] * res[j]
            dth[i] = v
        for i in range(p):
            if mode == 1:
                out[oth + i] = lam * (scale * dth[i])
            else:
                out[oth + i] = lam * dth[i]
    # error oracle
    for i in range(nx):
        v = 0.0
        for j in range(p):
            v += s[oY + i * p + j] * theta[j]
        zbar[i] = (s[ox + i] - v) - s[oz + i]
    for k in range(ny):
        v = 0.0
        for j in range(nx):
            v += C[k, j] * zbar[j]
        innov[k] = v
    for j in range(p):
        v = 0.0
        for k in range(ny):
            v += Xi[k, j] * innov[k]
        out[oe + j] = -kappa * s[oe + j] + v


@njit(cache=True)
def _first_nonfinite(v):
    for i in range(v.shape[0]):
        if not np.isfinite(v[i]):
            return i
    return -1


@njit(cache=True)
def integrate(s0, dt, n_steps, record_every, guard, psi_check, psi_sup,
              dims, theta, maps, sig, P_inv, lam, kappa, rho, prop2, mode, tables, work):
    """Fixed-step RK4 from t=0. Returns (times, records, status, fault_t, fault_stage, fault_index)."""
    m = s0.shape[0]
    n_rec = n_steps // record_every + 2
    records = np.empty((n_rec, m))
    times = np.empty(n_rec)
    s = s0.copy()
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    records[0] = s
    times[0] = 0.0
    k = 1
    status = OK
    fault_t = np.nan
    fault_stage = -1
    fault_index = -1
    u, y, Psi = work[0], work[1], work[6]
    Sb, Sdu, Sdy = maps[12], maps[13], maps[14]
    half = 0.5 * dt
    sixth = dt / 6.0
    for n in range(n_steps):
        t = n * dt
        if psi_check:
            _input_into(u, t, sig)
            _affine_into(Psi, Sb, Sdu, Sdy, u, y, False)
            if np.linalg.norm(Psi, 2) > psi_sup * (1.0 + 1e-12):
                status = PSI_BOUND
                fault_t = t
                break
        rhs_into(k1, t, s, dims, theta, maps, sig, P_inv, lam, kappa, rho, prop2, mode, tables, work)
        bad = _first_nonfinite(k1)
        if bad >= 0:
            status, fault_t, fault_stage, fault_index = NONFINITE, t, 1, bad
            break
        for i in range(m):
            tmp[i] = s[i] + half * k1[i]
        rhs_into(k2, t + half, tmp, dims, theta, maps, sig, P_inv, lam, kappa, rho, prop2, mode, tables, work)
        bad = _first_nonfinite(k2)
        if bad >= 0:
            status, fault_t, fault_stage, fault_index = NONFINITE, t, 2, bad
            break
        for i in range(m):
            tmp[i] = s[i] + half * k2[i]
        rhs_into(k3, t + half, tmp, dims, theta, maps, sig, P_inv, lam, kappa, rho, prop2, mode, tables, work)
        bad = _first_nonfinite(k3)
        if bad >= 0:
            status, fault_t, fault_stage, fault_index = NONFINITE, t, 3, bad
            break
        for i in range(m):
            tmp[i] = s[i] + dt * k3[i]
        rhs_into(k4, t + dt, tmp, dims, theta, maps, sig, P_inv, lam, kappa, rho, prop2, mode, tables, work)
        bad = _first_nonfinite(k4)
        if bad >= 0:
            status, fault_t, fault_stage, fault_index = NONFINITE, t, 4, bad
            break
        biggest = 0.0
        for i in range(m):
            s[i] = s[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            a = abs(s[i])
            if a > biggest:
                biggest = a
        bad = _first_nonfinite(s)
        if bad >= 0:
            status, fault_t, fault_stage, fault_index = NONFINITE, (n + 1) * dt, 0, bad
            break
        if (n + 1) % record_every == 0 or n + 1 == n_steps:
            records[k] = s
            times[k] = (n + 1) * dt
            k += 1
        if biggest > guard:
            status = DIVERGED
            fault_t = (n + 1) * dt
            if times[k - 1] != fault_t:
                records[k] = s
                times[k] = fault_t
                k += 1
            break
    return times[:k], records[:k], status, fault_t, fault_stage, fault_index
