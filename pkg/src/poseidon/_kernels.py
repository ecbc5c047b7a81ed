"""Compiled inner loops of the CAVI engine.

Datasets are stacked row-wise: row i of ``Y`` belongs to dataset ``ds[i]``.
Per-dataset quantities (Dirichlet parameters, atoms, priors) carry a
leading T axis. The adjacency is passed in CSR form (indptr, indices).
"""

import math

import numpy as np
from numba import njit

from .numerics import _digamma_scalar, _log_gamma_scalar

psi = njit(cache=True)(_digamma_scalar)
lgam = njit(cache=True)(_log_gamma_scalar)

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_EXP_UNDERFLOW = -746.0


@njit(cache=True)
def g(x, y):
    return psi(x) - psi(x + y)


@njit(cache=True)
def expected_log_pi(sa, sb):
    K = sa.shape[0] + 1
    out = np.zeros(K)
    acc = 0.0
    for k in range(K - 1):
        out[k] = acc + g(sa[k], sb[k])
        acc += g(sb[k], sa[k])
    out[K - 1] = acc
    return out


@njit(cache=True)
def dirichlet_log_weights(p):
    T, K, L = p.shape
    out = np.empty((T, K, L))
    for t in range(T):
        for k in range(K):
            tot = 0.0
            for l in range(L):
                tot += p[t, k, l]
            ps = psi(tot)
            for l in range(L):
                out[t, k, l] = psi(p[t, k, l]) - ps
    return out


@njit(cache=True)
def loglik_coefficients(m, kk, c, d):
    T, L = m.shape
    a = np.empty((T, L))
    b = np.empty((T, L))
    e = np.empty((T, L))
    for t in range(T):
        for l in range(L):
            prec = c[t, l] / d[t, l]
            a[t, l] = -0.5 * (math.log(d[t, l]) - psi(c[t, l]) + 1.0 / kk[t, l] + prec * m[t, l] * m[t, l])
            b[t, l] = prec * m[t, l]
            e[t, l] = -0.5 * prec
    return a, b, e


@njit(cache=True)
def neighbour_sums(rho, indptr, indices):
    J, K = rho.shape
    out = np.zeros((J, K))
    for j in range(J):
        for p in range(indptr[j], indptr[j + 1]):
            q = indices[p]
            for k in range(K):
                out[j, k] += rho[q, k]
    return out


@njit(cache=True)
def _softmax_rows(x):
    n, m = x.shape
    for r in range(n):
        mx = x[r, 0]
        for q in range(1, m):
            if x[r, q] > mx:
                mx = x[r, q]
        s = 0.0
        for q in range(m):
            x[r, q] = math.exp(x[r, q] - mx)
            s += x[r, q]
        for q in range(m):
            x[r, q] /= s
    return x


@njit(cache=True)
def data_term(YT, Y2T, ds, xi, a, b, e):
    """(J, K) sums over rows and atoms of xi * expected log-likelihood."""
    N, K, L = xi.shape
    XA = np.zeros(K)
    XB = np.empty((N, K))
    XE = np.empty((N, K))
    for i in range(N):
        t = ds[i]
        for k in range(K):
            sa = 0.0
            sb = 0.0
            se = 0.0
            for l in range(L):
                x = xi[i, k, l]
                sa += x * a[t, l]
                sb += x * b[t, l]
                se += x * e[t, l]
            XA[k] += sa
            XB[i, k] = sb
            XE[i, k] = se
    D = YT @ XB + Y2T @ XE
    for j in range(D.shape[0]):
        for k in range(K):
            D[j, k] += XA[k]
    return D


@njit(cache=True)
def column_update(rho, YT, Y2T, ds, xi, a, b, e, elog_pi, beta, indptr, indices):
    logits = data_term(YT, Y2T, ds, xi, a, b, e)
    nb = neighbour_sums(rho, indptr, indices)
    J, K = logits.shape
    for j in range(J):
        for k in range(K):
            logits[j, k] += elog_pi[k] + beta * nb[j, k]
    return _softmax_rows(logits)


@njit(cache=True)
def row_update(rho, Y, Y2, ds, dir_p, a, b, e):
    N = Y.shape[0]
    K = rho.shape[1]
    L = dir_p.shape[2]
    YR = Y @ rho
    Y2R = Y2 @ rho
    mass = rho.sum(axis=0)
    hd = dirichlet_log_weights(dir_p)
    xi = np.empty((N, K, L))
    for i in range(N):
        t = ds[i]
        for k in range(K):
            mx = -np.inf
            for l in range(L):
                v = mass[k] * a[t, l] + YR[i, k] * b[t, l] + Y2R[i, k] * e[t, l] + hd[t, k, l]
                xi[i, k, l] = v
                if v > mx:
                    mx = v
            s = 0.0
            for l in range(L):
                z = xi[i, k, l] - mx
                # exp underflows to exactly 0 below this; skipping it is exact
                w = math.exp(z) if z > _EXP_UNDERFLOW else 0.0
                xi[i, k, l] = w
                s += w
            for l in range(L):
                xi[i, k, l] /= s
    return xi


@njit(cache=True)
def omega_update(xi, ds, T, b0):
    N, K, L = xi.shape
    p = np.full((T, K, L), b0)
    for i in range(N):
        t = ds[i]
        for k in range(K):
            for l in range(L):
                p[t, k, l] += xi[i, k, l]
    return p


@njit(cache=True)
def stick_update(rho, e_alpha):
    K = rho.shape[1]
    mass = rho.sum(axis=0)
    sa = np.empty(K - 1)
    sb = np.empty(K - 1)
    tail = 0.0
    for k in range(K - 2, -1, -1):
        sa[k] = 1.0 + mass[k]
        sb[k] = e_alpha + tail
        tail += mass[k]
    return sa, sb


@njit(cache=True)
def atom_moments(rho, xi, Y, Y2, ds, T):
    """Per (t, l): total weight n, weighted sum of y and of y**2."""
    N, K, L = xi.shape
    YR = Y @ rho
    Y2R = Y2 @ rho
    mass = rho.sum(axis=0)
    n = np.zeros((T, L))
    sy = np.zeros((T, L))
    sy2 = np.zeros((T, L))
    for i in range(N):
        t = ds[i]
        for k in range(K):
            for l in range(L):
                x = xi[i, k, l]
                n[t, l] += x * mass[k]
                sy[t, l] += x * YR[i, k]
                sy2[t, l] += x * Y2R[i, k]
    return n, sy, sy2


@njit(cache=True)
def atom_update(n, sy, sy2, m0, k0, c0, d0, empty):
    T, L = n.shape
    m = np.empty((T, L))
    kk = np.empty((T, L))
    c = np.empty((T, L))
    d = np.empty((T, L))
    for t in range(T):
        for l in range(L):
            nl = n[t, l]
            if nl < empty:
                ybar = m0[t]
            else:
                ybar = sy[t, l] / nl
            within = sy2[t, l] - 2.0 * ybar * sy[t, l] + ybar * ybar * nl
            if within < 0.0:
                within = 0.0
            kk[t, l] = nl + k0[t]
            c[t, l] = c0[t] + 0.5 * nl
            m[t, l] = (k0[t] * m0[t] + nl * ybar) / kk[t, l]
            dev = ybar - m0[t]
            d[t, l] = d0[t] + nl * k0[t] * dev * dev / (2.0 * kk[t, l]) + 0.5 * within
    return m, kk, c, d


@njit(cache=True)
def stick_g_sum(sa, sb):
    s = 0.0
    for k in range(sa.shape[0]):
        s += g(sb[k], sa[k])
    return s


@njit(cache=True)
def potts_pl_terms(rho, elog_pi, nb, betas):
    """Mean-field pseudo-likelihood of C for each beta in ``betas``."""
    J, K = rho.shape
    G = betas.shape[0]
    out = np.zeros(G)
    for gi in range(G):
        beta = betas[gi]
        tot = 0.0
        for j in range(J):
            mx = -np.inf
            for k in range(K):
                v = elog_pi[k] + beta * nb[j, k]
                tot += rho[j, k] * v
                if v > mx:
                    mx = v
            s = 0.0
            for k in range(K):
                s += math.exp(elog_pi[k] + beta * nb[j, k] - mx)
            tot -= mx + math.log(s)
        out[gi] = tot
    return out


@njit(cache=True)
def _xlogx_sum(x):
    s = 0.0
    for v in x.ravel():
        if v > 0.0:
            s += v * math.log(v)
    return s


@njit(cache=True)
def _nig_log_norm(k, c, d):
    return 0.5 * math.log(k) - _HALF_LOG_2PI + c * math.log(d) - lgam(c)


@njit(cache=True)
def elbo_components(rho, xi, Y, Y2, ds, dir_p, sa, sb, m, kk, c, d, s1, s2, beta_bar,
                    indptr, indices, m0, k0, c0, d0, b0, a_alpha, b_alpha):
    """Array of the seven ELBO terms: loglik, R, C, v, omega, theta, alpha."""
    N, K, L = xi.shape
    T = dir_p.shape[0]
    out = np.zeros(7)
    a, b, e = loglik_coefficients(m, kk, c, d)
    hd = dirichlet_log_weights(dir_p)
    YR = Y @ rho
    Y2R = Y2 @ rho
    mass = rho.sum(axis=0)

    loglik = 0.0
    r_term = 0.0
    for i in range(N):
        t = ds[i]
        for k in range(K):
            for l in range(L):
                x = xi[i, k, l]
                if x > 0.0:
                    loglik += x * (mass[k] * a[t, l] + YR[i, k] * b[t, l] + Y2R[i, k] * e[t, l])
                    r_term += x * (hd[t, k, l] - math.log(x))
    out[0] = loglik
    out[1] = r_term

    elog_pi = expected_log_pi(sa, sb)
    nb = neighbour_sums(rho, indptr, indices)
    betas = np.array([beta_bar])
    out[2] = potts_pl_terms(rho, elog_pi, nb, betas)[0] - _xlogx_sum(rho)

    elog_alpha = psi(s1) - math.log(s2)
    e_alpha = s1 / s2
    if K > 1:
        p_v = (K - 1) * elog_alpha
        q_v = 0.0
        for q in range(K - 1):
            gab = g(sa[q], sb[q])
            gba = g(sb[q], sa[q])
            p_v += (e_alpha - 1.0) * gba
            q_v += lgam(sa[q] + sb[q]) - lgam(sa[q]) - lgam(sb[q]) + (sa[q] - 1.0) * gab + (sb[q] - 1.0) * gba
        out[3] = p_v - q_v

    w = T * K * (lgam(L * b0) - L * lgam(b0))
    for t in range(T):
        for k in range(K):
            tot = 0.0
            for l in range(L):
                tot += dir_p[t, k, l]
                w += (b0 - 1.0) * hd[t, k, l] + lgam(dir_p[t, k, l]) - (dir_p[t, k, l] - 1.0) * hd[t, k, l]
            w -= lgam(tot)
    out[4] = w

    th = 0.0
    for t in range(T):
        th += L * _nig_log_norm(k0[t], c0[t], d0[t])
        for l in range(L):
            elog_var = math.log(d[t, l]) - psi(c[t, l])
            prec = c[t, l] / d[t, l]
            dev = m[t, l] - m0[t]
            th -= (c0[t] + 1.5) * elog_var + d0[t] * prec + 0.5 * k0[t] * (1.0 / kk[t, l] + prec * dev * dev)
            th -= _nig_log_norm(kk[t, l], c[t, l], d[t, l]) - (c[t, l] + 1.5) * elog_var - c[t, l] - 0.5
    out[5] = th

    p_a = a_alpha * math.log(b_alpha) - lgam(a_alpha) + (a_alpha - 1.0) * elog_alpha - b_alpha * e_alpha
    q_a = s1 * math.log(s2) - lgam(s1) + (s1 - 1.0) * elog_alpha - s1
    out[6] = p_a - q_a
    return out


@njit(cache=True)
def total(values):
    tot = 0.0
    for v in values:
        tot += v
    return tot


@njit(cache=True)
def grid_mean(grid, logq):
    mx = logq.max()
    s = 0.0
    acc = 0.0
    for gi in range(grid.shape[0]):
        w = math.exp(logq[gi] - mx)
        s += w
        acc += w * grid[gi]
    return acc / s


@njit(cache=True)
def run_loop(rho, xi, dir_p, sa, sb, m, kk, c, d, s1, s2, beta_bar,
             Y, Y2, YT, Y2T, ds, indptr, indices, m0, k0, c0, d0, b0, a_alpha, b_alpha,
             grid, fixed_beta, empty, tol, max_iters):
    """Steps 1-7 until the relative ELBO change drops below tol.

    Returns the final parameters, the per-sweep ELBO trace and a
    convergence flag; the first sweep is compared with the input state.
    """
    T = dir_p.shape[0]
    K = rho.shape[1]
    trace = np.empty(max_iters)
    prev = total(elbo_components(rho, xi, Y, Y2, ds, dir_p, sa, sb, m, kk, c, d, s1, s2, beta_bar,
                                 indptr, indices, m0, k0, c0, d0, b0, a_alpha, b_alpha))
    n_done = 0
    converged = False
    for it in range(max_iters):
        a, b, e = loglik_coefficients(m, kk, c, d)
        rho = column_update(rho, YT, Y2T, ds, xi, a, b, e, expected_log_pi(sa, sb), beta_bar, indptr, indices)
        xi = row_update(rho, Y, Y2, ds, dir_p, a, b, e)
        dir_p = omega_update(xi, ds, T, b0)
        sa, sb = stick_update(rho, s1 / s2)
        n, sy, sy2 = atom_moments(rho, xi, Y, Y2, ds, T)
        m, kk, c, d = atom_update(n, sy, sy2, m0, k0, c0, d0, empty)
        s1 = a_alpha + K - 1.0
        s2 = b_alpha - stick_g_sum(sa, sb)
        if not s2 > 0.0:
            raise ValueError("s2 must be positive")
        if not fixed_beta:
            nb = neighbour_sums(rho, indptr, indices)
            beta_bar = grid_mean(grid, potts_pl_terms(rho, expected_log_pi(sa, sb), nb, grid))
        cur = total(elbo_components(rho, xi, Y, Y2, ds, dir_p, sa, sb, m, kk, c, d, s1, s2, beta_bar,
                                    indptr, indices, m0, k0, c0, d0, b0, a_alpha, b_alpha))
        trace[it] = cur
        n_done = it + 1
        if abs(cur - prev) < tol * abs(prev):
            converged = True
            break
        prev = cur
    return rho, xi, dir_p, sa, sb, m, kk, c, d, s1, s2, beta_bar, trace[:n_done].copy(), converged
