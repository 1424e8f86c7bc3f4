"""Independent reference implementations used only by the tests.

Scalar formulas are re-derived with mpmath at 50 digits; matrix operators are
rebuilt from scratch with mpmath (Phi^+ = Phi^T (Phi Phi^T)^-1) or naive loops,
sharing no code with the package.
"""

import itertools

import mpmath as mp
import numpy as np

mp.mp.dps = 50


def threshold(sigma_gamma, sigma_r, p):
    sg, sr, p = mp.mpf(sigma_gamma), mp.mpf(sigma_r), mp.mpf(p)
    s = mp.sqrt(sr**2 + sg**2)
    return sg / sr * mp.sqrt(2 * (sr**2 + sg**2) * mp.log(p / (1 - p) * s / sg))


def final_threshold(p, sigma_r, sigma_e):
    p, sr, se = mp.mpf(p), mp.mpf(sigma_r), mp.mpf(sigma_e)
    return mp.sqrt(2 * mp.log(p / (1 - p) * sr / se)) * se


def schedule_length(th0, th_inf, alpha):
    return int(mp.ceil(mp.log(mp.mpf(th_inf) / mp.mpf(th0)) / mp.log(mp.mpf(alpha))))


def posterior(d, p, sigma_r, sigma_gamma):
    d, p, sr, sg = (mp.mpf(v) for v in (d, p, sigma_r, sigma_gamma))
    s1 = sr**2 + sg**2
    l1 = (1 - p) / mp.sqrt(2 * mp.pi * s1) * mp.exp(-d**2 / (2 * s1))
    l2 = p / mp.sqrt(2 * mp.pi * sg**2) * mp.exp(-d**2 / (2 * sg**2))
    return l1 / (l1 + l2)


def log_prior(q, p):
    p = mp.mpf(p)
    total = mp.mpf(0)
    for qi in q:
        total += mp.log(1 - p) if qi else mp.log(p)
    return total


def to_mp(a):
    return mp.matrix(np.asarray(a, dtype=float).tolist())


def to_np(a):
    return np.array(a.tolist(), dtype=float)


def operators_mp(phi):
    """(B, Phi^+, Psi, L) from an independent extended-precision factorization."""
    P = to_mp(phi)
    pinv = P.T * mp.inverse(P * P.T)
    m = phi.shape[1]
    gram = P.T * P
    psi = pinv * P - mp.eye(m)
    l_op = 2 * P.T - pinv
    return gram, pinv, psi, l_op


def min_snr_db(phi, p, j, sign=+1):
    gram, _, psi, l_op = operators_mp(phi)
    m, n = phi.shape[1], phi.shape[0]
    p = mp.mpf(p)
    b2 = mp.fsum(gram[i, j] ** 2 for i in range(m))
    psi2 = mp.fsum(psi[j, i] ** 2 for i in range(m))
    l2 = mp.fsum(l_op[j, i] ** 2 for i in range(n))
    kconst = (p / ((1 - p) * mp.e)) ** 2
    return 10 * mp.log10(l2 * (b2 - 1) / (kconst + sign * (1 - p) * psi2 * (b2 - 1)))


def lls_mp(phi, q, sigma_r, sigma_e, x):
    P = to_mp(phi)
    n, m = phi.shape
    Q = mp.diag([mp.mpf(float(v)) for v in q])
    sr2, se2 = mp.mpf(sigma_r) ** 2, mp.mpf(sigma_e) ** 2
    mat = sr2 * P * Q * P.T + se2 * mp.eye(n)
    return to_np(sr2 * Q * P.T * mp.lu_solve(mat, to_mp(np.reshape(x, (-1, 1)))))


def naive_correlations(phi, x):
    n, m = phi.shape
    return np.array([sum(x[r] * phi[r, j] for r in range(n)) for j in range(m)])


def naive_correction(phi, y_hat):
    n, m = phi.shape
    out = np.zeros(m)
    for j in range(m):
        for i in range(m):
            if i != j:
                b_ij = sum(phi[r, i] * phi[r, j] for r in range(n))
                out[j] += y_hat[i] * b_ij
    return out


def brute_force_support(phi, x, k_max):
    """Least-squares residual of every support up to k_max (plain lstsq)."""
    m = phi.shape[1]
    best = (float(x @ x), ())
    for k in range(1, k_max + 1):
        for s in itertools.combinations(range(m), k):
            sol, *_ = np.linalg.lstsq(phi[:, s], x, rcond=None)
            r = x - phi[:, s] @ sol
            if float(r @ r) < best[0] - 1e-12 * float(x @ x):
                best = (float(r @ r), s)
    return best[1]
