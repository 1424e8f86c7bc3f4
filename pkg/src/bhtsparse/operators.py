"""Linear-algebra kernels shared by the solvers."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .model import Dictionary

# Relative floor applied to sigma_e**2 when the amplitude system is singular.
LLS_VARIANCE_FLOOR = 1e-12


def _as_vector(v, size, name):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (size,):
        raise ValueError(f"{name} has shape {v.shape}, expected ({size},)")
    return v


def correlations(dictionary: Dictionary, x) -> np.ndarray:
    """z_j = <x, phi_j> for every atom."""
    x = _as_vector(x, dictionary.n, "x")
    return dictionary.phi.T @ x


def min_l2_solution(dictionary: Dictionary, x) -> np.ndarray:
    """Minimum Euclidean-norm solution Phi^+ x.

    Raises :class:`~bhtsparse.model.RankDeficientError` if Phi lacks full row rank.
    """
    x = _as_vector(x, dictionary.n, "x")
    return dictionary.pinv @ x


def residual_correction(dictionary: Dictionary, y_hat, j: int | None = None):
    """Cross-talk c_j = sum_{i != j} y_hat_i b_ij.

    With ``j=None`` all m corrections are returned as ``B y_hat - y_hat``
    (valid because b_jj = 1).
    """
    y_hat = _as_vector(y_hat, dictionary.m, "y_hat")
    if j is None:
        return dictionary.gram @ y_hat - y_hat
    if not 0 <= j < dictionary.m:
        raise IndexError(f"atom index {j} out of range for m={dictionary.m}")
    return float(dictionary.gram[:, j] @ y_hat - y_hat[j])


def lls_amplitudes(dictionary: Dictionary, q_hat, sigma_r: float, sigma_e: float, x,
                   *, return_flag: bool = False):
    """Linear least-squares (MMSE) amplitudes for a fixed activity pattern.

    Computes ``sigma_r^2 Q Phi^T (sigma_r^2 Phi Q Phi^T + sigma_e^2 I)^{-1} x``
    with ``Q = diag(q_hat)``. ``q_hat`` may be binary or fractional. For a binary
    pattern with fewer active atoms than rows the equivalent active-set system
    ``(Phi_A^T Phi_A + (sigma_e/sigma_r)^2 I) r_A = Phi_A^T x`` is solved instead.

    If the system is singular (only possible when ``sigma_e == 0``), sigma_e^2 is
    raised to ``1e-12 * sigma_r^2`` and, with ``return_flag=True``, the returned
    flag is set.
    """
    if not sigma_r > 0:
        raise ValueError("sigma_r must be positive")
    if sigma_e < 0:
        raise ValueError("sigma_e must be nonnegative")
    q_hat = _as_vector(q_hat, dictionary.m, "q_hat")
    x = _as_vector(x, dictionary.n, "x")

    r_hat = np.zeros(dictionary.m)
    active = np.flatnonzero(q_hat)
    floored = False
    if active.size == 0:
        return (r_hat, floored) if return_flag else r_hat

    binary = bool(np.all(q_hat[active] == 1.0))
    var_r, var_e = sigma_r**2, sigma_e**2

    def solve(var_e):
        if binary and active.size < dictionary.n:
            gram_a = dictionary.gram[np.ix_(active, active)]
            rhs = dictionary.phi[:, active].T @ x
            mat = gram_a + (var_e / var_r) * np.eye(active.size)
            return linalg.cho_solve(linalg.cho_factor(mat, check_finite=False), rhs)
        phi_a = dictionary.phi[:, active]
        w = q_hat[active]
        mat = var_r * (phi_a * w) @ phi_a.T + var_e * np.eye(dictionary.n)
        u = linalg.cho_solve(linalg.cho_factor(mat, check_finite=False), x)
        return var_r * w * (phi_a.T @ u)

    try:
        vals = solve(var_e)
        if not np.all(np.isfinite(vals)):
            raise linalg.LinAlgError("non-finite amplitudes")
    except linalg.LinAlgError:
        floored = True
        vals = solve(max(var_e, LLS_VARIANCE_FLOOR * var_r))
    r_hat[active] = vals
    return (r_hat, floored) if return_flag else r_hat
