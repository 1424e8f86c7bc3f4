"""Reference solvers: matching pursuit, orthogonal matching pursuit, exhaustive search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .model import ProblemInstance
from .operators import lls_amplitudes

ORACLE_MAX_M = 20
ORACLE_MAX_K = 4
# Unit-norm atoms: an orthogonal remainder below this is numerically dependent.
RANK_TOL = 1e-10
# Residuals below this fraction of ||x|| are treated as an exact fit.
RESIDUAL_FLOOR = 1e-12


@dataclass(frozen=True)
class GreedyConfig:
    max_atoms: int
    residual_tol: float = 0.0

    def __post_init__(self):
        if self.max_atoms < 1:
            raise ValueError("max_atoms must be positive")
        if self.residual_tol < 0:
            raise ValueError("residual_tol must be nonnegative")

    @classmethod
    def for_expected_active(cls, expected_active: float, m: int, residual_tol: float = 0.0):
        """Run for twice the expected number of active atoms (capped at m)."""
        return cls(max_atoms=max(1, min(m, int(round(2 * expected_active)))), residual_tol=residual_tol)


@dataclass
class GreedyInfo:
    selected: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def _check(config, m):
    if config.max_atoms > m:
        raise ValueError(f"max_atoms={config.max_atoms} exceeds m={m}")


def _stop_level(config, info):
    return max(config.residual_tol, RESIDUAL_FLOOR * info.residual_norms[0])


def matching_pursuit(instance: ProblemInstance, config: GreedyConfig, *, full_output: bool = False):
    """Plain MP: add the projection onto the best-correlated atom, repeat.

    Ties in the argmax go to the lowest index. Stops after ``max_atoms``
    selections or once the residual norm is at most ``residual_tol`` (or
    ``1e-12 ||x||``, an exact fit).
    """
    _check(config, instance.m)
    phi = instance.dictionary.phi
    y_hat = np.zeros(instance.m)
    resid = instance.x.astype(np.float64).copy()
    info = GreedyInfo(residual_norms=[float(np.linalg.norm(resid))])
    stop = _stop_level(config, info)
    for _ in range(config.max_atoms):
        if info.residual_norms[-1] <= stop:
            break
        corr = phi.T @ resid
        j = int(np.argmax(np.abs(corr)))
        y_hat[j] += corr[j]
        resid -= corr[j] * phi[:, j]
        info.selected.append(j)
        info.residual_norms.append(float(np.linalg.norm(resid)))
    return (y_hat, info) if full_output else y_hat


def orthogonal_matching_pursuit(instance: ProblemInstance, config: GreedyConfig, *, full_output: bool = False):
    """OMP: MP selection followed by a least-squares refit on the selected atoms.

    The refit is kept as an incrementally updated QR factorization of the
    selected subdictionary (Gram-Schmidt with one reorthogonalization pass). An
    atom whose new orthogonal component is numerically zero would make the
    subdictionary rank-deficient; it is skipped, recorded in ``info.skipped`` and
    excluded from later selection.
    """
    _check(config, instance.m)
    phi = instance.dictionary.phi
    x = instance.x.astype(np.float64)
    n, m = phi.shape
    q_basis = np.empty((n, min(config.max_atoms, n)))
    r_fac = np.zeros((q_basis.shape[1], q_basis.shape[1]))
    qtx = np.empty(q_basis.shape[1])
    resid = x.copy()
    support: list[int] = []
    excluded = np.zeros(m, dtype=bool)
    info = GreedyInfo(residual_norms=[float(np.linalg.norm(resid))])
    stop = _stop_level(config, info)
    while len(support) < q_basis.shape[1]:
        if info.residual_norms[-1] <= stop:
            break
        corr = np.abs(phi.T @ resid)
        corr[excluded] = -1.0
        j = int(np.argmax(corr))
        if corr[j] < 0:
            break
        excluded[j] = True
        k = len(support)
        qk = q_basis[:, :k]
        v = phi[:, j].copy()
        h = qk.T @ v
        v -= qk @ h
        h2 = qk.T @ v
        v -= qk @ h2
        norm_v = float(np.linalg.norm(v))
        if norm_v <= RANK_TOL:
            info.skipped.append(j)
            continue
        q_basis[:, k] = v / norm_v
        r_fac[:k, k] = h + h2
        r_fac[k, k] = norm_v
        qtx[k] = q_basis[:, k] @ x
        support.append(j)
        resid = x - q_basis[:, : k + 1] @ qtx[: k + 1]
        info.selected.append(j)
        info.residual_norms.append(float(np.linalg.norm(resid)))
    y_hat = np.zeros(m)
    if support:
        k = len(support)
        y_hat[support] = linalg.solve_triangular(r_fac[:k, :k], qtx[:k])
    return (y_hat, info) if full_output else y_hat


def exhaustive_oracle(instance: ProblemInstance, k_max: int, sigma_r: float, sigma_e: float):
    """Best support of size <= k_max by exhaustive enumeration.

    Each support is fitted with :func:`lls_amplitudes`; the support with the
    smallest residual wins. Residuals within ``1e-12 * ||x||^2`` of the best are
    treated as ties, which go to the smaller support, then lexicographic order.
    Returns ``(support_tuple, y_hat)``.
    """
    m = instance.m
    if m > ORACLE_MAX_M or k_max > ORACLE_MAX_K:
        raise ValueError(f"exhaustive search limited to m <= {ORACLE_MAX_M}, k_max <= {ORACLE_MAX_K}")
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    x = instance.x
    phi = instance.dictionary.phi
    tie = 1e-12 * max(float(x @ x), math.ulp(1.0))
    best_support: tuple = ()
    best_y = np.zeros(m)
    best_res = float(x @ x)
    for k in range(1, k_max + 1):
        for support in itertools.combinations(range(m), k):
            q = np.zeros(m)
            q[list(support)] = 1.0
            y = lls_amplitudes(instance.dictionary, q, sigma_r, sigma_e, x)
            r = x - phi @ y
            res = float(r @ r)
            if res < best_res - tie:
                best_support, best_y, best_res = support, y, res
    return best_support, best_y
