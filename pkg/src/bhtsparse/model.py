"""Signal model: spiky (Bernoulli-Gaussian) priors, dictionaries and seeded instances.

Observation model::

    x = Phi @ y + e,    y_i = q_i * r_i,    q_i ~ Bernoulli(1 - p),
    r_i ~ N(0, sigma_r**2),  e ~ N(0, sigma_e**2 I)

``p`` is the *inactivity* probability, so sparse signals have ``p`` close to 1.
"""

from __future__ import annotations

import hashlib
import math
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

UNIT_NORM_TOL = 1e-10
PINV_RTOL = 1e-10

INSTANCE_FORMAT_VERSION = 1


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when an operator needs full row rank and does not have it."""


@dataclass(frozen=True)
class SpikyPrior:
    """Bernoulli-Gaussian prior with exactly-zero inactive coefficients."""

    p: float
    sigma_r: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"inactivity probability must lie in (0, 1), got {self.p}")
        if not self.sigma_r > 0.0:
            raise ValueError(f"sigma_r must be positive, got {self.sigma_r}")
        if self.p <= 0.5:
            warnings.warn(
                f"p={self.p} <= 0.5: the prior is not sparse (p is the inactivity probability)",
                stacklevel=3,
            )


class Dictionary:
    """An ``n x m`` matrix with unit-norm columns and cached derived operators.

    Derived operators are computed on first access, exactly once even under
    concurrent access:

    - ``gram``        B = Phi^T Phi                (m x m)
    - ``pinv``        Phi^+                        (m x n)
    - ``hat``         H_a = Phi^+ Phi              (m x m)
    - ``psi``         Psi = H_a - I                (m x m)
    - ``l_op``        L = 2 Phi^T - Phi^+          (m x n)
    """

    def __init__(self, phi, *, check: bool = True):
        phi = np.array(phi, dtype=np.float64, order="C", copy=True)
        if phi.ndim != 2:
            raise ValueError("dictionary must be a 2-D array")
        n, m = phi.shape
        if not 0 < n <= m:
            raise ValueError(f"dictionary must satisfy 0 < n <= m, got n={n}, m={m}")
        if check:
            norms = np.linalg.norm(phi, axis=0)
            worst = np.max(np.abs(norms - 1.0))
            if worst > UNIT_NORM_TOL:
                raise ValueError(f"columns must have unit norm (max deviation {worst:.3e})")
        phi.setflags(write=False)
        self._phi = phi
        # Reentrant: some cached values are built from other cached values.
        self._lock = threading.RLock()
        self._cache: dict[str, object] = {}

    @classmethod
    def from_columns(cls, mat) -> "Dictionary":
        """Normalize the columns of ``mat`` and wrap the result."""
        mat = np.asarray(mat, dtype=np.float64)
        norms = np.linalg.norm(mat, axis=0)
        if np.any(norms == 0.0):
            raise ValueError("cannot normalize an all-zero column")
        return cls(mat / norms)

    @property
    def phi(self) -> np.ndarray:
        return self._phi

    @property
    def n(self) -> int:
        return self._phi.shape[0]

    @property
    def m(self) -> int:
        return self._phi.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._phi.shape

    def cold_copy(self) -> "Dictionary":
        """Same matrix, empty operator cache (used for fair timing)."""
        return Dictionary(self._phi, check=False)

    def _cached(self, key, build):
        try:
            return self._cache[key]
        except KeyError:
            pass
        with self._lock:
            if key not in self._cache:
                value = build()
                if isinstance(value, np.ndarray):
                    value.setflags(write=False)
                self._cache[key] = value
            return self._cache[key]

    @property
    def gram(self) -> np.ndarray:
        def build():
            b = self._phi.T @ self._phi
            b = 0.5 * (b + b.T)
            np.fill_diagonal(b, 1.0)
            return b

        return self._cached("gram", build)

    @property
    def pinv(self) -> np.ndarray:
        return self._cached("pinv", self._build_pinv)

    def _build_pinv(self):
        u, s, vt = np.linalg.svd(self._phi, full_matrices=False)
        tol = PINV_RTOL * s[0]
        rank = int(np.sum(s > tol))
        if rank < self.n:
            raise RankDeficientError(
                f"dictionary has rank {rank} < n={self.n} "
                f"(singular values below {tol:.3e}); minimum-norm solution is not exact"
            )
        return (vt.T / s) @ u.T

    @property
    def hat(self) -> np.ndarray:
        return self._cached("hat", lambda: self.pinv @ self._phi)

    @property
    def psi(self) -> np.ndarray:
        return self._cached("psi", lambda: self.hat - np.eye(self.m))

    @property
    def l_op(self) -> np.ndarray:
        return self._cached("l_op", lambda: 2.0 * self._phi.T - self.pinv)

    # Row / column energies used by the error-variance and stability formulas.

    @property
    def psi_row_sq(self) -> np.ndarray:
        """||psi_j||^2 for every row j of Psi."""
        return self._cached("psi_row_sq", lambda: np.einsum("ij,ij->i", self.psi, self.psi))

    @property
    def l_row_sq(self) -> np.ndarray:
        """sum_i l_ji^2 for every row j of L."""
        return self._cached("l_row_sq", lambda: np.einsum("ij,ij->i", self.l_op, self.l_op))

    @property
    def gram_col_sq(self) -> np.ndarray:
        """||b_j||^2 for every column j of B (includes b_jj = 1)."""
        return self._cached("gram_col_sq", lambda: np.einsum("ij,ij->j", self.gram, self.gram))

    @property
    def gram_sq(self) -> np.ndarray:
        """Elementwise square of B."""
        return self._cached("gram_sq", lambda: self.gram**2)

    @property
    def beta(self) -> float:
        """||B||_F^2 / m - 1, the common cross-talk energy factor."""
        return self._cached("beta", lambda: float(np.sum(self.gram_col_sq)) / self.m - 1.0)

    @property
    def psi_frob_sq(self) -> float:
        return self._cached("psi_frob_sq", lambda: float(np.sum(self.psi_row_sq)))

    def warm(self) -> "Dictionary":
        """Force every derived operator into the cache."""
        for name in ("gram", "pinv", "psi", "l_op", "psi_row_sq", "l_row_sq",
                     "gram_col_sq", "gram_sq", "beta", "psi_frob_sq"):
            getattr(self, name)
        return self

    def digest(self) -> str:
        return hashlib.sha256(self._phi.tobytes()).hexdigest()

    def __repr__(self):
        return f"Dictionary(n={self.n}, m={self.m})"


@dataclass(frozen=True, eq=False)
class GroundTruth:
    y: np.ndarray
    q: np.ndarray
    r: np.ndarray
    e: np.ndarray
    sigma_e: float


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    dictionary: Dictionary
    x: np.ndarray
    truth: GroundTruth | None = None
    seed: int = 0

    def __post_init__(self):
        if self.x.shape != (self.dictionary.n,):
            raise ValueError(f"x has shape {self.x.shape}, expected ({self.dictionary.n},)")

    @property
    def n(self) -> int:
        return self.dictionary.n

    @property
    def m(self) -> int:
        return self.dictionary.m

    def digest(self) -> str:
        """SHA-256 over the dictionary and observation bytes."""
        h = hashlib.sha256()
        h.update(self.dictionary.phi.tobytes())
        h.update(np.ascontiguousarray(self.x, dtype=np.float64).tobytes())
        return h.hexdigest()


def _check_dims(n, m):
    if not 0 < n < m:
        raise ValueError(f"need 0 < n < m for an overcomplete dictionary, got n={n}, m={m}")


def sample_dictionary(n: int, m: int, seed: int) -> Dictionary:
    """Uniform [-1, 1] entries, columns scaled to unit norm."""
    _check_dims(n, m)
    rng = np.random.default_rng(seed)
    phi = rng.uniform(-1.0, 1.0, size=(n, m))
    norms = np.linalg.norm(phi, axis=0)
    while np.any(norms == 0.0):
        bad = np.flatnonzero(norms == 0.0)
        phi[:, bad] = rng.uniform(-1.0, 1.0, size=(n, bad.size))
        norms = np.linalg.norm(phi, axis=0)
    return Dictionary(phi / norms)


def dct_matrix(m: int) -> np.ndarray:
    """Orthonormal DCT-II synthesis matrix: column k is the k-th cosine atom."""
    return dct(np.eye(m), norm="ortho", axis=0).T


def sample_dct_cs_dictionary(n: int, m: int, seed: int) -> Dictionary:
    """Gaussian measurement matrix times the DCT basis, columns normalized."""
    _check_dims(n, m)
    rng = np.random.default_rng(seed)
    gamma = rng.standard_normal((n, m))
    phi = gamma @ dct_matrix(m)
    norms = np.linalg.norm(phi, axis=0)
    while np.any(norms == 0.0):
        gamma = rng.standard_normal((n, m))
        phi = gamma @ dct_matrix(m)
        norms = np.linalg.norm(phi, axis=0)
    return Dictionary(phi / norms)


def sample_spiky(prior: SpikyPrior, m: int, seed: int):
    """Draw ``(y, q, r)`` from the spiky prior. All-zero ``y`` is kept as is."""
    rng = np.random.default_rng(seed)
    q = (rng.random(m) < 1.0 - prior.p).astype(np.int8)
    r = rng.normal(0.0, prior.sigma_r, size=m)
    y = q * r
    return y, q, r


def sample_fixed_amplitude(p: float, m: int, amplitude: float, seed: int):
    """Bernoulli(1 - p) activity with every active coefficient equal to ``amplitude``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    rng = np.random.default_rng(seed)
    q = (rng.random(m) < 1.0 - p).astype(np.int8)
    return amplitude * q.astype(np.float64), q


def sample_fixed_support(m: int, k: int, amplitude: float, seed: int):
    """Exactly ``k`` uniformly placed coefficients equal to ``amplitude``."""
    if not 0 < k < m:
        raise ValueError(f"need 0 < k < m, got k={k}, m={m}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(m, size=k, replace=False)
    q = np.zeros(m, dtype=np.int8)
    q[idx] = 1
    return amplitude * q.astype(np.float64), q


def synthesize(dictionary: Dictionary, y, sigma_e: float, seed: int, *, q=None, r=None) -> ProblemInstance:
    """Build ``x = Phi y + e`` with Gaussian noise and attach the ground truth.

    The stored noise is the realized ``x - Phi y`` so that the identity
    ``x - Phi y - e == 0`` holds bit-exactly.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (dictionary.m,):
        raise ValueError(f"y has shape {y.shape}, expected ({dictionary.m},)")
    if sigma_e < 0:
        raise ValueError("sigma_e must be nonnegative")
    rng = np.random.default_rng(seed)
    clean = dictionary.phi @ y
    if sigma_e > 0:
        x = clean + rng.normal(0.0, sigma_e, size=dictionary.n)
    else:
        x = clean.copy()
    e = x - clean
    if q is None:
        q = (y != 0).astype(np.int8)
    if r is None:
        r = y.copy()
    truth = GroundTruth(y=y.copy(), q=np.asarray(q, dtype=np.int8), r=np.asarray(r, dtype=np.float64),
                        e=e, sigma_e=float(sigma_e))
    return ProblemInstance(dictionary=dictionary, x=x, truth=truth, seed=int(seed))


def prior_log_probability(q, p: float) -> float:
    """log p(q) = n_a log(1 - p) + (m - n_a) log p."""
    q = np.asarray(q)
    if not np.all((q == 0) | (q == 1)):
        raise ValueError("activity vector must be binary")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly inside (0, 1), got {p}")
    n_a = int(np.count_nonzero(q))
    return n_a * math.log1p(-p) + (q.size - n_a) * math.log(p)


# Instance files are .npz archives; keys in write order:
#   format_version, n, m, seed, phi (n x m, row-major float64), x,
#   has_truth, and when has_truth == 1: y, q, r, e, sigma_e.

def save_instance(instance: ProblemInstance, path) -> Path:
    path = Path(path)
    fields = {
        "format_version": np.int64(INSTANCE_FORMAT_VERSION),
        "n": np.int64(instance.n),
        "m": np.int64(instance.m),
        "seed": np.uint64(instance.seed),
        "phi": np.ascontiguousarray(instance.dictionary.phi, dtype="<f8"),
        "x": np.asarray(instance.x, dtype="<f8"),
        "has_truth": np.int8(instance.truth is not None),
    }
    if instance.truth is not None:
        t = instance.truth
        fields.update(y=t.y.astype("<f8"), q=t.q.astype(np.int8), r=t.r.astype("<f8"),
                      e=t.e.astype("<f8"), sigma_e=np.float64(t.sigma_e))
    with open(path, "wb") as fh:
        np.savez(fh, **fields)
    return path


def load_instance(path) -> ProblemInstance:
    with np.load(Path(path)) as data:
        version = int(data["format_version"])
        if version != INSTANCE_FORMAT_VERSION:
            raise ValueError(f"unsupported instance format version {version}")
        n, m = int(data["n"]), int(data["m"])
        phi = data["phi"].reshape(n, m)
        truth = None
        if int(data["has_truth"]):
            truth = GroundTruth(y=data["y"].copy(), q=data["q"].copy(), r=data["r"].copy(),
                                e=data["e"].copy(), sigma_e=float(data["sigma_e"]))
        return ProblemInstance(dictionary=Dictionary(phi), x=data["x"].copy(),
                               truth=truth, seed=int(data["seed"]))
