"""Recovery metrics and Monte Carlo checks of the interference model."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .bhta import SolverConfig, hard_bhta
from .model import Dictionary, SpikyPrior, sample_spiky, synthesize
from .operators import min_l2_solution

SNR_CAP_DB = 300.0
MIN_DIAGNOSTIC_RUNS = 30


def output_snr(y_true, y_hat, *, squared: bool = False) -> float:
    """Recovery quality ``10 log10(||y|| / ||y - y_hat||)`` in dB.

    The default uses the unsquared norm ratio with a factor of 10, so a 10x
    error reduction is worth 10 dB. ``squared=True`` gives the conventional
    ``20 log10`` power ratio. Exact recovery returns ``SNR_CAP_DB``.
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y_true.shape != y_hat.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_hat.shape}")
    num = float(np.linalg.norm(y_true))
    if num == 0.0:
        raise ValueError("undefined SNR for zero signal")
    err = float(np.linalg.norm(y_true - y_hat))
    if err == 0.0:
        return SNR_CAP_DB
    factor = 20.0 if squared else 10.0
    return min(factor * math.log10(num / err), SNR_CAP_DB)


def input_snr(sigma_r: float, sigma_e: float) -> float:
    """``20 log10(sigma_r / sigma_e)`` in dB."""
    if not (sigma_r > 0 and sigma_e > 0):
        raise ValueError("sigma_r and sigma_e must be positive")
    return 20.0 * math.log10(sigma_r / sigma_e)


@dataclass(frozen=True)
class SupportReport:
    true_positives: int
    false_positives: int
    false_negatives: int

    @property
    def exact_recovery(self) -> bool:
        return self.false_positives == 0 and self.false_negatives == 0


def _binary(v, name):
    v = np.asarray(v)
    if v.ndim != 1 or not np.all((v == 0) | (v == 1)):
        raise ValueError(f"{name} must be a binary vector")
    return v.astype(bool)


def support_report(q_true, q_hat) -> SupportReport:
    t, h = _binary(q_true, "q_true"), _binary(q_hat, "q_hat")
    if t.shape != h.shape:
        raise ValueError(f"length mismatch {t.size} vs {h.size}")
    return SupportReport(int(np.sum(t & h)), int(np.sum(~t & h)), int(np.sum(t & ~h)))


# --------------------------------------------------------------------------
# Interference-model diagnostics

@dataclass
class DiagnosticTrace:
    """Per-iteration diagnostics; index 0 is the minimum-norm starting point."""

    iteration: np.ndarray
    mean_error_term: np.ndarray
    mean_sigma_gamma_sq: np.ndarray
    kurtosis: np.ndarray
    runs: int = 0

    def __post_init__(self):
        sizes = {len(self.iteration), len(self.mean_error_term), len(self.mean_sigma_gamma_sq), len(self.kurtosis)}
        if len(sizes) != 1:
            raise ValueError("diagnostic columns must have equal length")

    @property
    def relative_error(self) -> np.ndarray:
        return self.mean_error_term / self.mean_sigma_gamma_sq

    def rows(self):
        for i in range(len(self.iteration)):
            yield (int(self.iteration[i]), float(self.mean_error_term[i]),
                   float(self.mean_sigma_gamma_sq[i]), float(self.kurtosis[i]))


def pooled_kurtosis(gamma) -> float:
    """Normalized kurtosis ``E[g^4] / E[g^2]^2 - 3`` over all entries (raw moments)."""
    g = np.asarray(gamma, dtype=np.float64).ravel()
    m2 = float(np.mean(g**2))
    if m2 == 0.0:
        return math.nan
    return float(np.mean(g**4)) / m2**2 - 3.0


def gamma_moments(gamma, model_var):
    """Moments of realized interference ``gamma`` with shape ``(runs, m)``.

    Returns ``(mean_j |var_j - model_j|, mean_j var_j, pooled kurtosis)`` where
    ``var_j`` is the sample variance over runs.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim != 2 or gamma.shape[0] < 2:
        raise ValueError("gamma must have shape (runs >= 2, m)")
    var = np.var(gamma, axis=0, ddof=1)
    model_var = np.broadcast_to(np.asarray(model_var, dtype=np.float64), var.shape)
    return float(np.mean(np.abs(var - model_var))), float(np.mean(var)), pooled_kurtosis(gamma)


def _diagnostic_run(dictionary, prior, sigma_e, config, seed):
    rng = np.random.default_rng(seed)
    s_coef, s_noise = (int(v) for v in rng.integers(0, 2**63 - 1, size=2))
    y, q, r = sample_spiky(prior, dictionary.m, s_coef)
    inst = synthesize(dictionary, y, sigma_e, s_noise, q=q, r=r)
    res = hard_bhta(inst, config)
    snaps = [min_l2_solution(dictionary, inst.x)] + list(res.y_hat_trace)
    deltas = np.array([y - s for s in snaps])
    noise_proj = dictionary.phi.T @ inst.truth.e
    return deltas, noise_proj


def assumption_diagnostics(dictionary: Dictionary, prior: SpikyPrior, sigma_e: float, config=None,
                           runs: int = 100, seeds=0, *, threads: int = 1,
                           noise_term: str = "empirical") -> DiagnosticTrace:
    """Check the Gaussian interference model of the hard solver by Monte Carlo.

    Each run draws fresh coefficients and noise for the fixed ``dictionary``,
    runs the hard solver and records the post-fit estimate of every iteration
    (a run that stopped early keeps its final estimate). For iteration ``n`` the
    realized interference is ``gamma_j = sum_{i != j} (y_i - y_hat_i) b_ij + <e, phi_j>``.
    The error term compares its sample variance over runs with the
    independence prediction ``s_e^2 + sum_{i != j} b_ij^2 var(y_i - y_hat_i)``,
    where ``s_e^2`` is the sample variance of ``<e, phi_j>`` (``noise_term="empirical"``)
    or the nominal ``sigma_e^2`` (``noise_term="nominal"``).

    ``seeds`` is either a sequence of ``runs`` per-run seeds or a master seed.
    """
    if runs < MIN_DIAGNOSTIC_RUNS:
        raise ValueError(f"need at least {MIN_DIAGNOSTIC_RUNS} runs for meaningful moments, got {runs}")
    if noise_term not in ("empirical", "nominal"):
        raise ValueError(f"unknown noise_term {noise_term!r}")
    if np.ndim(seeds) == 0:
        seeds = np.random.SeedSequence(int(seeds)).generate_state(runs, dtype=np.uint64).tolist()
    seeds = [int(s) for s in seeds]
    if len(seeds) != runs:
        raise ValueError(f"expected {runs} seeds, got {len(seeds)}")
    config = replace(config or SolverConfig(), keep_y_trace=True, check_stability=False)
    dictionary.warm()

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        out = list(pool.map(lambda s: _diagnostic_run(dictionary, prior, sigma_e, config, s), seeds))

    n_iter = max(d.shape[0] for d, _ in out)
    m = dictionary.m
    delta = np.empty((runs, n_iter, m))
    for k, (d, _) in enumerate(out):
        delta[k, : d.shape[0]] = d
        delta[k, d.shape[0]:] = d[-1]
    noise = np.array([e for _, e in out])

    gram = dictionary.gram
    gram_sq = dictionary.gram_sq
    noise_var = np.var(noise, axis=0, ddof=1) if noise_term == "empirical" else sigma_e**2

    err, sig, kurt = (np.empty(n_iter) for _ in range(3))
    for it in range(n_iter):
        dl = delta[:, it, :]
        gamma = dl @ gram - dl + noise
        var_d = np.var(dl, axis=0, ddof=1)
        model = noise_var + gram_sq @ var_d - var_d
        err[it], sig[it], kurt[it] = gamma_moments(gamma, model)
    return DiagnosticTrace(np.arange(n_iter), err, sig, kurt, runs=runs)
