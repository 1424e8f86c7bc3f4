"""Bayesian hypothesis-testing sparse recovery (hard and soft variants).

Every atom j is tested with the statistic ``d_j = z_j - c_j`` where ``z = Phi^T x``
and ``c_j`` removes the cross-talk of the other current estimates. Under the
working assumptions ``d_j`` is either ``r_j + gamma_j`` (active) or ``gamma_j``
(inactive) with Gaussian ``gamma_j ~ N(0, sigma_gamma^2)``, which gives a
closed-form Bayes threshold. The interference variance is driven down
geometrically by ``alpha`` so the threshold sequence decreases towards
``K sigma_e``.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import operators
from .model import Dictionary, ProblemInstance

DEVIATION_FLOOR = 1e-12


class Strategy(str, enum.Enum):
    OPTIMAL = "optimal"
    SIMPLE = "simple"


class Variant(str, enum.Enum):
    HARD = "hard"
    SOFT = "soft"


class DegenerateThresholdError(ValueError):
    """The Bayes threshold is undefined for this prior/variance combination."""


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 0.95
    strategy: Strategy = Strategy.OPTIMAL
    variant: Variant = Variant.HARD
    per_coefficient: bool = False
    # sigma_r / sigma_e assumed for the final threshold; None uses the initial estimates.
    assumed_snr_ratio: float | None = 100.0
    max_iters: int = 300
    th_stop_tol_factor: float = 1e-3
    soft_stop_tol: float = 1e-2
    p0: float = 0.8
    sigma_e0_divisor: float = 5.0
    sigma_r_over: str = "active"
    # the residual still holds undetected atoms early on, so the noise estimate is only allowed to fall
    monotone_sigma_e: bool = True
    keep_y_trace: bool = False
    check_stability: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.p0 < 1.0:
            raise ValueError(f"p0 must lie in (0, 1), got {self.p0}")
        if self.sigma_e0_divisor <= 0 or self.th_stop_tol_factor <= 0 or self.soft_stop_tol <= 0:
            raise ValueError("divisor and stopping tolerances must be positive")
        if self.sigma_r_over not in ("all", "active"):
            raise ValueError(f"sigma_r_over must be 'all' or 'active', got {self.sigma_r_over!r}")
        if self.assumed_snr_ratio is not None and self.assumed_snr_ratio <= 0:
            raise ValueError("assumed_snr_ratio must be positive")


@dataclass(frozen=True)
class ParameterEstimates:
    p_hat: float
    sigma_r_hat: float
    sigma_e_hat: float
    sigma_ey: float | np.ndarray
    sigma_gamma: float | np.ndarray
    beta: float


@dataclass
class SolverResult:
    y_hat: np.ndarray
    q_hat: np.ndarray
    iterations: int
    threshold_trace: list
    estimate_trace: list
    q_soft: np.ndarray | None = None
    y_hat_trace: list | None = None
    wall_time: float = 0.0
    stability_flag: "StabilityReport | None" = None
    truncated: bool = False
    lls_floored: bool = False
    schedule_length: int | None = None

    @property
    def final_estimates(self) -> ParameterEstimates:
        return self.estimate_trace[-1]

    @property
    def common_thresholds(self) -> np.ndarray:
        """Threshold per iteration (max over atoms when thresholds are per-atom)."""
        return np.array([float(np.max(t)) for t in self.threshold_trace])


# --------------------------------------------------------------------------
# Scalar formulas

def _threshold_log_arg(sigma_gamma, sigma_r, p):
    return (p / (1.0 - p)) * np.sqrt(sigma_r**2 + sigma_gamma**2) / sigma_gamma


def optimal_threshold(sigma_gamma, sigma_r: float, p: float):
    """Bayes threshold on |z_j - c_j| separating active from inactive.

    Vectorizes over ``sigma_gamma``.
    """
    sg = np.asarray(sigma_gamma, dtype=np.float64)
    if np.any(sg <= 0) or sigma_r <= 0 or not 0.0 < p < 1.0:
        raise ValueError("need sigma_gamma > 0, sigma_r > 0 and 0 < p < 1")
    arg = _threshold_log_arg(sg, sigma_r, p)
    if np.any(arg <= 1.0):
        raise DegenerateThresholdError("degenerate prior/variance combination: log argument <= 1")
    th = (sg / sigma_r) * np.sqrt(2.0 * (sigma_r**2 + sg**2) * np.log(arg))
    return float(th) if th.ndim == 0 else th


def _safe_threshold(sigma_gamma, sigma_r, p):
    # Log argument <= 1 means the active hypothesis wins for every statistic.
    sg = np.asarray(sigma_gamma, dtype=np.float64)
    arg = _threshold_log_arg(sg, sigma_r, p)
    th = (sg / sigma_r) * np.sqrt(2.0 * (sigma_r**2 + sg**2) * np.log(np.maximum(arg, 1.0)))
    return float(th) if th.ndim == 0 else th


def final_threshold(p: float, sigma_r: float, sigma_e: float) -> float:
    """Limit threshold K * sigma_e with K = sqrt(2 ln(p/(1-p) * sigma_r/sigma_e))."""
    if sigma_r <= 0 or sigma_e <= 0 or not 0.0 < p < 1.0:
        raise ValueError("need sigma_r > 0, sigma_e > 0 and 0 < p < 1")
    arg = (p / (1.0 - p)) * (sigma_r / sigma_e)
    if arg <= 1.0:
        raise DegenerateThresholdError(f"final threshold undefined: log argument {arg} <= 1")
    return math.sqrt(2.0 * math.log(arg)) * sigma_e


def simple_schedule_length(th0: float, th_inf: float, alpha: float) -> int:
    """Iterations of ``Th <- alpha Th`` needed to go from ``th0`` down to ``th_inf``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not 0.0 < th_inf < th0:
        raise ValueError(f"need 0 < th_inf < th0, got th0={th0}, th_inf={th_inf}")
    t = math.log(th_inf / th0) / math.log(alpha)
    # Guard against t landing a rounding error above an integer.
    return max(1, math.ceil(t - 1e-9))


def soft_posterior(d, p: float, sigma_r: float, sigma_gamma):
    """Posterior probability that an atom is active given its statistic ``d``."""
    d = np.asarray(d, dtype=np.float64)
    sg2 = np.asarray(sigma_gamma, dtype=np.float64) ** 2
    s1 = sigma_r**2 + sg2
    log_l1 = math.log1p(-p) - 0.5 * np.log(s1) - d**2 / (2.0 * s1)
    log_l2 = math.log(p) - 0.5 * np.log(sg2) - d**2 / (2.0 * sg2)
    return expit(log_l1 - log_l2)


# --------------------------------------------------------------------------
# Variance model

def initial_error_variance(dictionary: Dictionary, sigma_r: float, sigma_e: float, p: float,
                           per_coefficient: bool = False):
    """Initial variance of y_j - y_hat_j for the minimum-norm starting point.

    Per atom: ``sigma_r^2 (1-p) ||psi_j||^2 + sigma_e^2 sum_i l_ji^2``.
    Common: ``sigma_r^2 (1-p) ||Psi||_F^2 / m`` (noise term dropped).
    """
    if per_coefficient:
        return sigma_r**2 * (1.0 - p) * dictionary.psi_row_sq + sigma_e**2 * dictionary.l_row_sq
    return sigma_r**2 * (1.0 - p) * dictionary.psi_frob_sq / dictionary.m


def gamma_variance(estimates: ParameterEstimates, dictionary: Dictionary, per_coefficient: bool = False):
    """Variance of the interference term gamma_j.

    Per atom: ``sigma_e^2 + sum_{i != j} b_ij^2 sigma_{i,ey}^2``.
    Common: ``sigma_e^2 + beta sigma_ey^2`` with ``beta = ||B||_F^2/m - 1``.
    """
    var_e = estimates.sigma_e_hat**2
    var_ey = np.asarray(estimates.sigma_ey, dtype=np.float64) ** 2
    if per_coefficient:
        var_ey = np.broadcast_to(var_ey, (dictionary.m,))
        return var_e + dictionary.gram_sq @ var_ey - var_ey
    if var_ey.ndim:
        var_ey = float(np.mean(var_ey))
    return var_e + dictionary.beta * float(var_ey)


def estimate_parameters(instance: ProblemInstance, y_hat, q_hat, r_hat, *, sigma_r_over: str = "all"):
    """Sample estimates ``(p_hat, sigma_e_hat, sigma_r_hat)``.

    ``p_hat`` is the inactive fraction ``1 - sum(q_hat)/m`` (for a binary pattern
    this is ``1 - ||q_hat||_0 / m``), clamped into ``[1/m, 1 - 1/m]``; both
    deviations are floored at 1e-12. ``sigma_r_hat`` is ``||r_hat|| / sqrt(m)``
    with ``sigma_r_over="all"``; ``"active"`` divides by ``sum(q_hat)`` instead,
    the root-mean-square of the active amplitudes.
    """
    m, n = instance.m, instance.n
    q_hat = np.asarray(q_hat, dtype=np.float64)
    p_hat = 1.0 - float(np.sum(q_hat)) / m
    p_hat = min(max(p_hat, 1.0 / m), 1.0 - 1.0 / m)
    resid = instance.x - instance.dictionary.phi @ np.asarray(y_hat, dtype=np.float64)
    sigma_e = max(float(np.linalg.norm(resid)) / math.sqrt(n), DEVIATION_FLOOR)
    energy = float(np.sum(np.asarray(r_hat, dtype=np.float64) ** 2))
    if sigma_r_over == "all":
        var_r = energy / m
    elif sigma_r_over == "active":
        var_r = energy / max(float(np.sum(q_hat)), 1.0)
    else:
        raise ValueError(f"unknown sigma_r_over {sigma_r_over!r}")
    sigma_r = max(math.sqrt(var_r), DEVIATION_FLOOR)
    return p_hat, sigma_e, sigma_r


# --------------------------------------------------------------------------
# Solvers

def hard_bhta(instance: ProblemInstance, config: SolverConfig | None = None) -> SolverResult:
    """Hard-decision solver: threshold ``|z - c|`` each iteration."""
    config = config or SolverConfig()
    if config.variant is not Variant.HARD:
        config = replace(config, variant=Variant.HARD)
    return _iterate(instance, config)


def soft_bhta(instance: ProblemInstance, config: SolverConfig | None = None) -> SolverResult:
    """Soft-decision solver: posterior activities, binarized at 0.5 after convergence."""
    config = config or SolverConfig(variant=Variant.SOFT)
    if config.variant is not Variant.SOFT:
        config = replace(config, variant=Variant.SOFT)
    return _iterate(instance, config)


def _iterate(instance: ProblemInstance, cfg: SolverConfig) -> SolverResult:
    t_start = time.perf_counter()
    dic = instance.dictionary
    x = instance.x
    m = dic.m
    per = cfg.per_coefficient
    hard = cfg.variant is Variant.HARD

    p = cfg.p0
    sigma_r = max(float(np.linalg.norm(x)) / math.sqrt(m * (1.0 - p)), DEVIATION_FLOOR)
    sigma_e = sigma_r / cfg.sigma_e0_divisor
    var_ey = initial_error_variance(dic, sigma_r, sigma_e, p, per)
    sigma_ey = np.sqrt(var_ey) if per else math.sqrt(var_ey)

    y_hat = operators.min_l2_solution(dic, x)
    z = operators.correlations(dic, x)

    schedule = None
    th_simple = None
    if hard and cfg.strategy is Strategy.SIMPLE:
        est0 = ParameterEstimates(p, sigma_r, sigma_e, sigma_ey, 0.0, dic.beta)
        sg0 = np.sqrt(gamma_variance(est0, dic, False))
        th_simple = _safe_threshold(sg0, sigma_r, p)
        if cfg.assumed_snr_ratio is None:
            th_inf = final_threshold(p, sigma_r, sigma_e)
        else:
            th_inf = final_threshold(p, sigma_r, sigma_r / cfg.assumed_snr_ratio)
        schedule = simple_schedule_length(th_simple, th_inf, cfg.alpha)

    thresholds, estimates = [], []
    y_trace = [] if cfg.keep_y_trace else None
    q_prev = th_prev = None
    q = np.zeros(m)
    floored_any = False
    converged = False
    it = 0
    limit = cfg.max_iters if schedule is None else min(cfg.max_iters, schedule)

    while it < limit:
        it += 1
        c = operators.residual_correction(dic, y_hat)
        sigma_ey = cfg.alpha * sigma_ey
        est = ParameterEstimates(p, sigma_r, sigma_e, sigma_ey, 0.0, dic.beta)
        sigma_gamma = np.sqrt(np.maximum(gamma_variance(est, dic, per), DEVIATION_FLOOR**2))
        th = _safe_threshold(sigma_gamma, sigma_r, p)
        if th_simple is not None:
            th = th_simple * cfg.alpha**it
        d = z - c
        if hard:
            q = (np.abs(d) > th).astype(np.float64)
        else:
            q = soft_posterior(d, p, sigma_r, sigma_gamma)
        y_hat, floored = operators.lls_amplitudes(dic, q, sigma_r, sigma_e, x, return_flag=True)
        floored_any |= floored
        # an empty active set leaves the whole signal in the residual, which says nothing
        # about the noise or the amplitudes: keep the previous estimates
        if np.any(q > 0):
            p, se_new, sigma_r = estimate_parameters(instance, y_hat, q, y_hat, sigma_r_over=cfg.sigma_r_over)
            sigma_e = min(se_new, sigma_e) if cfg.monotone_sigma_e else se_new

        thresholds.append(th)
        estimates.append(ParameterEstimates(p, sigma_r, sigma_e, sigma_ey, sigma_gamma, dic.beta))
        if y_trace is not None:
            y_trace.append(y_hat.copy())

        if hard and th_simple is None and th_prev is not None:
            if np.max(np.abs(np.asarray(th) - th_prev)) < sigma_r * cfg.th_stop_tol_factor:
                converged = True
                break
        if not hard and q_prev is not None and np.max(np.abs(q - q_prev)) < cfg.soft_stop_tol:
            converged = True
            break
        th_prev = np.asarray(th, dtype=np.float64)
        q_prev = q

    if schedule is not None and it == schedule:
        converged = True

    q_soft = None
    if hard:
        q_hat = q
    else:
        q_soft = q
        q_hat = (q >= 0.5).astype(np.float64)
        y_hat, floored = operators.lls_amplitudes(dic, q_hat, sigma_r, sigma_e, x, return_flag=True)
        floored_any |= floored

    result = SolverResult(
        y_hat=y_hat,
        q_hat=q_hat,
        iterations=it,
        threshold_trace=thresholds,
        estimate_trace=estimates,
        q_soft=q_soft,
        y_hat_trace=y_trace,
        truncated=not converged,
        lls_floored=floored_any,
        schedule_length=schedule,
    )
    if cfg.check_stability:
        snr = 20.0 * math.log10(sigma_r / sigma_e)
        result.stability_flag = stability_check(dic, p, snr)
    result.wall_time = time.perf_counter() - t_start
    return result


# --------------------------------------------------------------------------
# Stability analysis

class VacuousStabilityError(ValueError):
    """The minimum-SNR expression has a nonpositive numerator or denominator."""


def _min_snr_terms(dictionary: Dictionary, p: float, form: str, support=None):
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    k_const = (p / ((1.0 - p) * math.e)) ** 2
    cross = dictionary.gram_col_sq - 1.0
    num = dictionary.l_row_sq * cross
    if support is not None:
        idx = np.asarray(support, dtype=int)
        psi_energy = np.sum(dictionary.psi[:, idx] ** 2, axis=1) if idx.size else np.zeros(dictionary.m)
        den = k_const - cross * psi_energy
    elif form == "expected":
        den = k_const + (1.0 - p) * dictionary.psi_row_sq * cross
    elif form == "sufficient":
        den = k_const - (1.0 - p) * dictionary.psi_row_sq * cross
    else:
        raise ValueError(f"unknown form {form!r}")
    return num, den


def min_input_snr(dictionary: Dictionary, p: float, j: int, *, form: str = "expected", support=None) -> float:
    """Minimum input SNR (dB) above which atom j's threshold sequence decreases.

    ``form="expected"`` evaluates the expectation-substituted display
    ``10 log10(||l_j||^2 (||b_j||^2 - 1) / (K + (1-p)||psi_j||^2 (||b_j||^2 - 1)))``
    with ``K = (p / ((1-p) e))^2``; ``form="sufficient"`` uses a minus sign in the
    denominator as in the sufficient condition. Passing ``support`` evaluates the
    support-conditioned sufficient condition exactly.

    Returns ``-inf`` when the atom is orthogonal to all others.
    """
    if not 0 <= j < dictionary.m:
        raise IndexError(f"atom index {j} out of range")
    num, den = _min_snr_terms(dictionary, p, form, support)
    return _to_db(float(num[j]), float(den[j]), j)


def _to_db(num, den, j):
    if den <= 0:
        raise VacuousStabilityError(f"stability condition vacuous for atom {j}: denominator {den:.3e} <= 0")
    if num < 0:
        raise VacuousStabilityError(f"stability condition vacuous for atom {j}: numerator {num:.3e} < 0")
    if num <= 1e-13:
        return -math.inf
    return 10.0 * math.log10(num / den)


@dataclass
class StabilityReport:
    snr_in_db: float
    p: float
    snr_min: np.ndarray
    passed: np.ndarray
    snr_min_sufficient: np.ndarray
    passed_sufficient: np.ndarray
    notes: dict = field(default_factory=dict)

    @property
    def max_snr_min(self) -> float:
        return float(np.max(self.snr_min))

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.passed))

    @property
    def failing_atoms(self) -> np.ndarray:
        return np.flatnonzero(~self.passed)


def _snr_min_vector(dictionary, p, form):
    num, den = _min_snr_terms(dictionary, p, form)
    out = np.empty(dictionary.m)
    notes = {}
    for j in range(dictionary.m):
        try:
            out[j] = _to_db(float(num[j]), float(den[j]), j)
        except VacuousStabilityError as exc:
            out[j] = math.inf
            notes[j] = str(exc)
    return out, notes


def stability_check(dictionary: Dictionary, p: float, snr_in_db: float) -> StabilityReport:
    """Per-atom test ``snr_in_db > SNR_min(j)`` under both denominator signs.

    ``passed`` uses the expectation-substituted display; ``passed_sufficient``
    the minus-sign variant. An atom whose denominator is nonpositive cannot
    satisfy the sufficient condition; it is reported as failing with a note.
    """
    snr_min, notes = _snr_min_vector(dictionary, p, "expected")
    snr_suff, notes_suff = _snr_min_vector(dictionary, p, "sufficient")
    for j in np.flatnonzero(np.isneginf(snr_min)):
        notes.setdefault(int(j), "unconditionally stable: atom orthogonal to all others")
    return StabilityReport(
        snr_in_db=float(snr_in_db),
        p=float(p),
        snr_min=snr_min,
        passed=snr_in_db > snr_min,
        snr_min_sufficient=snr_suff,
        passed_sufficient=snr_in_db > snr_suff,
        notes={"expected": notes, "sufficient": notes_suff},
    )
