"""Name-based registry over every in-repo solver with a uniform result type."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import baselines, bhta, operators
from .model import ProblemInstance


@dataclass
class Outcome:
    y_hat: np.ndarray
    iterations: int
    wall_time: float
    stability_pass: bool | None = None
    truncated: bool = False


def _bhta_config(params, **fixed):
    known = {f.name for f in fields(bhta.SolverConfig)}
    unknown = set(params) - known
    if unknown:
        raise ValueError(f"unknown solver parameters: {sorted(unknown)}")
    return bhta.SolverConfig(**{**params, **fixed})


def _run_bhta(fn, fixed):
    def run(instance, params, expected_active):
        cfg = _bhta_config(params, **fixed)
        res = fn(instance, cfg)
        passed = None if res.stability_flag is None else res.stability_flag.all_pass
        return Outcome(res.y_hat, res.iterations, res.wall_time, passed, res.truncated)
    return run


def _greedy_config(instance, params, expected_active):
    params = dict(params)
    if "max_atoms" not in params:
        if expected_active is None:
            raise ValueError("greedy solvers need max_atoms or an expected active count")
        return baselines.GreedyConfig.for_expected_active(expected_active, instance.m,
                                                          params.get("residual_tol", 0.0))
    return baselines.GreedyConfig(**params)


def _run_greedy(fn):
    def run(instance, params, expected_active):
        cfg = _greedy_config(instance, params, expected_active)
        t0 = time.perf_counter()
        y, info = fn(instance, cfg, full_output=True)
        return Outcome(y, len(info.selected), time.perf_counter() - t0)
    return run


def _run_min_l2(instance, params, expected_active):
    if params:
        raise ValueError("min-l2 takes no parameters")
    t0 = time.perf_counter()
    y = operators.min_l2_solution(instance.dictionary, instance.x)
    return Outcome(y, 1, time.perf_counter() - t0)


REGISTRY = {
    "hard-optimal": _run_bhta(bhta.hard_bhta, {"strategy": bhta.Strategy.OPTIMAL}),
    "hard-simple": _run_bhta(bhta.hard_bhta, {"strategy": bhta.Strategy.SIMPLE}),
    "soft": _run_bhta(bhta.soft_bhta, {"variant": bhta.Variant.SOFT}),
    "mp": _run_greedy(baselines.matching_pursuit),
    "omp": _run_greedy(baselines.orthogonal_matching_pursuit),
    "min-l2": _run_min_l2,
}


@dataclass(frozen=True)
class SolverSpec:
    """A registered solver name plus its keyword parameters."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in REGISTRY:
            raise ValueError(f"unknown solver {self.name!r}; choose from {sorted(REGISTRY)}")

    def validate(self):
        """Raise early on an invalid configuration (no instance needed)."""
        if self.name in ("hard-optimal", "hard-simple", "soft"):
            _bhta_config(self.params)

    def run(self, instance: ProblemInstance, expected_active: float | None = None) -> Outcome:
        return REGISTRY[self.name](instance, dict(self.params), expected_active)


def solver_names():
    return sorted(REGISTRY)
