"""Seeded experiment sweeps with paired solver comparisons and CSV output."""

from __future__ import annotations

import csv
import enum
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import codec, seeding
from .bhta import SolverConfig, stability_check
from .metrics import assumption_diagnostics, input_snr, output_snr, support_report
from .model import (
    ProblemInstance,
    SpikyPrior,
    sample_dct_cs_dictionary,
    sample_dictionary,
    sample_fixed_amplitude,
    sample_fixed_support,
    sample_spiky,
    synthesize,
)
from .solvers import SolverSpec, solver_names

log = logging.getLogger(__name__)

ROW_SCHEMA_VERSION = 1
ROW_HEADER = (
    "experiment", "solver", "grid_index", "trial", "n", "m", "p", "k", "alpha", "sigma_e",
    "snr_in_db", "seed", "active", "sparsity_n", "sparsity_m", "snr_out_db", "iterations", "wall_ms", "tp", "fp", "fn",
    "exact_support", "stability_pass", "status", "instance_hash",
)
SUMMARY_HEADER = (
    "experiment", "solver", "grid_index", "x", "n_ok", "n_total", "mean_snr_out_db",
    "std_snr_out_db", "median_wall_ms",
)
DIAGNOSE_HEADER = ("iter", "mean_error_term", "mean_sigma_gamma_sq", "kurtosis")
BHTA_SOLVERS = ("hard-optimal", "hard-simple", "soft")


class Experiment(str, enum.Enum):
    SWEEP_SNR = "sweep-snr"
    SWEEP_SPARSITY = "sweep-sparsity"
    SWEEP_ALPHA = "sweep-alpha"
    DIAGNOSE = "diagnose"
    STABILITY = "stability"
    TIMING = "timing"
    CODEC = "codec"
    SOLVE = "solve"


def _frange(start, stop, step):
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(count)]


@dataclass
class ExperimentConfig:
    experiment: Experiment = Experiment.SWEEP_SNR
    n: int = 256
    m: int = 512
    dictionary: str = "uniform"  # or "dct-cs"
    coefficients: str = "spiky"  # "spiky", "fixed-amplitude" or "fixed-support"
    p: float = 0.9
    sigma_r: float = 1.0
    k: int = 10
    amplitude: float = 1.0
    sigma_e: float = 0.01
    snr_grid: list = field(default_factory=lambda: [20.0, 30.0, 40.0, 50.0, 60.0])
    p_grid: list = field(default_factory=lambda: [0.80, 0.85, 0.90, 0.95])
    k_grid: list = field(default_factory=lambda: [5, 10, 20, 40])
    alpha_grid: list = field(default_factory=lambda: _frange(0.80, 0.99, 0.01))
    m_grid: list = field(default_factory=lambda: [64, 128, 256, 512])
    algorithms: list = field(default_factory=lambda: list(BHTA_SOLVERS))
    solver_params: dict = field(default_factory=dict)
    trials: int = 20
    runs: int = 100
    master_seed: int = 0
    threads: int = 1
    out: str = "results"
    msg_len: int = 128
    codeword_len: int = 256
    blocks: int = 100
    input_stream: str = ""

    def __post_init__(self):
        self.experiment = Experiment(self.experiment)
        self.validate()

    def validate(self):
        if not self.algorithms:
            raise ValueError("algorithm list must not be empty")
        for name in self.algorithms:
            SolverSpec(name)
        unknown = set(self.solver_params) - set(solver_names())
        if unknown:
            raise ValueError(f"parameters given for unknown solvers {sorted(unknown)}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.dictionary not in ("uniform", "dct-cs"):
            raise ValueError(f"unknown dictionary kind {self.dictionary!r}")
        if self.coefficients not in ("spiky", "fixed-amplitude", "fixed-support"):
            raise ValueError(f"unknown coefficient model {self.coefficients!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    def solver(self, name, **extra) -> SolverSpec:
        return SolverSpec(name, {**self.solver_params.get(name, {}), **extra})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["experiment"] = self.experiment.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown configuration keys {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> dict:
    """Read a TOML configuration file into a plain dict of ExperimentConfig keys."""
    with open(path, "rb") as fh:
        return tomli.load(fh)


def dump_config(config: ExperimentConfig) -> str:
    header = f"# resolved configuration, row schema v{ROW_SCHEMA_VERSION}\n"
    return header + tomli_w.dumps(config.to_dict())


# --------------------------------------------------------------------------
# Rows

@dataclass
class ResultRow:
    experiment: str
    solver: str
    grid_index: int
    trial: int
    n: int
    m: int
    p: float | None
    k: int | None
    alpha: float | None
    sigma_e: float
    snr_in_db: float
    seed: int
    # sparsity is reported both ways: ||y||_0 / n (the fixed-amplitude sweep convention) and ||y||_0 / m
    active: int | None = None
    sparsity_n: float | None = None
    sparsity_m: float | None = None
    snr_out_db: float = math.nan
    iterations: int | None = None
    wall_ms: float = math.nan
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None
    exact_support: bool | None = None
    stability_pass: bool | None = None
    status: str = "ok"
    instance_hash: str = ""

    def sort_key(self):
        return (self.grid_index, self.trial, self.solver)

    def csv_fields(self):
        out = []
        for name in ROW_HEADER:
            v = getattr(self, name)
            if v is None:
                out.append("")
            elif isinstance(v, bool):
                out.append(str(int(v)))
            elif isinstance(v, float):
                out.append(f"{v:.3f}" if name == "wall_ms" else repr(v))
            else:
                out.append(str(v))
        return out


@dataclass(frozen=True)
class GridPoint:
    index: int
    x: float
    n: int
    m: int
    p: float | None
    k: int | None
    sigma_e: float
    alpha: float | None = None
    instance_index: int | None = None

    @property
    def seed_index(self) -> int:
        return self.index if self.instance_index is None else self.instance_index


def _reference_amplitude(cfg):
    return cfg.sigma_r if cfg.coefficients == "spiky" else cfg.amplitude


def grid_points(cfg: ExperimentConfig) -> list[GridPoint]:
    exp = cfg.experiment
    fixed_k = cfg.coefficients == "fixed-support"
    p0 = None if fixed_k else cfg.p
    k0 = cfg.k if fixed_k else None
    if exp is Experiment.SWEEP_SNR:
        ref = _reference_amplitude(cfg)
        return [GridPoint(i, float(s), cfg.n, cfg.m, p0, k0, ref * 10 ** (-float(s) / 20))
                for i, s in enumerate(cfg.snr_grid)]
    if exp is Experiment.SWEEP_SPARSITY:
        if fixed_k:
            return [GridPoint(i, float(k), cfg.n, cfg.m, None, int(k), cfg.sigma_e) for i, k in enumerate(cfg.k_grid)]
        return [GridPoint(i, float(p), cfg.n, cfg.m, float(p), None, cfg.sigma_e) for i, p in enumerate(cfg.p_grid)]
    if exp is Experiment.SWEEP_ALPHA:
        # alpha only changes the solver, so every alpha reuses the same instances
        return [GridPoint(i, float(a), cfg.n, cfg.m, p0, k0, cfg.sigma_e, float(a), 0)
                for i, a in enumerate(cfg.alpha_grid)]
    if exp is Experiment.TIMING:
        return [GridPoint(i, float(m), int(m) // 2, int(m), p0, k0, cfg.sigma_e) for i, m in enumerate(cfg.m_grid)]
    raise ValueError(f"{exp.value} is not a sweep experiment")


def make_instance(cfg: ExperimentConfig, point: GridPoint, seed: int) -> ProblemInstance:
    d_seed = seeding.component_seed(seed, seeding.DICTIONARY)
    c_seed = seeding.component_seed(seed, seeding.COEFFICIENTS)
    e_seed = seeding.component_seed(seed, seeding.NOISE)
    if cfg.dictionary == "dct-cs":
        dic = sample_dct_cs_dictionary(point.n, point.m, d_seed)
    else:
        dic = sample_dictionary(point.n, point.m, d_seed)
    if cfg.coefficients == "spiky":
        y, q, r = sample_spiky(SpikyPrior(point.p, cfg.sigma_r), point.m, c_seed)
        return synthesize(dic, y, point.sigma_e, e_seed, q=q, r=r)
    if cfg.coefficients == "fixed-amplitude":
        y, q = sample_fixed_amplitude(point.p, point.m, cfg.amplitude, c_seed)
    else:
        y, q = sample_fixed_support(point.m, point.k, cfg.amplitude, c_seed)
    return synthesize(dic, y, point.sigma_e, e_seed, q=q)


def _expected_active(point: GridPoint):
    return point.k if point.k is not None else (1.0 - point.p) * point.m


def _trial_rows(cfg: ExperimentConfig, point: GridPoint, trial: int) -> list[ResultRow]:
    seed = seeding.sub_seed(cfg.master_seed, cfg.experiment.value, point.seed_index, trial)
    inst = make_instance(cfg, point, seed)
    digest = inst.digest()
    truth = inst.truth
    snr_in = input_snr(_reference_amplitude(cfg), point.sigma_e)
    rows = []
    for name in cfg.algorithms:
        row = ResultRow(cfg.experiment.value, name, point.index, trial, point.n, point.m, point.p, point.k,
                        point.alpha, point.sigma_e, snr_in, seed)
        row.active = int(np.count_nonzero(truth.y))
        row.sparsity_n, row.sparsity_m = row.active / point.n, row.active / point.m
        try:
            extra = {"alpha": point.alpha} if point.alpha is not None and name in BHTA_SOLVERS else {}
            spec = cfg.solver(name, **extra)
            try:
                spec.validate()
            except ValueError as exc:
                row.status = f"invalid: {exc}"
                rows.append(row)
                continue
            # each solver pays for its own operator setup
            run_inst = replace(inst, dictionary=inst.dictionary.cold_copy())
            t0 = time.perf_counter()
            out = spec.run(run_inst, _expected_active(point))
            row.wall_ms = (time.perf_counter() - t0) * 1e3
            if run_inst.digest() != digest:
                raise RuntimeError("instance bytes changed during solve")
            row.instance_hash = digest
            row.snr_out_db = output_snr(truth.y, out.y_hat)
            rep = support_report(truth.q, (out.y_hat != 0).astype(np.int8))
            row.tp, row.fp, row.fn, row.exact_support = (rep.true_positives, rep.false_positives,
                                                         rep.false_negatives, rep.exact_recovery)
            row.iterations = out.iterations
            row.stability_pass = out.stability_pass
            if out.truncated:
                row.status = "truncated"
        except Exception as exc:  # recorded in-row; the sweep continues
            log.warning("solver %s failed at grid %d trial %d: %s", name, point.index, trial, exc)
            row.status = f"error: {type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _pool_map(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_sweep(config: ExperimentConfig, *, order=None):
    """Run every configured solver on the same instance per (grid point, trial).

    Returns ``(rows, summary)`` with rows sorted by grid index, trial and solver.
    ``order`` optionally permutes the task execution order (results do not depend on it).
    """
    points = grid_points(config)
    tasks = [(pt, t) for pt in points for t in range(config.trials)]
    if order is not None:
        tasks = [tasks[i] for i in order]
    nested = _pool_map(lambda task: _trial_rows(config, *task), tasks, config.threads)
    rows = sorted((r for group in nested for r in group), key=ResultRow.sort_key)
    return rows, summarize(rows, points)


def run_alpha_sweep(config: ExperimentConfig):
    return run_sweep(replace(config, experiment=Experiment.SWEEP_ALPHA))


def run_timing(config: ExperimentConfig):
    return run_sweep(replace(config, experiment=Experiment.TIMING))


def summarize(rows, points) -> list[dict]:
    xs = {pt.index: pt.x for pt in points}
    groups: dict = {}
    for r in sorted(rows, key=lambda r: (r.solver, r.grid_index, r.trial)):
        groups.setdefault((r.solver, r.grid_index), []).append(r)
    summary = []
    for (solver, gi), rs in sorted(groups.items()):
        ok = [r for r in rs if r.status in ("ok", "truncated") and math.isfinite(r.snr_out_db)]
        vals = np.array([r.snr_out_db for r in ok])
        walls = np.array([r.wall_ms for r in ok])
        summary.append({
            "experiment": rs[0].experiment,
            "solver": solver,
            "grid_index": gi,
            "x": xs[gi],
            "n_ok": len(ok),
            "n_total": len(rs),
            "mean_snr_out_db": float(np.mean(vals)) if len(vals) else math.nan,
            "std_snr_out_db": float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if len(vals) else math.nan),
            "median_wall_ms": float(np.median(walls)) if len(walls) else math.nan,
        })
    return summary


# --------------------------------------------------------------------------
# Other experiments

def diagnose_dictionary(config: ExperimentConfig):
    seed = seeding.sub_seed(config.master_seed, Experiment.DIAGNOSE.value, 0, 0)
    d_seed = seeding.component_seed(seed, seeding.DICTIONARY)
    if config.dictionary == "dct-cs":
        return sample_dct_cs_dictionary(config.n, config.m, d_seed), seed
    return sample_dictionary(config.n, config.m, d_seed), seed


def run_diagnose(config: ExperimentConfig):
    """Interference-model diagnostics over ``config.runs`` Monte Carlo runs."""
    dic, seed = diagnose_dictionary(config)
    run_seeds = [seeding.sub_seed(config.master_seed, Experiment.DIAGNOSE.value, 1, t) for t in range(config.runs)]
    params = config.solver_params.get("hard-optimal", {})
    return assumption_diagnostics(dic, SpikyPrior(config.p, config.sigma_r), config.sigma_e,
                                  SolverConfig(**params), config.runs, run_seeds, threads=config.threads)


STABILITY_HEADER = ("trial", "seed", "form", "min_snr_min_db", "max_snr_min_db", "n_vacuous",
                    "snr_in_db", "all_pass")


def run_stability(config: ExperimentConfig) -> list[dict]:
    """Per-atom minimum input SNR over ``trials`` dictionary draws."""
    snr_in = input_snr(config.sigma_r, config.sigma_e)
    out = []
    for t in range(config.trials):
        seed = seeding.sub_seed(config.master_seed, Experiment.STABILITY.value, 0, t)
        d_seed = seeding.component_seed(seed, seeding.DICTIONARY)
        if config.dictionary == "dct-cs":
            dic = sample_dct_cs_dictionary(config.n, config.m, d_seed)
        else:
            dic = sample_dictionary(config.n, config.m, d_seed)
        rep = stability_check(dic, config.p, snr_in)
        for form, vals, passed, notes in (
            ("expected", rep.snr_min, rep.passed, rep.notes["expected"]),
            ("sufficient", rep.snr_min_sufficient, rep.passed_sufficient, rep.notes["sufficient"]),
        ):
            finite = vals[np.isfinite(vals)]
            out.append({
                "trial": t, "seed": seed, "form": form,
                "min_snr_min_db": float(np.min(finite)) if finite.size else math.nan,
                "max_snr_min_db": float(np.max(finite)) if finite.size else math.nan,
                "n_vacuous": len(notes), "snr_in_db": snr_in, "all_pass": bool(np.all(passed)),
            })
    return out


CODEC_HEADER = ("solver", "grid_index", "snr_in_db", "sigma_v", "message_snr_db", "n_blocks", "block_failures")


def run_codec(config: ExperimentConfig, samples=None, out_dir=None) -> list[dict]:
    """Error-correction experiment over the SNR grid for every configured solver."""
    seed = seeding.sub_seed(config.master_seed, Experiment.CODEC.value, 0, 0)
    code = codec.make_code(config.msg_len, config.codeword_len, seeding.component_seed(seed, "code"))
    if samples is None:
        if config.input_stream:
            samples = codec.read_stream(config.input_stream)
        else:
            rng = np.random.default_rng(seeding.component_seed(seed, "source"))
            samples = rng.uniform(0.0, 1.0, config.blocks * config.msg_len)
    prior = SpikyPrior(config.p, config.sigma_r)
    out = []
    for gi, snr in enumerate(config.snr_grid):
        sigma_v = config.sigma_r * 10 ** (-float(snr) / 20)
        ch_seed = seeding.sub_seed(config.master_seed, Experiment.CODEC.value, gi, 0)
        for name in config.algorithms:
            res = codec.run_stream(samples, code, prior, sigma_v, config.solver(name), ch_seed,
                                   threads=config.threads)
            out.append({"solver": name, "grid_index": gi, "snr_in_db": float(snr), "sigma_v": sigma_v,
                        "message_snr_db": res.message_snr_db, "n_blocks": len(res.scores),
                        "block_failures": sum(s.status != "ok" for s in res.scores)})
            if out_dir is not None:
                base = Path(out_dir)
                (base / "blocks").mkdir(parents=True, exist_ok=True)
                codec.write_block_scores(base / "blocks" / f"{name}__snr{gi}.csv", res.scores)
                ext = Path(config.input_stream).suffix if config.input_stream else ".f64"
                codec.write_stream(base / f"decoded__{name}__snr{gi}{ext}", res.decoded)
    return out


# --------------------------------------------------------------------------
# Output

def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_dict_csv(path, header, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in records:
            w.writerow([_fmt(rec[h]) for h in header])
    return path


def write_rows(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROW_HEADER)
        for r in rows:
            w.writerow(r.csv_fields())
    return path


def write_plotdata(out_dir, summary, experiment: str) -> list[Path]:
    base = Path(out_dir) / "plotdata"
    base.mkdir(parents=True, exist_ok=True)
    paths = []
    for solver in sorted({s["solver"] for s in summary}):
        recs = [{"x": s["x"], "mean": s["mean_snr_out_db"], "stddev": s["std_snr_out_db"], "n": s["n_ok"]}
                for s in summary if s["solver"] == solver]
        paths.append(write_dict_csv(base / f"{experiment}__{solver}.csv", ("x", "mean", "stddev", "n"), recs))
    return paths


def write_sweep_outputs(out_dir, config: ExperimentConfig, rows, summary) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rows(out_dir / "rows.csv", rows)
    write_dict_csv(out_dir / "summary.csv", SUMMARY_HEADER, summary)
    write_plotdata(out_dir, summary, config.experiment.value)
    write_resolved_config(out_dir, config)


def write_resolved_config(out_dir, config: ExperimentConfig) -> Path:
    path = Path(out_dir) / "config.resolved"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(config))
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


__all__ = [
    "Experiment", "ExperimentConfig", "ResultRow", "GridPoint", "ROW_HEADER", "ROW_SCHEMA_VERSION",
    "grid_points", "make_instance", "run_sweep", "run_alpha_sweep", "run_timing", "run_diagnose",
    "run_stability", "run_codec", "summarize", "write_sweep_outputs", "write_rows", "read_rows",
    "load_config", "dump_config",
]
