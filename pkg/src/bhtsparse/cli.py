"""Command-line entry point (``bhtsparse``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, seeding
from .harness import Experiment, ExperimentConfig
from .metrics import output_snr, support_report
from .model import load_instance, save_instance

SUBCOMMANDS = {
    "gen": Experiment.SOLVE,
    "solve": Experiment.SOLVE,
    "sweep-snr": Experiment.SWEEP_SNR,
    "sweep-sparsity": Experiment.SWEEP_SPARSITY,
    "sweep-alpha": Experiment.SWEEP_ALPHA,
    "diagnose": Experiment.DIAGNOSE,
    "stability": Experiment.STABILITY,
    "timing": Experiment.TIMING,
    "codec": Experiment.CODEC,
}


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _strs(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _common(parser):
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=int, dest="master_seed", help="master seed")
    g.add_argument("--trials", type=int, help="Monte Carlo trials per grid point")
    g.add_argument("--out", help="output directory")
    g.add_argument("--config", help="TOML configuration file (flags override it)")
    g.add_argument("--threads", type=int, help="worker threads")
    g.add_argument("--print-config", action="store_true", help="echo the resolved configuration")
    g.add_argument("-v", "--verbose", action="store_true")

    p = parser.add_argument_group("problem options")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--p", type=float, help="inactivity probability")
    p.add_argument("--sigma-r", type=float, dest="sigma_r")
    p.add_argument("--sigma-e", type=float, dest="sigma_e")
    p.add_argument("--k", type=int, help="active count for fixed-support coefficients")
    p.add_argument("--amplitude", type=float)
    p.add_argument("--dictionary", choices=["uniform", "dct-cs"])
    p.add_argument("--coefficients", choices=["spiky", "fixed-amplitude", "fixed-support"])
    p.add_argument("--solvers", type=_strs, dest="algorithms", help="comma-separated solver names")
    p.add_argument("--snr-grid", type=_floats, dest="snr_grid")
    p.add_argument("--p-grid", type=_floats, dest="p_grid")
    p.add_argument("--k-grid", type=_ints, dest="k_grid")
    p.add_argument("--alpha-grid", type=_floats, dest="alpha_grid")
    p.add_argument("--m-grid", type=_ints, dest="m_grid")
    p.add_argument("--runs", type=int, help="Monte Carlo runs for diagnose")
    p.add_argument("--solver-param", action="append", default=[], metavar="SOLVER.KEY=VALUE",
                   help="per-solver parameter, value parsed as JSON when possible")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bhtsparse", description="Sparse recovery by Bayesian hypothesis testing.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        _common(sp)
        if name == "solve":
            sp.add_argument("instance", help="instance .npz file")
            sp.add_argument("--solver", default="hard-optimal")
            sp.add_argument("--save", help="write the estimate to this .npy file")
        if name == "codec":
            sp.add_argument("--input", dest="input_stream", help="sample stream (raw float64 LE or text)")
            sp.add_argument("--blocks", type=int, help="random blocks when no input is given")
            sp.add_argument("--msg-len", type=int, dest="msg_len")
            sp.add_argument("--codeword-len", type=int, dest="codeword_len")
    return parser


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> ExperimentConfig:
    data = harness.load_config(args.config) if args.config else {}
    data = dict(data)
    data["experiment"] = SUBCOMMANDS[args.command].value
    keys = [k for k in vars(args) if k not in ("command", "config", "print_config", "verbose", "solver_param",
                                                "instance", "solver", "save")]
    for key in keys:
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    params = {k: dict(v) for k, v in data.get("solver_params", {}).items()}
    for item in args.solver_param:
        target, _, value = item.partition("=")
        solver, _, key = target.partition(".")
        if not (solver and key and value):
            raise ValueError(f"bad --solver-param {item!r}, expected SOLVER.KEY=VALUE")
        params.setdefault(solver, {})[key] = _parse_value(value)
    data["solver_params"] = params
    return ExperimentConfig.from_dict(data)


def _cmd_gen(cfg, out):
    point = harness.GridPoint(0, 0.0, cfg.n, cfg.m, None if cfg.coefficients == "fixed-support" else cfg.p,
                              cfg.k if cfg.coefficients == "fixed-support" else None, cfg.sigma_e)
    inst_dir = out / "instances"
    inst_dir.mkdir(parents=True, exist_ok=True)
    for t in range(cfg.trials):
        seed = seeding.sub_seed(cfg.master_seed, "gen", 0, t)
        path = save_instance(harness.make_instance(cfg, point, seed), inst_dir / f"instance_{t:04d}.npz")
        print(path)


def _cmd_solve(cfg, args):
    inst = load_instance(args.instance)
    spec = cfg.solver(args.solver)
    expected = None
    if inst.truth is not None:
        expected = float(np.sum(inst.truth.q))
    elif cfg.coefficients == "fixed-support":
        expected = cfg.k
    else:
        expected = (1.0 - cfg.p) * inst.m
    out = spec.run(inst, expected)
    support = np.flatnonzero(out.y_hat)
    print(f"solver {spec.name}: {support.size} active atoms, {out.iterations} iterations, "
          f"{out.wall_time * 1e3:.1f} ms")
    if inst.truth is not None:
        rep = support_report(inst.truth.q, (out.y_hat != 0).astype(np.int8))
        print(f"snr_out_db {output_snr(inst.truth.y, out.y_hat):.3f}")
        print(f"tp {rep.true_positives} fp {rep.false_positives} fn {rep.false_negatives} "
              f"exact {int(rep.exact_recovery)}")
    if out.stability_pass is not None:
        print(f"stability_pass {int(out.stability_pass)}")
    print("support " + " ".join(map(str, support)))
    if args.save:
        np.save(args.save, out.y_hat)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_resolved_config(out, cfg)
    if args.print_config:
        print(harness.dump_config(cfg))

    try:
        _dispatch(args, cfg, out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _dispatch(args, cfg, out):
    cmd = args.command
    if cmd == "gen":
        _cmd_gen(cfg, out)
    elif cmd == "solve":
        _cmd_solve(cfg, args)
    elif cmd in ("sweep-snr", "sweep-sparsity", "sweep-alpha", "timing"):
        rows, summary = harness.run_sweep(cfg)
        harness.write_sweep_outputs(out, cfg, rows, summary)
        for s in summary:
            print(f"{s['solver']:>13} x={s['x']:<8g} mean={s['mean_snr_out_db']:8.3f} dB "
                  f"std={s['std_snr_out_db']:6.3f} n={s['n_ok']} median_ms={s['median_wall_ms']:.2f}")
    elif cmd == "diagnose":
        trace = harness.run_diagnose(cfg)
        recs = [dict(zip(harness.DIAGNOSE_HEADER, r)) for r in trace.rows()]
        harness.write_dict_csv(out / "diagnose.csv", harness.DIAGNOSE_HEADER, recs)
        for r in recs:
            print(f"iter {r['iter']:3d} rel_error {r['mean_error_term'] / r['mean_sigma_gamma_sq']:.4f} "
                  f"kurtosis {r['kurtosis']:.4f}")
    elif cmd == "stability":
        recs = harness.run_stability(cfg)
        harness.write_dict_csv(out / "stability.csv", harness.STABILITY_HEADER, recs)
        for r in recs:
            print(f"trial {r['trial']} {r['form']:>10}: min {r['min_snr_min_db']:.4f} dB "
                  f"max {r['max_snr_min_db']:.4f} dB all_pass {int(r['all_pass'])}")
    elif cmd == "codec":
        recs = harness.run_codec(cfg, out_dir=out)
        harness.write_dict_csv(out / "codec.csv", harness.CODEC_HEADER, recs)
        for r in recs:
            print(f"{r['solver']:>13} snr_in={r['snr_in_db']:g} dB message_snr={r['message_snr_db']:.3f} dB")


if __name__ == "__main__":
    sys.exit(main())
