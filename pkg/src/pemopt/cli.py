"""Command-line front end.

    pemopt run <config.json> [--seed N] [--iterations T] [--out-dir DIR] [--strict]
    pemopt resume <checkpoint> <config.json> [same flags]
    pemopt inspect <checkpoint>
    pemopt make-dataset <out.pemd> [--classes K] [--per-class n] [--seed S]

Exit codes: 0 success, 1 inspect found constraint violations, 2 config or
plan error, 3 numerical failure or unreadable checkpoint.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import backend, checkpoint
from .config import build_problem, load_config, resolve_out_dir
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateRetraction,
    InvalidPoint,
    NonFiniteGradient,
    PemError,
)
from .gsgd import init_state, train, write_trace_csv, TRACE_COLUMNS
from .manifolds import INPUT_TOL
from .objectives import make_synthetic_dataset, save_dataset

EXIT_FLAGGED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
CHECKPOINT_FILE = "checkpoint.pemc"


def _fail(code, kind, message, **extra):
    print(json.dumps({"error": kind, "message": message, "exit_code": code, **extra}),
          file=sys.stderr)
    return code


def _prepare_out_dir(cfg) -> Path:
    out = resolve_out_dir(cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from None
    return out


def _last_trace_iteration(path: Path):
    try:
        lines = path.read_text().splitlines()
    except OSError:
        return None
    if len(lines) < 2 or lines[0] != ",".join(TRACE_COLUMNS):
        return None
    return int(lines[-1].split(",", 1)[0])


def _execute(objective, state, cfg, out: Path, resume=False):
    trace_path = out / TRACE_FILE
    append = resume and _last_trace_iteration(trace_path) == state.t - 1
    records = []
    start = time.perf_counter()
    failure = None
    try:
        traj = train(objective, state, cfg.iterations, seed=cfg.seed,
                     batch_size=cfg.batch_size,
                     callback=lambda rec, _state: records.append(rec))
    except (NonFiniteGradient, DegenerateRetraction) as exc:
        failure = exc
    wall_ms = int(round(1000 * (time.perf_counter() - start)))

    with open(trace_path, "a" if append else "w", newline="") as fh:
        write_trace_csv(records, fh, header=not append)
    if failure is not None:
        it = getattr(failure, "iteration", None)
        if it is None:
            it = records[-1].iteration + 1 if records else state.t
        return _fail(EXIT_NUMERIC, type(failure).__name__, str(failure), iteration=it)

    final = traj.state
    checkpoint.save(final, out / CHECKPOINT_FILE)
    summary = {
        "final_loss": float(objective.loss(final.kernels())),
        "final_grad_norm": records[-1].grad_norm_max if records else None,
        "iterations": final.t,
        "wall_time_ms": wall_ms,
        "branch_counts": dict(sorted(traj.branch_counts.items())),
        "backend": backend.NAME,
        "strict": cfg.strict,
    }
    if hasattr(objective, "accuracy"):
        summary["final_accuracy"] = objective.accuracy(final.kernels())
    (out / SUMMARY_FILE).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def _config(args):
    return load_config(args.config).with_overrides(
        seed=args.seed, iterations=args.iterations, out_dir=args.out_dir, strict=args.strict
    )


def cmd_run(args):
    cfg = _config(args)
    objective, shapes, plans = build_problem(cfg)
    out = _prepare_out_dir(cfg)
    state = init_state(shapes, plans, cfg.optimizer, seed=cfg.seed)
    return _execute(objective, state, cfg, out)


def cmd_resume(args):
    cfg = _config(args)
    objective, shapes, plans = build_problem(cfg)
    try:
        ck = checkpoint.load(args.checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}") from None
    state = ck.state
    ours = [{"shape": s.to_dict(), "plan": p.to_dict()} for s, p in zip(shapes, plans)]
    if ours != ck.header["layers"]:
        raise ConfigError("checkpoint layer shapes or ensemble plans do not match the config")
    if state.config != cfg.optimizer:
        raise ConfigError("checkpoint optimizer settings do not match the config")
    out = _prepare_out_dir(cfg)
    return _execute(objective, state, cfg, out, resume=True)


def cmd_inspect(args):
    ck = checkpoint.load(args.checkpoint, validate=False)
    st = ck.state
    print(f"checkpoint {args.checkpoint}")
    print(f"format version {checkpoint.VERSION}, iteration {st.t}, "
          f"denominator {st.config.denominator}")
    flagged = 0
    for layer, pts, res in zip(st.layers, st.points, ck.residuals):
        s = layer.shape
        print(f"layer {s.layer}: kernels {s.kernel_rows}x{s.kernel_cols}, "
              f"{s.in_channels} in x {s.out_channels} out, strategy {layer.plan.strategy.value}, "
              f"{len(layer.products)} PEMs")
        for gi, (M, p, r) in enumerate(zip(layer.products, pts, res)):
            kinds = sorted({str(c) for c in M.components})
            worst = float(r.max())
            bad = not worst < INPUT_TOL
            flagged += bad
            print(f"  pem {gi}: {len(M)} x {'/'.join(kinds)}  norm {np.linalg.norm(p):.6f}  "
                  f"residual {worst:.3e}  {'FLAGGED' if bad else 'ok'}")
    if flagged:
        print(f"{flagged} PEM(s) violate their constraint (residual >= {INPUT_TOL:.0e})")
        return EXIT_FLAGGED
    return 0


def cmd_make_dataset(args):
    ds = make_synthetic_dataset(args.classes, args.per_class, seed=args.seed,
                                size=args.size, channels=args.channels)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="pemopt", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def overrides(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--out-dir")
        sp.add_argument("--strict", action="store_true", default=None)

    sp = sub.add_parser("run", help="run an experiment from a JSON config")
    sp.add_argument("config")
    overrides(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("resume", help="continue a run from a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("config")
    overrides(sp)
    sp.set_defaults(func=cmd_resume)

    sp = sub.add_parser("inspect", help="report constraint residuals of a checkpoint")
    sp.add_argument("checkpoint")
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("make-dataset", help="write a synthetic PEMD dataset")
    sp.add_argument("out")
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--per-class", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=int, default=8)
    sp.add_argument("--channels", type=int, default=2)
    sp.set_defaults(func=cmd_make_dataset)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "ConfigError", str(exc))
    except (CheckpointError, InvalidPoint) as exc:
        code = EXIT_CONFIG if args.command == "resume" and isinstance(exc, InvalidPoint) else EXIT_NUMERIC
        return _fail(code, type(exc).__name__, str(exc))
    except OSError as exc:
        return _fail(EXIT_NUMERIC if args.command == "inspect" else EXIT_CONFIG,
                     type(exc).__name__, str(exc))
    except PemError as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
