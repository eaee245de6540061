"""``rbm`` command-line front end.

Exit codes: 0 on success, 1 on domain errors (bad files, non-convergence,
failed suites), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import analysis, geometry, suites
from .families import ExponentialFamily, m_projection
from .model import (
    EnumerationCapError,
    ProbabilityTensor,
    RbmParams,
    joint_distribution,
    log_partition,
    visible_marginal,
)
from .sampling import empirical_distribution, make_rng, run_chains, total_variation, \
    write_samples_csv
from .statespace import load_function
from .training import METHODS, TrainConfig, default_init, train


class DomainError(Exception):
    """Raised for valid invocations whose inputs or computations fail."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def _emit(report, fmt: str, out_dir: str | None, name: str) -> None:
    report = _jsonable(report)
    if fmt == "json":
        text = json.dumps(report, indent=2) + "\n"
    else:
        buf = io.StringIO()
        rows = report.get("rows") if isinstance(report, dict) else None
        if rows:
            w = csv.DictWriter(buf, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        else:
            w = csv.writer(buf)
            w.writerow(["key", "value"])
            for k, v in report.items():
                w.writerow([k, v if not isinstance(v, (list, dict)) else json.dumps(v)])
        text = buf.getvalue()
    sys.stdout.write(text)
    if out_dir:
        with open(os.path.join(out_dir, f"{name}.{fmt}"), "w") as fh:
            fh.write(text)


def _load_target(path) -> np.ndarray:
    try:
        values = load_function(path)
        return ProbabilityTensor(values).values
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read distribution {path}: {exc}") from exc


def _load_model(path) -> RbmParams:
    try:
        return RbmParams.load(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read model {path}: {exc}") from exc


# commands -------------------------------------------------------------------

def cmd_train(args, parser):
    if args.data is None:
        parser.error("train requires --data")
    if args.seed is None and (args.method in ("cd", "pcd") or args.init is None):
        parser.error(f"train --method {args.method} requires --seed")
    p = _load_target(args.data)
    n = p.shape[0].bit_length() - 1
    rng = make_rng(args.seed) if args.seed is not None else None
    if args.init is not None:
        params = _load_model(args.init)
        if params.n != n:
            raise DomainError("initial model and data disagree on n")
    else:
        if args.m is None:
            parser.error("train requires --m when no --init model is given")
        params = default_init(n, args.m, rng)
    config = TrainConfig(method=args.method, lr=args.lr, schedule=args.schedule, k=args.k,
                         damping=args.damping, batch_size=args.batch_size,
                         max_iter=args.iters, tol=args.tol, seed=args.seed)
    traj = train(params, p, config, rng=rng)
    final = traj.final
    if args.out_dir:
        traj.write_csv(os.path.join(args.out_dir, "train_log.csv"))
        final.params.save(os.path.join(args.out_dir, "model.json"))
    return {
        "command": "train", "method": args.method, "n": n, "m": final.params.m,
        "iterations": final.iter, "loglik": final.loglik, "gradnorm": final.gradnorm,
        "divergence": final.divergence, "model": final.params.to_dict(),
    }


def cmd_sample(args, parser):
    if args.model is None:
        parser.error("sample requires --model")
    if args.seed is None:
        parser.error("sample requires --seed")
    params = _load_model(args.model)
    rng = make_rng(args.seed)
    samples = run_chains(params, rng, args.sweeps, chains=args.chains, burn_in=args.burn_in)
    emp = empirical_distribution(samples, params.n)
    exact = visible_marginal(params)
    if args.out_dir:
        write_samples_csv(samples, params.n, params.m, os.path.join(args.out_dir, "samples.csv"))
    return {
        "command": "sample", "n": params.n, "m": params.m, "sweeps": args.sweeps,
        "burn_in": args.burn_in, "chains": args.chains, "seed": args.seed,
        "empirical": emp.values, "exact": exact.values,
        "total_variation": total_variation(emp.values, exact.values),
    }


def cmd_exact(args, parser):
    if args.model is None:
        parser.error("exact requires --model")
    params = _load_model(args.model)
    out = {"command": "exact", "n": params.n, "m": params.m,
           "log_partition": log_partition(params),
           "visible_marginal": visible_marginal(params).values}
    if args.joint:
        out["joint"] = joint_distribution(params).values
    return out


def cmd_dim(args, parser):
    if args.n is None or args.m is None:
        parser.error("dim requires --n and --m")
    if args.seed is None:
        parser.error("dim requires --seed")
    rep = geometry.dimension_check(args.n, args.m, args.trials, seed=args.seed)
    rep["command"] = "dim"
    return rep


def cmd_divergence(args, parser):
    if args.target is None or args.n is None or args.m is None:
        parser.error("divergence requires --target, --n and --m")
    if args.seed is None:
        parser.error("divergence requires --seed")
    p = _load_target(args.target)
    if p.shape[0] != 1 << args.n:
        raise DomainError("target length does not match --n")
    est = analysis.divergence_to_rbm(p, args.n, args.m, restarts=args.restarts, seed=args.seed)
    out = {"command": "divergence", "n": args.n, "m": args.m, "restarts": args.restarts,
           "divergence": est.divergence, "upper_estimate": True,
           "bounds": analysis.divergence_bounds(args.n, args.m),
           "model": est.params.to_dict()}
    if (args.n, args.m) == (3, 2):
        ex = analysis.rbm32_divergence(p)
        out["exact"] = {"divergence": ex.divergence, "face": ex.face,
                        "projection": ex.projection.values}
    return out


def cmd_membership(args, parser):
    if args.target is None:
        parser.error("membership requires --target")
    p = _load_target(args.target)
    if p.shape[0] != 8:
        raise DomainError("membership test needs a distribution on 3 binary variables")
    out = analysis.rbm32_membership(p, args.tol).to_dict()
    out["command"] = "membership"
    out["tol"] = args.tol
    return out


def cmd_bounds(args, parser):
    if args.n is None or args.m is None:
        parser.error("bounds requires --n and --m")
    b = analysis.divergence_bounds(args.n, args.m)
    low, high = analysis.universal_interval(args.n)
    return {"command": "bounds", "n": args.n, "m": args.m, **b,
            "universal_threshold": analysis.universal_threshold(args.n),
            "universal_interval": [low, high],
            "necessary_lower_bound": analysis.necessary_lower_bound(args.n)}


def cmd_project(args, parser):
    if args.family is None or args.target is None:
        parser.error("project requires --family and --target")
    try:
        fam = ExponentialFamily.load(args.family)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read family {args.family}: {exc}") from exc
    p = _load_target(args.target)
    proj = m_projection(p, fam)
    return {"command": "project", "projection": proj.q.values, "divergence": proj.divergence,
            "residual": proj.residual, "dimension": fam.dimension}


def cmd_reproduce(args, parser):
    if args.suite is None:
        parser.error("reproduce requires a suite name")
    rep = suites.reproduce(args.suite, seed=0 if args.seed is None else args.seed)
    rep["command"] = "reproduce"
    return rep


COMMANDS = {
    "train": cmd_train, "sample": cmd_sample, "exact": cmd_exact, "dim": cmd_dim,
    "divergence": cmd_divergence, "membership": cmd_membership, "bounds": cmd_bounds,
    "project": cmd_project, "reproduce": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--config", help="JSON file whose keys override flag defaults")

    parser = argparse.ArgumentParser(prog="rbm", description="Exact-scale RBM laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="fit an RBM to a distribution")
    p.add_argument("--data", help="JSON array with the data distribution")
    p.add_argument("--init", help="initial model JSON")
    p.add_argument("--m", type=int)
    p.add_argument("--method", choices=METHODS, default="exact")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--schedule", choices=("constant", "inverse"), default="constant")
    p.add_argument("--damping", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("sample", parents=[common], help="run block-Gibbs chains")
    p.add_argument("--model")
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)

    p = sub.add_parser("exact", parents=[common], help="exact distributions of a model")
    p.add_argument("--model")
    p.add_argument("--joint", action="store_true")

    p = sub.add_parser("dim", parents=[common], help="Jacobian rank vs expected dimension")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--trials", type=int, default=3)

    p = sub.add_parser("divergence", parents=[common], help="divergence of a target to an RBM")
    p.add_argument("--target")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--restarts", type=int, default=10)

    p = sub.add_parser("membership", parents=[common], help="membership test, 3 visible / 2 hidden")
    p.add_argument("--target")
    p.add_argument("--tol", type=float, default=1e-10)

    p = sub.add_parser("bounds", parents=[common], help="divergence upper bounds")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)

    p = sub.add_parser("project", parents=[common], help="m-projection onto a family")
    p.add_argument("--family")
    p.add_argument("--target")

    p = sub.add_parser("reproduce", parents=[common], help="run a verification suite")
    p.add_argument("suite", nargs="?", choices=sorted(suites.SUITES))
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` when one is given."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(cfg, dict):
        parser.error("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(k.replace("-", "_") for k in cfg) - known
    if unknown:
        parser.error(f"unknown config keys: {sorted(unknown)}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        if args.out_dir:
            os.makedirs(args.out_dir, exist_ok=True)
        report = COMMANDS[args.command](args, sub)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (DomainError, EnumerationCapError, ValueError, RuntimeError,
            np.linalg.LinAlgError) as exc:
        print(f"rbm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    _emit(report, args.format, args.out_dir, args.command)
    if args.command == "reproduce" and not report["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
