"""Command-line entry point: ``grouploss {train,eval,gradcheck,sweep,make-blobs}``.

Configuration is layered: built-in defaults, then a JSON ``--config`` file,
then the ``GROUPLOSS_SEED`` environment variable (seed only), then flags.
The merged configuration is written next to every artifact.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import training
from .data import make_blobs, save_dataset
from .errors import GroupLossError
from .model import load_checkpoint
from .training import SEED_ENV, SWEEP_AXES, RunConfig

log = logging.getLogger("grouploss")

LIST_FIELDS = {"hidden", "ks"}


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _field_type(f):
    if f.name in LIST_FIELDS:
        return _int_list
    default = f.default
    if f.name in {"batches_per_epoch", "k_clusters", "blob_informative_dims"}:
        return int
    if isinstance(default, bool):
        return lambda s: s.lower() in {"1", "true", "yes"}
    if isinstance(default, (int, float, str)):
        return type(default)
    return str


def add_config_flags(parser):
    parser.add_argument("--config", help="JSON file with RunConfig fields")
    parser.add_argument("--blobs", action="store_true", help="use generated blobs (ignore any dataset path)")
    for f in RunConfig.__dataclass_fields__.values():
        parser.add_argument(
            "--" + f.name.replace("_", "-"), dest=f.name, type=_field_type(f), default=None,
            help=argparse.SUPPRESS if f.name.startswith("blob_") else None,
        )


def build_config(args, env=None):
    env = os.environ if env is None else env
    values = {}
    if getattr(args, "config", None):
        values.update(json.loads(Path(args.config).read_text()))
    if env.get(SEED_ENV):
        values["seed"] = int(env[SEED_ENV])
    for name in RunConfig.field_names():
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if getattr(args, "blobs", False):
        values["dataset"] = None
        values["test_dataset"] = None
    return RunConfig.from_dict(values).validate()


def cmd_train(args):
    config = build_config(args)
    result = training.train_and_save(config)
    sys.stdout.write(result.report.to_text())
    log.info("artifacts written to %s", config.out_dir)
    return 0


def cmd_eval(args):
    run_dir = Path(args.run_dir) if args.run_dir else None
    if run_dir and not args.config and (run_dir / "config.json").exists():
        args.config = str(run_dir / "config.json")
    config = build_config(args)
    checkpoint = args.checkpoint or (run_dir / "checkpoint.npz" if run_dir else None)
    if checkpoint is None:
        raise GroupLossError("eval needs --checkpoint or --run-dir")
    encoder, _, _ = load_checkpoint(checkpoint)
    rng = training.seeds(config.seed)
    _, test = training.load_splits(config, rng["data"])
    report = training.evaluate_run(encoder, test, config, rng["cluster"])
    text = report.to_text()
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text)
    return 0


def cmd_gradcheck(args):
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV, 0))
    results = training.gradcheck_suite(
        count=args.instances,
        seed=seed,
        h=args.h,
        tol=args.tol,
        iteration_count=args.iterations,
        negative_mode=args.negative_mode,
        encoder_instances=args.encoder_instances,
    )
    failed = 0
    for name, rep in results:
        print(f"{name}: {rep.summary()}")
        for var, coord, a, num, err in rep.failures:
            print(f"  {var}{list(coord)} analytic={a:.10e} numeric={num:.10e} rel={err:.3e}")
        failed += not rep.passed
    worst = max((rep.max_rel_error for _, rep in results), default=0.0)
    print(f"gradcheck: {len(results) - failed}/{len(results)} passed, max_rel_error={worst:.3e}, tol={args.tol:.1e}")
    return 1 if failed else 0


def cmd_sweep(args):
    config = build_config(args)
    table = training.sweep(config, args.axis, _int_list(args.values), jobs=args.jobs)
    sys.stdout.write((Path(config.out_dir) / "sweep.csv").read_text())
    return 0 if all(row["error"] == "" for row in table) else 1


def cmd_make_blobs(args):
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV, 0))
    ds = make_blobs(args.classes, args.per_class, args.dim, args.spread, seed, args.center_box, args.informative_dims)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} rows, {ds.num_classes} classes, d={ds.dim} to {args.out}")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="grouploss", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an encoder with the Group Loss")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    add_config_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--run-dir", help="directory written by train (config + checkpoint)")
    p.add_argument("--report", help="also write the report to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--encoder-instances", type=int, default=5)
    p.add_argument("--iterations", type=int, default=None, help="force the replicator iteration count")
    p.add_argument("--negative-mode", default="clamp", choices=["clamp", "shift"])
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="robustness sweep over anchors or classes per batch")
    add_config_flags(p)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("make-blobs", help="write a synthetic dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--center-box", type=float, default=7.0)
    p.add_argument("--informative-dims", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_make_blobs)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (GroupLossError, OSError, json.JSONDecodeError) as exc:
        print(f"grouploss {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
