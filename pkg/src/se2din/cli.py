"""Command-line entry point: ``se2din <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path


from . import data, train, verify
from .container import ContainerError
from .model import Model

log = logging.getLogger("se2din")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _data_path(arg: str | None, what: str = "--data") -> Path:
    if arg is not None:
        path = Path(arg)
    else:
        root = data.default_data_dir()
        if root is None:
            raise UsageError(f"{what} not given and SE2DIN_DATA_DIR is unset")
        path = root
    if not path.exists():
        raise UsageError(f"{what}: {path} does not exist")
    return path


def _splits_path(arg: str | None) -> Path:
    path = _data_path(arg)
    if path.is_dir():
        path = path / "mnist_rot.se2d"
        if not path.exists():
            raise UsageError(f"no generated dataset at {path}; run generate-data first")
    return path


def _sizes(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("sizes must be three comma-separated integers") from None
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError("sizes must be three positive integers")
    return parts


def _hyperparams(args) -> tuple[train.Hyperparams, dict]:
    if args.config is not None:
        if not Path(args.config).exists():
            raise UsageError(f"--config: {args.config} does not exist")
        hp, grid = train.load_config(args.config)
    else:
        hp, grid = train.Hyperparams(), dict(train.DEFAULT_GRID)
    overrides = {k: getattr(args, k) for k in ("order", "k", "seed", "epochs") if getattr(args, k, None) is not None}
    hp = replace(hp, **overrides)
    hp.validate()
    return hp, grid


# -- commands -------------------------------------------------------------------

def cmd_generate_data(args) -> int:
    root = _data_path(args.mnist_dir, "--mnist-dir")
    mnist_train, mnist_test = data.load_mnist(root)
    mode = "unrotated-train" if args.unrotated_train else "rotated"
    splits = data.generate(mnist_train, mnist_test, args.seed, mode, args.sizes)
    out = Path(args.out)
    if out.suffix != ".se2d":
        out = out / "mnist_rot.se2d"
    data.save_splits(out, splits, {"mode": mode, "seed": args.seed})
    log.info("wrote %s (%d/%d/%d images)", out, len(splits.train), len(splits.val), len(splits.test))
    return EXIT_OK


def cmd_train(args) -> int:
    hp, _ = _hyperparams(args)
    splits = data.load_splits(_splits_path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = train.build_model(hp)
    try:
        rec = train.train(model, splits, hp, checkpoint=out / "model.se2d")
    except train.TrainingDiverged as exc:
        train.write_records(out / "record.jsonl", [exc.record])
        log.error("%s", exc)
        return EXIT_FAIL
    train.write_records(out / "record.jsonl", [rec])
    print(json.dumps({"best_val_error": rec.best_val_error, "test_error": rec.test_error}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = Model.load(args.checkpoint)
    splits = data.load_splits(_splits_path(args.data))
    err = train.evaluate(model, splits.get(args.split), args.batch_size)
    print(f"{err:.2f}%")
    return EXIT_OK


def cmd_grid_search(args) -> int:
    hp, grid = _hyperparams(args)
    splits = data.load_splits(_splits_path(args.data))
    best, table = train.grid_search(hp, splits, grid, args.budget)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train.save_json(out / "grid.json", {"best": best.to_dict(), "table": table})
    sys.stdout.write(train.format_table(table))
    return EXIT_OK


def cmd_verify(args) -> int:
    model = None
    if args.checkpoint is not None:
        if not Path(args.checkpoint).exists():
            raise UsageError(f"--checkpoint: {args.checkpoint} does not exist")
        model = Model.load(args.checkpoint)
    elif args.suite != "formulas":
        raise UsageError(f"suite {args.suite!r} needs --checkpoint")
    images = None
    if args.data is not None:
        test = data.load_splits(_splits_path(args.data)).test
        images = test.images[:args.images]
    results = verify.run_suite(args.suite, model, images, args.seed)
    js, txt = verify.emit_report(results, args.report)
    sys.stdout.write(Path(txt).read_text())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    """Running-statistics networks must meet the bound; batch-statistics runs get the looser one."""
    ok = True
    for order in (2, 3):
        for training in (False, True):
            res = verify.check_gradients(args.seed, order, training)
            bound = verify.GRADCHECK_TRAINING_BOUND if training else verify.GRADCHECK_BOUND
            passed = res.worst < bound
            ok &= passed
            mode = "batch statistics" if training else "running statistics"
            print(f"order {order}, {mode}: max relative error {res.worst:.3e} < {bound:g} "
                  f"{'PASS' if passed else 'FAIL'} ({res.compared} entries, {res.skipped} at kinks)")
    return EXIT_OK if ok else EXIT_FAIL


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="se2din", description="SE(2) differential invariant networks")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="build rotated MNIST from the raw IDX files")
    g.add_argument("--mnist-dir", default=None, help="directory with the MNIST IDX files")
    g.add_argument("--out", required=True, help="output .se2d file or directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--unrotated-train", action="store_true", help="leave train/val upright")
    g.add_argument("--sizes", type=_sizes, default=(data.TRAIN_SIZE, data.VAL_SIZE, data.TEST_SIZE),
                   help="train,val,test counts")
    g.set_defaults(func=cmd_generate_data)

    def model_flags(q):
        q.add_argument("--config", default=None, help="JSON config (see docs/config.md)")
        q.add_argument("--data", default=None, help="generated dataset file or directory")
        q.add_argument("--out", required=True, help="output directory")
        q.add_argument("--order", type=int, choices=(2, 3), default=None)
        q.add_argument("--k", type=int, default=None)
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--epochs", type=int, default=None)

    t = sub.add_parser("train", help="train one model")
    model_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="print the error rate of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", default=None)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--batch-size", type=int, default=256)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("grid-search", help="dropout x weight decay search on validation error")
    model_flags(s)
    s.add_argument("--budget", type=int, default=None, help="epochs per trial")
    s.set_defaults(func=cmd_grid_search)

    v = sub.add_parser("verify", help="invariance and equivariance checks")
    v.add_argument("--checkpoint", default=None)
    v.add_argument("--suite", choices=("rot90", "continuous", "formulas", "all"), default="all")
    v.add_argument("--report", required=True, help="report path stem; writes .json and .txt")
    v.add_argument("--data", default=None, help="use test images from this dataset for rot90")
    v.add_argument("--images", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("gradcheck", help="finite-difference check of the toy network")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def _thread_limit(n: int | None):
    if n is None:
        return nullcontext()
    if n < 1:
        raise UsageError("--threads must be positive")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command in ("train", "grid-search")
                        else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"se2din: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, data.DataError, ContainerError, ValueError) as exc:
        print(f"se2din: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
