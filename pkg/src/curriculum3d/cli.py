"""Command-line entry point: ``curriculum3d {gen-data,train,eval,cam} CONFIG``.

Exit codes: 0 success, 1 user error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiment
from .config import load_config
from .errors import ConfigurationError, NumericalError, StageError, TrainingError


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    out = experiment.generate_dataset(cfg, force=args.force, jobs=args.jobs)
    from . import io

    cases = io.load_dataset(out)
    n_breasts = 2 * len(cases)
    n_mal = sum(c.left_label + c.right_label for c in cases)
    n_mal_pat = sum(c.left_label or c.right_label for c in cases)
    print(f"wrote {len(cases)} patients to {out}")
    print(f"patients malignant/benign: {n_mal_pat}/{len(cases) - n_mal_pat}")
    print(f"breasts malignant/benign: {n_mal}/{n_breasts - n_mal} "
          f"({100 * n_mal / n_breasts:.1f}%/{100 * (1 - n_mal / n_breasts):.1f}%)")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    target = experiment.fold_dir(cfg, args.method, args.fold) / "checkpoint.npz"
    if target.exists() and not args.force:
        print(f"{target} exists; pass --force to retrain", file=sys.stderr)
        return 1
    out = experiment.run_fold(cfg, args.method, args.fold)
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    report = experiment.evaluate_checkpoints(cfg, train_missing=args.train_missing, jobs=args.jobs)
    print(report.table())
    print(f"wrote {cfg.output_path / 'eval'}")
    return 0


def cmd_cam(args) -> int:
    cfg = load_config(args.config)
    out = experiment.export_cam(cfg, args.patient, args.side, fold=args.fold, method=args.method,
                                png=not args.no_png)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curriculum3d", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the synthetic phantom dataset")
    g.add_argument("config")
    g.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one method on one fold")
    t.add_argument("config")
    t.add_argument("--method", choices=["curriculum", "naive"], default="curriculum")
    t.add_argument("--fold", type=int, default=0)
    t.add_argument("--force", action="store_true", help="retrain an existing checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score fold checkpoints and write the report")
    e.add_argument("config")
    e.add_argument("--train-missing", action="store_true", help="train absent fold checkpoints")
    e.add_argument("--jobs", type=int, default=1, help="max folds trained in parallel")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cam", help="class activation map for one breast")
    c.add_argument("config")
    c.add_argument("--patient", required=True)
    c.add_argument("--side", required=True, choices=["left", "right"])
    c.add_argument("--fold", type=int, default=None,
                   help="checkpoint fold (default: the fold testing this patient)")
    c.add_argument("--method", choices=["curriculum", "naive"], default="curriculum")
    c.add_argument("--no-png", action="store_true", help="skip per-slice overlays")
    c.set_defaults(func=cmd_cam)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, FileNotFoundError, FileExistsError, LookupError, StageError,
            TrainingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
