"""Command-line interface.

Heavy imports happen inside the command handlers so that --threads can pin
the BLAS pool through environment variables before NumPy loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="headprune",
        description="Head-aligned automatic channel pruning for toy vision "
                    "transformers under a MAC budget.")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="pin BLAS thread count")
    parser.add_argument("--f64-oracle", action="store_true",
                        help="run evaluation arithmetic in float64")
    parser.add_argument("--json", action="store_true",
                        help="emit reports as JSON instead of tables")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset file")
    p.add_argument("--seed", type=int, required=True, dest="data_seed")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("search", help="train masks and weights under the budget")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("refine", help="recover accuracy with frozen masks")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconfigure", help="physically remove pruned channels")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="top-1 accuracy and MAC report")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--data", default=None, help="APMD file; defaults to the "
                   "checkpoint config's eval split")

    p = sub.add_parser("inspect", help="spectral and structural diagnostics")
    p.add_argument("--in", dest="inp", required=True)

    p = sub.add_parser("verify", help="check masked vs compacted equivalence")
    p.add_argument("--masked", required=True)
    p.add_argument("--compact", required=True)
    p.add_argument("--trials", type=int, default=512)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    from ..errors import HeadpruneError
    try:
        return _dispatch(args)
    except HeadpruneError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def _dispatch(args):
    from .checkpoint import load_checkpoint, save_checkpoint

    if args.command == "gen-data":
        from .data import gen_dataset, write_dataset
        images, labels = gen_dataset(args.data_seed, args.count, args.classes)
        write_dataset(args.out, images, labels, args.classes)
        print(f"wrote {args.count} images ({args.classes} classes) to {args.out}")
        return 0

    if args.command == "search":
        from .config import RunConfig
        from .train import search
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = RunConfig.from_json(f.read())
        if args.seed is not None:
            cfg.seed = args.seed
        ckpt, history = search(cfg)
        save_checkpoint(args.out, ckpt)
        _print_history(history, args.json)
        print(f"searched checkpoint written to {args.out}")
        return 0

    if args.command == "refine":
        from .train import refine
        ckpt, history = refine(load_checkpoint(args.inp))
        save_checkpoint(args.out, ckpt)
        _print_history(history, args.json)
        print(f"refined checkpoint written to {args.out}")
        return 0

    if args.command == "reconfigure":
        from .train import reconfigure_checkpoint
        ckpt = reconfigure_checkpoint(load_checkpoint(args.inp))
        save_checkpoint(args.out, ckpt)
        print(f"compacted checkpoint written to {args.out}")
        return 0

    if args.command == "eval":
        from .train import evaluate_checkpoint
        acc, report = evaluate_checkpoint(load_checkpoint(args.inp),
                                          data_path=args.data,
                                          f64=args.f64_oracle)
        if args.json:
            payload = report.as_dict()
            payload["accuracy"] = acc
            print(json.dumps(payload, indent=2))
        else:
            print(report.format_table())
            print(f"top-1 accuracy: {acc:.4f}")
        return 0

    if args.command == "inspect":
        from .train import inspect_checkpoint
        diag = inspect_checkpoint(load_checkpoint(args.inp))
        if args.json:
            print(json.dumps(diag, indent=2))
        else:
            _print_inspection(diag)
        return 0

    if args.command == "verify":
        from ..reconfigure import verify_equivalence
        from .train import state_for_verification, _load_state
        spec, params, masks, reweight_on = state_for_verification(
            load_checkpoint(args.masked))
        ccfg, cparams, _, _ = _load_state(load_checkpoint(args.compact))
        report = verify_equivalence(spec, params, masks, ccfg.model, cparams,
                                    n_trials=args.trials,
                                    reweight_on=reweight_on)
        if args.json:
            print(json.dumps(report, indent=2))
        else:
            print(f"trials:            {report['trials']}")
            print(f"max abs deviation: {report['max_abs_deviation']:.3e}")
            print(f"argmax agreement:  {report['argmax_agreement']:.4f}")
            print(f"compact MACs:      {report['macs']}")
        print("equivalence verified")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def _print_history(history, as_json):
    if as_json:
        print(json.dumps(history, indent=2))
        return
    for entry in history:
        if "indicator_init" in entry:
            for name, rec in entry["indicator_init"].items():
                print(f"init {name}: kept per head {rec['kept_per_head']} "
                      f"({rec['images']} images)")
        elif "m_prune" in entry:
            print(f"epoch {entry['epoch']:>3}: ce {entry['ce']:.4f} "
                  f"macs {entry['m_prune']}/{entry['m_target']} "
                  f"acc {entry['accuracy']:.4f}")
        else:
            print(f"epoch {entry['epoch']:>3}: ce {entry['ce']:.4f} "
                  f"acc {entry['accuracy']:.4f}")


def _print_inspection(diag):
    print(f"phase: {diag['phase']}")
    print(f"{'layer':<10} {'kind':<9} {'proj':<5} top-3 singular norms per head")
    for row in diag["layers"]:
        norms = " ".join(f"{x:.4f}" for x in row["top_sv_norms"])
        print(f"block{row['block']:<5} {row['kind']:<9} {row['proj']:<5} {norms}")
    print("\nkept channels per head:")
    for name, kept in diag["kept"].items():
        print(f"  {name:<14} {kept}")
    print("\nsimilarity-weight histograms (10 bins over [1, 2]):")
    for name, hist in diag["weight_histograms"].items():
        print(f"  {name:<14} {hist}")


if __name__ == "__main__":
    sys.exit(main())
