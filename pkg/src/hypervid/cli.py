"""Command-line interface: gen-data, train, eval, rank, gradcheck, inspect-norms."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation, gradcheck, training
from .checkpoint import load_checkpoint
from .config import load_config, load_corpus_spec
from .data import gen_synthetic_corpus, load_corpus, save_corpus
from .errors import ArgumentError


def _cmd_gen_data(args):
    spec = load_corpus_spec(args.spec)
    corpus, truth = gen_synthetic_corpus(spec)
    save_corpus(corpus, args.out, truth=truth)
    print(f"wrote {len(corpus.videos)} videos / {len(corpus.queries)} queries "
          f"to {args.out}")
    return 0


def _cmd_train(args):
    model_cfg, loss_cfg, train_cfg = load_config(args.config)
    corpus = load_corpus(args.data)
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    ckpt, report, _ = training.train(model_cfg, loss_cfg, train_cfg, corpus,
                                     out_path=args.out, log=log)
    print(report.table())
    print(report.machine_line())
    return 0


def _load_model(ckpt_path):
    ckpt = load_checkpoint(ckpt_path)
    model_cfg, loss_cfg, train_cfg, params, _, _ = training.restore_model(ckpt)
    return model_cfg, loss_cfg, train_cfg, params


def _cmd_eval(args):
    model_cfg, _, _, params = _load_model(args.ckpt)
    corpus = load_corpus(args.data)
    training.resolve_data_dims(model_cfg, corpus)
    report = evaluation.evaluate_retrieval(params, model_cfg, corpus, split=args.split)
    print(report.table())
    print(report.machine_line())
    return 0


def _cmd_rank(args):
    model_cfg, _, _, params = _load_model(args.ckpt)
    corpus = load_corpus(args.data)
    training.resolve_data_dims(model_cfg, corpus)
    known = {q.query_id for q in corpus.queries}
    if args.query in known:
        words = corpus.query_by_id(args.query).words
    elif Path(args.query).exists():
        words = np.load(args.query)
    else:
        raise ArgumentError(f"--query '{args.query}' is neither a known query id "
                            f"nor a readable .npy file")
    ranking = evaluation.rank_videos(params, model_cfg, corpus, words)
    for video_id, score in ranking:
        print(f"{video_id}\t{score:.6f}")
    return 0


def _cmd_gradcheck(args):
    model_cfg = None
    if args.config:
        model_cfg, _, _ = load_config(args.config)
        if model_cfg.d_vid == 0:
            model_cfg.d_vid = 7
        if model_cfg.d_text == 0:
            model_cfg.d_text = 5
    names = [args.module] if args.module else None
    results = gradcheck.run_all(names, draws=args.draws, seed=args.seed,
                                model_cfg=model_cfg, max_coords=args.coords)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: max rel err {res.max_rel_err:.3e} "
              f"over {res.draws} draws (tol {res.tol:.1e})")
        failed += 0 if res.passed else 1
    return 0 if failed == 0 else 1


def _cmd_inspect_norms(args):
    model_cfg, _, _, params = _load_model(args.ckpt)
    corpus = load_corpus(args.data)
    training.resolve_data_dims(model_cfg, corpus)
    sys.stdout.write(evaluation.inspect_norms(params, model_cfg, corpus,
                                              bins=args.bins))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hypervid",
        description="Hyperbolic text-to-video retrieval: synthetic data, "
                    "training, evaluation, and diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus directory")
    p.add_argument("--spec", required=True, help="corpus spec file (key = value)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", required=True, help="config file (key = value)")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch lines")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate retrieval metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="all", choices=("all", "train", "val"))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("rank", help="rank all videos against one query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--query", required=True, help="query id or .npy feature file")
    p.set_defaults(func=_cmd_rank)

    p = sub.add_parser("gradcheck", help="finite-difference checks per sub-graph")
    p.add_argument("--config", help="config file; shapes the full-graph target")
    p.add_argument("--module", choices=sorted(gradcheck.TARGETS),
                   help="check a single target")
    p.add_argument("--draws", type=int, default=gradcheck.DEFAULT_DRAWS)
    p.add_argument("--coords", type=int, default=gradcheck.DEFAULT_COORDS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("inspect-norms", help="hyperbolic norm histograms per group")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=_cmd_inspect_norms)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surface package errors without a traceback wall
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
