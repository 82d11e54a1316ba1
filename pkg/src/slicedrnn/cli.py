"""Command-line driver: train / eval / bench / verify / slice-plan /
predict-speed, for batch operation (no interactive surface).

Exit codes: 0 success, 1 runtime failure (data, measurement, checkpoint),
2 usage or validation failure (bad flags, impossible slice geometry).
Every successful run writes one manifest.json next to its outputs with
the full flag set, seed, artifact versions, and timestamps, so a run can
be reproduced from the manifest alone.
"""

import argparse
import json
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchConfig, emit_table, predict_ratio, run_bench
from .engine import load_model, save_model
from .equivalence import default_suite, random_case, scalar_demo_case, verify_equivalence
from .errors import (
    ConsistencyError,
    DimensionError,
    DivisibilityError,
    HarnessError,
    ParseError,
    VocabularyError,
)
from .slicing import SliceConfig, build_plan, format_plan
from .tensor import SeededRng
from .text import (
    build_corpus,
    encode_with_vocab,
    init_embeddings,
    load_vocab,
    load_word_vectors,
    read_tsv,
    save_vocab,
)
from .training import (
    TrainConfig,
    build_model,
    evaluate_accuracy,
    restore_params,
    train,
)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(args, started: str) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flags = {
        key: (str(value) if isinstance(value, Path) else value)
        for key, value in vars(args).items()
        if key not in ("command", "handler")
    }
    manifest = {
        "command": args.command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "versions": {
            "slicedrnn": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "started_at": started,
        "finished_at": _now(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def cmd_slice_plan(args) -> int:
    plan = build_plan(SliceConfig(T=args.T, n=args.n, k=args.k))
    print(format_plan(plan))
    return 0


def cmd_predict_speed(args) -> int:
    ratio = predict_ratio(args.n, args.k, args.T)
    print(f"R={ratio:g} theoretical_speedup={1.0 / ratio:.2f}")
    return 0


def cmd_verify(args) -> int:
    if args.scalar_demo:
        case = scalar_demo_case()
        report = verify_equivalence(case, tol=args.tol)
        from .equivalence import layer0_last_states

        states = layer0_last_states(case)[:, 0]
        print("scalar demo: U=1 W=2 n=2 k=1 inputs=[1, 1, 1, 1]")
        print(f"layer-0 last states: {states[0]:g} {states[1]:g}")
        print(f"sliced final state F = {report.f_sliced[0]:g}")
        print(f"sequential h_T = {report.h_sequential[0]:g}")
        print(f"{report.f_sliced[0]:g} == {report.h_sequential[0]:g}: "
              f"{'PASS' if report.passed else 'FAIL'}")
        return 0 if report.passed else 1

    if args.n is not None or args.k is not None:
        if args.n is None or args.k is None:
            raise ValueError("--n and --k must be given together")
        cases = [
            random_case(args.seed + i, args.n, args.k, (1, 3, 5)[i % 3], (1, 3, 5)[i % 3])
            for i in range(args.cases)
        ]
    else:
        cases = default_suite(seed=args.seed, cases_per_geometry=args.cases)

    print("n\tk\tT\tdims\tmax_rel_err\tverdict")
    failures = 0
    for case in cases:
        report = verify_equivalence(case, tol=args.tol, perturb=args.perturb)
        print(report.line())
        failures += 0 if report.passed else 1
    print(f"{len(cases) - failures}/{len(cases)} cases passed (tol={args.tol:g})")
    return 0 if failures == 0 else 1


def cmd_bench(args) -> int:
    cfg = BenchConfig(
        T=args.T, n=args.n, k=args.k, hidden_dim=args.hidden,
        embed_dim=args.embed if args.embed else args.hidden,
        batch=args.batch, workers=args.workers, trials=args.trials,
        warmup=args.warmup, seed=args.seed,
    )
    report = run_bench(cfg)
    table = emit_table([report])
    print(table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.tsv").write_text(table + "\n", encoding="utf-8")
    if args.json:
        (out / "bench.jsonl").write_text(report.record() + "\n", encoding="utf-8")
    return 0


def cmd_train(args) -> int:
    plan = build_plan(SliceConfig(T=args.T, n=args.n, k=args.k))
    pairs = read_tsv(args.data)
    corpus, vocab = build_corpus(pairs, args.T, args.vocab_cap)
    rng = SeededRng(args.seed)
    if args.vectors:
        embed = load_word_vectors(args.vectors, vocab, args.embed, rng.derive(77))
    else:
        embed = init_embeddings(vocab.size, args.embed, rng.derive(77))
    model = build_model(
        vocab.size, corpus.classes, plan, args.hidden, args.embed, args.seed, embed=embed
    )
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, seed=args.seed,
        hidden_dim=args.hidden, embed_dim=args.embed, workers=args.workers,
        clip_norm=args.clip_norm, alpha=args.alpha,
    )
    result = train(model, corpus, cfg)
    restore_params(model, result.best_params)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.ckpt")
    save_vocab(vocab, out / "vocab.tsv")
    log_lines = [stats.line() for stats in result.log]
    (out / "epochs.tsv").write_text(
        "epoch\ttrain_loss\tval_acc\tseconds\n" + "\n".join(log_lines) + "\n",
        encoding="utf-8",
    )
    for line in log_lines:
        print(line)
    print(f"best_epoch={result.best_epoch} best_val_acc={result.best_val_acc:.4f}")
    print(f"checkpoint={out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    vocab_path = args.vocab or (Path(args.checkpoint).parent / "vocab.tsv")
    vocab = load_vocab(vocab_path)
    pairs = read_tsv(args.data)
    corpus = encode_with_vocab(pairs, vocab, model.plan.T)
    split = {"train": corpus.train, "val": corpus.val, "test": corpus.test}[args.split]
    accuracy = evaluate_accuracy(model, split, workers=args.workers)
    print(f"{args.split}_acc={accuracy:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slicedrnn",
        description="Sliced recurrent network: training, verification, and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_geometry(p, t_default=None):
        p.add_argument("--T", type=int, required=t_default is None, default=t_default,
                       help="sequence length")
        p.add_argument("--n", type=int, required=True, help="slice fan-out per layer")
        p.add_argument("--k", type=int, required=True, help="number of slice operations")

    p = sub.add_parser("slice-plan", help="print the layer geometry for (T, n, k)")
    add_geometry(p)
    p.add_argument("--out", default="runs/slice-plan")
    p.set_defaults(handler=cmd_slice_plan)

    p = sub.add_parser("predict-speed", help="evaluate the analytic speed ratio")
    add_geometry(p)
    p.add_argument("--out", default="runs/predict-speed")
    p.set_defaults(handler=cmd_predict_speed)

    p = sub.add_parser("verify", help="run the linear-equivalence suite")
    p.add_argument("--n", type=int, help="restrict to one geometry (with --k)")
    p.add_argument("--k", type=int)
    p.add_argument("--cases", type=int, default=10, help="cases per geometry")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", type=float, default=None,
                   help="inject this offset into one constructed weight (expect FAIL)")
    p.add_argument("--scalar-demo", action="store_true",
                   help="print the hand-checkable scalar example")
    p.add_argument("--out", default="runs/verify")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("bench", help="wall-clock comparison of both arms")
    add_geometry(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--embed", type=int, default=None, help="defaults to --hidden")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="also write bench.jsonl")
    p.add_argument("--out", default="runs/bench")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("train", help="train on a label<TAB>text file")
    p.add_argument("--data", required=True, help="TSV dataset path")
    add_geometry(p, t_default=512)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--embed", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.001, help="Adam step size")
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--vocab-cap", type=int, default=30_000)
    p.add_argument("--vectors", default=None, help="pretrained word-vector text file")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/train")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", default=None,
                   help="vocabulary dump; defaults to vocab.tsv beside the checkpoint")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/eval")
    p.set_defaults(handler=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = _now()
    try:
        code = args.handler(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivisibilityError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HarnessError, ConsistencyError, VocabularyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _write_manifest(args, started)
    return code


if __name__ == "__main__":
    sys.exit(main())
