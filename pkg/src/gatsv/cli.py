"""Command-line interface.

Verbs:
  gen        synthesize a train/test corpus and a trial list
  train      fit a scorer, write a checkpoint and a per-epoch loss log
  score      score a trial list with a chosen back-end
  eval       report EER for a score file
  gradcheck  compare analytic and finite-difference gradients

Every command is deterministic given its flags (all randomness is
seeded) and writes a JSON manifest describing inputs, outputs, config
and timing.  Exit codes: 0 success, 2 usage, 3 data/format problems,
4 numeric failures; gradcheck exits 1 when the check itself fails.
GATV_THREADS > 1 parallelizes trial scoring.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from . import backend
from .baselines import (
    bvector_score,
    cosine_utterance_score,
    load_bvector,
    save_bvector,
    train_bvector,
    tta_score,
)
from .data import (
    SynthConfig,
    generate,
    make_trials,
    read_embeddings,
    read_trials,
    write_embeddings,
    write_trials,
)
from .errors import DataError, DimensionError, DomainError, FormatError, TrainingError
from .gat import default_dims, init_model, load_model, save_model, score as gat_score
from .graph import average_enrollment, build_trial_graph
from .metrics import eer, read_scores, trial_scores_from_rows, write_scores
from .numeric import Tape
from .train import (
    LOSS_CONTRASTIVE,
    LOSS_HARD_NEGATIVE,
    TrainConfig,
    train,
    write_loss_log,
)

PAPER_PRESET = dict(epochs=200, batch_m=350, lr0=1e-3, dropout=0.2, weight_decay=1e-4)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command, args, inputs, outputs, started):
    config = {
        k: v for k, v in vars(args).items() if k != "func" and not callable(v)
    }
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "backend": backend.BACKEND,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "wall_seconds": round(time.monotonic() - started, 6),
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _parse_int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise ValueError(f"expected comma-separated integers, got {text!r}") from exc


# -- gen -----------------------------------------------------------------------


def cmd_gen(args):
    started = time.monotonic()
    os.makedirs(args.out_dir, exist_ok=True)
    base = dict(
        utterances_per_speaker=args.utts,
        segments_per_utterance=args.segments,
        dim=args.dim,
        within_noise=args.sigma_within,
        segment_noise=args.sigma_segment,
        outlier_prob=args.outlier_prob,
        outlier_scale=args.outlier_scale,
    )
    train_corpus = generate(
        SynthConfig(speakers=args.speakers, seed=args.seed, **base), split="train"
    )
    test_corpus = generate(
        SynthConfig(speakers=args.test_speakers, seed=args.seed + 1, **base),
        split="test",
    )
    train_path = os.path.join(args.out_dir, "train.sse")
    test_path = os.path.join(args.out_dir, "test.sse")
    trials_path = os.path.join(args.out_dir, "trials.txt")
    write_embeddings(train_corpus, train_path)
    write_embeddings(test_corpus, test_path)
    write_trials(
        make_trials(test_corpus, args.n_target, args.n_nontarget, seed=args.seed + 2),
        trials_path,
    )
    outputs = [train_path, test_path, trials_path]
    _write_manifest(
        os.path.join(args.out_dir, "gen.manifest.json"),
        "gen", args, [], outputs, started,
    )
    print(f"wrote {', '.join(outputs)}")
    return 0


# -- train ---------------------------------------------------------------------


def cmd_train(args):
    started = time.monotonic()
    corpus = read_embeddings(args.inp, split="train")
    if args.paper_preset:
        for key, value in PAPER_PRESET.items():
            setattr(args, key, value)
    loss = LOSS_HARD_NEGATIVE if args.loss == "hardneg" else LOSS_CONTRASTIVE
    config = TrainConfig(
        epochs=args.epochs,
        batch_M=args.batch_m,
        lr0=args.lr0,
        weight_decay=args.weight_decay,
        dropout=args.dropout,
        hard_negative_H=args.H,
        loss=loss,
        seed=args.seed,
        dims=_parse_int_list(args.dims) if args.dims else None,
        strict_eq6=args.strict_eq6,
    )
    if args.backend == "gat":
        if config.epochs == 0:
            dims = config.dims if config.dims is not None else default_dims(corpus.dim)
            model, history = init_model(dims, config.seed, config.dropout), []
        else:
            model, history = train(corpus, config)
        save_model(model, args.out)
    else:
        ops = tuple(args.bvector_ops.split(","))
        model, history = train_bvector(corpus, config, ops=ops)
        save_bvector(model, args.out)
    loss_log = args.loss_log or args.out + ".loss.tsv"
    write_loss_log(history, loss_log)
    _write_manifest(
        args.out + ".manifest.json", "train", args, [args.inp],
        [args.out, loss_log], started,
    )
    print(f"wrote {args.out} ({len(history)} epochs logged to {loss_log})")
    return 0


# -- score ---------------------------------------------------------------------


def _make_pair_scorer(args):
    if args.backend == "gat":
        model = load_model(_require_model(args))
        return lambda enroll, test: gat_score(model, build_trial_graph(enroll, test))
    if args.backend == "bvector":
        model = load_bvector(_require_model(args))
        return lambda enroll, test: bvector_score(model, enroll, test)
    if args.backend == "cosine":
        return cosine_utterance_score
    return tta_score


def cmd_score(args):
    started = time.monotonic()
    corpus = read_embeddings(args.inp, split="test")
    trials = read_trials(args.trials)
    pair_scorer = _make_pair_scorer(args)

    def resolve(trial, idx):
        utts = []
        for utt_id in (*trial.enroll_ids, trial.test_id):
            if utt_id not in corpus.utterances:
                raise DataError(
                    f"trial {idx}: unknown utterance id {utt_id!r}"
                )
            utts.append(corpus.utterances[utt_id])
        return average_enrollment(utts[:-1]), utts[-1]

    def score_one(item):
        idx, trial = item
        enroll, test = resolve(trial, idx)
        return (trial.label, ",".join(trial.enroll_ids), trial.test_id,
                pair_scorer(enroll, test))

    items = list(enumerate(trials, start=1))
    threads = int(os.environ.get("GATV_THREADS", "1") or "1")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(score_one, items))
    else:
        rows = [score_one(item) for item in items]
    write_scores(rows, args.out)
    inputs = [args.inp, args.trials] + ([args.model] if args.model else [])
    _write_manifest(args.out + ".manifest.json", "score", args, inputs, [args.out], started)
    print(f"scored {len(rows)} trials -> {args.out}")
    return 0


def _require_model(args):
    if not args.model:
        raise DataError(f"--model is required for the {args.backend} backend")
    return args.model


# -- eval ----------------------------------------------------------------------


def cmd_eval(args):
    started = time.monotonic()
    rows = read_scores(args.scores)
    rate, threshold = eer(trial_scores_from_rows(rows))
    print(f"EER {rate * 100:.2f}%  threshold {threshold:.6g}  ({len(rows)} trials)")
    manifest = args.manifest or args.scores + ".eval.manifest.json"
    _write_manifest(manifest, "eval", args, [args.scores], [], started)
    return 0


# -- gradcheck -------------------------------------------------------------------


def _gradcheck_worst_rel_err(dims, seed, step=1e-5):
    """Worst relative error between taped and central-difference gradients
    of the score on a small random trial graph."""
    import numpy as np

    from .graph import TrialGraph, ENROLL, TEST
    from .gat import score_value
    from .rng import Xoshiro256StarStar

    rng = Xoshiro256StarStar(seed, 0xD1FF)
    model = init_model(dims, seed, dropout_rate=0.0)
    n_half = 3
    nodes = rng.normals(2 * n_half * dims[0]).reshape(2 * n_half, dims[0])
    membership = np.array([ENROLL] * n_half + [TEST] * n_half, dtype=np.int8)
    graph = TrialGraph(nodes=nodes, membership=membership)

    tape = Tape()
    loss = score_value(tape, model, graph, training=False)
    for p in model.params():
        p.zero_grad()
    tape.backward(loss)

    worst = 0.0
    for p in model.params():
        flat = p.value.reshape(-1)
        grad = p.grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = gat_score(model, graph)
            flat[idx] = orig - step
            f_minus = gat_score(model, graph)
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(fd), abs(grad[idx]), 1e-8)
            worst = max(worst, abs(fd - grad[idx]) / denom)
    return worst


def cmd_gradcheck(args):
    dims = _parse_int_list(args.dims)
    worst = _gradcheck_worst_rel_err(dims, args.seed)
    ok = worst < args.tolerance
    print(
        f"gradcheck dims={dims} seed={args.seed}: worst rel err {worst:.3e} "
        f"({'PASS' if ok else 'FAIL'} at {args.tolerance:g})"
    )
    return 0 if ok else 1


# -- parser ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gatsv",
        description="Graph-attention back-end scoring for speaker verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus and trial list")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--speakers", type=int, default=40)
    p.add_argument("--test-speakers", type=int, default=40)
    p.add_argument("--utts", type=int, default=10)
    p.add_argument("--segments", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--sigma-within", type=float, default=0.3)
    p.add_argument("--sigma-segment", type=float, default=0.4)
    p.add_argument("--outlier-prob", type=float, default=0.2)
    p.add_argument("--outlier-scale", type=float, default=5.0)
    p.add_argument("--n-target", type=int, default=2000)
    p.add_argument("--n-nontarget", type=int, default=2000)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a back-end scorer")
    p.add_argument("--in", dest="inp", required=True, help="training embeddings (.sse)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--backend", choices=["gat", "bvector"], default="gat")
    p.add_argument("--loss", choices=["contrastive", "hardneg"], default="contrastive")
    p.add_argument("--H", type=int, default=5, help="hard negatives per anchor")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-M", dest="batch_m", type=int, default=16)
    p.add_argument("--lr0", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--dims", default=None, help="comma-separated layer widths")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--strict-eq6", action="store_true",
                   help="literal impostors-only hard-negative denominator")
    p.add_argument("--paper-preset", action="store_true",
                   help="epochs=200 batch-M=350 lr0=0.001 dropout=0.2 wd=1e-4")
    p.add_argument("--bvector-ops", default="mul,add,sub")
    p.add_argument("--loss-log", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a trial list")
    p.add_argument("--backend", choices=["gat", "cosine", "tta", "bvector"], required=True)
    p.add_argument("--model", default=None, help="checkpoint (gat/bvector backends)")
    p.add_argument("--trials", required=True)
    p.add_argument("--in", dest="inp", required=True, help="test embeddings (.sse)")
    p.add_argument("--out", required=True, help="score file path")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="report EER for a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--dims", default="8,8,4,2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TrainingError, DimensionError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (FormatError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
