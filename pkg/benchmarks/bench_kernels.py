#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the individual hot kernels at trial-graph sizes, plus a full
forward/backward scoring pass and one training step, under each
available backend.  Usage:

    python benchmarks/bench_kernels.py [--repeat 2000]
"""

import argparse
import time

import numpy as np

from gatsv.backend import available_backends
from gatsv.gat import init_model, score_value
from gatsv.graph import ENROLL, TEST, TrialGraph, UtteranceSSEs
from gatsv.numeric import Adam, Tape
from gatsv.train import GatScorer, TrainBatch, contrastive_loss, score_matrix_value


def time_it(fn, repeat):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def kernel_benchmarks(kernels, repeat, rng):
    n, d = 20, 32
    h = rng.normal(size=(n, d))
    w = rng.normal(size=(d, 1))
    wphi = rng.normal(size=(d, d // 2))
    logits = rng.normal(size=(n, n))
    alpha = np.abs(logits) / np.abs(logits).sum(axis=1, keepdims=True)
    cases = {
        "matmul 20x32 @ 32x16": lambda: kernels.matmul(h, wphi),
        "matmul 20x20 @ 20x32": lambda: kernels.matmul(alpha, h),
        "pair_logits 20 nodes": lambda: kernels.pair_logits(h, w),
        "softmax_rows 20x20": lambda: kernels.softmax_rows(logits),
        "mul 20x32": lambda: kernels.mul(h, h),
        "logsumexp_rows 20x20": lambda: kernels.logsumexp_rows(logits, None),
    }
    return {name: time_it(fn, repeat) for name, fn in cases.items()}


def graph_benchmarks(kernels, repeat, rng):
    model = init_model([32, 32, 16, 8], seed=0, dropout_rate=0.0)
    nodes = rng.normal(size=(20, 32))
    membership = np.array([ENROLL] * 10 + [TEST] * 10, dtype=np.int8)
    graph = TrialGraph(nodes=nodes, membership=membership)

    def forward():
        tape = Tape(kernels=kernels, record=False)
        score_value(tape, model, graph, training=False)

    def forward_backward():
        tape = Tape(kernels=kernels)
        loss = score_value(tape, model, graph, training=False)
        tape.backward(loss)

    M = 8
    batch = TrainBatch(
        [f"s{i}" for i in range(M)],
        [UtteranceSSEs(f"s{i}-a", rng.normal(size=(10, 32))) for i in range(M)],
        [UtteranceSSEs(f"s{i}-b", rng.normal(size=(10, 32))) for i in range(M)],
    )
    scorer = GatScorer(model)
    opt = Adam(model.params(), weight_decay=1e-4)

    def train_step():
        tape = Tape(kernels=kernels)
        scores = score_matrix_value(tape, scorer, batch, mask_seed=1, training=False)
        loss = contrastive_loss(tape, scores)
        opt.zero_grad()
        tape.backward(loss)

    return {
        "score forward (n=20)": time_it(forward, max(repeat // 4, 50)),
        "score forward+backward": time_it(forward_backward, max(repeat // 10, 25)),
        f"train step (M={M}, no opt)": time_it(train_step, max(repeat // 200, 5)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()

    backends = available_backends()
    rng = np.random.default_rng(0)
    results = {}
    for name, kernels in sorted(backends.items()):
        rows = kernel_benchmarks(kernels, args.repeat, rng)
        rows.update(graph_benchmarks(kernels, args.repeat, rng))
        results[name] = rows

    names = sorted(backends)
    width = max(len(k) for k in next(iter(results.values())))
    header = f"{'benchmark':<{width}}" + "".join(f"  {n:>12}" for n in names)
    if len(names) == 2:
        header += f"  {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for bench in next(iter(results.values())):
        line = f"{bench:<{width}}"
        for n in names:
            line += f"  {results[n][bench] * 1e6:>10.2f}us"
        if len(names) == 2:
            ratio = results["python"][bench] / results["c"][bench]
            line += f"  {ratio:>8.2f}x"
        print(line)
    if len(names) < 2:
        print("\n(compiled kernels not built; only the fallback was timed)")


if __name__ == "__main__":
    main()
