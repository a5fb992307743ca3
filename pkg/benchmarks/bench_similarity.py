"""Benchmark: compiled n-gram kernel vs the pure-Python fallback.

Times the clipped-count kernel on realistic caption/task workloads and the
end-to-end scorer through each backend.

Run:  python benchmarks/bench_similarity.py [--instances 20000]
"""

import argparse
import random
import time

from capsift import _kernels
from capsift._kernels import _pure
from capsift.similarity import ScoreConfig, SearchTaskSet, score

WORDS = ["rock", "sand", "dune", "crater", "ridge", "layered", "dark", "fine", "bed", "dust"]


def build_instances(count: int, seed: int = 0):
    rng = random.Random(seed)
    instances = []
    for _ in range(count):
        cand = [rng.randrange(10) for _ in range(rng.randint(4, 20))]
        refs = [
            [rng.randrange(10) for _ in range(rng.randint(4, 12))]
            for _ in range(rng.randint(1, 3))
        ]
        instances.append((cand, refs))
    return instances


def time_kernel(fn, instances, max_order=4):
    started = time.perf_counter()
    checksum = 0
    for cand, refs in instances:
        for clipped, total in fn(cand, refs, max_order):
            checksum += clipped + total
    return time.perf_counter() - started, checksum


def time_scorer(instances_text, config):
    started = time.perf_counter()
    acc = 0.0
    for cand, tasks in instances_text:
        acc += score(cand, tasks, config).value
    return time.perf_counter() - started, acc


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--instances", type=int, default=20000)
    args = parser.parse_args()

    backends = [("pure", _pure.clipped_ngram_stats)]
    try:
        from capsift._kernels import _ngram_cy

        backends.append(("compiled", _ngram_cy.clipped_ngram_stats))
    except ImportError:
        print("compiled kernel not built; benchmarking the pure backend only")

    instances = build_instances(args.instances)
    print(f"kernel benchmark: {args.instances} caption/task-set instances, orders 1..4")
    results = {}
    for name, fn in backends:
        elapsed, checksum = time_kernel(fn, instances)
        results[name] = elapsed
        rate = args.instances / elapsed
        print(f"  {name:9s} {elapsed:8.3f}s   {rate:10.0f} instances/s   checksum={checksum}")
    if len(results) == 2:
        print(f"  speedup: {results['pure'] / results['compiled']:.2f}x")

    rng = random.Random(1)
    text_instances = []
    for _ in range(min(args.instances, 5000)):
        cand = [rng.choice(WORDS) for _ in range(rng.randint(4, 20))]
        tasks = SearchTaskSet.from_texts(
            [" ".join(rng.choice(WORDS) for _ in range(rng.randint(4, 12)))
             for _ in range(rng.randint(1, 3))]
        )
        text_instances.append((cand, tasks))
    elapsed, acc = time_scorer(text_instances, ScoreConfig())
    print(
        f"end-to-end score() via active backend ({_kernels.BACKEND}): "
        f"{len(text_instances)} captions in {elapsed:.3f}s "
        f"({len(text_instances) / elapsed:.0f}/s)"
    )


if __name__ == "__main__":
    main()
