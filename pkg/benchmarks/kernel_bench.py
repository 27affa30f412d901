"""Benchmark of the per-frame kernels: compiled extension vs pure NumPy.

Runs the clustering + fusion path on synthetic detection windows and the
rule scorer on a packed rule set, timing both backends over identical
inputs. Usage:

    python3 benchmarks/kernel_bench.py [--frames 2000] [--dets 80]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from asfbench._kernels import pure

try:
    from asfbench._kernels import _fast as fast
except ImportError:
    fast = None


def make_windows(n_frames: int, dets_per_frame: int, seed: int = 3):
    rng = np.random.default_rng(seed)
    windows = []
    for _ in range(n_frames):
        x1 = rng.uniform(0, 500, dets_per_frame)
        y1 = rng.uniform(0, 500, dets_per_frame)
        w = rng.uniform(10, 150, dets_per_frame)
        h = rng.uniform(10, 150, dets_per_frame)
        boxes = np.ascontiguousarray(np.stack([x1, y1, x1 + w, y1 + h], axis=1))
        confs = np.ascontiguousarray(rng.uniform(0.05, 1.0, dets_per_frame))
        windows.append((boxes, confs))
    return windows


def bench_cluster_fuse(impl, windows, tau=0.5):
    start = time.perf_counter()
    sink = 0.0
    for boxes, confs in windows:
        labels = impl.cluster_labels(boxes, tau)
        n_clusters = int(labels.max()) + 1 if len(labels) else 0
        fused, conf, _ = impl.fuse_clusters(boxes, confs, labels, n_clusters)
        sink += float(conf.sum())
    return time.perf_counter() - start, sink


def make_rule_problem(k=12, p=50, seed=5):
    rng = np.random.default_rng(seed)

    def csr(max_len):
        ptr = [0]
        idx, req = [], []
        for _ in range(k):
            m = int(rng.integers(0, max_len + 1))
            idx.extend(rng.integers(0, p, m).tolist())
            req.extend(rng.integers(1, 4, m).astype(float).tolist())
            ptr.append(len(idx))
        return (
            np.asarray(ptr, dtype=np.int64),
            np.asarray(idx, dtype=np.int64),
            np.asarray(req, dtype=np.float64),
        )

    return csr(6), csr(3), csr(3)


def bench_rule_scores(impl, n_calls, problem, p=50, seed=8):
    (all_ptr, all_idx, all_req), (any_ptr, any_idx, any_req), (fb_ptr, fb_idx, _) = problem
    rng = np.random.default_rng(seed)
    counts = [np.ascontiguousarray(rng.integers(0, 4, p).astype(np.float64)) for _ in range(64)]
    start = time.perf_counter()
    sink = 0.0
    for i in range(n_calls):
        scores, _ = impl.rule_scores(
            counts[i % 64], 0.6,
            all_ptr, all_idx, all_req,
            any_ptr, any_idx, any_req,
            fb_ptr, fb_idx,
        )
        sink += float(scores[0])
    return time.perf_counter() - start, sink


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=2000)
    parser.add_argument("--dets", type=int, default=80)
    parser.add_argument("--score-calls", type=int, default=100_000)
    args = parser.parse_args()

    backends = [("pure", pure)]
    if fast is not None:
        backends.append(("compiled", fast))
    else:
        print("compiled extension not available; timing the pure backend only")

    windows = make_windows(args.frames, args.dets)
    problem = make_rule_problem()

    print(f"\ncluster+fuse: {args.frames} windows x {args.dets} detections")
    times = {}
    for name, impl in backends:
        elapsed, sink = bench_cluster_fuse(impl, windows)
        times[name] = elapsed
        per_frame = 1e6 * elapsed / args.frames
        print(f"  {name:9s} {elapsed:8.3f} s   {per_frame:9.1f} us/window   (checksum {sink:.3f})")
    if len(times) == 2:
        print(f"  speedup   {times['pure'] / times['compiled']:8.1f} x")

    print(f"\nrule scoring: {args.score_calls} calls, 12 steps x 50 parts")
    times = {}
    for name, impl in backends:
        elapsed, sink = bench_rule_scores(impl, args.score_calls, problem)
        times[name] = elapsed
        per_call = 1e6 * elapsed / args.score_calls
        print(f"  {name:9s} {elapsed:8.3f} s   {per_call:9.2f} us/call     (checksum {sink:.3f})")
    if len(times) == 2:
        print(f"  speedup   {times['pure'] / times['compiled']:8.1f} x")


if __name__ == "__main__":
    main()
