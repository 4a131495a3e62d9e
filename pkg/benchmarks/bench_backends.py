"""Compare the compiled split-scan kernels against the pure-NumPy fallback.

Fits the same boosted ensemble on a synthetic scene with both backends,
checks the results are bitwise identical, and reports wall times. Run as

    python3 benchmarks/bench_backends.py [--rows N] [--n-estimators K] ...
"""

import argparse
import statistics
import time

import numpy as np

from stgap import backend
from stgap.features import assemble_features
from stgap.gbt import GbtParams, fit, predict
from stgap.models import model_config
from stgap.synth import SceneSpec, generate_scene


def timed(fn, repeats):
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best.append(time.perf_counter() - t0)
    return out, min(best), statistics.median(best)


def trees_equal(a, b):
    if len(a.trees) != len(b.trees) or a.base_score != b.base_score:
        return False
    fields = ("feat", "thresh", "default_left", "left", "right", "value", "gain")
    return all(
        np.array_equal(getattr(ta, f), getattr(tb, f))
        for ta, tb in zip(a.trees, b.trees)
        for f in fields
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=48)
    ap.add_argument("--cols", type=int, default=48)
    ap.add_argument("--frames", type=int, default=40)
    ap.add_argument("--n-estimators", type=int, default=50)
    ap.add_argument("--max-depth", type=int, default=6)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--threads", type=int, default=4,
                    help="thread count for the prediction timing")
    args = ap.parse_args()

    if not backend.HAVE_COMPILED:
        raise SystemExit("compiled backend not built; nothing to compare")

    scene = SceneSpec(rows=args.rows, cols=args.cols, n_days=args.frames, seed=9)
    cube, aux = generate_scene(scene)
    spec = model_config("stxgb").spec
    matrix = assemble_features(cube, aux, spec, which="valid")
    params = GbtParams(n_estimators=args.n_estimators, max_depth=args.max_depth)
    print(f"workload: {matrix.values.shape[0]} rows x "
          f"{matrix.values.shape[1]} features, "
          f"{args.n_estimators} trees, depth {args.max_depth}")

    results = {}
    for name in ("pure", "compiled"):
        model, fit_best, fit_med = timed(
            lambda: fit(matrix, params, backend=name), args.repeats)
        pred, pred_best, pred_med = timed(
            lambda: predict(model, (matrix.values, matrix.missing),
                            backend=name, threads=args.threads),
            args.repeats)
        results[name] = (model, pred, fit_best, fit_med, pred_best, pred_med)

    pm, pp = results["pure"][:2]
    cm, cp = results["compiled"][:2]
    assert trees_equal(pm, cm), "backends disagree on the fitted trees"
    assert np.array_equal(pp, cp), "backends disagree on predictions"
    print("check: fitted trees and predictions bitwise identical\n")

    header = f"{'backend':<10} {'fit best':>10} {'fit median':>11} " \
             f"{'predict best':>13} {'predict median':>15}"
    print(header)
    print("-" * len(header))
    for name in ("pure", "compiled"):
        _, _, fb, fm, pb, pmed = results[name]
        print(f"{name:<10} {fb:9.3f}s {fm:10.3f}s {pb:12.4f}s {pmed:14.4f}s")
    speed_fit = results["pure"][2] / results["compiled"][2]
    speed_pred = results["pure"][4] / results["compiled"][4]
    print(f"\nspeedup (best-over-best): fit {speed_fit:.1f}x, "
          f"predict {speed_pred:.1f}x")


if __name__ == "__main__":
    main()
