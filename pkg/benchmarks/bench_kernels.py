"""Time the compiled and numpy kernel backends on prototype-sized inputs.

    python3 benchmarks/bench_kernels.py --dim 64 --classes 30 --repeat 2000
"""
import argparse
import timeit

import numpy as np

from driftbench.kernels import backends


def cases(dim, classes, batch, rng):
    e = rng.standard_normal(dim)
    P = rng.standard_normal((classes, dim))
    E = rng.standard_normal((batch, dim))
    g = rng.standard_normal(classes)
    return {
        "cosine_scores": lambda k: k.cosine_scores(e, P),
        "cosine_argmax": lambda k: k.cosine_argmax(E, P),
        "linear_scores": lambda k: k.linear_scores(e, P),
        "linear_argmax": lambda k: k.linear_argmax(E, P),
        "mean_update": lambda k: k.mean_update(P[0], e, 3),
        "gated_update": lambda k: k.gated_update(P[1], e, 0.25),
        "sgd_softmax_step": lambda k: k.sgd_softmax_step(P, e, g, 1e-9),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--classes", type=int, default=30)
    ap.add_argument("--batch", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    mods = backends()
    if "cython" not in mods:
        print("compiled extension not built; timing the python backend only")
    names = sorted(mods)
    print(f"{'kernel':<18}" + "".join(f"{n + ' us':>14}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for kernel, fn in cases(args.dim, args.classes, args.batch, np.random.default_rng(args.seed)).items():
        times = {}
        for n in names:
            mod = mods[n]
            times[n] = min(timeit.repeat(lambda: fn(mod), number=args.repeat, repeat=3)) / args.repeat * 1e6
        row = f"{kernel:<18}" + "".join(f"{times[n]:>14.2f}" for n in names)
        if len(names) > 1:
            row += f"   {times['python'] / times['cython']:>6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
