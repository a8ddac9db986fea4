"""Times the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is called on the
same inputs under both backends; outputs are checked for agreement before
timing is reported.
"""

import argparse
import timeit

import numpy as np

from streamlid.kernels import get_backend


def cases(rng):
    h = rng.normal(size=(2000, 144))
    w = rng.random(2000) + 1e-4
    zeros = np.zeros(144)
    x = rng.normal(size=(64, 144)).astype(np.float32)
    kernel = rng.normal(size=(32, 144)).astype(np.float32)
    bias = rng.normal(size=144).astype(np.float32)
    hist = rng.normal(size=(31, 144)).astype(np.float32)
    top = rng.integers(0, 3, size=20000)
    return {
        "recurrent_pool T=2000 D=144": ("recurrent_pool", (h, w, 0.0, zeros, zeros, True)),
        "causal_depthwise_conv T=64 K=32 D=144": ("causal_depthwise_conv", (x, kernel, bias, hist)),
        "continuity_run T=20000": ("continuity_run", (top,)),
    }


def first_array(out):
    return np.asarray(out[0] if isinstance(out, tuple) else out, dtype=np.float64)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=3)
    args = ap.parse_args(argv)
    backends = {"python": get_backend("python")}
    try:
        backends["cython"] = get_backend("cython")
    except ImportError:
        print("compiled kernels not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup")
    for label, (fn, fargs) in cases(rng).items():
        times, outs = {}, {}
        for name, mod in backends.items():
            f = getattr(mod, fn)
            outs[name] = first_array(f(*fargs))
            best = min(timeit.repeat(lambda: f(*fargs), repeat=args.repeat, number=args.number))
            times[name] = best / args.number
        if len(outs) == 2:
            ref = outs["python"]
            diff = np.max(np.abs(outs["cython"] - ref)) / max(np.max(np.abs(ref)), 1e-30)
            assert diff < 1e-5, f"{label}: backends disagree (rel {diff:.2e})"
            speed = f"{times['python'] / times['cython']:8.1f}x"
        else:
            speed = "       -"
        print(f"{label:40s} " + " ".join(f"{times[b] * 1e3:10.3f}ms" for b in backends) + f"  {speed}")


if __name__ == "__main__":
    main()
