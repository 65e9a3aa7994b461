"""Compare the Cython and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import sys

from trajfields import kernels
from trajfields.bench import kernel_benchmark


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rows = kernel_benchmark(args.repeats, args.seed)
    by_kernel = {}
    for r in rows:
        by_kernel.setdefault(r["kernel"], {})[r["backend"]] = r["mean_s"]
    print(f"backends: {', '.join(kernels.available_backends())}")
    print(f"{'kernel':<18}{'cython ms':>13}{'python ms':>12}{'speedup':>10}")
    for name, t in by_kernel.items():
        c, p = t.get("cython"), t.get("python")
        c_s = f"{c * 1e3:13.3f}" if c is not None else f"{'n/a':>13}"
        speed = f"{p / c:9.1f}x" if c else f"{'-':>10}"
        print(f"{name:<18}{c_s}{p * 1e3:12.3f}{speed}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
