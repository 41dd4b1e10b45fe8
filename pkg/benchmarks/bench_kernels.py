"""Time the compiled kernels against the pure-Python fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel is run on identical inputs with both backends; the table
reports the best wall time of ``--repeat`` runs and the speed-up.  The
results are also checked for agreement so a fast but wrong build is
reported as such.
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from tfelab._backend import FAM_CODES, compiled_available, get_kernels


def _cases(rng):
    u = 1.0 + 0.5 * rng.standard_normal(2001)
    simple = FAM_CODES["simple"]
    y0 = np.array([1e-2, 0.0, 0.0])
    return {
        "apply_operator (2001 nodes)": (
            lambda k: k.apply_operator(u, 0.01, simple, 1.3, 0.1, False, False)),
        "assemble_system (2001 nodes)": (
            lambda k: k.assemble_system(u, u.copy(), 0.01, 1e-4, simple, 1.3, 0.1, False, False)),
        "eqlc_run (n=1, s in [0, 20])": (
            lambda k: k.eqlc_run(y0, 1.0, 1e-10, 20.0, 1e-10, 1e-12, 1e-3, 10 ** 6, 1e6, 0, 0.0)),
    }


def _first_array(result):
    if isinstance(result, tuple):
        result = result[0]
    return np.asarray(result, dtype=float)


def run(repeat: int = 5) -> list[dict]:
    if not compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    comp, py = get_kernels("compiled"), get_kernels("python")
    rows = []
    for name, fn in _cases(np.random.default_rng(0)).items():
        agree = np.allclose(_first_array(fn(comp)), _first_array(fn(py)), rtol=1e-9, atol=1e-12)
        t_c = min(timeit.repeat(lambda: fn(comp), number=1, repeat=repeat))
        t_p = min(timeit.repeat(lambda: fn(py), number=1, repeat=repeat))
        rows.append({"kernel": name, "compiled_s": t_c, "python_s": t_p,
                     "speedup": t_p / t_c, "agree": bool(agree)})
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the rows to this file")
    args = ap.parse_args(argv)
    rows = run(args.repeat)
    print(f"{'kernel':32s} {'compiled [ms]':>14s} {'python [ms]':>12s} {'speed-up':>9s}  agree")
    for r in rows:
        print(f"{r['kernel']:32s} {1e3 * r['compiled_s']:14.3f} {1e3 * r['python_s']:12.3f} "
              f"{r['speedup']:9.1f}  {r['agree']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
