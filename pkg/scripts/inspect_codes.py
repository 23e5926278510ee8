#!/usr/bin/env python3
"""List the rate ladder and sanity-check one code per requested rung.

Lifting the full ladder at n = 460800 takes a while; default is a quick
look at a few rungs at small block length.
"""
import argparse

import numpy as np

from satqkd.ldpc import CodeLibrary, decode, syndrome


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=18000)
    ap.add_argument("--rungs", type=int, nargs="*", default=None,
                    help="ladder indices to lift (default: a spread of 5)")
    args = ap.parse_args()

    lib = CodeLibrary()
    idxs = args.rungs
    if idxs is None:
        idxs = sorted({0, len(lib) // 4, len(lib) // 2, 3 * len(lib) // 4,
                       len(lib) - 1})

    print(f"{'idx':>4} {'rate':>7} {'checks':>6}  lift@n={args.n}")
    for idx in idxs:
        code = lib.code_for_length(idx, args.n)
        if code is None:
            print(f"{idx:4d} {lib.rates[idx]:7.4f} {15 + idx:6d}  no lift")
            continue
        e = np.zeros(code.n, dtype=np.uint8)
        e[:: code.n // 7] = 1
        llr = np.full(code.n, np.log(0.98 / 0.02))
        res = decode(code, syndrome(code, e), llr, max_iters=60)
        tag = "ok" if res.success and np.array_equal(res.error_pattern, e) else "MISS"
        print(f"{idx:4d} {code.rate:7.4f} {code.m // code.z:6d}  "
              f"n={code.n} iters={res.iterations} {tag}")


if __name__ == "__main__":
    main()
