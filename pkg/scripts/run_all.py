"""Run every built-in scenario (or the named ones) and print gate verdicts.

Usage: python3 scripts/run_all.py [--out DIR] [--jobs N] [--paths N] [name ...]
"""
import argparse
import sys
import time

from occlab import experiments as ex


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="scenario names (default: all built-ins)")
    ap.add_argument("--out", default=None)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--paths", type=int, default=None, help="cap on paths per scenario")
    args = ap.parse_args(argv)
    names = args.names or sorted(ex.BUILTIN)
    failed = []
    for name in names:
        sc = ex.builtin(name)
        if args.paths:
            sc.estimator["n_paths"] = min(sc.n_paths, args.paths)
        t0 = time.perf_counter()
        rep = ex.run_scenario(sc, args.out, jobs=args.jobs)
        print(f"{name:24s} {'PASS' if rep.passed else 'FAIL'} {time.perf_counter() - t0:7.1f} s")
        for g in rep.gates:
            print(f"    {'PASS' if g['passed'] else 'FAIL'} {g['name']}: {g['value']}")
        if not rep.passed:
            failed.append(name)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
