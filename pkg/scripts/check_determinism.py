"""Run a config twice into fresh directories and compare every CSV/JSON byte for byte.

    python3 scripts/check_determinism.py configs/annulus_x1.ini
"""
import argparse
import filecmp
import os
import sys
import tempfile

from nlsteklov.config import load_config
from nlsteklov.pipeline import run


def compare(d1, d2):
    bad = []
    for root, _, files in os.walk(d1):
        for f in sorted(files):
            if not f.endswith((".csv", ".json")):
                continue
            p1 = os.path.join(root, f)
            p2 = os.path.join(d2, os.path.relpath(p1, d1))
            if not os.path.exists(p2) or not filecmp.cmp(p1, p2, shallow=False):
                bad.append(os.path.relpath(p1, d1))
    return bad


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        dirs = []
        for k in range(2):
            out = os.path.join(tmp, f"run{k}")
            run(load_config(args.config).with_overrides(out=out))
            dirs.append(out)
        bad = compare(*dirs)
        n = sum(f.endswith((".csv", ".json")) for _, _, fs in os.walk(dirs[0]) for f in fs)
    print(f"{n} CSV/JSON files compared, {len(bad)} differ" + (": " + ", ".join(bad) if bad else ""))
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
