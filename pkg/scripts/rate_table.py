"""Oscillation-rate table for d = 1 and d = 2 through the ``rates`` subcommand.

Each run lands in OUT/rates/<hash>/ with rate_fit.json and exported plot data.

    python scripts/rate_table.py --out out
"""
import argparse
import contextlib
import io
import json
from pathlib import Path

from shl.cli import main as shl_main

RUNS = [
    ["--d", "1", "--eps", "1/16..1/256", "--samples", "64", "--period", "8"],
    ["--d", "2", "--eps", "1/8..1/64", "--samples", "32", "--period", "16"],
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out")
    args = ap.parse_args(argv)
    out = Path(args.out)
    for extra in RUNS:
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = shl_main(["rates", "--experiment", "oscillation", *extra, "--out", str(out)])
        if code:
            raise SystemExit(code)
        run = Path(buf.getvalue().strip().splitlines()[-1].split()[-1])
        shl_main(["export", str(run), "--format", "plotdata"])
        fit = json.loads((run / "rate_fit.json").read_text())
        print(f"d={fit['d']}: exponent {fit['exponent']:.3f} "
              f"[{fit['exponent_ci'][0]:.3f}, {fit['exponent_ci'][1]:.3f}], "
              f"log-corrected {fit['log_exponent']:.3f}, LR {fit['likelihood_ratio']:.2f}")


if __name__ == "__main__":
    main()
