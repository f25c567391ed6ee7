"""d = 3 saturation ratio m(32) / m(8) of the corrector increments as a function of nu.

    python scripts/saturation_sweep.py --nu 0.25 0.5 1.0 --samples 32
"""
import argparse

from corrector_growth import moments


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nu", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    ap.add_argument("--lam", type=float, default=0.25)
    ap.add_argument("--samples", type=int, default=32)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    print("nu,m8,m16,m32,ratio")
    for nu in args.nu:
        est = moments(3, 64, args.samples, [8, 16, 32], nu, args.lam, args.seed)
        m = [est[k].value for k in (8, 16, 32)]
        print(f"{nu},{m[0]:.6g},{m[1]:.6g},{m[2]:.6g},{m[2] / m[0]:.4f}")


if __name__ == "__main__":
    main()
