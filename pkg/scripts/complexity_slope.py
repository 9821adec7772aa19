"""Log-log slope of first-hitting iteration against 1/eps on the coupled-cosine function.

A slope at or below 1.5 is consistent with the eps^(-3/2) worst-case bound.
"""

import argparse

from sarc.arc import ArcConfig
from sarc.harness import complexity_slope_experiment, write_json
from sarc.problem import CoupledCosine


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=20)
    ap.add_argument("--rho", type=float, default=0.1)
    ap.add_argument("--eps", default="1e-1,3e-2,1e-2,3e-3,1e-3")
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional JSON output path")
    args = ap.parse_args()

    eps = [float(e) for e in args.eps.split(",")]
    cfg = ArcConfig(epsilon=min(eps), max_iter=2000)
    res = complexity_slope_experiment(CoupledCosine(args.dim, args.rho), cfg, eps,
                                      repeats=args.repeats, seed=args.seed)
    for e, t in zip(res.eps, res.mean_hitting):
        print(f"eps={e:8.1e}  mean first-hit iteration={t:8.2f}")
    print(f"slope = {res.slope:.3f}")
    if args.out:
        write_json(res.to_dict(), args.out)


if __name__ == "__main__":
    main()
