"""Mean SARC cost over a grid of tau0 values (the calibration is otherwise unchanged)."""

import argparse

from sarc.harness import DatasetSpec, ExperimentConfig, sweep_tau0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid", default="1,5,15,50,150,500,2000")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--out", default="out/sweep_tau0.csv")
    args = ap.parse_args()

    grid = [float(t) for t in args.grid.split(",")]
    cfg = ExperimentConfig(dataset=DatasetSpec(), repeats=args.repeats)
    for tau0, cmt in sweep_tau0(cfg, grid, path=args.out):
        print(f"tau0={tau0:<8g} mean CMT={cmt:.2f}")


if __name__ == "__main__":
    main()
