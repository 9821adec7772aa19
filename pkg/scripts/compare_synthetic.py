"""Paired SARC vs ARC-Dynamic comparison on the synthetic sigmoid problem.

    python3 scripts/compare_synthetic.py --repeats 20 --out out/compare
"""

import argparse

from sarc.harness import DatasetSpec, ExperimentConfig, compare


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0, help="first algorithm seed")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="out/compare")
    args = ap.parse_args()

    cfg = ExperimentConfig(dataset=DatasetSpec(seed=args.data_seed), repeats=args.repeats,
                           base_seed=args.seed, out_dir=args.out, workers=args.workers)
    comp = compare(cfg)
    for agg in (comp.sarc, comp.dynamic):
        print(f"{agg.variant:12s} iters={agg.n_iter_mean:7.2f} CMT={agg.cmt_mean:8.2f} "
              f"accuracy={agg.accuracy_mean:.4f} converged={agg.converged_count}/{len(agg.runs)}")
    print(f"Save-M {comp.save_m:.1f}%  (mean of ratios {comp.save_m_mean_of_ratios:.1f}%)")
    print(f"SARC <= ARC-Dynamic in {comp.sarc_wins}/{len(comp.sarc.runs)} paired seeds")
    print(f"results in {args.out}")


if __name__ == "__main__":
    main()
