"""Command-line driver.

    python3 -m sarc gen --out data/syn1
    python3 -m sarc run --train data/syn1-train.csv --test data/syn1-test.csv --out out/run
    python3 -m sarc compare --repeats 20 --out out/compare
    python3 -m sarc slope --eps 1e-1,3e-2,1e-2,3e-3 --out out/slope.json
    python3 -m sarc sweep-tau0 --tau0-grid 1,10,100 --out out/sweep.csv

Any flag may also come from ``--config FILE``: one ``key = value`` per line,
keys are flag names without the leading dashes (``sigma0``, ``train``,
``N-T`` or ``N_T``), ``#`` starts a comment. Flags on the command line win.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .arc import ArcConfig, ArcError
from .harness import (
    DatasetSpec,
    ExperimentConfig,
    compare,
    complexity_slope_experiment,
    export_traces,
    run_single,
    sweep_tau0,
    write_json,
)
from .problem import CoupledCosine, DatasetFormatError, generate_synthetic, save_dataset
from .subsolver import SubsolverError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


ARC_FLAGS = {
    "beta": float, "alpha": float, "eta": float, "gamma": float, "sigma0": float,
    "sigma_min": float, "epsilon": float, "kappa_tau": float, "p1": float, "p2": float,
    "max_iter": int, "termination_rule": str, "beta_k": float, "max_inner": int,
    "hessian_mode": str,
}


def _add_dataset(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--train", dest="train_path", help="training CSV (default: generate)")
    g.add_argument("--test", dest="test_path", help="test CSV")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--N", type=int, default=9000)
    g.add_argument("--N-T", dest="N_T", type=int, default=1000)
    g.add_argument("--conditioning", type=float, default=1e4)
    g.add_argument("--data-seed", dest="data_seed", type=int, default=0)


def _add_arc(p):
    g = p.add_argument_group("algorithm")
    d = ArcConfig()
    for name, typ in ARC_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=getattr(d, name))


def _add_experiment(p, repeats=20):
    p.add_argument("--variant", choices=("SARC", "ARC-Dynamic"), default="SARC")
    p.add_argument("--repeats", type=int, default=repeats)
    p.add_argument("--seed", dest="base_seed", type=int, default=0)
    p.add_argument("--grad-fraction", dest="grad_fraction", type=float, default=0.4)
    p.add_argument("--hess-fraction", dest="hess_fraction", type=float, default=0.1)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sarc", description="Stochastic ARC experiments on sigmoid least squares.")
    parser.add_argument("--config", help="key = value file supplying any flag")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.commands = sub.choices

    p = sub.add_parser("gen", help="write a synthetic dataset to CSV")
    _add_dataset(p)
    p.add_argument("--out", required=True, help="path prefix; writes PREFIX-train.csv and PREFIX-test.csv")

    p = sub.add_parser("run", help="single run with trace export")
    _add_dataset(p)
    _add_arc(p)
    _add_experiment(p, repeats=1)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("compare", help="SARC vs ARC-Dynamic over seeded repeats")
    _add_dataset(p)
    _add_arc(p)
    _add_experiment(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("slope", help="hitting-time slope on the coupled-cosine function")
    _add_arc(p)
    p.add_argument("--eps", type=_floats, default=[1e-1, 3e-2, 1e-2, 3e-3])
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", dest="base_seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--x0-scale", dest="x0_scale", type=float, default=3.0)
    p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("sweep-tau0", help="mean SARC CMT over a tau0 grid")
    _add_dataset(p)
    _add_arc(p)
    _add_experiment(p, repeats=5)
    p.add_argument("--tau0-grid", dest="tau0_grid", type=_floats, required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def read_config_file(path) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _strip_config(argv):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--config":
            skip = True
        elif not a.startswith("--config="):
            out.append(a)
    return out


def parse_args(argv) -> argparse.Namespace:
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    command = next((a for a in argv if a in parser.commands), None)
    if known.config is None or command is None:
        return parser.parse_args(argv)
    # --config may sit before or after the subcommand
    argv = _strip_config(argv)
    sub = parser.commands[command]
    actions = {}
    for a in sub._actions:
        if a.dest == "help":
            continue
        actions[a.dest] = a
        for opt in a.option_strings:
            actions[opt.lstrip("-").replace("-", "_")] = a
    for key, text in read_config_file(known.config).items():
        if key not in actions:
            raise UsageError(f"{known.config}: unknown key {key!r} for command {command!r}")
        act = actions[key]
        if act.choices is not None and text not in act.choices:
            raise UsageError(f"{known.config}: {key} must be one of {list(act.choices)}")
        # string defaults go through the action's type, so file values are
        # parsed like flags; flags given on the command line still win
        act.required = False
        act.default = text
    return parser.parse_args(argv)


def _arc_config(ns) -> ArcConfig:
    return ArcConfig(**{k: getattr(ns, k) for k in ARC_FLAGS})


def _experiment(ns) -> ExperimentConfig:
    data = DatasetSpec(train_path=ns.train_path, test_path=ns.test_path, n=ns.n, N=ns.N, N_T=ns.N_T,
                       conditioning=ns.conditioning, seed=ns.data_seed)
    return ExperimentConfig(dataset=data, arc=_arc_config(ns), variant=ns.variant, repeats=ns.repeats,
                            base_seed=ns.base_seed, out_dir=getattr(ns, "out", None),
                            grad_fraction=ns.grad_fraction, hess_fraction=ns.hess_fraction,
                            workers=ns.workers)


def cmd_gen(ns):
    prob = generate_synthetic(ns.n, ns.N, ns.N_T, ns.conditioning, seed=ns.data_seed)
    out = Path(ns.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(prob.train, f"{out}-train.csv")
    if prob.test is not None:
        save_dataset(prob.test, f"{out}-test.csv")
    print(f"wrote {out}-train.csv" + (f" and {out}-test.csv" if prob.test is not None else ""))


def cmd_run(ns):
    cfg = _experiment(ns)
    rec = run_single(cfg, ns.base_seed)
    export_traces(rec.report, ns.out, prefix="run")
    write_json(rec.to_dict(), Path(ns.out) / "summary.json")
    print(f"{rec.variant} seed={rec.seed}: n_iter={rec.n_iter} CMT={rec.cmt:.4f} "
          f"accuracy={rec.accuracy} converged={rec.converged}")


def cmd_compare(ns):
    comp = compare(_experiment(ns))
    for agg in (comp.sarc, comp.dynamic):
        print(f"{agg.variant:12s} n_iter={agg.n_iter_mean:.2f} CMT={agg.cmt_mean:.2f} "
              f"accuracy={agg.accuracy_mean:.4f} cap_hits={agg.cap_hits}")
    print(f"Save-M={comp.save_m:.2f}% (mean of ratios {comp.save_m_mean_of_ratios:.2f}%), "
          f"SARC <= ARC-Dynamic in {comp.sarc_wins}/{len(comp.sarc.runs)} seeds")


def cmd_slope(ns):
    res = complexity_slope_experiment(CoupledCosine(ns.dim, ns.rho), _arc_config(ns), ns.eps,
                                      repeats=ns.repeats, seed=ns.base_seed, x0_scale=ns.x0_scale)
    write_json(res.to_dict(), ns.out)
    print(f"slope={res.slope:.4f} mean hitting times={res.mean_hitting}")


def cmd_sweep(ns):
    rows = sweep_tau0(_experiment(ns).replace(out_dir=None), ns.tau0_grid, path=ns.out)
    for t, c in rows:
        print(f"tau0={t:g} CMT={c:.4f}")


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "compare": cmd_compare, "slope": cmd_slope,
            "sweep-tau0": cmd_sweep}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parse_args(argv)
        handler = COMMANDS[ns.command]
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        handler(ns)
    except (ValueError, UsageError) as e:
        if isinstance(e, DatasetFormatError):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ArcError, SubsolverError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
