"""Experiment driver: calibrated SARC / ARC-Dynamic runs on sigmoid least
squares, seeded repeats, aggregation, trace export and the hitting-time
slope experiment.

SARC uses subsampled gradients (kappa > 0); ARC-Dynamic is the same outer
method with kappa = 0, i.e. exact gradients and only the Hessian subsampled.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arc import ArcConfig, Report, run
from .oracles import bernstein_sample_size, draw_sample, invert_bernstein
from .problem import SigmoidLSQ, generate_synthetic, load_dataset

VARIANTS = ("SARC", "ARC-Dynamic")

# Defaults of the numerical study: x0 = 0, 40% of the data for the first
# gradient, 10% for the first Hessian.
GRAD_FRACTION = 0.4
HESS_FRACTION = 0.1


@dataclass(frozen=True)
class DatasetSpec:
    """Either CSV paths or generator parameters."""

    train_path: str | None = None
    test_path: str | None = None
    n: int = 100
    N: int = 9000
    N_T: int = 1000
    conditioning: float = 1e4
    seed: int = 0

    def build(self) -> SigmoidLSQ:
        if self.train_path is None:
            return generate_synthetic(self.n, self.N, self.N_T, self.conditioning, seed=self.seed)
        try:
            train = load_dataset(self.train_path)
            test = load_dataset(self.test_path) if self.test_path else None
        except OSError as e:
            raise OSError(f"cannot load dataset: {e}") from e
        return SigmoidLSQ(train, test)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = DatasetSpec()
    arc: ArcConfig = ArcConfig()
    variant: str = "SARC"
    repeats: int = 20
    base_seed: int = 0
    seeds: tuple[int, ...] | None = None
    out_dir: str | None = None
    grad_fraction: float = GRAD_FRACTION
    hess_fraction: float = HESS_FRACTION
    tau0: float | None = None  # fixed tau0 instead of the 40% calibration (tau0 sweeps)
    workers: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")
        if self.seeds is not None and len(self.seeds) != self.repeats:
            raise ValueError(f"{len(self.seeds)} seeds given for {self.repeats} repeats")
        for name in ("grad_fraction", "hess_fraction"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.tau0 is not None and not self.tau0 > 0:
            raise ValueError(f"tau0 must be positive, got {self.tau0}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def seed_list(self) -> tuple[int, ...]:
        if self.seeds is not None:
            return tuple(self.seeds)
        return tuple(range(self.base_seed, self.base_seed + self.repeats))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Calibration:
    tau0: float
    kappa: float
    c: float
    grad_norm0: float
    grad_sample_size0: int


def calibrate_tau0_and_kappa(x0, cfg: ArcConfig, oracle, rng, grad_fraction=GRAD_FRACTION,
                             hess_fraction=HESS_FRACTION, tau0=None) -> Calibration:
    """Pick tau0 so the first gradient sample holds ``grad_fraction`` of the
    data, kappa so that sample passes the Step-1 test at once, and c so the
    first Hessian sample holds ``hess_fraction`` of the data.

    ``rng`` is consumed exactly as the first Step-1 build of a run seeded the
    same way, so the run redraws the calibration sample.
    """
    N, n = oracle.N, oracle.n
    m1 = int(round(grad_fraction * N))
    m2 = max(1, int(round(hess_fraction * N)))
    if m1 > N or m2 > N:
        raise ValueError("calibration target size exceeds N")
    if m1 < 1:
        raise ValueError(f"grad_fraction={grad_fraction} gives an empty gradient sample")
    k1 = oracle.kappa_phi(x0, 1)
    k2 = oracle.kappa_phi(x0, 2)
    c = invert_bernstein(k2, m2, cfg.p2, n, 2, N)
    if tau0 is None:
        tau0 = invert_bernstein(k1, m1, cfg.p1, n, 1, N)
    else:
        m1 = bernstein_sample_size(k1, tau0, cfg.p1, n, 1, N)
    if m1 >= N:
        g = oracle.gradient(x0)
        m1 = N
    else:
        g = oracle.gradient(x0, draw_sample(N, m1, rng, j=1))
    gn = float(np.linalg.norm(g))
    if gn == 0:
        raise ValueError("zero gradient estimate at x0; cannot calibrate kappa")
    kappa = 4.0 * tau0 * (cfg.sigma0 / gn) ** 2
    # make the k = 0 test hold in floating point, not just in exact arithmetic
    coef = (1.0 - cfg.beta) ** 2 * (gn / cfg.sigma0) ** 2
    while kappa * coef < tau0:
        kappa = math.nextafter(kappa, math.inf)
    return Calibration(tau0=float(tau0), kappa=kappa, c=float(c), grad_norm0=gn, grad_sample_size0=m1)


def configure_run(cfg: ExperimentConfig, oracle, seed) -> tuple[ArcConfig, Calibration]:
    x0 = np.zeros(oracle.n)
    cal = calibrate_tau0_and_kappa(
        x0, cfg.arc, oracle, np.random.default_rng(seed), cfg.grad_fraction, cfg.hess_fraction, cfg.tau0
    )
    if cfg.variant == "ARC-Dynamic":
        return cfg.arc.replace(kappa=0.0, c=cal.c), cal
    return cfg.arc.replace(kappa=cal.kappa, tau0=cal.tau0, c=cal.c), cal


@dataclass(frozen=True)
class RunRecord:
    seed: int
    variant: str
    n_iter: int
    cmt: float
    accuracy: float | None
    train_loss: float
    test_loss: float | None
    grad_norm: float | None
    true_grad_norm: float | None
    converged: bool
    cap_hit: bool
    tau0: float
    kappa: float
    c: float
    report: Report | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(dataclasses.replace(self, report=None))
        d.pop("report")
        return d


def run_single(cfg: ExperimentConfig, seed: int, oracle=None) -> RunRecord:
    oracle = cfg.dataset.build() if oracle is None else oracle
    arc_cfg, cal = configure_run(cfg, oracle, seed)
    rep = run(oracle, arc_cfg, seed=seed, diagnostics=True)
    return RunRecord(
        seed=seed,
        variant=cfg.variant,
        n_iter=rep.iterations,
        cmt=rep.cmt,
        accuracy=oracle.test_accuracy(rep.x),
        train_loss=rep.fx,
        test_loss=oracle.test_loss(rep.x),
        grad_norm=rep.grad_norm,
        true_grad_norm=rep.true_grad_norm,
        converged=rep.converged,
        cap_hit=rep.reason == "max_iter",
        tau0=arc_cfg.tau0,
        kappa=arc_cfg.kappa,
        c=arc_cfg.c,
        report=rep,
    )


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


@dataclass(frozen=True)
class AggregateReport:
    variant: str
    n_iter_mean: float
    cmt_mean: float
    accuracy_mean: float | None
    converged_count: int
    cap_hits: int
    runs: tuple[RunRecord, ...]

    @classmethod
    def from_runs(cls, variant, runs) -> "AggregateReport":
        runs = tuple(runs)
        return cls(
            variant=variant,
            n_iter_mean=float(np.mean([r.n_iter for r in runs])),
            cmt_mean=float(np.mean([r.cmt for r in runs])),
            accuracy_mean=_mean(r.accuracy for r in runs),
            converged_count=sum(r.converged for r in runs),
            cap_hits=sum(r.cap_hit for r in runs),
            runs=runs,
        )

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("variant", "n_iter_mean", "cmt_mean", "accuracy_mean",
                                             "converged_count", "cap_hits")}
        d["runs"] = [r.to_dict() for r in self.runs]
        return d

    @classmethod
    def from_dict(cls, d) -> "AggregateReport":
        runs = tuple(RunRecord(**r) for r in d["runs"])
        return cls(**{**d, "runs": runs})


def save_m(cmt_dyn: float, cmt_sarc: float) -> float:
    """Percentage saving of SARC over ARC-Dynamic."""
    return 100.0 * (cmt_dyn - cmt_sarc) / cmt_dyn


@dataclass(frozen=True)
class Comparison:
    sarc: AggregateReport
    dynamic: AggregateReport
    save_m: float  # from mean CMTs (headline)
    save_m_mean_of_ratios: float
    sarc_wins: int  # paired seeds with SARC CMT <= ARC-Dynamic CMT

    def to_dict(self) -> dict:
        return {
            "SARC": self.sarc.to_dict(),
            "ARC-Dynamic": self.dynamic.to_dict(),
            "save_m": self.save_m,
            "save_m_mean_of_ratios": self.save_m_mean_of_ratios,
            "sarc_wins": self.sarc_wins,
            "pairs": len(self.sarc.runs),
        }

    @classmethod
    def from_dict(cls, d) -> "Comparison":
        return cls(
            sarc=AggregateReport.from_dict(d["SARC"]),
            dynamic=AggregateReport.from_dict(d["ARC-Dynamic"]),
            save_m=d["save_m"],
            save_m_mean_of_ratios=d["save_m_mean_of_ratios"],
            sarc_wins=d["sarc_wins"],
        )


def _run_seeds(cfg: ExperimentConfig, oracle) -> list[RunRecord]:
    seeds = cfg.seed_list()
    if cfg.workers == 1:
        return [run_single(cfg, s, oracle) for s in seeds]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(run_single, [cfg] * len(seeds), seeds, [oracle] * len(seeds)))


def run_experiment(cfg: ExperimentConfig, oracle=None) -> AggregateReport:
    """Seeded repeats of one variant. Writes traces and ``aggregate.json``
    under ``cfg.out_dir`` when it is set."""
    oracle = cfg.dataset.build() if oracle is None else oracle
    runs = _run_seeds(cfg, oracle)
    agg = AggregateReport.from_runs(cfg.variant, runs)
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        for r in runs:
            export_traces(r.report, out, prefix=f"{_slug(cfg.variant)}_seed{r.seed}")
        write_json(agg.to_dict(), out / f"aggregate_{_slug(cfg.variant)}.json")
    return agg


def compare(cfg: ExperimentConfig, oracle=None) -> Comparison:
    """Both variants on the same dataset and seeds."""
    oracle = cfg.dataset.build() if oracle is None else oracle
    sub = None if cfg.out_dir is None else cfg.out_dir
    aggs = {v: run_experiment(cfg.replace(variant=v, out_dir=sub), oracle) for v in VARIANTS}
    sarc, dyn = aggs["SARC"], aggs["ARC-Dynamic"]
    ratios = [save_m(d.cmt, s.cmt) for s, d in zip(sarc.runs, dyn.runs)]
    comp = Comparison(
        sarc=sarc,
        dynamic=dyn,
        save_m=save_m(dyn.cmt_mean, sarc.cmt_mean),
        save_m_mean_of_ratios=float(np.mean(ratios)),
        sarc_wins=sum(s.cmt <= d.cmt for s, d in zip(sarc.runs, dyn.runs)),
    )
    if cfg.out_dir is not None:
        write_json(comp.to_dict(), Path(cfg.out_dir) / "comparison.json")
    return comp


def _slug(variant):
    return variant.lower().replace("-", "_")


def write_json(obj, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---- trace export ---------------------------------------------------------

TRACE_FILES = {
    "train_loss": ("k", "cm", "train_loss"),
    "test_loss": ("k", "cm", "test_loss"),
    "grad_norm": ("k", "cm", "grad_norm"),
    "sample_sizes": ("k", "sample_size_grad", "sample_size_hess"),
}


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def trace_rows(report: Report) -> dict[str, list[tuple]]:
    """Rows of each trace file. The CM-indexed files start with the initial
    point (k = 0) and add one row per iteration; the sample-size file has
    one row per iteration."""
    tr = report.trace
    pts = [(0, report.cm0, report.fx0, report.test_loss0, report.true_grad_norm0)]
    pts += [(r.k + 1, r.cm_after, r.fx, r.test_loss, r.true_grad_norm) for r in tr]
    return {
        "train_loss": [(k, cm, f) for k, cm, f, _, _ in pts],
        "test_loss": [(k, cm, t) for k, cm, _, t, _ in pts],
        "grad_norm": [(k, cm, g) for k, cm, _, _, g in pts],
        "sample_sizes": [(r.k, r.sample_size_grad, r.sample_size_hess) for r in tr],
    }


def export_traces(report: Report, directory, prefix="run") -> dict[str, Path]:
    directory = Path(directory)
    paths = {}
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name, rows in trace_rows(report).items():
            path = directory / f"{prefix}_{name}.csv"
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(TRACE_FILES[name])
                w.writerows([_fmt(v) for v in row] for row in rows)
            paths[name] = path
        if report.ledger is not None:
            paths["breakdown"] = report.ledger.export_breakdown(directory / f"{prefix}_breakdown.csv")
    except OSError as e:
        raise OSError(f"cannot export traces to {directory}: {e}") from e
    return paths


def read_trace(path) -> list[tuple]:
    """Parse a trace CSV back into tuples (ints for k and sizes, floats otherwise)."""
    with Path(path).open(encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        out = []
        for row in reader:
            vals = []
            for col, v in zip(header, row):
                if v == "":
                    vals.append(None)
                elif col == "k" or col.startswith("sample_size"):
                    vals.append(int(v))
                else:
                    vals.append(float(v))
            out.append(tuple(vals))
    return out


# ---- tau0 sweep -------------------------------------------------------------

def sweep_tau0(cfg: ExperimentConfig, grid, oracle=None, path=None) -> list[tuple[float, float]]:
    """Mean SARC CMT for each fixed tau0 in ``grid``."""
    if len(grid) == 0:
        raise ValueError("empty tau0 grid")
    oracle = cfg.dataset.build() if oracle is None else oracle
    rows = []
    for t in grid:
        agg = run_experiment(cfg.replace(variant="SARC", tau0=float(t), out_dir=None), oracle)
        rows.append((float(t), agg.cmt_mean))
    if path is not None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("tau0", "cmt_mean"))
                w.writerows((repr(t), repr(c)) for t, c in rows)
        except OSError as e:
            raise OSError(f"cannot write tau0 sweep to {path}: {e}") from e
    return rows


# ---- hitting-time slope --------------------------------------------------------

@dataclass(frozen=True)
class SlopeResult:
    slope: float
    intercept: float
    eps: tuple[float, ...]
    mean_hitting: tuple[float, ...]
    censored: tuple[int, ...]  # per eps, runs that never reached it

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def hitting_times(report: Report, eps_list) -> list[int | None]:
    """First iteration index k with ||grad f(x_k)|| <= eps (x_0 is k = 0)."""
    norms = [report.true_grad_norm0] + [r.true_grad_norm for r in report.trace]
    out = []
    for eps in eps_list:
        out.append(next((k for k, g in enumerate(norms) if g <= eps), None))
    return out


def complexity_slope_experiment(problem, cfg: ArcConfig, eps_list, repeats=10, seed=0,
                                x0_scale=3.0) -> SlopeResult:
    """Least-squares slope of log(mean hitting time) against log(1/eps).

    Each repeat starts from a random point (normal, scaled by ``x0_scale``)
    and runs until the true gradient norm drops below the smallest eps.
    """
    eps = tuple(float(e) for e in eps_list)
    if len(eps) < 3:
        raise ValueError(f"need at least 3 tolerances for a slope fit, got {len(eps)}")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    rng = np.random.default_rng(seed)
    run_cfg = cfg.replace(epsilon=min(eps))
    hits = []
    for r in range(repeats):
        x0 = x0_scale * rng.standard_normal(problem.n)
        rep = run(problem, run_cfg, seed=seed + r, x0=x0, stop_on_true_gradient=True)
        hits.append(hitting_times(rep, eps))
    means, censored = [], []
    for i in range(len(eps)):
        col = [h[i] for h in hits if h[i] is not None]
        censored.append(repeats - len(col))
        means.append(float(np.mean(col)) if col else math.nan)
    if any(censored):
        warnings.warn(f"censored runs excluded from the slope fit: {censored}", stacklevel=2)
    ok = [i for i, m in enumerate(means) if m > 0 and math.isfinite(m)]
    if len(ok) < 3:
        raise ValueError("fewer than 3 tolerances with positive mean hitting time")
    xs = np.log([1.0 / eps[i] for i in ok])
    ys = np.log([means[i] for i in ok])
    slope, intercept = np.polyfit(xs, ys, 1)
    return SlopeResult(float(slope), float(intercept), eps, tuple(means), tuple(censored))
