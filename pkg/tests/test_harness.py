import numpy as np
import pytest

from sarc import ArcConfig, CoupledCosine, Quadratic, bernstein_sample_size
from sarc.harness import (
    AggregateReport,
    Comparison,
    DatasetSpec,
    ExperimentConfig,
    calibrate_tau0_and_kappa,
    compare,
    complexity_slope_experiment,
    export_traces,
    read_json,
    read_trace,
    run_experiment,
    run_single,
    save_m,
    sweep_tau0,
    trace_rows,
)

SMALL = DatasetSpec(n=10, N=900, N_T=100, conditioning=100.0, seed=1)


@pytest.fixture(scope="module")
def oracle():
    return SMALL.build()


def test_calibration_targets(oracle):
    cfg = ArcConfig()
    cal = calibrate_tau0_and_kappa(np.zeros(oracle.n), cfg, oracle, np.random.default_rng(0))
    x0 = np.zeros(oracle.n)
    assert bernstein_sample_size(oracle.kappa_phi(x0, 1), cal.tau0, cfg.p1, oracle.n, 1, oracle.N) == 360
    assert bernstein_sample_size(oracle.kappa_phi(x0, 2), cal.c, cfg.p2, oracle.n, 2, oracle.N) == 90
    assert cal.kappa == pytest.approx(4 * cal.tau0 * (cfg.sigma0 / cal.grad_norm0) ** 2, rel=1e-12)
    full = calibrate_tau0_and_kappa(x0, cfg, oracle, np.random.default_rng(0), grad_fraction=1.0)
    assert bernstein_sample_size(oracle.kappa_phi(x0, 1), full.tau0, cfg.p1, oracle.n, 1, oracle.N) == oracle.N
    with pytest.raises(ValueError):
        calibrate_tau0_and_kappa(x0, cfg, oracle, np.random.default_rng(0), grad_fraction=1.5)


@pytest.mark.parametrize("seed", range(5))
def test_first_gradient_passes_without_shrinking(oracle, seed):
    rec = run_single(ExperimentConfig(dataset=SMALL, repeats=1), seed, oracle)
    first = rec.report.trace[0]
    assert first.grad_builds == 1 and first.sample_size_grad == 360
    assert first.sample_size_hess == 90


def test_dynamic_uses_exact_gradients(oracle):
    agg = run_experiment(ExperimentConfig(dataset=SMALL, variant="ARC-Dynamic", repeats=3), oracle)
    for r in agg.runs:
        assert r.kappa == 0.0
        assert all(t.sample_size_grad == oracle.N for t in r.report.trace)


def test_repeat_determinism(oracle):
    cfg = ExperimentConfig(dataset=SMALL, repeats=1, base_seed=7)
    a, b = run_experiment(cfg, oracle), run_experiment(cfg, oracle)
    assert a == b and a.to_dict() == b.to_dict()


def test_parallel_matches_serial(oracle):
    cfg = ExperimentConfig(dataset=SMALL, repeats=2)
    assert run_experiment(cfg.replace(workers=2), oracle).to_dict() == run_experiment(cfg, oracle).to_dict()


def test_compare_save_m_identity(oracle, tmp_path):
    comp = compare(ExperimentConfig(dataset=SMALL, repeats=3, out_dir=str(tmp_path)), oracle)
    assert comp.save_m == 100 * (comp.dynamic.cmt_mean - comp.sarc.cmt_mean) / comp.dynamic.cmt_mean
    ratios = [save_m(d.cmt, s.cmt) for s, d in zip(comp.sarc.runs, comp.dynamic.runs)]
    assert comp.save_m_mean_of_ratios == pytest.approx(np.mean(ratios))
    assert comp.sarc.cmt_mean == pytest.approx(np.mean([r.cmt for r in comp.sarc.runs]))
    back = Comparison.from_dict(read_json(tmp_path / "comparison.json"))
    assert back.to_dict() == comp.to_dict()
    agg = AggregateReport.from_dict(read_json(tmp_path / "aggregate_sarc.json"))
    assert agg == comp.sarc
    assert (tmp_path / "arc_dynamic_seed0_sample_sizes.csv").exists()


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(variant="other")
    with pytest.raises(ValueError):
        ExperimentConfig(repeats=2, seeds=(1,))
    with pytest.raises(ValueError):
        ExperimentConfig(grad_fraction=0.0)
    assert ExperimentConfig(repeats=3, base_seed=5).seed_list() == (5, 6, 7)


def test_dataset_load_errors_carry_path(tmp_path):
    with pytest.raises(OSError, match="missing.csv"):
        DatasetSpec(train_path=str(tmp_path / "missing.csv")).build()


def test_trace_export_rows(oracle, tmp_path):
    cfg = ExperimentConfig(dataset=SMALL, repeats=1, arc=ArcConfig(max_iter=10, epsilon=1e-9))
    rep = run_single(cfg, 0, oracle).report
    assert rep.iterations == 10
    paths = export_traces(rep, tmp_path, prefix="r")
    rows = trace_rows(rep)
    for name in ("train_loss", "test_loss", "grad_norm"):
        parsed = read_trace(paths[name])
        assert len(parsed) == 11 and parsed[0][0] == 0
        assert parsed == [tuple(float(v) if i else v for i, v in enumerate(row)) for row in rows[name]]
        cms = [r[1] for r in parsed]
        assert all(b > a for a, b in zip(cms, cms[1:]))
    sizes = read_trace(paths["sample_sizes"])
    assert len(sizes) == 10 and sizes == rows["sample_sizes"]


def test_trace_export_io_error(oracle, tmp_path):
    rep = run_single(ExperimentConfig(dataset=SMALL, repeats=1, arc=ArcConfig(max_iter=2)), 0, oracle).report
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        export_traces(rep, blocker / "sub")


def test_sweep_tau0_file(oracle, tmp_path):
    path = tmp_path / "sweep.csv"
    rows = sweep_tau0(ExperimentConfig(dataset=SMALL, repeats=2), [0.05, 1.0, 20.0], oracle, path)
    assert [t for t, _ in rows] == [0.05, 1.0, 20.0]
    lines = path.read_text().splitlines()
    assert lines[0] == "tau0,cmt_mean" and len(lines) == 4
    assert [float(line.split(",")[1]) for line in lines[1:]] == [c for _, c in rows]
    with pytest.raises(ValueError):
        sweep_tau0(ExperimentConfig(dataset=SMALL), [], oracle)


def test_slope_validation():
    f = CoupledCosine(5)
    with pytest.raises(ValueError):
        complexity_slope_experiment(f, ArcConfig(), [1e-2], 2)
    with pytest.raises(ValueError):
        complexity_slope_experiment(f, ArcConfig(), [1e-2, 1e-1, 1e-3], 2)


def test_slope_quadratic_is_small():
    res = complexity_slope_experiment(Quadratic(np.diag([1.0, 3.0, 10.0])), ArcConfig(), [1e-1, 3e-2, 1e-2, 3e-3], 5)
    assert res.slope < 0.5 and res.censored == (0, 0, 0, 0)


def test_slope_censoring_warns():
    cfg = ArcConfig(max_iter=3)
    with pytest.warns(UserWarning, match="censored"), pytest.raises(ValueError):
        complexity_slope_experiment(CoupledCosine(10), cfg, [1e-1, 1e-4, 1e-6, 1e-8], 2, x0_scale=5.0)
