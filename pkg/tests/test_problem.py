import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sarc.problem import (
    CoupledCosine,
    Dataset,
    DatasetFormatError,
    SigmoidLSQ,
    classification_accuracy,
    component_gradient,
    component_hessian_action,
    generate_synthetic,
    kappa_phi,
    load_dataset,
    loss,
    save_dataset,
    sigmoid,
)

seeds = st.integers(0, 2**32 - 1)


def random_instance(seed, N=None, n=None):
    r = np.random.default_rng(seed)
    N = N or int(r.integers(1, 50))
    n = n or int(r.integers(1, 10))
    A = r.standard_normal((N, n)) * r.uniform(0.2, 3.0)
    y = (r.random(N) < 0.5).astype(float)
    x = r.standard_normal(n)
    return Dataset(A, y), x, r


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(800.0) == 1.0
    assert sigmoid(-800.0) == 0.0
    t = np.random.default_rng(0).uniform(-700, 700, 1000)
    assert np.max(np.abs(sigmoid(t) + sigmoid(-t) - 1.0)) <= 1e-15


def test_loss_at_zero_is_quarter():
    A = np.random.default_rng(1).standard_normal((6, 3))
    assert loss(np.zeros(3), Dataset(A, np.array([0, 1, 1, 0, 1, 0.0]))) == 0.25


def test_loss_saturates():
    d = Dataset(np.array([[1.0]]), np.array([1.0]))
    assert loss(np.array([800.0]), d) == 0.0


def test_loss_matches_brute_force():
    d, x, _ = random_instance(7, N=5, n=3)
    brute = sum((d.labels[i] - 1 / (1 + np.exp(-d.features[i] @ x))) ** 2 for i in range(5)) / 5
    assert loss(x, d) == pytest.approx(brute, rel=1e-14)


def test_component_gradient_closed_form_at_zero():
    a = np.array([1.0, -2.0, 0.5])
    d = Dataset(a[None, :], np.array([1.0]))
    np.testing.assert_allclose(component_gradient(np.zeros(3), 0, d), -a / 4, rtol=1e-15)


def test_component_gradient_zero_residual():
    # y = sigma(a.x) needs a.x = 0 for binary labels... use a.x -> inf with y = 1
    d = Dataset(np.array([[1.0, 0.0]]), np.array([1.0]))
    np.testing.assert_array_equal(component_gradient(np.array([800.0, 0.0]), 0, d), 0.0)


def test_component_hessian_at_zero():
    r = np.random.default_rng(2)
    a, v = r.standard_normal(4), r.standard_normal(4)
    for y in (0.0, 1.0):
        d = Dataset(a[None, :], np.array([y]))
        np.testing.assert_allclose(component_hessian_action(np.zeros(4), 0, v, d), (a @ v) * a / 8, rtol=1e-14)


def test_component_hessian_kernel():
    a = np.array([1.0, 2.0, 0.0])
    v = np.array([2.0, -1.0, 5.0])
    d = Dataset(a[None, :], np.array([0.0]))
    np.testing.assert_array_equal(component_hessian_action(np.ones(3), 0, v, d), 0.0)


def exact_coefficients(t, y):
    """Exponential form of the component derivative coefficients at 50 digits."""
    import mpmath

    with mpmath.workdps(50):
        e = mpmath.exp(-mpmath.mpf(float(t)))
        g1 = -2 * e * (1 + e) ** -2 * (y - 1 / (1 + e))
        g2 = -2 * e * (1 + e) ** -4 * (y * (e * e - 1) + 1 - 2 * e)
        ds = e / (1 + e) ** 2
        return float(g1), float(g2), float(ds)


@given(seeds)
def test_coefficients_match_exponential_form(seed):
    from sarc.problem import _coefficients

    r = np.random.default_rng(seed)
    t = r.uniform(-30, 30, 20)
    y = (r.random(20) < 0.5).astype(float)
    g1, g2 = _coefficients(t, y)
    for i in range(20):
        e1, e2, ds = exact_coefficients(t[i], y[i])
        # errors measured against the size of sigma', the common factor
        assert abs(g1[i] - e1) <= 1e-14 * ds
        assert abs(g2[i] - e2) <= 1e-14 * ds


def _fd_grad(f, x, h=1e-6):
    E = np.eye(len(x))
    return np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in E])


@given(seeds)
def test_component_gradient_fd(seed):
    d, x, r = random_instance(seed)
    i = int(r.integers(d.N))
    one = Dataset(d.features[i : i + 1], d.labels[i : i + 1])
    g = component_gradient(x, i, d)
    fd = _fd_grad(lambda z: loss(z, one), x)
    assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-3)


@given(seeds)
def test_component_hessian_fd(seed):
    d, x, r = random_instance(seed)
    i = int(r.integers(d.N))
    v = r.standard_normal(d.n)
    h = 1e-6
    fd = (component_gradient(x + h * v, i, d) - component_gradient(x - h * v, i, d)) / (2 * h)
    hv = component_hessian_action(x, i, v, d)
    assert np.linalg.norm(hv - fd) <= 1e-5 * max(np.linalg.norm(hv), 1e-3)


@given(seeds)
def test_full_gradient_and_hessian_fd(seed):
    d, x, r = random_instance(seed)
    p = SigmoidLSQ(d)
    g = p.gradient(x)
    fd = _fd_grad(p.value, x)
    assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-3)
    v = r.standard_normal(d.n)
    h = 1e-6
    hv_fd = (p.gradient(x + h * v) - p.gradient(x - h * v)) / (2 * h)
    hv = p.hessian_action(x, v)
    assert np.linalg.norm(hv - hv_fd) <= 1e-5 * max(np.linalg.norm(hv), 1e-3)
    np.testing.assert_allclose(p.hessian(x) @ v, hv, rtol=1e-10, atol=1e-14)


@given(seeds)
def test_loss_in_unit_interval(seed):
    d, x, r = random_instance(seed)
    assert 0.0 <= loss(x * r.uniform(0, 100), d) <= 1.0


def test_kappa_phi_example():
    d = Dataset(np.array([[3.0, 4.0]]), np.array([1.0]))
    assert kappa_phi(np.zeros(2), 1, d) == pytest.approx(1.25, rel=1e-15)


@given(seeds)
def test_kappa_phi_is_max_component_norm(seed):
    d, x, _ = random_instance(seed)
    g_norms = [np.linalg.norm(component_gradient(x, i, d)) for i in range(d.N)]
    H_norms = []
    for i in range(d.N):
        H = np.column_stack([component_hessian_action(x, i, e, d) for e in np.eye(d.n)])
        H_norms.append(np.linalg.norm(H, 2))
    assert kappa_phi(x, 1, d) == pytest.approx(max(g_norms), rel=1e-12)
    assert kappa_phi(x, 2, d) == pytest.approx(max(H_norms), rel=1e-12)


def test_kappa_phi_rejects_order():
    d, x, _ = random_instance(0)
    with pytest.raises(ValueError):
        kappa_phi(x, 3, d)


def test_dataset_validation_and_norms():
    A = np.random.default_rng(0).standard_normal((10, 4))
    d = Dataset(A, np.zeros(10))
    np.testing.assert_allclose(d.norms, np.linalg.norm(A, axis=1), rtol=1e-12)
    np.testing.assert_allclose(d.sq_norms, np.linalg.norm(A, axis=1) ** 2, rtol=1e-12)
    with pytest.raises(ValueError):
        Dataset(A, np.full(10, 0.5))
    with pytest.raises(ValueError):
        Dataset(A, np.zeros(9))
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 3)), np.zeros(0))


def test_generate_synthetic_shapes_and_determinism():
    p = generate_synthetic(100, 9000, 1000, 1e4, seed=4)
    assert (p.train.N, p.train.n, p.test.N) == (9000, 100, 1000)
    q = generate_synthetic(100, 9000, 1000, 1e4, seed=4)
    assert p.train == q.train and p.test == q.test
    assert set(np.unique(p.train.labels)) <= {0.0, 1.0}


def test_generate_isotropic_conditioning():
    p = generate_synthetic(10, 1000, 0, 1.0, seed=0)
    ev = np.linalg.eigvalsh(np.cov(p.train.features.T))
    assert ev.max() / ev.min() <= 2.0
    assert p.test is None


def test_generate_feature_scales():
    p = generate_synthetic(5, 20000, 0, 1e4, seed=1)
    std = p.train.features.std(axis=0)
    np.testing.assert_allclose(std, np.logspace(-2, 2, 5), rtol=0.05)


def test_accuracy_perfect_and_ties():
    r = np.random.default_rng(5)
    A = r.standard_normal((200, 3))
    w = np.array([1.0, -2.0, 0.5])
    y = (A @ w > 0).astype(float)
    d = Dataset(A, y)
    assert classification_accuracy(w, d) == 1.0
    assert classification_accuracy(np.zeros(3), d) == pytest.approx(np.mean(y == 0))


def test_margin_cache_tracks_x(small_problem):
    p = small_problem
    x1, x2 = np.zeros(p.n), np.ones(p.n)
    v1 = p.value(x1)
    assert p.value(x2) != v1
    assert p.value(x1) == v1
    np.testing.assert_array_equal(p.margins(x2), p.train.features @ x2)


def test_dataset_roundtrip(tmp_path, small_problem):
    path = save_dataset(small_problem.train, tmp_path / "d.csv")
    assert load_dataset(path) == small_problem.train
    assert path.read_text().splitlines()[0] == "label," + ",".join(f"f{j}" for j in range(1, 9))


def test_load_accepts_header_and_rejects_bad_rows(tmp_path):
    p = tmp_path / "ok.csv"
    p.write_text("label,f1,f2,f3\n1,0.5,1,2\n0,1e-3,-2,3\n")
    assert load_dataset(p).n == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("label,f1,f2,f3\n1,0.5,1,2\n0,1,2\n")
    with pytest.raises(DatasetFormatError, match=":3:"):
        load_dataset(bad)
    bad.write_text("label,f1,f2\n2,0.5,1\n")
    with pytest.raises(DatasetFormatError, match="label"):
        load_dataset(bad)
    bad.write_text("label,f1,f2\n1,0.5,abc\n")
    with pytest.raises(DatasetFormatError, match=":2:"):
        load_dataset(bad)
    bad.write_text("lbl,x\n1,0\n")
    with pytest.raises(DatasetFormatError, match=":1:"):
        load_dataset(bad)


def test_coupled_cosine_derivatives():
    f = CoupledCosine(6, rho=0.3, scale=2.0)
    r = np.random.default_rng(0)
    x, v = r.standard_normal(6), r.standard_normal(6)
    assert np.linalg.norm(f.gradient(x) - _fd_grad(f.value, x)) <= 1e-7
    h = 1e-6
    fd = (f.gradient(x + h * v) - f.gradient(x - h * v)) / (2 * h)
    np.testing.assert_allclose(f.hessian_action(x, v), fd, rtol=1e-6, atol=1e-8)
    assert np.linalg.norm(f.hessian(x), 2) <= f.L_g + 1e-12
