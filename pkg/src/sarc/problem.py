"""Finite-sum sigmoid least-squares problem and test functions.

    f(x) = (1/N) sum_i (y_i - sigmoid(a_i . x))^2

Every component phi_i has a rank-one Hessian, so Hessian actions cost O(n)
per sample. Also provides the smooth nonconvex test functions used by the
complexity experiments and the property tests.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .oracles import DerivativeOracle


class DatasetFormatError(ValueError):
    def __init__(self, path, line, msg):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {msg}")


def sigmoid(t):
    """Logistic function, branching on sign so neither branch overflows."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    norms: np.ndarray = field(init=False, repr=False)
    sq_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.ascontiguousarray(self.features, dtype=float)
        y = np.ascontiguousarray(self.labels, dtype=float)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError(f"features must be a nonempty N x n matrix, got shape {A.shape}")
        if y.shape != (A.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match N={A.shape[0]}")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        sq = np.einsum("ij,ij->i", A, A)
        object.__setattr__(self, "features", A)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "sq_norms", sq)
        object.__setattr__(self, "norms", np.sqrt(sq))

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def loss(x, data: Dataset) -> float:
    r = data.labels - sigmoid(data.features @ x)
    return float(np.mean(r * r))


def _coefficients(t, y):
    """Scalar multipliers of a_i in the component gradient and Hessian."""
    s = sigmoid(t)
    sm = sigmoid(-t)  # 1 - s without cancellation
    ds = s * sm
    resid = np.where(y == 1, sm, -s)
    g1 = -2.0 * ds * resid
    g2 = 2.0 * ds * (ds - (sm - s) * resid)
    return g1, g2


def component_gradient(x, i, data: Dataset):
    a = data.features[i]
    g1, _ = _coefficients(np.atleast_1d(a @ x), np.atleast_1d(data.labels[i]))
    return g1[0] * a


def component_hessian_action(x, i, v, data: Dataset):
    a = data.features[i]
    _, g2 = _coefficients(np.atleast_1d(a @ x), np.atleast_1d(data.labels[i]))
    return g2[0] * (a @ v) * a


def kappa_phi(x, j, data: Dataset, margins=None) -> float:
    """Max over samples of the order-j component derivative norm.

    Tight: gradients are multiples of a_i and Hessians are rank one, so the
    norms are |coef| * ||a_i||^j exactly.
    """
    t = data.features @ x if margins is None else margins
    g1, g2 = _coefficients(t, data.labels)
    if j == 1:
        return float(np.max(np.abs(g1) * data.norms))
    if j == 2:
        return float(np.max(np.abs(g2) * data.sq_norms))
    raise ValueError(f"derivative order must be 1 or 2, got {j}")


def classification_accuracy(x, data: Dataset) -> float:
    pred = sigmoid(data.features @ x) > 0.5
    return float(np.mean(pred == (data.labels == 1)))


class SigmoidLSQ(DerivativeOracle):
    """Sigmoid least squares on a training set, with an optional test set."""

    def __init__(self, train: Dataset, test: Dataset | None = None, w_star=None):
        if test is not None and test.n != train.n:
            raise ValueError(f"train n={train.n} but test n={test.n}")
        self.train = train
        self.test = test
        self.w_star = w_star
        self.n = train.n
        self.N = train.N
        self._cached_x = None
        self.cached_margins = None

    def margins(self, x):
        if self._cached_x is None or not np.array_equal(x, self._cached_x):
            self._cached_x = np.array(x, dtype=float, copy=True)
            self.cached_margins = self.train.features @ x
        return self.cached_margins

    def value(self, x) -> float:
        r = self.train.labels - sigmoid(self.margins(x))
        return float(np.mean(r * r))

    def gradient(self, x, sample=None):
        if sample is None:
            g1, _ = _coefficients(self.margins(x), self.train.labels)
            return self.train.features.T @ g1 / self.N
        idx = sample.indices
        A = self.train.features[idx]
        g1, _ = _coefficients(self.margins(x)[idx], self.train.labels[idx])
        return A.T @ g1 / len(idx)

    def hessian_action(self, x, v, sample=None):
        return self.hessian_operator(x, sample)(v)

    def hessian_operator(self, x, sample=None):
        if sample is None:
            A, t, y = self.train.features, self.margins(x), self.train.labels
        else:
            idx = sample.indices
            A, t, y = self.train.features[idx], self.margins(x)[idx], self.train.labels[idx]
        _, g2 = _coefficients(t, y)
        m = A.shape[0]

        def op(v):
            return A.T @ (g2 * (A @ v)) / m

        return op

    def hessian(self, x):
        _, g2 = _coefficients(self.margins(x), self.train.labels)
        A = self.train.features
        return (A.T * g2) @ A / self.N

    def kappa_phi(self, x, j) -> float:
        return kappa_phi(x, j, self.train, margins=self.margins(x))

    def test_loss(self, x) -> float | None:
        return None if self.test is None else loss(x, self.test)

    def test_accuracy(self, x) -> float | None:
        return None if self.test is None else classification_accuracy(x, self.test)


def generate_synthetic(
    n: int,
    N: int,
    N_T: int,
    conditioning: float = 1.0,
    seed: int = 0,
    flip: float = 0.02,
    margin_noise: float = 0.1,
    name: str = "synthetic",
) -> SigmoidLSQ:
    """Gaussian features with log-spaced coordinate scales and planted labels.

    Coordinate standard deviations span [1/sqrt(conditioning), sqrt(conditioning)].
    Labels come from the sign of a_i . w* plus Gaussian margin noise (scaled
    by ``margin_noise`` times the margin spread), then ``flip`` of them are flipped.
    """
    if conditioning < 1:
        raise ValueError(f"conditioning must be >= 1, got {conditioning}")
    rng = np.random.default_rng(seed)
    half = 0.5 * np.log10(conditioning)
    stds = np.logspace(-half, half, n)
    A = rng.standard_normal((N + N_T, n)) * stds
    w = rng.standard_normal(n)
    w /= np.linalg.norm(w)
    t = A @ w
    noise = rng.standard_normal(N + N_T) * (margin_noise * np.std(t))
    y = (sigmoid(t + noise) > 0.5).astype(float)
    flips = rng.random(N + N_T) < flip
    y[flips] = 1.0 - y[flips]
    train = Dataset(A[:N], y[:N], name=f"{name}-train")
    test = Dataset(A[N:], y[N:], name=f"{name}-test") if N_T > 0 else None
    return SigmoidLSQ(train, test, w_star=w)


def save_dataset(data: Dataset, path: str | Path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label"] + [f"f{j + 1}" for j in range(data.n)])
            for yi, row in zip(data.labels, data.features):
                w.writerow([str(int(yi))] + ["%.17g" % v for v in row])
    except OSError as e:
        raise OSError(f"cannot write dataset to {path}: {e}") from e
    return path


def load_dataset(path: str | Path, name: str | None = None) -> Dataset:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(path, 1, "empty file") from None
        n = len(header) - 1
        expected = ["label"] + [f"f{j + 1}" for j in range(n)]
        if n < 1 or [h.strip() for h in header] != expected:
            raise DatasetFormatError(path, 1, "header must be label,f1,...,f<n>")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n + 1:
                raise DatasetFormatError(path, lineno, f"expected {n} features, got {len(row) - 1}")
            if row[0].strip() not in ("0", "1"):
                raise DatasetFormatError(path, lineno, f"label must be 0 or 1, got {row[0]!r}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as e:
                raise DatasetFormatError(path, lineno, f"malformed feature: {e}") from None
            labels.append(float(row[0]))
    if not rows:
        raise DatasetFormatError(path, 2, "no data rows")
    return Dataset(np.array(rows), np.array(labels), name=name or path.stem)


class CoupledCosine(DerivativeOracle):
    """f(x) = sum_i (1 - cos x_i) + (rho/2) sum_i (x_{i+1} - x_i)^2.

    Smooth, nonconvex, bounded below by 0. The Hessian is
    diag(cos x) + rho * L (L the path-graph Laplacian), so ||Hess|| <= 1 + 4 rho,
    the Hessian is 1-Lipschitz and the gradient is (1 + 4 rho)-Lipschitz.
    """

    N = 1

    def __init__(self, n: int, rho: float = 0.1, scale: float = 1.0):
        self.n = n
        self.rho = rho
        self.scale = scale
        self.L_H = scale * 1.0
        self.L_g = scale * (1.0 + 4.0 * rho)
        self.hessian_bound = self.L_g

    def _lap(self, v):
        d = np.diff(v)
        out = np.zeros_like(v)
        out[:-1] -= d
        out[1:] += d
        return out

    def value(self, x) -> float:
        return self.scale * float(np.sum(1.0 - np.cos(x)) + 0.5 * self.rho * np.sum(np.diff(x) ** 2))

    def gradient(self, x, sample=None):
        return self.scale * (np.sin(x) + self.rho * self._lap(x))

    def hessian_action(self, x, v, sample=None):
        return self.scale * (np.cos(x) * v + self.rho * self._lap(v))

    def hessian(self, x):
        return np.column_stack([self.hessian_action(x, e) for e in np.eye(self.n)])

    def kappa_phi(self, x, j) -> float:
        return 1.0


class Quadratic(DerivativeOracle):
    """f(x) = 0.5 x^T H x - b^T x with H symmetric."""

    N = 1

    def __init__(self, H, b=None):
        self.H = np.asarray(H, dtype=float)
        self.n = self.H.shape[0]
        self.b = np.zeros(self.n) if b is None else np.asarray(b, dtype=float)
        self.L_H = 0.0

    def value(self, x) -> float:
        return float(0.5 * x @ (self.H @ x) - self.b @ x)

    def gradient(self, x, sample=None):
        return self.H @ x - self.b

    def hessian_action(self, x, v, sample=None):
        return self.H @ v

    def hessian(self, x):
        return self.H.copy()

    def kappa_phi(self, x, j) -> float:
        return 1.0
