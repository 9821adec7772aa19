"""Derivative estimators: exact, subsampled, and accuracy-injected.

Samples are 0-based index arrays into the N component functions. An oracle
with N == 1 (a plain smooth function) always ends up on the full sample, so
the same code path yields exact derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FD_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True, eq=False)
class SampleSet:
    indices: np.ndarray
    j: int
    N: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        if idx.ndim != 1 or len(idx) > self.N:
            raise ValueError(f"sample of size {idx.size} does not fit N={self.N}")
        if len(idx) and (idx[0] < 0 or idx[-1] >= self.N or np.any(np.diff(idx) <= 0)):
            raise ValueError("sample indices must be sorted, unique and in [0, N)")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    @property
    def is_full(self) -> bool:
        return len(self.indices) == self.N

    @classmethod
    def full(cls, N, j):
        return cls(np.arange(N), j, N)

    def deficit(self, other: "SampleSet") -> int:
        """|self \\ (self & other)|: elements of this sample not in ``other``."""
        if other.is_full:
            return 0
        return int(len(self) - np.intersect1d(self.indices, other.indices, assume_unique=True).size)


@dataclass(frozen=True)
class GradientLoopResult:
    g: np.ndarray
    tau_final: float
    loop_count: int  # gradient builds performed
    sample_size: int
    sample: SampleSet


class HessianAction:
    """Linear operator v -> B v that counts its applications."""

    def __init__(self, fn, sample: SampleSet):
        self._fn = fn
        self.sample = sample
        self.calls = 0

    def __call__(self, v):
        self.calls += 1
        return self._fn(v)


class DerivativeOracle:
    """Base contract for objective/derivative providers.

    Subclasses implement ``value`` (always exact), ``gradient`` and
    ``hessian_action`` on an optional :class:`SampleSet` (``None`` = all N
    components) and ``kappa_phi``. The two ``estimate_*`` hooks are what the
    outer iteration calls; the defaults run the subsampling rules.
    """

    n: int
    N: int = 1

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x, sample=None):
        raise NotImplementedError

    def hessian_action(self, x, v, sample=None):
        raise NotImplementedError

    def hessian_operator(self, x, sample=None):
        return lambda v: self.hessian_action(x, v, sample)

    def kappa_phi(self, x, j) -> float:
        return 1.0

    def estimate_gradient(self, x, sigma, cfg, rng, ledger) -> GradientLoopResult:
        return gradient_inner_loop(x, sigma, cfg, self, rng, ledger)

    def estimate_hessian(self, x, ck, cfg, rng):
        if ck <= 0:
            # alpha = 0 asks for zero Hessian error: only the full sample qualifies
            sample = SampleSet.full(self.N, 2)
            return _make_action(self, x, sample, cfg.hessian_mode), sample
        return subsampled_hessian_oracle(x, ck, cfg.p2, self, rng, mode=cfg.hessian_mode)


class FunctionOracle(DerivativeOracle):
    """Wraps plain callables as an exact (N = 1) oracle."""

    N = 1

    def __init__(self, n, fun, grad, hessvec):
        self.n = n
        self._f, self._g, self._hv = fun, grad, hessvec

    def value(self, x):
        return float(self._f(x))

    def gradient(self, x, sample=None):
        return np.asarray(self._g(x), dtype=float)

    def hessian_action(self, x, v, sample=None):
        return np.asarray(self._hv(x, v), dtype=float)


def bernstein_sample_size(kappa_phi, tau, p, n, j, N) -> int:
    """Operator-Bernstein sample size, clamped to N.

    min{N, ceil((4 k / tau) (2 k / tau + 1/3) log(d_j / (1 - p)))}
    with d_1 = n + 1, d_2 = 2 n.
    """
    if not 0 < p < 1:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if not tau > 0:
        raise ValueError(f"accuracy tau must be positive, got {tau}")
    if kappa_phi < 0:
        raise ValueError(f"kappa_phi must be nonnegative, got {kappa_phi}")
    if j not in (1, 2):
        raise ValueError(f"derivative order must be 1 or 2, got {j}")
    d = n + 1 if j == 1 else 2 * n
    u = kappa_phi / tau
    val = 4.0 * u * (2.0 * u + 1.0 / 3.0) * math.log(d / (1.0 - p))
    if not math.isfinite(val) or val >= N:
        return int(N)
    return int(math.ceil(val))


def invert_bernstein(kappa_phi, m, p, n, j, N) -> float:
    """Largest-ish tau for which the sample-size rule returns exactly ``m``.

    Solves (4u)(2u + 1/3) L = m for u = kappa_phi / tau (positive root),
    then nudges tau by ulps so the forward map reproduces ``m``.
    """
    if not 1 <= m <= N:
        raise ValueError(f"target size {m} outside [1, {N}]")
    if kappa_phi <= 0:
        raise ValueError("kappa_phi must be positive to invert the sample-size rule")
    d = n + 1 if j == 1 else 2 * n
    L = math.log(d / (1.0 - p))
    a, b = 8.0 * L, 4.0 * L / 3.0
    u = (-b + math.sqrt(b * b + 4.0 * a * m)) / (2.0 * a)
    tau = kappa_phi / u
    for _ in range(64):
        got = bernstein_sample_size(kappa_phi, tau, p, n, j, N)
        if got == m:
            return tau
        tau = math.nextafter(tau, math.inf if got > m else 0.0)
    raise ArithmeticError(f"could not invert sample-size rule for m={m}")


def draw_sample(N, m, rng, j=1) -> SampleSet:
    """m distinct indices uniformly from range(N), without replacement."""
    if m < 1:
        raise ValueError(f"sample size must be >= 1, got {m}")
    if m > N:
        raise ValueError(f"sample size {m} exceeds N={N}")
    if m == N:
        return SampleSet.full(N, j)
    return SampleSet(np.sort(rng.choice(N, size=m, replace=False)), j, N)


def gradient_inner_loop(x, sigma, cfg, oracle, rng, ledger) -> GradientLoopResult:
    """Shrink the gradient accuracy until the relative test passes.

    Each build draws a fresh sample sized for the current tau and is charged
    to the ledger. Falls back to the exact gradient once the size clamps to N.
    """
    if sigma < cfg.sigma_min:
        raise ValueError(f"sigma={sigma} below sigma_min={cfg.sigma_min}")
    N, n = oracle.N, oracle.n
    tau = cfg.tau0
    tau_floor = 1e-14 * cfg.tau0
    kphi = oracle.kappa_phi(x, 1)
    coef = cfg.kappa * (1.0 - cfg.beta) ** 2
    builds = 0
    while True:
        # kappa == 0 can only be satisfied by the exact gradient, so go straight there
        if cfg.kappa == 0 or tau <= tau_floor:
            m = N
        else:
            m = max(1, bernstein_sample_size(kphi, tau, cfg.p1, n, 1, N))
        builds += 1
        if m >= N:
            g = oracle.gradient(x)
            ledger.charge_gradient(N)
            return GradientLoopResult(g, 0.0, builds, N, SampleSet.full(N, 1))
        sample = draw_sample(N, m, rng, j=1)
        g = oracle.gradient(x, sample)
        ledger.charge_gradient(m)
        if tau <= coef * (np.linalg.norm(g) / sigma) ** 2:
            return GradientLoopResult(g, tau, builds, m, sample)
        tau *= cfg.kappa_tau


def default_fd_step(x, v):
    return math.sqrt(FD_EPS) * (1.0 + np.linalg.norm(x)) / np.linalg.norm(v)


def finite_difference_gradient_action(x, v, h, sample, oracle, g_base=None):
    """(g_D(x + h v) - g_D(x)) / h on the sample D."""
    if h is None:
        h = default_fd_step(x, v)
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    if g_base is None:
        g_base = oracle.gradient(x, sample)
    return (oracle.gradient(x + h * v, sample) - g_base) / h


def _make_action(oracle, x, sample, mode, g_base=None):
    sub = None if sample.is_full else sample
    if mode == "analytic":
        return HessianAction(oracle.hessian_operator(x, sub), sample)
    if mode == "fd":
        base = oracle.gradient(x, sub) if g_base is None else g_base
        return HessianAction(lambda v: finite_difference_gradient_action(x, v, None, sub, oracle, base), sample)
    raise ValueError(f"unknown hessian mode {mode!r}")


def subsampled_hessian_oracle(x, ck, p2, oracle, rng, mode="analytic"):
    """Hessian-action operator on a sample sized for accuracy ``ck``."""
    if not ck > 0:
        raise ValueError(f"Hessian accuracy ck must be positive, got {ck}")
    m = max(1, bernstein_sample_size(oracle.kappa_phi(x, 2), ck, p2, oracle.n, 2, oracle.N))
    sample = draw_sample(oracle.N, m, rng, j=2)
    return _make_action(oracle, x, sample, mode), sample


def _unit(rng, n, align=None):
    u = rng.standard_normal(n)
    nu = np.linalg.norm(u)
    u = u / nu if nu > 0 else np.eye(n)[0]
    if align is not None and u @ align < 0:
        u = -u
    return u


class InjectedAccuracyOracle(DerivativeOracle):
    """Exact oracle plus controlled perturbations, for testing the iteration.

    With probability ``p`` an estimate meets its accuracy requirement by
    construction: the gradient error is pushed away from the true gradient,
    so ||g_est|| >= ||g|| and the relative bound evaluated at g_est stays
    valid; the Hessian error is a rank-one term of norm <= ck. Otherwise the
    error norm is ``factor`` times the requested bound. ``corrupt`` selects
    which estimates may be corrupted ("gradient", "hessian" or "both").
    """

    def __init__(self, base: DerivativeOracle, p=1.0, factor=10.0, corrupt="both", rng=None):
        if not 0 < p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {p}")
        if corrupt not in ("gradient", "hessian", "both"):
            raise ValueError(f"unknown corruption target {corrupt!r}")
        self.base = base
        self.n = base.n
        self.N = 1
        self.p = p
        self.factor = factor
        self.corrupt = corrupt
        self.rng = rng
        self.log = []  # (kind, accurate-by-construction, error norm, bound)

    def value(self, x):
        return self.base.value(x)

    def gradient(self, x, sample=None):
        return self.base.gradient(x)

    def hessian_action(self, x, v, sample=None):
        return self.base.hessian_action(x, v)

    def _accurate(self, rng, kind):
        if self.corrupt not in (kind, "both"):
            return True
        return bool(rng.random() < self.p)

    def estimate_gradient(self, x, sigma, cfg, rng, ledger):
        rng = self.rng or rng
        g = self.base.gradient(x)
        ledger.charge_gradient(1)
        coef = cfg.kappa * (1.0 - cfg.beta) ** 2 / sigma**2
        bound = coef * float(g @ g)
        ok = self._accurate(rng, "gradient")
        u = _unit(rng, self.n, align=g)
        size = rng.random() * bound if ok else self.factor * max(bound, 1e-12)
        g_est = g + size * u
        self.log.append(("gradient", ok, size, coef * float(g_est @ g_est)))
        return GradientLoopResult(g_est, bound, 1, 1, SampleSet.full(1, 1))

    def estimate_hessian(self, x, ck, cfg, rng):
        rng = self.rng or rng
        ok = self._accurate(rng, "hessian")
        u = _unit(rng, self.n)
        if ok:
            theta = (2.0 * rng.random() - 1.0) * ck
        else:
            theta = self.factor * max(ck, 1e-12) * (1.0 if rng.random() < 0.5 else -1.0)
        self.log.append(("hessian", ok, abs(theta), ck))
        self.last_hessian_perturbation = abs(theta)
        base = self.base

        def op(v):
            return base.hessian_action(x, v) + theta * (u @ v) * u

        sample = SampleSet.full(1, 2)
        return HessianAction(op, sample), sample


def injected_accuracy_oracle(base, p, corruption=None, rng=None):
    corruption = corruption or {}
    return InjectedAccuracyOracle(base, p=p, rng=rng, **corruption)
