"""Outer adaptive cubic regularisation iteration with inexact derivatives.

One iteration: estimate the gradient to a relative accuracy (Step 1), pick
the Hessian accuracy c_k from the flag and estimate the Hessian (Step 2),
approximately minimise the cubic model (Step 3), reject short steps taken
under the loose Hessian accuracy (Step 4), then accept or reject on the
actual-versus-predicted decrease ratio (Step 5).
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .costmeter import CostLedger
from .subsolver import RULES, CubicModel, SubsolverConfig, minimize_model


class ArcError(RuntimeError):
    """A run-aborting contract violation (e.g. nonpositive predicted decrease)."""


@dataclass(frozen=True)
class ArcConfig:
    beta: float = 0.5
    alpha: float = 0.1
    eta: float = 0.8
    gamma: float = 2.0
    sigma0: float = 1e-1
    sigma_min: float = 1e-5
    c: float = 1.0
    epsilon: float = 5e-3
    kappa: float = 0.0
    tau0: float = 1.0
    kappa_tau: float = 0.5
    p1: float = 0.8
    p2: float = 0.8
    max_iter: int = 500
    termination_rule: str = "constant"
    beta_k: float = 0.5
    max_inner: int = 500
    nonmonotone_memory: int = 10
    hessian_mode: str = "analytic"

    def __post_init__(self):
        checks = [
            (0 < self.beta < 1, "beta must lie in (0, 1)"),
            (0 <= self.alpha < 2 / 3, "alpha must lie in [0, 2/3)"),
            (0 < self.eta < (2 - 3 * self.alpha) / 2, "eta must lie in (0, (2 - 3 alpha)/2)"),
            (self.gamma > 1, "gamma must exceed 1"),
            (self.sigma0 > 0, "sigma0 must be positive"),
            (0 < self.sigma_min <= self.sigma0, "sigma_min must lie in (0, sigma0]"),
            (self.c > 0, "c must be positive"),
            (0 < self.epsilon < 1, "epsilon must lie in (0, 1)"),
            (self.kappa >= 0, "kappa must be nonnegative"),
            (self.tau0 > 0, "tau0 must be positive"),
            (0 < self.kappa_tau < 1, "kappa_tau must lie in (0, 1)"),
            (0 < self.p1 < 1 and 0 < self.p2 < 1, "p1, p2 must lie in (0, 1)"),
            (self.max_iter >= 0, "max_iter must be >= 0"),
            (self.termination_rule in RULES, f"termination_rule must be one of {RULES}"),
            (0 < self.beta_k <= self.beta, "beta_k must lie in (0, beta]"),
            (self.hessian_mode in ("analytic", "fd"), "hessian_mode must be 'analytic' or 'fd'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(f"invalid ArcConfig: {msg}")

    def replace(self, **changes) -> "ArcConfig":
        return dataclasses.replace(self, **changes)

    def subsolver_config(self) -> SubsolverConfig:
        return SubsolverConfig(
            beta=self.beta,
            rule=self.termination_rule,
            beta_k_const=self.beta_k,
            max_inner=self.max_inner,
            nonmonotone_memory=self.nonmonotone_memory,
        )


class Outcome(str, enum.Enum):
    SUCCESSFUL = "successful"
    UNSUCCESSFUL_STEP5 = "unsuccessful-step5"
    UNSUCCESSFUL_STEP4 = "unsuccessful-step4"


@dataclass(frozen=True)
class IterationOutcome:
    kind: Outcome
    rho: float | None
    step_norm: float


@dataclass(frozen=True)
class ArcState:
    x: np.ndarray
    sigma: float
    flag: bool
    ck: float
    k: int
    fx: float


@dataclass(frozen=True)
class TraceRecord:
    """One outer iteration. ``fx``, ``true_grad_norm`` and ``test_loss``
    refer to the iterate after the iteration; the rest to the model at x_k."""

    k: int
    outcome: Outcome
    rho: float | None
    step_norm: float
    sigma: float
    ck: float
    flag: bool
    grad_approx_norm: float
    fx: float
    fx_before: float
    cm_after: float
    sample_size_grad: int
    sample_size_hess: int
    grad_builds: int
    inner_iters: int
    model_decrease: float
    true_grad_norm: float | None = None
    test_loss: float | None = None


@dataclass(frozen=True)
class Report:
    x: np.ndarray
    fx: float
    iterations: int
    trace: tuple[TraceRecord, ...]
    cmt: float
    reason: str  # "converged" | "max_iter"
    grad_norm: float | None  # approximate gradient norm at the last Step 1, if reached
    fx0: float
    cm0: float
    true_grad_norm0: float | None = None
    test_loss0: float | None = None
    true_grad_norm: float | None = None
    ledger: CostLedger | None = field(default=None, compare=False, repr=False)

    @property
    def converged(self) -> bool:
        return self.reason == "converged"


@dataclass(frozen=True)
class TheoreticalConstants:
    delta: float
    sigma_bar: float
    kappa_g: float
    kappa_B: float
    L_H: float
    L_g: float | None
    xi: float
    nu: float | None
    kappa_s: float | None
    assumption_ok: bool  # c >= alpha (1 - beta) kappa_g


def compute_ck(flag: bool, grad_approx_norm: float, cfg: ArcConfig) -> float:
    if flag:
        return cfg.c
    return cfg.alpha * (1.0 - cfg.beta) * grad_approx_norm


def check_step4(step_norm, flag, grad_approx_norm, cfg: ArcConfig) -> bool:
    return bool(step_norm < 1 and flag and cfg.c > cfg.alpha * (1.0 - cfg.beta) * grad_approx_norm)


def rho(fx, fxs, t2_at_0, t2_at_s) -> float:
    denom = t2_at_0 - t2_at_s
    if not denom > 0:
        raise ArcError(f"nonpositive predicted decrease {denom!r}: the step violates the model-decrease contract")
    return (fx - fxs) / denom


def update_sigma(sigma, outcome: IterationOutcome | Outcome, cfg: ArcConfig) -> float:
    kind = outcome.kind if isinstance(outcome, IterationOutcome) else outcome
    if kind is Outcome.SUCCESSFUL:
        return max(cfg.sigma_min, sigma / cfg.gamma)
    if kind is Outcome.UNSUCCESSFUL_STEP5:
        return cfg.gamma * sigma
    return sigma


def update_flag(outcome: IterationOutcome | Outcome, step_norm, flag: bool) -> bool:
    kind = outcome.kind if isinstance(outcome, IterationOutcome) else outcome
    if kind is Outcome.SUCCESSFUL:
        return step_norm >= 1
    if kind is Outcome.UNSUCCESSFUL_STEP4:
        return False
    return flag


def arc_iterate(state: ArcState, oracle, ledger: CostLedger, cfg: ArcConfig, rng, grad=None,
                subsolver=minimize_model, diagnostics=False):
    """Run Steps 1-5 once from ``state``; returns the new state and its trace record.

    ``grad`` is an already computed Step-1 result (the run loop computes it
    first to test for termination).
    """
    x, sigma, flag = state.x, state.sigma, state.flag
    if grad is None:
        grad = oracle.estimate_gradient(x, sigma, cfg, rng, ledger)
    g = grad.g
    gnorm = float(np.linalg.norm(g))

    ck = compute_ck(flag, gnorm, cfg)
    hess, hsample = oracle.estimate_hessian(x, ck, cfg, rng)

    model = CubicModel(state.fx, g, hess, sigma)
    res = subsolver(model, cfg.subsolver_config())
    ledger.charge_hessian_products(len(hsample), hess.calls)
    if not grad.sample.is_full:
        ledger.charge_bb_init(hsample.deficit(grad.sample))

    s = res.s
    snorm = float(np.linalg.norm(s))
    if check_step4(snorm, flag, gnorm, cfg):
        out = IterationOutcome(Outcome.UNSUCCESSFUL_STEP4, None, snorm)
        x_new, fx_new = x, state.fx
    else:
        x_trial = x + s
        fxs = oracle.value(x_trial)
        ledger.charge_function_eval()
        r = rho(state.fx, fxs, 0.0, -res.taylor_decrease)
        if not math.isfinite(fxs):
            r = -math.inf
        if r >= cfg.eta:
            out = IterationOutcome(Outcome.SUCCESSFUL, r, snorm)
            x_new, fx_new = x_trial, fxs
        else:
            out = IterationOutcome(Outcome.UNSUCCESSFUL_STEP5, r, snorm)
            x_new, fx_new = x, state.fx

    new_state = ArcState(
        x=x_new,
        sigma=update_sigma(sigma, out, cfg),
        flag=update_flag(out, snorm, flag),
        ck=ck,
        k=state.k + 1,
        fx=fx_new,
    )
    ledger.mark_outcome(state.k, out.kind.value)
    tg = tl = None
    if diagnostics:
        tg = float(np.linalg.norm(oracle.gradient(x_new)))
        if hasattr(oracle, "test_loss"):
            tl = oracle.test_loss(x_new)
    rec = TraceRecord(
        k=state.k,
        outcome=out.kind,
        rho=out.rho,
        step_norm=snorm,
        sigma=sigma,
        ck=ck,
        flag=flag,
        grad_approx_norm=gnorm,
        fx=fx_new,
        fx_before=state.fx,
        cm_after=ledger.cm,
        sample_size_grad=grad.sample_size,
        sample_size_hess=len(hsample),
        grad_builds=grad.loop_count,
        inner_iters=res.inner_iters,
        model_decrease=res.model_decrease,
        true_grad_norm=tg,
        test_loss=tl,
    )
    return new_state, rec


def run(oracle, cfg: ArcConfig, seed=0, x0=None, diagnostics=False, stop_on_true_gradient=False,
        subsolver=minimize_model) -> Report:
    """Iterate until ||g_est(x_k)|| <= epsilon or k reaches max_iter.

    With ``stop_on_true_gradient`` the test uses the exact gradient instead
    (hitting-time experiments). Deterministic given (oracle, cfg, seed).
    """
    rng = np.random.default_rng(seed)
    ledger = CostLedger(oracle.N)
    x = np.zeros(oracle.n) if x0 is None else np.array(x0, dtype=float)
    fx = oracle.value(x)
    ledger.charge_function_eval()
    cm0 = ledger.cm
    tg0 = tl0 = None
    if diagnostics or stop_on_true_gradient:
        tg0 = float(np.linalg.norm(oracle.gradient(x)))
        if diagnostics and hasattr(oracle, "test_loss"):
            tl0 = oracle.test_loss(x)
    state = ArcState(x=x, sigma=cfg.sigma0, flag=True, ck=cfg.c, k=0, fx=fx)
    trace = []
    reason = "max_iter"
    gnorm = None
    true_gn = tg0
    while True:
        if stop_on_true_gradient and true_gn <= cfg.epsilon:
            reason = "converged"
            break
        if state.k >= cfg.max_iter:
            break
        ledger.set_iteration(state.k)
        grad = oracle.estimate_gradient(state.x, state.sigma, cfg, rng, ledger)
        gnorm = float(np.linalg.norm(grad.g))
        if not stop_on_true_gradient and gnorm <= cfg.epsilon:
            reason = "converged"
            break
        state, rec = arc_iterate(state, oracle, ledger, cfg, rng, grad=grad, subsolver=subsolver,
                                 diagnostics=diagnostics or stop_on_true_gradient)
        trace.append(rec)
        true_gn = rec.true_grad_norm
    if diagnostics and true_gn is None:
        true_gn = float(np.linalg.norm(oracle.gradient(state.x)))
    return Report(
        x=state.x,
        fx=state.fx,
        iterations=state.k,
        trace=tuple(trace),
        cmt=ledger.cm,
        reason=reason,
        grad_norm=gnorm,
        fx0=fx,
        cm0=cm0,
        true_grad_norm0=tg0,
        test_loss0=tl0,
        true_grad_norm=true_gn,
        ledger=ledger,
    )


def theoretical_constants(cfg: ArcConfig, kappa_g, kappa_B, L_H, L_g=None) -> TheoreticalConstants:
    """Analysis constants for user-supplied derivative bounds.

    ``nu`` and ``kappa_s`` are only defined for the "tcsub" and "tc.s"
    stopping rules ("tc.s" also needs ``L_g``); they are None otherwise.
    """
    smin = cfg.sigma_min
    delta = cfg.kappa * (kappa_B / smin + 1.0) * max(kappa_g / smin, kappa_B / smin + 1.0)
    sigma_bar = max(
        (6 * delta + 3 * cfg.alpha * kappa_B + L_H) / (2 * (1 - cfg.eta) - 3 * cfg.alpha),
        (6 * delta + 3 * cfg.c + L_H) / (2 * (1 - cfg.eta)),
    )
    xi = max(cfg.c, cfg.alpha * (kappa_B + sigma_bar))
    nu = None
    if cfg.termination_rule == "tcsub":
        nu = 1.0 / (delta + xi + L_H / 2 + cfg.beta + sigma_bar)
    elif cfg.termination_rule == "tc.s" and L_g is not None:
        nu = (1 - cfg.beta) / ((1 + cfg.beta) * delta + xi + L_H / 2 + cfg.beta * L_g + sigma_bar)
    kappa_s = None if nu is None else 1.0 / (cfg.eta * smin / 3.0 * nu**1.5)
    return TheoreticalConstants(
        delta=delta,
        sigma_bar=sigma_bar,
        kappa_g=kappa_g,
        kappa_B=kappa_B,
        L_H=L_H,
        L_g=L_g,
        xi=xi,
        nu=nu,
        kappa_s=kappa_s,
        assumption_ok=cfg.c >= cfg.alpha * (1 - cfg.beta) * kappa_g,
    )
