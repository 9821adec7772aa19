"""Approximate minimisation of the cubic model

    m(s) = f0 + g.s + 1/2 s.Bs + (sigma/3) ||s||^3

by Barzilai-Borwein gradient steps with a nonmonotone (max-of-last-M)
Armijo linesearch. B is only available through products v -> Bv. Each BB
iteration costs exactly one product: B(s + lam d) = Bs + lam Bd, so
backtracking trials are free.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

RULES = ("constant", "tcsub", "tc.s")


class SubsolverError(RuntimeError):
    """The model could not be decreased to the requested tolerance."""


@dataclass(frozen=True)
class CubicModel:
    f0: float
    g: np.ndarray
    hess_action: Callable[[np.ndarray], np.ndarray]
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class SubsolverConfig:
    beta: float = 0.5
    rule: str = "constant"
    beta_k_const: float = 0.5
    max_inner: int = 500
    nonmonotone_memory: int = 10
    step_clamp: tuple[float, float] = (1e-10, 1e10)
    armijo: float = 1e-4

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown termination rule {self.rule!r}; expected one of {RULES}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0 < self.beta_k_const <= self.beta:
            raise ValueError(f"need 0 < beta_k <= beta, got beta_k={self.beta_k_const}, beta={self.beta}")
        lo, hi = self.step_clamp
        if not 0 < lo < hi:
            raise ValueError(f"invalid steplength clamp {self.step_clamp}")
        if self.max_inner < 1 or self.nonmonotone_memory < 1:
            raise ValueError("max_inner and nonmonotone_memory must be >= 1")


@dataclass(frozen=True)
class SubsolverResult:
    s: np.ndarray
    Bs: np.ndarray
    model_decrease: float  # m(0) - m(s)
    model_grad_norm: float
    threshold: float
    inner_iters: int  # Hessian-vector products used
    taylor_decrease: float  # T2(0) - T2(s), denominator of the acceptance ratio
    steplengths: tuple[float, ...] = ()  # accepted BB trial steplengths


def model_value(model: CubicModel, s, Bs=None) -> float:
    if Bs is None:
        Bs = model.hess_action(s)
    ns = np.linalg.norm(s)
    return float(model.f0 + model.g @ s + 0.5 * (s @ Bs) + model.sigma / 3.0 * ns**3)


def model_gradient(model: CubicModel, s, Bs=None):
    if Bs is None:
        Bs = model.hess_action(s)
    return model.g + Bs + model.sigma * np.linalg.norm(s) * s


def taylor_decrease(model: CubicModel, s, Bs=None) -> float:
    """T2(0) - T2(s) = -(g.s + 1/2 s.Bs)."""
    if Bs is None:
        Bs = model.hess_action(s)
    return -float(model.g @ s + 0.5 * (s @ Bs))


def termination_threshold(rule, beta, beta_k_const, s, g) -> float:
    gn = float(np.linalg.norm(g))
    sn = float(np.linalg.norm(s))
    if rule == "constant":
        return beta_k_const * gn
    if rule == "tcsub":
        return beta * min(sn * sn, gn)
    if rule == "tc.s":
        return beta * min(1.0, sn) * gn
    raise ValueError(f"unknown termination rule {rule!r}")


def cauchy_step(g, Bg, sigma):
    """Exact minimiser of the cubic model along -g (positive root, stable form)."""
    gn2 = float(g @ g)
    gn = math.sqrt(gn2)
    curv = float(g @ Bg)
    a = sigma * gn2 * gn
    root = math.sqrt(curv * curv + 4.0 * a * gn2)
    if curv >= 0:
        return 2.0 * gn2 / (curv + root)
    return (root - curv) / (2.0 * a)


def minimize_model(model: CubicModel, cfg: SubsolverConfig = SubsolverConfig()) -> SubsolverResult:
    g = np.asarray(model.g, dtype=float)
    if not np.any(g):
        raise ValueError("cubic model with zero gradient: no strict decrease is possible")
    B, sigma, f0 = model.hess_action, model.sigma, model.f0
    lo, hi = cfg.step_clamp

    def value(s, Bs):
        return f0 + g @ s + 0.5 * (s @ Bs) + sigma / 3.0 * np.linalg.norm(s) ** 3

    def grad(s, Bs):
        return g + Bs + sigma * np.linalg.norm(s) * s

    Bg = B(g)
    hv = 1
    t = cauchy_step(g, Bg, sigma)
    s, Bs = -t * g, -t * Bg
    m = value(s, Bs)
    gm = grad(s, Bs)
    hist = deque([m], maxlen=cfg.nonmonotone_memory)
    lam = min(hi, max(lo, t))
    accepted = []

    for it in range(cfg.max_inner):
        gmn = float(np.linalg.norm(gm))
        thr = termination_threshold(cfg.rule, cfg.beta, cfg.beta_k_const, s, g)
        if m < f0 and gmn <= thr:
            return _result(model, s, Bs, m, gmn, thr, hv, accepted)
        d = -gm
        Bd = B(d)
        hv += 1
        ref = max(hist)
        slope = -gmn * gmn
        trial = lam
        while True:
            s_new = s + trial * d
            Bs_new = Bs + trial * Bd
            m_new = value(s_new, Bs_new)
            if m_new <= ref + cfg.armijo * trial * slope:
                break
            trial *= 0.5
            if trial < lo:
                raise SubsolverError(
                    f"linesearch failed at inner iteration {it}: ||grad m||={gmn:.3e}, threshold={thr:.3e}"
                )
        accepted.append(trial)
        gm_new = grad(s_new, Bs_new)
        sd = s_new - s
        y = gm_new - gm
        sy = float(sd @ y)
        if sy > 0:
            lam = float(sd @ sd) / sy if it % 2 == 0 else sy / float(y @ y)
        else:
            # nonpositive curvature along the step: use the geometric-mean length
            yn = float(np.linalg.norm(y))
            lam = float(np.linalg.norm(sd)) / yn if yn > 0 else hi
        lam = min(hi, max(lo, lam))
        s, Bs, m, gm = s_new, Bs_new, m_new, gm_new
        hist.append(m)

    gmn = float(np.linalg.norm(gm))
    thr = termination_threshold(cfg.rule, cfg.beta, cfg.beta_k_const, s, g)
    if m < f0 and gmn <= thr:
        return _result(model, s, Bs, m, gmn, thr, hv, accepted)
    raise SubsolverError(
        f"no model decrease meeting the stopping rule within {cfg.max_inner} inner iterations "
        f"(||grad m||={gmn:.3e}, threshold={thr:.3e})"
    )


def _result(model, s, Bs, m, gmn, thr, hv, accepted):
    return SubsolverResult(
        s=s,
        Bs=Bs,
        model_decrease=float(model.f0 - m),
        model_grad_norm=gmn,
        threshold=thr,
        inner_iters=hv,
        taylor_decrease=-float(model.g @ s + 0.5 * (s @ Bs)),
        steplengths=tuple(accepted),
    )
