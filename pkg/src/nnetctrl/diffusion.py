"""The limiting controlled diffusion: drift, running costs, Lagrangians,
Euler-Maruyama integration, and Monte Carlo ergodic-cost estimates.

State lives in the plane (scaled surpluses per class). The control is a pair
of unit-simplex points encoded by (t, s): t splits the positive total surplus
across the two queues, s splits the negative total surplus across the two
pools' idleness. Drift and costs are piecewise smooth across {x1 + x2 = 0}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InsufficientBatches, PreconditionViolation
from .model import ControlVector, CostSpec, LimitParams
from .policies import MarkovControlField

__all__ = [
    "ControlVector",
    "DriftData",
    "drift_b",
    "drift_b_arrays",
    "running_cost_r",
    "constraint_costs_rj",
    "lagrangian_g",
    "lagrangian_h",
    "em_step",
    "ergodic_cost_mc",
    "running_cost_functional",
    "lagrangian_g_functional",
    "lagrangian_h_functional",
]


def _pos(v):
    return v * (v > 0)


def _neg(v):
    return -v * (v < 0)


@dataclass(frozen=True)
class DriftData:
    """Coefficient matrices of the limit drift, stored by their diagonals.

    b1: shared-pool service rates (mu12, mu22); b2: (mu11 - mu12, 0), the
    dedicated-pool correction active at negative total surplus; gamma:
    abandonment rates; ell: constant term; sigma: noise diagonal
    (sqrt(2 lam1), sqrt(2 lam2)).
    """

    b1: tuple
    b2: tuple
    gamma: tuple
    ell: tuple
    sigma: tuple

    def __post_init__(self):
        if not (self.b1[0] > 0 and self.b1[1] > 0):
            raise PreconditionViolation("shared-pool service rates must be positive")

    @classmethod
    def from_params(cls, p: LimitParams) -> "DriftData":
        from .model import fluid_solution

        fl = fluid_solution(p)
        return cls(
            b1=(p.mu12, p.mu22),
            b2=(p.mu11 - p.mu12, 0.0),
            gamma=p.gamma,
            ell=fl.ell,
            sigma=(math.sqrt(2.0 * p.lam[0]), math.sqrt(2.0 * p.lam[1])),
        )


def drift_b(x, u: ControlVector, d: DriftData):
    """Drift at state x under control u."""
    ex = x[0] + x[1]
    exp = _pos(ex)
    exm = _neg(ex)
    uc = (u.t, 1.0 - u.t)
    us = (u.s, 1.0 - u.s)
    return (
        -d.b1[0] * (x[0] - exp * uc[0])
        + exm * d.b2[0] * us[0]
        - exp * d.gamma[0] * uc[0]
        + d.ell[0],
        -d.b1[1] * (x[1] - exp * uc[1])
        + exm * d.b2[1] * us[1]
        - exp * d.gamma[1] * uc[1]
        + d.ell[1],
    )


def drift_b_arrays(x1, x2, t, s, d: DriftData):
    """Vectorized drift over numpy arrays of states and controls."""
    ex = x1 + x2
    exp = _pos(ex)
    exm = _neg(ex)
    b1 = (
        -d.b1[0] * (x1 - exp * t)
        + exm * d.b2[0] * s
        - exp * d.gamma[0] * t
        + d.ell[0]
    )
    b2 = (
        -d.b1[1] * (x2 - exp * (1.0 - t))
        + exm * d.b2[1] * (1.0 - s)
        - exp * d.gamma[1] * (1.0 - t)
        + d.ell[1]
    )
    return b1, b2


def running_cost_r(x, u: ControlVector, cost: CostSpec) -> float:
    """Queue cost on positive total surplus plus idleness cost on negative."""
    ex = x[0] + x[1]
    m = cost.m
    return _pos(ex) ** m * (
        cost.xi[0] * u.t**m + cost.xi[1] * (1.0 - u.t) ** m
    ) + _neg(ex) ** m * (cost.zeta[0] * u.s**m + cost.zeta[1] * (1.0 - u.s) ** m)


def constraint_costs_rj(x, u: ControlVector, cost: CostSpec):
    """Per-pool idleness running costs."""
    exm = _neg(x[0] + x[1])
    mt = cost.m_tilde
    return ((exm * u.s) ** mt, (exm * (1.0 - u.s)) ** mt)


def lagrangian_g(x, u: ControlVector, cost: CostSpec, lam) -> float:
    """Queue cost plus nonnegative multipliers on the idleness budgets."""
    if lam[0] < 0 or lam[1] < 0:
        raise PreconditionViolation("budget multipliers must be nonnegative")
    r_o = _pos(x[0] + x[1]) ** cost.m * (
        cost.xi[0] * u.t**cost.m + cost.xi[1] * (1.0 - u.t) ** cost.m
    )
    r1, r2 = constraint_costs_rj(x, u, cost)
    return r_o + lam[0] * (r1 - cost.delta[0]) + lam[1] * (r2 - cost.delta[1])


def lagrangian_h(
    x,
    u: ControlVector,
    cost: CostSpec,
    lam: float,
    eps: float = 0.0,
    kappa2: float = 0.0,
) -> float:
    """Queue cost plus a signed multiplier on the idleness-ratio constraint;
    the optional regularization adds eps*kappa2*|x|^m."""
    r_o = _pos(x[0] + x[1]) ** cost.m * (
        cost.xi[0] * u.t**cost.m + cost.xi[1] * (1.0 - u.t) ** cost.m
    )
    r1, r2 = constraint_costs_rj(x, u, cost)
    out = r_o + lam * (r1 - cost.theta * r2)
    if eps:
        out += eps * kappa2 * math.hypot(x[0], x[1]) ** cost.m
    return out


def em_step(x, v: MarkovControlField, dt: float, dw, d: DriftData):
    """One Euler-Maruyama step: drift at the field's control plus diagonal
    noise scaled by sqrt(dt). dw is a standard-normal pair."""
    u = v.evaluate(x)
    b = drift_b(x, u, d)
    rdt = math.sqrt(dt)
    return (
        x[0] + b[0] * dt + d.sigma[0] * rdt * dw[0],
        x[1] + b[1] * dt + d.sigma[1] * rdt * dw[1],
    )


def running_cost_functional(cost: CostSpec) -> Callable:
    """Scalar/array evaluator f(x1, x2, t, s) of the running cost."""
    xi1, xi2 = cost.xi
    z1, z2 = cost.zeta
    m = cost.m

    def f(x1, x2, t, s):
        ex = x1 + x2
        return _pos(ex) ** m * (xi1 * t**m + xi2 * (1.0 - t) ** m) + _neg(ex) ** m * (
            z1 * s**m + z2 * (1.0 - s) ** m
        )

    return f


def lagrangian_g_functional(cost: CostSpec, lam) -> Callable:
    xi1, xi2 = cost.xi
    m, mt = cost.m, cost.m_tilde
    l1, l2 = lam
    d1, d2 = cost.delta

    def f(x1, x2, t, s):
        ex = x1 + x2
        exm = _neg(ex)
        r_o = _pos(ex) ** m * (xi1 * t**m + xi2 * (1.0 - t) ** m)
        return r_o + l1 * ((exm * s) ** mt - d1) + l2 * ((exm * (1.0 - s)) ** mt - d2)

    return f


def lagrangian_h_functional(
    cost: CostSpec, lam: float, eps: float = 0.0, kappa2: float = 0.0
) -> Callable:
    xi1, xi2 = cost.xi
    m, mt = cost.m, cost.m_tilde
    theta = cost.theta

    def f(x1, x2, t, s):
        ex = x1 + x2
        exm = _neg(ex)
        out = _pos(ex) ** m * (xi1 * t**m + xi2 * (1.0 - t) ** m) + lam * (
            (exm * s) ** mt - theta * (exm * (1.0 - s)) ** mt
        )
        if eps:
            out = out + eps * kappa2 * (x1 * x1 + x2 * x2) ** (0.5 * m)
        return out

    return f


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    nbatches: int
    paths: int


def ergodic_cost_mc(
    v: MarkovControlField,
    functional: Callable,
    T: float,
    dt: float,
    burn_in: float,
    seed: int,
    data: DriftData,
    x0=(0.0, 0.0),
    nbatches: int = 20,
    n_paths: int = 1,
) -> MCEstimate:
    """Time-average of functional(x1, x2, t, s) along Euler-Maruyama paths.

    Runs n_paths independent paths of horizon T each (scalar loop for a
    single path, vectorized across paths otherwise); standard error by batch
    means pooled over paths. Reproducible given seed.
    """
    if not T > burn_in >= 0:
        raise PreconditionViolation(f"need T > burn_in >= 0, got {T}, {burn_in}")
    n_steps = int(round(T / dt))
    burn_steps = int(round(burn_in / dt))
    span = n_steps - burn_steps
    if span < nbatches:
        raise InsufficientBatches("fewer post-burn-in steps than batches")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if n_paths == 1:
        sums = _mc_scalar(v, functional, n_steps, burn_steps, dt, rng, data, x0, nbatches)
        batch_means = [s / c for s, c in sums]
    else:
        batch_means = _mc_vector(
            v, functional, n_steps, burn_steps, dt, rng, data, x0, nbatches, n_paths
        )
    arr = np.asarray(batch_means, dtype=float)
    if arr.size < 2:
        raise InsufficientBatches("need at least 2 batches for a standard error")
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(arr.size))
    return MCEstimate(mean=mean, std_error=se, nbatches=arr.size, paths=n_paths)


def _mc_scalar(v, functional, n_steps, burn_steps, dt, rng, data, x0, nbatches):
    x1, x2 = float(x0[0]), float(x0[1])
    span = n_steps - burn_steps
    rdt = math.sqrt(dt)
    s1 = data.sigma[0] * rdt
    s2 = data.sigma[1] * rdt
    eval_field = v.evaluate
    sums = [[0.0, 0] for _ in range(nbatches)]
    chunk = 1 << 15
    buf = rng.standard_normal(2 * chunk).tolist()
    bi = 0
    b1c, b2c = data.b1
    g1, g2 = data.gamma
    a1, a2 = data.b2
    l1, l2 = data.ell
    for k in range(n_steps):
        u = eval_field((x1, x2))
        t, s = u.t, u.s
        if k >= burn_steps:
            cell = (k - burn_steps) * nbatches // span
            row = sums[cell]
            row[0] += functional(x1, x2, t, s) * dt
            row[1] += 1
        ex = x1 + x2
        exp = ex if ex > 0 else 0.0
        exm = -ex if ex < 0 else 0.0
        d1 = -b1c * (x1 - exp * t) + exm * a1 * s - exp * g1 * t + l1
        d2 = (
            -b2c * (x2 - exp * (1.0 - t))
            + exm * a2 * (1.0 - s)
            - exp * g2 * (1.0 - t)
            + l2
        )
        if bi + 2 > len(buf):
            buf = rng.standard_normal(2 * chunk).tolist()
            bi = 0
        x1 += d1 * dt + s1 * buf[bi]
        x2 += d2 * dt + s2 * buf[bi + 1]
        bi += 2
    return [(row[0], row[1] * dt) for row in sums]


def _mc_vector(v, functional, n_steps, burn_steps, dt, rng, data, x0, nbatches, P):
    x1 = np.full(P, float(x0[0]))
    x2 = np.full(P, float(x0[1]))
    span = n_steps - burn_steps
    rdt = math.sqrt(dt)
    sums = np.zeros((nbatches, P))
    counts = np.zeros(nbatches, dtype=int)
    for k in range(n_steps):
        t, s = v.evaluate_arrays(x1, x2)
        if k >= burn_steps:
            cell = (k - burn_steps) * nbatches // span
            sums[cell] += functional(x1, x2, t, s) * dt
            counts[cell] += 1
        d1, d2 = drift_b_arrays(x1, x2, t, s, data)
        g = rng.standard_normal((2, P))
        x1 = x1 + d1 * dt + data.sigma[0] * rdt * g[0]
        x2 = x2 + d2 * dt + data.sigma[1] * rdt * g[1]
    means = sums / (counts[:, None] * dt)
    return means.ravel().tolist()
