"""Parameter records, Halfin-Whitt validation, fluid quantities, scaling maps.

The network has two customer classes and two server pools; pool 1 serves only
class 1, pool 2 serves both (service rate of class 2 at pool 1 is identically
zero). Rates scale linearly in n with sqrt(n) second-order corrections; the
validated parameter set makes both pools exactly critically loaded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import (
    NegativeRate,
    NonpositiveRate,
    OverloadViolation,
    PoolingViolation,
    PreconditionViolation,
)

POOLING_TOL = 1e-12

Vec2 = tuple[float, float]
Mat2 = tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class LimitParams:
    """First- and second-order rate parameters of the scaling regime.

    lam      first-order arrival rates per class (positive)
    mu       service rates by class x pool; mu[1][0] must be 0
    gamma    abandonment rates per class (nonnegative)
    nu       pool-size fractions (positive)
    lam_hat  second-order (sqrt n) arrival coefficients
    mu_hat   second-order service coefficients; mu_hat[1][0] must be 0
    """

    lam: Vec2
    mu: Mat2
    gamma: Vec2
    nu: Vec2
    lam_hat: Vec2 = (0.0, 0.0)
    mu_hat: Mat2 = ((0.0, 0.0), (0.0, 0.0))

    @property
    def mu11(self) -> float:
        return self.mu[0][0]

    @property
    def mu12(self) -> float:
        return self.mu[0][1]

    @property
    def mu22(self) -> float:
        return self.mu[1][1]


@dataclass(frozen=True)
class FluidSolution:
    """Steady-state fluid allocation fractions, headcounts, and drift constant.

    xi    allocation fractions by class x pool, entries in [0, 1]
    xstar steady-state fluid headcounts per class
    zstar steady-state fluid allocations, zstar[i][j] = xi[i][j] * nu[j]
    ell   constant term of the limiting diffusion drift
    """

    xi: Mat2
    xstar: Vec2
    zstar: Mat2
    ell: Vec2


@dataclass(frozen=True)
class SystemInstance:
    """A finite-n system produced by the default embedding of LimitParams."""

    n: int
    lam_n: Vec2
    mu_n: Mat2
    gamma_n: Vec2
    pools: tuple[int, int]
    n12: int
    n22: int
    ell_n: Vec2
    fluid: FluidSolution
    params: LimitParams
    sqrt_n: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sqrt_n", math.sqrt(self.n))

    @property
    def total_pool(self) -> int:
        return self.pools[0] + self.pools[1]


@dataclass(frozen=True)
class CostSpec:
    """Running-cost weights and exponents, with budgets for constrained modes.

    xi       queue-cost weights (positive)
    zeta     idleness-cost weights (nonnegative)
    m        queue-cost exponent, >= 1
    m_tilde  constraint-cost exponent, >= 1 (must be < m for the fairness mode)
    delta    idleness budgets for the budget-constrained problem
    theta    fairness ratio for the fairness-constrained problem
    """

    xi: Vec2 = (1.0, 1.0)
    zeta: Vec2 = (0.0, 0.0)
    m: float = 1.0
    m_tilde: float = 1.0
    delta: Vec2 = (0.1, 0.1)
    theta: float = 1.0

    def validate(self, problem: str = "P1") -> None:
        if not (self.xi[0] > 0 and self.xi[1] > 0):
            raise NonpositiveRate("queue-cost weights must be positive")
        if self.zeta[0] < 0 or self.zeta[1] < 0:
            raise PreconditionViolation("idleness-cost weights must be nonnegative")
        if self.m < 1 or self.m_tilde < 1:
            raise PreconditionViolation("cost exponents must be >= 1")
        if problem == "P2" and not (self.delta[0] > 0 and self.delta[1] > 0):
            raise PreconditionViolation("idleness budgets must be positive")
        if problem == "P3":
            if self.theta <= 0:
                raise PreconditionViolation("fairness ratio must be positive")
            if not self.m_tilde < self.m:
                raise PreconditionViolation(
                    "fairness mode requires constraint exponent < queue exponent"
                )


@dataclass(frozen=True)
class ControlVector:
    """A point of the control set: u_c = (t, 1-t), u_s = (s, 1-s)."""

    t: float
    s: float

    def __post_init__(self):
        if not (-1e-12 <= self.t <= 1 + 1e-12 and -1e-12 <= self.s <= 1 + 1e-12):
            raise PreconditionViolation(f"control ({self.t}, {self.s}) outside [0,1]^2")

    @property
    def uc(self) -> Vec2:
        return (self.t, 1.0 - self.t)

    @property
    def us(self) -> Vec2:
        return (self.s, 1.0 - self.s)


def validate_limit_params(p: LimitParams) -> None:
    """Check positivity, the overload condition, and the pooling identity."""
    if p.mu[1][0] != 0.0 or p.mu_hat[1][0] != 0.0:
        raise PreconditionViolation("class-2 service rate at pool 1 must be 0")
    if not (p.lam[0] > 0 and p.lam[1] > 0):
        raise NonpositiveRate("arrival rates must be positive")
    if not (p.nu[0] > 0 and p.nu[1] > 0):
        raise NonpositiveRate("pool fractions must be positive")
    if not (p.mu11 > 0 and p.mu12 > 0 and p.mu22 > 0):
        raise NonpositiveRate("service rates mu11, mu12, mu22 must be positive")
    if p.gamma[0] < 0 or p.gamma[1] < 0:
        raise NonpositiveRate("abandonment rates must be nonnegative")
    if not p.lam[0] > p.mu11 * p.nu[0]:
        raise OverloadViolation(
            f"lambda_1 = {p.lam[0]} must exceed mu_11 * nu_1 = {p.mu11 * p.nu[0]}"
        )
    lhs = (p.lam[0] - p.mu11 * p.nu[0]) / (p.mu12 * p.nu[1]) + p.lam[1] / (
        p.mu22 * p.nu[1]
    )
    if abs(lhs - 1.0) > POOLING_TOL:
        raise PoolingViolation(
            f"resource-pooling identity is {lhs!r}, expected 1 within {POOLING_TOL}"
        )


def fluid_solution(p: LimitParams) -> FluidSolution:
    """Steady-state fluid quantities of a validated parameter set."""
    validate_limit_params(p)
    xi12 = (p.lam[0] - p.mu11 * p.nu[0]) / (p.mu12 * p.nu[1])
    xi22 = p.lam[1] / (p.mu22 * p.nu[1])
    xi = ((1.0, xi12), (0.0, xi22))
    xstar = (p.nu[0] + xi12 * p.nu[1], xi22 * p.nu[1])
    zstar = (
        (1.0 * p.nu[0], xi12 * p.nu[1]),
        (0.0, xi22 * p.nu[1]),
    )
    ell = (
        p.lam_hat[0] - p.mu_hat[0][0] * zstar[0][0] - p.mu_hat[0][1] * zstar[0][1],
        p.lam_hat[1] - p.mu_hat[1][1] * zstar[1][1],
    )
    return FluidSolution(xi=xi, xstar=xstar, zstar=zstar, ell=ell)


def instantiate(p: LimitParams, n: int) -> SystemInstance:
    """Default embedding of the n-th system.

    lam_n = n*lam + sqrt(n)*lam_hat, mu_n = mu + mu_hat/sqrt(n), gamma_n = gamma,
    pool sizes round(n*nu_j); pool 2 is split by the floor of xi12 * N2.
    """
    if n < 1:
        raise PreconditionViolation("scaling index must be >= 1")
    fl = fluid_solution(p)
    rn = math.sqrt(n)
    lam_n = (n * p.lam[0] + rn * p.lam_hat[0], n * p.lam[1] + rn * p.lam_hat[1])
    mu_n = (
        (p.mu[0][0] + p.mu_hat[0][0] / rn, p.mu[0][1] + p.mu_hat[0][1] / rn),
        (0.0, p.mu[1][1] + p.mu_hat[1][1] / rn),
    )
    if lam_n[0] <= 0 or lam_n[1] <= 0:
        raise NegativeRate(f"embedded arrival rates {lam_n} not positive at n={n}")
    if mu_n[0][0] <= 0 or mu_n[0][1] <= 0 or mu_n[1][1] <= 0:
        raise NegativeRate(f"embedded service rates {mu_n} not positive at n={n}")
    pools = (round(n * p.nu[0]), round(n * p.nu[1]))
    n12 = math.floor(fl.xi[0][1] * pools[1])
    n22 = pools[1] - n12
    ell_n = (
        (lam_n[0] - mu_n[0][0] * fl.zstar[0][0] * n - mu_n[0][1] * fl.zstar[0][1] * n)
        / rn,
        (lam_n[1] - mu_n[1][1] * fl.zstar[1][1] * n) / rn,
    )
    return SystemInstance(
        n=n,
        lam_n=lam_n,
        mu_n=mu_n,
        gamma_n=p.gamma,
        pools=pools,
        n12=n12,
        n22=n22,
        ell_n=ell_n,
        fluid=fl,
        params=p,
    )


def diffusion_scale(x, inst: SystemInstance):
    """Centered, sqrt(n)-scaled state: (x - n*xstar)/sqrt(n), componentwise."""
    xs = inst.fluid.xstar
    return (
        (x[0] - inst.n * xs[0]) / inst.sqrt_n,
        (x[1] - inst.n * xs[1]) / inst.sqrt_n,
    )
