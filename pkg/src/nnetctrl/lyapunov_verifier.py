"""Numerical verification of Foster-Lyapunov drift inequalities.

Three verifiers share one report shape: the chain generator applied to a
weighted power function under the priority rule, the diffusion generator
under a control family, and the chain generator under a field-induced policy
on a ball. Each evaluates the drift exhaustively on a finite test set and
fits witness constants (C1, C2) for drift <= C1 - C2 * V: C2 is pushed up by
bisection while the maximum of drift + C2*V stays interior (an interior
maximum is the finite-box signature of the inequality extending outward),
then C1 is that interior maximum. Certification outside the tested set is
explicitly out of scope and reports say so.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import BoxEmpty, InvalidAction
from .model import ControlVector, LimitParams, SystemInstance, diffusion_scale
from .diffusion import DriftData, drift_b, drift_b_arrays
from .policies import MarkovControlField, in_action_set, induced_schedule

SLACK_TOL = 1e-9


def bar_beta(p: LimitParams, k: float) -> float:
    """Weight threshold above which the diffusion drift inequality is
    guaranteed for the priority control family."""
    if k < 2:
        raise ValueError("power must satisfy k >= 2")
    hi = max(p.gamma[0], p.mu11, p.mu12)
    lo = min(p.gamma[0], p.mu11, p.mu12)
    return hi ** (k + 1) / (p.mu22 * lo**k)


def lyapunov_value(xh1, xh2, k: float, beta: float):
    """Weighted power function |x1|^k + beta*|x2|^k (vector-friendly)."""
    return np.abs(xh1) ** k + beta * np.abs(xh2) ** k


@dataclass(frozen=True)
class DriftReport:
    """Fitted drift-inequality witnesses on a finite test set."""

    kind: str
    k: float
    beta: float
    C1: float
    C2: float
    worst_margin: float
    worst_point: tuple
    worst_case: str
    passed: bool
    n_points: int
    note: str

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["field", "value"])
            for name in (
                "kind", "k", "beta", "C1", "C2", "worst_margin", "worst_point",
                "worst_case", "passed", "n_points", "note",
            ):
                w.writerow([name, getattr(self, name)])


def _fit_constants(drift, V, interior, shell):
    """Largest C2 keeping the maximum of drift + C2*V off the shell."""
    if shell.sum() == 0 or interior.sum() == 0:
        c1 = float(drift.max())
        return c1, 0.0, 0.0, True, "degenerate test set: no interior/shell split"

    def slack(c):
        g = drift + c * V
        return float(g[interior].max() - g[shell].max())

    if slack(0.0) < 0:
        c1 = float(drift[interior].max())
        margin = float(drift.max() - c1)
        return c1, 0.0, margin, False, "shell dominates even at C2 = 0"
    hi = 1.0
    while slack(hi) >= 0:
        hi *= 2.0
        if hi > 1e8:
            break
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if slack(mid) >= 0:
            lo = mid
        else:
            hi = mid
    c2 = lo
    g = drift + c2 * V
    c1 = float(g[interior].max())
    margin = float(g.max() - c1)
    passed = margin <= SLACK_TOL and c2 > 0
    return c1, c2, margin, passed, ""


def _sdp_allocation_arrays(x1, x2, inst: SystemInstance):
    """Vectorized priority-rule allocations over integer state arrays."""
    n1, n2 = inst.pools
    n12, n22 = inst.n12, inst.n22
    z11 = np.minimum(x1, n1)
    ov = x1 - z11
    z12 = np.where(x2 >= n22, np.minimum(ov, n12), np.minimum(ov, n2 - x2))
    z22 = np.where(x1 >= n1 + n12, np.minimum(x2, n22), np.minimum(x2, n2 - ov))
    q1 = x1 - z11 - z12
    q2 = x2 - z22
    return z11, z12, z22, q1, q2


def _ctmc_drift_terms(x1, x2, z11, z12, z22, q1, q2, inst, k, beta):
    """Generator applied to the weighted power function, vectorized."""
    rn = inst.sqrt_n
    h = 1.0 / rn
    xs = inst.fluid.xstar
    xh1 = (x1 - inst.n * xs[0]) / rn
    xh2 = (x2 - inst.n * xs[1]) / rn
    v0 = lyapunov_value(xh1, xh2, k, beta)
    up1 = lyapunov_value(xh1 + h, xh2, k, beta) - v0
    dn1 = lyapunov_value(xh1 - h, xh2, k, beta) - v0
    up2 = lyapunov_value(xh1, xh2 + h, k, beta) - v0
    dn2 = lyapunov_value(xh1, xh2 - h, k, beta) - v0
    svc1 = inst.mu_n[0][0] * z11 + inst.mu_n[0][1] * z12
    svc2 = inst.mu_n[1][1] * z22
    ab1 = inst.gamma_n[0] * q1
    ab2 = inst.gamma_n[1] * q2
    return (
        inst.lam_n[0] * up1
        + inst.lam_n[1] * up2
        + (svc1 + ab1) * dn1
        + (svc2 + ab2) * dn2
    )


def ctmc_drift(x, z, inst: SystemInstance, k: float, beta: float) -> float:
    """Exact generator value at one state under an explicit allocation."""
    if not in_action_set(x, z, inst):
        raise InvalidAction(f"allocation {z} not admissible at {x}")
    x1 = np.asarray(float(x[0]))
    x2 = np.asarray(float(x[1]))
    q1 = x[0] - z[0][0] - z[0][1]
    q2 = x[1] - z[1][1]
    return float(
        _ctmc_drift_terms(x1, x2, z[0][0], z[0][1], z[1][1], q1, q2, inst, k, beta)
    )


def _sdp_region(x1, x2, inst: SystemInstance) -> str:
    hi1 = x1 >= inst.pools[0] + inst.n12
    hi2 = x2 >= inst.n22
    if hi1 and hi2:
        return "both-overflow"
    if hi1:
        return "class1-overflow"
    if hi2:
        return "class2-overflow"
    return "underloaded"


def verify_sdp_drift(
    inst: SystemInstance, k: float, beta: float, radius: float
) -> DriftReport:
    """Drift inequality for the chain under the priority rule, exhaustively
    over the lattice box |xhat|_inf <= radius."""
    rn = inst.sqrt_n
    xs = inst.fluid.xstar
    c1 = inst.n * xs[0]
    c2 = inst.n * xs[1]
    lo1 = max(0, math.ceil(c1 - radius * rn))
    hi1 = math.floor(c1 + radius * rn)
    lo2 = max(0, math.ceil(c2 - radius * rn))
    hi2 = math.floor(c2 + radius * rn)
    if hi1 < lo1 or hi2 < lo2:
        raise BoxEmpty(f"no lattice states within radius {radius}")
    x1, x2 = np.meshgrid(
        np.arange(lo1, hi1 + 1, dtype=float),
        np.arange(lo2, hi2 + 1, dtype=float),
        indexing="ij",
    )
    z11, z12, z22, q1, q2 = _sdp_allocation_arrays(x1, x2, inst)
    drift = _ctmc_drift_terms(x1, x2, z11, z12, z22, q1, q2, inst, k, beta)
    xh1 = (x1 - c1) / rn
    xh2 = (x2 - c2) / rn
    V = lyapunov_value(xh1, xh2, k, beta)
    h = 1.0 / rn
    # shell = one lattice layer at the artificial box edges; edges clipped at
    # the orthant boundary are genuine states, not truncation
    shell = np.zeros_like(drift, dtype=bool)
    shell |= xh1 > radius - 1.5 * h
    shell |= xh2 > radius - 1.5 * h
    if lo1 > 0:
        shell |= xh1 < -radius + 1.5 * h
    if lo2 > 0:
        shell |= xh2 < -radius + 1.5 * h
    interior = ~shell
    C1, C2, margin, passed, note = _fit_constants(drift, V, interior, shell)
    g = drift + C2 * V
    w = np.unravel_index(int(np.argmax(g)), g.shape)
    wx = (int(x1[w]), int(x2[w]))
    return DriftReport(
        kind="ctmc-sdp",
        k=k,
        beta=beta,
        C1=C1,
        C2=C2,
        worst_margin=margin,
        worst_point=wx,
        worst_case=_sdp_region(wx[0], wx[1], inst),
        passed=passed,
        n_points=int(drift.size),
        note=note or "finite-box fit; no certification outside the box",
    )


def diffusion_drift(x, u: ControlVector, k: float, beta: float, d: DriftData) -> float:
    """Diffusion generator applied to the weighted power function at (x, u)."""
    lam = (0.5 * d.sigma[0] ** 2, 0.5 * d.sigma[1] ** 2)
    b = drift_b(x, u, d)
    out = 0.0
    for i, w in enumerate((1.0, beta)):
        ax = abs(x[i])
        if ax > 0:
            second = lam[i] * k * (k - 1) * ax ** (k - 2)
            first = b[i] * k * math.copysign(1.0, x[i]) * ax ** (k - 1)
        else:
            second = lam[i] * k * (k - 1) * (1.0 if k == 2 else 0.0)
            first = 0.0
        out += w * (second + first)
    return out


def _diffusion_drift_arrays(x1, x2, t, s, k, beta, d: DriftData):
    lam1 = 0.5 * d.sigma[0] ** 2
    lam2 = 0.5 * d.sigma[1] ** 2
    b1, b2 = drift_b_arrays(x1, x2, t, s, d)

    def one(x, b, lam):
        ax = np.abs(x)
        if k == 2:
            second = lam * 2.0 * np.ones_like(ax)
        else:
            second = lam * k * (k - 1) * np.where(ax > 0, ax ** (k - 2), 0.0)
        first = b * k * np.sign(x) * ax ** (k - 1)
        return second + first

    return one(x1, b1, lam1) + beta * one(x2, b2, lam2)


def priority_control_family(s_step: float = 0.05):
    """The control family with all queueing weight on class 1."""
    m = round(1.0 / s_step)
    return [(1.0, j / m) for j in range(m + 1)]


def verify_diffusion_drift(
    k: float,
    beta: float,
    box: float,
    family,
    d: DriftData,
    x_step: float = 0.1,
) -> DriftReport:
    """Drift inequality for the diffusion generator over a grid of states and
    a finite control family, worst case over the family at each state."""
    if family is None:
        family = priority_control_family()
    npts = 2 * round(box / x_step) + 1
    ax = np.linspace(-box, box, npts)
    x1, x2 = np.meshgrid(ax, ax, indexing="ij")
    drift = None
    for t, s in family:
        cur = _diffusion_drift_arrays(x1, x2, float(t), float(s), k, beta, d)
        drift = cur if drift is None else np.maximum(drift, cur)
    V = lyapunov_value(x1, x2, k, beta)
    step = ax[1] - ax[0] if npts > 1 else 1.0
    shell = (np.abs(x1) > box - 1.5 * step) | (np.abs(x2) > box - 1.5 * step)
    interior = ~shell
    C1, C2, margin, passed, note = _fit_constants(drift, V, interior, shell)
    g = drift + C2 * V
    w = np.unravel_index(int(np.argmax(g)), g.shape)
    return DriftReport(
        kind="diffusion",
        k=k,
        beta=beta,
        C1=C1,
        C2=C2,
        worst_margin=margin,
        worst_point=(float(x1[w]), float(x2[w])),
        worst_case=f"family size {len(family)}",
        passed=passed,
        n_points=int(drift.size),
        note=note or "finite-box fit; no certification outside the box",
    )


def verify_induced_drift(
    inst: SystemInstance,
    v: MarkovControlField,
    k: float,
    beta: float,
    ball: float,
) -> DriftReport:
    """Drift inequality for the chain under the field-induced policy, over
    every lattice state within l1 distance ball*n of the fluid point.
    Infeasible states raise: the ball must sit inside the safe region."""
    xs = inst.fluid.xstar
    c1 = inst.n * xs[0]
    c2 = inst.n * xs[1]
    r = ball * inst.n
    states = []
    for x1 in range(max(0, math.floor(c1 - r)), math.ceil(c1 + r) + 1):
        for x2 in range(max(0, math.floor(c2 - r)), math.ceil(c2 + r) + 1):
            dist = abs(x1 - c1) + abs(x2 - c2)
            if dist <= r:
                states.append((x1, x2, dist))
    if not states:
        raise BoxEmpty(f"no lattice states within ball fraction {ball}")
    drift = np.empty(len(states))
    V = np.empty(len(states))
    shell = np.zeros(len(states), dtype=bool)
    for i, (x1, x2, dist) in enumerate(states):
        dec = induced_schedule((x1, x2), v, inst)
        drift[i] = ctmc_drift((x1, x2), dec.z, inst, k, beta)
        xh = diffusion_scale((x1, x2), inst)
        V[i] = lyapunov_value(xh[0], xh[1], k, beta)
        shell[i] = dist > r - 1.0
    interior = ~shell
    C1, C2, margin, passed, note = _fit_constants(drift, V, interior, shell)
    g = drift + C2 * V
    wi = int(np.argmax(g))
    return DriftReport(
        kind="ctmc-induced",
        k=k,
        beta=beta,
        C1=C1,
        C2=C2,
        worst_margin=margin,
        worst_point=(states[wi][0], states[wi][1]),
        worst_case=f"ball fraction {ball}",
        passed=passed,
        n_points=len(states),
        note=note or f"tested n={inst.n}; finite-ball fit",
    )


def kappa2_from_report(rep: DriftReport) -> float:
    """Coefficient kappa2 with C2 * V_{k,beta}(x) >= kappa2 * |x|_1^k, from
    min(1, beta) * (|a|^k + |b|^k) >= min(1, beta) * 2^(1-k) * (|a|+|b|)^k."""
    return rep.C2 * min(1.0, rep.beta) * 2.0 ** (1.0 - rep.k)


def search_beta(inst: SystemInstance, k: float, betas, radius: float) -> DriftReport:
    """First passing report over a sequence of candidate weights; if none
    pass, the report with the largest fitted C2 is returned."""
    best = None
    for beta in betas:
        rep = verify_sdp_drift(inst, k, beta, radius)
        if rep.passed:
            return rep
        if best is None or rep.C2 > best.C2:
            best = rep
    return best
