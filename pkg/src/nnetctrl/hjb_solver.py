"""Grid solvers for the long-run average-cost control of the limiting
diffusion: unconstrained, idleness-budget constrained, and idleness-ratio
(fairness) constrained.

The generator is discretized on a rectangular box by central second
differences and drift-upwinded first differences, with off-box neighbors
folded into the diagonal (reflecting closure). The scheme is monotone and
conservative, so the discrete chain is an honest CTMC on the grid: policy
evaluation solves a bordered linear system for (V, rho) with V(0) = 0, and
the stationary measure solves the adjoint system.

Control improvement is exact: at each node only one scalar control is live
(the queue split where total surplus is positive, the idleness split where
it is negative), the objective restricted to that scalar is piecewise
polynomial of degree <= 2 for exponents in {1, 2}, and the minimum over
[0, 1] is attained at an endpoint, a drift sign change, or a parabola
vertex; all candidates are enumerated and evaluated. Other exponents fall
back to bounded scalar minimization per node.

Degenerate nodes where the scalar objective is flat are resolved by a
caller-supplied tie value: the budget solver splits idleness proportionally
to the budgets, the fairness solver at the ratio matching the target, and
the plain solver keeps the defaults (1, 0). This selection among equally
optimal controls is what makes the constrained stationary measures land on
the constraint surface instead of chattering between extreme points.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .diffusion import (
    DriftData,
    drift_b,
    drift_b_arrays,
    lagrangian_g_functional,
    lagrangian_h_functional,
    running_cost_functional,
)
from .errors import (
    BracketNotFound,
    InfeasibleBudget,
    MaxIterations,
    MaxOuterIterations,
    PreconditionViolation,
    SingularAdjoint,
    SingularEvaluation,
)
from .model import ControlVector, CostSpec
from .policies import MarkovControlField

TIE_TOL = 1e-11
LAMBDA_CAP = 1e6


@dataclass(frozen=True)
class Grid:
    """Rectangular box [-R1, R1] x [-R2, R2] with uniform spacings; the
    origin must be a node (it anchors the normalization V(0) = 0)."""

    R1: float
    R2: float
    h1: float
    h2: float

    def __post_init__(self):
        for R, h, name in ((self.R1, self.h1, "1"), (self.R2, self.h2, "2")):
            if R <= 0 or h <= 0:
                raise PreconditionViolation("box and spacing must be positive")
            if abs(R / h - round(R / h)) > 1e-9:
                raise PreconditionViolation(
                    f"axis {name}: half-width {R} is not a multiple of {h}, "
                    "origin would fall between nodes"
                )

    @classmethod
    def square(cls, R: float, h: float) -> "Grid":
        return cls(R, R, h, h)

    @property
    def n1(self) -> int:
        return 2 * round(self.R1 / self.h1) + 1

    @property
    def n2(self) -> int:
        return 2 * round(self.R2 / self.h2) + 1

    @property
    def axis1(self) -> np.ndarray:
        return np.linspace(-self.R1, self.R1, self.n1)

    @property
    def axis2(self) -> np.ndarray:
        return np.linspace(-self.R2, self.R2, self.n2)

    @property
    def origin(self) -> tuple:
        return (self.n1 // 2, self.n2 // 2)


@dataclass(frozen=True)
class ValueField:
    grid: Grid
    V: np.ndarray
    rho: float

    def to_csv(self, path) -> None:
        a1, a2 = self.grid.axis1, self.grid.axis2
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["xhat1", "xhat2", "V"])
            for i in range(a1.size):
                for j in range(a2.size):
                    w.writerow(
                        [repr(float(a1[i])), repr(float(a2[j])),
                         repr(float(self.V[i, j]))]
                    )


@dataclass(frozen=True)
class PolicyField:
    grid: Grid
    t: np.ndarray
    s: np.ndarray


@dataclass(frozen=True)
class Multipliers:
    """Multiplier configuration: nonnegative pair for idleness budgets, or a
    signed scalar for the idleness-ratio coupling, plus the optional norm
    regularization weight and the flat-node tie value."""

    budget: tuple | None = None
    fairness: float | None = None
    eps: float = 0.0
    kappa2: float = 0.0
    tie_s: float | None = None

    def __post_init__(self):
        if self.budget is not None and self.fairness is not None:
            raise PreconditionViolation(
                "budget and fairness multipliers are mutually exclusive"
            )


@dataclass
class SolveReport:
    kind: str
    rho: float
    iterations: int
    residual: float
    lam: tuple
    pi_r1: float
    pi_r2: float
    pi_ro: float
    converged: bool
    consistency_gap: float
    note: str = ""
    rho_history: tuple = ()
    value_field: ValueField | None = field(default=None, repr=False)
    policy_field: PolicyField | None = field(default=None, repr=False)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["field", "value"])
            for name in (
                "kind", "rho", "iterations", "residual", "lam",
                "pi_r1", "pi_r2", "pi_ro", "converged", "consistency_gap",
                "note",
            ):
                w.writerow([name, getattr(self, name)])


def stage_cost_functional(cost: CostSpec, mult: Multipliers | None):
    """Array evaluator f(x1, x2, t, s) of the stage cost for the given mode."""
    if mult is None:
        return running_cost_functional(cost)
    if mult.budget is not None:
        return lagrangian_g_functional(cost, mult.budget)
    lam = mult.fairness if mult.fairness is not None else 0.0
    if mult.fairness is not None or mult.eps:
        return lagrangian_h_functional(cost, lam, mult.eps, mult.kappa2)
    return running_cost_functional(cost)


def _is_polynomial(cost: CostSpec, mult: Multipliers | None) -> bool:
    if cost.m not in (1, 2):
        return False
    uses_mt = mult is not None and (
        mult.budget is not None or mult.fairness is not None
    )
    return (not uses_mt) or cost.m_tilde in (1, 2)


def hamiltonian_min(
    x,
    p,
    cost: CostSpec,
    d: DriftData,
    multipliers: Multipliers | None = None,
    tie=(1.0, 0.0),
):
    """Pointwise minimization of b(x, u) . p + stage cost over the control
    square; returns (minimizer, value). Only one scalar is live per sign of
    the total, so the problem is one-dimensional; ties prefer the defaults
    t = 1, s = 0 (or the supplied tie values)."""
    cost_fn = stage_cost_functional(cost, multipliers)
    ex = x[0] + x[1]
    tie_t, tie_s = tie
    if multipliers is not None and multipliers.tie_s is not None:
        tie_s = multipliers.tie_s

    def value(t, s):
        b = drift_b(x, ControlVector(t, s), d)
        return b[0] * p[0] + b[1] * p[1] + float(cost_fn(x[0], x[1], t, s))

    if ex == 0.0:
        return ControlVector(tie_t, tie_s), value(tie_t, tie_s)
    if ex > 0:
        frozen = tie_s
        obj = lambda t: value(t, frozen)
        order = [tie_t, 0.0, 1.0]
    else:
        frozen = tie_t
        obj = lambda s: value(frozen, s)
        order = [tie_s, 0.0, 1.0]
    if _is_polynomial(cost, multipliers):
        f0, fh, f1 = obj(0.0), obj(0.5), obj(1.0)
        a2 = 2.0 * f0 + 2.0 * f1 - 4.0 * fh
        a1 = f1 - f0 - a2
        if abs(a2) > 1e-12 * (1.0 + abs(f0) + abs(f1)):
            order.append(min(1.0, max(0.0, -a1 / (2.0 * a2))))
    else:
        from scipy.optimize import minimize_scalar

        res = minimize_scalar(
            obj, bounds=(0.0, 1.0), method="bounded",
            options={"xatol": 1e-10},
        )
        order.append(float(res.x))
    vals = [obj(c) for c in order]
    best = min(vals)
    tol = TIE_TOL * (1.0 + abs(best))
    choice = next(c for c, v in zip(order, vals) if v <= best + tol)
    if ex > 0:
        return ControlVector(choice, frozen), obj(choice)
    return ControlVector(frozen, choice), obj(choice)


class _Workspace:
    """Per-solve precomputation: node coordinates, sign regions, and the
    pieces shared by evaluation, improvement, and residual readout."""

    def __init__(self, grid: Grid, cost: CostSpec, d: DriftData,
                 mult: Multipliers | None, tie):
        self.grid = grid
        self.d = d
        self.cost_fn = stage_cost_functional(cost, mult)
        self.poly = _is_polynomial(cost, mult)
        self.tie_t, self.tie_s = tie
        if mult is not None and mult.tie_s is not None:
            self.tie_s = mult.tie_s
        self.lam1 = 0.5 * d.sigma[0] ** 2
        self.lam2 = 0.5 * d.sigma[1] ** 2
        X1, X2 = np.meshgrid(grid.axis1, grid.axis2, indexing="ij")
        self.X1, self.X2 = X1, X2
        ex = X1 + X2
        self.pos = ex > 0
        self.neg = ex < 0
        n1, n2 = grid.n1, grid.n2
        self.idx = np.arange(n1 * n2).reshape(n1, n2)
        self.k0 = self.idx[grid.origin]

    def deltas(self, V):
        dup1 = np.zeros_like(V)
        ddn1 = np.zeros_like(V)
        dup2 = np.zeros_like(V)
        ddn2 = np.zeros_like(V)
        dup1[:-1, :] = V[1:, :] - V[:-1, :]
        ddn1[1:, :] = V[:-1, :] - V[1:, :]
        dup2[:, :-1] = V[:, 1:] - V[:, :-1]
        ddn2[:, 1:] = V[:, :-1] - V[:, 1:]
        return dup1, ddn1, dup2, ddn2

    def _weights(self, T, S):
        h1, h2 = self.grid.h1, self.grid.h2
        b1, b2 = drift_b_arrays(self.X1, self.X2, T, S, self.d)
        wu1 = self.lam1 / h1**2 + np.maximum(b1, 0.0) / h1
        wd1 = self.lam1 / h1**2 + np.maximum(-b1, 0.0) / h1
        wu2 = self.lam2 / h2**2 + np.maximum(b2, 0.0) / h2
        wd2 = self.lam2 / h2**2 + np.maximum(-b2, 0.0) / h2
        return wu1, wd1, wu2, wd2

    def operator(self, V, T, S):
        """Discrete generator plus stage cost at the given control field."""
        wu1, wd1, wu2, wd2 = self._weights(T, S)
        dup1, ddn1, dup2, ddn2 = self.deltas(V)
        return (
            wu1 * dup1 + wd1 * ddn1 + wu2 * dup2 + wd2 * ddn2
            + self.cost_fn(self.X1, self.X2, T, S)
        )

    def _generator_entries(self, T, S):
        wu1, wd1, wu2, wd2 = self._weights(T, S)
        idx = self.idx
        rows = [idx[:-1, :].ravel(), idx[1:, :].ravel(),
                idx[:, :-1].ravel(), idx[:, 1:].ravel()]
        cols = [idx[1:, :].ravel(), idx[:-1, :].ravel(),
                idx[:, 1:].ravel(), idx[:, :-1].ravel()]
        data = [wu1[:-1, :].ravel(), wd1[1:, :].ravel(),
                wu2[:, :-1].ravel(), wd2[:, 1:].ravel()]
        dsum = np.zeros_like(wu1)
        dsum[:-1, :] += wu1[:-1, :]
        dsum[1:, :] += wd1[1:, :]
        dsum[:, :-1] += wu2[:, :-1]
        dsum[:, 1:] += wd2[:, 1:]
        rows.append(idx.ravel())
        cols.append(idx.ravel())
        data.append(-dsum.ravel())
        return (
            np.concatenate(rows), np.concatenate(cols), np.concatenate(data)
        )

    def evaluate(self, T, S):
        """Bordered solve of generator(V) + c = rho with V(origin) = 0."""
        N = self.grid.n1 * self.grid.n2
        rows, cols, data = self._generator_entries(T, S)
        rows = np.concatenate([rows, np.arange(N), [N]])
        cols = np.concatenate([cols, np.full(N, N), [self.k0]])
        data = np.concatenate([data, np.full(N, -1.0), [1.0]])
        c = self.cost_fn(self.X1, self.X2, T, S)
        rhs = np.concatenate([-c.ravel(), [0.0]])
        A = coo_matrix((data, (rows, cols)), shape=(N + 1, N + 1)).tocsc()
        try:
            sol = splu(A).solve(rhs)
        except RuntimeError as exc:
            raise SingularEvaluation(str(exc)) from exc
        if not np.all(np.isfinite(sol)):
            raise SingularEvaluation("evaluation produced non-finite values")
        V = sol[:N].reshape(self.grid.n1, self.grid.n2)
        V = V - V[self.grid.origin]
        return V, float(sol[N])

    def stationary(self, T, S):
        """Adjoint solve: probability on nodes annihilating the generator."""
        N = self.grid.n1 * self.grid.n2
        rows, cols, data = self._generator_entries(T, S)
        keep = cols != self.k0
        arows = np.concatenate([cols[keep], np.full(N, self.k0)])
        acols = np.concatenate([rows[keep], np.arange(N)])
        adata = np.concatenate([data[keep], np.ones(N)])
        rhs = np.zeros(N)
        rhs[self.k0] = 1.0
        M = coo_matrix((adata, (arows, acols)), shape=(N, N)).tocsc()
        try:
            pi = splu(M).solve(rhs)
        except RuntimeError as exc:
            raise SingularAdjoint(str(exc)) from exc
        if not np.all(np.isfinite(pi)) or pi.min() < -1e-8:
            raise SingularAdjoint(
                f"adjoint solution has mass {pi.min():.3e} below zero"
            )
        pi = np.maximum(pi, 0.0)
        pi /= pi.sum()
        return pi.reshape(self.grid.n1, self.grid.n2)

    def _phi_candidates(self, sel, Tc, Sc, base, dup1, ddn1, dup2, ddn2):
        h1, h2 = self.grid.h1, self.grid.h2
        x1 = self.X1[sel][:, None]
        x2 = self.X2[sel][:, None]
        b1, b2 = drift_b_arrays(x1, x2, Tc, Sc, self.d)
        return (
            base[sel][:, None]
            + np.maximum(b1, 0.0) / h1 * dup1[sel][:, None]
            + np.maximum(-b1, 0.0) / h1 * ddn1[sel][:, None]
            + np.maximum(b2, 0.0) / h2 * dup2[sel][:, None]
            + np.maximum(-b2, 0.0) / h2 * ddn2[sel][:, None]
            + self.cost_fn(x1, x2, Tc, Sc)
        )

    @staticmethod
    def _first_within_tol(phi):
        best = phi.min(axis=1)
        tol = TIE_TOL * (1.0 + np.abs(best))
        return np.argmax(phi <= (best + tol)[:, None], axis=1)

    def _kink(self, b0, slope):
        with np.errstate(divide="ignore", invalid="ignore"):
            k = -b0 / slope
        return np.clip(np.nan_to_num(k, nan=0.0, posinf=0.0, neginf=0.0), 0.0, 1.0)

    def _vertex(self, a2, lin):
        with np.errstate(divide="ignore", invalid="ignore"):
            v = -lin / (2.0 * a2)
        return np.clip(np.nan_to_num(v, nan=0.0, posinf=0.0, neginf=0.0), 0.0, 1.0)

    def improve(self, V):
        """Exact minimization of the discrete Hamiltonian at every node."""
        dup1, ddn1, dup2, ddn2 = self.deltas(V)
        h1, h2 = self.grid.h1, self.grid.h2
        base = (
            self.lam1 / h1**2 * (dup1 + ddn1)
            + self.lam2 / h2**2 * (dup2 + ddn2)
        )
        T = np.full(V.shape, self.tie_t)
        S = np.full(V.shape, self.tie_s)
        if not self.poly:
            self._improve_scalar(V, T, S, base, dup1, ddn1, dup2, ddn2)
            return T, S

        if self.pos.any():
            sel = self.pos
            x1, x2 = self.X1[sel], self.X2[sel]
            b1_0, b2_0 = drift_b_arrays(x1, x2, 0.0, self.tie_s, self.d)
            b1_1, b2_1 = drift_b_arrays(x1, x2, 1.0, self.tie_s, self.d)
            c1, c2 = b1_1 - b1_0, b2_1 - b2_0
            f0 = self.cost_fn(x1, x2, 0.0, self.tie_s)
            fh = self.cost_fn(x1, x2, 0.5, self.tie_s)
            f1 = self.cost_fn(x1, x2, 1.0, self.tie_s)
            a2 = 2.0 * f0 + 2.0 * f1 - 4.0 * fh
            a1 = f1 - f0 - a2
            small = np.abs(a2) <= 1e-12 * (1.0 + np.abs(f0) + np.abs(f1))
            a2g = np.where(small, np.nan, a2)
            d1p, d1m = dup1[sel] / h1, -ddn1[sel] / h1
            d2p, d2m = dup2[sel] / h2, -ddn2[sel] / h2
            cands = [np.full_like(x1, self.tie_t), np.zeros_like(x1),
                     np.ones_like(x1), self._kink(b1_0, c1),
                     self._kink(b2_0, c2)]
            for g1 in (d1p, d1m):
                for g2 in (d2p, d2m):
                    cands.append(self._vertex(a2g, a1 + c1 * g1 + c2 * g2))
            Tc = np.stack(cands, axis=1)
            Sc = np.full_like(Tc, self.tie_s)
            phi = self._phi_candidates(sel, Tc, Sc, base, dup1, ddn1, dup2, ddn2)
            pick = self._first_within_tol(phi)
            T[sel] = np.take_along_axis(Tc, pick[:, None], axis=1)[:, 0]

        if self.neg.any():
            sel = self.neg
            x1, x2 = self.X1[sel], self.X2[sel]
            b1_0, _ = drift_b_arrays(x1, x2, self.tie_t, 0.0, self.d)
            b1_1, _ = drift_b_arrays(x1, x2, self.tie_t, 1.0, self.d)
            c1 = b1_1 - b1_0
            f0 = self.cost_fn(x1, x2, self.tie_t, 0.0)
            fh = self.cost_fn(x1, x2, self.tie_t, 0.5)
            f1 = self.cost_fn(x1, x2, self.tie_t, 1.0)
            a2 = 2.0 * f0 + 2.0 * f1 - 4.0 * fh
            a1 = f1 - f0 - a2
            small = np.abs(a2) <= 1e-12 * (1.0 + np.abs(f0) + np.abs(f1))
            a2g = np.where(small, np.nan, a2)
            d1p, d1m = dup1[sel] / h1, -ddn1[sel] / h1
            cands = [np.full_like(x1, self.tie_s), np.zeros_like(x1),
                     np.ones_like(x1), self._kink(b1_0, c1),
                     self._vertex(a2g, a1 + c1 * d1p),
                     self._vertex(a2g, a1 + c1 * d1m)]
            Sc = np.stack(cands, axis=1)
            Tc = np.full_like(Sc, self.tie_t)
            phi = self._phi_candidates(sel, Tc, Sc, base, dup1, ddn1, dup2, ddn2)
            pick = self._first_within_tol(phi)
            S[sel] = np.take_along_axis(Sc, pick[:, None], axis=1)[:, 0]
        return T, S

    def _improve_scalar(self, V, T, S, base, dup1, ddn1, dup2, ddn2):
        # slow exact path for non-polynomial exponents
        from scipy.optimize import minimize_scalar

        h1, h2 = self.grid.h1, self.grid.h2

        def phi_at(i, j, t, s):
            b1, b2 = drift_b_arrays(self.X1[i, j], self.X2[i, j], t, s, self.d)
            return (
                base[i, j]
                + max(b1, 0.0) / h1 * dup1[i, j]
                + max(-b1, 0.0) / h1 * ddn1[i, j]
                + max(b2, 0.0) / h2 * dup2[i, j]
                + max(-b2, 0.0) / h2 * ddn2[i, j]
                + float(self.cost_fn(self.X1[i, j], self.X2[i, j], t, s))
            )

        for i, j in zip(*np.where(self.pos | self.neg)):
            if self.pos[i, j]:
                obj = lambda t: phi_at(i, j, t, self.tie_s)
                order = [self.tie_t, 0.0, 1.0]
            else:
                obj = lambda s: phi_at(i, j, self.tie_t, s)
                order = [self.tie_s, 0.0, 1.0]
            res = minimize_scalar(obj, bounds=(0.0, 1.0), method="bounded",
                                  options={"xatol": 1e-10})
            order.append(float(res.x))
            vals = [obj(c) for c in order]
            best = min(vals)
            tol = TIE_TOL * (1.0 + abs(best))
            choice = next(c for c, v in zip(order, vals) if v <= best + tol)
            if self.pos[i, j]:
                T[i, j] = choice
            else:
                S[i, j] = choice


def discretize_row(node, u: ControlVector, grid: Grid, d: DriftData):
    """One generator row at a node: dict of neighbor offsets -> weights plus
    the diagonal; off-box neighbors are folded into the diagonal."""
    i, j = node
    x = (grid.axis1[i], grid.axis2[j])
    b = drift_b(x, u, d)
    lam1, lam2 = 0.5 * d.sigma[0] ** 2, 0.5 * d.sigma[1] ** 2
    wu1 = lam1 / grid.h1**2 + max(b[0], 0.0) / grid.h1
    wd1 = lam1 / grid.h1**2 + max(-b[0], 0.0) / grid.h1
    wu2 = lam2 / grid.h2**2 + max(b[1], 0.0) / grid.h2
    wd2 = lam2 / grid.h2**2 + max(-b[1], 0.0) / grid.h2
    weights = {}
    if i + 1 < grid.n1:
        weights[(1, 0)] = wu1
    if i - 1 >= 0:
        weights[(-1, 0)] = wd1
    if j + 1 < grid.n2:
        weights[(0, 1)] = wu2
    if j - 1 >= 0:
        weights[(0, -1)] = wd2
    return weights, -sum(weights.values())


def _constraint_values(ws: _Workspace, cost: CostSpec, pi, T, S):
    exm = np.maximum(-(ws.X1 + ws.X2), 0.0)
    mt = cost.m_tilde
    r1 = (exm * S) ** mt
    r2 = (exm * (1.0 - S)) ** mt
    ro = running_cost_functional(cost)(ws.X1, ws.X2, T, S)
    return (
        float(np.sum(pi * r1)), float(np.sum(pi * r2)), float(np.sum(pi * ro))
    )


def policy_iteration(
    grid: Grid,
    cost: CostSpec,
    d: DriftData,
    multipliers: Multipliers | None = None,
    tie=(1.0, 0.0),
    warm: PolicyField | None = None,
    max_iter: int = 80,
    tol_rho: float = 1e-10,
    tol_resid: float = 1e-8,
):
    """Howard iteration for the ergodic value on the truncated box; returns
    (ValueField, PolicyField, SolveReport) with rho normalized by V(0)=0."""
    ws = _Workspace(grid, cost, d, multipliers, tie)
    if warm is not None and warm.t.shape == (grid.n1, grid.n2):
        T, S = warm.t.copy(), warm.s.copy()
    else:
        T = np.full((grid.n1, grid.n2), ws.tie_t)
        S = np.full((grid.n1, grid.n2), ws.tie_s)
    rho_prev = math.inf
    history = []
    for it in range(1, max_iter + 1):
        V, rho = ws.evaluate(T, S)
        history.append(rho)
        T2, S2 = ws.improve(V)
        phi = ws.operator(V, T2, S2)
        residual = float(np.abs(phi[1:-1, 1:-1] - rho).max())
        if abs(rho - rho_prev) < tol_rho and residual < tol_resid:
            T, S = T2, S2
            break
        stable = np.array_equal(T2, T) and np.array_equal(S2, S)
        T, S = T2, S2
        rho_prev = rho
        if stable and residual < tol_resid:
            break
    else:
        raise MaxIterations(
            f"policy iteration did not converge in {max_iter} sweeps "
            f"(residual {residual:.3e})"
        )
    pf = PolicyField(grid, T, S)
    vf = ValueField(grid, V, rho)
    pi = ws.stationary(T, S)
    c_v = ws.cost_fn(ws.X1, ws.X2, T, S)
    gap = abs(rho - float(np.sum(pi * c_v)))
    pi_r1, pi_r2, pi_ro = _constraint_values(ws, cost, pi, T, S)
    lam = ()
    if multipliers is not None and multipliers.budget is not None:
        lam = tuple(multipliers.budget)
    elif multipliers is not None and multipliers.fairness is not None:
        lam = (multipliers.fairness,)
    report = SolveReport(
        kind="policy-iteration",
        rho=rho,
        iterations=it,
        residual=residual,
        lam=lam,
        pi_r1=pi_r1,
        pi_r2=pi_r2,
        pi_ro=pi_ro,
        converged=True,
        consistency_gap=gap,
        rho_history=tuple(history),
        value_field=vf,
        policy_field=pf,
    )
    return vf, pf, report


def stationary_distribution(pf: PolicyField, grid: Grid, d: DriftData,
                            cost: CostSpec | None = None):
    """Invariant probability of the discrete chain under the policy field."""
    ws = _Workspace(grid, cost or CostSpec(), d, None, (1.0, 0.0))
    return ws.stationary(pf.t, pf.s)


def solve_constrained(
    grid: Grid,
    cost: CostSpec,
    d: DriftData,
    a0: float = 1.0,
    tol: float = 1e-3,
    max_outer: int = 400,
    lam_cap: float = LAMBDA_CAP,
    stall_window: int = 40,
) -> SolveReport:
    """Projected subgradient ascent on the idleness-budget multipliers.

    Divergence is reported as InfeasibleBudget either when a multiplier
    passes the cap or when the worst violation makes no progress over a
    full window while multipliers keep growing: with an infeasible budget
    the dual iteration pushes the multipliers to infinity, and waiting for
    the cap at a diminishing step size would take effectively forever.

    Flat-node tie selection is adaptive for linear constraint costs: the
    Lagrangian is indifferent on the flat face exactly when the optimal
    split is interior, so the ascent picks the face point that lands the
    measured idleness on the binding budget instead of chattering between
    the face's corners.
    """
    cost.validate("P2")
    delta = cost.delta
    ratio_tie = delta[0] / (delta[0] + delta[1])
    tie_s = ratio_tie
    base = Multipliers(budget=(0.0, 0.0), tie_s=tie_s)
    vf, pf, rep = policy_iteration(grid, cost, d, base)
    if rep.pi_r1 <= delta[0] + tol and rep.pi_r2 <= delta[1] + tol:
        return SolveReport(
            kind="budget",
            rho=rep.pi_ro,
            iterations=1,
            residual=rep.residual,
            lam=(0.0, 0.0),
            pi_r1=rep.pi_r1,
            pi_r2=rep.pi_r2,
            pi_ro=rep.pi_ro,
            converged=True,
            consistency_gap=rep.consistency_gap,
            note="budgets inactive at the unconstrained solution",
            value_field=vf,
            policy_field=pf,
        )
    lam = [0.0, 0.0]
    viol_trace = []
    for k in range(1, max_outer + 1):
        step = a0 / math.sqrt(k)
        lam[0] = max(0.0, lam[0] + step / max(1.0, delta[0]) * (rep.pi_r1 - delta[0]))
        lam[1] = max(0.0, lam[1] + step / max(1.0, delta[1]) * (rep.pi_r2 - delta[1]))
        if max(lam) > lam_cap:
            raise InfeasibleBudget(
                f"multipliers exceeded {lam_cap:.1e} with violations "
                f"({rep.pi_r1 - delta[0]:.4f}, {rep.pi_r2 - delta[1]:.4f})"
            )
        if cost.m_tilde == 1:
            # total scaled idleness is measurable policy-free: pick the flat
            # face point putting the binding budget on its surface
            total = rep.pi_r1 + rep.pi_r2
            if total > 0:
                lo = max(0.0, 1.0 - delta[1] / total)
                hi = min(1.0, delta[0] / total)
                if lo <= hi:
                    if lam[1] > lam[0]:
                        tie_s = lo
                    elif lam[0] > lam[1]:
                        tie_s = hi
                    else:
                        tie_s = 0.5 * (lo + hi)
                else:
                    tie_s = ratio_tie
        mult = Multipliers(budget=tuple(lam), tie_s=tie_s)
        vf, pf, rep = policy_iteration(grid, cost, d, mult, warm=pf)
        viol = (rep.pi_r1 - delta[0], rep.pi_r2 - delta[1])
        worst = max(viol)
        viol_trace.append(worst)
        feasible = worst <= tol
        slack = max(abs(lam[0] * viol[0]), abs(lam[1] * viol[1]))
        if feasible and slack <= tol:
            return SolveReport(
                kind="budget",
                rho=rep.pi_ro,
                iterations=k,
                residual=rep.residual,
                lam=tuple(lam),
                pi_r1=rep.pi_r1,
                pi_r2=rep.pi_r2,
                pi_ro=rep.pi_ro,
                converged=True,
                consistency_gap=rep.consistency_gap,
                value_field=vf,
                policy_field=pf,
            )
        if k >= 2 * stall_window and worst > 10 * tol:
            recent = min(viol_trace[-stall_window:])
            earlier = min(viol_trace[:-stall_window])
            if recent > earlier - 1e-3 * max(1.0, abs(earlier)):
                raise InfeasibleBudget(
                    f"no feasibility progress over {stall_window} ascent steps: "
                    f"violation floor {recent:.4f} with multipliers "
                    f"({lam[0]:.3f}, {lam[1]:.3f}); the idleness budgets "
                    f"appear unattainable for every stationary control"
                )
    raise MaxOuterIterations(
        f"dual ascent ran {max_outer} steps without meeting tolerance {tol}"
    )


def solve_fairness(
    grid: Grid,
    cost: CostSpec,
    d: DriftData,
    eps_mode: bool = False,
    kappa2: float = 1.0,
    tol: float = 1e-3,
    max_outer: int = 200,
) -> SolveReport:
    """Scalar multiplier root-finding for the idleness-ratio constraint
    pi(r1) = theta * pi(r2), by expanding bracket plus bisection on
    F(lam) = pi(r1) - theta * pi(r2); flat Hamiltonian nodes are tied to the
    ratio-matching split so the measure can sit on the constraint surface."""
    cost.validate("P3")
    theta = cost.theta
    root = theta ** (1.0 / cost.m_tilde)
    tie_s = root / (1.0 + root)

    def run(lam, eps, warm=None):
        mult = Multipliers(fairness=lam, eps=eps, kappa2=kappa2, tie_s=tie_s)
        vf, pf, rep = policy_iteration(grid, cost, d, mult, warm=warm)
        return vf, pf, rep, rep.pi_r1 - theta * rep.pi_r2

    def solve_at(eps):
        evals = 0
        vf, pf, rep, F0 = run(0.0, eps)
        evals += 1
        if abs(F0) <= tol:
            return vf, pf, rep, 0.0, evals, ""
        sign0 = 1.0 if F0 > 0 else -1.0
        lo, Flo = 0.0, F0
        hi = sign0
        probes = [(0.0, F0)]
        for _ in range(21):
            vf, pf, rep, Fhi = run(hi, eps, warm=pf)
            evals += 1
            probes.append((hi, Fhi))
            if abs(Fhi) <= tol:
                return vf, pf, rep, hi, evals, ""
            if Fhi * F0 < 0:
                break
            lo, Flo = hi, Fhi
            hi *= 2.0
        else:
            raise BracketNotFound(
                f"F kept sign {sign0:+.0f} out to multiplier {hi / 2:.1e}"
            )
        note = ""
        pairs = sorted(probes)
        diffs = [pairs[i + 1][1] - pairs[i][1] for i in range(len(pairs) - 1)]
        if any(df > tol for df in diffs):
            note = "constraint gap not monotone across probes; "
        for _ in range(max_outer):
            mid = 0.5 * (lo + hi)
            vf, pf, rep, Fm = run(mid, eps, warm=pf)
            evals += 1
            if abs(Fm) <= tol:
                return vf, pf, rep, mid, evals, note
            if Fm * Flo < 0:
                hi = mid
            else:
                lo, Flo = mid, Fm
            if abs(hi - lo) < 1e-14:
                raise MaxOuterIterations(
                    note + "bracket collapsed without meeting the tolerance "
                    "(the constraint gap jumps across the root)"
                )
        raise MaxOuterIterations(f"bisection ran {max_outer} steps")

    if not eps_mode:
        vf, pf, rep, lam, evals, note = solve_at(0.0)
        return SolveReport(
            kind="fairness",
            rho=rep.pi_ro,
            iterations=evals,
            residual=rep.residual,
            lam=(lam,),
            pi_r1=rep.pi_r1,
            pi_r2=rep.pi_r2,
            pi_ro=rep.pi_ro,
            converged=True,
            consistency_gap=rep.consistency_gap,
            note=note.strip("; "),
            value_field=vf,
            policy_field=pf,
        )
    eps_grid = (1e-1, 1e-3)
    estimates = []
    last = None
    for eps in eps_grid:
        vf, pf, rep, lam, evals, note = solve_at(eps)
        estimates.append((eps, rep.pi_ro, lam))
        last = (vf, pf, rep, lam, evals, note)
    (e0, r0, _), (e1, r1, _) = estimates[-2], estimates[-1]
    extrap = r1 + (r1 - r0) * e1 / (e0 - e1)
    vf, pf, rep, lam, evals, note = last
    detail = "; ".join(f"eps={e:g}: rho={r:.8f}" for e, r, _ in estimates)
    return SolveReport(
        kind="fairness-eps",
        rho=rep.pi_ro,
        iterations=evals,
        residual=rep.residual,
        lam=(lam,),
        pi_r1=rep.pi_r1,
        pi_r2=rep.pi_r2,
        pi_ro=rep.pi_ro,
        converged=True,
        consistency_gap=rep.consistency_gap,
        note=(note + detail + f"; extrapolated rho={extrap:.8f}").strip("; "),
        value_field=vf,
        policy_field=pf,
    )


def extract_markov_control(pf: PolicyField) -> MarkovControlField:
    """Copy the per-node control field into the interpolating representation
    used by the simulator."""
    return MarkovControlField(pf.grid.axis1, pf.grid.axis2, pf.t, pf.s)
