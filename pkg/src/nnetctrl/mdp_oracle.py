"""Exact long-run average cost of the truncated headcount chain.

Uniformization turns the truncated jump chain into a discrete-time chain
with the same stationary behavior: holding times are uniform, so the
per-step average of any state functional equals its time average, and
relative value iteration returns the optimal time-average cost without any
rate rescaling. Stage costs charge the scaled queue and idleness vectors of
each decision, exactly as the simulator integrates them, which makes the
optimal values directly comparable across system sizes and against the
limiting-control solver.

Arrivals that would leave the box are folded back as self-loops, a
reflecting truncation that keeps rows stochastic.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .errors import (
    BoxTooLarge,
    EmptyActionSet,
    NonConvergentSpan,
    PreconditionViolation,
)
from .model import CostSpec, SystemInstance
from .policies import ScheduleDecision, sdp_schedule
from .ctmc_sim import stream_rates

MAX_STATES = 1_000_000


def default_box(inst: SystemInstance, spread: float = 3.0):
    """Box comfortably containing the stationary mass: a multiple of the
    larger of the fluid headcounts and the total service capacity."""
    scale = max(inst.n * max(inst.fluid.xstar), float(sum(inst.pools)))
    side = int(np.ceil(spread * scale)) + 5
    return side, side


def enumerate_actions(x, inst: SystemInstance):
    """All work-conserving integer allocations at a state.

    Decisions split three ways by idleness: no idle servers anywhere; idle
    seats only at the dedicated pool, which requires its queue empty; idle
    seats at the shared pool, which requires both queues empty since it can
    serve everyone."""
    x1, x2 = x
    n1, n2 = inst.pools
    out = []
    # everyone busy
    if x1 >= n1:
        ov = x1 - n1
        lo = max(0, n2 - ov)
        hi = min(x2, n2)
        for z22 in range(lo, hi + 1):
            z12 = n2 - z22
            q = (x1 - n1 - z12, x2 - z22)
            out.append(ScheduleDecision(((n1, z12), (0, z22)), q, (0, 0)))
    # dedicated pool partly idle, shared pool full
    lo = max(1, n1 - x1)
    for y1 in range(lo, n1 + 1):
        z11 = n1 - y1
        z12 = x1 - z11
        if z12 < 0 or z12 > n2:
            continue
        z22 = n2 - z12
        if z22 > x2:
            continue
        q = (0, x2 - z22)
        out.append(ScheduleDecision(((z11, z12), (0, z22)), q, (y1, 0)))
    # shared pool partly idle: both queues empty
    if x2 <= n2 - 1:
        for y1 in range(max(0, n1 - x1), n1 + 1):
            z11 = n1 - y1
            z12 = x1 - z11
            if z12 < 0:
                continue
            y2 = n2 - z12 - x2
            if y2 < 1:
                continue
            out.append(
                ScheduleDecision(((z11, z12), (0, x2)), (0, 0), (y1, y2))
            )
    return out


def ejwc_filter(x, decisions, inst: SystemInstance, ball: float):
    """Keep only decisions idling no one while work waits, for states within
    the given l1 fraction of the fluid headcounts."""
    cx = (inst.n * inst.fluid.xstar[0], inst.n * inst.fluid.xstar[1])
    if abs(x[0] - cx[0]) + abs(x[1] - cx[1]) > ball * inst.n:
        return decisions
    kept = [d for d in decisions if min(d.q[0] + d.q[1], d.y[0] + d.y[1]) == 0]
    if not kept:
        raise EmptyActionSet(
            f"joint work conservation leaves no decision at {x}; "
            "shrink the enforcement ball"
        )
    return kept


@dataclass
class TruncatedChain:
    """Uniformized chain on a rectangular headcount box: flattened rows of
    (state, decision) pairs with their stage costs and jump probabilities."""

    inst: SystemInstance
    cost: CostSpec
    box: tuple
    uniform_rate: float
    nstates: int
    state_start: np.ndarray  # (K+1,) row slice per state
    row_state: np.ndarray  # (R,)
    row_z: np.ndarray  # (R, 3) allocations z11, z12, z22
    row_cost: np.ndarray  # (R,)
    row_nidx: np.ndarray  # (R, 7) post-event state index per stream
    row_prob: np.ndarray  # (R, 7)
    row_self: np.ndarray  # (R,) residual self-loop mass

    def state_of(self, index: int):
        return divmod(index, self.box[1] + 1)

    def index_of(self, x):
        return x[0] * (self.box[1] + 1) + x[1]


def build_chain(
    inst: SystemInstance,
    cost: CostSpec,
    box=None,
    ejwc: bool = False,
    ball: float = 0.3,
) -> TruncatedChain:
    if box is None:
        box = default_box(inst)
    x1max, x2max = int(box[0]), int(box[1])
    nx = inst.n * np.asarray(inst.fluid.xstar)
    if x1max < nx[0] or x2max < nx[1]:
        raise PreconditionViolation(
            f"box {box} does not contain the fluid headcounts {tuple(nx)}"
        )
    K = (x1max + 1) * (x2max + 1)
    if K > MAX_STATES:
        raise BoxTooLarge(f"{K} states exceed the {MAX_STATES} cap")
    n1, n2 = inst.pools
    lam_bar = (
        inst.lam_n[0]
        + inst.lam_n[1]
        + inst.mu_n[0][0] * n1
        + inst.mu_n[0][1] * n2
        + inst.mu_n[1][1] * n2
        + inst.gamma_n[0] * x1max
        + inst.gamma_n[1] * x2max
    )
    rn = inst.sqrt_n
    starts = np.empty(K + 1, dtype=np.int64)
    r_state, r_z, r_cost, r_nidx, r_prob = [], [], [], [], []
    width = x2max + 1
    row = 0
    for x1 in range(x1max + 1):
        for x2 in range(x2max + 1):
            k = x1 * width + x2
            starts[k] = row
            decisions = enumerate_actions((x1, x2), inst)
            if ejwc:
                decisions = ejwc_filter((x1, x2), decisions, inst, ball)
            up1 = k + width if x1 < x1max else k
            up2 = k + 1 if x2 < x2max else k
            for d in decisions:
                rates = stream_rates((x1, x2), d, inst)
                r_state.append(k)
                r_z.append((d.z[0][0], d.z[0][1], d.z[1][1]))
                # scaled queue and idleness vectors, exactly as the
                # simulator integrates them
                c = (
                    cost.xi[0] * (d.q[0] / rn) ** cost.m
                    + cost.xi[1] * (d.q[1] / rn) ** cost.m
                    + cost.zeta[0] * (d.y[0] / rn) ** cost.m
                    + cost.zeta[1] * (d.y[1] / rn) ** cost.m
                )
                r_cost.append(float(c))
                r_nidx.append(
                    (up1, up2, k - width, k - width, k - 1, k - width, k - 1)
                )
                r_prob.append(rates)
                row += 1
    starts[K] = row
    prob = np.asarray(r_prob, dtype=float) / lam_bar
    row_state = np.asarray(r_state, dtype=np.int64)
    nidx = np.asarray(r_nidx, dtype=np.int64)
    # impossible streams (zero rate) may point below the box; pin them to
    # the state itself so every stored index is valid
    nidx = np.where(prob > 0.0, nidx, row_state[:, None])
    return TruncatedChain(
        inst=inst,
        cost=cost,
        box=(x1max, x2max),
        uniform_rate=lam_bar,
        nstates=K,
        state_start=starts,
        row_state=row_state,
        row_z=np.asarray(r_z, dtype=np.int64),
        row_cost=np.asarray(r_cost, dtype=float),
        row_nidx=nidx,
        row_prob=prob,
        row_self=1.0 - prob.sum(axis=1),
    )


@dataclass
class OracleSolution:
    rho: float
    bias: np.ndarray  # (K,) relative values
    rows: np.ndarray  # (K,) chosen row per state
    iterations: int
    span: float
    converged: bool


def _reference_state(chain: TruncatedChain) -> int:
    nx = chain.inst.n * np.asarray(chain.inst.fluid.xstar)
    x = (
        min(chain.box[0], max(0, int(round(nx[0])))),
        min(chain.box[1], max(0, int(round(nx[1])))),
    )
    return chain.index_of(x)


def relative_value_iteration(
    chain: TruncatedChain, tol: float = 1e-9, max_iter: int = 200_000
) -> OracleSolution:
    """Span-contracting sweep over all (state, decision) rows; the residual
    at the reference state converges to the optimal average cost."""
    ref = _reference_state(chain)
    V = np.zeros(chain.nstates)
    heads = chain.state_start[:-1]
    rho = np.nan
    for it in range(1, max_iter + 1):
        Q = (
            chain.row_cost
            + (chain.row_prob * V[chain.row_nidx]).sum(axis=1)
            + chain.row_self * V[chain.row_state]
        )
        TV = np.minimum.reduceat(Q, heads)
        diff = TV - V
        rho = diff[ref]
        span = float(diff.max() - diff.min())
        V = TV - TV[ref]
        if span <= tol:
            groups = np.repeat(
                np.arange(chain.nstates), np.diff(chain.state_start)
            )
            rows = np.flatnonzero(Q <= TV[groups] + 1e-12)
            first = np.searchsorted(chain.row_state[rows], np.arange(chain.nstates))
            return OracleSolution(
                rho=float(rho),
                bias=V,
                rows=rows[first],
                iterations=it,
                span=span,
                converged=True,
            )
    raise NonConvergentSpan(
        f"value span {span:.3e} still above {tol:.1e} after {max_iter} sweeps"
    )


def stationary_average(chain: TruncatedChain, rows: np.ndarray):
    """Invariant law of the chain under one chosen decision per state, and
    the exact average stage cost it pays."""
    K = chain.nstates
    sel_state = chain.row_state[rows]
    if not np.array_equal(sel_state, np.arange(K)):
        raise PreconditionViolation("need exactly one decision row per state")
    src = np.repeat(sel_state, 7)
    dst = chain.row_nidx[rows].ravel()
    mass = chain.row_prob[rows].ravel()
    src = np.concatenate([src, sel_state])
    dst = np.concatenate([dst, sel_state])
    mass = np.concatenate([mass, chain.row_self[rows]])
    # adjoint solve with a normalization row in place of the reference column
    keep = dst != 0
    arows = np.concatenate([dst[keep], np.zeros(K, dtype=np.int64)])
    acols = np.concatenate([src[keep], np.arange(K)])
    ad = np.concatenate([mass[keep], np.ones(K)])
    diag = np.arange(K)
    keep_d = diag != 0
    arows = np.concatenate([arows, diag[keep_d]])
    acols = np.concatenate([acols, diag[keep_d]])
    ad = np.concatenate([ad, -np.ones(keep_d.sum())])
    A = coo_matrix((ad, (arows, acols)), shape=(K, K)).tocsc()
    rhs = np.zeros(K)
    rhs[0] = 1.0
    pi = splu(A).solve(rhs)
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    avg = float(pi @ chain.row_cost[rows])
    return avg, pi


def policy_table(chain: TruncatedChain, rows: np.ndarray) -> np.ndarray:
    """Chosen allocation per state as integer columns x1, x2, z11, z12, z22."""
    states = np.stack(
        [chain.row_state[rows] // (chain.box[1] + 1),
         chain.row_state[rows] % (chain.box[1] + 1)],
        axis=1,
    )
    return np.hstack([states, chain.row_z[rows]])


def save_policy_csv(path, table: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "z11", "z12", "z22"])
        for r in table:
            w.writerow([int(v) for v in r])


def load_policy_csv(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != ["x1", "x2", "z11", "z12", "z22"]:
            raise PreconditionViolation(f"unexpected policy header {header}")
        for row in rd:
            x1, x2, z11, z12, z22 = (int(v) for v in row)
            out[(x1, x2)] = (z11, z12, z22)
    return out


@dataclass
class LookupPolicy:
    """Tabled allocations with a priority-rule fallback outside the table;
    usable directly as a simulation policy."""

    table: dict
    inst: SystemInstance

    def __call__(self, x) -> ScheduleDecision:
        hit = self.table.get((int(x[0]), int(x[1])))
        if hit is None:
            return sdp_schedule(x, self.inst)
        z11, z12, z22 = hit
        q = (x[0] - z11 - z12, x[1] - z22)
        n1, n2 = self.inst.pools
        y = (n1 - z11, n2 - z12 - z22)
        return ScheduleDecision(((z11, z12), (0, z22)), q, y)


def oracle_curve(instances, cost: CostSpec, spread: float = 3.0, ejwc: bool = False):
    """Optimal average cost across system sizes: rows (n, value, states)."""
    out = []
    for inst in instances:
        chain = build_chain(inst, cost, box=default_box(inst, spread), ejwc=ejwc)
        sol = relative_value_iteration(chain)
        out.append((inst.n, sol.rho, chain.nstates))
    return out
