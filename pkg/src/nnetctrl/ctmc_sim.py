"""Event-driven simulation of the network CTMC under a stationary policy.

Events follow seven exponential streams whose rates depend on the current
decision: two arrivals, class-1 service at each pool, class-2 service at the
shared pool, and one abandonment stream per queue. Sampling is direct: a
single exponential holding time at the total rate, then a categorical draw
over the streams. Running costs are piecewise constant between events and
integrated exactly, in diffusion scale, with batch-mean bookkeeping for
standard errors and a weighted occupation histogram over (scaled state,
control readout) cells.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InsufficientBatches, PreconditionViolation, ZeroTotalRate
from .model import CostSpec, SystemInstance, diffusion_scale
from .policies import ScheduleDecision, control_readout

Policy = Callable[[tuple], ScheduleDecision]

# event type codes, in stream order
ARR1, ARR2, SVC11, SVC12, SVC22, ABN1, ABN2 = range(7)
_JUMPS = ((1, 0), (0, 1), (-1, 0), (-1, 0), (0, -1), (-1, 0), (0, -1))

XBIN = 0.25  # scaled-state bin width; bins centered on multiples of XBIN
UBINS = 10  # (t, s) cells per axis; centers k/(UBINS-1)


@dataclass
class SimState:
    """Clock, headcounts, current decision, and the random stream."""

    t: float
    x: tuple
    decision: ScheduleDecision
    rng: np.random.Generator


def stream_rates(x, d: ScheduleDecision, inst: SystemInstance):
    """The seven stream rates at (x, decision), in event-code order."""
    return (
        inst.lam_n[0],
        inst.lam_n[1],
        inst.mu_n[0][0] * d.z[0][0],
        inst.mu_n[0][1] * d.z[0][1],
        inst.mu_n[1][1] * d.z[1][1],
        inst.gamma_n[0] * d.q[0],
        inst.gamma_n[1] * d.q[1],
    )


def total_rate(x, d: ScheduleDecision, inst: SystemInstance) -> float:
    return sum(stream_rates(x, d, inst))


def step(s: SimState, policy: Policy, inst: SystemInstance) -> SimState:
    """One exact jump of the chain; returns the post-event state."""
    rates = stream_rates(s.x, s.decision, inst)
    lam = sum(rates)
    if lam <= 0:
        raise ZeroTotalRate(f"no active streams at state {s.x}")
    dt = -math.log(1.0 - s.rng.random()) / lam
    r = s.rng.random() * lam
    acc = 0.0
    etype = None
    for e, rate in enumerate(rates):
        if rate <= 0:
            continue
        acc += rate
        etype = e
        if r < acc:
            break
    dx = _JUMPS[etype]
    x = (s.x[0] + dx[0], s.x[1] + dx[1])
    return SimState(t=s.t + dt, x=x, decision=policy(x), rng=s.rng)


def _hist_index(xhat, u, half_bins: int):
    """Flat histogram cell of a (scaled state, control) pair, or -1 overflow."""
    i1 = round(xhat[0] / XBIN)
    i2 = round(xhat[1] / XBIN)
    if abs(i1) > half_bins or abs(i2) > half_bins:
        return -1
    it = round(u.t * (UBINS - 1))
    is_ = round(u.s * (UBINS - 1))
    side = 2 * half_bins + 1
    return ((i1 + half_bins) * side + (i2 + half_bins)) * UBINS * UBINS + it * UBINS + is_


@dataclass
class TrajectoryStats:
    """Batch-resolved cost integrals and the occupation histogram of a run.

    Batch columns: weighted queue cost, weighted idleness cost, the two
    per-pool idleness constraint integrands, then |xhat|^k for each k.
    All integrals are time-integrals in diffusion scale over one batch.
    """

    horizon: float
    burn_in: float
    n: int
    nbatches: int
    batch_len: float
    k_list: tuple
    cost: CostSpec
    hist_box: float
    batches: np.ndarray  # (nbatches, 4 + len(k_list))
    hist: dict  # flat cell -> occupation mass
    overflow: float
    events: int

    @property
    def mass(self) -> float:
        return self.nbatches * self.batch_len

    def hist_total(self) -> float:
        return float(math.fsum(self.hist.values()) + self.overflow)

    def merge(self, other: "TrajectoryStats") -> "TrajectoryStats":
        """Pool two runs: batches concatenate, histograms add."""
        same = (
            self.n == other.n
            and self.batch_len == other.batch_len
            and self.k_list == other.k_list
            and self.cost == other.cost
            and self.hist_box == other.hist_box
        )
        if not same:
            raise PreconditionViolation("cannot merge stats with different layouts")
        hist = dict(self.hist)
        for cell, m in other.hist.items():
            hist[cell] = hist.get(cell, 0.0) + m
        return TrajectoryStats(
            horizon=self.horizon + other.horizon,
            burn_in=self.burn_in + other.burn_in,
            n=self.n,
            nbatches=self.nbatches + other.nbatches,
            batch_len=self.batch_len,
            k_list=self.k_list,
            cost=self.cost,
            hist_box=self.hist_box,
            batches=np.vstack([self.batches, other.batches]),
            hist=hist,
            overflow=self.overflow + other.overflow,
            events=self.events + other.events,
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "value"])
            for key in ("horizon", "burn_in", "n", "nbatches", "batch_len",
                        "hist_box", "overflow", "events"):
                w.writerow([key, repr(getattr(self, key))])
            w.writerow(["k_list", " ".join(str(k) for k in self.k_list)])
            w.writerow(["batch", " ".join(f"c{i}" for i in range(self.batches.shape[1]))])
            for row in self.batches:
                w.writerow(["batch_row", " ".join(repr(float(v)) for v in row)])
            for cell, m in sorted(self.hist.items()):
                w.writerow(["hist", f"{cell} {m!r}"])


def _compile_state(x, dec, inst, cost, k_list, half_bins, rn):
    """Per-state constants for the hot loop: jump selector, rates, costs."""
    rates = stream_rates(x, dec, inst)
    thresholds = []
    jumps = []
    acc = 0.0
    for e, rate in enumerate(rates):
        if rate > 0.0:
            acc += rate
            thresholds.append(acc)
            jumps.append((_JUMPS[e][0], _JUMPS[e][1], e))
    lam = acc
    qh1 = dec.q[0] / rn
    qh2 = dec.q[1] / rn
    yh1 = dec.y[0] / rn
    yh2 = dec.y[1] / rn
    m, mt = cost.m, cost.m_tilde
    qcost = cost.xi[0] * qh1**m + cost.xi[1] * qh2**m
    icost = cost.zeta[0] * yh1**m + cost.zeta[1] * yh2**m
    xh = diffusion_scale(x, inst)
    norm = math.hypot(xh[0], xh[1])
    vals = (qcost, icost, yh1**mt, yh2**mt) + tuple(norm**k for k in k_list)
    hidx = _hist_index(xh, control_readout(dec), half_bins)
    return tuple(thresholds), tuple(jumps), lam, vals, hidx


def simulate(
    inst: SystemInstance,
    policy: Policy,
    T: float,
    burn_in: float,
    seed: int,
    cost: CostSpec,
    k_list: tuple = (2,),
    nbatches: int = 20,
    hist_box: float = 5.0,
    x0=None,
    event_log=None,
) -> TrajectoryStats:
    """Simulate one trajectory of the chain to horizon T.

    Cost integration starts after burn_in, split exactly at batch boundaries.
    Reproducible: the full event sequence is a function of (inst, policy,
    seed). The optional event_log receives one "t,x1,x2,event" line per jump.
    """
    if not T > burn_in >= 0:
        raise PreconditionViolation(f"need T > burn_in >= 0, got {T}, {burn_in}")
    if nbatches < 1:
        raise PreconditionViolation("nbatches must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    rn = inst.sqrt_n
    half_bins = round(hist_box / XBIN)
    if x0 is None:
        xs = inst.fluid.xstar
        x0 = (round(inst.n * xs[0]), round(inst.n * xs[1]))
    x = (int(x0[0]), int(x0[1]))

    nacc = 4 + len(k_list)
    batch_len = (T - burn_in) / nbatches
    boundaries = [burn_in + j * batch_len for j in range(nbatches + 1)]
    boundaries[-1] = T
    bi = 0
    acc = [0.0] * nacc
    rows = []
    hist: dict = {}
    overflow = 0.0
    events = 0

    memo: dict = {}
    compile_state = _compile_state
    log = math.log
    uniforms = rng.random(1 << 16).tolist()
    ui = 0
    ulen = len(uniforms)

    t = 0.0
    while t < T:
        entry = memo.get(x)
        if entry is None:
            entry = compile_state(x, policy(x), inst, cost, k_list, half_bins, rn)
            memo[x] = entry
        thresholds, jumps, lam, vals, hidx = entry
        if lam <= 0.0:
            raise ZeroTotalRate(f"no active streams at state {x}")
        if ui + 2 > ulen:
            uniforms = rng.random(1 << 16).tolist()
            ui = 0
        dt = -log(1.0 - uniforms[ui]) / lam
        t1 = t + dt
        # integrate the sojourn piecewise across burn-in/batch boundaries
        t0 = t
        while bi <= nbatches and t1 >= boundaries[bi]:
            b = boundaries[bi]
            if bi >= 1:
                seg = b - t0
                for j in range(nacc):
                    acc[j] += vals[j] * seg
                if hidx >= 0:
                    hist[hidx] = hist.get(hidx, 0.0) + seg
                else:
                    overflow += seg
                rows.append(tuple(acc))
                acc = [0.0] * nacc
            t0 = b
            bi += 1
        if 1 <= bi <= nbatches and t1 > t0:
            seg = t1 - t0
            for j in range(nacc):
                acc[j] += vals[j] * seg
            if hidx >= 0:
                hist[hidx] = hist.get(hidx, 0.0) + seg
            else:
                overflow += seg
        if t1 >= T:
            break
        r = uniforms[ui + 1] * lam
        ui += 2
        picked = jumps[-1]
        for i, thr in enumerate(thresholds):
            if r < thr:
                picked = jumps[i]
                break
        x = (x[0] + picked[0], x[1] + picked[1])
        events += 1
        if event_log is not None:
            event_log.write(f"{t1!r},{x[0]},{x[1]},{picked[2]}\n")
        t = t1

    batch_arr = np.array(rows, dtype=float).reshape(len(rows), nacc)
    # batch rows are flushed crossing each boundary; the T boundary is always
    # crossed because the final sojourn extends past it
    return TrajectoryStats(
        horizon=T,
        burn_in=burn_in,
        n=inst.n,
        nbatches=nbatches,
        batch_len=batch_len,
        k_list=tuple(k_list),
        cost=cost,
        hist_box=hist_box,
        batches=batch_arr,
        hist=hist,
        overflow=overflow,
        events=events,
    )


def simulate_replicates(
    inst: SystemInstance,
    policy: Policy,
    T: float,
    burn_in: float,
    seed_base: int,
    cost: CostSpec,
    n_rep: int,
    **kwargs,
) -> TrajectoryStats:
    """Independent replicates with seeds seed_base + index, merged."""
    stats = simulate(inst, policy, T, burn_in, seed_base, cost, **kwargs)
    for i in range(1, n_rep):
        stats = stats.merge(
            simulate(inst, policy, T, burn_in, seed_base + i, cost, **kwargs)
        )
    return stats


@dataclass(frozen=True)
class EmpiricalMoments:
    """Histogram moments: per-coordinate mean and raw second moment of the
    scaled state, mean control pairs, and the in-box/overflow masses."""

    mean: tuple
    second: tuple
    uc_mean: tuple
    us_mean: tuple
    in_box_mass: float
    overflow: float


def empirical_moments(stats: TrajectoryStats) -> EmpiricalMoments:
    """Moments of the occupation histogram, read at cell centers. Overflow
    mass is excluded from the normalization."""
    half_bins = round(stats.hist_box / XBIN)
    side = 2 * half_bins + 1
    mass = 0.0
    m1 = [0.0, 0.0]
    m2 = [0.0, 0.0]
    tbar = 0.0
    sbar = 0.0
    for cell, w in stats.hist.items():
        xcell, ucell = divmod(cell, UBINS * UBINS)
        i1, i2 = divmod(xcell, side)
        it, is_ = divmod(ucell, UBINS)
        x1 = (i1 - half_bins) * XBIN
        x2 = (i2 - half_bins) * XBIN
        mass += w
        m1[0] += w * x1
        m1[1] += w * x2
        m2[0] += w * x1 * x1
        m2[1] += w * x2 * x2
        tbar += w * it / (UBINS - 1)
        sbar += w * is_ / (UBINS - 1)
    if mass > 0:
        m1 = [v / mass for v in m1]
        m2 = [v / mass for v in m2]
        tbar /= mass
        sbar /= mass
    else:
        tbar, sbar = 1.0, 0.0
    return EmpiricalMoments(
        mean=tuple(m1),
        second=tuple(m2),
        uc_mean=(tbar, 1.0 - tbar),
        us_mean=(sbar, 1.0 - sbar),
        in_box_mass=mass,
        overflow=stats.overflow,
    )


@dataclass(frozen=True)
class CostEstimate:
    """Ergodic cost estimates with batch-means standard errors."""

    J: float
    J_o: float
    J_c: tuple
    norm_means: dict
    moments: EmpiricalMoments
    se: dict


def estimate_costs(stats: TrajectoryStats, cost: CostSpec) -> CostEstimate:
    """Time-average costs and batch-means standard errors of a run.

    J combines queue and idleness parts; J_o is the queue part alone;
    J_c are the per-pool idleness constraint averages.
    """
    if stats.cost.m != cost.m or stats.cost.m_tilde != cost.m_tilde:
        raise PreconditionViolation(
            "stats were accumulated under different cost exponents"
        )
    if stats.cost.xi != cost.xi or stats.cost.zeta != cost.zeta:
        raise PreconditionViolation(
            "stats were accumulated under different cost weights"
        )
    nb = stats.batches.shape[0]
    if nb < 20:
        raise InsufficientBatches(f"{nb} batches < 20; lengthen the horizon")
    per_batch = stats.batches / stats.batch_len  # batch averages
    j_o = per_batch[:, 0]
    j_all = per_batch[:, 0] + per_batch[:, 1]
    jc1 = per_batch[:, 2]
    jc2 = per_batch[:, 3]
    norm_cols = {k: per_batch[:, 4 + i] for i, k in enumerate(stats.k_list)}

    def mean_se(col):
        return float(col.mean()), float(col.std(ddof=1) / math.sqrt(nb))

    J, se_J = mean_se(j_all)
    J_o, se_Jo = mean_se(j_o)
    Jc1, se_c1 = mean_se(jc1)
    Jc2, se_c2 = mean_se(jc2)
    norm_means = {}
    se = {"J": se_J, "J_o": se_Jo, "J_c1": se_c1, "J_c2": se_c2}
    for k, col in norm_cols.items():
        norm_means[k], se[f"norm{k}"] = mean_se(col)
    return CostEstimate(
        J=J,
        J_o=J_o,
        J_c=(Jc1, Jc2),
        norm_means=norm_means,
        moments=empirical_moments(stats),
        se=se,
    )
