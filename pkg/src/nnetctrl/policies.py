"""Scheduling maps for the two-class, two-pool network.

Covers the static-priority rule, action-set membership, the joint-work-
conserving (JWC) state test and its allocation rectangle, the integer split
of a scalar total across two components, policies induced from a scaled-state
control field, the ball-concatenated policy, and the control readout that
turns a discrete decision back into a point of the control set.

Conventions: x = (x1, x2) headcounts per class; z[i][j] jobs of class i+1 in
service at pool j+1 with z[1][0] identically 0; q = queues, y = idle servers.
Balance: q1 = x1 - z11 - z12, q2 = x2 - z22, y1 = N1 - z11, y2 = N2 - z12 - z22.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InfeasibleRectangle,
    InvalidAction,
    NonIntegerSum,
    PreconditionViolation,
)
from .model import ControlVector, SystemInstance, diffusion_scale

logger = logging.getLogger(__name__)

IntPair = tuple[int, int]
IntMat = tuple[IntPair, IntPair]


@dataclass(frozen=True)
class ScheduleDecision:
    """One scheduling decision: allocations, queues, and idle servers."""

    z: IntMat
    q: IntPair
    y: IntPair


def _balance(x, z, inst: SystemInstance):
    q1 = x[0] - z[0][0] - z[0][1]
    q2 = x[1] - z[1][1]
    y1 = inst.pools[0] - z[0][0]
    y2 = inst.pools[1] - z[0][1] - z[1][1]
    return q1, q2, y1, y2


def decision_from_allocation(x, z, inst: SystemInstance) -> ScheduleDecision:
    """Wrap an allocation matrix, deriving queues and idleness from balance."""
    if not in_action_set(x, z, inst):
        raise InvalidAction(f"allocation {z} not admissible at state {x}")
    q1, q2, y1, y2 = _balance(x, z, inst)
    zt = ((int(z[0][0]), int(z[0][1])), (0, int(z[1][1])))
    return ScheduleDecision(z=zt, q=(q1, q2), y=(y1, y2))


def sdp_schedule(x, inst: SystemInstance) -> ScheduleDecision:
    """Static priority rule: class 1 fills its dedicated pool first, then the
    shared pool up to a fixed split; class 2 takes the shared remainder."""
    n1, n2 = inst.pools
    n12, n22 = inst.n12, inst.n22
    x1, x2 = x
    z11 = min(x1, n1)
    ov = x1 - z11
    if x2 >= n22:
        z12 = min(ov, n12)
    else:
        z12 = min(ov, n2 - x2)
    if x1 >= n1 + n12:
        z22 = min(x2, n22)
    else:
        z22 = min(x2, n2 - ov)
    q1 = x1 - z11 - z12
    q2 = x2 - z22
    return ScheduleDecision(
        z=((z11, z12), (0, z22)),
        q=(q1, q2),
        y=(n1 - z11, n2 - z12 - z22),
    )


def in_action_set(x, z, inst: SystemInstance) -> bool:
    """Membership test: nonnegative integer allocation respecting capacities,
    no class-2 service at pool 1, and work conservation."""
    vals = (z[0][0], z[0][1], z[1][0], z[1][1])
    for v in vals:
        if v != int(v) or v < 0:
            return False
    if z[1][0] != 0:
        return False
    q1, q2, y1, y2 = _balance(x, z, inst)
    if q1 < 0 or q2 < 0 or y1 < 0 or y2 < 0:
        return False
    if min(q1, y1 + y2) != 0:
        return False
    if min(q2, y2) != 0:
        return False
    return True


def jwc_holds(x, inst: SystemInstance) -> bool:
    """True when some admissible allocation leaves no queue or no idleness.

    Closed form: with surplus states (e.x >= e.N) every server can be kept
    busy iff class 1 covers its own pool plus the shared seats class 2 cannot
    fill; with deficit states everyone fits in service iff class 2 fits in
    the shared pool after class-1 overflow is seated.
    """
    n1, n2 = inst.pools
    x1, x2 = x
    if x1 + x2 >= n1 + n2:
        return x1 >= n1 + max(n2 - x2, 0)
    return x2 <= n2 - max(x1 - n1, 0)


def jwc_rectangle(x, q, y, inst: SystemInstance) -> IntMat:
    """Allocation with prescribed queues and idleness on a JWC state."""
    n1, n2 = inst.pools
    for v in (*q, *y):
        if v != int(v) or v < 0:
            raise PreconditionViolation(f"q={q}, y={y} must be nonnegative integers")
    if min(q[0] + q[1], y[0] + y[1]) != 0:
        raise PreconditionViolation(f"q={q} and y={y} must not both be nonzero")
    if q[0] > x[0] or q[1] > x[1]:
        raise PreconditionViolation(f"queues {q} exceed headcounts {x}")
    if y[0] > n1 or y[1] > n2:
        raise PreconditionViolation(f"idleness {y} exceeds pool sizes")
    served = x[0] + x[1] - q[0] - q[1]
    busy = n1 + n2 - y[0] - y[1]
    if served != busy or served < 0:
        raise PreconditionViolation(
            f"jobs in service {served} != busy servers {busy} at state {x}"
        )
    z11 = n1 - y[0]
    z12 = x[0] - q[0] - z11
    z22 = x[1] - q[1]
    if z12 < 0 or z11 > x[0] - q[0]:
        raise InfeasibleRectangle(
            f"state {x} with q={q}, y={y} leaves no feasible shared-pool split"
        )
    return ((int(z11), int(z12)), (0, int(z22)))


def integer_split(v) -> IntPair:
    """Split a two-vector with integer total into integer parts: first part
    floors, second takes the remainder. Preserves the total exactly."""
    if v[0] < -1e-12 or v[1] < -1e-12:
        raise PreconditionViolation(f"components of {v} must be nonnegative")
    total = v[0] + v[1]
    t = round(total)
    if abs(total - t) > 1e-9:
        raise NonIntegerSum(f"components of {v} sum to {total}, not an integer")
    k = min(math.floor(v[0]), t)
    return (int(k), int(t - k))


class MarkovControlField:
    """A (t, s) control field on a rectangular scaled-state grid.

    Evaluation is bilinear between nodes and clamps outside the box, so the
    induced field is continuous on the whole plane. Stored values must lie
    in the unit square.
    """

    def __init__(self, axis1, axis2, t, s):
        self.axis1 = np.asarray(axis1, dtype=float)
        self.axis2 = np.asarray(axis2, dtype=float)
        self.t = np.asarray(t, dtype=float)
        self.s = np.asarray(s, dtype=float)
        if self.axis1.ndim != 1 or self.axis2.ndim != 1:
            raise PreconditionViolation("grid axes must be one-dimensional")
        if np.any(np.diff(self.axis1) <= 0) or np.any(np.diff(self.axis2) <= 0):
            raise PreconditionViolation("grid axes must be strictly increasing")
        shape = (self.axis1.size, self.axis2.size)
        if self.t.shape != shape or self.s.shape != shape:
            raise PreconditionViolation(
                f"value arrays {self.t.shape} do not match grid {shape}"
            )
        for arr, name in ((self.t, "t"), (self.s, "s")):
            if np.any(arr < 0) or np.any(arr > 1) or np.any(~np.isfinite(arr)):
                raise PreconditionViolation(f"{name} values must lie in [0, 1]")

    @classmethod
    def constant(cls, t: float, s: float, box: float = 1.0) -> "MarkovControlField":
        ax = np.array([-box, box])
        return cls(ax, ax, np.full((2, 2), t), np.full((2, 2), s))

    @staticmethod
    def _locate(axis: np.ndarray, w: float):
        if w <= axis[0] or axis.size == 1:
            return 0, 0, 0.0
        if w >= axis[-1]:
            return axis.size - 1, axis.size - 1, 0.0
        i1 = int(np.searchsorted(axis, w, side="right"))
        i0 = i1 - 1
        return i0, i1, (w - axis[i0]) / (axis[i1] - axis[i0])

    def evaluate(self, xhat) -> ControlVector:
        i0, i1, fa = self._locate(self.axis1, xhat[0])
        j0, j1, fb = self._locate(self.axis2, xhat[1])
        w00 = (1 - fa) * (1 - fb)
        w01 = (1 - fa) * fb
        w10 = fa * (1 - fb)
        w11 = fa * fb
        t = (
            w00 * self.t[i0, j0]
            + w01 * self.t[i0, j1]
            + w10 * self.t[i1, j0]
            + w11 * self.t[i1, j1]
        )
        s = (
            w00 * self.s[i0, j0]
            + w01 * self.s[i0, j1]
            + w10 * self.s[i1, j0]
            + w11 * self.s[i1, j1]
        )
        return ControlVector(t=min(max(t, 0.0), 1.0), s=min(max(s, 0.0), 1.0))

    def evaluate_arrays(self, x1, x2):
        """Vectorized bilinear evaluation with clamping: arrays in, (t, s) out."""
        a1, a2 = self.axis1, self.axis2
        w1 = np.clip(x1, a1[0], a1[-1])
        w2 = np.clip(x2, a2[0], a2[-1])
        i1 = np.clip(np.searchsorted(a1, w1, side="right") - 1, 0, a1.size - 2)
        j1 = np.clip(np.searchsorted(a2, w2, side="right") - 1, 0, a2.size - 2)
        f1 = (w1 - a1[i1]) / (a1[i1 + 1] - a1[i1])
        f2 = (w2 - a2[j1]) / (a2[j1 + 1] - a2[j1])

        def bilin(val):
            return (
                val[i1, j1] * (1 - f1) * (1 - f2)
                + val[i1, j1 + 1] * (1 - f1) * f2
                + val[i1 + 1, j1] * f1 * (1 - f2)
                + val[i1 + 1, j1 + 1] * f1 * f2
            )

        return np.clip(bilin(self.t), 0.0, 1.0), np.clip(bilin(self.s), 0.0, 1.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["xhat1", "xhat2", "t", "s"])
            for i, a in enumerate(self.axis1):
                for j, b in enumerate(self.axis2):
                    w.writerow([repr(float(a)), repr(float(b)),
                                repr(float(self.t[i, j])), repr(float(self.s[i, j]))])

    @classmethod
    def from_csv(cls, path) -> "MarkovControlField":
        rows = []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header[:4] != ["xhat1", "xhat2", "t", "s"]:
                raise PreconditionViolation(f"unexpected control-field header {header}")
            for row in r:
                rows.append(tuple(float(v) for v in row[:4]))
        a1 = np.array(sorted({r[0] for r in rows}))
        a2 = np.array(sorted({r[1] for r in rows}))
        if len(rows) != a1.size * a2.size:
            raise PreconditionViolation("control-field rows do not fill the lattice")
        idx1 = {v: i for i, v in enumerate(a1)}
        idx2 = {v: j for j, v in enumerate(a2)}
        t = np.full((a1.size, a2.size), np.nan)
        s = np.full((a1.size, a2.size), np.nan)
        for v1, v2, tv, sv in rows:
            t[idx1[v1], idx2[v2]] = tv
            s[idx1[v1], idx2[v2]] = sv
        if np.any(np.isnan(t)) or np.any(np.isnan(s)):
            raise PreconditionViolation("control-field lattice has holes")
        return cls(a1, a2, t, s)


def induced_schedule(x, v: MarkovControlField, inst: SystemInstance) -> ScheduleDecision:
    """Decision induced by a scaled-state control field.

    The signed total surplus relative to the staffed total is split across
    queues (surplus) or idle pools (deficit) in proportions read from the
    field, rounded to integers preserving the total, then completed to an
    allocation by the JWC rectangle. The total is centered at the integer
    staffing level so the integer-split precondition holds exactly.
    """
    xhat = diffusion_scale(x, inst)
    u = v.evaluate(xhat)
    delta = int(x[0] + x[1]) - inst.total_pool
    if delta >= 0:
        q = integer_split((delta * u.uc[0], delta * u.uc[1]))
        y = (0, 0)
    else:
        q = (0, 0)
        y = integer_split((-delta * u.us[0], -delta * u.us[1]))
    z = jwc_rectangle(x, q, y, inst)
    return ScheduleDecision(z=z, q=q, y=y)


_fallback_logged: set = set()


def concatenated_schedule(
    x, v: MarkovControlField, radius: float, inst: SystemInstance
) -> ScheduleDecision:
    """Field-induced decision inside the fluid-scaled ball, priority rule
    outside. Falls back to the priority rule if the induced decision is
    infeasible (the ball was set larger than the safe region)."""
    xs = inst.fluid.xstar
    dist = abs(x[0] - inst.n * xs[0]) + abs(x[1] - inst.n * xs[1])
    if dist <= radius * inst.n:
        try:
            return induced_schedule(x, v, inst)
        except (PreconditionViolation, InfeasibleRectangle):
            key = (inst.n, radius)
            if key not in _fallback_logged:
                _fallback_logged.add(key)
                logger.warning(
                    "induced decision infeasible at x=%s (n=%d, radius=%g); "
                    "falling back to the priority rule",
                    x, inst.n, radius,
                )
    return sdp_schedule(x, inst)


def control_readout(d: ScheduleDecision) -> ControlVector:
    """Control-set point realized by a decision: queue and idleness
    proportions, with defaults (1,0) and (0,1) when the totals vanish."""
    eq = d.q[0] + d.q[1]
    ey = d.y[0] + d.y[1]
    t = d.q[0] / eq if eq > 0 else 1.0
    s = d.y[0] / ey if ey > 0 else 0.0
    return ControlVector(t=t, s=s)


def _ball_states(inst: SystemInstance, cap: int):
    """Integer states and their l1 distances from the fluid point, within cap."""
    c1 = inst.n * inst.fluid.xstar[0]
    c2 = inst.n * inst.fluid.xstar[1]
    lo1, hi1 = max(0, math.floor(c1 - cap)), math.ceil(c1 + cap)
    lo2, hi2 = max(0, math.floor(c2 - cap)), math.ceil(c2 + cap)
    x1 = np.arange(lo1, hi1 + 1)
    x2 = np.arange(lo2, hi2 + 1)
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    dist = np.abs(g1 - c1) + np.abs(g2 - c2)
    keep = dist <= cap
    return g1[keep], g2[keep], dist[keep]


def _largest_passing_radius(dist: np.ndarray, ok: np.ndarray, cap: int) -> float:
    if np.all(ok):
        return float(cap)
    worst = float(dist[~ok].min())
    passing = dist[dist < worst]
    return float(passing.max()) if passing.size else 0.0


def jwc_ball_fraction(inst: SystemInstance) -> float:
    """Largest c (as measured on this instance) such that every integer state
    within l1 distance c*n of the fluid point is a JWC state."""
    xs = inst.fluid.xstar
    cap = int(min(inst.n * xs[0], inst.n * xs[1]) * 0.95)
    g1, g2, dist = _ball_states(inst, cap)
    n1, n2 = inst.pools
    tot = g1 + g2
    surplus = tot >= n1 + n2
    ok = np.where(
        surplus,
        g1 >= n1 + np.maximum(n2 - g2, 0),
        g2 <= n2 - np.maximum(g1 - n1, 0),
    )
    return _largest_passing_radius(dist, ok, cap) / inst.n


def induced_ball_fraction(inst: SystemInstance) -> float:
    """Largest c such that within l1 distance c*n of the fluid point every
    integer split of the surplus (or deficit) yields a feasible rectangle,
    whatever proportions a control field may produce."""
    xs = inst.fluid.xstar
    cap = int(min(inst.n * xs[0], inst.n * xs[1]) * 0.95)
    g1, g2, dist = _ball_states(inst, cap)
    n1, n2 = inst.pools
    delta = g1 + g2 - (n1 + n2)
    # surplus: every q-split feasible iff class 2 fits the shared pool and the
    # whole surplus could sit in either queue; deficit: every y-split feasible
    # iff pool 1 can always be kept full and the deficit fits either pool
    ok = np.where(
        delta >= 0,
        (g2 <= n2) & (g1 <= n1 + n2),
        (g1 >= n1) & (-delta <= min(n1, n2)),
    )
    return _largest_passing_radius(dist, ok, cap) / inst.n


def default_ball_fraction(inst: SystemInstance) -> float:
    """Half the measured JWC ball fraction; a conservative concatenation
    radius that also keeps every field-induced split feasible."""
    return 0.5 * jwc_ball_fraction(inst)
