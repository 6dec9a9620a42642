"""Limit diffusion: drift values, cost formulas, EM integration, MC averages."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnetctrl.diffusion import (
    DriftData,
    MCEstimate,
    constraint_costs_rj,
    drift_b,
    drift_b_arrays,
    em_step,
    ergodic_cost_mc,
    lagrangian_g,
    lagrangian_h,
    running_cost_functional,
    running_cost_r,
)
from nnetctrl.errors import PreconditionViolation
from nnetctrl.model import ControlVector, CostSpec
from nnetctrl.policies import MarkovControlField


@pytest.fixture(scope="module")
def d1(ref1=None):
    # REF1 coefficients: identity service matrix part, b2 = 0
    return DriftData(
        b1=(1.0, 1.0),
        b2=(0.0, 0.0),
        gamma=(0.5, 0.5),
        ell=(0.0, 0.0),
        sigma=(math.sqrt(2.6), math.sqrt(1.4)),
    )


@pytest.fixture(scope="module")
def d2():
    # REF2 coefficients: faster dedicated pool gives b2 = diag(1, 0)
    return DriftData(
        b1=(1.0, 1.0),
        b2=(1.0, 0.0),
        gamma=(1.0, 1.0),
        ell=(0.0, 0.0),
        sigma=(math.sqrt(6.0), math.sqrt(2.0)),
    )


def test_from_params_matches_handwritten(ref1, ref2, d1, d2):
    a = DriftData.from_params(ref1)
    assert a.b1 == d1.b1 and a.b2 == d1.b2 and a.gamma == d1.gamma
    assert a.ell == (0.0, 0.0)
    assert a.sigma == pytest.approx(d1.sigma)
    b = DriftData.from_params(ref2)
    assert b.b1 == d2.b1 and b.b2 == d2.b2
    assert b.sigma == pytest.approx(d2.sigma)


def test_drift_positive_surplus(d1):
    b = drift_b((1.0, 1.0), ControlVector(t=1.0, s=0.0), d1)
    assert b == pytest.approx((0.0, -1.0))


def test_drift_negative_surplus_b2_zero(d1):
    for t in (0.0, 0.3, 1.0):
        b = drift_b((-1.0, -1.0), ControlVector(t=t, s=0.0), d1)
        assert b == pytest.approx((1.0, 1.0))


def test_drift_origin(d1):
    assert drift_b((0.0, 0.0), ControlVector(t=0.5, s=0.5), d1) == (0.0, 0.0)


def test_drift_negative_surplus_b2_active(d2):
    b = drift_b((-1.0, -1.0), ControlVector(t=0.7, s=1.0), d2)
    assert b == pytest.approx((3.0, 1.0))


def test_running_cost_cases():
    c = CostSpec(xi=(3.0, 1.0), m=1.0)
    assert running_cost_r((1.0, 1.0), ControlVector(t=0.0, s=0.0), c) == 2.0
    c = CostSpec(xi=(1.0, 1.0), zeta=(1.0, 1.0), m=2.0)
    assert running_cost_r((-1.0, -1.0), ControlVector(t=0.0, s=0.5), c) == pytest.approx(2.0)
    assert running_cost_r((0.0, 0.0), ControlVector(t=0.3, s=0.8), c) == 0.0


def test_constraint_costs_cases():
    c = CostSpec(m_tilde=1.0)
    assert constraint_costs_rj((-2.0, 0.0), ControlVector(t=0.0, s=0.5), c) == (1.0, 1.0)
    assert constraint_costs_rj((1.0, 1.0), ControlVector(t=0.0, s=0.5), c) == (0.0, 0.0)
    c = CostSpec(m_tilde=2.0)
    assert constraint_costs_rj((-3.0, 0.0), ControlVector(t=0.0, s=1.0), c) == (9.0, 0.0)


def test_lagrangian_g_cases():
    c = CostSpec(delta=(0.5, 0.5))
    u = ControlVector(t=1.0, s=0.5)
    assert lagrangian_g((2.0, 1.0), u, c, (0.0, 0.0)) == running_cost_r((2.0, 1.0), u, c)
    assert lagrangian_g((0.0, 0.0), u, c, (1.0, 1.0)) == -1.0
    c = CostSpec(m_tilde=1.0, delta=(0.5, 0.5))
    assert lagrangian_g((-2.0, 0.0), ControlVector(t=0.0, s=0.5), c, (2.0, 0.0)) == 1.0
    with pytest.raises(PreconditionViolation):
        lagrangian_g((0.0, 0.0), u, c, (-1.0, 0.0))


def test_lagrangian_h_cases():
    c = CostSpec(m_tilde=1.0, theta=1.0)
    u = ControlVector(t=1.0, s=1.0)
    assert lagrangian_h((3.0, 0.0), u, c, 0.0) == running_cost_r((3.0, 0.0), u, c)
    assert lagrangian_h((-2.0, 0.0), u, c, 1.0) == 2.0
    assert lagrangian_h((0.0, 0.0), u, c, 5.0, eps=0.1, kappa2=7.0) == 0.0
    # regularization term scales with |x|^m
    val = lagrangian_h((3.0, 4.0), ControlVector(t=1.0, s=0.0), c, 0.0, eps=0.1, kappa2=2.0)
    base = lagrangian_h((3.0, 4.0), ControlVector(t=1.0, s=0.0), c, 0.0)
    assert val - base == pytest.approx(0.1 * 2.0 * 5.0)


def test_em_step_cases(d1):
    v = MarkovControlField.constant(1.0, 0.0)
    assert em_step((1.0, 1.0), v, 0.01, (0.0, 0.0), d1) == pytest.approx((1.0, 0.99))
    assert em_step((0.5, -0.2), v, 0.0, (0.3, -0.7), d1) == (0.5, -0.2)
    assert em_step((0.0, 0.0), v, 0.01, (0.0, 0.0), d1) == (0.0, 0.0)


@given(
    st.floats(-3, 3),
    st.floats(0, 1),
    st.floats(0, 1),
)
@settings(max_examples=200)
def test_drift_continuous_across_kink(x1, t, s):
    """Left/right limits across {x1 + x2 = 0} agree."""
    d = DriftData(
        b1=(1.0, 2.0), b2=(0.5, 0.0), gamma=(0.3, 0.8), ell=(0.1, -0.2),
        sigma=(1.0, 1.0),
    )
    u = ControlVector(t=t, s=s)
    eps = 1e-9
    left = drift_b((x1, -x1 - eps), u, d)
    right = drift_b((x1, -x1 + eps), u, d)
    assert left[0] == pytest.approx(right[0], abs=1e-7)
    assert left[1] == pytest.approx(right[1], abs=1e-7)


@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=200)
def test_drift_affine_in_controls(x1, x2, t, s):
    """Second differences in t and in s vanish: drift is affine in controls."""
    d = DriftData(
        b1=(1.3, 0.9), b2=(0.4, 0.0), gamma=(0.2, 0.6), ell=(0.05, 0.0),
        sigma=(1.0, 1.0),
    )
    for i in range(2):
        f = lambda tt: drift_b((x1, x2), ControlVector(t=tt, s=s), d)[i]
        second = f(0.0) - 2.0 * f(0.5) + f(1.0)
        assert abs(second) < 1e-12
        g = lambda ss: drift_b((x1, x2), ControlVector(t=t, s=ss), d)[i]
        second = g(0.0) - 2.0 * g(0.5) + g(1.0)
        assert abs(second) < 1e-12


@given(
    st.floats(-4, 4), st.floats(-4, 4),
    st.floats(0, 1), st.floats(0, 1),
    st.floats(0, 1), st.floats(0, 1),
    st.floats(1, 3),
)
@settings(max_examples=200)
def test_running_cost_convex_in_controls(x1, x2, ta, sa, tb, sb, m):
    c = CostSpec(xi=(2.0, 1.0), zeta=(1.0, 3.0), m=m)
    ua = ControlVector(t=ta, s=sa)
    ub = ControlVector(t=tb, s=sb)
    um = ControlVector(t=0.5 * (ta + tb), s=0.5 * (sa + sb))
    mid = running_cost_r((x1, x2), um, c)
    avg = 0.5 * running_cost_r((x1, x2), ua, c) + 0.5 * running_cost_r((x1, x2), ub, c)
    assert mid <= avg + 1e-9


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 1))
@settings(max_examples=200)
def test_priority_control_closed_form(x1, x2, s):
    """With all queueing weight on class 1 the second drift coordinate is a
    pure restoring term, and the first has a two-branch closed form."""
    d = DriftData(
        b1=(0.7, 1.1), b2=(0.9, 0.0), gamma=(0.4, 0.3), ell=(0.2, -0.1),
        sigma=(1.0, 1.0),
    )
    u = ControlVector(t=1.0, s=s)
    b = drift_b((x1, x2), u, d)
    assert b[1] == pytest.approx(-d.b1[1] * x2 + d.ell[1], abs=1e-12)
    ex = x1 + x2
    if ex >= 0:
        expected = -d.b1[0] * (x1 - ex) - ex * d.gamma[0] + d.ell[0]
    else:
        expected = -d.b1[0] * x1 + (-ex) * d.b2[0] * s + d.ell[0]
    assert b[0] == pytest.approx(expected, abs=1e-12)


def test_drift_arrays_match_scalar(d2):
    rng = np.random.default_rng(0)
    x1 = rng.normal(size=50)
    x2 = rng.normal(size=50)
    t = rng.uniform(size=50)
    s = rng.uniform(size=50)
    b1, b2 = drift_b_arrays(x1, x2, t, s, d2)
    for i in range(50):
        ref = drift_b((x1[i], x2[i]), ControlVector(t=t[i], s=s[i]), d2)
        assert (b1[i], b2[i]) == pytest.approx(ref, abs=1e-14)


def test_mc_constant_functional(d1):
    v = MarkovControlField.constant(1.0, 0.0)
    est = ergodic_cost_mc(v, lambda x1, x2, t, s: 1.0, 5.0, 0.01, 1.0, 4, d1)
    assert est.mean == pytest.approx(1.0)
    assert est.std_error == pytest.approx(0.0, abs=1e-12)


def test_mc_reproducible_and_finite(d1, linear_cost):
    v = MarkovControlField.constant(1.0, 0.0)
    f = running_cost_functional(linear_cost)
    a = ergodic_cost_mc(v, f, 40.0, 0.002, 4.0, 11, d1)
    b = ergodic_cost_mc(v, f, 40.0, 0.002, 4.0, 11, d1)
    assert a == b
    assert a.mean > 0 and math.isfinite(a.mean)


def test_mc_vectorized_branch(d1, linear_cost):
    v = MarkovControlField.constant(1.0, 0.0)
    f = running_cost_functional(linear_cost)
    est = ergodic_cost_mc(v, f, 20.0, 0.002, 2.0, 11, d1, n_paths=8)
    assert est.paths == 8 and est.nbatches == 160
    assert est.mean > 0 and est.std_error > 0
    single = ergodic_cost_mc(v, f, 20.0, 0.002, 2.0, 12, d1)
    # independent estimators of the same quantity: loose agreement
    assert abs(est.mean - single.mean) < 10 * (est.std_error + single.std_error) + 0.3
