import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbc_lab.errors import ConfigError
from sbc_lab.jet import Jet
from sbc_lab.projection import (
    ProjectionConfig,
    estimate_jet,
    kappa,
    kappa_jet,
    lemma_gap,
    p_dot,
    p_dot_jet,
    switch_a,
    switch_a_jet,
    switch_b,
    switch_b_jet,
)

CFG = ProjectionConfig(rho=1.0, sigma=1.0, a=1.0, b=2.0, c=0.5)


@pytest.mark.parametrize(
    "kw",
    [dict(rho=0.0), dict(sigma=-1.0), dict(a=0.4), dict(a=2.5), dict(c=0.0), dict(rho=math.inf)],
)
def test_config_invariants(kw):
    base = dict(rho=1.0, sigma=1.0, a=1.0, b=2.0, c=0.5)
    base.update(kw)
    with pytest.raises(ConfigError):
        ProjectionConfig(**base)


def test_degenerate_interval_is_allowed():
    ProjectionConfig(rho=1.0, sigma=1.0, a=1.0, b=1.0, c=0.5)


def test_switch_examples():
    assert switch_a(CFG, 0.75) == 0.5
    assert switch_b(CFG, 2.25) == 0.5
    off = 1e-3 * CFG.c
    assert abs(switch_a(CFG, 0.5 + off) - 1.0) < 1e-12
    assert abs(switch_a(CFG, 1.0 - off)) < 1e-12
    assert abs(switch_b(CFG, 2.0 + off)) < 1e-12
    assert abs(switch_b(CFG, 2.5 - off) - 1.0) < 1e-12


@pytest.mark.parametrize("P", [0.5, 1.0, 0.2, 1.5])
def test_switch_a_domain(P):
    with pytest.raises(ValueError):
        switch_a(CFG, P)


@pytest.mark.parametrize("P", [2.0, 2.5, 3.0])
def test_switch_b_domain(P):
    with pytest.raises(ValueError):
        switch_b(CFG, P)


def test_kappa_examples():
    assert kappa(CFG, 1.5) == 0.0
    assert kappa(CFG, 2.6) == pytest.approx(-0.6, abs=1e-15)
    assert kappa(CFG, 2.25) == -0.125
    assert kappa(CFG, 0.25) == 0.75


def test_kappa_continuous_at_branch_points():
    eps = 1e-9
    for point in (0.5, 1.0, 2.0, 2.5):
        jump = abs(kappa(CFG, point + eps) - kappa(CFG, point - eps))
        # the outer branches have unit slope, so 2 eps of change is expected
        assert jump < 1e-9 + 2 * eps


def test_p_dot_examples():
    inside = ProjectionConfig(rho=3.0, sigma=1.0, a=1.0, b=2.0, c=0.5)
    assert p_dot(inside, 2.0, 1.5) == 6.0
    assert p_dot(CFG, 0.0, 2.6) == pytest.approx(-0.6, abs=1e-15)
    big = ProjectionConfig(rho=1000.0, sigma=1.0, a=1.0, b=2.0, c=0.5)
    assert p_dot(big, 0.0, 1.7) == 0.0


def test_p_dot_jet_examples():
    cfg = ProjectionConfig(rho=3.0, sigma=2.0, a=1.0, b=2.0, c=0.5)
    p = Jet([1.0, -2.0, 0.5])
    inside = p_dot_jet(cfg, p, Jet([1.5, 0.1, 0.2]))
    assert inside == 3.0 * p
    P = Jet([3.0, 0.1, 0.2])
    assert p_dot_jet(cfg, p, P) == 3.0 * (p + 2.0 * (2.0 - P))
    for P0 in (0.3, 0.7, 1.5, 2.2, 2.7):
        assert p_dot_jet(cfg, Jet([0.4]), Jet([P0])).value == p_dot(cfg, 0.4, P0)


def test_lemma_gap_examples():
    assert lemma_gap(CFG, 1.2, 0.7, 1.5) == (0.0, -0.0)
    lhs, bound = lemma_gap(CFG, 1.5, 0.3, 2.6)
    assert lhs == pytest.approx(-0.66, abs=1e-14) and bound == pytest.approx(-0.36, abs=1e-14)
    cfg = ProjectionConfig(rho=1.0, sigma=2.0, a=1.0, b=2.0, c=0.5)
    lhs, bound = lemma_gap(cfg, 1.0, 5.0, 0.4)
    assert lhs == pytest.approx(-0.72, abs=1e-14) and bound == pytest.approx(-0.72, abs=1e-14)


def test_lemma_gap_precondition():
    with pytest.raises(ValueError):
        lemma_gap(CFG, 2.5, 0.0, 1.0)


@settings(max_examples=500, deadline=None)
@given(
    st.floats(0.1, 5), st.floats(0.0, 5), st.floats(0.05, 3), st.floats(0.01, 10),
    st.floats(0, 1), st.floats(-5, 15), st.floats(-100, 100),
)
def test_projection_inequality(a_min, width, c_frac, sigma, pc_frac, P, p):
    c = c_frac * a_min / 3.0 + 1e-3
    a = a_min + c
    cfg = ProjectionConfig(rho=1.0, sigma=sigma, a=a, b=a + width, c=c)
    lhs, bound = lemma_gap(cfg, a + pc_frac * width, p, P)
    assert lhs <= bound + 1e-12 * max(1.0, abs(bound)) and bound <= 0.0


def test_switch_monotone_on_grid():
    grid_a = np.linspace(0.5, 1.0, 1002)[1:-1]
    sa = np.array([switch_a(CFG, P) for P in grid_a])
    assert np.all(np.diff(sa) <= 0) and sa[0] > sa[-1]
    grid_b = np.linspace(2.0, 2.5, 1002)[1:-1]
    sb = np.array([switch_b(CFG, P) for P in grid_b])
    assert np.all(np.diff(sb) >= 0) and sb[0] < sb[-1]


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_switch_derivatives_vanish_near_endpoints(order):
    off = 1e-3 * CFG.c
    for fn, points in ((switch_a_jet, (0.5 + off, 1.0 - off)), (switch_b_jet, (2.0 + off, 2.5 - off))):
        for P0 in points:
            jet = fn(CFG, Jet.variable(P0, order))
            assert max(abs(v) for v in jet.c[1:]) < 1e-9


def test_switch_jet_matches_finite_difference():
    h = 1e-6
    for P0 in (0.6, 0.75, 0.9):
        jet = switch_a_jet(CFG, Jet.variable(P0, 1))
        fd = (switch_a(CFG, P0 + h) - switch_a(CFG, P0 - h)) / (2 * h)
        assert jet.c[1] == pytest.approx(fd, rel=1e-6)


def test_kappa_jet_one_sided_limits_agree():
    eps = 1e-7
    for point in (0.5, 1.0, 2.0, 2.5):
        below = kappa_jet(CFG, Jet.variable(point - eps, 3))
        at = kappa_jet(CFG, Jet.variable(point, 3))
        above = kappa_jet(CFG, Jet.variable(point + eps, 3))
        for i in range(4):
            assert abs(below.c[i] - at.c[i]) < 1e-6 and abs(above.c[i] - at.c[i]) < 1e-6


def test_estimate_jet_follows_rate_law():
    cfg = ProjectionConfig(rho=2.0, sigma=3.0, a=1.0, b=2.0, c=0.5, smoothness_order=3)
    p = Jet([0.3, -0.4, 1.1])
    inside = estimate_jet(cfg, 1.5, p)
    assert inside.c == (1.5, 0.6, -0.8)  # rho * p, shifted
    P = estimate_jet(cfg, 2.2, p)
    assert P.order == p.order
    rate = p_dot_jet(cfg, p.truncate(1), P.truncate(1))
    assert P.c[1:] == rate.c
