import numpy as np
import pytest

from sbc_lab import expr as ex
from sbc_lab.analysis import (
    compare,
    eBe_series,
    lyapunov,
    metrics,
    monotonicity_report,
    nu_series,
    virtual_stability_residuals,
    weight_matrices,
)
from sbc_lab.controller import ControllerConfig
from sbc_lab.plant import SffModel
from sbc_lab.sim import SimConfig, Trace, simulate


def zero_trace(rows=5, n=3, names=("theta_1_1",)):
    z = np.zeros
    return Trace(np.arange(rows) * 0.1, z((rows, n)), z((rows, n)), z((rows, n)), z(rows),
                 z((rows, len(names))), z((rows, n - 1)), z(rows), names)


def test_lyapunov_examples(runs):
    spec, _, _ = runs.get("c2")
    cfg = spec.controller.bind(spec.model)
    snap = lyapunov(spec.model, cfg, [0.0] * 3, [[0.0, 0.0], [0.0, 0.0], [0.0]])
    assert snap.nu == (0.0, 0.0, 0.0) and snap.nu_tot == 0.0
    one = SffModel.from_strings([{"theta": [2.0]}])
    assert lyapunov(one, ControllerConfig((1.0,), (), "fixed", ((2.0,),)), [1.0], [[0.0]]).nu_tot == 1.0
    c2 = lyapunov(spec.model, cfg, [0.0] * 3, [[0.0, -1.0], [0.0, 1.0], [0.0]])
    assert c2.nu_tot == pytest.approx(0.0255, rel=1e-14)


def test_lyapunov_matches_matrix_form(runs):
    spec, _, _ = runs.get("c2")
    cfg = spec.controller.bind(spec.model)
    A, B = weight_matrices(spec.model, cfg)
    rng = np.random.default_rng(30)
    for _ in range(100):
        e = rng.normal(size=3)
        err = [[0.0, rng.normal()], [0.0, rng.normal()], [0.0]]
        snap = lyapunov(spec.model, cfg, e, err)
        param = 0.5 * (err[0][1] ** 2 / 1000.0 + err[1][1] ** 2 / 2.0 / 10.0)
        assert snap.nu_tot == pytest.approx(0.5 * e @ A @ e + param, rel=1e-12, abs=1e-15)
        assert snap.eBe == pytest.approx(e @ B @ e, rel=1e-12)
        assert snap.eAe >= 0 and snap.eBe >= 0 and min(snap.nu) >= 0


def test_lyapunov_dimension_check(model):
    cfg = ControllerConfig((1.0, 1.0, 1.0), (1.0, 1.0), "fixed", ((1, 1), (1, 1), (1,)))
    with pytest.raises(ValueError):
        lyapunov(model, cfg, [0.0, 0.0], [[0, 0], [0, 0]])


def test_metrics_of_zero_trace():
    m = metrics(zero_trace())
    assert m.max_abs_e == (0.0, 0.0, 0.0) and m.final_abs_e == (0.0, 0.0, 0.0)
    assert m.theta_hat_terminal == {"theta_1_1": 0.0}
    with pytest.raises(ValueError):
        metrics(zero_trace(rows=0))


def test_metrics_serialise(runs):
    _, trace, _ = runs.get("c2")
    d = metrics(trace).to_dict()
    assert set(d) == {"max_abs_e", "final_abs_e", "theta_hat_terminal"}
    assert d["max_abs_e"][0] == pytest.approx(0.023, rel=0.05)


def test_equilibrium_has_no_monotonicity_violations(model):
    truth = tuple(s.theta for s in model.subsystems)
    cfg = ControllerConfig((10.0, 20.0, 40.0), (10.0, 20.0), "fixed", truth)
    trace = simulate(model, cfg, ex.parse("0"), SimConfig(dt=1e-3, duration=0.5, record_stride=10))
    assert monotonicity_report(trace, cfg) == []


def test_frozen_wrong_estimates_trip_the_detector(runs):
    spec, trace, _ = runs.get("c1")
    assert monotonicity_report(trace, spec.controller) != []


def test_nu_series_matches_recorded_total(runs):
    spec, trace, _ = runs.get("c2")
    nu = nu_series(trace, spec.model, spec.controller)
    assert np.allclose(nu.sum(axis=1), trace.nu_tot, rtol=1e-12, atol=1e-15)


def test_virtual_stability_on_fine_c2(runs):
    spec, fine, _ = runs.fine("c2")
    res = virtual_stability_residuals(fine, spec.model, spec.controller)
    scale = np.maximum(1.0, np.abs(np.diff(nu_series(fine, spec.model, spec.controller), axis=0)) / 1e-5)
    assert np.all(res <= 1e-3 * scale)


def test_telescoping_on_fine_c2(runs):
    spec, fine, _ = runs.fine("c2")
    rate = np.diff(fine.nu_tot) / np.diff(fine.t)
    eBe = eBe_series(fine, spec.controller)
    mid = 0.5 * (eBe[1:] + eBe[:-1])
    inside = np.all((fine.theta_hat[:, [1, 3]] > 1.0) & (fine.theta_hat[:, [1, 3]] < 9.0), axis=1)
    both = inside[1:] & inside[:-1]
    assert both.any()
    assert np.all(np.abs(rate + mid)[both] <= 1e-3 * np.maximum(1.0, mid[both]))


def test_compare_examples(runs):
    _, c1, _ = runs.get("c1")
    _, c2, _ = runs.get("c2")
    same = compare(c2, c2)
    assert set(same.values()) == {0.0}
    assert compare(c1, c2, 0.0, 10.0)["e1"] > 0.1
    with pytest.raises(ValueError):
        compare(c2, c2.every(2))
    with pytest.raises(ValueError):
        compare(c2, c2, 20.0, 30.0)
