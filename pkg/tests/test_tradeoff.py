import csv

import numpy as np
import pytest

import ncsresil as nr
from ncsresil.tradeoff import MAX_RATE_EXPONENT


def test_rate_grid_default_cap():
    pol = nr.SearchPolicy(drops_cap=6)
    grid = pol.rate_grid(0.01)
    assert grid.shape == (24,)
    assert grid[0] == pytest.approx(1e-2)
    # largest rate keeps the discount factor above underflow at the widest gap
    assert grid[-1] * 7 * 0.01 <= MAX_RATE_EXPONENT * (1 + 1e-9)


def test_rate_grid_rejects_overflow():
    pol = nr.SearchPolicy(rate_max=1e6, drops_cap=6)
    with pytest.raises(ValueError, match="rate_max"):
        pol.rate_grid(0.01)


def test_rate_grid_rejects_bad_tol():
    pol = nr.SearchPolicy(bisection_tol=0.0)
    with pytest.raises(ValueError, match="bisection_tol"):
        pol.rate_grid(0.01)


def test_scalar_curve_full_delay(scalar_loop):
    """The scalar loop tolerates the full sampling period of delay at every
    drop count up to the cap (frozen from a converged run)."""
    cl = scalar_loop[4]
    pol = nr.SearchPolicy(drops_cap=3, bisection_tol=1e-4)
    points = nr.tradeoff_curve(cl, 0.1, pol)
    assert [(p.drops, p.max_delay) for p in points] == [
        (0, 0.1), (1, 0.1), (2, 0.1), (3, 0.1)]
    for p in points:
        assert nr.check_certificate(p.certificate, cl).passed
        assert p.solves >= 2
        assert p.margin > 0


def test_unstable_loop_gives_empty_curve():
    plant = nr.PlantModel([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    controller = nr.ControllerModel([[0.0]], [[0.0]], [[0.0]], [[0.0]])
    cl = nr.assemble_closed_loop(plant, controller, nr.PerformanceOutput([[1.0, 0.0]]))
    pol = nr.SearchPolicy(drops_cap=1, rate_points=6)
    assert nr.tradeoff_curve(cl, 0.1, pol) == []
    assert nr.max_delay_for_drops(cl, 0.1, 0, pol) is None


def test_reactor_io_bisection(batch_reactor):
    """Frozen: at 2 drops the input-output mode certifies only part of the
    sampling period, so the bisection path is exercised."""
    cl = batch_reactor[4]
    pol = nr.SearchPolicy(mode=nr.INPUT_OUTPUT, drops_cap=2, bisection_tol=1e-3)
    pt = nr.max_delay_for_drops(cl, 0.01, 2, pol)
    assert pt is not None
    assert 0.003 < pt.max_delay < 0.006
    assert pt.max_delay < 0.01
    assert pt.certificate.mode == nr.INPUT_OUTPUT
    assert nr.check_certificate(pt.certificate, cl).passed


def test_parallel_jobs_deterministic(scalar_loop):
    cl = scalar_loop[4]
    base = nr.SearchPolicy(drops_cap=1, bisection_tol=1e-3)
    par = nr.SearchPolicy(drops_cap=1, bisection_tol=1e-3, jobs=4)
    a = nr.max_delay_for_drops(cl, 0.1, 1, base)
    b = nr.max_delay_for_drops(cl, 0.1, 1, par)
    assert a.max_delay == b.max_delay
    assert a.decay_rate == b.decay_rate
    np.testing.assert_array_equal(a.certificate.P1, b.certificate.P1)


def test_gamma_floor_scalar(scalar_loop):
    cl = scalar_loop[4]
    net = nr.NetworkParams(0.1, 0, 0.0)
    pol = nr.SearchPolicy(drops_cap=2)
    gain, cert = nr.gamma_floor(cl, net, pol, gain_hi=10.0, tol=0.05)
    assert gain == pytest.approx(0.742, abs=0.06)
    assert cert.mode == nr.INPUT_OUTPUT
    assert cert.gain <= 10.0
    assert nr.check_certificate(cert, cl).passed
    # monotonicity: the returned gain is itself feasible, a much smaller one is not
    with pytest.raises(ValueError):
        nr.gamma_floor(cl, net, nr.SearchPolicy(drops_cap=2), gain_hi=0.05)


def test_write_curve_csv(tmp_path, scalar_loop):
    cl = scalar_loop[4]
    pol = nr.SearchPolicy(drops_cap=0, bisection_tol=1e-3)
    points = nr.tradeoff_curve(cl, 0.1, pol)
    path = tmp_path / "curve.csv"
    nr.write_curve_csv(points, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["delta", "t_mad", "delta_rate", "gamma", "margin"]
    assert len(rows) == 1 + len(points)
    assert int(rows[1][0]) == 0
    assert float(rows[1][1]) == points[0].max_delay
