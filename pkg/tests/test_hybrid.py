import numpy as np
import pytest

import ncsresil as nr
from ncsresil.hybrid import ScheduleEntry, ScheduleViolation


def scalar_cl():
    plant = nr.PlantModel([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    controller = nr.ControllerModel([[-1.0]], [[1.0]], [[-2.0]], [[0.0]])
    return nr.assemble_closed_loop(plant, controller, nr.PerformanceOutput([[1.0, 0.0]]))


def test_flow_equilibrium():
    cl = scalar_cl()
    s = nr.HybridState(np.zeros(2), np.zeros(1), np.zeros(1), 0.37, 1)
    d = nr.flow_derivative(cl, s, np.zeros(1))
    np.testing.assert_array_equal(d.x, np.zeros(2))
    np.testing.assert_array_equal(d.eta, np.zeros(1))
    np.testing.assert_array_equal(d.sigma, np.zeros(1))
    assert d.timer == 1.0 and d.phase == 0


def test_flow_scalar_by_hand():
    cl = scalar_cl()
    s = nr.HybridState([1.0, 0.0], [0.0], [0.0], 0.0, 0)
    d = nr.flow_derivative(cl, s, [0.0])
    np.testing.assert_allclose(d.x, [-1.0, 1.0])
    np.testing.assert_allclose(d.eta, [1.0])
    np.testing.assert_allclose(d.sigma, [1.0])


def test_error_derivatives_identical():
    cl = scalar_cl()
    rng = np.random.default_rng(7)
    for _ in range(50):
        s = nr.HybridState(rng.standard_normal(2), rng.standard_normal(1),
                           rng.standard_normal(1), rng.uniform(0, 1), int(rng.integers(2)))
        d = nr.flow_derivative(cl, s, rng.standard_normal(1))
        np.testing.assert_array_equal(d.eta, d.sigma)


def test_jump_sample_event():
    s = nr.HybridState([1.0, 2.0], [3.0], [5.0], 0.01, 0)
    post = nr.jump(s)
    np.testing.assert_array_equal(post.x, s.x)
    np.testing.assert_array_equal(post.eta, [3.0])
    np.testing.assert_array_equal(post.sigma, [0.0])
    assert post.timer == 0.0 and post.phase == 1


def test_jump_update_event():
    s = nr.HybridState([1.0, 2.0], [3.0], [5.0], 0.004, 1)
    post = nr.jump(s)
    np.testing.assert_array_equal(post.eta, [5.0])
    np.testing.assert_array_equal(post.sigma, [5.0])
    assert post.timer == 0.004 and post.phase == 0


def test_double_jump_resets_hold_error():
    # sample then immediate delivery: hold error ends at zero
    s = nr.HybridState(np.random.default_rng(0).standard_normal(2), [3.0], [5.0], 0.01, 0)
    post = nr.jump(nr.jump(s))
    np.testing.assert_array_equal(post.eta, [0.0])
    assert post.phase == 0


def test_flow_jump_set_membership():
    net = nr.NetworkParams(0.01, 2, 0.004)
    mk = lambda timer, phase: nr.HybridState([0.0], [0.0], [0.0], timer, phase)
    boundary = mk(3 * 0.01, 0)
    assert nr.in_flow_set(boundary, net) and nr.in_jump_set(boundary, net)
    mid = mk(1.5 * 0.01, 0)
    assert nr.in_flow_set(mid, net) and not nr.in_jump_set(mid, net)
    at_delay = mk(0.004, 1)
    assert nr.in_flow_set(at_delay, net) and nr.in_jump_set(at_delay, net)
    past_delay = mk(0.004 + 1e-6, 1)
    assert not nr.in_flow_set(past_delay, net) and not nr.in_jump_set(past_delay, net)


def test_distance_to_target():
    target = nr.TargetSet(2, 0.01)
    inside = nr.HybridState([0.0, 0.0], [0.0], [0.0], 0.02, 1)
    assert target.distance(inside) == 0.0
    pythagoras = nr.HybridState([3.0, 4.0], [0.0], [0.0], 0.01, 1)
    assert target.distance(pythagoras) == pytest.approx(5.0)
    late = nr.HybridState([0.0, 0.0], [0.0], [0.0], 3 * 0.01 + 1.0, 0)
    assert target.distance(late) == pytest.approx(1.0)


def schedule_from_pattern(pattern):
    return nr.AttackSchedule(tuple(
        ScheduleEntry(k, action[0] == "S", action[1] if action[0] == "S" else 0.0)
        for k, action in enumerate(pattern)
    ))


def test_validate_schedule_ok():
    net = nr.NetworkParams(0.01, 2, 0.002)
    sched = schedule_from_pattern([("D",), ("D",), ("S", 0.001), ("D",), ("S", 0.0)])
    assert nr.validate_schedule(sched, net) is None


def test_validate_schedule_run_too_long():
    net = nr.NetworkParams(0.01, 2, 0.002)
    sched = schedule_from_pattern([("D",), ("D",), ("D",), ("S", 0.0)])
    v = nr.validate_schedule(sched, net)
    assert isinstance(v, ScheduleViolation)
    assert v.index == 2
    assert "consecutive drops" in v.reason


def test_validate_schedule_delay_bound():
    net = nr.NetworkParams(0.01, 2, 0.002)
    sched = schedule_from_pattern([("S", 0.003)])
    v = nr.validate_schedule(sched, net)
    assert v is not None and "delay" in v.reason


def test_enumerate_no_drops_when_forbidden():
    net = nr.NetworkParams(0.01, 0, 0.004)
    for sched in nr.enumerate_worst_schedules(net, 10, seed=3):
        assert all(e.delivered for e in sched.entries)


def test_enumerate_contains_periodic_worst_case():
    net = nr.NetworkParams(0.01, 1, 0.002)
    schedules = list(nr.enumerate_worst_schedules(net, 4))
    patterns = {tuple(e.delivered for e in s.entries) for s in schedules}
    assert (False, True, False, True) in patterns


def test_enumerate_always_admissible_property():
    # ~1000 seeded schedules across parameter combinations
    count = 0
    for seed in range(30):
        for drops in (0, 1, 3):
            net = nr.NetworkParams(0.01, drops, 0.005)
            for sched in nr.enumerate_worst_schedules(net, 25, n_random=8, seed=seed):
                assert nr.validate_schedule(sched, net) is None
                count += 1
    assert count >= 1000


def test_schedule_json_round_trip():
    sched = schedule_from_pattern([("D",), ("S", 0.001), ("S", 0.0)])
    again = nr.AttackSchedule.from_json(sched.to_json())
    assert again == sched


def test_network_params_validation():
    with pytest.raises(ValueError):
        nr.NetworkParams(0.0, 0, 0.0)
    with pytest.raises(ValueError):
        nr.NetworkParams(0.01, -1, 0.0)
    with pytest.raises(ValueError):
        nr.NetworkParams(0.01, 0, 0.02)
