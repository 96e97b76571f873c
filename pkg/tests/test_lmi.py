import numpy as np
import pytest

import ncsresil as nr
from ncsresil.lmi import (
    LmiConstraint,
    pack_sym,
    point_is_feasible,
    sym_dim,
    unpack_sym,
)


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(0)
    for n in (1, 2, 4, 7):
        A = rng.standard_normal((n, n))
        P = 0.5 * (A + A.T)
        v = pack_sym(P)
        assert v.shape == (sym_dim(n),)
        np.testing.assert_array_equal(unpack_sym(v, n), P)


def test_constraint_affinity(batch_reactor):
    """Each constraint map is affine: evaluate matches const + sum v_i coeffs."""
    cl = batch_reactor[4]
    net = nr.NetworkParams(0.01, 1, 0.002)
    prob = nr.build_problem(cl, 1.0, 5.0, net, nr.INPUT_OUTPUT)
    rng = np.random.default_rng(2)
    v = rng.standard_normal(prob.nvar)
    u = rng.standard_normal(prob.nvar)
    for c in prob.constraints:
        S_sum = c.evaluate(v + u)
        S_lin = c.evaluate(v) + c.evaluate(u) - c.const
        np.testing.assert_allclose(S_sum, S_lin, atol=1e-10)


def test_problem_structure(batch_reactor):
    cl = batch_reactor[4]
    net = nr.NetworkParams(0.01, 2, 0.002)
    prob = nr.build_problem(cl, 1.0, 5.0, net, nr.ZERO_INPUT)
    names = [c.name for c in prob.constraints]
    assert len(names) == 11
    assert sum(n.startswith("pd:") for n in names) == 5
    assert sum(n.startswith("jump:") for n in names) == 2
    assert sum(n.startswith("vertex:") for n in names) == 4
    # zero-input vertex blocks have no disturbance row
    dim_zi = cl.n_states + 2 * cl.n_outputs
    for c in prob.constraints:
        if c.name.startswith("vertex:"):
            assert c.dim == dim_zi
    assert prob.nvar == sym_dim(cl.n_states) + 4 * sym_dim(cl.n_outputs)


def test_blocks_and_certificate_round_trip(batch_reactor):
    cl = batch_reactor[4]
    net = nr.NetworkParams(0.01, 0, 0.0)
    prob = nr.build_problem(cl, 2.0, 5.0, net, nr.ZERO_INPUT)
    v = prob.reference_point()
    P1, P20, P21, P30, P31 = prob.blocks(v)
    for P, n in ((P1, cl.n_states), (P20, cl.n_outputs), (P31, cl.n_outputs)):
        np.testing.assert_array_equal(P, np.eye(n))
    cert = prob.certificate(v)
    assert cert.decay_rate == 2.0 and cert.net == net


def test_vertex_constraint_matches_condition_matrix(batch_reactor):
    """The linearized vertex slack equals minus the dense condition matrix."""
    cl = batch_reactor[4]
    net = nr.NetworkParams(0.01, 2, 0.002)
    prob = nr.build_problem(cl, 3.0, 4.0, net, nr.INPUT_OUTPUT)
    rng = np.random.default_rng(3)
    v = rng.standard_normal(prob.nvar)
    P1, P20, P21, P30, P31 = prob.blocks(v)
    from ncsresil.certificate import vertex_points
    vertex_cons = [c for c in prob.constraints if c.name.startswith("vertex:")]
    for c, (tau, phase) in zip(vertex_cons, vertex_points(net)):
        P2 = P20 if phase == 0 else P21
        P3 = P30 if phase == 0 else P31
        M = nr.condition_matrix(cl, P1, P2, P3, 3.0, 4.0, tau, nr.INPUT_OUTPUT)
        np.testing.assert_allclose(c.evaluate(v), -M, atol=1e-9)


def test_verify_point_margins(batch_reactor):
    cl = batch_reactor[4]
    net = nr.NetworkParams(0.01, 0, 0.0)
    prob = nr.build_problem(cl, 1.0, 5.0, net, nr.ZERO_INPUT)
    margins = nr.verify_point(prob, prob.reference_point())
    assert set(margins) == {c.name for c in prob.constraints}
    # at the identity point every PD block has margin exactly 1
    for name, val in margins.items():
        if name.startswith("pd:"):
            assert val == pytest.approx(1.0)


def test_feasible_on_stable_scalar(scalar_loop):
    cl = scalar_loop[4]
    net = nr.NetworkParams(0.1, 0, 0.0)
    res = nr.solve(nr.build_problem(cl, 5.0, 5.0, net, nr.ZERO_INPUT))
    assert res.feasible
    assert res.certificate is not None
    assert nr.check_certificate(res.certificate, cl).passed
    assert res.iterations > 0 and res.solve_time > 0


def test_infeasible_on_unstable_scalar():
    # open-loop unstable plant with zero controller: no certificate can exist
    plant = nr.PlantModel([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    controller = nr.ControllerModel([[0.0]], [[0.0]], [[0.0]], [[0.0]])
    cl = nr.assemble_closed_loop(plant, controller, nr.PerformanceOutput([[1.0, 0.0]]))
    net = nr.NetworkParams(0.1, 0, 0.0)
    res = nr.solve(nr.build_problem(cl, 0.1, 5.0, net, nr.ZERO_INPUT))
    assert not res.feasible
    assert res.certificate is None
    assert res.diagnostics


def test_batch_reactor_known_feasibility(batch_reactor):
    """Frozen ground truth: 2 drops feasible at some rate, 3 drops infeasible
    at every rate on the default grid (zero-delay, zero-input)."""
    cl = batch_reactor[4]
    from conftest import first_feasible
    assert first_feasible(cl, nr.NetworkParams(0.01, 2, 0.0), nr.ZERO_INPUT) is not None
    assert first_feasible(cl, nr.NetworkParams(0.01, 3, 0.0), nr.ZERO_INPUT) is None


def test_projection_backend_agrees(scalar_loop):
    cl = scalar_loop[4]
    net = nr.NetworkParams(0.1, 1, 0.01)
    prob = nr.build_problem(cl, 5.0, 5.0, net, nr.ZERO_INPUT)
    res = nr.solve(prob, nr.SolverOptions(backend="projection", max_iterations=8000))
    assert res.feasible
    assert nr.check_certificate(res.certificate, cl).passed


def test_unknown_backend_rejected(scalar_loop):
    cl = scalar_loop[4]
    prob = nr.build_problem(cl, 0.1, 5.0, nr.NetworkParams(0.1), nr.ZERO_INPUT)
    with pytest.raises(ValueError, match="backend"):
        nr.solve(prob, nr.SolverOptions(backend="magic"))


def test_solver_determinism(scalar_loop):
    cl = scalar_loop[4]
    prob = nr.build_problem(cl, 5.0, 5.0, nr.NetworkParams(0.1, 1, 0.005), nr.ZERO_INPUT)
    r1 = nr.solve(prob)
    r2 = nr.solve(prob)
    assert r1.status == r2.status and r1.margin == r2.margin
    np.testing.assert_array_equal(r1.certificate.P1, r2.certificate.P1)


def test_invalid_parameters_rejected(scalar_loop):
    cl = scalar_loop[4]
    net = nr.NetworkParams(0.1)
    with pytest.raises(ValueError):
        nr.build_problem(cl, 0.0, 5.0, net, nr.ZERO_INPUT)
    with pytest.raises(ValueError):
        nr.build_problem(cl, 1.0, -1.0, net, nr.ZERO_INPUT)


def random_small_problem(rng):
    """Random 2x2 affine LMI in 3 variables wrapped as an LmiProblem-like list."""
    nvar = 3
    const = _sym(rng, 2)
    coeffs = np.stack([_sym(rng, 2) for _ in range(nvar)])
    return LmiConstraint("rand", "pos-def", const, coeffs)


def _sym(rng, n):
    A = rng.standard_normal((n, n))
    return 0.5 * (A + A.T)


def test_point_is_feasible_thresholds(batch_reactor, reactor_cert_zi):
    """point_is_feasible accepts exactly the certificates check_certificate accepts."""
    cl = batch_reactor[4]
    cert = reactor_cert_zi
    prob = nr.build_problem(cl, cert.decay_rate, cert.gain, cert.net, cert.mode)
    v = np.concatenate([pack_sym(cert.P1), pack_sym(cert.P2_0), pack_sym(cert.P2_1),
                        pack_sym(cert.P3_0), pack_sym(cert.P3_1)])
    assert point_is_feasible(prob, v)
    assert nr.check_certificate(prob.certificate(v), cl).passed
    bad = v.copy()
    bad[: sym_dim(cl.n_states)] *= -1.0
    assert not point_is_feasible(prob, bad)
