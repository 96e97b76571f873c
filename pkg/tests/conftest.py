import importlib.resources

import numpy as np
import pytest

import ncsresil as nr


def fixture_path(name: str) -> str:
    return str(importlib.resources.files("ncsresil") / "fixtures" / name)


@pytest.fixture(scope="session")
def batch_reactor():
    plant, controller, perf, net = nr.load_model(fixture_path("batch_reactor.yaml"))
    cl = nr.assemble_closed_loop(plant, controller, perf)
    return plant, controller, perf, net, cl


@pytest.fixture(scope="session")
def scalar_loop():
    plant, controller, perf, net = nr.load_model(fixture_path("scalar.yaml"))
    cl = nr.assemble_closed_loop(plant, controller, perf)
    return plant, controller, perf, net, cl


def first_feasible(cl, net, mode, gain=5.0, rate_points=24, rate_max=394.0):
    """Scan the default rate grid; return the first feasible result."""
    for rate in np.geomspace(1e-2, rate_max, rate_points):
        res = nr.solve(nr.build_problem(cl, float(rate), gain, net, mode))
        if res.feasible:
            return res
    return None


@pytest.fixture(scope="session")
def reactor_cert_zi(batch_reactor):
    """Zero-input certificate for the batch reactor at 2 drops, 2 ms delay."""
    _, _, _, _, cl = batch_reactor
    net = nr.NetworkParams(0.01, 2, 0.002)
    res = first_feasible(cl, net, "zero-input")
    assert res is not None
    return res.certificate


@pytest.fixture(scope="session")
def reactor_cert_io(batch_reactor):
    """Input-output certificate (gain 5) for the batch reactor at 2 drops."""
    _, _, _, _, cl = batch_reactor
    net = nr.NetworkParams(0.01, 2, 0.002)
    res = first_feasible(cl, net, "input-output")
    assert res is not None
    return res.certificate
