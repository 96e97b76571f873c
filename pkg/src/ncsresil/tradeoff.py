"""Trade-off curve between tolerated consecutive drops and delivery delay.

For each drop count the largest certifiable delay is found by bisection over
[0, sample_period]; a delay counts as achievable when some decay rate on a
geometric grid yields a feasible certificate.  Drop counts are swept upward
until the first infeasible one (or a configurable cap).  Every emitted
certificate is re-verified independently of the solver.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .certificate import INPUT_OUTPUT, ZERO_INPUT, Certificate, check_certificate
from .hybrid import NetworkParams
from .lmi import FeasibilityResult, SolverOptions, build_problem, solve
from .model import ClosedLoopMatrices

#: cap on decay_rate * max_gap so the smallest discount factor stays >= 1e-12
MAX_RATE_EXPONENT = 27.6


@dataclass(frozen=True)
class SearchPolicy:
    rate_min: float = 1e-2
    rate_max: float | None = None      # default derived from drops_cap and sample_period
    rate_points: int = 24
    bisection_tol: float = 1e-5        # seconds
    drops_cap: int = 6
    mode: str = ZERO_INPUT
    gain: float = 5.0
    jobs: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)

    def rate_grid(self, sample_period: float) -> np.ndarray:
        hi = self.rate_max
        if hi is None:
            hi = MAX_RATE_EXPONENT / ((self.drops_cap + 1) * sample_period)
        if hi * (self.drops_cap + 1) * sample_period > MAX_RATE_EXPONENT * (1 + 1e-9):
            raise ValueError(
                f"rate_max={hi} too large: rate_max*(drops_cap+1)*sample_period must "
                f"stay below {MAX_RATE_EXPONENT} to avoid discount-factor underflow"
            )
        if self.bisection_tol <= 0:
            raise ValueError("bisection_tol must be > 0")
        return np.geomspace(self.rate_min, hi, self.rate_points)


@dataclass(frozen=True)
class TradeoffPoint:
    drops: int
    max_delay: float
    decay_rate: float
    certificate: Certificate
    solves: int
    margin: float


def _feasible_on_grid(cl, sample_period, drops, delay, rates, policy,
                      preferred_rate=None):
    """First feasible decay rate for the given (drops, delay), or None.

    A previously successful rate, when given, is probed first; the remaining
    grid is scanned in order.  All candidate solves are independent, so they
    may run concurrently; the reduction (first hit wins by grid order after
    the preferred probe) is deterministic.
    """
    net = NetworkParams(sample_period, drops, delay)
    order = list(rates)
    if preferred_rate is not None and preferred_rate in order:
        order.remove(preferred_rate)
        order.insert(0, preferred_rate)

    def attempt(rate) -> FeasibilityResult:
        problem = build_problem(cl, rate, policy.gain, net, policy.mode)
        return solve(problem, policy.solver)

    solves = 0
    if policy.jobs > 1:
        chunk = policy.jobs
        for base in range(0, len(order), chunk):
            batch = order[base: base + chunk]
            with ThreadPoolExecutor(max_workers=policy.jobs) as pool:
                results = list(pool.map(attempt, batch))
            solves += len(batch)
            for rate, res in zip(batch, results):
                if res.feasible:
                    return rate, res, solves
        return None, None, solves
    for rate in order:
        res = attempt(rate)
        solves += 1
        if res.feasible:
            return rate, res, solves
    return None, None, solves


def max_delay_for_drops(
    cl: ClosedLoopMatrices, sample_period: float, drops: int, policy: SearchPolicy,
) -> TradeoffPoint | None:
    """Largest certifiable delay for a fixed drop count, by bisection.

    Returns None when not even a zero delay is certifiable.  Bisection assumes
    feasibility is monotone downward in the delay; tests assert this per run
    rather than trusting it silently.
    """
    rates = policy.rate_grid(sample_period)
    total_solves = 0

    rate0, res0, n = _feasible_on_grid(cl, sample_period, drops, 0.0, rates, policy)
    total_solves += n
    if rate0 is None:
        return None
    best = (0.0, rate0, res0)

    rate_hi, res_hi, n = _feasible_on_grid(
        cl, sample_period, drops, sample_period, rates, policy, preferred_rate=rate0)
    total_solves += n
    if rate_hi is not None:
        best = (sample_period, rate_hi, res_hi)
    else:
        lo, hi = 0.0, sample_period
        while hi - lo > policy.bisection_tol:
            mid = 0.5 * (lo + hi)
            rate_m, res_m, n = _feasible_on_grid(
                cl, sample_period, drops, mid, rates, policy, preferred_rate=best[1])
            total_solves += n
            if rate_m is not None:
                lo = mid
                best = (mid, rate_m, res_m)
            else:
                hi = mid

    delay, rate, res = best
    cert = res.certificate
    report = check_certificate(cert, cl)
    if not report.passed:
        raise RuntimeError(
            "solver returned a certificate that fails independent verification: "
            + ", ".join(c.name for c in report.failed())
        )
    return TradeoffPoint(drops, delay, rate, cert, total_solves, res.margin)


def tradeoff_curve(
    cl: ClosedLoopMatrices, sample_period: float, policy: SearchPolicy,
) -> list[TradeoffPoint]:
    """Sweep drop counts upward until the first infeasible one or the cap."""
    points = []
    for drops in range(policy.drops_cap + 1):
        point = max_delay_for_drops(cl, sample_period, drops, policy)
        if point is None:
            break
        points.append(point)
    return points


def gamma_floor(
    cl: ClosedLoopMatrices, net: NetworkParams, policy: SearchPolicy,
    gain_hi: float | None = None, tol: float = 1e-2,
) -> tuple[float, Certificate]:
    """Smallest feasible L2 gain at fixed (drops, delay), by bisection.

    Feasibility is monotone in the gain: a larger gain only relaxes the
    conditions, so bisection is exact up to the grid of decay rates.
    """
    if gain_hi is None:
        gain_hi = policy.gain
    rates = policy.rate_grid(net.sample_period)
    io_policy = replace(policy, mode=INPUT_OUTPUT)

    def try_gain(gain):
        p = replace(io_policy, gain=gain)
        return _feasible_on_grid(cl, net.sample_period, net.max_drops, net.max_delay,
                                 rates, p)

    rate, res, _ = try_gain(gain_hi)
    if rate is None:
        raise ValueError(
            f"({net.max_drops} drops, delay {net.max_delay}) is not certifiable even "
            f"at gain {gain_hi}; gamma_floor needs a feasible starting point"
        )
    best = (gain_hi, res.certificate)
    lo, hi = 0.0, gain_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        rate, res, _ = try_gain(mid)
        if rate is not None:
            hi = mid
            best = (mid, res.certificate)
        else:
            lo = mid
    return best


def write_curve_csv(points: list[TradeoffPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "t_mad", "delta_rate", "gamma", "margin"])
        for p in points:
            writer.writerow([
                p.drops, f"{p.max_delay:.10g}", f"{p.decay_rate:.10g}",
                f"{p.certificate.gain:.10g}", f"{p.margin:.6e}",
            ])
