"""Hybrid closed-loop dynamics: flow/jump maps, flow/jump sets, attack schedules.

State layout: (x, eta, sigma, timer, phase) where
  x      combined plant+controller state,
  eta    held-output error (held copy minus live output),
  sigma  memory error (last sampled value minus live output),
  timer  seconds since the last successful sampling event,
  phase  0 while awaiting the next successful sample, 1 while the sampled
         packet is in flight (awaiting delivery).

Jumps come in two kinds: a *sample* jump stores the current output and starts
the delivery clock (phase 0 -> 1); an *update* jump copies the stored value
into the hold (phase 1 -> 0).  Dropped packets cause no jump at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import ClosedLoopMatrices, DimensionError

#: tolerance for "timer is a multiple of the sampling period" membership;
#: the jump set has measure-zero timer slices, exact equality is unusable.
TIMER_TOL = 1e-9


@dataclass(frozen=True)
class NetworkParams:
    """Sampling period plus the drop/delay bounds under analysis.

    max_drops is the largest number of consecutive dropped packets; max_delay
    bounds the delivery delay of a successful packet.  The small-delay
    assumption requires max_delay <= sample_period.
    """

    sample_period: float
    max_drops: int = 0
    max_delay: float = 0.0

    def __post_init__(self):
        if not (self.sample_period > 0):
            raise ValueError(f"sample_period must be > 0, got {self.sample_period}")
        if self.max_drops < 0 or int(self.max_drops) != self.max_drops:
            raise ValueError(f"max_drops must be a nonnegative integer, got {self.max_drops}")
        if not (0.0 <= self.max_delay <= self.sample_period + TIMER_TOL):
            raise ValueError(
                f"max_delay must lie in [0, sample_period]={self.sample_period}, "
                f"got {self.max_delay}"
            )

    @property
    def max_gap(self) -> float:
        """Longest admissible time between successful sampling events."""
        return (self.max_drops + 1) * self.sample_period


@dataclass(frozen=True)
class HybridState:
    x: np.ndarray
    eta: np.ndarray
    sigma: np.ndarray
    timer: float
    phase: int

    def __post_init__(self):
        for name in ("x", "eta", "sigma"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.phase not in (0, 1):
            raise ValueError(f"phase must be 0 or 1, got {self.phase}")
        if self.timer < 0:
            raise ValueError(f"timer must be >= 0, got {self.timer}")

    def replace(self, **kw) -> "HybridState":
        data = {"x": self.x, "eta": self.eta, "sigma": self.sigma,
                "timer": self.timer, "phase": self.phase}
        data.update(kw)
        return HybridState(**data)


def zero_state(cl: ClosedLoopMatrices, timer: float = 0.0, phase: int = 0) -> HybridState:
    return HybridState(
        np.zeros(cl.n_states), np.zeros(cl.n_outputs), np.zeros(cl.n_outputs), timer, phase
    )


def flow_derivative(cl: ClosedLoopMatrices, s: HybridState, w: np.ndarray) -> HybridState:
    """Time derivative along the flow; eta and sigma share the same derivative."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if s.x.shape[0] != cl.n_states or s.eta.shape[0] != cl.n_outputs:
        raise DimensionError(
            f"state dims ({s.x.shape[0]}, {s.eta.shape[0]}) do not match closed loop "
            f"({cl.n_states}, {cl.n_outputs})"
        )
    if w.shape[0] != cl.n_disturbances:
        raise DimensionError(
            f"disturbance has dim {w.shape[0]}, closed loop expects {cl.n_disturbances}"
        )
    dx = cl.A_xx @ s.x + cl.A_xe @ s.eta + cl.A_xw @ w
    de = cl.A_ex @ s.x + cl.A_ee @ s.eta + cl.A_ew @ w
    return HybridState(dx, de, de.copy(), 1.0, 0)


def jump(s: HybridState) -> HybridState:
    """Apply the jump map; phase 0 is a sample event, phase 1 an update event."""
    l = s.phase
    return HybridState(
        s.x,
        l * s.sigma + (1 - l) * s.eta,
        l * s.sigma,
        l * s.timer,
        1 - l,
    )


def in_flow_set(s: HybridState, net: NetworkParams, tol: float = TIMER_TOL) -> bool:
    if s.phase == 0:
        return -tol <= s.timer <= net.max_gap + tol
    return -tol <= s.timer <= net.max_delay + tol


def in_jump_set(s: HybridState, net: NetworkParams, tol: float = TIMER_TOL) -> bool:
    if s.phase == 1:
        return -tol <= s.timer <= net.max_delay + tol
    # phase 0: timer must be m * sample_period with m in 1..max_drops+1
    m = round(s.timer / net.sample_period)
    if m < 1 or m > net.max_drops + 1:
        return False
    return abs(s.timer - m * net.sample_period) <= tol


@dataclass(frozen=True)
class TargetSet:
    """The attractor: zero state/errors, timer anywhere in its admissible range."""

    max_drops: int
    sample_period: float

    def distance(self, s: HybridState) -> float:
        d2 = float(s.x @ s.x + s.eta @ s.eta + s.sigma @ s.sigma)
        hi = (self.max_drops + 1) * self.sample_period
        timer_excess = max(0.0, s.timer - hi) + max(0.0, -s.timer)
        d2 += timer_excess**2
        # phase is always in {0,1}; no contribution
        return float(np.sqrt(d2))


# ---------------------------------------------------------------------------
# Attack schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleEntry:
    index: int
    delivered: bool
    delay: float = 0.0


@dataclass(frozen=True)
class AttackSchedule:
    """Per-sample drop decisions with per-success delivery delays."""

    entries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def horizon(self) -> int:
        return len(self.entries)

    def to_json(self) -> str:
        return json.dumps(
            [
                {"k": e.index, "action": "deliver" if e.delivered else "drop",
                 "delay": e.delay}
                for e in self.entries
            ]
        )

    @classmethod
    def from_json(cls, text: str) -> "AttackSchedule":
        raw = json.loads(text)
        entries = []
        for item in raw:
            action = item["action"]
            if action not in ("drop", "deliver"):
                raise ValueError(f"unknown schedule action {action!r}")
            entries.append(
                ScheduleEntry(int(item["k"]), action == "deliver", float(item.get("delay", 0.0)))
            )
        return cls(tuple(entries))


@dataclass(frozen=True)
class ScheduleViolation:
    index: int
    reason: str


def validate_schedule(schedule: AttackSchedule, net: NetworkParams):
    """Return None if admissible, else the first ScheduleViolation.

    Checks the consecutive-drop bound, the delivered-packet requirement
    between attack bursts (implied by the run-length bound), and per-delivery
    delay bounds.
    """
    run = 0
    for e in schedule.entries:
        if e.delivered:
            if not (0.0 <= e.delay <= net.max_delay + TIMER_TOL):
                return ScheduleViolation(
                    e.index,
                    f"delay {e.delay} outside [0, max_delay={net.max_delay}]",
                )
            run = 0
        else:
            run += 1
            if run > net.max_drops:
                return ScheduleViolation(
                    e.index,
                    f"{run} consecutive drops exceeds max_drops={net.max_drops}",
                )
    return None


def enumerate_worst_schedules(net: NetworkParams, horizon: int, n_random: int = 8,
                              seed: int = 0):
    """Deterministic battery of admissible schedules stressing the bounds.

    Yields the max-drop periodic pattern, an always-max-delay pattern,
    drop/deliver alternations, and seeded random admissible schedules.
    Every yielded schedule passes validate_schedule.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    D = net.max_drops
    Tm = net.max_delay

    def build(pattern):
        return AttackSchedule(tuple(
            ScheduleEntry(k, delivered, delay) for k, (delivered, delay) in enumerate(pattern)
        ))

    # max drops then one delivery with max delay, repeated
    pattern = []
    while len(pattern) < horizon:
        pattern.extend([(False, 0.0)] * min(D, horizon - len(pattern)))
        if len(pattern) < horizon:
            pattern.append((True, Tm))
    yield build(pattern[:horizon])

    # no drops, always max delay
    yield build([(True, Tm)] * horizon)

    # no drops, zero delay
    yield build([(True, 0.0)] * horizon)

    if D >= 1:
        # single drop / delivery alternation
        yield build([(k % 2 == 1, Tm if k % 2 == 1 else 0.0) for k in range(horizon)])

    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        pattern = []
        run = 0
        for _k in range(horizon):
            if run < D and rng.random() < 0.5:
                pattern.append((False, 0.0))
                run += 1
            else:
                pattern.append((True, float(rng.uniform(0.0, Tm))))
                run = 0
        yield build(pattern)
