"""Event-exact simulation of the closed loop under an attack schedule.

Events are *scheduled*, never detected: sampling happens at integer multiples
of the sampling period (for delivered packets only), delivery at the sampled
instant plus its delay.  Fixed-step RK4 integrates the linear flow between
events, with steps split to land exactly on event times.  Dropped packets
cause no jump at all.

The module also provides certificate monitoring along trajectories (jump
monotonicity, flow decrease residual, decay envelope, empirical L2 gain).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .certificate import (
    INPUT_OUTPUT,
    Certificate,
    compute_bounds,
    evaluate_V,
    evaluate_V_flow_derivative,
)
from .hybrid import (
    AttackSchedule,
    HybridState,
    NetworkParams,
    TargetSet,
    in_flow_set,
    in_jump_set,
    validate_schedule,
)
from .model import ClosedLoopMatrices, ControllerModel, PerformanceOutput, PlantModel

DIVERGENCE_LIMIT = 1e12


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# disturbance signals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DisturbanceSignal:
    """Callable disturbance with a known sup norm."""

    kind: str
    params: dict

    @classmethod
    def zero(cls, n_channels: int) -> "DisturbanceSignal":
        return cls("zero", {"n": n_channels})

    @classmethod
    def piecewise_constant(cls, breakpoints, values) -> "DisturbanceSignal":
        values = np.atleast_2d(np.asarray(values, dtype=float))
        breakpoints = np.asarray(breakpoints, dtype=float)
        if len(breakpoints) != values.shape[0]:
            raise ValueError("one value row per breakpoint required")
        return cls("piecewise-constant", {"breaks": breakpoints, "values": values})

    @classmethod
    def sinusoid(cls, amplitudes, frequencies, phases=None) -> "DisturbanceSignal":
        amplitudes = np.atleast_1d(np.asarray(amplitudes, dtype=float))
        frequencies = np.atleast_1d(np.asarray(frequencies, dtype=float))
        if phases is None:
            phases = np.zeros_like(amplitudes)
        phases = np.atleast_1d(np.asarray(phases, dtype=float))
        return cls("sinusoid", {"amp": amplitudes, "freq": frequencies, "phase": phases})

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(self.params["n"])
        if self.kind == "piecewise-constant":
            idx = np.searchsorted(self.params["breaks"], t, side="right") - 1
            idx = max(idx, 0)
            return self.params["values"][idx]
        amp, freq, ph = self.params["amp"], self.params["freq"], self.params["phase"]
        return amp * np.sin(2.0 * np.pi * freq * t + ph)

    @property
    def sup_norm(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "piecewise-constant":
            return float(np.max(np.linalg.norm(self.params["values"], axis=1)))
        return float(np.linalg.norm(self.params["amp"]))

    @property
    def n_channels(self) -> int:
        if self.kind == "zero":
            return self.params["n"]
        if self.kind == "piecewise-constant":
            return self.params["values"].shape[1]
        return len(self.params["amp"])


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryEvent:
    time: float
    kind: str          # "sample" | "update"
    sample_index: int
    pre_index: int     # indices into the sample arrays
    post_index: int


@dataclass(frozen=True)
class HybridTrajectory:
    t: np.ndarray
    j: np.ndarray
    x: np.ndarray        # (N, n_states)
    eta: np.ndarray      # (N, n_outputs)
    sigma: np.ndarray    # (N, n_outputs)
    timer: np.ndarray
    phase: np.ndarray
    events: tuple

    def __len__(self) -> int:
        return len(self.t)

    def state(self, i: int) -> HybridState:
        return HybridState(self.x[i], self.eta[i], self.sigma[i],
                           float(self.timer[i]), int(self.phase[i]))

    def distances(self, target: TargetSet) -> np.ndarray:
        return np.array([target.distance(self.state(i)) for i in range(len(self))])

    def to_csv(self, path, cert: Certificate | None = None,
               target: TargetSet | None = None) -> None:
        nx, ny = self.x.shape[1], self.eta.shape[1]
        header = (["t", "j", "l", "tau"]
                  + [f"xtilde{i}" for i in range(nx)]
                  + [f"eta{i}" for i in range(ny)]
                  + [f"sigma{i}" for i in range(ny)]
                  + ["V", "dist_A"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self)):
                s = self.state(i)
                V = evaluate_V(cert, s) if cert is not None else float("nan")
                d = target.distance(s) if target is not None else float("nan")
                w.writerow(
                    [f"{self.t[i]:.10g}", int(self.j[i]), int(self.phase[i]),
                     f"{self.timer[i]:.10g}"]
                    + [f"{v:.10g}" for v in self.x[i]]
                    + [f"{v:.10g}" for v in self.eta[i]]
                    + [f"{v:.10g}" for v in self.sigma[i]]
                    + [f"{V:.10g}", f"{d:.10g}"]
                )

    def events_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "kind", "k"])
            for e in self.events:
                w.writerow([f"{e.time:.10g}", e.kind, e.sample_index])


def _build_events(schedule: AttackSchedule, horizon: float, sample_period: float):
    """(time, sample_index, order) triples; update follows sample at equal times."""
    events = []
    for e in schedule.entries:
        tk = e.index * sample_period
        if e.delivered:
            if tk <= horizon + 1e-12:
                events.append((tk, e.index, 0, "sample"))
            if tk + e.delay <= horizon + 1e-12:
                events.append((tk + e.delay, e.index, 1, "update"))
    # quantize times so k*Ts + Ts and (k+1)*Ts compare equal despite float
    # rounding; ties break by sample index then kind (update before the
    # coincident next sample)
    events.sort(key=lambda ev: (round(ev[0] / 1e-12), ev[1], ev[2]))
    return events


def _rk4_segment(deriv, core, t0, t1, max_step, record):
    """Integrate core' = deriv(t, core) from t0 to t1, recording each step end."""
    span = t1 - t0
    if span <= 0:
        return core
    n = max(1, int(np.ceil(span / max_step - 1e-9)))
    h = span / n
    for i in range(n):
        t = t0 + i * h
        k1 = deriv(t, core)
        k2 = deriv(t + h / 2, core + h / 2 * k1)
        k3 = deriv(t + h / 2, core + h / 2 * k2)
        k4 = deriv(t + h, core + h * k3)
        core = core + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        # pin the last step to t1 so recorded times never overshoot the event
        t = t1 if i == n - 1 else t + h
        if np.max(np.abs(core)) > DIVERGENCE_LIMIT:
            raise SimulationError(f"state magnitude exceeded {DIVERGENCE_LIMIT:g} at t={t:g}")
        record(t, core)
    return core


def _run_engine(net, schedule, horizon, step, core0, timer0, phase0,
                deriv, sample_jump, update_jump, to_state):
    violation = validate_schedule(schedule, net)
    if violation is not None:
        raise SimulationError(
            f"inadmissible schedule at k={violation.index}: {violation.reason}")
    if schedule.horizon * net.sample_period < horizon - 1e-12:
        raise SimulationError(
            f"schedule covers {schedule.horizon} samples "
            f"({schedule.horizon * net.sample_period:g}s) but horizon is {horizon:g}s")
    if step is None:
        step = net.sample_period / 100.0
        if net.max_delay > 0:
            step = min(step, net.max_delay / 4.0)
    if step > net.sample_period / 20.0 + 1e-15:
        raise SimulationError(f"step {step:g} too large; need <= sample_period/20")
    if net.max_delay > 0 and step > net.max_delay / 4.0 + 1e-15:
        raise SimulationError(f"step {step:g} too large; need <= max_delay/4")

    ts, js, states = [], [], []
    events_out = []
    t, j = 0.0, 0
    core, timer, phase = np.asarray(core0, dtype=float), timer0, phase0
    sample_start = t  # wall time at which the current timer started

    s0 = to_state(core, timer, phase)
    if not in_flow_set(s0, net) and not in_jump_set(s0, net):
        raise SimulationError("initial state lies outside both flow and jump sets")

    def record(tt, cc, jj, tim, ph):
        ts.append(tt)
        js.append(jj)
        states.append((cc.copy(), tim, ph))

    record(t, core, j, timer, phase)

    def flow_to(t_end):
        nonlocal core, t, timer
        def rec(tt, cc):
            record(tt, cc, j, timer_at(tt), phase)
        def timer_at(tt):
            return timer + (tt - t)
        core_new = _rk4_segment(lambda tt, cc: deriv(tt, cc), core, t, t_end, step, rec)
        timer = timer + (t_end - t)
        core = core_new
        t = t_end

    for ev_time, k, _order, kind in _build_events(schedule, horizon, net.sample_period):
        ev_time = max(ev_time, t)  # reordered coincident events may lag by ~1e-17
        flow_to(ev_time)
        pre_index = len(ts) - 1
        pre_state = to_state(core, timer, phase)
        if not in_jump_set(pre_state, net):
            raise SimulationError(
                f"scheduled {kind} event at t={ev_time:g} but state (timer={timer:g}, "
                f"phase={phase}) is not in the jump set")
        if kind == "sample":
            if phase != 0:
                raise SimulationError(f"sample event at t={ev_time:g} while awaiting delivery")
            core = sample_jump(core)
            timer, phase = 0.0, 1
        else:
            if phase != 1:
                raise SimulationError(f"update event at t={ev_time:g} while awaiting sample")
            core = update_jump(core)
            phase = 0
        j += 1
        record(t, core, j, timer, phase)
        events_out.append(TrajectoryEvent(ev_time, kind, k, pre_index, len(ts) - 1))
        post = to_state(core, timer, phase)
        if not in_flow_set(post, net) and not in_jump_set(post, net):
            raise SimulationError(f"post-jump state at t={ev_time:g} left the hybrid domain")
        # two jumps (sample + update) per successful delivery, deliveries at
        # least one sampling period apart, plus the initial pair
        if j > 2.0 * t / net.sample_period + 3 + 1e-9:
            raise SimulationError(
                f"dwell-time bound violated: {j} jumps by t={t:g} "
                f"(bound {2.0 * t / net.sample_period + 3:g})")

    flow_to(horizon)

    N = len(ts)
    cores = np.array([s[0] for s in states])
    traj_states = [to_state(cores[i], states[i][1], states[i][2]) for i in range(N)]
    return HybridTrajectory(
        t=np.array(ts),
        j=np.array(js, dtype=int),
        x=np.array([s.x for s in traj_states]),
        eta=np.array([s.eta for s in traj_states]),
        sigma=np.array([s.sigma for s in traj_states]),
        timer=np.array([s.timer for s in traj_states]),
        phase=np.array([s.phase for s in traj_states], dtype=int),
        events=tuple(events_out),
    )


def simulate(
    cl: ClosedLoopMatrices,
    net: NetworkParams,
    schedule: AttackSchedule,
    x0: HybridState,
    disturbance: DisturbanceSignal,
    horizon: float,
    step: float | None = None,
) -> HybridTrajectory:
    """Simulate the closed loop in (state, hold-error, memory-error) coordinates."""
    nx, ny = cl.n_states, cl.n_outputs
    if disturbance.n_channels != cl.n_disturbances:
        raise SimulationError(
            f"disturbance has {disturbance.n_channels} channels, "
            f"closed loop expects {cl.n_disturbances}")
    core0 = np.concatenate([x0.x, x0.eta, x0.sigma])

    def deriv(t, core):
        x, eta = core[:nx], core[nx:nx + ny]
        w = disturbance(t)
        dx = cl.A_xx @ x + cl.A_xe @ eta + cl.A_xw @ w
        de = cl.A_ex @ x + cl.A_ee @ eta + cl.A_ew @ w
        return np.concatenate([dx, de, de])

    def sample_jump(core):
        out = core.copy()
        out[nx + ny:] = 0.0
        return out

    def update_jump(core):
        out = core.copy()
        out[nx:nx + ny] = core[nx + ny:]
        return out

    def to_state(core, timer, phase):
        return HybridState(core[:nx], core[nx:nx + ny], core[nx + ny:], timer, phase)

    return _run_engine(net, schedule, horizon, step, core0, x0.timer, x0.phase,
                       deriv, sample_jump, update_jump, to_state)


def simulate_held_coordinates(
    plant: PlantModel,
    controller: ControllerModel,
    perf: PerformanceOutput,
    net: NetworkParams,
    schedule: AttackSchedule,
    x0: HybridState,
    disturbance: DisturbanceSignal,
    horizon: float,
    step: float | None = None,
) -> HybridTrajectory:
    """Simulate in the original (plant, controller, hold, memory) coordinates.

    The returned trajectory is expressed in the error coordinates so it can be
    compared sample-by-sample against simulate(); agreement of the two paths
    checks the change of coordinates.
    """
    np_, nc = plant.n_states, controller.n_states
    ny = plant.n_outputs
    Cp = plant.C
    # recover (hold, memory) from the error-coordinate initial state
    xp0, xc0 = x0.x[:np_], x0.x[np_:]
    yhat0 = x0.eta + Cp @ xp0
    mem0 = x0.sigma + Cp @ xp0
    core0 = np.concatenate([xp0, xc0, yhat0, mem0])

    def deriv(t, core):
        xp, xc = core[:np_], core[np_:np_ + nc]
        yhat = core[np_ + nc:np_ + nc + ny]
        w = disturbance(t)
        dxp = plant.A @ xp + plant.B @ (controller.C @ xc + controller.D @ yhat) + plant.W @ w
        dxc = controller.A @ xc + controller.B @ yhat
        return np.concatenate([dxp, dxc, np.zeros(2 * ny)])

    def sample_jump(core):
        out = core.copy()
        out[np_ + nc + ny:] = Cp @ core[:np_]
        return out

    def update_jump(core):
        out = core.copy()
        out[np_ + nc:np_ + nc + ny] = core[np_ + nc + ny:]
        return out

    def to_state(core, timer, phase):
        xp = core[:np_]
        y = Cp @ xp
        return HybridState(
            core[:np_ + nc],
            core[np_ + nc:np_ + nc + ny] - y,
            core[np_ + nc + ny:] - y,
            timer, phase,
        )

    return _run_engine(net, schedule, horizon, step, core0, x0.timer, x0.phase,
                       deriv, sample_jump, update_jump, to_state)


# ---------------------------------------------------------------------------
# certificate monitoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationMetrics:
    max_jump_increase: float        # worst V(post) - V(pre) over all jumps
    max_flow_residual: float        # worst flow-decrease residual
    envelope_excess: float          # worst dist - allowed envelope (<= tol means ok)
    fitted_decay_rate: float
    fitted_overshoot: float
    output_energy: float            # integral of |y_perf|^2
    input_energy: float             # integral of |w|^2
    empirical_gain: float           # sqrt(out/in), nan if input energy is zero
    l2_bound_excess: float          # violation of the L2 inequality (<= tol means ok)
    monitor_tol: float

    @property
    def clean(self) -> bool:
        return (self.max_jump_increase <= self.monitor_tol
                and self.max_flow_residual <= self.monitor_tol
                and self.envelope_excess <= self.monitor_tol
                and self.l2_bound_excess <= self.monitor_tol)


def monitor_certificate(
    traj: HybridTrajectory,
    cert: Certificate,
    cl: ClosedLoopMatrices,
    disturbance: DisturbanceSignal,
) -> SimulationMetrics:
    # violations are data here, so a corrupted certificate must not raise
    bounds = compute_bounds(cert, cl, require_valid=False)
    target = TargetSet(cert.net.max_drops, cert.net.sample_period)
    V0 = evaluate_V(cert, traj.state(0))
    tol = 1e-6 * (1.0 + V0)

    V = np.array([evaluate_V(cert, traj.state(i)) for i in range(len(traj))])

    max_jump_inc = 0.0
    for e in traj.events:
        max_jump_inc = max(max_jump_inc, V[e.post_index] - V[e.pre_index])

    # flow residual of the decrease inequality, scaled tolerance
    lam = bounds.flow_decay_rate
    max_resid = -np.inf
    for i in range(len(traj)):
        s = traj.state(i)
        w = disturbance(traj.t[i])
        dV = evaluate_V_flow_derivative(cert, cl, s, w)
        resid = dV + 2.0 * lam * V[i] - cert.gain**2 * float(w @ w)
        if cert.mode == INPUT_OUTPUT:
            yo = cl.Co @ s.x
            resid += float(yo @ yo)
        scale = 1.0 + abs(dV) + V[i]
        max_resid = max(max_resid, resid / scale * (1.0 + V0))

    # decay envelope / disturbance bound at every sample
    dist = traj.distances(target)
    d0 = dist[0]
    env = bounds.overshoot * np.exp(-lam * traj.t) * d0
    if disturbance.sup_norm > 0:
        allowed = np.maximum(env, bounds.gain_fn_coeff * disturbance.sup_norm)
    else:
        allowed = env
    envelope_excess = float(np.max(dist - allowed))

    # exponential fit of the distance decay (where distance is meaningful)
    mask = dist > max(1e-12, 1e-9 * dist[0])
    if mask.sum() >= 2:
        coeffs = np.polyfit(traj.t[mask], np.log(dist[mask]), 1)
        fitted_rate, fitted_overshoot = -float(coeffs[0]), float(np.exp(coeffs[1]))
    else:
        fitted_rate, fitted_overshoot = np.inf, 0.0

    # L2 energies by trapezoid on the sample grid (jump pairs contribute dt=0)
    yo = traj.x @ cl.Co.T
    out_density = np.einsum("ij,ij->i", yo, yo)
    w_samples = np.array([disturbance(tt) for tt in traj.t])
    in_density = np.einsum("ij,ij->i", w_samples, w_samples)
    out_energy = float(np.trapezoid(out_density, traj.t))
    in_energy = float(np.trapezoid(in_density, traj.t))
    gain = float(np.sqrt(out_energy / in_energy)) if in_energy > 0 else float("nan")

    l2_excess = -np.inf
    if cert.mode == INPUT_OUTPUT:
        bound = bounds.rho2 * d0 + cert.gain * np.sqrt(in_energy)
        l2_excess = float(np.sqrt(out_energy) - bound)

    return SimulationMetrics(
        max_jump_increase=float(max_jump_inc),
        max_flow_residual=float(max_resid),
        envelope_excess=envelope_excess,
        fitted_decay_rate=fitted_rate,
        fitted_overshoot=fitted_overshoot,
        output_energy=out_energy,
        input_energy=in_energy,
        empirical_gain=gain,
        l2_bound_excess=l2_excess,
        monitor_tol=tol,
    )


def empirical_l2_gain(
    cl: ClosedLoopMatrices,
    net: NetworkParams,
    cert: Certificate,
    schedules,
    disturbances,
    horizon: float,
    step: float | None = None,
) -> float:
    """Worst observed output/input energy ratio from rest, over a test battery."""
    from .hybrid import zero_state

    worst = 0.0
    for schedule, disturbance in zip(schedules, disturbances):
        x0 = zero_state(cl, timer=net.sample_period, phase=0)
        traj = simulate(cl, net, schedule, x0, disturbance, horizon, step)
        metrics = monitor_certificate(traj, cert, cl, disturbance)
        if metrics.input_energy <= 0:
            raise SimulationError("empirical gain needs nonzero disturbance energy")
        worst = max(worst, metrics.empirical_gain)
    return worst
