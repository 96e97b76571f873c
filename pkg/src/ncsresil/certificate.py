"""Lyapunov certificates for drop/delay resilience and their verification.

A certificate is the quadruple-of-matrices family

    V(x) = x' P1 x + exp(-rate * timer) * (eta' P2[phase] eta + sigma' P3[phase] sigma)

whose flow decrease is captured by a symmetric matrix function of
(timer, phase).  Negative definiteness of that matrix at four timer/phase
vertices, together with two jump inequalities, certifies that V decays along
flows and never increases at jumps.  All checks here are independent dense
eigenvalue computations; the feasibility engine in ncsresil.lmi does not
share code with them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .hybrid import HybridState, NetworkParams, flow_derivative
from .model import ClosedLoopMatrices, DimensionError

ZERO_INPUT = "zero-input"
INPUT_OUTPUT = "input-output"

#: strict conditions "< 0" are tested as lambda_max <= -EPS_FEAS_REL * scale
EPS_FEAS_REL = 1e-7
#: non-strict conditions "<= 0" allow this absolute eigenvalue slack
EPS_PSD_SLACK = 1e-9
#: symmetry tolerance on certificate matrices
SYM_TOL = 1e-10


def _sym_check(name: str, P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {P.shape}")
    if np.max(np.abs(P - P.T)) > SYM_TOL * max(1.0, np.max(np.abs(P))):
        raise ValueError(f"{name} is not symmetric within tolerance")
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class Certificate:
    P1: np.ndarray
    P2_0: np.ndarray
    P2_1: np.ndarray
    P3_0: np.ndarray
    P3_1: np.ndarray
    decay_rate: float        # timer discount rate (1/s)
    gain: float              # L2 gain bound (ignored in zero-input mode)
    net: NetworkParams
    mode: str = ZERO_INPUT

    def __post_init__(self):
        for name in ("P1", "P2_0", "P2_1", "P3_0", "P3_1"):
            P = _sym_check(name, getattr(self, name))
            P.setflags(write=False)
            object.__setattr__(self, name, P)
        if self.mode not in (ZERO_INPUT, INPUT_OUTPUT):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (self.decay_rate > 0):
            raise ValueError(f"decay_rate must be > 0, got {self.decay_rate}")
        if not (self.gain > 0):
            raise ValueError(f"gain must be > 0, got {self.gain}")

    def P2(self, phase: int) -> np.ndarray:
        return self.P2_0 if phase == 0 else self.P2_1

    def P3(self, phase: int) -> np.ndarray:
        return self.P3_0 if phase == 0 else self.P3_1

    # ---- serialization ----------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({
            "P1": self.P1.tolist(), "P2_0": self.P2_0.tolist(), "P2_1": self.P2_1.tolist(),
            "P3_0": self.P3_0.tolist(), "P3_1": self.P3_1.tolist(),
            "decay_rate": self.decay_rate, "gain": self.gain, "mode": self.mode,
            "network": {
                "sample_period": self.net.sample_period,
                "max_drops": self.net.max_drops,
                "max_delay": self.net.max_delay,
            },
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Certificate":
        d = json.loads(text)
        net = NetworkParams(**d["network"])
        return cls(
            np.array(d["P1"]), np.array(d["P2_0"]), np.array(d["P2_1"]),
            np.array(d["P3_0"]), np.array(d["P3_1"]),
            float(d["decay_rate"]), float(d["gain"]), net, d["mode"],
        )


def condition_matrix(
    cl: ClosedLoopMatrices,
    P1: np.ndarray, P2: np.ndarray, P3: np.ndarray,
    decay_rate: float, gain: float,
    tau: float, mode: str,
) -> np.ndarray:
    """Symmetric matrix whose negativity certifies flow decrease of V at timer tau.

    Block order: state, hold error, memory error, and (input-output mode only)
    disturbance.  Zero-input mode drops the disturbance row/column and zeroes
    the performance output.
    """
    e = np.exp(-decay_rate * tau)
    CoTCo = cl.Co.T @ cl.Co if mode == INPUT_OUTPUT else np.zeros((cl.n_states, cl.n_states))
    M11 = P1 @ cl.A_xx + cl.A_xx.T @ P1 + CoTCo
    M12 = P1 @ cl.A_xe + e * cl.A_ex.T @ P2
    M13 = e * cl.A_ex.T @ P3
    M22 = e * (P2 @ cl.A_ee + cl.A_ee.T @ P2 - decay_rate * P2)
    M23 = e * cl.A_ee.T @ P3
    M33 = -decay_rate * e * P3
    if mode == INPUT_OUTPUT:
        M14 = P1 @ cl.A_xw
        M24 = e * P2 @ cl.A_ew
        M34 = e * P3 @ cl.A_ew
        M44 = -gain**2 * np.eye(cl.n_disturbances)
        return np.block([
            [M11, M12, M13, M14],
            [M12.T, M22, M23, M24],
            [M13.T, M23.T, M33, M34],
            [M14.T, M24.T, M34.T, M44],
        ])
    return np.block([
        [M11, M12, M13],
        [M12.T, M22, M23],
        [M13.T, M23.T, M33],
    ])


def certificate_condition_matrix(
    cert: Certificate, cl: ClosedLoopMatrices, tau: float, phase: int
) -> np.ndarray:
    return condition_matrix(
        cl, cert.P1, cert.P2(phase), cert.P3(phase),
        cert.decay_rate, cert.gain, tau, cert.mode,
    )


def vertex_points(net: NetworkParams):
    """The four timer/phase vertices whose negativity covers the whole flow set."""
    return [
        (0.0, 1), (net.max_delay, 1), (net.max_delay, 0), (net.max_gap, 0),
    ]


@dataclass(frozen=True)
class ConditionMargin:
    name: str
    eigenvalue: float   # lambda_max (for "<= 0" style) or lambda_min (PD)
    threshold: float
    passed: bool


@dataclass(frozen=True)
class CertificateReport:
    conditions: tuple
    passed: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "passed", all(c.passed for c in self.conditions))

    def failed(self):
        return [c for c in self.conditions if not c.passed]


def check_certificate(cert: Certificate, cl: ClosedLoopMatrices) -> CertificateReport:
    """Independent eigenvalue verification of all certificate conditions."""
    conds = []

    for name in ("P1", "P2_0", "P2_1", "P3_0", "P3_1"):
        P = getattr(cert, name)
        lam = float(np.linalg.eigvalsh(P)[0])
        conds.append(ConditionMargin(f"pd:{name}", lam, 0.0, lam > 0.0))

    a = cert.net.max_gap
    shrink = np.exp(-cert.decay_rate * a)
    J1 = cert.P2_1 - shrink * cert.P2_0
    J2 = cert.P2_0 + cert.P3_0 - cert.P3_1
    for name, M in (("jump:sample", J1), ("jump:update", J2)):
        lam = float(np.linalg.eigvalsh(M)[-1])
        conds.append(ConditionMargin(name, lam, EPS_PSD_SLACK, lam <= EPS_PSD_SLACK))

    for tau, phase in vertex_points(cert.net):
        M = certificate_condition_matrix(cert, cl, tau, phase)
        scale = max(1.0, float(np.linalg.norm(M)))
        thresh = -EPS_FEAS_REL * scale
        lam = float(np.linalg.eigvalsh(M)[-1])
        conds.append(
            ConditionMargin(f"vertex:tau={tau:.6g},phase={phase}", lam, thresh, lam <= thresh)
        )

    return CertificateReport(tuple(conds))


def grid_check(cert: Certificate, cl: ClosedLoopMatrices, grid_points: int = 1000):
    """Worst lambda_max of the condition matrix over a timer grid.

    Covers [0, max_delay] at phase 1 and [0, max_gap] at phase 0 (the latter
    includes [0, max_delay] at phase 0, which is not one of the four vertices;
    it is checked here rather than assumed).  Returns (worst, tau, phase).
    """
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    worst = (-np.inf, None, None)
    segments = [
        (np.linspace(0.0, cert.net.max_delay, grid_points), 1),
        (np.linspace(0.0, cert.net.max_gap, grid_points), 0),
    ]
    for taus, phase in segments:
        for tau in taus:
            lam = float(np.linalg.eigvalsh(
                certificate_condition_matrix(cert, cl, float(tau), phase))[-1])
            if lam > worst[0]:
                worst = (lam, float(tau), phase)
    return worst


def evaluate_V(cert: Certificate, s: HybridState) -> float:
    e = np.exp(-cert.decay_rate * s.timer)
    return float(
        s.x @ cert.P1 @ s.x
        + e * (s.eta @ cert.P2(s.phase) @ s.eta + s.sigma @ cert.P3(s.phase) @ s.sigma)
    )


def evaluate_V_flow_derivative(
    cert: Certificate, cl: ClosedLoopMatrices, s: HybridState, w: np.ndarray
) -> float:
    """Closed-form directional derivative of V along the flow map."""
    d = flow_derivative(cl, s, w)
    e = np.exp(-cert.decay_rate * s.timer)
    P2, P3 = cert.P2(s.phase), cert.P3(s.phase)
    val = 2.0 * s.x @ cert.P1 @ d.x
    val += 2.0 * e * (s.eta @ P2 @ d.eta + s.sigma @ P3 @ d.sigma)
    # timer advances at unit rate, discounting the error terms
    val -= cert.decay_rate * e * (s.eta @ P2 @ s.eta + s.sigma @ P3 @ s.sigma)
    return float(val)


@dataclass(frozen=True)
class CertificateBounds:
    """Eigenvalue-based constants of the decay/gain estimates implied by a certificate."""

    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    theta1: float
    theta2: float
    rho1: float
    rho2: float
    flow_decay_rate: float    # exponential rate of the distance envelope
    overshoot: float          # envelope coefficient, always >= 2
    gain_fn_coeff: float      # slope of the linear disturbance-to-distance bound


def compute_bounds(
    cert: Certificate, cl: ClosedLoopMatrices, require_valid: bool = True
) -> CertificateBounds:
    report = check_certificate(cert, cl)
    if require_valid and not report.passed:
        names = ", ".join(c.name for c in report.failed())
        raise ValueError(f"certificate does not verify; failing conditions: {names}")

    a = cert.net.max_gap
    ea = np.exp(-cert.decay_rate * a)
    ed = np.exp(-cert.decay_rate * cert.net.max_delay)
    lam = lambda P, which: float(np.linalg.eigvalsh(P)[0 if which == "min" else -1])

    alpha1 = lam(cert.P1, "min")
    alpha2 = lam(cert.P1, "max")
    beta1 = min(lam(cert.P2_0, "min") * ea, lam(cert.P2_1, "min") * ed)
    beta2 = max(lam(cert.P2_0, "max"), lam(cert.P2_1, "max"))
    theta1 = min(lam(cert.P3_0, "min") * ea, lam(cert.P3_1, "min") * ed)
    theta2 = max(lam(cert.P3_0, "max"), lam(cert.P3_1, "max"))
    rho1 = min(alpha1, beta1, theta1)
    rho2 = max(alpha2, beta2, theta2)

    # worst (largest) vertex eigenvalue; negative since the report passed.
    worst = max(c.eigenvalue for c in report.conditions if c.name.startswith("vertex:"))
    flow_decay_rate = max(-worst, 0.0) / (2.0 * rho2)
    overshoot = 2.0 * np.sqrt(rho2 / rho1) if rho1 > 0 else float("inf")
    if flow_decay_rate > 0 and rho1 > 0:
        gain_fn_coeff = 2.0 * cert.gain / np.sqrt(2.0 * flow_decay_rate * rho1)
    else:
        gain_fn_coeff = float("inf")
    return CertificateBounds(
        alpha1, alpha2, beta1, beta2, theta1, theta2, rho1, rho2,
        flow_decay_rate, overshoot, gain_fn_coeff,
    )
