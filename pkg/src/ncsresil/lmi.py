"""Self-contained LMI feasibility engine for the certificate conditions.

For fixed (decay rate, gain, drop/delay bounds) the certificate conditions are
linear in the stacked entries of the five symmetric decision blocks.  The
engine maximizes a uniform spectral margin over all constraints with a
log-det barrier interior-point method (an alternating-projection backend is
available as a fallback).  Correctness is one-sided: a "feasible" answer is
always re-verified by an independent dense eigenvalue check of every
constraint; anything else is reported as infeasible-or-unknown.

Problems here are tiny (blocks up to ~12x12, a few tens of scalars), so the
dense Newton systems are cheap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .certificate import (
    EPS_FEAS_REL,
    EPS_PSD_SLACK,
    Certificate,
    condition_matrix,
    vertex_points,
)
from .hybrid import NetworkParams
from .model import ClosedLoopMatrices


# ---------------------------------------------------------------------------
# symmetric block packing
# ---------------------------------------------------------------------------

def sym_dim(n: int) -> int:
    return n * (n + 1) // 2


def unpack_sym(v: np.ndarray, n: int) -> np.ndarray:
    """Upper-triangle vector (row-major) to full symmetric matrix."""
    P = np.zeros((n, n))
    idx = np.triu_indices(n)
    P[idx] = v
    P = P + P.T - np.diag(np.diag(P))
    return P


def pack_sym(P: np.ndarray) -> np.ndarray:
    return P[np.triu_indices(P.shape[0])].copy()


@dataclass(frozen=True)
class LmiConstraint:
    """Affine matrix constraint in slack form: S(v) = const + sum v_i coeffs[i] must be PSD.

    kind selects the verification threshold:
      pos-def    S is a decision block, needs lambda_min > 0 with margin
      nonpos     negation of a non-strict "<= 0" condition
      strict-neg negation of a strict "< 0" condition, needs a relative margin
    """

    name: str
    kind: str
    const: np.ndarray
    coeffs: np.ndarray   # (nvar, d, d)

    @property
    def dim(self) -> int:
        return self.const.shape[0]

    def evaluate(self, v: np.ndarray) -> np.ndarray:
        return self.const + np.tensordot(v, self.coeffs, axes=1)


@dataclass(frozen=True)
class LmiProblem:
    cl: ClosedLoopMatrices
    decay_rate: float
    gain: float
    net: NetworkParams
    mode: str
    constraints: tuple
    nvar: int

    def blocks(self, v: np.ndarray):
        """Split a decision vector into (P1, P2_0, P2_1, P3_0, P3_1)."""
        n, m = self.cl.n_states, self.cl.n_outputs
        k1, k2 = sym_dim(n), sym_dim(m)
        P1 = unpack_sym(v[:k1], n)
        rest = [unpack_sym(v[k1 + i * k2: k1 + (i + 1) * k2], m) for i in range(4)]
        return (P1, *rest)

    def reference_point(self) -> np.ndarray:
        """All blocks identity; used for constraint normalization and warm start."""
        n, m = self.cl.n_states, self.cl.n_outputs
        return np.concatenate([pack_sym(np.eye(n))] + [pack_sym(np.eye(m))] * 4)

    def certificate(self, v: np.ndarray) -> Certificate:
        P1, P20, P21, P30, P31 = self.blocks(v)
        return Certificate(P1, P20, P21, P30, P31, self.decay_rate, self.gain,
                           self.net, self.mode)


def build_problem(
    cl: ClosedLoopMatrices, decay_rate: float, gain: float,
    net: NetworkParams, mode: str,
) -> LmiProblem:
    """Assemble the 5 positivity + 2 jump + 4 vertex constraints as affine maps."""
    if decay_rate <= 0:
        raise ValueError("decay_rate must be > 0")
    if gain <= 0:
        raise ValueError("gain must be > 0")
    n, m = cl.n_states, cl.n_outputs
    k1, k2 = sym_dim(n), sym_dim(m)
    nvar = k1 + 4 * k2

    def blocks(v):
        P1 = unpack_sym(v[:k1], n)
        rest = [unpack_sym(v[k1 + i * k2: k1 + (i + 1) * k2], m) for i in range(4)]
        return (P1, *rest)

    def linearize(name, kind, fn, dim):
        z = np.zeros(nvar)
        B = fn(z)
        A = np.empty((nvar, dim, dim))
        for i in range(nvar):
            z[i] = 1.0
            A[i] = fn(z) - B
            z[i] = 0.0
        return LmiConstraint(name, kind, B, A)

    cons = []
    for b, bname in enumerate(("P1", "P2_0", "P2_1", "P3_0", "P3_1")):
        dim = n if b == 0 else m
        cons.append(linearize(f"pd:{bname}", "pos-def", lambda v, b=b: blocks(v)[b], dim))

    shrink = np.exp(-decay_rate * net.max_gap)
    cons.append(linearize(
        "jump:sample", "nonpos",
        lambda v: shrink * blocks(v)[1] - blocks(v)[2], m))
    cons.append(linearize(
        "jump:update", "nonpos",
        lambda v: blocks(v)[4] - blocks(v)[1] - blocks(v)[3], m))

    for tau, phase in vertex_points(net):
        def neg_vertex(v, tau=tau, phase=phase):
            P1, P20, P21, P30, P31 = blocks(v)
            P2 = P20 if phase == 0 else P21
            P3 = P30 if phase == 0 else P31
            return -condition_matrix(cl, P1, P2, P3, decay_rate, gain, tau, mode)
        dim = n + 2 * m + (cl.n_disturbances if mode == "input-output" else 0)
        cons.append(linearize(f"vertex:tau={tau:.6g},phase={phase}", "strict-neg",
                              neg_vertex, dim))

    return LmiProblem(cl, decay_rate, gain, net, mode, tuple(cons), nvar)


def verify_point(problem: LmiProblem, v: np.ndarray) -> dict:
    """Independent per-constraint margins: lambda_min of each slack matrix."""
    out = {}
    for c in problem.constraints:
        S = c.evaluate(v)
        out[c.name] = float(np.linalg.eigvalsh(S)[0])
    return out


def point_is_feasible(problem: LmiProblem, v: np.ndarray) -> bool:
    """Apply the per-kind thresholds to verify_point margins."""
    for c in problem.constraints:
        S = c.evaluate(v)
        lam_min = float(np.linalg.eigvalsh(S)[0])
        if c.kind == "pos-def":
            if lam_min <= 0.0:
                return False
        elif c.kind == "nonpos":
            if lam_min < -EPS_PSD_SLACK:
                return False
        else:  # strict-neg: original matrix is -S, require relative margin
            scale = max(1.0, float(np.linalg.norm(S)))
            if lam_min < EPS_FEAS_REL * scale:
                return False
    return True


@dataclass(frozen=True)
class SolverOptions:
    backend: str = "barrier"
    max_iterations: int = 4000
    tolerance: float = 1e-8
    margin_target: float = 1e-5    # normalized spectral margin declaring success
    box_radius: float = 1e3        # bound on decision blocks; the feasible set is a cone
    seed: int = 0


@dataclass(frozen=True)
class FeasibilityResult:
    status: str                    # "feasible" | "infeasible-or-unknown"
    certificate: Certificate | None
    margin: float                  # best normalized margin attained
    iterations: int
    solve_time: float
    diagnostics: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def _normalized_system(problem: LmiProblem, box_radius: float):
    """Constraint list scaled to unit Frobenius norm at the all-identity point,
    plus box constraints keeping the cone bounded."""
    vref = problem.reference_point()
    sys = []
    for c in problem.constraints:
        s = max(float(np.linalg.norm(c.evaluate(vref))), 1e-10)
        sys.append((c.const / s, c.coeffs / s))
    # box: box_radius * I - P >= 0 for each decision block
    n, m = problem.cl.n_states, problem.cl.n_outputs
    k1, k2 = sym_dim(n), sym_dim(m)
    for b in range(5):
        dim = n if b == 0 else m
        lo = 0 if b == 0 else k1 + (b - 1) * k2
        hi = k1 if b == 0 else lo + k2
        A = np.zeros((problem.nvar, dim, dim))
        iu = np.triu_indices(dim)
        for pos, (i, j) in enumerate(zip(*iu)):
            E = np.zeros((dim, dim))
            E[i, j] = -1.0
            E[j, i] = -1.0
            A[lo + pos] = E
        B = box_radius * np.eye(dim)
        s = float(np.linalg.norm(B - np.eye(dim)))
        sys.append((B / s, A / s))
    return sys, vref


def _margins(sys, v: np.ndarray) -> np.ndarray:
    return np.array([
        np.linalg.eigvalsh(B + np.tensordot(v, A, axes=1))[0] for B, A in sys
    ])


def _barrier_maxmargin(sys, v0, margin_target, max_iterations, tolerance):
    """max t s.t. S_c(v) - t I PSD for all c, via a log-det barrier path."""
    nvar = v0.shape[0]
    aug = []
    total_dim = 0
    for B, A in sys:
        d = B.shape[0]
        total_dim += d
        aug.append((B, np.concatenate([A, -np.eye(d)[None]], axis=0)))

    t0 = _margins(sys, v0).min() - 1.0
    z = np.concatenate([v0, [t0]])
    iters = 0
    mu = 1.0

    def barrier_value(zz, mu):
        val = -zz[-1]
        for B, At in aug:
            S = B + np.tensordot(zz, At, axes=1)
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                return None
            val -= mu * 2.0 * np.sum(np.log(np.diag(L)))
        return val

    while mu > 1e-10 and iters < max_iterations:
        for _ in range(60):
            if iters >= max_iterations:
                break
            g = np.zeros(nvar + 1)
            g[-1] = -1.0
            H = np.zeros((nvar + 1, nvar + 1))
            val = -z[-1]
            singular = False
            for B, At in aug:
                S = B + np.tensordot(z, At, axes=1)
                try:
                    L = np.linalg.cholesky(S)
                except np.linalg.LinAlgError:
                    singular = True
                    break
                X = np.linalg.inv(S)
                val -= mu * 2.0 * np.sum(np.log(np.diag(L)))
                XA = np.einsum("ab,kbc->kac", X, At)
                g -= mu * np.trace(XA, axis1=1, axis2=2)
                Yv = XA.reshape(nvar + 1, -1)
                Yt = XA.transpose(0, 2, 1).reshape(nvar + 1, -1)
                H += mu * (Yv @ Yt.T)
            if singular:
                break
            try:
                dz = np.linalg.solve(H + 1e-12 * np.eye(nvar + 1), -g)
            except np.linalg.LinAlgError:
                break
            decrement = float(-g @ dz)
            if decrement / 2.0 < tolerance:
                break
            step = 1.0
            for _ in range(50):
                vn = barrier_value(z + step * dz, mu)
                if vn is not None and vn <= val - 0.25 * step * decrement:
                    break
                step *= 0.5
            z = z + step * dz
            iters += 1
        gap = mu * total_dim
        if z[-1] > 3.0 * margin_target:
            break
        if z[-1] + gap < margin_target:
            break
        mu *= 0.15
    return z[:nvar], float(z[-1]), iters


def _projection_maxmargin(sys, v0, margin_target, max_iterations, tolerance):
    """Alternating projections: PSD-shift each slack, least-squares recover v."""
    nvar = v0.shape[0]
    flat = [(B.reshape(-1), A.reshape(A.shape[0], -1)) for B, A in sys]
    gram = sum(Af @ Af.T for _, Af in flat)
    gram += 1e-12 * np.eye(nvar)
    target = 2.0 * margin_target
    v = v0.copy()
    best = -np.inf
    for it in range(max_iterations):
        rhs = np.zeros(nvar)
        worst = np.inf
        for (B, A), (Bf, Af) in zip(sys, flat):
            S = B + np.tensordot(v, A, axes=1)
            w, Q = np.linalg.eigh(S)
            worst = min(worst, w[0])
            Z = Q @ np.diag(np.maximum(w, target)) @ Q.T
            rhs += Af @ (Z.reshape(-1) - Bf)
        best = max(best, worst)
        if worst >= target * (1.0 - 1e-3):
            return v, worst, it + 1
        v = np.linalg.solve(gram, rhs)
    return v, float(_margins(sys, v).min()), max_iterations


_BACKENDS = {
    "barrier": _barrier_maxmargin,
    "projection": _projection_maxmargin,
}


def solve(problem: LmiProblem, options: SolverOptions = SolverOptions()) -> FeasibilityResult:
    """Decide feasibility; sound on "feasible" answers only."""
    if options.backend not in _BACKENDS:
        raise ValueError(f"unknown backend {options.backend!r}; choose from {sorted(_BACKENDS)}")
    start = time.perf_counter()
    sys, vref = _normalized_system(problem, options.box_radius)
    v, margin, iters = _BACKENDS[options.backend](
        sys, vref, options.margin_target, options.max_iterations, options.tolerance
    )
    elapsed = time.perf_counter() - start
    if margin >= options.margin_target and point_is_feasible(problem, v):
        return FeasibilityResult("feasible", problem.certificate(v), margin, iters, elapsed)
    diag = (
        f"best normalized margin {margin:.3e} below target {options.margin_target:.1e}"
        if margin < options.margin_target
        else "solver margin reached but independent verification failed"
    )
    return FeasibilityResult("infeasible-or-unknown", None, margin, iters, elapsed, diag)
