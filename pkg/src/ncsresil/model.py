"""LTI plant/controller data and closed-loop flow-map assembly.

The sensing path of the loop runs over a lossy, delayed network; the
controller sees a held copy of the plant output.  Everything here is plain
dense linear algebra: the systems of interest have at most a few tens of
states.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml


class ModelError(ValueError):
    """Invalid model data (dimensions, finiteness, file format)."""


class DimensionError(ModelError):
    """Two matrices that must be conformable are not."""


def _as_matrix(name: str, value) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{name}: not interpretable as a numeric matrix: {exc}")
    if arr.ndim != 2 or arr.size == 0:
        raise ModelError(f"{name}: expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name}: contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_shape(name: str, arr: np.ndarray, rows: int, cols: int, other: str) -> None:
    if arr.shape != (rows, cols):
        raise DimensionError(
            f"{name} has shape {arr.shape}, expected {(rows, cols)} to match {other}"
        )


@dataclass(frozen=True)
class PlantModel:
    """Continuous-time linear plant with disturbance input.

    x_p' = A x_p + B u + W w,   y = C x_p
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, _as_matrix(f"plant.{f.name}", getattr(self, f.name)))
        n = self.A.shape[0]
        if self.A.shape[1] != n:
            raise DimensionError(f"plant.A must be square, got {self.A.shape}")
        _check_shape("plant.B", self.B, n, self.B.shape[1], "plant.A")
        _check_shape("plant.C", self.C, self.C.shape[0], n, "plant.A")
        _check_shape("plant.W", self.W, n, self.W.shape[1], "plant.A")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def n_disturbances(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class ControllerModel:
    """Dynamic output-feedback controller fed by the held output.

    x_c' = A x_c + B y_held,   u = C x_c + D y_held
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(
                self, f.name, _as_matrix(f"controller.{f.name}", getattr(self, f.name))
            )
        n = self.A.shape[0]
        if self.A.shape[1] != n:
            raise DimensionError(f"controller.A must be square, got {self.A.shape}")
        _check_shape("controller.B", self.B, n, self.B.shape[1], "controller.A")
        _check_shape("controller.C", self.C, self.C.shape[0], n, "controller.A")
        _check_shape("controller.D", self.D, self.C.shape[0], self.B.shape[1], "controller.B/C")

    def check_compatible(self, plant: PlantModel) -> None:
        if self.B.shape[1] != plant.n_outputs:
            raise DimensionError(
                f"controller.B has {self.B.shape[1]} inputs but plant.C has "
                f"{plant.n_outputs} outputs"
            )
        if self.C.shape[0] != plant.n_inputs:
            raise DimensionError(
                f"controller.C has {self.C.shape[0]} outputs but plant.B has "
                f"{plant.n_inputs} inputs"
            )

    @property
    def n_states(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class PerformanceOutput:
    """Output channel whose energy the L2 analysis bounds: y_perf = Co (x_p, x_c)."""

    Co: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Co", _as_matrix("performance.Co", self.Co))

    def check_compatible(self, plant: PlantModel, controller: ControllerModel) -> None:
        n = plant.n_states + controller.n_states
        if self.Co.shape[1] != n:
            raise DimensionError(
                f"performance.Co has {self.Co.shape[1]} columns, expected {n} "
                "(plant states + controller states)"
            )


@dataclass(frozen=True)
class ClosedLoopMatrices:
    """Flow-map blocks of the closed loop in (state, hold-error, memory-error) coordinates.

    The combined state is x = (x_p, x_c); eta is the held-output error and
    sigma the sampled-memory error.  Both error derivatives share the same
    blocks by construction.
    """

    A_xx: np.ndarray
    A_xe: np.ndarray   # state <- hold error
    A_xw: np.ndarray   # state <- disturbance
    A_ex: np.ndarray   # error <- state
    A_ee: np.ndarray
    A_ew: np.ndarray
    Co: np.ndarray
    C_p: np.ndarray    # plant output map, kept for the block identity check

    def __post_init__(self):
        for f in fields(self):
            arr = np.array(getattr(self, f.name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, f.name, arr)

    @property
    def n_states(self) -> int:
        return self.A_xx.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.A_ee.shape[0]

    @property
    def n_disturbances(self) -> int:
        return self.A_xw.shape[1]

    @property
    def n_perf(self) -> int:
        return self.Co.shape[0]

    def block_identity_residual(self) -> float:
        """Relative residual of A_ex = [-C_p 0] A_xx (exact by construction)."""
        n_xp = self.C_p.shape[1]
        sel = np.hstack([-self.C_p, np.zeros((self.C_p.shape[0], self.n_states - n_xp))])
        expected = sel @ self.A_xx
        scale = max(1.0, float(np.linalg.norm(expected)))
        return float(np.linalg.norm(self.A_ex - expected)) / scale


def assemble_closed_loop(
    plant: PlantModel, controller: ControllerModel, perf: PerformanceOutput
) -> ClosedLoopMatrices:
    """Build the six closed-loop flow-map blocks from the loop components."""
    controller.check_compatible(plant)
    perf.check_compatible(plant, controller)
    Ap, Bp, Cp, W = plant.A, plant.B, plant.C, plant.W
    Ac, Bc, Cc, Dc = controller.A, controller.B, controller.C, controller.D
    n_xc = controller.n_states

    A_xx = np.block([[Ap + Bp @ Dc @ Cp, Bp @ Cc], [Bc @ Cp, Ac]])
    A_xe = np.vstack([Bp @ Dc, Bc])
    A_xw = np.vstack([W, np.zeros((n_xc, plant.n_disturbances))])
    A_ex = np.hstack([-Cp, np.zeros((plant.n_outputs, n_xc))]) @ A_xx
    A_ee = -Cp @ Bp @ Dc
    A_ew = -Cp @ W
    return ClosedLoopMatrices(A_xx, A_xe, A_xw, A_ex, A_ee, A_ew, perf.Co, Cp)


# ---------------------------------------------------------------------------
# Model file I/O: YAML with nested numeric arrays, one document per subject.
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = [
    ("plant", "A"), ("plant", "B"), ("plant", "C"), ("plant", "W"),
    ("controller", "A"), ("controller", "B"), ("controller", "C"), ("controller", "D"),
    ("performance", "Co"), ("network", "Ts"),
]


def load_model(path):
    """Load and validate a model document.

    Returns (plant, controller, performance, network) where network is the
    NetworkParams from ncsresil.hybrid.  Drop/delay bounds default to zero
    unless the optional network.max_drops / network.max_delay keys are set.
    """
    from .hybrid import NetworkParams

    path = Path(path)
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ModelError(f"{path}: parse error: {exc}")
    if not isinstance(doc, dict):
        raise ModelError(f"{path}: top level must be a mapping")
    for section, key in _REQUIRED_KEYS:
        if section not in doc or not isinstance(doc[section], dict) or key not in doc[section]:
            raise ModelError(f"{path}: missing required key {section}.{key}")

    plant = PlantModel(doc["plant"]["A"], doc["plant"]["B"], doc["plant"]["C"], doc["plant"]["W"])
    controller = ControllerModel(
        doc["controller"]["A"], doc["controller"]["B"], doc["controller"]["C"],
        doc["controller"]["D"],
    )
    perf = PerformanceOutput(doc["performance"]["Co"])
    controller.check_compatible(plant)
    perf.check_compatible(plant, controller)

    net_doc = doc["network"]
    net = NetworkParams(
        sample_period=float(net_doc["Ts"]),
        max_drops=int(net_doc.get("max_drops", 0)),
        max_delay=float(net_doc.get("max_delay", 0.0)),
    )
    return plant, controller, perf, net


def save_model(path, plant: PlantModel, controller: ControllerModel,
               perf: PerformanceOutput, net) -> None:
    """Write a model document that load_model round-trips exactly."""
    doc = {
        "plant": {k: getattr(plant, k).tolist() for k in ("A", "B", "C", "W")},
        "controller": {k: getattr(controller, k).tolist() for k in ("A", "B", "C", "D")},
        "performance": {"Co": perf.Co.tolist()},
        "network": {
            "Ts": float(net.sample_period),
            "max_drops": int(net.max_drops),
            "max_delay": float(net.max_delay),
        },
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
