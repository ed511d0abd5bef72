"""Exact statevector simulation for small registers (H, RY, CNOT).

Qubit ordering is little-endian everywhere: qubit 0 is the least
significant bit of the basis-state index, so in ``amplitudes.reshape([2]*n)``
qubit q lives on axis ``n - 1 - q``. Bitstrings are printed with qubit
n-1 first, as in Qiskit.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import numpy.typing as npt

from .errors import ContractError, QubitIndexError, UnsupportedGateError

MAX_QUBITS = 12

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_H = np.array([[1, 1], [1, -1]], dtype=np.complex128) * _INV_SQRT2


class GateKind(Enum):
    """Supported gate kinds."""

    H = "H"
    RY = "RY"
    CNOT = "CNOT"


@dataclass(frozen=True)
class GateOp:
    """One gate. ``param_slot`` indexes the angle store (RY only)."""

    kind: GateKind
    qubits: tuple[int, ...]
    param_slot: Optional[int] = None

    def check(self, n_qubits: int) -> None:
        """Raise if the gate is malformed for an ``n_qubits`` register."""
        arity = 2 if self.kind is GateKind.CNOT else 1
        if len(self.qubits) != arity:
            raise ContractError(f"{self.kind.value} takes {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ContractError(f"{self.kind.value} qubits must be distinct: {self.qubits}")
        for q in self.qubits:
            if not 0 <= q < n_qubits:
                raise QubitIndexError(f"qubit {q} out of range for {n_qubits}-qubit register")
        if self.kind is GateKind.RY and self.param_slot is None:
            raise ContractError("RY gate needs a parameter slot")
        if self.kind is not GateKind.RY and self.param_slot is not None:
            raise UnsupportedGateError(f"{self.kind.value} gate cannot carry a parameter")


def ry_matrix(theta: float) -> npt.NDArray[np.complex128]:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


@dataclass
class StateVector:
    """2**n complex amplitudes of an n-qubit register."""

    n_qubits: int
    amplitudes: npt.NDArray[np.complex128]

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        """|0...0>."""
        if not 1 <= n_qubits <= MAX_QUBITS:
            raise ContractError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
        amps = np.zeros(2**n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def probabilities(self) -> npt.NDArray[np.float64]:
        return np.abs(self.amplitudes) ** 2


def _apply_1q(state: StateVector, matrix: npt.NDArray[np.complex128], qubit: int) -> None:
    n = state.n_qubits
    axis = n - 1 - qubit
    tensor = state.amplitudes.reshape([2] * n)
    tensor = np.moveaxis(np.tensordot(matrix, tensor, axes=([1], [axis])), 0, axis)
    state.amplitudes = np.ascontiguousarray(tensor).reshape(-1)


def _apply_cnot(state: StateVector, control: int, target: int) -> None:
    n = state.n_qubits
    tensor = state.amplitudes.reshape([2] * n)
    flip0: list[object] = [slice(None)] * n
    flip1: list[object] = [slice(None)] * n
    flip0[n - 1 - control] = 1
    flip1[n - 1 - control] = 1
    flip0[n - 1 - target] = 0
    flip1[n - 1 - target] = 1
    out = tensor.copy()
    out[tuple(flip0)] = tensor[tuple(flip1)]
    out[tuple(flip1)] = tensor[tuple(flip0)]
    state.amplitudes = out.reshape(-1)


def apply_gate(
    state: StateVector,
    gate: GateOp,
    params: Optional[Sequence[float]] = None,
    delta: float = 0.0,
) -> StateVector:
    """Apply ``gate`` in place and return the state.

    ``delta`` is added to this gate's RY angle; it is how the
    parameter-shift rule shifts one gate occurrence at a time.
    """
    gate.check(state.n_qubits)
    if gate.kind is GateKind.H:
        _apply_1q(state, _H, gate.qubits[0])
    elif gate.kind is GateKind.RY:
        if params is None or gate.param_slot is None or not 0 <= gate.param_slot < len(params):
            raise ContractError(f"angle store has no slot {gate.param_slot}")
        _apply_1q(state, ry_matrix(float(params[gate.param_slot]) + delta), gate.qubits[0])
    elif gate.kind is GateKind.CNOT:
        _apply_cnot(state, gate.qubits[0], gate.qubits[1])
    else:  # pragma: no cover - enum is closed
        raise UnsupportedGateError(str(gate.kind))
    return state


def run_circuit(
    gates: Sequence[GateOp],
    n_qubits: int,
    params: Optional[Sequence[float]] = None,
    initial: Optional[StateVector] = None,
) -> StateVector:
    """Simulate ``gates`` from |0...0> (or a copy of ``initial``)."""
    state = initial.copy() if initial is not None else StateVector.zero(n_qubits)
    for gate in gates:
        apply_gate(state, gate, params)
    return state


def z_expectations(state: StateVector) -> npt.NDArray[np.float64]:
    """<Z_j> for every qubit j, exact."""
    n = state.n_qubits
    probs = state.probabilities().reshape([2] * n)
    out = np.empty(n)
    for q in range(n):
        axis = n - 1 - q
        others = tuple(a for a in range(n) if a != axis)
        marginal = probs.sum(axis=others) if others else probs
        out[q] = marginal[0] - marginal[1]
    return np.clip(out, -1.0, 1.0)


def sample_shots(state: StateVector, shots: int, seed: int) -> dict[str, int]:
    """Multinomial measurement histogram keyed by bitstring (qubit n-1 first)."""
    if shots < 1:
        raise ContractError(f"shots must be >= 1, got {shots}")
    probs = state.probabilities()
    probs = probs / probs.sum()
    counts = np.random.default_rng(seed).multinomial(shots, probs)
    width = state.n_qubits
    return {format(i, f"0{width}b"): int(c) for i, c in enumerate(counts) if c > 0}


def z_from_counts(counts: dict[str, int], n_qubits: int) -> npt.NDArray[np.float64]:
    """Estimate <Z_j> from a shot histogram."""
    total = sum(counts.values())
    if total == 0:
        raise ContractError("empty histogram")
    out = np.zeros(n_qubits)
    for bits, count in counts.items():
        for q in range(n_qubits):
            out[q] += count if bits[n_qubits - 1 - q] == "0" else -count
    return out / total


def parameter_shift_grad(
    circuit: Sequence[GateOp],
    n_qubits: int,
    params: Sequence[float],
    obs: Optional[Sequence[int]] = None,
) -> npt.NDArray[np.float64]:
    """Jacobian d<Z_j>/d(param slot m), shape (len(params), len(obs)).

    Each RY occurrence is shifted by +-pi/2 on its own, so slots shared by
    several gates get the sum of their per-gate terms. Slots that no gate
    uses have zero rows.
    """
    observed = list(range(n_qubits)) if obs is None else list(obs)
    for q in observed:
        if not 0 <= q < n_qubits:
            raise QubitIndexError(f"observable qubit {q} out of range")
    for gate in circuit:
        if gate.param_slot is not None and gate.kind is not GateKind.RY:
            raise UnsupportedGateError(f"parameter shift needs RY generators, got {gate.kind.value}")

    jac = np.zeros((len(params), len(observed)))
    state = StateVector.zero(n_qubits)
    shift = np.pi / 2.0
    for index, gate in enumerate(circuit):
        if gate.kind is GateKind.RY and gate.param_slot is not None:
            rest = circuit[index + 1 :]
            plus = run_circuit(rest, n_qubits, params, apply_gate(state.copy(), gate, params, shift))
            minus = run_circuit(rest, n_qubits, params, apply_gate(state.copy(), gate, params, -shift))
            diff = z_expectations(plus) - z_expectations(minus)
            jac[gate.param_slot] += 0.5 * diff[observed]
        apply_gate(state, gate, params)
    return jac


def draw_circuit(
    gates: Sequence[GateOp],
    n_qubits: int,
    labels: Optional[Sequence[str]] = None,
) -> str:
    """Text diagram, one line per qubit, one column per gate."""
    rows: list[list[str]] = [[] for _ in range(n_qubits)]
    for gate in gates:
        if gate.kind is GateKind.CNOT:
            control, target = gate.qubits
            lo, hi = min(control, target), max(control, target)
            cells = {control: "●", target: "⊕"}
            for q in range(lo + 1, hi):
                cells[q] = "│"
        elif gate.kind is GateKind.RY:
            slot = gate.param_slot if gate.param_slot is not None else -1
            name = labels[slot] if labels is not None else f"p{slot}"
            cells = {gate.qubits[0]: f"RY({name})"}
        else:
            cells = {gate.qubits[0]: gate.kind.value}
        width = max(len(c) for c in cells.values())
        for q in range(n_qubits):
            rows[q].append(cells.get(q, "").center(width, "─"))
    return "\n".join(f"q{q}: ─" + "─".join(row) + "─" for q, row in enumerate(rows))
