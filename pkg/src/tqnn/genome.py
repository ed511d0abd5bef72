"""Bitstring genomes for the circuit search space.

A genome for N qubits has C(N, 2) bits, one per qubit pair (i, j), i < j,
in lexicographic order (0,1), (0,2), ..., (N-2, N-1). A set bit appends
CNOT(control=i, target=j) followed by a trainable RY on qubit j to the
fixed prefix of N Hadamards and N input-angle RY gates.

Angle store layout for a decoded circuit: slots 0..N-1 hold the input
angles, slots N..N+n_theta-1 the trainable thetas in emission order.
"""

import re
from collections.abc import Sequence
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ContractError, ParseError
from .qsim import GateKind, GateOp

MIN_QUBITS = 2

_GENOME_TEXT = re.compile(r"^\s*(\d+)\s*:\s*([01]*)\s*$")


def genome_length(n_qubits: int) -> int:
    return n_qubits * (n_qubits - 1) // 2


def pair_index(i: int, j: int, n_qubits: int) -> int:
    """Lexicographic rank of the pair (i, j) among all i < j < N."""
    if not 0 <= i < j < n_qubits:
        raise ContractError(f"pair ({i}, {j}) must satisfy 0 <= i < j < {n_qubits}")
    # Pairs starting with 0..i-1 come first: sum_{a<i} (N - 1 - a).
    return i * (2 * n_qubits - i - 1) // 2 + (j - i - 1)


def pairs(n_qubits: int) -> list[tuple[int, int]]:
    """All qubit pairs in bit order."""
    return list(combinations(range(n_qubits), 2))


@dataclass(frozen=True)
class Genome:
    """Immutable bit array of length N(N-1)/2."""

    n_qubits: int
    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.n_qubits < MIN_QUBITS:
            raise ContractError(f"genome needs at least {MIN_QUBITS} qubits, got {self.n_qubits}")
        expected = genome_length(self.n_qubits)
        if len(self.bits) != expected:
            raise ContractError(
                f"{self.n_qubits}-qubit genome needs {expected} bits, got {len(self.bits)}"
            )
        if any(b not in (0, 1) for b in self.bits):
            raise ContractError(f"genome bits must be 0/1: {self.bits}")

    @classmethod
    def from_bits(cls, n_qubits: int, bits: Sequence[int]) -> "Genome":
        return cls(n_qubits, tuple(int(b) for b in bits))

    @property
    def popcount(self) -> int:
        return sum(self.bits)

    @property
    def bitstring(self) -> str:
        return "".join(str(b) for b in self.bits)

    def to_text(self) -> str:
        """Text form ``N:bitstring``."""
        return f"{self.n_qubits}:{self.bitstring}"

    def __str__(self) -> str:
        return self.to_text()


def parse_genome(text: str) -> Genome:
    """Parse ``N:bitstring`` (e.g. ``3:101``)."""
    match = _GENOME_TEXT.match(text)
    if not match:
        raise ParseError(f"malformed genome text {text!r}; expected N:bits")
    n_qubits = int(match.group(1))
    bits = match.group(2)
    if n_qubits < MIN_QUBITS:
        raise ParseError(f"genome {text!r} needs at least {MIN_QUBITS} qubits")
    if len(bits) != genome_length(n_qubits):
        raise ParseError(
            f"genome {text!r} has {len(bits)} bits, {n_qubits} qubits need {genome_length(n_qubits)}"
        )
    return Genome(n_qubits, tuple(int(b) for b in bits))


@dataclass(frozen=True)
class CircuitSpec:
    """Decoded gate list with the angle store layout."""

    n_qubits: int
    gates: tuple[GateOp, ...]
    n_input_slots: int
    n_theta_slots: int

    @property
    def n_slots(self) -> int:
        return self.n_input_slots + self.n_theta_slots

    def slot_labels(self) -> list[str]:
        """Diagram labels: in0.. for inputs, θ0.. for trainables."""
        return [f"in{i}" for i in range(self.n_input_slots)] + [
            f"θ{m}" for m in range(self.n_theta_slots)
        ]


def decode(genome: Genome) -> CircuitSpec:
    """Expand a genome into its ordered gate list."""
    n = genome.n_qubits
    gates = [GateOp(GateKind.H, (q,)) for q in range(n)]
    gates += [GateOp(GateKind.RY, (q,), param_slot=q) for q in range(n)]
    theta = 0
    for bit, (i, j) in zip(genome.bits, pairs(n)):
        if bit:
            gates.append(GateOp(GateKind.CNOT, (i, j)))
            gates.append(GateOp(GateKind.RY, (j,), param_slot=n + theta))
            theta += 1
    return CircuitSpec(n, tuple(gates), n_input_slots=n, n_theta_slots=theta)


def gate_count(genome: Genome) -> int:
    """Second fitness objective: 2N prefix gates plus two per set bit."""
    return 2 * genome.n_qubits + 2 * genome.popcount


def max_gate_count(n_qubits: int) -> int:
    return 2 * n_qubits + 2 * genome_length(n_qubits)


def random_genome(n_qubits: int, rng: np.random.Generator) -> Genome:
    """Genome with i.i.d. fair bits."""
    bits = rng.integers(0, 2, size=genome_length(n_qubits))
    return Genome.from_bits(n_qubits, bits)


def crossover(
    a: Genome,
    b: Genome,
    rng: np.random.Generator,
    p_c: float = 0.9,
) -> tuple[Genome, Genome]:
    """Single-point crossover with probability ``p_c``; otherwise copies."""
    if a.n_qubits != b.n_qubits:
        raise ContractError(f"cannot cross {a.n_qubits}- and {b.n_qubits}-qubit genomes")
    length = len(a.bits)
    if length < 2 or rng.random() >= p_c:
        return a, b
    point = int(rng.integers(1, length))
    child1 = a.bits[:point] + b.bits[point:]
    child2 = b.bits[:point] + a.bits[point:]
    return Genome(a.n_qubits, child1), Genome(a.n_qubits, child2)


def mutate(genome: Genome, p_m: float, rng: np.random.Generator) -> Genome:
    """Flip each bit independently with probability ``p_m``."""
    if not 0.0 <= p_m <= 1.0:
        raise ContractError(f"mutation probability must be in [0, 1], got {p_m}")
    flips = rng.random(len(genome.bits)) < p_m
    return Genome(genome.n_qubits, tuple(b ^ int(f) for b, f in zip(genome.bits, flips)))
