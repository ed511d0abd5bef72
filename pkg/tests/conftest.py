"""Pytest fixtures and reference oracles for tqnn tests."""

import tempfile
from collections.abc import Callable, Sequence

import numpy as np
import pytest

from tqnn.data import Dataset, load_iris, split_standardize
from tqnn.genome import Genome
from tqnn.hybrid import HybridModel, init_model
from tqnn.nsga2 import Individual, dominates
from tqnn.qsim import GateKind, GateOp, ry_matrix

_H = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2.0)


def dense_one_qubit(matrix: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Full 2^n matrix of a one-qubit gate; qubit 0 is the rightmost factor."""
    full = np.eye(1, dtype=np.complex128)
    for q in reversed(range(n_qubits)):
        full = np.kron(full, matrix if q == qubit else np.eye(2))
    return full


def dense_cnot(control: int, target: int, n_qubits: int) -> np.ndarray:
    """Permutation matrix of CNOT on little-endian basis indices."""
    dim = 2**n_qubits
    full = np.zeros((dim, dim), dtype=np.complex128)
    for index in range(dim):
        out = index ^ (1 << target) if (index >> control) & 1 else index
        full[out, index] = 1.0
    return full


def dense_simulate(gates: Sequence[GateOp], n_qubits: int, params: Sequence[float] = ()) -> np.ndarray:
    """Amplitudes from explicit Kronecker-product matrices."""
    state = np.zeros(2**n_qubits, dtype=np.complex128)
    state[0] = 1.0
    for gate in gates:
        if gate.kind is GateKind.H:
            state = dense_one_qubit(_H, gate.qubits[0], n_qubits) @ state
        elif gate.kind is GateKind.RY:
            assert gate.param_slot is not None
            state = dense_one_qubit(ry_matrix(params[gate.param_slot]), gate.qubits[0], n_qubits) @ state
        else:
            state = dense_cnot(gate.qubits[0], gate.qubits[1], n_qubits) @ state
    return state


def dense_z(amplitudes: np.ndarray, n_qubits: int) -> np.ndarray:
    """<Z_q> by summing over basis indices."""
    probs = np.abs(amplitudes) ** 2
    out = np.zeros(n_qubits)
    for index, p in enumerate(probs):
        for q in range(n_qubits):
            out[q] += p if not (index >> q) & 1 else -p
    return out


def random_circuit(n_qubits: int, n_gates: int, rng: np.random.Generator) -> tuple[list[GateOp], np.ndarray]:
    """Random H/RY/CNOT circuit, one angle slot per RY."""
    gates = []
    slot = 0
    for _ in range(n_gates):
        kind = rng.integers(0, 3) if n_qubits > 1 else rng.integers(0, 2)
        if kind == 0:
            gates.append(GateOp(GateKind.H, (int(rng.integers(n_qubits)),)))
        elif kind == 1:
            gates.append(GateOp(GateKind.RY, (int(rng.integers(n_qubits)),), param_slot=slot))
            slot += 1
        else:
            control, target = rng.choice(n_qubits, size=2, replace=False)
            gates.append(GateOp(GateKind.CNOT, (int(control), int(target))))
    return gates, rng.uniform(-np.pi, np.pi, size=slot)


def brute_force_fronts(pop: Sequence[Individual]) -> list[set[int]]:
    """Peel non-dominated layers by pairwise comparison; returns member indices."""
    remaining = set(range(len(pop)))
    fronts = []
    while remaining:
        layer = {
            i for i in remaining
            if not any(dominates(pop[j], pop[i]) for j in remaining if j != i)
        }
        fronts.append(layer)
        remaining -= layer
    return fronts


def central_difference(f: Callable[[], float], values: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Numerical gradient of ``f`` w.r.t. ``values``, perturbed in place."""
    grad = np.zeros_like(values)
    flat = values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = f()
        flat[i] = original - eps
        minus = f()
        flat[i] = original
        out[i] = (plus - minus) / (2 * eps)
    return grad


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def iris_raw() -> Dataset:
    return load_iris()


@pytest.fixture
def iris(iris_raw) -> Dataset:
    """Iris with the default 120/30 stratified split, z-scored."""
    return split_standardize(iris_raw, test_frac=0.2, seed=0)


@pytest.fixture
def toy_dataset() -> Dataset:
    """Eight linearly separable points in two classes."""
    features = np.array([
        [-2.0, -1.5], [-1.5, -2.0], [-1.0, -1.2], [-1.8, -0.8],
        [2.0, 1.5], [1.5, 2.0], [1.0, 1.2], [1.8, 0.8],
    ])
    labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    return Dataset(
        name="toy",
        features=features,
        labels=labels,
        n_classes=2,
        train_idx=np.arange(8, dtype=np.int64),
        test_idx=np.zeros(0, dtype=np.int64),
    )


@pytest.fixture
def tiny_model() -> HybridModel:
    """2 qubits, one entangling pair, d_model 4: a few dozen parameters."""
    from tqnn.transformer import TransformerConfig

    cfg = TransformerConfig(d_model=4, n_heads=2, n_layers=1, d_ff=4, n_qubits=2)
    return init_model(Genome(2, (1,)), n_features=3, n_classes=2, encoder_cfg=cfg, seed=7)
