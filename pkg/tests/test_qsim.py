"""Tests for the statevector simulator."""

import numpy as np
import pytest

from tests.conftest import dense_simulate, dense_z, random_circuit
from tqnn.errors import ContractError, QubitIndexError, UnsupportedGateError
from tqnn.qsim import (
    MAX_QUBITS,
    GateKind,
    GateOp,
    StateVector,
    apply_gate,
    draw_circuit,
    parameter_shift_grad,
    run_circuit,
    sample_shots,
    z_expectations,
    z_from_counts,
)

H0 = GateOp(GateKind.H, (0,))


class TestApplyGate:
    """Tests for single gates."""

    def test_hadamard_on_zero(self):
        """Test H|0> = (|0> + |1>)/sqrt(2)."""
        state = apply_gate(StateVector.zero(1), H0)
        np.testing.assert_allclose(state.amplitudes, [1 / np.sqrt(2), 1 / np.sqrt(2)])

    def test_ry_pi_flips(self):
        """Test RY(pi)|0> = |1>."""
        state = apply_gate(StateVector.zero(1), GateOp(GateKind.RY, (0,), 0), [np.pi])
        np.testing.assert_allclose(state.amplitudes, [0, 1], atol=1e-15)

    def test_cnot_little_endian(self):
        """Test CNOT(0 -> 1) on |01> (qubit 0 set) gives |11>."""
        state = StateVector.zero(2)
        state.amplitudes = np.array([0, 1, 0, 0], dtype=np.complex128)
        apply_gate(state, GateOp(GateKind.CNOT, (0, 1)))
        np.testing.assert_array_equal(state.amplitudes, [0, 0, 0, 1])

    def test_cnot_control_off(self):
        """Test that CNOT does nothing when the control is 0."""
        state = StateVector.zero(2)
        state.amplitudes = np.array([0, 0, 1, 0], dtype=np.complex128)  # qubit 1 set
        apply_gate(state, GateOp(GateKind.CNOT, (0, 1)))
        np.testing.assert_array_equal(state.amplitudes, [0, 0, 1, 0])

    def test_qubit_out_of_range(self):
        """Test a gate on a missing qubit."""
        with pytest.raises(QubitIndexError):
            apply_gate(StateVector.zero(2), GateOp(GateKind.H, (2,)))

    def test_malformed_gates(self):
        """Test arity, distinct qubits and parameter slots."""
        state = StateVector.zero(2)
        with pytest.raises(ContractError):
            apply_gate(state, GateOp(GateKind.CNOT, (1, 1)))
        with pytest.raises(ContractError):
            apply_gate(state, GateOp(GateKind.H, (0, 1)))
        with pytest.raises(ContractError):
            apply_gate(state, GateOp(GateKind.RY, (0,)))
        with pytest.raises(UnsupportedGateError):
            apply_gate(state, GateOp(GateKind.H, (0,), param_slot=0))
        with pytest.raises(ContractError, match="slot"):
            apply_gate(state, GateOp(GateKind.RY, (0,), 3), [0.1])

    def test_register_size_limits(self):
        """Test that 0 and MAX_QUBITS + 1 qubits are rejected."""
        with pytest.raises(ContractError):
            StateVector.zero(0)
        with pytest.raises(ContractError):
            StateVector.zero(MAX_QUBITS + 1)

    def test_inverse_gates_restore_state(self, rng):
        """Test H.H, CNOT.CNOT and RY(t).RY(-t) on a random state."""
        gates, params = random_circuit(3, 12, rng)
        base = run_circuit(gates, 3, params)
        for gate, inverse, store in [
            (GateOp(GateKind.H, (1,)), GateOp(GateKind.H, (1,)), None),
            (GateOp(GateKind.CNOT, (2, 0)), GateOp(GateKind.CNOT, (2, 0)), None),
            (GateOp(GateKind.RY, (0,), 0), GateOp(GateKind.RY, (0,), 1), [0.7, -0.7]),
        ]:
            state = apply_gate(apply_gate(base.copy(), gate, store), inverse, store)
            np.testing.assert_allclose(state.amplitudes, base.amplitudes, atol=1e-10)


class TestDenseOracle:
    """Statevector simulation against explicit Kronecker products."""

    def test_random_circuits(self):
        """Test 200 random circuits on up to 4 qubits."""
        gen = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(200):
            n = int(gen.integers(1, 5))
            gates, params = random_circuit(n, int(gen.integers(1, 15)), gen)
            fast = run_circuit(gates, n, params).amplitudes
            slow = dense_simulate(gates, n, params)
            worst = max(worst, float(np.max(np.abs(fast - slow))))
        assert worst < 1e-10

    def test_norm_preserved_after_every_gate(self, rng):
        """Test unit norm gate by gate."""
        gates, params = random_circuit(4, 30, rng)
        state = StateVector.zero(4)
        for gate in gates:
            apply_gate(state, gate, params)
            assert state.norm() == pytest.approx(1.0, abs=1e-10)

    def test_z_expectations_match_dense(self, rng):
        """Test <Z_q> against summation over basis states."""
        gates, params = random_circuit(4, 20, rng)
        state = run_circuit(gates, 4, params)
        np.testing.assert_allclose(z_expectations(state), dense_z(state.amplitudes, 4), atol=1e-12)


class TestExpectations:
    """Tests for z_expectations and shot sampling."""

    def test_zero_state(self):
        """Test <Z> = 1 on |000>."""
        np.testing.assert_array_equal(z_expectations(StateVector.zero(3)), [1, 1, 1])

    def test_plus_state(self):
        """Test <Z> = 0 after H."""
        state = apply_gate(StateVector.zero(1), H0)
        assert z_expectations(state)[0] == pytest.approx(0.0, abs=1e-15)

    def test_one_state(self):
        """Test <Z_1> = -1 when qubit 1 is set."""
        state = run_circuit([GateOp(GateKind.RY, (1,), 0)], 2, [np.pi])
        np.testing.assert_allclose(z_expectations(state), [1, -1], atol=1e-15)

    def test_shots_on_plus_state(self):
        """Test the binomial spread of 1024 shots of H|0>."""
        state = apply_gate(StateVector.zero(1), H0)
        zeros = []
        for seed in range(20):
            counts = sample_shots(state, 1024, seed)
            assert sum(counts.values()) == 1024
            zeros.append(counts.get("0", 0))
            assert 412 <= zeros[-1] <= 612
        assert np.mean(zeros) == pytest.approx(512, abs=25)

    def test_shots_are_seeded(self):
        """Test that equal seeds give equal histograms."""
        state = apply_gate(StateVector.zero(2), H0)
        assert sample_shots(state, 100, 5) == sample_shots(state, 100, 5)

    def test_bitstrings_put_highest_qubit_first(self):
        """Test key order on |10> (qubit 1 set)."""
        state = run_circuit([GateOp(GateKind.RY, (1,), 0)], 2, [np.pi])
        assert sample_shots(state, 10, 0) == {"10": 10}

    def test_sampled_estimate_converges(self, rng):
        """Test exact vs 10^6-shot estimates on a random circuit."""
        gates, params = random_circuit(3, 10, rng)
        state = run_circuit(gates, 3, params)
        estimate = z_from_counts(sample_shots(state, 1_000_000, 1), 3)
        np.testing.assert_allclose(estimate, z_expectations(state), atol=5e-3)

    def test_invalid_shot_count(self):
        """Test shots < 1 and an empty histogram."""
        with pytest.raises(ContractError):
            sample_shots(StateVector.zero(1), 0, 0)
        with pytest.raises(ContractError):
            z_from_counts({}, 1)


class TestParameterShift:
    """Tests for parameter_shift_grad."""

    def test_single_rotation(self):
        """Test d<Z>/d theta = -sin(theta) for RY(theta)|0>."""
        theta = 0.83
        jac = parameter_shift_grad([GateOp(GateKind.RY, (0,), 0)], 1, [theta])
        assert jac.shape == (1, 1)
        assert jac[0, 0] == pytest.approx(-np.sin(theta), abs=1e-12)

    def test_matches_finite_differences(self):
        """Test random 4-qubit circuits against central differences."""
        gen = np.random.default_rng(17)
        for _ in range(5):
            gates, params = random_circuit(4, 16, gen)
            if params.size == 0:
                continue
            jac = parameter_shift_grad(gates, 4, params)
            eps = 1e-6
            for m in range(params.size):
                up, down = params.copy(), params.copy()
                up[m] += eps
                down[m] -= eps
                numeric = (z_expectations(run_circuit(gates, 4, up)) - z_expectations(run_circuit(gates, 4, down))) / (2 * eps)
                np.testing.assert_allclose(jac[m], numeric, atol=1e-8)

    def test_shared_slot_sums_occurrences(self):
        """Test a slot used by two gates: RY(t) RY(t) = RY(2t)."""
        gates = [GateOp(GateKind.RY, (0,), 0), GateOp(GateKind.RY, (0,), 0)]
        jac = parameter_shift_grad(gates, 1, [0.4])
        assert jac[0, 0] == pytest.approx(-2 * np.sin(0.8), abs=1e-12)

    def test_unused_slot_has_zero_row(self):
        """Test slots that no gate references."""
        jac = parameter_shift_grad([GateOp(GateKind.RY, (0,), 0)], 2, [0.3, 1.2])
        np.testing.assert_array_equal(jac[1], [0.0, 0.0])

    def test_observable_subset(self):
        """Test that obs selects columns."""
        gates = [H0, GateOp(GateKind.RY, (1,), 0), GateOp(GateKind.CNOT, (0, 1))]
        full = parameter_shift_grad(gates, 2, [0.9])
        sub = parameter_shift_grad(gates, 2, [0.9], obs=[1])
        np.testing.assert_allclose(sub[:, 0], full[:, 1])

    def test_bad_observable(self):
        """Test an observable outside the register."""
        with pytest.raises(QubitIndexError):
            parameter_shift_grad([H0], 1, [], obs=[1])


class TestDrawCircuit:
    """Tests for the text diagram."""

    def test_one_line_per_qubit(self):
        """Test layout and gate symbols."""
        gates = [H0, GateOp(GateKind.RY, (1,), 0), GateOp(GateKind.CNOT, (0, 2))]
        lines = draw_circuit(gates, 3, ["in0"]).splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("q0: ") and "H" in lines[0] and "●" in lines[0]
        assert "RY(in0)" in lines[1] and "│" in lines[1]
        assert "⊕" in lines[2]
        assert len({len(line) for line in lines}) == 1
