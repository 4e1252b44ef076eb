import pytest
import numpy as np

from ionlink.purify import BellDiagonalTuple, NoiseModel, run_level, werner
from ionlink.qcore import (GATE_MATRICES, DensityMatrix, bell_fidelity, extract_superoperator, make_bell,
                           measure_branch, noisy_gate, zero_state)
from ionlink.stabtool import (ANCILLA_STEERING, GHZ_STEERING, ParityErrorTable, RemoteGateResource, TableEntry,
                              build_ghz_state, build_parity_superop_ancilla, build_table, decompose_superop,
                              ghz_fidelity, parity_projectors, remote_cphase, remote_cphase_branches,
                              remote_gate_superoperator, resource_summary)
from ionlink.utils import DecompositionError, NumericalInvariantError


def _parity_circuit(after=None, swap_reports=False):
    """Ideal Z parity of qubits 0-3 read on an ancilla, then an optional single-qubit gate"""
    def circuit(state: DensityMatrix):
        joint = state.tensor(zero_state(1))
        ancilla = joint.num_qubits - 1
        for q in range(4):
            joint = noisy_gate(joint, "CNOT", (q, ancilla))
        branches = {}
        for m in (0, 1):
            branch = measure_branch(joint, ancilla, "Z", m)
            if after is not None:
                branch = noisy_gate(branch, after[0], (after[1],))
            branches[1 - m if swap_reports else m] = branch
        return branches
    return circuit


class TestRemoteGate:
    """cPhase by gate teleportation through one pair"""

    def test_every_branch_is_ideal_cphase(self, noiseless, random_state):
        state = random_state(2)
        resource = RemoteGateResource(make_bell("phi+"))
        ideal = noisy_gate(state, "CPHASE", (0, 1)).matrix / 4
        branches = remote_cphase_branches(state, 0, 1, resource, noiseless)
        assert set(branches) == {(0, 0), (0, 1), (1, 0), (1, 1)}
        for branch in branches.values():
            assert np.allclose(branch.matrix, ideal, atol=1e-12)

    def test_twice_is_identity(self, noiseless, random_state):
        state = random_state(2)
        resource = RemoteGateResource(make_bell(0))
        twice = remote_cphase(remote_cphase(state, 0, 1, resource, noiseless), 0, 1, resource, noiseless)
        assert np.allclose(twice.matrix, state.matrix, atol=1e-10)

    def test_process_fidelity_of_perfect_resource(self, noiseless):
        superop = remote_gate_superoperator(RemoteGateResource(make_bell(0)), noiseless)
        assert superop.process_fidelity(GATE_MATRICES["CPHASE"]) == pytest.approx(1.0, abs=1e-10)

    def test_noisy_resource_lowers_process_fidelity(self, device_noise):
        superop = remote_gate_superoperator(RemoteGateResource(werner(0.05)), device_noise)
        fidelity = superop.process_fidelity(GATE_MATRICES["CPHASE"])
        assert 0.9 < fidelity < 0.96

    def test_pair_qubits_already_in_register(self, noiseless, random_state):
        state = random_state(2)
        joint = state.tensor(make_bell(0))
        resource = RemoteGateResource(make_bell(0))
        branches = remote_cphase_branches(joint, 0, 1, resource, noiseless, pair_qubits=(2, 3))
        total = sum(b.matrix for b in branches.values())
        assert np.allclose(total, noisy_gate(state, "CPHASE", (0, 1)).matrix, atol=1e-12)
        with pytest.raises(ValueError):
            remote_cphase_branches(joint, 0, 1, resource, noiseless, pair_qubits=(1, 3))

    def test_steering_keeps_resource_fidelity(self):
        pair = BellDiagonalTuple(0.04, 0.02, 0.01).to_state()
        for steering in (ANCILLA_STEERING, GHZ_STEERING):
            steered = RemoteGateResource(pair, steering).steered_state(NoiseModel(p2=1e-3))
            assert bell_fidelity(steered) == pytest.approx(bell_fidelity(pair))

    def test_resource_must_be_normalized(self):
        with pytest.raises(ValueError):
            RemoteGateResource(make_bell(0).scaled(0.5))


class TestDecomposition:
    """Branch channels expanded into Pauli times parity projector"""

    def test_ideal_measurement(self):
        table = decompose_superop(extract_superoperator(_parity_circuit(), 4))
        assert len(table.entries) == 1
        assert table.probability("IIII") == pytest.approx(1.0)
        assert table.residual < 1e-10

    def test_pauli_after_projection(self):
        table = decompose_superop(extract_superoperator(_parity_circuit(after=("X", 1)), 4))
        assert table.probability("IXII") == pytest.approx(1.0)
        assert table.dominant_error().pauli == "IXII"

    def test_swapped_reports_are_lies(self):
        table = decompose_superop(extract_superoperator(_parity_circuit(swap_reports=True), 4))
        assert table.probability("IIII", lie=True) == pytest.approx(1.0)
        assert table.lie_probability == pytest.approx(1.0)

    def test_non_pauli_channel_rejected(self):
        with pytest.raises(DecompositionError):
            decompose_superop(extract_superoperator(_parity_circuit(after=("H", 0)), 4))

    def test_missing_branch_rejected(self):
        branches = extract_superoperator(_parity_circuit(), 4)
        with pytest.raises(ValueError):
            decompose_superop({0: branches[0]})

    def test_projectors_complete(self):
        for basis in ("Z", "X"):
            p0, p1 = parity_projectors(basis)
            assert np.allclose(p0 + p1, np.eye(16))
            assert np.allclose(p0 @ p1, 0)


class TestParityTables:
    """Method (a) tables and their serialization"""

    @pytest.mark.parametrize("basis", ["Z", "X"])
    def test_noiseless_table_is_ideal(self, basis):
        table = build_table("a", 1, NoiseModel.noiseless(), basis)
        assert len(table.entries) == 1
        assert table.error_mass == pytest.approx(0.0, abs=1e-12)
        assert table.parity_basis == basis

    def test_noisy_table(self, level1_tables):
        table_z, table_x = level1_tables
        for table in level1_tables:
            assert sum(e.probability for e in table.entries) == pytest.approx(1.0, abs=1e-9)
            assert table.residual < 1e-6
            assert table.lie_probability > 0
        assert table_z.error_mass == pytest.approx(table_x.error_mass, rel=1e-3)

    def test_level_three_beats_level_one(self, device_noise):
        low = build_table("a", 1, device_noise, "Z")
        high = build_table("a", 3, device_noise, "Z")
        assert high.error_mass < low.error_mass
        # steering sends the largest channel to a readout flip on the ancilla
        assert high.dominant_error().lie
        assert high.dominant_error().pauli == "IIII"

    @pytest.mark.slow
    def test_mass_tracks_raw_error(self):
        masses = {}
        for eps in (0.05, 0.1, 0.15):
            noise = NoiseModel.ion_trap(eps)
            masses[eps] = [build_table("a", level, noise, "Z").error_mass for level in (1, 3)]
            assert masses[eps][1] < masses[eps][0]
        for k in range(2):
            assert masses[0.05][k] <= masses[0.1][k] <= masses[0.15][k]

    def test_steering_mass_first_order(self):
        noise = NoiseModel.noiseless(0.01)
        masses = [build_parity_superop_ancilla(1, noise, steering=s).error_mass
                  for s in (ANCILLA_STEERING, GHZ_STEERING)]
        assert masses[0] == pytest.approx(masses[1], rel=0.05)

    def test_branch_probabilities(self, device_noise):
        branches = build_parity_superop_ancilla(1, device_noise, decompose=False)
        assert sum(b.probability for b in branches.values()) == pytest.approx(1.0)

    def test_text_round_trip_is_stable(self, level1_tables):
        table = level1_tables[0]
        text = table.to_text()
        assert text.startswith("# parity-error-table\n# basis Z\n")
        parsed = ParityErrorTable.from_text(text)
        assert parsed.to_text() == text
        assert table.to_text() == text

    def test_table_validation(self):
        with pytest.raises(NumericalInvariantError):
            ParityErrorTable((TableEntry("IIII", False, 0.5),), "Z")
        with pytest.raises(ValueError):
            ParityErrorTable((TableEntry("IIQI", False, 1.0),), "Z")
        with pytest.raises(ValueError):
            ParityErrorTable.ideal("Y")
        with pytest.raises(ValueError):
            ParityErrorTable.from_text("IIII 0 1.0\n")
        with pytest.raises(ValueError):
            build_table("c", 1, NoiseModel.noiseless())


class TestGhzMethod:
    """Method (b): parity read from a shared GHZ state"""

    def test_ghz_from_perfect_pairs(self, noiseless):
        state = build_ghz_state([make_bell(0)] * 3, noiseless)
        assert state.num_qubits == 4
        assert ghz_fidelity(state) == pytest.approx(1.0)

    def test_ghz_from_noisy_pairs(self, noiseless):
        pair = run_level(1, NoiseModel.noiseless(0.1)).out
        assert ghz_fidelity(build_ghz_state([pair] * 3, noiseless)) < 1.0
        with pytest.raises(ValueError):
            build_ghz_state([pair] * 2, noiseless)

    def test_resource_summary(self):
        noise = NoiseModel.noiseless(0.1)
        ancilla = resource_summary("a", 1, noise)
        ghz = resource_summary("b", 1, noise)
        assert ancilla["pair_fidelity"] == pytest.approx(ghz["pair_fidelity"])
        assert ancilla["pair_root_fidelity"] == pytest.approx(np.sqrt(ancilla["pair_fidelity"]))
        assert 0.9 < ancilla["remote_cphase_process_fidelity"] < 1.0
        assert 0.7 < ghz["ghz_fidelity"] < ghz["pair_fidelity"]
        with pytest.raises(ValueError):
            resource_summary("c", 1, noise)

    @pytest.mark.slow
    def test_noiseless_table_is_ideal(self):
        table = build_table("b", 1, NoiseModel.noiseless(), "Z")
        assert table.error_mass == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.slow
    def test_noisy_table(self, device_noise):
        table = build_table("b", 2, device_noise, "X")
        assert 0 < table.error_mass < 0.2
        assert table.residual < 1e-6
        print(f"✅ GHZ table: {len(table.entries)} entries, mass {table.error_mass:.4e}")

    @pytest.mark.slow
    def test_shared_ghz_beats_ancilla(self, device_noise):
        ghz = build_table("b", 2, device_noise, "Z")
        ancilla = build_table("a", 2, device_noise, "Z")
        assert ghz.error_mass < ancilla.error_mass
