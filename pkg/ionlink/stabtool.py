"""Remote parity measurements between four modules and their Pauli/lie error tables.

Method (a) gathers the parity on an ancilla node with four remote gates.
Method (b) shares a four-qubit GHZ state built by fusing three pairs.
Both consume pairs from ``purify.run_level`` and are reduced to a
``ParityErrorTable``: an ideal parity projector followed by a Pauli on the
data qubits, with the reported outcome possibly flipped (a lie).
"""
import logging
from dataclasses import dataclass
from itertools import product
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .purify import NoiseModel, run_level
from .qcore import (GATE_MATRICES, DensityMatrix, PauliString, Superoperator, bell_fidelity, conjugate_pauli,
                    extract_superoperator, measure_branch, noisy_gate, root_fidelity, vectorize, zero_state)
from .repeater import steer_errors
from .utils import Config, DecompositionError, NumericalInvariantError, QubitBudgetError

logger = logging.getLogger(__name__)

BASES = ("Z", "X")
METHODS = ("a", "b")
DATA = ("d0", "d1", "d2", "d3")
REFS = ("r0", "r1", "r2", "r3")

# psi- on the pair lands as Z on the app_b side only, i.e. a lie on the ancilla
ANCILLA_STEERING = (3, 2, 1)
# phi- is a Z on a GHZ qubit, which only flips that qubit's X readout
GHZ_STEERING = (1, 2, 3)

TABLE_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class RemoteGateResource:
    pair_state: DensityMatrix
    steering: Union[None, str, Tuple[int, int, int]] = None

    def __post_init__(self):
        if self.pair_state.num_qubits != 2 or abs(self.pair_state.trace - 1) > 1e-9:
            raise ValueError("resource must be a normalized two-qubit pair")

    def steered_state(self, noise: Optional[NoiseModel] = None) -> DensityMatrix:
        if self.steering is None:
            return self.pair_state
        return steer_errors(self.pair_state, self.steering, noise)


def _after_removal(index: int, removed: int) -> int:
    return index - 1 if index > removed else index


def remote_cphase_branches(joint: DensityMatrix, app_a: int, app_b: int, resource: RemoteGateResource,
                           noise: NoiseModel,
                           pair_qubits: Optional[Tuple[int, int]] = None) -> Dict[Tuple[int, int], DensityMatrix]:
    """Corrected, unnormalized output per reported (X outcome at A, Y outcome at B).

    With |Y+> = (|0> + i|1>)/sqrt(2), equal outcomes are completed by S_dagger
    on both application qubits and unequal outcomes by S.
    """
    if pair_qubits is None:
        pa, pb = joint.num_qubits, joint.num_qubits + 1
        joint = joint.tensor(resource.steered_state(noise))
    else:
        pa, pb = pair_qubits
        used = {app_a, app_b, pa, pb}
        if len(used) != 4 or not all(0 <= q < joint.num_qubits for q in used):
            raise ValueError(f"resource pair {pair_qubits} missing from the joint state")
    joint = noisy_gate(joint, "CPHASE", (app_a, pa), p2=noise.p2)
    joint = noisy_gate(joint, "CPHASE", (app_b, pb), p2=noise.p2)
    first, second = (pb, pa) if pb > pa else (pa, pb)
    apps = [_after_removal(_after_removal(q, first), second) for q in (app_a, app_b)]
    branches = {}
    for ma, mb in product((0, 1), repeat=2):
        outcomes = {pa: ("X", ma), pb: ("Y", mb)}
        branch = measure_branch(joint, first, *outcomes[first], noise.pm)
        branch = measure_branch(branch, second, *outcomes[second], noise.pm)
        kind = "S_dagger" if ma == mb else "S"
        for q in apps:
            branch = noisy_gate(branch, kind, (q,), p1=noise.p1)
        branches[(ma, mb)] = branch
    return branches


def remote_cphase(joint: DensityMatrix, app_a: int, app_b: int, resource: RemoteGateResource, noise: NoiseModel,
                  pair_qubits: Optional[Tuple[int, int]] = None) -> DensityMatrix:
    """Gate teleportation of a cPhase through one pair, averaged over outcomes"""
    branches = remote_cphase_branches(joint, app_a, app_b, resource, noise, pair_qubits)
    out = None
    for branch in branches.values():
        out = branch if out is None else out + branch
    return out


def remote_gate_superoperator(resource: RemoteGateResource, noise: NoiseModel) -> Superoperator:
    return extract_superoperator(lambda state: remote_cphase(state, 0, 1, resource, noise), 2)


@dataclass(frozen=True, eq=False)
class _Register:
    """Density matrix with named qubits"""

    state: DensityMatrix
    names: Tuple[str, ...]

    def indices(self, names: Iterable[str]):
        return [self.names.index(name) for name in names]

    def attach(self, pair: DensityMatrix, names: Sequence[str]) -> "_Register":
        return _Register(self.state.tensor(pair), self.names + tuple(names))

    def gate(self, kind: str, names: Sequence[str], noise: NoiseModel) -> "_Register":
        return _Register(noisy_gate(self.state, kind, self.indices(names), p1=noise.p1, p2=noise.p2), self.names)

    def channel(self, superop: Superoperator, names: Sequence[str]) -> "_Register":
        return _Register(superop.apply(self.state, self.indices(names)), self.names)

    def pauli(self, letter: str, name: str) -> "_Register":
        return _Register(conjugate_pauli(self.state, letter, self.indices([name])), self.names)

    def measured(self, name: str, basis: str, outcome: int, pm: float) -> "_Register":
        index = self.names.index(name)
        remaining = self.names[:index] + self.names[index + 1:]
        return _Register(measure_branch(self.state, index, basis, outcome, pm), remaining)

    def __add__(self, other: "_Register") -> "_Register":
        if other.names != self.names:
            raise ValueError("registers hold different qubits")
        return _Register(self.state + other.state, self.names)


Branches = Dict[int, _Register]


def _accumulate(target: Branches, key: int, reg: _Register):
    target[key] = reg if key not in target else target[key] + reg


def _hadamard_data(state: DensityMatrix, noise: NoiseModel) -> DensityMatrix:
    for q in range(len(DATA)):
        state = noisy_gate(state, "H", (q,), p1=noise.p1)
    return state


def _in_basis(circuit, basis: str, noise: NoiseModel):
    """X-type checks are the Z-type circuit between data Hadamards"""
    if basis not in BASES:
        raise ValueError(f"parity basis must be one of {BASES}, got {basis!r}")
    if basis == "Z":
        return circuit

    def rotated(state: DensityMatrix):
        branches = circuit(_hadamard_data(state, noise))
        return {m: _hadamard_data(branch, noise) for m, branch in branches.items()}

    return rotated


def _check_budget(required: int):
    if required > Config.max_qubits:
        raise QubitBudgetError(f"circuit needs {required} qubits, budget is {Config.max_qubits}")


def build_parity_superop_ancilla(level: int, noise: NoiseModel, basis: str = "Z",
                                 steering: Union[None, str, Tuple[int, int, int]] = ANCILLA_STEERING,
                                 decompose: bool = True):
    """Parity of four data qubits collected on ancilla E by four remote gates"""
    _check_budget(2 * len(DATA) + 1)
    resource = RemoteGateResource(run_level(level, noise).out, steering)
    gate_channel = remote_gate_superoperator(resource, noise)

    def circuit(state: DensityMatrix):
        reg = _Register(state, DATA + REFS).attach(zero_state(1), ("E",))
        reg = reg.gate("H", ["E"], noise)
        for data in DATA:
            reg = reg.channel(gate_channel, [data, "E"])
        reg = reg.gate("H", ["E"], noise)
        return {m: reg.measured("E", "Z", m, noise.pm).state for m in (0, 1)}

    branches = extract_superoperator(_in_basis(circuit, basis, noise), len(DATA))
    return decompose_superop(branches, basis) if decompose else branches


def _fuse_into_ghz(branches: Branches, keep: str, sacrificed: str, corrected: str, noise: NoiseModel) -> Branches:
    """CNOT keep -> sacrificed, Z readout, X frame update on ``corrected``"""
    out: Branches = {}
    for parity, reg in branches.items():
        reg = reg.gate("CNOT", [keep, sacrificed], noise)
        for m in (0, 1):
            branch = reg.measured(sacrificed, "Z", m, noise.pm)
            _accumulate(out, parity, branch.pauli("X", corrected) if m else branch)
    return out


def _couple_and_read(branches: Branches, data: str, envoy: str, noise: NoiseModel) -> Branches:
    out: Branches = {}
    for parity, reg in branches.items():
        reg = reg.gate("CPHASE", [data, envoy], noise)
        for m in (0, 1):
            _accumulate(out, parity ^ m, reg.measured(envoy, "X", m, noise.pm))
    return out


def _attach(branches: Branches, pair: DensityMatrix, names: Sequence[str]) -> Branches:
    return {parity: reg.attach(pair, names) for parity, reg in branches.items()}


def build_ghz_state(pairs: Sequence[DensityMatrix], noise: NoiseModel) -> DensityMatrix:
    """Four-node GHZ state from three pairs; qubits are the envoys at A, B, C, D"""
    if len(pairs) != 3:
        raise ValueError(f"a four-node GHZ state needs three pairs, got {len(pairs)}")
    branches = {0: _Register(pairs[0], ("a", "b1"))}
    branches = _attach(branches, pairs[1], ("b2", "c1"))
    branches = _fuse_into_ghz(branches, "b1", "b2", "c1", noise)
    branches = _attach(branches, pairs[2], ("c2", "e"))
    branches = _fuse_into_ghz(branches, "c1", "c2", "e", noise)
    return branches[0].state


def ghz_fidelity(state: DensityMatrix) -> float:
    v = np.zeros(2 ** state.num_qubits, dtype=complex)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return float((v.conj() @ state.matrix @ v).real)


def build_parity_superop_ghz(level: int, noise: NoiseModel, basis: str = "Z",
                             steering: Union[None, str, Tuple[int, int, int]] = GHZ_STEERING,
                             decompose: bool = True):
    """Parity read from a shared GHZ state; fusion is interleaved with readout.

    Each data qubit is coupled to its envoy and read out as soon as the envoy
    is in the GHZ state, so at most 4 data + 4 reference + 3 envoys are live.
    """
    _check_budget(2 * len(DATA) + 3)
    pair = RemoteGateResource(run_level(level, noise).out, steering).steered_state(noise)

    def circuit(state: DensityMatrix):
        branches = {0: _Register(state, DATA + REFS)}
        branches = _attach(branches, pair, ("a", "b1"))
        branches = _couple_and_read(branches, "d0", "a", noise)
        branches = _attach(branches, pair, ("b2", "c1"))
        branches = _fuse_into_ghz(branches, "b1", "b2", "c1", noise)
        branches = _couple_and_read(branches, "d1", "b1", noise)
        branches = _attach(branches, pair, ("c2", "e"))
        branches = _fuse_into_ghz(branches, "c1", "c2", "e", noise)
        branches = _couple_and_read(branches, "d2", "c1", noise)
        branches = _couple_and_read(branches, "d3", "e", noise)
        return {m: reg.state for m, reg in branches.items()}

    branches = extract_superoperator(_in_basis(circuit, basis, noise), len(DATA))
    return decompose_superop(branches, basis) if decompose else branches


BUILDERS = {"a": build_parity_superop_ancilla, "b": build_parity_superop_ghz}


def build_table(method: str, level: int, noise: NoiseModel, basis: str = "Z") -> "ParityErrorTable":
    if method not in BUILDERS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    table = BUILDERS[method](level, noise, basis)
    logger.info("method %s level %d basis %s eps=%.4g: error mass %.6g, lies %.6g", method, level, basis,
                noise.epsilon, table.error_mass, table.lie_probability)
    return table


def resource_summary(method: str, level: int, noise: NoiseModel) -> Dict[str, float]:
    """Quality of the shared resource a method spends on one check"""
    if method not in BUILDERS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    pair = run_level(level, noise).out
    summary = {"pair_fidelity": bell_fidelity(pair), "pair_root_fidelity": root_fidelity(pair)}
    if method == "a":
        gate = remote_gate_superoperator(RemoteGateResource(pair, ANCILLA_STEERING), noise)
        summary["remote_cphase_process_fidelity"] = gate.process_fidelity(GATE_MATRICES["CPHASE"])
    else:
        steered = RemoteGateResource(pair, GHZ_STEERING).steered_state(noise)
        summary["ghz_fidelity"] = ghz_fidelity(build_ghz_state([steered] * 3, noise))
    return summary


@dataclass(frozen=True)
class TableEntry:
    pauli: str
    lie: bool
    probability: float


@dataclass(frozen=True)
class ParityErrorTable:
    entries: Tuple[TableEntry, ...]
    parity_basis: str
    residual: float = 0.0

    def __post_init__(self):
        if self.parity_basis not in BASES:
            raise ValueError(f"parity basis must be one of {BASES}, got {self.parity_basis!r}")
        entries = tuple(sorted(self.entries, key=lambda e: (e.pauli, e.lie)))
        for entry in entries:
            if len(entry.pauli) != len(DATA) or any(c not in "IXYZ" for c in entry.pauli):
                raise ValueError(f"invalid table Pauli {entry.pauli!r}")
            if entry.probability < 0:
                raise ValueError(f"negative probability for {entry.pauli}")
        total = sum(e.probability for e in entries)
        if abs(total - 1) > Config.table_tol:
            raise NumericalInvariantError(f"table probabilities sum to {total!r}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def ideal(cls, basis: str = "Z") -> "ParityErrorTable":
        return cls((TableEntry("IIII", False, 1.0),), basis)

    def probability(self, pauli: str, lie: bool = False) -> float:
        return sum(e.probability for e in self.entries if e.pauli == pauli and e.lie == lie)

    @property
    def error_mass(self) -> float:
        return 1.0 - self.probability("IIII", False)

    @property
    def lie_probability(self) -> float:
        return sum(e.probability for e in self.entries if e.lie)

    def dominant_error(self) -> Optional[TableEntry]:
        errors = [e for e in self.entries if e.pauli != "IIII" or e.lie]
        return max(errors, key=lambda e: e.probability) if errors else None

    def as_arrays(self):
        """(probabilities, x bits, z bits, lie flags) for vectorized sampling"""
        probs = np.array([e.probability for e in self.entries])
        x = np.array([PauliString(e.pauli).x_bits() for e in self.entries], dtype=np.uint8)
        z = np.array([PauliString(e.pauli).z_bits() for e in self.entries], dtype=np.uint8)
        lie = np.array([e.lie for e in self.entries], dtype=np.uint8)
        return probs / probs.sum(), x, z, lie

    def to_text(self) -> str:
        lines = ["# parity-error-table", f"# basis {self.parity_basis}"]
        lines += [f"{e.pauli} {int(e.lie)} {e.probability:.11e}" for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ParityErrorTable":
        basis = None
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "basis":
                    basis = parts[1]
                continue
            try:
                pauli, lie, prob = line.split()
                entries.append(TableEntry(pauli, bool(int(lie)), float(prob)))
            except ValueError:
                raise ValueError(f"malformed table line: {line!r}")
        if basis is None:
            raise ValueError("table text has no basis header")
        return cls(tuple(entries), basis)


_PRODUCT = {("I", p): p for p in "IXYZ"}
_PRODUCT.update({(p, "I"): p for p in "IXYZ"})
_PRODUCT.update({(p, p): "I" for p in "XYZ"})
_PRODUCT.update({("X", "Y"): "Z", ("Y", "X"): "Z", ("Y", "Z"): "X", ("Z", "Y"): "X", ("X", "Z"): "Y", ("Z", "X"): "Y"})


def _times(p: str, q: str) -> str:
    return "".join(_PRODUCT[a, b] for a, b in zip(p, q))


def _canonical(pauli: str, stabilizer: str) -> str:
    """Representative of {P, P.S}: lower weight, then alphabetical"""
    other = _times(pauli, stabilizer)
    return min(pauli, other, key=lambda s: (sum(c != "I" for c in s), s))


def parity_projectors(basis: str) -> Tuple[np.ndarray, np.ndarray]:
    n = len(DATA)
    parity = np.array([bin(x).count("1") % 2 for x in range(2 ** n)])
    projectors = [np.diag((parity == q).astype(complex)) for q in (0, 1)]
    if basis == "X":
        h = np.eye(1, dtype=complex)
        for _ in range(n):
            h = np.kron(GATE_MATRICES["H"], h)
        projectors = [h @ p @ h for p in projectors]
    return projectors[0], projectors[1]


def _class_basis(basis: str):
    """Orthonormal vectors vec(P Pi_q)/sqrt(8), one per (class, q)"""
    stabilizer = basis * len(DATA)
    classes = sorted({_canonical("".join(p), stabilizer) for p in product("IXYZ", repeat=len(DATA))})
    projectors = parity_projectors(basis)
    keys, columns = [], []
    for pauli in classes:
        p_matrix = PauliString(pauli).matrix()
        for q in (0, 1):
            a = p_matrix @ projectors[q]
            columns.append(vectorize(a) / np.sqrt(np.trace(a.conj().T @ a).real))
            keys.append((pauli, q))
    return keys, np.column_stack(columns)


def decompose_superop(branches: Mapping[int, Superoperator], basis: str = "Z") -> ParityErrorTable:
    """Expand each reported branch in the {Pauli . parity projector} maps.

    A branch map sum_k c_k A_k rho A_k^dagger with A_k = P_k Pi_q has Choi
    state (1/2) sum_k c_k |w_k><w_k|; off-diagonal weight is the residual.
    Inputs are weighted uniformly over the two parities.
    """
    if set(branches) != {0, 1}:
        raise ValueError(f"expected branches for reported outcomes 0 and 1, got {sorted(branches)}")
    for superop in branches.values():
        if superop.num_qubits != len(DATA):
            raise ValueError(f"parity tables act on {len(DATA)} data qubits")
    keys, w = _class_basis(basis)
    probs: Dict[Tuple[str, bool], float] = {}
    residual = 0.0
    for reported, superop in branches.items():
        m = w.conj().T @ superop.choi.matrix @ w
        diagonal = np.diag(m).real
        off = m - np.diag(np.diag(m))
        residual += 2 * float(np.sum(np.linalg.svd(off, compute_uv=False)))
        for (pauli, q), value in zip(keys, diagonal):
            key = (pauli, bool(q != reported))
            probs[key] = probs.get(key, 0.0) + value  # (1/2) * 2 <w|C|w>
    if residual > Config.residual_tol:
        raise DecompositionError(f"channel is not a Pauli-projector mixture (residual {residual:.3e})")
    low = min(probs.values())
    if low < -Config.table_tol:
        raise NumericalInvariantError(f"negative table probability {low:.3e}")
    entries = tuple(TableEntry(pauli, lie, p) for (pauli, lie), p in probs.items() if p > TABLE_FLOOR)
    logger.debug("decomposed %s-basis table: %d entries, residual %.2e", basis, len(entries), residual)
    return ParityErrorTable(entries, basis, residual)
