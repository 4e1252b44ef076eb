"""Exact small-register quantum states, gates, Pauli noise and process extraction.

Qubit indexing is little-endian: qubit 0 is the least significant bit of a
basis index. A k-qubit operator acting on ``targets`` sees ``targets[0]`` as
its own least significant bit.
"""
import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .memory_manager import memory_monitor
from .utils import Config, NumericalInvariantError, QubitBudgetError, check_probability

logger = logging.getLogger(__name__)

PAULIS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_SQRT_HALF = 1 / np.sqrt(2)


def _cnot_matrix():
    m = np.zeros((4, 4), dtype=complex)
    for old in range(4):
        c, t = old & 1, old >> 1
        m[c | ((t ^ c) << 1), old] = 1
    return m


GATE_MATRICES = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT_HALF,
    "S": np.diag([1, 1j]).astype(complex),
    "S_dagger": np.diag([1, -1j]).astype(complex),
    "X": PAULIS["X"],
    "Y": PAULIS["Y"],
    "Z": PAULIS["Z"],
    "CNOT": _cnot_matrix(),  # targets = (control, target)
    "CPHASE": np.diag([1, 1, 1, -1]).astype(complex),
}

# Measurement eigenvectors, outcome 0 first
BASIS_VECTORS = {
    "Z": (np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)),
    "X": (np.array([1, 1], dtype=complex) * _SQRT_HALF, np.array([1, -1], dtype=complex) * _SQRT_HALF),
    "Y": (np.array([1, 1j], dtype=complex) * _SQRT_HALF, np.array([1, -1j], dtype=complex) * _SQRT_HALF),
}

# Bell states are (I x P) Phi+ with P on qubit 1; the label index is 2x + z of P
BELL_LABELS = ("phi+", "phi-", "psi+", "psi-")
BELL_PAULIS = ("I", "Z", "X", "Y")


def bell_index(which: Union[str, int]) -> int:
    if isinstance(which, (int, np.integer)):
        if not 0 <= which < 4:
            raise ValueError(f"Bell index must be 0..3, got {which}")
        return int(which)
    key = str(which).strip().lower().replace("φ", "phi").replace("ψ", "psi").replace("−", "-")
    if key not in BELL_LABELS:
        raise ValueError(f"Unknown Bell state: {which!r}")
    return BELL_LABELS.index(key)


def _freeze(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Dense mixed state; ``norm`` is the branch probability of unnormalized states"""

    matrix: np.ndarray
    norm: Optional[float] = None
    num_qubits: int = field(init=False)

    def __post_init__(self):
        m = self.matrix
        if not (isinstance(m, np.ndarray) and m.dtype == complex and not m.flags.writeable):
            m = _freeze(np.array(m, dtype=complex))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"Density matrix must be square, got shape {m.shape}")
        dim = m.shape[0]
        n = dim.bit_length() - 1
        if dim < 1 or dim != 2 ** n:
            raise ValueError(f"Dimension {dim} is not a power of two")
        memory_monitor.check_register(n)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "num_qubits", n)
        trace = float(np.trace(m).real)
        object.__setattr__(self, "norm", trace if self.norm is None else float(self.norm))
        if Config.debug:
            self.validate()

    @property
    def dim(self) -> int:
        return 2 ** self.num_qubits

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def validate(self):
        m = self.matrix
        herm = float(np.max(np.abs(m - m.conj().T)))
        if herm > Config.atol:
            raise NumericalInvariantError(f"state not Hermitian (deviation {herm:.3e})")
        if abs(self.trace - self.norm) > Config.atol:
            raise NumericalInvariantError(f"trace {self.trace} differs from norm {self.norm}")
        if not -Config.atol <= self.norm <= 1 + Config.atol:
            raise NumericalInvariantError(f"norm {self.norm} outside [0, 1]")
        lowest = float(np.linalg.eigvalsh(m).min())
        if lowest < -Config.psd_tol:
            raise NumericalInvariantError(f"state not PSD (min eigenvalue {lowest:.3e})")
        return self

    def normalized(self) -> "DensityMatrix":
        if self.norm <= 0:
            raise NumericalInvariantError("cannot normalize an empty branch")
        return DensityMatrix(_freeze(self.matrix / self.norm))

    def scaled(self, factor: float) -> "DensityMatrix":
        return DensityMatrix(_freeze(self.matrix * factor))

    def __add__(self, other: "DensityMatrix") -> "DensityMatrix":
        if other.num_qubits != self.num_qubits:
            raise ValueError("cannot add states of different sizes")
        return DensityMatrix(_freeze(self.matrix + other.matrix))

    def tensor(self, other: "DensityMatrix") -> "DensityMatrix":
        """Append ``other`` on the next-higher qubit indices"""
        memory_monitor.check_register(self.num_qubits + other.num_qubits)
        return DensityMatrix(_freeze(np.kron(other.matrix, self.matrix)))

    def allclose(self, other: "DensityMatrix", atol=1e-10) -> bool:
        return self.num_qubits == other.num_qubits and np.allclose(self.matrix, other.matrix, atol=atol)


@dataclass(frozen=True)
class PauliString:
    letters: str

    def __post_init__(self):
        letters = "".join(self.letters).upper()
        if not letters or any(c not in PAULIS for c in letters):
            raise ValueError(f"Invalid Pauli string: {self.letters!r}")
        object.__setattr__(self, "letters", letters)

    @property
    def num_qubits(self) -> int:
        return len(self.letters)

    @property
    def weight(self) -> int:
        return sum(c != "I" for c in self.letters)

    def matrix(self) -> np.ndarray:
        out = np.eye(1, dtype=complex)
        for letter in self.letters:
            out = np.kron(PAULIS[letter], out)
        return out

    def x_bits(self) -> np.ndarray:
        return np.array([c in "XY" for c in self.letters], dtype=np.uint8)

    def z_bits(self) -> np.ndarray:
        return np.array([c in "ZY" for c in self.letters], dtype=np.uint8)

    def __str__(self):
        return self.letters


@dataclass(frozen=True, eq=False)
class GateOp:
    kind: str
    targets: Tuple[int, ...]
    unitary: Optional[np.ndarray] = None

    def __post_init__(self):
        targets = (self.targets,) if isinstance(self.targets, (int, np.integer)) else tuple(self.targets)
        object.__setattr__(self, "targets", tuple(int(t) for t in targets))
        if self.kind == "U":
            if self.unitary is None:
                raise ValueError("arbitrary gate needs a unitary")
            u = np.array(self.unitary, dtype=complex)
        elif self.kind in GATE_MATRICES:
            u = GATE_MATRICES[self.kind]
        else:
            raise ValueError(f"Unknown gate kind: {self.kind}")
        if u.shape != (2 ** len(self.targets),) * 2:
            raise ValueError(f"{self.kind} acts on {u.shape[0].bit_length() - 1} qubits, got targets {self.targets}")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError(f"Gate targets must be distinct: {self.targets}")
        if np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) > Config.atol:
            raise ValueError(f"{self.kind} matrix is not unitary")
        object.__setattr__(self, "unitary", u)

    @property
    def matrix(self) -> np.ndarray:
        return self.unitary


def _check_qubits(state: DensityMatrix, qubits: Sequence[int]):
    for q in qubits:
        if not 0 <= q < state.num_qubits:
            raise ValueError(f"qubit {q} out of range for {state.num_qubits}-qubit state")
    if len(set(qubits)) != len(qubits):
        raise ValueError(f"qubit indices must be distinct: {tuple(qubits)}")


def _apply_operator(matrix: np.ndarray, op: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """op . rho . op^dagger with op on ``targets``"""
    k = len(targets)
    t = matrix.reshape((2,) * (2 * n))
    op_t = op.reshape((2,) * (2 * k))
    ket_axes = [n - 1 - targets[k - 1 - i] for i in range(k)]
    bra_axes = [2 * n - 1 - targets[k - 1 - i] for i in range(k)]
    inputs = list(range(k, 2 * k))
    t = np.tensordot(op_t, t, axes=(inputs, ket_axes))
    t = np.moveaxis(t, list(range(k)), ket_axes)
    t = np.tensordot(op_t.conj(), t, axes=(inputs, bra_axes))
    t = np.moveaxis(t, list(range(k)), bra_axes)
    return t.reshape(2 ** n, 2 ** n)


def apply_unitary(state: DensityMatrix, unitary: np.ndarray, targets: Sequence[int]) -> DensityMatrix:
    targets = list(targets)
    _check_qubits(state, targets)
    return DensityMatrix(_freeze(_apply_operator(state.matrix, unitary, targets, state.num_qubits)))


def apply_gate(state: DensityMatrix, gate: GateOp) -> DensityMatrix:
    return apply_unitary(state, gate.unitary, gate.targets)


def apply_kraus(state: DensityMatrix, operators: Sequence[np.ndarray], targets: Sequence[int]) -> DensityMatrix:
    """Sum of K rho K^dagger; operators carry their own weights"""
    targets = list(targets)
    _check_qubits(state, targets)
    n = state.num_qubits
    out = np.zeros_like(state.matrix)
    for k_op in operators:
        out += _apply_operator(state.matrix, k_op, targets, n)
    return DensityMatrix(_freeze(out))


def _pauli_conjugate_tensor(t: np.ndarray, letter: str, qubit: int, n: int) -> np.ndarray:
    if letter == "I":
        return t
    ket, bra = n - 1 - qubit, 2 * n - 1 - qubit
    if letter in "XY":
        t = np.flip(np.flip(t, axis=ket), axis=bra)
    if letter in "ZY":
        shape_ket = [1] * (2 * n)
        shape_ket[ket] = 2
        shape_bra = [1] * (2 * n)
        shape_bra[bra] = 2
        signs = np.array([1.0, -1.0])
        t = t * signs.reshape(shape_ket) * signs.reshape(shape_bra)
    return t


def apply_pauli_channel(state: DensityMatrix, qubits: Sequence[int], weights: Mapping[str, float]) -> DensityMatrix:
    """rho -> sum_P w_P P rho P; letter i of each key acts on qubits[i]"""
    qubits = list(qubits)
    _check_qubits(state, qubits)
    n = state.num_qubits
    base = state.matrix.reshape((2,) * (2 * n))
    out = np.zeros_like(base)
    for letters, weight in weights.items():
        if len(letters) != len(qubits):
            raise ValueError(f"Pauli {letters!r} does not match qubits {qubits}")
        if weight == 0:
            continue
        term = base
        for letter, q in zip(letters, qubits):
            term = _pauli_conjugate_tensor(term, letter, q, n)
        out = out + weight * term
    return DensityMatrix(_freeze(out.reshape(2 ** n, 2 ** n)))


def conjugate_pauli(state: DensityMatrix, pauli: Union[str, PauliString], qubits: Sequence[int]) -> DensityMatrix:
    return apply_pauli_channel(state, qubits, {str(pauli): 1.0})


def apply_single_qubit_noise(state: DensityMatrix, qubit: int, p1: float) -> DensityMatrix:
    p1 = check_probability("p1", p1)
    if p1 == 0:
        _check_qubits(state, [qubit])
        return state
    return apply_pauli_channel(state, [qubit], {"I": 1 - p1, "X": p1 / 3, "Y": p1 / 3, "Z": p1 / 3})


_TWO_QUBIT_PAULIS = ["".join(pair) for pair in product("IXYZ", repeat=2)]


def apply_two_qubit_noise(state: DensityMatrix, qubits: Sequence[int], p2: float) -> DensityMatrix:
    p2 = check_probability("p2", p2)
    qubits = list(qubits)
    if len(qubits) != 2:
        raise ValueError(f"two-qubit noise needs two qubits, got {qubits}")
    if p2 == 0:
        _check_qubits(state, qubits)
        return state
    weights = {letters: p2 / 15 for letters in _TWO_QUBIT_PAULIS}
    weights["II"] = 1 - p2
    return apply_pauli_channel(state, qubits, weights)


def noisy_gate(state: DensityMatrix, kind: str, targets: Sequence[int], p1: float = 0.0, p2: float = 0.0) -> DensityMatrix:
    """Perfect gate followed by its depolarizing channel"""
    gate = GateOp(kind, tuple(targets))
    state = apply_gate(state, gate)
    if len(gate.targets) == 1:
        return apply_single_qubit_noise(state, gate.targets[0], p1)
    return apply_two_qubit_noise(state, gate.targets, p2)


def _project_out(matrix: np.ndarray, n: int, qubit: int, vec: np.ndarray) -> np.ndarray:
    """<v|_q rho |v>_q, leaving an (n-1)-qubit matrix"""
    t = matrix.reshape((2,) * (2 * n))
    t = np.tensordot(vec.conj(), t, axes=([0], [n - 1 - qubit]))
    t = np.tensordot(t, vec, axes=([2 * n - 2 - qubit], [0]))
    return t.reshape(2 ** (n - 1), 2 ** (n - 1))


def measure_branch(state: DensityMatrix, qubit: int, basis: str, outcome: int, pm: float = 0.0) -> DensityMatrix:
    """Unnormalized post-measurement state for a reported outcome; the qubit is removed.

    With probability pm the device reports ``outcome`` while projecting onto the
    opposite eigenstate.
    """
    _check_qubits(state, [qubit])
    pm = check_probability("pm", pm, upper=0.5)
    if basis not in BASIS_VECTORS:
        raise ValueError(f"Unknown measurement basis: {basis}")
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome}")
    n = state.num_qubits
    right = BASIS_VECTORS[basis][outcome]
    wrong = BASIS_VECTORS[basis][1 - outcome]
    out = (1 - pm) * _project_out(state.matrix, n, qubit, right)
    if pm:
        out = out + pm * _project_out(state.matrix, n, qubit, wrong)
    return DensityMatrix(_freeze(out))


def measure_qubit(state: DensityMatrix, qubit: int, basis: str, pm: float, rng: np.random.Generator):
    """Sample a reported outcome; returns (outcome, renormalized remaining state)"""
    branches = [measure_branch(state, qubit, basis, m, pm) for m in (0, 1)]
    weights = np.array([b.norm for b in branches])
    if weights.min() < -Config.psd_tol:
        raise NumericalInvariantError(f"negative branch probability {weights.min():.3e}")
    weights = np.clip(weights, 0, None)
    total = weights.sum()
    if total <= 0:
        raise NumericalInvariantError("measurement of an empty state")
    outcome = int(rng.random() * total >= weights[0])
    return outcome, branches[outcome].normalized()


def partial_trace(state: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    keep = sorted(set(keep))
    if not keep:
        raise ValueError("keep set must be nonempty")
    _check_qubits(state, keep)
    n = state.num_qubits
    traced = [q for q in range(n) if q not in keep]
    if not traced:
        return state
    t = state.matrix.reshape((2,) * (2 * n))
    current = n
    for q in sorted(traced, reverse=True):
        t = np.trace(t, axis1=current - 1 - q, axis2=2 * current - 1 - q)
        current -= 1
    return DensityMatrix(_freeze(np.ascontiguousarray(t).reshape(2 ** current, 2 ** current)))


def pure_state(vector: np.ndarray) -> DensityMatrix:
    v = np.asarray(vector, dtype=complex)
    v = v / np.linalg.norm(v)
    return DensityMatrix(_freeze(np.outer(v, v.conj())))


def zero_state(num_qubits: int = 1) -> DensityMatrix:
    v = np.zeros(2 ** num_qubits, dtype=complex)
    v[0] = 1
    return pure_state(v)


def bell_vector(which: Union[str, int]) -> np.ndarray:
    phi = np.array([1, 0, 0, 1], dtype=complex) * _SQRT_HALF
    op = np.kron(PAULIS[BELL_PAULIS[bell_index(which)]], PAULIS["I"])
    return op @ phi


BELL_BASIS = np.column_stack([bell_vector(k) for k in range(4)])


def make_bell(which: Union[str, int]) -> DensityMatrix:
    return pure_state(bell_vector(which))


def bell_diagonal_state(weights: Sequence[float]) -> DensityMatrix:
    """Mixture of the four Bell states in (phi+, phi-, psi+, psi-) order"""
    w = np.asarray(weights, dtype=float)
    if w.shape != (4,) or w.min() < -Config.atol:
        raise ValueError(f"Bell weights must be four nonnegative numbers, got {weights}")
    return DensityMatrix(_freeze((BELL_BASIS * w) @ BELL_BASIS.conj().T))


def _require_pair(state: DensityMatrix):
    if state.num_qubits != 2:
        raise ValueError(f"expected a two-qubit state, got {state.num_qubits} qubits")


def bell_weights(state: DensityMatrix) -> np.ndarray:
    _require_pair(state)
    return np.einsum("ik,ij,jk->k", BELL_BASIS.conj(), state.matrix, BELL_BASIS).real


def off_bell_diagonal(state: DensityMatrix) -> float:
    """Largest off-diagonal magnitude in the Bell basis"""
    _require_pair(state)
    m = BELL_BASIS.conj().T @ state.matrix @ BELL_BASIS
    return float(np.max(np.abs(m - np.diag(np.diag(m)))))


def bell_fidelity(state: DensityMatrix, target: Union[str, int] = "phi+") -> float:
    """Overlap <target|rho|target>; werner(eps) gives 1 - eps"""
    _require_pair(state)
    if abs(state.trace - 1) > 1e-9:
        raise ValueError(f"bell_fidelity needs a normalized state, trace is {state.trace}")
    return float(bell_weights(state)[bell_index(target)])


def root_fidelity(state: DensityMatrix, target: Union[str, int] = "phi+") -> float:
    """Square-root (Uhlmann) fidelity to a pure Bell target"""
    return float(np.sqrt(max(bell_fidelity(state, target), 0.0)))


def vectorize(operator: np.ndarray) -> np.ndarray:
    """Column-stacked vector matching the Choi layout (data low, reference high)"""
    return operator.T.reshape(-1)


@dataclass(frozen=True, eq=False)
class Superoperator:
    """Choi state over data (low) and reference (high) qubits"""

    num_qubits: int
    choi: DensityMatrix

    def __post_init__(self):
        if self.choi.num_qubits != 2 * self.num_qubits:
            raise ValueError(f"Choi state of {self.choi.num_qubits} qubits does not match {self.num_qubits} data qubits")
        if Config.debug:
            self.validate()

    @property
    def dim(self) -> int:
        return 2 ** self.num_qubits

    @property
    def probability(self) -> float:
        """Branch probability on a maximally mixed input"""
        return self.choi.norm

    def choi_tensor(self) -> np.ndarray:
        d = self.dim
        return self.choi.matrix.reshape(d, d, d, d)

    def validate(self):
        d = self.dim
        self.choi.validate()
        reduced = np.einsum("ijkj->ik", self.choi_tensor())
        expected = np.eye(d) * self.probability / d
        deviation = float(np.max(np.abs(reduced - expected)))
        if deviation > Config.process_tol:
            raise NumericalInvariantError(f"Choi input marginal deviates from identity by {deviation:.3e}")
        return self

    def kraus_terms(self, cutoff: float = 1e-14):
        """[(K, p)] with sum_i p_i K_i rho K_i^dagger the map and Tr K^dagger K = d"""
        d = self.dim
        values, vectors = np.linalg.eigh(self.choi.matrix)
        terms = []
        for value, vector in sorted(zip(values, vectors.T), key=lambda pair: -pair[0]):
            if value <= cutoff:
                continue
            terms.append((np.sqrt(d) * vector.reshape(d, d).T, float(value)))
        return terms

    def kraus_completeness(self) -> np.ndarray:
        return sum(p * k.conj().T @ k for k, p in self.kraus_terms())

    def apply(self, state: DensityMatrix, targets: Optional[Sequence[int]] = None) -> DensityMatrix:
        targets = list(range(self.num_qubits)) if targets is None else list(targets)
        if len(targets) != self.num_qubits:
            raise ValueError(f"channel acts on {self.num_qubits} qubits, got targets {targets}")
        return apply_kraus(state, [np.sqrt(p) * k for k, p in self.kraus_terms()], targets)

    def apply_via_choi(self, state: DensityMatrix) -> DensityMatrix:
        if state.num_qubits != self.num_qubits:
            raise ValueError("state size does not match channel")
        out = self.dim * np.einsum("ijkl,ik->jl", self.choi_tensor(), state.matrix)
        return DensityMatrix(_freeze(out))

    def process_fidelity(self, unitary: np.ndarray) -> float:
        v = vectorize(np.asarray(unitary, dtype=complex)) / np.sqrt(self.dim)
        return float((v.conj() @ self.choi.matrix @ v).real)


Circuit = Callable[[DensityMatrix], Union[DensityMatrix, Mapping[int, DensityMatrix]]]


def maximally_entangled(num_qubits: int) -> DensityMatrix:
    d = 2 ** num_qubits
    v = np.zeros(d * d, dtype=complex)
    v[np.arange(d) * (d + 1)] = 1 / np.sqrt(d)
    return DensityMatrix(_freeze(np.outer(v, v)))


def extract_superoperator(circuit: Circuit, num_qubits: int) -> Union[Superoperator, Dict[int, Superoperator]]:
    """Run ``circuit`` on data qubits 0..n-1 of a maximally entangled state.

    The circuit may append ancillas above qubit 2n-1 but must remove them
    again. A circuit returning a mapping of reported outcomes to
    unnormalized states yields one Superoperator per outcome.
    """
    if 2 * num_qubits > Config.max_qubits:
        raise QubitBudgetError(f"Choi state of {num_qubits} data qubits exceeds the qubit budget")
    result = circuit(maximally_entangled(num_qubits))
    if isinstance(result, DensityMatrix):
        return Superoperator(num_qubits, result)
    branches = {}
    for record, branch in result.items():
        branches[record] = Superoperator(num_qubits, branch)
    logger.debug("extracted %d branches on %d qubits", len(branches), num_qubits)
    return branches
