"""Toric-code memory driven by parity error tables, decoded by minimum-weight matching.

Data qubits live on edges: h(r, c) joins vertex (r, c) to (r, c+1) and
v(r, c) joins (r, c) to (r+1, c); index = orientation * L^2 + r * L + c.
Vertex checks are Z-type and see X errors; plaquette (r, c) has edges
h(r, c), h(r+1, c), v(r, c), v(r, c+1), is X-type and sees Z errors.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pymatching

from .purify import NoiseModel
from .stabtool import ParityErrorTable, build_table
from .trials import TrialRunner
from .utils import Config, NumericalInvariantError

logger = logging.getLogger(__name__)

BACKENDS = ("pymatching", "networkx")
CHECK_KINDS = ("vertex", "plaquette")


class ToricLattice:
    """L x L periodic lattice with 2L^2 data qubits"""

    def __init__(self, L: int):
        if L < 3:
            raise ValueError(f"lattice size must be at least 3, got {L}")
        self.L = L
        self.num_qubits = 2 * L * L
        self.num_checks = L * L
        rows, cols = np.divmod(np.arange(L * L), L)
        h, v = self.h, self.v
        self.vertex_support = np.stack([h(rows, cols), h(rows, cols - 1), v(rows, cols), v(rows - 1, cols)], axis=1)
        self.plaquette_support = np.stack([h(rows, cols), h(rows + 1, cols), v(rows, cols), v(rows, cols + 1)], axis=1)
        self.x_cuts = [h(np.arange(L), 0), v(0, np.arange(L))]  # odd overlap = nontrivial X chain
        self.z_cuts = [v(np.arange(L), 0), h(0, np.arange(L))]
        # encoded qubit k pairs x_cuts[k] with the z cut it anticommutes with
        self.logical_pairs = ((0, 1), (1, 0))

    def h(self, r, c):
        return (np.asarray(r) % self.L) * self.L + np.asarray(c) % self.L

    def v(self, r, c):
        return self.L * self.L + self.h(r, c)

    def support(self, kind: str) -> np.ndarray:
        if kind not in CHECK_KINDS:
            raise ValueError(f"check kind must be one of {CHECK_KINDS}, got {kind!r}")
        return self.vertex_support if kind == "vertex" else self.plaquette_support

    def check_matrix(self, kind: str) -> np.ndarray:
        matrix = np.zeros((self.num_checks, self.num_qubits), dtype=np.uint8)
        np.put_along_axis(matrix, self.support(kind), 1, axis=1)
        return matrix

    def syndrome(self, kind: str, frame: np.ndarray) -> np.ndarray:
        return (frame[self.support(kind)].sum(axis=1) % 2).astype(np.uint8)

    def distance(self, a: int, b: int) -> int:
        """Manhattan distance between two checks on the torus"""
        (ra, ca), (rb, cb) = divmod(a, self.L), divmod(b, self.L)
        dr, dc = abs(ra - rb), abs(ca - cb)
        return min(dr, self.L - dr) + min(dc, self.L - dc)

    def _steps(self, start: int, stop: int):
        delta = (stop - start) % self.L
        return (1, delta) if delta <= self.L // 2 else (-1, self.L - delta)

    def path(self, kind: str, a: int, b: int) -> List[int]:
        """Edges of a shortest chain joining two checks of ``kind``"""
        (r, c), (r2, c2) = divmod(a, self.L), divmod(b, self.L)
        edges = []
        step, count = self._steps(c, c2)
        for _ in range(count):
            if kind == "vertex":
                edges.append(int(self.h(r, c if step > 0 else c - 1)))
            else:
                edges.append(int(self.v(r, c + 1 if step > 0 else c)))
            c = (c + step) % self.L
        step, count = self._steps(r, r2)
        for _ in range(count):
            if kind == "vertex":
                edges.append(int(self.v(r if step > 0 else r - 1, c)))
            else:
                edges.append(int(self.h(r + 1 if step > 0 else r, c)))
            r = (r + step) % self.L
        return edges

    def logical_flips(self, x_frame: np.ndarray, z_frame: np.ndarray) -> Tuple[int, ...]:
        """Parities of a residual frame across the four logical cuts"""
        return tuple(int(x_frame[cut].sum() % 2) for cut in self.x_cuts) + \
            tuple(int(z_frame[cut].sum() % 2) for cut in self.z_cuts)

    def logical_failure(self, x_frame: np.ndarray, z_frame: np.ndarray, qubit: int = 0) -> bool:
        """True when the residual frame flips encoded qubit ``qubit`` by X, Z or both"""
        x_cut, z_cut = self.logical_pairs[qubit]
        return bool(x_frame[self.x_cuts[x_cut]].sum() % 2 or z_frame[self.z_cuts[z_cut]].sum() % 2)


@dataclass
class PauliFrame:
    x: np.ndarray
    z: np.ndarray

    @classmethod
    def empty(cls, num_qubits: int) -> "PauliFrame":
        return cls(np.zeros(num_qubits, dtype=np.uint8), np.zeros(num_qubits, dtype=np.uint8))

    def compose(self, other: "PauliFrame") -> "PauliFrame":
        return PauliFrame(self.x ^ other.x, self.z ^ other.z)

    def is_empty(self) -> bool:
        return not self.x.any() and not self.z.any()


@dataclass
class SyndromeHistory:
    vertex: np.ndarray  # (t, L^2) reported outcomes
    plaquette: np.ndarray
    final_vertex: np.ndarray  # ideal readout
    final_plaquette: np.ndarray

    @property
    def t(self) -> int:
        return self.vertex.shape[0]

    def rounds(self, kind: str) -> Tuple[np.ndarray, np.ndarray]:
        return (self.vertex, self.final_vertex) if kind == "vertex" else (self.plaquette, self.final_plaquette)

    def detection_events(self, kind: str) -> np.ndarray:
        """(t + 1, L^2) changes between consecutive rounds, final readout last"""
        reported, final = self.rounds(kind)
        stacked = np.vstack([np.zeros_like(final), reported, final])
        return (stacked[1:] ^ stacked[:-1]).astype(np.uint8)


@dataclass
class HistoryTrace:
    """Frames seen by each measurement round and the lies sampled there"""

    vertex_frames: np.ndarray
    plaquette_frames: np.ndarray
    vertex_lies: np.ndarray
    plaquette_lies: np.ndarray


class _TableSampler:
    def __init__(self, table: ParityErrorTable):
        probs, self.x, self.z, self.lie = table.as_arrays()
        self.cdf = np.cumsum(probs)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.minimum(np.searchsorted(self.cdf, rng.random(size), side="right"), len(self.cdf) - 1)


def _check_tables(table_z: ParityErrorTable, table_x: ParityErrorTable):
    if table_z.parity_basis != "Z" or table_x.parity_basis != "X":
        raise ValueError("vertex checks need a Z-basis table and plaquettes an X-basis table")


def simulate_history(lattice: ToricLattice, table_z: ParityErrorTable, table_x: ParityErrorTable,
                     t: Optional[int], rng: np.random.Generator, initial: Optional[PauliFrame] = None,
                     keep_trace: bool = False):
    """Sample t noisy rounds and an ideal final readout.

    Each round measures every vertex check, applies the sampled errors, then
    does the same for the plaquettes. Returns (history, true frame, trace).
    """
    _check_tables(table_z, table_x)
    t = t if t is not None else Config.rounds_per_size * lattice.L
    if t < 1:
        raise ValueError(f"need at least one round, got {t}")
    frame = PauliFrame(initial.x.copy(), initial.z.copy()) if initial is not None \
        else PauliFrame.empty(lattice.num_qubits)
    keep_trace = keep_trace or Config.debug
    n = lattice.num_checks
    reported = {kind: np.zeros((t, n), dtype=np.uint8) for kind in CHECK_KINDS}
    lies = {kind: np.zeros((t, n), dtype=np.uint8) for kind in CHECK_KINDS}
    seen = {kind: np.zeros((t, lattice.num_qubits), dtype=np.uint8) for kind in CHECK_KINDS} if keep_trace else None
    samplers = {"vertex": _TableSampler(table_z), "plaquette": _TableSampler(table_x)}
    for tau in range(t):
        for kind in CHECK_KINDS:
            support = lattice.support(kind)
            watched = frame.x if kind == "vertex" else frame.z
            if keep_trace:
                seen[kind][tau] = watched
            sampler = samplers[kind]
            events = sampler.sample(rng, n)
            lies[kind][tau] = sampler.lie[events]
            reported[kind][tau] = lattice.syndrome(kind, watched) ^ lies[kind][tau]
            np.bitwise_xor.at(frame.x, support.ravel(), sampler.x[events].ravel())
            np.bitwise_xor.at(frame.z, support.ravel(), sampler.z[events].ravel())
    history = SyndromeHistory(reported["vertex"], reported["plaquette"],
                              lattice.syndrome("vertex", frame.x), lattice.syndrome("plaquette", frame.z))
    trace = None
    if keep_trace:
        trace = HistoryTrace(seen["vertex"], seen["plaquette"], lies["vertex"], lies["plaquette"])
        if Config.debug:
            verify_syndrome_consistency(lattice, history, trace)
    return history, frame, trace


def verify_syndrome_consistency(lattice: ToricLattice, history: SyndromeHistory, trace: HistoryTrace):
    """Outcome changes equal new-error parity XOR the two lies involved"""
    for kind, frames, lies in (("vertex", trace.vertex_frames, trace.vertex_lies),
                               ("plaquette", trace.plaquette_frames, trace.plaquette_lies)):
        reported, _ = history.rounds(kind)
        for tau in range(1, history.t):
            new_errors = frames[tau] ^ frames[tau - 1]
            expected = lattice.syndrome(kind, new_errors) ^ lies[tau] ^ lies[tau - 1]
            if not np.array_equal(reported[tau] ^ reported[tau - 1], expected):
                raise NumericalInvariantError(f"{kind} syndrome inconsistent at round {tau}")


@dataclass
class MatchingGraph:
    """Complete graph on space-time defects weighted by space-time distance"""

    nodes: List[Tuple[int, int]]  # (check, round)
    weights: Dict[Tuple[int, int], int] = field(default_factory=dict)

    @classmethod
    def from_events(cls, lattice: ToricLattice, events: np.ndarray) -> "MatchingGraph":
        rounds, checks = np.nonzero(events)
        nodes = [(int(s), int(tau)) for tau, s in zip(rounds, checks)]
        if len(nodes) % 2:
            raise NumericalInvariantError(f"odd number of defects ({len(nodes)})")
        weights = {}
        for i, (sa, ta) in enumerate(nodes):
            for j in range(i + 1, len(nodes)):
                sb, tb = nodes[j]
                weights[i, j] = lattice.distance(sa, sb) + abs(ta - tb)
        return cls(nodes, weights)

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(len(self.nodes)))
        for (i, j), w in self.weights.items():
            graph.add_edge(i, j, weight=w)
        return graph

    def min_weight_matching(self) -> List[Tuple[int, int]]:
        if not self.nodes:
            return []
        matching = nx.min_weight_matching(self.to_networkx())
        return sorted(tuple(sorted(pair)) for pair in matching)

    def matching_weight(self, pairs: Sequence[Tuple[int, int]]) -> int:
        return sum(self.weights[tuple(sorted(pair))] for pair in pairs)


@dataclass
class Correction:
    frame: PauliFrame
    weight: float


class ToricDecoder:
    """Independent X and Z matching on the space-time defect graphs"""

    def __init__(self, lattice: ToricLattice, t: int, backend: Optional[str] = None):
        self.lattice = lattice
        self.t = t
        self.backend = backend if backend is not None else Config.decoder_backend
        if self.backend not in BACKENDS:
            raise ValueError(f"decoder backend must be one of {BACKENDS}, got {self.backend!r}")
        self._matchers = {}
        if self.backend == "pymatching":
            for kind in CHECK_KINDS:
                self._matchers[kind] = pymatching.Matching.from_check_matrix(
                    lattice.check_matrix(kind), weights=np.ones(lattice.num_qubits),
                    repetitions=t + 1, timelike_weights=1.0)

    def _decode_kind(self, kind: str, events: np.ndarray) -> Tuple[np.ndarray, float]:
        if not events.any():
            return np.zeros(self.lattice.num_qubits, dtype=np.uint8), 0.0
        if self.backend == "pymatching":
            correction, weight = self._matchers[kind].decode(events.T, return_weight=True)
            return np.asarray(correction, dtype=np.uint8), float(weight)
        graph = MatchingGraph.from_events(self.lattice, events)
        correction = np.zeros(self.lattice.num_qubits, dtype=np.uint8)
        pairs = graph.min_weight_matching()
        for i, j in pairs:
            for edge in self.lattice.path(kind, graph.nodes[i][0], graph.nodes[j][0]):
                correction[edge] ^= 1
        return correction, float(graph.matching_weight(pairs))

    def decode(self, history: SyndromeHistory) -> Correction:
        if history.t != self.t:
            raise ValueError(f"decoder built for {self.t} rounds, history has {history.t}")
        x, wx = self._decode_kind("vertex", history.detection_events("vertex"))
        z, wz = self._decode_kind("plaquette", history.detection_events("plaquette"))
        return Correction(PauliFrame(x, z), wx + wz)


def decode(history: SyndromeHistory, lattice: ToricLattice, backend: Optional[str] = None) -> Correction:
    return ToricDecoder(lattice, history.t, backend).decode(history)


def logical_error_trial(lattice: ToricLattice, tables: Tuple[ParityErrorTable, ParityErrorTable],
                        t: Optional[int], rng: np.random.Generator,
                        decoder: Optional[ToricDecoder] = None) -> bool:
    """One memory experiment; True when the corrected frame flips the tracked logical qubit"""
    table_z, table_x = tables
    t = t if t is not None else Config.rounds_per_size * lattice.L
    decoder = decoder if decoder is not None else ToricDecoder(lattice, t)
    history, frame, _ = simulate_history(lattice, table_z, table_x, t, rng)
    residual = frame.compose(decoder.decode(history).frame)
    if lattice.syndrome("vertex", residual.x).any() or lattice.syndrome("plaquette", residual.z).any():
        raise NumericalInvariantError("correction left a nontrivial syndrome")
    return lattice.logical_failure(residual.x, residual.z)


def _trial_block(rng: np.random.Generator, size: int, L: int, t: int, table_z: ParityErrorTable,
                 table_x: ParityErrorTable, backend: str) -> int:
    lattice = ToricLattice(L)
    decoder = ToricDecoder(lattice, t, backend)
    return sum(logical_error_trial(lattice, (table_z, table_x), t, rng, decoder) for _ in range(size))


@dataclass(frozen=True)
class ThresholdPoint:
    epsilon: float
    L: int
    trials: int
    failures: int

    @property
    def rate(self) -> float:
        return self.failures / self.trials

    @property
    def stderr(self) -> float:
        return float(np.sqrt(self.rate * (1 - self.rate) / self.trials))

    @property
    def smoothed_log_rate(self) -> float:
        return float(np.log((self.failures + 0.5) / (self.trials + 1)))


@dataclass(frozen=True)
class Crossing:
    size_small: int
    size_large: int
    epsilon: Optional[float]
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None

    @property
    def bracketed(self) -> bool:
        return self.epsilon is not None


@dataclass
class ThresholdResult:
    method: str
    level: int
    points: List[ThresholdPoint]
    crossings: List[Crossing]

    @property
    def estimate(self) -> Optional[float]:
        found = [c.epsilon for c in self.crossings if c.bracketed]
        return float(np.median(found)) if found else None


def _crossing(eps: np.ndarray, small: np.ndarray, large: np.ndarray) -> Optional[float]:
    """First epsilon where the larger lattice stops beating the smaller one"""
    diff = large - small
    for i in range(len(eps) - 1):
        if diff[i] < 0 <= diff[i + 1]:
            return float(eps[i] + (eps[i + 1] - eps[i]) * diff[i] / (diff[i] - diff[i + 1]))
    return None


def crossing_points(points: Sequence[ThresholdPoint], rng: Optional[np.random.Generator] = None,
                    bootstrap: Optional[int] = None) -> List[Crossing]:
    """Intersections of log-rate curves of consecutive sizes, with parametric bootstrap"""
    bootstrap = bootstrap if bootstrap is not None else Config.bootstrap_samples
    rng = rng if rng is not None else np.random.default_rng(0)
    sizes = sorted({p.L for p in points})
    eps = np.array(sorted({p.epsilon for p in points}))
    table = {(p.epsilon, p.L): p for p in points}
    crossings = []
    for small, large in zip(sizes, sizes[1:]):
        pairs = [(table.get((e, small)), table.get((e, large))) for e in eps]
        if any(a is None or b is None for a, b in pairs):
            raise ValueError(f"sizes {small} and {large} are not on a common grid")
        curve = lambda pts: np.array([p.smoothed_log_rate for p in pts])
        estimate = _crossing(eps, curve([a for a, _ in pairs]), curve([b for _, b in pairs]))
        if estimate is None:
            logger.warning("no crossing between L=%d and L=%d on eps %s", small, large, eps.tolist())
            crossings.append(Crossing(small, large, None))
            continue
        resampled = []
        for _ in range(bootstrap):
            logs = []
            for pts in ([a for a, _ in pairs], [b for _, b in pairs]):
                fails = rng.binomial([p.trials for p in pts], [p.rate for p in pts])
                trials = np.array([p.trials for p in pts])
                logs.append(np.log((fails + 0.5) / (trials + 1)))
            value = _crossing(eps, *logs)
            if value is not None:
                resampled.append(value)
        low, high = (np.percentile(resampled, [2.5, 97.5]) if resampled else (estimate, estimate))
        crossings.append(Crossing(small, large, estimate, float(low), float(high)))
    return crossings


def threshold_scan(method: str, level: int, noise: NoiseModel, eps_grid: Sequence[float], L_list: Sequence[int],
                   trials: int, seed: Optional[int] = None, workers: Optional[int] = None,
                   backend: Optional[str] = None, runner: Optional[TrialRunner] = None,
                   progress=None) -> ThresholdResult:
    """Logical failure rates over (epsilon, L) and the crossing of consecutive sizes"""
    sizes = sorted(set(int(L) for L in L_list))
    if len(sizes) < 2:
        raise ValueError(f"a threshold scan needs at least two lattice sizes, got {list(L_list)}")
    if not eps_grid:
        raise ValueError("epsilon grid is empty")
    backend = backend if backend is not None else Config.decoder_backend
    runner = runner if runner is not None else TrialRunner(seed, workers)
    points = []
    for i, epsilon in enumerate(eps_grid):
        base = noise.with_epsilon(epsilon)
        table_z = build_table(method, level, base, "Z")
        table_x = build_table(method, level, base, "X")
        for L in sizes:
            t = Config.rounds_per_size * L
            failures = sum(runner.map_blocks(_trial_block, trials, L, t, table_z, table_x, backend,
                                             stream=(i, L)))
            point = ThresholdPoint(float(epsilon), L, trials, int(failures))
            points.append(point)
            if progress is not None:
                progress(point)
            logger.info("eps=%.4f L=%d: %d/%d failures", epsilon, L, failures, trials)
    crossings = crossing_points(points, runner.generator(len(eps_grid), 0))
    return ThresholdResult(method, level, points, crossings)
