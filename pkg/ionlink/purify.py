"""Level 1/2/3 entanglement purification, exactly and in tuple algebra.

A pair is two qubits: qubit 0 held at site A, qubit 1 at site B. The map F
keeps the first pair and sacrifices the second.
"""
import logging
from dataclasses import dataclass, replace
from itertools import product
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .qcore import (DensityMatrix, bell_diagonal_state, bell_fidelity, bell_weights, measure_branch,
                    measure_qubit, noisy_gate, off_bell_diagonal)
from .trials import TrialRunner
from .utils import Config, NumericalInvariantError, check_probability

logger = logging.getLogger(__name__)

LEVELS = (1, 2, 3)
STAGE_LABELS = ("A", "B", "C")


@dataclass(frozen=True)
class NoiseModel:
    epsilon: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    pm: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 0.5:
            raise ValueError(f"epsilon must be in [0, 0.5), got {self.epsilon}")
        for name in ("p1", "p2", "pm"):
            check_probability(name, getattr(self, name))

    @classmethod
    def ion_trap(cls, epsilon: Optional[float] = None, **overrides) -> "NoiseModel":
        """Device rates p1=1e-6, p2=1e-3, pm=5e-4 unless overridden"""
        values = dict(epsilon=Config.epsilon if epsilon is None else epsilon,
                      p1=Config.p1, p2=Config.p2, pm=Config.pm)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def noiseless(cls, epsilon: float = 0.0) -> "NoiseModel":
        return cls(epsilon=epsilon)

    def with_epsilon(self, epsilon: float) -> "NoiseModel":
        return replace(self, epsilon=epsilon)

    @property
    def gates_perfect(self) -> bool:
        return self.p1 == 0 and self.p2 == 0 and self.pm == 0


@dataclass(frozen=True)
class BellDiagonalTuple:
    """Weights of phi-, psi+ and psi-; the rest is phi+"""

    r1: float
    r2: float
    r3: float

    def __post_init__(self):
        values = (self.r1, self.r2, self.r3)
        if min(values) < -Config.atol or sum(values) > 1 + Config.atol:
            raise ValueError(f"invalid Bell-diagonal tuple {values}")

    @property
    def fidelity(self) -> float:
        return 1.0 - (self.r1 + self.r2 + self.r3)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.r1, self.r2, self.r3)

    def weights(self) -> np.ndarray:
        return np.array([self.fidelity, self.r1, self.r2, self.r3])

    def to_state(self) -> DensityMatrix:
        return bell_diagonal_state(self.weights())

    @classmethod
    def from_state(cls, state: DensityMatrix, tol: float = 1e-8) -> "BellDiagonalTuple":
        off = off_bell_diagonal(state)
        if off > tol:
            raise NumericalInvariantError(f"state is not Bell-diagonal (off-diagonal {off:.3e})")
        w = np.clip(bell_weights(state), 0.0, None) / state.trace
        return cls(float(w[1]), float(w[2]), float(w[3]))


def werner(epsilon: float) -> DensityMatrix:
    if not 0.0 <= epsilon < 0.5:
        raise ValueError(f"epsilon must be in [0, 0.5), got {epsilon}")
    return bell_diagonal_state([1 - epsilon, epsilon / 3, epsilon / 3, epsilon / 3])


def tuple_map_F(a: BellDiagonalTuple, b: BellDiagonalTuple) -> BellDiagonalTuple:
    """Leading-order action of one purification round"""
    return BellDiagonalTuple(a.r1 + b.r1,
                             a.r2 * b.r2 + a.r3 * b.r3,
                             a.r2 * b.r3 + a.r3 * b.r2)


Word = Union[str, Sequence[str]]


def parse_word(word: Word) -> Tuple[str, ...]:
    letters = tuple(word.replace("·", " ").split()) if isinstance(word, str) else tuple(word)
    for letter in letters:
        if letter not in ("g1", "g2"):
            raise ValueError(f"unknown rotation {letter!r} in word {word!r}")
    return letters


def dihedral_words() -> Tuple[Tuple[str, ...], ...]:
    """The six distinct group elements generated by g1 and g2"""
    return ((), ("g1",), ("g2",), ("g1", "g2"), ("g2", "g1"), ("g1", "g2", "g1"))


def rotate_tuple(t: BellDiagonalTuple, word: Word) -> BellDiagonalTuple:
    """Permute channels; the rightmost letter acts first"""
    r = [t.r1, t.r2, t.r3]
    for letter in reversed(parse_word(word)):
        if letter == "g1":
            r[0], r[1] = r[1], r[0]
        else:
            r[1], r[2] = r[2], r[1]
    return BellDiagonalTuple(*r)


def word_permutation(word: Word) -> Tuple[int, int, int]:
    """perm[i] = channel (0-based) whose weight lands in channel i"""
    moved = rotate_tuple(BellDiagonalTuple(0.1, 0.2, 0.3), word).as_tuple()
    return tuple(int(round(v * 10)) - 1 for v in moved)


# rank[j] is the channel (1 = phi-, 2 = psi+, 3 = psi-) given the j-th largest weight
RANKS = {"descending": (1, 2, 3), "ascending": (3, 2, 1), "escape": (2, 3, 1)}

Steering = Union[str, Sequence[int]]


def resolve_rank(target_order: Steering) -> Tuple[int, int, int]:
    rank = RANKS.get(target_order) if isinstance(target_order, str) else tuple(target_order)
    if rank is None or sorted(rank) != [1, 2, 3]:
        raise ValueError(f"target order must be a permutation of (1, 2, 3) or one of {sorted(RANKS)}, "
                         f"got {target_order!r}")
    return rank


def order_word(t: BellDiagonalTuple, target_order: Steering) -> Tuple[str, ...]:
    """Dihedral word that moves the weights of ``t`` into ``target_order``"""
    rank = resolve_rank(target_order)
    by_size = sorted(t.as_tuple(), reverse=True)
    target = [0.0] * 3
    for weight, channel in zip(by_size, rank):
        target[channel - 1] = weight
    for word in dihedral_words():
        if np.allclose(rotate_tuple(t, word).as_tuple(), target, rtol=0, atol=1e-15):
            return word
    raise AssertionError("dihedral words cover every permutation")


def rotate_pair(state: DensityMatrix, word: Word, noise: Optional[NoiseModel] = None) -> DensityMatrix:
    """g1 = H x H, g2 = S_dagger x S, each gate followed by single-qubit noise"""
    p1 = noise.p1 if noise is not None else 0.0
    for letter in reversed(parse_word(word)):
        if letter == "g1":
            state = noisy_gate(state, "H", (0,), p1=p1)
            state = noisy_gate(state, "H", (1,), p1=p1)
        else:
            state = noisy_gate(state, "S_dagger", (0,), p1=p1)
            state = noisy_gate(state, "S", (1,), p1=p1)
    return state


def _check_pair(state: DensityMatrix, name: str):
    if state.num_qubits != 2:
        raise ValueError(f"{name} must be a two-qubit state, got {state.num_qubits} qubits")
    if abs(state.trace - 1) > 1e-9:
        raise ValueError(f"{name} must be normalized, trace is {state.trace}")


def _bilateral_cnot(pair_a: DensityMatrix, pair_b: DensityMatrix, noise: NoiseModel) -> DensityMatrix:
    _check_pair(pair_a, "pair_a")
    _check_pair(pair_b, "pair_b")
    joint = pair_a.tensor(pair_b)  # qubits 0, 2 at A; 1, 3 at B
    joint = noisy_gate(joint, "CNOT", (0, 2), p2=noise.p2)
    return noisy_gate(joint, "CNOT", (1, 3), p2=noise.p2)


def purify_branch(pair_a: DensityMatrix, pair_b: DensityMatrix, noise: NoiseModel) -> DensityMatrix:
    """Unnormalized kept pair for equal reported parities; its trace is p_even"""
    joint = _bilateral_cnot(pair_a, pair_b, noise)
    even = None
    for outcome in (0, 1):
        branch = measure_branch(joint, 3, "Z", outcome, noise.pm)
        branch = measure_branch(branch, 2, "Z", outcome, noise.pm)
        even = branch if even is None else even + branch
    return even


class PurifyOutcome(NamedTuple):
    success: bool
    out: DensityMatrix
    p_even: float


def purify_once_exact(pair_a: DensityMatrix, pair_b: DensityMatrix, noise: NoiseModel,
                      rng: Optional[np.random.Generator] = None) -> PurifyOutcome:
    even = purify_branch(pair_a, pair_b, noise)
    p_even = even.norm
    if p_even <= 0:
        raise NumericalInvariantError("even-parity branch is empty")
    success = True
    if rng is not None:
        # each site reads its sacrificed qubit; the round passes on equal reports
        at_b, rest = measure_qubit(_bilateral_cnot(pair_a, pair_b, noise), 3, "Z", noise.pm, rng)
        at_a, _ = measure_qubit(rest, 2, "Z", noise.pm, rng)
        success = at_a == at_b
    return PurifyOutcome(success, even.normalized(), p_even)


RoundWords = Tuple[Tuple[str, ...], Tuple[str, ...]]


class LevelResult(NamedTuple):
    out: DensityMatrix
    infidelity: float
    success_probs: Tuple[float, ...]
    words: Tuple[RoundWords, ...] = ()


def _round_candidates(pair_a: DensityMatrix, pair_b: DensityMatrix, steering: Steering) -> List[RoundWords]:
    """Words for the kept and the sacrificed input; identical inputs share one word"""
    same = pair_a is pair_b
    if steering == "best":
        words = dihedral_words()
        return [(w, w) for w in words] if same else list(product(words, words))
    word_a = order_word(BellDiagonalTuple.from_state(pair_a), steering)
    word_b = word_a if same else order_word(BellDiagonalTuple.from_state(pair_b), steering)
    return [(word_a, word_b)]


def _steered_purify(pair_a: DensityMatrix, pair_b: DensityMatrix, words: RoundWords,
                    noise: NoiseModel) -> PurifyOutcome:
    a = rotate_pair(pair_a, words[0], noise)
    b = a if pair_a is pair_b else rotate_pair(pair_b, words[1], noise)
    return purify_once_exact(a, b, noise)


def _steered_schedules(level: int, noise: NoiseModel, raw: DensityMatrix, steering: Steering):
    """Every (outcomes, words) path with the inputs of each round rotated first"""
    for words1 in _round_candidates(raw, raw, steering):
        level1 = _steered_purify(raw, raw, words1, noise)
        if level == 1:
            yield (level1,), (words1,)
            continue
        for words2 in _round_candidates(level1.out, level1.out, steering):
            level2 = _steered_purify(level1.out, level1.out, words2, noise)
            if level == 2:
                yield (level1, level2), (words1, words2)
                continue
            for words3 in _round_candidates(level2.out, level1.out, steering):
                level3 = _steered_purify(level2.out, level1.out, words3, noise)
                yield (level1, level2, level3), (words1, words2, words3)


def _run_steered(level: int, noise: NoiseModel, raw: DensityMatrix, steering: Steering) -> LevelResult:
    best, best_fidelity = None, -1.0
    for outcomes, words in _steered_schedules(level, noise, raw, steering):
        fidelity = bell_fidelity(outcomes[-1].out)
        if fidelity > best_fidelity + 1e-15:
            best, best_fidelity = (outcomes, words), fidelity
    outcomes, words = best
    return LevelResult(outcomes[-1].out, 1.0 - best_fidelity, tuple(o.p_even for o in outcomes), words)


def run_level(level: int, noise: NoiseModel, raw: Optional[DensityMatrix] = None,
              steering: Optional[Steering] = None) -> LevelResult:
    """Post-selected output of the Level 1, 2 or 3 protocol.

    ``raw`` replaces the Werner input, so fused repeater pairs can be re-purified.
    Without ``steering`` the fixed g1 / g1 g2 schedule is used. With a rank order
    each round's inputs are first rotated by ``order_word``; ``"best"`` searches
    every per-round choice of dihedral words for the highest output fidelity.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level}")
    raw = raw if raw is not None else werner(noise.epsilon)
    if steering is not None:
        if steering != "best":
            resolve_rank(steering)
        result = _run_steered(level, noise, raw, steering)
        logger.debug("steered level %d: infidelity %.6g, words %s", level, result.infidelity, result.words)
        return result
    level1 = purify_once_exact(raw, raw, noise)
    probs = [level1.p_even]
    out = level1.out
    if level >= 2:
        rotated1 = rotate_pair(level1.out, ("g1",), noise)
        level2 = purify_once_exact(rotated1, rotated1, noise)
        probs.append(level2.p_even)
        out = level2.out
    if level == 3:
        rotated2 = rotate_pair(level2.out, ("g1", "g2"), noise)
        level3 = purify_once_exact(rotated2, rotated1, noise)
        probs.append(level3.p_even)
        out = level3.out
    infidelity = 1.0 - bell_fidelity(out)
    logger.debug("level %d at eps=%.4g: infidelity %.6g, stage success %s", level, noise.epsilon,
                 infidelity, probs)
    return LevelResult(out, infidelity, tuple(probs))


def expected_raw_pairs(level: int, success_probs: Sequence[float]) -> float:
    """Mean raw pairs per output of the absorbing chain with full-input restarts"""
    if len(success_probs) < level:
        raise ValueError(f"level {level} needs {level} stage probabilities")
    e1 = 2.0 / success_probs[0]
    if level == 1:
        return e1
    e2 = 2.0 * e1 / success_probs[1]
    if level == 2:
        return e2
    return (e2 + e1) / success_probs[2]


@dataclass
class ProtocolChain:
    """One walk through the purification Markov chain.

    A failed stage discards both of its inputs and rebuilds them; every raw
    pair takes one T0 and local operations are instantaneous.
    """

    level: int
    success_probs: Tuple[float, ...]
    state: str = "idle"
    raw_pairs_consumed: int = 0
    elapsed: int = 0

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}, got {self.level}")
        if len(self.success_probs) < self.level:
            raise ValueError(f"level {self.level} needs {self.level} stage probabilities")
        if any(not 0 < p <= 1 for p in self.success_probs):
            raise ValueError(f"stage success probabilities must be in (0, 1], got {self.success_probs}")

    @property
    def odd_parity_probs(self) -> Tuple[float, ...]:
        return tuple(1 - p for p in self.success_probs)

    def _generate_raw(self, count: int):
        self.raw_pairs_consumed += count
        self.elapsed += count
        self.state = "raw"

    def _build(self, level: int, rng: np.random.Generator):
        while True:
            if level == 1:
                self._generate_raw(2)
            elif level == 2:
                self._build(1, rng)
                self._build(1, rng)
            else:
                self._build(2, rng)
                self._build(1, rng)
            self.state = f"test {STAGE_LABELS[level - 1]}"
            if rng.random() < self.success_probs[level - 1]:
                self.state = f"level {level}"
                return

    def run(self, rng: np.random.Generator) -> int:
        """Build one output pair; returns the raw pairs it consumed"""
        start = self.raw_pairs_consumed
        self._build(self.level, rng)
        self.state = "done"
        return self.raw_pairs_consumed - start


def _cost_block(rng: np.random.Generator, size: int, level: int, success_probs: Tuple[float, ...]) -> np.ndarray:
    chain = ProtocolChain(level, success_probs)
    return np.array([chain.run(rng) for _ in range(size)], dtype=np.int64)


@dataclass(frozen=True)
class CostEstimate:
    level: int
    trials: int
    mean_raw_pairs: float
    mean_time_t0: float
    stderr: float
    expected_raw_pairs: float
    histogram: np.ndarray  # histogram[k] = trials that consumed k raw pairs
    success_probs: Tuple[float, ...]

    @property
    def deviation_sigma(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean_raw_pairs == self.expected_raw_pairs else float("inf")
        return abs(self.mean_raw_pairs - self.expected_raw_pairs) / self.stderr


def markov_cost(level: int, noise: NoiseModel, trials: Optional[int] = None, seed: Optional[int] = None,
                workers: Optional[int] = None, raw: Optional[DensityMatrix] = None,
                runner: Optional[TrialRunner] = None, stream: Sequence[int] = ()) -> CostEstimate:
    """Monte Carlo raw-pair cost with exact stage success probabilities"""
    trials = trials if trials is not None else Config.purify_trials
    runner = runner if runner is not None else TrialRunner(seed, workers)
    probs = run_level(level, noise, raw).success_probs
    blocks = runner.map_blocks(_cost_block, trials, level, probs, stream=tuple(stream) + (level,))
    costs = np.concatenate(blocks)
    mean = float(costs.mean())
    stderr = float(costs.std(ddof=1) / np.sqrt(len(costs))) if len(costs) > 1 else 0.0
    estimate = CostEstimate(level=level, trials=trials, mean_raw_pairs=mean, mean_time_t0=mean,
                            stderr=stderr, expected_raw_pairs=expected_raw_pairs(level, probs),
                            histogram=np.bincount(costs), success_probs=probs)
    logger.info("level %d cost: %.4f +- %.4f raw pairs (closed form %.4f)", level, mean, stderr,
                estimate.expected_raw_pairs)
    return estimate


def odd_parity_expansion(level: int, noise: NoiseModel, order: int = 2, eps_max: float = 0.02,
                         points: int = 9) -> np.ndarray:
    """Taylor coefficients in epsilon of the odd-parity probability of each stage.

    Row s holds (c0, c1, ..., c_order) for stage s; c0 is the gate-noise floor.
    """
    grid = np.linspace(eps_max / points, eps_max, points)
    odd = np.array([[1 - p for p in run_level(level, noise.with_epsilon(e)).success_probs] for e in grid])
    return np.array([np.polynomial.polynomial.polyfit(grid, odd[:, s], order) for s in range(level)])
