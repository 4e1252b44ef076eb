"""Repeater chains: fusion, error steering, re-purification and link budgets."""
import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .purify import (LEVELS, RANKS, BellDiagonalTuple, NoiseModel, Steering, expected_raw_pairs, order_word,
                     resolve_rank, rotate_pair, run_level)
from .qcore import DensityMatrix, bell_weights, conjugate_pauli, measure_branch, noisy_gate, off_bell_diagonal
from .utils import Config

logger = logging.getLogger(__name__)

STAGE_NAMES = ("i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x", "xi")


def fuse(pair_ab: DensityMatrix, pair_bc: DensityMatrix, noise: NoiseModel) -> DensityMatrix:
    """Bell measurement on the two middle-node qubits; returns the A-C pair"""
    for name, pair in (("pair_ab", pair_ab), ("pair_bc", pair_bc)):
        if pair.num_qubits != 2:
            raise ValueError(f"{name} must be a two-qubit state, got {pair.num_qubits} qubits")
    joint = pair_ab.tensor(pair_bc)  # A, B1, B2, C
    joint = noisy_gate(joint, "CNOT", (1, 2), p2=noise.p2)
    joint = noisy_gate(joint, "H", (1,), p1=noise.p1)
    out = None
    for m1 in (0, 1):
        for m2 in (0, 1):
            branch = measure_branch(joint, 2, "Z", m2, noise.pm)
            branch = measure_branch(branch, 1, "Z", m1, noise.pm)
            # frame update on C: X^m2 then Z^m1
            correction = ("X" if m2 else "I"), ("Z" if m1 else "I")
            for letter in correction:
                if letter != "I":
                    branch = conjugate_pauli(branch, letter, [1])
            out = branch if out is None else out + branch
    return out


def fuse_chain(pairs: Sequence[DensityMatrix], noise: NoiseModel) -> DensityMatrix:
    """Left fold of fuse over neighbouring links"""
    if len(pairs) < 2:
        raise ValueError(f"fuse_chain needs at least two pairs, got {len(pairs)}")
    out = pairs[0]
    for pair in pairs[1:]:
        out = fuse(out, pair, noise)
    return out


def steering_word(pair: DensityMatrix, target_order: Steering) -> Tuple[str, ...]:
    """Dihedral word that moves the channel weights into ``target_order``"""
    resolve_rank(target_order)
    off = off_bell_diagonal(pair)
    if off > 1e-8:
        raise ValueError(f"steering needs a Bell-diagonal pair (off-diagonal {off:.3e})")
    return order_word(BellDiagonalTuple(*np.clip(bell_weights(pair)[1:], 0.0, None)), target_order)


def steer_errors(pair: DensityMatrix, target_order: Steering,
                 noise: Optional[NoiseModel] = None) -> DensityMatrix:
    return rotate_pair(pair, steering_word(pair, target_order), noise)


@dataclass(frozen=True)
class ChainStageReport:
    stage: str
    fidelity: float
    error_channels: Tuple[float, float, float]
    mean_cost: Optional[float] = None
    # per purification round, the words applied to the kept and the sacrificed input
    words: Tuple[Tuple[Tuple[str, ...], Tuple[str, ...]], ...] = ()

    def __post_init__(self):
        if abs(self.fidelity + sum(self.error_channels) - 1) > 1e-9:
            raise ValueError(f"stage {self.stage}: fidelity and channels do not sum to one")
        if list(self.error_channels) != sorted(self.error_channels, reverse=True):
            raise ValueError(f"stage {self.stage}: channels must be sorted descending")

    @classmethod
    def from_state(cls, stage: str, state: DensityMatrix, mean_cost=None, words=()) -> "ChainStageReport":
        w = bell_weights(state)
        channels = tuple(sorted((float(x) for x in w[1:]), reverse=True))
        return cls(stage, float(w[0]), channels, mean_cost, tuple(words))


@dataclass(frozen=True)
class PipelineConfig:
    initial_level: int = 3
    fuse_sizes: Tuple[int, ...] = field(default_factory=lambda: tuple(Config.fuse_sizes))
    repurify_level: int = 2
    steering: Union[str, Tuple[int, int, int]] = "best"

    def __post_init__(self):
        object.__setattr__(self, "fuse_sizes", tuple(int(m) for m in self.fuse_sizes))
        if self.initial_level not in LEVELS or self.repurify_level not in LEVELS:
            raise ValueError(f"purification levels must be in {LEVELS}")
        if any(m < 2 for m in self.fuse_sizes):
            raise ValueError(f"fusion sizes must be at least 2, got {self.fuse_sizes}")
        if 1 + 2 * len(self.fuse_sizes) > len(STAGE_NAMES):
            raise ValueError(f"at most {(len(STAGE_NAMES) - 1) // 2} fusion tiers are supported")
        if self.steering != "best":
            resolve_rank(self.steering)

    @property
    def span_links(self) -> int:
        return int(np.prod(self.fuse_sizes)) if self.fuse_sizes else 1


@dataclass(frozen=True)
class PipelineReport:
    config: PipelineConfig
    stages: List[ChainStageReport]

    def __iter__(self):
        return iter(self.stages)

    def __len__(self):
        return len(self.stages)

    def __getitem__(self, index):
        return self.stages[index]

    @property
    def stage_costs(self) -> Tuple[float, ...]:
        return tuple(s.mean_cost for s in self.stages if s.mean_cost is not None)

    @property
    def total_cost(self) -> float:
        """Raw pairs per purified link over all purification stages"""
        return float(np.prod(self.stage_costs))


def pipeline(config: PipelineConfig, noise: NoiseModel) -> PipelineReport:
    """Purify, then alternately fuse and re-purify, one tier per fusion size"""
    first = run_level(config.initial_level, noise)
    cost = expected_raw_pairs(config.initial_level, first.success_probs)
    stages = [ChainStageReport.from_state(STAGE_NAMES[0], first.out, cost)]
    current = first.out
    for tier, size in enumerate(config.fuse_sizes):
        fused = fuse_chain([current] * size, noise)
        stages.append(ChainStageReport.from_state(STAGE_NAMES[1 + 2 * tier], fused))
        result = run_level(config.repurify_level, noise, raw=fused, steering=config.steering)
        cost = expected_raw_pairs(config.repurify_level, result.success_probs)
        stages.append(ChainStageReport.from_state(STAGE_NAMES[2 + 2 * tier], result.out, cost, result.words))
        current = result.out
    for stage in stages:
        logger.debug("stage %s: fidelity %.6f channels %s cost %s", stage.stage, stage.fidelity,
                     stage.error_channels, stage.mean_cost)
    return PipelineReport(config, stages)


def chain_reach_km(fuse_sizes: Sequence[int], spacing_km: float) -> float:
    return float(np.prod(fuse_sizes)) * spacing_km if fuse_sizes else spacing_km


@dataclass(frozen=True)
class LinkBudget:
    spacing_km: float = Config.spacing_km
    loss_db_per_km: float = Config.loss_db_per_km
    attempt_rate_hz: float = Config.attempt_rate_hz
    two_photon: bool = True
    light_speed_m_s: float = Config.light_speed_m_s

    def __post_init__(self):
        for name in ("spacing_km", "loss_db_per_km", "attempt_rate_hz", "light_speed_m_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def loss_db(self) -> float:
        # both photons travel to the midpoint; a single-photon scheme sends one
        per_km = self.loss_db_per_km if self.two_photon else self.loss_db_per_km / 2
        return per_km * self.spacing_km


class RateBudget(NamedTuple):
    success_scaling: float
    max_cycle_rate_hz: float
    advised_spacing_km: float
    loss_db: float
    attempt_shortfall: float


def rate_budget(link: LinkBudget, falloff_factor: float = 2.0) -> RateBudget:
    """Loss scaling, light-speed cycle limit and spacing for a tolerated success falloff"""
    if falloff_factor < 1:
        raise ValueError(f"falloff factor must be at least 1, got {falloff_factor}")
    scaling = 10 ** (-link.loss_db / 10)
    max_rate = link.light_speed_m_s / (link.spacing_km * 1000.0)
    per_km = link.loss_db / link.spacing_km
    advised = 10 * math.log10(falloff_factor) / per_km
    return RateBudget(scaling, max_rate, advised, link.loss_db, link.attempt_rate_hz / max_rate)


class MemoryBudget(NamedTuple):
    window_s: float
    max_t0_s: float
    min_rate_hz: float


def dephasing_window(t2_seconds: float, fidelity_floor: float, model: str = "exponential") -> float:
    """Storage time until a stored pair decays to ``fidelity_floor``"""
    if math.isinf(t2_seconds):
        return math.inf
    if model == "exponential":
        return -t2_seconds * math.log(2 * fidelity_floor - 1)
    if model == "gaussian":
        return t2_seconds * math.sqrt(-math.log(2 * fidelity_floor - 1))
    raise ValueError(f"unknown dephasing model {model!r}")


def memory_budget(t2_seconds: float, purification_cost_pairs: float, fidelity_floor: Optional[float] = None,
                  model: Optional[str] = None, window_s: Optional[float] = None) -> MemoryBudget:
    """Minimum raw entanglement rate so a purification finishes inside the memory window"""
    fidelity_floor = fidelity_floor if fidelity_floor is not None else Config.fidelity_floor
    model = model if model is not None else Config.dephasing_model
    if fidelity_floor >= 1:
        raise ValueError(f"fidelity floor must be below 1, got {fidelity_floor}")
    if fidelity_floor <= 0.5:
        raise ValueError(f"fidelity floor must exceed 0.5, got {fidelity_floor}")
    if not t2_seconds > 0 or not purification_cost_pairs > 0:
        raise ValueError("T2 and purification cost must be positive")
    window = window_s if window_s is not None else dephasing_window(t2_seconds, fidelity_floor, model)
    if not window > 0:
        raise ValueError(f"memory window must be positive, got {window}")
    max_t0 = window / purification_cost_pairs
    return MemoryBudget(window, max_t0, 0.0 if math.isinf(max_t0) else 1.0 / max_t0)
