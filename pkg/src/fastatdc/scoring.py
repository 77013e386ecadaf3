"""Per-trajectory scoring: DIS distance, stage scores, ANT selection, labelling.

Scores are ratios of sums: the signed length differences to a reference set,
summed, over the summed intersections with that set. A score near zero means
the trajectory looks like its references; large positive scores mean it is
longer than them (detours), large negative ones shorter (shortcuts).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from fastatdc.errors import ConfigError, ZeroDenominatorError
from fastatdc.trajdata import ClassLabel, Trajectory

DEFAULT_K = 10
DEFAULT_PHI = 0.04
DEFAULT_THETA: Tuple[float, float, float, float] = (0.5, 0.11, -0.11, -0.5)
DEFAULT_R1 = 0.004
DEFAULT_R2 = 0.30

# Per-dataset thresholds tuned for the sampled detector on the six taxi datasets.
THETA_PRESETS = {
    "t1": (0.5, 0.1, -0.11, -0.5),
    "t2": (0.5, 0.11, -0.13, -0.5),
    "t3": (0.5, 0.1, -0.11, -0.5),
    "t4": (0.5, 0.075, -0.085, -0.5),
    "t5": (0.5, 0.11, -0.13, -0.5),
    "t6": (0.5, 0.09, -0.135, -0.5),
}


class Stage(str, enum.Enum):
    STAGE1 = "stage1"
    STAGE2 = "stage2"


@dataclass(frozen=True)
class DetectionConfig:
    k: int = DEFAULT_K
    phi: float = DEFAULT_PHI
    theta: Tuple[float, float, float, float] = DEFAULT_THETA
    r1: float = DEFAULT_R1
    r2: float = DEFAULT_R2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k}")
        if not self.phi >= 0:
            raise ConfigError(f"phi must be non-negative, got {self.phi}")
        if len(self.theta) != 4:
            raise ConfigError("theta needs exactly four thresholds")
        t1, t2, t3, t4 = self.theta
        if not (t1 > t2 > 0 > t3 > t4):
            raise ConfigError(f"theta must satisfy t1 > t2 > 0 > t3 > t4, got {self.theta}")
        if not (self.phi < t2 and -self.phi > t3):
            raise ConfigError(f"phi={self.phi} must lie strictly inside (t3, t2)")
        for name in ("r1", "r2"):
            r = getattr(self, name)
            if not 0 < r <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {r}")

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "phi": self.phi,
            "theta": list(self.theta),
            "r1": self.r1,
            "r2": self.r2,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class ScoreRecord:
    trajectory_id: int
    score: float
    stage: Stage
    predicted: ClassLabel
    is_ant: bool

    def as_dict(self) -> dict:
        return {
            "id": self.trajectory_id,
            "score": self.score,
            "stage": self.stage.value,
            "predicted": int(self.predicted),
            "is_ant": self.is_ant,
        }


def intersection_size(a: Trajectory, b: Trajectory) -> int:
    return len(a.cell_set & b.cell_set)


def dis(a: Trajectory, b: Trajectory) -> float:
    """Signed difference-and-intersection distance ``(|a| - |b|) / |a & b|``."""
    common = intersection_size(a, b)
    if common == 0:
        raise ZeroDenominatorError(f"trajectories {a.id} and {b.id} share no cells")
    return (len(a) - len(b)) / common


def _ratio_of_sums(i: Trajectory, refs: Sequence[Trajectory]) -> float:
    if not refs:
        raise ValueError("reference set is empty")
    num = 0
    den = 0
    for j in refs:
        num += len(i) - len(j)
        den += intersection_size(i, j)
    if den == 0:
        raise ZeroDenominatorError(f"trajectory {i.id} shares no cells with its references")
    return num / den


def stage1_score(i: Trajectory, refs: Sequence[Trajectory]) -> float:
    """Stage-1 anomaly score of ``i`` against a broad reference set.

    ``refs`` is every other trajectory for the exact detector, or a random
    subset for the sampled one. The caller must leave ``i`` out.
    """
    return _ratio_of_sums(i, refs)


def stage2_score(i: Trajectory, neighbors: Sequence[Trajectory]) -> float:
    """Stage-2 score of ``i`` against its nearest absolute normal trajectories."""
    return _ratio_of_sums(i, neighbors)


def select_ant(scores: Mapping[int, float], phi: float) -> Set[int]:
    """Ids whose stage-1 score lies in the closed interval [-phi, phi]."""
    return {tid for tid, s in scores.items() if -phi <= s <= phi}


def k_nearest_ant(i: Trajectory, pool: Sequence[Trajectory], k: int) -> List[Trajectory]:
    if not pool:
        raise ValueError("ANT pool is empty")
    ranked = sorted(pool, key=lambda j: (-intersection_size(i, j), j.id))
    return ranked[:k]


def classify(score: float, theta: Sequence[float]) -> ClassLabel:
    t1, t2, t3, t4 = theta
    if math.isnan(score):
        raise ValueError("cannot classify a NaN score")
    if score >= t1:
        return ClassLabel.GD
    if score >= t2:
        return ClassLabel.LD
    if score > t3:
        return ClassLabel.NT
    if score > t4:
        return ClassLabel.LS
    return ClassLabel.GS
