"""Class-level diagnostics of stage-1 scores.

Checks, on labelled data, that the per-class mean stage-1 score orders the
classes GS < LS < NT < LD < GD with the normal class close to zero. This is
the property that lets the ANT interval pick out normal trajectories even
when the stage-1 reference set is a small random sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Union

import numpy as np

from fastatdc.errors import DataError
from fastatdc.pipeline import CellMatrix
from fastatdc.trajdata import ClassLabel, Dataset, Trajectory

STATS_COLUMNS = ["class", "prototype_id", "mean_s1", "var_s1", "count"]

# Expected ascending order of class means.
SCORE_ORDER = (ClassLabel.GS, ClassLabel.LS, ClassLabel.NT, ClassLabel.LD, ClassLabel.GD)


class MissingClassError(DataError):
    pass


@dataclass(frozen=True)
class ClassStats:
    label: ClassLabel
    prototype_id: int
    mean_s1: float
    var_s1: float
    count: int

    def csv_row(self) -> list:
        return [self.label.name, self.prototype_id, repr(self.mean_s1), repr(self.var_s1), self.count]


@dataclass(frozen=True)
class OrderingReport:
    checks: Dict[str, bool]
    means: Dict[str, float]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _objective_parts(members: Sequence[Trajectory]):
    cm = CellMatrix(members)
    rows = np.arange(len(members))
    inter = cm.intersections(rows, rows)
    diff = np.abs(cm.lengths[:, None] - cm.lengths[None, :]).astype(float)
    finite = np.where(inter > 0, diff / np.maximum(inter, 1), 0.0).sum(axis=1)
    disjoint = (inter == 0).sum(axis=1)
    return finite, disjoint


def prototype_objective(members: Sequence[Trajectory]) -> np.ndarray:
    """Sum of |DIS| from each member to all members; +inf if any pair is disjoint."""
    finite, disjoint = _objective_parts(members)
    return np.where(disjoint > 0, np.inf, finite)


def prototype(class_members: Sequence[Trajectory]) -> Trajectory:
    """Member with the smallest total |DIS| to its class; ties go to the lowest id.

    When every candidate has a disjoint partner the objective is infinite
    for all of them; candidates are then ranked by their number of disjoint
    partners first, so a disconnected member is not picked by default.
    """
    if not class_members:
        raise ValueError("class has no members")
    members = sorted(class_members, key=lambda t: t.id)
    finite, disjoint = _objective_parts(members)
    best = int(np.lexsort((finite, disjoint))[0])  # stable, so lowest id on ties
    return members[best]


def class_score_statistics(
    ds: Dataset, s1_scores: Union[Mapping[int, float], Sequence[float]]
) -> List[ClassStats]:
    """Prototype, mean and population variance of stage-1 scores per present class.

    ``s1_scores`` maps trajectory id to score, or is an array in dataset order.
    """
    if not isinstance(s1_scores, Mapping):
        if len(s1_scores) != len(ds):
            raise DataError(f"{len(s1_scores)} scores for {len(ds)} trajectories")
        s1_scores = dict(zip(ds.ids, (float(x) for x in s1_scores)))
    if not ds.is_labeled:
        missing = next(t.id for t in ds.trajectories if t.label is None)
        raise DataError(f"trajectory {missing} has no label")
    by_class: Dict[ClassLabel, List[Trajectory]] = {}
    for t in ds.trajectories:
        if t.id not in s1_scores:
            raise DataError(f"no stage-1 score for trajectory {t.id}")
        by_class.setdefault(t.label, []).append(t)
    out = []
    for label in ClassLabel:
        members = by_class.get(label)
        if not members:
            continue
        values = np.array([s1_scores[t.id] for t in members], dtype=float)
        out.append(
            ClassStats(
                label=label,
                prototype_id=prototype(members).id,
                mean_s1=float(values.mean()),
                var_s1=float(values.var()),
                count=len(members),
            )
        )
    return out


def ordering_check(stats: Sequence[ClassStats], phi: float) -> OrderingReport:
    means = {s.label: s.mean_s1 for s in stats}
    missing = [c.name for c in SCORE_ORDER if c not in means]
    if missing:
        raise MissingClassError(f"classes missing for the ordering check: {', '.join(missing)}")
    checks = {}
    for lo, hi in zip(SCORE_ORDER, SCORE_ORDER[1:]):
        checks[f"{lo.name}<{hi.name}"] = bool(means[lo] < means[hi])
    checks["|NT|<=phi"] = bool(abs(means[ClassLabel.NT]) <= phi)
    return OrderingReport(checks, {c.name: means[c] for c in SCORE_ORDER})
