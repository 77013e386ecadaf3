import itertools

import numpy as np
import pytest

from fastatdc.diagnostics import (
    ClassStats,
    MissingClassError,
    class_score_statistics,
    ordering_check,
    prototype,
    prototype_objective,
)
from fastatdc.errors import DataError
from fastatdc.pipeline import stage1_scores
from fastatdc.scoring import DetectionConfig, dis
from fastatdc.trajdata import ClassLabel, Dataset, GeneratorSpec, Trajectory, generate

GD, LD, NT, LS, GS = list(ClassLabel)


def brute_objective(members):
    out = []
    for a in members:
        total = 0.0
        for b in members:
            if a.cell_set & b.cell_set:
                total += abs(dis(a, b))
            else:
                total = float("inf")
        out.append(total)
    return out


def test_single_member_is_its_own_prototype():
    t = Trajectory(3, (1, 2))
    assert prototype([t]) is t


def test_identical_members_pick_lowest_id():
    members = [Trajectory(i, (4, 5, 6)) for i in (9, 2, 5)]
    assert prototype(members).id == 2


def test_prototype_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(1, 12))
        members = [Trajectory(i, tuple(rng.choice(20, int(rng.integers(3, 15)), replace=False))) for i in range(n)]
        objective = prototype_objective(members)
        np.testing.assert_allclose(objective, brute_objective(members))
        best = prototype(members)
        assert objective[best.id] == min(objective)


def test_prototype_is_permutation_invariant():
    rng = np.random.default_rng(1)
    members = [Trajectory(i, tuple(rng.choice(15, int(rng.integers(3, 10)), replace=False))) for i in range(6)]
    ids = {prototype(list(p)).id for p in itertools.permutations(members)}
    assert len(ids) == 1


def test_disconnected_member_is_never_prototype():
    members = [Trajectory(0, (100, 101)), Trajectory(1, (1, 2, 3)), Trajectory(2, (2, 3, 4, 5))]
    assert prototype_objective(members)[0] == float("inf")
    assert prototype(members).id != 0


def test_generated_class_prototype_is_exhaustive_minimum():
    ds = generate(GeneratorSpec(n=300, probs=(0, 0.2, 0.6, 0.2, 0), seed=2))
    for label in (LD, LS):
        members = [t for t in ds.trajectories if t.label == label][:50]
        objective = prototype_objective(sorted(members, key=lambda t: t.id))
        assert prototype(members).id == sorted(members, key=lambda t: t.id)[int(np.argmin(objective))].id
        assert all(objective.min() <= v for v in brute_objective(sorted(members, key=lambda t: t.id)))


def _stats(means):
    return [ClassStats(c, 0, m, 0.0, 1) for c, m in zip((GS, LS, NT, LD, GD), means)]


def test_ordering_check_pass_and_fail():
    assert ordering_check(_stats([-0.8, -0.3, 0.01, 0.3, 0.9]), 0.04).passed
    report = ordering_check(_stats([-0.8, -0.3, 0.2, 0.3, 0.9]), 0.04)
    assert not report.passed
    assert report.checks["|NT|<=phi"] is False
    assert report.checks["NT<LD"] is True
    assert not ordering_check(_stats([-0.3, -0.8, 0.0, 0.3, 0.9]), 0.04).checks["GS<LS"]


def test_ordering_check_missing_class():
    with pytest.raises(MissingClassError, match="GS"):
        ordering_check(_stats([-0.8, -0.3, 0.01, 0.3, 0.9])[1:], 0.04)


def test_statistics_single_class_and_variance():
    trajs = [Trajectory(i, (1, 2, 3), NT) for i in range(3)] + [Trajectory(3, (1, 2, 3, 4), NT)]
    ds = Dataset(10, 1, trajs)
    scores = {0: 0.1, 1: 0.1, 2: -0.2, 3: 0.4}
    (stats,) = class_score_statistics(ds, scores)
    assert stats.label is NT and stats.count == 4
    assert stats.mean_s1 == pytest.approx(np.mean(list(scores.values())))
    assert stats.var_s1 == pytest.approx(np.var(list(scores.values())))
    same = class_score_statistics(ds, {0: 0.1, 1: 0.1, 2: 0.1, 3: 0.1})[0]
    assert same.var_s1 == 0.0


def test_statistics_accept_arrays_in_dataset_order():
    ds = Dataset(10, 1, [Trajectory(7, (1,), GD), Trajectory(3, (2,), GD)])
    assert class_score_statistics(ds, [1.0, 3.0])[0].mean_s1 == 2.0
    with pytest.raises(DataError):
        class_score_statistics(ds, [1.0])


def test_statistics_need_labels_and_scores():
    ds = Dataset(10, 1, [Trajectory(0, (1,), NT), Trajectory(1, (2,))])
    with pytest.raises(DataError, match="label"):
        class_score_statistics(ds, {0: 0.0, 1: 0.0})
    ds = Dataset(10, 1, [Trajectory(0, (1,), NT), Trajectory(1, (2,), NT)])
    with pytest.raises(DataError, match="score"):
        class_score_statistics(ds, {0: 0.0})


def test_ordering_holds_on_default_generator():
    full = sampled = 0
    for seed in range(100):
        ds = generate(GeneratorSpec(seed=seed))
        for exact in (True, False):
            scores = stage1_scores(ds, DetectionConfig(r1=0.1, seed=seed), exact=exact)
            try:
                ok = ordering_check(class_score_statistics(ds, scores), 0.04).passed
            except MissingClassError:
                ok = False
            if exact:
                full += ok
            else:
                sampled += ok
    assert full >= 95 and sampled >= 95
