import json
import math

import numpy as np
import pytest

from fastatdc.errors import ConfigError, DataError, DatasetTooSmallError, EmptyANTError
from fastatdc.pipeline import (
    CellMatrix,
    RunResult,
    draw_sample,
    load_run,
    round_half_up,
    run,
    run_atdc,
    run_fastatdc,
    stage1_sample_size,
    stage1_scores,
    stage2_sample_size,
)
from fastatdc.scoring import DetectionConfig, Stage, classify, k_nearest_ant, stage1_score, stage2_score
from fastatdc.trajdata import ClassLabel, Dataset, GeneratorSpec, Trajectory, generate, preset_spec


def toy(*cell_lists, labels=None):
    trajs = [
        Trajectory(i, tuple(cells), None if labels is None else labels[i]) for i, cells in enumerate(cell_lists)
    ]
    return Dataset(1000, 1, trajs, "toy")


def reference_run(ds, cfg):
    """Exact two-stage detector written directly from the scoring primitives."""
    trajs = ds.trajectories
    s1 = {}
    for i in trajs:
        try:
            s1[i.id] = stage1_score(i, [j for j in trajs if j.id != i.id])
        except ArithmeticError:
            s1[i.id] = math.nan
    ant = [t for t in trajs if -cfg.phi <= s1[t.id] <= cfg.phi]
    mean_ant = sum(len(t) for t in ant) / len(ant)
    out = []
    for t in trajs:
        if t in ant:
            out.append((t.id, s1[t.id], ClassLabel.NT))
            continue
        try:
            s = stage2_score(t, k_nearest_ant(t, ant, cfg.k))
        except ArithmeticError:
            s = math.inf if len(t) > mean_ant else -math.inf
        out.append((t.id, s, classify(s, cfg.theta)))
    return out


# -- sampling helpers ---------------------------------------------------------


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 1.244, 2.4999)] == [1, 2, 3, 1, 2]


def test_sample_sizes():
    assert stage1_sample_size(311, 0.004) == 1
    assert stage1_sample_size(1093, 0.004) == 4
    assert stage1_sample_size(10, 0.001) == 1
    assert stage1_sample_size(10, 1.0) == 10
    assert stage2_sample_size(100, 0.3, 10) == 30
    assert stage2_sample_size(100, 0.01, 10) == 10
    assert stage2_sample_size(4, 0.3, 10) == 4


def test_draw_sample_contract():
    a = draw_sample(50, 20, 7, "stage1")
    assert a == draw_sample(50, 20, 7, "stage1")
    assert len(set(a)) == 20 and all(0 <= x < 50 for x in a)
    assert a != draw_sample(50, 20, 7, "stage2")
    assert a != draw_sample(50, 20, 8, "stage1")
    assert sorted(draw_sample(9, 9, 3, "x")) == list(range(9))
    for bad in (0, 51):
        with pytest.raises(ValueError):
            draw_sample(50, bad, 0, "x")


def test_draw_sample_is_uniform():
    counts = np.bincount([draw_sample(5, 1, seed, "u")[0] for seed in range(10000)], minlength=5)
    sigma = math.sqrt(10000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - 2000) <= 5 * sigma)
    chi2 = float(((counts - 2000) ** 2 / 2000).sum())
    assert chi2 < 18.47  # 4 dof, 99.9%


def test_draw_sample_accepts_large_and_negative_seeds():
    assert draw_sample(10, 3, 2**64 - 1, "x") == draw_sample(10, 3, -1, "x")


def test_cell_matrix_matches_set_intersections():
    rng = np.random.default_rng(0)
    trajs = [Trajectory(i, tuple(rng.choice(300, int(rng.integers(1, 40)), replace=False))) for i in range(30)]
    cm = CellMatrix(trajs)
    idx = np.arange(30)
    inter = cm.intersections(idx, idx)
    for a in range(30):
        for b in range(30):
            assert inter[a, b] == len(trajs[a].cell_set & trajs[b].cell_set)
    assert cm.lengths.tolist() == [len(t) for t in trajs]


# -- exact runs ---------------------------------------------------------------


def test_atdc_hand_computed_three_trajectories():
    ds = toy([1, 2, 3, 4], [2, 3], [3, 4, 5])
    s1 = stage1_scores(ds, DetectionConfig())
    # i0: (2+1)/(2+2); i1: (-2-1)/(2+1); i2: (-1+1)/(2+1)
    assert s1.tolist() == [0.75, -1.0, 0.0]


def test_atdc_matches_reference_implementation():
    rng = np.random.default_rng(5)
    for case in range(15):
        ds = generate(GeneratorSpec(n=int(rng.integers(5, 21)), probs=(0.1, 0.2, 0.4, 0.2, 0.1), seed=case))
        cfg = DetectionConfig(k=3)
        try:
            result = run_atdc(ds, cfg)
        except EmptyANTError:
            continue
        want = reference_run(ds, cfg)
        got = [(r.trajectory_id, r.score, r.predicted) for r in result.records]
        assert got == want


def test_identical_trajectories_are_all_normal():
    ds = toy(*[[4, 5, 6, 7]] * 6)
    result = run_atdc(ds, DetectionConfig())
    assert all(r.score == 0.0 and r.is_ant and r.predicted is ClassLabel.NT for r in result.records)


def test_disjoint_trajectory_takes_length_fallback():
    # the outliers' length offsets cancel, so the normals keep S1 == 0
    normal = [list(range(10))] * 4
    long_far = list(range(500, 516))
    short_far = list(range(600, 604))
    ds = toy(*normal, long_far, short_far)
    result = run_atdc(ds, DetectionConfig())
    by_id = {r.trajectory_id: r for r in result.records}
    assert by_id[4].score == math.inf and by_id[4].predicted is ClassLabel.GD
    assert by_id[5].score == -math.inf and by_id[5].predicted is ClassLabel.GS
    assert not by_id[4].is_ant and by_id[4].stage is Stage.STAGE2


def test_empty_ant_carries_summary():
    ds = toy([1, 2], [1, 2, 3, 4, 5, 6])
    with pytest.raises(EmptyANTError) as err:
        run_atdc(ds, DetectionConfig())
    assert err.value.summary["n"] == 2
    assert "median" in err.value.summary


def test_too_small():
    with pytest.raises(DatasetTooSmallError):
        run_fastatdc(toy([1]), DetectionConfig())
    with pytest.raises(DatasetTooSmallError):
        run_atdc(toy(), DetectionConfig())


def test_unknown_method():
    with pytest.raises(ConfigError):
        run(toy([1], [1]), DetectionConfig(), method="fast")


# -- sampled runs -------------------------------------------------------------


@pytest.fixture(scope="module")
def t2():
    return generate(preset_spec("t2", seed=3))


def test_result_invariants(t2):
    result = run_fastatdc(t2, DetectionConfig(seed=4))
    assert len(result.records) == len(t2)
    assert [r.trajectory_id for r in result.records] == t2.ids
    for r in result.records:
        assert (r.stage is Stage.STAGE1) == r.is_ant == (r.trajectory_id in result.ant_ids)
        assert r.predicted is classify(r.score, result.config_echo.theta)
    t = result.timings
    assert t.seconds_per_100_trajectories == pytest.approx(t.total_seconds * 100 / len(t2))


def test_low_rate_on_t2_uses_one_reference(t2):
    result = run_fastatdc(t2, DetectionConfig(r1=0.004, seed=1))
    stage1 = [s for s in result.samples if s.stage is Stage.STAGE1]
    assert len(stage1) == 1 and len(stage1[0].drawn_ids) == 1
    stage2 = [s for s in result.samples if s.stage is Stage.STAGE2][0]
    assert len(stage2.drawn_ids) == stage2_sample_size(len(result.ant_ids), 0.3, 10)
    assert set(stage2.drawn_ids) <= result.ant_ids


def test_lone_reference_sample():
    ds = generate(preset_spec("t2", seed=0))
    ref_scored = 0
    for seed in range(40):
        cfg = DetectionConfig(r1=0.004, seed=seed)
        s1 = stage1_scores(ds, cfg, exact=False)
        assert not np.isnan(s1).all()
        (ref,) = [s for s in run_fastatdc(ds, cfg).samples if s.stage is Stage.STAGE1][0].drawn_ids
        others = [t for t in ds.trajectories if t.id != ref]
        # every non-reference trajectory is scored against the lone reference
        ref_t = ds.trajectories[ds.ids.index(ref)]
        for t in others[:20]:
            inter = len(t.cell_set & ref_t.cell_set)
            if inter:
                assert s1[ds.ids.index(t.id)] == (len(t) - len(ref_t)) / inter
        # the reference itself is scored against the spare draw
        ref_scored += bool(np.isfinite(s1[ds.ids.index(ref)]))
    assert ref_scored >= 30


def test_full_rates_reproduce_exact_run(t2):
    cfg = DetectionConfig(r1=1.0, r2=1.0, seed=9)
    fast = run_fastatdc(t2, cfg)
    exact = run_atdc(t2, cfg)
    assert [r.as_dict() for r in fast.records] == [r.as_dict() for r in exact.records]


def test_runs_are_deterministic_and_thread_independent(t2):
    cfg = DetectionConfig(seed=12)
    base = [r.as_dict() for r in run_fastatdc(t2, cfg).records]
    assert [r.as_dict() for r in run_fastatdc(t2, cfg).records] == base
    for threads in (2, 3, 8):
        assert [r.as_dict() for r in run_fastatdc(t2, cfg, threads=threads).records] == base
    exact = [r.as_dict() for r in run_atdc(t2, cfg).records]
    assert [r.as_dict() for r in run_atdc(t2, cfg, threads=8).records] == exact


def test_block_size_does_not_change_results(t2, monkeypatch):
    import fastatdc.pipeline as pipeline

    cfg = DetectionConfig(seed=2)
    base = [r.as_dict() for r in run_atdc(t2, cfg).records]
    monkeypatch.setattr(pipeline, "_BLOCK_ENTRIES", 777)
    assert [r.as_dict() for r in run_atdc(t2, cfg).records] == base


def test_sampled_stage1_is_unbiased():
    ds = generate(GeneratorSpec(n=100, seed=21))
    full = stage1_scores(ds, DetectionConfig())
    draws = np.array([stage1_scores(ds, DetectionConfig(r1=0.1, seed=s), exact=False) for s in range(200)])
    ok = 0
    for col in range(len(ds)):
        values = draws[:, col]
        values = values[np.isfinite(values)]
        se = values.std(ddof=1) / math.sqrt(len(values))
        if abs(values.mean() - full[col]) <= 3 * se + 1e-12:
            ok += 1
    assert ok >= 0.95 * len(ds)


def test_work_bound():
    ds = generate(GeneratorSpec(n=1000, seed=4))
    cfg = DetectionConfig()
    fast = run_fastatdc(ds, cfg)
    n, d = len(ds), len(fast.ant_ids)
    assert fast.intersection_count <= n * (cfg.r1 * n + cfg.r2 * d) + 2 * n + n * cfg.k
    assert fast.intersection_count * 10 <= n * n


def test_run_file_round_trip(t2, tmp_path):
    result = run_fastatdc(t2, DetectionConfig(seed=1))
    path = tmp_path / "run.jsonl"
    result.save(path)
    records, summary = load_run(path)
    assert records == result.records
    assert summary["config"]["theta"] == [0.5, 0.11, -0.11, -0.5]
    assert summary["n_ant"] == len(result.ant_ids)


def test_infinite_scores_round_trip(tmp_path):
    ds = toy(*[list(range(10))] * 4, list(range(500, 516)), list(range(600, 604)))
    result = run_atdc(ds, DetectionConfig())
    result.save(tmp_path / "r.jsonl")
    records, _ = load_run(tmp_path / "r.jsonl")
    assert [r.score for r in records[4:]] == [math.inf, -math.inf]


def test_load_run_errors(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"id": 0, "score": 0.1}) + "\n")
    with pytest.raises(DataError, match="line 1"):
        load_run(path)
    with pytest.raises(DataError):
        load_run(tmp_path / "missing.jsonl")
