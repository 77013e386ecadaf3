"""Exact (ATDC) and sampled (FastATDC) two-stage detection runs.

Both runners share one engine. Intersections are computed in blocks as
products of a 0/1 trajectory-by-cell incidence matrix; the counts are exact
small integers, so every score is a single division of two exact integer
sums and the result does not depend on block size, thread count or the
order in which references are visited.

All randomness is drawn up front from ``cfg.seed``: one global stage-1
reference sample and one global sample of the absolute normal trajectories
(ANT). Per-trajectory work after that is pure and may fan out over threads.
"""

from __future__ import annotations

import itertools
import json
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from fastatdc.errors import (
    AlgorithmError,
    ConfigError,
    DataError,
    DatasetTooSmallError,
    EmptyANTError,
)
from fastatdc.scoring import DetectionConfig, ScoreRecord, Stage
from fastatdc.trajdata import ClassLabel, Dataset, Trajectory

_SEED_MASK = 0xFFFFFFFFFFFFFFFF
# Upper bound on entries of one intersection block (rows x references).
_BLOCK_ENTRIES = 1 << 21


@dataclass(frozen=True)
class SampleDraw:
    stage: Stage
    subject_id: Optional[int]
    drawn_ids: Tuple[int, ...]


@dataclass(frozen=True)
class Timings:
    stage1_seconds: float
    stage2_seconds: float
    total_seconds: float
    seconds_per_100_trajectories: float

    def as_dict(self) -> dict:
        return {
            "stage1_seconds": self.stage1_seconds,
            "stage2_seconds": self.stage2_seconds,
            "total_seconds": self.total_seconds,
            "seconds_per_100_trajectories": self.seconds_per_100_trajectories,
        }


@dataclass
class RunResult:
    records: List[ScoreRecord]
    ant_ids: FrozenSet[int]
    timings: Timings
    config_echo: DetectionConfig
    dataset_name: str
    method: str = "fastatdc"
    stage1_scores: Tuple[float, ...] = ()
    samples: Tuple[SampleDraw, ...] = ()
    intersection_count: int = 0

    @property
    def scores(self) -> List[float]:
        return [r.score for r in self.records]

    @property
    def predicted(self) -> List[ClassLabel]:
        return [r.predicted for r in self.records]

    def summary(self) -> dict:
        return {
            "method": self.method,
            "dataset": self.dataset_name,
            "n": len(self.records),
            "n_ant": len(self.ant_ids),
            "intersection_count": self.intersection_count,
            "config": self.config_echo.as_dict(),
            "timings": self.timings.as_dict(),
        }

    def to_lines(self) -> List[str]:
        lines = [json.dumps(r.as_dict()) for r in self.records]
        lines.append(json.dumps({"summary": self.summary()}))
        return lines

    def save(self, path: Union[str, Path]) -> None:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(self.to_lines()) + "\n")
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from exc


def load_run(path: Union[str, Path]) -> Tuple[List[ScoreRecord], dict]:
    """Read back the records and summary of a saved run file."""
    records: List[ScoreRecord] = []
    summary: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if "summary" in obj:
                summary = obj["summary"]
                continue
            records.append(
                ScoreRecord(
                    trajectory_id=int(obj["id"]),
                    score=float(obj["score"]),
                    stage=Stage(obj["stage"]),
                    predicted=ClassLabel(obj["predicted"]),
                    is_ant=bool(obj["is_ant"]),
                )
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"bad run record: {exc}", lineno) from None
    return records, summary


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def draw_sample(pool_size: int, count: int, seed: int, stream_tag: str) -> List[int]:
    """Uniform sample of ``count`` distinct indices from ``range(pool_size)``.

    The draw order is returned. Each ``stream_tag`` keys an independent
    stream under the same seed.
    """
    if not 1 <= count <= pool_size:
        raise ValueError(f"count must be in [1, {pool_size}], got {count}")
    ss = np.random.SeedSequence(seed & _SEED_MASK, spawn_key=(zlib.crc32(stream_tag.encode()),))
    rng = np.random.default_rng(ss)
    return rng.choice(pool_size, size=count, replace=False).tolist()


def stage1_sample_size(n: int, r1: float) -> int:
    return min(n, max(1, round_half_up(r1 * n)))


def stage2_sample_size(n_ant: int, r2: float, k: int) -> int:
    return min(n_ant, max(k, round_half_up(r2 * n_ant)))


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


class CellMatrix:
    """Dense 0/1 incidence of trajectories over the cells they actually use."""

    def __init__(self, trajectories: Sequence[Trajectory]):
        n = len(trajectories)
        lengths = np.fromiter(map(len, trajectories), dtype=np.int64, count=n)
        flat = np.fromiter(
            itertools.chain.from_iterable(t.cells for t in trajectories),
            dtype=np.int64,
            count=int(lengths.sum()),
        )
        # compact the used cell ids to 0..m-1 with a lookup table
        used = np.zeros(int(flat.max()) + 1 if n else 0, dtype=bool)
        used[flat] = True
        columns = (np.cumsum(used) - 1)[flat]
        rows = np.repeat(np.arange(n), lengths)
        # float32 sums of 0/1 entries are exact below 2**24 cells
        self.matrix = np.zeros((n, int(used.sum())), dtype=np.float32)
        self.matrix[rows, columns] = 1.0
        self.lengths = lengths

    def intersections(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        block = self.matrix[rows] @ self.matrix[cols].T
        return np.rint(block).astype(np.int64)


def _blocks(rows: np.ndarray, width: int, threads: int) -> List[np.ndarray]:
    size = max(1, _BLOCK_ENTRIES // max(1, width))
    if threads > 1:
        size = min(size, max(1, math.ceil(len(rows) / threads)))
    return [rows[i : i + size] for i in range(0, len(rows), size)]


def _fan_out(fn: Callable, chunks: List[np.ndarray], threads: int) -> list:
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _stage1(cm: CellMatrix, refs: np.ndarray, spare: Optional[int], threads: int):
    """Integer numerators and denominators of the stage-1 score for every row."""
    n = len(cm.lengths)
    lengths = cm.lengths
    in_refs = np.zeros(n, dtype=bool)
    in_refs[refs] = True

    def block(rows):
        inter = cm.intersections(rows, refs)
        return inter.sum(axis=1) - np.where(in_refs[rows], lengths[rows], 0)

    rows = np.arange(n)
    den = np.concatenate(_fan_out(block, _blocks(rows, len(refs), threads), threads))
    # sum over j != i of (|i| - |j|); the self term is zero, so no correction
    num = len(refs) * lengths - lengths[refs].sum()
    pairs = n * len(refs)
    if len(refs) == 1 and spare is not None:
        # the lone reference would score against nothing; use the spare draw
        i = int(refs[0])
        num[i] = lengths[i] - lengths[spare]
        den[i] = cm.intersections(np.array([i]), np.array([spare]))[0, 0]
        pairs += 1
    return num, den, pairs


def _stage2(cm: CellMatrix, subjects: np.ndarray, pool: np.ndarray, k: int, threads: int):
    """Integer sums over each subject's k nearest pool members (pool sorted by id)."""
    lengths = cm.lengths
    kk = min(k, len(pool))
    pool_len = lengths[pool]
    positions = np.arange(len(pool), dtype=np.int64)

    def block(rows):
        inter = cm.intersections(rows, pool)
        # Rank by intersection, then by ascending id (pool position). The key
        # is unique per row, so the top-kk set is exactly the sorted prefix.
        key = inter * len(pool) + (len(pool) - 1 - positions)
        order = np.argpartition(-key, kk - 1, axis=1)[:, :kk]
        den = np.take_along_axis(inter, order, axis=1).sum(axis=1)
        num = kk * lengths[rows] - pool_len[order].sum(axis=1)
        return num, den

    if len(subjects) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), 0
    parts = _fan_out(block, _blocks(subjects, len(pool), threads), threads)
    num = np.concatenate([p[0] for p in parts])
    den = np.concatenate([p[1] for p in parts])
    return num, den, len(subjects) * len(pool)


_LABELS = tuple(ClassLabel)


def _classify_all(score: np.ndarray, theta) -> np.ndarray:
    """Vectorised ``classify``; same inequalities, one pass over the array."""
    if np.isnan(score).any():
        raise AlgorithmError("NaN score reached classification")
    t1, t2, t3, t4 = theta
    out = np.full(len(score), int(ClassLabel.GS), dtype=np.int64)
    out[score > t4] = ClassLabel.LS
    out[score > t3] = ClassLabel.NT
    out[score >= t2] = ClassLabel.LD
    out[score >= t1] = ClassLabel.GD
    return out


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(len(num), np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def _s1_summary(s1: np.ndarray, phi: float) -> dict:
    finite = s1[np.isfinite(s1)]
    summary = {"n": int(len(s1)), "n_undefined": int(len(s1) - len(finite)), "phi": phi}
    if len(finite):
        summary.update(
            min=float(finite.min()),
            max=float(finite.max()),
            median=float(np.median(finite)),
            min_abs=float(np.abs(finite).min()),
        )
    return summary


def _stage1_refs(ds: Dataset, cfg: DetectionConfig, exact: bool):
    n = len(ds)
    if exact:
        return np.arange(n), None, None
    m = stage1_sample_size(n, cfg.r1)
    drawn = draw_sample(n, min(n, m + 1), cfg.seed, "stage1")
    refs = np.sort(np.array(drawn[:m], dtype=np.int64))
    spare = drawn[m] if len(drawn) > m else None
    draw = SampleDraw(Stage.STAGE1, None, tuple(ds.trajectories[i].id for i in refs))
    return refs, spare, draw


def stage1_scores(ds: Dataset, cfg: DetectionConfig, exact: bool = True, threads: int = 1) -> np.ndarray:
    """Stage-1 scores for every trajectory (NaN where the denominator is zero)."""
    if len(ds) < 2:
        raise DatasetTooSmallError(f"need at least 2 trajectories, got {len(ds)}")
    cm = CellMatrix(ds.trajectories)
    refs, spare, _ = _stage1_refs(ds, cfg, exact)
    num, den, _ = _stage1(cm, refs, spare, threads)
    return _ratio(num, den)


def _run(ds: Dataset, cfg: DetectionConfig, exact: bool, threads: int) -> RunResult:
    n = len(ds)
    if n < 2:
        raise DatasetTooSmallError(f"need at least 2 trajectories, got {n}")
    ids = np.array(ds.ids, dtype=np.int64)
    t_start = time.perf_counter()
    cm = CellMatrix(ds.trajectories)
    samples = []

    t0 = time.perf_counter()
    refs, spare, draw = _stage1_refs(ds, cfg, exact)
    if draw is not None:
        samples.append(draw)
    num1, den1, pairs1 = _stage1(cm, refs, spare, threads)
    s1 = _ratio(num1, den1)
    with np.errstate(invalid="ignore"):
        is_ant = (s1 >= -cfg.phi) & (s1 <= cfg.phi)
    t1 = time.perf_counter()

    ant = np.flatnonzero(is_ant)
    if len(ant) == 0:
        raise EmptyANTError(
            f"no stage-1 score within [-{cfg.phi}, {cfg.phi}]", _s1_summary(s1, cfg.phi)
        )
    if exact:
        pool = ant
    else:
        size = stage2_sample_size(len(ant), cfg.r2, cfg.k)
        pool = ant[np.array(draw_sample(len(ant), size, cfg.seed, "stage2"), dtype=np.int64)]
        samples.append(SampleDraw(Stage.STAGE2, None, tuple(int(x) for x in np.sort(ids[pool]))))
    pool = pool[np.argsort(ids[pool], kind="stable")]
    subjects = np.flatnonzero(~is_ant)
    num2, den2, pairs2 = _stage2(cm, subjects, pool, cfg.k, threads)
    s2 = _ratio(num2, den2)
    # zero overlap with every nearest ANT: push to the global extreme by length
    ant_len_sum = int(cm.lengths[ant].sum())
    for pos in np.flatnonzero(den2 == 0):
        longer = cm.lengths[subjects[pos]] * len(ant) > ant_len_sum
        s2[pos] = math.inf if longer else -math.inf
    t2 = time.perf_counter()

    score = s1.copy()
    score[subjects] = s2
    labels = _classify_all(score, cfg.theta)
    records = [
        ScoreRecord(tid, sc, Stage.STAGE1 if a else Stage.STAGE2, _LABELS[lab], a)
        for tid, sc, lab, a in zip(ids.tolist(), score.tolist(), labels.tolist(), is_ant.tolist())
    ]
    t_end = time.perf_counter()
    total = t_end - t_start
    timings = Timings(t1 - t0, t2 - t1, total, total * 100.0 / n)
    return RunResult(
        records=records,
        ant_ids=frozenset(int(x) for x in ids[ant]),
        timings=timings,
        config_echo=cfg,
        dataset_name=ds.name,
        method="atdc" if exact else "fastatdc",
        stage1_scores=tuple(float(x) for x in s1),
        samples=tuple(samples),
        intersection_count=pairs1 + pairs2,
    )


def run_fastatdc(ds: Dataset, cfg: DetectionConfig, threads: int = 1) -> RunResult:
    """Two-stage detection with sampled stage-1 references and sampled ANT."""
    return _run(ds, cfg, exact=False, threads=threads)


def run_atdc(ds: Dataset, cfg: DetectionConfig, threads: int = 1) -> RunResult:
    """Exact two-stage detection: all other trajectories in stage 1, all ANT in stage 2."""
    return _run(ds, replace(cfg, r1=1.0, r2=1.0), exact=True, threads=threads)


def run(ds: Dataset, cfg: DetectionConfig, method: str = "fastatdc", threads: int = 1) -> RunResult:
    if method == "atdc":
        return run_atdc(ds, cfg, threads)
    if method == "fastatdc":
        return run_fastatdc(ds, cfg, threads)
    raise ConfigError(f"unknown method {method!r}")
