"""Trajectory data model, JSON Lines I/O and the synthetic dataset generator.

Trajectories live on a row-major ``grid_w x grid_h`` grid of cells; a cell id
is ``y * grid_w + x``. A trajectory is an ordered, duplicate-free list of cell
ids. Similarity math only ever looks at the cell *set*; order is kept so the
generated routes stay readable as paths.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from fastatdc.errors import ConfigError, DataError

PathLike = Union[str, Path]
Cell = Tuple[int, int]


class ClassLabel(enum.IntEnum):
    GD = 0  # global detour
    LD = 1  # local detour
    NT = 2  # normal
    LS = 3  # local shortcut
    GS = 4  # global shortcut


ANOMALY_CLASSES = (ClassLabel.GD, ClassLabel.LD, ClassLabel.LS, ClassLabel.GS)


@dataclass(frozen=True)
class Trajectory:
    id: int
    cells: Tuple[int, ...]
    label: Optional[ClassLabel] = None

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))
        if self.label is not None:
            object.__setattr__(self, "label", ClassLabel(self.label))
        if self.id < 0:
            raise DataError(f"trajectory id must be non-negative, got {self.id}")
        if not self.cells:
            raise DataError(f"trajectory {self.id} has no cells")
        if len(set(self.cells)) != len(self.cells):
            raise DataError(f"trajectory {self.id} contains duplicate cells")
        if min(self.cells) < 0:
            raise DataError(f"trajectory {self.id} contains a negative cell id")

    def __len__(self) -> int:
        return len(self.cells)

    @cached_property
    def cell_set(self) -> FrozenSet[int]:
        return frozenset(self.cells)


@dataclass
class Dataset:
    grid_w: int
    grid_h: int
    trajectories: List[Trajectory] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if self.grid_w <= 0 or self.grid_h <= 0:
            raise DataError(f"grid dimensions must be positive, got {self.grid_w}x{self.grid_h}")
        n_cells = self.grid_w * self.grid_h
        seen = set()
        for t in self.trajectories:
            if t.id in seen:
                raise DataError(f"duplicate trajectory id {t.id}")
            seen.add(t.id)
            if max(t.cells) >= n_cells:
                raise DataError(
                    f"trajectory {t.id} has a cell outside the {self.grid_w}x{self.grid_h} grid"
                )

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def ids(self) -> List[int]:
        return [t.id for t in self.trajectories]

    @property
    def labels(self) -> List[Optional[ClassLabel]]:
        return [t.label for t in self.trajectories]

    @property
    def is_labeled(self) -> bool:
        return all(t.label is not None for t in self.trajectories)

    def class_counts(self) -> Dict[ClassLabel, int]:
        counts = {c: 0 for c in ClassLabel}
        for t in self.trajectories:
            if t.label is not None:
                counts[t.label] += 1
        return counts


# ---------------------------------------------------------------------------
# JSON Lines format
# ---------------------------------------------------------------------------

_HEADER_KEYS = {"grid_w", "grid_h", "name"}
_RECORD_KEYS = {"id", "cells", "label"}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _parse_header(obj: dict, lineno: int) -> Tuple[int, int, str]:
    unknown = set(obj) - _HEADER_KEYS
    if unknown:
        raise DataError(f"unknown header key(s) {sorted(unknown)}", lineno)
    w, h, name = obj.get("grid_w"), obj.get("grid_h"), obj.get("name", "")
    if not (_is_int(w) and _is_int(h)):
        raise DataError("header grid_w/grid_h must be integers", lineno)
    if not isinstance(name, str):
        raise DataError("header name must be a string", lineno)
    return w, h, name


def _parse_record(obj: dict, lineno: int) -> Trajectory:
    unknown = set(obj) - _RECORD_KEYS
    if unknown:
        raise DataError(f"unknown key(s) {sorted(unknown)}", lineno)
    if "id" not in obj or "cells" not in obj:
        raise DataError("record needs 'id' and 'cells'", lineno)
    tid, cells, label = obj["id"], obj["cells"], obj.get("label")
    if not _is_int(tid):
        raise DataError("'id' must be an integer", lineno)
    if not isinstance(cells, list) or not all(_is_int(c) for c in cells):
        raise DataError(f"trajectory {tid}: 'cells' must be a list of integers", lineno)
    if label is not None:
        if not _is_int(label) or not 0 <= label <= 4:
            raise DataError(f"trajectory {tid}: label must be 0..4 or null", lineno)
    try:
        return Trajectory(tid, tuple(cells), None if label is None else ClassLabel(label))
    except DataError as exc:
        raise DataError(str(exc), lineno) from None


def load_dataset(path: PathLike, format: str = "jsonl") -> Dataset:
    """Read a dataset from a JSON Lines file.

    The first line may be a header ``{"grid_w", "grid_h", "name"}``. Without
    a header the grid is taken as a single row wide enough for the largest
    cell id, and the name defaults to the file stem.
    """
    if format != "jsonl":
        raise DataError(f"unsupported dataset format {format!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    header = None
    trajectories: List[Trajectory] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict):
            raise DataError("expected a JSON object", lineno)
        if "grid_w" in obj or "grid_h" in obj:
            if header is not None or trajectories:
                raise DataError("header must be the first line", lineno)
            header = _parse_header(obj, lineno)
            continue
        trajectories.append(_parse_record(obj, lineno))

    if header is None:
        max_cell = max((max(t.cells) for t in trajectories), default=0)
        header = (max_cell + 1, 1, path.stem)
    grid_w, grid_h, name = header
    return Dataset(grid_w, grid_h, trajectories, name)


def dataset_to_lines(ds: Dataset) -> List[str]:
    lines = [json.dumps({"grid_w": ds.grid_w, "grid_h": ds.grid_h, "name": ds.name})]
    for t in ds.trajectories:
        label = None if t.label is None else int(t.label)
        lines.append(json.dumps({"id": t.id, "cells": list(t.cells), "label": label}))
    return lines


def save_dataset(ds: Dataset, path: PathLike) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for line in dataset_to_lines(ds):
                fh.write(line)
                fh.write("\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

# Alternative normal route: a raised section of the top leg. Gives the normal
# class two sub-populations of slightly different length and cell set.
_VARIANT_FRAC = 0.5
_VARIANT_RISE = 1
# Per-end jitter: drop the end cell, keep it, or extend by one cell.
_END_JITTER = (-1, 0, 1)
_END_JITTER_P = (0.4, 0.2, 0.4)
# Local detours draw their segment length from [ceil(0.7 * nominal), nominal].
_SEVERITY_LO = 0.7
# Local detours rise at least this fraction of the route length off the leg.
_LD_EXTRA = 0.07
_LD_RISE_SPAN = 1
# Local shortcut chamfer radius lies in [ceil(0.8 * hi), hi], hi one below nominal.
_LS_LO = 0.8


@dataclass(frozen=True)
class GeneratorSpec:
    n: int = 1000
    probs: Tuple[float, ...] = (0.015, 0.022, 0.869, 0.091, 0.003)
    grid_w: int = 64
    grid_h: int = 64
    route_len: int = 60
    detour_frac: float = 0.1
    shortcut_frac: float = 0.25
    seed: int = 0
    name: str = "generated"

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if self.n < 0:
            raise ConfigError("n must be non-negative")
        if len(self.probs) != 5:
            raise ConfigError("probs needs one entry per class (GD, LD, NT, LS, GS)")
        if min(self.probs) < 0 or abs(sum(self.probs) - 1.0) > 1e-9:
            raise ConfigError(f"probs must be non-negative and sum to 1, got {self.probs}")
        if self.route_len < 4:
            raise ConfigError("route_len must be at least 4")
        if not (0 < self.detour_frac < 1 and 0 < self.shortcut_frac < 1):
            raise ConfigError("detour_frac and shortcut_frac must lie in (0, 1)")
        if self.grid_w <= 0 or self.grid_h <= 0:
            raise ConfigError("grid dimensions must be positive")


# Class mixtures and sizes of six taxi datasets (GD, LD, NT, LS, GS); NT is the remainder.
def _mix(gd, ld, ls, gs):
    return (gd, ld, round(1.0 - gd - ld - ls - gs, 6), ls, gs)


PRESETS: Dict[str, Tuple[int, Tuple[float, ...]]] = {
    "t1": (1093, _mix(0.015, 0.022, 0.091, 0.003)),
    "t2": (311, _mix(0.016, 0.013, 0.048, 0.006)),
    "t3": (1720, _mix(0.015, 0.012, 0.042, 0.003)),
    "t4": (425, _mix(0.005, 0.016, 0.028, 0.005)),
    "t5": (1409, _mix(0.015, 0.027, 0.121, 0.009)),
    "t6": (1567, _mix(0.013, 0.043, 0.154, 0.016)),
}


def preset_spec(name: str, seed: int = 0, **overrides) -> GeneratorSpec:
    try:
        n, probs = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    kwargs = dict(n=n, probs=probs, seed=seed, name=name)
    kwargs.update(overrides)
    return GeneratorSpec(**kwargs)


@dataclass(frozen=True)
class _Layout:
    """Geometry of the normal route and the ranges anomalies draw from.

    The normal route is an upside-down U: up a left leg of ``h`` steps, right
    along a top leg of ``w`` cells, down a right leg back to the start row.
    """

    route_len: int
    h: int
    w: int
    shared: Tuple[int, int]  # cells shared with the base at each end by GD/GS
    gd_width: Tuple[int, int]
    gd_rise: Tuple[int, int]
    ld_seg: Tuple[int, int]
    ld_extra: int
    ld_y: Tuple[int, int]
    ls_radius: Tuple[int, int]
    bump_x: Tuple[int, int]
    margin: int

    @classmethod
    def for_spec(cls, spec: GeneratorSpec) -> "_Layout":
        L = spec.route_len
        h = math.ceil(L / 4) + 3
        w = L - 1 - 2 * h
        # GS = chord across the bottom of the U; must stay <= L/2 even after +2 jitter.
        shared_hi = min(h - math.ceil(L / 4), int(0.1 * L))
        gd_width_lo = math.ceil((0.5 * L - 4 + 2) / 4)
        ld_nom = max(2, round(spec.detour_frac * L))
        ld_lo = max(1, math.ceil(_SEVERITY_LO * ld_nom))
        ld_extra = max(1, math.ceil(_LD_EXTRA * L))
        ls_hi = max(1, (round(spec.shortcut_frac * L) - 1) // 2 - 1)
        ls_lo = max(1, math.ceil(_LS_LO * ls_hi))
        b0 = w // 2 - 1
        layout = cls(
            route_len=L,
            h=h,
            w=w,
            shared=(2, shared_hi),
            gd_width=(gd_width_lo, gd_width_lo + 3),
            gd_rise=(2, 5),
            ld_seg=(ld_lo, ld_nom),
            ld_extra=ld_extra,
            ld_y=(shared_hi + 1, h - 2 - ld_nom),
            ls_radius=(ls_lo, ls_hi),
            bump_x=(b0, b0 + 2),
            margin=0,
        )
        problems = []
        if w < 7:
            problems.append("top leg too short")
        if shared_hi < 2:
            problems.append("no room for shared endpoint regions")
        if layout.ld_y[0] > layout.ld_y[1]:
            problems.append("legs too short for local detours")
        if ls_hi < 1:
            problems.append("shortcut_frac too small for a corner cut")
        # corner cuts must not reach the raised section of the alternative route
        if ls_hi + 1 > b0 - 2 or ls_hi > w - (b0 + 2) - 3 or ls_hi > h - shared_hi - 2:
            problems.append("corner cut radius does not fit the route")
        if problems:
            raise ConfigError(f"route_len={L} cannot host all classes: " + "; ".join(problems))
        side = max(layout.gd_width[1], _ld_rise_hi(layout)) + 1
        return cls(**{**layout.__dict__, "margin": side})

    def required_grid(self) -> Tuple[int, int]:
        width = 2 * self.margin + self.w + 1
        height = 1 + self.h + max(self.gd_rise[1], _VARIANT_RISE) + 1
        return width, height


def _ld_rise_hi(layout: _Layout) -> int:
    return max(math.ceil(layout.ld_seg[1] / 2), layout.ld_extra) + _LD_RISE_SPAN


def _base_route(lay: _Layout, variant: bool) -> List[Cell]:
    h, w = lay.h, lay.w
    path = [(0, y) for y in range(h + 1)]
    path += [(x, h) for x in range(1, w + 1)]
    path += [(w, y) for y in range(h - 1, -1, -1)]
    if variant:
        b0, b1 = lay.bump_x
        u = path.index((b0, h))
        v = path.index((b1, h))
        path = _bump(path, u, v, (0, 1), _VARIANT_RISE)
    return path


def _bump(path: List[Cell], u: int, v: int, normal: Cell, height: int) -> List[Cell]:
    """Replace ``path[u..v]`` by the same run pushed ``height`` cells along ``normal``."""
    nx, ny = normal
    (ax, ay), (bx, by) = path[u - 1], path[v + 1]
    up = [(ax + nx * t, ay + ny * t) for t in range(1, height + 1)]
    shifted = [(x + nx * height, y + ny * height) for x, y in path[u : v + 1]]
    down = [(bx + nx * t, by + ny * t) for t in range(height, 0, -1)]
    return path[:u] + up + shifted + down + path[v + 1 :]


def _chamfer(path: List[Cell], corner: int, q: int) -> List[Cell]:
    """Cut the corner at ``path[corner]`` diagonally, removing 2q+1 cells for q."""
    px, py = path[corner - q - 1]
    d1 = (path[corner - q][0] - px, path[corner - q][1] - py)
    sx, sy = path[corner + q + 1]
    d2 = (sx - path[corner + q][0], sy - path[corner + q][1])
    step = (d1[0] + d2[0], d1[1] + d2[1])
    cut = [(px + step[0] * t, py + step[1] * t) for t in range(1, q + 1)]
    return path[: corner - q] + cut + path[corner + q + 1 :]


def _jitter_ends(path: List[Cell], rng: np.random.Generator) -> List[Cell]:
    start, end = rng.choice(_END_JITTER, size=2, p=_END_JITTER_P)
    path = list(path)
    if start < 0:
        path = path[1:]
    elif start > 0:
        (x0, y0), (x1, y1) = path[0], path[1]
        path.insert(0, (2 * x0 - x1, 2 * y0 - y1))
    if end < 0:
        path = path[:-1]
    elif end > 0:
        (x0, y0), (x1, y1) = path[-1], path[-2]
        path.append((2 * x0 - x1, 2 * y0 - y1))
    return path


def _randint(rng: np.random.Generator, lo_hi: Tuple[int, int]) -> int:
    lo, hi = lo_hi
    return int(rng.integers(lo, hi + 1))


def _global_detour(lay: _Layout, rng: np.random.Generator) -> List[Cell]:
    h, w = lay.h, lay.w
    s = _randint(rng, lay.shared)
    g = _randint(rng, lay.gd_width)
    top = h + _randint(rng, lay.gd_rise)
    path = [(0, y) for y in range(s)]
    path += [(-x, s - 1) for x in range(1, g + 1)]
    path += [(-g, y) for y in range(s, top + 1)]
    path += [(x, top) for x in range(-g + 1, w + g + 1)]
    path += [(w + g, y) for y in range(top - 1, s - 2, -1)]
    path += [(x, s - 1) for x in range(w + g - 1, w, -1)]
    path += [(w, y) for y in range(s - 1, -1, -1)]
    return path


def _global_shortcut(lay: _Layout, rng: np.random.Generator) -> List[Cell]:
    s = _randint(rng, lay.shared)
    path = [(0, y) for y in range(s)]
    path += [(x, s - 1) for x in range(1, lay.w)]
    path += [(lay.w, y) for y in range(s - 1, -1, -1)]
    return path


def _local_detour(base: List[Cell], lay: _Layout, rng: np.random.Generator) -> List[Cell]:
    a = _randint(rng, lay.ld_seg)
    rise_lo = max(math.ceil(a / 2), lay.ld_extra)
    rise = _randint(rng, (rise_lo, rise_lo + _LD_RISE_SPAN))
    y0 = _randint(rng, (lay.ld_y[0], lay.ld_y[1]))
    if rng.random() < 0.5:
        u, v = base.index((0, y0)), base.index((0, y0 + a - 1))
        return _bump(base, u, v, (-1, 0), rise)
    u, v = base.index((lay.w, y0 + a - 1)), base.index((lay.w, y0))
    return _bump(base, u, v, (1, 0), rise)


def _local_shortcut(base: List[Cell], lay: _Layout, rng: np.random.Generator) -> List[Cell]:
    q = _randint(rng, lay.ls_radius)
    corner = (0, lay.h) if rng.random() < 0.5 else (lay.w, lay.h)
    return _chamfer(base, base.index(corner), q)


def generate(spec: GeneratorSpec) -> Dataset:
    """Draw a labelled synthetic dataset.

    Labels are i.i.d. draws from ``spec.probs``. Every trajectory starts
    from one of two normal routes (or a global route for GD/GS), gets its
    class-specific modification, then independent jitter of at most one
    cell at each end.
    """
    lay = _Layout.for_spec(spec)
    need_w, need_h = lay.required_grid()
    if spec.grid_w < need_w or spec.grid_h < need_h:
        raise ConfigError(
            f"grid {spec.grid_w}x{spec.grid_h} too small for route_len={spec.route_len}; "
            f"need at least {need_w}x{need_h}"
        )
    ox = (spec.grid_w - need_w) // 2 + lay.margin
    oy = (spec.grid_h - need_h) // 2 + 1

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed & 0xFFFFFFFFFFFFFFFF))
    labels = rng.choice(5, size=spec.n, p=spec.probs)
    trajectories = []
    for tid, label in enumerate(labels):
        label = ClassLabel(int(label))
        if label is ClassLabel.GD:
            path = _global_detour(lay, rng)
        elif label is ClassLabel.GS:
            path = _global_shortcut(lay, rng)
        else:
            base = _base_route(lay, rng.random() < _VARIANT_FRAC)
            if label is ClassLabel.LD:
                path = _local_detour(base, lay, rng)
            elif label is ClassLabel.LS:
                path = _local_shortcut(base, lay, rng)
            else:
                path = base
        path = _jitter_ends(path, rng)
        cells = tuple((oy + y) * spec.grid_w + (ox + x) for x, y in path)
        trajectories.append(Trajectory(tid, cells, label))
    return Dataset(spec.grid_w, spec.grid_h, trajectories, spec.name)


def base_route_cells(spec: GeneratorSpec, variant: bool = False) -> Tuple[int, ...]:
    """Cell ids of an un-jittered normal route, as placed by ``generate``."""
    lay = _Layout.for_spec(spec)
    need_w, need_h = lay.required_grid()
    ox = (spec.grid_w - need_w) // 2 + lay.margin
    oy = (spec.grid_h - need_h) // 2 + 1
    return tuple((oy + y) * spec.grid_w + (ox + x) for x, y in _base_route(lay, variant))
