# fda.py
# Discretely observed curves, trapezoid quadrature, RKHS Gram assembly and the curve CSV formats.

import csv
import io
import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import requests

from .errors import ArgumentError, CsvFormatError
from .kernels import KernelSpec, check_domain, gram_cross

logger = logging.getLogger(__name__)

CURVE_FIELDS = ["curve_id", "t", "x"]
RESPONSE_FIELDS = ["curve_id", "y", "task_id"]
HTTP_TIMEOUT = 20


@dataclass(frozen=True, eq=False)
class Curve:
    grid: np.ndarray
    values: np.ndarray
    curve_id: str = ""

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if grid.size < 2:
            raise ArgumentError(f"curve {self.curve_id!r} needs at least 2 design points, got {grid.size}")
        if grid.size != values.size:
            raise ArgumentError(f"curve {self.curve_id!r}: {grid.size} design points but {values.size} values")
        if not np.all(np.isfinite(grid)) or not np.all(np.diff(grid) > 0):
            raise ArgumentError(f"curve {self.curve_id!r}: design points must be finite and strictly ascending")
        if not np.all(np.isfinite(values)):
            raise ArgumentError(f"curve {self.curve_id!r}: values must be finite")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def weights(self) -> np.ndarray:
        return quad_weights(self.grid)


@dataclass(frozen=True, eq=False)
class TaskDataset:
    curves: Tuple[Curve, ...]
    responses: np.ndarray
    task_id: str = "target"

    def __post_init__(self):
        curves = tuple(self.curves)
        responses = np.asarray(self.responses, dtype=float).ravel()
        if len(curves) < 1:
            raise ArgumentError(f"task {self.task_id!r} has no curves")
        if len(curves) != responses.size:
            raise ArgumentError(f"task {self.task_id!r}: {len(curves)} curves but {responses.size} responses")
        if not np.all(np.isfinite(responses)):
            raise ArgumentError(f"task {self.task_id!r}: responses must be finite")
        responses.setflags(write=False)
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "responses", responses)

    def __len__(self) -> int:
        return len(self.curves)

    def subset(self, indices: Iterable[int], task_id: Optional[str] = None) -> "TaskDataset":
        idx = [int(i) for i in indices]
        return TaskDataset(tuple(self.curves[i] for i in idx), self.responses[idx], task_id or self.task_id)

    def with_responses(self, responses) -> "TaskDataset":
        return TaskDataset(self.curves, responses, self.task_id)


def concat_tasks(tasks: Sequence[TaskDataset]) -> Tuple[List[Curve], np.ndarray]:
    curves: List[Curve] = []
    ys = []
    for task in tasks:
        curves.extend(task.curves)
        ys.append(task.responses)
    if not curves:
        raise ArgumentError("no curves in the task list")
    return curves, np.concatenate(ys)


def as_task_list(data) -> List[TaskDataset]:
    if isinstance(data, TaskDataset):
        return [data]
    tasks = list(data)
    if not tasks or not all(isinstance(t, TaskDataset) for t in tasks):
        raise ArgumentError("expected a TaskDataset or a non-empty list of TaskDataset")
    return tasks


# --- quadrature -------------------------------------------------------

def quad_weights(grid) -> np.ndarray:
    """Trapezoid weights; they sum to grid[-1] - grid[0]."""
    t = np.asarray(grid, dtype=float).ravel()
    if t.size < 2:
        raise ArgumentError(f"quadrature needs at least 2 points, got {t.size}")
    dt = np.diff(t)
    w = np.empty_like(t)
    w[0] = dt[0] / 2.0
    w[-1] = dt[-1] / 2.0
    w[1:-1] = (dt[:-1] + dt[1:]) / 2.0
    return w


def l2_inner_on_grid(a, b, weights) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if not a.size == b.size == w.size:
        raise ArgumentError(f"length mismatch: {a.size}, {b.size}, {w.size}")
    return float(np.sum(w * a * b))


def interpolate(values, grid, new_grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    new_grid = np.asarray(new_grid, dtype=float)
    if grid.shape == new_grid.shape and np.array_equal(grid, new_grid):
        return np.asarray(values, dtype=float).copy()
    return np.interp(new_grid, grid, np.asarray(values, dtype=float))


# --- kernel sections and Gram matrices ---------------------------------

def _group_by_grid(curves: Sequence[Curve]) -> List[Tuple[np.ndarray, List[int]]]:
    groups: Dict[Tuple[int, bytes], Tuple[np.ndarray, List[int]]] = {}
    for i, c in enumerate(curves):
        key = (c.grid.size, c.grid.tobytes())
        if key not in groups:
            groups[key] = (c.grid, [])
        groups[key][1].append(i)
    return list(groups.values())


def _weighted_rows(curves: Sequence[Curve], idx: List[int], grid: np.ndarray) -> np.ndarray:
    w = quad_weights(grid)
    return np.vstack([curves[i].values * w for i in idx])


def kernel_section_inner(curve: Curve, kernel: KernelSpec, t: float) -> float:
    """sum_m w_m x_m K(t_m, t): quadrature of the integral of X(s) K(s, t) ds."""
    t_arr = check_domain(kernel, t)
    col = gram_cross(kernel, curve.grid, t_arr)[:, 0]
    return float(np.sum(curve.weights * curve.values * col))


def kernel_sections(curves: Sequence[Curve], kernel: KernelSpec, grid) -> np.ndarray:
    """Matrix S[i, g] = <X_i, K_{grid[g]}> by quadrature."""
    grid = np.asarray(grid, dtype=float).ravel()
    out = np.empty((len(curves), grid.size))
    for cgrid, idx in _group_by_grid(curves):
        out[idx] = _weighted_rows(curves, idx, cgrid) @ gram_cross(kernel, cgrid, grid)
    return out


def cross_gram(curves_a: Sequence[Curve], curves_b: Sequence[Curve], kernel: KernelSpec) -> np.ndarray:
    """G[i, j] = sum_m sum_m' w_m x_im K(t_m, t_m') x_jm' w_m' for curves on any grids."""
    if len(curves_a) == 0 or len(curves_b) == 0:
        raise ArgumentError("cross_gram needs non-empty curve lists")
    groups_b = _group_by_grid(curves_b)
    rows_b = [_weighted_rows(curves_b, idx, g) for g, idx in groups_b]
    out = np.empty((len(curves_a), len(curves_b)))
    for ga, idx_a in _group_by_grid(curves_a):
        rows_a = _weighted_rows(curves_a, idx_a, ga)
        for (gb, idx_b), wb in zip(groups_b, rows_b):
            out[np.ix_(idx_a, idx_b)] = rows_a @ gram_cross(kernel, ga, gb) @ wb.T
    return out


def rkhs_gram(tasks, kernel: KernelSpec) -> np.ndarray:
    """Sigma over the concatenated curves of `tasks`, exactly symmetric."""
    curves, _ = concat_tasks(as_task_list(tasks))
    g = cross_gram(curves, curves, kernel)
    return 0.5 * (g + g.T)


# --- CSV formats --------------------------------------------------------

def get_csv_rows(source: str, timeout: int = HTTP_TIMEOUT) -> Tuple[List[str], List[Dict[str, str]]]:
    """Rows of a CSV given as a local path or an http(s) URL."""
    if source.startswith(("http://", "https://")):
        r = requests.get(source, timeout=timeout)
        r.raise_for_status()
        text = r.text
    else:
        with open(source, newline="", encoding="utf-8") as f:
            text = f.read()
    reader = csv.DictReader(io.StringIO(text))
    rows = list(reader)
    return list(reader.fieldnames or []), rows


def _require_columns(fieldnames: List[str], required: List[str], source: str):
    missing = [c for c in required if c not in fieldnames]
    if missing:
        raise CsvFormatError(f"{source}: missing column(s) {missing}; header is {fieldnames}", row=1,
                             column=missing[0])


def _parse_float(raw: Optional[str], row: int, column: str) -> float:
    try:
        v = float((raw or "").strip())
    except ValueError:
        raise CsvFormatError(f"could not parse {raw!r} as a number", row=row, column=column) from None
    if not np.isfinite(v):
        raise CsvFormatError(f"non-finite value {raw!r}", row=row, column=column)
    return v


def write_csv_string(fieldnames: List[str], rows: Iterable[Dict[str, object]]) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: r.get(k, "") for k in fieldnames})
    return buf.getvalue()


def fmt(v: float) -> str:
    # repr round-trips a float exactly
    return repr(float(v))


def read_tasks(curves_source: str, responses_source: str) -> List[TaskDataset]:
    """Parse the long-form curve CSV and the response CSV into one TaskDataset per task_id.

    Tasks come out in order of first appearance in the response file, curves in
    row order. Row numbers in errors count the header as row 1.
    """
    cfields, crows = get_csv_rows(curves_source)
    _require_columns(cfields, CURVE_FIELDS, curves_source)
    points: Dict[str, List[Tuple[float, float, int]]] = {}
    for n, r in enumerate(crows, start=2):
        cid = (r.get("curve_id") or "").strip()
        if not cid:
            raise CsvFormatError("empty curve_id", row=n, column="curve_id")
        points.setdefault(cid, []).append((_parse_float(r.get("t"), n, "t"), _parse_float(r.get("x"), n, "x"), n))

    rfields, rrows = get_csv_rows(responses_source)
    _require_columns(rfields, RESPONSE_FIELDS, responses_source)
    by_task: Dict[str, Tuple[List[Curve], List[float]]] = {}
    seen = set()
    for n, r in enumerate(rrows, start=2):
        cid = (r.get("curve_id") or "").strip()
        tid = (r.get("task_id") or "").strip()
        if not tid:
            raise CsvFormatError("empty task_id", row=n, column="task_id")
        if cid not in points:
            raise CsvFormatError(f"curve_id {cid!r} has no rows in {curves_source}", row=n, column="curve_id")
        if cid in seen:
            raise CsvFormatError(f"duplicate curve_id {cid!r}", row=n, column="curve_id")
        seen.add(cid)
        y = _parse_float(r.get("y"), n, "y")
        pts = sorted(points[cid])
        t = [p[0] for p in pts]
        if any(b <= a for a, b in zip(t, t[1:])):
            dup_row = next(q[2] for p, q in zip(pts, pts[1:]) if q[0] <= p[0])
            raise CsvFormatError(f"repeated design point in curve {cid!r}", row=dup_row, column="t")
        if len(t) < 2:
            raise CsvFormatError(f"curve {cid!r} has fewer than 2 design points", row=pts[0][2], column="t")
        curves, ys = by_task.setdefault(tid, ([], []))
        curves.append(Curve(np.array(t), np.array([p[1] for p in pts]), cid))
        ys.append(y)

    unused = sorted(set(points) - seen)
    if unused:
        logger.warning("%d curve(s) without a response ignored, e.g. %s", len(unused), unused[0])
    if not by_task:
        raise CsvFormatError(f"{responses_source}: no responses")
    return [TaskDataset(tuple(c), np.array(y), tid) for tid, (c, y) in by_task.items()]


def tasks_to_csv(tasks: Sequence[TaskDataset]) -> Tuple[str, str]:
    """(curves_csv, responses_csv) strings; curve ids are made unique per task when missing."""
    crows: List[Dict[str, object]] = []
    rrows: List[Dict[str, object]] = []
    for task in tasks:
        for i, (c, y) in enumerate(zip(task.curves, task.responses)):
            cid = c.curve_id or f"{task.task_id}_{i:05d}"
            crows.extend({"curve_id": cid, "t": fmt(t), "x": fmt(x)} for t, x in zip(c.grid, c.values))
            rrows.append({"curve_id": cid, "y": fmt(y), "task_id": task.task_id})
    return write_csv_string(CURVE_FIELDS, crows), write_csv_string(RESPONSE_FIELDS, rrows)


def write_tasks(tasks: Sequence[TaskDataset], directory: str,
                curves_name: str = "curves.csv", responses_name: str = "responses.csv") -> List[str]:
    os.makedirs(directory, exist_ok=True)
    curves_csv, responses_csv = tasks_to_csv(tasks)
    paths = [os.path.join(directory, curves_name), os.path.join(directory, responses_name)]
    for path, text in zip(paths, (curves_csv, responses_csv)):
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write(text)
    return paths
