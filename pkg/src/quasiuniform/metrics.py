"""Fill distance, separation radius, mesh ratio and the incremental distance field."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .geometry import (
    ATOL,
    Ball,
    Domain,
    FiniteSet,
    GridInfo,
    Hypercube,
    Norm,
    as_point,
    as_points,
    distances_to,
    grid_covering_radius,
    vector_norm,
)

THREADS_ENV = "QUASIUNIFORM_THREADS"
_PARALLEL_MIN = 65_536


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
        if value < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
        return value
    return os.cpu_count() or 1


@dataclass(eq=False)
class Design:
    """Ordered, nested point design; ``points[:n]`` is the n-point design."""

    points: np.ndarray
    domain: Domain
    norm: Norm = Norm.L2

    def __post_init__(self):
        self.norm = Norm.parse(self.norm)
        self.points = as_points(self.points, self.domain.dim)
        n = len(self.points)
        if n and np.unique(self.points, axis=0).shape[0] != n:
            raise ValueError("design points must be distinct")
        outside = _outside(self.points, self.domain)
        if outside is not None:
            raise ValueError(f"design point {outside.tolist()} lies outside the domain")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.domain.dim

    def prefix(self, n: int) -> "Design":
        if not 0 <= n <= len(self):
            raise ValueError(f"prefix length {n} outside 0..{len(self)}")
        return Design(self.points[:n].copy(), self.domain, self.norm)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Design):
            return NotImplemented
        return (
            self.norm is other.norm
            and self.points.shape == other.points.shape
            and bool(np.array_equal(self.points, other.points))
        )


def _outside(points: np.ndarray, domain: Domain) -> Optional[np.ndarray]:
    if len(points) == 0:
        return None
    if isinstance(domain, Hypercube):
        bad = np.any((points < domain.lower - ATOL) | (points > domain.upper + ATOL), axis=1)
    elif isinstance(domain, Ball):
        bad = distances_to(points, domain.center, Norm.L2) > domain.radius + ATOL
    else:
        members = {row.tobytes() for row in domain.points}
        bad = np.array([row.tobytes() not in members for row in points])
    return points[np.argmax(bad)] if bad.any() else None


class DistanceField:
    """Nearest-design-point distance for every candidate, updated per insertion.

    Updates are done in place; call :meth:`copy` for a snapshot. The per-candidate
    pass is split into index-ordered chunks, so results do not depend on the
    number of worker threads.
    """

    def __init__(self, candidates: Union[FiniteSet, np.ndarray], norm: Norm = Norm.L2,
                 threads: Optional[int] = None):
        pts = candidates.points if isinstance(candidates, FiniteSet) else as_points(candidates)
        self.points = pts
        self.norm = Norm.parse(norm)
        self._cols = np.ascontiguousarray(pts.T)
        n = pts.shape[0]
        self.min_dist = np.full(n, np.inf)
        self.argmin_index = np.full(n, -1, dtype=np.int64)
        self.size = 0
        self.threads = thread_count() if threads is None else threads
        self.last = np.empty(n)

    def __len__(self) -> int:
        return self.min_dist.size

    def copy(self) -> "DistanceField":
        other = DistanceField.__new__(DistanceField)
        other.__dict__.update(self.__dict__)
        other.min_dist = self.min_dist.copy()
        other.argmin_index = self.argmin_index.copy()
        other.last = self.last.copy()
        return other

    def _update(self, x: np.ndarray, lo: int, hi: int) -> None:
        # same operation order as distances_to, with preallocated buffers
        out = self.last[lo:hi]
        tmp = np.empty(hi - lo)
        cols = self._cols
        np.subtract(cols[0, lo:hi], x[0], out=tmp)
        if self.norm is Norm.L2:
            np.multiply(tmp, tmp, out=out)
            for k in range(1, x.shape[0]):
                np.subtract(cols[k, lo:hi], x[k], out=tmp)
                np.multiply(tmp, tmp, out=tmp)
                out += tmp
            np.sqrt(out, out=out)
        else:
            np.abs(tmp, out=out)
            for k in range(1, x.shape[0]):
                np.subtract(cols[k, lo:hi], x[k], out=tmp)
                np.abs(tmp, out=tmp)
                if self.norm is Norm.L1:
                    out += tmp
                else:
                    np.maximum(out, tmp, out=out)
        current = self.min_dist[lo:hi]
        np.putmask(self.argmin_index[lo:hi], out < current, self.size)
        np.minimum(current, out, out=current)

    def insert(self, x) -> "DistanceField":
        x = as_point(x, self.points.shape[1])
        n = len(self)
        workers = min(self.threads, max(1, n // _PARALLEL_MIN))
        if workers <= 1:
            self._update(x, 0, n)
        else:
            bounds = np.linspace(0, n, workers + 1).astype(int)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(lambda i: self._update(x, bounds[i], bounds[i + 1]), range(workers)))
        self.size += 1
        return self

    def max(self) -> float:
        return float(self.min_dist.max())


def _pairwise_min_half(points: np.ndarray, norm: Norm) -> float:
    best = math.inf
    for i in range(1, len(points)):
        best = min(best, float(distances_to(points[:i], points[i], norm).min()))
    return best / 2


def separation_radius(design: Design) -> float:
    """Half the smallest pairwise distance (O(n^2) reference)."""
    if len(design) < 2:
        raise ValueError("separation radius needs at least two points")
    return _pairwise_min_half(design.points, design.norm)


def separation_radii(design: Design) -> np.ndarray:
    """SR of every prefix X_2..X_n via SR_{n+1} = min(SR_n, min_i |x_{n+1} - x_i| / 2)."""
    if len(design) < 2:
        raise ValueError("separation radius needs at least two points")
    out = np.empty(len(design) - 1)
    sr = math.inf
    for i in range(1, len(design)):
        sr = min(sr, float(distances_to(design.points[:i], design.points[i], design.norm).min()) / 2)
        out[i - 1] = sr
    return out


def fill_distance_finite(design: Design, eval_set: Union[FiniteSet, np.ndarray],
                         field_: Optional[DistanceField] = None) -> float:
    if field_ is not None:
        return field_.max()
    pts = eval_set.points if isinstance(eval_set, FiniteSet) else as_points(eval_set)
    if pts.shape[1] != design.dim:
        raise ValueError(f"dimension mismatch: {pts.shape[1]} vs {design.dim}")
    if len(design) == 0:
        raise ValueError("fill distance needs a nonempty design")
    f = DistanceField(pts, design.norm)
    for p in design.points:
        f.insert(p)
    return f.max()


def fill_distance_interval(design: Design, lo: float, hi: float) -> float:
    """Exact fill distance of a 1-d design over [lo, hi]."""
    if design.dim != 1:
        raise ValueError("interval fill distance needs a 1-d design")
    if len(design) == 0:
        raise ValueError("fill distance needs a nonempty design")
    x = np.sort(design.points[:, 0])
    if x[0] < lo - ATOL or x[-1] > hi + ATOL:
        raise ValueError("design points must lie in the interval")
    gaps = np.diff(x) / 2 if x.size > 1 else np.zeros(1)
    return float(max(x[0] - lo, hi - x[-1], gaps.max()))


def fill_distance_bounds(design: Design, eval_set, eval_cr: float) -> Tuple[float, float]:
    if eval_cr < 0:
        raise ValueError("eval_cr must be nonnegative")
    lower = fill_distance_finite(design, eval_set)
    return lower, lower + eval_cr


def mesh_ratio(sr: float, cr: float) -> float:
    if not sr > 0:
        raise ValueError("mesh ratio needs a positive separation radius")
    return cr / sr


def cross_distances(queries: np.ndarray, points: np.ndarray, norm: Norm) -> np.ndarray:
    """(m, n) matrix of distances, accumulated per coordinate like :func:`distances_to`."""
    diff = queries[:, None, 0] - points[None, :, 0]
    if norm is Norm.L2:
        acc = diff * diff
        for k in range(1, queries.shape[1]):
            diff = queries[:, None, k] - points[None, :, k]
            acc += diff * diff
        return np.sqrt(acc, out=acc)
    acc = np.abs(diff)
    for k in range(1, queries.shape[1]):
        diff = np.abs(queries[:, None, k] - points[None, :, k])
        if norm is Norm.L1:
            acc += diff
        else:
            np.maximum(acc, diff, out=acc)
    return acc


def _corner_offsets(d: int) -> np.ndarray:
    return np.array([[(mask >> k) & 1 for k in range(d)] for mask in range(2**d)], dtype=float)


class CellBound:
    """Rigorous upper bound on the continuous fill distance over a gridded box.

    On a box cell the distance to a fixed design point is convex, so its maximum
    is at a corner. Hence sup over the cell of the nearest-point distance is at most
    min_i max_corners |c - x_i|. The bound is kept per cell and updated from the
    distances of the grid points to each newly inserted point.
    """

    def __init__(self, grid: GridInfo):
        self.grid = grid
        self.shape = grid.shape
        self.bound = np.full(tuple(s - 1 for s in self.shape), np.inf)

    def insert(self, dist_to_new: np.ndarray) -> None:
        g = dist_to_new.reshape(self.shape)
        d = g.ndim
        corner = None
        for mask in range(2**d):
            idx = tuple(slice(1, None) if (mask >> k) & 1 else slice(None, -1) for k in range(d))
            view = g[idx]
            corner = view.copy() if corner is None else np.maximum(corner, view, out=corner)
        np.minimum(self.bound, corner, out=self.bound)

    def max(self) -> float:
        return float(self.bound.max())

    def refine(self, design_points: np.ndarray, norm: Norm, lower: float, tol: float,
               grid_values: Optional[np.ndarray] = None, max_depth: int = 48,
               max_cells: Optional[int] = None, near: int = 24) -> Tuple[float, float]:
        """Bisect cells whose bound exceeds ``lower + tol``; return improved (lower, upper).

        Each cell only consults its ``near`` closest design points (by distance
        from the cell center). Dropping points from the min-max can only loosen
        the upper bound; a corner raises the lower bound only when its nearest
        point provably lies in that subset. For L2, cells lying inside a
        certified neighbourhood of a grid maximizer (see :func:`local_max_radius`)
        are discharged without further bisection. Stops early, with a looser but
        still valid upper bound, once the depth or cell budget runs out.
        """
        flat = self.bound.ravel()
        hot = flat > lower + tol
        if not hot.any():
            return lower, max(float(flat.max()), lower)
        upper = float(flat[~hot].max()) if (~hot).any() else -math.inf
        d = design_points.shape[1]
        h = self.grid.step.copy()
        cells = self.grid.box.lower + np.argwhere(self.bound > lower + tol) * h
        pending = flat[hot]
        balls = None
        if norm is Norm.L2 and grid_values is not None:
            balls = self._certified_balls(grid_values, design_points, lower)
            cells, pending = _discharge(cells, pending, h, balls)
        offsets = _corner_offsets(d)
        if max_cells is None:
            max_cells = 4096 * 2**d
        for _ in range(max_depth):
            if cells.shape[0] == 0:
                return lower, max(upper, lower)
            if cells.shape[0] * 2**d > max_cells:
                break
            h = h / 2
            children = (cells[:, None, :] + offsets[None, :, :] * h).reshape(-1, d)
            lower, bound = self._bound_cells(children, h, design_points, norm, lower, near)
            keep = bound > lower + tol
            if (~keep).any():
                upper = max(upper, float(bound[~keep].max()))
            cells, pending = children[keep], bound[keep]
            if balls is not None:
                cells, pending = _discharge(cells, pending, h, balls)
        if cells.shape[0] == 0:
            return lower, max(upper, lower)
        return lower, max(upper, float(pending.max()), lower)

    def _certified_balls(self, grid_values, design_points, lower):
        grid_pts = _grid_points(self.grid, np.flatnonzero(grid_values >= lower))
        centers, radii, cache = [], [], {}
        for x in grid_pts:
            r = local_max_radius(x, design_points, self.grid.box, lower, cache)
            if r > 0:
                centers.append(x)
                radii.append(r)
        if not centers:
            return None
        return np.array(centers), np.array(radii)

    @staticmethod
    def _bound_cells(cells, h, design_points, norm, lower, near):
        m, d = cells.shape
        offsets = _corner_offsets(d)
        radius = vector_norm(h / 2, norm)
        centers = cells + h / 2
        k = min(near, design_points.shape[0])
        best = np.full(m, np.inf)
        for lo in range(0, m, 4096):
            hi = min(m, lo + 4096)
            cdist = cross_distances(centers[lo:hi], design_points, norm)
            if k < design_points.shape[0]:
                part = np.argpartition(cdist, k, axis=1)
                idx, cutoff = part[:, :k], np.take_along_axis(cdist, part[:, k:k + 1], axis=1)[:, 0]
            else:
                idx = np.broadcast_to(np.arange(k), (hi - lo, k))
                cutoff = np.full(hi - lo, np.inf)
            sub = design_points[idx]
            corners = cells[lo:hi, None, :] + offsets[None, :, :] * h
            diff = corners[:, :, None, :] - sub[:, None, :, :]
            if norm is Norm.L2:
                dist = np.sqrt((diff * diff).sum(axis=3))
            elif norm is Norm.L1:
                dist = np.abs(diff).sum(axis=3)
            else:
                dist = np.abs(diff).max(axis=3)
            best[lo:hi] = dist.max(axis=1).min(axis=1)
            nearest = dist.min(axis=2)
            # points outside the subset are at least cutoff - radius from every corner
            sure = nearest <= (cutoff - radius)[:, None]
            if sure.any():
                lower = max(lower, float(nearest[sure].max()))
        return lower, best


def _grid_points(grid: GridInfo, flat_index: np.ndarray) -> np.ndarray:
    idx = np.stack(np.unravel_index(flat_index, grid.shape), axis=1)
    return grid.box.lower + idx * grid.step


def _discharge(cells, pending, h, balls):
    """Drop cells contained in a certified ball (their sup is the lower bound)."""
    if balls is None or cells.shape[0] == 0:
        return cells, pending
    centers, radii = balls
    half = float(np.sqrt(np.sum((h / 2) ** 2)))
    inside = np.zeros(cells.shape[0], dtype=bool)
    for lo in range(0, cells.shape[0], 4096):
        mid = cells[lo:lo + 4096] + h / 2
        dist = cross_distances(mid, centers, Norm.L2)
        inside[lo:lo + 4096] = np.any(dist + half < radii[None, :] * (1 - 1e-9), axis=1)
    return cells[~inside], pending[~inside]


def local_max_radius(x, design_points: np.ndarray, box: Hypercube, value: float,
                     cache: Optional[dict] = None, atol: float = 1e-12) -> float:
    """Radius of a ball around ``x`` on which the L2 fill function stays below ``value``.

    ``x`` must be a point of the box where the nearest-design-point distance equals
    ``value``. Let w_i = x_i - x over the design points at that distance, mirrored
    across every box face through x (mirroring does not change distances inside
    the box). If the origin lies inside the convex hull of the w_i, with inradius
    c, then for |v| < 2c the nearest-point distance at x + v satisfies
    f^2 <= value^2 + |v|^2 - 2 c |v| < value^2. Returns 0 when no certificate exists.
    """
    from scipy.spatial import ConvexHull, QhullError

    dist = distances_to(design_points, x, Norm.L2)
    active = design_points[np.abs(dist - value) <= atol] - x
    if active.shape[0] == 0:
        return 0.0
    d = x.size
    faces = [k for k in range(d) if x[k] == box.lower[k] or x[k] == box.upper[k]]
    w = active
    for k in faces:
        mirrored = w.copy()
        mirrored[:, k] = -mirrored[:, k]
        w = np.vstack([w, mirrored])
    w = np.unique(w, axis=0)
    key = w.tobytes()
    if cache is not None and key in cache:
        return cache[key]
    radius = 0.0
    if w.shape[0] > d:
        try:
            hull = ConvexHull(w)
            offsets = -hull.equations[:, -1]
            if np.all(offsets > 1e-12):
                radius = 2 * float(offsets.min())
        except QhullError:
            radius = 0.0
    if cache is not None:
        cache[key] = radius
    return radius


@dataclass
class TraceRow:
    n: int
    sr: float
    cr_lower: float
    cr_upper: float

    @property
    def mr_lower(self) -> float:
        return mesh_ratio(self.sr, self.cr_lower)

    @property
    def mr_upper(self) -> float:
        return mesh_ratio(self.sr, self.cr_upper)

    @property
    def exact(self) -> bool:
        return self.cr_lower == self.cr_upper

    @property
    def mr(self) -> Optional[float]:
        return self.mr_lower if self.exact else None


TRACE_COLUMNS = ("n", "sr", "cr_lower", "cr_upper", "mr_lower", "mr_upper")


@dataclass
class MetricsTrace:
    rows: List[TraceRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[TraceRow]:
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def append(self, n: int, sr: float, cr_lower: float, cr_upper: float) -> None:
        self.rows.append(TraceRow(int(n), float(sr), float(cr_lower), float(max(cr_lower, cr_upper))))

    def at(self, n: int) -> TraceRow:
        for row in self.rows:
            if row.n == n:
                return row
        raise KeyError(n)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self, stream: Optional[TextIO] = None) -> str:
        buf = io.StringIO()
        buf.write(",".join(TRACE_COLUMNS) + "\n")
        for r in self.rows:
            vals = [r.sr, r.cr_lower, r.cr_upper, r.mr_lower, r.mr_upper]
            buf.write(str(r.n) + "," + ",".join(f"{v:.17g}" for v in vals) + "\n")
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text

    @classmethod
    def from_csv(cls, text: Union[str, TextIO]) -> "MetricsTrace":
        stream = io.StringIO(text) if isinstance(text, str) else text
        reader = csv.DictReader(stream)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        trace = cls()
        for rec in reader:
            trace.append(int(rec["n"]), float(rec["sr"]), float(rec["cr_lower"]), float(rec["cr_upper"]))
        return trace


CR_BOUNDS = ("sandwich", "cells", "refined")
REFINE_TOL = 1e-11


class TraceBuilder:
    """Accumulates SR and CR bounds as points are inserted one at a time.

    ``eval_set`` supplies the lower bound on CR. The upper bound starts from the
    sandwich ``lower + eval_cr``. When the evaluation set is a full grid of the
    domain box, ``cr_bound="cells"`` tightens it with :class:`CellBound` and
    ``"refined"`` also bisects the cells that still exceed the lower bound by more
    than ``refine_tol``. Refinement is exact in practice but costly in d >= 3. CR of nested
    designs never increases, so the previous row's upper bound is carried over.
    With ``eval_cr = 0`` the evaluation set is the domain itself and CR is exact.
    """

    def __init__(self, eval_set: FiniteSet, eval_cr: Optional[float], norm: Norm,
                 cr_bound: str = "refined", threads: Optional[int] = None,
                 field_: Optional[DistanceField] = None, refine_tol: float = REFINE_TOL):
        if cr_bound not in CR_BOUNDS:
            raise ValueError(f"unknown cr_bound {cr_bound!r}; expected one of {CR_BOUNDS}")
        self.norm = norm
        self.field = field_ if field_ is not None else DistanceField(eval_set, norm, threads)
        self._shared = field_ is not None
        self.eval_cr = math.inf if eval_cr is None else float(eval_cr)
        self.cells = None
        if cr_bound != "sandwich" and eval_set.grid is not None and 0 < self.eval_cr < math.inf:
            self.cells = CellBound(eval_set.grid)
        self.refine_tol = refine_tol if cr_bound == "refined" else None
        self.points: List[np.ndarray] = []
        self.sr = math.inf
        self.lower = math.inf
        self.upper = math.inf
        self.trace = MetricsTrace()

    def insert(self, x: np.ndarray) -> Optional[TraceRow]:
        if self.points:
            prev = np.asarray(self.points)
            self.sr = min(self.sr, float(distances_to(prev, x, self.norm).min()) / 2)
        self.points.append(np.asarray(x, dtype=float))
        if not self._shared:
            self.field.insert(x)
        lower = self.field.max()
        upper = min(self.upper, lower + self.eval_cr)
        if self.cells is not None:
            self.cells.insert(self.field.last)
            upper = min(upper, self.cells.max())
            if self.refine_tol is not None and upper - lower > self.refine_tol:
                lo, up = self.cells.refine(np.asarray(self.points), self.norm, lower, self.refine_tol,
                                           grid_values=self.field.min_dist)
                lower, upper = max(lower, lo), min(upper, up)
        self.lower = min(self.lower, lower)
        self.upper = max(upper, self.lower)
        if len(self.points) >= 2:
            self.trace.append(len(self.points), self.sr, self.lower, self.upper)
            return self.trace.rows[-1]
        return None


def default_eval(domain: Domain, norm: Norm) -> Tuple[FiniteSet, float]:
    if isinstance(domain, FiniteSet):
        return domain, 0.0
    raise ValueError("an evaluation set is required for continuous domains")


def trace_for_design(design: Design, eval_set: Optional[FiniteSet] = None,
                     eval_cr: Optional[float] = None, cr_bound: str = "refined") -> MetricsTrace:
    """Recompute the metrics trace of an existing design against an evaluation set."""
    if eval_set is None:
        eval_set, eval_cr = default_eval(design.domain, design.norm)
    if eval_cr is None and eval_set.grid is not None:
        eval_cr = grid_covering_radius(eval_set.grid, design.norm)
    builder = TraceBuilder(eval_set, eval_cr, design.norm, cr_bound=cr_bound)
    for p in design.points:
        builder.insert(p)
    return builder.trace


def trace_for_interval(design: Design, lo: Optional[float] = None,
                       hi: Optional[float] = None) -> MetricsTrace:
    """Exact trace of a 1-d design over [lo, hi] (defaults to the design's box)."""
    if design.dim != 1:
        raise ValueError("interval trace needs a 1-d design")
    if lo is None or hi is None:
        if not isinstance(design.domain, Hypercube):
            raise ValueError("pass lo and hi for a non-box domain")
        lo, hi = float(design.domain.lower[0]), float(design.domain.upper[0])
    radii = separation_radii(design) if len(design) > 1 else []
    trace = MetricsTrace()
    for n, sr in enumerate(radii, start=2):
        cr = fill_distance_interval(design.prefix(n), lo, hi)
        trace.append(n, float(sr), cr, cr)
    return trace
