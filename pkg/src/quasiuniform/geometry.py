"""Norms, domains and the volume / distance primitives used everywhere else."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

GRID_POINT_CAP = 10**7
ATOL = 1e-12


class Norm(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    @classmethod
    def parse(cls, value: Union[str, "Norm"]) -> "Norm":
        if isinstance(value, Norm):
            return value
        key = str(value).strip().lower().replace("∞", "inf")
        aliases = {"1": "l1", "2": "l2", "inf": "linf", "max": "linf", "euclidean": "l2"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown norm {value!r}; expected one of l1, l2, linf") from None


def as_point(x, dim: Optional[int] = None) -> np.ndarray:
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"a point must be a non-empty 1-d sequence, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point coordinates must be finite")
    if dim is not None and p.size != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {p.size}")
    return p


def as_points(xs, dim: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(xs, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected an (n, d) array of points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {arr.shape[1]}")
    return arr


def distances_to(points: np.ndarray, x: np.ndarray, norm: Norm) -> np.ndarray:
    """Distances from every row of ``points`` to ``x``.

    Coordinates are accumulated left to right in a fixed order so that the same
    pair of points always yields the same float, whichever call path computes it.
    This is what makes the halving identity hold bit-for-bit.
    """
    if points.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {points.shape[1]} vs {x.shape[0]}")
    diff = points[:, 0] - x[0]
    if norm is Norm.L2:
        acc = diff * diff
        for k in range(1, x.shape[0]):
            diff = points[:, k] - x[k]
            acc += diff * diff
        return np.sqrt(acc, out=acc)
    acc = np.abs(diff)
    for k in range(1, x.shape[0]):
        diff = np.abs(points[:, k] - x[k])
        if norm is Norm.L1:
            acc += diff
        else:
            np.maximum(acc, diff, out=acc)
    return acc


def distance(x, y, norm: Union[Norm, str] = Norm.L2) -> float:
    norm = Norm.parse(norm)
    x = as_point(x)
    y = as_point(y, x.size)
    return float(distances_to(x[None, :], y, norm)[0])


def vector_norm(v, norm: Norm) -> float:
    v = as_point(v)
    return float(distances_to(v[None, :], np.zeros_like(v), norm)[0])


def unit_ball_volume(d: int, norm: Union[Norm, str] = Norm.L2) -> float:
    norm = Norm.parse(norm)
    if d < 0:
        raise ValueError("dimension must be nonnegative")
    if norm is Norm.L2:
        # pi^(d/2) / Gamma(d/2 + 1) via V_d = V_{d-2} 2 pi / d, exact for d = 1, 2
        vol = 1.0 if d % 2 == 0 else 2.0
        for j in range(2 + d % 2, d + 1, 2):
            vol *= 2 * math.pi / j
        return vol
    if norm is Norm.LINF:
        return 2.0**d
    return 2.0**d / math.factorial(d)


@dataclass(frozen=True)
class Hypercube:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = as_point(self.lower)
        hi = as_point(self.upper, lo.size)
        if not np.all(lo < hi):
            raise ValueError("hypercube needs lower[i] < upper[i] in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int) -> "Hypercube":
        return cls(np.zeros(d), np.ones(d))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    def volume(self, norm: Norm = Norm.L2) -> float:
        return float(np.prod(self.widths))

    def contains(self, x, atol: float = ATOL) -> bool:
        x = as_point(x, self.dim)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def to_dict(self) -> dict:
        return {"type": "hypercube", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class Ball:
    """Euclidean ball; membership and boundary distance always use L2."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        r = float(self.radius)
        if not (r > 0 and math.isfinite(r)):
            raise ValueError("ball radius must be positive and finite")
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.center.size

    def volume(self, norm: Norm = Norm.L2) -> float:
        return unit_ball_volume(self.dim, Norm.L2) * self.radius**self.dim

    def contains(self, x, atol: float = ATOL) -> bool:
        x = as_point(x, self.dim)
        return distance(x, self.center, Norm.L2) <= self.radius + atol

    def bounding_box(self) -> Hypercube:
        return Hypercube(self.center - self.radius, self.center + self.radius)

    def to_dict(self) -> dict:
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class GridInfo:
    """Provenance of a regular grid: the box it spans and its dyadic level."""

    box: Hypercube
    k: int

    @property
    def shape(self) -> tuple:
        return (2**self.k + 1,) * self.box.dim

    @property
    def step(self) -> np.ndarray:
        return self.box.widths / 2**self.k


@dataclass(frozen=True, eq=False)
class FiniteSet:
    points: np.ndarray
    grid: Optional[GridInfo] = field(default=None, compare=False)

    def __post_init__(self):
        pts = as_points(self.points)
        if pts.shape[0] == 0:
            raise ValueError("a finite set must be nonempty")
        if self.grid is None and np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("finite set points must be distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def center(self) -> np.ndarray:
        """Member point closest (L2) to the centroid, lexicographically smallest on ties."""
        order = lexicographic_order(self.points)
        pts = self.points[order]
        dist = distances_to(pts, pts.mean(axis=0), Norm.L2)
        return pts[int(np.argmin(dist))].copy()

    def volume(self, norm: Norm = Norm.L2) -> float:
        raise ValueError("a finite set has no volume")

    def contains(self, x, atol: float = ATOL) -> bool:
        x = as_point(x, self.dim)
        return bool(np.any(distances_to(self.points, x, Norm.LINF) <= atol))

    def to_dict(self) -> dict:
        if self.grid is not None:
            return {"type": "grid", "box": self.grid.box.to_dict(), "k": self.grid.k}
        return {"type": "finite", "points": self.points.tolist()}


Domain = Union[Hypercube, Ball, FiniteSet]


def domain_from_dict(data: dict) -> Domain:
    kind = data["type"]
    if kind == "hypercube":
        return Hypercube(data["lower"], data["upper"])
    if kind == "ball":
        return Ball(data["center"], data["radius"])
    if kind == "grid":
        return dyadic_grid(domain_from_dict(data["box"]), int(data["k"]))
    if kind == "finite":
        return FiniteSet(data["points"])
    raise ValueError(f"unknown domain type {kind!r}")


def lexicographic_order(points: np.ndarray) -> np.ndarray:
    """Indices sorting rows lexicographically (first coordinate most significant)."""
    return np.lexsort(points.T[::-1])


def boundary_distance(x, domain: Domain) -> float:
    if isinstance(domain, FiniteSet):
        raise ValueError("a finite set has no boundary")
    x = as_point(x, domain.dim)
    if not domain.contains(x):
        raise ValueError(f"point {x.tolist()} lies outside the domain")
    return float(boundary_distances(x[None, :], domain)[0])


def boundary_distances(points: np.ndarray, domain: Domain) -> np.ndarray:
    """Vectorised boundary distance, clipped at zero for points on the boundary."""
    if isinstance(domain, Hypercube):
        gaps = np.minimum(points - domain.lower, domain.upper - points)
        return np.maximum(gaps.min(axis=1), 0.0)
    if isinstance(domain, Ball):
        return np.maximum(domain.radius - distances_to(points, domain.center, Norm.L2), 0.0)
    raise ValueError("a finite set has no boundary")


class Volume(NamedTuple):
    value: float
    stderr: float = 0.0


def _elementary_symmetric(values: np.ndarray) -> list:
    e = [1.0] + [0.0] * len(values)
    for w in values:
        for j in range(len(values), 0, -1):
            e[j] += e[j - 1] * w
    return e


def inflated_volume(
    domain: Domain,
    r: float,
    norm: Union[Norm, str] = Norm.L2,
    samples: int = 1_000_000,
    seed: int = 0,
) -> Volume:
    """Volume of ``domain`` dilated by a norm ball of radius ``r``.

    Exact for L-infinity and L2 on boxes (L2 uses the Steiner expansion over the
    box side lengths); L1 falls back to a seeded Monte Carlo estimate.
    """
    norm = Norm.parse(norm)
    if r < 0:
        raise ValueError("inflation radius must be nonnegative")
    if isinstance(domain, Ball):
        if norm is Norm.L2:
            return Volume(unit_ball_volume(domain.dim, Norm.L2) * (domain.radius + r) ** domain.dim)
        raise ValueError("ball inflation is only supported for the L2 norm")
    if not isinstance(domain, Hypercube):
        raise ValueError("inflated volume needs a hypercube or ball domain")
    w = domain.widths
    d = domain.dim
    if r == 0:
        return Volume(float(np.prod(w)))
    if norm is Norm.LINF:
        return Volume(float(np.prod(w + 2 * r)))
    if norm is Norm.L2:
        e = _elementary_symmetric(w)
        total = sum(e[d - k] * unit_ball_volume(k, Norm.L2) * r**k for k in range(d + 1))
        return Volume(float(total))
    return _monte_carlo_inflated(domain, r, norm, samples, seed)


def _monte_carlo_inflated(domain: Hypercube, r: float, norm: Norm, samples: int, seed: int) -> Volume:
    rng = np.random.default_rng(seed)
    lo = domain.lower - r
    hi = domain.upper + r
    box_volume = float(np.prod(hi - lo))
    hits = 0
    chunk = 200_000
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        y = rng.uniform(lo, hi, size=(m, domain.dim))
        excess = np.maximum(np.maximum(domain.lower - y, y - domain.upper), 0.0)
        hits += int(np.count_nonzero(distances_to(excess, np.zeros(domain.dim), norm) <= r))
        done += m
    p = hits / samples
    return Volume(box_volume * p, box_volume * math.sqrt(p * (1 - p) / samples))


def dyadic_grid(domain: Domain, k: int, cap: int = GRID_POINT_CAP) -> FiniteSet:
    """Regular grid with 2**k intervals per side, in lexicographic order.

    For a ball the grid of the bounding box is built and points outside the
    ball are dropped (the result then carries no grid metadata).
    """
    if k < 0:
        raise ValueError("grid level must be nonnegative")
    box = domain.bounding_box() if isinstance(domain, Ball) else domain
    if not isinstance(box, Hypercube):
        raise ValueError("dyadic grids are defined on hypercubes (or balls via their bounding box)")
    per_side = 2**k + 1
    if per_side**box.dim > cap:
        raise ValueError(f"grid of {per_side}^{box.dim} points exceeds the cap of {cap}")
    axes = [box.lower[i] + (np.arange(per_side) / 2**k) * box.widths[i] for i in range(box.dim)]
    for ax, hi in zip(axes, box.upper):
        ax[-1] = hi
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    if isinstance(domain, Ball):
        inside = distances_to(pts, domain.center, Norm.L2) <= domain.radius + ATOL
        return FiniteSet(pts[inside])
    return FiniteSet(pts, grid=GridInfo(box, k))


def grid_covering_radius(grid: GridInfo, norm: Union[Norm, str]) -> float:
    """Fill distance of a full grid over its own box: half a cell diagonal."""
    return vector_norm(grid.step / 2, Norm.parse(norm))
