"""Greedy packing and its relaxed, boundary-phobic and one-dimensional variants."""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple, Union

import numpy as np

from .geometry import (
    GRID_POINT_CAP,
    Ball,
    Domain,
    FiniteSet,
    Hypercube,
    Norm,
    as_point,
    boundary_distances,
    distances_to,
    dyadic_grid,
    grid_covering_radius,
    lexicographic_order,
    unit_ball_volume,
)
from .metrics import CR_BOUNDS, Design, DistanceField, MetricsTrace, TraceBuilder

TIE_BREAK_RULE = "lexicographically-smallest-maximizer"
PRNG_ID = "numpy.PCG64"


@dataclass
class GreedyConfig:
    """Settings shared by every greedy variant.

    ``candidates=None`` means: the domain itself for a finite domain, the exact
    continuous interval for a 1-d box. ``eval_set`` / ``eval_cr`` control how the
    fill distance is bounded in the trace (see :class:`~quasiuniform.metrics.TraceBuilder`).
    """

    domain: Domain
    norm: Norm = Norm.L2
    n_max: int = 100
    candidates: Optional[FiniteSet] = None
    x1: Optional[np.ndarray] = None
    eval_set: Optional[FiniteSet] = None
    eval_cr: Optional[float] = None
    tie_tol: float = 0.0
    cr_bound: str = "refined"
    threads: Optional[int] = None

    def __post_init__(self):
        self.norm = Norm.parse(self.norm)
        if self.n_max < 1:
            raise ValueError("n_max must be positive")
        if self.tie_tol < 0:
            raise ValueError("tie_tol must be nonnegative")
        if self.cr_bound not in CR_BOUNDS:
            raise ValueError(f"unknown cr_bound {self.cr_bound!r}; expected one of {CR_BOUNDS}")

    @classmethod
    def grid(cls, domain: Domain, k: int, eval_k: Optional[int] = None, **kwargs) -> "GreedyConfig":
        """Candidates on the level-``k`` dyadic grid, CR evaluated on level ``eval_k`` (default k+2)."""
        candidates = dyadic_grid(domain, k)
        eval_k = k + 2 if eval_k is None else eval_k
        dim = candidates.dim
        if eval_k == k or (2**eval_k + 1) ** dim > GRID_POINT_CAP:
            eval_set = candidates
        else:
            eval_set = dyadic_grid(domain, eval_k)
        return cls(domain=domain, candidates=candidates, eval_set=eval_set, **kwargs)

    @property
    def exact_interval(self) -> bool:
        return self.candidates is None and isinstance(self.domain, Hypercube) and self.domain.dim == 1

    def start_point(self) -> np.ndarray:
        if self.x1 is None or (isinstance(self.x1, str) and self.x1 == "center"):
            x1 = self.domain.center
            if self.candidates is not None and not self.candidates.contains(x1):
                x1 = self.candidates.center
            return np.asarray(x1, dtype=float)
        return as_point(self.x1, self.domain.dim)

    def resolved_eval(self) -> Tuple[FiniteSet, Optional[float]]:
        eval_set, eval_cr = self.eval_set, self.eval_cr
        if eval_set is None:
            if isinstance(self.domain, FiniteSet):
                return self.domain, 0.0
            eval_set = self.candidates
        if eval_cr is None:
            if isinstance(self.domain, FiniteSet) and eval_set is self.domain:
                eval_cr = 0.0
            elif eval_set.grid is not None and isinstance(self.domain, Hypercube) and _same_box(
                    eval_set.grid.box, self.domain):
                eval_cr = grid_covering_radius(eval_set.grid, self.norm)
        return eval_set, eval_cr

    def metadata(self) -> dict:
        return {
            "norm": self.norm.value,
            "n_max": self.n_max,
            "x1": self.start_point().tolist(),
            "tie_break": TIE_BREAK_RULE,
            "tie_tol": self.tie_tol,
            "cr_bound": self.cr_bound,
            "candidates": None if self.candidates is None else len(self.candidates),
        }


def _same_box(a: Hypercube, b: Hypercube) -> bool:
    return bool(np.array_equal(a.lower, b.lower) and np.array_equal(a.upper, b.upper))


@dataclass
class RelaxationSchedule:
    """Floor ``a`` and per-step factors alpha_n (a constant or a callable of n)."""

    a: float
    alpha: Union[float, Callable[[int], float], None] = None

    def __post_init__(self):
        if not 0 < self.a <= 1:
            raise ValueError("relaxation floor a must lie in (0, 1]")
        if self.alpha is None:
            self.alpha = self.a

    def __call__(self, n: int) -> float:
        value = float(self.alpha(n) if callable(self.alpha) else self.alpha)
        if not self.a <= value <= 1:
            raise ValueError(f"alpha_{n} = {value} outside [{self.a}, 1]")
        return value


class _Run:
    """State shared by the finite-candidate variants."""

    def __init__(self, cfg: GreedyConfig):
        if cfg.candidates is None:
            if not isinstance(cfg.domain, FiniteSet):
                raise ValueError("continuous domains need a finite candidate set (d >= 2)")
            cand = cfg.domain
        else:
            cand = cfg.candidates
        if cand.dim != cfg.domain.dim:
            raise ValueError("candidate dimension differs from the domain dimension")
        order = lexicographic_order(cand.points)
        self.cand = cand.points[order]
        self.cfg = cfg
        self.field = DistanceField(self.cand, cfg.norm, cfg.threads)
        eval_set, eval_cr = cfg.resolved_eval()
        # grids are built in lexicographic order, so sharing keeps grid order intact
        shared = self.field if eval_set is cand else None
        self.trace = TraceBuilder(eval_set, eval_cr, cfg.norm, cr_bound=cfg.cr_bound,
                                  threads=cfg.threads, field_=shared)
        self.points = []
        x1 = cfg.start_point()
        if not cfg.domain.contains(x1):
            raise ValueError(f"x1 = {x1.tolist()} lies outside the domain")
        if not cand.contains(x1):
            raise ValueError(f"x1 = {x1.tolist()} is not one of the candidates")
        self.add(x1)

    @property
    def limit(self) -> int:
        return min(self.cfg.n_max, len(self.cand))

    def add(self, x: np.ndarray) -> None:
        self.field.insert(x)
        self.trace.insert(x)
        self.points.append(np.array(x, dtype=float))

    def pick(self, scores: np.ndarray) -> Optional[int]:
        best = scores.max()
        if not best > 0:
            return None
        if self.cfg.tie_tol:
            return int(np.flatnonzero(scores >= best - self.cfg.tie_tol)[0])
        return int(np.argmax(scores))

    def result(self) -> Tuple[Design, MetricsTrace]:
        pts = np.array(self.points).reshape(-1, self.cfg.domain.dim)
        return Design(pts, self.cfg.domain, self.cfg.norm), self.trace.trace


def greedy_packing(cfg: GreedyConfig) -> Tuple[Design, MetricsTrace]:
    """Add, one at a time, the candidate farthest from the current design."""
    if cfg.exact_interval:
        lo, hi = float(cfg.domain.lower[0]), float(cfg.domain.upper[0])
        x1 = float(cfg.start_point()[0])
        return greedy_packing_interval(lo, hi, x1, cfg.n_max, norm=cfg.norm)
    run = _Run(cfg)
    while len(run.points) < run.limit:
        idx = run.pick(run.field.min_dist)
        if idx is None:
            break
        run.add(run.cand[idx])
    return run.result()


def relaxed_greedy_packing(
    cfg: GreedyConfig,
    sched: RelaxationSchedule,
    selector: str = "argmax",
    seed: int = 0,
) -> Tuple[Design, MetricsTrace]:
    """Relaxed greedy packing over a finite candidate set.

    Each new point must be at least ``alpha_n * CR(X_n)`` away from the design,
    CR taken over the candidates. ``selector="ball"`` draws uniformly among the
    candidates inside the ball of radius ``(1 - alpha_n) * CR(X_n)`` around the
    farthest candidate.
    """
    if selector not in ("argmax", "ball"):
        raise ValueError(f"unknown selector {selector!r}; expected 'argmax' or 'ball'")
    rng = np.random.default_rng(seed)
    run = _Run(cfg)
    while len(run.points) < run.limit:
        n = len(run.points)
        star = run.pick(run.field.min_dist)
        if star is None:
            break
        cr = float(run.field.min_dist[star])
        alpha = sched(n)
        idx = star
        if selector == "ball" and alpha < 1:
            near = distances_to(run.cand, run.cand[star], cfg.norm) <= (1 - alpha) * cr
            ok = np.flatnonzero(near & (run.field.min_dist >= alpha * cr))
            if ok.size == 0:
                raise RuntimeError(
                    f"no candidate satisfies the relaxed step at n={n} (alpha={alpha}, CR={cr})")
            idx = int(ok[rng.integers(ok.size)])
        gap = float(run.field.min_dist[idx])
        if gap < alpha * cr:
            raise RuntimeError(f"step n={n}: chosen point at {gap} < alpha*CR = {alpha * cr}")
        run.add(run.cand[idx])
    return run.result()


def boundary_phobic_packing(cfg: GreedyConfig, beta: float,
                            polish: bool = False) -> Tuple[Design, MetricsTrace]:
    """Greedy maximisation of min(distance to design, beta * distance to boundary).

    With ``polish=True`` (L2 on a box only) the best grid candidates are moved to
    a local maximiser of the score over the continuous box, so the design is no
    longer restricted to the candidate set.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not isinstance(cfg.domain, (Hypercube, Ball)):
        raise ValueError("boundary-phobic packing needs a hypercube or ball domain")
    if polish and (not isinstance(cfg.domain, Hypercube) or cfg.norm is not Norm.L2
                   or math.isinf(beta)):
        raise ValueError("polishing needs an L2 box domain and finite beta")
    run = _Run(cfg)
    wall = None if math.isinf(beta) else beta * boundary_distances(run.cand, cfg.domain)
    polisher = None
    grid = cfg.candidates.grid if cfg.candidates is not None else None
    if polish and grid is None:
        raise ValueError("polishing needs grid candidates")
    if polish:
        polisher = _PhobicPolisher(run.cand, cfg.domain, beta, grid)
    while len(run.points) < run.limit:
        scores = run.field.min_dist if wall is None else np.minimum(run.field.min_dist, wall)
        idx = run.pick(scores)
        if idx is None:
            break
        x = run.cand[idx]
        if polisher is not None:
            x = polisher.best(scores, np.asarray(run.points))
            polisher.forget_near(x)
        run.add(x)
    return run.result()


def phobic_score(x: np.ndarray, design: np.ndarray, box: Hypercube, beta: float) -> float:
    near = float(distances_to(design, x, Norm.L2).min())
    wall = float(np.minimum(x - box.lower, box.upper - x).min())
    return min(near, beta * wall)


def _grid_local_maxima(scores: np.ndarray, shape: tuple) -> np.ndarray:
    """Flat indices of grid nodes whose score is >= every neighbour's."""
    grid = scores.reshape(shape)
    keep = np.ones(shape, dtype=bool)
    padded = np.pad(grid, 1, constant_values=-np.inf)
    d = len(shape)
    for off in np.ndindex(*(3,) * d):
        if all(o == 1 for o in off):
            continue
        view = padded[tuple(slice(o, o + n) for o, n in zip(off, shape))]
        keep &= grid >= view
    return np.flatnonzero(keep.ravel())


class _PhobicPolisher:
    """Polishes every grid basin that could hold the continuous maximum.

    The score is Lipschitz with constant max(1, beta), so a basin whose best
    node trails the running best by more than that constant times half a grid
    diagonal cannot win. Polished maxima are cached per start node and dropped
    once a new design point lands near the start or the maximiser.
    Ties go to the lexicographically smallest point.
    """

    def __init__(self, cand: np.ndarray, box: Hypercube, beta: float, grid):
        self.cand, self.box, self.beta, self.grid = cand, box, beta, grid
        self.h = float(grid.step.max())
        self.slack = max(1.0, beta) * float(np.sqrt((grid.step**2).sum())) / 2
        self.reach = 4 * self.h * math.sqrt(cand.shape[1])
        self.cache = {}

    def forget_near(self, x: np.ndarray) -> None:
        stale = [i for i, (y, v) in self.cache.items()
                 if min(np.linalg.norm(self.cand[i] - x), np.linalg.norm(y - x)) <= v + self.reach]
        for i in stale:
            del self.cache[i]

    def best(self, scores: np.ndarray, design: np.ndarray) -> np.ndarray:
        starts = _grid_local_maxima(scores, self.grid.shape)
        starts = starts[np.argsort(-scores[starts], kind="stable")]
        top, results = -math.inf, []
        for i in starts:
            if scores[i] + self.slack < top:
                break
            if i not in self.cache:
                y = polish_phobic(self.cand[i], design, self.box, self.beta, self.h)
                self.cache[i] = (y, phobic_score(y, design, self.box, self.beta))
            y, v = self.cache[i]
            top = max(top, v)
            results.append((v, y))
        ties = [y for v, y in results if v >= top - 1e-12 * max(1.0, top)]
        ties.sort(key=lambda y: tuple(y))
        return ties[0]


def _phobic_constraints(x, design, box, beta):
    """Values and gradients of every piece of the score at x."""
    diff = x - design
    dist = np.sqrt((diff**2).sum(axis=1))
    grads = [diff / dist[:, None]]
    vals = [dist]
    d = x.size
    eye = np.eye(d)
    vals += [beta * (x - box.lower), beta * (box.upper - x)]
    grads += [beta * eye, -beta * eye]
    return np.concatenate(vals), np.vstack(grads)


def polish_phobic(x0, design, box: Hypercube, beta: float, radius: float,
                  iters: int = 50) -> np.ndarray:
    """Local maximiser of the boundary-phobic score near x0.

    Sequential linear programming: the linearised distance constraints
    under-estimate the true distances (the norm is convex), so every iterate is
    feasible and the score never decreases. Once d+1 pieces are active, a Newton
    solve on them (accepted only with nonnegative KKT multipliers) removes the
    LP solver's tolerance and usually ends the iteration early.
    """
    from scipy.optimize import linprog

    x = np.asarray(x0, dtype=float).copy()
    d = x.size
    score = phobic_score(x, design, box, beta)
    c = np.zeros(d + 1)
    c[-1] = -1.0
    reach = 2 * radius * math.sqrt(d)
    for _ in range(iters):
        dist = distances_to(design, x, Norm.L2)
        # farther points keep their linearisation above t inside the trust region
        vals, grads = _phobic_constraints(x, design[dist <= dist.min() + reach], box, beta)
        # g(x) + grad.(y - x) >= t  <=>  t - grad.y <= g(x) - grad.x
        a_ub = np.hstack([-grads, np.ones((len(vals), 1))])
        b_ub = vals - grads @ x
        bounds = [(max(lo, xi - radius), min(hi, xi + radius))
                  for xi, lo, hi in zip(x, box.lower, box.upper)] + [(None, None)]
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
        if res.status != 0:
            break
        y = res.x[:d]
        new = phobic_score(y, design, box, beta)
        if not new > score:
            break
        x, score = y, new
        z = _newton_active(x, score, design, box, beta)
        if z is not None:
            return z
    return x


def _newton_active(x, score, design, box, beta, iters: int = 30) -> Optional[np.ndarray]:
    """Solve 'all d+1 active pieces equal' from x; None unless it is a KKT point."""
    d = x.size
    vals, _ = _phobic_constraints(x, design, box, beta)
    active = np.flatnonzero(vals <= score + 1e-6 * max(1.0, score))
    if active.size != d + 1:
        return None
    z = np.append(x, score)
    for _ in range(iters):
        vals, grads = _phobic_constraints(z[:d], design, box, beta)
        jac = np.hstack([grads[active], -np.ones((d + 1, 1))])
        try:
            dz = np.linalg.solve(jac, z[d] - vals[active])
        except np.linalg.LinAlgError:
            return None
        z = z + dz
        if np.abs(dz).max() <= 1e-16:
            break
    y = z[:d]
    if not (np.all(y >= box.lower) and np.all(y <= box.upper)):
        return None
    _, grads = _phobic_constraints(y, design, box, beta)
    # 0 in the convex hull of the active gradients: local maximum of the min
    system = np.vstack([grads[active].T, np.ones(d + 1)])
    try:
        lam = np.linalg.solve(system, np.append(np.zeros(d), 1.0))
    except np.linalg.LinAlgError:
        return None
    if lam.min() < -1e-9 or phobic_score(y, design, box, beta) < score - 1e-12:
        return None
    return y


def beta_recommended(n_max: int, d: int) -> float:
    """Boundary weight tuned to a target design size: d / (2 (n_max V_d)^(-1/d)) - sqrt(d)."""
    if n_max < 1 or d < 1:
        raise ValueError("n_max and d must be positive")
    vd = unit_ball_volume(d, Norm.L2)
    beta = d / (2 * (n_max * vd) ** (-1 / d)) - math.sqrt(d)
    if beta <= 0:
        warnings.warn(f"recommended beta = {beta} is not positive for n_max={n_max}, d={d}",
                      RuntimeWarning, stacklevel=2)
    return beta


def radical_inverse(k: int) -> float:
    """Base-2 radical inverse of k (bits mirrored about the binary point)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    bits = k.bit_length()
    rev = int(format(k, "b")[::-1], 2) if k else 0
    return rev / 2**bits if k else 0.0


def van_der_corput(n_max: int) -> Design:
    """First n_max points of the base-2 van der Corput sequence (k = 1, 2, ...)."""
    if n_max < 1:
        raise ValueError("n_max must be positive")
    pts = np.array([radical_inverse(k) for k in range(1, n_max + 1)])[:, None]
    return Design(pts, Hypercube.unit(1), Norm.L2)


def greedy_packing_interval(lo: float, hi: float, x1: float, n_max: int,
                            norm: Norm = Norm.L2) -> Tuple[Design, MetricsTrace]:
    """Exact greedy packing on [lo, hi] using a heap of uncovered gaps.

    Each heap entry is (-value, point): the end of the interval for the two end
    segments, the midpoint for an interior gap. Equal values pop the leftmost
    point first. All norms coincide in one dimension.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    if not lo <= x1 <= hi:
        raise ValueError("x1 must lie in [lo, hi]")
    if n_max < 1:
        raise ValueError("n_max must be positive")
    heap = []

    def push_segment(a: Optional[float], b: Optional[float]) -> None:
        if a is None:
            value, point = b - lo, lo
        elif b is None:
            value, point = hi - a, hi
        else:
            value, point = (b - a) / 2, (a + b) / 2
        if value > 0:
            heapq.heappush(heap, (-value, point, a, b))

    push_segment(None, x1)
    push_segment(x1, None)
    points = [x1]
    trace = MetricsTrace()
    sr = math.inf
    nearest = None
    while len(points) < n_max and heap:
        neg, point, a, b = heapq.heappop(heap)
        nearest = -neg
        sr = min(sr, nearest / 2)
        points.append(point)
        push_segment(a, point)
        push_segment(point, b)
        cr = -heap[0][0] if heap else 0.0
        trace.append(len(points), sr, cr, cr)
    domain = Hypercube([lo], [hi])
    return Design(np.array(points)[:, None], domain, norm), trace
