"""Closed-form cycle schedules for [0,1]^2 and [0,1]^4, and certificate checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .geometry import Domain, FiniteSet, Hypercube, Ball, Norm, inflated_volume, unit_ball_volume
from .metrics import Design, MetricsTrace, fill_distance_finite, separation_radius, separation_radii

SQRT2 = math.sqrt(2.0)
PHASES = ("cycle-start", "phase-i", "checkpoint", "phase-ii")


@dataclass(frozen=True)
class Surd:
    """Exact value q * sqrt(2)**root with q rational and root in {0, 1}."""

    q: Fraction
    root: int = 0

    def __float__(self) -> float:
        return float(self.q) * (SQRT2 if self.root else 1.0)

    def __truediv__(self, other: "Surd") -> "Surd":
        q = self.q / other.q
        root = self.root - other.root
        if root < 0:  # 1/sqrt2 = sqrt2/2
            q, root = q / 2, 1
        return Surd(q, root)


def _s(num, den=1, root=0) -> Surd:
    return Surd(Fraction(num, den), root)


# ---- schedule arithmetic ---------------------------------------------------

def n_m_2d(m: int) -> int:
    return (2**m + 1) ** 2 + 4**m


def k_m_2d(m: int) -> int:
    return (2 ** (m + 1) + 1) ** 2


def ell_m_2d(m: int) -> int:
    """Number of side midpoints added in the first phase of cycle m (d = 2)."""
    return k_m_2d(m) - n_m_2d(m)


def n_m_4d(m: int) -> int:
    return (2**m + 1) ** 4 + 2 ** (4 * m)


def ell_m_4d(m: int) -> int:
    return 6 * 2 ** (2 * m) * (2**m + 1) ** 2


@dataclass(frozen=True)
class CycleSchedule:
    d: int
    m: int

    def __post_init__(self):
        if self.d not in (2, 4):
            raise ValueError("cycle schedules exist for d = 2 and d = 4 only")
        if self.m < 0:
            raise ValueError("cycle index must be nonnegative")

    @property
    def gamma(self) -> Fraction:
        return Fraction(1, 2**self.m)

    @property
    def n_m(self) -> int:
        return n_m_2d(self.m) if self.d == 2 else n_m_4d(self.m)

    @property
    def n_next(self) -> int:
        return n_m_2d(self.m + 1) if self.d == 2 else n_m_4d(self.m + 1)

    @property
    def checkpoint(self) -> int:
        """k_m for d = 2, n_m + l_m for d = 4: where CR drops inside the cycle."""
        return k_m_2d(self.m) if self.d == 2 else n_m_4d(self.m) + ell_m_4d(self.m)


@dataclass(frozen=True)
class PredictedRow:
    n: int
    sr_exact: Surd
    cr_exact: Surd
    phase: str

    @property
    def sr(self) -> float:
        return float(self.sr_exact)

    @property
    def cr(self) -> float:
        return float(self.cr_exact)

    @property
    def mr_exact(self) -> Surd:
        return self.cr_exact / self.sr_exact

    @property
    def mr(self) -> float:
        return float(self.mr_exact)


def cycle_index_formula_2d(n: int) -> int:
    """floor(log2(sqrt(n/2 - 1/4) - 1/2)), evaluated in floating point."""
    if n < 5:
        raise ValueError("the d=2 schedule starts at n = 5")
    return math.floor(math.log2(math.sqrt(n / 2 - 0.25) - 0.5))


def _scan_index(n: int, n_m) -> int:
    m = 0
    while n_m(m + 1) <= n:
        m += 1
    return m


def cycle_index_2d(n: int) -> int:
    m = cycle_index_formula_2d(n)
    # guard the float evaluation with the defining inequality n_m <= n < n_{m+1}
    while m > 0 and n_m_2d(m) > n:
        m -= 1
    while n_m_2d(m + 1) <= n:
        m += 1
    return m


def cycle_index_4d(n: int) -> int:
    if n < 17:
        raise ValueError("the d=4 schedule starts at n = 17")
    return _scan_index(n, n_m_4d)


def predicted_metrics_2d(n: int) -> PredictedRow:
    m = cycle_index_2d(n)
    g = Fraction(1, 2**m)
    nm, km = n_m_2d(m), k_m_2d(m)
    if n == nm:
        return PredictedRow(n, Surd(g / 4, 1), Surd(g / 2), PHASES[0])
    if n < km:
        return PredictedRow(n, Surd(g / 4), Surd(g / 2), PHASES[1])
    if n == km:
        return PredictedRow(n, Surd(g / 4), Surd(g / 4, 1), PHASES[2])
    return PredictedRow(n, Surd(g / 8, 1), Surd(g / 4, 1), PHASES[3])


def predicted_metrics_4d(n: int) -> PredictedRow:
    m = cycle_index_4d(n)
    g = Fraction(1, 2**m)
    nm = n_m_4d(m)
    mid = nm + ell_m_4d(m)
    if n == nm:
        return PredictedRow(n, Surd(g / 2), Surd(g / 2, 1), PHASES[0])
    if n < mid:
        return PredictedRow(n, Surd(g / 4, 1), Surd(g / 2, 1), PHASES[1])
    if n == mid:
        return PredictedRow(n, Surd(g / 4, 1), Surd(g / 2), PHASES[2])
    return PredictedRow(n, Surd(g / 4), Surd(g / 2), PHASES[3])


def predicted_metrics(n: int, d: int) -> PredictedRow:
    if d == 2:
        return predicted_metrics_2d(n)
    if d == 4:
        return predicted_metrics_4d(n)
    raise ValueError("schedules exist for d = 2 and d = 4 only")


def schedule_start(d: int) -> int:
    return {2: 5, 4: 17}[d]


# ---- certificates ------------------------------------------------------------

@dataclass
class CertRow:
    n: int
    lhs: float
    rhs: float
    passed: Optional[bool]  # None: inconclusive

    def to_dict(self) -> dict:
        return {"n": self.n, "lhs": self.lhs, "rhs": self.rhs, "pass": self.passed}


@dataclass
class CertificateReport:
    name: str
    rows: List[CertRow] = field(default_factory=list)
    note: str = ""

    @property
    def overall(self) -> bool:
        return all(r.passed is True for r in self.rows)

    @property
    def verdict(self) -> str:
        if self.overall:
            return "pass"
        if any(r.passed is False for r in self.rows):
            return "fail"
        return "inconclusive"

    def failures(self) -> List[CertRow]:
        return [r for r in self.rows if r.passed is not True]

    def add(self, n: int, lhs: float, rhs: float, passed: Optional[bool]) -> None:
        self.rows.append(CertRow(int(n), float(lhs), float(rhs), passed))

    def to_dict(self) -> dict:
        out = {"name": self.name, "overall": self.overall, "rows": [r.to_dict() for r in self.rows]}
        if self.note:
            out["note"] = self.note
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=True)

    def summary(self) -> str:
        bad = len(self.failures())
        return f"{self.name}: {self.verdict} ({len(self.rows)} rows, {bad} not passing)"


def certify_against_schedule(trace: MetricsTrace, d: int, tol: float = 1e-9) -> CertificateReport:
    """Compare a run with the closed-form schedule, row by row.

    ``lhs`` is the largest deviation among SR and both CR bounds, ``rhs`` the
    tolerance. A row is inconclusive (not failed) when the prediction lies inside
    the CR bracket but the bracket is wider than ``tol``.
    """
    report = CertificateReport(f"schedule{d}d")
    start = schedule_start(d)
    for row in trace:
        if row.n < start:
            continue
        p = predicted_metrics(row.n, d)
        dev_sr = abs(row.sr - p.sr)
        dev_cr = max(abs(row.cr_lower - p.cr), abs(row.cr_upper - p.cr))
        dev = max(dev_sr, dev_cr)
        if dev_sr > tol or p.cr < row.cr_lower - tol or p.cr > row.cr_upper + tol:
            verdict = False
        elif dev_cr <= tol:
            verdict = True
        else:
            verdict = None
        report.add(row.n, dev, tol, verdict)
    return report


def certify_mesh_ratio_bound(trace: MetricsTrace, a: Union[float, Mapping[int, float]],
                             slack: float = 1e-9) -> CertificateReport:
    """Check mr_upper(X_n) <= 2/a (+ slack) for every n >= 2.

    ``a`` may be a per-row mapping n -> a_n; rows whose a_n is not positive are
    skipped as not certifiable.
    """
    if not isinstance(a, Mapping) and not 0 < a <= 1:
        raise ValueError("a must lie in (0, 1]")
    report = CertificateReport("mr-bound")
    for row in trace:
        if row.n < 2:
            continue
        a_n = a.get(row.n) if isinstance(a, Mapping) else a
        if a_n is None or not a_n > 0:
            continue
        rhs = 2 / a_n + slack
        report.add(row.n, row.mr_upper, rhs, row.mr_upper <= rhs)
    return report


def fill_lower_bound(domain: Domain, norm: Union[Norm, str], n: int) -> float:
    """[vol / V_d]^(1/d) n^(-1/d): no n-point design covers the domain with a smaller radius."""
    if isinstance(domain, FiniteSet):
        raise ValueError("a finite set has no volume")
    norm = Norm.parse(norm)
    d = domain.dim
    return (domain.volume() / unit_ball_volume(d, norm)) ** (1 / d) * n ** (-1 / d)


def certify_fill_lower_bound(trace: MetricsTrace, domain: Domain,
                             norm: Union[Norm, str]) -> CertificateReport:
    """Check the volume lower bound against cr_lower, the side that can only understate CR."""
    report = CertificateReport("fill-lower")
    for row in trace:
        bound = fill_lower_bound(domain, norm, row.n)
        report.add(row.n, bound, row.cr_lower, bound <= row.cr_lower)
    return report


def certify_separation_upper_bound(design: Design, m: int = 2, norm: Union[Norm, str, None] = None,
                                   samples: int = 1_000_000, seed: int = 0) -> CertificateReport:
    """Check SR(X_n) <= [vol(X (+) B(0, SR(X_m))) / V_d]^(1/d) n^(-1/d) for n = m..N."""
    norm = design.norm if norm is None else Norm.parse(norm)
    if not 2 <= m <= len(design):
        raise ValueError(f"need 2 <= m <= {len(design)}")
    if not isinstance(design.domain, (Hypercube, Ball)):
        raise ValueError("separation upper bound needs a hypercube or ball domain")
    radii = separation_radii(design)
    r = float(radii[m - 2])
    vol = inflated_volume(design.domain, r, norm, samples=samples, seed=seed)
    volume = vol.value + 3 * vol.stderr
    d = design.dim
    scale = (volume / unit_ball_volume(d, norm)) ** (1 / d)
    report = CertificateReport("sep-upper", note=f"m={m}, r={r!r}, vol={vol.value!r}+-{vol.stderr!r}")
    for n in range(m, len(design) + 1):
        sr = float(radii[n - 2])
        rhs = scale * n ** (-1 / d)
        report.add(n, sr, rhs, sr <= rhs)
    return report


def certify_pigeonhole(design_a: Design, design_b: Design, domain_eval: FiniteSet,
                       slack: float = 0.0) -> CertificateReport:
    """Check SR(B) <= CR_eval(A) + slack for |B| = |A| + 1."""
    if len(design_b) != len(design_a) + 1:
        raise ValueError("the second design must have exactly one more point")
    lhs = separation_radius(design_b)
    rhs = fill_distance_finite(design_a, domain_eval) + slack
    report = CertificateReport("pigeonhole")
    report.add(len(design_a), lhs, rhs, lhs <= rhs)
    return report


def certify_pigeonhole_trace(trace: MetricsTrace) -> CertificateReport:
    """Consecutive prefixes of one run: SR(X_{n+1}) <= cr_upper(X_n)."""
    report = CertificateReport("pigeonhole")
    rows = list(trace)
    for prev, row in zip(rows, rows[1:]):
        report.add(prev.n, row.sr, prev.cr_upper, row.sr <= prev.cr_upper)
    return report


def certify_sandwich(design: Design, coarse: FiniteSet, fine: FiniteSet,
                     tol: float = 1e-12) -> CertificateReport:
    """CR_coarse <= CR_fine <= CR_coarse + CR_fine(coarse) for every prefix, coarse within fine."""
    from .metrics import DistanceField

    gap_field = DistanceField(fine, design.norm)
    for p in coarse.points:
        gap_field.insert(p)
    eps = gap_field.max()
    fc = DistanceField(coarse, design.norm)
    ff = DistanceField(fine, design.norm)
    report = CertificateReport("sandwich", note=f"CR_fine(coarse)={eps!r}")
    for i, p in enumerate(design.points, start=1):
        fc.insert(p)
        ff.insert(p)
        lo, mid = fc.max(), ff.max()
        ok = lo <= mid + tol and mid <= lo + eps + tol
        report.add(i, mid, lo + eps, ok)
    return report


def is_checkerboard(points: np.ndarray, scale: float, atol: float = 1e-9) -> bool:
    """True when every scaled point is an integer vector with an even coordinate sum."""
    scaled = np.asarray(points, dtype=float) * scale
    ints = np.rint(scaled)
    if not np.all(np.abs(scaled - ints) <= atol):
        return False
    return bool(np.all(ints.sum(axis=1).astype(np.int64) % 2 == 0))


def certify_d4_checkerboard(design: Design, m: int) -> CertificateReport:
    n = n_m_4d(m) + ell_m_4d(m)
    if len(design) < n:
        raise ValueError(f"design has {len(design)} points, the checkerboard check needs n = {n}")
    pts = design.points[:n]
    scale = 2 ** (m + 1)
    report = CertificateReport("checkerboard", note=f"m={m}, n={n}, scale={scale}")
    scaled = pts * scale
    ints = np.rint(scaled)
    off_lattice = float(np.abs(scaled - ints).max())
    odd = int(np.count_nonzero(ints.sum(axis=1).astype(np.int64) % 2))
    report.add(n, off_lattice + odd, 1e-9, is_checkerboard(pts, scale))
    return report


def certify_optimality_1d(trace: MetricsTrace) -> CertificateReport:
    """Factor-2 optimality on [0,1] using the classical optima CR*_n = 1/(2n), SR*_n = 1/(2(n-1))."""
    report = CertificateReport("optimality-1d")
    for row in trace:
        cr_star = 1 / (2 * row.n)
        sr_star = 1 / (2 * (row.n - 1))
        ok = row.cr_upper <= 2 * cr_star and row.sr >= sr_star / 2
        report.add(row.n, row.cr_upper / cr_star, row.sr / sr_star, ok)
    return report


@dataclass
class RateReport:
    rho: float
    c1_hat: float
    c2_hat: float
    n_min: int
    n_max: int

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def rate_report(trace: MetricsTrace, d: int) -> RateReport:
    """Empirical uniformity constant and rate constants over the run window."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    n = trace.column("n")
    root = n ** (1 / d)
    rho = float(trace.column("mr_lower").max())
    c1 = float((trace.column("cr_lower") * root).min())
    c2 = float((rho * trace.column("sr") * root).max())
    return RateReport(rho, c1, c2, int(n.min()), int(n.max()))


@dataclass
class RelaxationBound:
    n: int
    a: float

    @property
    def certifiable(self) -> bool:
        return self.a > 0


def a_n_lower_bound(cr_candidates_of_eval: float, trace: MetricsTrace) -> List[RelaxationBound]:
    """a_n = 1 - CR_eval(candidates) / CR_candidates(X_n), from a trace measured on the candidates."""
    eps = float(cr_candidates_of_eval)
    if eps < 0:
        raise ValueError("covering radius of the candidates must be nonnegative")
    out = []
    for row in trace:
        if eps == 0:
            a = 1.0
        elif row.cr_lower == 0:
            a = -math.inf
        else:
            a = 1 - eps / row.cr_lower
        out.append(RelaxationBound(row.n, a))
    return out
