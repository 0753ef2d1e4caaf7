"""Command line front end: generate, verify, compare, schedule.

Exit codes: 0 when everything requested passes, 1 on a certificate failure or a
failed run, 2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import shlex
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Ball, FiniteSet, Hypercube, Norm, domain_from_dict
from .io import reports_to_json, save_design, save_trace, write_text
from .metrics import CR_BOUNDS, Design, MetricsTrace, trace_for_interval
from .sequences import (
    GreedyConfig,
    RelaxationSchedule,
    beta_recommended,
    boundary_phobic_packing,
    greedy_packing,
    greedy_packing_interval,
    relaxed_greedy_packing,
    van_der_corput,
)
from . import theory

ALGORITHMS = ("greedy", "relaxed", "boundary-phobic", "vdc", "interval-exact")
CERTIFICATES = ("schedule2d", "schedule4d", "mr-bound", "fill-lower", "sep-upper",
                "pigeonhole", "checkerboard", "sandwich")


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


@dataclass
class RunConfig:
    alg: str = "greedy"
    dim: int = 2
    norm: str = "l2"
    domain: str = "cube"
    grid_k: Optional[int] = None
    eval_k: Optional[int] = None
    x1: str = "center"
    n: int = 100
    beta: Optional[str] = None
    a: Optional[float] = None
    selector: Optional[str] = None
    seed: Optional[int] = None
    tie_tol: float = 0.0
    cr_bound: str = "refined"
    polish: bool = False
    threads: Optional[int] = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.alg not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.alg!r}")
        if self.dim < 1 or self.n < 1:
            raise ConfigError("--dim and --n must be positive")
        try:
            Norm.parse(self.norm)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.beta is not None and self.alg != "boundary-phobic":
            raise ConfigError("--beta applies to boundary-phobic only")
        if self.polish and self.alg != "boundary-phobic":
            raise ConfigError("--polish applies to boundary-phobic only")
        if self.alg == "boundary-phobic" and self.beta is None:
            raise ConfigError("boundary-phobic needs --beta (a number, 'inf' or 'auto')")
        if (self.a is not None or self.selector is not None) and self.alg != "relaxed":
            raise ConfigError("--a and --selector apply to relaxed only")
        if self.alg == "relaxed" and self.a is None:
            raise ConfigError("relaxed needs --a")
        if self.seed is not None and not (self.alg == "relaxed" and self.selector == "ball"):
            raise ConfigError("--seed applies to the relaxed ball selector only")
        if self.selector not in (None, "argmax", "ball"):
            raise ConfigError(f"unknown selector {self.selector!r}")
        if self.alg in ("vdc", "interval-exact") and self.dim != 1:
            raise ConfigError(f"{self.alg} is one-dimensional; use --dim 1")
        if self.alg == "vdc" and (self.x1 != "center" or self.domain != "cube"):
            raise ConfigError("vdc has a fixed start on [0,1]")
        if self.cr_bound not in CR_BOUNDS:
            raise ConfigError(f"unknown --cr-bound {self.cr_bound!r}")
        if self.alg in ("greedy", "relaxed", "boundary-phobic") and self.grid_k is None:
            if not (self.dim == 1 and self.alg == "greedy") and not self.domain.endswith(".json"):
                raise ConfigError(f"{self.alg} needs a candidate grid (--grid-k)")

    def resolve_domain(self):
        if self.domain == "cube":
            return Hypercube.unit(self.dim)
        if self.domain == "ball":
            return Ball(np.full(self.dim, 0.5), 0.5)
        try:
            with open(self.domain, encoding="utf-8") as fh:
                dom = domain_from_dict(json.load(fh))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read domain {self.domain!r}: {exc}") from None
        if dom.dim != self.dim:
            raise ConfigError(f"domain dimension {dom.dim} differs from --dim {self.dim}")
        return dom

    def resolve_x1(self):
        if self.x1 == "center":
            return "center"
        try:
            vals = [float(v) for v in self.x1.split(",")]
        except ValueError:
            raise ConfigError(f"bad --x1 {self.x1!r}") from None
        if len(vals) != self.dim:
            raise ConfigError(f"--x1 has {len(vals)} coordinates, expected {self.dim}")
        return np.array(vals)

    def resolve_beta(self) -> float:
        if self.beta == "auto":
            return beta_recommended(self.n, self.dim)
        try:
            beta = float(self.beta)
        except ValueError:
            raise ConfigError(f"bad --beta {self.beta!r}") from None
        if not beta > 0:
            raise ConfigError("--beta must be positive")
        return beta


@dataclass
class RunResult:
    config: RunConfig
    design: Design
    trace: MetricsTrace
    greedy: Optional[GreedyConfig] = None
    mr_floor: Optional[float] = None  # a in MR <= 2/a, when a bound applies
    extra: dict = field(default_factory=dict)


def run(cfg: RunConfig) -> RunResult:
    cfg.validate()
    if cfg.alg == "vdc":
        design = van_der_corput(cfg.n)
        return RunResult(cfg, design, trace_for_interval(design))
    domain = cfg.resolve_domain()
    norm = Norm.parse(cfg.norm)
    x1 = cfg.resolve_x1()
    plain_1d = (cfg.alg == "greedy" and cfg.dim == 1 and cfg.grid_k is None
                and isinstance(domain, Hypercube))
    if cfg.alg == "interval-exact" or plain_1d:
        if not isinstance(domain, Hypercube):
            raise ConfigError("the exact interval algorithm needs a box domain")
        lo, hi = float(domain.lower[0]), float(domain.upper[0])
        start = (lo + hi) / 2 if isinstance(x1, str) else float(x1[0])
        design, trace = greedy_packing_interval(lo, hi, start, cfg.n, norm)
        return RunResult(cfg, design, trace, mr_floor=1.0)
    kwargs = dict(norm=norm, n_max=cfg.n, x1=x1, tie_tol=cfg.tie_tol, cr_bound=cfg.cr_bound,
                  threads=cfg.threads)
    try:
        if cfg.grid_k is not None:
            gcfg = GreedyConfig.grid(domain, cfg.grid_k, cfg.eval_k, **kwargs)
        else:
            gcfg = GreedyConfig(domain, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    extra = {}
    if cfg.alg == "greedy":
        design, trace = greedy_packing(gcfg)
        floor = 1.0
    elif cfg.alg == "relaxed":
        try:
            sched = RelaxationSchedule(cfg.a)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        design, trace = relaxed_greedy_packing(gcfg, sched, cfg.selector or "argmax",
                                               seed=0 if cfg.seed is None else cfg.seed)
        floor = cfg.a
    else:
        beta = cfg.resolve_beta()
        design, trace = boundary_phobic_packing(gcfg, beta, polish=cfg.polish)
        floor = 1 / (1 + math.sqrt(cfg.dim) / beta)
        extra["beta"] = beta
    return RunResult(cfg, design, trace, greedy=gcfg, mr_floor=floor, extra=extra)


# ---- argument parsing --------------------------------------------------------

def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with run settings (flags override it)")
    p.add_argument("--alg", choices=ALGORITHMS)
    p.add_argument("--dim", type=int)
    p.add_argument("--norm", choices=[n.value for n in Norm])
    p.add_argument("--domain", help="'cube' (default), 'ball' or a domain JSON file")
    p.add_argument("--grid-k", dest="grid_k", type=int, help="candidate grid level")
    p.add_argument("--eval-k", dest="eval_k", type=int, help="evaluation grid level (default grid-k + 2)")
    p.add_argument("--x1", help="'center' or comma separated coordinates")
    p.add_argument("--n", type=int, help="number of points")
    p.add_argument("--beta", help="boundary weight: number, 'inf' or 'auto'")
    p.add_argument("--a", type=float, help="relaxation floor in (0, 1]")
    p.add_argument("--selector", choices=("argmax", "ball"))
    p.add_argument("--seed", type=int)
    p.add_argument("--tie-tol", dest="tie_tol", type=float)
    p.add_argument("--cr-bound", dest="cr_bound", choices=CR_BOUNDS)
    p.add_argument("--polish", action="store_const", const=True,
                   help="boundary-phobic: maximise over the continuous box")
    p.add_argument("--threads", type=int)


def _run_config(ns: argparse.Namespace) -> RunConfig:
    base = {}
    if getattr(ns, "config", None):
        try:
            with open(ns.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {ns.config!r}: {exc}") from None
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(base) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in names:
        value = getattr(ns, name, None)
        if value is not None:
            base[name] = value
    return RunConfig(**base)


def _run_parser(prog: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=prog)
    _add_run_args(p)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quasiuniform", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="build a design and its metrics trace")
    _add_run_args(gen)
    gen.add_argument("--design", help="write the design JSON here")
    gen.add_argument("--trace", help="write the trace CSV here (stdout when no output is given)")

    ver = sub.add_parser("verify", help="build a design and run certificates on it")
    _add_run_args(ver)
    ver.add_argument("--cert", required=True, help="comma separated: " + ",".join(CERTIFICATES))
    ver.add_argument("--report", help="write the JSON reports here (default stdout)")
    ver.add_argument("--tol", type=float, default=1e-9, help="schedule tolerance")
    ver.add_argument("--sep-m", dest="sep_m", type=int, default=2,
                     help="prefix size for the separation upper bound")

    cmp_ = sub.add_parser("compare", help="per-n metrics of two runs side by side")
    cmp_.add_argument("--left", required=True, help="run flags of the first run, quoted")
    cmp_.add_argument("--right", required=True, help="run flags of the second run, quoted")
    cmp_.add_argument("--out", help="write the CSV here (default stdout)")

    sch = sub.add_parser("schedule", help="closed-form metrics for d = 2 or d = 4")
    sch.add_argument("--dim", type=int, required=True, choices=(2, 4))
    sch.add_argument("--from", dest="start", type=int, required=True)
    sch.add_argument("--to", dest="stop", type=int, required=True)
    sch.add_argument("--out", help="write the CSV here (default stdout)")
    return parser


# ---- commands ----------------------------------------------------------------

def _emit(text: str, path: Optional[str]) -> None:
    if path:
        write_text(path, text)
    else:
        sys.stdout.write(text)


def cmd_generate(ns) -> int:
    result = run(_run_config(ns))
    cfg = result.config
    meta = dict(result.greedy.metadata() if result.greedy else {})
    meta.update(result.extra)
    if ns.design:
        save_design(ns.design, result.design, algorithm=cfg.alg, config=cfg.to_dict(), metadata=meta)
    if ns.trace:
        save_trace(ns.trace, result.trace)
    if not ns.design and not ns.trace:
        sys.stdout.write(result.trace.to_csv())
    return 0


def _checkerboard_levels(n: int) -> List[int]:
    levels, m = [], 0
    while theory.n_m_4d(m) + theory.ell_m_4d(m) <= n:
        levels.append(m)
        m += 1
    return levels


def certificates_for(result: RunResult, names: Sequence[str], tol: float = 1e-9,
                     sep_m: int = 2) -> List[theory.CertificateReport]:
    cfg, design, trace = result.config, result.design, result.trace
    reports = []
    for name in names:
        if name in ("schedule2d", "schedule4d"):
            d = int(name[-2])
            if cfg.dim != d:
                raise ConfigError(f"{name} needs --dim {d}")
            reports.append(theory.certify_against_schedule(trace, d, tol))
        elif name == "mr-bound":
            if result.mr_floor is None:
                raise ConfigError(f"no mesh-ratio bound is known for {cfg.alg}")
            reports.append(theory.certify_mesh_ratio_bound(trace, result.mr_floor))
        elif name == "fill-lower":
            if isinstance(design.domain, FiniteSet):
                raise ConfigError("fill-lower needs a continuous domain")
            reports.append(theory.certify_fill_lower_bound(trace, design.domain, design.norm))
        elif name == "sep-upper":
            if isinstance(design.domain, FiniteSet):
                raise ConfigError("sep-upper needs a continuous domain")
            reports.append(theory.certify_separation_upper_bound(design, sep_m))
        elif name == "pigeonhole":
            reports.append(theory.certify_pigeonhole_trace(trace))
        elif name == "checkerboard":
            levels = _checkerboard_levels(len(design)) if cfg.dim == 4 else []
            if not levels:
                raise ConfigError("checkerboard needs a d=4 run with n >= 41")
            combined = theory.CertificateReport("checkerboard")
            for m in levels:
                combined.rows += theory.certify_d4_checkerboard(design, m).rows
            reports.append(combined)
        elif name == "sandwich":
            g = result.greedy
            if g is None or g.candidates is None or g.candidates.grid is None:
                raise ConfigError("sandwich needs a grid run")
            fine, _ = g.resolved_eval()
            reports.append(theory.certify_sandwich(design, g.candidates, fine))
        else:
            raise ConfigError(f"unknown certificate {name!r}")
    return reports


def cmd_verify(ns) -> int:
    names = [c.strip() for c in ns.cert.split(",") if c.strip()]
    bad = [c for c in names if c not in CERTIFICATES]
    if bad or not names:
        raise ConfigError(f"unknown certificate(s) {bad}; choose from {','.join(CERTIFICATES)}")
    cfg = _run_config(ns)
    cfg.validate()
    result = run(cfg)
    reports = certificates_for(result, names, ns.tol, ns.sep_m)
    for r in reports:
        print(r.summary(), file=sys.stderr)
    _emit(reports_to_json(reports), ns.report)
    return 0 if all(r.overall for r in reports) else 1


COMPARE_COLUMNS = ("n", "sr_left", "cr_left", "mr_left", "sr_right", "cr_right", "mr_right")


def compare_traces(left: MetricsTrace, right: MetricsTrace) -> Tuple[str, np.ndarray]:
    """CSV of aligned (sr, cr_upper, mr_upper) rows and the max absolute differences."""
    a = {r.n: (r.sr, r.cr_upper, r.mr_upper) for r in left}
    b = {r.n: (r.sr, r.cr_upper, r.mr_upper) for r in right}
    lines = [",".join(COMPARE_COLUMNS)]
    diffs = np.zeros(3)
    nan = (math.nan,) * 3
    for n in sorted(set(a) | set(b)):
        va, vb = a.get(n, nan), b.get(n, nan)
        lines.append(str(n) + "," + ",".join(f"{v:.17g}" for v in va + vb))
        diffs = np.fmax(diffs, np.abs(np.subtract(va, vb)))
        if n not in a or n not in b:
            diffs[:] = math.inf
    lines.append("max_abs_diff," + ",".join(f"{v:.17g}" for v in diffs) + ",,,")
    return "\n".join(lines) + "\n", diffs


def cmd_compare(ns) -> int:
    configs = []
    for flags in (ns.left, ns.right):
        sub = _run_parser("compare-run")
        try:
            parsed = sub.parse_args(shlex.split(flags))
        except SystemExit:
            raise ConfigError(f"bad run flags {flags!r}") from None
        configs.append(_run_config(parsed))
    if configs[0].n != configs[1].n:
        raise ConfigError(f"n differs: {configs[0].n} vs {configs[1].n}")
    left, right = (run(c) for c in configs)
    text, diffs = compare_traces(left.trace, right.trace)
    _emit(text, ns.out)
    print("max abs diff (sr, cr, mr): " + " ".join(f"{v:.3g}" for v in diffs), file=sys.stderr)
    return 0


def schedule_csv(d: int, start: int, stop: int) -> str:
    first = theory.schedule_start(d)
    if start < first:
        raise ConfigError(f"the d={d} schedule starts at n = {first}")
    if stop < start:
        raise ConfigError("empty range")
    lines = ["n,phase,sr,cr,mr"]
    for n in range(start, stop + 1):
        p = theory.predicted_metrics(n, d)
        lines.append(f"{n},{p.phase},{p.sr:.17g},{p.cr:.17g},{p.mr:.17g}")
    return "\n".join(lines) + "\n"


def cmd_schedule(ns) -> int:
    _emit(schedule_csv(ns.dim, ns.start, ns.stop), ns.out)
    return 0


COMMANDS = {"generate": cmd_generate, "verify": cmd_verify, "compare": cmd_compare,
            "schedule": cmd_schedule}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[ns.command](ns)
    except ValueError as exc:  # includes ConfigError
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
