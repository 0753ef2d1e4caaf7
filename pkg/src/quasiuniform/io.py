"""JSON and CSV serialization of designs, traces and certificate reports."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np

from .geometry import Norm, domain_from_dict
from .metrics import Design, MetricsTrace
from .sequences import PRNG_ID, TIE_BREAK_RULE
from .theory import CertificateReport


def design_to_dict(design: Design, algorithm: str = "", config: Optional[dict] = None,
                   metadata: Optional[dict] = None) -> dict:
    meta = {"tie_break": TIE_BREAK_RULE, "prng": PRNG_ID}
    meta.update(metadata or {})
    return {
        "dimension": design.dim,
        "norm": design.norm.value,
        "domain": design.domain.to_dict(),
        "algorithm": algorithm,
        "config": config or {},
        "metadata": meta,
        "points": design.points.tolist(),
    }


def design_from_dict(data: dict) -> Design:
    dim = int(data["dimension"])
    points = np.asarray(data["points"], dtype=float).reshape(-1, dim)
    return Design(points, domain_from_dict(data["domain"]), Norm.parse(data["norm"]))


def dumps_json(data) -> str:
    # repr-based float output round-trips exactly
    return json.dumps(data, indent=1) + "\n"


def write_text(path: Union[str, Path], text: str) -> None:
    """UTF-8 with LF line endings on every platform."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def save_design(path, design: Design, **kwargs) -> None:
    write_text(path, dumps_json(design_to_dict(design, **kwargs)))


def load_design(path) -> Design:
    with open(path, encoding="utf-8") as fh:
        return design_from_dict(json.load(fh))


def save_trace(path, trace: MetricsTrace) -> None:
    write_text(path, trace.to_csv())


def load_trace(path) -> MetricsTrace:
    with open(path, encoding="utf-8", newline="") as fh:
        return MetricsTrace.from_csv(fh)


def reports_to_json(reports: Iterable[CertificateReport]) -> str:
    return dumps_json([r.to_dict() for r in reports])
