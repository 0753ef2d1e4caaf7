"""Quasi-uniform nested designs: greedy packing and its variants, covering and
packing metrics, and checks against known mesh-ratio guarantees."""

from .geometry import Ball, FiniteSet, Hypercube, Norm, dyadic_grid, inflated_volume
from .metrics import (
    Design,
    DistanceField,
    MetricsTrace,
    TraceRow,
    fill_distance_finite,
    fill_distance_interval,
    mesh_ratio,
    separation_radius,
    trace_for_design,
    trace_for_interval,
)
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
from .theory import CertificateReport, predicted_metrics_2d, predicted_metrics_4d

__all__ = [
    "Ball", "FiniteSet", "Hypercube", "Norm", "dyadic_grid", "inflated_volume",
    "Design", "DistanceField", "MetricsTrace", "TraceRow", "fill_distance_finite",
    "fill_distance_interval", "mesh_ratio", "separation_radius", "trace_for_design",
    "trace_for_interval", "GreedyConfig", "RelaxationSchedule", "beta_recommended",
    "boundary_phobic_packing", "greedy_packing", "greedy_packing_interval",
    "relaxed_greedy_packing", "van_der_corput", "CertificateReport",
    "predicted_metrics_2d", "predicted_metrics_4d",
]
