"""Numerical tolerances shared by every module."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # geometry
    lift_window: float = 0.25
    equidistance_rel: float = 1e-12
    interior_barycentric: float = 1e-10
    gram_condition_max: float = 1e12
    empty_ball_abs: float = 1e-12
    # quadrature / root finding
    quad_rel: float = 1e-6
    quad_max_nodes: int = 4_000_000
    radius_abs: float = 1e-12
    # measures and samplers
    probability_mass: float = 1e-9
    total_mass_rel: float = 1e-4
    sampler_max_proposals: int = 10**9


TOL = Tolerances()
