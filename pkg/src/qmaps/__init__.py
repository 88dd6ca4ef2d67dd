"""Numerical toolkit for Dirichlet-minimizing Q-valued maps."""

from .aq_space import (
    QPoint,
    metric_G,
    combine,
    translate,
    separation,
    diameter,
    cluster_round,
    retraction_theta,
    linear_interpolate,
)
from .manifold import ManifoldTarget, parse_target
from .grid import QGridMap, dirichlet_energy, ball_energy_profile, density, holder_fit
from .minimizer import MinimizeConfig, minimize, competitor_check, classify_regularity
from .splitting import SplitReport, split_qpoint, split_map

__version__ = "0.1.0"
