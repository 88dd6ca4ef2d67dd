"""Split a Q-point or a Q-valued map into well separated lower-multiplicity parts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .aq_space import (
    PreconditionError,
    QPoint,
    _check_pair,
    cluster_round,
    match_batch,
    metric_G_batch,
    retract_batch,
    separation,
)
from .grid import QGridMap, dirichlet_energy
from .manifold import flat

__all__ = ["SplitReport", "split_qpoint", "split_map", "part_gap"]


@dataclass
class SplitReport:
    """Result of a split.

    ``parts`` holds QPoints for :func:`split_qpoint` and QGridMaps for
    :func:`split_map`. ``target_parts`` are the clusters T_j of the reference
    point, in the same order. The violation counters are zero whenever the
    discrete inequalities hold.
    """

    parts: list
    multiplicities: list[int]
    sigma: float
    support_gaps: float
    energy_in: float = 0.0
    energy_out: float = 0.0
    bad_set_fraction: float = 0.0
    target_parts: list = field(default_factory=list)
    s: float = 0.0
    edge_violations: int = 0
    max_edge_excess: float = 0.0
    contraction_violations: int = 0
    max_contraction_excess: float = 0.0

    @property
    def J(self) -> int:
        return len(self.parts)

    @property
    def gap_ok(self) -> bool:
        return self.sigma == 0 or self.support_gaps >= 0.8 * self.sigma

    @property
    def valid(self) -> bool:
        return (self.gap_ok and self.edge_violations == 0 and self.contraction_violations == 0
                and self.energy_out <= self.energy_in + 1e-12)

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "multiplicities": [int(q) for q in self.multiplicities],
            "sigma": self.sigma,
            "support_gaps": self.support_gaps,
            "s": self.s,
            "energy_in": self.energy_in,
            "energy_out": self.energy_out,
            "bad_set_fraction": self.bad_set_fraction,
            "edge_violations": self.edge_violations,
            "max_edge_excess": self.max_edge_excess,
            "contraction_violations": self.contraction_violations,
            "max_contraction_excess": self.max_contraction_excess,
            "target_parts": [p.points.tolist() for p in self.target_parts],
            "valid": self.valid,
        }


def _check_eps(eps: float) -> None:
    if not 0 < eps <= 0.1:
        raise PreconditionError(f"eps must lie in (0, 1/10], got {eps}")


def part_gap(parts: list[QPoint]) -> float:
    """Minimum distance between the supports of distinct parts (inf for one part)."""
    best = np.inf
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            d = np.linalg.norm(parts[i].points[:, None, :] - parts[j].points[None, :, :], axis=-1)
            best = min(best, float(d.min()))
    return best


def _cluster_parts(T: QPoint, eps: float):
    cr = cluster_round(T, eps)
    if cr.degenerate or len(cr.atoms) == 1:
        return cr, [T], [T.Q]
    parts = [QPoint(T.points[cr.labels == j]) for j in range(len(cr.atoms))]
    return cr, parts, [p.Q for p in parts]


def split_qpoint(T: QPoint, eps: float = 0.1) -> SplitReport:
    """Group the points of ``T`` by the atoms of its rounding ``S(T)``."""
    _check_eps(eps)
    cr, parts, mult = _cluster_parts(T, eps)
    sigma = 0.0 if len(parts) == 1 else separation(cr.S)
    return SplitReport(parts=parts, multiplicities=mult, sigma=sigma,
                       support_gaps=part_gap(parts), target_parts=list(parts))


def split_map(u: QGridMap, T: QPoint, eps: float = 0.1,
              s: Union[str, float, None] = "auto") -> SplitReport:
    """Retract ``u`` onto a small ball about ``S(T)`` and split it by cluster.

    Every node value is sent through the 1-Lipschitz retraction onto
    ``B_s(S)``; the retracted sheets matched to atom j of ``S`` form the
    part ``v_j``. Edge energies and distances to ``T`` are compared edge by
    edge and node by node.
    """
    _check_eps(eps)
    _check_pair(u.values.reshape(-1, u.Q, u.m)[0], T.points)
    cr, tparts, mult = _cluster_parts(T, eps)
    e_in = dirichlet_energy(u)
    if len(tparts) == 1:
        # nothing to separate; the retraction is not needed
        return SplitReport(parts=[u], multiplicities=mult, sigma=0.0, support_gaps=np.inf,
                           energy_in=e_in, energy_out=e_in, target_parts=tparts, s=0.0)
    S = cr.S
    sigma = separation(S)
    s_val = sigma / 5 if s in (None, "auto") else float(s)
    if not (s_val > 0 and 4 * s_val < sigma):
        raise PreconditionError(f"need 0 < 4s < sep(S) = {sigma}; got s={s_val}")

    flat_vals = u.values.reshape(-1, u.Q, u.m)
    dist_S = metric_G_batch(flat_vals, np.broadcast_to(S.points, flat_vals.shape))
    altered = dist_S > s_val
    R = retract_batch(S, s_val, flat_vals)
    # sheets of R matched to the rows of S, then grouped by atom
    perm, _ = match_batch(np.broadcast_to(S.points, R.shape), R)
    Rm = np.take_along_axis(R, perm[..., None], axis=-2)
    order = np.argsort(cr.labels, kind="stable")
    bounds = np.cumsum([0] + mult)
    grid_shape = u.shape
    tgt = flat(u.m)
    parts = []
    for j in range(len(mult)):
        rows = order[bounds[j]:bounds[j + 1]]
        parts.append(QGridMap(Rm[:, rows].reshape(grid_shape + (mult[j], u.m)), u.h, u.origin, tgt))

    # per-edge subadditivity
    n_edge_bad, edge_excess = 0, 0.0
    for ax in range(u.N):
        lhs = sum(p.edge_sq[ax] for p in parts)
        rhs = u.edge_sq[ax]
        excess = lhs - rhs
        n_edge_bad += int((excess > 1e-12 * (1.0 + rhs)).sum())
        edge_excess = max(edge_excess, float(excess.max(initial=0.0)))

    # nodewise contraction towards the clusters of T
    d_in = metric_G_batch(flat_vals, np.broadcast_to(T.points, flat_vals.shape)) ** 2
    d_out = np.zeros_like(d_in)
    for p, tp in zip(parts, tparts):
        pv = p.values.reshape(-1, tp.Q, u.m)
        d_out += metric_G_batch(pv, np.broadcast_to(tp.points, pv.shape)) ** 2
    cexcess = d_out - d_in
    n_con_bad = int((cexcess > 1e-12 * (1.0 + d_in)).sum())

    e_out = sum(dirichlet_energy(p) for p in parts)
    return SplitReport(
        parts=parts, multiplicities=mult, sigma=sigma, support_gaps=part_gap(tparts),
        energy_in=e_in, energy_out=e_out, bad_set_fraction=float(altered.mean()),
        target_parts=tparts, s=s_val, edge_violations=n_edge_bad, max_edge_excess=edge_excess,
        contraction_violations=n_con_bad, max_contraction_excess=float(cexcess.max(initial=0.0)),
    )
