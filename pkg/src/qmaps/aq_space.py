"""The metric space A_Q(R^m) of unordered Q-tuples of points.

A Q-point is stored as a ``(Q, m)`` array whose row order carries no
meaning. Distances are computed with the optimal-matching metric

    G(S, T)^2 = min over permutations s of sum_i |S_i - T_s(i)|^2,

solved exactly as a linear assignment problem.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "DimensionMismatch",
    "PreconditionError",
    "QPoint",
    "optimal_matching",
    "metric_G",
    "metric_G_bruteforce",
    "combine",
    "translate",
    "separation",
    "diameter",
    "ClusterResult",
    "cluster_round",
    "beta_constant",
    "retraction_theta",
    "retract_batch",
    "linear_interpolate",
    "permutations_table",
    "match_batch",
    "metric_G_batch",
]

# Below this multiplicity batched matchings enumerate all permutations.
_ENUM_MAX_Q = 5


class DimensionMismatch(ValueError):
    """Raised when Q-points of different multiplicity or dimension meet."""


class PreconditionError(ValueError):
    """Raised when an operation's documented precondition fails."""


@dataclass(frozen=True)
class QPoint:
    """An element of A_Q(R^m).

    ``points`` has shape ``(Q, m)``. Equality and every operation in this
    module are invariant under reordering the rows.
    """

    points: np.ndarray
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"points must have shape (Q, m), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def Q(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @classmethod
    def from_text(cls, text: str) -> "QPoint":
        """Parse ``"Q m p1_1 ... p1_m ; p2_1 ... ; ..."``."""
        head, *rest = text.split(";")
        tokens = head.split()
        if len(tokens) < 2:
            raise ValueError("expected 'Q m' followed by the first point")
        try:
            q, m = int(tokens[0]), int(tokens[1])
            chunks = [tokens[2:]] + [r.split() for r in rest]
            pts = [[float(v) for v in c] for c in chunks]
        except ValueError as exc:
            raise ValueError(f"malformed Q-point text: {text!r}") from exc
        if len(pts) != q or any(len(p) != m for p in pts):
            raise ValueError(
                f"expected {q} points of dimension {m} in {text!r}")
        return cls(np.array(pts, dtype=float).reshape(q, m))

    def to_text(self) -> str:
        body = " ; ".join(" ".join(repr(float(v)) for v in p) for p in self.points)
        return f"{self.Q} {self.m} {body}"

    def sorted_points(self) -> np.ndarray:
        """Canonical lexicographic row order, handy for comparisons."""
        idx = np.lexsort(self.points.T[::-1])
        return self.points[idx]

    def __repr__(self) -> str:
        inner = " + ".join(f"[{', '.join(f'{v:g}' for v in p)}]" for p in self.points)
        return f"QPoint({inner})"


def _as_array(x) -> np.ndarray:
    return x.points if isinstance(x, QPoint) else np.asarray(x, dtype=float)


def _check_pair(S: np.ndarray, T: np.ndarray) -> None:
    if S.shape != T.shape:
        raise DimensionMismatch(
            f"Q-points differ in shape: {S.shape} vs {T.shape}")


def _cost(S: np.ndarray, T: np.ndarray) -> np.ndarray:
    d = S[:, None, :] - T[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


@lru_cache(maxsize=None)
def permutations_table(Q: int) -> np.ndarray:
    """All permutations of range(Q) in lexicographic order, shape (Q!, Q)."""
    return np.array(list(itertools.permutations(range(Q))), dtype=np.intp)


def optimal_matching(S, T) -> tuple[np.ndarray, float]:
    """Return ``(perm, cost)`` with ``T[perm]`` optimally matched to ``S``.

    For small Q all permutations are scanned and the lexicographically
    first optimum is kept; otherwise the assignment solver decides.
    """
    S, T = _as_array(S), _as_array(T)
    _check_pair(S, T)
    C = _cost(S, T)
    Q = S.shape[0]
    if Q <= _ENUM_MAX_Q:
        perms = permutations_table(Q)
        costs = C[np.arange(Q), perms].sum(axis=1)
        k = int(np.argmin(costs))
        return perms[k].copy(), float(costs[k])
    rows, cols = linear_sum_assignment(C)
    return cols, float(C[rows, cols].sum())


def metric_G(S, T) -> float:
    """Optimal-matching distance between two Q-points."""
    S, T = _as_array(S), _as_array(T)
    _check_pair(S, T)
    C = _cost(S, T)
    rows, cols = linear_sum_assignment(C)
    return float(np.sqrt(max(C[rows, cols].sum(), 0.0)))


def metric_G_bruteforce(S, T) -> float:
    """Reference implementation scanning every permutation."""
    S, T = _as_array(S), _as_array(T)
    _check_pair(S, T)
    C = _cost(S, T)
    Q = S.shape[0]
    best = min(sum(C[i, p[i]] for i in range(Q)) for p in itertools.permutations(range(Q)))
    return float(np.sqrt(best))


def combine(S: QPoint, T: QPoint) -> QPoint:
    """Intrinsic addition: the multiset union of two Q-points."""
    if S.m != T.m:
        raise DimensionMismatch(f"ambient dimensions differ: {S.m} vs {T.m}")
    return QPoint(np.vstack([S.points, T.points]))


def translate(T: QPoint, s) -> QPoint:
    """Shift every point of ``T`` by the vector ``s``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (T.m,):
        raise DimensionMismatch(f"shift has shape {s.shape}, expected ({T.m},)")
    return QPoint(T.points + s)


def _distinct(points: np.ndarray, tol: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows and, for each input row, the index of its distinct value."""
    uniq, inverse = np.unique(points, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def separation(T) -> float:
    """Smallest distance between two distinct points; 0 if all coincide."""
    uniq, _ = _distinct(_as_array(T))
    if len(uniq) < 2:
        return 0.0
    d = np.sqrt(_cost(uniq, uniq))
    return float(d[np.triu_indices(len(uniq), 1)].min())


def diameter(T) -> float:
    """Largest pairwise distance between points."""
    P = _as_array(T)
    if P.shape[0] < 2:
        return 0.0
    return float(np.sqrt(_cost(P, P).max()))


def beta_constant(eps: float, Q: int) -> float:
    """The clustering constant eps^Q * 3^(4 - Q^2)."""
    return eps ** Q * 3.0 ** (4 - Q * Q)


@dataclass(frozen=True)
class ClusterResult:
    """Output of :func:`cluster_round`.

    ``labels[i]`` names the atom of ``S`` that point ``i`` of ``T`` was moved
    to; ``atoms`` are the distinct support points of ``S``.
    """

    S: QPoint
    atoms: np.ndarray
    labels: np.ndarray
    degenerate: bool
    level: int

    @property
    def multiplicities(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.atoms))


def _rounded(P: np.ndarray, groups: Sequence[Sequence[int]]):
    """Round each group of rows of ``P`` to its most central member.

    Near-ties go to the lexicographically smallest point, so the result does
    not depend on the row order of ``P``.
    """
    atoms = []
    labels = np.empty(P.shape[0], dtype=np.intp)
    for j, g in enumerate(groups):
        g = np.asarray(sorted(g))
        c = P[g].mean(axis=0)
        cand = np.unique(P[g], axis=0)
        d = ((cand - c) ** 2).sum(axis=1)
        k = int(np.flatnonzero(d <= d.min() * (1 + 1e-9) + 1e-300)[0])
        atoms.append(cand[k])
        labels[g] = j
    return np.array(atoms), labels


def _round_ok(P: np.ndarray, atoms: np.ndarray, labels: np.ndarray, eps: float) -> bool:
    S = atoms[labels]
    sepS = separation(S)
    g = metric_G(P, S)
    beta = beta_constant(eps, P.shape[0])
    return sepS > 0 and g < eps * sepS and beta * diameter(P) < sepS


def _set_partitions(items: list[int]):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def cluster_round(T: QPoint, eps: float) -> ClusterResult:
    """Round ``T`` onto a well separated Q-point supported in spt(T).

    Returns the coarsest level of the single-linkage merge hierarchy of
    the distinct points of ``T`` for which

        G(T, S) < eps * sep(S)   and   beta * diam(spt T) < sep(S),

    with beta = eps^Q 3^(4-Q^2). Each cluster is represented by its point
    closest to the cluster centroid. If no level of the hierarchy works an
    exhaustive search over groupings is tried.
    """
    if not 0.0 < eps < 1.0:
        raise PreconditionError(f"eps must lie in (0, 1), got {eps}")
    P = T.points
    Q = T.Q
    if diameter(P) == 0.0:
        return ClusterResult(QPoint(P, degenerate=True), P[:1].copy(),
                             np.zeros(Q, dtype=np.intp), True, 0)

    uniq, inv = _distinct(P)
    n = len(uniq)
    members = [list(np.flatnonzero(inv == k)) for k in range(n)]
    # single-linkage merge sequence over the distinct values
    clusters = [[k] for k in range(n)]
    D = np.sqrt(_cost(uniq, uniq))
    levels = [[list(c) for c in clusters]]
    while len(clusters) > 1:
        best, pair = np.inf, None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d = D[np.ix_(clusters[a], clusters[b])].min()
                if d < best:
                    best, pair = d, (a, b)
        a, b = pair
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
        levels.append([list(c) for c in clusters])

    def groups_of(level):
        return [sorted(i for k in c for i in members[k]) for c in level]

    for lev in range(len(levels) - 1, -1, -1):
        atoms, labels = _rounded(P, groups_of(levels[lev]))
        if _round_ok(P, atoms, labels, eps):
            return ClusterResult(QPoint(atoms[labels]), atoms, labels, False, lev)

    if n <= 8:
        best = None
        for part in _set_partitions(list(range(n))):
            groups = groups_of(part)
            for reps in itertools.product(*groups):
                atoms = P[list(reps)]
                labels = np.empty(Q, dtype=np.intp)
                for j, g in enumerate(groups):
                    labels[g] = j
                if _round_ok(P, atoms, labels, eps):
                    cand = (len(groups), atoms, labels)
                    if best is None or cand[0] < best[0]:
                        best = cand
        if best is not None:
            _, atoms, labels = best
            return ClusterResult(QPoint(atoms[labels]), atoms, labels, False, -1)
    raise PreconditionError("no admissible rounding found")


def _profile(g: np.ndarray, s: float, sep: float) -> np.ndarray:
    """Radial profile of the retraction: identity, plateau at s, then collapse.

    Every point farther than s + sep/4 from the center collapses onto the
    center itself, which keeps the map continuous across the cut locus of
    the matching (that lies at distance >= sep/2).
    """
    return np.minimum(g, np.minimum(s, np.maximum(s + 0.25 * sep - g, 0.0)))


def retraction_theta(T: QPoint, s: float, S) -> QPoint:
    """1-Lipschitz retraction of A_Q onto the closed ball of radius s about T.

    Inside ``B_{sep/2}(T)`` optimal matchings to ``T`` respect the clusters
    of ``T``, so that ball is a piece of a product of Euclidean cones with
    apex ``T``. A radial map whose profile f has ``|f'| <= 1`` and
    ``f(r) <= r`` is 1-Lipschitz on such a cone.
    """
    sep = separation(T)
    if not (s > 0 and 4 * s < sep):
        raise PreconditionError(f"need 0 < 4s < sep(T); got s={s}, sep={sep}")
    Sp = _as_array(S)
    _check_pair(Sp, T.points)
    return QPoint(_retract_core(T.points, s, sep, Sp[None])[0])


def _retract_core(T: np.ndarray, s: float, sep: float, S: np.ndarray) -> np.ndarray:
    perm, cost = match_batch(np.broadcast_to(T, S.shape), S)
    # perm maps T rows to S rows; reorder S so row i pairs with T[i]
    Sm = np.take_along_axis(S, perm[..., None], axis=-2)
    g = np.sqrt(np.maximum(cost, 0.0))
    f = _profile(g, s, sep)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(g > 0, f / np.where(g > 0, g, 1.0), 1.0)
    out = T + scale[:, None, None] * (Sm - T)
    inside = g <= s
    out[inside] = S[inside]
    return out


def retract_batch(T: QPoint, s: float, values: np.ndarray) -> np.ndarray:
    """Apply :func:`retraction_theta` to an array of Q-points ``(..., Q, m)``."""
    sep = separation(T)
    if not (s > 0 and 4 * s < sep):
        raise PreconditionError(f"need 0 < 4s < sep(T); got s={s}, sep={sep}")
    V = np.asarray(values, dtype=float)
    flat = V.reshape(-1, T.Q, T.m)
    return _retract_core(T.points, s, sep, flat).reshape(V.shape)


def linear_interpolate(S: QPoint, T: QPoint, a: float, b: float, t: float) -> QPoint:
    """Point at parameter t on the linear path from S (at a) to T (at b)."""
    if not a < b:
        raise PreconditionError(f"need a < b, got [{a}, {b}]")
    if not a <= t <= b:
        raise PreconditionError(f"t={t} outside [{a}, {b}]")
    if t == a:
        return S
    if t == b:
        return T
    perm, _ = optimal_matching(S, T)
    tau = (t - a) / (b - a)
    return QPoint((1 - tau) * S.points + tau * T.points[perm])


# ---------------------------------------------------------------------------
# batched matchings, used by the grid code


def match_batch(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Optimal matchings for stacks of Q-points.

    ``A`` and ``B`` have shape ``(..., Q, m)``. Returns ``perm`` of shape
    ``(..., Q)`` with ``B[..., perm, :]`` matched to ``A`` and the squared
    distance. Ties resolve to the lexicographically first permutation.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise DimensionMismatch(f"shapes differ: {A.shape} vs {B.shape}")
    Q = A.shape[-2]
    lead = A.shape[:-2]
    if Q == 1:
        d = A - B
        return (np.zeros(lead + (1,), dtype=np.intp),
                np.einsum("...ij,...ij->...", d, d))
    diff = A[..., :, None, :] - B[..., None, :, :]
    C = np.einsum("...k,...k->...", diff, diff)
    if Q <= _ENUM_MAX_Q:
        perms = permutations_table(Q)
        costs = C[..., np.arange(Q), perms].sum(axis=-1)
        k = np.argmin(costs, axis=-1)
        return perms[k], np.take_along_axis(costs, k[..., None], axis=-1)[..., 0]
    Cf = C.reshape(-1, Q, Q)
    perm = np.empty((Cf.shape[0], Q), dtype=np.intp)
    cost = np.empty(Cf.shape[0])
    for n in range(Cf.shape[0]):
        r, c = linear_sum_assignment(Cf[n])
        perm[n] = c
        cost[n] = Cf[n][r, c].sum()
    return perm.reshape(lead + (Q,)), cost.reshape(lead)


def metric_G_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Elementwise G for stacks of Q-points."""
    return np.sqrt(np.maximum(match_batch(A, B)[1], 0.0))
