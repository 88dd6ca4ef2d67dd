"""Extensions on single faces: homogeneous, disk (branched) and strip."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import pi
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..aq_space import match_batch, permutations_table
from .faces import cube_to_sphere

__all__ = [
    "RefinementNeeded",
    "linear_column",
    "homogeneous_extension",
    "HomogeneousReport",
    "homogeneous_report",
    "monodromy",
    "Branch",
    "irreducible_decomposition",
    "harmonic_extension_fourier",
    "harmonic_extension_fd",
    "DiskExtension",
    "disk_extension",
    "circle_energy",
    "StripExtension",
    "strip_extension",
    "harmonic_strip_deviation",
]

AMBIGUITY_TOL = 1e-9


class RefinementNeeded(ValueError):
    """Consecutive samples are too far apart for an unambiguous matching."""


def linear_column(S: np.ndarray, T: np.ndarray, n: int) -> np.ndarray:
    """Linear interpolation from S to T at n+1 equispaced parameters.

    Works on stacks: ``S``, ``T`` of shape (..., Q, m); output
    (..., n+1, Q, m) with the endpoints copied exactly.
    """
    S = np.asarray(S, dtype=float)
    T = np.asarray(T, dtype=float)
    perm = match_batch(S, T)[0]
    Tm = np.take_along_axis(T, perm[..., None], axis=-2)
    s = (np.arange(n + 1) / n).reshape((n + 1, 1, 1))
    out = (1 - s) * S[..., None, :, :] + s * Tm[..., None, :, :]
    out[..., 0, :, :] = S
    out[..., n, :, :] = T
    return out


# ---------------------------------------------------------------------------
# homogeneous extension on cubes of dimension >= 3


@lru_cache(maxsize=64)
def _homogeneous_index(n: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices of interior nodes and of the boundary node on their ray."""
    grid = np.stack(np.meshgrid(*([np.arange(p + 1)] * n), indexing="ij"), -1).reshape(-1, n)
    on_bd = np.any((grid == 0) | (grid == p), axis=1)
    interior = np.nonzero(~on_bd)[0]
    x = grid[interior] - p / 2
    r_inf = np.abs(x).max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        ray = x * (p / 2) / r_inf
    ray[r_inf[:, 0] == 0] = 0.0
    ray[r_inf[:, 0] == 0, 0] = p / 2
    hit = np.rint(ray + p / 2).astype(np.int64)
    # make sure the dominant coordinate stays on the facet
    k = np.argmax(np.abs(ray), axis=1)
    rows = np.arange(len(hit))
    hit[rows, k] = np.where(ray[rows, k] > 0, p, 0)
    flat = np.ravel_multi_index(tuple(hit.T), (p + 1,) * n)
    return interior, flat


def homogeneous_extension(boundary: np.ndarray, n: int, lam: float = 1.0) -> np.ndarray:
    """0-homogeneous extension of boundary values into a cube of dimension n.

    ``boundary`` has shape (..., (p+1,)*n, Q, m); interior entries are
    ignored and overwritten. Each interior node takes the value of the
    boundary node nearest to where its ray from the centre leaves the cube,
    so every value is one of the boundary samples. ``lam`` is the side
    length and does not change the values.
    """
    if n < 3:
        raise ValueError("the homogeneous extension needs face dimension n >= 3")
    if not lam > 0:
        raise ValueError("lam must be positive")
    vals = np.array(boundary, dtype=float)
    lead = vals.ndim - n - 2
    p = vals.shape[lead] - 1
    if vals.shape[lead:lead + n] != (p + 1,) * n:
        raise ValueError("boundary must be sampled on a cubical lattice")
    interior, src = _homogeneous_index(n, p)
    flat = vals.reshape(vals.shape[:lead] + (-1,) + vals.shape[-2:])
    flat[..., interior, :, :] = flat[..., src, :, :]
    return flat.reshape(vals.shape)


def _cube_edge_energy(vals: np.ndarray, n: int, h: float, boundary_only: bool) -> np.ndarray:
    lead = vals.ndim - n - 2
    p = vals.shape[lead] - 1
    tot = np.zeros(vals.shape[:lead])
    for a in range(n):
        lo = [slice(None)] * (vals.ndim)
        hi = [slice(None)] * (vals.ndim)
        lo[lead + a] = slice(0, -1)
        hi[lead + a] = slice(1, None)
        g2 = match_batch(vals[tuple(lo)], vals[tuple(hi)])[1]
        if boundary_only:
            idx = np.indices(g2.shape[lead:])
            mask = np.zeros(g2.shape[lead:], dtype=bool)
            for b in range(n):
                if b != a:
                    mask |= (idx[b] == 0) | (idx[b] == p)
            g2 = g2 * mask
            w = h ** (n - 3)
        else:
            w = h ** (n - 2)
        tot = tot + g2.reshape(g2.shape[:lead] + (-1,)).sum(axis=-1) * w
    return tot


@dataclass
class HomogeneousReport:
    energy: np.ndarray
    boundary_energy: np.ndarray
    ratio: np.ndarray
    bound: float
    h: float


def homogeneous_report(values: np.ndarray, n: int, lam: float) -> HomogeneousReport:
    """Grid energy of F against lam times the tangential energy of its boundary."""
    lead = values.ndim - n - 2
    p = values.shape[lead] - 1
    h = lam / p
    E = _cube_edge_energy(values, n, h, False)
    Eb = _cube_edge_energy(values, n, h, True)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(Eb > 0, E / (lam * Eb), 0.0)
    return HomogeneousReport(E, Eb, ratio, n / (2 * (n - 2)), h)


# ---------------------------------------------------------------------------
# irreducible decomposition of circle maps


def _unambiguous_perm(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Matchings of B to A with a flag marking ambiguous ones."""
    perm, cost = match_batch(A, B)
    Q = A.shape[-2]
    if Q == 1:
        return perm, np.zeros(cost.shape, dtype=bool)
    if Q > 6:
        # certificate: every matched pair closer than a quarter separation
        d = np.linalg.norm(A - np.take_along_axis(B, perm[..., None], axis=-2), axis=-1).max(-1)
        diff = np.linalg.norm(A[..., :, None, :] - A[..., None, :, :], axis=-1)
        diff[..., np.arange(Q), np.arange(Q)] = np.inf
        return perm, ~(d < diff.min(axis=(-2, -1)) / 4)
    perms = permutations_table(Q)
    diff = A[..., :, None, :] - B[..., None, :, :]
    C = np.einsum("...k,...k->...", diff, diff)
    costs = C[..., np.arange(Q), perms].sum(axis=-1)
    near = costs <= cost[..., None] + AMBIGUITY_TOL * (1.0 + cost[..., None])
    best = np.take_along_axis(B, perm[..., None], axis=-2)
    amb = np.zeros(cost.shape, dtype=bool)
    for j, pj in enumerate(perms):
        alt = B[..., pj, :]
        differs = np.abs(alt - best).max(axis=(-2, -1)) > 1e-12
        amb |= near[..., j] & differs
    return perm, amb


def monodromy(loop: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Track the sheets of a sampled circle map once around the loop.

    ``loop`` has shape (..., M, Q, m) with samples at angles 2 pi k / M.
    Returns ``(sigma, tracks)``: ``tracks[..., k, l]`` is sheet l followed
    continuously to sample k, and after a full turn sheet l continues as
    sheet ``sigma[..., l]``.
    """
    loop = np.asarray(loop, dtype=float)
    M = loop.shape[-3]
    tracks = np.empty_like(loop)
    tracks[..., 0, :, :] = loop[..., 0, :, :]
    amb_any = np.zeros(loop.shape[:-3], dtype=bool)
    for k in range(1, M + 1):
        nxt = loop[..., k % M, :, :]
        perm, amb = _unambiguous_perm(tracks[..., k - 1, :, :], nxt)
        amb_any |= amb
        if k < M:
            tracks[..., k, :, :] = np.take_along_axis(nxt, perm[..., None], axis=-2)
        else:
            sigma = perm
    if np.any(amb_any):
        raise RefinementNeeded("ambiguous matching between consecutive samples; refine the loop")
    return sigma, tracks


def _cycles(sigma: np.ndarray) -> tuple[tuple[int, ...], ...]:
    seen, out = set(), []
    for start in range(len(sigma)):
        if start in seen:
            continue
        cyc = [start]
        seen.add(start)
        nxt = int(sigma[start])
        while nxt != start:
            cyc.append(nxt)
            seen.add(nxt)
            nxt = int(sigma[nxt])
        out.append(tuple(cyc))
    return tuple(out)


@dataclass
class Branch:
    """A single-valued branch g on S^1 sampled at Q_j M equispaced angles."""

    Qj: int
    samples: np.ndarray
    sheets: tuple = ()


def _branch_samples(tracks: np.ndarray, cyc: tuple) -> np.ndarray:
    return np.concatenate([tracks[..., :, l, :] for l in cyc], axis=-2)


def irreducible_decomposition(loop: np.ndarray) -> list[Branch]:
    """Split a sampled circle map into branches with multiplicities Q_j.

    The cycles of the monodromy give the Q_j; a branch of multiplicity Q_j
    is the sheet unrolled over Q_j turns, i.e. a function of the covering
    angle psi = (theta + 2 pi t) / Q_j.
    """
    sigma, tracks = monodromy(loop)
    if sigma.ndim != 1:
        raise ValueError("irreducible_decomposition takes a single loop")
    return [Branch(len(c), _branch_samples(tracks, c), c) for c in _cycles(sigma)]


def circle_energy(loop: np.ndarray) -> np.ndarray:
    """Discrete tangential energy sum_k G(phi_k, phi_{k+1})^2 / dtheta."""
    loop = np.asarray(loop, dtype=float)
    M = loop.shape[-3]
    g2 = match_batch(loop, np.roll(loop, -1, axis=-3))[1]
    return g2.sum(axis=-1) / (2 * pi / M)


# ---------------------------------------------------------------------------
# single-valued harmonic extension


def _fourier(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    K = samples.shape[-2]
    c = np.fft.fft(samples, axis=-2) / K
    k = np.fft.fftfreq(K, d=1.0 / K)
    return c, k


def harmonic_extension_fourier(samples: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Harmonic extension of equispaced circle samples, evaluated at points.

    ``samples`` (..., K, m); ``points`` (n, 2) in the closed unit disk.
    Uses the trigonometric interpolant, so it is exact on the nodes.
    """
    c, k = _fourier(np.asarray(samples, dtype=float))
    z = points[:, 0] + 1j * points[:, 1]
    rho = np.abs(z)
    psi = np.angle(z)
    basis = rho[:, None] ** np.abs(k)[None, :] * np.exp(1j * np.outer(psi, k))
    return np.einsum("nk,...km->...nm", basis, c).real


def harmonic_extension_fd(samples: np.ndarray, nr: int) -> np.ndarray:
    """Five-point polar finite-difference harmonic extension.

    Returns values on rings r_i = i/nr (i = 0..nr) at the K sample angles,
    shape (nr+1, K, m); ring 0 is the centre. Used as an independent
    check of the Fourier route.
    """
    samples = np.asarray(samples, dtype=float)
    K, m = samples.shape
    dr, dt = 1.0 / nr, 2 * pi / K
    n_unknown = 1 + (nr - 1) * K

    def idx(i, k):
        return 1 + (i - 1) * K + (k % K)

    rows, cols, vals = [], [], []
    rhs = np.zeros((n_unknown, m))
    # centre: average of ring 1 (finite-volume form)
    rows += [0] * (K + 1)
    cols += [0] + [idx(1, k) for k in range(K)]
    vals += [-float(K)] + [1.0] * K
    for i in range(1, nr):
        r = i * dr
        rp, rm = r + dr / 2, r - dr / 2
        for k in range(K):
            me = idx(i, k)
            a_p = rp / (dr * dr * r)
            a_m = rm / (dr * dr * r)
            a_t = 1.0 / (r * r * dt * dt)
            rows += [me] * 5
            cols += [me, idx(i, k + 1), idx(i, k - 1)]
            vals += [-(a_p + a_m + 2 * a_t), a_t, a_t]
            cols.append(0 if i == 1 else idx(i - 1, k))
            vals.append(a_m)
            if i + 1 == nr:
                rhs[me] -= a_p * samples[k]
                cols.append(me)
                vals.append(0.0)
            else:
                cols.append(idx(i + 1, k))
                vals.append(a_p)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n_unknown, n_unknown))
    sol = spla.splu(A.tocsc()).solve(rhs)
    out = np.empty((nr + 1, K, m))
    out[0] = sol[0]
    out[1:nr] = sol[1:].reshape(nr - 1, K, m)
    out[nr] = samples
    return out


# ---------------------------------------------------------------------------
# branched disk extension


@dataclass
class DiskExtension:
    """Extension of a Q-valued circle map to the unit disk.

    Branch j with multiplicity Q_j contributes the Q_j values g_j(w) over
    the roots w^{Q_j} = x, where g_j is the harmonic extension of the
    unrolled branch.
    """

    M: int
    Q: int
    branches: list
    boundary: np.ndarray = field(repr=False)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Values at points (n, 2) of the closed disk, shape (n, Q, m)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return _evaluate_groups([(tuple(b.Qj for b in self.branches),
                                  [b.samples[None] for b in self.branches])],
                                [np.array([0])], points, 1)[0]

    def polar_values(self, nr: int) -> np.ndarray:
        """Values on rings i/nr at the M loop angles, shape (nr+1, M, Q, m)."""
        M = self.M
        out = []
        radii = np.arange(nr + 1) / nr
        for b in self.branches:
            c, k = _fourier(b.samples)
            rho = radii ** (1.0 / b.Qj)
            ring = np.fft.ifft(c[None] * (rho[:, None] ** np.abs(k))[..., None] * len(k), axis=1).real
            # sheet t at angle theta_i sits at covering index i + t M
            out.append(ring.reshape(nr + 1, b.Qj, M, -1).transpose(0, 2, 1, 3))
        vals = np.concatenate(out, axis=2)
        vals[nr] = self.boundary
        return vals

    def measure(self, nr: Optional[int] = None, max_pairs_nodes: int = 20000) -> "DiskMeasurement":
        nr = nr or max(16, self.M // 4)
        vals = self.polar_values(nr)
        E = polar_energy(vals)
        Ec = float(circle_energy(self.boundary))
        osc = _max_pairwise_sq(vals.reshape(-1, self.Q, vals.shape[-1]), max_pairs_nodes)
        h = max(1.0 / nr, 2 * pi / self.M)
        return DiskMeasurement(E, Ec, osc, h, self.Q)


@dataclass
class DiskMeasurement:
    energy: float
    circle_energy: float
    oscillation_sq: float
    h: float
    Q: int

    @property
    def energy_ratio(self) -> float:
        return self.energy / self.circle_energy if self.circle_energy > 0 else 0.0

    @property
    def oscillation_ratio(self) -> float:
        return self.oscillation_sq / self.circle_energy if self.circle_energy > 0 else 0.0

    @property
    def energy_ok(self) -> bool:
        return self.energy_ratio <= self.Q + 10 * self.h

    @property
    def oscillation_ok(self) -> bool:
        return self.oscillation_ratio <= pi * self.Q ** 2 + 10 * self.h


def polar_energy(vals: np.ndarray) -> float:
    """Finite-volume energy of values on rings i/nr (ring 0 the centre)."""
    nr = vals.shape[0] - 1
    M = vals.shape[1]
    dr, dt = 1.0 / nr, 2 * pi / M
    g_rad = match_batch(vals[:-1], vals[1:])[1]
    r_mid = (np.arange(nr) + 0.5) * dr
    E = (g_rad.sum(axis=1) * r_mid).sum() * dt / dr
    g_ang = match_batch(vals[1:], np.roll(vals[1:], -1, axis=1))[1]
    r = np.arange(1, nr + 1) * dr
    width = np.full(nr, dr)
    width[-1] = dr / 2
    E += (g_ang.sum(axis=1) * width / r).sum() / dt
    return float(E)


def _max_pairwise_sq(P: np.ndarray, max_nodes: int = 20000, n_refs: int = 4) -> float:
    """Largest G^2 over all pairs of a node set.

    For a few reference nodes the sheets of every node are aligned to the
    reference; each alignment gives an unmatched sheetwise cost that bounds
    G^2 from above. Only pairs whose smallest bound beats the running
    maximum get an assignment solve. Sets larger than ``max_nodes`` are
    subsampled with a stride.
    """
    n = len(P)
    if n > max_nodes:
        P = P[np.linspace(0, n - 1, max_nodes).astype(int)]
        n = max_nodes
    if n < 2:
        return 0.0
    if P.shape[-2] == 1:
        flat = P.reshape(n, -1)
        sq = (flat * flat).sum(axis=1)
        chunk = max(1, 2_000_000 // n)
        return float(max((sq[i:i + chunk, None] + sq[None, :] - 2 * flat[i:i + chunk] @ flat.T).max()
                         for i in range(0, n, chunk)))
    # references by farthest-point sampling in the G metric
    refs = [0]
    dist = match_batch(np.broadcast_to(P[0], P.shape), P)[1]
    for _ in range(min(n_refs, n) - 1):
        refs.append(int(np.argmax(dist)))
        dist = np.minimum(dist, match_batch(np.broadcast_to(P[refs[-1]], P.shape), P)[1])
    aligned = []
    for r in refs:
        perm = match_batch(np.broadcast_to(P[r], P.shape), P)[0]
        A = np.take_along_axis(P, perm[..., None], axis=-2).reshape(n, -1)
        aligned.append((A, (A * A).sum(axis=1)))
    best = 0.0
    chunk = max(1, 2_000_000 // n)
    for i0 in range(0, n, chunk):
        rows = slice(i0, min(n, i0 + chunk))
        ub = None
        for A, sq in aligned:
            u = sq[rows, None] + sq[None, :] - 2 * A[rows] @ A.T
            ub = u if ub is None else np.minimum(ub, u)
        # exact value at the row-wise largest bound tightens best quickly
        j = np.argmax(ub, axis=1)
        i = np.arange(ub.shape[0])
        best = max(best, float(match_batch(P[i + i0], P[j])[1].max()))
        cand = np.argwhere(ub > best * (1 + 1e-9))
        for k0 in range(0, len(cand), 8192):
            blk = cand[k0:k0 + 8192]
            blk = blk[ub[blk[:, 0], blk[:, 1]] > best * (1 + 1e-9)]
            if len(blk):
                best = max(best, float(match_batch(P[blk[:, 0] + i0], P[blk[:, 1]])[1].max()))
    return best


def _group_by_cycles(loops: np.ndarray):
    """Decompose a stack of loops, grouping loops that share a cycle type."""
    sigma, tracks = monodromy(loops)
    flat_sigma = sigma.reshape(-1, sigma.shape[-1])
    flat_tracks = tracks.reshape((-1,) + tracks.shape[-3:])
    groups: dict = {}
    for b in range(len(flat_sigma)):
        groups.setdefault(_cycles(flat_sigma[b]), []).append(b)
    out, members = [], []
    for cyc, idx in groups.items():
        idx = np.array(idx)
        out.append((tuple(len(c) for c in cyc), [_branch_samples(flat_tracks[idx], c) for c in cyc]))
        members.append(idx)
    return out, members


def _evaluate_groups(groups, members, points: np.ndarray, n_loops: int) -> np.ndarray:
    """Evaluate grouped branch data at shared points (n, 2)."""
    z = points[:, 0] + 1j * points[:, 1]
    r = np.abs(z)
    th = np.angle(z)
    result = None
    for (qs, samples), idx in zip(groups, members):
        parts = []
        for Qj, s in zip(qs, samples):
            c, k = _fourier(s)
            t = np.arange(Qj)
            rho = (r ** (1.0 / Qj))[:, None]
            psi = (th[:, None] + 2 * pi * t[None, :]) / Qj
            basis = rho[..., None] ** np.abs(k) * np.exp(1j * psi[..., None] * k)
            parts.append(np.einsum("ntk,bkm->bntm", basis, c).real)
        vals = np.concatenate(parts, axis=2)
        if result is None:
            result = np.empty((n_loops,) + vals.shape[1:])
        result[idx] = vals
    return result


def disk_extension(boundary: np.ndarray) -> DiskExtension:
    """Branched harmonic extension of a Q-valued circle map (M, Q, m)."""
    boundary = np.asarray(boundary, dtype=float)
    branches = irreducible_decomposition(boundary)
    return DiskExtension(boundary.shape[0], boundary.shape[1], branches, boundary)


# ---------------------------------------------------------------------------
# strip extension on F x [0, lam]


@lru_cache(maxsize=64)
def _square_geometry(px: int, nt: int, n_loop: int):
    """Perimeter ordering, resampling weights and interior nodes of one sub-square.

    Stretched coordinates put the sub-square on [-1,1]^2; perimeter nodes
    are ordered by angle, which H preserves.
    """
    I, J = np.meshgrid(np.arange(px + 1), np.arange(nt + 1), indexing="ij")
    X = 2.0 * I / px - 1
    T = 2.0 * J / nt - 1
    per = (I == 0) | (I == px) | (J == 0) | (J == nt)
    pi_, pj = I[per], J[per]
    ang = np.mod(np.arctan2(T[per], X[per]), 2 * pi)
    order = np.argsort(ang, kind="stable")
    pi_, pj, ang = pi_[order], pj[order], ang[order]
    targets = 2 * pi * np.arange(n_loop) / n_loop
    ang_ext = np.concatenate([ang, [ang[0] + 2 * pi]])
    pos = np.searchsorted(ang_ext, targets, side="right") - 1
    pos = np.clip(pos, 0, len(ang) - 1)
    # targets below the first perimeter angle wrap to the last segment
    low = targets < ang[0]
    pos[low] = len(ang) - 1
    a0 = np.where(low, ang[-1] - 2 * pi, ang[pos])
    a1 = np.where(low, ang[0], ang_ext[pos + 1])
    w = (targets - a0) / (a1 - a0)
    nxt = (pos + 1) % len(ang)
    inner = ~per
    ii, jj = I[inner], J[inner]
    sq = np.stack([X[inner], T[inner]], -1)
    pts = np.zeros_like(sq)
    nz = np.any(sq != 0, axis=1)
    pts[nz] = cube_to_sphere(sq[nz])  # H extends continuously by H(0) = 0
    return (pi_, pj), pos, nxt, w, (ii, jj), pts


@dataclass
class StripExtension:
    values: np.ndarray        # (nx+1, nt+1, Q, m)
    lam: float
    l: int
    energy: float
    K_squared: float
    sup_dist_sq: float
    hx: float
    ht: float

    @property
    def Q(self) -> int:
        return self.values.shape[-2]

    @property
    def eps(self) -> float:
        return self.lam / self.l

    @property
    def h(self) -> float:
        return max(self.hx, self.ht)

    @property
    def energy_ratio(self) -> float:
        return self.energy / (self.lam * self.K_squared) if self.K_squared > 0 else 0.0

    @property
    def sup_ratio(self) -> float:
        return self.sup_dist_sq / (self.eps * self.K_squared) if self.K_squared > 0 else 0.0

    @property
    def bound_energy(self) -> float:
        return 15 * self.Q * self.lam * self.K_squared

    @property
    def bound_sup_sq(self) -> float:
        return 5 * pi * self.Q ** 2 * self.eps * self.K_squared


def strip_K_squared(U: np.ndarray, V: np.ndarray, lam: float, eps: float) -> float:
    """Discrete int_F |D U|^2 + |D V|^2 + G(U,V)^2/eps^2."""
    nx = len(U) - 1
    hx = lam / nx
    dU = match_batch(U[:-1], U[1:])[1].sum() / hx
    dV = match_batch(V[:-1], V[1:])[1].sum() / hx
    g = match_batch(U, V)[1]
    w = np.full(nx + 1, hx)
    w[[0, -1]] = hx / 2
    return float(dU + dV + (g * w).sum() / eps ** 2)


def grid_energy_2d(vals: np.ndarray, hx: float, ht: float) -> float:
    gx = match_batch(vals[:-1], vals[1:])[1]
    gt = match_batch(vals[:, :-1], vals[:, 1:])[1]
    return float(gx.sum() * ht / hx + gt.sum() * hx / ht)


def strip_extension(U: np.ndarray, V: np.ndarray, lam: float, l: int, nt: Optional[int] = None,
                    n_loop: Optional[int] = None, side_columns: Optional[tuple] = None,
                    measure: bool = True) -> StripExtension:
    """Extend U (bottom) and V (top) across F x [0, lam] through l sub-squares.

    ``U``, ``V`` have shape (nx+1, Q, m) on the nodes of F with nx a
    multiple of l. Columns at a_k = a + k eps are linear interpolations
    between U(a_k) and V(a_k); each sub-square is stretched to a square,
    sent to the disk by H and filled with :func:`disk_extension`.
    ``side_columns`` may supply the two end columns (they must be the
    linear interpolations; mismatches raise).
    """
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.shape != V.shape:
        raise ValueError("U and V must have the same shape")
    if int(l) != l or l < 1:
        raise ValueError("l must be a positive integer")
    nx = U.shape[0] - 1
    if nx % l:
        raise ValueError(f"number of cells along F ({nx}) must be a multiple of l={l}")
    px = nx // l
    nt = nt or px
    Q, m = U.shape[1:]
    vals = np.empty((nx + 1, nt + 1, Q, m))
    cols = linear_column(U[::px], V[::px], nt)            # (l+1, nt+1, Q, m)
    if side_columns is not None:
        for c, k in zip(side_columns, (0, l)):
            if c is not None and np.max(np.abs(np.asarray(c) - cols[k])) > 0:
                raise ValueError("end columns are not linear between U and V")
    vals[:, 0] = U
    vals[:, nt] = V
    vals[::px] = cols
    if px >= 2 and nt >= 2:
        n_loop = n_loop or 4 * (px + nt)
        (pi_, pj), pos, nxt, w, (ii, jj), pts = _square_geometry(px, nt, n_loop)
        starts = np.arange(l) * px
        perim = vals[starts[:, None] + pi_[None, :], pj[None, :]]      # (l, P, Q, m)
        a, b = perim[:, pos], perim[:, nxt]
        perm = match_batch(a, b)[0]
        b = np.take_along_axis(b, perm[..., None], axis=-2)
        loops = (1 - w)[None, :, None, None] * a + w[None, :, None, None] * b
        groups, members = _group_by_cycles(loops)
        inner = _evaluate_groups(groups, members, pts, l)           # (l, n_in, Q, m)
        vals[starts[:, None] + ii[None, :], jj[None, :]] = inner
    hx, ht = lam / nx, lam / nt
    eps = lam / l
    if not measure:
        return StripExtension(vals, lam, l, float("nan"), float("nan"), float("nan"), hx, ht)
    E = grid_energy_2d(vals, hx, ht)
    K2 = strip_K_squared(U, V, lam, eps)
    sup = _strip_sup_sq(vals, U, V, l, px)
    return StripExtension(vals, lam, l, E, K2, sup, hx, ht)


def _strip_sup_sq(vals: np.ndarray, U: np.ndarray, V: np.ndarray, l: int, px: int) -> float:
    """max over nodes of G^2 to the U, V samples of the same sub-square."""
    nt = vals.shape[1] - 1
    best = 0.0
    ref = np.concatenate([U, V], axis=0)
    chunk = max(1, 200_000 // ((px + 1) * (nt + 1) * 2 * (px + 1)))
    for k0 in range(0, l, chunk):
        ks = np.arange(k0, min(l, k0 + chunk))
        cols = ks[:, None] * px + np.arange(px + 1)[None, :]          # (b, px+1)
        nodes = vals[cols]                                            # (b, px+1, nt+1, Q, m)
        nodes = nodes.reshape(len(ks), -1, *vals.shape[-2:])
        refs = np.concatenate([ref[cols], ref[cols + len(U)]], axis=1)   # (b, 2(px+1), Q, m)
        A = np.broadcast_to(nodes[:, :, None], (len(ks), nodes.shape[1], refs.shape[1]) + vals.shape[-2:])
        B = np.broadcast_to(refs[:, None], A.shape)
        d = match_batch(A, B)[1].min(axis=2)
        best = max(best, float(d.max()))
    return best


def harmonic_strip_deviation(M: int, n: int = 256) -> tuple[float, float]:
    """Mid-strip deviation of the harmonic extension for the oscillatory example.

    Boundary data U = V = M (cos 2 pi M x, sin 2 pi M x) on [0, 1], periodic
    in x. Returns ``(closed_form, five_point)``: the minimum over x of
    |phi_H(x, 1/2) - U(x)| from the cosh formula and from a periodic
    five-point Laplace solve with n cells per unit length.
    """
    x = np.arange(n) / n
    U = M * np.stack([np.cos(2 * pi * M * x), np.sin(2 * pi * M * x)], -1)
    closed = np.min(np.linalg.norm(U / np.cosh(pi * M) - U, axis=-1))
    h = 1.0 / n
    nt = n - 1  # interior rows t = h .. 1-h
    Ix = sp.identity(n)
    Dx = sp.diags([1, -2, 1], [-1, 0, 1], shape=(n, n), format="lil")
    Dx[0, n - 1] = 1
    Dx[n - 1, 0] = 1
    Dt = sp.diags([1, -2, 1], [-1, 0, 1], shape=(nt, nt))
    A = (sp.kron(sp.identity(nt), Dx) + sp.kron(Dt, Ix)).tocsc()
    rhs = np.zeros((nt, n, 2))
    rhs[0] -= U
    rhs[-1] -= U
    sol = spla.splu(A).solve(rhs.reshape(nt * n, 2)).reshape(nt, n, 2)
    mid = sol[nt // 2]  # t = 1/2 for even n
    fd = np.min(np.linalg.norm(mid - U, axis=-1))
    return float(closed), float(fd)
