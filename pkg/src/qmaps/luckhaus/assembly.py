"""Assembly of the annulus extension from the single-face extensions."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from math import factorial
from typing import Callable, Optional

import numpy as np

from ..aq_space import match_batch
from .extensions import homogeneous_extension, linear_column, strip_extension
from .faces import build_face_lattice, good_rotation

__all__ = [
    "AnnulusMap",
    "ExtensionReport",
    "build_annulus_extension",
    "tangential_densities",
    "surface_lattice",
    "simplicial_energy",
]


@dataclass
class AnnulusMap:
    """Q-valued samples on the lattice of B_1 minus B_{1-lam}.

    Node (i, tau) sits at (1 - tau h) y_i where y_i = O H(x_i) for the
    cube-surface node x_i; ``values`` has shape (n_surface, P+1, Q, m).
    The sup distance is measured against U and V at the surface node each
    value was built from, which bounds the distance to u(S) and v(S).
    """

    directions: np.ndarray
    values: np.ndarray
    cube_nodes: np.ndarray
    h: float
    P: int

    @property
    def positions(self) -> np.ndarray:
        t = self.h * np.arange(self.P + 1)
        return (1 - t)[None, :, None] * self.directions[:, None, :]


@dataclass
class ExtensionReport:
    annulus_map: Optional[AnnulusMap] = field(repr=False)
    measured_energy: float
    K_squared: float
    lam: float
    epsilon: float
    measured_sup_dist: float
    bound_energy: float
    bound_sup_sq: float
    trace_error: float
    C_meas: float
    C_inf_meas: float
    N: int
    Q: int
    L: int
    l: int
    rotation_samples: int
    rotation: list

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("annulus_map")
        return d


def surface_lattice(N: int, n_half: int):
    """Integer nodes of the boundary of [-n_half, n_half]^N and a lookup table."""
    side = 2 * n_half + 1
    grid = np.indices((side,) * N).reshape(N, -1).T - n_half
    on = np.abs(grid).max(axis=1) == n_half
    nodes = grid[on]
    lookup = np.full((side,) * N, -1, dtype=np.int64)
    lookup[tuple((nodes + n_half).T)] = np.arange(len(nodes))
    return nodes, lookup


def _kuhn(d: int) -> list[np.ndarray]:
    """Vertex offsets of the d! Kuhn simplices of the unit d-cube."""
    out = []
    for perm in itertools.permutations(range(d)):
        v = np.zeros((d + 1, d), dtype=np.int64)
        for k, a in enumerate(perm):
            v[k + 1] = v[k]
            v[k + 1, a] = 1
        out.append(v)
    return out


def simplicial_energy(X: np.ndarray, Phi: np.ndarray, chunk: int = 200_000) -> float:
    """P1 energy on simplices, sheets matched to the first vertex.

    ``X`` (S, d+1, n) vertex positions in R^n (d <= n), ``Phi``
    (S, d+1, Q, m) values. The gradient of each sheet is taken tangent to
    the simplex, so d < n handles embedded surfaces.
    """
    S, dp1 = X.shape[:2]
    d = dp1 - 1
    total = 0.0
    for s0 in range(0, S, chunk):
        x = X[s0:s0 + chunk]
        f = Phi[s0:s0 + chunk]
        ref = f[:, 0]
        dF = []
        for k in range(1, dp1):
            perm = match_batch(ref, f[:, k])[0]
            dF.append(np.take_along_axis(f[:, k], perm[..., None], axis=-2) - ref)
        dF = np.stack(dF, axis=1).reshape(len(x), d, -1)      # (s, d, Q*m)
        E = x[:, 1:] - x[:, :1]                                # (s, d, n)
        gram = np.einsum("sin,sjn->sij", E, E)
        vol = np.sqrt(np.maximum(np.linalg.det(gram), 0.0)) / factorial(d)
        sol = np.linalg.solve(gram, dF)
        total += float((vol * np.einsum("sik,sik->s", dF, sol)).sum())
    return total


def _cells(lat, P: int, lookup: np.ndarray, n_half: int, d: int):
    """Fine d-cells of the coarse (N-1)-faces as corner index arrays."""
    k = lat.N - 1
    corners = lat.corners(k) * P + n_half
    axes = lat.axes(k)
    offs = np.indices((P,) * k).reshape(k, -1).T
    out = []
    for c, ax in zip(corners, axes):
        base = np.repeat(c[None], len(offs), axis=0)
        base[:, ax] += offs
        out.append((base, ax))
    return out


def tangential_densities(u: Callable, v: Callable, eps: float, delta: float = 1e-4):
    """Pointwise f1 = |D u|^2 + |D v|^2 + G(u,v)^2/eps^2 and f2 = |u|^2 + |v|^2.

    Tangential derivatives are central differences along an orthonormal
    tangent frame, matched in A_Q.
    """

    def frame(y):
        N = y.shape[1]
        P = np.eye(N)[None] - y[:, :, None] * y[:, None, :]
        # Gram-Schmidt on projected coordinate axes, keep the N-1 largest
        basis = []
        for a in range(N):
            e = P[:, :, a]
            for b in basis:
                e = e - (e * b).sum(1, keepdims=True) * b
            n = np.linalg.norm(e, axis=1, keepdims=True)
            basis.append(np.where(n > 1e-6, e / np.maximum(n, 1e-300), 0.0))
        return basis

    def grad_sq(fn, y):
        tot = np.zeros(len(y))
        for e in frame(y):
            yp = y + delta * e
            ym = y - delta * e
            yp /= np.linalg.norm(yp, axis=1, keepdims=True)
            ym /= np.linalg.norm(ym, axis=1, keepdims=True)
            tot += match_batch(fn(yp), fn(ym))[1] / (2 * delta) ** 2
        return tot

    def f1(y):
        return grad_sq(u, y) + grad_sq(v, y) + match_batch(u(y), v(y))[1] / eps ** 2

    def f2(y):
        return (u(y) ** 2).sum(axis=(-2, -1)) + (v(y) ** 2).sum(axis=(-2, -1))

    return f1, f2


def _check_write(store: np.ndarray, filled: np.ndarray, idx, new: np.ndarray) -> float:
    """Write ``new`` into ``store[idx]``; return the largest G mismatch on shared entries."""
    err = 0.0
    prev = filled[idx]
    if np.any(prev):
        g = match_batch(store[idx][prev], new[prev])[1]
        err = float(np.sqrt(g.max()))
    store[idx] = new
    filled[idx] = True
    return err


def build_annulus_extension(u: Callable, v: Callable, N: int, L: int, l: int, px: int = 2,
                            seed: int = 0, rotation: Optional[np.ndarray] = None,
                            max_samples: int = 64, keep_map: bool = True) -> ExtensionReport:
    """Build phi on B_1 minus B_{1-lam} with lam = 1/L and eps = 1/(l L).

    ``u`` and ``v`` map unit vectors (n, N) to Q-points (n, Q, m). Each
    coarse edge carries ``l * px`` lattice cells, as does the radial
    direction, so h = lam / (l px).
    """
    if N not in (2, 3):
        raise ValueError("the assembled extension supports N in {2, 3}")
    if int(L) != L or L <= 2:
        raise ValueError("L must be an integer > 2")
    if int(l) != l or l < 1:
        raise ValueError("l must be a positive integer")
    lam, eps = 1.0 / L, 1.0 / (l * L)
    P = l * px
    n_half = L * P
    h = lam / P
    lat = build_face_lattice(N, L)
    f1, f2 = tangential_densities(u, v, eps)
    if rotation is None:
        O, n_samples = good_rotation(f1, f2, lat, max_samples, seed, return_samples=True)
    else:
        O, n_samples = np.asarray(rotation, dtype=float), 0
    nodes, lookup = surface_lattice(N, n_half)
    x = nodes / n_half
    y = (x / np.linalg.norm(x, axis=1, keepdims=True)) @ O.T
    U = np.asarray(u(y), dtype=float)
    V = np.asarray(v(y), dtype=float)
    Q, m = U.shape[1:]
    vals = np.zeros((len(nodes), P + 1, Q, m))
    filled = np.zeros((len(nodes), P + 1), dtype=bool)
    vals[:, 0], vals[:, P] = U, V
    filled[:, 0] = filled[:, P] = True
    trace = 0.0
    # surface node whose U, V column each value was built from
    src = np.repeat(np.arange(len(nodes))[:, None], P + 1, axis=1)

    # vertices: linear columns
    vi = np.nonzero(np.all(nodes % P == 0, axis=1))[0]
    trace = max(trace, _check_write(vals, filled, (vi,), linear_column(U[vi], V[vi], P)))

    # 1-faces: strip extensions
    for c, ax in zip(lat.corners(1), lat.axes(1)):
        line = np.repeat((c * P + n_half)[None], P + 1, axis=0)
        line[:, ax[0]] += np.arange(P + 1)
        idx = lookup[tuple(line.T)]
        S = strip_extension(U[idx], V[idx], lam, l, nt=P, measure=False)
        trace = max(trace, _check_write(vals, filled, (idx,), S.values))

    # 2-faces (N = 3): homogeneous extension on F x [0, lam]
    if N == 3:
        cs, axs = lat.corners(2), lat.axes(2)
        I, J = np.meshgrid(np.arange(P + 1), np.arange(P + 1), indexing="ij")
        base = cs * P + n_half
        pts = np.repeat(base[:, None, None, :], P + 1, axis=1).repeat(P + 1, axis=2)
        rows = np.arange(len(cs))
        pts[rows, :, :, axs[:, 0]] += I[None]
        pts[rows, :, :, axs[:, 1]] += J[None]
        idx = lookup[tuple(np.moveaxis(pts, -1, 0))]            # (F, P+1, P+1)
        cube = vals[idx]                                         # (F, P+1, P+1, P+1, Q, m)
        ext = homogeneous_extension(cube, 3, lam)
        inner = (slice(None), slice(1, P), slice(1, P))
        trace = max(trace, _check_write(vals, filled, (idx[inner],), ext[inner]))
        # copied values keep the surface node they came from
        src_ext = homogeneous_extension(src[idx][..., None, None].astype(float), 3, lam)
        src[idx[inner]] = src_ext[inner][..., 0, 0].astype(np.int64)
    if not filled.all():
        raise RuntimeError("assembly left lattice nodes undefined")

    # trace check against the data itself
    trace = max(trace, float(np.sqrt(match_batch(vals[:, 0], u(y))[1].max())),
                float(np.sqrt(match_batch(vals[:, P], v(y))[1].max())))

    amap = AnnulusMap(y, vals, nodes, h, P)
    pos = amap.positions
    energy = _annulus_energy(lat, P, lookup, n_half, pos, vals)
    K2 = _sphere_K2(lat, P, lookup, n_half, y, U, V, eps)
    dU = match_batch(vals, U[src])[1]
    dV = match_batch(vals, V[src])[1]
    sup = float(np.sqrt(np.minimum(dU, dV).max()))
    bound_E = Q * lam * K2
    bound_S = Q ** 2 * lam ** (2 - N) * eps * K2
    return ExtensionReport(
        amap if keep_map else None, energy, K2, lam, eps, sup, bound_E, bound_S, trace,
        energy / bound_E if bound_E > 0 else 0.0,
        sup ** 2 / bound_S if bound_S > 0 else 0.0,
        N, Q, L, l, n_samples, O.tolist())


def _annulus_energy(lat, P, lookup, n_half, pos, vals) -> float:
    N = lat.N
    simplices = _kuhn(N)
    total = 0.0
    for base, ax in _cells(lat, P, lookup, n_half, N - 1):
        # cell corner (surface node, tau) over tau = 0..P-1
        for simp in simplices:
            node_pts = np.repeat(base[:, None, :], N + 1, axis=1)
            for a_loc, a in enumerate(ax):
                node_pts[:, :, a] += simp[None, :, a_loc]
            nid = lookup[tuple(np.moveaxis(node_pts, -1, 0))]     # (cells, N+1)
            tau = np.arange(P)[:, None] + simp[None, :, N - 1]      # (P, N+1)
            nid_t = np.broadcast_to(nid[:, None, :], (len(nid), P, N + 1))
            tau_t = np.broadcast_to(tau[None], nid_t.shape)
            X = pos[nid_t, tau_t].reshape(-1, N + 1, N)
            F = vals[nid_t, tau_t].reshape((-1, N + 1) + vals.shape[-2:])
            total += simplicial_energy(X, F)
    return total


def _sphere_K2(lat, P, lookup, n_half, y, U, V, eps) -> float:
    N = lat.N
    d = N - 1
    simplices = _kuhn(d)
    tot = 0.0
    for base, ax in _cells(lat, P, lookup, n_half, d):
        for simp in simplices:
            node_pts = np.repeat(base[:, None, :], d + 1, axis=1)
            for a_loc, a in enumerate(ax):
                node_pts[:, :, a] += simp[None, :, a_loc]
            nid = lookup[tuple(np.moveaxis(node_pts, -1, 0))]
            X = y[nid]
            tot += simplicial_energy(X, U[nid]) + simplicial_energy(X, V[nid])
            E = X[:, 1:] - X[:, :1]
            vol = np.sqrt(np.maximum(np.linalg.det(np.einsum("sin,sjn->sij", E, E)), 0)) / factorial(d)
            g = match_batch(U[nid], V[nid])[1].mean(axis=1)
            tot += float((vol * g).sum()) / eps ** 2
    return tot
