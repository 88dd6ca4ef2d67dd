"""Cube/sphere maps, the face lattice of the cube boundary and rotation sampling."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, gamma, pi
from typing import Callable, Optional

import numpy as np
from scipy.stats import special_ortho_group

__all__ = [
    "cube_to_sphere",
    "sphere_to_cube",
    "cube_sphere_maps",
    "FaceLattice",
    "build_face_lattice",
    "exact_face_count",
    "face_count_bound",
    "ball_volume",
    "face_integrals",
    "sphere_integral",
    "rotation_sides",
    "RotationSearchExhausted",
    "good_rotation",
    "QUAD_ORDER",
]

QUAD_ORDER = 6


def _check_nonzero(x: np.ndarray) -> None:
    if np.any(np.all(x == 0, axis=-1)):
        raise ValueError("cube/sphere maps are undefined at the origin")


def cube_to_sphere(x) -> np.ndarray:
    """H(x) = (|x|_inf / |x|_2) x, sending the cube boundary onto the sphere."""
    x = np.asarray(x, dtype=float)
    _check_nonzero(x)
    return x * (np.abs(x).max(axis=-1, keepdims=True) / np.linalg.norm(x, axis=-1, keepdims=True))


def sphere_to_cube(x) -> np.ndarray:
    """G(x) = (|x|_2 / |x|_inf) x, the inverse of :func:`cube_to_sphere`."""
    x = np.asarray(x, dtype=float)
    _check_nonzero(x)
    return x * (np.linalg.norm(x, axis=-1, keepdims=True) / np.abs(x).max(axis=-1, keepdims=True))


def cube_sphere_maps(x) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(H(x), G(x))``."""
    return cube_to_sphere(x), sphere_to_cube(x)


def ball_volume(N: int) -> float:
    """Volume w_N of the unit ball in R^N."""
    return pi ** (N / 2) / gamma(N / 2 + 1)


def exact_face_count(N: int, L: int, k: int) -> int:
    """Closed-form number of k-faces of the cube boundary at spacing 1/L.

    Choose the k spanned axes, a cell along each of them (2L choices), and
    lattice positions on the other N - k axes with at least one at +-1.
    """
    if not 0 <= k < N:
        return 0
    n = 2 * L
    return comb(N, k) * n ** k * ((n + 1) ** (N - k) - (n - 1) ** (N - k))


def face_count_bound(N: int, L: int, k: int) -> int:
    return N * 2 ** N * L ** (N - 1) * comb(N - 1, k)


@dataclass
class FaceLattice:
    """k-faces of the boundary of [-1,1]^N cut by the lattice (1/L) Z^N.

    A face is stored as an integer corner (coordinates in units of 1/L)
    plus the tuple of axes it spans.
    """

    N: int
    L: int
    faces_by_dim: list = field(repr=False)
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for k, (corners, axes) in enumerate(self.faces_by_dim):
            for i in range(len(corners)):
                self._index[(k, tuple(corners[i]), tuple(axes[i]))] = i

    @property
    def lam(self) -> float:
        return 1.0 / self.L

    def count(self, k: int) -> int:
        if k >= len(self.faces_by_dim):
            return 0
        return len(self.faces_by_dim[k][0])

    def corners(self, k: int) -> np.ndarray:
        return self.faces_by_dim[k][0]

    def axes(self, k: int) -> np.ndarray:
        return self.faces_by_dim[k][1]

    def index_of(self, k: int, corner, axes) -> int:
        return self._index[(k, tuple(int(c) for c in corner), tuple(int(a) for a in axes))]

    def boundary(self, k: int, i: int) -> list[int]:
        """Indices of the 2k faces of dimension k-1 bounding face i of dim k."""
        if k == 0:
            return []
        corner = self.corners(k)[i]
        ax = tuple(self.axes(k)[i])
        out = []
        for a in ax:
            rest = tuple(b for b in ax if b != a)
            for step in (0, 1):
                c = corner.copy()
                c[a] += step
                out.append(self.index_of(k - 1, c, rest))
        return out


def build_face_lattice(N: int, L: int) -> FaceLattice:
    if N not in (2, 3, 4):
        raise ValueError(f"face lattice supports N in {{2, 3, 4}}, got {N}")
    if L < 2:
        raise ValueError("L must be >= 2")
    faces = []
    for k in range(N):
        corners, axes = [], []
        for ax in itertools.combinations(range(N), k):
            fixed = [i for i in range(N) if i not in ax]
            ranges = [range(-L, L) if i in ax else range(-L, L + 1) for i in range(N)]
            for c in itertools.product(*ranges):
                if max(abs(c[i]) for i in fixed) == L:
                    corners.append(c)
                    axes.append(ax)
        faces.append((np.array(corners, dtype=np.int64).reshape(-1, N),
                      np.array(axes, dtype=np.int64).reshape(len(axes), k)))
    return FaceLattice(N, L, faces)


@lru_cache(maxsize=None)
def _gauss(k: int, order: int):
    g, w = np.polynomial.legendre.leggauss(order)
    g = (g + 1) / 2
    w = w / 2
    if k == 0:
        return np.zeros((1, 0)), np.ones(1)
    pts = np.stack(np.meshgrid(*([g] * k), indexing="ij"), -1).reshape(-1, k)
    wts = np.prod(np.stack(np.meshgrid(*([w] * k), indexing="ij"), -1).reshape(-1, k), axis=1)
    return pts, wts


@lru_cache(maxsize=32)
def _face_quadrature(N: int, L: int, k: int, order: int):
    """Sphere points and weights for every k-face G = H(F).

    The face is pulled back to the flat F, where |x|_inf = 1 and H(x) is
    x/|x|; the weight carries the Gram determinant of D(x/|x|) on F.
    """
    lat = build_face_lattice(N, L)
    corners = lat.corners(k).astype(float) / L
    axes = lat.axes(k)
    t, w = _gauss(k, order)
    nf, nq = len(corners), len(w)
    x = np.repeat(corners[:, None, :], nq, axis=1)
    E = np.zeros((nf, k, N))
    for j in range(k):
        E[np.arange(nf), j, axes[:, j]] = 1.0 / L
    x = x + np.einsum("qj,fjn->fqn", t, E)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    y = x / r
    if k == 0:
        return y, np.ones((nf, 1))
    # D(x/|x|) e = (e - <y,e> y)/|x|
    J = (E[:, None, :, :] - np.einsum("fqn,fjn->fqj", y, E)[..., None] * y[:, :, None, :]) / r[..., None]
    gram = np.einsum("fqin,fqjn->fqij", J, J)
    vol = np.sqrt(np.maximum(np.linalg.det(gram), 0.0))
    return y, vol * w[None, :]


def face_integrals(f: Callable, N: int, L: int, k: int, O: Optional[np.ndarray] = None,
                   order: int = QUAD_ORDER) -> np.ndarray:
    """Integral of f(O x) over each G in G_k (fixed-order Gauss quadrature)."""
    y, w = _face_quadrature(N, L, k, order)
    if O is not None:
        y = y @ np.asarray(O).T
    vals = np.asarray(f(y.reshape(-1, N)), dtype=float).reshape(w.shape)
    return (vals * w).sum(axis=1)


def sphere_integral(f: Callable, N: int, L: int = 4, order: int = QUAD_ORDER) -> float:
    """Integral of f over the unit sphere via the (N-1)-faces."""
    return float(face_integrals(f, N, L, N - 1, None, order).sum())


def rotation_sides(f: Callable, lattice: FaceLattice, O: np.ndarray, theta: float = 0.5,
                   order: int = QUAD_ORDER, f_total: Optional[float] = None) -> tuple[float, float]:
    """Both sides of the good-rotation inequality for one density.

    lhs = sum_{k=1}^{N-2} L^{k+1-N} / C(N-1,k) sum_G int_G f(Ox),
    rhs = (N-2) 2^N / (theta w_N) int_S f.
    """
    N, L = lattice.N, lattice.L
    lhs = 0.0
    for k in range(1, N - 1):
        lhs += L ** (k + 1 - N) / comb(N - 1, k) * face_integrals(f, N, L, k, O, order).sum()
    if f_total is None:
        f_total = sphere_integral(f, N, max(L, 4), order)
    rhs = (N - 2) * 2 ** N / (theta * ball_volume(N)) * f_total
    return float(lhs), float(rhs)


class RotationSearchExhausted(RuntimeError):
    """No sampled rotation was good for every density."""


def good_rotation(f1: Callable, f2: Callable, lattice: FaceLattice, max_samples: int = 64,
                  seed: int = 0, theta: float = 0.5, return_samples: bool = False):
    """Haar-sample rotations until one is good for both densities.

    For each density the bad set has Haar measure below theta, so with
    theta = 1/2 a sample is good for both with positive probability.
    """
    N = lattice.N
    rng = np.random.default_rng(seed)
    totals = [sphere_integral(f, N, max(lattice.L, 4)) for f in (f1, f2)]
    for n in range(1, max_samples + 1):
        O = special_ortho_group.rvs(N, random_state=rng) if N > 1 else np.eye(1)
        ok = True
        for f, tot in zip((f1, f2), totals):
            lhs, rhs = rotation_sides(f, lattice, O, theta, f_total=tot)
            if lhs > rhs:
                ok = False
                break
        if ok:
            return (O, n) if return_samples else O
    raise RotationSearchExhausted(
        f"no good rotation in {max_samples} samples "
        f"(heuristic failure probability below 2^-{max_samples // 2})")
