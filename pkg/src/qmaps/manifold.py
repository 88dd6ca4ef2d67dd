"""Embedded target manifolds with their nearest point projection.

Three kinds are supported: the unit sphere in R^m, the Clifford torus
S^1(1/sqrt 2) x S^1(1/sqrt 2) in R^4, and the flat space R^m. Each kind has
closed forms for the projection, the tangent projection and the second
fundamental form. Finite-difference versions of the latter two are kept as
cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aq_space import QPoint

__all__ = [
    "OutOfTube",
    "OffManifold",
    "ManifoldTarget",
    "sphere",
    "clifford_torus",
    "flat",
    "parse_target",
    "FD_STEP_FIRST",
    "FD_STEP_SECOND",
]

FD_STEP_FIRST = 1e-5
FD_STEP_SECOND = 1e-3

_ON_TOL = 1e-8
_TANGENT_TOL = 1e-6

_TORUS_R = 1.0 / np.sqrt(2.0)


class OutOfTube(ValueError):
    """A point lies outside the tubular neighbourhood of the target."""


class OffManifold(ValueError):
    """A base point or tangent vector does not satisfy its constraint."""


@dataclass(frozen=True)
class ManifoldTarget:
    """An embedded compact manifold N in R^m (or all of R^m).

    ``tubular_radius`` is the radius d of the neighbourhood on which the
    projection is used; ``sff_bound`` bounds the norm of the second
    fundamental form.
    """

    kind: str
    ambient_dim: int
    intrinsic_dim: int
    tubular_radius: float
    sff_bound: float

    @property
    def m(self) -> int:
        return self.ambient_dim

    @property
    def is_flat(self) -> bool:
        return self.kind == "flat"

    @property
    def label(self) -> str:
        if self.kind == "torus":
            return "torus4"
        return f"{self.kind}:{self.ambient_dim}"

    # -- projection -----------------------------------------------------

    def _pairs(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[:-1] + (2, 2))

    def distance(self, x) -> np.ndarray:
        """Euclidean distance to N for points of shape (..., m)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return np.zeros(x.shape[:-1])
        if self.kind == "sphere":
            return np.abs(np.linalg.norm(x, axis=-1) - 1.0)
        rho = np.linalg.norm(self._pairs(x), axis=-1)
        return np.sqrt(((rho - _TORUS_R) ** 2).sum(axis=-1))

    def _check_dims(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.m:
            raise ValueError(f"expected vectors in R^{self.m}, got shape {x.shape}")

    def project_unchecked(self, x) -> np.ndarray:
        """Closed-form projection without the tube check (hot paths)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return x.copy()
        if self.kind == "sphere":
            return x / np.linalg.norm(x, axis=-1, keepdims=True)
        p = self._pairs(x)
        p = _TORUS_R * p / np.linalg.norm(p, axis=-1, keepdims=True)
        return p.reshape(x.shape)

    def in_domain(self, x) -> np.ndarray:
        """Where the closed-form projection is the unique nearest point.

        Points are rejected when they come closer than 1 - d (sphere) or
        r - d per factor circle (torus) to the focal set; outward points
        are always fine because the nearest point stays unique there.
        """
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return np.ones(x.shape[:-1], dtype=bool)
        if self.kind == "sphere":
            return np.linalg.norm(x, axis=-1) > 1.0 - self.tubular_radius
        rho = np.linalg.norm(self._pairs(x), axis=-1)
        return (rho > _TORUS_R - self.tubular_radius).all(axis=-1)

    def project(self, x) -> np.ndarray:
        """Nearest point projection Pi; raises :class:`OutOfTube` near the focal set."""
        x = np.asarray(x, dtype=float)
        self._check_dims(x)
        ok = self.in_domain(x)
        if not np.all(ok):
            d = np.max(self.distance(x)[~ok])
            raise OutOfTube(
                f"point at distance {d:.6g} from N lies past the tube radius "
                f"{self.tubular_radius} on the focal side")
        return self.project_unchecked(x)

    def constraint_residual(self, x) -> np.ndarray:
        return self.distance(x)

    def _check_on(self, p: np.ndarray) -> None:
        if np.any(self.distance(p) > _ON_TOL):
            raise OffManifold("base point is not on the manifold")

    # -- tangent / normal splitting --------------------------------------

    def tangent_project(self, p, X) -> np.ndarray:
        """Orthogonal projection of X onto T_p N."""
        p = np.asarray(p, dtype=float)
        X = np.asarray(X, dtype=float)
        self._check_dims(p)
        self._check_on(p)
        return self._tangent(p, X)

    def _tangent(self, p: np.ndarray, X: np.ndarray) -> np.ndarray:
        if self.kind == "flat":
            return np.array(X, dtype=float, copy=True)
        if self.kind == "sphere":
            return X - (X * p).sum(-1, keepdims=True) * p
        pp, XX = self._pairs(p), self._pairs(X)
        nrm = pp / _TORUS_R
        out = XX - (XX * nrm).sum(-1, keepdims=True) * nrm
        return out.reshape(X.shape)

    def normal_project(self, p, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X - self.tangent_project(p, X)

    def _check_tangent(self, p: np.ndarray, X: np.ndarray) -> None:
        nrm = np.linalg.norm(X - self._tangent(p, X), axis=-1)
        if np.any(nrm > _TANGENT_TOL * (1 + np.linalg.norm(X, axis=-1))):
            raise OffManifold("vector is not tangent at the base point")

    def second_fundamental(self, p, X, Y) -> np.ndarray:
        """A_p(X, Y) for tangent X, Y at p (closed form)."""
        p = np.asarray(p, dtype=float)
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self._check_dims(p)
        self._check_on(p)
        self._check_tangent(p, X)
        self._check_tangent(p, Y)
        return self.sff_unchecked(p, X, Y)

    def sff_unchecked(self, p, X, Y) -> np.ndarray:
        if self.kind == "flat":
            return np.zeros(np.broadcast(p, X, Y).shape)
        if self.kind == "sphere":
            return -(X * Y).sum(-1, keepdims=True) * p
        pp, XX, YY = self._pairs(p), self._pairs(X), self._pairs(Y)
        out = -(XX * YY).sum(-1, keepdims=True) * pp / _TORUS_R ** 2
        return out.reshape(np.broadcast(p, X, Y).shape)

    # -- finite-difference cross-checks ------------------------------------

    def dproject_fd(self, x, X, step: float = FD_STEP_FIRST) -> np.ndarray:
        """Central difference of Pi at x in direction X."""
        x = np.asarray(x, dtype=float)
        X = np.asarray(X, dtype=float)
        return (self.project_unchecked(x + step * X)
                - self.project_unchecked(x - step * X)) / (2 * step)

    def d2project_fd(self, p, X, Y, step: float = FD_STEP_SECOND) -> np.ndarray:
        """Mixed second difference D^2 Pi(p)(X, Y)."""
        p = np.asarray(p, dtype=float)
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        # bilinear, so difference along unit directions and rescale
        nx = np.linalg.norm(X, axis=-1, keepdims=True)
        ny = np.linalg.norm(Y, axis=-1, keepdims=True)
        Xu = X / np.where(nx > 0, nx, 1.0)
        Yu = Y / np.where(ny > 0, ny, 1.0)
        P = self.project_unchecked
        d2 = (P(p + step * (Xu + Yu)) - P(p + step * (Xu - Yu))
              - P(p - step * (Xu - Yu)) + P(p - step * (Xu + Yu))) / (4 * step * step)
        return nx * ny * d2

    # -- Q-points --------------------------------------------------------

    def project_qpoint(self, T: QPoint) -> QPoint:
        """Apply Pi to every point of a Q-point."""
        return QPoint(self.project(T.points))

    def random_points(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Sample n points on N (Gaussian box for the flat target)."""
        g = rng.normal(size=(n, self.m))
        if self.kind == "flat":
            return g
        return self.project_unchecked(g)


def sphere(m: int) -> ManifoldTarget:
    """Unit sphere S^(m-1) in R^m."""
    if m < 2:
        raise ValueError("sphere needs ambient dimension >= 2")
    return ManifoldTarget("sphere", m, m - 1, 0.9, 1.0)


def clifford_torus() -> ManifoldTarget:
    """S^1(1/sqrt 2) x S^1(1/sqrt 2) in R^4, lying on the unit 3-sphere."""
    return ManifoldTarget("torus", 4, 2, 0.5 * _TORUS_R, 1.0 / _TORUS_R)


def flat(m: int) -> ManifoldTarget:
    """All of R^m, where the projection is the identity."""
    if m < 1:
        raise ValueError("flat target needs m >= 1")
    return ManifoldTarget("flat", m, m, float("inf"), 0.0)


def parse_target(text: str) -> ManifoldTarget:
    """Parse ``sphere:<m>``, ``torus4`` or ``flat:<m>``."""
    text = text.strip()
    if text == "torus4":
        return clifford_torus()
    kind, _, arg = text.partition(":")
    try:
        m = int(arg)
    except ValueError:
        raise ValueError(f"unknown target {text!r}; use sphere:<m>, torus4 or flat:<m>") from None
    if kind == "sphere":
        return sphere(m)
    if kind == "flat":
        return flat(m)
    raise ValueError(f"unknown target {text!r}; use sphere:<m>, torus4 or flat:<m>")
