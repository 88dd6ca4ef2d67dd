"""Analytic test maps and boundary-value problems used across the package."""

from __future__ import annotations

import numpy as np

from .grid import QGridMap
from .manifold import ManifoldTarget, parse_target

__all__ = [
    "root_map",
    "hedgehog",
    "constant_map",
    "sphere_branch",
    "PRESETS",
    "lattice",
    "boundary_problem",
]


def root_map(X: np.ndarray, Q: int = 2) -> np.ndarray:
    """u(z) = sum over w^Q = z of [[w]], planar and flat valued.

    Returns shape ``X.shape[:-1] + (Q, 2)``. The branch is fixed by
    arg z in (-pi, pi]; the unordered value does not depend on it.
    """
    z = X[..., 0] + 1j * X[..., 1]
    w0 = np.abs(z) ** (1.0 / Q) * np.exp(1j * np.angle(z) / Q)
    roots = w0[..., None] * np.exp(2j * np.pi * np.arange(Q) / Q)
    return np.stack([roots.real, roots.imag], axis=-1)


def hedgehog(X: np.ndarray) -> np.ndarray:
    """u(x) = x / |x| as a 1-valued map into S^(N-1); u(0) := e_1."""
    r = np.linalg.norm(X, axis=-1, keepdims=True)
    out = X / np.where(r > 0, r, 1.0)
    zero = r[..., 0] == 0
    out[zero] = 0.0
    out[zero, 0] = 1.0
    return out[..., None, :]


def constant_map(X: np.ndarray, point, Q: int = 1) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    return np.broadcast_to(p, X.shape[:-1] + (Q, p.size)).copy()


def sphere_branch(X: np.ndarray) -> np.ndarray:
    """Two-valued map into S^2 with a square-root branch along the x3-axis.

    (x1, x2, x3) goes to [[(w, c)]] + [[(-w, c)]] with w = sqrt(x1 + i x2)
    scaled onto the sphere; restricted to S^2 it is continuous.
    """
    z = X[..., 0] + 1j * X[..., 1]
    w = np.sqrt(np.abs(z)) * np.exp(0.5j * np.angle(z))
    c = X[..., 2]
    a = np.stack([w.real, w.imag, c], axis=-1)
    b = np.stack([-w.real, -w.imag, c], axis=-1)
    pts = np.stack([a, b], axis=-2)
    n = np.linalg.norm(pts, axis=-1, keepdims=True)
    return pts / np.where(n > 0, n, 1.0)


PRESETS = {
    "constant": dict(N=2, Q=1, target="flat:1"),
    "sqrt2": dict(N=2, Q=2, target="flat:2"),
    "root3": dict(N=2, Q=3, target="flat:2"),
    "hedgehog": dict(N=3, Q=1, target="sphere:3"),
}


def lattice(shape, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Origin and node coordinates of a lattice centred at 0."""
    shape = tuple(int(n) for n in shape)
    origin = -0.5 * h * (np.array(shape, dtype=float) - 1)
    axes = [origin[j] + h * np.arange(n) for j, n in enumerate(shape)]
    return origin, np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def boundary_problem(preset: str, shape, h: float, target: ManifoldTarget | None = None,
                     Q: int | None = None):
    """Boundary data and free-node mask for a named preset.

    Nodes in the open unit ball are free; the rest keep the analytic values
    of the preset map. Returns ``(u0, free)``; free nodes of ``u0`` carry
    the analytic values too and are overwritten by the initializer.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown boundary preset {preset!r}; choose from {sorted(PRESETS)}")
    info = PRESETS[preset]
    origin, X = lattice(shape, h)
    if X.shape[-1] != info["N"]:
        raise ValueError(f"preset {preset!r} needs a {info['N']}-dimensional grid")
    if target is None:
        target = parse_target(info["target"])
    if preset == "constant":
        q = Q or info["Q"]
        p = np.zeros(target.m)
        if not target.is_flat:
            p[0] = 1.0 if target.kind == "sphere" else 1.0 / np.sqrt(2.0)
            if target.kind == "torus":
                p[2] = 1.0 / np.sqrt(2.0)
        vals = constant_map(X, p, q)
    elif preset == "sqrt2":
        vals = root_map(X, 2)
    elif preset == "root3":
        vals = root_map(X, 3)
    else:
        vals = hedgehog(X)
    if vals.shape[-1] != target.m:
        raise ValueError(f"preset {preset!r} is incompatible with target {target.label}")
    free = np.linalg.norm(X, axis=-1) < 1.0
    return QGridMap(vals, h, origin, target), free
