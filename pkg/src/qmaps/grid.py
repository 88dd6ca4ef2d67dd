"""Q-valued maps sampled on rectangular lattices, and their calculus.

The Dirichlet energy is the edge-metric form

    E = sum over lattice edges (x, x + h e_j) of G(u(x), u(x + h e_j))^2 h^(N-2),

which needs no choice of sheets. Pointwise differentials, needed for the
monotonicity identity and the variational residuals, are built by matching
the neighbours of each node to the node value and differencing per sheet.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import signal

from .aq_space import PreconditionError, match_batch, permutations_table
from .manifold import ManifoldTarget, flat

__all__ = [
    "QGridMap",
    "Box",
    "Ball",
    "RegionError",
    "EnergyProfile",
    "DensityReport",
    "MonotonicityReport",
    "HolderFit",
    "dirichlet_energy",
    "ball_energy_profile",
    "density",
    "density_field",
    "monotonicity_report",
    "approximate_differentials",
    "variation_residual",
    "rescale",
    "holder_fit",
    "sample_map",
]

AMBIGUITY_TOL = 1e-9
# midpoints exactly on a sphere count as outside
_SHRINK = 1.0 - 1e-12
# smallest trusted radius and number of radii in the density fit
DENSITY_RMIN_STEPS = 4
DENSITY_NFIT = 6


class RegionError(ValueError):
    """A region, ball or field support does not fit inside the domain."""


@dataclass(frozen=True)
class Box:
    lo: Sequence[float]
    hi: Sequence[float]


@dataclass(frozen=True)
class Ball:
    center: Sequence[float]
    radius: float


@dataclass
class QGridMap:
    """A Q-valued map sampled on the lattice ``origin + h * index``.

    ``values`` has shape ``shape + (Q, m)``.
    """

    values: np.ndarray
    h: float
    origin: np.ndarray
    target: ManifoldTarget = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim < 4 or v.ndim > 5:
            raise ValueError("values must have shape (n1, ..., nN, Q, m) with N in {2, 3}")
        self.values = v
        self.values.setflags(write=False)
        self.origin = np.asarray(self.origin, dtype=float).reshape(-1)
        if self.origin.shape != (self.N,):
            raise ValueError(f"origin must have {self.N} entries")
        if not self.h > 0:
            raise ValueError("spacing h must be positive")
        if self.target is None:
            self.target = flat(self.m)
        if self.target.m != self.m:
            raise ValueError("target ambient dimension does not match values")
        if not self.target.is_flat:
            res = self.target.constraint_residual(v).max()
            if res > 1e-8:
                raise ValueError(f"values leave the target manifold (residual {res:.3g})")

    @property
    def N(self) -> int:
        return self.values.ndim - 2

    @property
    def shape(self) -> tuple:
        return self.values.shape[: self.N]

    @property
    def Q(self) -> int:
        return self.values.shape[-2]

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    def axes(self) -> list[np.ndarray]:
        return [self.origin[j] + self.h * np.arange(n) for j, n in enumerate(self.shape)]

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (N,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    @property
    def lo(self) -> np.ndarray:
        return self.origin

    @property
    def hi(self) -> np.ndarray:
        return self.origin + self.h * (np.array(self.shape) - 1)

    def with_values(self, values: np.ndarray) -> "QGridMap":
        return QGridMap(values, self.h, self.origin.copy(), self.target)

    @cached_property
    def edge_sq(self) -> list[np.ndarray]:
        """Per axis, the squared distances G^2 across lattice edges."""
        out = []
        for j in range(self.N):
            a = _slab(self.values, j, 0, -1)
            b = _slab(self.values, j, 1, None)
            out.append(match_batch(a, b)[1])
        return out

    def edge_midpoints(self, j: int) -> np.ndarray:
        c = _slab(self.coords, j, 0, -1).copy()
        c[..., j] += 0.5 * self.h
        return c


def _slab(a: np.ndarray, axis: int, start, stop) -> np.ndarray:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return a[tuple(idx)]


def sample_map(fn: Callable[[np.ndarray], np.ndarray], shape, h: float, origin,
               target: Optional[ManifoldTarget] = None) -> QGridMap:
    """Sample ``fn(coords) -> (..., Q, m)`` on a lattice."""
    origin = np.asarray(origin, dtype=float)
    axes = [origin[j] + h * np.arange(n) for j, n in enumerate(shape)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return QGridMap(fn(X), h, origin, target)


# ---------------------------------------------------------------------------
# energy


def _check_inside(u: QGridMap, lo, hi, what: str) -> None:
    tol = 1e-9 * u.h
    if np.any(np.asarray(lo) < u.lo - tol) or np.any(np.asarray(hi) > u.hi + tol):
        raise RegionError(f"{what} is not contained in the lattice domain")


def _edge_masks(u: QGridMap, region) -> list[np.ndarray]:
    if region is None:
        return [np.ones(e.shape, dtype=bool) for e in u.edge_sq]
    if isinstance(region, Ball):
        y = np.asarray(region.center, dtype=float)
        r = float(region.radius)
        _check_inside(u, y - r, y + r, "ball")
        return [np.linalg.norm(u.edge_midpoints(j) - y, axis=-1) < r * _SHRINK
                for j in range(u.N)]
    if isinstance(region, Box):
        lo, hi = np.asarray(region.lo, float), np.asarray(region.hi, float)
        _check_inside(u, lo, hi, "box")
        tol = 1e-9 * u.h
        inside = np.all((u.coords >= lo - tol) & (u.coords <= hi + tol), axis=-1)
        return [_slab(inside, j, 0, -1) & _slab(inside, j, 1, None) for j in range(u.N)]
    raise TypeError("region must be None, Box or Ball")


def dirichlet_energy(u: QGridMap, region=None) -> float:
    """Edge-metric Dirichlet energy of ``u`` on a box, a ball or everything.

    For balls an edge counts when its midpoint lies inside; for boxes when
    both endpoints do.
    """
    masks = _edge_masks(u, region)
    total = 0.0
    for e, mk in zip(u.edge_sq, masks):
        total += float(e[mk].sum())
    return total * u.h ** (u.N - 2)


@dataclass
class EnergyProfile:
    center: np.ndarray
    radii: np.ndarray
    raw_energy: np.ndarray
    scaled_energy: np.ndarray
    N: int = 2

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("radii must be strictly ascending")


def _edge_table(u: QGridMap, y: np.ndarray):
    """Sorted midpoint distances to y with the matching edge energies."""
    d = np.concatenate([np.linalg.norm(u.edge_midpoints(j) - y, axis=-1).ravel()
                        for j in range(u.N)])
    e = np.concatenate([x.ravel() for x in u.edge_sq]) * u.h ** (u.N - 2)
    order = np.argsort(d, kind="stable")
    return d[order], np.cumsum(e[order])


def ball_energy_profile(u: QGridMap, y, radii) -> EnergyProfile:
    """Raw and scaled energies E(u, B_r(y)) = r^(2-N) int_{B_r} |Du|^2."""
    y = np.asarray(y, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if len(radii) and (radii[0] <= 0):
        raise ValueError("radii must be positive")
    if len(radii):
        _check_inside(u, y - radii.max(), y + radii.max(), "ball")
    d, cum = _edge_table(u, y)
    k = np.searchsorted(d, radii * _SHRINK, side="left")
    raw = np.where(k > 0, cum[np.maximum(k - 1, 0)], 0.0)
    return EnergyProfile(y, radii, raw, raw * radii ** (2 - u.N), u.N)


@dataclass
class DensityReport:
    """Density estimate with the data behind it.

    ``scaled_energy`` is the profile on the lattice itself, ``extrapolated``
    the Richardson combination that was fitted.
    """

    value: float
    r_min: float
    radii: np.ndarray
    scaled_energy: np.ndarray
    extrapolated: np.ndarray
    slope: float


def _coarse(u: QGridMap, parity: Sequence[int]) -> QGridMap:
    """Sub-lattice of spacing 2h through the nodes of the given parity."""
    sl = tuple(slice(int(p), None, 2) for p in parity)
    origin = u.origin + u.h * np.asarray(parity, dtype=float)
    return QGridMap(u.values[sl], 2 * u.h, origin, u.target)


def _fit_radii(h: float) -> np.ndarray:
    return h * np.arange(DENSITY_RMIN_STEPS, DENSITY_RMIN_STEPS + DENSITY_NFIT, dtype=float)


def density(u: QGridMap, y) -> DensityReport:
    """Small-radius limit of the scaled energy at a lattice node.

    The profile is sampled at the six smallest trusted radii 4h, ..., 9h,
    both on the lattice and on the 2h sub-lattice through the node. The
    leading O(h/r) quadrature error cancels in 2 E_h - E_2h, which is then
    fitted linearly in r; the intercept is reported.
    """
    y = np.asarray(y, dtype=float)
    idx = np.rint((y - u.origin) / u.h).astype(int)
    radii = _fit_radii(u.h)
    margin = np.minimum(idx, np.array(u.shape) - 1 - idx).min()
    if margin * u.h < DENSITY_RMIN_STEPS * u.h - 1e-9 * u.h:
        raise RegionError(f"point lies within {DENSITY_RMIN_STEPS}h of the boundary")
    if margin < DENSITY_RMIN_STEPS + DENSITY_NFIT:
        raise RegionError("not enough room around the point for the density fit")
    yn = u.origin + u.h * idx
    fine = ball_energy_profile(u, yn, radii).scaled_energy
    coarse = ball_energy_profile(_coarse(u, idx % 2), yn, radii).scaled_energy
    ext = 2 * fine - coarse
    slope, intercept = np.polyfit(radii, ext, 1)
    return DensityReport(max(float(intercept), 0.0), float(radii[0]), radii,
                         fine, ext, float(slope))


def _ball_kernels(N: int, radii: Sequence[float]):
    """Per axis, 0/1 kernels picking edges whose midpoint is in the ball.

    Radii are in lattice units. Edge ``i`` along axis j has its midpoint at
    ``i + 1/2``; kernel offsets run over -R-1..R along j and -R..R elsewhere.
    """
    R = int(np.ceil(max(radii)))
    out = []
    for j in range(N):
        rng = [np.arange(-R - 1, R + 1) + 0.5 if a == j
               else np.arange(-R, R + 1).astype(float) for a in range(N)]
        grids = np.meshgrid(*rng, indexing="ij")
        d = np.sqrt(sum(g * g for g in grids))
        out.append([(d < r * _SHRINK).astype(float) for r in radii])
    return out, R


def _ball_sums(u: QGridMap, radii_units: Sequence[float]) -> np.ndarray:
    """Raw ball energies about every node, shape ``(len(radii),) + shape``."""
    kernels, R = _ball_kernels(u.N, radii_units)
    shape = u.shape
    raw = np.zeros((len(radii_units),) + shape)
    w = u.h ** (u.N - 2)
    flip = (slice(None, None, -1),) * u.N
    for j in range(u.N):
        E = u.edge_sq[j] * w
        for k, K in enumerate(kernels[j]):
            # correlation: out[n] = sum_d E[n + d] K[d]
            full = signal.fftconvolve(E, K[flip], mode="full")
            sl = tuple(slice(R, R + shape[a]) for a in range(u.N))
            raw[k] += full[sl]
    return raw


def density_field(u: QGridMap) -> tuple[np.ndarray, np.ndarray]:
    """Density estimate at every node with room for the fit.

    Same estimator as :func:`density`, with ball energies computed for all
    nodes at once by FFT correlation of the per-axis edge energies with
    ball-indicator kernels. Returns ``(theta, valid)``.
    """
    steps = np.arange(DENSITY_RMIN_STEPS, DENSITY_RMIN_STEPS + DENSITY_NFIT, dtype=float)
    radii = u.h * steps
    shape = u.shape
    fine_raw = _ball_sums(u, steps)
    coarse_raw = np.zeros_like(fine_raw)
    for parity in np.ndindex(*(2,) * u.N):
        cu = _coarse(u, parity)
        sl = tuple(slice(int(p), None, 2) for p in parity)
        coarse_raw[(slice(None),) + sl] = _ball_sums(cu, steps / 2)
    scale = radii.reshape((-1,) + (1,) * u.N) ** (2 - u.N)
    ext = scale * (2 * fine_raw - coarse_raw)
    rbar = radii.mean()
    dr = radii - rbar
    slope = np.tensordot(dr, ext - ext.mean(axis=0), axes=(0, 0)) / (dr @ dr)
    intercept = ext.mean(axis=0) - slope * rbar
    M = DENSITY_RMIN_STEPS + DENSITY_NFIT
    valid = np.zeros(shape, dtype=bool)
    valid[tuple(slice(M, n - M) for n in shape)] = True
    theta = np.where(valid, np.maximum(intercept, 0.0), np.nan)
    return theta, valid


# ---------------------------------------------------------------------------
# approximate differentials


def _matched_neighbor(center: np.ndarray, nb: np.ndarray):
    """Match ``nb`` to ``center`` sheetwise; flag ambiguous optima."""
    Q = center.shape[-2]
    if Q == 1:
        return nb, np.zeros(center.shape[:-2], dtype=bool)
    perms = permutations_table(Q)
    diff = center[..., :, None, :] - nb[..., None, :, :]
    C = np.einsum("...k,...k->...", diff, diff)
    costs = C[..., np.arange(Q), perms].sum(axis=-1)
    best = np.argmin(costs, axis=-1)
    cmin = np.take_along_axis(costs, best[..., None], axis=-1)
    near = costs <= cmin + AMBIGUITY_TOL * (1 + cmin)
    matched = np.take_along_axis(nb, perms[best][..., None], axis=-2)
    ambiguous = np.zeros(center.shape[:-2], dtype=bool)
    for k in range(len(perms)):
        alt = np.take_along_axis(nb, np.broadcast_to(perms[k], best.shape + (Q,))[..., None], axis=-2)
        differs = np.abs(alt - matched).max(axis=(-2, -1)) > AMBIGUITY_TOL
        ambiguous |= near[..., k] & differs
    return matched, ambiguous


def approximate_differentials(u: QGridMap):
    """Sheetwise centered differences at interior nodes.

    Returns ``(D, valid)`` with ``D`` of shape ``shape + (N, Q, m)``;
    ``valid`` is false on the boundary layer and where a neighbour matching
    is ambiguous.
    """
    V = u.values
    N = u.N
    D = np.zeros(u.shape + (N, u.Q, u.m))
    valid = np.zeros(u.shape, dtype=bool)
    inner = tuple(slice(1, -1) for _ in range(N))
    valid[inner] = True
    for j in range(N):
        c = V[inner]
        plus_idx = tuple(slice(2, None) if a == j else slice(1, -1) for a in range(N))
        minus_idx = tuple(slice(0, -2) if a == j else slice(1, -1) for a in range(N))
        up, amb_p = _matched_neighbor(c, V[plus_idx])
        dn, amb_m = _matched_neighbor(c, V[minus_idx])
        D[inner + (j,)] = (up - dn) / (2 * u.h)
        valid[inner] &= ~(amb_p | amb_m)
    return D, valid


def _matched_neighbors_all(u: QGridMap):
    """Matched plus/minus neighbours along each axis on interior nodes."""
    V = u.values
    N = u.N
    inner = tuple(slice(1, -1) for _ in range(N))
    out = []
    for j in range(N):
        c = V[inner]
        plus_idx = tuple(slice(2, None) if a == j else slice(1, -1) for a in range(N))
        minus_idx = tuple(slice(0, -2) if a == j else slice(1, -1) for a in range(N))
        up, _ = _matched_neighbor(c, V[plus_idx])
        dn, _ = _matched_neighbor(c, V[minus_idx])
        out.append((up, dn))
    return out


@dataclass
class MonotonicityReport:
    lhs: float
    rhs: float
    discrepancy: float
    energy_scale: float


def monotonicity_report(u: QGridMap, y, s: float, r: float) -> MonotonicityReport:
    """Both sides of the monotonicity identity between radii s < r.

    lhs is the change of scaled energy; rhs is
    2 int_{B_r \\ B_s} |x - y|^(2-N) |du/dr|^2 with the radial derivative
    taken from matched sheetwise differences.
    """
    y = np.asarray(y, dtype=float)
    if not (DENSITY_RMIN_STEPS * u.h * (1 - 1e-9) <= s < r):
        raise PreconditionError("need 4h <= s < r")
    prof = ball_energy_profile(u, y, [s, r])
    lhs = float(prof.scaled_energy[1] - prof.scaled_energy[0])
    D, valid = approximate_differentials(u)
    x = u.coords - y
    rho = np.linalg.norm(x, axis=-1)
    ann = valid & (rho >= s) & (rho < r)
    xr = x[ann] / rho[ann][:, None]
    dr = np.einsum("ni,niqk->nqk", xr, D[ann])
    integrand = (dr ** 2).sum(axis=(-2, -1)) * rho[ann] ** (2 - u.N)
    rhs = 2.0 * float(integrand.sum()) * u.h ** u.N
    return MonotonicityReport(lhs, rhs, lhs - rhs, float(prof.scaled_energy[1]))


# ---------------------------------------------------------------------------
# variational residuals


def _field_support_ok(u: QGridMap, vals: np.ndarray) -> None:
    shape = u.shape
    near = np.zeros(shape, dtype=bool)
    k = 2
    for j, n in enumerate(shape):
        idx = np.arange(n)
        edge = (idx < k + 1) | (idx > n - 2 - k)
        sh = [1] * u.N
        sh[j] = n
        near |= edge.reshape(sh)
    if np.abs(vals[near]).max(initial=0.0) > 1e-12:
        raise RegionError("test field does not vanish on the 2h boundary margin")


def variation_residual(u: QGridMap, kind: str, field_fn: Callable) -> float:
    """Discretized first-variation integral of the energy.

    ``kind="inner"``: ``field_fn(x) -> (..., N)`` is a domain field X and
    the result is
        int (|Du|^2 delta_ij - 2 sum_l <D_i u_l, D_j u_l>) D_i X^j.
    ``kind="outer"``: ``field_fn(x, z) -> (..., m)`` is a target field Y and
    the result is
        int sum_l <D_i u_l, D_i[Y(x, u_l)]> + <A(D_i u_l, D_i u_l), Y(x, u_l)>.
    Nodes with ambiguous matchings are left out.
    """
    D, valid = approximate_differentials(u)
    X = u.coords
    h = u.h
    N = u.N
    inner = tuple(slice(1, -1) for _ in range(N))
    if kind == "inner":
        F = np.asarray(field_fn(X), dtype=float)
        _field_support_ok(u, F)
        DX = np.zeros(u.shape + (N, N))  # DX[..., i, j] = D_i X^j
        for i in range(N):
            plus = tuple(slice(2, None) if a == i else slice(1, -1) for a in range(N))
            minus = tuple(slice(0, -2) if a == i else slice(1, -1) for a in range(N))
            DX[inner + (i,)] = (F[plus] - F[minus]) / (2 * h)
        Du2 = (D ** 2).sum(axis=(-3, -2, -1))
        gram = np.einsum("...iqk,...jqk->...ij", D, D)
        integrand = Du2 * np.einsum("...ii->...", DX) - 2 * np.einsum("...ij,...ij->...", gram, DX)
        return float(integrand[valid].sum()) * h ** N
    if kind == "outer":
        Qv = u.values
        Y0 = np.asarray(field_fn(X[..., None, :], Qv), dtype=float)
        _field_support_ok(u, Y0)
        total = np.zeros(u.shape)
        tot_inner = np.zeros(tuple(n - 2 for n in u.shape))
        pairs = _matched_neighbors_all(u)
        for i, (up, dn) in enumerate(pairs):
            plus = tuple(slice(2, None) if a == i else slice(1, -1) for a in range(N))
            minus = tuple(slice(0, -2) if a == i else slice(1, -1) for a in range(N))
            Yp = field_fn(X[plus][..., None, :], up)
            Ym = field_fn(X[minus][..., None, :], dn)
            DY = (Yp - Ym) / (2 * h)
            Di = D[inner + (i,)]
            tot_inner += (Di * DY).sum(axis=(-2, -1))
            if not u.target.is_flat:
                p = Qv[inner]
                A = u.target.sff_unchecked(p, Di, Di)
                tot_inner += (A * Y0[inner]).sum(axis=(-2, -1))
        total[inner] = tot_inner
        return float(total[valid].sum()) * h ** N
    raise ValueError("kind must be 'inner' or 'outer'")


# ---------------------------------------------------------------------------
# rescaling and Holder fit


def rescale(u: QGridMap, y, r: float, shape=None, h: Optional[float] = None,
            origin=None) -> QGridMap:
    """The blow-up u_{y,r}(x) = u(y + r x) by nearest-node lookup.

    By default the new lattice is the pull-back of the old one, spacing
    h / r, so nodes land on source nodes when y is a node.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    y = np.asarray(y, dtype=float)
    shape = tuple(u.shape if shape is None else shape)
    h_new = u.h / r if h is None else float(h)
    o_new = (u.origin - y) / r if origin is None else np.asarray(origin, dtype=float)
    axes = [o_new[j] + h_new * np.arange(n) for j, n in enumerate(shape)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    src = y + r * X
    idx = np.rint((src - u.origin) / u.h).astype(np.int64)
    lim = np.array(u.shape) - 1
    snap = np.abs((src - u.origin) / u.h - idx).max()
    if np.any(idx < 0) or np.any(idx > lim):
        raise RegionError("rescaled lattice reaches outside the source domain")
    vals = u.values[tuple(idx[..., j] for j in range(u.N))]
    out = QGridMap(vals, h_new, o_new, u.target)
    out.snap_error = float(snap) * u.h
    return out


@dataclass
class HolderFit:
    alpha: float
    fit_quality: float
    trivial: bool = False


def holder_fit(profile: EnergyProfile) -> HolderFit:
    """Exponent alpha from the power law E(r) ~ r^(2 alpha).

    Fits log E against log r by least squares; alpha is half the slope and
    fit_quality the coefficient of determination. A profile that vanishes
    identically returns alpha = inf (the density is trivially zero).
    """
    r = np.asarray(profile.radii, dtype=float)
    E = np.asarray(profile.scaled_energy, dtype=float)
    if len(E) >= 1 and np.all(E == 0):
        return HolderFit(float("inf"), 1.0, True)
    keep = (E > 0) & (r > 0)
    if keep.sum() < 4:
        raise ValueError("need at least 4 radii with positive energy")
    lr, lE = np.log(r[keep]), np.log(E[keep])
    slope, icpt = np.polyfit(lr, lE, 1)
    pred = slope * lr + icpt
    ss_res = float(((lE - pred) ** 2).sum())
    ss_tot = float(((lE - lE.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return HolderFit(float(slope / 2), r2)
