"""Command-line harness: ``qmaps <command> [options]``.

Exit codes: 0 on success, 2 on invalid input, 3 when the minimizer stops
before converging (its artifacts are still written and flagged).
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io as qio
from .aq_space import PreconditionError, QPoint, metric_G
from .grid import Ball, RegionError, ball_energy_profile, dirichlet_energy, holder_fit, monotonicity_report
from .manifold import parse_target
from .minimizer import MinimizeConfig, NonConvergence, classify_regularity, minimize
from .presets import PRESETS, boundary_problem, sphere_branch
from .splitting import split_map

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3


class UsageError(ValueError):
    pass


def _vector(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise UsageError(f"{what} must be comma-separated numbers, got {text!r}") from None


def _load_map(path: str, target: str | None = None):
    u = qio.read_qmap(path)
    if target:
        u = type(u)(u.values, u.h, u.origin, parse_target(target))
    return u


def _center(u, text: str | None) -> np.ndarray:
    if text is None:
        return np.zeros(u.N)
    c = _vector(text, "--center")
    if c.size != u.N:
        raise UsageError(f"--center needs {u.N} coordinates")
    return c


def _out(args, default: str) -> Path:
    name = getattr(args, "out", None) or default
    p = Path(name)
    return p if p.is_absolute() else Path(args.out_dir) / p


def _args_hash(args, skip=("func", "out_dir", "threads")) -> str:
    return qio.config_hash({k: v for k, v in vars(args).items() if k not in skip})


# ---------------------------------------------------------------------------
# commands


def cmd_metric(args) -> int:
    S, T = QPoint.from_text(args.left), QPoint.from_text(args.right)
    print(repr(metric_G(S, T)))
    return EXIT_OK


def _minimize_setup(cfg: dict, args):
    preset = cfg.get("boundary_preset", "sqrt2")
    if preset not in PRESETS:
        raise UsageError(f"boundary_preset must be one of {sorted(PRESETS)}")
    info = PRESETS[preset]
    target = parse_target(args.target or cfg.get("target", info["target"]))
    if "ambient_m" in cfg and cfg["ambient_m"] != target.m:
        raise UsageError(f"ambient_m = {cfg['ambient_m']} does not match target {target.label}")
    q = cfg.get("q", info["Q"])
    if preset != "constant" and q != info["Q"]:
        raise UsageError(f"preset {preset} has q = {info['Q']}")
    n = cfg.get("grid_n", 64)
    if n < 4:
        raise UsageError("grid_n must be at least 4")
    if "grid_shape" in cfg:
        try:
            shape = tuple(int(s) for s in cfg["grid_shape"].split(","))
        except ValueError:
            raise UsageError("grid_shape must be comma-separated integers") from None
    else:
        shape = (n + 1,) * info["N"]
    h = cfg.get("grid_h", 2.0 / n)
    u0, free = boundary_problem(preset, shape, h, target, q)
    mc = MinimizeConfig(max_sweeps=cfg.get("max_sweeps", 10_000), energy_tol=cfg.get("energy_tol", 1e-9),
                        seed=cfg.get("seed", args.seed), sweep_order=cfg.get("sweep_order", "red-black"))
    return u0, free, mc


def cmd_minimize(args) -> int:
    cfg = qio.parse_config(args.config)
    chash = qio.config_hash(cfg)
    u0, free, mc = _minimize_setup(cfg, args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergence)
        res = minimize(u0, free, mc)
    out_dir = Path(args.out_dir)
    qio.write_qmap(out_dir / "out.qmap", res.u, chash)
    qio.write_csv(out_dir / "energy_history.csv", ["sweep", "energy"],
                  ((i, e) for i, e in enumerate(res.history)), chash)
    summary = {"energy": res.energy, "sweeps": res.sweeps, "converged": res.converged,
               "omega": res.omega, "free_nodes": int(free.sum())}
    # the presets leave the unit ball free, so this is the comparable energy
    if np.all(res.u.lo <= -1) and np.all(res.u.hi >= 1):
        summary["unit_ball_energy"] = dirichlet_energy(res.u, Ball(np.zeros(res.u.N), 1.0))
    qio.write_json(out_dir / "minimize.json", summary, chash)
    print(f"energy {res.energy!r} after {res.sweeps} sweeps"
          + ("" if res.converged else " (not converged)"))
    if "unit_ball_energy" in summary:
        print(f"energy on the unit ball {summary['unit_ball_energy']!r}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _radii(args) -> np.ndarray:
    if not 0 < args.rmin < args.rmax:
        raise UsageError("need 0 < rmin < rmax")
    if args.nr < 2:
        raise UsageError("--nr must be at least 2")
    return np.linspace(args.rmin, args.rmax, args.nr)


def cmd_profile(args) -> int:
    u = _load_map(args.map, args.target)
    prof = ball_energy_profile(u, _center(u, args.center), _radii(args))
    path = qio.write_csv(_out(args, "profile.csv"), ["r", "raw_energy", "scaled_energy"],
                         zip(prof.radii, prof.raw_energy, prof.scaled_energy), _args_hash(args))
    print(path)
    return EXIT_OK


def cmd_monotonicity(args) -> int:
    u = _load_map(args.map, args.target)
    y = _center(u, args.center)
    radii = _radii(args)
    rows = []
    for s, r in zip(radii[:-1], radii[1:]):
        rep = monotonicity_report(u, y, float(s), float(r))
        rows.append({"s": s, "r": r, "lhs": rep.lhs, "rhs": rep.rhs,
                     "discrepancy": rep.discrepancy, "energy_scale": rep.energy_scale})
    tol = 5 * u.h * max(row["energy_scale"] for row in rows)
    payload = {"pairs": rows, "tolerance": tol,
               "max_discrepancy": max(abs(row["discrepancy"]) for row in rows)}
    print(qio.write_json(_out(args, "monotonicity.json"), payload, _args_hash(args)))
    return EXIT_OK


def cmd_classify(args) -> int:
    u = _load_map(args.map, args.target)
    rep = classify_regularity(u, args.eps0)
    payload = {"eps0": args.eps0, "count": rep.count, "candidates": rep.candidates,
               "box_dimension": rep.box_dimension,
               "max_theta": float(np.nanmax(rep.theta)) if np.isfinite(rep.theta).any() else None}
    print(qio.write_json(_out(args, "classify.json"), payload, _args_hash(args)))
    return EXIT_OK


def cmd_holder(args) -> int:
    u = _load_map(args.map, args.target)
    prof = ball_energy_profile(u, _center(u, args.center), _radii(args))
    fit = holder_fit(prof)
    payload = {"alpha": fit.alpha, "fit_quality": fit.fit_quality, "trivial": fit.trivial,
               "radii": prof.radii, "scaled_energy": prof.scaled_energy}
    path = qio.write_json(_out(args, "holder.json"), payload, _args_hash(args))
    print(json.dumps({"alpha": fit.alpha, "fit_quality": fit.fit_quality}))
    print(path)
    return EXIT_OK


def _nearest_node_sampler(u):
    """Boundary data from a map file: nearest lattice node to each direction."""
    def sample(y):
        idx = np.rint((y - u.origin) / u.h).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= np.array(u.shape)):
            raise UsageError("boundary map must cover the unit sphere")
        return u.values[tuple(idx[:, j] for j in range(u.N))]
    return sample


def _luckhaus_boundary(args):
    N = args.n
    spin = np.array([[np.cos(0.005), -np.sin(0.005), 0.0], [np.sin(0.005), np.cos(0.005), 0.0],
                     [0.0, 0.0, 1.0]])[:N, :N]
    if args.boundary == "branch":
        if N != 3 or args.q != 2:
            raise UsageError("the branch boundary needs --n 3 --q 2")
        return sphere_branch, lambda y: sphere_branch(y @ spin.T)
    if args.boundary == "constant":
        pts = np.eye(max(args.q, N))[: args.q, :N]
        if args.q > N:
            raise UsageError("the constant boundary needs q <= n")
        const = lambda y: np.broadcast_to(pts, (len(y),) + pts.shape).copy()  # noqa: E731
        return const, const
    path = Path(args.boundary)
    if not path.exists():
        raise UsageError(f"--boundary must be 'branch', 'constant' or a QMAP file; got {args.boundary!r}")
    u = qio.read_qmap(path)
    if u.N != N or u.Q != args.q:
        raise UsageError(f"boundary map has N={u.N}, Q={u.Q}; expected N={N}, Q={args.q}")
    f = _nearest_node_sampler(u)
    return f, lambda y: f(y @ spin.T)


def cmd_luckhaus(args) -> int:
    from .luckhaus import build_annulus_extension

    u, v = _luckhaus_boundary(args)
    rep = build_annulus_extension(u, v, args.n, args.cap_l, args.sub_l, seed=args.seed, keep_map=False)
    path = qio.write_json(_out(args, "luckhaus.json"), rep.to_dict(), _args_hash(args))
    print(f"C_meas {rep.C_meas:.4g}  C_inf_meas {rep.C_inf_meas:.4g}  trace_error {rep.trace_error:g}")
    print(path)
    return EXIT_OK


def cmd_split(args) -> int:
    u = _load_map(args.map, args.target)
    if args.reference:
        T = QPoint.from_text(args.reference)
    else:
        mid = tuple(n // 2 for n in u.shape)
        T = QPoint(u.values[mid])
    s = "auto" if args.s == "auto" else float(args.s)
    rep = split_map(u, T, args.eps, s)
    payload = rep.to_dict()
    payload["reference"] = T.points
    print(qio.write_json(_out(args, "split.json"), payload, _args_hash(args)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags without defaults, so a value given
    # before the subcommand is not overwritten
    g = argparse.ArgumentParser(add_help=False)
    kw = (lambda v: {"default": v}) if defaults else (lambda v: {"default": argparse.SUPPRESS})
    g.add_argument("--seed", type=int, help="random seed (default 0)", **kw(0))
    g.add_argument("--out-dir", help="directory for artifacts", **kw("."))
    g.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads", **kw(None))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(False)
    p = argparse.ArgumentParser(prog="qmaps", description="Experiments with Q-valued maps.",
                                parents=[_global_flags(True)])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=func)
        return sp

    sp = add("metric", cmd_metric, "distance G between two Q-points")
    sp.add_argument("--left", required=True, help="'Q m p1 ; p2 ; ...'")
    sp.add_argument("--right", required=True)

    sp = add("minimize", cmd_minimize, "relax a boundary-value problem")
    sp.add_argument("--config", required=True)
    sp.add_argument("--target", default=None, help="sphere:<m>, torus4 or flat:<m>")

    for name, func, help_ in (("profile", cmd_profile, "scaled-energy profile as CSV"),
                              ("monotonicity", cmd_monotonicity, "monotonicity identity on radius pairs"),
                              ("holder", cmd_holder, "Holder exponent from the energy decay")):
        sp = add(name, func, help_)
        sp.add_argument("--map", required=True)
        sp.add_argument("--center", default=None, help="comma-separated point (default origin)")
        sp.add_argument("--rmin", type=float, default=0.05)
        sp.add_argument("--rmax", type=float, default=0.5)
        sp.add_argument("--nr", type=int, default=10 if name != "monotonicity" else 11)
        sp.add_argument("--target", default=None)
        sp.add_argument("--out", default=None)

    sp = add("classify", cmd_classify, "flag singular candidates by density")
    sp.add_argument("--map", required=True)
    sp.add_argument("--eps0", type=float, required=True)
    sp.add_argument("--target", default=None)
    sp.add_argument("--out", default=None)

    sp = add("luckhaus", cmd_luckhaus, "assemble the annulus extension")
    sp.add_argument("--n", type=int, default=3)
    sp.add_argument("--cap-l", type=int, default=4)
    sp.add_argument("--sub-l", type=int, default=1)
    sp.add_argument("--q", type=int, default=2)
    sp.add_argument("--boundary", default="branch", help="branch, constant or a QMAP file")
    sp.add_argument("--out", default=None)

    sp = add("split", cmd_split, "split a map into separated parts")
    sp.add_argument("--map", required=True)
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--s", default="auto")
    sp.add_argument("--reference", default=None, help="Q-point T (default: value at the middle node)")
    sp.add_argument("--target", default=None)
    sp.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be positive")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (ValueError, RegionError, PreconditionError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
