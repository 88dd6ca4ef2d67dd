"""Map files, config files and the small CSV/JSON artifacts written by the CLI."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .grid import QGridMap
from .manifold import parse_target

__all__ = [
    "ConfigError",
    "MINIMIZE_KEYS",
    "parse_config",
    "parse_config_text",
    "config_hash",
    "write_qmap",
    "read_qmap",
    "format_qmap",
    "write_csv",
    "write_json",
]


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


MINIMIZE_KEYS = {
    "max_sweeps": int,
    "energy_tol": float,
    "seed": int,
    "sweep_order": str,
    "grid_n": int,
    "grid_shape": str,
    "grid_h": float,
    "target": str,
    "boundary_preset": str,
    "q": int,
    "ambient_m": int,
}


def parse_config_text(text: str, schema: dict = MINIMIZE_KEYS, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Values are converted with the schema's type. Errors carry the line number.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, val = (p.strip() for p in line.partition("="))
        if key not in schema:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if not val:
            raise ConfigError(f"{source}:{lineno}: empty value for {key!r}")
        try:
            out[key] = schema[key](val)
        except ValueError:
            raise ConfigError(
                f"{source}:{lineno}: {key} expects {schema[key].__name__}, got {val!r}") from None
    return out


def parse_config(path, schema: dict = MINIMIZE_KEYS) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, schema, str(path))


def config_hash(cfg: dict) -> str:
    """Short stable hash of a config mapping (key order does not matter)."""
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(x: float) -> str:
    return repr(float(x))


def format_qmap(u: QGridMap, chash: Optional[str] = None) -> str:
    head = (f"QMAP 1 N={u.N} Q={u.Q} M={u.m} SHAPE={','.join(str(n) for n in u.shape)} "
            f"H={_fmt(u.h)} ORIGIN={','.join(_fmt(o) for o in u.origin)} TARGET={u.target.label}")
    lines = [head]
    if chash:
        lines.append(f"# config {chash}")
    flat = u.values.reshape(-1, u.Q * u.m)
    for idx, row in zip(np.ndindex(*u.shape), flat):
        lines.append(" ".join(str(i) for i in idx) + " " + " ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_qmap(path, u: QGridMap, chash: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_qmap(u, chash), encoding="utf-8")
    return path


def _header_fields(line: str, source: str) -> dict:
    tokens = line.split()
    if len(tokens) < 2 or tokens[0] != "QMAP" or tokens[1] != "1":
        raise ValueError(f"{source}:1: not a QMAP version 1 file")
    fields = {}
    for tok in tokens[2:]:
        key, eq, val = tok.partition("=")
        if not eq:
            raise ValueError(f"{source}:1: malformed header field {tok!r}")
        fields[key] = val
    missing = {"N", "Q", "M", "SHAPE", "H", "ORIGIN", "TARGET"} - set(fields)
    if missing:
        raise ValueError(f"{source}:1: header lacks {sorted(missing)}")
    return fields


def read_qmap(path) -> QGridMap:
    source = str(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{source}: empty file")
    f = _header_fields(lines[0], source)
    N, Q, m = int(f["N"]), int(f["Q"]), int(f["M"])
    shape = tuple(int(s) for s in f["SHAPE"].split(","))
    origin = [float(o) for o in f["ORIGIN"].split(",")]
    if len(shape) != N or len(origin) != N:
        raise ValueError(f"{source}:1: SHAPE and ORIGIN need {N} entries")
    vals = np.full(shape + (Q * m,), np.nan)
    seen = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        tok = line.split()
        if len(tok) != N + Q * m:
            raise ValueError(f"{source}:{lineno}: expected {N + Q * m} fields, got {len(tok)}")
        try:
            idx = tuple(int(t) for t in tok[:N])
            vals[idx] = [float(t) for t in tok[N:]]
        except (ValueError, IndexError):
            raise ValueError(f"{source}:{lineno}: malformed node line") from None
        seen += 1
    if seen != int(np.prod(shape)) or np.isnan(vals).any():
        raise ValueError(f"{source}: expected {int(np.prod(shape))} distinct node lines, got {seen}")
    return QGridMap(vals.reshape(shape + (Q, m)), float(f["H"]), origin, parse_target(f["TARGET"]))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], chash: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = []
    if chash:
        out.append(f"# config {chash}")
    out.append(",".join(header))
    for row in rows:
        out.append(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path, payload: dict, chash: Optional[str] = None) -> Path:
    """JSON has no comments, so the config hash goes in a ``config_hash`` key."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    if chash:
        body = {"config_hash": chash, **body}
    path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
