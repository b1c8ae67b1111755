"""Config resolution, provenance hashing, and deterministic file output.

Every command resolves its parameters from built-in defaults, an
optional JSON config file (schema-versioned, unknown keys rejected),
and command-line overrides.  The resolved parameter record is hashed
and the hash plus seed are embedded in every emitted file, so any
output can be traced to the exact run that produced it.  Worker count
and output directory never enter the hash or the files: outputs are
byte-identical for any thread count.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or malformed run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved parameter record for one command invocation."""

    command: str
    values: dict
    seed: int
    out_dir: str
    threads: int
    sha256: str

    def provenance(self) -> str:
        return (
            f"config_sha256={self.sha256} seed={self.seed} "
            f"schema_version={SCHEMA_VERSION}"
        )


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _check_grid(key: str, val, lo=None, hi=None, strict=True) -> None:
    if not isinstance(val, list) or not val or not all(
        isinstance(v, (int, float)) and math.isfinite(v) for v in val
    ):
        raise ConfigError(f"'{key}' must be a non-empty list of finite numbers")
    if strict and any(b <= a for a, b in zip(val, val[1:])):
        raise ConfigError(f"'{key}' must be strictly increasing")
    if lo is not None and val[0] < lo:
        raise ConfigError(f"'{key}' entries must be >= {lo}")
    if hi is not None and val[-1] > hi:
        raise ConfigError(f"'{key}' entries must be <= {hi}")


def _check_positive(key: str, val) -> None:
    if not isinstance(val, (int, float)) or not (val > 0.0) or not math.isfinite(val):
        raise ConfigError(f"'{key}' must be a positive finite number")


def _check_count(key: str, val, minimum: int = 1) -> None:
    if not isinstance(val, int) or isinstance(val, bool) or val < minimum:
        raise ConfigError(f"'{key}' must be an integer >= {minimum}")


def validate_values(command: str, values: dict) -> None:
    """Shared constraint checks: tolerances positive, grids sorted,
    delta entries <= 0, kappa entries in [0, 4]."""
    for key, val in values.items():
        if key == "delta":
            if not isinstance(val, (int, float)) or val > 0.0:
                raise ConfigError("'delta' must be a number <= 0")
        elif key == "kappa":
            if not isinstance(val, (int, float)) or not (0.0 <= val <= 4.0):
                raise ConfigError("'kappa' must lie in [0, 4]")
        elif key == "delta_grid":
            _check_grid(key, val, hi=0.0)
        elif key == "kappa_grid":
            _check_grid(key, val, lo=0.0, hi=4.0)
        elif key in ("x_grid", "quantile_points", "times"):
            _check_grid(key, val, lo=0.0)
        elif key in ("tol", "x", "lam"):
            _check_positive(key, val)
        elif key in ("n_paths", "k", "sum_replicates", "event_replicates"):
            _check_count(key, val)
        elif key == "refine":
            _check_count(key, val, minimum=0)
        elif key == "seed":
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError("'seed' must be an integer")
        elif key == "sum_n":
            _check_grid(key, val)
            if any(not isinstance(v, int) or v < 2 for v in val):
                raise ConfigError("'sum_n' entries must be integers >= 2")
        elif key == "event_triples":
            if not isinstance(val, list) or not val:
                raise ConfigError("'event_triples' must be a non-empty list")
            for t in val:
                if (
                    not isinstance(t, list) or len(t) != 3
                    or not all(isinstance(v, (int, float)) and v > 0 for v in t)
                ):
                    raise ConfigError(
                        "'event_triples' entries must be [x, k, lam] positives"
                    )
        elif key == "svg":
            if not isinstance(val, bool):
                raise ConfigError(f"'{key}' must be true or false")
        else:
            raise ConfigError(f"unknown config key '{key}' for {command}")


def resolve_config(
    command: str,
    defaults: dict,
    config_file: str | None,
    seed: int | None,
    out_dir: str,
    threads: int,
) -> RunConfig:
    """Merge defaults, config file, and CLI overrides; validate; hash."""
    values = dict(defaults)
    if config_file is not None:
        try:
            text = Path(config_file).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from e
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"{config_file}: invalid JSON at line {e.lineno}, "
                f"column {e.colno}: {e.msg}"
            ) from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"{config_file}: top level must be an object")
        if "schema_version" not in loaded:
            raise ConfigError(f"{config_file}: missing 'schema_version'")
        if loaded["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(
                f"{config_file}: schema_version "
                f"{loaded['schema_version']!r} != {SCHEMA_VERSION}"
            )
        for key, val in loaded.items():
            if key == "schema_version":
                continue
            if key not in defaults:
                raise ConfigError(f"unknown config key '{key}' for {command}")
            values[key] = val
    if seed is not None:
        values["seed"] = seed
    validate_values(command, values)
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    payload = {"command": command, "schema_version": SCHEMA_VERSION, **values}
    digest = hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
    return RunConfig(
        command=command, values=values, seed=int(values["seed"]),
        out_dir=out_dir, threads=threads, sha256=digest,
    )


def json_safe(obj):
    """Recursively convert to JSON-clean types; non-finite floats
    become null so reports stay standard JSON."""
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if hasattr(obj, "item"):
        return json_safe(obj.item())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_report(cfg: RunConfig, name: str, results: dict) -> Path:
    """JSON report with schema, provenance, resolved config, results."""
    payload = json_safe({
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command,
        "seed": cfg.seed,
        "config_sha256": cfg.sha256,
        "config": cfg.values,
        "results": results,
    })
    out = Path(cfg.out_dir) / name
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return out


def _cell(v) -> str:
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(cfg: RunConfig, name: str, header, rows) -> Path:
    """UTF-8 CSV: provenance comment line, header row, data rows."""
    lines = [f"# {cfg.provenance()}", ",".join(header)]
    lines.extend(",".join(_cell(c) for c in row) for row in rows)
    out = Path(cfg.out_dir) / name
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


# -- minimal SVG emission ----------------------------------------------------

_W, _H, _M = 640, 420, 56.0

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f")


def _spans(xs, ys):
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    return x0, max(x1 - x0, 1e-12), y0, max(y1 - y0, 1e-12)


def svg_polyline(cfg: RunConfig, name: str, series, title: str,
                 x_label: str, y_label: str) -> Path:
    """Line plot of (xs, ys, label) series with shared axes."""
    all_x = [v for s in series for v in s[0]]
    all_y = [v for s in series for v in s[1]]
    x0, xw, y0, yw = _spans(all_x, all_y)
    sx = lambda v: _M + (v - x0) / xw * (_W - 2 * _M)
    sy = lambda v: _H - _M - (v - y0) / yw * (_H - 2 * _M)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
        f"<!-- {cfg.provenance()} -->",
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" '
        f'font-size="15">{title}</text>',
        f'<line x1="{_M}" y1="{_H - _M}" x2="{_W - _M}" y2="{_H - _M}" '
        'stroke="black"/>',
        f'<line x1="{_M}" y1="{_M}" x2="{_M}" y2="{_H - _M}" stroke="black"/>',
        f'<text x="{_W / 2:.1f}" y="{_H - 16}" text-anchor="middle" '
        f'font-size="12">{x_label}</text>',
        f'<text x="18" y="{_H / 2:.1f}" font-size="12" '
        f'transform="rotate(-90 18 {_H / 2:.1f})" '
        f'text-anchor="middle">{y_label}</text>',
        f'<text x="{_M}" y="{_H - _M + 16:.1f}" font-size="10" '
        f'text-anchor="middle">{x0:.4g}</text>',
        f'<text x="{_W - _M}" y="{_H - _M + 16:.1f}" font-size="10" '
        f'text-anchor="middle">{x0 + xw:.4g}</text>',
        f'<text x="{_M - 6}" y="{_H - _M:.1f}" font-size="10" '
        f'text-anchor="end">{y0:.4g}</text>',
        f'<text x="{_M - 6}" y="{_M + 4:.1f}" font-size="10" '
        f'text-anchor="end">{y0 + yw:.4g}</text>',
    ]
    for i, (xs, ys, label) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs, ys))
        parts.append(
            f'<polyline fill="none" stroke="{color}" points="{pts}"/>'
        )
        parts.append(
            f'<text x="{_W - _M + 4}" y="{_M + 14 * i + 10:.1f}" '
            f'font-size="10" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    out = Path(cfg.out_dir) / name
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return out


def svg_heatmap(cfg: RunConfig, name: str, matrix, title: str,
                x_label: str, y_label: str) -> Path:
    """Grid heat map; cells shaded by value between the finite extremes."""
    rows = len(matrix)
    cols = len(matrix[0])
    finite = [v for row in matrix for v in row if math.isfinite(v)]
    v0 = min(finite) if finite else 0.0
    vw = max((max(finite) - v0) if finite else 0.0, 1e-12)
    cw = (_W - 2 * _M) / cols
    ch = (_H - 2 * _M) / rows
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
        f"<!-- {cfg.provenance()} -->",
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" '
        f'font-size="15">{title}</text>',
        f'<text x="{_W / 2:.1f}" y="{_H - 16}" text-anchor="middle" '
        f'font-size="12">{x_label}</text>',
        f'<text x="18" y="{_H / 2:.1f}" font-size="12" '
        f'transform="rotate(-90 18 {_H / 2:.1f})" '
        f'text-anchor="middle">{y_label}</text>',
        f'<text x="{_M}" y="{_H - _M + 16:.1f}" font-size="10">'
        f"min={v0:.4g}</text>",
        f'<text x="{_W - _M}" y="{_H - _M + 16:.1f}" font-size="10" '
        f'text-anchor="end">max={v0 + vw:.4g}</text>',
    ]
    for i, row in enumerate(matrix):
        for j, v in enumerate(row):
            if math.isfinite(v):
                level = int(round(235.0 * (1.0 - (v - v0) / vw)))
                fill = f"rgb({level},{level},255)"
            else:
                fill = "rgb(160,160,160)"
            parts.append(
                f'<rect x="{_M + j * cw:.2f}" y="{_M + i * ch:.2f}" '
                f'width="{cw:.2f}" height="{ch:.2f}" fill="{fill}" '
                'stroke="white" stroke-width="0.5"/>'
            )
    parts.append("</svg>")
    out = Path(cfg.out_dir) / name
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return out
