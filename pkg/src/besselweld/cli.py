"""Command-line front end.

Verbs: verify-law, field, weld, walk, trace, selftest.  Every verb
accepts --config (JSON, schema-versioned), --seed, --out-dir, and
--threads; outputs are byte-identical for any thread count.  Exit
status 0 means every check the command ran passed.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import experiments as exp
from .bessel_flow import FlowParams, hitting_time, integrate
from .cli_io import (
    ConfigError,
    RunConfig,
    resolve_config,
    svg_heatmap,
    svg_polyline,
    write_csv,
    write_report,
)
from .complex_flow import trace_point, up_bound_check
from .rng_bridge import KeyedStream, PathSeed, create_path, dump_path, load_path
from .special_fn import (
    bessel_k1,
    bessel_k1_quadrature,
    hitting_law,
    inverse_gamma_cdf,
    laplace_inverse_gamma,
)
from .welding import h_tilde, psi, weld_field

DEFAULTS = {
    "verify-law": {
        "seed": 90001,
        "delta": 0.0,
        "x": 1.0,
        "n_paths": 2000,
        "quantile_points": [0.25, 0.5, 1.0, 2.0, 5.0, 10.0],
    },
    "field": {
        "seed": 96001,
        "x_grid": [0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8],
        "delta_grid": [-2.8, -2.4, -2.0, -1.6, -1.2, -0.8, -0.4, 0.0],
        "refine": 0,
        "svg": True,
    },
    "weld": {
        "seed": 97001,
        "kappa_grid": [0.0, 1.0, 2.0, 3.0, 4.0],
        "x_grid": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4],
        "tol": 1e-7,
        "svg": True,
    },
    "walk": {
        "seed": 98001,
        "x": 0.05,
        "k": 300,
        "sum_n": [1000, 100000],
        "sum_replicates": 200,
        "event_triples": [[0.1, 100, 1.0], [0.2, 50, 2.0], [0.05, 400, 0.5]],
        "event_replicates": 10000,
        "svg": False,
    },
    "trace": {
        "seed": 99001,
        "kappa": 2.0,
        "times": [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        "tol": 1e-3,
        "svg": True,
    },
    "selftest": {"seed": 90500},
}


def cmd_verify_law(cfg: RunConfig) -> int:
    v = cfg.values
    rep = exp.verify_exact_law(
        v["delta"], v["n_paths"], tuple(v["quantile_points"]), v["x"],
        seed_base=cfg.seed, threads=cfg.threads,
    )
    write_csv(
        cfg, "verify_law_samples.csv",
        ["index", "point", "t_lo", "t_hi", "censored"],
        [(i, *s) for i, s in enumerate(rep.samples)],
    )
    write_report(cfg, "verify_law_report.json", {
        "passed": rep.passed,
        "mean_regime": rep.mean_regime,
        "sample_mean": rep.sample_mean,
        "mean_exact": rep.mean_exact,
        "censored": rep.censored,
        "floor_retries": rep.floor_retries,
        "quantile_points": rep.quantile_points,
        "empirical": rep.empirical,
        "expected": rep.expected,
        "straddle": rep.straddle,
        "checks": [asdict(c) for c in rep.checks],
    })
    return 0 if rep.passed else 1


def _midpoints(grid: list[float]) -> list[float]:
    out = [grid[0]]
    for a, b in zip(grid, grid[1:]):
        out.extend((0.5 * (a + b), b))
    return out


def cmd_field(cfg: RunConfig) -> int:
    v = cfg.values
    xs, ds = list(v["x_grid"]), list(v["delta_grid"])
    levels = []
    field = None
    for lev in range(v["refine"] + 1):
        if lev:
            xs, ds = _midpoints(xs), _midpoints(ds)
        field = exp.compute_field(create_path(PathSeed(cfg.seed, 0), 1.0), xs, ds)
        levels.append({
            "shape": [len(ds), len(xs)],
            "x_violations": field.x_violations,
            "x_ties": field.x_ties,
            "delta_violations": field.delta_violations,
            "sandwich_violations": field.sandwich_violations,
            "censored": field.censored,
            "floor_retries": field.floor_retries,
            "max_x_increment": field.max_x_increment,
            "max_delta_increment": field.max_delta_increment,
        })
    rows = []
    for i, d in enumerate(field.deltas):
        for j, x in enumerate(field.xs):
            h = field.times[i][j]
            rows.append((d, x, h.point, h.t_lo, h.t_hi, h.width, h.censored))
    write_csv(
        cfg, "field.csv",
        ["delta", "x", "point", "t_lo", "t_hi", "width", "censored"], rows,
    )
    incs = [max(l["max_x_increment"], l["max_delta_increment"]) for l in levels]
    passed = (
        levels[-1]["x_violations"] == 0
        and levels[-1]["delta_violations"] == 0
        and levels[-1]["sandwich_violations"] == 0
    )
    write_report(cfg, "field_report.json", {
        "passed": passed,
        "levels": levels,
        "continuity_label": exp.CONTINUITY_LABEL,
        "max_increments": incs,
        "increments_decreasing": all(b < a for a, b in zip(incs, incs[1:])),
    })
    if v["svg"]:
        svg_heatmap(
            cfg, "field.svg", field.points().tolist(),
            "zero-hitting time over (x, delta)", "x index", "delta index",
        )
    return 0 if passed else 1


def cmd_weld(cfg: RunConfig) -> int:
    v = cfg.values
    tab = weld_field(
        create_path(PathSeed(cfg.seed, 0), 1.0),
        v["kappa_grid"], v["x_grid"], v["tol"], threads=cfg.threads,
    )
    rows = []
    for i, k in enumerate(tab.kappas):
        for j, x in enumerate(tab.xs):
            rows.append((k, x, tab.psi[i, j], tab.err[i, j], tab.mode[i][j]))
    write_csv(cfg, "weld.csv", ["kappa", "x", "psi", "err", "mode"], rows)
    identity_dev = (
        float(np.max(np.abs(tab.psi[0] - np.array(tab.xs))))
        if tab.kappas[0] == 0.0 else None
    )
    passed = all(c == 0 for c in tab.row_monotone_violations) and (
        identity_dev is None or identity_dev <= 1e-6
    )
    write_report(cfg, "weld_report.json", {
        "passed": passed,
        "row_monotone_violations": tab.row_monotone_violations,
        "row_resolution_ties": tab.row_resolution_ties,
        "kappa_increments": tab.kappa_increments,
        "identity_row_deviation": identity_dev,
    })
    if v["svg"]:
        series = [
            (list(tab.xs), tab.psi[i].tolist(), f"kappa={k:g}")
            for i, k in enumerate(tab.kappas)
        ]
        svg_polyline(cfg, "weld.svg", series, "welding points", "x", "psi")
    return 0 if passed else 1


def cmd_walk(cfg: RunConfig) -> int:
    v = cfg.values
    path = create_path(PathSeed(cfg.seed, 0), 1.0)
    run = exp.bessel_walk(path, v["x"], v["k"])
    write_csv(
        cfg, "walk.csv", ["step", "time", "increment"],
        [(i, run.times[i], run.increments[i - 1] if i else 0.0)
         for i in range(run.k + 1)],
    )
    sums = {}
    iqrs = []
    for idx, n in enumerate(v["sum_n"]):
        stat = exp.walk_sum_statistic(
            n, v["sum_replicates"], KeyedStream(PathSeed(cfg.seed, 1 + idx))
        )
        q1, q2, q3 = (float(q) for q in np.percentile(stat, [25, 50, 75]))
        sums[str(n)] = {"median": q2, "iqr": q3 - q1}
        iqrs.append(q3 - q1)
    events = []
    for idx, (x, k, lam) in enumerate(v["event_triples"]):
        r = exp.event_a_probability(
            float(x), int(k), float(lam), v["event_replicates"],
            KeyedStream(PathSeed(cfg.seed, 1001 + idx)),
        )
        events.append(asdict(r))
    final_median = sums[str(v["sum_n"][-1])]["median"]
    passed = (
        bool(np.all(run.increments > 0.0))
        and all(e["passed"] for e in events)
        and 0.4 <= final_median <= 0.6
        and all(b < a for a, b in zip(iqrs, iqrs[1:]))
    )
    write_report(cfg, "walk_report.json", {
        "passed": passed,
        "walk": {
            "x": run.x, "k": run.k,
            "final_time": float(run.times[-1]),
            "min_increment": float(np.min(run.increments)),
            "median_increment": float(np.median(run.increments)),
            "floor_retries": run.floor_retries,
        },
        "sum_statistic": sums,
        "iqr_decreasing": all(b < a for a, b in zip(iqrs, iqrs[1:])),
        "events": events,
    })
    if v["svg"]:
        svg_polyline(
            cfg, "walk.svg",
            [(list(range(run.k + 1)), [float(t) for t in run.times],
              "restart times")],
            "successive zero-hit times", "step", "time",
        )
    with open(Path(cfg.out_dir) / "walk_path.bin", "wb") as fh:
        dump_path(path, fh)
    return 0 if passed else 1


def cmd_trace(cfg: RunConfig) -> int:
    v = cfg.values
    path = create_path(PathSeed(cfg.seed, 0), 1.0)
    rows = []
    all_converged = True
    for t in v["times"]:
        r = trace_point(path, v["kappa"], float(t), tol=v["tol"])
        rows.append((t, r.value.real, r.value.imag, r.y_used, r.converged))
        all_converged = all_converged and r.converged
    write_csv(
        cfg, "trace.csv", ["t", "re", "im", "y_used", "converged"], rows,
    )
    write_report(cfg, "trace_report.json", {
        "passed": all_converged,
        "kappa": v["kappa"],
        "n_points": len(rows),
        "n_converged": sum(1 for r in rows if r[4]),
        "max_im": max(r[2] for r in rows),
    })
    if v["svg"]:
        svg_polyline(
            cfg, "trace.svg",
            [([r[1] for r in rows], [r[2] for r in rows], "trace")],
            f"trace points, kappa={v['kappa']:g}", "re", "im",
        )
    return 0 if all_converged else 1


def _selftest_checks(seed: int):
    """Closed-form and exact-identity checks only; no Monte Carlo."""
    path = create_path(PathSeed(seed, 0), 1.0)
    k0 = FlowParams.loewner(0.0)

    yield "kappa0 hitting time x^2/4", lambda: abs(
        hitting_time(path, k0, 0.0, 1.0).point - 0.25
    ) == 0.0
    yield "kappa0 trajectory closed form", lambda: abs(
        integrate(path, k0, 0.0, 1.0, 0.125).value_before(0.125)[1]
        - math.sqrt(1.0 - 4.0 * 0.125)
    ) <= 1e-15
    yield "kappa0 trace on 2 i sqrt(t)", lambda: abs(
        trace_point(path, 0.0, 0.25, tol=1e-9).value - complex(0.0, 1.0)
    ) <= 1e-12
    yield "x=0 instant absorption", lambda: (
        hitting_time(path, FlowParams.bessel(0.0), 0.0, 0.0).point == 0.0
    )
    yield "boundary map at x=0", lambda: (
        h_tilde(path, 4.0, "plus", 0.0).value == -1.0
    )
    yield "boundary map kappa0 dead side", lambda: (
        h_tilde(path, 0.0, "plus", 1.0).value == -0.75
    )
    yield "boundary map kappa0 live side", lambda: abs(
        h_tilde(path, 0.0, "plus", 3.0).value - math.sqrt(5.0)
    ) <= 1e-12
    yield "welding fixes origin", lambda: psi(path, 4.0, 0.0).value == 0.0
    yield "welding identity at kappa0", lambda: abs(
        psi(path, 0.0, 0.75).value - 0.75
    ) <= 1e-6
    yield "inverse gamma cdf identity", lambda: abs(
        inverse_gamma_cdf(hitting_law(0.0), 1.0) - math.exp(-0.5)
    ) <= 1e-15
    yield "K1 against quadrature", lambda: all(
        abs(bessel_k1(x) - bessel_k1_quadrature(x)) <= 1e-8
        for x in (0.1, 1.0, 5.0)
    )
    yield "laplace transform closed form", lambda: all(
        abs(
            laplace_inverse_gamma(t)
            - math.sqrt(2.0 * t) * bessel_k1(math.sqrt(2.0 * t))
        ) <= 1e-14
        for t in (0.1, 1.0, 10.0)
    )
    yield "event probability identity", lambda: abs(
        (1.0 - math.exp(-100 * 0.01 / 2.0))
        - (1.0 - inverse_gamma_cdf(hitting_law(0.0), 1.0 / 0.01) ** 100)
    ) <= 1e-12
    yield "complex up-bounds kappa=1", lambda: (
        up_bound_check(path, 1.0, 0.0, 1.0, 0.1).violations == 0
    )

    def roundtrip() -> bool:
        import io

        buf = io.BytesIO()
        dump_path(path, buf)
        buf.seek(0)
        clone = load_path(buf)
        return clone.value_at(0.5, 8) == path.value_at(0.5, 8)

    yield "path dump/load roundtrip", roundtrip


def cmd_selftest(cfg: RunConfig) -> int:
    failures = 0
    lines = []
    for name, check in _selftest_checks(cfg.seed):
        try:
            ok = bool(check())
        except Exception as e:  # a crash is a failure, not an abort
            ok = False
            name = f"{name} ({type(e).__name__}: {e})"
        failures += 0 if ok else 1
        line = f"{'ok  ' if ok else 'FAIL'} {name}"
        lines.append(line)
        print(line)
    write_report(cfg, "selftest_report.json", {
        "passed": failures == 0,
        "failures": failures,
        "lines": lines,
    })
    return 0 if failures == 0 else 1


_COMMANDS = {
    "verify-law": cmd_verify_law,
    "field": cmd_field,
    "weld": cmd_weld,
    "walk": cmd_walk,
    "trace": cmd_trace,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="besselweld",
        description="Bessel hitting-time and welding simulation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None,
                        help="JSON config file (schema-versioned)")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out-dir", default=".",
                        help="directory for emitted files")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker processes; outputs do not depend on it")
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(
            args.command, DEFAULTS[args.command], args.config,
            args.seed, args.out_dir, args.threads,
        )
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    return _COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
