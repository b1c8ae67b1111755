"""Extended boundary maps and the welding homeomorphism.

The time-1 boundary flow from x >= 0 either hits zero at T <= 1, in
which case the extended map continues linearly as T - 1, or survives
with a positive value h(0, 1, x).  The welding point psi(x) >= 0 is
the unique root pairing the two sides of the origin:

    h_tilde_minus(-psi(x)) = -h_tilde_plus(x)

i.e. either both flows hit zero at the same time or their time-1
values are opposite.  The minus-side map is strictly monotone with a
kink where T crosses 1, so the root is found by plain bisection with
a geometrically grown initial bracket.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass

import numpy as np

from .bessel_flow import (
    DEFAULT_SOLVER,
    FlowParams,
    HittingTime,
    ResolutionFloorError,
    SolverConfig,
    Trajectory,
    integrate,
    loosened,
)
from .rng_bridge import BrownianPath

# documented envelope for the time-1 flow value discretization error at
# the default step controls (measured via the flow-property residuals)
_FLOW_VALUE_ERR = 1e-3


class WeldingBracketError(RuntimeError):
    """Raised when the root bracket cannot be grown to enclose psi."""


@dataclass(frozen=True)
class HTildeValue:
    """One evaluation of an extended boundary map, with an error bar."""

    value: float
    err: float
    mode: str  # "hit" when T <= 1, "flow" otherwise
    hit: HittingTime | None


@dataclass(frozen=True)
class PsiValue:
    """Solved welding point with worst-case error propagation."""

    value: float
    err: float
    mode: str
    target: float
    residual: float
    g_spread: float
    hit_x: HittingTime | None
    hit_psi: HittingTime | None


@dataclass(frozen=True)
class WeldingTable:
    """psi over a (kappa, x) grid with per-entry diagnostics.

    row_monotone_violations counts certified order inversions: adjacent
    entries decreasing by more than their combined error bars.  The map
    x -> psi is strictly increasing but can compress wide x intervals
    below float resolution (the minus-side hitting field has certified
    near-jumps), so adjacent entries may tie in double precision; such
    pairs are re-solved at tighter tolerance and, when they remain
    unresolved, counted in row_resolution_ties instead.
    """

    kappas: tuple[float, ...]
    xs: tuple[float, ...]
    psi: np.ndarray
    err: np.ndarray
    mode: tuple[tuple[str, ...], ...]
    row_monotone_violations: tuple[int, ...]
    row_resolution_ties: tuple[int, ...]
    kappa_increments: tuple[float, ...]


def _run_to_one(
    path: BrownianPath, params: FlowParams, x: float, cfg: SolverConfig
) -> Trajectory:
    """Integrate to time 1, loosening the bracket tolerance if the
    certificate hits the resolution floor."""
    try:
        return integrate(path, params, 0.0, x, 1.0, cfg)
    except ResolutionFloorError:
        return integrate(path, params, 0.0, x, 1.0, loosened(cfg))


def h_tilde(
    path: BrownianPath,
    kappa: float,
    side: str,
    x: float,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> HTildeValue:
    """Extended boundary map at time 1 for one endpoint x.

    Plus side (x >= 0): T(x) - 1 when the flow dies by time 1, else the
    surviving value h(0, 1, x) > 0.  Minus side (x <= 0): mirrored,
    1 - T(x) when dead, else h(0, 1, x) < 0.
    """
    if side not in ("plus", "minus"):
        raise ValueError("side must be 'plus' or 'minus'")
    if side == "plus" and x < 0.0:
        raise ValueError("plus side needs x >= 0")
    if side == "minus" and x > 0.0:
        raise ValueError("minus side needs x <= 0")
    params = FlowParams.loewner(kappa)
    traj = _run_to_one(path, params, x, cfg)
    sgn = 1.0 if side == "plus" else -1.0
    if traj.status == "absorbed" and traj.hit.t_hi <= 1.0 + 0.5 * traj.hit.width:
        hit = traj.hit
        return HTildeValue(
            value=sgn * (hit.point - 1.0), err=0.5 * hit.width,
            mode="hit", hit=hit,
        )
    _, v = traj.value_before(1.0)
    return HTildeValue(value=v, err=_FLOW_VALUE_ERR, mode="flow", hit=traj.hit)


def psi(
    path: BrownianPath,
    kappa: float,
    x: float,
    tol: float = 1e-7,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> PsiValue:
    """Welding point psi(kappa, x) for x >= 0 on one driver path.

    Bisection on r |-> h_tilde_minus(-r), which decreases strictly from
    1 at r = 0; the initial bracket doubles until it encloses the
    target.  The error bar adds the bisection half-width and the value
    uncertainty divided by the local secant slope.
    """
    if x < 0.0:
        raise ValueError("x must be non-negative")
    if not (0.0 <= kappa <= 4.0):
        raise ValueError("kappa must lie in [0, 4]")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if x == 0.0:
        return PsiValue(
            value=0.0, err=0.0, mode="hit", target=1.0, residual=0.0,
            g_spread=0.0, hit_x=None, hit_psi=None,
        )
    plus = h_tilde(path, kappa, "plus", x, cfg)
    target = -plus.value

    def g(r: float) -> HTildeValue:
        return h_tilde(path, kappa, "minus", -r, cfg)

    r_lo, g_lo = 0.0, 1.0
    r_hi = max(x, 1.0)
    g_hi = g(r_hi).value
    grows = 0
    while g_hi >= target:
        r_lo, g_lo = r_hi, g_hi
        r_hi *= 2.0
        grows += 1
        if grows > 60:
            raise WeldingBracketError(
                f"no bracket for psi({kappa}, {x}) below r = {r_hi:.3e}"
            )
        g_hi = g(r_hi).value
    while r_hi - r_lo > tol:
        mid = 0.5 * (r_lo + r_hi)
        gm = g(mid).value
        if gm >= target:
            r_lo, g_lo = mid, gm
        else:
            r_hi, g_hi = mid, gm
    root = 0.5 * (r_lo + r_hi)
    final = g(root)
    slope = abs(g_lo - g_hi) / max(r_hi - r_lo, 1e-300)
    value_err = max(plus.err, final.err)
    err = 0.5 * (r_hi - r_lo) + value_err / max(slope, 1e-12)
    return PsiValue(
        value=root, err=err, mode=plus.mode, target=target,
        residual=abs(final.value - target), g_spread=abs(g_lo - g_hi),
        hit_x=plus.hit, hit_psi=final.hit,
    )


def _psi_cell(args):
    seed, horizon, max_level, kappa, x, tol, cfg = args
    path = BrownianPath(seed, horizon, max_level)
    p = psi(path, kappa, x, tol, cfg)
    return p.value, p.err, p.mode


def weld_field(
    path: BrownianPath,
    kappas,
    xs,
    tol: float = 1e-7,
    cfg: SolverConfig = DEFAULT_SOLVER,
    threads: int = 1,
) -> WeldingTable:
    """Solve psi over the full (kappa, x) grid on one shared path.

    Cells are independent given the path, so with threads > 1 they fill
    in parallel worker processes, each rebuilding the path from its
    seed; cells are assembled in grid order, so the table is identical
    for every worker count.  Non-root path segments fill sequentially.
    """
    kappas = tuple(float(k) for k in kappas)
    xs = tuple(float(v) for v in xs)
    if any(b <= a for a, b in zip(kappas, kappas[1:])):
        raise ValueError("kappa grid must be strictly increasing")
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise ValueError("x grid must be strictly increasing")
    if xs and xs[0] < 0.0:
        raise ValueError("x grid must be non-negative")
    vals = np.zeros((len(kappas), len(xs)))
    errs = np.zeros_like(vals)
    modes: list[list[str]] = []
    cells: dict[tuple[int, int], tuple[float, float, str]] = {}
    if threads > 1 and path.segment == 0 and path.t0 == 0.0:
        args = [
            (path.seed, path.horizon, path.max_level, k, xv, tol, cfg)
            for k in kappas for xv in xs
        ]
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_psi_cell, args))
        for idx, cell in enumerate(out):
            cells[divmod(idx, len(xs))] = cell
    for i, k in enumerate(kappas):
        row_modes = []
        for jj, xv in enumerate(xs):
            cell = cells.get((i, jj))
            if cell is None:
                p = psi(path, k, xv, tol, cfg)
                cell = p.value, p.err, p.mode
            vals[i, jj], errs[i, jj] = cell[0], cell[1]
            row_modes.append(cell[2])
        modes.append(row_modes)
        # non-strict adjacent pairs: re-solve both members at tighter
        # tolerance; pairs compressed below float resolution stay tied
        for retry in (1e-2 * tol, 1e-4 * tol):
            stuck = [jj for jj in range(len(xs) - 1)
                     if vals[i, jj + 1] <= vals[i, jj]]
            if not stuck:
                break
            redo = sorted({jj for s in stuck for jj in (s, s + 1)})
            for jj in redo:
                p = psi(path, k, xs[jj], retry, cfg)
                vals[i, jj] = p.value
                errs[i, jj] = p.err
                row_modes[jj] = p.mode
    row_viol = []
    row_ties = []
    for i in range(len(kappas)):
        gap = np.diff(vals[i])
        bar = errs[i][1:] + errs[i][:-1]
        row_viol.append(int(np.sum(gap < -bar)))
        row_ties.append(int(np.sum((gap <= 0.0) & (gap >= -bar))))
    kinc = tuple(
        float(np.max(np.abs(vals[i + 1] - vals[i]))) if len(xs) else 0.0
        for i in range(len(kappas) - 1)
    )
    return WeldingTable(
        kappas=kappas, xs=xs, psi=vals, err=errs,
        mode=tuple(tuple(r) for r in modes),
        row_monotone_violations=tuple(row_viol),
        row_resolution_ties=tuple(row_ties), kappa_increments=kinc,
    )
