"""Statistical verification harness over the shared-path flows.

Exact laws are checked at pre-registered quantile points against the
closed-form CDF with three-sigma binomial bands plus the certified
bracket slack; no point is chosen after seeing data.  Convergence-in-
probability statements are checked through medians and interquartile
ranges, never means (the hitting laws are heavy tailed, some with
infinite mean).  Continuity of the hitting-time and welding fields has
no finite certificate, so it is reported as a labeled grid-refinement
diagnostic instead of a pass/fail claim.

Replicates are keyed by stream index, so any worker count produces the
same result set; aggregations are commutative and applied in index
order, which makes reports byte-stable across thread counts.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass

import numpy as np

from .bessel_flow import (
    DEFAULT_SOLVER,
    FlowParams,
    HittingTime,
    ResolutionFloorError,
    SolverConfig,
    hitting_time,
    loosened,
    sandwich_bounds,
)
from .rng_bridge import BrownianPath, KeyedStream, PathSeed, create_path
from .special_fn import hitting_law, inverse_gamma_cdf, inverse_gamma_sample

# quantile points fixed ahead of every law run
LAW_QUANTILE_POINTS = (0.25, 0.5, 1.0, 2.0, 5.0, 10.0)

# envelope for the scheme error between the certified bracket (which
# pins the flow restarted from the near-zero anchor) and the true
# hitting time, measured by step-size halving at the default controls
SCHEME_ENVELOPE = 3e-4

CONTINUITY_LABEL = "continuity diagnostic (grid-refinement proxy, not a proof)"


@dataclass(frozen=True)
class CheckResult:
    """One named pass/fail comparison with its observed value and bound."""

    name: str
    passed: bool
    observed: float
    bound: float
    detail: str = ""


@dataclass(frozen=True)
class LawReport:
    """Empirical CDF of zero-hitting times against the closed form."""

    delta: float
    x: float
    n_paths: int
    quantile_points: tuple[float, ...]
    empirical: tuple[float, ...]
    expected: tuple[float, ...]
    straddle: tuple[float, ...]
    sample_mean: float
    mean_exact: float
    mean_regime: str
    censored: int
    floor_retries: int
    checks: tuple[CheckResult, ...]
    samples: tuple[tuple[float, float, float, bool], ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


@dataclass(frozen=True)
class HittingTimeField:
    """Coupled hitting times over an (x, delta) grid on one path.

    Monotone audit counters distinguish certified inversions (adjacent
    entries out of order beyond combined bracket + scheme slack, which
    would indicate a solver bug) from resolution ties (non-strict pairs
    within that slack, possible where the field compresses an interval
    below float resolution).
    """

    seed: PathSeed
    xs: tuple[float, ...]
    deltas: tuple[float, ...]
    times: tuple[tuple[HittingTime, ...], ...]
    cfg: SolverConfig
    x_violations: int
    x_ties: int
    delta_violations: int
    sandwich_violations: int
    censored: int
    floor_retries: int
    max_x_increment: float
    max_delta_increment: float

    def points(self) -> np.ndarray:
        return np.array([[h.point for h in row] for row in self.times])


@dataclass(frozen=True)
class RefinementDiagnostic:
    """Max adjacent-cell increment across successive factor-2 grids."""

    label: str
    shapes: tuple[tuple[int, int], ...]
    max_increments: tuple[float, ...]
    decreasing: bool


@dataclass(frozen=True)
class WalkRun:
    """Iterated kappa=4 hitting times s_{k+1} = T(s_k, 2x) on one path."""

    x: float
    k: int
    times: np.ndarray
    increments: np.ndarray
    floor_retries: int


@dataclass(frozen=True)
class EventProbResult:
    """Frequency that any of k scaled increments exceeds lam."""

    x: float
    k: int
    lam: float
    replicates: int
    empirical: float
    exact: float
    se: float
    passed: bool


@dataclass(frozen=True)
class KappaSupReport:
    """Median driver-sup statistic along a kappa sequence down to 0."""

    x: float
    kappas: tuple[float, ...]
    sup_medians: tuple[float, ...]
    t_medians: tuple[float, ...]
    decreasing: bool
    label: str


def _hit_retry(
    path: BrownianPath,
    params: FlowParams,
    s: float,
    x: float,
    cfg: SolverConfig,
) -> tuple[HittingTime, bool]:
    # Escalate the bracket tolerance on resolution floors; the widest
    # accepted bracket (1e-4 scale) stays below the comparison slacks.
    try:
        return hitting_time(path, params, s, x, cfg), False
    except ResolutionFloorError:
        for scale in (1e-6, 1e-5):
            try:
                return hitting_time(path, params, s, x, loosened(cfg, scale)), True
            except ResolutionFloorError:
                continue
        return hitting_time(path, params, s, x, loosened(cfg, 1e-4)), True


def _parallel_map(fn, items, threads: int):
    """Order-preserving map; identical output for any worker count."""
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(a) for a in items]
    with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as ex:
        chunk = max(1, len(items) // (threads * 8))
        return list(ex.map(fn, items, chunksize=chunk))


def _law_sample(args):
    seed_base, i, delta, x, cfg = args
    path = create_path(PathSeed(seed_base, i), horizon=1.0)
    hit, retried = _hit_retry(path, FlowParams.bessel(delta), 0.0, x, cfg)
    return hit.point, hit.t_lo, hit.t_hi, hit.censored, retried


def verify_exact_law(
    delta: float,
    n_paths: int,
    quantile_points=LAW_QUANTILE_POINTS,
    x: float = 1.0,
    seed_base: int = 90001,
    threads: int = 1,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> LawReport:
    """Simulate zero-hitting times and compare their empirical CDF with
    the closed-form law at the pre-registered quantile points.

    Each point passes iff |ecdf - cdf| <= 3 * binomial SE + the fraction
    of samples whose certified bracket (widened by the scheme envelope)
    straddles the point.  The mean identity is checked only in the
    finite-mean regime and is skipped, flagged, otherwise.
    """
    if delta > 0.0:
        raise ValueError("delta must be <= 0")
    if n_paths < 100:
        raise ValueError("need at least 100 paths")
    if x <= 0.0:
        raise ValueError("x must be positive")
    qs = tuple(float(q) for q in quantile_points)
    if not qs or any(q <= 0.0 for q in qs) or sorted(qs) != list(qs):
        raise ValueError("quantile points must be positive and sorted")
    if qs[-1] >= cfg.cap:
        raise ValueError("quantile points must lie below the censoring cap")
    law = hitting_law(delta)
    rows = _parallel_map(
        _law_sample,
        [(seed_base, i, delta, x, cfg) for i in range(n_paths)],
        threads,
    )
    point = np.array([r[0] for r in rows])
    t_lo = np.array([r[1] for r in rows])
    t_hi = np.array([r[2] for r in rows])
    censored = int(sum(r[3] for r in rows))
    retries = int(sum(r[4] for r in rows))
    if censored and float(np.min(t_lo[np.isnan(point)])) <= qs[-1]:
        raise RuntimeError("insufficient uncensored samples below the points")
    x2 = x * x
    emp, exp_, strad, checks = [], [], [], []
    for q in qs:
        e = float(np.mean(point <= q))
        f = inverse_gamma_cdf(law, q / x2)
        sl = SCHEME_ENVELOPE * max(1.0, q)
        st = float(np.mean((t_lo - sl <= q) & (q <= t_hi + sl)))
        se = math.sqrt(f * (1.0 - f) / n_paths)
        bound = 3.0 * se + st
        emp.append(e)
        exp_.append(f)
        strad.append(st)
        checks.append(CheckResult(
            name=f"cdf@{q:g}", passed=abs(e - f) <= bound,
            observed=abs(e - f), bound=bound,
        ))
    if law.alpha > 1.0:
        regime = "finite"
        mean_exact = x2 * law.beta / (law.alpha - 1.0)
        if censored == 0:
            m = float(np.mean(point))
            se = float(np.std(point, ddof=1)) / math.sqrt(n_paths)
            checks.append(CheckResult(
                name="mean", passed=abs(m - mean_exact) <= 3.0 * se,
                observed=abs(m - mean_exact), bound=3.0 * se,
            ))
        else:
            m = math.nan
            checks.append(CheckResult(
                name="mean", passed=True, observed=math.nan, bound=math.nan,
                detail=f"skipped: {censored} censored samples",
            ))
    else:
        regime = "infinite"
        mean_exact = math.inf
        m = float(np.mean(point)) if censored == 0 else math.nan
        checks.append(CheckResult(
            name="mean", passed=True, observed=math.nan, bound=math.nan,
            detail="skipped: infinite-mean regime, no bound to test",
        ))
    return LawReport(
        delta=delta, x=x, n_paths=n_paths, quantile_points=qs,
        empirical=tuple(emp), expected=tuple(exp_), straddle=tuple(strad),
        sample_mean=m, mean_exact=mean_exact, mean_regime=regime,
        censored=censored, floor_retries=retries, checks=tuple(checks),
        samples=tuple((r[0], r[1], r[2], bool(r[3])) for r in rows),
    )


def compute_field(
    path: BrownianPath,
    x_grid,
    delta_grid,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> HittingTimeField:
    """Coupled hitting times for every (x, delta) cell on one path,
    with the monotonicity and sandwich audits applied on the fly."""
    xs = tuple(float(v) for v in x_grid)
    deltas = tuple(float(d) for d in delta_grid)
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise ValueError("x grid must be strictly increasing")
    if any(b <= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("delta grid must be strictly increasing")
    if xs and xs[0] <= 0.0:
        raise ValueError("x grid must be positive")
    if deltas and deltas[-1] > 0.0:
        raise ValueError("delta grid must be <= 0")
    rows = []
    retries = 0
    censored = 0
    sandwich_viol = 0
    for d in deltas:
        params = FlowParams.bessel(d)
        row = []
        for xv in xs:
            hit, retried = _hit_retry(path, params, 0.0, xv, cfg)
            retries += int(retried)
            censored += int(hit.censored)
            if not hit.censored:
                lo, hi = sandwich_bounds(hit, params)
                sl = 0.5 * hit.width + SCHEME_ENVELOPE * max(1.0, hit.point)
                if not (lo - sl <= hit.point - hit.s <= hi + sl):
                    sandwich_viol += 1
            row.append(hit)
        rows.append(tuple(row))
    times = tuple(rows)

    def slack(h: HittingTime) -> float:
        return 0.5 * h.width + SCHEME_ENVELOPE * max(1.0, h.point)

    x_viol = x_ties = d_viol = 0
    max_dx = max_dd = 0.0
    for i in range(len(deltas)):
        for j in range(len(xs) - 1):
            a, b = times[i][j], times[i][j + 1]
            if a.censored or b.censored:
                continue
            gap = b.point - a.point
            max_dx = max(max_dx, abs(gap))
            if gap <= 0.0:
                if -gap > slack(a) + slack(b):
                    x_viol += 1
                else:
                    x_ties += 1
    for i in range(len(deltas) - 1):
        for j in range(len(xs)):
            a, b = times[i][j], times[i + 1][j]
            if a.censored or b.censored:
                continue
            gap = b.point - a.point
            max_dd = max(max_dd, abs(gap))
            if gap < -(slack(a) + slack(b)):
                d_viol += 1
    return HittingTimeField(
        seed=path.seed, xs=xs, deltas=deltas, times=times, cfg=cfg,
        x_violations=x_viol, x_ties=x_ties, delta_violations=d_viol,
        sandwich_violations=sandwich_viol, censored=censored,
        floor_retries=retries, max_x_increment=max_dx,
        max_delta_increment=max_dd,
    )


def _refined(span: tuple[float, float], base: int, level: int) -> np.ndarray:
    n = (base - 1) * (1 << level) + 1
    return np.linspace(span[0], span[1], n)


def field_refinement_diagnostic(
    seed: PathSeed,
    x_span: tuple[float, float] = (0.4, 2.0),
    delta_span: tuple[float, float] = (-2.5, -0.25),
    base_shape: tuple[int, int] = (4, 4),
    levels: int = 3,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> RefinementDiagnostic:
    """Max adjacent-cell hitting-time increment under factor-2 grid
    refinement on a fixed seed; a decreasing sequence is the agreed
    stand-in for joint continuity, and is labeled as such."""
    shapes, incs = [], []
    for lev in range(levels):
        xs = _refined(x_span, base_shape[0], lev)
        ds = _refined(delta_span, base_shape[1], lev)
        field = compute_field(create_path(seed, 1.0), xs, ds, cfg)
        shapes.append((len(ds), len(xs)))
        incs.append(max(field.max_x_increment, field.max_delta_increment))
    dec = all(b < a for a, b in zip(incs, incs[1:]))
    return RefinementDiagnostic(
        label=CONTINUITY_LABEL, shapes=tuple(shapes),
        max_increments=tuple(incs), decreasing=dec,
    )


def weld_refinement_diagnostic(
    seed: PathSeed,
    kappa_span: tuple[float, float] = (0.0, 4.0),
    x_span: tuple[float, float] = (0.0, 1.6),
    base_shape: tuple[int, int] = (3, 5),
    levels: int = 3,
    tol: float = 1e-7,
    cfg: SolverConfig = DEFAULT_SOLVER,
    threads: int = 1,
) -> RefinementDiagnostic:
    """Welding-table counterpart of field_refinement_diagnostic: max
    adjacent increment of psi along both grid axes per refinement."""
    from .welding import weld_field

    shapes, incs = [], []
    for lev in range(levels):
        ks = _refined(kappa_span, base_shape[0], lev)
        xs = _refined(x_span, base_shape[1], lev)
        tab = weld_field(create_path(seed, 1.0), ks, xs, tol, cfg, threads)
        shapes.append((len(ks), len(xs)))
        m = float(np.max(np.abs(np.diff(tab.psi, axis=1))))
        if len(ks) > 1:
            m = max(m, float(np.max(np.abs(np.diff(tab.psi, axis=0)))))
        incs.append(m)
    dec = all(b < a for a, b in zip(incs, incs[1:]))
    return RefinementDiagnostic(
        label=CONTINUITY_LABEL, shapes=tuple(shapes),
        max_increments=tuple(incs), decreasing=dec,
    )


def walk_sum_statistic(n: int, replicates: int, stream: KeyedStream) -> np.ndarray:
    """S_n / (n log n) per replicate for S_n a sum of n independent
    InverseGamma(1, 1/2) draws."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    law = hitting_law(0.0)
    norm = n * math.log(n)
    out = np.empty(replicates)
    for r in range(replicates):
        out[r] = float(np.sum(inverse_gamma_sample(law, stream, n))) / norm
    return out


def bessel_walk(
    path: BrownianPath,
    x: float,
    k: int,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> WalkRun:
    """Iterated hitting times s_{j+1} = T(s_j, 2x) of the kappa=4 flow
    on one path, restarted exactly at each certified anchor node.

    The anchor sits within bracket width + detection epsilon of the true
    hit, so increments carry an O(eps^2) bias, far below their x^2 scale.
    """
    if x <= 0.0:
        raise ValueError("x must be positive")
    if k < 1:
        raise ValueError("k must be at least 1")
    params = FlowParams.loewner(4.0)
    s = 0.0
    times = [0.0]
    retries = 0
    for _ in range(k):
        hit, retried = _hit_retry(path, params, s, 2.0 * x, cfg)
        retries += int(retried)
        if hit.censored:
            raise RuntimeError(f"walk censored at step {len(times)}")
        if hit.node_time >= cfg.cap:
            raise RuntimeError("walk exceeded the horizon-chaining budget")
        s = hit.node_time
        times.append(s)
    arr = np.array(times)
    return WalkRun(
        x=x, k=k, times=arr, increments=np.diff(arr), floor_retries=retries,
    )


def event_a_probability(
    x: float,
    k: int,
    lam: float,
    replicates: int,
    stream: KeyedStream,
) -> EventProbResult:
    """Empirical frequency that the largest of k independent
    x^2 * InverseGamma(1, 1/2) increments exceeds lam, against the
    closed form 1 - exp(-k x^2 / (2 lam))."""
    if min(x, lam) <= 0.0 or k < 1 or replicates < 1:
        raise ValueError("parameters must be positive")
    law = hitting_law(0.0)
    exact = 1.0 - math.exp(-k * x * x / (2.0 * lam))
    hits = 0
    done = 0
    block = max(1, int(2e6) // k)
    while done < replicates:
        m = min(block, replicates - done)
        draws = x * x * inverse_gamma_sample(law, stream, m * k)
        hits += int(np.sum(draws.reshape(m, k).max(axis=1) > lam))
        done += m
    emp = hits / replicates
    se = math.sqrt(max(exact * (1.0 - exact), 1e-300) / replicates)
    return EventProbResult(
        x=x, k=k, lam=lam, replicates=replicates, empirical=emp,
        exact=exact, se=se, passed=abs(emp - exact) <= 3.0 * se,
    )


def _sup_abs_driver(path: BrownianPath, t_end: float, level: int) -> float:
    """sup |B| over [path start, t_end] across chained segments at
    stored resolution (a lower bound of the true sup)."""
    seg = path
    lo = hi = 0.0
    while True:
        seg_end = seg.t0 + seg.horizon
        a, b = seg.oscillation(seg.t0, min(seg_end, t_end), level)
        lo = min(lo, a)
        hi = max(hi, b)
        if t_end <= seg_end:
            break
        seg = seg.continuation()
    return max(abs(lo), abs(hi))


def _kappa_sup_sample(args):
    seed_base, i, kappa, x, level, cfg = args
    path = create_path(PathSeed(seed_base, i), horizon=1.0)
    hit, _ = _hit_retry(path, FlowParams.loewner(kappa), 0.0, x, cfg)
    if hit.censored:
        return math.nan, math.nan
    sup = _sup_abs_driver(path, hit.t_hi, level)
    return math.sqrt(kappa) * sup, hit.point


def kappa_sup_vanishes(
    x: float,
    kappa_sequence,
    n_paths: int,
    seed_base: int = 91001,
    level: int = 12,
    threads: int = 1,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> KappaSupReport:
    """Median of sqrt(kappa) * sup_{t <= T_kappa(x)} |B_t| along a
    kappa sequence decreasing toward 0, on coupled path sets.

    The sup is taken at stored resolution (a lower bound); the asserted
    trend is the strict decrease of the medians.  kappa = 0 entries are
    exact zeros with T = x^2/4.
    """
    kappas = tuple(float(kk) for kk in kappa_sequence)
    if not kappas or any(b >= a for a, b in zip(kappas, kappas[1:])):
        raise ValueError("kappa sequence must be strictly decreasing")
    if kappas[0] > 4.0 or kappas[-1] < 0.0:
        raise ValueError("kappa values must lie in [0, 4]")
    if x <= 0.0 or n_paths < 1:
        raise ValueError("x and n_paths must be positive")
    sup_meds, t_meds = [], []
    for kappa in kappas:
        if kappa == 0.0:
            sup_meds.append(0.0)
            t_meds.append(0.25 * x * x)
            continue
        rows = _parallel_map(
            _kappa_sup_sample,
            [(seed_base, i, kappa, x, level, cfg) for i in range(n_paths)],
            threads,
        )
        stats = np.array([r[0] for r in rows])
        ts = np.array([r[1] for r in rows])
        sup_meds.append(float(np.nanmedian(stats)))
        t_meds.append(float(np.nanmedian(ts)))
    dec = all(b < a for a, b in zip(sup_meds, sup_meds[1:]))
    return KappaSupReport(
        x=x, kappas=kappas, sup_medians=tuple(sup_meds),
        t_medians=tuple(t_meds), decreasing=dec,
        label="sup at stored resolution (lower bound)",
    )
