"""Zero-hitting flows dX = sigma dB + (a / X) dt on a keyed Brownian path.

Two normalizations of the same flow are supported:

* Bessel: dZ = dB + ((delta - 1)/2) (1/Z) dt, so a = (delta - 1)/2 and
  sigma = 1.  The zero-hitting time from x = 1 has the exact
  inverse-gamma(1 - delta/2, 1/2) law for delta < 2.
* Loewner: dh = sqrt(kappa) dB - (2/h) dt, so a = -2 and
  sigma = sqrt(kappa).  This is the boundary restriction of the reverse
  Loewner flow; h(s, t, sqrt(kappa) x) = sqrt(kappa) Z(s, t, x) with
  delta = 1 - 4/kappa.

The integrator advances on the dyadic grid of the path with the
adaptive step dt = min(dt_max, c X^2 / eta), eta = max(|a|, sigma^2, 1),
so one step moves the state by a few percent at most.  Each step applies
the diffusion increment and then the exact drift map
X -> sqrt(X^2 + 2 a dt); the drift part of the dynamics is integrated
without error, which keeps the kappa -> 0 limit exact and makes the
discrete flow monotone in both the start value and the drift.

Hit detection is certified.  At the last state (tc, Zc > 0) before
absorption is declared, the split-step recursion obeys the two-sided
comparison

    (Zc + sigma w-)^2 / (2|a|)  <=  residual time  <=
    (Zc + sigma w+)^2 / (2|a|),

where w+/w- are the running max/min of the signed driver increment over
the residual window (lower base clamped at zero).  The extremes are read
from the stored dyadic skeleton of the path, so the bracket is exact for
the discrete flow at any refinement of the visited grid;
ResolutionFloorError reports the cases where the requested tolerance
would need levels beyond the path's maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from besselweld.rng_bridge import BrownianPath, NonDyadicTimeError

__all__ = [
    "FlowParams",
    "SolverConfig",
    "Trajectory",
    "HittingTime",
    "ComparisonReport",
    "ResolutionFloorError",
    "delta_from_kappa",
    "kappa_from_delta",
    "integrate",
    "hitting_time",
    "restart_value",
    "comparison_check",
    "sandwich_bounds",
]

_T_EPS = 1e-12


class ResolutionFloorError(RuntimeError):
    """Bracket tolerance unreachable at the path's maximum refinement level."""


def delta_from_kappa(kappa: float) -> float:
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    return 1.0 - 4.0 / kappa


def kappa_from_delta(delta: float) -> float:
    if delta >= 1.0:
        raise ValueError("delta must be below 1")
    return 4.0 / (1.0 - delta)


@dataclass(frozen=True)
class FlowParams:
    """Flow normalization; stores both parameters so conversion is exact."""

    kind: str
    delta: float
    kappa: float

    @classmethod
    def bessel(cls, delta: float) -> "FlowParams":
        if not (math.isfinite(delta) and delta <= 0.0):
            raise ValueError("bessel flow requires delta <= 0")
        return cls("bessel", delta, kappa_from_delta(delta))

    @classmethod
    def loewner(cls, kappa: float) -> "FlowParams":
        if not (math.isfinite(kappa) and 0.0 <= kappa <= 4.0):
            raise ValueError("loewner flow requires kappa in [0, 4]")
        delta = -math.inf if kappa == 0.0 else delta_from_kappa(kappa)
        return cls("loewner", delta, kappa)

    def __post_init__(self) -> None:
        if self.kind not in ("bessel", "loewner"):
            raise ValueError("kind must be 'bessel' or 'loewner'")

    @property
    def drift(self) -> float:
        if self.kind == "bessel":
            return 0.5 * (self.delta - 1.0)
        return -2.0

    @property
    def sigma(self) -> float:
        if self.kind == "bessel":
            return 1.0
        return math.sqrt(self.kappa)

    def to_bessel(self) -> "FlowParams":
        if self.kind == "bessel":
            return self
        if self.kappa == 0.0:
            raise ValueError("kappa = 0 has no Bessel normalization")
        return FlowParams("bessel", self.delta, self.kappa)

    def to_loewner(self) -> "FlowParams":
        if self.kind == "loewner":
            return self
        return FlowParams("loewner", self.delta, self.kappa)


@dataclass(frozen=True)
class SolverConfig:
    """Step-size, absorption, and bracketing controls."""

    c: float = 0.01
    dt_max: float = 1.0 / 256.0
    eps_hit_scale: float = 1e-6
    bracket_tol_scale: float = 1e-8
    cap: float = 1e4
    max_refine_rounds: int = 8

    def __post_init__(self) -> None:
        if not (0.0 < self.c <= 0.25):
            raise ValueError("c must lie in (0, 0.25]")
        if not (self.dt_max > 0.0):
            raise ValueError("dt_max must be positive")
        if not (0.0 < self.eps_hit_scale < 1.0):
            raise ValueError("eps_hit_scale must lie in (0, 1)")
        if not (self.bracket_tol_scale > 0.0):
            raise ValueError("bracket_tol_scale must be positive")
        if not (self.cap > 0.0):
            raise ValueError("cap must be positive")

    def eps_hit(self, x: float) -> float:
        return self.eps_hit_scale * max(abs(x), 1.0)

    def bracket_tol(self, t: float) -> float:
        return self.bracket_tol_scale * max(1.0, t)


DEFAULT_SOLVER = SolverConfig()


def loosened(cfg: SolverConfig, scale: float = 1e-6) -> SolverConfig:
    """Copy of cfg with the bracket tolerance relaxed to `scale`.

    Standard retry policy after ResolutionFloorError: a small fraction
    of paths near-miss zero at the dyadic resolution floor and cannot
    support a 1e-8-relative certificate; the relaxed certificate is
    still exact, just wider, and the achieved width travels with the
    HittingTime record.
    """
    return SolverConfig(
        c=cfg.c, dt_max=cfg.dt_max, eps_hit_scale=cfg.eps_hit_scale,
        bracket_tol_scale=max(cfg.bracket_tol_scale, scale),
        cap=cfg.cap, max_refine_rounds=cfg.max_refine_rounds,
    )


@dataclass(frozen=True)
class HittingTime:
    """Certified zero-hitting record.

    The point estimate is the bracket midpoint.  node_time is the dyadic
    node at which absorption was detected; walk constructions restart
    exactly there.  driver_low/driver_high are the running extremes of
    the signed driver increment over all nodes the integrator visited,
    which cover the hitting window, so comparison-bound checks may use
    them directly.
    """

    t_lo: float
    t_hi: float
    point: float
    censored: bool
    s: float
    x: float
    node_time: float
    eps_used: float
    n_steps: int
    driver_low: float
    driver_high: float

    @property
    def width(self) -> float:
        return self.t_hi - self.t_lo


@dataclass
class Trajectory:
    """Flow sample path on the integrator's own adaptive grid."""

    params: FlowParams
    s: float
    x: float
    t_end: float
    status: str  # "alive" | "absorbed"
    times: np.ndarray
    values: np.ndarray
    hit: Optional[HittingTime]
    driver_low: float
    driver_high: float
    path: BrownianPath = field(repr=False)
    cfg: SolverConfig = field(repr=False, default=DEFAULT_SOLVER)

    def value_before(self, u: float) -> tuple[float, float]:
        """Latest recorded sample (time, value) at or before u."""
        if u < self.times[0] - _T_EPS * max(1.0, abs(u)):
            raise ValueError("u precedes the trajectory start")
        i = int(np.searchsorted(self.times, u * (1.0 + 1e-14) + 1e-300, side="right")) - 1
        i = max(i, 0)
        return float(self.times[i]), float(self.values[i])


@dataclass(frozen=True)
class ComparisonReport:
    """Result of a coupled two-flow order check."""

    n_samples: int
    violations: int
    first_violation: Optional[float]
    max_deficit: float
    lower_absorbed_at: Optional[float]


class _Driver:
    """Signed view of a chained sequence of path windows."""

    __slots__ = ("segs", "sign")

    def __init__(self, path: BrownianPath, sign: float = 1.0) -> None:
        self.segs = [path]
        self.sign = sign

    def segment(self, i: int) -> BrownianPath:
        while len(self.segs) <= i:
            self.segs.append(self.segs[-1].continuation())
        return self.segs[i]

    def segment_index_for(self, t: float) -> int:
        i = 0
        while True:
            seg = self.segment(i)
            end = seg.t0 + seg.horizon
            if t <= end + _T_EPS * max(1.0, abs(t)):
                return i
            i += 1

    def position(self, t: float) -> tuple[int, int, int]:
        """(segment, level, index) of a dyadic time t."""
        si = self.segment_index_for(t)
        seg = self.segment(si)
        rel = (t - seg.t0) / seg.horizon
        for level in range(seg.max_level + 1):
            x = rel * (1 << level)
            j = round(x)
            if abs(x - j) <= 1e-9:
                return si, level, j
        raise NonDyadicTimeError(f"time {t} is not dyadic within segment {si}")

    def window_extrema(self, si: int, lo: float, hi: float, level: int) -> tuple[float, float]:
        """Raw (unsigned) min/max over [lo, hi] at stored resolution,
        chaining across segment boundaries."""
        vmin = math.inf
        vmax = -math.inf
        i = si
        while True:
            seg = self.segment(i)
            a = max(lo, seg.t0)
            b = min(hi, seg.t0 + seg.horizon)
            if b >= a - _T_EPS * max(1.0, abs(b)):
                w_lo, w_hi = seg.oscillation(a, b, min(level, seg.max_level))
                vmin = min(vmin, w_lo)
                vmax = max(vmax, w_hi)
            if seg.t0 + seg.horizon >= hi - _T_EPS * max(1.0, abs(hi)):
                break
            i += 1
        return vmin, vmax


class _Stepper:
    """Forward stepping state of one flow integration.

    On absorption the public state rewinds to the last strictly positive
    anchor (refinement passes re-run the detection step at finer
    settings), while hit_node keeps the dyadic node where absorption was
    declared.
    """

    __slots__ = (
        "driver", "a", "sigma", "eta", "si", "level", "j", "t", "braw",
        "z", "bmin", "bmax", "b_start", "steps", "hit_node", "hit_diffusion",
    )

    def __init__(self, driver: _Driver, a: float, sigma: float, s: float, x_abs: float):
        self.driver = driver
        self.a = a
        self.sigma = sigma
        self.eta = max(abs(a), sigma * sigma, 1.0)
        self.si, self.level, self.j = driver.position(s)
        self.t = s
        self.braw = driver.segment(self.si).value_at_node(self.level, self.j)
        self.b_start = self.braw
        self.bmin = self.braw
        self.bmax = self.braw
        self.z = x_abs
        self.steps = 0
        self.hit_node = math.nan
        self.hit_diffusion = False

    def signed_extremes(self) -> tuple[float, float]:
        if self.driver.sign >= 0:
            return self.bmin - self.b_start, self.bmax - self.b_start
        return self.b_start - self.bmax, self.b_start - self.bmin

    def dt_floor(self) -> float:
        seg = self.driver.segment(self.si)
        return seg.horizon * 2.0 ** (-seg.max_level)

    def advance(
        self,
        t_end: float,
        eps: float,
        c: float,
        dt_cap: float,
        record: Optional[list] = None,
        soft_end: bool = False,
    ) -> bool:
        """Step until absorption or t_end; True if absorbed.

        Absorption is declared when the post-diffusion value drops to or
        below zero, or the post-drift square drops to or below eps^2.
        With soft_end the walk stops at the last grid node not past
        t_end instead of requiring t_end to be reachable on the grid.
        """
        driver = self.driver
        sign = driver.sign
        a2 = 2.0 * self.a
        sigma = self.sigma
        eta = self.eta
        eps2 = eps * eps
        si, level, j, t, braw, z = self.si, self.level, self.j, self.t, self.braw, self.z
        bmin, bmax = self.bmin, self.bmax
        seg = driver.segment(si)
        t_tol = _T_EPS * max(1.0, abs(t_end))
        while t < t_end - t_tol:
            if j == (1 << level) and abs(t - (seg.t0 + seg.horizon)) <= _T_EPS * max(1.0, abs(t)):
                si += 1
                seg = driver.segment(si)
                level = 0
                j = 0
            dt = c * z * z / eta
            if dt > dt_cap:
                dt = dt_cap
            H = seg.horizon
            max_level = seg.max_level
            if dt >= H:
                ldes = 0
            else:
                ldes = int(math.ceil(math.log2(H / dt)))
                if ldes > max_level:
                    ldes = max_level
            if ldes > level:
                j <<= ldes - level
                level = ldes
            elif ldes < level:
                if j == 0:
                    level = ldes
                else:
                    back = level - ldes
                    tz = (j & -j).bit_length() - 1
                    if back > tz:
                        back = tz
                    j >>= back
                    level -= back
            nt = seg.t0 + ((j + 1) * H) / (1 << level)
            stuck = False
            while nt > t_end + t_tol:
                if level >= max_level:
                    if soft_end:
                        stuck = True
                        break
                    raise NonDyadicTimeError(
                        f"end time {t_end} is not reachable on the level-{max_level} grid"
                    )
                level += 1
                j <<= 1
                nt = seg.t0 + ((j + 1) * H) / (1 << level)
            if stuck:
                break
            b2 = seg.value_at_node(level, j + 1)
            dta = nt - t
            zt = z + sigma * sign * (b2 - braw)
            inner = zt * zt + a2 * dta
            if b2 < bmin:
                bmin = b2
            if b2 > bmax:
                bmax = b2
            self.steps += 1
            if zt <= 0.0 or inner <= eps2:
                # keep a positive anchor: advance onto the node only if
                # the state survived the step above zero
                if zt > 0.0 and inner > 0.0:
                    t, braw, z = nt, b2, math.sqrt(inner)
                    j += 1
                if record is not None:
                    record.append((nt, 0.0))
                self.si, self.level, self.j, self.t, self.braw = si, level, j, t, braw
                self.z = z
                self.bmin, self.bmax = bmin, bmax
                self.hit_node = nt
                # the diffusion increment alone reached zero, so the flow
                # is dead by this node pathwise (the drift only pushes down)
                self.hit_diffusion = zt <= 0.0
                return True
            j += 1
            t = nt
            braw = b2
            z = math.sqrt(inner)
            if record is not None:
                record.append((t, z))
        self.si, self.level, self.j, self.t, self.braw = si, level, j, t, braw
        self.z = z
        self.bmin, self.bmax = bmin, bmax
        return False


def _certify(stepper: _Stepper, t_hi_known: float = math.inf) -> tuple[float, float]:
    """Residual-time bracket (r_lo, r_hi) at the stepper's current
    positive anchor, from driver extremes at stored resolution.

    The probe window grows geometrically until it provably contains the
    upper bound, so the returned r_hi is a fixed point of the bound.  A
    known upper edge (a node the diffusion increment alone had reached
    zero by) caps the probe window and the reported r_hi."""
    a_abs = abs(stepper.a)
    sigma = stepper.sigma
    driver = stepper.driver
    sign = driver.sign
    tc = stepper.t
    zp = max(stepper.z, 0.0)
    dt_floor = stepper.dt_floor()
    r_cap = max(t_hi_known - tc, 0.0)
    r_probe = max(zp * zp / (2.0 * a_abs), dt_floor)
    r_probe = min(r_probe, r_cap) if r_cap > 0.0 else r_probe
    b_tc = stepper.braw
    si = stepper.si
    seg = driver.segment(si)
    r_hi = r_probe
    w_minus = 0.0
    for _ in range(200):
        want = r_probe / 8.0
        if want > dt_floor:
            lev = max(0, int(math.ceil(math.log2(seg.horizon / want))))
        else:
            lev = seg.max_level
        vmin, vmax = driver.window_extrema(si, tc, tc + r_probe, min(lev, seg.max_level))
        if sign >= 0:
            w_plus = max(0.0, vmax - b_tc)
            w_minus = min(0.0, vmin - b_tc)
        else:
            w_plus = max(0.0, b_tc - vmin)
            w_minus = min(0.0, b_tc - vmax)
        r_hi = (zp + sigma * w_plus) ** 2 / (2.0 * a_abs)
        if r_hi <= r_probe or r_probe >= r_cap:
            break
        r_probe = min(2.0 * r_hi, r_cap)
    base = zp + sigma * w_minus
    r_lo = base * base / (2.0 * a_abs) if base > 0.0 else 0.0
    r_hi = min(r_hi, r_cap)
    r_lo = min(r_lo, r_hi)
    return r_lo, r_hi


def _window_level(seg: BrownianPath, want: float) -> int:
    if want >= seg.horizon:
        return 0
    return min(seg.max_level, max(0, int(math.ceil(math.log2(seg.horizon / want)))))


def _scan_dead_time(stepper: _Stepper, r_max: float) -> float:
    """Earliest time u <= tc + r_max by which a stored driver value
    certifies the flow dead (signed increment <= -z/sigma, so
    z_u <= z + sigma*increment <= 0 pathwise); inf when none exists."""
    sigma = stepper.sigma
    thr = -max(stepper.z, 0.0) / sigma
    driver = stepper.driver
    sign = driver.sign
    tc = stepper.t
    b_tc = stepper.braw
    si = stepper.si
    dt_floor = stepper.dt_floor()
    seg = driver.segment(si)

    def smin(r: float) -> float:
        lev = _window_level(seg, max(r / 64.0, dt_floor))
        vmin, vmax = driver.window_extrema(si, tc, tc + r, lev)
        return (vmin - b_tc) if sign >= 0 else (b_tc - vmax)

    if r_max <= 0.0 or smin(r_max) > thr:
        return math.inf
    lo, hi = 0.0, r_max
    while hi - lo > 2.0 * dt_floor:
        mid = 0.5 * (lo + hi)
        if smin(mid) <= thr:
            hi = mid
        else:
            lo = mid
    return tc + hi


def _best_lower(stepper: _Stepper, r_max: float) -> float:
    """Largest certified lower bound on the residual time.

    For every probe window r the residual obeys
    residual >= min(r, phi(r)) with phi(r) = ((z + sigma w-(r))+)^2/(2|a|)
    and w-(r) the running window minimum, so the optimum sits at the
    crossing phi(r) = r, found by bisection."""
    a_abs = abs(stepper.a)
    sigma = stepper.sigma
    driver = stepper.driver
    sign = driver.sign
    tc = stepper.t
    zp = max(stepper.z, 0.0)
    b_tc = stepper.braw
    si = stepper.si
    dt_floor = stepper.dt_floor()
    seg = driver.segment(si)

    def phi(r: float) -> float:
        lev = _window_level(seg, max(r / 64.0, dt_floor))
        vmin, vmax = driver.window_extrema(si, tc, tc + r, lev)
        w = (vmin - b_tc) if sign >= 0 else (b_tc - vmax)
        base = zp + sigma * min(w, 0.0)
        return base * base / (2.0 * a_abs) if base > 0.0 else 0.0

    if r_max <= 0.0:
        return 0.0
    if phi(r_max) >= r_max:
        return r_max
    lo, hi = 0.0, r_max
    for _ in range(60):
        if hi - lo <= 0.25 * dt_floor:
            break
        mid = 0.5 * (lo + hi)
        if phi(mid) >= mid:
            lo = mid
        else:
            hi = mid
    return max(lo, phi(hi))


def _bracket_state(
    stepper: _Stepper, dead_node: float, tol: float
) -> tuple[float, float, float, float]:
    """One bracket evaluation at the current anchor: comparison bounds,
    then (only when still wide) the dead-node scan and the optimized
    lower bound."""
    r_lo, r_hi = _certify(stepper, dead_node)
    tc = stepper.t
    t_lo = tc + r_lo
    t_hi = min(dead_node, tc + r_hi)
    if t_hi - t_lo > tol:
        scan = _scan_dead_time(stepper, (t_hi - tc) + 2.0 * stepper.dt_floor())
        dead_node = min(dead_node, scan)
        t_hi = min(t_hi, dead_node)
    if t_hi - t_lo > tol:
        t_lo = max(t_lo, tc + _best_lower(stepper, max(t_hi - tc, 0.0)))
    t_lo = min(t_lo, t_hi)
    return dead_node, t_lo, t_hi, r_hi


def _absorbed_hit(stepper: _Stepper, s: float, x: float, cfg: SolverConfig) -> HittingTime:
    """Bracket the hit from the current anchor, re-walking the tail at
    tighter thresholds and finer steps until the tolerance holds.

    A diffusion-dead node stays a valid upper edge through every
    subsequent re-walk: node values are immutable and the dominance
    z_k <= z_anchor + sigma*W_k chains across advancing anchors.
    """
    eps = cfg.eps_hit(x)
    dead_node = stepper.hit_node if stepper.hit_diffusion else math.inf
    node = stepper.hit_node
    tol = cfg.bracket_tol(stepper.t)
    dead_node, t_lo, t_hi, r_hi = _bracket_state(stepper, dead_node, tol)
    rounds = 0
    # A bracket can never be certified finer than one floor cell: below
    # that no stored node constrains the driver, so sub-cell certificates
    # would be vacuous on depth-capped paths.
    while (
        max(t_hi - t_lo, stepper.dt_floor()) > cfg.bracket_tol(stepper.t)
        and rounds < cfg.max_refine_rounds
        and stepper.z > 0.0
    ):
        dt_floor = stepper.dt_floor()
        eps = min(eps * 0.25, 0.5 * stepper.z)
        dt_cap = max((t_hi - t_lo) / 8.0, dt_floor)
        absorbed = stepper.advance(
            t_end=min(t_hi, stepper.t + max(4.0 * r_hi, 4.0 * dt_floor)) + 4.0 * dt_floor,
            eps=eps, c=cfg.c, dt_cap=dt_cap, soft_end=True,
        )
        if absorbed:
            node = stepper.hit_node
            if stepper.hit_diffusion:
                dead_node = min(dead_node, stepper.hit_node)
        dead_node, t_lo, t_hi, r_hi = _bracket_state(
            stepper, dead_node, cfg.bracket_tol(stepper.t)
        )
        rounds += 1
    if max(t_hi - t_lo, stepper.dt_floor()) > cfg.bracket_tol(stepper.t):
        raise ResolutionFloorError(
            f"bracket width {max(t_hi - t_lo, stepper.dt_floor()):.3e} exceeds "
            f"tolerance {cfg.bracket_tol(stepper.t):.3e} after {rounds} refinement rounds"
        )
    lo, hi = stepper.signed_extremes()
    if not math.isfinite(node):
        node = stepper.t
    return HittingTime(
        t_lo=t_lo, t_hi=t_hi, point=0.5 * (t_lo + t_hi),
        censored=False, s=s, x=x, node_time=node, eps_used=eps,
        n_steps=stepper.steps, driver_low=lo, driver_high=hi,
    )


def _closed_form_trajectory(
    params: FlowParams,
    path: BrownianPath,
    s: float,
    x: float,
    t_end: float,
    cfg: SolverConfig,
) -> Trajectory:
    """kappa = 0: h(s, t, x) = sign(x) sqrt(x^2 - 4 (t - s)), exactly."""
    sgn = 1.0 if x >= 0.0 else -1.0
    xa = abs(x)
    t_hit = s + 0.25 * xa * xa
    absorbed = t_hit <= t_end
    stop = min(t_hit, t_end)
    n = max(2, min(1025, 1 + int(math.ceil((stop - s) / cfg.dt_max))))
    times = np.linspace(s, stop, n)
    vals = sgn * np.sqrt(np.maximum(xa * xa - 4.0 * (times - s), 0.0))
    hit = None
    status = "alive"
    if absorbed:
        status = "absorbed"
        hit = HittingTime(
            t_lo=t_hit, t_hi=t_hit, point=t_hit, censored=False, s=s, x=x,
            node_time=t_hit, eps_used=0.0, n_steps=0, driver_low=0.0, driver_high=0.0,
        )
    return Trajectory(
        params=params, s=s, x=x, t_end=t_end, status=status,
        times=times, values=vals, hit=hit, driver_low=0.0, driver_high=0.0,
        path=path, cfg=cfg,
    )


def _instant_hit(params: FlowParams, path: BrownianPath, s: float, t_end: float,
                 cfg: SolverConfig) -> Trajectory:
    hit = HittingTime(
        t_lo=s, t_hi=s, point=s, censored=False, s=s, x=0.0,
        node_time=s, eps_used=0.0, n_steps=0, driver_low=0.0, driver_high=0.0,
    )
    return Trajectory(
        params=params, s=s, x=0.0, t_end=t_end, status="absorbed",
        times=np.array([s]), values=np.array([0.0]), hit=hit,
        driver_low=0.0, driver_high=0.0, path=path, cfg=cfg,
    )


def integrate(
    path: BrownianPath,
    params: FlowParams,
    s: float,
    x: float,
    t_end: float,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> Trajectory:
    """Run the flow from (s, x) until absorption or t_end.

    s and t_end must lie on the dyadic grid of the path (or of one of
    its chained continuations).  Negative starts are integrated as the
    mirrored flow -X driven by -B, so the x -> -x antisymmetry of the
    flow holds exactly.
    """
    if t_end < s:
        raise ValueError("t_end must not precede s")
    if not math.isfinite(x):
        raise ValueError("x must be finite")
    if params.kind == "loewner" and params.kappa == 0.0:
        return _closed_form_trajectory(params, path, s, x, t_end, cfg)
    if x == 0.0:
        return _instant_hit(params, path, s, t_end, cfg)
    sgn = 1.0 if x > 0.0 else -1.0
    driver = _Driver(path, sign=sgn)
    stepper = _Stepper(driver, params.drift, params.sigma, s, abs(x))
    rec: list = [(s, abs(x))]
    absorbed = stepper.advance(
        t_end=t_end, eps=cfg.eps_hit(x), c=cfg.c, dt_cap=cfg.dt_max, record=rec,
    )
    hit = _absorbed_hit(stepper, s, x, cfg) if absorbed else None
    times = np.array([p[0] for p in rec])
    vals = sgn * np.array([p[1] for p in rec])
    lo, hi = stepper.signed_extremes()
    return Trajectory(
        params=params, s=s, x=x, t_end=t_end,
        status="absorbed" if absorbed else "alive",
        times=times, values=vals, hit=hit, driver_low=lo, driver_high=hi,
        path=path, cfg=cfg,
    )


def hitting_time(
    path: BrownianPath,
    params: FlowParams,
    s: float,
    x: float,
    cfg: SolverConfig = DEFAULT_SOLVER,
) -> HittingTime:
    """Certified zero-hitting time, chaining horizon windows as needed.

    Once the elapsed flow time passes cfg.cap without absorption the
    record is censored: t_lo is the surviving time, t_hi is inf and the
    point estimate is nan.
    """
    if params.kind == "loewner" and params.kappa == 0.0:
        t_hit = s + 0.25 * x * x
        return HittingTime(
            t_lo=t_hit, t_hi=t_hit, point=t_hit, censored=False, s=s, x=x,
            node_time=t_hit, eps_used=0.0, n_steps=0, driver_low=0.0, driver_high=0.0,
        )
    if x == 0.0:
        return HittingTime(
            t_lo=s, t_hi=s, point=s, censored=False, s=s, x=0.0,
            node_time=s, eps_used=0.0, n_steps=0, driver_low=0.0, driver_high=0.0,
        )
    sgn = 1.0 if x > 0.0 else -1.0
    driver = _Driver(path, sign=sgn)
    stepper = _Stepper(driver, params.drift, params.sigma, s, abs(x))
    eps = cfg.eps_hit(x)
    while True:
        seg = driver.segment(stepper.si)
        seg_end = seg.t0 + seg.horizon
        if stepper.t >= seg_end - _T_EPS * max(1.0, abs(seg_end)):
            seg = driver.segment(stepper.si + 1)
            seg_end = seg.t0 + seg.horizon
        absorbed = stepper.advance(
            t_end=seg_end, eps=eps, c=cfg.c, dt_cap=cfg.dt_max,
        )
        if absorbed:
            return _absorbed_hit(stepper, s, x, cfg)
        if stepper.t - s >= cfg.cap:
            lo, hi = stepper.signed_extremes()
            return HittingTime(
                t_lo=stepper.t, t_hi=math.inf, point=math.nan, censored=True,
                s=s, x=x, node_time=stepper.t, eps_used=eps,
                n_steps=stepper.steps, driver_low=lo, driver_high=hi,
            )


def restart_value(traj: Trajectory, u: float) -> tuple[float, float]:
    """(t, value) of the trajectory at the latest sample at or before u.

    The deterministic kappa = 0 flow is evaluated in closed form at u
    itself.
    """
    if traj.params.kind == "loewner" and traj.params.kappa == 0.0:
        if not (traj.s - _T_EPS <= u <= traj.t_end + _T_EPS * max(1.0, abs(u))):
            raise ValueError("u outside the trajectory window")
        xa = abs(traj.x)
        inner = xa * xa - 4.0 * (u - traj.s)
        val = math.sqrt(inner) if inner > 0.0 else 0.0
        return u, (val if traj.x >= 0.0 else -val)
    return traj.value_before(u)


def sandwich_bounds(ht: HittingTime, params: FlowParams) -> tuple[float, float]:
    """Comparison bounds on the elapsed hitting time:

        (x + sigma w-)^2 / (2|a|)  and  (x + sigma w+)^2 / (2|a|)

    with w-/w+ the driver-increment extremes carried by the record (the
    lower base clamps at zero)."""
    a_abs = abs(params.drift)
    sigma = params.sigma
    x_abs = abs(ht.x)
    lo_base = x_abs + sigma * min(ht.driver_low, 0.0)
    hi_base = x_abs + sigma * max(ht.driver_high, 0.0)
    lo = lo_base * lo_base / (2.0 * a_abs) if lo_base > 0.0 else 0.0
    hi = hi_base * hi_base / (2.0 * a_abs)
    return lo, hi


def comparison_check(
    traj_low: Trajectory,
    traj_high: Trajectory,
    slack: float = 0.0,
) -> ComparisonReport:
    """Pathwise order of two flows on the same driver.

    Requires the same path, start time, and driver scale, with
    x_low <= x_high and drift_low <= drift_high.  Both flows are re-run
    on one merged step schedule (the step adapts to the smaller state),
    so the discrete order is checked at every shared node until the
    lower flow absorbs.  The split-step map is monotone in both the
    state and the drift, so violations beyond roundoff indicate a bug.
    """
    a_lo = traj_low.params.drift
    a_hi = traj_high.params.drift
    if traj_low.path is not traj_high.path:
        raise ValueError("trajectories live on different paths")
    if traj_low.s != traj_high.s:
        raise ValueError("trajectories start at different times")
    if traj_low.params.sigma != traj_high.params.sigma:
        raise ValueError("driver scales differ; compare in one normalization")
    if traj_low.x < 0.0 or traj_high.x < 0.0:
        raise ValueError("order check requires non-negative starts")
    if not (traj_low.x <= traj_high.x and a_lo <= a_hi):
        raise ValueError("need x_low <= x_high and drift_low <= drift_high")
    cfg = traj_low.cfg
    sigma = traj_low.params.sigma
    s = traj_low.s
    t_end = min(traj_low.t_end, traj_high.t_end)
    x1 = traj_low.x
    x2 = traj_high.x
    if x1 == 0.0:
        return ComparisonReport(0, 0, None, 0.0, s)
    driver = _Driver(traj_low.path, sign=1.0)
    st = _Stepper(driver, a_lo, sigma, s, x1)
    eta = max(abs(a_lo), abs(a_hi), sigma * sigma, 1.0)
    eps = cfg.eps_hit(x1)
    eps2 = eps * eps
    z1, z2 = x1, x2
    n = 0
    violations = 0
    first_violation: Optional[float] = None
    max_deficit = 0.0
    absorbed_at: Optional[float] = None
    si, level, j, t, braw = st.si, st.level, st.j, st.t, st.braw
    seg = driver.segment(si)
    t_tol = _T_EPS * max(1.0, abs(t_end))
    a2_1 = 2.0 * a_lo
    a2_2 = 2.0 * a_hi
    while t < t_end - t_tol:
        if j == (1 << level) and abs(t - (seg.t0 + seg.horizon)) <= _T_EPS * max(1.0, abs(t)):
            si += 1
            seg = driver.segment(si)
            level = 0
            j = 0
        dt = cfg.c * min(z1 * z1, z2 * z2) / eta
        if dt > cfg.dt_max:
            dt = cfg.dt_max
        H = seg.horizon
        if dt >= H:
            ldes = 0
        else:
            ldes = min(seg.max_level, int(math.ceil(math.log2(H / dt))))
        if ldes > level:
            j <<= ldes - level
            level = ldes
        elif ldes < level:
            if j == 0:
                level = ldes
            else:
                back = min(level - ldes, (j & -j).bit_length() - 1)
                j >>= back
                level -= back
        nt = seg.t0 + ((j + 1) * H) / (1 << level)
        while nt > t_end + t_tol:
            if level >= seg.max_level:
                raise NonDyadicTimeError(f"end time {t_end} not reachable on the grid")
            level += 1
            j <<= 1
            nt = seg.t0 + ((j + 1) * H) / (1 << level)
        j += 1
        b2 = seg.value_at_node(level, j)
        dta = nt - t
        db = sigma * (b2 - braw)
        zt1 = z1 + db
        zt2 = z2 + db
        inner1 = zt1 * zt1 + a2_1 * dta
        inner2 = zt2 * zt2 + a2_2 * dta
        t = nt
        braw = b2
        if zt1 <= 0.0 or inner1 <= eps2:
            absorbed_at = t
            break
        z1 = math.sqrt(inner1)
        if zt2 <= 0.0 or inner2 <= 0.0:
            # the higher flow died while the lower one is alive
            violations += 1
            max_deficit = max(max_deficit, z1)
            if first_violation is None:
                first_violation = t
            break
        z2 = math.sqrt(inner2)
        n += 1
        if z1 > z2 + slack:
            violations += 1
            max_deficit = max(max_deficit, z1 - z2)
            if first_violation is None:
                first_violation = t
    return ComparisonReport(n, violations, first_violation, max_deficit, absorbed_at)
