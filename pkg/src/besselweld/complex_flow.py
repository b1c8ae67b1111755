"""Reverse Loewner flow from complex starting points.

Integrates dh = dU - 2/h dt for h in the upper half plane, driven by
U_t = sqrt(kappa) B_t over one stored Brownian path, on the horizon-1
normalization.  The imaginary part is non-decreasing by construction,
so the flow never leaves the half plane.  kappa = 0 uses the exact
closed form h = sqrt(z^2 - 4 (t-s)).

Certifiable step bounds used by the checkers:
  - |Re h_n| <= 2 max_k |U_k - U_s| holds exactly for the Euler
    recursion (Abel summation over the contraction factors).
  - (Im h_n)^2 <= y^2 + 4 (1+c) (t_n - s) follows from the adaptive
    rule dt <= c |h| Im h, which keeps dt / |h|^2 <= c.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .bessel_flow import ResolutionFloorError
from .rng_bridge import BrownianPath, NonDyadicTimeError

_T_EPS = 1e-12


def _sqrt_upper(w: complex) -> complex:
    """Square root branch landing in the closed upper half plane."""
    r = cmath.sqrt(w)
    return -r if r.imag < 0.0 else r


@dataclass(frozen=True)
class ComplexState:
    """Point of the upper half plane reached by the flow."""

    re: float
    im: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.re) and math.isfinite(self.im)):
            raise ValueError("state must be finite")
        if self.im <= 0.0:
            raise ValueError("state must lie in the open upper half plane")

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)


@dataclass(frozen=True)
class ComplexFlowConfig:
    """Adaptive Euler controls: dt = min(dt_max, c * |h| * Im h)."""

    c: float = 0.01
    dt_max: float = 1.0 / 256

    def __post_init__(self) -> None:
        if not (0.0 < self.c <= 0.5):
            raise ValueError("c must lie in (0, 0.5]")
        if self.dt_max <= 0.0:
            raise ValueError("dt_max must be positive")


DEFAULT_CFLOW = ComplexFlowConfig()


@dataclass(frozen=True)
class UpBoundReport:
    """Per-step audit of the real and imaginary growth bounds."""

    n_steps: int
    violations: int
    first_violation: float | None
    max_re_excess: float
    max_im_excess: float


@dataclass(frozen=True)
class DominationReport:
    """Per-step audit of Re h(z) >= h(x) for z = x + iy on one path."""

    n_samples: int
    violations: int
    first_violation: float | None
    max_deficit: float
    real_absorbed_at: float | None


@dataclass(frozen=True)
class TraceResult:
    """Probe-limit approximation of one trace point."""

    value: complex
    y_used: float
    increments: tuple[float, ...]
    converged: bool


def _validate(path: BrownianPath, kappa: float, s: float, t: float) -> None:
    if not (0.0 <= kappa <= 4.0):
        raise ValueError("kappa must lie in [0, 4]")
    if not (0.0 <= s <= t <= 1.0):
        raise ValueError("need 0 <= s <= t <= 1")
    if path.horizon < 1.0:
        raise ValueError("path horizon must cover [0, 1]")


def _as_state(z: ComplexState | complex) -> ComplexState:
    if isinstance(z, ComplexState):
        return z
    return ComplexState(z.real, z.imag)


def _snap(path: BrownianPath, t: float) -> float:
    """Nearest time on the finest stored grid."""
    h = path.horizon * 2.0 ** (-path.max_level)
    j = round(t / h)
    return j * h


def _position(path: BrownianPath, t: float) -> tuple[int, int]:
    rel = t / path.horizon
    for level in range(path.max_level + 1):
        x = rel * (1 << level)
        j = round(x)
        if abs(x - j) <= 1e-9:
            return level, j
    raise NonDyadicTimeError(f"time {t} is not on the stored grid")


def _tz(j: int) -> int:
    return 64 if j == 0 else (j & -j).bit_length() - 1


def _walk(
    path: BrownianPath,
    kappa: float,
    s: float,
    t_end: float,
    x: float,
    y: float,
    cfg: ComplexFlowConfig,
    observe=None,
) -> complex:
    """Adaptive Euler walk on the dyadic grid; s, t_end must be grid times."""
    H = path.horizon
    max_level = path.max_level
    cell = H * 2.0 ** (-max_level)
    sk = math.sqrt(kappa)
    level, j = _position(path, s)
    braw = path.value_at_node(level, j)
    bmin = bmax = braw
    t = s
    while t < t_end - _T_EPS:
        r2 = x * x + y * y
        dt = min(cfg.dt_max, cfg.c * math.sqrt(r2) * y, t_end - t)
        if dt < 0.25 * cell:
            raise ResolutionFloorError(
                f"adaptive step {dt:.3e} for im {y:.3e} is below the grid "
                f"resolution {cell:.3e}"
            )
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
            drop = min(level - ldes, _tz(j))
            j >>= drop
            level -= drop
        nt = (j + 1) * H * 2.0 ** (-level)
        while nt > t_end + _T_EPS:
            if level >= max_level:
                raise NonDyadicTimeError(f"end time {t_end} not reachable on the grid")
            level += 1
            j <<= 1
            nt = (j + 1) * H * 2.0 ** (-level)
        b2 = path.value_at_node(level, j + 1)
        dta = nt - t
        drift = dta / r2
        x = x + sk * (b2 - braw) - 2.0 * x * drift
        y = y + 2.0 * y * drift
        t = nt
        j += 1
        braw = b2
        if braw < bmin:
            bmin = braw
        if braw > bmax:
            bmax = braw
        if observe is not None:
            observe(t, x, y, bmin, bmax)
    return complex(x, y)


def integrate_complex(
    path: BrownianPath,
    kappa: float,
    s: float,
    t: float,
    z: ComplexState | complex,
    cfg: ComplexFlowConfig = DEFAULT_CFLOW,
) -> ComplexState:
    """Flow h(s, t, z) for z in the upper half plane.

    Times are snapped to the finest stored grid of the path.  kappa = 0
    returns the exact closed form sqrt(z^2 - 4 (t-s)).
    """
    _validate(path, kappa, s, t)
    state = _as_state(z)
    if kappa == 0.0:
        w = _sqrt_upper(state.value * state.value - 4.0 * (t - s))
        return ComplexState(w.real, w.imag)
    s_g = _snap(path, s)
    t_g = _snap(path, t)
    if t_g <= s_g:
        return state
    h = _walk(path, kappa, s_g, t_g, state.re, state.im, cfg)
    return ComplexState(h.real, h.imag)


def up_bound_check(
    path: BrownianPath,
    kappa: float,
    s: float,
    t: float,
    y: float,
    cfg: ComplexFlowConfig = DEFAULT_CFLOW,
    atol: float = 1e-12,
) -> UpBoundReport:
    """Audit both growth bounds at every step of a run from z = iy.

    Checks |Re h| <= 2 sup |U_r - U_s| (exact for the discrete
    recursion) and (Im h)^2 <= y^2 + 4 (1+c) (t-s) (the c factor is the
    provable discretization slack of the adaptive rule).
    """
    _validate(path, kappa, s, t)
    if y <= 0.0:
        raise ValueError("y must be positive")
    s_g = _snap(path, s)
    t_g = _snap(path, t)
    sk = math.sqrt(kappa)
    b_s = path.value_at(s_g, path.max_level) if t_g > s_g else 0.0
    stats = {
        "n": 0, "viol": 0, "first": None,
        "re_excess": -math.inf, "im_excess": -math.inf, "last_y": y,
    }

    def observe(tn, xn, yn, bmin, bmax):
        stats["n"] += 1
        sup = sk * max(bmax - b_s, b_s - bmin)
        re_ex = abs(xn) - 2.0 * sup
        im_ex = yn * yn - (y * y + 4.0 * (1.0 + cfg.c) * (tn - s_g))
        bad = re_ex > atol or im_ex > atol or yn < stats["last_y"]
        stats["last_y"] = yn
        stats["re_excess"] = max(stats["re_excess"], re_ex)
        stats["im_excess"] = max(stats["im_excess"], im_ex)
        if bad:
            stats["viol"] += 1
            if stats["first"] is None:
                stats["first"] = tn

    if kappa == 0.0 or t_g <= s_g:
        # closed form or empty window: both bounds hold identically
        return UpBoundReport(0, 0, None, -math.inf, -math.inf)
    _walk(path, kappa, s_g, t_g, 0.0, y, cfg, observe=observe)
    return UpBoundReport(
        n_steps=stats["n"], violations=stats["viol"],
        first_violation=stats["first"],
        max_re_excess=stats["re_excess"], max_im_excess=stats["im_excess"],
    )


def real_dominates(
    path: BrownianPath,
    kappa: float,
    t_end: float,
    x: float,
    y: float,
    cfg: ComplexFlowConfig = DEFAULT_CFLOW,
    slack: float = 1e-12,
) -> DominationReport:
    """Check Re h(0, t, x+iy) >= h(0, t, x) along one shared driver.

    Both flows take the same Euler steps on the same dyadic nodes with
    identical driver increments; for that pairing the order is exact at
    every step (X' - z' >= (X-z) + 2 dt (X(X-z) + Y^2)/(z r^2)), so any
    deficit beyond float noise indicates a bug.  Comparison stops when
    the real flow absorbs or the window ends.
    """
    _validate(path, kappa, 0.0, t_end)
    if x <= 0.0 or y <= 0.0:
        raise ValueError("need x > 0 and y > 0")
    H = path.horizon
    max_level = path.max_level
    cell = H * 2.0 ** (-max_level)
    sk = math.sqrt(kappa)
    eta = max(2.0, kappa, 1.0)
    t_g = _snap(path, t_end)
    level, j = 0, 0
    braw = path.value_at_node(0, 0)
    cx, cy = x, y
    zr = x
    t = 0.0
    n = viol = 0
    first = None
    deficit = -math.inf
    absorbed_at = None
    while t < t_g - _T_EPS:
        r2 = cx * cx + cy * cy
        dt = min(
            cfg.dt_max,
            cfg.c * math.sqrt(r2) * cy,
            cfg.c * zr * zr / eta,
            t_g - t,
        )
        if dt < 0.25 * cell:
            break
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
            drop = min(level - ldes, _tz(j))
            j >>= drop
            level -= drop
        nt = (j + 1) * H * 2.0 ** (-level)
        while nt > t_g + _T_EPS:
            if level >= max_level:
                raise NonDyadicTimeError(f"end time {t_g} not reachable on the grid")
            level += 1
            j <<= 1
            nt = (j + 1) * H * 2.0 ** (-level)
        b2 = path.value_at_node(level, j + 1)
        dta = nt - t
        du = sk * (b2 - braw)
        drift = dta / r2
        cx = cx + du - 2.0 * cx * drift
        cy = cy + 2.0 * cy * drift
        nz = zr + du - 2.0 * dta / zr
        if nz <= 0.0:
            absorbed_at = nt
            break
        zr = nz
        t = nt
        j += 1
        braw = b2
        n += 1
        gap = cx - zr
        deficit = max(deficit, -gap)
        if gap < -slack:
            viol += 1
            if first is None:
                first = t
    return DominationReport(
        n_samples=n, violations=viol, first_violation=first,
        max_deficit=deficit, real_absorbed_at=absorbed_at,
    )


def trace_point(
    path: BrownianPath,
    kappa: float,
    t: float,
    y_probe: float = 0.05,
    tol: float = 1e-3,
    cfg: ComplexFlowConfig = DEFAULT_CFLOW,
) -> TraceResult:
    """Approximate trace point via h(1-t, 1, i y) with probe halving.

    Halves y until two successive probe values differ by less than tol
    (converged) or the grid resolution floor stops the walk; if the
    increments fail to decrease the result is flagged non-converged.
    kappa = 0 returns the exact probe limit 2 i sqrt(t) of the closed
    form instead of halving.
    """
    if not (0.0 <= t <= 1.0):
        raise ValueError("t must lie in [0, 1]")
    if not (0.0 < y_probe <= 0.1):
        raise ValueError("y_probe must lie in (0, 0.1]")
    if kappa == 0.0:
        return TraceResult(
            value=complex(0.0, 2.0 * math.sqrt(t)),
            y_used=0.0,
            increments=(),
            converged=True,
        )
    s = 1.0 - t
    y = y_probe
    prev = None
    value = None
    increments: list[float] = []
    converged = False
    while True:
        try:
            st = integrate_complex(path, kappa, s, 1.0, complex(0.0, y), cfg)
        except ResolutionFloorError:
            break
        value = st.value
        if prev is not None:
            inc = abs(value - prev)
            increments.append(inc)
            if inc < tol:
                converged = True
                break
            if len(increments) >= 3 and increments[-1] >= increments[-3]:
                break
        prev = value
        y *= 0.5
        if y < 1e-7:
            break
    if value is None:
        raise ResolutionFloorError("probe floor reached before any value")
    return TraceResult(
        value=value, y_used=y, increments=tuple(increments), converged=converged,
    )
