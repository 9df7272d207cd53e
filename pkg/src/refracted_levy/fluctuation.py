"""Exit probabilities, resolvent densities and ruin for refracted processes.

Every identity is a ratio or combination of the scale functions ``w``, ``z``,
``u`` and the limits ``v`` and ``A``. A :class:`ScaleMachinery` bundles them
for one (model, profile, q): step profiles go through the level recursion,
other profiles through the Volterra solvers.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, TailNotDecaying
from .levy_model import (
    DriftShift,
    LevyModel,
    RateProfile,
    StepProfile,
    mean,
    right_inverse,
    validate,
)
from .refracted import (
    ShiftedFamily,
    build_scale_set,
    level_scale,
    level_scales,
    resolvent_normalizer,
    truncated_tail,
    w_family,
    xi,
)
from .scale_base import GridFn
from .volterra import a_of_q, ratio_limit, solve_w_prime, solve_z_prime, u_general, v_general

VARIANTS = ("two_barrier", "lower_only", "upper_only", "free")
_CLAMP = 1e-10
_GAUSS = np.polynomial.legendre.leggauss(24)


@dataclass(frozen=True)
class ExitQuery:
    """Start ``x``, optional lower barrier ``d`` and upper barrier ``a``, discount ``q``."""

    x: float
    d: Optional[float] = None
    a: Optional[float] = None
    q: float = 0.0

    def __post_init__(self):
        if self.q < 0.0:
            raise DomainError("q must be non-negative", q=self.q)
        if self.d is not None and self.x < self.d:
            raise DomainError("start lies below the lower barrier", x=self.x, d=self.d)
        if self.a is not None and self.x > self.a:
            raise DomainError("start lies above the upper barrier", x=self.x, a=self.a)


@dataclass
class ResolventDensity:
    variant: str
    y: np.ndarray
    density: np.ndarray
    meta: Dict[str, float] = field(default_factory=dict)

    def rows(self):
        return np.column_stack([self.y, self.density])


# ---------------------------------------------------------------- machinery


class ScaleMachinery:
    """Scale functions for one (model, profile, q) on [min(d, 0), x_max]."""

    kind = "abstract"

    def __init__(self, model: LevyModel, profile: RateProfile, q: float, d: float, h: float, x_max: float):
        validate(model, profile).raise_first()
        self.model = model
        self.profile = profile
        self.q = q
        self.d = d
        self.h = h
        self.x_max = x_max
        self.w0 = level_scale(model, 0.0, q).w0

    def xi(self, y):
        return xi(self.profile, self.w0, y)

    # subclasses provide the grids and limits
    @property
    def w_grid(self) -> GridFn:
        raise NotImplementedError

    @property
    def z_grid(self) -> GridFn:
        raise NotImplementedError

    @property
    def u_grid(self) -> GridFn:
        raise NotImplementedError

    def w(self, x):
        return self.w_grid.hermite(x)

    def z(self, x):
        return self.z_grid.hermite(x)

    def u(self, x):
        x = np.asarray(x, dtype=float)
        g = self.u_grid
        phi = level_scale(self.model, 0.0, self.q).largest
        below = np.exp(phi * np.minimum(x, g.origin))
        out = np.where(x < g.origin, below, g.hermite(np.maximum(x, g.origin)))
        return float(out) if out.ndim == 0 else out

    def w_from(self, x: float, y) -> np.ndarray:
        raise NotImplementedError

    def v(self, y) -> np.ndarray:
        raise NotImplementedError

    def normalizer(self) -> float:
        raise NotImplementedError

    def down_ratio(self) -> float:
        """lim_{a->inf} z(a)/w(a) for the w grid anchored at 0."""
        raise NotImplementedError


class StepMachinery(ScaleMachinery):
    kind = "step"

    def __init__(self, model, profile: StepProfile, q, d=0.0, h=2.0**-8, x_max=10.0):
        super().__init__(model, profile, q, d, h, x_max)
        self.sset = build_scale_set(model, profile, q, d, h, x_max)
        self._w0fam = self.sset.w_fam if d == 0.0 else w_family(model, profile, q, 0.0, h, x_max)

    @property
    def w_grid(self) -> GridFn:
        return self.sset.w

    @property
    def z_grid(self) -> GridFn:
        if self.sset.z_fam is None:
            raise DomainError("z needs a positive first barrier")
        return self.sset.z

    @property
    def u_grid(self) -> GridFn:
        return self.sset.u

    @functools.cached_property
    def shifted(self) -> ShiftedFamily:
        return ShiftedFamily(self.model, self.profile, self.q, self.h, self.x_max)

    def w_from(self, x, y):
        return self.shifted.value(x, y)

    def w_at_origin(self, x):
        """w(x; 0), whatever ``d`` the machinery was built with."""
        return self._w0fam.grid().hermite(x)

    def v(self, y):
        return self.shifted.v(y)

    def normalizer(self) -> float:
        return resolvent_normalizer(self.sset)

    def down_ratio(self) -> float:
        k = self.profile.k
        if k == 0:
            return self.q / self.sset.scales[0].largest
        s = self.sset.top_rate
        b = self.profile.barriers[k - 1]
        return self.sset.z_fam.tail(s, b, k - 1) / self._w0fam.tail(s, b, k - 1)


class GeneralMachinery(ScaleMachinery):
    kind = "general"

    def __init__(self, model, profile: RateProfile, q, d=0.0, h=2.0**-8, x_max=10.0):
        super().__init__(model, profile, q, d, h, x_max)
        self._cache: Dict[Tuple[float, float], GridFn] = {}

    def _w_origin(self, y: float, top: Optional[float] = None) -> GridFn:
        key = (float(y), self.x_max if top is None else float(top))
        if key not in self._cache:
            self._cache[key] = solve_w_prime(self.model, self.profile, self.q, key[0], self.h, key[1])
        return self._cache[key]

    @functools.cached_property
    def w_grid(self) -> GridFn:
        return self._w_origin(self.d)

    @functools.cached_property
    def z_grid(self) -> GridFn:
        return solve_z_prime(self.model, self.profile, self.q, self.h, self.x_max)

    @functools.cached_property
    def u_grid(self) -> GridFn:
        return u_general(self.model, self.profile, self.q, self.h, self.x_max)

    def w_from(self, x, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.zeros_like(y)
        # only the value at x is needed, so the grid stops just past it
        top = min(self.x_max, math.floor(x) + 1.0)
        for i, yy in enumerate(y):
            if yy <= x:
                out[i] = self._w_origin(yy, top).hermite(x)
        return out

    def w_at_origin(self, x):
        return self._w_origin(0.0).hermite(x)

    def v(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.array([v_general(self.model, self.profile, self.q, yy, self.h) for yy in y])

    def normalizer(self) -> float:
        return a_of_q(self.model, self.profile, self.q, self.h)

    def down_ratio(self) -> float:
        if self.profile.is_zero:
            return self.q / level_scale(self.model, 0.0, self.q).largest

        def build(a_max):
            z = solve_z_prime(self.model, self.profile, self.q, self.h, a_max)
            w = solve_w_prime(self.model, self.profile, self.q, 0.0, self.h, a_max)
            return z.x, z.values, w.values

        start = (self.profile.breakpoints[-1] if self.profile.breakpoints else 0.0) + 4.0
        return ratio_limit(build, start)[0]


def machinery(
    model: LevyModel, profile: RateProfile, q: float, d: float = 0.0, h: float = 2.0**-8, x_max: float = 10.0
) -> ScaleMachinery:
    if isinstance(profile, StepProfile):
        return StepMachinery(model, profile, q, d, h, x_max)
    return GeneralMachinery(model, profile, q, d, h, x_max)


def _need(value, what: str):
    if value is None:
        raise DomainError(f"query needs {what}")
    return value


# ---------------------------------------------------------------- exit problems


def two_sided_up(query: ExitQuery, mach: ScaleMachinery) -> float:
    """E_x[exp(-q T_a) ; T_a < T_d] = w(x; d)/w(a; d)."""
    a = _need(query.a, "an upper barrier")
    d = _need(query.d, "a lower barrier")
    if d != mach.d:
        raise DomainError("machinery was built for another lower barrier", d=d, built=mach.d)
    if query.x == a:
        return 1.0
    return float(mach.w(query.x) / mach.w(a))


def two_sided_down(query: ExitQuery, mach: ScaleMachinery) -> float:
    """E_x[exp(-q T_0) ; T_0 < T_a] = z(x) - z(a) w(x)/w(a), lower barrier 0."""
    a = _need(query.a, "an upper barrier")
    if query.d not in (None, 0.0) or query.x < 0.0:
        raise DomainError("downward exit is measured at 0", d=query.d)
    w = mach.w_at_origin if mach.d != 0.0 else mach.w
    if query.x == a:
        return 0.0
    return float(mach.z(query.x) - mach.z(a) * w(query.x) / w(a))


def one_sided_down(query: ExitQuery, mach: ScaleMachinery) -> float:
    """E_x[exp(-q T_0) ; T_0 < inf]; at q = 0 this is the ruin probability."""
    if query.x < 0.0:
        return 1.0
    if query.q == 0.0:
        return ruin_probability(query.x, mach.model, mach.profile, h=mach.h)
    w = mach.w_at_origin if mach.d != 0.0 else mach.w
    return float(mach.z(query.x) - mach.down_ratio() * w(query.x))


def one_sided_up(query: ExitQuery, mach: ScaleMachinery) -> float:
    """E_x[exp(-q T_a) ; T_a < inf] = u(x)/u(a)."""
    a = _need(query.a, "an upper barrier")
    if query.x == a:
        return 1.0
    return float(mach.u(query.x) / mach.u(a))


# ---------------------------------------------------------------- resolvents


def _density(query: ExitQuery, variant: str, mach: ScaleMachinery, y: np.ndarray) -> np.ndarray:
    x = query.x
    wxy = mach.w_from(x, y)
    if variant == "two_barrier":
        a = _need(query.a, "an upper barrier")
        d = _need(query.d, "a lower barrier")
        if d != mach.d:
            raise DomainError("machinery was built for another lower barrier", d=d, built=mach.d)
        inside = (y > d) & (y < a)
        core = mach.w(x) / mach.w(a) * mach.w_from(a, y) - wxy
    elif variant == "lower_only":
        if not query.q > 0.0:
            raise DomainError("needs q > 0", q=query.q)
        inside = y > 0.0
        w = mach.w_at_origin if mach.d != 0.0 else mach.w
        core = w(x) / float(mach.v(0.0)[0]) * mach.v(y) - wxy
    elif variant == "upper_only":
        a = _need(query.a, "an upper barrier")
        inside = y < a
        core = mach.u(x) / mach.u(a) * mach.w_from(a, y) - wxy
    elif variant == "free":
        if not query.q > 0.0:
            raise DomainError("needs q > 0", q=query.q)
        inside = np.ones_like(y, dtype=bool)
        core = mach.u(x) * mach.v(y) / mach.normalizer() - wxy
    else:
        raise DomainError("unknown resolvent variant", variant=variant)
    out = np.where(inside, core / mach.xi(y), 0.0)
    return np.where((out < 0.0) & (out >= -_CLAMP), 0.0, out)


def resolvent(query: ExitQuery, variant: str, mach: ScaleMachinery, y_grid: Sequence[float]) -> ResolventDensity:
    """Density in y of E_x[int_0^kill exp(-q t) 1{U(t) in dy} dt]."""
    y = np.asarray(y_grid, dtype=float)
    dens = _density(query, variant, mach, y)
    return ResolventDensity(variant, y, dens, {"x": query.x, "q": query.q})


def _cuts(query: ExitQuery, mach: ScaleMachinery, lo: float, hi: float) -> np.ndarray:
    pts = [lo, hi, query.x, 0.0]
    pts += [p for p in (query.d, query.a) if p is not None]
    pts += list(mach.profile.breakpoints)
    pts = np.unique([p for p in pts if lo <= p <= hi])
    return pts


def _gauss(f, pts: np.ndarray, pieces: int = 4) -> float:
    nodes, weights = _GAUSS
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        edges = np.linspace(lo, hi, pieces + 1)
        for e0, e1 in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (e0 + e1), 0.5 * (e1 - e0)
            total += half * float(np.dot(weights, f(mid + half * nodes)))
    return total


def resolvent_mass(
    query: ExitQuery, variant: str, mach: ScaleMachinery, lo: Optional[float] = None, hi: Optional[float] = None,
    tol: float = 1e-8,
) -> Tuple[float, float]:
    """int_lo^hi density dy, with infinite ends widened until the added mass is below ``tol``.

    Widening uses fixed steps: in the lower tail the density is a difference
    of two growing terms, so long jumps would run into cancellation before
    the stopping test can see the decay. Returns the mass and the size of the
    last widening step.
    """
    f = lambda y: _density(query, variant, mach, y)
    lo_fin = lo is not None
    hi_fin = hi is not None
    top = max([query.x] + list(mach.profile.breakpoints) + [p for p in (query.a,) if p is not None])
    bottom = min([query.x, 0.0] + [p for p in (query.d,) if p is not None])
    span = 8.0
    a = lo if lo_fin else bottom - span
    b = hi if hi_fin else top + span
    if not hi_fin and query.a is not None and variant in ("two_barrier", "upper_only"):
        b, hi_fin = query.a, True
    if not lo_fin and query.d is not None and variant == "two_barrier":
        a, lo_fin = query.d, True
    if not lo_fin and variant == "lower_only":
        a, lo_fin = 0.0, True
    mass = _gauss(f, _cuts(query, mach, a, b))
    last = 0.0
    if lo_fin and hi_fin:
        return mass, last
    for _ in range(40):
        if lo_fin and hi_fin:
            return mass, last
        if not lo_fin:
            extra = _gauss(f, np.array([a - span, a]))
            a -= span
            mass += extra
            last = max(last, abs(extra))
            lo_fin = abs(extra) <= tol * max(abs(mass), 1e-300)
        if not hi_fin:
            if b + span > mach.x_max and mach.kind == "general":
                raise TailNotDecaying("density tail extends beyond the grid", hi=b)
            extra = _gauss(f, np.array([b, b + span]))
            b += span
            mass += extra
            last = max(last, abs(extra))
            hi_fin = abs(extra) <= tol * max(abs(mass), 1e-300)
    raise TailNotDecaying("resolvent mass did not settle", lo=a, hi=b)


# ---------------------------------------------------------------- ruin


@dataclass
class RuinReport:
    value: float
    method: str
    divergent_a: bool = False
    error_budget: float = 0.0


def _richardson(fn, h: float):
    coarse, fine = fn(h), fn(h / 2.0)
    return (4.0 * fine - coarse) / 3.0, abs(fine - coarse) / 3.0


def ruin_report(
    x: float, model: LevyModel, profile: RateProfile, h: float = 2.0**-8, x_max: Optional[float] = None
) -> RuinReport:
    """Psi(x) = P_x(U ever goes below 0)."""
    validate(model, profile).raise_first()
    if x < 0.0:
        return RuinReport(1.0, "below")
    drift = mean(model)
    if drift <= profile.sup:
        return RuinReport(1.0, "drift", divergent_a=True)
    if isinstance(profile, StepProfile):
        return _step_ruin(x, model, profile, h, drift)
    return _general_ruin(x, model, profile, h, drift)


def ruin_probability(x: float, model: LevyModel, profile: RateProfile, h: float = 2.0**-8) -> float:
    return ruin_report(x, model, profile, h).value


def _step_ruin(x, model, profile: StepProfile, h, drift) -> RuinReport:
    k = profile.k
    top = max([x] + list(profile.barriers)) + 1.0

    def evaluate(step):
        fam = w_family(model, profile, 0.0, 0.0, step, top)
        denom = 1.0
        for j in range(1, k + 1):
            denom -= profile.deltas[j - 1] * fam.grid(j - 1).hermite(profile.barriers[j - 1])
        return 1.0 - (drift - profile.sup) / denom * fam.grid().hermite(x)

    value, err = _richardson(evaluate, h)
    return RuinReport(float(value), "step", error_budget=float(err))


def _general_ruin(x, model, profile, h, drift) -> RuinReport:
    def sampler(zmax):
        g = solve_w_prime(model, profile, 0.0, 0.0, h, zmax)
        return g.x, profile.value(g.x) * g.derivatives

    try:
        integral = truncated_tail(sampler, 0.0, 0.0, max(16.0, x + 8.0))
    except TailNotDecaying:
        return RuinReport(1.0, "general", divergent_a=True)
    A = (1.0 + integral) / drift
    w = solve_w_prime(model, profile, 0.0, 0.0, h, x + 1.0).hermite(x)
    return RuinReport(float(1.0 - w / A), "general")
