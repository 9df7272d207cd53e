"""Monte Carlo for dU = dX - phi(U) dt.

Bounded-variation drivers are simulated exactly, event by event. Between
jumps the path follows the flow du/dt = c - phi(u); with the clock
G(u) = int_0^u dv / (c - phi(v)), a flow of duration s maps u to
G^{-1}(G(u) + s). For step profiles G is piecewise linear, so barrier
crossings, upper exits and occupation times are exact. Other profiles use a
fine tabulated clock. Drivers with a Gaussian part use an Euler scheme.

Paths are split into fixed-size chunks and chunk ``i`` draws from its own
Philox stream spawned from ``(seed, i)``, so results do not depend on how
chunks are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DomainError, HorizonExhausted, SchemeModelMismatch
from .levy_model import (
    DriftShift,
    LevyModel,
    RateProfile,
    StepProfile,
    exponent_derivative,
    mean,
    validate,
)
from .refracted import level_scale

EVENT = "event"
EULER = "euler"
CHUNK = 8192
_DISCOUNT_EPS = 1e-9
_RUIN_BUDGET = 1e-5


@dataclass(frozen=True)
class PathConfig:
    horizon: float = 400.0
    h_sim: float = 1e-3
    seed: int = 0
    scheme: str = EVENT

    def __post_init__(self):
        if self.h_sim <= 0.0:
            raise DomainError("h_sim must be positive", h_sim=self.h_sim)
        if self.scheme not in (EVENT, EULER):
            raise DomainError("unknown scheme", scheme=self.scheme)


@dataclass
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int
    truncation_budget: float = 0.0
    meta: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples: np.ndarray, seed: int, budget: float = 0.0, **meta) -> "McEstimate":
        n = len(samples)
        sd = float(np.std(samples, ddof=1)) if n > 1 else 0.0
        return cls(float(np.mean(samples)), sd / math.sqrt(n), n, seed, budget, dict(meta))

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.std_error + self.truncation_budget

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "se": self.std_error,
            "n": self.n_paths,
            "seed": self.seed,
            "budget": self.truncation_budget,
            **self.meta,
        }


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


# ---------------------------------------------------------------- flows


class StepFlow:
    """Exact clock for a step profile: speed c - S_j on [b_j, b_{j+1})."""

    def __init__(self, c: float, profile: StepProfile):
        self.c = c
        self.profile = profile
        self.knots = np.asarray((0.0,) + profile.barriers)
        self.speeds = c - np.asarray(profile.cumulative)
        if np.any(self.speeds <= 0.0):
            raise DomainError("drift must stay positive above every barrier", c=c)
        g = [0.0]
        for j in range(1, len(self.knots)):
            g.append(g[-1] + (self.knots[j] - self.knots[j - 1]) / self.speeds[j - 1])
        self.gk = np.asarray(g)

    def G(self, u):
        u = np.asarray(u, dtype=float)
        j = np.searchsorted(self.knots, u, side="right") - 1
        below = j < 0
        j = np.maximum(j, 0)
        out = self.gk[j] + (u - self.knots[j]) / self.speeds[j]
        return np.where(below, u / self.c, out)

    def G_inv(self, g):
        g = np.asarray(g, dtype=float)
        j = np.searchsorted(self.gk, g, side="right") - 1
        below = j < 0
        j = np.maximum(j, 0)
        out = self.knots[j] + (g - self.gk[j]) * self.speeds[j]
        return np.where(below, g * self.c, out)


class TableFlow:
    """Tabulated clock for a smooth profile; linear in u beyond the table."""

    def __init__(self, c: float, rate: RateProfile, top: float = 60.0, dz: float = 1e-3):
        self.c = c
        self.rate = rate
        z = np.arange(0.0, top + dz / 2, dz)
        speed = c - np.asarray(rate.value(z))
        if np.any(speed <= 0.0):
            raise DomainError("drift must stay positive", c=c)
        self.z = z
        self.g = cumulative_trapezoid(1.0 / speed, z, initial=0.0)
        self.top_speed = float(speed[-1])

    def G(self, u):
        u = np.asarray(u, dtype=float)
        out = np.interp(u, self.z, self.g)
        out = np.where(u < 0.0, u / self.c, out)
        return np.where(u > self.z[-1], self.g[-1] + (u - self.z[-1]) / self.top_speed, out)

    def G_inv(self, g):
        g = np.asarray(g, dtype=float)
        out = np.interp(g, self.g, self.z)
        out = np.where(g < 0.0, g * self.c, out)
        return np.where(g > self.g[-1], self.z[-1] + (g - self.g[-1]) * self.top_speed, out)


def make_flow(model: LevyModel, profile: RateProfile):
    if not model.bounded_variation:
        raise SchemeModelMismatch("exact flows need a bounded-variation driver", model=model.name)
    if isinstance(profile, StepProfile):
        return StepFlow(model.drift, profile)
    return TableFlow(model.drift, profile)


def _draw_jumps(model: LevyModel, rng: np.random.Generator, n: int) -> np.ndarray:
    active = model.jumps.active
    if len(active) == 1:
        return rng.exponential(1.0 / active[0][1], n)
    weights = np.array([w for w, _ in active])
    rates = np.array([r for _, r in active])
    comp = np.searchsorted(np.cumsum(weights) / weights.sum(), rng.random(n), side="right")
    comp = np.minimum(comp, len(rates) - 1)
    return rng.exponential(1.0, n) / rates[comp]


def _intensity(model: LevyModel) -> float:
    return model.jumps.intensity if model.jumps.active else 0.0


# ---------------------------------------------------------------- engine


@dataclass
class _Targets:
    """What one run records; see ``_run``."""

    low: Optional[float] = None
    up: Optional[float] = None
    kill_low: bool = False
    kill_up: bool = False
    q: float = 0.0
    windows: Tuple[Tuple[float, float], ...] = ()
    safe_level: Optional[float] = None


@dataclass
class _Outcome:
    t_up: np.ndarray
    t_down: np.ndarray
    occupation: np.ndarray
    final_u: np.ndarray
    final_t: np.ndarray
    undecided: np.ndarray
    safe: np.ndarray


def _disc(q: float, s1, s2):
    if q == 0.0:
        return s2 - s1
    return (np.exp(-q * s1) - np.exp(-q * s2)) / q


def _run_event_chunk(model, flow, x0, n, tg: _Targets, horizon, rng) -> _Outcome:
    lam = _intensity(model)
    t_up = np.full(n, np.inf)
    t_down = np.full(n, np.inf)
    occ = np.zeros((len(tg.windows), n))
    U = np.full(n, float(x0))
    T = np.zeros(n)
    undecided = np.zeros(n, dtype=bool)
    safe = np.zeros(n, dtype=bool)
    if tg.up is not None:
        t_up[U >= tg.up] = 0.0
    if tg.low is not None:
        t_down[U < tg.low] = 0.0
    alive = np.ones(n, dtype=bool)
    g_up = float(flow.G(tg.up)) if tg.up is not None else None
    win_g = [(float(flow.G(a)), float(flow.G(b))) for a, b in tg.windows]

    def settle():
        done = np.zeros(n, dtype=bool)
        need_up = tg.up is not None
        need_low = tg.low is not None
        if tg.kill_up and need_up:
            done |= np.isfinite(t_up)
        if tg.kill_low and need_low:
            done |= np.isfinite(t_down)
        both = np.ones(n, dtype=bool)
        if need_up:
            both &= np.isfinite(t_up)
        if need_low:
            both &= np.isfinite(t_down)
        if need_up or need_low:
            done |= both
        if tg.q > 0.0:
            done |= np.exp(-tg.q * T) < _DISCOUNT_EPS
        if tg.safe_level is not None:
            up_ok = np.isfinite(t_up) if need_up else True
            hit = (U >= tg.safe_level) & up_ok & ~np.isfinite(t_down)
            safe[hit & alive] = True
            done |= hit
        return done

    alive &= ~settle()
    while np.any(alive):
        idx = np.flatnonzero(alive)
        u, t = U[idx], T[idx]
        tau = rng.exponential(1.0 / lam, len(idx)) if lam > 0.0 else np.full(len(idx), np.inf)
        end = np.minimum(t + tau, horizon)
        g0 = flow.G(u)
        seg_end = end.copy()
        if g_up is not None:
            fresh = ~np.isfinite(t_up[idx])
            hit_at = t + (g_up - g0)
            hit = fresh & (hit_at <= end)
            t_up[idx[hit]] = hit_at[hit]
            if tg.kill_up:
                seg_end = np.where(hit, hit_at, seg_end)
        for w, (ga, gb) in enumerate(win_g):
            s1 = np.clip(t + (ga - g0), t, seg_end)
            s2 = np.clip(t + (gb - g0), t, seg_end)
            occ[w, idx] += _disc(tg.q, s1, s2)
        u_end = flow.G_inv(g0 + (seg_end - t))
        jumped = (t + tau <= horizon) & (seg_end == end)
        if tg.kill_up and g_up is not None:
            jumped &= ~hit
        y = _draw_jumps(model, rng, int(jumped.sum())) if np.any(jumped) else np.zeros(0)
        u_new = u_end.copy()
        u_new[jumped] -= y
        U[idx] = u_new
        T[idx] = seg_end
        if tg.low is not None:
            fell = jumped & (u_new < tg.low) & ~np.isfinite(t_down[idx])
            t_down[idx[fell]] = seg_end[fell]
        out_of_time = (end >= horizon) & ~jumped
        done = settle()
        stuck = out_of_time & ~done[idx]
        undecided[idx[stuck]] = True
        alive[idx] = ~(done[idx] | stuck)
    return _Outcome(t_up, t_down, occ, U, T, undecided, safe)


def _run_euler_chunk(model, rate: RateProfile, x0, n, tg: _Targets, horizon, h, rng) -> _Outcome:
    lam = _intensity(model)
    gamma, sigma = model.gamma, model.sigma
    t_up = np.full(n, np.inf)
    t_down = np.full(n, np.inf)
    occ = np.zeros((len(tg.windows), n))
    U = np.full(n, float(x0))
    T = np.zeros(n)
    undecided = np.zeros(n, dtype=bool)
    safe = np.zeros(n, dtype=bool)
    next_jump = rng.exponential(1.0 / lam, n) if lam > 0.0 else np.full(n, np.inf)
    if tg.up is not None:
        t_up[U >= tg.up] = 0.0
    if tg.low is not None:
        t_down[U < tg.low] = 0.0
    alive = np.ones(n, dtype=bool)
    sq = math.sqrt(h)
    while True:
        done = np.zeros(n, dtype=bool)
        if tg.kill_up and tg.up is not None:
            done |= np.isfinite(t_up)
        if tg.kill_low and tg.low is not None:
            done |= np.isfinite(t_down)
        if tg.up is not None or tg.low is not None:
            both = np.ones(n, dtype=bool)
            if tg.up is not None:
                both &= np.isfinite(t_up)
            if tg.low is not None:
                both &= np.isfinite(t_down)
            done |= both
        if tg.q > 0.0:
            done |= np.exp(-tg.q * T) < _DISCOUNT_EPS
        if tg.safe_level is not None:
            hit = (U >= tg.safe_level) & ~np.isfinite(t_down)
            if tg.up is not None:
                hit &= np.isfinite(t_up)
            safe[hit & alive] = True
            done |= hit
        out = (T >= horizon - 1e-12) & ~done & alive
        undecided |= out
        alive &= ~(done | out)
        if not np.any(alive):
            break
        idx = np.flatnonzero(alive)
        u, t = U[idx], T[idx]
        for w, (a, b) in enumerate(tg.windows):
            inside = (u > a) & (u < b)
            occ[w, idx] += np.where(inside, h * np.exp(-tg.q * t), 0.0)
        z = rng.standard_normal(len(idx))
        u = u + (gamma - np.asarray(rate.value(u))) * h + sigma * sq * z
        t_new = t + h
        nj = next_jump[idx]
        while True:
            due = nj <= t_new
            if not np.any(due):
                break
            u[due] -= _draw_jumps(model, rng, int(due.sum()))
            nj[due] += rng.exponential(1.0 / lam, int(due.sum()))
        next_jump[idx] = nj
        U[idx], T[idx] = u, t_new
        if tg.up is not None:
            hit = (u >= tg.up) & ~np.isfinite(t_up[idx])
            t_up[idx[hit]] = t_new[hit]
        if tg.low is not None:
            fell = (u < tg.low) & ~np.isfinite(t_down[idx])
            t_down[idx[fell]] = t_new[fell]
    return _Outcome(t_up, t_down, occ, U, T, undecided, safe)


def _run(model, profile, x0, n_paths, tg: _Targets, config: PathConfig) -> _Outcome:
    validate(model, profile).raise_first()
    if config.scheme == EVENT:
        flow = make_flow(model, profile)
    elif model.sigma == 0.0 and not model.bounded_variation:
        raise SchemeModelMismatch("Euler scheme needs a Gaussian part or finite activity", model=model.name)
    parts = []
    for c, start in enumerate(range(0, n_paths, CHUNK)):
        n = min(CHUNK, n_paths - start)
        rng = chunk_rng(config.seed, c)
        if config.scheme == EVENT:
            parts.append(_run_event_chunk(model, flow, x0, n, tg, config.horizon, rng))
        else:
            parts.append(_run_euler_chunk(model, profile, x0, n, tg, config.horizon, config.h_sim, rng))
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts], axis=-1)
    return _Outcome(*(cat(f) for f in ("t_up", "t_down", "occupation", "final_u", "final_t", "undecided", "safe")))


def _ruin_safe_level(model: LevyModel, profile: RateProfile, budget: float = _RUIN_BUDGET) -> Tuple[float, float]:
    """Level M whose top-level ruin probability is below ``budget``.

    Above M, U dominates X minus the full drain, so the chance of going
    below 0 afterwards is at most that process's ruin probability.
    """
    top = level_scale(model, float(profile.sup), 0.0)
    net = mean(model) - float(profile.sup)
    if net <= 0.0:
        return math.inf, 1.0
    m = 1.0
    while 1.0 - net * top.value(m) > budget:
        m *= 1.5
        if m > 1e4:
            return math.inf, 1.0
    return m, max(0.0, 1.0 - net * top.value(m))


# ---------------------------------------------------------------- estimators


EXIT_KINDS = ("two_sided_up", "two_sided_down", "one_sided_down", "one_sided_up")


def mc_exits(model, profile, x: float, d: Optional[float], a: Optional[float], q: float, n_paths: int, config: PathConfig) -> Dict[str, McEstimate]:
    """All four exit functionals from one set of paths.

    Paths run until both passage times are known, the discount has fallen
    below 1e-9, or (q = 0, passage above ``a`` known) the path has reached a
    level whose residual ruin probability is below 1e-5. Remaining
    contributions are reported as truncation budgets.
    """
    low = 0.0 if d is None else d
    safe, safe_budget = (None, 0.0)
    if q == 0.0:
        safe, safe_budget = _ruin_safe_level(model, profile)
        if math.isfinite(safe):
            net = mean(model) - float(profile.sup)
            config = replace(config, horizon=max(config.horizon, 4.0 * safe / net))
        else:
            safe = None
    tg = _Targets(low=low, up=a, q=q, safe_level=safe)
    out = _run(model, profile, x, n_paths, tg, config)
    disc = lambda t: np.where(np.isfinite(t), np.exp(-q * np.where(np.isfinite(t), t, 0.0)), 0.0)
    up, down = out.t_up, out.t_down
    open_up = float(np.mean(out.undecided & ~np.isfinite(up)))
    open_down = float(np.mean(out.undecided & ~np.isfinite(down)))
    open_both = float(np.mean(out.undecided & ~np.isfinite(up) & ~np.isfinite(down)))
    tail = _DISCOUNT_EPS if q > 0.0 else 0.0
    samples = {
        "two_sided_up": disc(up) * (up < down),
        "two_sided_down": disc(down) * (down < up),
        "one_sided_down": disc(down),
        "one_sided_up": disc(up),
    }
    budgets = {
        "two_sided_up": open_both,
        "two_sided_down": open_both,
        "one_sided_down": open_down + float(np.mean(out.safe)) * safe_budget,
        "one_sided_up": open_up,
    }
    res = {}
    for kind in EXIT_KINDS:
        if a is None and kind != "one_sided_down":
            continue
        res[kind] = McEstimate.from_samples(samples[kind], config.seed, budgets[kind] + tail, kind=kind, q=q)
    return res


def mc_exit(model, profile, x: float, d: float, a: float, q: float, n_paths: int, config: PathConfig, kind: str = "two_sided_up") -> McEstimate:
    """E_x[exp(-q T) 1{event}] for one exit functional."""
    if kind not in EXIT_KINDS:
        raise DomainError("unknown exit functional", kind=kind)
    if x >= a and kind in ("two_sided_up", "one_sided_up"):
        return McEstimate(1.0, 0.0, n_paths, config.seed)
    est = mc_exits(model, profile, x, d, a, q, n_paths, config)[kind]
    if est.truncation_budget > 0.5:
        raise HorizonExhausted("most paths undecided at the horizon", budget=est.truncation_budget)
    return est


def mc_occupation(
    model, profile, x: float, variant: str, window: Tuple[float, float], q: float, n_paths: int, config: PathConfig,
    d: Optional[float] = None, a: Optional[float] = None,
) -> McEstimate:
    """E_x[int_0^kill exp(-q t) 1{U(t) in window} dt] for the four kill rules."""
    if variant == "two_barrier":
        tg = _Targets(low=d, up=a, kill_low=True, kill_up=True, q=q, windows=(window,))
    elif variant == "lower_only":
        tg = _Targets(low=0.0, kill_low=True, q=q, windows=(window,))
    elif variant == "upper_only":
        tg = _Targets(up=a, kill_up=True, q=q, windows=(window,))
    elif variant == "free":
        tg = _Targets(q=q, windows=(window,))
    else:
        raise DomainError("unknown resolvent variant", variant=variant)
    if variant != "two_barrier" and not q > 0.0:
        raise DomainError("unbounded horizons need q > 0", q=q)
    horizon = config.horizon
    out = _run(model, profile, x, n_paths, tg, config)
    budget = float(np.mean(out.undecided)) * (math.exp(-q * horizon) / q if q > 0 else horizon)
    if q > 0.0:
        budget += _DISCOUNT_EPS / q
    return McEstimate.from_samples(out.occupation[0], config.seed, budget, variant=variant, q=q)


def mc_ruin(model, profile, x: float, n_paths: int, config: PathConfig) -> McEstimate:
    """P_x(ruin) with paths stopped at a safe level; its residual ruin chance is the budget."""
    return mc_exits(model, profile, x, 0.0, None, 0.0, n_paths, config)["one_sided_down"]


def mc_terminal(model, profile, x: float, n_paths: int, config: PathConfig) -> np.ndarray:
    """U(T) at the horizon, with no barriers."""
    return _run(model, profile, x, n_paths, _Targets(), config).final_u


# ---------------------------------------------------------------- single paths


@dataclass
class PathRecord:
    """Epochs of one path: jump times (before and after), barrier crossings and the horizon."""

    t: np.ndarray
    u: np.ndarray
    x: np.ndarray
    time_above: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray

    def rows(self):
        return np.column_stack([self.t, self.u])


def simulate_path(model: LevyModel, profile: RateProfile, x0: float, config: PathConfig, stream: int = 0) -> PathRecord:
    """One path on [0, horizon] from stream (seed, stream).

    ``x`` is x0 plus the driving process; ``time_above[:, i]`` is the time
    spent above the i-th barrier so far (step profiles only).
    """
    validate(model, profile).raise_first()
    if config.scheme == EVENT:
        return _event_path(model, profile, x0, config, stream)
    return _euler_path(model, profile, x0, config, stream)


def _event_path(model, profile, x0, config: PathConfig, stream: int) -> PathRecord:
    flow = make_flow(model, profile)
    rng = chunk_rng(config.seed, stream)
    lam = _intensity(model)
    c = model.drift
    bars = np.asarray(profile.breakpoints if isinstance(profile, StepProfile) else ())
    gb = flow.G(bars) if len(bars) else bars
    t, u, xx = 0.0, float(x0), float(x0)
    above = np.zeros(len(bars))
    T, Uu, X, A = [t], [u], [xx], [above.copy()]
    jt, js = [], []
    while t < config.horizon:
        tau = rng.exponential(1.0 / lam, 1)[0] if lam > 0.0 else math.inf
        end = min(t + tau, config.horizon)
        g0 = float(flow.G(u))
        for i in np.argsort(gb):
            cross = t + gb[i] - g0
            if t < cross < end:
                T.append(cross)
                Uu.append(float(bars[i]))
                X.append(xx + c * (cross - t))
                A.append(_above_after(above, gb, g0, cross - t))
        above = _above_after(above, gb, g0, end - t)
        xx += c * (end - t)
        u = float(flow.G_inv(g0 + (end - t)))
        t = end
        T.append(t)
        Uu.append(u)
        X.append(xx)
        A.append(above.copy())
        if t + 0.0 >= config.horizon or tau == math.inf:
            break
        y = float(_draw_jumps(model, rng, 1)[0])
        jt.append(t)
        js.append(y)
        u -= y
        xx -= y
        T.append(t)
        Uu.append(u)
        X.append(xx)
        A.append(above.copy())
    return PathRecord(np.array(T), np.array(Uu), np.array(X), np.array(A), np.array(jt), np.array(js))


def _above_after(above, gb, g0, s):
    if len(gb) == 0:
        return above.copy()
    return above + np.where(g0 >= gb, s, np.maximum(0.0, s - (gb - g0)))


def _euler_path(model, rate, x0, config: PathConfig, stream: int) -> PathRecord:
    rng = chunk_rng(config.seed, stream)
    lam = _intensity(model)
    h = config.h_sim
    n = int(math.ceil(config.horizon / h))
    t = h * np.arange(n + 1)
    u = np.empty(n + 1)
    x = np.empty(n + 1)
    u[0] = x[0] = x0
    next_jump = rng.exponential(1.0 / lam) if lam > 0.0 else math.inf
    jt, js = [], []
    sq = math.sqrt(h)
    for m in range(n):
        dx = model.gamma * h + model.sigma * sq * rng.standard_normal()
        while next_jump <= t[m + 1]:
            y = float(_draw_jumps(model, rng, 1)[0])
            jt.append(next_jump)
            js.append(y)
            dx -= y
            next_jump += rng.exponential(1.0 / lam)
        u[m + 1] = u[m] + dx - float(rate.value(u[m])) * h
        x[m + 1] = x[m] + dx
    return PathRecord(t, u, x, np.zeros((n + 1, 0)), np.array(jt), np.array(js))


# ---------------------------------------------------------------- coupling


@dataclass
class CouplingReport:
    max_violation: float
    sup_distance: Dict[int, float]
    n_paths: int
    pair: Tuple[int, int]


def coupling_monotonicity(
    model: LevyModel,
    rate: RateProfile,
    pair: Tuple[int, int],
    config: PathConfig,
    n_paths: int = 1000,
    reference_n: Optional[int] = None,
    x0: float = 1.0,
    obs_dt: float = 0.05,
) -> CouplingReport:
    """Simulate U_n for the dyadic step approximations of ``rate`` on one jump skeleton.

    ``max_violation`` is the largest U_{n+1}(t) - U_n(t) seen at jump epochs
    and on an observation grid of spacing ``obs_dt``. With ``reference_n``,
    ``sup_distance[n]`` is the sup over the same times of |U_n - U_ref|.
    """
    from .volterra import approximate_profile

    if not model.bounded_variation:
        raise SchemeModelMismatch("coupling needs exact flows", model=model.name)
    levels = list(pair) + ([reference_n] if reference_n is not None else [])
    levels = list(dict.fromkeys(levels))
    flows = [StepFlow(model.drift, approximate_profile(rate, n)) for n in levels]
    lam = _intensity(model)
    rng = chunk_rng(config.seed, 0)
    U = np.full((len(flows), n_paths), float(x0))
    t = np.zeros(n_paths)
    next_jump = rng.exponential(1.0 / lam, n_paths) if lam > 0.0 else np.full(n_paths, np.inf)
    next_obs = np.full(n_paths, obs_dt)
    viol = 0.0
    sup = np.zeros(len(flows))
    while np.any(t < config.horizon):
        live = t < config.horizon
        end = np.minimum(np.minimum(next_jump, next_obs), config.horizon)
        for i, fl in enumerate(flows):
            U[i, live] = fl.G_inv(fl.G(U[i, live]) + (end[live] - t[live]))
        t = np.where(live, end, t)
        viol = max(viol, float(np.max(U[1, live] - U[0, live])) if np.any(live) else 0.0)
        if reference_n is not None:
            sup = np.maximum(sup, np.max(np.abs(U[:, live] - U[-1, live]), axis=1))
        jump = live & (next_jump <= end) & (end < config.horizon)
        if np.any(jump):
            y = _draw_jumps(model, rng, int(jump.sum()))
            U[:, jump] -= y
            next_jump[jump] += rng.exponential(1.0 / lam, int(jump.sum()))
        obs = live & (next_obs <= end)
        next_obs[obs] += obs_dt
    dist = {n: float(s) for n, s in zip(levels, sup)} if reference_n is not None else {}
    return CouplingReport(viol, dist, n_paths, tuple(pair))


def drift_estimate(model: LevyModel, n_paths: int, config: PathConfig, x0: float = 0.0) -> McEstimate:
    """Sample mean of U(T)/T with no drain; compare with psi'(0+)."""
    from .levy_model import ZERO_RATE

    final = mc_terminal(model, ZERO_RATE, x0, n_paths, config)
    return McEstimate.from_samples((final - x0) / config.horizon, config.seed)
