"""Multi-refracted scale functions built level by level.

Each level adds one barrier: ``f_j = f_{j-1} + delta_j int_{b_j}^x W_j(x-y) f'_{j-1}(y) dy``.
The seed ``f_0`` is ``W(x-d)`` for the ``w`` family, ``Z(x)`` for ``z`` and
``exp(Phi(q) x)`` for ``u``. Convolutions use exact exponential-sum weights
against the piecewise-linear right derivative, so the scheme is second order.
On ``[b_j, inf)`` the lower-level derivative is continuous, so a single
derivative array suffices inside each convolution.

Tail integrals ``int_b^inf exp(-s z) f'_j(z) dz`` are evaluated without
truncation: the convolution theorem turns the infinite part into
``W_j``'s Laplace transform times the lower-level tail, leaving only a
finite integral over ``[b_j, b]`` for the grid.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, NonPositiveXi, TailNotDecaying
from .levy_model import DriftShift, LevyModel, StepProfile, exponent_derivative, right_inverse
from .scale_base import (
    ExpSumScale,
    GridFn,
    aligned_count,
    cell_weights,
    product_integral,
    scale_function,
)

TAIL_EPS = 1e-9


@functools.lru_cache(maxsize=512)
def level_scale(model: LevyModel, cumulative_delta: float, q: float) -> ExpSumScale:
    """Cached W_j^{(q)} for the process with drift reduced by ``cumulative_delta``."""
    return scale_function(model, DriftShift(cumulative_delta), q)


def level_scales(model: LevyModel, profile: StepProfile, q: float) -> List[ExpSumScale]:
    return [level_scale(model, s, q) for s in profile.cumulative]


def xi(profile, w0: float, y):
    """1 - W(0) phi(y), with phi taken left-continuous at step barriers."""
    phi = profile.left_value(y) if isinstance(profile, StepProfile) else profile.value(y)
    out = 1.0 - w0 * np.asarray(phi)
    if np.any(out <= 0.0):
        raise NonPositiveXi("admissibility violated: 1 - W(0) phi <= 0", w0=w0)
    return float(out) if out.ndim == 0 else out


def _nodes(origin: float, h: float, x_max: float) -> int:
    n = int(math.ceil((x_max - origin) / h - 1e-9))
    return max(n, 1)


@dataclass(eq=False)
class _Family:
    """All levels ``first..k`` of one recursion on a common grid.

    ``seed_terms`` describes the derivative of the level-``first`` function
    on ``[origin, inf)`` as ``sum c exp(zeta z)``; it anchors the tails.
    """

    origin: float
    h: float
    profile: StepProfile
    scales: List[ExpSumScale]
    first: int
    vals: List[np.ndarray]
    ders: List[np.ndarray]
    seed_terms: Tuple[np.ndarray, np.ndarray]
    kind: str = ""
    meta: Dict[str, object] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.profile.k

    def level_arrays(self, level: int):
        return self.vals[level - self.first], self.ders[level - self.first]

    def grid(self, level: Optional[int] = None) -> GridFn:
        level = self.k if level is None else level
        v, d = self.level_arrays(level)
        end = self.origin + self.h * (len(v) - 1)
        bps, facs = [], []
        for j in range(self.first + 1, level + 1):
            b = self.profile.barriers[j - 1]
            if self.origin < b <= end:
                bps.append(b)
                facs.append(1.0 + self.profile.deltas[j - 1] * self.scales[j].w0)
        meta = dict(self.meta, kind=self.kind, level=level)
        return GridFn(self.origin, self.h, v, d, tuple(bps), tuple(facs), meta)

    def tail(self, s: float, b: float, level: Optional[int] = None) -> float:
        """int_b^inf exp(-s z) f'_level(z) dz for b >= the level's top barrier."""
        level = self.k if level is None else level
        memo: Dict[Tuple[int, float], float] = {}

        def T(j: int, point: float) -> float:
            key = (j, point)
            if key in memo:
                return memo[key]
            if j == self.first:
                c, z = self.seed_terms
                live = np.abs(c) > 0
                if np.any(z.real[live] >= s):
                    raise TailNotDecaying("exponent does not dominate the seed growth", s=s)
                out = float((c * np.exp((z - s) * point) / (s - z)).sum().real)
            else:
                bj = self.profile.barriers[j - 1]
                dj = self.profile.deltas[j - 1]
                if s <= self.scales[j].largest:
                    raise TailNotDecaying("exponent does not dominate level growth", s=s, level=j)
                if point < bj:
                    raise DomainError("tail start below the level barrier", point=point, barrier=bj)
                vj, _ = self.level_arrays(j)
                vp, _ = self.level_arrays(j - 1)
                mj = aligned_count(self.origin, self.h, bj)
                mb = aligned_count(self.origin, self.h, point)
                g = (vj[mj : mb + 1] - vp[mj : mb + 1]) / dj
                zs = self.origin + self.h * np.arange(mj, mb + 1)
                e = np.exp(-s * zs) * g
                finite = float(self.h * (e.sum() - 0.5 * (e[0] + e[-1]))) if len(e) > 1 else 0.0
                out = T(j - 1, point) + dj * (
                    -math.exp(-s * point) * g[-1] + s * (self.scales[j].laplace(s) * T(j - 1, bj) - finite)
                )
            memo[key] = out
            return out

        return T(level, b)


def _recurse(
    seed_vals: np.ndarray,
    seed_ders: np.ndarray,
    origin: float,
    h: float,
    profile: StepProfile,
    scales: Sequence[ExpSumScale],
    first: int,
    seed_terms,
    kind: str,
    meta: Optional[dict] = None,
) -> _Family:
    vals = [np.asarray(seed_vals, dtype=float)]
    ders = [np.asarray(seed_ders, dtype=float)]
    N = len(seed_vals) - 1
    for j in range(first + 1, profile.k + 1):
        b = profile.barriers[j - 1]
        dj = profile.deltas[j - 1]
        Wj = scales[j]
        m = aligned_count(origin, h, b)
        if m < 0:
            raise DomainError("barrier lies below the grid origin", barrier=b, origin=origin)
        v, d = vals[-1].copy(), ders[-1].copy()
        if m <= N:
            f = ders[-1][m:]
            n = len(f)
            a, bw = cell_weights(*Wj.kernel_terms(), h, n)
            ad, bd = cell_weights(*Wj.kernel_terms(derivative=True), h, n)
            v[m:] += dj * product_integral(a, bw, f)
            d[m:] = f * (1.0 + dj * Wj.w0) + dj * product_integral(ad, bd, f)
        vals.append(v)
        ders.append(d)
    return _Family(origin, h, profile, list(scales), first, vals, ders, seed_terms, kind, dict(meta or {}))


def _check_step(profile) -> StepProfile:
    if not isinstance(profile, StepProfile):
        raise DomainError("recursions need a step profile", kind=getattr(profile, "kind", "?"))
    return profile


def w_family(model: LevyModel, profile: StepProfile, q: float, d: float, h: float, x_max: float) -> _Family:
    profile = _check_step(profile)
    if profile.k and not d < profile.barriers[0]:
        raise DomainError("origin must lie below the first barrier", d=d, b1=profile.barriers[0])
    scales = level_scales(model, profile, q)
    W = scales[0]
    N = _nodes(d, h, x_max)
    t = h * np.arange(N + 1)
    c, z = W.kernel_terms(derivative=True)
    seed_terms = (c * np.exp(-z * d), z)
    return _recurse(W.value(t), W.derivative(t), d, h, profile, scales, 0, seed_terms, "w", {"q": q, "d": d})


def z_family(model: LevyModel, profile: StepProfile, q: float, h: float, x_max: float) -> _Family:
    profile = _check_step(profile)
    if profile.k and not profile.barriers[0] > 0.0:
        raise DomainError("z needs a positive first barrier", b1=profile.barriers[0])
    scales = level_scales(model, profile, q)
    W = scales[0]
    N = _nodes(0.0, h, x_max)
    x = h * np.arange(N + 1)
    c, z = W.kernel_terms()
    return _recurse(W.z_value(x), q * W.value(x), 0.0, h, profile, scales, 0, (q * c, z), "z", {"q": q})


def u_family(model: LevyModel, profile: StepProfile, q: float, h: float, x_max: float, origin: float = 0.0) -> _Family:
    profile = _check_step(profile)
    if profile.k and origin > profile.barriers[0]:
        raise DomainError("u grid must start at or below the first barrier", origin=origin)
    scales = level_scales(model, profile, q)
    phi = scales[0].largest
    N = _nodes(origin, h, x_max)
    x = origin + h * np.arange(N + 1)
    e = np.exp(phi * x)
    terms = (np.array([phi], dtype=complex), np.array([phi], dtype=complex))
    return _recurse(e, phi * e, origin, h, profile, scales, 0, terms, "u", {"q": q, "phi": phi})


def build_w(model: LevyModel, profile: StepProfile, q: float, d: float, h: float, x_max: float) -> GridFn:
    """w_k(.; d) on [d, x_max] with right derivatives and barrier jump factors."""
    return w_family(model, profile, q, d, h, x_max).grid()


def build_z(model: LevyModel, profile: StepProfile, q: float, h: float, x_max: float) -> GridFn:
    """z_k on [0, x_max]."""
    return z_family(model, profile, q, h, x_max).grid()


def build_u(model: LevyModel, profile: StepProfile, q: float, h: float, x_max: float, origin: float = 0.0) -> GridFn:
    """u_k on [origin, x_max]; below the first barrier it is exp(Phi(q) x)."""
    return u_family(model, profile, q, h, x_max, origin).grid()


@dataclass(eq=False)
class RefractedScaleSet:
    model: LevyModel
    profile: StepProfile
    q: float
    d: float
    h: float
    x_max: float
    w_fam: _Family
    z_fam: _Family
    u_fam: _Family
    scales: List[ExpSumScale]

    @property
    def w(self) -> GridFn:
        return self.w_fam.grid()

    @property
    def z(self) -> GridFn:
        return self.z_fam.grid()

    @property
    def u(self) -> GridFn:
        return self.u_fam.grid()

    @property
    def w0(self) -> float:
        return self.scales[0].w0

    @property
    def top_rate(self) -> float:
        """Right inverse of the top level, phi_k(q)."""
        return self.scales[-1].largest


def build_scale_set(
    model: LevyModel, profile: StepProfile, q: float, d: float = 0.0, h: float = 2.0**-8, x_max: float = 10.0
) -> RefractedScaleSet:
    profile = _check_step(profile)
    wf = w_family(model, profile, q, d, h, x_max)
    zf = z_family(model, profile, q, h, x_max) if (not profile.k or profile.barriers[0] > 0.0) else None
    uf = u_family(model, profile, q, h, x_max, origin=min(0.0, d))
    return RefractedScaleSet(model, profile, q, d, h, x_max, wf, zf, uf, level_scales(model, profile, q))


# ---------------------------------------------------------------- shifted origins


def _xi_level(profile: StepProfile, w0: float, i: int) -> float:
    out = 1.0 - w0 * profile.cumulative[i]
    if out <= 0.0:
        raise NonPositiveXi("admissibility violated", level=i)
    return out


def w_shifted(model: LevyModel, profile: StepProfile, q: float, y: float, h: float, x_max: float) -> GridFn:
    """w_k(.; y) on [y, x_max].

    Above the top barrier this is Xi(y) W_k(x - y) in closed form. Otherwise
    the recursion restarts at the first barrier above ``y`` with seed
    ``Xi(y) W_i(x - y)``, since the lower barriers no longer act.
    """
    profile = _check_step(profile)
    scales = level_scales(model, profile, q)
    w0 = scales[0].w0
    i = int(np.searchsorted(profile.barriers, y, side="left"))
    N = _nodes(y, h, x_max)
    t = h * np.arange(N + 1)
    cst = _xi_level(profile, w0, i)
    Wi = scales[i]
    if i == profile.k:
        return GridFn(y, h, cst * Wi.value(t), cst * Wi.derivative(t), meta={"kind": "w", "origin": y, "q": q})
    c, z = Wi.kernel_terms(derivative=True)
    fam = _recurse(cst * Wi.value(t), cst * Wi.derivative(t), y, h, profile, scales, i, (cst * c * np.exp(-z * y), z), "w")
    fam.meta.update(origin=y, q=q)
    return fam.grid()


class ShiftedFamily:
    """w_k(x; y) and v_k(y) for arbitrary origins y from a few mode solves.

    For y in (b_i, b_{i+1}], the restarted recursion is linear in its seed
    ``Xi(y) sum_l D_l exp(-zeta_l y) exp(zeta_l x)``, so running the recursion
    once per exponential mode (grid origin b_{i+1}) covers every such y.
    """

    def __init__(self, model: LevyModel, profile: StepProfile, q: float, h: float, x_max: float):
        self.model = model
        self.profile = _check_step(profile)
        self.q = q
        self.h = h
        self.x_max = x_max
        self.scales = level_scales(model, profile, q)
        self.w0 = self.scales[0].w0
        k = profile.k
        self.xis = [_xi_level(profile, self.w0, i) for i in range(k + 1)]
        self.modes: List[List[_Family]] = []
        for i in range(k):
            origin = profile.barriers[i]
            N = _nodes(origin, h, max(x_max, profile.barriers[-1]))
            x = origin + h * np.arange(N + 1)
            fams = []
            for zeta in self.scales[i].exponents:
                e = np.exp(zeta * x).real if zeta.imag == 0 else np.exp(zeta * x)
                seed = (np.array([zeta]), np.array([zeta]))
                fams.append(_recurse(np.real(e), np.real(zeta * e), origin, h, profile, self.scales, i, seed, "mode"))
            self.modes.append(fams)
        self._tops = [[f.grid() for f in fams] for fams in self.modes]
        self._v_modes: Optional[List[np.ndarray]] = None

    def _level_of(self, y) -> np.ndarray:
        return np.searchsorted(self.profile.barriers, np.asarray(y, dtype=float), side="left")

    def value(self, x: float, y):
        """w_k(x; y) for scalar x and array y."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.zeros_like(y)
        lev = self._level_of(y)
        k = self.profile.k
        for i in np.unique(lev):
            sel = (lev == i) & (y <= x)
            if not np.any(sel):
                continue
            ys = y[sel]
            Wi = self.scales[i]
            if i == k or x < self.profile.barriers[i]:
                out[sel] = self.xis[i] * Wi.value(x - ys)
                continue
            acc = np.zeros_like(ys)
            for D, zeta, top in zip(Wi.coefficients, Wi.exponents, self._tops[i]):
                acc += (D * np.exp(-zeta * ys)).real * top(x)
            out[sel] = self.xis[i] * acc
        return out

    def mode_tails(self) -> List[np.ndarray]:
        if self._v_modes is None:
            k = self.profile.k
            s = self.scales[k].largest
            bk = self.profile.barriers[k - 1]
            dk = self.profile.deltas[k - 1]
            self._v_modes = [np.array([dk * f.tail(s, bk, k - 1) for f in fams]) for fams in self.modes]
        return self._v_modes

    def v(self, y):
        """v_k(y) = delta_k int_{b_k}^inf exp(-phi_k(q) z) w'_{k-1}(z; y) dz (needs q > 0)."""
        if not self.q > 0.0:
            raise DomainError("v_k needs q > 0", q=self.q)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        k = self.profile.k
        if k == 0:
            return np.exp(-self.scales[0].largest * y)
        s = self.scales[k].largest
        dk = self.profile.deltas[k - 1]
        out = np.zeros_like(y)
        lev = self._level_of(y)
        tails = self.mode_tails()
        for i in np.unique(lev):
            sel = lev == i
            ys = y[sel]
            Wi = self.scales[i]
            if i == k:
                Wp = self.scales[k - 1]
                c, z = Wp.kernel_terms(derivative=True)
                lap = float((c / (s - z)).sum().real)
                out[sel] = dk * self.xis[k - 1] * np.exp(-s * ys) * lap
                continue
            acc = np.zeros_like(ys)
            for D, zeta, vt in zip(Wi.coefficients, Wi.exponents, tails[i]):
                acc += (D * np.exp(-zeta * ys)).real * vt
            out[sel] = self.xis[i] * acc
        return out


def v_k(
    model: LevyModel,
    profile: StepProfile,
    q: float,
    y: float,
    h: float = 2.0**-8,
    method: str = "laplace",
    z_star: Optional[float] = None,
) -> float:
    """delta_k int_{b_k}^inf exp(-phi_k(q) z) w'_{k-1}(z; y) dz.

    ``method="laplace"`` evaluates the infinite tail exactly through the
    kernels' Laplace transforms. ``method="truncate"`` integrates on the grid
    and extends the cut-off until a geometric tail estimate falls below
    ``TAIL_EPS`` relative.
    """
    profile = _check_step(profile)
    if not q > 0.0:
        raise DomainError("v_k needs q > 0", q=q)
    k = profile.k
    if k == 0:
        return math.exp(-right_inverse(model, DriftShift(0.0), q) * y)
    scales = level_scales(model, profile, q)
    s = scales[k].largest
    bk = profile.barriers[k - 1]
    dk = profile.deltas[k - 1]
    head = profile.barriers[: k - 1]
    short = StepProfile(head, profile.deltas[: k - 1])
    if method == "laplace":
        if y > bk:
            return _v_above(scales, profile, y)
        fam = _shifted_family(model, short, q, y, h, bk)
        return dk * fam.tail(s, bk, k - 1)
    if method != "truncate":
        raise DomainError("unknown method", method=method)
    start = max(bk, y)
    span = z_star if z_star is not None else 8.0 / max(s - scales[k - 1].largest, 1e-3)
    return dk * truncated_tail(lambda zmax: _wprime_on(model, short, q, y, h, zmax), s, start, span)


def _v_above(scales, profile: StepProfile, y: float) -> float:
    k = profile.k
    s = scales[k].largest
    Wp = scales[k - 1]
    c, z = Wp.kernel_terms(derivative=True)
    lap = float((c / (s - z)).sum().real)
    return profile.deltas[k - 1] * _xi_level(profile, scales[0].w0, k - 1) * math.exp(-s * y) * lap


def _shifted_family(model, profile: StepProfile, q, y, h, x_max) -> _Family:
    scales = level_scales(model, profile, q)
    i = int(np.searchsorted(profile.barriers, y, side="left"))
    cst = _xi_level(profile, scales[0].w0, i)
    Wi = scales[i]
    N = _nodes(y, h, x_max)
    t = h * np.arange(N + 1)
    c, z = Wi.kernel_terms(derivative=True)
    return _recurse(cst * Wi.value(t), cst * Wi.derivative(t), y, h, profile, scales, i, (cst * c * np.exp(-z * y), z), "w")


def _wprime_on(model, profile, q, y, h, zmax):
    g = _shifted_family(model, profile, q, y, h, zmax).grid()
    return g.x, g.derivatives


def truncated_tail(sampler, s: float, start: float, span: float, panel: float = 1.0, max_doublings: int = 8) -> float:
    """int_start^inf exp(-s z) f(z) dz from grid samples with geometric tail extrapolation.

    ``sampler(zmax)`` returns nodes and samples of f covering ``[start, zmax]``.
    The cut-off doubles until the extrapolated remainder is below
    ``TAIL_EPS`` of the total; panel sums that fail to decrease over 50
    consecutive panels raise TailNotDecaying.
    """
    zmax = start + span
    for _ in range(max_doublings):
        x, f = sampler(zmax)
        sel = x >= start - 1e-12
        x, f = x[sel], f[sel]
        e = np.exp(-s * x) * f
        h = x[1] - x[0]
        cells = 0.5 * h * (e[1:] + e[:-1])
        per = max(1, int(round(panel / h)))
        full = (len(cells) // per) * per
        panels = cells[:full].reshape(-1, per).sum(axis=1)
        total = float(cells.sum())
        if len(panels) >= 50 and np.all(np.diff(np.abs(panels[-50:])) > 0.0):
            raise TailNotDecaying("panel sums are not decreasing", zmax=zmax)
        if len(panels) >= 2 and panels[-2] != 0.0:
            r = panels[-1] / panels[-2]
            if 0.0 <= r < 1.0:
                rem = float(panels[-1] * r / (1.0 - r))
                if abs(rem) <= TAIL_EPS * abs(total + rem):
                    return total + rem
        zmax = start + 2.0 * (zmax - start)
    raise TailNotDecaying("tail did not settle within the extension budget", zmax=zmax)


def resolvent_normalizer(sset: RefractedScaleSet) -> float:
    """Top-level normalization of u: psi'(Phi) for k = 0, else
    delta_k int_{b_k}^inf exp(-phi_k(q) z) u'_{k-1}(z) dz."""
    k = sset.profile.k
    if k == 0:
        return exponent_derivative(sset.model, DriftShift(0.0), sset.scales[0].largest)
    return sset.profile.deltas[k - 1] * sset.u_fam.tail(sset.top_rate, sset.profile.barriers[k - 1], k - 1)
