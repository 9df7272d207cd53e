"""Volterra equations for scale functions under a general rate profile.

The unknown is a derivative ``f`` solving

    Xi(x) f(x) = g0(x) + int_origin^x phi(y) W'(x - y) f(y) dy

with ``Xi = 1 - W(0) phi``. The marching solver integrates the exponential-sum
kernel exactly against a piecewise-linear ``phi * f``; since the kernel is a
short sum of exponentials, the history integral obeys a one-step recurrence
per term and a full solve is linear in the node count. At step barriers both
the left limit and the right value are carried.

The Neumann series ``g + sum_l K^(l) g`` is computed independently with
direct convolutions and comes with the majorant remainder as an error bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter

from .errors import (
    BreakpointMisaligned,
    DiagonalBlowup,
    DomainError,
    MajorantDiverged,
    NonPositiveXi,
    TailNotDecaying,
)
from .levy_model import (
    DriftShift,
    LevyModel,
    RateProfile,
    StepProfile,
    exponent_derivative,
    right_inverse,
)
from .refracted import TAIL_EPS, build_w, level_scale
from .scale_base import ExpSumScale, GridFn, _cell_ab, aligned_count, cell_weights, product_integral

MAX_HALVINGS = 6
MAJORANT_REL = 1e-12
PROBE_ORIGIN = -20.0


# ---------------------------------------------------------------- kernel and forcing


@dataclass(frozen=True, eq=False)
class VolterraKernel:
    """K(x, y) = phi(y) W'((x - y)+) / Xi(x) for the driving process."""

    model: LevyModel
    rate: RateProfile
    q: float
    base: ExpSumScale

    @classmethod
    def build(cls, model: LevyModel, rate: RateProfile, q: float) -> "VolterraKernel":
        return cls(model, rate, q, level_scale(model, 0.0, q))

    @property
    def w0(self) -> float:
        return self.base.w0

    def xi(self, x, left: bool = False):
        phi = self.rate.left_value(x) if left else self.rate.value(x)
        out = 1.0 - self.w0 * np.asarray(phi, dtype=float)
        if np.any(out <= 0.0):
            raise NonPositiveXi("admissibility violated: 1 - W(0) phi <= 0", w0=self.w0)
        return out

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = x - y
        wp = np.where(t >= 0.0, self.base.derivative(np.maximum(t, 0.0)), 0.0)
        return self.rate.value(y) * wp / self.xi(x)

    def a_T(self, T: float) -> float:
        """sup_{y <= T} phi(y) / Xi(T); phi is non-decreasing so both sit at T."""
        phi = float(self.rate.value(T))
        return phi / float(self.xi(T))

    def majorant_probe(self, T: float, s_max: float = 1e6) -> float:
        """Smallest probe s = 2^j with a_T int exp(-s x) W'(x) dx < 1."""
        a = self.a_T(T)
        if a == 0.0:
            return 1.0
        s = max(1.0, 2.0 * self.base.largest + 1.0)
        while s <= s_max:
            if a * self.base.derivative_laplace(s) < 1.0:
                return s
            s *= 2.0
        raise MajorantDiverged("majorant Laplace value stays >= 1", a_T=a, s_max=s_max)


@dataclass(frozen=True, eq=False)
class ForcingTerm:
    """Free term g0 (before division by Xi) and the matching seed for values.

    ``kind`` is ``"w"`` (g0 = W'((x-d)+), seed W(x-d)), ``"z"``
    (g0 = q W(x), seed Z(x)) or ``"u"`` (g0 = Phi exp(Phi x), seed exp(Phi x)).
    """

    kind: str
    base: ExpSumScale
    origin: float = 0.0

    @classmethod
    def w_prime(cls, kernel: VolterraKernel, d: float) -> "ForcingTerm":
        return cls("w", kernel.base, d)

    @classmethod
    def z_prime(cls, kernel: VolterraKernel) -> "ForcingTerm":
        return cls("z", kernel.base, 0.0)

    @classmethod
    def u_prime(cls, kernel: VolterraKernel) -> "ForcingTerm":
        return cls("u", kernel.base, 0.0)

    def g0(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "w":
            return self.base.derivative(x - self.origin)
        if self.kind == "z":
            return self.base.q * self.base.value(x)
        if self.kind == "u":
            phi = self.base.largest
            return phi * np.exp(phi * x)
        raise DomainError("unknown forcing kind", kind=self.kind)

    def seed(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "w":
            return self.base.value(x - self.origin)
        if self.kind == "z":
            return self.base.z_value(x)
        return np.exp(self.base.largest * x)

    @property
    def initial(self) -> float:
        """Boundary value of the function at the origin."""
        return {"w": self.base.w0, "z": 1.0}.get(self.kind, math.exp(self.base.largest * self.origin))


# ---------------------------------------------------------------- grid helpers


def _grid(origin: float, h: float, x_max: float) -> np.ndarray:
    n = max(1, int(math.ceil((x_max - origin) / h - 1e-9)))
    return origin + h * np.arange(n + 1)


def _breaks_on(rate: RateProfile, origin: float, end: float, h: float) -> List[float]:
    out = []
    for b in rate.breakpoints:
        if origin < b <= end:
            aligned_count(origin, h, b)
            out.append(b)
    return out


@dataclass
class _Setup:
    x: np.ndarray
    h: float
    g0: np.ndarray
    phi_r: np.ndarray
    phi_l: np.ndarray
    xi_r: np.ndarray
    xi_l: np.ndarray
    breaks: List[float]


def _setup(kernel: VolterraKernel, forcing: ForcingTerm, h: float, x_max: float) -> _Setup:
    x = _grid(forcing.origin, h, x_max)
    breaks = _breaks_on(kernel.rate, x[0], x[-1], h)
    return _Setup(
        x,
        h,
        np.asarray(forcing.g0(x), dtype=float),
        np.asarray(kernel.rate.value(x), dtype=float),
        np.asarray(kernel.rate.left_value(x), dtype=float),
        kernel.xi(x),
        kernel.xi(x, left=True),
        breaks,
    )


def _recurrence_weights(coefs, exps, h: float):
    """Per-term growth exp(zeta h) and cell weights h c A(zeta h), h c B(zeta h)."""
    coefs = np.asarray(coefs, dtype=complex)
    exps = np.asarray(exps, dtype=complex)
    A, B = _cell_ab(exps * h)
    return np.exp(exps * h), h * coefs * A, h * coefs * B


def _history(coefs, exps, h: float, rho_r: np.ndarray, rho_l: np.ndarray) -> np.ndarray:
    """I[m] = int_x0^x_m k(x_m - y) rho(y) dy for a piecewise-linear rho, by recurrence.

    Equal to ``product_integral`` up to rounding, in linear time.
    """
    E, a, b = _recurrence_weights(coefs, exps, h)
    out = np.zeros(len(rho_r))
    if len(rho_r) < 2:
        return out
    for El, al, bl in zip(E, a, b):
        drive = np.zeros(len(rho_r), dtype=complex)
        drive[1:] = El * (al * rho_r[:-1] + bl * rho_l[1:])
        out += lfilter([1.0], [1.0, -El], drive).real
    return out


def _march(kernel: VolterraKernel, st: _Setup) -> Tuple[np.ndarray, np.ndarray]:
    """Right values and left limits of the derivative at every node."""
    c, z = kernel.base.kernel_terms(derivative=True)
    E, a, b = _recurrence_weights(c, z, st.h)
    E, a, b = E.tolist(), a.tolist(), b.tolist()
    terms = range(len(E))
    beta1 = sum((E[l] * b[l]).real for l in terms)
    n = len(st.x)
    f_r = np.empty(n)
    f_l = np.empty(n)
    g0, pr, pl, xr, xl = st.g0.tolist(), st.phi_r.tolist(), st.phi_l.tolist(), st.xi_r.tolist(), st.xi_l.tolist()
    f_r[0] = g0[0] / xr[0]
    f_l[0] = f_r[0]
    S = [0j for _ in terms]
    rho_prev = pr[0] * f_r[0]
    for m in range(1, n):
        part = 0.0
        for l in terms:
            S[l] = E[l] * (S[l] + a[l] * rho_prev)
            part += S[l].real
        diag = beta1 * pl[m]
        if diag >= xl[m]:
            raise DiagonalBlowup("diagonal weight reaches 1", node=m, h=st.h, weight=diag / xl[m])
        fl = (g0[m] + part) / (xl[m] - diag)
        rho_l = pl[m] * fl
        fr = (g0[m] + part + beta1 * rho_l) / xr[m]
        for l in terms:
            S[l] += E[l] * b[l] * rho_l
        f_l[m] = fl
        f_r[m] = fr
        rho_prev = pr[m] * fr
    return f_r, f_l


def _assemble(kernel: VolterraKernel, forcing: ForcingTerm, st: _Setup, f_r, f_l, meta: dict) -> GridFn:
    c, z = kernel.base.kernel_terms()
    rho_r = st.phi_r * f_r
    rho_l = st.phi_l * f_l
    vals = np.asarray(forcing.seed(st.x), dtype=float) + _history(c, z, st.h, rho_r, rho_l)
    facs = []
    for bp in st.breaks:
        m = aligned_count(st.x[0], st.h, bp)
        facs.append(f_r[m] / f_l[m] if f_l[m] != 0.0 else 1.0)
    meta = dict(meta, kind=forcing.kind, q=kernel.q, h=st.h, method=meta.get("method", "march"))
    out = GridFn(float(st.x[0]), st.h, vals, f_r.copy(), tuple(st.breaks), tuple(facs), meta)
    out.meta["left_derivatives"] = f_l.copy()
    return out


def solve(kernel: VolterraKernel, forcing: ForcingTerm, h: float, x_max: float) -> GridFn:
    """Marching solve; halves ``h`` when the diagonal weight reaches 1."""
    for halving in range(MAX_HALVINGS + 1):
        st = _setup(kernel, forcing, h, x_max)
        try:
            f_r, f_l = _march(kernel, st)
        except DiagonalBlowup:
            if halving == MAX_HALVINGS:
                raise
            h *= 0.5
            continue
        return _assemble(kernel, forcing, st, f_r, f_l, {"halvings": halving})
    raise DiagonalBlowup("unreachable")  # pragma: no cover


def _check(model: LevyModel, rate: RateProfile) -> None:
    from .levy_model import validate

    validate(model, rate).raise_first()


def solve_w_prime(
    model: LevyModel, rate: RateProfile, q: float, d: float = 0.0, h: float = 2.0**-8, x_max: float = 10.0
) -> GridFn:
    """w(.; d) and its right derivative on [d, x_max]."""
    _check(model, rate)
    if x_max <= d:
        raise DomainError("grid must extend above the origin", d=d, x_max=x_max)
    kernel = VolterraKernel.build(model, rate, q)
    out = solve(kernel, ForcingTerm.w_prime(kernel, d), h, x_max)
    out.meta["d"] = d
    return out


def solve_z_prime(model: LevyModel, rate: RateProfile, q: float, h: float = 2.0**-8, x_max: float = 10.0) -> GridFn:
    """z and its right derivative on [0, x_max]; z(0) = 1."""
    _check(model, rate)
    kernel = VolterraKernel.build(model, rate, q)
    return solve(kernel, ForcingTerm.z_prime(kernel), h, x_max)


def richardson_error(solver: Callable[[float], GridFn], h: float) -> Tuple[GridFn, np.ndarray]:
    """Solution at ``h`` plus a per-node error estimate |f_h - f_2h| / 3 on shared nodes.

    Nodes of the fine grid that are not on the coarse one take the larger
    neighbouring estimate.
    """
    fine = solver(h)
    coarse = solver(2.0 * h)
    n = min(coarse.n, fine.n // 2)
    est = np.abs(fine.derivatives[: 2 * n + 1 : 2] - coarse.derivatives[: n + 1]) / 3.0
    full = np.empty(fine.n + 1)
    full[: 2 * n + 1 : 2] = est
    full[1 : 2 * n : 2] = np.maximum(est[:-1], est[1:])
    full[2 * n + 1 :] = est[-1]
    return fine, full


# ---------------------------------------------------------------- Neumann series


@dataclass
class NeumannBound:
    """Majorant terms a^l (W')^{*l} on a grid of spacing h starting at 0."""

    a_T: float
    h: float
    terms: np.ndarray
    probe_s: float

    @property
    def zeta(self) -> np.ndarray:
        return self.terms.sum(axis=0)

    def partial(self, L: int) -> np.ndarray:
        return self.terms[:L].sum(axis=0)

    def remainder(self, L: int) -> np.ndarray:
        """Terms beyond L, plus a geometric estimate for those never computed."""
        last = self.terms[-1]
        tail = np.zeros_like(last)
        if len(self.terms) >= 2 and self.terms[-2][-1] > 0.0:
            r = last[-1] / self.terms[-2][-1]
            if 0.0 <= r < 1.0:
                tail = last * r / (1.0 - r)
        return self.terms[L:].sum(axis=0) + tail


def majorant(kernel: VolterraKernel, T: float, h: float, n: int, max_terms: int = 400) -> NeumannBound:
    """Majorant series on n+1 nodes, adding terms until the last adds < 1e-12 of zeta(T)."""
    s = kernel.majorant_probe(T)
    a = kernel.a_T(T)
    t = h * np.arange(n + 1)
    first = a * kernel.base.derivative(t)
    terms = [first]
    if a > 0.0:
        al, be = cell_weights(*kernel.base.kernel_terms(derivative=True), h, n + 1)
        running = first.copy()
        for _ in range(max_terms):
            nxt = a * product_integral(al, be, terms[-1])
            terms.append(nxt)
            running = running + nxt
            if abs(nxt[-1]) <= MAJORANT_REL * abs(running[-1]):
                break
        else:
            raise MajorantDiverged("majorant terms did not decay", a_T=a, T=T)
    return NeumannBound(a, h, np.array(terms), s)


def _apply_discrete(kernel: VolterraKernel, st: _Setup, al, be, f_r, f_l):
    """One Picard step with the same discrete operator as the marching solver."""
    integral = product_integral(al, be, st.phi_r * f_r, st.phi_l * f_l)
    return (st.g0 + integral) / st.xi_r, (st.g0 + integral) / st.xi_l


def neumann_apply(
    kernel: VolterraKernel, forcing: ForcingTerm, L: int, h: float = 2.0**-8, x_max: float = 5.0
) -> Tuple[GridFn, float]:
    """u_{L+1} = g + sum_{l<=L} K^(l) g and the majorant remainder bound.

    The per-node bound is stored in ``meta["bound"]``; the returned real is
    its maximum over the grid.
    """
    if L < 1:
        raise DomainError("need at least one Neumann term", L=L)
    st = _setup(kernel, forcing, h, x_max)
    n = len(st.x)
    al, be = cell_weights(*kernel.base.kernel_terms(derivative=True), h, n)
    f_r = st.g0 / st.xi_r
    f_l = st.g0 / st.xi_l
    history = [f_r.copy()]
    for _ in range(L):
        f_r, f_l = _apply_discrete(kernel, st, al, be, f_r, f_l)
        history.append(f_r.copy())
    maj = majorant(kernel, float(st.x[-1]), h, n - 1)
    rem = maj.remainder(L)
    g = st.g0 / st.xi_r
    conv = np.convolve(rem, g)[:n] * h
    conv -= 0.5 * h * (rem[0] * g + rem[np.arange(n)] * g[0])
    bound = np.maximum(conv, 0.0)
    out = _assemble(kernel, forcing, st, f_r, f_l, {"method": "neumann", "L": L})
    out.meta["bound"] = bound
    out.meta["iterates"] = np.array(history)
    out.meta["a_T"] = maj.a_T
    out.meta["probe_s"] = maj.probe_s
    return out, float(bound.max())


def kernel_iterate_check(kernel: VolterraKernel, T: float, lo: float = 0.0, L: int = 4, probes: int = 20, refine: int = 10):
    """Max of K^(l) / (a_T^l (W')^{*l}) over a probes x probes set, for l = 1..L.

    Iterated kernels come from trapezoid matrix products on a grid ``refine``
    times finer than the probe set; the majorant uses the same weights.
    """
    m = probes * refine
    x = np.linspace(lo, T, m + 1)
    h = x[1] - x[0]
    X, Y = np.meshgrid(x, x, indexing="ij")
    lower = X >= Y
    K = np.where(lower, kernel(X, Y), 0.0)
    a = kernel.a_T(T)
    M = np.where(lower, a * kernel.base.derivative(np.maximum(X - Y, 0.0)), 0.0)

    def step(P, Q):
        out = h * (P @ Q)
        out -= 0.5 * h * (np.diag(P)[:, None] * Q + P * np.diag(Q)[None, :])
        return np.where(lower, out, 0.0)

    idx = np.arange(0, m + 1, refine)
    ratios: Dict[int, float] = {}
    Kl, Ml = K, M
    for l in range(1, L + 1):
        if l > 1:
            Kl, Ml = step(Kl, K), step(Ml, M)
        kp, mp = Kl[np.ix_(idx, idx)], Ml[np.ix_(idx, idx)]
        live = mp > 0.0
        ratios[l] = float(np.max(kp[live] / mp[live])) if np.any(live) else 0.0
        if np.any((mp == 0.0) & (kp > 0.0)):
            ratios[l] = math.inf
    return ratios


# ---------------------------------------------------------------- approximating steps


def approximate_profile(rate: RateProfile, n: int) -> StepProfile:
    """Step profile on the dyadic mesh l 2^-n, l = 1..n 2^n, taking phi's increments."""
    if n < 1:
        raise DomainError("n must be at least 1", n=n)
    b = np.arange(1, n * 2**n + 1) / 2.0**n
    vals = np.asarray(rate.value(np.concatenate([[0.0], b])), dtype=float)
    inc = np.diff(vals)
    keep = inc > 0.0
    return StepProfile(tuple(b[keep].tolist()), tuple(inc[keep].tolist()))


def convergence_report(
    model: LevyModel,
    rate: RateProfile,
    q: float,
    d: float = 0.0,
    n_list: Sequence[int] = (2, 3, 4, 5, 6),
    h: float = 2.0**-8,
    x_max: float = 8.0,
) -> List[Dict[str, float]]:
    """Sup-node distance between the step solutions w_n' and the Volterra w'."""
    ref = solve_w_prime(model, rate, q, d, h, x_max)
    rows = []
    for n in n_list:
        if h > 2.0**-n:
            raise BreakpointMisaligned("grid too coarse for the dyadic mesh", n=n, h=h)
        approx = approximate_profile(rate, n)
        step = build_w(model, approx, q, d, h, x_max)
        m = min(step.n, ref.n) + 1
        err = float(np.max(np.abs(step.derivatives[:m] - ref.derivatives[:m])))
        rows.append({"n": n, "sup_error": err, "grid_h": h})
    return rows


# ---------------------------------------------------------------- limit functions


def _top_scale(model: LevyModel, rate: RateProfile, q: float) -> ExpSumScale:
    return level_scale(model, float(rate.sup), q)


def ratio_limit(
    build: Callable[[float], Tuple[np.ndarray, np.ndarray, np.ndarray]],
    start: float,
    span: float = 24.0,
    tol: float = TAIL_EPS,
    max_doublings: int = 3,
) -> Tuple[float, float]:
    """lim_{a->inf} num(a)/den(a) from samples at unit spacing.

    ``build(a_max)`` returns nodes, numerator and denominator on ``[.., a_max]``.
    On a grid the ratio settles geometrically and then drifts linearly, at a
    rate of order h^2, because the discrete growth rate is slightly off. The
    drift is read from the last quarter of the increments; the value is taken
    where the geometric transient has died out. Returns the value and an
    error estimate (accumulated drift plus the transient's remainder).
    """
    a_max = start + span
    for _ in range(max_doublings + 1):
        x, num, den = build(a_max)
        pts = np.arange(math.ceil(start), math.floor(x[-1] + 1e-9) + 1)
        if len(pts) >= 12:
            idx = np.searchsorted(x, pts - 1e-9)
            r = num[idx] / den[idx]
            if not np.all(np.isfinite(r)):
                raise TailNotDecaying("ratio overflowed", a_max=a_max)
            diffs = np.diff(r)
            tail = diffs[-max(3, len(diffs) // 4) :]
            drift = float(np.mean(tail))
            scale = max(abs(float(r[-1])), 1e-300)
            if float(np.ptp(tail)) <= 0.1 * abs(drift) + tol * scale:
                transient = np.abs(diffs - drift)
                ok = transient <= tol * scale
                settled = len(ok) - int(np.argmin(ok[::-1])) if ok[-1] else None
                if ok.all():
                    settled = 0
                if settled is not None and settled < len(r) - 1:
                    rem = float(np.sum(diffs[settled:] - drift))
                    err = abs(drift) * (pts[settled] - pts[0] + 1.0) + abs(rem)
                    return float(r[settled] + rem), err
        a_max = start + 2.0 * (a_max - start)
    raise TailNotDecaying("ratio did not settle within the extension budget", a_max=a_max)


def _tail_start(rate: RateProfile) -> float:
    bps = rate.breakpoints
    return float(bps[-1]) + 1.0 if bps else 4.0


def u_general(
    model: LevyModel, rate: RateProfile, q: float, h: float = 2.0**-8, x_max: float = 10.0
) -> GridFn:
    """u on [0, x_max]; below 0 it equals exp(Phi(q) x).

    For q > 0 the derivative solves u' = Phi exp(Phi x)/Xi + K u'. When
    Phi(q) = 0 the limit degenerates and the value comes from the probe
    w(x; d)/W(-d) at d = -20.
    """
    _check(model, rate)
    if q < 0.0:
        raise DomainError("q must be non-negative", q=q)
    kernel = VolterraKernel.build(model, rate, q)
    if kernel.base.largest > 0.0:
        out = solve(kernel, ForcingTerm.u_prime(kernel), h, x_max)
        out.meta["phi"] = kernel.base.largest
        return out
    return u_probe(model, rate, q, PROBE_ORIGIN, h, x_max)


def u_probe(model: LevyModel, rate: RateProfile, q: float, d: float = PROBE_ORIGIN, h: float = 2.0**-8, x_max: float = 10.0) -> GridFn:
    """w(x; d)/W(-d) restricted to [0, x_max]."""
    w = solve_w_prime(model, rate, q, d, h, x_max)
    scale = level_scale(model, 0.0, q).value(-d)
    m = aligned_count(d, w.h, 0.0)
    left = w.meta["left_derivatives"][m:] / scale
    out = GridFn(0.0, w.h, w.values[m:] / scale, w.derivatives[m:] / scale, w.breakpoints, w.jump_factors,
                 dict(w.meta, kind="u", method="probe", d=d))
    out.meta["left_derivatives"] = left
    return out


def v_general(model: LevyModel, rate: RateProfile, q: float, d: float = 0.0, h: float = 2.0**-8) -> float:
    """lim_{a->inf} w(a; d) / W_top(a), with W_top the scale function at drift c - sup phi.

    With phi = 0 this is exp(-Phi(q) d), the classical limit.
    """
    if not q > 0.0:
        raise DomainError("v needs q > 0", q=q)
    _check(model, rate)
    if rate.is_zero:
        return math.exp(-right_inverse(model, DriftShift(0.0), q) * d)
    top = _top_scale(model, rate, q)
    start = max(_tail_start(rate), d + 1.0)

    def build(a_max):
        g = solve_w_prime(model, rate, q, d, h, a_max)
        return g.x, g.values, top.value(g.x)

    return ratio_limit(build, start)[0]


def a_of_q(model: LevyModel, rate: RateProfile, q: float, h: float = 2.0**-8) -> float:
    """lim_{a->inf} u(a) / W_top(a); equals psi'(Phi(q)) when phi = 0."""
    if not q > 0.0:
        raise DomainError("A(q) needs q > 0", q=q)
    _check(model, rate)
    kernel = VolterraKernel.build(model, rate, q)
    if rate.is_zero:
        return float(exponent_derivative(model, DriftShift(0.0), kernel.base.largest))
    kernel.majorant_probe(_tail_start(rate))
    top = _top_scale(model, rate, q)

    def build(a_max):
        g = u_general(model, rate, q, h, a_max)
        return g.x, g.values, top.value(g.x)

    value = ratio_limit(build, _tail_start(rate))[0]
    if not value > 0.0:
        raise NonPositiveXi("normalizer A(q) is not positive", value=value)
    return value
