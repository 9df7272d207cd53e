"""Exact scale functions of the drift-shifted processes, and the grid carrier.

With a rational exponent, ``1/(psi_j(lam) - q)`` is a proper rational function
whose poles are the roots of the numerator polynomial. Partial fractions give
``W(x) = sum_i D_i exp(zeta_i x)`` with ``D_i`` the residues.

The module also holds the product-integration weights shared by every
convolution-type solver in the package: on a uniform grid, an exponential-sum
kernel is integrated exactly against a piecewise-linear density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import BreakpointMisaligned, DegenerateRoots, DomainError, NonConvergence, QueryOutsideGrid
from .levy_model import DriftShift, LevyModel, _psi, mean, rational_form, right_inverse

_DISTINCT_TOL = 1e-8
_ALIGN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ExpSumScale:
    """W(x) = sum D_i exp(zeta_i x) for x >= 0 and 0 below.

    Coefficients and exponents are complex arrays; for the shipped
    hyperexponential models every root is real, and evaluation always returns
    the real part so conjugate pairs cancel.
    """

    coefficients: np.ndarray
    exponents: np.ndarray
    shift: DriftShift
    q: float
    w0: float
    largest: float

    @property
    def terms(self) -> Tuple[Tuple[complex, complex], ...]:
        return tuple(zip(self.coefficients.tolist(), self.exponents.tolist()))

    @property
    def real_terms(self) -> bool:
        return bool(np.all(np.abs(self.exponents.imag) < 1e-14))

    def _sum(self, coefs, x):
        x = np.asarray(x, dtype=float)
        xs = np.maximum(x, 0.0)
        out = (coefs[:, None] * np.exp(np.outer(self.exponents, xs.ravel()))).sum(axis=0).real
        out = np.where(x.ravel() < 0.0, 0.0, out).reshape(x.shape)
        return float(out) if out.ndim == 0 else out

    def value(self, x):
        """W(x); the origin returns the initial value exactly instead of the rounded term sum."""
        out = self._sum(self.coefficients, x)
        if np.ndim(out) == 0:
            return self.w0 if x == 0.0 else out
        return np.where(np.asarray(x) == 0.0, self.w0, out)

    __call__ = value

    def derivative(self, x):
        """Right derivative; at 0 this is W'(0+)."""
        return self._sum(self.coefficients * self.exponents, x)

    def second_derivative(self, x):
        return self._sum(self.coefficients * self.exponents**2, x)

    @property
    def derivative_at_zero(self) -> float:
        return float((self.coefficients * self.exponents).sum().real)

    def integral(self, x):
        """int_0^x W(y) dy, termwise exact."""
        x = np.asarray(x, dtype=float)
        xs = np.maximum(x, 0.0).ravel()
        z = self.exponents[:, None]
        prod = z * xs[None, :]
        safe = np.where(z == 0, 1.0, z)
        ker = np.where(z == 0, xs[None, :] + 0j, _expm1c(prod) / safe)
        out = (self.coefficients[:, None] * ker).sum(axis=0).real.reshape(x.shape)
        return float(out) if out.ndim == 0 else out

    def z_value(self, x):
        return 1.0 + self.q * self.integral(x)

    def laplace(self, lam):
        """int_0^inf exp(-lam x) W(x) dx = sum D_i / (lam - zeta_i)."""
        lam = np.asarray(lam, dtype=float)
        out = (self.coefficients[:, None] / (lam.ravel()[None, :] - self.exponents[:, None])).sum(axis=0)
        out = out.real.reshape(lam.shape)
        return float(out) if out.ndim == 0 else out

    def derivative_laplace(self, s):
        """int_0^inf exp(-s x) W'(x) dx with W' the right derivative on (0, inf)."""
        s = np.asarray(s, dtype=float)
        c = self.coefficients * self.exponents
        out = (c[:, None] / (s.ravel()[None, :] - self.exponents[:, None])).sum(axis=0).real.reshape(s.shape)
        return float(out) if out.ndim == 0 else out

    def kernel_terms(self, derivative: bool = False):
        """(coefficients, exponents) of W or of W' as an exponential sum."""
        if derivative:
            return self.coefficients * self.exponents, self.exponents
        return self.coefficients, self.exponents


def _expm1c(z):
    z = np.asarray(z, dtype=complex)
    if np.all(z.imag == 0):
        return np.expm1(z.real) + 0j
    return np.exp(z) - 1.0


def initial_value(model: LevyModel, shift: DriftShift) -> float:
    """W_j(0): 1/(c - shift) with bounded variation, 0 otherwise."""
    if model.bounded_variation:
        return 1.0 / (model.drift - shift.cumulative_delta)
    return 0.0


def _polish(poly: np.ndarray, root: complex) -> complex:
    dpoly = np.polyder(poly)
    r = complex(root)
    for _ in range(3):
        d = np.polyval(dpoly, r)
        if d == 0:
            break
        step = np.polyval(poly, r) / d
        r -= step
        if abs(step) <= 1e-16 * max(1.0, abs(r)):
            break
    return r


def scale_function(model: LevyModel, shift: DriftShift, q: float) -> ExpSumScale:
    """Partial-fraction scale function of ``psi_j - q``.

    Roots come from companion-matrix eigenvalues with a Newton polish; the
    residues ``D_i = Q(zeta_i)/P'(zeta_i)`` then give the coefficients.
    """
    if q < 0.0:
        raise DomainError("q must be non-negative", q=q)
    if model.bounded_variation and shift.cumulative_delta >= model.drift:
        raise DomainError("drift shift exhausts the drift", shift=shift.cumulative_delta, drift=model.drift)
    num, den = rational_form(model, shift, q)
    raw = np.roots(num)
    if not np.all(np.isfinite(raw)):
        raise NonConvergence("polynomial root finder failed")
    roots = np.array([_polish(num, r) for r in raw], dtype=complex)
    roots.real[np.abs(roots.real) < 1e-14] = 0.0
    roots.imag[np.abs(roots.imag) < 1e-12 * np.maximum(1.0, np.abs(roots.real))] = 0.0
    roots = roots[np.argsort(-roots.real, kind="stable")]
    if len(roots) > 1:
        gaps = np.abs(roots[:, None] - roots[None, :]) + np.eye(len(roots)) * 1e300
        if gaps.min() < _DISTINCT_TOL:
            raise DegenerateRoots("repeated root; perturb q by 1e-9", q=q, roots=roots.real.tolist())
    dnum = np.polyder(num)
    coefs = np.polyval(den, roots) / np.polyval(dnum, roots)
    phi = right_inverse(model, shift, q)
    if abs(roots[0].real - phi) > 1e-8 * max(1.0, phi) or abs(roots[0].imag) > 0:
        raise NonConvergence("dominant exponent disagrees with the right inverse", root=roots[0].real, phi=phi)
    return ExpSumScale(coefs, roots, shift, float(q), initial_value(model, shift), float(phi))


def z_function(scale: ExpSumScale, x):
    """Z(x) = 1 + q int_0^x W; equal to 1 for x <= 0."""
    return scale.z_value(x)


def verify_laplace(scale: ExpSumScale, model: LevyModel, shift: DriftShift, q: float, lam: float) -> float:
    """|sum D_i/(lam - zeta_i) - 1/(psi_j(lam) - q)| at one admissible lam."""
    if not lam > scale.largest:
        raise DomainError("lam must exceed the right inverse", lam=lam, phi=scale.largest)
    exact = 1.0 / (float(_psi(model, shift.cumulative_delta, lam)) - q)
    return abs(scale.laplace(lam) - exact)


def convolve_exact(outer: ExpSumScale, inner: ExpSumScale, z: float) -> float:
    """(outer * inner)(z) = int_0^z outer(z - y) inner(y) dy, termwise exact."""
    total = 0.0 + 0.0j
    for da, za in zip(outer.coefficients, outer.exponents):
        for db, zb in zip(inner.coefficients, inner.exponents):
            diff = zb - za
            if abs(diff) < 1e-13:
                total += da * db * z * np.exp(za * z)
            else:
                total += da * db * np.exp(za * z) * _expm1c(diff * z) / diff
    return float(total.real)


# ---------------------------------------------------------------- grid carrier


@dataclass(frozen=True, eq=False)
class GridFn:
    """Samples of a function and its right derivative on ``origin + m*h``.

    ``jump_factors`` maps a breakpoint to right/left derivative ratio there;
    elsewhere the derivative is continuous.
    """

    origin: float
    h: float
    values: np.ndarray
    derivatives: np.ndarray
    breakpoints: Tuple[float, ...] = ()
    jump_factors: Tuple[float, ...] = ()
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.h <= 0.0:
            raise DomainError("grid spacing must be positive")
        if len(self.values) != len(self.derivatives):
            raise DomainError("values and derivatives differ in length")

    @property
    def n(self) -> int:
        return len(self.values) - 1

    @property
    def end(self) -> float:
        return self.origin + self.n * self.h

    @property
    def x(self) -> np.ndarray:
        return self.origin + self.h * np.arange(self.n + 1)

    def index(self, x: float) -> int:
        """Node index of ``x``; raises if ``x`` is not a node."""
        m = (x - self.origin) / self.h
        r = round(m)
        if abs(m - r) > _ALIGN_TOL * max(1.0, abs(m)) or r < 0 or r > self.n:
            raise BreakpointMisaligned("point is not a grid node", point=x, origin=self.origin, h=self.h)
        return int(r)

    def left_derivatives(self) -> np.ndarray:
        out = self.derivatives.copy()
        for b, f in zip(self.breakpoints, self.jump_factors):
            m = (b - self.origin) / self.h
            r = int(round(m))
            if 0 <= r <= self.n and abs(m - r) <= _ALIGN_TOL * max(1.0, abs(m)) and f != 0.0:
                out[r] = out[r] / f
        return out

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        tol = 1e-9 * self.h
        if np.any(x < self.origin - tol) or np.any(x > self.end + tol):
            raise QueryOutsideGrid("query outside grid", lo=self.origin, hi=self.end)
        t = np.clip((x - self.origin) / self.h, 0.0, self.n)
        i = np.minimum(np.floor(t + 1e-9).astype(int), max(self.n - 1, 0))
        w = t - i
        w = np.where(np.abs(w) < 1e-9, 0.0, w)
        return x, i, w

    def __call__(self, x):
        """Linear interpolation between nodes."""
        x, i, w = self._locate(x)
        if self.n == 0:
            out = np.full(x.shape, self.values[0])
        else:
            out = (1.0 - w) * self.values[i] + w * self.values[i + 1]
        return float(out) if out.ndim == 0 else out

    def hermite(self, x):
        """Cubic Hermite value from node values and one-sided derivatives."""
        x, i, w = self._locate(x)
        if self.n == 0:
            out = np.full(x.shape, self.values[0])
        else:
            left = self.meta.get("left_derivatives")
            left = self.left_derivatives() if left is None else left
            d0 = self.derivatives[i] * self.h
            d1 = left[i + 1] * self.h
            h00 = (1.0 + 2.0 * w) * (1.0 - w) ** 2
            h10 = w * (1.0 - w) ** 2
            h01 = w * w * (3.0 - 2.0 * w)
            h11 = w * w * (w - 1.0)
            out = h00 * self.values[i] + h10 * d0 + h01 * self.values[i + 1] + h11 * d1
        return float(out) if out.ndim == 0 else out

    def derivative(self, x):
        """Right derivative, interpolating right value and left limit of each cell."""
        x, i, w = self._locate(x)
        if self.n == 0:
            out = np.full(x.shape, self.derivatives[0])
        else:
            left = self.left_derivatives()
            out = (1.0 - w) * self.derivatives[i] + w * left[i + 1]
            out = np.where(w == 0.0, self.derivatives[i], out)
            out = np.where((i == self.n - 1) & (w >= 1.0), self.derivatives[self.n], out)
        return float(out) if out.ndim == 0 else out

    def self_consistency(self) -> Tuple[float, float]:
        """Max gap between values and trapezoid re-integration of derivatives.

        Returns ``(max_gap, C)`` with ``max_gap = C * h**2``.
        """
        left = self.left_derivatives()
        incr = 0.5 * self.h * (self.derivatives[:-1] + left[1:])
        rebuilt = self.values[0] + np.concatenate([[0.0], np.cumsum(incr)])
        scale = max(1.0, float(np.max(np.abs(self.values))))
        gap = float(np.max(np.abs(rebuilt - self.values))) / scale
        return gap, gap / self.h**2

    def rows(self):
        return np.column_stack([self.x, self.values, self.derivatives])


def aligned_count(origin: float, h: float, point: float) -> int:
    """Integer m with point == origin + m*h, or BreakpointMisaligned."""
    m = (point - origin) / h
    r = round(m)
    if abs(m - r) > _ALIGN_TOL * max(1.0, abs(m)):
        raise BreakpointMisaligned("breakpoint is not on the grid", point=point, origin=origin, h=h)
    return int(r)


def sample_to_grid(scale: ExpSumScale, d: float, h: float, N: int, breakpoints: Sequence[float] = ()) -> GridFn:
    """Exact node samples of W(x - d) and its right derivative on [d, d + N h]."""
    for b in breakpoints:
        aligned_count(d, h, b)
    x = d + h * np.arange(N + 1)
    return GridFn(
        d,
        h,
        np.asarray(scale.value(x - d)),
        np.asarray(scale.derivative(x - d)),
        tuple(breakpoints),
        tuple(1.0 for _ in breakpoints),
    )


# ---------------------------------------------------------------- product integration


def _series_ab(t: np.ndarray, terms: int = 22):
    a = np.zeros_like(t)
    b = np.zeros_like(t)
    pw = np.ones_like(t)
    fact = 1.0
    for n in range(terms):
        if n:
            pw = pw * (-t)
            fact *= n
        a = a + pw / (fact * (n + 1) * (n + 2))
        b = b + pw / (fact * (n + 2))
    return a, b


def _cell_ab(t: np.ndarray):
    """A(t) = int_0^1 e^{-tu}(1-u) du and B(t) = int_0^1 e^{-tu} u du."""
    t = np.asarray(t, dtype=complex)
    small = np.abs(t) < 0.5
    tt = np.where(small, 1.0, t)
    em = _expm1c(-tt)
    a = (tt + em) / tt**2
    b = (-em - tt * np.exp(-tt)) / tt**2
    sa, sb = _series_ab(np.where(small, t, 0.0))
    return np.where(small, sa, a), np.where(small, sb, b)


def cell_weights(coefs, exps, h: float, n: int):
    """Weights for int over cells of k(x_m - y) times a linear density.

    For ``k(t) = sum c exp(zeta t)`` and cell ``[x_m - j h, x_m - (j-1) h]``
    returns ``alpha[j]`` (weight of the density at the cell's left node) and
    ``beta[j]`` (weight at the right node), ``j = 1..n``; index 0 is zero.
    """
    coefs = np.asarray(coefs, dtype=complex)
    exps = np.asarray(exps, dtype=complex)
    A, B = _cell_ab(exps * h)
    j = np.arange(n + 1)
    growth = np.exp(np.outer(exps, j * h))
    alpha = (h * (coefs * A)[:, None] * growth).sum(axis=0).real
    beta = (h * (coefs * B)[:, None] * growth).sum(axis=0).real
    alpha[0] = 0.0
    beta[0] = 0.0
    return alpha, beta


def product_integral(alpha: np.ndarray, beta: np.ndarray, f_right: np.ndarray, f_left: Optional[np.ndarray] = None):
    """I[m] = sum over cells i < m of alpha[m-i] f_right[i] + beta[m-i] f_left[i+1]."""
    n = len(f_right)
    if f_left is None:
        f_left = f_right
    g = np.array(f_left, dtype=float, copy=True)
    g[0] = 0.0
    part1 = np.convolve(alpha[:n], f_right)[:n]
    part2 = np.convolve(beta[1 : n + 1], g)[:n]
    return part1 + part2
