"""Spectrally negative Levy models with rational Laplace exponents.

Jumps are hyperexponential, so the exponent is a rational function of the
argument and every downstream scale function is an exact exponential sum.
Bounded-variation models are parameterized by their total drift ``c``
directly: with ``sigma == 0`` the ``gamma`` field *is* ``c`` and no small-jump
compensation appears.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DomainError,
    InadmissibleProfile,
    InvalidModel,
    NonConvergence,
    NonMonotoneProfile,
)

_ROOT_TOL = 1e-12
_MAX_ITER = 200


@dataclass(frozen=True)
class JumpSpec:
    """Downward jump law: intensity times a hyperexponential mixture.

    An empty ``rates`` tuple means no jumps. Magnitudes are positive; the
    process jumps by ``-J``.
    """

    intensity: float = 0.0
    weights: Tuple[float, ...] = ()
    rates: Tuple[float, ...] = ()

    @classmethod
    def none(cls) -> "JumpSpec":
        return cls()

    @classmethod
    def exponential(cls, intensity: float, rate: float) -> "JumpSpec":
        return cls(float(intensity), (1.0,), (float(rate),))

    @classmethod
    def hyperexponential(
        cls, intensity: float, weights: Sequence[float], rates: Sequence[float]
    ) -> "JumpSpec":
        return cls(float(intensity), tuple(map(float, weights)), tuple(map(float, rates)))

    @property
    def kind(self) -> str:
        if not self.rates or self.intensity == 0.0:
            return "none"
        return "exponential" if len(self.rates) == 1 else "hyperexponential"

    @property
    def active(self) -> Tuple[Tuple[float, float], ...]:
        """(weight, rate) pairs with nonzero weight."""
        if self.kind == "none":
            return ()
        return tuple((p, m) for p, m in zip(self.weights, self.rates) if p > 0.0)

    @property
    def mean_size(self) -> float:
        return sum(p / m for p, m in self.active)

    def laplace(self, lam):
        """E[exp(-lam J)] for the jump magnitude J."""
        lam = np.asarray(lam)
        out = np.zeros_like(lam, dtype=np.result_type(lam, float))
        for p, m in self.active:
            out = out + p * m / (m + lam)
        return out

    def check(self) -> None:
        if self.kind == "none":
            return
        if not (self.intensity > 0.0 and math.isfinite(self.intensity)):
            raise InvalidModel("jump intensity must be positive", intensity=self.intensity)
        if len(self.weights) != len(self.rates):
            raise InvalidModel("weights and rates differ in length")
        if any(p < 0.0 for p in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise InvalidModel("weights must be non-negative and sum to 1", weights=self.weights)
        if any(not (m > 0.0 and math.isfinite(m)) for m in self.rates):
            raise InvalidModel("rates must be positive", rates=self.rates)
        if len(set(self.rates)) != len(self.rates):
            raise InvalidModel("rates must be distinct", rates=self.rates)


@dataclass(frozen=True)
class LevyModel:
    """Triplet-style description ``(gamma, sigma, jumps)``.

    ``psi(lam) = gamma*lam + sigma**2*lam**2/2 + intensity*(E[exp(-lam J)] - 1)``.
    """

    gamma: float
    sigma: float = 0.0
    jumps: JumpSpec = field(default_factory=JumpSpec.none)
    name: str = ""

    def __post_init__(self):
        if not math.isfinite(self.gamma) or not math.isfinite(self.sigma):
            raise InvalidModel("gamma and sigma must be finite")
        if self.sigma < 0.0:
            raise InvalidModel("sigma must be non-negative", sigma=self.sigma)
        self.jumps.check()
        if self.sigma == 0.0 and self.gamma <= 0.0:
            raise InvalidModel(
                "bounded-variation model needs positive drift (else it is a negative subordinator)",
                drift=self.gamma,
            )

    @property
    def bounded_variation(self) -> bool:
        return self.sigma == 0.0

    @property
    def variation(self) -> str:
        return "bounded" if self.bounded_variation else "unbounded"

    @property
    def drift(self) -> Optional[float]:
        """Total drift ``c`` in the bounded-variation case, else ``None``."""
        return self.gamma if self.bounded_variation else None

    @property
    def jump_rates(self) -> Tuple[float, ...]:
        return tuple(m for _, m in self.jumps.active)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "sigma": self.sigma,
            "jumps": {
                "intensity": self.jumps.intensity,
                "weights": list(self.jumps.weights),
                "rates": list(self.jumps.rates),
            },
        }


@dataclass(frozen=True)
class DriftShift:
    """Cumulative drain ``delta_1 + ... + delta_j`` applied to the drift."""

    cumulative_delta: float = 0.0
    index: int = 0

    def __post_init__(self):
        if self.cumulative_delta < 0.0:
            raise DomainError("cumulative drain must be non-negative", value=self.cumulative_delta)


NO_SHIFT = DriftShift()


def laplace_exponent(model: LevyModel, shift: DriftShift, lam):
    """psi_j(lam) = psi(lam) - shift*lam, exact closed form."""
    arr = np.asarray(lam, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("Laplace exponent evaluated at a negative argument")
    val = _psi(model, shift.cumulative_delta, arr)
    return float(val) if np.ndim(val) == 0 else val


def _psi(model: LevyModel, s: float, lam):
    """Unchecked exponent; accepts complex arguments."""
    lam = np.asarray(lam)
    out = (model.gamma - s) * lam + 0.5 * model.sigma**2 * lam * lam
    for p, m in model.jumps.active:
        out = out - model.jumps.intensity * p * lam / (m + lam)
    return out


def _dpsi(model: LevyModel, s: float, lam):
    lam = np.asarray(lam)
    out = (model.gamma - s) + model.sigma**2 * lam
    for p, m in model.jumps.active:
        out = out - model.jumps.intensity * p * m / (m + lam) ** 2
    return out


def exponent_derivative(model: LevyModel, shift: DriftShift, lam):
    val = _dpsi(model, shift.cumulative_delta, np.asarray(lam, dtype=float))
    return float(val) if np.ndim(val) == 0 else val


def mean(model: LevyModel) -> float:
    """E[X(1)] = psi'(0+)."""
    return model.gamma - model.jumps.intensity * model.jumps.mean_size


def right_inverse(model: LevyModel, shift: DriftShift, q: float) -> float:
    """Largest non-negative root of psi_j(lam) = q.

    Newton steps kept inside a bisection bracket. For ``q == 0`` the trivial
    root is divided out, so the search runs on ``psi_j(lam)/lam``.
    """
    if q < 0.0 or not math.isfinite(q):
        raise DomainError("q must be non-negative", q=q)
    s = shift.cumulative_delta
    if q == 0.0:
        if mean(model) - s >= 0.0:
            return 0.0

        def f(x):
            g = model.gamma - s + 0.5 * model.sigma**2 * x
            for p, m in model.jumps.active:
                g -= model.jumps.intensity * p / (m + x)
            return g

        def df(x):
            g = 0.5 * model.sigma**2
            for p, m in model.jumps.active:
                g += model.jumps.intensity * p / (m + x) ** 2
            return g

    else:

        def f(x):
            return float(_psi(model, s, x)) - q

        def df(x):
            return float(_dpsi(model, s, x))

    lo, hi = 0.0, 1.0
    n = 0
    while f(hi) <= 0.0:
        lo, hi = hi, 2.0 * hi
        n += 1
        if n > 1100:
            raise NonConvergence("could not bracket the right inverse", q=q)
    x = hi
    for _ in range(_MAX_ITER):
        fx = f(x)
        if fx > 0.0:
            hi = x
        else:
            lo = x
        d = df(x)
        step = fx / d if d > 0.0 else math.inf
        nxt = x - step
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - x) <= _ROOT_TOL or hi - lo <= _ROOT_TOL:
            return nxt
        x = nxt
    raise NonConvergence("right inverse did not converge", q=q, bracket=(lo, hi))


def rational_form(model: LevyModel, shift: DriftShift, q: float):
    """Numerator and denominator coefficients (highest power first) with
    ``psi_j(lam) - q = P(lam) / Q(lam)`` and ``Q = prod(lam + mu_i)``."""
    s = shift.cumulative_delta
    base = np.array([0.5 * model.sigma**2, model.gamma - s, -q])
    if model.sigma == 0.0:
        base = base[1:]
    den = np.array([1.0])
    for m in model.jump_rates:
        den = np.polymul(den, [1.0, m])
    num = np.polymul(base, den)
    for i, (p, m) in enumerate(model.jumps.active):
        other = np.array([1.0])
        for j, m2 in enumerate(model.jump_rates):
            if j != i:
                other = np.polymul(other, [1.0, m2])
        num = np.polysub(num, model.jumps.intensity * p * np.polymul([1.0, 0.0], other))
    return np.trim_zeros(np.atleast_1d(num), "f"), den


# ---------------------------------------------------------------- rate profiles


class RateProfile:
    """Level-dependent drain phi. Subclasses are immutable."""

    kind = "abstract"

    def value(self, x):
        raise NotImplementedError

    def left_value(self, x):
        return self.value(x)

    def derivative(self, x):
        raise NotImplementedError

    @property
    def sup(self) -> float:
        raise NotImplementedError

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return ()

    @property
    def is_step(self) -> bool:
        return False

    @property
    def is_zero(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class StepProfile(RateProfile):
    """phi(x) = sum_j delta_j 1{x >= b_j}: right-continuous steps."""

    barriers: Tuple[float, ...] = ()
    deltas: Tuple[float, ...] = ()
    kind = "step"

    def __post_init__(self):
        object.__setattr__(self, "barriers", tuple(map(float, self.barriers)))
        object.__setattr__(self, "deltas", tuple(map(float, self.deltas)))
        if len(self.barriers) != len(self.deltas):
            raise NonMonotoneProfile("barriers and increments differ in length")

    @property
    def k(self) -> int:
        return len(self.barriers)

    @property
    def is_step(self) -> bool:
        return True

    @property
    def is_zero(self) -> bool:
        return self.k == 0

    @property
    def cumulative(self) -> Tuple[float, ...]:
        """(S_0, ..., S_k) with S_j = delta_1 + ... + delta_j."""
        return tuple(np.concatenate([[0.0], np.cumsum(self.deltas)]).tolist())

    def shift(self, j: int) -> DriftShift:
        return DriftShift(self.cumulative[j], j)

    def level(self, x: float) -> int:
        """Number of barriers b_j <= x."""
        return int(np.searchsorted(self.barriers, x, side="right"))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.barriers, x, side="right")
        out = np.asarray(self.cumulative)[idx]
        return float(out) if out.ndim == 0 else out

    def left_value(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.barriers, x, side="left")
        out = np.asarray(self.cumulative)[idx]
        return float(out) if out.ndim == 0 else out

    def derivative(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    @property
    def sup(self) -> float:
        return float(sum(self.deltas))

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return self.barriers

    def to_dict(self) -> dict:
        return {"type": "step", "barriers": list(self.barriers), "deltas": list(self.deltas)}


ZERO_RATE = StepProfile()


@dataclass(frozen=True)
class SmoothLinearClamp(RateProfile):
    """min(slope*x, cap) on x > 0 with a C1 quadratic blend of half-width ``blend``."""

    slope: float
    cap: float
    blend: float = 0.05
    kind = "linear_clamp"

    @property
    def kink(self) -> float:
        return self.cap / self.slope

    def value(self, x):
        x = np.asarray(x, dtype=float)
        a, xs, e = self.slope, self.kink, self.blend
        out = np.where(x > 0.0, np.minimum(a * x, self.cap), 0.0)
        if e > 0.0:
            inb = (x >= xs - e) & (x <= xs + e)
            out = np.where(inb, a * x - a * (x - xs + e) ** 2 / (4.0 * e), out)
        return float(out) if out.ndim == 0 else out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        a, xs, e = self.slope, self.kink, self.blend
        out = np.where((x > 0.0) & (x < xs), a, 0.0)
        if e > 0.0:
            inb = (x >= xs - e) & (x <= xs + e)
            out = np.where(inb, a - a * (x - xs + e) / (2.0 * e), out)
        return float(out) if out.ndim == 0 else out

    @property
    def sup(self) -> float:
        return float(self.cap)

    def to_dict(self) -> dict:
        return {"type": "linear_clamp", "slope": self.slope, "cap": self.cap, "blend": self.blend}


@dataclass(frozen=True)
class SmoothSaturating(RateProfile):
    """cap * (1 - exp(-rate*x)) on x > 0."""

    cap: float
    rate: float
    kind = "saturating"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x > 0.0, -self.cap * np.expm1(-self.rate * np.maximum(x, 0.0)), 0.0)
        return float(out) if out.ndim == 0 else out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x > 0.0, self.cap * self.rate * np.exp(-self.rate * np.maximum(x, 0.0)), 0.0)
        return float(out) if out.ndim == 0 else out

    @property
    def sup(self) -> float:
        return float(self.cap)

    def to_dict(self) -> dict:
        return {"type": "saturating", "cap": self.cap, "rate": self.rate}


# ---------------------------------------------------------------- admissibility


@dataclass(frozen=True)
class AdmissibilityReport:
    checks: Dict[str, Tuple[bool, str]]

    @property
    def ok(self) -> bool:
        return all(passed for passed, _ in self.checks.values())

    def failures(self) -> Dict[str, str]:
        return {k: msg for k, (passed, msg) in self.checks.items() if not passed}

    def raise_first(self) -> None:
        """Raise the named error matching the first failed check."""
        for key, (passed, msg) in self.checks.items():
            if not passed:
                if key in ("monotone", "barriers_ordered"):
                    raise NonMonotoneProfile(msg, check=key)
                raise InadmissibleProfile(msg, check=key)


def validate(model: LevyModel, profile: RateProfile) -> AdmissibilityReport:
    """Report-style admissibility check; never raises."""
    checks: Dict[str, Tuple[bool, str]] = {}
    if isinstance(profile, StepProfile):
        bad = [d for d in profile.deltas if not (d > 0.0 and math.isfinite(d))]
        checks["monotone"] = (not bad, "increments must be positive" if bad else "ok")
        b = np.asarray(profile.barriers)
        ordered = bool(np.all(np.diff(b) > 0.0)) and bool(np.all(np.isfinite(b)))
        checks["barriers_ordered"] = (ordered, "ok" if ordered else "barriers must be strictly increasing")
        zero_below = profile.k == 0 or profile.barriers[0] > 0.0
        checks["vanishes_below_zero"] = (zero_below, "ok" if zero_below else "first barrier must be positive")
    elif isinstance(profile, SmoothLinearClamp):
        ok = profile.slope > 0.0 and profile.cap > 0.0 and 0.0 <= profile.blend <= profile.kink
        checks["monotone"] = (ok, "ok" if ok else "slope, cap must be positive and blend <= cap/slope")
        checks["vanishes_below_zero"] = (True, "ok")
    elif isinstance(profile, SmoothSaturating):
        ok = profile.cap > 0.0 and profile.rate > 0.0
        checks["monotone"] = (ok, "ok" if ok else "cap and rate must be positive")
        checks["vanishes_below_zero"] = (True, "ok")
    else:
        checks["monotone"] = (False, f"unknown profile {type(profile).__name__}")
    if model.bounded_variation:
        cap_ok = profile.sup < model.drift
        checks["bv_cap"] = (cap_ok, f"sup phi = {profile.sup:g} vs drift {model.drift:g}")
    else:
        checks["bv_cap"] = (True, "vacuous for unbounded variation")
    return AdmissibilityReport(checks)


# ---------------------------------------------------------------- shipped fixtures


def cl_a() -> LevyModel:
    """Cramer-Lundberg: drift 1.5, unit-rate exponential claims at unit intensity."""
    return LevyModel(1.5, 0.0, JumpSpec.exponential(1.0, 1.0), name="CL-A")


def bm_a() -> LevyModel:
    """Brownian motion with unit drift and unit volatility."""
    return LevyModel(1.0, 1.0, JumpSpec.none(), name="BM-A")


def hx_b() -> LevyModel:
    """Bounded-variation model with two-phase hyperexponential claims."""
    return LevyModel(2.0, 0.0, JumpSpec.hyperexponential(1.5, (0.4, 0.6), (1.0, 3.0)), name="HX-B")


def jd_c() -> LevyModel:
    """Jump diffusion: Brownian part plus exponential claims."""
    return LevyModel(0.8, 0.5, JumpSpec.exponential(0.5, 2.0), name="JD-C")


SHIPPED_MODELS = {"CL-A": cl_a, "BM-A": bm_a, "HX-B": hx_b, "JD-C": jd_c}


def shipped_models() -> Iterable[LevyModel]:
    return [f() for f in SHIPPED_MODELS.values()]
