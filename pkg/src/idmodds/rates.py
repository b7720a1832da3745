"""Transition rates of the three-state illness-death model.

The model has states Healthy, Diseased and Dead.  Healthy people of age ``a``
at calendar time ``t`` contract the disease at the incidence rate and die at
the Gompertz disease-free mortality rate; diseased people die at the
disease-free rate scaled by a quadratic function of the disease duration
``d``.  Along a 45-degree life line in the (time, age) plane all three
cumulative hazards have closed forms, which the analytic formulas, the
microsimulation and the likelihood all build on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from idmodds.quadrature import QuadratureConfig, adaptive_quad

__all__ = [
    "RateDomainError",
    "GompertzParams",
    "PositivePartIncidence",
    "ExponentialIncidence",
    "TabulatedIncidence",
    "IncidenceSpec",
    "MortalityRatioParams",
    "RateModel",
    "reference_rate_model",
]


class RateDomainError(ValueError):
    """A rate was evaluated outside its valid domain."""


def _all_finite(*values):
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class GompertzParams:
    """Disease-free mortality exp(xi1 + xi2*a + xi3*t).

    ``xi2 + xi3`` is the growth rate along a life line and must be nonzero:
    it is the denominator of the closed-form cumulative hazard.
    """

    xi1: float
    xi2: float
    xi3: float

    def __post_init__(self):
        if not _all_finite(self.xi1, self.xi2, self.xi3):
            raise ValueError("Gompertz parameters must be finite")
        if self.xi2 + self.xi3 == 0.0:
            raise ValueError("xi2 + xi3 must be nonzero")

    @property
    def slope(self) -> float:
        return self.xi2 + self.xi3

    def rate(self, t, a):
        return np.exp(self.xi1 + self.xi2 * a + self.xi3 * t)

    def cumulative(self, t, a, delta):
        """Integral of the rate over the last ``delta`` years of the life line ending at (t, a)."""
        return (self.rate(t, a) - self.rate(t - delta, a - delta)) / self.slope


@dataclass(frozen=True)
class PositivePartIncidence:
    """Incidence max(a - onset_age, 0) / denominator, independent of calendar time."""

    onset_age: float = 30.0
    denominator: float = 3000.0

    def __post_init__(self):
        if not _all_finite(self.onset_age, self.denominator):
            raise ValueError("incidence parameters must be finite")
        if self.denominator <= 0.0:
            raise ValueError("denominator must be positive")

    @property
    def kink_ages(self) -> tuple:
        return (self.onset_age,)

    @property
    def kink_times(self) -> tuple:
        return ()

    def rate(self, t, a):
        return np.maximum(np.asarray(a, dtype=float) - self.onset_age, 0.0) / self.denominator

    def cumulative(self, t, a, delta):
        # Three cases by where the life line segment sits relative to the onset age:
        # entirely below it, straddling it, entirely above it.
        alpha = self.onset_age
        a = np.asarray(a, dtype=float)
        delta = np.asarray(delta, dtype=float)
        start_age = a - delta
        above = delta * (start_age - alpha) + 0.5 * delta * delta
        straddle = 0.5 * np.square(np.maximum(a - alpha, 0.0))
        value = np.where(start_age >= alpha, above, straddle)
        value = np.where(a <= alpha, 0.0, value)
        out = value / self.denominator
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ExponentialIncidence:
    """Incidence exp(k0 + k1*a + k2*t)."""

    k0: float
    k1: float
    k2: float

    def __post_init__(self):
        if not _all_finite(self.k0, self.k1, self.k2):
            raise ValueError("incidence parameters must be finite")

    @property
    def kink_ages(self) -> tuple:
        return ()

    @property
    def kink_times(self) -> tuple:
        return ()

    def rate(self, t, a):
        return np.exp(self.k0 + self.k1 * np.asarray(a, dtype=float) + self.k2 * t)

    def cumulative(self, t, a, delta):
        kappa = self.k1 + self.k2
        base = self.rate(t - delta, a - delta)
        if kappa == 0.0:
            return base * delta
        return base * np.expm1(kappa * np.asarray(delta, dtype=float)) / kappa


_TAB_QUAD = QuadratureConfig(rel_tol=1e-10, abs_tol=1e-14, max_subdivisions=400)


@dataclass(frozen=True, eq=False)
class TabulatedIncidence:
    """Incidence given on a rectangular (time, age) grid, bilinearly interpolated.

    Evaluations outside the grid are clamped to the nearest edge.  The
    cumulative hazard has no closed form and falls back to quadrature along
    the life line, with breakpoints at every grid-line crossing.
    """

    times: np.ndarray
    ages: np.ndarray
    table: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        ages = np.asarray(self.ages, dtype=float)
        table = np.asarray(self.table, dtype=float)
        if times.ndim != 1 or ages.ndim != 1 or len(times) < 2 or len(ages) < 2:
            raise ValueError("grids must be 1-D with at least two points")
        if np.any(np.diff(times) <= 0.0) or np.any(np.diff(ages) <= 0.0):
            raise ValueError("grids must be strictly increasing")
        if table.shape != (len(times), len(ages)):
            raise ValueError("table shape must be (len(times), len(ages))")
        if not np.all(np.isfinite(table)) or np.any(table < 0.0):
            raise ValueError("tabulated rates must be finite and nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "table", table)

    @property
    def kink_ages(self) -> tuple:
        return tuple(self.ages)

    @property
    def kink_times(self) -> tuple:
        return tuple(self.times)

    def rate(self, t, a):
        t = np.clip(np.asarray(t, dtype=float), self.times[0], self.times[-1])
        a = np.clip(np.asarray(a, dtype=float), self.ages[0], self.ages[-1])
        t, a = np.broadcast_arrays(t, a)
        it = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        ia = np.clip(np.searchsorted(self.ages, a, side="right") - 1, 0, len(self.ages) - 2)
        wt = (t - self.times[it]) / (self.times[it + 1] - self.times[it])
        wa = (a - self.ages[ia]) / (self.ages[ia + 1] - self.ages[ia])
        v00 = self.table[it, ia]
        v01 = self.table[it, ia + 1]
        v10 = self.table[it + 1, ia]
        v11 = self.table[it + 1, ia + 1]
        out = (
            v00 * (1 - wt) * (1 - wa)
            + v01 * (1 - wt) * wa
            + v10 * wt * (1 - wa)
            + v11 * wt * wa
        )
        return float(out) if out.ndim == 0 else out

    def cumulative(self, t, a, delta):
        if np.ndim(delta) > 0 or np.ndim(t) > 0 or np.ndim(a) > 0:
            t, a, delta = np.broadcast_arrays(
                np.asarray(t, dtype=float), np.asarray(a, dtype=float), np.asarray(delta, dtype=float)
            )
            return np.array(
                [self.cumulative(float(ti), float(ai), float(di)) for ti, ai, di in zip(t, a, delta)]
            )
        delta = float(delta)
        if delta == 0.0:
            return 0.0
        breaks = [a - float(g) for g in self.ages] + [t - float(g) for g in self.times]
        breaks = [delta - x for x in breaks]  # convert to tau along the segment
        return adaptive_quad(
            lambda tau: self.rate(t - delta + tau, a - delta + tau),
            0.0,
            delta,
            _TAB_QUAD,
            breakpoints=[x for x in breaks if 0.0 < x < delta],
        )


IncidenceSpec = Union[PositivePartIncidence, ExponentialIncidence, TabulatedIncidence]


@dataclass(frozen=True)
class MortalityRatioParams:
    """Mortality rate ratio R(d) = gamma1*(d - gamma2)**2 + gamma3.

    Positivity of R is checked at construction over [0, max_duration].
    """

    gamma1: float
    gamma2: float
    gamma3: float
    max_duration: float = 100.0

    def __post_init__(self):
        if not _all_finite(self.gamma1, self.gamma2, self.gamma3, self.max_duration):
            raise ValueError("mortality-ratio parameters must be finite")
        if self.max_duration <= 0.0:
            raise ValueError("max_duration must be positive")
        candidates = [0.0, self.max_duration]
        if self.gamma1 > 0.0 and 0.0 <= self.gamma2 <= self.max_duration:
            candidates.append(self.gamma2)
        low = min(self.ratio(d) for d in candidates)
        if low <= 0.0:
            raise ValueError(
                f"mortality ratio must stay positive on [0, {self.max_duration}]; minimum {low:.4g}"
            )

    def ratio(self, d):
        d = np.asarray(d, dtype=float)
        out = self.gamma1 * np.square(d - self.gamma2) + self.gamma3
        return float(out) if out.ndim == 0 else out


def _poly_exp_integrals(lam, d):
    """Integrals of d**k * exp(lam*d) over [0, d] for k = 0, 1, 2.

    Direct formulas cancel badly for |lam*d| << 1, so a short series takes
    over below 1e-3.
    """
    d = np.asarray(d, dtype=float)
    x = lam * d
    with np.errstate(invalid="ignore"):
        ex = np.exp(x)
        j0 = np.expm1(x) / lam
        j1_direct = (ex * (x - 1.0) + 1.0) / lam**2
        j2_direct = (ex * (x * x - 2.0 * x + 2.0) - 2.0) / lam**3
    small = np.abs(x) < 1e-3
    d2 = d * d
    j1_series = d2 * (0.5 + x * (1.0 / 3.0 + x * (0.125 + x * (1.0 / 30.0 + x / 144.0))))
    j2_series = d2 * d * (1.0 / 3.0 + x * (0.25 + x * (0.1 + x * (1.0 / 36.0 + x / 168.0))))
    j1 = np.where(small, j1_series, j1_direct)
    j2 = np.where(small, j2_series, j2_direct)
    return j0, j1, j2


@dataclass(frozen=True)
class RateModel:
    """The three transition rates and their closed-form cumulative hazards."""

    incidence: IncidenceSpec
    m0: GompertzParams
    ratio: MortalityRatioParams

    # -- rates ------------------------------------------------------------

    def incidence_rate(self, t, a):
        if np.any(np.asarray(a) < 0.0):
            raise RateDomainError("age must be nonnegative")
        return self.incidence.rate(t, a)

    def mortality_healthy(self, t, a):
        return self.m0.rate(t, a)

    def mortality_ratio(self, d):
        if np.any(np.asarray(d) < 0.0):
            raise RateDomainError("duration must be nonnegative")
        out = self.ratio.ratio(d)
        if np.any(np.asarray(out) <= 0.0):
            raise RateDomainError("mortality ratio must be positive")
        return out

    def mortality_diseased(self, t, a, d):
        d_arr = np.asarray(d)
        if np.any(d_arr < 0.0) or np.any(d_arr > np.asarray(a)):
            raise RateDomainError("duration must satisfy 0 <= d <= a")
        return self.mortality_healthy(t, a) * self.mortality_ratio(d)

    # -- cumulative hazards along a life line ending at (t, a) ------------

    def _check_span(self, a, delta):
        delta_arr = np.asarray(delta)
        if np.any(delta_arr < 0.0) or np.any(delta_arr > np.asarray(a)):
            raise RateDomainError("lookback must satisfy 0 <= delta <= a")

    def cumulative_m0(self, t, a, delta):
        self._check_span(a, delta)
        return self.m0.cumulative(t, a, delta)

    def cumulative_incidence(self, t, a, delta):
        self._check_span(a, delta)
        return self.incidence.cumulative(t, a, delta)

    def cumulative_m1(self, t, a, d):
        """Integral of the diseased mortality over a disease course of length ``d`` ending at (t, a).

        The course starts at (t - d, a - d) with duration zero.  Factorizing
        m1 = m0 * R and expanding the quadratic R gives a closed form in the
        three polynomial-exponential integrals.
        """
        self._check_span(a, d)
        g1, g2, g3 = self.ratio.gamma1, self.ratio.gamma2, self.ratio.gamma3
        lam = self.m0.slope
        base = self.m0.rate(t - d, a - d)
        j0, j1, j2 = _poly_exp_integrals(lam, d)
        return base * (g1 * j2 - 2.0 * g1 * g2 * j1 + (g1 * g2 * g2 + g3) * j0)


def reference_rate_model(max_duration: float = 100.0) -> RateModel:
    """Rate configuration of the bundled cross-sectional simulation study."""
    return RateModel(
        incidence=PositivePartIncidence(onset_age=30.0, denominator=3000.0),
        m0=GompertzParams(-10.7, 0.1, math.log(0.998)),
        ratio=MortalityRatioParams(0.04, 5.0, 1.0, max_duration=max_duration),
    )
