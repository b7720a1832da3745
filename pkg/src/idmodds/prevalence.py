"""Closed-form population quantities of the illness-death model.

Everything here follows life lines in the (calendar time, age) plane.  The
healthy and diseased population densities solve first-order transport
equations whose solutions are explicit integrals of the transition rates;
this module evaluates them by adaptive quadrature over the closed-form
cumulative hazards, and provides the prevalence odds in three independent
ways so they can be cross-checked against each other:

* a ratio of survivor functions integrated over the onset age (``keiding``),
* a convolution-style integral of past incidence against a damping kernel
  (``pseudo_convolution``),
* diseased over healthy cohort counts (``cohort_ratio``).

On top of these sit the transport-equation residual checks and the
reconstruction of incidence from two cross-sectional prevalence profiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from idmodds.quadrature import DEFAULT_QUADRATURE, QuadratureConfig, adaptive_quad
from idmodds.rates import ExponentialIncidence, RateModel

__all__ = [
    "CohortBaseline",
    "PrevalenceResult",
    "CharacteristicGrid",
    "AgeProfile",
    "PREVALENCE_METHODS",
    "survivor_fraction",
    "healthy_population",
    "case_density",
    "diseased_population",
    "effective_diseased_mortality",
    "odds_kernel",
    "prevalence_odds_keiding",
    "prevalence_odds_pseudo_convolution",
    "prevalence_odds_exponential",
    "prevalence",
    "pde_residual_prevalence",
    "pde_residual_odds",
    "reconstruct_incidence",
    "cross_section_profile",
    "characteristic_grid",
]


@dataclass(frozen=True, eq=False)
class CohortBaseline:
    """Number of healthy newborns as a function of birth time.

    Only absolute population sizes depend on it; prevalence and odds are
    ratios within a birth cohort and cancel it exactly.
    """

    s0: Callable[[float], float]

    def __call__(self, birth_time: float) -> float:
        value = float(self.s0(birth_time))
        if not (math.isfinite(value) and value > 0.0):
            raise ValueError(f"cohort baseline must be positive and finite, got {value}")
        return value

    @staticmethod
    def constant(size: float = 1.0) -> "CohortBaseline":
        return CohortBaseline(lambda birth_time: size)


PREVALENCE_METHODS = ("pseudo_convolution", "keiding", "cohort_ratio", "convolution_special")


@dataclass(frozen=True)
class PrevalenceResult:
    """Prevalence odds and the matching prevalence at one (time, age) point."""

    t: float
    a: float
    odds: float
    prevalence: float
    method: str

    def __post_init__(self):
        if self.method not in PREVALENCE_METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if not (self.odds >= 0.0 and math.isfinite(self.odds)):
            raise ValueError(f"odds must be finite and nonnegative, got {self.odds}")
        if not 0.0 <= self.prevalence < 1.0:
            raise ValueError(f"prevalence must lie in [0, 1), got {self.prevalence}")

    @staticmethod
    def from_odds(t: float, a: float, odds: float, method: str) -> "PrevalenceResult":
        # Quadrature of a nonnegative integrand can round to a tiny negative.
        if -1e-12 < odds < 0.0:
            odds = 0.0
        return PrevalenceResult(t, a, odds, odds / (1.0 + odds), method)


@dataclass(frozen=True, eq=False)
class CharacteristicGrid:
    """Values sampled along one life line t - a = birth_time."""

    birth_time: float
    ages: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if ages.ndim != 1 or ages.shape != values.shape:
            raise ValueError("ages and values must be matching 1-D arrays")
        if len(ages) >= 2 and np.any(np.diff(ages) <= 0.0):
            raise ValueError("ages must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class AgeProfile:
    """Values sampled over age at one fixed calendar time (a cross-section)."""

    time: float
    ages: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if ages.ndim != 1 or ages.shape != values.shape:
            raise ValueError("ages and values must be matching 1-D arrays")
        if len(ages) >= 2 and np.any(np.diff(ages) <= 0.0):
            raise ValueError("ages must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "values", values)


def _lookback_breakpoints(model: RateModel, t: float, a: float):
    """Edges for integrals over the lookback delta ending at (t, a)."""
    edges = [a - g for g in model.incidence.kink_ages]
    edges += [t - g for g in model.incidence.kink_times]
    return [x for x in edges if 0.0 < x < a]


def _onset_age_breakpoints(model: RateModel, t: float, a: float):
    """Edges for integrals over the onset age y along the life line through (t, a)."""
    birth = t - a
    edges = list(model.incidence.kink_ages)
    edges += [g - birth for g in model.incidence.kink_times]
    return [x for x in edges if 0.0 < x < a]


def _exit_hazard(model: RateModel, t, a):
    """Cumulative hazard of leaving the healthy state (death or onset) since birth."""
    return model.cumulative_m0(t, a, a) + model.cumulative_incidence(t, a, a)


def survivor_fraction(model: RateModel, t: float, a: float, y: float) -> float:
    """Probability of still being healthy and alive at age ``y`` on the life line through (t, a).

    The exits from the healthy state are death and disease onset, so this is
    exp minus the combined cumulative hazard from birth to age ``y``.
    """
    if not 0.0 <= y <= a:
        raise ValueError("age on the life line must satisfy 0 <= y <= a")
    birth = t - a
    return float(np.exp(-_exit_hazard(model, birth + y, y)))


def healthy_population(
    model: RateModel, t: float, a: float, baseline: Optional[CohortBaseline] = None
) -> float:
    """Number of healthy people of age ``a`` at time ``t`` (cohort size 1 by default)."""
    scale = baseline(t - a) if baseline is not None else 1.0
    return scale * survivor_fraction(model, t, a, a)


def case_density(model: RateModel, t: float, a: float, d, baseline: Optional[CohortBaseline] = None):
    """Density over disease duration ``d`` of the diseased population at (t, a).

    Onset happened at (t-d, a-d); the density is the flow into the diseased
    state there times survival against the duration-dependent mortality
    since.  The three cumulative hazards are combined into one exponent so
    long life lines cannot underflow stepwise.
    """
    d = np.asarray(d, dtype=float)
    scale = baseline(t - a) if baseline is not None else 1.0
    exponent = -(_exit_hazard(model, t - d, a - d) + model.cumulative_m1(t, a, d))
    out = scale * model.incidence_rate(t - d, a - d) * np.exp(exponent)
    return float(out) if out.ndim == 0 else out


def diseased_population(
    model: RateModel,
    t: float,
    a: float,
    baseline: Optional[CohortBaseline] = None,
    quadrature: QuadratureConfig = DEFAULT_QUADRATURE,
) -> float:
    """Total diseased people of age ``a`` at time ``t``: the case density integrated over duration."""
    if a < 0.0:
        raise ValueError("age must be nonnegative")
    scale = baseline(t - a) if baseline is not None else 1.0
    if a == 0.0:
        return 0.0
    value = adaptive_quad(
        lambda d: case_density(model, t, a, d),
        0.0,
        a,
        quadrature,
        breakpoints=_lookback_breakpoints(model, t, a),
    )
    return scale * max(value, 0.0)


def effective_diseased_mortality(
    model: RateModel, t: float, a: float, quadrature: QuadratureConfig = DEFAULT_QUADRATURE
) -> float:
    """Mortality of the diseased at (t, a) averaged over the disease-duration distribution.

    Defined as 0 where there are no cases.  When the mortality ratio does not
    depend on duration the average is exact without any integration.
    """
    if a < 0.0:
        raise ValueError("age must be nonnegative")
    base = model.mortality_healthy(t, a)
    if model.ratio.gamma1 == 0.0:
        return float(base * model.ratio.gamma3)
    if a == 0.0:
        return 0.0
    breaks = _lookback_breakpoints(model, t, a)
    total = adaptive_quad(lambda d: case_density(model, t, a, d), 0.0, a, quadrature, breakpoints=breaks)
    if total <= 0.0:
        return 0.0
    weighted = adaptive_quad(
        lambda d: model.ratio.ratio(d) * case_density(model, t, a, d),
        0.0,
        a,
        quadrature,
        breakpoints=breaks,
    )
    return float(base * weighted / total)


def odds_kernel(model: RateModel, t: float, a: float, delta):
    """Weight the pseudo-convolution odds give to incidence from ``delta`` years back.

    Equals exp of (cumulative incidence + healthy mortality - diseased
    mortality) over the last ``delta`` years of the life line ending at
    (t, a); strictly decreasing in ``delta`` whenever the diseased mortality
    exceeds the combined healthy exit rate pointwise.
    """
    exponent = (
        model.cumulative_incidence(t, a, delta)
        + model.cumulative_m0(t, a, delta)
        - model.cumulative_m1(t, a, delta)
    )
    out = np.exp(exponent)
    return float(out) if np.ndim(out) == 0 else out


def prevalence_odds_keiding(
    model: RateModel, t: float, a: float, quadrature: QuadratureConfig = DEFAULT_QUADRATURE
) -> PrevalenceResult:
    """Prevalence odds as survivor-weighted onset flow over the healthy survivor fraction.

    Integrates, over the onset age y, the flow into disease times survival
    with disease up to age ``a``, and divides by the healthy survivor
    fraction at ``a``.
    """
    if a < 0.0:
        raise ValueError("age must be nonnegative")
    if a == 0.0:
        return PrevalenceResult.from_odds(t, a, 0.0, "keiding")
    birth = t - a

    def integrand(y):
        y = np.asarray(y, dtype=float)
        exponent = -(_exit_hazard(model, birth + y, y) + model.cumulative_m1(t, a, a - y))
        return model.incidence_rate(birth + y, y) * np.exp(exponent)

    numerator = adaptive_quad(
        integrand, 0.0, a, quadrature, breakpoints=_onset_age_breakpoints(model, t, a)
    )
    denominator = float(np.exp(-_exit_hazard(model, t, a)))
    return PrevalenceResult.from_odds(t, a, numerator / denominator, "keiding")


def prevalence_odds_pseudo_convolution(
    model: RateModel, t: float, a: float, quadrature: QuadratureConfig = DEFAULT_QUADRATURE
) -> PrevalenceResult:
    """Prevalence odds as past incidence convolved with the damping kernel."""
    if a < 0.0:
        raise ValueError("age must be nonnegative")
    if a == 0.0:
        return PrevalenceResult.from_odds(t, a, 0.0, "pseudo_convolution")

    def integrand(delta):
        delta = np.asarray(delta, dtype=float)
        return model.incidence_rate(t - delta, a - delta) * odds_kernel(model, t, a, delta)

    odds = adaptive_quad(
        integrand, 0.0, a, quadrature, breakpoints=_lookback_breakpoints(model, t, a)
    )
    return PrevalenceResult.from_odds(t, a, odds, "pseudo_convolution")


def prevalence_odds_exponential(
    model: RateModel, t: float, a: float, quadrature: QuadratureConfig = DEFAULT_QUADRATURE
) -> PrevalenceResult:
    """Prevalence odds for exponential incidence, via the factorized convolution.

    exp(k0 + k1*a + k2*t - (k1+k2)*delta) splits into a (t, a) factor times a
    function of t - delta alone, so the odds become that factor times a true
    convolution of the two single-argument functions.
    """
    inc = model.incidence
    if not isinstance(inc, ExponentialIncidence):
        raise ValueError("factorized convolution requires an exponential incidence")
    if a < 0.0:
        raise ValueError("age must be nonnegative")
    if a == 0.0:
        return PrevalenceResult.from_odds(t, a, 0.0, "convolution_special")
    front = math.exp(inc.k0 + inc.k1 * a - inc.k1 * t)
    kappa = inc.k1 + inc.k2

    def integrand(delta):
        delta = np.asarray(delta, dtype=float)
        return np.exp(kappa * (t - delta)) * odds_kernel(model, t, a, delta)

    odds = front * adaptive_quad(integrand, 0.0, a, quadrature)
    return PrevalenceResult.from_odds(t, a, odds, "convolution_special")


def prevalence(
    model: RateModel,
    t: float,
    a: float,
    method: str = "pseudo_convolution",
    baseline: Optional[CohortBaseline] = None,
    quadrature: QuadratureConfig = DEFAULT_QUADRATURE,
) -> PrevalenceResult:
    """Fraction diseased among those alive at (t, a), by any of the odds routes.

    ``baseline`` is accepted for interface symmetry but cannot influence the
    result: both the diseased and the healthy count scale linearly in the
    cohort size, so the ratio is formed with the baseline cancelled.
    """
    if method == "keiding":
        return prevalence_odds_keiding(model, t, a, quadrature)
    if method == "pseudo_convolution":
        return prevalence_odds_pseudo_convolution(model, t, a, quadrature)
    if method == "convolution_special":
        return prevalence_odds_exponential(model, t, a, quadrature)
    if method == "cohort_ratio":
        if a < 0.0:
            raise ValueError("age must be nonnegative")
        if a == 0.0:
            return PrevalenceResult.from_odds(t, a, 0.0, "cohort_ratio")
        cases = diseased_population(model, t, a, None, quadrature)
        healthy = healthy_population(model, t, a, None)
        return PrevalenceResult.from_odds(t, a, cases / healthy, "cohort_ratio")
    raise ValueError(f"unknown prevalence method {method!r}; choose one of {PREVALENCE_METHODS}")


_RESIDUAL_QUADRATURE = QuadratureConfig(rel_tol=1e-12, abs_tol=1e-15, max_subdivisions=400)


def pde_residual_prevalence(
    model: RateModel,
    t: float,
    a: float,
    h: float,
    quadrature: QuadratureConfig = _RESIDUAL_QUADRATURE,
) -> float:
    """Residual of the prevalence transport equation at (t, a), discretized with step ``h``.

    The directional derivative of p along the life line is approximated by a
    central difference; the exact balance says it equals
    (1 - p) * (i - p * (effective diseased mortality - healthy mortality)).
    Shrinks as h**2 for smooth rates.
    """
    if not 0.0 < h <= a:
        raise ValueError("step must satisfy 0 < h <= a")
    p_plus = prevalence(model, t + h, a + h, "pseudo_convolution", None, quadrature).prevalence
    p_minus = prevalence(model, t - h, a - h, "pseudo_convolution", None, quadrature).prevalence
    p_here = prevalence(model, t, a, "pseudo_convolution", None, quadrature).prevalence
    drift = (p_plus - p_minus) / (2.0 * h)
    i_here = float(model.incidence_rate(t, a))
    m0_here = float(model.mortality_healthy(t, a))
    m1_star = effective_diseased_mortality(model, t, a, quadrature)
    return drift - (1.0 - p_here) * (i_here - p_here * (m1_star - m0_here))


def pde_residual_odds(
    model: RateModel,
    t: float,
    a: float,
    h: float,
    quadrature: QuadratureConfig = _RESIDUAL_QUADRATURE,
) -> float:
    """Residual of the odds transport equation, valid only for duration-independent diseased mortality.

    With m1 independent of duration the odds satisfy
    (d/d life line) pi = (i - (m1 - m0)) * pi + i.
    """
    if model.ratio.gamma1 != 0.0:
        raise ValueError("odds balance requires a duration-independent mortality ratio (gamma1 = 0)")
    if not 0.0 < h <= a:
        raise ValueError("step must satisfy 0 < h <= a")
    odds_plus = prevalence_odds_pseudo_convolution(model, t + h, a + h, quadrature).odds
    odds_minus = prevalence_odds_pseudo_convolution(model, t - h, a - h, quadrature).odds
    odds_here = prevalence_odds_pseudo_convolution(model, t, a, quadrature).odds
    drift = (odds_plus - odds_minus) / (2.0 * h)
    i_here = float(model.incidence_rate(t, a))
    m0_here = float(model.mortality_healthy(t, a))
    m1_here = m0_here * model.ratio.gamma3
    return drift - ((i_here - (m1_here - m0_here)) * odds_here + i_here)


def reconstruct_incidence(
    start: AgeProfile,
    end: AgeProfile,
    effective_mortality: Callable[[float, float], float],
    healthy_mortality: Callable[[float, float], float],
) -> AgeProfile:
    """Estimate the incidence rate from prevalence at two cross-sections.

    Inverts the prevalence balance: the incidence equals the directional
    derivative of p along life lines divided by (1 - p), plus
    p * (effective diseased mortality - healthy mortality).  The derivative
    pairs age ``a`` in the earlier profile with age ``a + h`` in the later
    one (h = time gap), placing each estimate at the midpoint of that life
    line segment.  Both mortality callables take (time, age) scalars.
    """
    if not np.array_equal(start.ages, end.ages):
        raise ValueError("the two profiles must share the same age grid")
    h = end.time - start.time
    if not h > 0.0:
        raise ValueError("the second profile must be later than the first")
    if np.any(start.values >= 1.0) or np.any(end.values >= 1.0):
        raise ValueError("prevalence must stay below 1 to invert the balance")
    shifted_ages = start.ages + h
    usable = shifted_ages <= end.ages[-1] + 1e-12
    if not np.any(usable):
        raise ValueError("the time gap exceeds the age range of the profiles")
    p_end = np.interp(shifted_ages[usable], end.ages, end.values)
    p_start = start.values[usable]
    p_mid = 0.5 * (p_start + p_end)
    t_mid = start.time + 0.5 * h
    ages_mid = start.ages[usable] + 0.5 * h
    drift = (p_end - p_start) / h
    gap = np.array(
        [
            effective_mortality(t_mid, float(age)) - healthy_mortality(t_mid, float(age))
            for age in ages_mid
        ]
    )
    estimates = drift / (1.0 - p_mid) + p_mid * gap
    return AgeProfile(t_mid, ages_mid, estimates)


def cross_section_profile(
    model: RateModel,
    time: float,
    ages,
    kind: str = "prevalence",
    method: str = "pseudo_convolution",
    quadrature: QuadratureConfig = DEFAULT_QUADRATURE,
) -> AgeProfile:
    """Prevalence (or odds) over an age grid at one calendar time."""
    ages = np.asarray(ages, dtype=float)
    results = [prevalence(model, time, float(a), method, None, quadrature) for a in ages]
    if kind == "prevalence":
        values = np.array([r.prevalence for r in results])
    elif kind == "odds":
        values = np.array([r.odds for r in results])
    else:
        raise ValueError("kind must be 'prevalence' or 'odds'")
    return AgeProfile(time, ages, values)


def characteristic_grid(
    model: RateModel,
    birth_time: float,
    ages,
    kind: str = "prevalence",
    method: str = "pseudo_convolution",
    quadrature: QuadratureConfig = DEFAULT_QUADRATURE,
) -> CharacteristicGrid:
    """Prevalence (or odds) along the single life line with the given birth time."""
    ages = np.asarray(ages, dtype=float)
    results = [prevalence(model, birth_time + float(a), float(a), method, None, quadrature) for a in ages]
    if kind == "prevalence":
        values = np.array([r.prevalence for r in results])
    elif kind == "odds":
        values = np.array([r.odds for r in results])
    else:
        raise ValueError("kind must be 'prevalence' or 'odds'")
    return CharacteristicGrid(birth_time, ages, values)
