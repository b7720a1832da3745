"""Maximum-likelihood recovery of the mortality-ratio parameters.

A current-status table gives, per age group, the number alive and the number
diseased.  Holding incidence and healthy mortality fixed, the three
mortality-ratio parameters determine the analytic prevalence in each group,
and the diseased counts are binomial around it.  The likelihood is maximized
by a derivative-free simplex search (the prevalence comes out of nested
quadrature, so gradients are not worth trusting), and confidence intervals
come from inverting the finite-difference observed information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize

from idmodds.prevalence import prevalence
from idmodds.quadrature import QuadratureConfig
from idmodds.rates import GompertzParams, IncidenceSpec, MortalityRatioParams, PositivePartIncidence, RateModel
from idmodds.simulate import AgeGroupTable

__all__ = [
    "FitConfig",
    "FitResult",
    "group_prevalence",
    "log_likelihood",
    "fit",
    "observed_information",
    "wald_intervals",
]

_DEFAULT_BOUNDS = ((0.0, 1.0), (0.0, 50.0), (0.0, 20.0))
_DEFAULT_STARTS = ((0.01, 2.0, 1.0), (0.001, 1.0, 0.5), (0.1, 10.0, 1.5), (0.3, 20.0, 3.0))
_FIT_QUADRATURE = QuadratureConfig(rel_tol=1e-10, abs_tol=1e-14, max_subdivisions=400)


def _default_m0() -> GompertzParams:
    return GompertzParams(-10.7, 0.1, math.log(0.998))


@dataclass(frozen=True)
class FitConfig:
    """Everything the likelihood needs besides the data.

    Incidence and healthy mortality are treated as known; only the three
    mortality-ratio parameters are estimated.  Components of ``fixed_gamma``
    that carry a value are pinned and excluded from the search.
    """

    incidence: IncidenceSpec = field(default_factory=PositivePartIncidence)
    m0: GompertzParams = field(default_factory=_default_m0)
    bounds: tuple = _DEFAULT_BOUNDS
    starts: tuple = _DEFAULT_STARTS
    fixed_gamma: tuple = (None, None, None)
    group_evaluation: str = "midpoint"
    xatol: float = 1e-6
    fatol: float = 1e-8
    max_iterations: int = 4000
    include_binomial_coefficient: bool = False
    max_duration: float = 100.0
    # 1e-3 keeps second-difference rounding noise (~1e-11 in the log-likelihood)
    # far below the smallest curvature eigenvalue; 1e-4 sits at its edge.
    hessian_step_scale: float = 1e-3
    quadrature: QuadratureConfig = _FIT_QUADRATURE

    def __post_init__(self):
        if len(self.bounds) != 3 or any(len(b) != 2 or not b[0] < b[1] for b in self.bounds):
            raise ValueError("bounds must be three increasing (lo, hi) pairs")
        if self.group_evaluation not in ("midpoint", "averaged"):
            raise ValueError("group_evaluation must be 'midpoint' or 'averaged'")
        if not (self.xatol > 0.0 and self.fatol > 0.0 and self.hessian_step_scale > 0.0):
            raise ValueError("tolerances must be positive")
        if len(self.fixed_gamma) != 3:
            raise ValueError("fixed_gamma must have three entries")
        if not self.starts:
            raise ValueError("at least one start point is required")
        for start in self.starts:
            if len(start) != 3:
                raise ValueError("start points must have three components")
            for value, (lo, hi), pinned in zip(start, self.bounds, self.fixed_gamma):
                if pinned is None and not lo <= value <= hi:
                    raise ValueError(f"start point {start} lies outside the bounds")

    @property
    def free_indices(self) -> tuple:
        return tuple(j for j, pinned in enumerate(self.fixed_gamma) if pinned is None)

    def full_gamma(self, free_values) -> np.ndarray:
        gamma = np.array([0.0 if p is None else float(p) for p in self.fixed_gamma])
        gamma[list(self.free_indices)] = np.asarray(free_values, dtype=float)
        return gamma

    def build_model(self, gamma) -> RateModel:
        g1, g2, g3 = (float(x) for x in gamma)
        ratio = MortalityRatioParams(g1, g2, g3, max_duration=self.max_duration)
        return RateModel(self.incidence, self.m0, ratio)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Point estimate with curvature-based uncertainty and search diagnostics.

    ``hessian`` is the negative log-likelihood curvature at the optimum;
    rows/columns of pinned components are NaN.  ``covariance`` and ``ci95``
    are None when the information matrix could not be inverted (see
    ``diagnostics``).
    """

    gamma_hat: np.ndarray
    loglik: float
    hessian: np.ndarray
    covariance: Optional[np.ndarray]
    ci95: Optional[np.ndarray]
    converged: bool
    iterations: int
    function_evals: int
    diagnostics: dict

    def to_json_dict(self) -> dict:
        def clean(array):
            return None if array is None else np.asarray(array).tolist()

        return {
            "gamma_hat": clean(self.gamma_hat),
            "loglik": self.loglik,
            "hessian": clean(self.hessian),
            "cov": clean(self.covariance),
            "ci95": clean(self.ci95),
            "converged": self.converged,
            "iterations": self.iterations,
            "function_evals": self.function_evals,
            "diagnostics": self.diagnostics,
        }


_GL_NODES, _GL_WEIGHTS = leggauss(7)


def group_prevalence(
    model: RateModel,
    age_lo: float,
    age_hi: float,
    t: float,
    mode: str = "midpoint",
    quadrature: QuadratureConfig = _FIT_QUADRATURE,
) -> float:
    """Model prevalence attached to one age group at the study time.

    ``midpoint`` evaluates at the central age; ``averaged`` integrates the
    prevalence uniformly over the group (7-point Gauss rule, exact enough for
    these smooth curves).
    """
    if mode == "midpoint":
        return prevalence(model, t, 0.5 * (age_lo + age_hi), "pseudo_convolution", None, quadrature).prevalence
    if mode == "averaged":
        half = 0.5 * (age_hi - age_lo)
        center = 0.5 * (age_lo + age_hi)
        values = [
            prevalence(model, t, center + half * float(node), "pseudo_convolution", None, quadrature).prevalence
            for node in _GL_NODES
        ]
        return float(np.dot(_GL_WEIGHTS, values) / 2.0)
    raise ValueError("mode must be 'midpoint' or 'averaged'")


def _within_bounds(gamma, bounds) -> bool:
    return all(lo <= value <= hi for value, (lo, hi) in zip(gamma, bounds))


def log_likelihood(gamma, table: AgeGroupTable, config: FitConfig = FitConfig()) -> float:
    """Binomial log-likelihood of the table under the given mortality-ratio parameters.

    Minus infinity encodes every way the parameters can fail: outside the
    bounds, a nonpositive mortality ratio, or a group whose predicted
    prevalence makes the observed count impossible.  Terms with zero count
    against zero prevalence contribute zero (the 0*log(0) convention), so a
    disease-free model fits an all-zero table perfectly.  The binomial
    coefficient is a constant in the parameters and is omitted unless
    requested.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (3,) or not np.all(np.isfinite(gamma)):
        return -math.inf
    if not _within_bounds(gamma, config.bounds):
        return -math.inf
    try:
        model = config.build_model(gamma)
    except ValueError:
        return -math.inf
    t_cross = table.cross_section_time
    total = 0.0
    for age_lo, age_hi, n, c in zip(table.age_lo, table.age_hi, table.n, table.c):
        n = int(n)
        c = int(c)
        p = group_prevalence(model, float(age_lo), float(age_hi), t_cross, config.group_evaluation, config.quadrature)
        if c > 0:
            if p <= 0.0:
                return -math.inf
            total += c * math.log(p)
        if n - c > 0:
            if p >= 1.0:
                return -math.inf
            total += (n - c) * math.log1p(-p)
        if config.include_binomial_coefficient:
            total += math.lgamma(n + 1) - math.lgamma(c + 1) - math.lgamma(n - c + 1)
    return total


def observed_information(loglik_fn, point, steps) -> np.ndarray:
    """Negative central-difference Hessian of ``loglik_fn`` at ``point``.

    At a maximum this is positive definite and its inverse estimates the
    covariance of the estimator.
    """
    objective = loglik_fn
    point = np.asarray(point, dtype=float)
    steps = np.asarray(steps, dtype=float)
    size = len(point)
    center = objective(point)
    hessian = np.empty((size, size))
    for j in range(size):
        ej = np.zeros(size)
        ej[j] = steps[j]
        hessian[j, j] = -(objective(point + ej) - 2.0 * center + objective(point - ej)) / steps[j] ** 2
    for j in range(size):
        for k in range(j + 1, size):
            ej = np.zeros(size)
            ek = np.zeros(size)
            ej[j] = steps[j]
            ek[k] = steps[k]
            mixed = (
                objective(point + ej + ek)
                - objective(point + ej - ek)
                - objective(point - ej + ek)
                + objective(point - ej - ek)
            ) / (4.0 * steps[j] * steps[k])
            hessian[j, k] = hessian[k, j] = -mixed
    return hessian


def wald_intervals(gamma_hat, hessian):
    """95% intervals from the inverse observed information.

    Returns (covariance, intervals); intervals may extend beyond the search
    bounds, which is meaningful (a bound-crossing interval flags weak
    identification).  Raises when the information matrix is singular or not
    positive definite.
    """
    hessian = np.asarray(hessian, dtype=float)
    eigenvalues = np.linalg.eigvalsh(hessian)
    smallest, largest = eigenvalues[0], eigenvalues[-1]
    if smallest <= 0.0 or not np.all(np.isfinite(eigenvalues)):
        raise ValueError(
            f"information matrix is not positive definite (eigenvalues {eigenvalues.tolist()})"
        )
    condition = largest / smallest
    if condition > 1e12:
        raise ValueError(f"information matrix is numerically singular (condition number {condition:.3e})")
    covariance = np.linalg.inv(hessian)
    covariance = 0.5 * (covariance + covariance.T)
    half_width = 1.96 * np.sqrt(np.diag(covariance))
    gamma_hat = np.asarray(gamma_hat, dtype=float)
    intervals = np.column_stack((gamma_hat - half_width, gamma_hat + half_width))
    return covariance, intervals


def fit(table: AgeGroupTable, config: FitConfig = FitConfig()) -> FitResult:
    """Maximize the likelihood over the free mortality-ratio parameters.

    Runs the simplex search from every configured start, keeps the best, and
    restarts once from the incumbent to escape premature contraction.  The
    result always comes back; ``converged`` and the diagnostics say how much
    to trust it.
    """
    free = config.free_indices
    if len(free) == 0:
        raise ValueError("at least one component must be free")
    informative = np.count_nonzero((table.n > 0) & (table.c > 0) & (table.c < table.n))
    if informative < len(free):
        raise ValueError(
            f"{len(free)} free parameters need at least that many informative rows, got {informative}"
        )

    evals = 0

    def objective(free_values):
        nonlocal evals
        evals += 1
        return -log_likelihood(config.full_gamma(free_values), table, config)

    bounds = [config.bounds[j] for j in free]
    options = {
        "xatol": config.xatol,
        "fatol": config.fatol,
        "maxiter": config.max_iterations,
        "maxfev": config.max_iterations,
    }
    best = None
    iterations = 0
    for start in config.starts:
        x0 = np.array([start[j] for j in free])
        outcome = optimize.minimize(objective, x0, method="Nelder-Mead", bounds=bounds, options=options)
        iterations += outcome.nit
        if np.isfinite(outcome.fun) and (best is None or outcome.fun < best.fun):
            best = outcome
    if best is None:
        raise ValueError("the likelihood is minus infinity at every start point")
    restart = optimize.minimize(objective, best.x, method="Nelder-Mead", bounds=bounds, options=options)
    iterations += restart.nit
    if np.isfinite(restart.fun) and restart.fun <= best.fun:
        best = restart
    converged = bool(best.success)

    gamma_hat = config.full_gamma(best.x)
    loglik = -float(best.fun)

    diagnostics = {
        "free_components": list(free),
        "starts_used": len(config.starts),
        "boundary_hits": [],
        "flat_components": [],
    }
    for j in free:
        lo, hi = config.bounds[j]
        span = hi - lo
        if min(gamma_hat[j] - lo, hi - gamma_hat[j]) < 1e-4 * span:
            diagnostics["boundary_hits"].append(j)

    steps = config.hessian_step_scale * np.maximum(1.0, np.abs(gamma_hat[list(free)]))
    # curvature stencil must stay strictly inside the bounds (the model can be
    # degenerate on a boundary face, e.g. a zero mortality ratio), so at a
    # boundary optimum the evaluation center shifts inward by just over one step
    lo_free = np.array([config.bounds[j][0] for j in free])
    hi_free = np.array([config.bounds[j][1] for j in free])
    steps = np.minimum(steps, (hi_free - lo_free) / 4.0)
    margin = 1.0625 * steps
    center = np.clip(np.asarray(best.x, dtype=float), lo_free + margin, hi_free - margin)
    if np.any(center != best.x):
        diagnostics["hessian_center"] = config.full_gamma(center).tolist()
    center_value = objective(center)
    for position, j in enumerate(free):
        probe = np.array(center, dtype=float)
        probe[position] += steps[position]
        up = objective(probe)
        probe[position] -= 2.0 * steps[position]
        down = objective(probe)
        if abs(up - center_value) < config.fatol and abs(down - center_value) < config.fatol:
            diagnostics["flat_components"].append(j)

    hessian = np.full((3, 3), np.nan)
    hessian_free = observed_information(lambda values: -objective(values), center, steps)
    for row, j in enumerate(free):
        for col, k in enumerate(free):
            hessian[j, k] = hessian_free[row, col]

    covariance_full = None
    ci_full = None
    try:
        covariance_free, ci_free = wald_intervals(gamma_hat[list(free)], hessian_free)
        covariance_full = np.full((3, 3), np.nan)
        ci_full = np.full((3, 2), np.nan)
        for row, j in enumerate(free):
            ci_full[j] = ci_free[row]
            for col, k in enumerate(free):
                covariance_full[j, k] = covariance_free[row, col]
    except ValueError as error:
        diagnostics["covariance_error"] = str(error)

    return FitResult(
        gamma_hat=gamma_hat,
        loglik=loglik,
        hessian=hessian,
        covariance=covariance_full,
        ci95=ci_full,
        converged=converged,
        iterations=int(iterations),
        function_evals=int(evals),
        diagnostics=diagnostics,
    )
