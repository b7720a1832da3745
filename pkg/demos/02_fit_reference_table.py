"""Maximum-likelihood mortality-ratio fit of the bundled study table.

Reproduces the published point estimates and 95% intervals for the
quadratic mortality-ratio parameters, then pins gamma2 at the generating
value to show how flat the likelihood ridge is: sliding along it costs a
fraction of a log-likelihood unit, which is why the interval for gamma2
spans nearly twenty duration-years.  Runs in a few seconds.
"""

import time
from importlib import resources

import numpy as np

from idmodds import AgeGroupTable, FitConfig, fit

PUBLISHED = {
    "estimate": (0.0330, 3.06, 1.01),
    "ci": ((-0.0127, 0.0787), (-5.70, 11.8), (0.625, 1.39)),
}

table = AgeGroupTable.from_csv(
    str(resources.files("idmodds.data") / "table1.csv"), cross_section_time=100.0
)
print(f"table: {len(table.n)} age groups, {table.n_total} alive, {table.c_total} diseased")

start = time.perf_counter()
result = fit(table, FitConfig())
seconds = time.perf_counter() - start

print(f"\nfit converged={result.converged} in {seconds:.1f}s "
      f"({result.function_evals} likelihood evaluations)")
print(f"log-likelihood at the maximum: {result.loglik:.4f}\n")
print("param    estimate   95% interval          published")
for j, name in enumerate(("gamma1", "gamma2", "gamma3")):
    lo, hi = result.ci95[j]
    pub = PUBLISHED["estimate"][j]
    pub_lo, pub_hi = PUBLISHED["ci"][j]
    print(f"{name}   {result.gamma_hat[j]:8.4f}   [{lo:8.4f}, {hi:8.4f}]   "
          f"{pub:6.4g} [{pub_lo:.4g}, {pub_hi:.4g}]")

# pin gamma2 at the generating value and refit the other two: the maximum
# barely moves, so the data cannot tell where along the ridge the vertex sits
pinned = fit(table, FitConfig(fixed_gamma=(None, 5.0, None)))
drop = result.loglik - pinned.loglik
print(f"\npinning gamma2=5 costs only {drop:.4f} log-likelihood units "
      f"(gamma1, gamma3 move to {pinned.gamma_hat[0]:.4f}, {pinned.gamma_hat[2]:.4f})")
print("the quadratic vertex location is weakly identified; the curvature "
      "gamma1 and level gamma3 are what the cross-section pins down")
