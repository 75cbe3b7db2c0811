"""Newsvendor walkthrough: data, partition, calibration, solve, out-of-sample check.

Run with ``python demos/newsvendor_walkthrough.py``; takes under a minute.
"""

import numpy as np

from twostage_dro.ambiguity import theoretical_parameters
from twostage_dro.evalsuite import (
    ExperimentConfig,
    build_instance,
    empirical_cvar,
    evaluate_second_stage,
    make_partition,
    sample_family,
)
from twostage_dro.reformulate import check_complete_recourse, solve_pdr

rng = np.random.default_rng(3)
cfg = ExperimentConfig("newsvendor", M=2, n_train=(8,), seed=3)
problem = build_instance(cfg, rng)
train = sample_family(cfg, 8, rng)
test = sample_family(cfg, 1000, rng)
print(f"{problem.name}: {problem.N1} order quantities, {problem.N2} recourse variables, "
      f"uncertain vector of length {problem.support.dim}")

# complete recourse lets the decomposition skip feasibility cuts
print("complete recourse:", check_complete_recourse(problem).status)

# one Voronoi cell per training sample
scheme = make_partition(problem, train, 8, cfg.constructors, cfg.seed)
amb = theoretical_parameters(scheme, rho1=0.1, rho2=0.1)
print("calibrated radii:", np.round(amb.epsilon, 2), "gamma:", round(amb.gamma, 3))

for label, scale in [("theoretical", 1.0), ("shrunk x0.01", 0.01), ("empirical", 0.0)]:
    amb_s = type(amb)(amb.epsilon * scale, 0.0)
    sol = solve_pdr(problem, scheme, amb_s, "ia0")
    z = evaluate_second_stage(problem, sol.x, test)
    ok = np.isfinite(z)
    cost = float(problem.c @ sol.x) + empirical_cvar(z[ok], problem.delta)
    print(f"{label:>12}: order {np.round(sol.x, 2)}, in-sample bound {sol.objective:8.2f}, "
          f"out-of-sample CVaR {cost:8.2f}")
