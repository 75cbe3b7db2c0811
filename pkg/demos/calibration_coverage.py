"""How often does the calibrated Frobenius ball miss the true second moment?

Uniform data on the unit square has a known moment matrix, so the miss rate
can be counted directly and compared with the confidence level rho1.
"""

import numpy as np

from twostage_dro.ambiguity import theoretical_parameters
from twostage_dro.geometry import build_box_support, build_partition

truth = np.array([[1 / 3, 1 / 4, 1 / 2], [1 / 4, 1 / 3, 1 / 2], [1 / 2, 1 / 2, 1.0]])
support = build_box_support([0.0, 0.0], [1.0, 1.0])
rng = np.random.default_rng(1)

for n in (10, 50, 200):
    misses, ratio = 0, []
    for _ in range(200):
        xs = rng.uniform(0, 1, (n, 2))
        scheme = build_partition(support, [[0.5, 0.5]], xs)
        eps = theoretical_parameters(scheme, 0.1, 0.5).epsilon[0]
        dist = np.linalg.norm(scheme.omegas[0] - truth)
        misses += dist > eps
        ratio.append(dist / eps)
    print(f"n={n:4d}: miss rate {misses / 200:.3f} (target <= 0.1), median distance/radius {np.median(ratio):.3f}")
