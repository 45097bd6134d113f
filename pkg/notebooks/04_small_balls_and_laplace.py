"""
Small balls and Laplace transforms
==================================

-log P(||X_m|| <= eps) grows like eps^(-2/(2m+1)). The fitted slope of
log(-log P) against log eps estimates that exponent. The Laplace transform
E exp(r ||X||) is driven by the same tail that the sharp asymptotics describe.
"""

import math

import numpy as np

from ibmtail import NormSpec, ProcessSpec, RngStream, TimeGrid, laplace_asymptotic, laplace_estimate
from ibmtail import small_ball_curve

res = small_ball_curve(ProcessSpec(0), NormSpec("sup"), np.linspace(0.5, 0.35, 5), 200_000,
                       RngStream(5), grid=TimeGrid.uniform(1024))
print(f"m=0 sup: slope {res.slope:.3f} (theory -2)")

res = small_ball_curve(ProcessSpec(1), NormSpec("lp", 2.0), np.geomspace(0.03, 0.01, 5), 400_000,
                       RngStream(6))
print(f"m=1 L2: slope {res.slope:.3f} (theory {-2 / 3:.3f})")

spec = ProcessSpec(1)
for r in (2.0, 4.0, 6.0):
    est = laplace_estimate(spec, NormSpec("sup"), r, 1.0, "tail-integral", 50_000, RngStream(7),
                           grid=TimeGrid.uniform(256))
    asym = laplace_asymptotic(spec, NormSpec("sup"), 1.0, r)
    print(f"r={r}: log E exp(r sup|X_1|) = {math.log(est.value):.3f}, "
          f"asymptotic {asym.log_value:.3f}, leading r^2/6 = {r * r / 6:.3f}")
