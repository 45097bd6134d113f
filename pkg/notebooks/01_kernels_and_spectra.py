"""
Covariance kernels and spectra of integrated Brownian motion
=============================================================

X_0 is Brownian motion and X_m integrates X_{m-1}. This script prints the
covariance kernel, the leading eigenvalues of the covariance operator and
the constants that enter the L2 tail.
"""

import math

import numpy as np

from ibmtail import ProcessSpec, check_eigen_bounds, kernel_matrix, nystrom_spectrum, zolotarev_constants

# The kernel on a coarse grid. Rows grow toward t = 1, where the variance
# peaks at 1/((m!)^2 (2m+1)).
t = np.linspace(0.25, 1.0, 4)
for m in range(3):
    print(f"m={m}")
    print(np.array2string(kernel_matrix(ProcessSpec(m), t), precision=5))

# For Brownian motion the eigenvalues are known: 4/((2n-1)^2 pi^2).
s0 = nystrom_spectrum(ProcessSpec(0), 256)
exact = 4 / ((2 * np.arange(1, 6) - 1) ** 2 * math.pi**2)
print("BM eigenvalues", s0.eigenvalues[:5])
print("closed form   ", exact)

# The top eigenvalue sits between two explicit bounds.
for m in range(1, 6):
    rep = check_eigen_bounds(ProcessSpec(m), nystrom_spectrum(ProcessSpec(m), 256))
    print(f"m={m}: {rep.lower:.3e} <= {rep.lambda1:.3e} <= {rep.upper:.3e}")

# The L2 tail prefactor needs the infinite product over the rest of the spectrum.
for m in range(3):
    zc = zolotarev_constants(nystrom_spectrum(ProcessSpec(m), 512))
    print(f"m={m}: c_bar={zc.c_bar:.6f}  c_lambda={zc.c_lambda:.6f}")
