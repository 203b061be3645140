"""Symmetric tensors on the sphere and the principal symbol of the normal operator.

Run: python3 demos/01_symbols.py
"""

import numpy as np

from livsic_xray.sphere import sphere_volume
from livsic_xray.symtensor import (
    CotangentDirection,
    EuclideanSpace,
    SymTensor,
    c_nm,
    c_nm_quadrature,
    harmonic_decompose,
    harmonic_recompose,
    multiply_xi,
    pushpull_on_trace_free,
    symbol_sigma_m,
)

rng = np.random.default_rng(1)

print("The constants c_nm: closed form against quadrature on the sphere.")
for n in (1, 2, 3):
    row = "  ".join(f"{c_nm(n, m):.6f}/{c_nm_quadrature(n, m):.6f}" for m in range(4))
    print(f"  n={n}: {row}")

print("\nPulling back to the sphere and pushing forward again is a scalar on trace-free tensors.")
for n in (1, 2, 3):
    E = EuclideanSpace.euclidean(n + 1)
    lam0, _, _ = pushpull_on_trace_free(E, 0)
    lam1, off, _ = pushpull_on_trace_free(E, 1)
    vol = sphere_volume(n + 1)
    print(f"  S^{n}: lambda_0 = {lam0:.6f} (volume {vol:.6f}), lambda_1 = {lam1:.6f} (volume/(n+1) {vol / (n + 1):.6f})")

print("\nHarmonic decomposition of a random order-4 tensor in R^3 and its reassembly.")
E = EuclideanSpace.euclidean(3)
u = SymTensor.random(E, 4, rng)
parts = harmonic_decompose(u)
err = np.abs(harmonic_recompose(parts).coeffs - u.coeffs).max()
print(f"  {len(parts)} pieces, round-trip error {err:.1e}")

print("\nThe symbol at a covector xi kills potential tensors xi * h and is elliptic on ker i_xi.")
xi = CotangentDirection(E, rng.standard_normal(3))
for m in (1, 2, 3):
    S = symbol_sigma_m(xi, m)
    h = SymTensor.random(E, m - 1, rng)
    kill = np.abs(S.apply(multiply_xi(h, xi)).coeffs).max()
    print(f"  m={m}: |sigma(xi h)| = {kill:.1e}, smallest eigenvalue on ker i_xi = {S.restricted_min_eigenvalue():.4f}")
