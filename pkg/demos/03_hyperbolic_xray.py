"""Closed geodesics on the Bolza surface, the x-ray kernel and Parry averages.

Run: python3 demos/03_hyperbolic_xray.py  (about half a minute)
"""

import numpy as np
from scipy.special import expi

from livsic_xray.hypflow import (
    BandField,
    ConstantField,
    FlowDerivative,
    FuchsianGroup,
    enumerate_geodesics,
    parry_average,
    xray_classes,
)

G = FuchsianGroup.bolza()

print("Primitive closed geodesics, counted by length.")
geo = enumerate_geodesics(G, 10.0, oriented=True)
lengths = np.array([c.length for c in geo])
print(f"  shortest length {lengths.min():.4f}, multiplicity {np.sum(lengths < lengths.min() + 1e-9) // 2} (unoriented)")
for T in (6.0, 8.0, 10.0):
    print(f"  T={T:4.1f}: {np.sum(lengths <= T):5d} oriented geodesics, Li(e^T) = {expi(T):8.1f}")

print("\nThe x-ray of a flow derivative vanishes on every closed geodesic.")
rng = np.random.default_rng(7)
W = BandField.random(G, 2, rng)
short = [c for c in geo if c.length <= 6.0]
vals = xray_classes([FlowDerivative(W), W, ConstantField(G, 1.0)], short)
print(f"  {len(short)} geodesics: max |I(XW)| = {np.abs(vals[0]).max():.1e}, max |I(W)| = {np.abs(vals[1]).max():.3f}")

print("\nParry averages of a centred field shrink as the length cutoff grows.")
F = BandField.random(G, 2, np.random.default_rng(300)).centered()
for T in (6.0, 8.0, 10.0):
    print(f"  T={T:4.1f}: P(1) = {parry_average(ConstantField(G, 1.0), T, geo):.15f}, P(F) = {parry_average(F, T, geo):+.5f}")
