"""Livsic theory and X-ray transforms on symmetric tensors.

Subpackages
-----------
symtensor
    Symmetric tensor algebra, sphere quadrature and principal symbols.
catflow
    Suspension flow over the cat map: orbits, shadowing, flow boxes.
livsic
    Approximate Livsic decomposition and X-ray measurements.
hypflow
    Geodesic flow of the Bolza surface.
"""

__version__ = "0.1.0"
