"""Product quadrature rules on the unit sphere of a Euclidean space.

The rule on S^{d-1} is built recursively: write a unit vector as
``(t, sqrt(1 - t^2) u)`` with ``u`` on S^{d-2}; the measure disintegrates as
``(1 - t^2)^{(d-3)/2} dt dS(u)`` so a Gauss-Jacobi rule in ``t`` combined with
an exact rule one dimension lower integrates every polynomial of total degree
``<= degree`` exactly.  The circle uses equispaced angles and S^0 is the pair
of points ``{-1, +1}`` with unit weights.

For a non-identity metric ``g = L L^T`` the nodes are mapped by ``L^{-T}``,
which is an isometry from the round sphere onto the ``g``-unit sphere, so the
weights are unchanged.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from itertools import product
from math import gamma, pi

import numpy as np
from scipy.special import gammaln, roots_jacobi

__all__ = [
    "SphereQuadrature",
    "sphere_rule",
    "sphere_volume",
    "monomial_integral",
]


def sphere_volume(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} in R^d."""
    if d == 1:
        return 2.0
    return 2.0 * pi ** (d / 2) / gamma(d / 2)


def monomial_integral(powers) -> float:
    """Exact integral of ``prod v_i^{a_i}`` over the round unit sphere."""
    a = np.asarray(powers, dtype=int)
    if np.any(a % 2):
        return 0.0
    b = (a + 1) / 2.0
    return float(2.0 * np.exp(np.sum(gammaln(b)) - gammaln(np.sum(b))))


def _round_rule(d: int, degree: int):
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        n = degree + 1
        phi = 2 * pi * np.arange(n) / n
        return np.column_stack([np.cos(phi), np.sin(phi)]), np.full(n, 2 * pi / n)
    alpha = (d - 3) / 2.0
    nt = degree // 2 + 1
    t, wt = roots_jacobi(nt, alpha, alpha)
    low_nodes, low_w = _round_rule(d - 1, degree)
    s = np.sqrt(1.0 - t**2)
    nodes = np.concatenate(
        [np.column_stack([np.full(len(low_w), ti), si * low_nodes]) for ti, si in zip(t, s)]
    )
    weights = np.concatenate([wi * low_w for wi in wt])
    return nodes, weights


@dataclass(frozen=True)
class SphereQuadrature:
    """Nodes and positive weights on the unit sphere of a metric ``g``.

    ``degree`` is the highest total polynomial degree integrated exactly.
    """

    nodes: np.ndarray
    weights: np.ndarray
    degree: int
    metric: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def _isometric_coords(self):
        if self.metric is None:
            return self.nodes
        L = np.linalg.cholesky(self.metric)
        return self.nodes @ L

    def exactness_residual(self, degree: int | None = None) -> float:
        """Largest error over all monomials of total degree ``<= degree``."""
        degree = self.degree if degree is None else degree
        u = self._isometric_coords()
        worst = 0.0
        for a in product(range(degree + 1), repeat=self.dim):
            if sum(a) > degree:
                continue
            approx = np.dot(self.weights, np.prod(u ** np.array(a), axis=1))
            worst = max(worst, abs(approx - monomial_integral(a)))
        return worst

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# degree {self.degree}\n")
        for w, v in zip(self.weights, self.nodes):
            buf.write(" ".join(f"{x:.17g}" for x in (w, *v)) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str, metric=None) -> "SphereQuadrature":
        degree = -1
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "degree":
                    degree = int(parts[1])
                continue
            rows.append([float(x) for x in line.split()])
        arr = np.array(rows)
        return cls(arr[:, 1:], arr[:, 0], degree, None if metric is None else np.asarray(metric))


def sphere_rule(d: int, degree: int, metric=None) -> SphereQuadrature:
    """Quadrature on S^{d-1} exact for polynomials of degree ``<= degree``.

    Parameters
    ----------
    d : int
        Ambient dimension.
    degree : int
        Requested polynomial exactness.
    metric : array_like, optional
        Symmetric positive-definite ``d x d`` matrix; identity by default.
    """
    if d < 1 or degree < 0:
        raise ValueError("need d >= 1 and degree >= 0")
    nodes, weights = _round_rule(d, degree)
    if metric is not None:
        metric = np.asarray(metric, dtype=float)
        L = np.linalg.cholesky(metric)
        nodes = np.linalg.solve(L.T, nodes.T).T  # v = L^{-T} u
    return SphereQuadrature(nodes, weights, degree, metric)
