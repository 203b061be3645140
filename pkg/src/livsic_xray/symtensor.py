"""Symmetric tensors on a Euclidean space and the symbol of the normal operator.

Tensors are stored compressed over sorted multi-indices; every linear map
below is realised either on full ``d^m`` arrays (for clarity) or as an explicit
matrix in compressed coordinates (for the spectral statements).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement, permutations
from math import factorial, pi, sqrt

import numpy as np
from scipy import integrate, linalg
from scipy.special import gammaln

from .sphere import SphereQuadrature, sphere_rule

__all__ = [
    "EuclideanSpace",
    "SymTensor",
    "CotangentDirection",
    "SymbolMatrix",
    "DimensionError",
    "OrderError",
    "QuadratureDegreeError",
    "symmetrize",
    "trace_g",
    "adjoint_I",
    "contract_xi",
    "multiply_xi",
    "pullback_eval",
    "pushforward",
    "pushpull_matrix",
    "proj_ker_i_xi",
    "c_nm",
    "c_nm_quadrature",
    "symbol_sigma_m",
    "equator_frame",
    "verify_symbol_projection",
    "harmonic_decompose",
    "harmonic_recompose",
    "trace_free_basis",
    "pushpull_on_trace_free",
    "harmonic_degree_residual",
    "operator_matrix",
    "gram_matrix",
]


class DimensionError(ValueError):
    pass


class OrderError(ValueError):
    pass


class QuadratureDegreeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EuclideanSpace:
    """``R^d`` with a symmetric positive-definite metric ``g``."""

    g: np.ndarray
    g_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = np.array(self.g, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 1:
            raise DimensionError("metric must be a square matrix")
        if not np.allclose(g, g.T, atol=1e-14):
            raise ValueError("metric must be symmetric")
        if np.linalg.eigvalsh(g).min() <= 0:
            raise ValueError("metric must be positive definite")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "g_inv", np.linalg.inv(g))

    @classmethod
    def euclidean(cls, d: int) -> "EuclideanSpace":
        return cls(np.eye(d))

    @property
    def d(self) -> int:
        return self.g.shape[0]

    @property
    def n(self) -> int:
        """Dimension of the unit sphere."""
        return self.d - 1

    def norm(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.sqrt(np.einsum("...i,ij,...j->...", v, self.g, v))

    def sphere(self, degree: int) -> SphereQuadrature:
        return sphere_rule(self.d, degree, self.g)

    def random_unit(self, rng, size=None) -> np.ndarray:
        shape = (self.d,) if size is None else (size, self.d)
        u = rng.standard_normal(shape)
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        L = np.linalg.cholesky(self.g)
        return np.linalg.solve(L.T, u.T).T

    def __eq__(self, other):
        return isinstance(other, EuclideanSpace) and np.array_equal(self.g, other.g)

    def __hash__(self):
        return hash(self.g.tobytes())


# --- compressed index bookkeeping ------------------------------------------------


@lru_cache(maxsize=None)
def _multi_indices(d: int, m: int) -> np.ndarray:
    idx = list(combinations_with_replacement(range(d), m))
    return np.array(idx, dtype=int).reshape(len(idx), m)


@lru_cache(maxsize=None)
def _multiplicities(d: int, m: int) -> np.ndarray:
    out = []
    for alpha in _multi_indices(d, m):
        counts = np.bincount(alpha, minlength=d)
        out.append(factorial(m) / np.prod([factorial(c) for c in counts]))
    return np.array(out, dtype=float)


@lru_cache(maxsize=None)
def _expansion(d: int, m: int) -> np.ndarray:
    """For every full flat index, the position of its sorted multi-index."""
    lookup = {tuple(a): k for k, a in enumerate(_multi_indices(d, m))}
    full = np.indices((d,) * m).reshape(m, -1).T if m else np.zeros((1, 0), int)
    return np.array([lookup[tuple(sorted(row))] for row in full], dtype=int)


def dim_sym(d: int, m: int) -> int:
    return len(_multi_indices(d, m))


@dataclass(frozen=True, eq=False)
class SymTensor:
    """A symmetric ``order``-tensor stored by its sorted-index components."""

    space: EuclideanSpace
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if self.order < 0:
            raise OrderError("order must be >= 0")
        if c.size != dim_sym(self.space.d, self.order):
            raise DimensionError(
                f"expected {dim_sym(self.space.d, self.order)} coefficients, got {c.size}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, space, order):
        return cls(space, order, np.zeros(dim_sym(space.d, order)))

    @classmethod
    def random(cls, space, order, rng):
        return cls(space, order, rng.standard_normal(dim_sym(space.d, order)))

    @classmethod
    def from_full(cls, space, T, check=True):
        """Read off the sorted components of an already symmetric full array."""
        T = np.asarray(T, dtype=float)
        m = T.ndim
        if any(s != space.d for s in T.shape):
            raise DimensionError("full tensor shape does not match the space")
        if check and m > 1:
            for perm in permutations(range(m)):
                if not np.allclose(T, T.transpose(perm), atol=1e-12 * (1 + np.abs(T).max())):
                    raise ValueError("tensor is not symmetric; use symmetrize()")
        idx = _multi_indices(space.d, m)
        return cls(space, m, T[tuple(idx.T)] if m else T.reshape(1))

    def full(self) -> np.ndarray:
        d, m = self.space.d, self.order
        return self.coeffs[_expansion(d, m)].reshape((d,) * m)

    def inner(self, other: "SymTensor") -> float:
        _check_same(self, other)
        H = other.full()
        for axis in range(other.order):
            H = np.moveaxis(np.tensordot(self.space.g_inv, H, axes=([1], [axis])), 0, axis)
        return float(np.sum(self.full() * H))

    def norm(self) -> float:
        return sqrt(max(self.inner(self), 0.0))

    def _new(self, coeffs):
        return SymTensor(self.space, self.order, coeffs)

    def __add__(self, other):
        _check_same(self, other)
        return self._new(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_same(self, other)
        return self._new(self.coeffs - other.coeffs)

    def __mul__(self, c):
        return self._new(c * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return self._new(-self.coeffs)


def _check_same(a: SymTensor, b: SymTensor):
    if a.space != b.space or a.order != b.order:
        raise DimensionError("tensors live in different spaces or orders")


# --- basic algebra -----------------------------------------------------------------


def symmetrize(T, space: EuclideanSpace) -> SymTensor:
    """Average a full tensor over all permutations of its slots."""
    T = np.asarray(T, dtype=float)
    if any(s != space.d for s in T.shape):
        raise DimensionError("full tensor shape does not match the space")
    m = T.ndim
    if m <= 1:
        return SymTensor.from_full(space, T, check=False)
    acc = np.zeros_like(T)
    for perm in permutations(range(m)):
        acc += T.transpose(perm)
    return SymTensor.from_full(space, acc / factorial(m), check=False)


def trace_g(f: SymTensor) -> SymTensor:
    """Contract the first two slots against ``g^{-1}``."""
    if f.order < 2:
        raise OrderError("trace needs order >= 2")
    F = np.tensordot(f.space.g_inv, f.full(), axes=([0, 1], [0, 1]))
    return SymTensor.from_full(f.space, F, check=False)


def adjoint_I(u: SymTensor) -> SymTensor:
    """``I(u) = sigma(g (x) u)``, the adjoint of the trace."""
    return symmetrize(np.multiply.outer(u.space.g, u.full()), u.space)


@dataclass(frozen=True, eq=False)
class CotangentDirection:
    space: EuclideanSpace
    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if xi.size != self.space.d:
            raise DimensionError("covector has the wrong dimension")
        object.__setattr__(self, "xi", xi)
        if self.norm <= 0:
            raise ValueError("cotangent direction must be nonzero")

    @property
    def sharp(self) -> np.ndarray:
        return self.space.g_inv @ self.xi

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.xi @ self.space.g_inv @ self.xi))

    def scaled(self, c: float) -> "CotangentDirection":
        return CotangentDirection(self.space, c * self.xi)


def contract_xi(f: SymTensor, xi: CotangentDirection) -> SymTensor:
    """``i_xi f = f(xi^sharp, ., ..., .)``."""
    if f.order < 1:
        raise OrderError("cannot contract a scalar")
    F = np.tensordot(xi.sharp, f.full(), axes=([0], [0]))
    return SymTensor.from_full(f.space, F, check=False)


def multiply_xi(h: SymTensor, xi: CotangentDirection) -> SymTensor:
    """``sigma j_xi h = sigma(xi (x) h)``."""
    return symmetrize(np.multiply.outer(xi.xi, h.full()), h.space)


def operator_matrix(op, space: EuclideanSpace, m_in: int) -> np.ndarray:
    """Matrix of a linear map on compressed coordinates, column by column."""
    n_in = dim_sym(space.d, m_in)
    cols = []
    for k in range(n_in):
        e = np.zeros(n_in)
        e[k] = 1.0
        cols.append(op(SymTensor(space, m_in, e)).coeffs)
    return np.column_stack(cols)


def gram_matrix(space: EuclideanSpace, m: int) -> np.ndarray:
    """``G`` with ``<f, h> = f.coeffs @ G @ h.coeffs``."""
    return _gram_cached(space, m)


@lru_cache(maxsize=64)
def _gram_cached(space, m):
    N = dim_sym(space.d, m)
    E = np.zeros((space.d**m, N))
    E[np.arange(space.d**m), _expansion(space.d, m)] = 1.0
    Ginv = np.ones((1, 1))
    for _ in range(m):
        Ginv = np.kron(Ginv, space.g_inv)
    return E.T @ Ginv @ E


# --- sphere pullback / pushforward ------------------------------------------------


def _monomials(v: np.ndarray, m: int) -> np.ndarray:
    """``prod_k v[:, alpha_k]`` for every sorted multi-index ``alpha``."""
    idx = _multi_indices(v.shape[1], m)
    if m == 0:
        return np.ones((v.shape[0], 1))
    return np.prod(v[:, idx], axis=2)


def pullback_eval(f: SymTensor, v) -> np.ndarray | float:
    """``f(v, ..., v)`` for one unit vector or a stack of them."""
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[1] != f.space.d:
        raise DimensionError("vector dimension does not match the space")
    d, m = f.space.d, f.order
    out = _monomials(v, m) @ (_multiplicities(d, m) * f.coeffs)
    return float(out[0]) if single else out


def _check_degree(Q: SphereQuadrature, m: int):
    if Q.degree < 2 * m + 2:
        raise QuadratureDegreeError(
            f"quadrature degree {Q.degree} < {2 * m + 2} required for order {m}"
        )


def pushforward(h, m: int, Q: SphereQuadrature, space: EuclideanSpace) -> SymTensor:
    """Tensor with entries ``int h(v) g(v,u_1)...g(v,u_m) dS`` by quadrature."""
    _check_degree(Q, m)
    h = np.asarray(h, dtype=float)
    if h.shape != (len(Q),):
        raise DimensionError("h must be sampled at every quadrature node")
    gv = Q.nodes @ space.g
    return SymTensor(space, m, _monomials(gv, m).T @ (Q.weights * h))


def pushpull_matrix(space: EuclideanSpace, m: int, Q: SphereQuadrature) -> np.ndarray:
    """Compressed-coordinate matrix of ``pi_m_* pi_m^*``."""
    _check_degree(Q, m)
    d = space.d
    B = _monomials(Q.nodes, m) * _multiplicities(d, m)
    Bl = _monomials(Q.nodes @ space.g, m)
    return Bl.T @ (Q.weights[:, None] * B)


# --- projection onto ker i_xi -----------------------------------------------------


def _proj_matrix(xi: CotangentDirection, m: int) -> np.ndarray:
    space = xi.space
    N = dim_sym(space.d, m)
    if m == 0:
        return np.eye(N)
    A = operator_matrix(lambda h: multiply_xi(h, xi), space, m - 1)
    G = gram_matrix(space, m)
    AtG = A.T @ G
    try:
        return np.eye(N) - A @ np.linalg.solve(AtG @ A, AtG)
    except np.linalg.LinAlgError as exc:  # cannot happen for xi != 0
        raise RuntimeError("singular system in ker i_xi projection") from exc


def proj_ker_i_xi(f: SymTensor, xi: CotangentDirection) -> SymTensor:
    """Component of ``f`` in ``ker i_xi`` along ``ran sigma j_xi``."""
    if f.space != xi.space:
        raise DimensionError("tensor and covector live on different spaces")
    return SymTensor(f.space, f.order, _proj_matrix(xi, f.order) @ f.coeffs)


# --- the constant C_{n,m} and the principal symbol --------------------------------


def c_nm(n: int, m: int) -> float:
    """``int_0^pi sin^{n-1+2m}`` in closed Gamma-quotient form."""
    if n < 1 or m < 0:
        raise ValueError("need n >= 1, m >= 0")
    return float(sqrt(pi) * np.exp(gammaln((n + 2 * m) / 2) - gammaln((n + 1 + 2 * m) / 2)))


def c_nm_quadrature(n: int, m: int) -> float:
    val, _ = integrate.quad(lambda t: np.sin(t) ** (n - 1 + 2 * m), 0.0, pi, epsabs=0.0, epsrel=1e-12)
    return val


@dataclass(frozen=True, eq=False)
class SymbolMatrix:
    """Principal symbol of the normal operator at a covector, as a matrix."""

    order: int
    matrix: np.ndarray
    xi: CotangentDirection

    @property
    def space(self):
        return self.xi.space

    def apply(self, f: SymTensor) -> SymTensor:
        return SymTensor(self.space, self.order, self.matrix @ f.coeffs)

    def symmetry_residual(self) -> float:
        S = gram_matrix(self.space, self.order) @ self.matrix
        return float(np.abs(S - S.T).max())

    def eigenvalues(self) -> np.ndarray:
        """Spectrum of the map; real because it is self-adjoint for ``<,>``."""
        G = gram_matrix(self.space, self.order)
        S = G @ self.matrix
        return linalg.eigh(0.5 * (S + S.T), G, eigvals_only=True)

    def kernel_basis(self) -> np.ndarray:
        """``<,>``-orthonormal basis (columns) of ``ker i_xi``."""
        m = self.order
        if m == 0:
            B = np.eye(1)
        else:
            C = operator_matrix(lambda f: contract_xi(f, self.xi), self.space, m)
            B = linalg.null_space(C)
        G = gram_matrix(self.space, m)
        L = np.linalg.cholesky(B.T @ G @ B)
        return B @ np.linalg.inv(L).T

    def restricted_min_eigenvalue(self) -> float:
        Bo = self.kernel_basis()
        G = gram_matrix(self.space, self.order)
        R = Bo.T @ G @ self.matrix @ Bo
        return float(np.linalg.eigvalsh(0.5 * (R + R.T)).min())


def symbol_sigma_m(xi: CotangentDirection, m: int, Q: SphereQuadrature | None = None) -> SymbolMatrix:
    """``(2 pi / C_{n,m}) |xi|^{-1} P pi_* pi^* P`` with ``P`` the ker-i_xi projector."""
    space = xi.space
    if Q is None:
        Q = space.sphere(2 * m + 4)
    K = pushpull_matrix(space, m, Q)
    P = _proj_matrix(xi, m)
    M = (2 * pi / c_nm(space.n, m)) / xi.norm * (P @ K @ P)
    return SymbolMatrix(m, M, xi)


def equator_frame(xi: CotangentDirection) -> np.ndarray:
    """``g``-orthonormal basis (rows) of ``{v : xi(v) = 0}``.

    Gram-Schmidt is seeded by coordinate axes in order of increasing
    ``|xi_i| / |e_i|_g``; ties go to the lower index.
    """
    space = xi.space
    align = np.abs(xi.xi) / np.sqrt(np.diag(space.g))
    order = np.argsort(align, kind="stable")
    sharp = xi.sharp
    frame = []
    for i in order:
        v = np.zeros(space.d)
        v[i] = 1.0
        v = v - (xi.xi @ v) / (xi.xi @ sharp) * sharp
        for b in frame:
            v = v - (b @ space.g @ v) * b
        nv = space.norm(v)
        if nv > 1e-10:
            frame.append(v / nv)
        if len(frame) == space.d - 1:
            break
    return np.array(frame).reshape(space.d - 1, space.d)


def verify_symbol_projection(
    f: SymTensor,
    h: SymTensor,
    xi: CotangentDirection,
    Q_equator: SphereQuadrature | None = None,
    Q: SphereQuadrature | None = None,
) -> float:
    """Residual of the equator-integral identity for the ker-i_xi projection.

    The left side is ``C_{n,m}`` times the integral of ``f(v..v) h(v..v)`` over
    the great sphere orthogonal to ``xi``; the right side is
    ``< P pi_* pi^* P f, h >``.
    """
    _check_same(f, h)
    space, m = f.space, f.order
    if space.d < 2:
        raise DimensionError("need d >= 2")
    if Q_equator is None:
        Q_equator = sphere_rule(space.d - 1, 2 * m + 2)
    if Q is None:
        Q = space.sphere(2 * m + 4)
    frame = equator_frame(xi)
    v = Q_equator.nodes @ frame
    lhs = c_nm(space.n, m) * np.dot(Q_equator.weights, pullback_eval(f, v) * pullback_eval(h, v))
    P = _proj_matrix(xi, m)
    K = pushpull_matrix(space, m, Q)
    rhs = SymTensor(space, m, P @ K @ P @ f.coeffs).inner(h)
    return abs(lhs - rhs)


# --- trace-free decomposition and spherical harmonics -----------------------------


def _trace_matrix(space, m):
    return operator_matrix(trace_g, space, m)


def _I_matrix(space, m_in):
    return operator_matrix(adjoint_I, space, m_in)


def harmonic_decompose(u: SymTensor) -> list[SymTensor]:
    """Trace-free ``u_k`` of order ``m - 2k`` with ``u = sum_k I^k(u_k)``."""
    space, m = u.space, u.order
    if m < 2:
        return [u]
    T = _trace_matrix(space, m)
    I = _I_matrix(space, m - 2)
    w = np.linalg.solve(T @ I, T @ u.coeffs)  # I(w) is the orthogonal trace part
    u0 = SymTensor(space, m, u.coeffs - I @ w)
    return [u0] + harmonic_decompose(SymTensor(space, m - 2, w))


def harmonic_recompose(parts: list[SymTensor]) -> SymTensor:
    acc = parts[-1]
    for part in reversed(parts[:-1]):
        acc = adjoint_I(acc) + part
    return acc


def trace_free_basis(space: EuclideanSpace, m: int) -> np.ndarray:
    """``<,>``-orthonormal basis (columns) of the trace-free m-tensors."""
    G = gram_matrix(space, m)
    if m < 2:
        B = np.eye(dim_sym(space.d, m))
    else:
        B = linalg.null_space(_trace_matrix(space, m))
    L = np.linalg.cholesky(B.T @ G @ B)
    return B @ np.linalg.inv(L).T


def pushpull_on_trace_free(space: EuclideanSpace, m: int, Q: SphereQuadrature | None = None):
    """Matrix of ``pi_* pi^*`` in an orthonormal trace-free basis.

    Returns ``(lam, offdiag, matrix)`` where ``lam`` is the mean diagonal
    entry and ``offdiag`` the largest deviation from ``lam * Id``.
    """
    if Q is None:
        Q = space.sphere(2 * m + 4)
    Bo = trace_free_basis(space, m)
    G = gram_matrix(space, m)
    R = Bo.T @ G @ pushpull_matrix(space, m, Q) @ Bo
    lam = float(np.mean(np.diag(R)))
    return lam, float(np.abs(R - lam * np.eye(len(R))).max()), R


def harmonic_degree_residual(part: SymTensor, k: int, Q: SphereQuadrature | None = None) -> float:
    """Weak check that ``pi^* I^k(part)`` lies in one Laplace eigenspace.

    ``part`` has order ``j = m - 2k``; ``I^k(part)`` restricted to the sphere is
    tested for ``L^2`` orthogonality against ``pi^*`` of every trace-free
    tensor of order ``j' != j`` with ``j' <= m``.  The returned value is the
    largest normalised inner product.
    """
    space, j = part.space, part.order
    m = j + 2 * k
    if Q is None:
        Q = space.sphere(2 * m + 4)
    full = part
    for _ in range(k):
        full = adjoint_I(full)
    vals = pullback_eval(full, Q.nodes)
    nrm = sqrt(max(Q.integrate(vals**2), 1e-300))
    worst = 0.0
    for jp in range(m + 1):
        if jp == j:
            continue
        for col in trace_free_basis(space, jp).T:
            other = pullback_eval(SymTensor(space, jp, col), Q.nodes)
            onrm = sqrt(Q.integrate(other**2))
            worst = max(worst, abs(Q.integrate(vals * other)) / (nrm * onrm))
    return worst
