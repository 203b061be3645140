"""Suspension flow over a hyperbolic toral automorphism.

Phase space is ``{(x, s) : x in T^2, 0 <= s < r(x)}`` with ``(x, r(x))``
identified to ``(A x, 0)``; the flow moves ``s`` at unit speed.  Because the
splitting of ``A`` is constant in torus coordinates, stable and unstable
manifolds, shadowing and closing are computed exactly in eigencoordinates.

Arrays of states are passed as ``x`` with shape ``(..., 2)`` and ``s`` with
shape ``(...)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import ceil, floor, log, sqrt

import mpmath
import numpy as np

log_ = logging.getLogger(__name__)

__all__ = [
    "SuspensionModel",
    "SuspensionState",
    "PeriodicOrbit",
    "PseudoOrbit",
    "ShadowResult",
    "ShadowingError",
    "CoverError",
    "ScalarField",
    "FlowBoxCover",
    "LocalManifolds",
    "smith_normal_form",
    "periodic_points",
    "enumerate_orbits",
    "shadow",
    "local_manifolds",
    "local_coordinates",
    "product_point",
    "flow_box_cover",
    "flow_derivative",
    "holder_norm_estimate",
    "bump",
    "smooth_step",
    "orbits_to_csv",
    "load_model_config",
]


class ShadowingError(ValueError):
    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index


class CoverError(RuntimeError):
    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


def _mod1(x):
    x = np.mod(x, 1.0)
    return np.where(x >= 1.0, x - 1.0, x)


def _min_image(d):
    return d - np.round(d)


# --- model ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuspensionModel:
    """Suspension of ``A`` under the roof ``1 + a cos(2 pi x_1)``."""

    A: tuple = ((2, 1), (1, 1))
    roof_amplitude: float = 0.1
    epsilon0: float = 0.05

    def __post_init__(self):
        A = tuple(tuple(int(v) for v in row) for row in self.A)
        object.__setattr__(self, "A", A)
        det = A[0][0] * A[1][1] - A[0][1] * A[1][0]
        if abs(det) != 1:
            raise ValueError("A must be unimodular")
        if abs(A[0][0] + A[1][1]) <= 2:
            raise ValueError("A must be hyperbolic (|tr A| > 2)")
        if not 0.0 <= self.roof_amplitude <= 0.3:
            raise ValueError("roof amplitude must lie in [0, 0.3]")
        if self.epsilon0 <= 0:
            raise ValueError("epsilon0 must be positive")

    @cached_property
    def Am(self) -> np.ndarray:
        return np.array(self.A, dtype=float)

    @cached_property
    def A_int(self) -> np.ndarray:
        return np.array(self.A, dtype=np.int64)

    @cached_property
    def A_inv_int(self) -> np.ndarray:
        (a, b), (c, d) = self.A
        det = a * d - b * c
        return np.array([[d, -b], [-c, a]], dtype=np.int64) * det

    @cached_property
    def A_inv(self) -> np.ndarray:
        return self.A_inv_int.astype(float)

    @cached_property
    def _eig(self):
        w, V = np.linalg.eig(self.Am)
        w, V = w.real, V.real
        iu = int(np.argmax(np.abs(w)))
        eu, es = V[:, iu], V[:, 1 - iu]
        eu = eu / np.linalg.norm(eu) * (1 if eu[np.argmax(np.abs(eu))] > 0 else -1)
        es = es / np.linalg.norm(es) * (1 if es[np.argmax(np.abs(es))] > 0 else -1)
        return w[iu], w[1 - iu], eu, es

    @property
    def lam_u(self) -> float:
        """Unstable eigenvalue (``|lam_u| > 1``)."""
        return float(self._eig[0])

    @property
    def lam_s(self) -> float:
        return float(self._eig[1])

    @property
    def lam(self) -> float:
        """``lambda_A = |lam_u|``."""
        return abs(self.lam_u)

    @property
    def e_u(self) -> np.ndarray:
        return self._eig[2]

    @property
    def e_s(self) -> np.ndarray:
        return self._eig[3]

    @cached_property
    def E(self) -> np.ndarray:
        """Columns ``e_u, e_s``."""
        return np.column_stack([self.e_u, self.e_s])

    @cached_property
    def E_inv(self) -> np.ndarray:
        return np.linalg.inv(self.E)

    def roof(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 1.0 + self.roof_amplitude * np.cos(2 * np.pi * x[..., 0])

    def roof_min(self) -> float:
        return 1.0 - self.roof_amplitude

    def roof_max(self) -> float:
        return 1.0 + self.roof_amplitude

    def apply_A(self, x):
        return _mod1(np.asarray(x, dtype=float) @ self.Am.T)

    def apply_A_inv(self, x):
        return _mod1(np.asarray(x, dtype=float) @ self.A_inv.T)

    # -- flow -------------------------------------------------------------------------

    def normalize(self, x, s):
        """Bring extended heights back into ``[0, r(x))``."""
        x = _mod1(np.array(x, dtype=float))
        s = np.array(s, dtype=float)
        scalar = s.ndim == 0
        x = np.atleast_2d(x) if scalar else x
        s = np.atleast_1d(s)
        while True:
            r = self.roof(x)
            up = s >= r
            if not up.any():
                break
            s = np.where(up, s - r, s)
            x = np.where(up[..., None], self.apply_A(x), x)
        while True:
            down = s < 0
            if not down.any():
                break
            xp = np.where(down[..., None], self.apply_A_inv(x), x)
            s = np.where(down, s + self.roof(xp), s)
            x = xp
        if scalar:
            return x[0], s[0]
        return x, s

    def flow(self, x, s, t):
        """``phi_t`` applied to states; exact piecewise evaluation."""
        s = np.asarray(s, dtype=float) + t
        return self.normalize(x, s)

    def up(self, x, s):
        """Same point written over the preceding base point (height >= r)."""
        xp = self.apply_A_inv(x)
        return xp, np.asarray(s) + self.roof(xp)

    def down(self, x, s):
        """Same point written over the next base point (height < 0)."""
        return self.apply_A(x), np.asarray(s) - self.roof(x)

    def distance(self, x1, s1, x2, s2) -> np.ndarray:
        """Flat distance in the chart of either point, over adjacent fibers.

        One point stays put while the other is taken as is or lifted across
        the roof in either direction (five combinations).
        """
        x1, s1, x2, s2 = (np.asarray(a, dtype=float) for a in (x1, s1, x2, s2))

        def flat(xa, sa, xb, sb):
            dx = _min_image(xa - xb)
            return np.sqrt(np.sum(dx**2, axis=-1) + (sa - sb) ** 2)

        cands = [flat(x1, s1, x2, s2)]
        cands.append(flat(x1, s1, *self.up(x2, s2)))
        cands.append(flat(x1, s1, *self.down(x2, s2)))
        cands.append(flat(*self.up(x1, s1), x2, s2))
        cands.append(flat(*self.down(x1, s1), x2, s2))
        return np.min(cands, axis=0)

    def pairwise_distance(self, qx, qs, px, ps) -> np.ndarray:
        """Matrix of ``distance`` between every query and every point."""
        qx, qs, px, ps = (np.asarray(a, dtype=float) for a in (qx, qs, px, ps))
        qreps = [(qx, qs), self.up(qx, qs), self.down(qx, qs)]
        preps = [(px, ps), self.up(px, ps), self.down(px, ps)]
        out = None
        for a, b in [(0, 0), (0, 1), (0, 2), (1, 0), (2, 0)]:
            (x1, s1), (x2, s2) = qreps[a], preps[b]
            dx = _min_image(x1[:, None, :] - x2[None, :, :])
            d2 = dx[..., 0] ** 2 + dx[..., 1] ** 2 + (s1[:, None] - s2[None, :]) ** 2
            out = d2 if out is None else np.minimum(out, d2)
        return np.sqrt(out)

    def sample_uniform(self, rng, n):
        """Samples of the invariant volume (Lebesgue x height)."""
        xs, ss = [], []
        need = n
        while need > 0:
            x = rng.random((2 * need + 16, 2))
            keep = rng.random(len(x)) * self.roof_max() < self.roof(x)
            x = x[keep][:need]
            xs.append(x)
            ss.append(rng.random(len(x)) * self.roof(x))
            need -= len(x)
        return np.concatenate(xs), np.concatenate(ss)

    def volume(self) -> float:
        return 1.0  # mean of 1 + a cos over the torus


@dataclass(frozen=True)
class SuspensionState:
    base: tuple
    height: float

    @classmethod
    def make(cls, model: SuspensionModel, base, height=0.0):
        x, s = model.normalize(np.asarray(base, dtype=float), float(height))
        return cls((float(x[0]), float(x[1])), float(s))

    @property
    def x(self):
        return np.array(self.base)

    def flow(self, model, t):
        return SuspensionState.make(model, *model.flow(self.x, self.height, t))


# --- periodic points ---------------------------------------------------------------


def _mat_pow(A, n):
    R = [[1, 0], [0, 1]]
    for _ in range(n):
        R = [[R[0][0] * A[0][0] + R[0][1] * A[1][0], R[0][0] * A[0][1] + R[0][1] * A[1][1]],
             [R[1][0] * A[0][0] + R[1][1] * A[1][0], R[1][0] * A[0][1] + R[1][1] * A[1][1]]]
    return R


def smith_normal_form(M):
    """``(U, D, V)`` with ``U M V = D`` diagonal, ``D[0] | D[1]``, U, V unimodular.

    Plain Python integers, any square size.
    """
    n = len(M)
    D = [list(map(int, row)) for row in M]
    U = [[int(i == j) for j in range(n)] for i in range(n)]
    V = [[int(i == j) for j in range(n)] for i in range(n)]

    def swap_rows(X, i, j):
        X[i], X[j] = X[j], X[i]

    def swap_cols(X, i, j):
        for row in X:
            row[i], row[j] = row[j], row[i]

    def add_row(X, src, dst, q):  # row dst += q * row src
        X[dst] = [a + q * b for a, b in zip(X[dst], X[src])]

    def add_col(X, src, dst, q):
        for row in X:
            row[dst] += q * row[src]

    for t in range(n):
        while True:
            piv = None
            for i in range(t, n):
                for j in range(t, n):
                    if D[i][j] and (piv is None or abs(D[i][j]) < abs(D[piv[0]][piv[1]])):
                        piv = (i, j)
            if piv is None:
                return U, D, V
            i, j = piv
            swap_rows(D, t, i)
            swap_rows(U, t, i)
            swap_cols(D, t, j)
            swap_cols(V, t, j)
            done = True
            for i in range(t + 1, n):
                q = D[i][t] // D[t][t]
                add_row(D, t, i, -q)
                add_row(U, t, i, -q)
                if D[i][t]:
                    done = False
            for j in range(t + 1, n):
                q = D[t][j] // D[t][t]
                add_col(D, t, j, -q)
                add_col(V, t, j, -q)
                if D[t][j]:
                    done = False
            if not done:
                continue
            bad = [(i, j) for i in range(t + 1, n) for j in range(t + 1, n) if D[i][j] % D[t][t]]
            if bad:
                add_row(D, bad[0][0], t, 1)
                add_row(U, bad[0][0], t, 1)
                continue
            break
        if D[t][t] < 0:
            D[t] = [-a for a in D[t]]
            U[t] = [-a for a in U[t]]
    return U, D, V


def periodic_points(model: SuspensionModel, n: int, as_fractions=False):
    """All ``z in [0,1)^2`` with ``A^n z = z`` mod 1.

    Returned as integer numerators ``p`` (shape ``(count, 2)``) over the common
    denominator ``N = |det(A^n - I)|``, or as a list of ``Fraction`` pairs.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > 40:
        raise OverflowError("lambda_A^n too large for enumeration (n > 40)")
    An = _mat_pow(model.A, n)
    M = [[An[0][0] - 1, An[0][1]], [An[1][0], An[1][1] - 1]]
    N = abs(M[0][0] * M[1][1] - M[0][1] * M[1][0])
    U, D, V = smith_normal_form(M)
    d1, d2 = abs(D[0][0]), abs(D[1][1])
    assert d1 * d2 == N
    j1, j2 = np.meshgrid(np.arange(d1, dtype=object), np.arange(d2, dtype=object), indexing="ij")
    y = np.stack([j1.ravel() * d2, j2.ravel() * d1], axis=1)  # (N/d) j = N * j/d
    Vm = np.array(V, dtype=object)
    p = np.mod(y @ Vm.T, N)
    if N < 2**40:
        p = p.astype(np.int64)
    if as_fractions:
        return [(Fraction(int(a), N), Fraction(int(b), N)) for a, b in p]
    return p, N


def _orbit_exact(model, z, n):
    """Exact base orbit ``z, Az, ..., A^{n-1} z`` of a rational point."""
    (a, b), (c, d) = model.A
    out = [z]
    for _ in range(n - 1):
        x, y = out[-1]
        out.append(((a * x + b * y) % 1, (c * x + d * y) % 1))
    return out


@dataclass
class PeriodicOrbit:
    """Closed flow orbit over an exact rational periodic base point."""

    model: SuspensionModel
    base_point: tuple  # pair of Fractions
    n: int
    period: float = field(default=None)

    def __post_init__(self):
        self.base_point = (Fraction(self.base_point[0]), Fraction(self.base_point[1]))
        if self.period is None:
            self.period = float(np.sum(self.model.roof(self.base_orbit)))

    @cached_property
    def base_orbit(self) -> np.ndarray:
        pts = _orbit_exact(self.model, self.base_point, self.n)
        return np.array([[float(x), float(y)] for x, y in pts])

    @cached_property
    def crossing_times(self) -> np.ndarray:
        """Flow time at which each base slot is entered (starting at 0)."""
        r = self.model.roof(self.base_orbit)
        return np.concatenate([[0.0], np.cumsum(r)[:-1]])

    @property
    def start(self) -> SuspensionState:
        return SuspensionState(tuple(self.base_orbit[0]), 0.0)

    def state_at(self, t):
        """States ``phi_t(start)`` read off the exact base orbit."""
        t = np.mod(np.asarray(t, dtype=float), self.period)
        j = np.searchsorted(self.crossing_times, t, side="right") - 1
        j = np.clip(j, 0, self.n - 1)
        return self.base_orbit[j], t - self.crossing_times[j]

    def samples(self, count: int):
        t = np.arange(count) * (self.period / count)
        x, s = self.state_at(t)
        return t, x, s

    def closure_residual(self) -> float:
        """``d(phi_T(start), start)`` with the float flow (short orbits only)."""
        x0 = self.base_orbit[0]
        x, s = self.model.flow(x0, 0.0, self.period)
        return float(self.model.distance(x, s, x0, 0.0))

    def exact_closure(self) -> bool:
        (a, b), (c, d) = _mat_pow(self.model.A, self.n)
        x, y = self.base_point
        return ((a * x + b * y) % 1, (c * x + d * y) % 1) == self.base_point


def enumerate_orbits(model: SuspensionModel, L: float) -> list[PeriodicOrbit]:
    """Every closed orbit of period ``<= L``, one per base cycle.

    The representative base point is the lexicographically smallest point of
    the cycle.
    """
    if L <= 0:
        raise ValueError("L must be positive")
    out = []
    n = 1
    while n * model.roof_min() <= L + 1e-12:
        p, N = periodic_points(model, n)
        Aint = np.array(model.A, dtype=object if p.dtype == object else np.int64)
        orbit = [p]
        for _ in range(n - 1):
            orbit.append(np.mod(orbit[-1] @ Aint.T, N))
        stack = np.stack(orbit)  # (n, count, 2)
        # minimal period exactly n
        prime = np.ones(len(p), dtype=bool)
        for k in range(1, n):
            if n % k == 0:
                prime &= ~np.all(stack[k] == p, axis=1)
        keys = stack[..., 0] * N + stack[..., 1]
        rep = np.argmin(keys, axis=0) if p.dtype != object else np.array(
            [min(range(n), key=lambda k: keys[k, i]) for i in range(len(p))]
        )
        idx = np.nonzero((rep == 0) & prime)[0]
        bases = stack[:, idx, :].astype(float) / N  # (n, k, 2)
        periods = model.roof(bases.reshape(-1, 2)).reshape(n, -1).sum(axis=0)
        for k in np.nonzero(periods <= L + 1e-12)[0]:
            i = idx[k]
            z = (Fraction(int(p[i, 0]), N), Fraction(int(p[i, 1]), N))
            orb = PeriodicOrbit(model, z, n, float(periods[k]))
            orb.__dict__["base_orbit"] = bases[:, k, :]  # seeds the cached property
            out.append(orb)
        n += 1
    return out


def orbits_to_csv(orbits, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "period", "base_x", "base_y"])
        for o in orbits:
            w.writerow([o.n, repr(o.period), repr(float(o.base_point[0])), repr(float(o.base_point[1]))])


def load_model_config(path) -> SuspensionModel:
    """Read ``matrix``, ``roof_amplitude``, ``epsilon0`` from a key = value file."""
    vals = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            vals[key.strip()] = value.strip()
    kw = {}
    if "matrix" in vals:
        a = [int(v) for v in vals["matrix"].replace(",", " ").split()]
        if len(a) != 4:
            raise ValueError("matrix needs 4 integers")
        kw["A"] = ((a[0], a[1]), (a[2], a[3]))
    if "roof_amplitude" in vals:
        kw["roof_amplitude"] = float(vals["roof_amplitude"])
    if "epsilon0" in vals:
        kw["epsilon0"] = float(vals["epsilon0"])
    return SuspensionModel(**kw)


# --- shadowing ---------------------------------------------------------------------


@dataclass
class PseudoOrbit:
    """Chain of orbit segments ``(start state, duration)`` with small jumps."""

    model: SuspensionModel
    segments: list  # [(SuspensionState, T_i)]
    periodic: bool = False

    def __post_init__(self):
        for _, T in self.segments:
            if T < 1:
                raise ValueError("segment durations must be >= 1")

    def end_state(self, i):
        st, T = self.segments[i]
        return self.model.flow(st.x, st.height, T)

    def gaps(self) -> np.ndarray:
        k = len(self.segments)
        pairs = [(i, i + 1) for i in range(k - 1)]
        if self.periodic:
            pairs.append((k - 1, 0))
        out = []
        for i, j in pairs:
            x, s = self.end_state(i)
            st = self.segments[j][0]
            out.append(float(self.model.distance(x, s, st.x, st.height)))
        return np.array(out)

    @property
    def jump_bound(self) -> float:
        g = self.gaps()
        return float(g.max()) if len(g) else 0.0


def _exact_orbit_of_float(model, x0, k):
    z = (Fraction(float(x0[0])), Fraction(float(x0[1])))
    return _orbit_exact(model, z, k + 2)


def _trajectory(model, slots, s0, t):
    """States at times ``t`` along the slot sequence, starting at height ``s0``."""
    r = model.roof(slots)
    ends = np.cumsum(r)
    h = s0 + np.asarray(t, dtype=float)
    j = np.searchsorted(ends, h, side="right")
    j = np.clip(j, 0, len(slots) - 1)
    starts = np.concatenate([[0.0], ends[:-1]])
    return slots[j], h - starts[j]


@dataclass
class ShadowResult:
    orbit: PeriodicOrbit | None
    slots: np.ndarray
    taus: np.ndarray
    time_offsets: np.ndarray
    profiles: list  # per segment: (t grid, distances)
    max_distance: float
    epsilon: float
    theta: float
    C: float


def _flat(xa, sa, xb, sb):
    dx = _min_image(np.asarray(xa) - np.asarray(xb))
    return float(np.sqrt(np.sum(dx**2) + (sa - sb) ** 2))


def _segment_slots(model, st, T):
    """Exact base slots visited by one segment and its final height."""
    x_end, e = model.flow(st.x, st.height, T)
    k = 0
    h = st.height + T
    exact = _exact_orbit_of_float(model, st.x, int(T / model.roof_min()) + 3)
    base = np.array([[float(a), float(b)] for a, b in exact])
    r = model.roof(base)
    while h >= r[k]:
        h -= r[k]
        k += 1
    return base, k, h


def shadow(p: PseudoOrbit, n_profile: int = 64) -> ShadowResult:
    """Genuine orbit shadowing a pseudo-orbit of the suspension flow.

    Jumps are summed as geometric series in eigencoordinates; periodic chains
    are then snapped to the exact rational periodic point of ``A^N``.
    """
    model = p.model
    gaps = p.gaps()
    eps0 = model.epsilon0
    if len(gaps) and gaps.max() > eps0:
        bad = int(np.argmax(gaps))
        raise ShadowingError(f"gap {gaps[bad]:.3g} at index {bad} exceeds epsilon0={eps0}", bad)
    epsilon = float(gaps.max()) if len(gaps) else 0.0

    segs = p.segments
    k_seg = len(segs)
    seg_data = [_segment_slots(model, st, T) for st, T in segs]
    y_slots, jumps, starts = [], [], []
    counts = []
    for i in range(k_seg):
        base, k, e = seg_data[i]
        last = i == k_seg - 1
        if last and not p.periodic:
            starts.append(len(y_slots))
            y_slots.extend(base[: k + 1])
            counts.append(k + 1)
            jumps.extend([np.zeros(2)] * (k + 1))
            break
        nxt = segs[(i + 1) % k_seg][0]
        # raw chart distance: the quotient metric cannot tell the offsets apart
        cand = {
            0: _flat(base[k], e, nxt.x, nxt.height),
            1: _flat(*model.down(base[k], e), nxt.x, nxt.height),
            -1: _flat(base[k], e, *model.up(nxt.x, nxt.height)),
        }
        o = min(cand, key=lambda q: (cand[q], abs(q)))
        c = k + o
        if c < 1:
            raise ShadowingError(f"segment {i} too short to carry a base step", i)
        starts.append(len(y_slots))
        y_slots.extend(base[:c])
        counts.append(c)
        jv = [np.zeros(2)] * c
        pred = base[c]  # A applied to the last carried slot
        jv[-1] = _min_image(nxt.x - pred)
        jumps.extend(jv)
    y = np.array(y_slots)
    e = np.array(jumps)
    N = len(y)
    lu, ls = model.lam_u, model.lam_s
    eu_c, es_c = (e @ model.E_inv.T).T  # jump components
    du = np.zeros(N)
    ds = np.zeros(N)
    if p.periodic:
        # delta_{j+1} = A delta_j - e_j, summed cyclically
        for j in range(N):
            ks = np.arange(N)
            du[j] = np.sum(lu ** (-(ks + 1)) * eu_c[(j + ks) % N]) / (1 - lu ** (-N))
            ks1 = np.arange(1, N + 1)
            ds[j] = -np.sum(ls ** (ks1 - 1) * es_c[(j - ks1) % N]) / (1 - ls**N)
    else:
        for j in range(N):
            ks = np.arange(0, N - 1 - j)
            du[j] = np.sum(lu ** (-(ks + 1)) * eu_c[j + ks])
            ks1 = np.arange(1, j + 1)
            ds[j] = -np.sum(ls ** (ks1 - 1) * es_c[j - ks1])
    delta = np.outer(du, model.e_u) + np.outer(ds, model.e_s)
    z = y + delta
    orbit = None
    if p.periodic:
        orbit = _snap_periodic(model, y, e, N, z[0])
        z = orbit.base_orbit
    else:
        z = _mod1(z)

    r_true = model.roof(z)
    cum = np.concatenate([[0.0], np.cumsum(r_true)])
    taus = []
    for i in range(len(starts)):
        # align through the local product chart so roof variation is not counted as distance
        st = segs[i][0]
        sig = _min_image(z[starts[i]] - y[starts[i]]) @ model.E_inv.T
        _, hz = product_point(model, y[starts[i]], st.height, sig[0], sig[1])
        taus.append(cum[starts[i]] + float(hz))
    taus = np.array(taus)
    total = cum[-1]
    offsets = []
    for i in range(len(starts) - 1):
        offsets.append(abs(taus[i + 1] - (taus[i] + segs[i][1])))
    if p.periodic:
        offsets.append(abs(taus[0] + total - (taus[-1] + segs[-1][1])))
    offsets = np.array(offsets)

    profiles = []
    dmax = 0.0
    zz = np.concatenate([z, z, z]) if p.periodic else z
    for i in range(len(starts)):
        st, T = segs[i]
        base = seg_data[i][0]
        t = np.linspace(0.0, T, n_profile)
        xa, sa = _trajectory(model, base, st.height, t)
        xb, sb = _trajectory(model, zz[starts[i]:], taus[i] - cum[starts[i]], t)
        dist = model.distance(xa, sa, xb, sb)
        profiles.append((t, dist))
        dmax = max(dmax, float(dist.max()))
    theta, C = _fit_profile(profiles, segs, max(epsilon, 1e-300))
    return ShadowResult(orbit, z, taus, offsets, profiles, dmax, epsilon, theta, C)


def _fit_profile(profiles, segs, eps):
    """Decay rate from log-linear fits on each half-segment that carries a gap."""
    mm, ll = [], []
    for (t, dist), (_, T) in zip(profiles, segs):
        for half in (t <= T / 2, t >= T / 2):
            m = np.minimum(t, T - t)[half]
            d = dist[half]
            if d[np.argmin(m)] < 0.1 * eps:
                continue
            ok = d > 1e-13
            mm.append(m[ok])
            ll.append(np.log(d[ok]))
    if not mm:
        return float("nan"), float("nan")
    mm = np.concatenate(mm)
    ll = np.concatenate(ll)
    if len(mm) < 3 or np.ptp(mm) == 0:
        return float("nan"), float("nan")
    slope, _ = np.polyfit(mm, ll, 1)
    theta = -slope
    # smallest C making the bound hold on every measured point
    C = 0.0
    for (t, dist), (_, T) in zip(profiles, segs):
        C = max(C, float(np.max(dist * np.exp(theta * np.minimum(t, T - t)))) / eps)
    return float(theta), C


def _snap_periodic(model, y, e, N, z0_float) -> PeriodicOrbit:
    """Exact periodic point of ``A^N`` nearest to the shadowing solution."""
    dps = 30 + int(N * log(model.lam, 10)) + 10
    with mpmath.workdps(dps):
        # eigen data at high precision
        A = mpmath.matrix([[model.A[0][0], model.A[0][1]], [model.A[1][0], model.A[1][1]]])
        tr = A[0, 0] + A[1, 1]
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        disc = mpmath.sqrt(tr**2 - 4 * det)
        lu = (tr + disc) / 2 if abs((tr + disc) / 2) > 1 else (tr - disc) / 2
        ls = det / lu
        def evec(lmb):
            v = mpmath.matrix([A[0, 1], lmb - A[0, 0]]) if A[0, 1] != 0 else mpmath.matrix([lmb - A[1, 1], A[1, 0]])
            return v / mpmath.norm(v)
        eu, es = evec(lu), evec(ls)
        Em = mpmath.matrix([[eu[0], es[0]], [eu[1], es[1]]])
        Ei = Em**-1
        # every jump recomputed exactly, including rounding residuals inside
        # segments: (A^N - I) amplifies them by lambda^N
        (a11, a12), (a21, a22) = model.A
        yq = [(Fraction(float(p[0])), Fraction(float(p[1]))) for p in y]
        comps = []
        for j in range(N):
            x1, x2 = yq[j]
            n1, n2 = yq[(j + 1) % N]
            d1 = n1 - (a11 * x1 + a12 * x2)
            d2 = n2 - (a21 * x1 + a22 * x2)
            d1 -= round(d1)
            d2 -= round(d2)
            ev = mpmath.matrix([mpmath.mpf(d1.numerator) / d1.denominator, mpmath.mpf(d2.numerator) / d2.denominator])
            comps.append(Ei * ev)
        du = mpmath.mpf(0)
        for k in range(N):
            du += lu ** (-(k + 1)) * comps[k][0]
        du /= 1 - lu ** (-N)
        ds = mpmath.mpf(0)
        for k in range(1, N + 1):
            ds -= ls ** (k - 1) * comps[(-k) % N][1]
        ds /= 1 - ls**N
        y0 = [mpmath.mpf(Fraction(float(y[0, i])).numerator) / Fraction(float(y[0, i])).denominator for i in range(2)]
        z0 = [y0[i] + du * eu[i] + ds * es[i] for i in range(2)]
        An = _mat_pow(model.A, N)
        M = [[An[0][0] - 1, An[0][1]], [An[1][0], An[1][1] - 1]]
        k = [int(mpmath.nint(M[i][0] * z0[0] + M[i][1] * z0[1])) for i in range(2)]
    det = M[0][0] * M[1][1] - M[0][1] * M[1][0]
    zx = Fraction(M[1][1] * k[0] - M[0][1] * k[1], det) % 1
    zy = Fraction(-M[1][0] * k[0] + M[0][0] * k[1], det) % 1
    orbit = PeriodicOrbit(model, (zx, zy), N)
    err = _min_image(orbit.base_orbit[0] - _mod1(z0_float))
    if np.abs(err).max() > 1e-6:
        raise ShadowingError(f"periodic snap moved the point by {np.abs(err).max():.3g}")
    return orbit


# --- local manifolds and flow boxes ------------------------------------------------

_CORR_TERMS = 40


def _corr_unstable(model, x, su):
    """Height shift putting ``x + su e_u`` on the strong unstable leaf of ``(x, 0)``."""
    x = np.asarray(x, dtype=float)
    su = np.asarray(su, dtype=float)
    acc = np.zeros(np.broadcast(x[..., 0], su).shape)
    xp = x
    for j in range(1, _CORR_TERMS):
        xp = model.apply_A_inv(xp)
        off = (model.lam_u ** (-j)) * su
        acc -= model.roof(xp + off[..., None] * model.e_u) - model.roof(xp)
    return acc


def _corr_stable(model, x, ss):
    x = np.asarray(x, dtype=float)
    ss = np.asarray(ss, dtype=float)
    acc = np.zeros(np.broadcast(x[..., 0], ss).shape)
    xp = x
    for j in range(0, _CORR_TERMS):
        off = (model.lam_s**j) * ss
        acc += model.roof(xp + off[..., None] * model.e_s) - model.roof(xp)
        xp = model.apply_A(xp)
    return acc


def product_point(model, x, s, su, ss):
    """Point of ``W_eps(x, s)`` with eigencoordinates ``(su, ss)``; extended height."""
    x = np.asarray(x, dtype=float)
    if model.roof_amplitude == 0:
        base = x + np.asarray(su)[..., None] * model.e_u + np.asarray(ss)[..., None] * model.e_s
        return _mod1(base), np.asarray(s) + 0.0 * np.asarray(su) * np.asarray(ss)
    y = _mod1(x + np.asarray(su)[..., None] * model.e_u)
    hy = np.asarray(s) + _corr_unstable(model, x, su)
    z = _mod1(y + np.asarray(ss)[..., None] * model.e_s)
    hz = hy + _corr_stable(model, y, ss)
    return z, hz


def local_coordinates(model, ref_x, ref_s, qx, qs):
    """``(su, ss, t)`` with ``q = phi_t(product_point(ref, su, ss))``.

    The representation of ``q`` (itself or its images over the adjacent base
    points) giving the smallest coordinates is used.
    """
    ref_x = np.asarray(ref_x, dtype=float)
    ref_s = np.asarray(ref_s, dtype=float)
    best = None
    for ix, is_ in ((qx, qs), model.up(qx, qs), model.down(qx, qs)):
        dx = _min_image(np.asarray(ix) - ref_x)
        sig = dx @ model.E_inv.T
        su, ss = sig[..., 0], sig[..., 1]
        _, h = product_point(model, ref_x, ref_s, su, ss)
        t = np.asarray(is_) - h
        score = su**2 + ss**2 + t**2
        if best is None:
            best = [su, ss, t, score]
        else:
            better = score < best[3]
            best = [np.where(better, a, b) for a, b in zip((su, ss, t, score), best)]
    return best[0], best[1], best[2]


@dataclass
class LocalManifolds:
    model: SuspensionModel
    center: SuspensionState
    eps: float

    def stable(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        return product_point(self.model, self.center.x, self.center.height, 0.0 * sigma, sigma)

    def unstable(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        return product_point(self.model, self.center.x, self.center.height, sigma, 0.0 * sigma)

    def product(self, su, ss):
        return product_point(self.model, self.center.x, self.center.height, su, ss)

    def coordinates(self, qx, qs):
        return local_coordinates(self.model, self.center.x, self.center.height, qx, qs)

    def contains(self, qx, qs, which="product", tol=1e-9):
        su, ss, t = self.coordinates(qx, qs)
        ok = np.abs(t) <= tol
        if which in ("product", "stable"):
            ok &= np.abs(ss) <= self.eps
        if which in ("product", "unstable"):
            ok &= np.abs(su) <= self.eps
        if which == "stable":
            ok &= np.abs(su) <= tol
        if which == "unstable":
            ok &= np.abs(ss) <= tol
        return ok


def local_manifolds(model: SuspensionModel, state: SuspensionState, eps: float) -> LocalManifolds:
    if eps > model.epsilon0:
        raise ValueError("eps must not exceed epsilon0")
    return LocalManifolds(model, state, eps)


def bump(u):
    """``exp(-1/(1-u^2))`` on ``|u| < 1``, zero outside."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = np.abs(u) < 1
    out[m] = np.exp(-1.0 / (1.0 - u[m] ** 2))
    return out


def bump_prime(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = np.abs(u) < 1
    um = u[m]
    out[m] = np.exp(-1.0 / (1.0 - um**2)) * (-2.0 * um / (1.0 - um**2) ** 2)
    return out


def smooth_step(u):
    """``C^3`` septic step, 0 for ``u <= 0`` and 1 for ``u >= 1``.

    Polynomial on ``[0, 1]``, so fields built from it are piecewise
    polynomial along flow lines and Gauss-Legendre integrates them exactly.
    """
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    return u**4 * (35 - 84 * u + 70 * u**2 - 20 * u**3)


def smooth_step_prime(u):
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    return 140 * u**3 * (1 - u) ** 3


@dataclass
class FlowBoxCover:
    """Flow boxes ``U_i = phi_(-delta, delta)(W_eps0(c_i))`` with a partition of unity.

    Box ``i`` is the pair (base-grid center, height layer).  Partition
    functions are ``theta_i = psi_i / sum_j psi_j`` with
    ``psi_i = b(su/eps0) b(ss/eps0) b(t/delta)``.
    """

    model: SuspensionModel
    eps0: float
    delta: float
    n_grid: int
    layers: np.ndarray  # (n_grid, n_grid) number of layers per center

    @property
    def h(self):
        return 1.0 / self.n_grid

    def center(self, i, j, k):
        x = np.array([(i + 0.5) * self.h, (j + 0.5) * self.h])
        return x, k * self.delta

    @property
    def n_boxes(self) -> int:
        return int(self.layers.sum())

    def _box_id(self, i, j, k):
        return (i * self.n_grid + j) * 64 + k

    def box_centers(self, box_ids):
        box_ids = np.asarray(box_ids)
        k = box_ids % 64
        ij = box_ids // 64
        i, j = ij // self.n_grid, ij % self.n_grid
        x = np.stack([(i + 0.5) * self.h, (j + 0.5) * self.h], axis=-1)
        return x, k * self.delta

    def box_center(self, box_id):
        k = box_id % 64
        ij = box_id // 64
        return self.center(ij // self.n_grid, ij % self.n_grid, k)

    def active_boxes(self, qx, qs):
        """Boxes whose open set contains each query point.

        Returns flat arrays ``(query_index, box_id, su, ss, t)``; ``t`` is the
        flow offset from the transversal, so ``hitting time = -t``.
        """
        qx = np.atleast_2d(np.asarray(qx, dtype=float))
        qs = np.atleast_1d(np.asarray(qs, dtype=float))
        model = self.model
        nq = len(qs)
        reach = int(ceil(sqrt(2) * self.eps0 * np.linalg.norm(model.E, 2) / self.h)) + 1
        offs = np.arange(-reach, reach + 1)
        di, dj = np.meshgrid(offs, offs, indexing="ij")
        di, dj = di.ravel(), dj.ravel()
        rows = []
        for ix, is_ in ((qx, qs), model.up(qx, qs), model.down(qx, qs)):
            gi = np.floor(ix[:, 0] / self.h).astype(int)
            gj = np.floor(ix[:, 1] / self.h).astype(int)
            ci = np.mod(gi[:, None] + di[None, :], self.n_grid)
            cj = np.mod(gj[:, None] + dj[None, :], self.n_grid)
            cx = np.stack([(ci + 0.5) * self.h, (cj + 0.5) * self.h], axis=-1)
            dx = _min_image(ix[:, None, :] - cx)
            sig = dx @ model.E_inv.T
            su, ss = sig[..., 0], sig[..., 1]
            inside = (np.abs(su) < self.eps0) & (np.abs(ss) < self.eps0)
            qi, ci_idx = np.nonzero(inside)
            if len(qi) == 0:
                continue
            su_, ss_ = su[qi, ci_idx], ss[qi, ci_idx]
            cxx = cx[qi, ci_idx]
            _, h0 = product_point(model, cxx, np.zeros(len(qi)), su_, ss_)
            tb = is_[qi] - h0
            I, J = ci[qi, ci_idx], cj[qi, ci_idx]
            nl = self.layers[I, J]
            kc = np.floor(tb / self.delta).astype(int)
            for dk in (-1, 0, 1, 2):
                k = kc + dk
                t = tb - k * self.delta
                ok = (k >= 0) & (k < nl) & (np.abs(t) < self.delta)
                if ok.any():
                    rows.append((qi[ok], self._box_id(I[ok], J[ok], k[ok]), su_[ok], ss_[ok], t[ok]))
        if not rows:
            z = np.zeros(0)
            return z.astype(int), z.astype(int), z, z, z
        q = np.concatenate([r[0] for r in rows])
        b = np.concatenate([r[1] for r in rows])
        su = np.concatenate([r[2] for r in rows])
        ss = np.concatenate([r[3] for r in rows])
        t = np.concatenate([r[4] for r in rows])
        # same box reached through two representations: keep smaller offset
        order = np.lexsort((np.abs(t), b, q))
        q, b, su, ss, t = q[order], b[order], su[order], ss[order], t[order]
        keep = np.ones(len(q), dtype=bool)
        keep[1:] = (q[1:] != q[:-1]) | (b[1:] != b[:-1])
        return q[keep], b[keep], su[keep], ss[keep], t[keep]

    def partition(self, qx, qs):
        """``(q, box, su, ss, t, theta, X theta)`` for every active pair."""
        q, b, su, ss, t = self.active_boxes(qx, qs)
        nq = len(np.atleast_1d(qs))
        tr = bump(su / self.eps0) * bump(ss / self.eps0)
        psi = tr * bump(t / self.delta)
        dpsi = tr * bump_prime(t / self.delta) / self.delta
        tot = np.bincount(q, weights=psi, minlength=nq)
        dtot = np.bincount(q, weights=dpsi, minlength=nq)
        if np.any(tot[np.unique(q)] <= 0) or len(np.unique(q)) < nq:
            missing = np.setdiff1d(np.arange(nq), q[psi > 0])
            if len(missing):
                raise CoverError("point not covered by any flow box", witness=int(missing[0]))
        theta = psi / tot[q]
        xtheta = (dpsi * tot[q] - psi * dtot[q]) / tot[q] ** 2
        return q, b, su, ss, t, theta, xtheta

    def theta_sum(self, qx, qs):
        q, _, _, _, _, theta, _ = self.partition(qx, qs)
        return np.bincount(q, weights=theta, minlength=len(np.atleast_1d(qs)))

    def project(self, box_id, qx, qs):
        """``(pi_i(q), hitting time)`` for queries assumed inside box ``i``."""
        cx, cs = self.box_center(box_id)
        su, ss, t = local_coordinates(self.model, cx, cs, qx, qs)
        px, ps = product_point(self.model, cx, cs, su, ss)
        return (px, ps), -t

    def check_cover(self, qx, qs, floor_=1e-8):
        q, b, su, ss, t = self.active_boxes(qx, qs)
        psi = bump(su / self.eps0) * bump(ss / self.eps0) * bump(t / self.delta)
        tot = np.bincount(q, weights=psi, minlength=len(qs))
        bad = np.nonzero(tot <= floor_)[0]
        if len(bad):
            raise CoverError("point not covered by any flow box", witness=int(bad[0]))
        return float(tot.min())


def flow_box_cover(model: SuspensionModel, eps0: float | None = None, delta: float = 0.1) -> FlowBoxCover:
    """Regular cover: base-grid centers at spacing ``<= eps0 / (sqrt 2 |E^-1|)``."""
    eps0 = model.epsilon0 if eps0 is None else eps0
    if delta <= 0 or eps0 <= 0:
        raise ValueError("eps0 and delta must be positive")
    if delta > 0.5 * model.roof_min() or eps0 > 0.1:
        raise CoverError("boxes too large to embed")
    h = eps0 / (sqrt(2) * np.linalg.norm(model.E_inv, 2))
    n = int(ceil(1.0 / h))
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    cx = np.stack([(ii + 0.5) / n, (jj + 0.5) / n], axis=-1)
    layers = np.ceil(model.roof(cx) / delta).astype(int)
    if layers.max() >= 64:
        raise CoverError("too many layers; increase delta")
    return FlowBoxCover(model, eps0, delta, n, layers)


# --- scalar fields -----------------------------------------------------------------


@dataclass
class ScalarField:
    """Function on phase space, evaluated on (possibly extended) states.

    ``func(x, s)`` must accept normalised states; ``derivative`` (optional)
    is the exact flow derivative ``Xf``.
    """

    model: SuspensionModel
    func: object
    derivative: object = None
    name: str = "f"

    def __call__(self, x, s):
        x, s = self.model.normalize(x, s)
        return self.func(x, s)

    def X(self, x, s):
        if self.derivative is None:
            raise AttributeError("no analytic flow derivative")
        x, s = self.model.normalize(x, s)
        return self.derivative(x, s)

    def __add__(self, other):
        d = None
        if self.derivative is not None and other.derivative is not None:
            d = lambda x, s: self.derivative(x, s) + other.derivative(x, s)
        return ScalarField(self.model, lambda x, s: self.func(x, s) + other.func(x, s), d,
                           f"({self.name}+{other.name})")

    def scale(self, c):
        d = None if self.derivative is None else (lambda x, s: c * self.derivative(x, s))
        return ScalarField(self.model, lambda x, s: c * self.func(x, s), d, f"{c}*{self.name}")

    @classmethod
    def constant(cls, model, c):
        return cls(model, lambda x, s: np.full(np.shape(s), float(c)), lambda x, s: np.zeros(np.shape(s)), f"{c}")

    @classmethod
    def from_base(cls, model, W, name="w"):
        """Field ``(1-b(s/r)) W(x) + b(s/r) W(Ax)`` with ``b`` the septic step.

        Continuous across the roof identification and ``C^3`` on the manifold;
        its flow derivative is returned in closed form.
        """

        def f(x, s):
            r = model.roof(x)
            b = smooth_step(s / r)
            return (1 - b) * W(x) + b * W(model.apply_A(x))

        def df(x, s):
            r = model.roof(x)
            return smooth_step_prime(s / r) / r * (W(model.apply_A(x)) - W(x))

        return cls(model, f, df, name)

    def coboundary(self, name=None):
        """The field ``X self`` (requires the analytic derivative)."""
        return ScalarField(self.model, self.derivative, None, name or f"X{self.name}")


def flow_derivative(u: ScalarField, x, s, dt: float) -> np.ndarray:
    """Centered difference of ``u`` along the flow."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    model = u.model
    xp, sp = model.flow(x, s, dt)
    xm, sm = model.flow(x, s, -dt)
    return (u(xp, sp) - u(xm, sm)) / (2 * dt)


def holder_norm_estimate(u: ScalarField, alpha: float, n_pairs: int = 2000,
                         scales=(0.2, 0.1, 0.05, 0.025, 0.0125), seed: int = 0, sampler=None):
    """Empirical ``(sup |u|, sup |u(p)-u(q)| / d(p,q)^alpha)``.

    Pairs are stratified by dyadic distance scale; the estimator is a maximum
    over a deterministic sample, hence a lower bound for the true norm that
    can only grow with ``n_pairs``.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    model = u.model
    sup = 0.0
    hol = 0.0
    for k, rho in enumerate(scales):
        rng = np.random.default_rng([seed, k])
        if sampler is None:
            base = rng.random((n_pairs, 2))
            hfrac = rng.random(n_pairs)
        else:
            base, hfrac = sampler(rng, n_pairs)
        direc = rng.standard_normal((n_pairs, 3))
        rad = rho * (0.5 + 0.5 * rng.random(n_pairs))
        direc *= (rad / np.linalg.norm(direc, axis=1))[:, None]
        if sampler is None:
            s = hfrac * model.roof(base)
        else:
            s = hfrac
        qx = base + direc[:, :2]
        qs = s + direc[:, 2]
        up = u(base, s)
        uq = u(qx, qs)
        nx, ns = model.normalize(qx, qs)
        d = model.distance(base, s, nx, ns) if sampler is None else np.linalg.norm(direc, axis=1)
        sup = max(sup, float(np.abs(up).max()), float(np.abs(uq).max()))
        ok = d > 0
        if ok.any():
            hol = max(hol, float(np.max(np.abs(up - uq)[ok] / d[ok] ** alpha)))
    return sup, hol
