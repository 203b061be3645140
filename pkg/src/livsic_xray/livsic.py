"""Constructive approximate Livsic decomposition for the cat-map suspension.

Pipeline:

1. ``build_dense_separated_orbit`` glues homoclinic excursions of the fixed
   point into a periodic pseudo-orbit and closes it with ``shadow``.
2. ``integrate_along_orbit`` gives the primitive ``u~(phi_t x0) = int_0^t f``.
3. ``holder_extend`` extends ``u~`` off the orbit by the McShane formula
   ``sup_y u~(y) - K d(x, y)^beta``.
4. ``assemble_coboundary`` pushes the extension along flow boxes and glues
   with a partition of unity: ``u = sum theta_i u_i`` and
   ``h = -sum u_i X theta_i`` so that ``f = X u + h`` identically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import ceil, log

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

from .catflow import (
    FlowBoxCover,
    PeriodicOrbit,
    PseudoOrbit,
    ScalarField,
    SuspensionModel,
    SuspensionState,
    enumerate_orbits,
    flow_box_cover,
    holder_norm_estimate,
    local_coordinates,
    product_point,
    shadow,
)

logger = logging.getLogger(__name__)

__all__ = [
    "BudgetError",
    "AssemblyError",
    "HolderViolation",
    "DenseOrbitReport",
    "HolderExtension",
    "CoboundaryDecomposition",
    "OrbitData",
    "orbit_data",
    "common_holder",
    "homoclinic_excursions",
    "build_dense_separated_orbit",
    "realized_density",
    "realized_separation",
    "check_density",
    "check_separation",
    "integrate_flow",
    "integrate_along_orbit",
    "orbit_primitive",
    "holder_constant",
    "choose_beta",
    "holder_extend",
    "assemble_coboundary",
    "xray",
    "xray_many",
    "xray_sup",
    "finite_livsic_check",
    "fit_exponent",
]

BETA_D = 1.0 / 9.0  # 1 / (3 dim M)
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class BudgetError(RuntimeError):
    pass


class AssemblyError(RuntimeError):
    pass


class HolderViolation(ValueError):
    def __init__(self, msg, witness):
        super().__init__(msg)
        self.witness = witness


def fit_exponent(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# --- integration along the flow -----------------------------------------------------


def _gl_piece(f, x, a, b, panels=1):
    """``int_a^b f(x, s) ds`` inside one fiber, composite Gauss-Legendre."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros(np.broadcast(a, b).shape)
    edges = np.linspace(0.0, 1.0, panels + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        pa = a + (b - a) * lo
        pb = a + (b - a) * hi
        half = 0.5 * (pb - pa)
        mid = 0.5 * (pb + pa)
        s = mid[..., None] + half[..., None] * GL_NODES
        xx = np.broadcast_to(x[..., None, :], s.shape + (2,))
        vals = f.func(xx.reshape(-1, 2), s.reshape(-1)).reshape(s.shape)
        out += half * (vals @ GL_WEIGHTS)
    return out


def integrate_flow(f: ScalarField, x, s, t, panels=1) -> np.ndarray:
    """``int_0^t f(phi_sigma(x, s)) d sigma`` for arrays of states and times.

    The path is split at roof crossings; each fiber piece is integrated by
    Gauss-Legendre (exact for fields polynomial along flow lines).
    """
    model = f.model
    x, s = model.normalize(np.atleast_2d(x), np.atleast_1d(s))
    t = np.broadcast_to(np.asarray(t, dtype=float), s.shape).copy()
    sign = np.sign(t)
    rem = np.abs(t)
    x = x.copy()
    h = s.copy()
    total = np.zeros_like(t)
    active = rem > 0
    while active.any():
        r = model.roof(x)
        fwd = sign > 0
        room = np.where(fwd, r - h, h)
        step = np.minimum(rem, room)
        lo = np.where(fwd, h, h - step)
        hi = np.where(fwd, h + step, h)
        idx = np.nonzero(active & (step > 0))[0]
        if len(idx):
            total[idx] += sign[idx] * _gl_piece(f, x[idx], lo[idx], hi[idx], panels)
        rem = np.where(active, rem - step, rem)
        cross = active & (rem > 1e-15)
        # move to the next fiber
        fc = cross & fwd
        bc = cross & ~fwd
        if fc.any():
            x[fc] = model.apply_A(x[fc])
            h[fc] = 0.0
        if bc.any():
            x[bc] = model.apply_A_inv(x[bc])
            h[bc] = model.roof(x[bc])
        active = cross
    return total


def _slot_integrals(f: ScalarField, orbit: PeriodicOrbit, panels=4):
    z = orbit.base_orbit
    r = orbit.model.roof(z)
    return _gl_piece(f, z, np.zeros(len(z)), r, panels)


def orbit_primitive(f: ScalarField, orbit: PeriodicOrbit, panels=4):
    """Vectorised ``t -> int_0^t f(phi_s x0) ds`` for ``t`` in ``[0, period]``."""
    I = _slot_integrals(f, orbit, panels)
    cum = np.concatenate([[0.0], np.cumsum(I)])
    starts = orbit.crossing_times

    def prim(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        j = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, orbit.n - 1)
        h = t - starts[j]
        return cum[j] + _gl_piece(f, orbit.base_orbit[j], np.zeros(len(t)), h, panels)

    return prim


def integrate_along_orbit(f: ScalarField, orbit: PeriodicOrbit, t: float, epsabs=1e-10) -> float:
    """``u~(phi_t x0)``: adaptive quadrature fiber by fiber."""
    if not 0 <= t <= orbit.period + 1e-12:
        raise ValueError("t must lie in [0, period]")
    starts = np.append(orbit.crossing_times, orbit.period)
    total = 0.0
    for j in range(orbit.n):
        a, b = starts[j], min(starts[j + 1], t)
        if b <= a:
            break
        zj = orbit.base_orbit[j][None, :]
        val, _ = integrate.quad(lambda h: float(f.func(zj, np.array([h]))[0]), 0.0, b - a,
                                epsabs=epsabs / orbit.n, epsrel=0.0, limit=200)
        total += val
    return total


def xray(f: ScalarField, orbit: PeriodicOrbit, panels=4) -> float:
    """Time average ``(1/l) int_0^l f`` over a closed orbit."""
    return float(np.sum(_slot_integrals(f, orbit, panels)) / orbit.period)


def xray_many(f: ScalarField, orbits, panels=4) -> np.ndarray:
    """``xray`` over a list of orbits in one batched quadrature."""
    if not orbits:
        return np.zeros(0)
    z = np.concatenate([o.base_orbit for o in orbits])
    r = f.model.roof(z)
    I = _gl_piece(f, z, np.zeros(len(z)), r, panels)
    owner = np.repeat(np.arange(len(orbits)), [o.n for o in orbits])
    periods = np.array([o.period for o in orbits])
    return np.bincount(owner, weights=I, minlength=len(orbits)) / periods


def xray_sup(f: ScalarField, L: float, orbits=None) -> float:
    """``max |If|`` over every closed orbit of period ``<= L``."""
    orbits = enumerate_orbits(f.model, L) if orbits is None else orbits
    return float(np.abs(xray_many(f, orbits)).max())


# --- dense orbit --------------------------------------------------------------------


@dataclass
class Excursion:
    """Homoclinic orbit of the fixed point through ``z = a e_u = b e_s`` (mod 1)."""

    a: float
    b: float
    J: int  # steps before z
    Jp: int  # steps after z
    slots: np.ndarray
    duration: float

    @property
    def z(self):
        return self.slots[self.J]


def homoclinic_excursions(model: SuspensionModel, eta: float, kmax: int = 6) -> list[Excursion]:
    """Excursions from ``eta``-near the fixed point back to it, ``|k|_inf <= kmax``."""
    M = np.column_stack([model.e_u, -model.e_s])
    out = []
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if k1 == 0 and k2 == 0:
                continue
            a, b = np.linalg.solve(M, [k1, k2])
            J = max(0, ceil(log(abs(a) / eta) / log(model.lam)))
            Jp = max(1, ceil(log(abs(b) / eta) / log(model.lam)))
            js = np.arange(-J, Jp)
            slots = np.empty((len(js), 2))
            neg = js < 0
            # eigen-form keeps every slot accurate to rounding
            slots[neg] = (a * model.lam_u ** js[neg].astype(float))[:, None] * model.e_u
            slots[~neg] = (b * model.lam_s ** js[~neg].astype(float))[:, None] * model.e_s
            slots = np.mod(slots, 1.0)
            slots[slots >= 1.0] -= 1.0
            out.append(Excursion(a, b, J, Jp, slots, float(np.sum(model.roof(slots)))))
    return out


def _fiber_distance(model, tx, ts, slots):
    """Distance from targets to the union of full fibers over ``slots``."""
    dx = tx[:, None, :] - slots[None, :, :]
    dx -= np.round(dx)
    over = np.maximum(0.0, ts[:, None] - model.roof(slots)[None, :])
    return np.sqrt(np.sum(dx**2, axis=-1) + over**2).min(axis=1)


@dataclass
class DenseOrbitReport:
    orbit: PeriodicOrbit
    epsilon: float
    period: float
    budget: float
    realized_density: float
    realized_separation: float
    n_points: int
    rho0: float
    pseudo: PseudoOrbit = field(repr=False)
    targets: list = field(default_factory=list, repr=False)

    @property
    def beta_d_fit(self) -> float:
        return log(self.realized_density) / log(self.epsilon)

    @property
    def beta_s_fit(self) -> float:
        return log(self.realized_separation) / log(self.epsilon)

    def samples(self, dt: float, truncate: float = 0.0):
        """Orbit states at spacing ``<= dt`` over ``[0, period - truncate]``."""
        T = self.period - truncate
        n = max(2, int(ceil(T / dt)) + 1)
        t = np.linspace(0.0, T, n)
        x, s = self.orbit.state_at(t)
        return t, x, s


def _rho0(model, exc: Excursion, eps0: float) -> float:
    """Largest ``rho`` with the excursion meeting ``W_{3 rho}(z)`` only at ``z``."""
    slots = exc.slots
    ts = np.linspace(0, 1, 40)
    xs = np.repeat(slots, len(ts), axis=0)
    ss = (ts[None, :] * model.roof(slots)[:, None]).ravel()
    z = exc.z
    su, sg, t = local_coordinates(model, np.tile(z, (len(xs), 1)), np.zeros(len(xs)), xs, ss)
    same_line = (np.abs(su) < 1e-12) & (np.abs(sg) < 1e-12)
    trans = np.maximum(np.abs(su), np.abs(sg))
    hits = ~same_line & (np.abs(t) < 3 * eps0)

    def ok(rho):
        return not np.any(hits & (trans <= 3 * rho))

    lo, hi = 0.0, eps0 / 3
    if ok(hi):
        return hi
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def build_dense_separated_orbit(
    model: SuspensionModel,
    eps: float,
    kappa: float | None = None,
    eta: float | None = None,
    kmax: int = 6,
    greedy_grid: int = 12,
    density_grid: int = 50,
    measure: bool = True,
) -> DenseOrbitReport:
    """Periodic orbit of period ``<= eps^(-1/2)``, dense at scale ``~eps^beta_d``.

    Greedy loop: the lexicographically first grid point farthest from the
    current chain is targeted, and the shortest homoclinic excursion of the
    fixed point passing within ``eps^beta_d / 4`` of it (or else the closest
    one) is appended.  Grid points no affordable excursion improves are
    skipped.  The loop stops when every remaining grid point is
    ``eps^beta_d / 2``-covered or the time budget would be exceeded.
    """
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 0.5)")
    kappa = model.epsilon0 if kappa is None else kappa
    # glue gaps are at most 2 eta, kept below epsilon0
    eta = 0.44 * model.epsilon0 if eta is None else eta
    budget = eps ** -0.5
    r_cov = eps**BETA_D / 2
    cands = homoclinic_excursions(model, eta, kmax)
    cands.sort(key=lambda e: (e.duration, e.a, e.b))
    g = (np.arange(greedy_grid) + 0.5) / greedy_grid
    G1, G2, G3 = np.meshgrid(g, g, g, indexing="ij")
    gx = np.stack([G1.ravel(), G2.ravel()], axis=1)
    gs = G3.ravel() * model.roof(gx)
    cover = np.full(len(gx), np.inf)
    chain: list[Excursion] = []
    used = 0.0
    margin = 0.05
    max_points = int(10 * eps ** (-1 / 3))
    targets = []
    stuck = np.zeros(len(gx), dtype=bool)
    while True:
        far = (cover > r_cov) & ~stuck
        if not far.any():
            break
        i = int(np.argmax(np.where(far, cover, -1.0)))
        targets.append((gx[i], gs[i]))
        dist = np.array([_fiber_distance(model, gx[i : i + 1], gs[i : i + 1], e.slots)[0] for e in cands])
        fits = np.array([used + e.duration <= budget - margin for e in cands])
        if not fits.any():
            break
        close = fits & (dist <= r_cov / 2)
        if close.any():
            pick = int(np.nonzero(close)[0][0])  # candidates sorted by duration
        else:
            pick = int(np.argmin(np.where(fits, dist, np.inf)))
            if dist[pick] >= cover[i]:
                stuck[i] = True  # nothing affordable improves this point
                targets.pop()
                continue
        e = cands[pick]
        chain.append(e)
        used += e.duration
        cover = np.minimum(cover, _fiber_distance(model, gx, gs, e.slots))
        if len(chain) > max_points:
            raise BudgetError(f"greedy loop exceeded {max_points} points")
    if not chain:
        return _short_budget_orbit(model, eps, budget, gx, gs, density_grid, measure)
    logger.info("dense orbit eps=%g: %d excursions, %.3f of budget %.3f", eps, len(chain), used, budget)
    segs = [(SuspensionState((float(e.slots[0, 0]), float(e.slots[0, 1])), 0.0), e.duration) for e in chain]
    pseudo = PseudoOrbit(model, segs, periodic=True)
    res = shadow(pseudo)
    orbit = res.orbit
    if orbit.period > budget:
        raise BudgetError(f"closed orbit period {orbit.period:.4f} exceeds budget {budget:.4f}")
    rho0 = _rho0(model, chain[0], model.epsilon0)
    logger.info("rho0 = %.4g", rho0)
    rep = DenseOrbitReport(orbit, eps, orbit.period, budget, np.nan, np.nan, len(chain), rho0, pseudo, targets)
    if measure:
        rep.realized_density = realized_density(rep, density_grid)
        rep.realized_separation = realized_separation(rep)
    return rep


def _short_budget_orbit(model, eps, budget, gx, gs, density_grid, measure):
    """Best-covering closed orbit of period ``<= budget`` (no excursion fits)."""
    orbits = enumerate_orbits(model, budget)
    if not orbits:
        raise BudgetError(f"no closed orbit of period <= {budget:.4g}")
    score = [(_fiber_distance(model, gx, gs, o.base_orbit).max(), o.period) for o in orbits]
    orbit = orbits[min(range(len(orbits)), key=lambda i: score[i])]
    logger.info("eps=%g: budget below one excursion, using closed orbit of period %.3f", eps, orbit.period)
    pseudo = PseudoOrbit(model, [(orbit.start, orbit.period)], periodic=True)
    rep = DenseOrbitReport(orbit, eps, orbit.period, budget, np.nan, np.nan, 1, np.nan, pseudo, [])
    if measure:
        rep.realized_density = realized_density(rep, density_grid)
        rep.realized_separation = realized_separation(rep)
    return rep


def _image_cloud(model, x, s, lifts=True):
    """Sample points with their roof images and torus translates, as 3D points."""
    reps = [(x, s), model.up(x, s), model.down(x, s)] if lifts else [(x, s)]
    pts, idx = [], []
    base_idx = np.arange(len(s))
    for xx, ss in reps:
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                pts.append(np.column_stack([xx[:, 0] + dx, xx[:, 1] + dy, ss]))
                idx.append(base_idx)
    return np.concatenate(pts), np.concatenate(idx)


def realized_density(rep: DenseOrbitReport, n_grid: int = 50, dt: float = 0.01) -> float:
    """Largest distance from a test-grid point to the orbit minus its last unit of time.

    Uses the same five chart combinations as ``SuspensionModel.distance``.
    """
    model = rep.orbit.model
    _, x, s = rep.samples(dt, truncate=1.0)
    lifted = cKDTree(_image_cloud(model, x, s)[0])
    flat = cKDTree(_image_cloud(model, x, s, lifts=False)[0])
    g = (np.arange(n_grid) + 0.5) / n_grid
    G1, G2, G3 = np.meshgrid(g, g, g, indexing="ij")
    gx = np.stack([G1.ravel(), G2.ravel()], axis=1)
    gs = G3.ravel() * model.roof(gx)
    best, _ = lifted.query(np.column_stack([gx, gs]))
    for qx, qs in (model.up(gx, gs), model.down(gx, gs)):
        d, _ = flat.query(np.column_stack([qx, qs]))
        best = np.minimum(best, d)
    return float(best.max())


def realized_separation(rep: DenseOrbitReport, dt: float = 0.02, delta: float = 0.1) -> float:
    """Smallest transversal offset between orbit points sharing a flow box.

    Pairs within ``epsilon0`` whose local product coordinates vanish are on the
    same local flow line and are skipped.
    """
    model = rep.orbit.model
    eps0 = model.epsilon0
    _, x, s = rep.samples(dt)
    x, s = x[:-1], s[:-1]
    cloud, owner = _image_cloud(model, x, s)
    tree = cKDTree(cloud)
    pairs = tree.query_ball_point(np.column_stack([x, s]), r=eps0)
    ii, jj = [], []
    for i, lst in enumerate(pairs):
        for j in set(owner[lst].tolist()):
            if j > i:
                ii.append(i)
                jj.append(j)
    if not ii:
        return eps0
    ii, jj = np.array(ii), np.array(jj)
    su, ss, t = local_coordinates(model, x[ii], s[ii], x[jj], s[jj])
    trans = np.maximum(np.abs(su), np.abs(ss))
    in_box = (trans < eps0) & (np.abs(t) < delta)
    cross = in_box & (trans > 1e-9)
    return float(trans[cross].min()) if cross.any() else eps0


def check_density(rep: DenseOrbitReport, rng, n: int = 300, dt: float = 0.004, slack: float = 0.01) -> tuple:
    """Random-target check of ``realized_density`` against a finer orbit sampling.

    Returns ``(worst distance, ok)``.
    """
    model = rep.orbit.model
    qx, qs = model.sample_uniform(rng, n)
    _, x, s = rep.samples(dt, truncate=1.0)
    worst = 0.0
    for a in range(0, n, 100):
        d = model.pairwise_distance(qx[a : a + 100], qs[a : a + 100], x, s).min(axis=1)
        worst = max(worst, float(d.max()))
    return worst, worst <= rep.realized_density + slack


def check_separation(rep: DenseOrbitReport, dt: float = 0.013, delta: float = 0.1) -> bool:
    """Pairs in a common flow box are on one flow line or ``realized_separation`` apart."""
    model = rep.orbit.model
    _, x, s = rep.samples(dt)
    x, s = x[:-1], s[:-1]
    cloud, owner = _image_cloud(model, x, s)
    pairs = cKDTree(cloud).query_ball_point(np.column_stack([x, s]), r=model.epsilon0)
    ii = [i for i, lst in enumerate(pairs) for j in set(owner[lst].tolist()) if j > i]
    jj = [j for i, lst in enumerate(pairs) for j in set(owner[lst].tolist()) if j > i]
    if not ii:
        return True
    su, ss, t = local_coordinates(model, x[ii], s[ii], x[jj], s[jj])
    trans = np.maximum(np.abs(su), np.abs(ss))
    box = (trans < model.epsilon0) & (np.abs(t) < delta)
    ok = (trans < 1e-9) | (trans >= 0.99 * rep.realized_separation)
    return bool(np.all(ok[box]))


# --- Holder extension ---------------------------------------------------------------


def holder_constant(model, x, s, values, beta, chunk=512):
    """``max |v_i - v_j| / d_ij^beta`` over all pairs, with the witness pair."""
    n = len(values)
    best, wit = 0.0, (0, 0)
    for a in range(0, n, chunk):
        d = model.pairwise_distance(x[a : a + chunk], s[a : a + chunk], x, s)
        dv = np.abs(values[a : a + chunk, None] - values[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(d > 0, dv / d**beta, 0.0)
        k = int(np.argmax(q))
        if q.flat[k] > best:
            best = float(q.flat[k])
            wit = (a + k // n, k % n)
    return best, wit


def choose_beta(model, x, s, values, kmax=10.0, grid=(0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)):
    """Largest exponent on ``grid`` with Holder constant ``<= kmax``.

    Falls back to the smallest exponent (and its measured constant) if none
    qualifies.
    """
    for beta in grid:
        K, _ = holder_constant(model, x, s, values, beta)
        if K <= kmax:
            return beta, K
    return grid[-1], K


@dataclass
class HolderExtension:
    """McShane extension ``U(q) = max_k v_k - K d(q, y_k)^beta``."""

    model: SuspensionModel
    x: np.ndarray
    s: np.ndarray
    values: np.ndarray
    beta: float
    K: float

    def __call__(self, qx, qs, self_values=None, chunk=256):
        qx = np.atleast_2d(qx)
        qs = np.atleast_1d(qs)
        out = np.empty(len(qs))
        for a in range(0, len(qs), chunk):
            d = self.model.pairwise_distance(qx[a : a + chunk], qs[a : a + chunk], self.x, self.s)
            out[a : a + chunk] = np.max(self.values[None, :] - self.K * d**self.beta, axis=1)
        if self_values is not None:
            sv = np.asarray(self_values, dtype=float)
            ok = ~np.isnan(sv)
            out[ok] = np.maximum(out[ok], sv[ok])
        return out


def holder_extend(model, x, s, values, beta, K, check=True) -> HolderExtension:
    """Extend ``K``-Holder data; rejects data violating the bound (with a witness pair)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if check:
        Kd, wit = holder_constant(model, x, s, values, beta)
        if Kd > K * (1 + 1e-9):
            raise HolderViolation(f"data Holder constant {Kd:.4g} exceeds K={K:.4g}", wit)
    return HolderExtension(model, x, s, values, beta, K)


# --- assembly -----------------------------------------------------------------------


@dataclass
class OrbitData:
    """Samples of the primitive ``t -> int_0^t f`` on ``[0, window]``."""

    t: np.ndarray
    x: np.ndarray
    s: np.ndarray
    values: np.ndarray
    primitive: object
    window: float


def orbit_data(f: ScalarField, report: DenseOrbitReport, data_dt: float = 0.02, max_data: int = 2500) -> OrbitData:
    prim = orbit_primitive(f, report.orbit)
    window = report.period - 1.0
    n = int(min(max_data, max(50, ceil(window / data_dt) + 1)))
    td = np.linspace(0.0, window, n)
    xd, sd = report.orbit.state_at(td)
    return OrbitData(td, xd, sd, prim(td), prim, window)


def common_holder(model, datasets, kmax=10.0, grid=(0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)):
    """Largest exponent at which every data set is ``kmax``-Holder.

    Returns ``(beta, K)`` with ``K`` the largest measured constant, so that a
    whole sweep shares one Holder modulus.
    """
    for beta in grid:
        Ks = [holder_constant(model, d.x, d.s, d.values, beta)[0] for d in datasets]
        if max(Ks) <= kmax:
            return beta, max(Ks)
    return grid[-1], max(Ks)


@dataclass
class CoboundaryDecomposition:
    f: ScalarField
    report: DenseOrbitReport
    cover: FlowBoxCover
    extension: HolderExtension
    primitive: object
    window: float
    beta: float
    norms: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def evaluate(self, x, s, orbit_time=None):
        """``(u, h)`` at states; ``orbit_time`` marks states on the generating orbit."""
        model = self.f.model
        x, s = model.normalize(np.atleast_2d(x), np.atleast_1d(s))
        q, b, su, ss, t, theta, xtheta = self.cover.partition(x, s)
        hit = -t
        cx, cs = self.cover.box_centers(b)
        px, ps = product_point(model, cx, cs, su, ss)
        px, ps = model.normalize(px, ps)
        self_vals = None
        if orbit_time is not None:
            tau = np.mod(np.asarray(orbit_time, dtype=float)[q] + hit, self.report.period)
            self_vals = np.full(len(q), np.nan)
            inside = tau <= self.window
            if inside.any():
                self_vals[inside] = self.primitive(tau[inside])
        U = self.extension(px, ps, self_vals)
        ui = U - integrate_flow(self.f, x[q], s[q], hit)
        n = len(s)
        u = np.bincount(q, weights=theta * ui, minlength=n)
        h = -np.bincount(q, weights=xtheta * ui, minlength=n)
        return u, h

    def u(self, x, s):
        return self.evaluate(x, s)[0]

    def h(self, x, s):
        return self.evaluate(x, s)[1]

    def u_field(self) -> ScalarField:
        return ScalarField(self.f.model, lambda x, s: self.evaluate(x, s)[0], name="u")

    def h_field(self) -> ScalarField:
        return ScalarField(self.f.model, lambda x, s: self.evaluate(x, s)[1], name="h")


def assemble_coboundary(
    f: ScalarField,
    report: DenseOrbitReport,
    cover: FlowBoxCover | None = None,
    beta1: float | None = None,
    data_dt: float = 0.02,
    max_data: int = 2500,
    n_check: int = 1000,
    seed: int = 0,
    holder_budget: int = 0,
    K: float | None = None,
) -> CoboundaryDecomposition:
    """Assemble ``f = X u + h`` from orbit data of ``report``.

    The orbit data is restricted to ``[0, T - 1]`` (the last unit of time is
    where the primitive jumps by ``T If``).  ``beta1`` defaults to the largest
    exponent of the grid for which the data is 10-Holder.  An explicit ``K``
    (with ``beta1``) is used as is; data violating it raises
    :class:`HolderViolation`.
    """
    model = f.model
    cover = flow_box_cover(model) if cover is None else cover
    if cover.model != model:
        raise AssemblyError("cover and field live on different models")
    if cover.delta >= 0.5 or report.period <= 1.0:
        raise AssemblyError("orbit too short for the box size")
    data = orbit_data(f, report, data_dt, max_data)
    xd, sd, vd = data.x, data.s, data.values
    n = len(vd)
    if K is None:
        if beta1 is None:
            beta1, K = choose_beta(model, xd, sd, vd)
        else:
            K, _ = holder_constant(model, xd, sd, vd, beta1)
        K *= 1.05
        ext = holder_extend(model, xd, sd, vd, beta1, K, check=False)
    else:
        if beta1 is None:
            raise ValueError("an explicit K needs an explicit beta1")
        ext = holder_extend(model, xd, sd, vd, beta1, K)
    dec = CoboundaryDecomposition(f, report, cover, ext, data.primitive, data.window, beta1)
    dec.diagnostics["holder_constant"] = K
    dec.diagnostics["n_data"] = n

    # h on the generating orbit, away from the seam
    box = cover.delta
    to = np.linspace(box, data.window - box, 400)
    xo, so = report.orbit.state_at(to)
    _, ho = dec.evaluate(xo, so, orbit_time=to)
    dec.diagnostics["h_orbit_max"] = float(np.abs(ho).max())

    rng = np.random.default_rng(seed)
    xr, sr = model.sample_uniform(rng, n_check)
    ur, hr = dec.evaluate(xr, sr)
    dec.norms["u_sup"] = float(np.abs(ur).max())
    dec.norms["h_sup"] = float(np.abs(hr).max())
    if holder_budget:
        dec.norms["u_holder"] = holder_norm_estimate(dec.u_field(), beta1, holder_budget, seed=seed)[1]
        hol = holder_norm_estimate(dec.h_field(), beta1, holder_budget, seed=seed)[1]
        dec.norms["h_holder"] = hol
        dec.norms["h_interp_half"] = float(np.sqrt(dec.norms["h_sup"] * hol))
    return dec


def coboundary_residual(dec: CoboundaryDecomposition, n: int = 1000, dt: float = 1e-5, seed: int = 1,
                        extrapolate: bool = False) -> float:
    """``max |f - X u - h|`` over random states, ``X u`` by centered difference.

    The centered difference carries an ``O(dt^2)`` truncation error (large
    here, the bumps are steep).  With ``extrapolate`` the steps ``dt`` and
    ``2 dt`` are combined to cancel it.
    """
    model = dec.f.model
    rng = np.random.default_rng(seed)
    x, s = model.sample_uniform(rng, n)

    def diff(step):
        xp, sp = model.flow(x, s, step)
        xm, sm = model.flow(x, s, -step)
        return (dec.u(xp, sp) - dec.u(xm, sm)) / (2 * step)

    Xu = diff(dt)
    if extrapolate:
        Xu = (4 * Xu - diff(2 * dt)) / 3
    _, h = dec.evaluate(x, s)
    return float(np.abs(dec.f(x, s) - Xu - h).max())


def finite_livsic_check(f: ScalarField, Lp: float, dec: CoboundaryDecomposition | None = None, orbits=None,
                        tol: float = 1e-8):
    """``(sup |If|, ||h||_C0, ok)`` over every closed orbit of length ``<= Lp``."""
    orbits = enumerate_orbits(f.model, Lp) if orbits is None else orbits
    sup = float(np.abs(xray_many(f, orbits)).max())
    if dec is None:
        return sup, None, None
    hs = dec.norms["h_sup"]
    return sup, hs, bool(sup <= hs + tol)
