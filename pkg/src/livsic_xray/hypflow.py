"""Geodesic flow on the Bolza surface.

The unit tangent bundle of the hyperbolic plane is ``PSL(2, R)``; a frame
``g`` has base point ``g . i`` and the geodesic flow is right translation by
``diag(e^{t/2}, e^{-t/2})``.  A Fuchsian group acts on the left, and the unit
tangent bundle of the surface is the coset space.

Internally frames are carried in the disk model as ``SU(1, 1)`` pairs
``(alpha, beta)`` (the matrix ``[[alpha, beta], [conj beta, conj alpha]]``):
base point ``beta / conj(alpha)`` and direction angle ``2 arg(alpha)``.  The
Cayley map ``z -> (z - i) / (z + i)`` converts between the two pictures.

Contents: the Bolza group and its octagon, frame reduction into the octagon,
closed-geodesic enumeration, band-limited test fields built as Poincare
sums of bumps, the X-ray transform over closed geodesics, the variance
pairing by correlation integrals, the per-orbit resolvent and Parry
averages.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from math import acosh, ceil, cosh, pi, sqrt, tanh

import numpy as np
from scipy import integrate

logger = logging.getLogger(__name__)

__all__ = [
    "GeometryError",
    "DomainError",
    "FuchsianGroup",
    "GeodesicClass",
    "UnitTangentState",
    "BandField",
    "ConstantField",
    "FlowDerivative",
    "LinearField",
    "enumerate_classes",
    "geometric_classes",
    "enumerate_geodesics",
    "geodesic_flow",
    "flow_frames",
    "xray_class",
    "xray_classes",
    "sample_liouville",
    "variance_pairing",
    "pairing_matrix",
    "resolvent_on_orbit",
    "parry_average",
    "classes_to_csv",
    "load_generators",
    "to_disk",
    "from_disk",
]

CAYLEY = np.array([[1.0, -1.0j], [1.0, 1.0j]])
CAYLEY_INV = np.linalg.inv(CAYLEY)
LETTERS = "abcdABCD"
BOLZA_RELATOR = "aBcDAbCd"


class GeometryError(RuntimeError):
    """Reduction into the fundamental domain did not terminate."""


class DomainError(ValueError):
    pass


def _inverse_word(word: str) -> str:
    return word[::-1].swapcase()


def to_disk(g):
    """``SL(2, R)`` frames, shape ``(..., 2, 2)`` -> ``(alpha, beta)``."""
    g = np.asarray(g, dtype=float)
    gd = CAYLEY @ g @ CAYLEY_INV
    return gd[..., 0, 0], gd[..., 0, 1]


def from_disk(alpha, beta):
    alpha = np.asarray(alpha, dtype=complex)
    beta = np.asarray(beta, dtype=complex)
    gd = np.empty(alpha.shape + (2, 2), dtype=complex)
    gd[..., 0, 0] = alpha
    gd[..., 0, 1] = beta
    gd[..., 1, 0] = np.conj(beta)
    gd[..., 1, 1] = np.conj(alpha)
    return (CAYLEY_INV @ gd @ CAYLEY).real


def _mobius(A, B, w):
    """Disk Moebius map of ``[[A, B], [conj B, conj A]]``."""
    return (A * w + B) / (np.conj(B) * w + np.conj(A))


def _left(A, B, alpha, beta):
    """Left multiplication of frames by a group element."""
    return A * alpha + B * np.conj(beta), A * beta + B * np.conj(alpha)


def _flow_pair(alpha, beta, t):
    c, s = np.cosh(np.asarray(t) / 2), np.sinh(np.asarray(t) / 2)
    return alpha * c + beta * s, alpha * s + beta * c


def _rotate_pair(alpha, beta, phi):
    e = np.exp(0.5j * np.asarray(phi))
    return alpha * e, beta * np.conj(e)


def _renormalize(alpha, beta):
    n = np.sqrt(np.abs(alpha) ** 2 - np.abs(beta) ** 2)
    return alpha / n, beta / n


def disk_distance(w, z):
    """Hyperbolic distance in the unit disk."""
    r = np.abs((w - z) / (1 - np.conj(z) * w))
    return 2 * np.arctanh(np.minimum(r, 1 - 1e-16))


# --- group --------------------------------------------------------------------------


@dataclass
class FuchsianGroup:
    """Surface group given by side pairings of a regular octagon.

    Parameters
    ----------
    generators : list of (2, 2) arrays
        Real matrices of determinant one, named ``a, b, c, d`` (inverses
        ``A, B, C, D``).
    relator : str
        The single surface-group relation.
    vertices : ndarray of complex
        Vertices of the fundamental octagon in the disk.
    """

    generators: list
    relator: str = BOLZA_RELATOR
    vertices: np.ndarray = None
    max_iter: int = 10_000

    def __post_init__(self):
        self.generators = [np.asarray(g, dtype=float) for g in self.generators]
        mats = {}
        for name, g in zip("abcd", self.generators):
            if abs(np.linalg.det(g) - 1) > 1e-12:
                raise ValueError(f"generator {name} has det {np.linalg.det(g)}")
            if abs(np.trace(g)) <= 2:
                raise ValueError(f"generator {name} is not hyperbolic")
            mats[name] = g
            mats[name.upper()] = np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]])
        self.matrices = mats
        rel = self.word_matrix(self.relator)
        if min(np.abs(rel - np.eye(2)).max(), np.abs(rel + np.eye(2)).max()) > 1e-9:
            raise ValueError("relator does not close")
        pairs = [to_disk(mats[ch]) for ch in LETTERS]
        self._A = np.array([p[0] for p in pairs])
        self._B = np.array([p[1] for p in pairs])
        if self.vertices is None:
            self.vertices = bolza_vertices()
        self.circumradius = float(disk_distance(self.vertices[0], 0.0))
        self._nbhd = {}

    @classmethod
    def bolza(cls) -> "FuchsianGroup":
        return cls(bolza_generators())

    def word_matrix(self, word: str) -> np.ndarray:
        m = np.eye(2)
        for ch in word:
            m = m @ self.matrices[ch]
        return m

    def word_pair(self, word: str):
        return to_disk(self.word_matrix(word))

    def reduce_pairs(self, alpha, beta, record=False):
        """Greedy side-pairing reduction into the octagon.

        While some side pairing brings the base point closer to the centre,
        the best one is applied.  Returns the reduced pair (and with
        ``record`` the applied letters as a list of strings, outermost last).
        """
        alpha = np.array(alpha, dtype=complex, ndmin=1)
        beta = np.array(beta, dtype=complex, ndmin=1)
        words = [""] * len(alpha) if record else None
        active = np.arange(len(alpha))
        for _ in range(self.max_iter):
            if not len(active):
                break
            al, be = alpha[active], beta[active]
            w = be / np.conj(al)
            cand = _mobius(self._A[:, None], self._B[:, None], w[None, :])
            r = np.abs(cand)
            k = np.argmin(r, axis=0)
            better = r[k, np.arange(len(active))] < np.abs(w) - 1e-13
            if not better.any():
                break
            idx = active[better]
            kk = k[better]
            alpha[idx], beta[idx] = _left(self._A[kk], self._B[kk], alpha[idx], beta[idx])
            if record:
                for i, j in zip(idx, kk):
                    words[i] = LETTERS[j] + words[i]
            active = idx
        else:
            raise GeometryError(f"reduction did not terminate in {self.max_iter} steps")
        return (alpha, beta, words) if record else (alpha, beta)

    def reduce(self, frames, record=False):
        """Reduce ``SL(2, R)`` frames; see :meth:`reduce_pairs`."""
        out = self.reduce_pairs(*to_disk(frames), record=record)
        g = from_disk(*_renormalize(out[0], out[1]))
        return (g, out[2]) if record else g

    def in_domain(self, w, tol=1e-9) -> np.ndarray:
        """Dirichlet test: no side pairing brings ``w`` closer to the centre."""
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        cand = np.abs(_mobius(self._A[:, None], self._B[:, None], w[None, :]))
        return np.all(cand >= np.abs(w) - tol, axis=0)

    def neighbourhood(self, centre: complex, radius: float, cutoff: int = 8):
        """Group elements whose tile meets the ball ``B(centre, radius)``.

        Breadth-first over tile adjacency (right multiplication by side
        pairings), up to ``cutoff`` letters.  Returns ``(words, A, B)``.
        """
        key = (complex(centre), float(radius), int(cutoff))
        if key in self._nbhd:
            return self._nbhd[key]
        reach = self.circumradius + radius
        seen = {"": np.eye(2)}
        layer = [""]
        for _ in range(cutoff):
            nxt = []
            for word in layer:
                for ch in LETTERS:
                    if word and word[-1] == ch.swapcase():
                        continue
                    m = seen[word] @ self.matrices[ch]
                    a, b = to_disk(m)
                    if disk_distance(b / np.conj(a), centre) > reach + 1e-9:
                        continue
                    # same element (up to sign) reached by another word
                    if any(min(np.abs(m - v).max(), np.abs(m + v).max()) < 1e-8 for v in seen.values()):
                        continue
                    seen[word + ch] = m
                    nxt.append(word + ch)
            layer = nxt
            if not layer:
                break
        words = list(seen)
        # gamma g lands in the ball only if the tile gamma D meets it
        A = np.array([to_disk(seen[wd])[0] for wd in words])
        B = np.array([to_disk(seen[wd])[1] for wd in words])
        self._nbhd[key] = (words, A, B)
        return self._nbhd[key]


def bolza_generators() -> list:
    """Side pairings of the regular octagon with angles ``pi / 4``.

    ``a_k`` translates by ``2 arccosh(1 + sqrt 2)`` along the ray at angle
    ``k pi / 4``, pairing opposite sides.
    """
    h = acosh(1 + sqrt(2))
    T = np.array([[cosh(h), np.sinh(h)], [np.sinh(h), cosh(h)]], dtype=complex)
    out = []
    for k in range(4):
        e = np.exp(0.5j * k * pi / 4)
        R = np.diag([e, np.conj(e)])
        Rinv = np.diag([np.conj(e), e])
        gd = R @ T @ Rinv
        out.append(from_disk(gd[0, 0], gd[0, 1]))
    return out


def bolza_vertices() -> np.ndarray:
    # circumradius R of the regular octagon with angles pi/4: cosh R = cot^2(pi/8)
    R = acosh(3 + 2 * sqrt(2))
    r = tanh(R / 2)
    return r * np.exp(1j * (pi / 8 + np.arange(8) * pi / 4))


def load_generators(path) -> FuchsianGroup:
    """Group from a text file: one generator per line, 8 reals.

    The reals are ``Re, Im`` of the disk matrix entries ``[[p, q], [r, s]]``
    in row order; blank lines and ``#`` comments are ignored.
    """
    gens = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#")[0].strip()
            if not line:
                continue
            v = [float(x) for x in line.replace(",", " ").split()]
            if len(v) != 8:
                raise ValueError(f"expected 8 reals per generator, got {len(v)}")
            gd = np.array([[v[0] + 1j * v[1], v[2] + 1j * v[3]], [v[4] + 1j * v[5], v[6] + 1j * v[7]]])
            gens.append((CAYLEY_INV @ gd @ CAYLEY).real)
    if len(gens) != 4:
        raise ValueError("a genus-2 surface group needs 4 generators")
    return FuchsianGroup(gens)


# --- states and flow ----------------------------------------------------------------


@dataclass
class UnitTangentState:
    """A frame in ``SL(2, R)``; base point ``frame . i``."""

    frame: np.ndarray

    def __post_init__(self):
        self.frame = np.asarray(self.frame, dtype=float)
        if abs(np.linalg.det(self.frame) - 1) > 1e-12:
            raise ValueError("frame must have determinant 1")

    @property
    def pair(self):
        a, b = to_disk(self.frame)
        return complex(a), complex(b)

    @property
    def base(self) -> complex:
        a, b = self.pair
        return b / np.conj(a)

    @property
    def angle(self) -> float:
        return float(2 * np.angle(self.pair[0]))

    @classmethod
    def from_point(cls, w: complex, angle: float) -> "UnitTangentState":
        a, b = _frame_at(np.array([w]), np.array([angle]))
        return cls(from_disk(a[0], b[0]))


def _frame_at(w, theta):
    """Pairs with base point ``w`` and direction angle ``theta``."""
    n = np.sqrt(1 - np.abs(w) ** 2)
    return _rotate_pair(1 / n + 0j, w / n, theta)


def flow_frames(frames, t):
    """Right translation by ``diag(e^{t/2}, e^{-t/2})``."""
    frames = np.asarray(frames, dtype=float)
    t = np.asarray(t, dtype=float)
    a = np.zeros(t.shape + (2, 2))
    a[..., 0, 0] = np.exp(t / 2)
    a[..., 1, 1] = np.exp(-t / 2)
    return frames @ a


def geodesic_flow(group: FuchsianGroup, s: UnitTangentState, t: float):
    """Flow for time ``t`` and reduce.  Returns ``(state, reduction word)``."""
    g = flow_frames(s.frame, t)
    red, words = group.reduce(g[None], record=True)
    return UnitTangentState(red[0]), words[0]


# --- closed geodesics ---------------------------------------------------------------


@dataclass
class GeodesicClass:
    word: str
    matrix: np.ndarray
    trace: float
    length: float

    def axis_frame(self) -> np.ndarray:
        """Frame on the axis with ``matrix @ F = F @ diag(e^{l/2}, e^{-l/2})``."""
        M = self.matrix if np.trace(self.matrix) > 0 else -self.matrix
        vals, vecs = np.linalg.eig(M)
        order = np.argsort(-vals.real)
        P = vecs[:, order].real
        if np.linalg.det(P) < 0:
            P[:, 1] *= -1
        return P / sqrt(np.linalg.det(P))


def _canonical(word: str, oriented: bool) -> str:
    """Least rotation (of the word or, unless ``oriented``, its inverse) in ``LETTERS`` order."""
    codes = [LETTERS.index(ch) for ch in word]
    rots = [codes[k:] + codes[:k] for k in range(len(codes))]
    if not oriented:
        inv = [(c + 4) % 8 for c in codes[::-1]]
        rots += [inv[k:] + inv[:k] for k in range(len(inv))]
    return "".join(LETTERS[c] for c in min(rots))


def _canonical_words(n: int, oriented: bool) -> np.ndarray:
    """Canonical cyclically reduced words of length ``n`` as letter-index rows."""
    w = np.arange(8, dtype=np.int8)[:, None]
    for _ in range(n - 1):
        last = w[:, -1].astype(np.int16)
        nxt = np.arange(8, dtype=np.int16)[None, :]
        ok = nxt != (last[:, None] + 4) % 8
        rows, cols = np.nonzero(ok)
        w = np.concatenate([w[rows], cols.astype(np.int8)[:, None]], axis=1)
    if n > 1:
        w = w[w[:, 0] != (w[:, -1] + 4) % 8]
    # canonical = least code among rotations (and rotations of the inverse)
    pw = 8 ** np.arange(n - 1, -1, -1, dtype=np.int64)
    code = w.astype(np.int64) @ pw
    best = code.copy()
    variants = [w] if oriented else [w, ((w[:, ::-1].astype(np.int16) + 4) % 8).astype(np.int8)]
    for v in variants:
        for k in range(n):
            rc = np.roll(v, -k, axis=1).astype(np.int64) @ pw
            np.minimum(best, rc, out=best)
    return w[code == best]


def enumerate_classes(group: FuchsianGroup, Lmax: float, word_cutoff: int, oriented: bool = False):
    """Closed geodesics from cyclically reduced words of length ``<= word_cutoff``.

    Words are deduplicated under cyclic permutation (and inversion unless
    ``oriented``); lengths are ``2 arccosh(|tr| / 2)``.  Distinct free-group
    classes may still represent the same closed geodesic of the surface; see
    :func:`geometric_classes`.
    """
    if word_cutoff < 1:
        raise ValueError("word_cutoff must be >= 1")
    mats = np.array([group.matrices[ch] for ch in LETTERS])
    out = []
    for n in range(1, word_cutoff + 1):
        w = _canonical_words(n, oriented)
        M = mats[w[:, 0]]
        for j in range(1, n):
            M = M @ mats[w[:, j]]
        tr = np.abs(M[:, 0, 0] + M[:, 1, 1])
        bad = tr <= 2 + 1e-9
        for i in np.nonzero(bad)[0]:
            word = "".join(LETTERS[c] for c in w[i])
            logger.warning("skipping non-hyperbolic word %s (|tr| = %.6g)", word, tr[i])
        ell = 2 * np.arccosh(np.maximum(tr, 2.0) / 2)
        for i in np.nonzero(~bad & (ell <= Lmax))[0]:
            word = "".join(LETTERS[c] for c in w[i])
            out.append(GeodesicClass(word, M[i], float(tr[i]), float(ell[i])))
    out.sort(key=lambda c: (c.length, len(c.word), c.word))
    return out


def _closest_lifts(group: FuchsianGroup, classes, dt: float, tol: float = 1e-7):
    """Boundary endpoints of the lifts nearest the origin, per class.

    The axis is flowed over one period with reduction, so the lifts visited
    are those crossing the fundamental domain.  The line nearest the origin
    has the longest endpoint chord.  Lines touching the octagon only at a
    vertex are sampled erratically and are ignored.
    """
    frames = np.array([c.axis_frame() for c in classes])
    a, b = group.reduce_pairs(*to_disk(frames))
    L = np.array([c.length for c in classes])
    n = np.ceil(L / dt).astype(int)
    step = L / n
    verts = np.asarray(group.vertices)
    m = int(n.max()) + 1
    chords = np.full((m, len(classes)), -1.0)
    ends = np.zeros((m, len(classes), 2), dtype=complex)
    for k in range(m):
        act = np.nonzero(n >= k)[0]
        if k:
            a2, b2 = _flow_pair(a[act], b[act], step[act])
            if k % 16 == 0:
                a2, b2 = _renormalize(a2, b2)
            a2, b2 = group.reduce_pairs(a2, b2)
            a[act], b[act] = a2, b2
        aa, bb = a[act], b[act]
        ep = (aa + bb) / (np.conj(bb) + np.conj(aa))
        em = (-aa + bb) / (-np.conj(bb) + np.conj(aa))
        # lines meeting the closed domain only at a vertex are dropped
        chords[k, act] = np.where(_meets_domain(ep, em, verts), np.abs(ep - em), -1.0)
        ends[k, act, 0], ends[k, act, 1] = ep, em
    best = chords.max(axis=0)
    lines = []
    for j in range(len(classes)):
        e = ends[chords[:, j] > best[j] - tol, j]
        keys = np.round(np.stack([e.real, e.imag], axis=-1).reshape(len(e), 4), 7)
        _, first = np.unique(keys, axis=0, return_index=True)
        lines.append([tuple(e[i]) for i in first])
    # a side of the octagon is a lift seen from both paired sides
    for j in range(len(classes)):
        extra = []
        for p, m in lines[j]:
            if _on_line(p, m, verts).sum() < 2:
                continue
            ip, im = _mobius(group._A, group._B, p), _mobius(group._A, group._B, m)
            for q, r in zip(ip, im):
                if _on_line(q, r, verts).sum() >= 2:
                    extra.append((q, r))
        lines[j] += extra
    return best, lines


def _line_side(p, m, verts):
    """Signed side of each vertex relative to the geodesic from ``m`` to ``p``."""
    p, m = np.asarray(p)[..., None], np.asarray(m)[..., None]
    vs = 1 / np.conj(verts)
    return ((verts - p) * (vs - m) / ((verts - m) * (vs - p))).imag


def _on_line(p, m, verts, tol=1e-9):
    return np.abs(_line_side(p, m, verts)) < tol


def _meets_domain(p, m, verts, tol=1e-9):
    """Line crosses the open octagon or contains one of its sides."""
    side = _line_side(p, m, verts)
    both = (side.max(axis=-1) > tol) & (side.min(axis=-1) < -tol)
    return both | ((np.abs(side) < tol).sum(axis=-1) >= 2)


def geometric_classes(group: FuchsianGroup, classes, oriented: bool = False, dt: float = 0.01):
    """Keep one class per closed geodesic of the surface.

    Free-group classes that differ by the relator give the same geodesic.
    Each class is keyed by the set of its lifts closest to the origin.
    """
    classes = list(classes)
    if not classes:
        return []
    best, lines = _closest_lifts(group, classes, dt)

    def key(j):
        pts = set()
        for p, m in lines[j]:
            pair = (np.angle(p), np.angle(m))
            pair = tuple(round(float(x) % (2 * np.pi), 6) % round(2 * np.pi, 6) for x in pair)
            pts.add(pair if oriented else tuple(sorted(pair)))
        return (round(float(best[j]), 7), frozenset(pts))

    seen = set()
    out = []
    for j, c in enumerate(classes):
        k = key(j)
        if k in seen:
            continue
        seen.add(k)
        out.append(c)
    return out


def _ball(group: FuchsianGroup, radius: float):
    """All group elements moving the centre by at most ``radius``.

    Breadth-first over words; an element is identified by the point it
    sends ``i`` to, stored as the symmetric matrix ``g g^T``.  Returns
    ``(mats, parent, letter)`` with parent links for rebuilding words.
    """
    from scipy.spatial import cKDTree

    gens = np.array([group.matrices[ch] for ch in LETTERS])
    cap = 2 * cosh(radius)
    mats = [np.eye(2)[None]]
    parent = [np.array([-1])]
    letter = [np.array([-1], dtype=np.int8)]
    prev_keys = np.zeros((0, 3))
    cur = np.eye(2)[None]
    cur_idx = np.array([0])
    cur_last = np.array([-1])
    total = 1
    while len(cur):
        cand = (cur[:, None] @ gens[None]).reshape(-1, 2, 2)
        par = np.repeat(cur_idx, 8)
        let = np.tile(np.arange(8, dtype=np.int8), len(cur))
        last = np.repeat(cur_last, 8)
        keep = (last < 0) | (let != (last + 4) % 8)
        keep &= (cand**2).sum(axis=(1, 2)) <= cap
        cand, par, let = cand[keep], par[keep], let[keep]
        if not len(cand):
            break
        h = cand @ cand.transpose(0, 2, 1)
        keys = np.stack([h[:, 0, 0], h[:, 0, 1], h[:, 1, 1]], axis=1)
        # words of equal length can name the same element; keep one
        tree = cKDTree(keys)
        dup = np.zeros(len(keys), dtype=bool)
        for i, j in tree.query_pairs(0.1):
            dup[max(i, j)] = True
        old = np.concatenate([prev_keys, _keys(cur)])
        if len(old):
            d, _ = cKDTree(old).query(keys, distance_upper_bound=0.1)
            dup |= np.isfinite(d)
        cand, par, let = cand[~dup], par[~dup], let[~dup]
        prev_keys = _keys(cur)
        mats.append(cand)
        parent.append(par)
        letter.append(let)
        cur, cur_idx, cur_last = cand, np.arange(total, total + len(cand)), let
        total += len(cand)
    return np.concatenate(mats), np.concatenate(parent), np.concatenate(letter)


def _keys(m):
    h = m @ m.transpose(0, 2, 1)
    return np.stack([h[:, 0, 0], h[:, 0, 1], h[:, 1, 1]], axis=1)


def _word_of(i, parent, letter) -> str:
    out = []
    while parent[i] >= 0:
        out.append(LETTERS[letter[i]])
        i = parent[i]
    return "".join(reversed(out))


def _cyclic_reduce(word: str) -> str:
    while len(word) > 1 and word[0] == word[-1].swapcase():
        word = word[1:-1]
    return word


def _fixed_points(m):
    """Attracting and repelling fixed points in the disk of hyperbolic ``m``."""
    m = m * np.sign(m[:, 0, 0] + m[:, 1, 1])[:, None, None]
    vals, vecs = np.linalg.eig(m)
    order = np.argsort(-vals.real, axis=1)
    v = np.take_along_axis(vecs.real, order[:, None, :], axis=2)
    x, y = v[:, 0, :], v[:, 1, :]
    # Cayley map of the real point x / y (infinity goes to 1)
    z = (x - 1j * y) / (x + 1j * y)
    return z[:, 0], z[:, 1]


def enumerate_geodesics(group: FuchsianGroup, Lmax: float, oriented: bool = False):
    """Every primitive closed geodesic of length ``<= Lmax``.

    Unlike :func:`enumerate_classes` this does not depend on a word cutoff.
    A closed geodesic has a lift whose axis meets the octagon, hence within
    the circumradius ``R`` of the centre, and its translation then moves the
    centre by at most ``2 asinh(cosh R sinh(l / 2))``.  All such elements are
    listed; their axes meeting the closed octagon are joined whenever a side
    pairing maps one to another, and each connected piece is one geodesic.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    R = group.circumradius
    r = 2 * np.arcsinh(cosh(R) * np.sinh(Lmax / 2))
    # tiles along the segment to a far element stay within R of it
    mats, parent, letter = _ball(group, r + R)
    tr = np.abs(mats[:, 0, 0] + mats[:, 1, 1])
    disp = (mats**2).sum(axis=(1, 2)) / 2
    ell = 2 * np.arccosh(np.maximum(tr, 2.0) / 2)
    sel = np.nonzero((tr > 2 + 1e-9) & (ell <= Lmax + 1e-9) & (disp <= cosh(r) * (1 + 1e-9)))[0]
    p, m = _fixed_points(mats[sel])
    verts = np.asarray(group.vertices)
    side = _line_side(p, m, verts)
    meets = ((side.max(axis=1) > -1e-7) & (side.min(axis=1) < 1e-7))
    sel, p, m = sel[meets], p[meets], m[meets]
    if not len(sel):
        return []

    # one node per oriented line; powers share the line of their root
    pts = np.stack([p.real, p.imag, m.real, m.imag], axis=1)
    tree = cKDTree(pts)
    same = tree.query_pairs(1e-6, output_type="ndarray")
    rows, cols = [np.arange(len(sel)), same[:, 0]], [np.arange(len(sel)), same[:, 1]]

    def link(q, w):
        d, j = tree.query(np.stack([q.real, q.imag, w.real, w.imag], axis=1), distance_upper_bound=1e-6)
        ok = np.isfinite(d)
        rows.append(np.nonzero(ok)[0])
        cols.append(j[ok])

    for k in range(8):
        link(_mobius(group._A[k], group._B[k], p), _mobius(group._A[k], group._B[k], m))
    if not oriented:
        link(m, p)
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(sel), len(sel)))
    n_comp, label = connected_components(graph, directed=False)

    out = []
    ell_sel = ell[sel]
    wl = np.array([len(_word_of(i, parent, letter)) for i in sel])
    for c in range(n_comp):
        members = np.nonzero(label == c)[0]
        lmin = ell_sel[members].min()
        prim = members[ell_sel[members] < lmin + 1e-8]
        best = prim[np.argmin(wl[prim])]
        word = _canonical(_cyclic_reduce(_word_of(sel[best], parent, letter)), oriented)
        M = group.word_matrix(word)
        t = abs(np.trace(M))
        out.append(GeodesicClass(word, M, float(t), float(2 * np.arccosh(t / 2))))
    out.sort(key=lambda c: (c.length, len(c.word), c.word))
    return out


def classes_to_csv(classes, path):
    import csv

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["word", "trace", "length"])
        for c in classes:
            wr.writerow([c.word, repr(c.trace), repr(c.length)])


# --- fields on the unit tangent bundle ---------------------------------------------


def _bump(u):
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(1 - 1 / (1 - u[inside] ** 2))
    return out


class _Field:
    group: FuchsianGroup

    def __call__(self, frames) -> np.ndarray:
        return self.eval_pairs(*to_disk(frames))

    def eval_pairs(self, alpha, beta) -> np.ndarray:
        raise NotImplementedError


@dataclass
class ConstantField(_Field):
    group: FuchsianGroup
    value: float = 1.0

    def eval_pairs(self, alpha, beta):
        return np.full(np.shape(alpha), float(self.value))


@dataclass
class BandField(_Field):
    """Poincare sum of bumps times angular trigonometric polynomials.

    ``F(g) = sum_j sum_gamma b(d(gamma g . 0, z_j) / R_j)
    Re sum_{k=0}^{band} c_jk e^{i k theta(gamma g)}``, the inner sum over
    group elements of word length ``<= cutoff`` whose tile meets the bump.
    Frames are first reduced into the octagon, so the truncated sum
    already contains every nonzero term.

    Parameters
    ----------
    centres : complex array (J,)
        Bump centres in the disk.
    radii : array (J,)
        Hyperbolic radii.
    coeffs : complex array (J, band + 1)
        Angular Fourier coefficients; the imaginary part of ``k = 0`` is
        ignored.
    """

    group: FuchsianGroup
    band: int
    centres: np.ndarray
    radii: np.ndarray
    coeffs: np.ndarray
    cutoff: int = 8

    def __post_init__(self):
        self.centres = np.asarray(self.centres, dtype=complex)
        self.radii = np.asarray(self.radii, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=complex).reshape(len(self.centres), self.band + 1)

    @classmethod
    def random(cls, group, band, rng, n_bumps=3, radius=(0.8, 1.4), odd_only=False, cutoff=8):
        """Random band field with bumps centred inside the octagon."""
        centres = []
        while len(centres) < n_bumps:
            w = (rng.random() * 2 - 1) + 1j * (rng.random() * 2 - 1)
            if abs(w) < 0.8 * abs(group.vertices[0]) and group.in_domain(w)[0]:
                centres.append(w)
        radii = rng.uniform(*radius, size=n_bumps)
        c = rng.normal(size=(n_bumps, band + 1)) + 1j * rng.normal(size=(n_bumps, band + 1))
        if odd_only:
            c[:, :band] = 0.0
        return cls(group, band, np.array(centres), radii, c, cutoff)

    def _stack(self, cutoff):
        """Translates of every bump as rows ``(A, B, c, tanh(R/2), R, coeffs)``.

        ``c = gamma^{-1} z_j`` is the pulled-back centre: ``gamma g`` is in the
        bump iff the base point of ``g`` is within ``R`` of ``c``.
        """
        key = ("stack", cutoff)
        if key not in self.__dict__:
            rows = []
            for j, (z, R) in enumerate(zip(self.centres, self.radii)):
                _, A, B = self.group.neighbourhood(z, R, cutoff)
                for a, b in zip(A, B):
                    c = _mobius(np.conj(a), -b, z)  # inverse of [[a, b], [conj b, conj a]]
                    rows.append((a, b, c, tanh(R / 2), R, j))
            A, B, Cc, rho, R, J = (np.array(v) for v in zip(*rows))
            # the hyperbolic ball is a Euclidean disk: centre ec, radius er
            q = 1 - rho**2 * np.abs(Cc) ** 2
            ec = Cc * (1 - rho**2) / q
            er = rho * (1 - np.abs(Cc) ** 2) / q
            self.__dict__[key] = (A, B, Cc, ec.real, ec.imag, er**2, R, self.coeffs[J])
        return self.__dict__[key]

    def eval_pairs(self, alpha, beta, cutoff=None):
        cutoff = self.cutoff if cutoff is None else cutoff
        alpha, beta = self.group.reduce_pairs(alpha, beta)
        A, B, Cc, ex, ey, er2, R, C = self._stack(cutoff)
        w = beta / np.conj(alpha)
        dx = w.real[None, :] - ex[:, None]
        dy = w.imag[None, :] - ey[:, None]
        r, i = np.nonzero(dx * dx + dy * dy < er2[:, None])
        out = np.zeros(alpha.shape)
        if len(r):
            ps = np.abs((w[i] - Cc[r]) / (1 - np.conj(Cc[r]) * w[i]))
            amp = _bump(2 * np.arctanh(np.minimum(ps, 1 - 1e-16)) / R[r])
            a2 = A[r] * alpha[i] + B[r] * np.conj(beta[i])
            e = (a2 / np.abs(a2)) ** 2  # e^{i theta}
            powers = e[:, None] ** np.arange(self.band + 1)[None, :]
            trig = np.sum(powers * C[r], axis=1).real
            np.add.at(out, i, amp * trig)
        return out

    def liouville_mean(self) -> float:
        """Exact mean over the unit tangent bundle.

        Only ``k = 0`` survives the fiber average, and the Poincare sum
        unfolds to one bump integrated over the plane, divided by the
        surface area ``4 pi``.
        """
        total = 0.0
        for R, c in zip(self.radii, self.coeffs[:, 0]):
            val, _ = integrate.quad(lambda r: _bump(np.array([r / R]))[0] * np.sinh(r), 0, R, epsabs=1e-13, epsrel=1e-12)
            total += c.real * 2 * pi * val
        return total / (4 * pi)

    def centered(self) -> "LinearField":
        return LinearField([(1.0, self)], -self.liouville_mean())

    def truncation_error(self, frames, cutoffs=(7, 8)) -> float:
        """Largest change between two Poincare-series cutoffs at ``frames``."""
        a, b = to_disk(frames)
        lo = self.eval_pairs(a, b, cutoffs[0])
        hi = self.eval_pairs(a, b, cutoffs[1])
        return float(np.abs(hi - lo).max())


@dataclass
class FlowDerivative(_Field):
    """``X F`` by a central difference along the flow.

    Any central difference of a periodic function integrates to exactly
    zero over the period, so closed-orbit averages of ``FlowDerivative``
    vanish up to quadrature error whatever the step.
    """

    field: _Field
    h: float = 1e-4

    @property
    def group(self):
        return self.field.group

    def eval_pairs(self, alpha, beta):
        F = self.field.eval_pairs
        d = F(*_flow_pair(alpha, beta, self.h)) - F(*_flow_pair(alpha, beta, -self.h))
        return d / (2 * self.h)


@dataclass
class LinearField(_Field):
    """``sum_i a_i F_i + c``."""

    terms: list
    constant: float = 0.0

    @property
    def group(self):
        return self.terms[0][1].group

    def eval_pairs(self, alpha, beta):
        out = np.full(np.shape(alpha), float(self.constant))
        for a, F in self.terms:
            out = out + a * F.eval_pairs(alpha, beta)
        return out


# --- X-ray transform ----------------------------------------------------------------


def _nodes(length, n_quad, per_unit):
    return max(n_quad, int(ceil(per_unit * length)))


def xray_classes(F, classes, n_quad: int = 64, per_unit: int = 64, reverse: bool = False) -> np.ndarray:
    """Orbit averages of ``F`` over closed geodesics.

    Periodic trapezoid rule on ``max(n_quad, per_unit * length)`` nodes
    along the axis, spectrally accurate for smooth periodic integrands.
    All classes are stepped together (sorted by node count, so the active
    ones form a prefix), reducing after each step.  ``F`` may be a list of
    fields sharing the trajectories; the result then has one row per field.
    """
    if n_quad < 64:
        raise ValueError("n_quad must be >= 64")
    fields = list(F) if isinstance(F, (list, tuple)) else [F]
    classes = list(classes)
    out = np.zeros((len(fields), len(classes)))
    if classes:
        group = fields[0].group
        lengths = np.array([c.length for c in classes])
        nodes = np.array([_nodes(l, n_quad, per_unit) for l in lengths])
        order = np.argsort(-nodes, kind="stable")
        nodes, lengths = nodes[order], lengths[order]
        frames = np.array([classes[i].axis_frame() for i in order])
        a, b = group.reduce_pairs(*to_disk(frames))
        if reverse:
            a, b = _rotate_pair(a, b, pi)
        step = lengths / nodes
        total = np.zeros((len(fields), len(classes)))
        for k in range(int(nodes[0])):
            m = int(np.searchsorted(-nodes, -k, side="left"))  # nodes > k
            a, b = a[:m], b[:m]
            for i, f in enumerate(fields):
                total[i, :m] += f.eval_pairs(a, b)
            a, b = _flow_pair(a, b, step[:m])
            if k % 16 == 15:
                a, b = _renormalize(a, b)
            a, b = group.reduce_pairs(a, b)
        out[:, order] = total / nodes
    return out if isinstance(F, (list, tuple)) else out[0]


def xray_class(F: _Field, c: GeodesicClass, n_quad: int = 64, per_unit: int = 64, reverse: bool = False) -> float:
    """``(1 / l) int_0^l F`` along the axis of ``c``."""
    return float(xray_classes(F, [c], n_quad, per_unit, reverse)[0])


# --- Liouville sampling and correlations --------------------------------------------


def sample_liouville(group: FuchsianGroup, rng, n: int):
    """Pairs distributed by Liouville measure on the octagon times the circle.

    Rejection sampling: hyperbolic area density ``4 / (1 - |w|^2)^2`` on the
    disk of the octagon's circumradius, restricted to the octagon.
    """
    rv = abs(group.vertices[0])
    dmax = 1 / (1 - rv**2) ** 2
    ws = []
    need = n
    while need > 0:
        m = 4 * need + 64
        r = rv * np.sqrt(rng.random(m))
        w = r * np.exp(2j * pi * rng.random(m))
        keep = rng.random(m) * dmax < 1 / (1 - np.abs(w) ** 2) ** 2
        w = w[keep]
        w = w[group.in_domain(w, tol=0.0)][:need]
        ws.append(w)
        need -= len(w)
    w = np.concatenate(ws)
    theta = 2 * pi * rng.random(n)
    return _frame_at(w, theta)


def _trajectory_integrals(fields, group, alpha, beta, T_max, dt):
    """``int_{-T}^{T} F(phi_t x) dt`` per sample (trapezoid) and the values at ``+-T``."""
    n = int(ceil(T_max / dt))
    dt = T_max / n
    w = np.full(n + 1, dt)
    w[0] = w[-1] = dt / 2
    integ = np.zeros((len(fields), len(alpha)))
    ends = np.zeros((len(fields), 2, len(alpha)))
    for side, sgn in enumerate((1.0, -1.0)):
        a, b = alpha.copy(), beta.copy()
        for k in range(n + 1):
            for i, F in enumerate(fields):
                v = F.eval_pairs(a, b)
                integ[i] += w[k] * v
                if k == n:
                    ends[i, side] = v
            if k == n:
                break
            a, b = _flow_pair(a, b, sgn * dt)
            if k % 16 == 15:
                a, b = _renormalize(a, b)
            a, b = group.reduce_pairs(a, b)
    return integ, ends


def pairing_matrix(fields, T_max: float = 30.0, n_samples: int = 2000, seed: int = 0, dt: float = 0.05):
    """Correlation pairings ``<Pi F_i, F_j>`` on one shared Liouville sample.

    Entry ``(i, j)`` estimates ``int_{-T}^{T} E[F_i(phi_t x) F_j(x)] dt`` with
    centred fields.  Returns ``(value, stderr, tail)`` arrays; ``tail`` is
    the correlation ``|C_ij(+-T)|`` averaged over both ends.
    """
    fields = list(fields)
    group = fields[0].group
    rng = np.random.default_rng(seed)
    alpha, beta = sample_liouville(group, rng, n_samples)
    f0 = np.array([F.eval_pairs(alpha, beta) for F in fields])
    means = f0.mean(axis=1)
    se0 = f0.std(axis=1, ddof=1) / sqrt(n_samples)
    for i, (m, s) in enumerate(zip(means, se0)):
        if abs(m) > 3 * s and s > 0:
            warnings.warn(f"field {i} is not centred (mean {m:.3g}); centring", stacklevel=2)
    integ, ends = _trajectory_integrals(fields, group, alpha, beta, T_max, dt)
    integ -= 2 * T_max * means[:, None]
    ends -= means[:, None, None]
    f0c = f0 - means[:, None]
    Y = integ[:, None, :] * f0c[None, :, :]
    val = Y.mean(axis=2)
    se = Y.std(axis=2, ddof=1) / sqrt(n_samples)
    tail = 0.5 * np.abs((ends[:, None, :, :] * f0c[None, :, None, :]).mean(axis=3)).sum(axis=2)
    return val, se, tail


def variance_pairing(F1, F2, T_max: float = 30.0, n_samples: int = 2000, seed: int = 0, dt: float = 0.05) -> dict:
    """``<Pi F1, F2> = int_{-T}^{T} <F1 o phi_t, F2> dt`` by Monte Carlo.

    Both fields are centred by their Monte Carlo mean (a warning is issued
    when the mean is significant).
    """
    val, se, tail = pairing_matrix([F1, F2], T_max, n_samples, seed, dt)
    return {"value": float(val[0, 1]), "stderr": float(se[0, 1]), "tail": float(tail[0, 1]),
            "T_max": T_max, "n_samples": n_samples}


# --- resolvent on one orbit ---------------------------------------------------------


def _trig_interp(samples, ell, t):
    """Band-limited interpolant of equispaced periodic samples at times ``t``."""
    N = len(samples)
    x = 2 * pi * np.asarray(t)[:, None] / ell - 2 * pi * np.arange(N)[None, :] / N
    # periodic sinc kernel for even N, Nyquist mode split evenly
    with np.errstate(invalid="ignore", divide="ignore"):
        ker = np.sin(N * x / 2) / (N * np.tan(x / 2))
    ker = np.where(np.abs(np.sin(x / 2)) < 1e-14, 1.0, ker)
    return ker @ samples


def resolvent_on_orbit(f_samples, ell: float, lam: float, direct: bool = True):
    """``<R_+(lam) f, f>`` on a closed orbit of length ``ell``.

    Returns ``(value, coeffs, direct_value)``: the Fourier-multiplier value
    ``lam sum |c_n|^2 / (lam^2 + 4 pi^2 n^2 / l^2)``, the coefficients
    ``c_n`` (FFT order) and, with ``direct``, the time integral
    ``int_0^inf e^{-lam t} <f(. - t), f> dt`` evaluated by quadrature of
    the interpolated autocorrelation.
    """
    if lam <= 0:
        raise DomainError("lambda must be positive")
    f = np.asarray(f_samples, dtype=float)
    N = len(f)
    if N < 2 or N & (N - 1):
        raise ValueError("sample count must be a power of two")
    c = np.fft.fft(f) / N
    n = np.fft.fftfreq(N, 1.0 / N)
    value = float(lam * np.sum(np.abs(c) ** 2 / (lam**2 + 4 * pi**2 * n**2 / ell**2)))
    if not direct:
        return value, c, None
    s = np.arange(N) * ell / N

    def corr(t):
        return float(np.mean(_trig_interp(f, ell, (s - t) % ell) * f))

    # periodic correlation: sum the geometric series over periods
    one, _ = integrate.quad(lambda t: np.exp(-lam * t) * corr(t), 0.0, ell, epsabs=1e-13, epsrel=1e-12, limit=400)
    direct_value = one / (1 - np.exp(-lam * ell))
    return value, c, float(direct_value)


# --- Parry averages -----------------------------------------------------------------


def parry_average(F: _Field, T: float, classes=None, n_quad: int = 64, per_unit: int = 64) -> float:
    """``sum e^l If(gamma) / sum e^l`` over oriented closed geodesics with ``l <= T``.

    The unstable Jacobian is identically 1 in curvature -1, so the Parry
    weight ``e^{int J^u}`` is ``e^l``.  By default every oriented geodesic
    up to ``T`` is used (:func:`enumerate_geodesics`); a word-cutoff list
    would miss long classes, which dominate the weights.
    """
    if classes is None:
        classes = enumerate_geodesics(F.group, T, oriented=True)
    classes = [c for c in classes if c.length <= T]
    if not classes:
        raise DomainError(f"no closed geodesic of length <= {T}")
    ells = np.array([c.length for c in classes])
    wts = np.exp(ells - ells.max())
    vals = xray_classes(F, classes, n_quad, per_unit)
    return float(np.sum(wts * vals) / np.sum(wts))
