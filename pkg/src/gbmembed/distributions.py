"""Target laws on [0, inf] and the barrier calculus built on their quantiles.

A law is stored as a right-continuous quantile function ``q`` that is
piecewise linear on a partition ``0 = r_0 < ... < r_m = 1`` (piecewise
constant for discrete laws). Everything downstream is closed form:

    h(r) = int_0^r q(s) ds          (convex, h(1) = mean)
    g(r) = r - h(r)                 (concave, g' = 1 - q)

``g`` increases while ``q < 1``, is flat where ``q == 1`` and decreases
once ``q > 1``, so its argmax set is ``[P(xi < 1), P(xi <= 1)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, SpecError, UnsupportedTargetError

PROB_TOL = 1e-12
MEAN_TOL = 1e-9
ROOT_TOL = 1e-12

__all__ = [
    "TargetDistribution",
    "GCalculus",
    "BarrierPair",
    "quantile",
    "h_value",
    "g_value",
    "build_g_calculus",
    "solve_g",
    "barrier_pair",
    "parse_value",
    "format_value",
]


def parse_value(v) -> float:
    """Numbers or the literal ``"inf"``."""
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        raise ValueError(f"unrecognized value literal {v!r}")
    return float(v)


def format_value(v: float):
    return "inf" if v == math.inf else v


class TargetDistribution:
    """Law on [0, inf] held through its quantile function.

    Use :meth:`from_atoms` or :meth:`from_quantile_knots` (or the small
    helpers :meth:`point_mass` / :meth:`uniform`) rather than the
    constructor.
    """

    __slots__ = ("kind", "r", "qa", "qb", "q_end", "atoms", "knots", "mean", "_H")

    def __init__(self, kind, r, qa, qb, q_end, atoms=None, knots=None):
        self.kind = kind
        self.r = np.asarray(r, dtype=float)
        self.qa = np.asarray(qa, dtype=float)
        self.qb = np.asarray(qb, dtype=float)
        self.q_end = float(q_end)
        self.atoms = atoms
        self.knots = knots
        for a in (self.r, self.qa, self.qb):
            a.setflags(write=False)
        L = np.diff(self.r)
        with np.errstate(invalid="ignore"):
            seg = np.where(np.isinf(self.qa) | np.isinf(self.qb), math.inf, L * (self.qa + self.qb) / 2.0)
        H = np.concatenate([[0.0], np.cumsum(seg)])
        H.setflags(write=False)
        self._H = H
        self.mean = float(H[-1])

    # -- constructors -------------------------------------------------

    @classmethod
    def from_atoms(cls, atoms: Iterable[Sequence]) -> "TargetDistribution":
        pairs = []
        for item in atoms:
            if len(item) != 2:
                raise SpecError("each atom must be a [value, prob] pair", "atoms")
            v, p = parse_value(item[0]), float(item[1])
            if not (v >= 0):
                raise SpecError(f"atom value {v} is negative", "atoms")
            if not (0.0 < p <= 1.0):
                raise SpecError(f"atom probability {p} outside (0, 1]", "atoms")
            pairs.append((v, p))
        if not pairs:
            raise SpecError("at least one atom is required", "atoms")
        total = math.fsum(p for _, p in pairs)
        if abs(total - 1.0) > PROB_TOL:
            raise SpecError(f"atom probabilities must sum to 1 (got {total:.15g})", "atoms")
        merged: dict[float, float] = {}
        for v, p in pairs:
            merged[v] = merged.get(v, 0.0) + p
        values = sorted(merged)
        probs = [merged[v] for v in values]
        cum = np.concatenate([[0.0], np.cumsum(probs)])
        cum[-1] = 1.0
        vals = np.array(values)
        return cls("atoms", cum, vals, vals, values[-1], atoms=tuple(zip(values, probs)))

    @classmethod
    def from_quantile_knots(cls, knots: Iterable[Sequence]) -> "TargetDistribution":
        pts = [(float(k[0]), parse_value(k[1])) for k in knots]
        if len(pts) < 2:
            raise SpecError("need at least two quantile knots", "knots")
        r = np.array([p[0] for p in pts])
        q = np.array([p[1] for p in pts])
        if r[0] != 0.0 or r[-1] != 1.0:
            raise SpecError("quantile knots must start at r=0 and end at r=1", "knots")
        if np.any(np.diff(r) <= 0):
            raise SpecError("quantile knot positions must be strictly increasing", "knots")
        if np.any(q < 0):
            raise SpecError("quantile values must be nonnegative", "knots")
        if np.any(np.isinf(q[:-1])):
            raise SpecError("an infinite quantile value is allowed only at r=1", "knots")
        if np.any(np.diff(q) < 0):
            raise SpecError("quantile values must be nondecreasing", "knots")
        q_end = q[-1]
        qb = q[1:].copy()
        if math.isinf(q_end):
            # "inf" at r=1 only fixes the endpoint value F^{-1}(1); the last
            # piece is held at its left knot.
            qb[-1] = q[-2]
        return cls("quantile", r, q[:-1], qb, q_end, knots=tuple(pts))

    @classmethod
    def point_mass(cls, value: float) -> "TargetDistribution":
        return cls.from_atoms([(value, 1.0)])

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "TargetDistribution":
        return cls.from_quantile_knots([(0.0, lo), (1.0, hi)])

    @classmethod
    def from_json(cls, obj: dict) -> "TargetDistribution":
        kind = obj.get("kind")
        if kind == "atoms":
            if "atoms" not in obj:
                raise SpecError("missing 'atoms' list", "atoms")
            return cls.from_atoms(obj["atoms"])
        if kind == "quantile":
            if "knots" not in obj:
                raise SpecError("missing 'knots' list", "knots")
            return cls.from_quantile_knots(obj["knots"])
        raise SpecError(f"unknown distribution kind {kind!r}", "kind")

    def to_json(self) -> dict:
        if self.kind == "atoms":
            return {"kind": "atoms", "atoms": [[format_value(v), p] for v, p in self.atoms]}
        return {"kind": "quantile", "knots": [[r, format_value(q)] for r, q in self.knots]}

    def __repr__(self):
        return f"TargetDistribution({self.to_json()!r})"

    def __eq__(self, other):
        return isinstance(other, TargetDistribution) and self.to_json() == other.to_json()

    __hash__ = None

    @property
    def n_pieces(self) -> int:
        return len(self.qa)

    # -- evaluation ---------------------------------------------------

    def _locate(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(~((r >= 0.0) & (r <= 1.0))):
            raise DomainError("r must lie in [0, 1]")
        idx = np.clip(np.searchsorted(self.r, r, side="right") - 1, 0, self.n_pieces - 1)
        return r, idx

    def _slope(self, idx):
        L = self.r[idx + 1] - self.r[idx]
        qa, qb = self.qa[idx], self.qb[idx]
        with np.errstate(invalid="ignore"):
            return np.where(qa == qb, 0.0, (qb - qa) / L)

    def quantile(self, r):
        """Right-continuous inverse ``inf{x : F(x) > r}``.

        At ``r = 1`` the left limit is returned for bounded laws (the
        formal value ``inf(empty) = +inf`` lives on a null set).
        """
        r, idx = self._locate(r)
        d = r - self.r[idx]
        with np.errstate(invalid="ignore"):
            out = np.where(d == 0.0, self.qa[idx], self.qa[idx] + self._slope(idx) * d)
        out = np.where(r == 1.0, self.q_end, out)
        return float(out) if out.ndim == 0 else out

    def quantile_left(self, r):
        """Left limit ``lim_{s -> r-} q(s)`` (equals ``q(0)`` at ``r = 0``)."""
        r = np.asarray(r, dtype=float)
        if np.any(~((r >= 0.0) & (r <= 1.0))):
            raise DomainError("r must lie in [0, 1]")
        idx = np.clip(np.searchsorted(self.r, r, side="left") - 1, 0, self.n_pieces - 1)
        d = r - self.r[idx]
        with np.errstate(invalid="ignore"):
            out = np.where(d == 0.0, self.qa[idx], self.qa[idx] + self._slope(idx) * d)
        return float(out) if out.ndim == 0 else out

    def h(self, r):
        r, idx = self._locate(r)
        d = r - self.r[idx]
        qa = self.qa[idx]
        with np.errstate(invalid="ignore"):
            part = np.where(d == 0.0, 0.0, d * qa + 0.5 * self._slope(idx) * d * d)
        out = self._H[idx] + part
        return float(out) if out.ndim == 0 else out

    def g(self, r):
        out = np.asarray(r, dtype=float) - np.asarray(self.h(r))
        return float(out) if out.ndim == 0 else out

    def cdf(self, x):
        """``F(x) = P(xi <= x)``."""
        return self._measure(x, strict=False)

    def cdf_left(self, x):
        """``P(xi < x)``."""
        return self._measure(x, strict=True)

    def _measure(self, x, strict):
        x = np.asarray(x, dtype=float)
        xs = x.reshape(-1, 1)
        L = np.diff(self.r)
        qa, qb = self.qa, self.qb
        flat = qa == qb
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            frac = np.clip((xs - qa) / np.where(flat, 1.0, qb - qa), 0.0, 1.0)
        if strict:
            const = (xs > qa).astype(float)
        else:
            const = (xs >= qa).astype(float)
        frac = np.where(flat, const, frac)
        out = (frac * L).sum(axis=1)
        out = np.minimum(out, 1.0).reshape(x.shape)
        return float(out) if out.ndim == 0 else out


def quantile(dist: TargetDistribution, r):
    return dist.quantile(r)


def h_value(dist: TargetDistribution, r):
    return dist.h(r)


def g_value(dist: TargetDistribution, r):
    return dist.g(r)


@dataclass(frozen=True)
class BarrierPair:
    alpha: float
    beta: float

    def __post_init__(self):
        a, b = self.alpha, self.beta
        if not (0.0 <= a <= 1.0 <= b):
            raise DomainError(f"barrier pair must satisfy 0 <= alpha <= 1 <= beta, got ({a}, {b})")
        if a == b and a != 1.0:
            raise DomainError("alpha == beta only allowed at 1")

    def to_json(self):
        return [self.alpha, format_value(self.beta)]


@dataclass(frozen=True, eq=False)
class GCalculus:
    """Exact ``g`` data for one target law.

    ``bp`` partitions [0, 1] so every piece is strictly ascending,
    flat (the plateau) or strictly descending; ``G`` holds ``g`` there.
    """

    dist: TargetDistribution
    g_star: float
    argmax_interval: tuple[float, float]
    g_at_one: float
    bp: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    piece_q: np.ndarray = field(repr=False)
    piece_k: np.ndarray = field(repr=False)
    r_one: float = field(repr=False, default=0.0)

    @property
    def r_lo(self) -> float:
        return self.argmax_interval[0]

    @property
    def r_hi(self) -> float:
        return self.argmax_interval[1]

    def g(self, r):
        return self.dist.g(r)

    # ascending branch lives on bp <= r_lo, descending on bp >= r_hi

    def _branch(self, ascending: bool):
        if ascending:
            m = self.bp <= self.r_lo
        else:
            m = self.bp >= self.r_hi
        idx = np.nonzero(m)[0]
        return idx

    def solve_ascending(self, c):
        """Root of ``g = c`` on [0, r_lo]; ``c`` in [0, g_star]."""
        c = np.asarray(c, dtype=float)
        idx = self._branch(True)
        if len(idx) < 2:
            return np.full(c.shape, self.r_lo) if c.ndim else self.r_lo
        bp, G = self.bp[idx], self.G[idx]
        j = np.clip(np.searchsorted(G, c, side="right") - 1, 0, len(idx) - 2)
        pj = idx[j]
        e = np.maximum(c - G[j], 0.0)
        v = 1.0 - self.piece_q[pj]
        k = self.piece_k[pj]
        den = v + np.sqrt(np.maximum(v * v - 2.0 * k * e, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(den > 0, 2.0 * e / den, 0.0)
        theta = np.clip(bp[j] + d, bp[j], bp[j + 1])
        theta = self._polish(theta, c, bp[j], bp[j + 1], increasing=True)
        return float(theta) if theta.ndim == 0 else theta

    def solve_descending(self, c):
        """Root of ``g = c`` on [r_hi, 1]; ``c`` in [g_at_one, g_star]."""
        c = np.asarray(c, dtype=float)
        idx = self._branch(False)
        if len(idx) < 2:
            return np.full(c.shape, self.r_hi) if c.ndim else self.r_hi
        bp, G = self.bp[idx], self.G[idx]
        j = np.clip(np.searchsorted(-G, -c, side="right") - 1, 0, len(idx) - 2)
        pj = idx[j]
        e = np.maximum(G[j] - c, 0.0)
        u = self.piece_q[pj] - 1.0
        k = self.piece_k[pj]
        den = u + np.sqrt(u * u + 2.0 * k * e)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(den > 0, 2.0 * e / den, 0.0)
        theta = np.clip(bp[j] + d, bp[j], bp[j + 1])
        theta = self._polish(theta, c, bp[j], bp[j + 1], increasing=False)
        return float(theta) if theta.ndim == 0 else theta

    def _polish(self, theta, c, lo, hi, increasing):
        # bisection fallback where the closed form lost accuracy
        theta = np.array(theta, dtype=float)
        bad = np.abs(self.dist.g(theta) - c) > ROOT_TOL
        if not np.any(bad):
            return theta
        lo = np.broadcast_to(lo, theta.shape)[bad].copy()
        hi = np.broadcast_to(hi, theta.shape)[bad].copy()
        cb = np.broadcast_to(c, theta.shape)[bad]
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self.dist.g(mid) < cb
            go_right = below if increasing else ~below
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_right, hi, mid)
        theta[bad] = 0.5 * (lo + hi)
        return theta

    def barriers(self, r):
        """Vectorized ``(alpha, beta)`` for uniforms ``r``."""
        r = np.asarray(r, dtype=float)
        d = self.dist
        alpha = np.ones_like(r)
        beta = np.ones_like(r)
        plateau = (r >= self.r_lo) & (r <= self.r_hi)
        single = r < self.r_one
        asc2 = (r >= self.r_one) & (r < self.r_lo)
        desc = r > self.r_hi

        if np.any(single):
            alpha[single] = d.quantile(r[single])
            beta[single] = math.inf
        if np.any(asc2):
            ra = r[asc2]
            c = np.clip(d.g(ra), self.g_at_one, self.g_star)
            t2 = np.atleast_1d(self.solve_descending(c))
            alpha[asc2] = d.quantile(ra)
            beta[asc2] = self._upper(t2)
        if np.any(desc):
            rd = r[desc]
            c = np.clip(d.g(rd), self.g_at_one, self.g_star)
            t1 = np.atleast_1d(self.solve_ascending(c))
            alpha[desc] = self._lower(t1)
            beta[desc] = d.quantile(rd)
        alpha[plateau] = 1.0
        beta[plateau] = 1.0
        return alpha, beta

    def _lower(self, theta):
        # theta == r_lo only through rounding; take the left limit there
        q = self.dist.quantile(theta)
        at_edge = theta >= self.r_lo
        if np.any(at_edge):
            q = np.where(at_edge, min(self.dist.quantile_left(self.r_lo), 1.0), q)
        return q

    def _upper(self, theta):
        q = self.dist.quantile(theta)
        at_edge = theta <= self.r_hi
        if np.any(at_edge):
            q = np.where(at_edge, max(self.dist.quantile(self.r_hi), 1.0), q)
        return q


def build_g_calculus(dist: TargetDistribution) -> GCalculus:
    if dist.mean > 1.0 + MEAN_TOL:
        raise UnsupportedTargetError(
            f"target mean {dist.mean:.12g} exceeds 1; only laws with mean <= 1 embed in the GBM"
        )
    g_at_one = max(0.0, 1.0 - dist.mean)
    r_lo = min(float(dist.cdf_left(1.0)), 1.0)
    r_hi = max(min(float(dist.cdf(1.0)), 1.0), r_lo)
    bp = np.unique(np.concatenate([dist.r, [r_lo, r_hi]]))
    G = np.asarray(dist.g(bp), dtype=float)
    g_star = max(float(dist.g(r_lo)), g_at_one)
    # pin the exact plateau / endpoint values so branch searches are consistent
    G[(bp >= r_lo) & (bp <= r_hi)] = g_star
    G[-1] = g_at_one if r_hi < 1.0 else g_star
    G[0] = 0.0
    G = np.clip(G, 0.0, g_star)
    piece_q = np.asarray(dist.quantile(bp[:-1]), dtype=float)
    seg = np.clip(np.searchsorted(dist.r, bp[:-1], side="right") - 1, 0, dist.n_pieces - 1)
    piece_k = np.asarray(dist._slope(seg), dtype=float)
    for a in (bp, G, piece_q, piece_k):
        a.setflags(write=False)
    calc = GCalculus(dist, g_star, (r_lo, r_hi), g_at_one, bp, G, piece_q, piece_k, r_lo)
    if g_at_one < g_star:
        r_one = float(calc.solve_ascending(g_at_one))
        object.__setattr__(calc, "r_one", r_one)
    return calc


def solve_g(calc: GCalculus, c: float) -> tuple[float, ...]:
    """All roots of ``g(theta) = c`` as used by the barrier construction."""
    if not (0.0 <= c <= calc.g_star):
        raise DomainError(f"c={c} outside [0, g_star={calc.g_star}]")
    if c == calc.g_star:
        return calc.argmax_interval
    t1 = float(calc.solve_ascending(c))
    if c < calc.g_at_one:
        return (t1,)
    return (t1, float(calc.solve_descending(c)))


def barrier_pair(calc: GCalculus, r: float) -> BarrierPair:
    if not (0.0 <= r <= 1.0):
        raise DomainError("r must lie in [0, 1]")
    a, b = calc.barriers(np.array([r]))
    return BarrierPair(float(a[0]), float(b[0]))
