"""One-dimensional diffusions ``dX = mu(X) dt + sigma(X) dW`` on ``(l, r)``.

Scale function ``s(x) = int_c^x exp(-int_c^y 2 mu / sigma^2) dy`` by nested
Gauss-Legendre quadrature, boundary classification from the tail engine and
the Kotani martingale test for driftless ``dY = kappa(Y) dW``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from ..errors import DomainError, QuadratureError, SpecError
from .asymptotics import (
    Inconclusive,
    Tail,
    TailVerdict,
    expand,
    integral_diverges,
    probe_divergence,
    scale_tail_finite,
)
from .expr import Call, Const, Expr, Var, as_expr

__all__ = [
    "DiffusionSpec",
    "ScaleFunctionTable",
    "scale_function",
    "tabulate_scale",
    "BoundaryClassification",
    "classify_boundaries",
    "KotaniResult",
    "kotani_test",
    "TRANSIENT_CONCLUSION",
]

TRANSIENT_CONCLUSION = "every stopping time tau with tau <= zeta a.s. is minimal for X"


def validation_grid(l: float, r: float, c: float, n: int = 2001) -> np.ndarray:
    """Interior points of ``(l, r)`` clustering towards both ends."""
    u = np.linspace(0.0, 1.0, n + 2)[1:-1]
    if math.isfinite(l) and math.isfinite(r):
        return l + (r - l) * u
    if math.isfinite(l):
        span = max(c - l, 1.0)
        return l + span * u / (1.0 - u)
    if math.isfinite(r):
        span = max(r - c, 1.0)
        return r - span * (1.0 - u) / u
    span = max(abs(c), 1.0)
    return c + span * np.tan(np.pi * (u - 0.5))


HUGE = 1e200


def _field_expr(value, field: str) -> Expr:
    try:
        return as_expr(value)
    except SpecError as exc:
        raise SpecError(str(exc), field=exc.field or field) from None


def _outward(a: np.ndarray, x: np.ndarray, c: float, fn) -> np.ndarray:
    """Running ``fn`` of ``a`` walking away from ``c``, excluding the point itself.

    ``x`` must be ascending.
    """
    out = np.full(a.shape, np.nan)
    for idx in (np.nonzero(x > c)[0], np.nonzero(x <= c)[0][::-1]):
        if len(idx) > 1:
            out[idx[1:]] = fn.accumulate(a[idx])[:-1]
    return out


def _first_bad(x: np.ndarray, v: np.ndarray, c: float):
    """First point where ``v`` is unusable as a nonvanishing coefficient.

    Infinities and zeros are accepted only as floating-point saturation,
    i.e. after values beyond ``HUGE`` (or below ``1/HUGE``) on the way out
    from ``c``. A sign change anywhere implies a zero in between.
    """
    with np.errstate(invalid="ignore"):
        finite = np.where(np.isfinite(v), np.abs(v), np.nan)
        biggest = _outward(np.where(np.isnan(finite), 0.0, finite), x, c, np.maximum)
        smallest = _outward(np.where(np.isnan(finite) | (finite == 0), np.inf, finite), x, c, np.minimum)
        overflow = np.isinf(v) & (biggest > HUGE)
        underflow = (v == 0) & (smallest < 1.0 / HUGE)
    bad = np.isnan(v) | (np.isinf(v) & ~overflow) | ((v == 0) & ~underflow)
    if bad.any():
        return float(x[np.argmax(bad)])
    sgn = np.sign(v[v != 0])
    if sgn.size and np.any(sgn != sgn[0]):
        flip = np.nonzero((np.sign(v) != sgn[0]) & (v != 0))[0][0]
        return float(x[flip])
    return None


@dataclass(frozen=True)
class DiffusionSpec:
    mu: Expr
    sigma: Expr
    l: float = -math.inf
    r: float = math.inf
    c: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mu", _field_expr(self.mu, "mu"))
        object.__setattr__(self, "sigma", _field_expr(self.sigma, "sigma"))
        l, r, c = float(self.l), float(self.r), float(self.c)
        if not l < r:
            raise SpecError("domain needs l < r", field="l")
        if not l < c < r:
            raise SpecError("reference point c must lie inside (l, r)", field="c")
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "c", c)
        x = validation_grid(l, r, c)
        sig = self.sigma(x)
        bad = _first_bad(x, sig, c)
        if bad is not None:
            raise SpecError(f"sigma must be finite and nonzero on (l, r); fails near x={bad:.6g}", field="sigma")
        mu = self.mu(x)
        # a nan ratio from inf/inf or 0/0 is saturation; only a finite-coefficient blow-up counts
        with np.errstate(all="ignore"):
            sig2 = sig * sig
            blown = np.isfinite(mu) & np.isfinite(sig2) & (sig2 > 1.0 / HUGE) & ~np.isfinite(mu / sig2)
        if np.any(np.isnan(mu) & ~np.isinf(sig)) or blown.any():
            bad = x[np.argmax(blown | (np.isnan(mu) & ~np.isinf(sig)))]
            raise SpecError(f"mu/sigma^2 not locally integrable near x={bad:.6g}", field="mu")

    @property
    def drift_ratio(self) -> Expr:
        """``2 mu / sigma^2``, the integrand of the inner scale integral."""
        return Const(2.0) * self.mu / self.sigma ** Const(2.0)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.l) & (x < self.r)

    @classmethod
    def from_json(cls, obj: dict) -> "DiffusionSpec":
        def num(key, default):
            v = obj.get(key, default)
            if isinstance(v, str):
                v = {"inf": math.inf, "-inf": -math.inf}.get(v.strip(), v)
            try:
                return float(v)
            except (TypeError, ValueError):
                raise SpecError(f"{key} must be a number", field=key) from None

        for key in ("mu", "sigma"):
            if key not in obj:
                raise SpecError(f"missing coefficient {key}", field=key)
        try:
            mu, sigma = _field_expr(obj["mu"], "mu"), _field_expr(obj["sigma"], "sigma")
        except SpecError as exc:
            raise SpecError(str(exc), field="mu" if "mu" in str(exc) else "sigma") from None
        return cls(mu, sigma, num("l", -math.inf), num("r", math.inf), num("c", 0.0))

    def to_json(self) -> dict:
        def enc(v):
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")

        return {"mu": str(self.mu), "sigma": str(self.sigma), "l": enc(self.l), "r": enc(self.r), "c": self.c}


# Gauss-Legendre rules on [0, 1]
def _gl(n: int):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


_LO, _HI = 10, 20
_GL_LO, _GL_HI = _gl(_LO), _gl(_HI)


def _panel(m: Expr, base, other, t0, t1, rule):
    """Per-panel pieces on ``y = base + (other - base) t``, ``t in [t0, t1]``.

    Returns ``(int_{t0}^{t1} m dt', int_{t0}^{t1} exp(-int_{t0}^t m) dt)``
    in units of the unit-interval parameter (multiply by ``other - base``).
    """
    nodes, weights = rule
    h = (t1 - t0)[:, None]
    span = (other - base)[:, None]
    tk = t0[:, None] + h * nodes[None, :]
    # inner integrals from t0 to each outer node
    inner_t = t0[:, None, None] + (tk - t0[:, None])[:, :, None] * nodes[None, None, :]
    inner_y = base[:, None, None] + span[:, :, None] * inner_t
    mv = m(inner_y)
    inner = span * (tk - t0[:, None]) * (mv * weights[None, None, :]).sum(axis=2)
    outer = h[:, 0] * (np.exp(-inner) * weights[None, :]).sum(axis=1)
    whole_y = base[:, None] + span * tk
    dm = span[:, 0] * h[:, 0] * (m(whole_y) * weights[None, :]).sum(axis=1)
    return dm, outer


def _segment_integrals(m: Expr, base, other, rtol, atol, max_depth=40):
    """Adaptive ``(int_base^other m, int_base^other exp(-int_base^y m) dy)``.

    Vectorized over segments; each segment is split into panels that are
    bisected until the 10- and 20-point rules agree.
    """
    base = np.asarray(base, float)
    other = np.asarray(other, float)
    nseg = len(base)
    # panel list: (segment id, t0, t1)
    seg = np.arange(nseg)
    t0 = np.zeros(nseg)
    t1 = np.ones(nseg)
    done_seg, done_t0, done_dm, done_F = [], [], [], []
    for depth in range(max_depth + 1):
        if len(seg) == 0:
            break
        args = (base[seg], other[seg], t0, t1)
        dm_lo, f_lo = _panel(m, *args, _GL_LO)
        dm_hi, f_hi = _panel(m, *args, _GL_HI)
        scale_f = np.abs(f_hi) + 1e-300
        ok = (np.abs(f_hi - f_lo) <= rtol * scale_f + atol) & (
            np.abs(dm_hi - dm_lo) <= rtol * np.abs(dm_hi) + atol * np.maximum(1.0, np.abs(other[seg] - base[seg]))
        )
        ok &= np.isfinite(f_hi) & np.isfinite(dm_hi)
        if depth == max_depth and not ok.all():
            i = int(np.argmin(ok))
            y0 = base[seg[i]] + (other[seg[i]] - base[seg[i]]) * t0[i]
            y1 = base[seg[i]] + (other[seg[i]] - base[seg[i]]) * t1[i]
            raise QuadratureError(
                "scale-function quadrature did not converge",
                {"interval": (float(y0), float(y1)), "estimate": float(f_hi[i]), "error": float(abs(f_hi[i] - f_lo[i]))},
            )
        done_seg.append(seg[ok])
        done_t0.append(t0[ok])
        done_dm.append(dm_hi[ok])
        done_F.append(f_hi[ok])
        bad = ~ok
        mid = 0.5 * (t0[bad] + t1[bad])
        seg = np.concatenate([seg[bad], seg[bad]])
        t0, t1 = np.concatenate([t0[bad], mid]), np.concatenate([mid, t1[bad]])
    seg_all = np.concatenate(done_seg)
    t0_all = np.concatenate(done_t0)
    dm_all = np.concatenate(done_dm)
    f_all = np.concatenate(done_F)
    # chain panels in order inside each segment: F = sum exp(-M_before) f_panel
    order = np.lexsort((t0_all, seg_all))
    seg_all, dm_all, f_all = seg_all[order], dm_all[order], f_all[order]
    M = np.zeros(nseg)
    F = np.zeros(nseg)
    span = other - base
    for s_id, dm, f in zip(seg_all, dm_all, f_all):
        F[s_id] += math.exp(-M[s_id]) * f
        M[s_id] += dm
    return M, F * span


@dataclass(frozen=True, eq=False)
class ScaleFunctionTable:
    """``s`` and ``s'`` tabulated on an increasing grid inside ``(l, r)``."""

    grid: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    c: float
    s_at_r_finite: bool | None = None
    s_at_l_finite: bool | None = None
    _spline: object = field(default=None, repr=False)

    def __post_init__(self):
        if np.any(np.diff(self.values) <= 0):
            raise QuadratureError("tabulated scale function is not strictly increasing", {})
        object.__setattr__(self, "_spline", CubicHermiteSpline(self.grid, self.values, self.derivative))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < self.grid[0]) | (x > self.grid[-1])):
            raise DomainError("point outside the tabulated range")
        return self._spline(x)

    def derivative_at_c(self, h: float = 1e-4) -> float:
        return float((self(self.c + h) - self(self.c - h)) / (2 * h))

    def rows(self):
        return zip(self.grid.tolist(), self.values.tolist())


def _tabulate(spec: DiffusionSpec, x: np.ndarray, rtol: float, atol: float):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError("grid must be one-dimensional")
    if not spec.contains(x).all():
        raise DomainError(f"grid must lie inside ({spec.l}, {spec.r})")
    pts = np.unique(np.concatenate([x, [spec.c]]))
    ic = int(np.searchsorted(pts, spec.c))
    m = spec.drift_ratio
    # segments oriented away from c so the base point is the one closer to c
    right_base, right_other = pts[ic:-1], pts[ic + 1 :]
    left_base, left_other = pts[1 : ic + 1][::-1], pts[:ic][::-1]
    base = np.concatenate([right_base, left_base])
    other = np.concatenate([right_other, left_other])
    M, F = _segment_integrals(m, base, other, rtol, atol) if len(base) else (np.zeros(0), np.zeros(0))
    nr = len(right_base)
    I = np.zeros(len(pts))
    S = np.zeros(len(pts))
    # cumulate outward from c: I(other) = I(base) + M, s(other) = s(base) + exp(-I(base)) F
    I_r = np.concatenate([[0.0], np.cumsum(M[:nr])])
    S_r = np.concatenate([[0.0], np.cumsum(np.exp(-I_r[:-1]) * F[:nr])])
    I_l = np.concatenate([[0.0], np.cumsum(M[nr:])])
    S_l = np.concatenate([[0.0], np.cumsum(np.exp(-I_l[:-1]) * F[nr:])])
    I[ic:] = I_r
    S[ic:] = S_r
    I[: ic + 1] = I_l[::-1]
    S[: ic + 1] = S_l[::-1]
    S[ic] = 0.0
    return pts, S, np.exp(-I)


def scale_function(spec: DiffusionSpec, x, rtol: float = 1e-8, atol: float = 1e-13):
    """Evaluate ``s`` at ``x`` (scalar or array)."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    pts, S, _ = _tabulate(spec, arr, rtol, atol)
    out = S[np.searchsorted(pts, arr)]
    return float(out[0]) if np.ndim(x) == 0 else out


def tabulate_scale(
    spec: DiffusionSpec, grid, rtol: float = 1e-8, atol: float = 1e-13, classify: bool = True
) -> ScaleFunctionTable:
    pts, S, D = _tabulate(spec, grid, rtol, atol)
    flags = classify_boundaries(spec) if classify else None
    return ScaleFunctionTable(
        pts,
        S,
        D,
        spec.c,
        s_at_r_finite=flags.right.value if flags else None,
        s_at_l_finite=flags.left.value if flags else None,
    )


def _numeric_scale_tail(spec: DiffusionSpec, tail: Tail) -> bool:
    m = spec.drift_ratio
    w = np.logspace(0.0, 8.0, 33)

    def mt(v):
        return float(m(tail.x_of(v)) * tail.dx_of(v))

    J = np.zeros(len(w))
    for i in range(1, len(w)):
        val, _ = integrate.quad(mt, w[i - 1], w[i], limit=200)
        J[i] = J[i - 1] + val

    def log_f(_w):
        return -J[4:] + np.log(np.abs(tail.dx_of(w[4:])))

    return probe_divergence(log_f, w[4:]) is False


def _boundary_verdict(spec: DiffusionSpec, tail: Tail) -> TailVerdict:
    try:
        return TailVerdict(scale_tail_finite(spec.drift_ratio, tail), "symbolic")
    except Inconclusive as exc:
        reason = str(exc)
    try:
        return TailVerdict(_numeric_scale_tail(spec, tail), "numeric", f"symbolic: {reason}")
    except (Inconclusive, ValueError, ArithmeticError) as exc:
        return TailVerdict(None, "none", f"symbolic: {reason}; numeric: {exc}")


@dataclass(frozen=True)
class BoundaryClassification:
    left: TailVerdict  # is s(l) finite?
    right: TailVerdict  # is s(r) finite?
    case: str  # transient, recurrent, inconclusive
    conclusion: str | None = None

    def to_json(self) -> dict:
        return {
            "s_at_l_finite": self.left.to_json(),
            "s_at_r_finite": self.right.to_json(),
            "case": self.case,
            "conclusion": self.conclusion,
        }


def classify_boundaries(spec: DiffusionSpec) -> BoundaryClassification:
    left = _boundary_verdict(spec, Tail.towards(spec.l, "left"))
    right = _boundary_verdict(spec, Tail.towards(spec.r, "right"))
    if left.value is True or right.value is True:
        return BoundaryClassification(left, right, "transient", TRANSIENT_CONCLUSION)
    if left.value is False and right.value is False:
        return BoundaryClassification(left, right, "recurrent")
    return BoundaryClassification(left, right, "inconclusive")


@dataclass(frozen=True)
class KotaniResult:
    verdict: str  # martingale, strict_local_martingale, inconclusive
    right: TailVerdict  # does int^inf x / kappa^2 diverge?
    left: TailVerdict

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "right_diverges": self.right.to_json(), "left_diverges": self.left.to_json()}


def _kotani_tail(kappa: Expr, tail: Tail) -> TailVerdict:
    integrand = Call("abs", Var()) / kappa ** Const(2.0)
    try:
        # both tails use x = +-w, so |dx/dw| = 1
        return TailVerdict(integral_diverges(expand(integrand, tail)), "symbolic")
    except Inconclusive as exc:
        reason = str(exc)

    def log_f(w):
        x = tail.x_of(w)
        with np.errstate(all="ignore"):
            return np.log(np.abs(x)) - 2.0 * np.log(np.abs(kappa(x)))

    try:
        return TailVerdict(probe_divergence(log_f), "numeric", f"symbolic: {reason}")
    except Inconclusive as exc:
        return TailVerdict(None, "none", f"symbolic: {reason}; numeric: {exc}")


def kotani_test(kappa, c: float = 0.0) -> KotaniResult:
    """Is the driftless ``dY = kappa(Y) dW`` a true martingale?

    Both tail integrals of ``|x| / kappa(x)^2`` must diverge. The reference
    point ``c`` does not affect the verdict; it only anchors validation.
    """
    kappa = _field_expr(kappa, "kappa")
    x = validation_grid(-math.inf, math.inf, c)
    bad = _first_bad(x, kappa(x), c)
    if bad is not None:
        raise DomainError(f"kappa must be finite and nonzero on the real line; fails near x={bad:.6g}")
    right = _kotani_tail(kappa, Tail("+inf"))
    left = _kotani_tail(kappa, Tail("-inf"))
    if right.value is False or left.value is False:
        verdict = "strict_local_martingale"
    elif right.value and left.value:
        verdict = "martingale"
    else:
        verdict = "inconclusive"
    return KotaniResult(verdict, right, left)
