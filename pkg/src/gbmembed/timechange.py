"""Quadratic-variation clock of the GBM and the Brownian motion it hides.

For ``Z_t = exp(W_t - t/2)`` and a constant ``c > 0`` the clock
``A_t = c^2 int_0^t Z_r^2 dr`` turns ``c (Z - 1)`` into a Brownian motion
``W`` run up to ``A_inf`` with ``c + W_{A_t} = c Z_t``. A stopping time
``sigma`` of the GBM becomes ``T = A_sigma`` for ``W`` and never exceeds the
first time ``W`` reaches ``-c``, which is ``A_inf``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .chain_embedding import ChainNode, ChainSpec, _Censored, _pathwise_replica, _Plan
from .errors import CensoringError, DomainError
from .gbm_paths import PathConfig, SamplePath, exit_from
from .rng import STREAM_CHAIN, STREAM_TAIL, block_uniforms, block_width, chunk_bounds, map_chunks, path_generator

__all__ = [
    "ClockPath",
    "qv_clock",
    "invert_clock",
    "absorbed_bm",
    "DDSPath",
    "dds_construct",
    "exact_sum_is_zero",
    "shift_chain",
    "TimeChangeConfig",
    "BoundSamples",
    "embed_and_bound",
    "discrete_ks",
    "x_marginals",
]


@dataclass(frozen=True, eq=False)
class ClockPath:
    path: SamplePath
    a_infinity_estimate: float
    scale_c: float = 1.0
    # c^2 Z^2 at the last positive grid value; diagnostic only
    tail_uncertainty: float = 0.0

    def __post_init__(self):
        if self.path.kind != "clock":
            raise DomainError("clock path must have kind 'clock'")
        if self.path.values[0] != 0.0:
            raise DomainError("clock must start at 0")

    @property
    def grid(self) -> np.ndarray:
        return self.path.grid

    @property
    def values(self) -> np.ndarray:
        return self.path.values


def qv_clock(z: SamplePath, c: float = 1.0) -> ClockPath:
    """Left-endpoint Riemann sums of ``c^2 Z^2``.

    The sum runs in extended precision; ``c^2`` is applied last, so the
    clocks for different ``c`` are exact rescalings of one another whenever
    ``c^2`` is exact.
    """
    if not c > 0:
        raise DomainError("c must be positive")
    zz = z.values[:-1].astype(np.longdouble)
    inc = zz * zz * np.diff(z.grid).astype(np.longdouble)
    base = np.concatenate([[0.0], np.cumsum(inc).astype(float)])
    a = (c * c) * base if c != 1.0 else base
    positive = z.values[z.values > 0]
    tail = (c * positive[-1]) ** 2 if len(positive) else 0.0
    return ClockPath(SamplePath(z.grid, a, "clock"), float(a[-1]), float(c), float(tail))


def invert_clock(a: ClockPath, u: float) -> float:
    """First grid time with ``A > u``; ``inf`` once ``u >= A_final``."""
    if u < 0:
        raise DomainError("u must be nonnegative")
    i = int(np.searchsorted(a.values, u, side="right"))
    return math.inf if i >= len(a.values) else float(a.grid[i])


def _invert_index(a: ClockPath, u) -> np.ndarray:
    return np.searchsorted(a.values, np.asarray(u, dtype=float), side="right")


def absorbed_bm(z: SamplePath, u_grid, c: float = 1.0) -> SamplePath:
    """``B0_u = c Z_{tau_u}``, frozen at the final value once ``tau_u = inf``.

    The clock is built with the same ``c``; ``B0_0 = c Z_0``.
    """
    u = np.asarray(u_grid, dtype=float)
    clk = qv_clock(z, c)
    idx = np.minimum(_invert_index(clk, u), len(z.values) - 1)
    vals = c * z.values[idx]
    if len(u) and u[0] == 0.0:
        vals[0] = c * z.values[0]
    return SamplePath(u, vals, "bm")


# -- exact residual bookkeeping ------------------------------------------------

_SPLIT = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a):
    t = _SPLIT * a
    hi = t - (t - a)
    return hi, a - hi


def _two_product(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def exact_sum_is_zero(terms: np.ndarray, max_passes: int = 64) -> np.ndarray:
    """Column-wise test that the exact real sum of float terms is 0.

    Repeated error-free two-sums (``terms`` has shape ``(m, N)``) distil each
    column into a nonoverlapping expansion, which sums to zero only if every
    component is zero.
    """
    t = np.array(terms, dtype=float, copy=True)
    if not np.all(np.isfinite(t)):
        raise DomainError("terms must be finite")
    for _ in range(max_passes):
        before = t.copy()
        for i in range(1, t.shape[0]):
            t[i], t[i - 1] = _two_sum(t[i], t[i - 1])
        if np.array_equal(before, t):
            return np.all(t == 0.0, axis=0)
    raise ArithmeticError("distillation did not reach a fixed point")


@dataclass(frozen=True, eq=False)
class DDSPath:
    """``W`` at clock times ``u`` stored as the exact expansion ``parts.sum(0)``."""

    u: np.ndarray
    parts: np.ndarray
    scale_c: float
    absorbed: bool = False

    @property
    def w(self) -> np.ndarray:
        return self.parts[0] + (self.parts[1] + self.parts[2])

    def as_sample_path(self) -> SamplePath:
        # repeated clock values (Z = 0 segments) collapse to their first point
        keep = np.concatenate([[True], np.diff(self.u) > 0])
        return SamplePath(self.u[keep], self.w[keep], "bm")


@dataclass(frozen=True)
class ResidualCheck:
    exact_zero: bool
    n_points: int
    max_abs_float: float


def _w_parts(zv: np.ndarray, c: float) -> np.ndarray:
    p_hi, p_lo = _two_product(np.full_like(zv, c), zv)
    s, e = _two_sum(p_hi, np.full_like(zv, -c))
    return np.vstack([s, e, p_lo])


def dds_residual(w: DDSPath, z: SamplePath) -> ResidualCheck:
    """Recompute ``c + W_{A_t} - c Z_t`` exactly at every grid point."""
    c = w.scale_c
    p_hi, p_lo = _two_product(np.full_like(z.values, c), z.values)
    terms = np.vstack([np.full_like(z.values, c), w.parts, -p_hi, -p_lo])
    zero = exact_sum_is_zero(terms)
    approx = np.abs(c + w.w - c * z.values)
    return ResidualCheck(bool(zero.all()), len(z.values), float(approx.max()) if len(approx) else 0.0)


def dds_construct(z: SamplePath, c: float = 1.0) -> tuple[DDSPath, ResidualCheck]:
    """``W`` at clock times ``u_i = A_{t_i}`` with ``W_{u_i} = c (Z_{t_i} - 1)``."""
    clk = qv_clock(z, c)
    w = DDSPath(clk.values.copy(), _w_parts(z.values, c), float(c), z.absorbed)
    return w, dds_residual(w, z)


# -- chain embedding under the clock -----------------------------------------

def shift_chain(root, c: float) -> ChainSpec:
    """Map a chain of ``X`` values bounded below by ``-c`` to ``X / c + 1``.

    ``root`` is a list of ``(prob, ChainNode)`` holding raw ``X`` values.
    """
    if not c > 0:
        raise DomainError("c must be positive")

    def conv(node: ChainNode) -> ChainNode:
        if node.value < -c:
            raise DomainError(f"chain value {node.value} is below -c = {-c}")
        # exact at the lower bound so absorption is recognized
        v = 0.0 if node.value == -c else node.value / c + 1.0
        return ChainNode(v, tuple((p, conv(ch)) for p, ch in node.children))

    return ChainSpec([(p, conv(n)) for p, n in root])


@dataclass(frozen=True)
class TimeChangeConfig:
    c: float = 1.0
    delta: float = 1e-3
    horizon: float = 1e4
    absorb_level: float = 1e-8
    tail_delta: float | None = None

    def __post_init__(self):
        if not self.c > 0:
            raise DomainError("c must be positive")

    @property
    def path_cfg(self) -> PathConfig:
        return PathConfig(delta=self.delta, horizon=self.horizon, absorb_level=self.absorb_level)

    @property
    def tail_cfg(self) -> PathConfig:
        td = self.tail_delta if self.tail_delta is not None else 10.0 * self.delta
        return PathConfig(delta=td, horizon=self.horizon, absorb_level=self.absorb_level)


def _replica_path(plan: _Plan, seed: int, i: int, r_row, tc: TimeChangeConfig):
    """Full GBM path of one replica: chain segments, then the tail to absorption.

    Returns ``(path, sigma_idx, y, tau)``; ``sigma_idx[k]`` is the grid index
    of ``tau_k`` (the absorption index when ``tau_k = inf``).
    """
    _, y, tau, segs = _pathwise_replica(plan, seed, i, r_row, tc.path_cfg, record=True)
    K = len(y) - 1
    logs = [np.zeros(1)]
    base = 0.0
    sigma = np.empty(K + 1, dtype=np.int64)
    snaps = []
    pos = 0
    for k, seg in enumerate(segs):
        if len(seg) > 1:
            logs.append(base + seg[1:])
            pos += len(seg) - 1
        sigma[k] = pos
        snaps.append((pos, y[k]))
        if y[k] == 0.0:
            sigma[k + 1:] = pos
            for kk in range(k + 1, K + 1):
                snaps.append((pos, 0.0))
            break
        base = math.log(y[k])
    n_main = pos
    if y[-1] > 0.0:
        gen = path_generator(seed, i, STREAM_TAIL)
        res = exit_from(gen, math.log(y[-1]), -math.inf, math.inf, tc.tail_cfg, record=True)
        if res.event.side == "censored":
            raise _Censored(i, K + 1)
        logs.append(res.log_path[1:])
    lz = np.concatenate(logs)
    z = np.exp(lz)
    for p, v in snaps:
        z[p] = v
    grid = np.empty(len(z))
    grid[: n_main + 1] = tc.delta * np.arange(n_main + 1)
    n_tail = len(z) - n_main - 1
    grid[n_main + 1:] = grid[n_main] + tc.tail_cfg.delta * np.arange(1, n_tail + 1)
    absorbed = z[-1] == 0.0
    return SamplePath(grid, z, "gbm", absorbed=absorbed), sigma, y, tau


@dataclass(frozen=True, eq=False)
class BoundSamples:
    T: np.ndarray  # (n, K+1) clock at sigma_k
    H: np.ndarray  # (n,) clock at absorption = first time W reaches -c
    w_at_T: np.ndarray  # (n, K+1)
    y: np.ndarray
    tau: np.ndarray
    bound_ok: np.ndarray  # (n, K+1)
    residual_exact: np.ndarray  # (n,)
    max_float_residual: np.ndarray
    tail_uncertainty: np.ndarray
    config: dict = field(default_factory=dict)
    paths: list = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.H)

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(~self.bound_ok))

    def marginal_ks(self, x_laws: list[tuple[np.ndarray, np.ndarray]]) -> list[float]:
        """KS of ``W_{T_k}`` against discrete laws ``(values, probs)`` for each ``k``."""
        return [discrete_ks(self.w_at_T[:, k], v, p) for k, (v, p) in enumerate(x_laws)]

    def report(self, x_laws=None, per_replica: bool = True) -> dict:
        out = {
            "config": self.config,
            "n": len(self),
            "violations": self.violations,
            "residual_exact_all": bool(self.residual_exact.all()),
            "max_float_residual": float(self.max_float_residual.max()),
            "max_tail_uncertainty": float(self.tail_uncertainty.max()),
        }
        if x_laws is not None:
            out["ks"] = self.marginal_ks(x_laws)
        if per_replica:
            out["bound_ok"] = [[bool(b) for b in row] for row in self.bound_ok]
        return out

    def to_json(self, x_laws=None) -> str:
        return json.dumps(self.report(x_laws), indent=2, sort_keys=True)


def discrete_ks(sample: np.ndarray, values, probs) -> float:
    """Sup-distance between the empirical CDF of ``sample`` and a finite law."""
    sample = np.sort(np.asarray(sample, dtype=float))
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    order = np.argsort(values)
    values, cum = values[order], np.cumsum(probs[order])
    pts = np.unique(np.concatenate([sample, values]))
    n = len(sample)
    emp_r = np.searchsorted(sample, pts, side="right") / n
    emp_l = np.searchsorted(sample, pts, side="left") / n
    ir = np.searchsorted(values, pts, side="right")
    il = np.searchsorted(values, pts, side="left")
    cum0 = np.concatenate([[0.0], cum])
    return float(max(np.abs(emp_r - cum0[ir]).max(), np.abs(emp_l - cum0[il]).max()))


def _bound_chunk(start, stop, seed, plan, tc: TimeChangeConfig, keep):
    K = plan.spec.depth
    u = block_uniforms(seed, start, stop, block_width(2 * (K + 1)), STREAM_CHAIN)
    m = stop - start
    T = np.empty((m, K + 1))
    wT = np.empty((m, K + 1))
    ys = np.empty((m, K + 1))
    taus = np.empty((m, K + 1))
    H = np.empty(m)
    exact = np.empty(m, dtype=bool)
    maxres = np.empty(m)
    tailu = np.empty(m)
    paths = []
    for r in range(m):
        z, sigma, y, tau = _replica_path(plan, seed, start + r, u[r], tc)
        w, chk = dds_construct(z, tc.c)
        clk = w.u
        T[r] = clk[sigma]
        wv = w.w
        # W first reaches -c where Z was snapped to 0, i.e. at absorption
        hit = np.nonzero(wv <= -tc.c)[0]
        H[r] = clk[hit[0]] if len(hit) else math.inf
        wT[r] = wv[sigma]
        ys[r], taus[r] = y, tau
        exact[r], maxres[r] = chk.exact_zero, chk.max_abs_float
        pos = z.values[z.values > 0]
        tailu[r] = (tc.c * pos[-1]) ** 2 if len(pos) else 0.0
        if start + r < keep:
            paths.append((z, w))
    return T, H, wT, ys, taus, exact, maxres, tailu, paths


def embed_and_bound(
    root,
    seed: int,
    n: int,
    tc: TimeChangeConfig = TimeChangeConfig(),
    *,
    workers: int = 1,
    keep_paths: int = 0,
    chunk: int = 256,
) -> BoundSamples:
    """Embed an ``X`` chain bounded below by ``-c`` and time-change it into ``W``.

    ``root`` holds raw ``X`` values (``[(prob, ChainNode), ...]``). Each
    replica yields ``T_k = A_{sigma_k}``, ``H = `` first clock time with
    ``W <= -c`` and the flags ``T_k <= H``.
    """
    spec = shift_chain(root, tc.c)
    if spec.root_mean > 1.0 + 1e-9:
        raise DomainError("X chain must have mean <= 0")
    plan = _Plan(spec)
    try:
        parts = map_chunks(_bound_chunk, chunk_bounds(n, chunk), workers, (seed, plan, tc, keep_paths))
    except _Censored as exc:
        raise CensoringError(str(exc)) from None
    cols = list(zip(*parts))
    T, H, wT, ys, taus, exact, maxres, tailu = (np.concatenate(c) for c in cols[:8])
    paths = [p for chunk_paths in cols[8] for p in chunk_paths]
    ok = T <= H[:, None]
    cfg = {"seed": seed, "n": n, "c": tc.c, "delta": tc.delta, "tail_delta": tc.tail_cfg.delta,
           "horizon": tc.horizon, "absorb_level": tc.absorb_level}
    return BoundSamples(T, H, wT, ys, taus, ok, exact, maxres, tailu, cfg, paths)


def x_marginals(root, depth: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Laws of ``X_0 .. X_depth`` for a raw chain, as ``(values, probs)``."""
    laws = []
    level = [(p, n) for p, n in root]
    for _ in range(depth + 1):
        acc: dict[float, float] = {}
        for p, nd in level:
            acc[nd.value] = acc.get(nd.value, 0.0) + p
        vals = np.array(sorted(acc))
        laws.append((vals, np.array([acc[v] for v in vals])))
        level = [(p * q, ch) for p, nd in level for q, ch in nd.children]
    return laws
