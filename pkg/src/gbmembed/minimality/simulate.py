"""Stopped-path simulation for the minimality diagnostics.

Processes: Brownian motion with constant drift and volatility (exact
increments), general one-dimensional diffusions (Euler scheme, absorbed at
finite boundaries) and d-dimensional Brownian motion. Stopping rules are
evaluated on the whole simulated grid; one-dimensional barrier rules add a
Brownian-bridge crossing test between grid points.

Replica ``i`` always consumes row ``i`` of a fixed-width block of
uniforms, so samples are identical for any chunking or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from ..errors import DescriptorError, DomainError, SpecError
from ..rng import STREAM_DIFFUSION, block_uniforms, block_width, chunk_bounds, map_chunks
from .diffusion import DiffusionSpec, tabulate_scale
from .expr import Const
from .transforms import GTransform

__all__ = [
    "DriftedBM",
    "Diffusion",
    "BrownianMotionD",
    "Deterministic",
    "FirstExit",
    "FirstHit",
    "DoobInflated",
    "RadialExit",
    "Earliest",
    "MCConfig",
    "StoppedSample",
    "simulate_stopped",
    "process_from_json",
    "rule_from_json",
]


# ---------------------------------------------------------------- processes


@dataclass(frozen=True)
class DriftedBM:
    """``X_t = x0 + mu t + sigma B_t``."""

    mu: float = 0.0
    sigma: float = 1.0
    x0: float = 0.0
    dim = 1
    exact = True

    def __post_init__(self):
        if self.sigma == 0 or not math.isfinite(self.sigma):
            raise SpecError("sigma must be finite and nonzero", field="process.sigma")

    def diffusion_spec(self) -> DiffusionSpec:
        return DiffusionSpec(Const(self.mu), Const(self.sigma), c=self.x0)

    def to_json(self):
        return {"kind": "bm", "mu": self.mu, "sigma": self.sigma, "x0": self.x0}


@dataclass(frozen=True)
class Diffusion:
    spec: DiffusionSpec
    x0: float
    dim = 1
    exact = False

    def __post_init__(self):
        if not self.spec.l < self.x0 < self.spec.r:
            raise SpecError("x0 must lie inside (l, r)", field="process.x0")

    def diffusion_spec(self) -> DiffusionSpec:
        return self.spec

    def to_json(self):
        return {"kind": "diffusion", **self.spec.to_json(), "x0": self.x0}


@dataclass(frozen=True)
class BrownianMotionD:
    x0: tuple
    exact = True

    def __post_init__(self):
        x0 = tuple(float(v) for v in self.x0)
        if len(x0) < 2:
            raise SpecError("multi-dimensional Brownian motion needs d >= 2", field="process.x0")
        object.__setattr__(self, "x0", x0)

    @property
    def dim(self) -> int:
        return len(self.x0)

    def to_json(self):
        return {"kind": "bm_d", "x0": list(self.x0)}


# ---------------------------------------------------------------- stopping rules


@dataclass(frozen=True)
class Deterministic:
    t: float
    n_levels = 0

    def __post_init__(self):
        if not self.t >= 0 or not math.isfinite(self.t):
            raise DescriptorError("deterministic time must be finite and >= 0", field="rule.t")

    def times(self):
        return (self.t,)

    def bounded_by(self):
        return self.t

    def first_stop(self, ctx):
        idx = np.full(ctx.n, int(np.searchsorted(ctx.t, self.t)))
        return idx, ctx.x[np.arange(ctx.n), idx].copy()

    def to_json(self):
        return {"kind": "deterministic", "t": self.t}


@dataclass(frozen=True)
class FirstExit:
    """First exit of a one-dimensional process from ``(a, b)``."""

    a: float = -math.inf
    b: float = math.inf
    n_levels = 2

    def __post_init__(self):
        if not self.a < self.b:
            raise DescriptorError("first_exit needs a < b", field="rule.a")

    def times(self):
        return ()

    def bounded_by(self):
        return None

    def first_stop(self, ctx):
        _require_1d(ctx, "first_exit")
        x = ctx.x
        n, m = x.shape
        x0, x1 = x[:, :-1], x[:, 1:]
        out = (x1 <= self.a) | (x1 >= self.b)
        val_out = np.where(x1 <= self.a, self.a, self.b)
        hit = out.copy()
        val = val_out.copy()
        inside = ~out
        for j, lev in enumerate((self.a, self.b)):
            if not math.isfinite(lev):
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                p = np.exp(-2.0 * (x0 - lev) * (x1 - lev) / ctx.var)
            bh = inside & (ctx.u[:, :, j] < p) & ~hit
            hit |= bh
            val = np.where(bh, lev, val)
        idx, v = _first_event(hit, val, x)
        start_out = (x[:, 0] <= self.a) | (x[:, 0] >= self.b)
        idx = np.where(start_out, 0, idx)
        v = np.where(start_out, x[:, 0], v)
        return idx, v

    def to_json(self):
        return {"kind": "first_exit", "a": _enc(self.a), "b": _enc(self.b)}


def FirstHit(level: float, x0: float) -> FirstExit:
    """First hitting time of ``level`` by a continuous path started at ``x0``."""
    return FirstExit(-math.inf, level) if level > x0 else FirstExit(level, math.inf)


@dataclass(frozen=True)
class DoobInflated:
    """``inf{t >= t0 : X_t = factor * X_{t0}}``."""

    t0: float = 1.0
    factor: float = 2.0
    n_levels = 1

    def times(self):
        return (self.t0,)

    def bounded_by(self):
        return None

    def first_stop(self, ctx):
        _require_1d(ctx, "doob")
        x = ctx.x
        i0 = int(np.searchsorted(ctx.t, self.t0))
        level = self.factor * x[:, i0]
        d = x - level[:, None]
        d0, d1 = d[:, :-1], d[:, 1:]
        cross = (d0 * d1 <= 0) & (np.abs(d0) > 0)
        with np.errstate(over="ignore", invalid="ignore"):
            p = np.exp(-2.0 * d0 * d1 / ctx.var)
        cross |= (d0 * d1 > 0) & (ctx.u[:, :, 0] < p)
        cross[:, :i0] = False
        val = np.broadcast_to(level[:, None], cross.shape)
        idx, v = _first_event(cross, val, x)
        at_once = d[:, i0] == 0
        idx = np.where(at_once, i0, idx)
        return idx, np.where(idx < x.shape[1], level, v)

    def to_json(self):
        return {"kind": "doob", "t0": self.t0, "factor": self.factor}


@dataclass(frozen=True)
class RadialExit:
    """Exit of ``{inner < |x - center| < outer}``, detected on the grid only."""

    center: tuple
    inner: float = 0.0
    outer: float = math.inf
    n_levels = 0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if not 0 <= self.inner < self.outer:
            raise DescriptorError("radial_exit needs 0 <= inner < outer", field="rule.inner")

    def times(self):
        return ()

    def bounded_by(self):
        return None

    def first_stop(self, ctx):
        x = ctx.x if ctx.x.ndim == 3 else ctx.x[:, :, None]
        c = np.asarray(self.center)
        if x.shape[2] != len(c):
            raise DescriptorError("radial_exit center has the wrong dimension", field="rule.center")
        r = np.sqrt(((x - c) ** 2).sum(axis=2))
        ev = ((r <= self.inner) | (r >= self.outer))[:, 1:]
        n = len(x)
        k = np.where(ev.any(axis=1), ev.argmax(axis=1) + 1, x.shape[1])
        k = np.where((r[:, 0] <= self.inner) | (r[:, 0] >= self.outer), 0, k)
        kk = np.minimum(k, x.shape[1] - 1)
        pts = x[np.arange(n), kk]
        rad = r[np.arange(n), kk]
        target = np.where(rad >= self.outer, self.outer, self.inner)
        with np.errstate(invalid="ignore", divide="ignore"):
            snapped = c + (pts - c) * (target / rad)[:, None]
        v = np.where((k < x.shape[1])[:, None] & np.isfinite(snapped), snapped, pts)
        return k, v if ctx.x.ndim == 3 else v[:, 0]

    def to_json(self):
        return {"kind": "radial_exit", "center": list(self.center), "inner": self.inner, "outer": _enc(self.outer)}


@dataclass(frozen=True)
class Earliest:
    rules: tuple

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.rules:
            raise DescriptorError("earliest needs at least one rule", field="rule.rules")

    @property
    def n_levels(self):
        return sum(r.n_levels for r in self.rules)

    def times(self):
        return tuple(t for r in self.rules for t in r.times())

    def bounded_by(self):
        bounds = [r.bounded_by() for r in self.rules if r.bounded_by() is not None]
        return min(bounds) if bounds else None

    def first_stop(self, ctx):
        best_idx, best_val = None, None
        col = 0
        for r in self.rules:
            sub = ctx.with_uniforms(ctx.u[:, :, col : col + r.n_levels])
            col += r.n_levels
            idx, val = r.first_stop(sub)
            if best_idx is None:
                best_idx, best_val = idx, val
            else:
                take = idx < best_idx
                best_idx = np.where(take, idx, best_idx)
                mask = take if val.ndim == 1 else take[:, None]
                best_val = np.where(mask, val, best_val)
        return best_idx, best_val

    def to_json(self):
        return {"kind": "earliest", "rules": [r.to_json() for r in self.rules]}


def _enc(v):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _require_1d(ctx, name):
    if ctx.x.ndim != 2:
        raise DescriptorError(f"{name} rule needs a one-dimensional process", field="rule.kind")


def _first_event(ev, val, x):
    """Grid index (1-based step end) and value of the first event per row."""
    any_ev = ev.any(axis=1)
    k = np.where(any_ev, ev.argmax(axis=1) + 1, x.shape[1])
    kk = np.minimum(k, ev.shape[1]) - 1
    v = np.where(any_ev, val[np.arange(len(x)), kk], np.nan)
    return k, v


@dataclass
class _Ctx:
    t: np.ndarray
    x: np.ndarray  # (n, m) or (n, m, d)
    var: np.ndarray  # (n, m - 1) local variance of each step
    u: np.ndarray  # (n, m - 1, levels)

    @property
    def n(self):
        return self.x.shape[0]

    def with_uniforms(self, u):
        return _Ctx(self.t, self.x, self.var, u)


# ---------------------------------------------------------------- simulation


FLOAT_BUDGET = 20_000_000


@dataclass(frozen=True)
class MCConfig:
    dt: float = 0.01
    horizon: float | None = None
    t_switch: float = 10.0
    growth: float = 0.01
    n_probes: int = 24
    chunk: int = 1000
    max_steps: int = 200_000

    def __post_init__(self):
        if not self.dt > 0:
            raise SpecError("dt must be positive", field="dt")
        if self.horizon is not None and not self.horizon > 0:
            raise SpecError("horizon must be positive", field="horizon")
        if not self.growth > 0:
            raise SpecError("growth must be positive", field="growth")

    def to_json(self):
        return {
            "dt": self.dt,
            "horizon": self.horizon,
            "t_switch": self.t_switch,
            "growth": self.growth,
            "n_probes": self.n_probes,
            "chunk": self.chunk,
        }


def time_grid(process, rule, cfg: MCConfig) -> np.ndarray:
    bound = rule.bounded_by()
    horizon = cfg.horizon
    if horizon is None:
        horizon = bound if bound is not None else (1e4 if process.exact else 100.0)
    if bound is not None:
        horizon = min(horizon, bound)
    if process.exact:
        ts = min(cfg.t_switch, horizon)
        fine = np.arange(0.0, ts, cfg.dt)
        n_geo = int(math.ceil(math.log(horizon / ts) / math.log1p(cfg.growth))) if horizon > ts else 0
        coarse = ts * np.exp(np.linspace(0.0, math.log(horizon / ts), n_geo + 1)) if n_geo else np.array([ts])
        t = np.concatenate([fine, coarse])
    else:
        t = np.arange(0.0, horizon, cfg.dt)
        t = np.append(t, horizon)
    extra = [v for v in rule.times() if 0 <= v <= horizon]
    t = np.unique(np.concatenate([t, extra, [horizon]]))
    # merge points closer than a tiny fraction of dt
    keep = np.concatenate([[True], np.diff(t) > 1e-9 * cfg.dt])
    t = t[keep]
    for v in extra:
        t[np.argmin(np.abs(t - v))] = v
    if len(t) - 1 > cfg.max_steps:
        raise SpecError(f"time grid needs {len(t) - 1} steps (max {cfg.max_steps}); raise dt", field="dt")
    return t


def probe_indices(t: np.ndarray, n_probes: int, extra=()) -> np.ndarray:
    targets = np.geomspace(t[1], t[-1], max(n_probes - 1, 1))
    idx = np.searchsorted(t, targets)
    idx = np.concatenate([[0], np.minimum(idx, len(t) - 1), np.searchsorted(t, extra)])
    return np.unique(np.clip(idx, 0, len(t) - 1))


def _paths(process, t, z):
    """Paths on grid ``t`` from standard normals ``z`` of shape (n, steps, d)."""
    n = z.shape[0]
    dt = np.diff(t)
    if isinstance(process, DriftedBM):
        inc = process.mu * dt + process.sigma * np.sqrt(dt) * z[:, :, 0]
        x = np.empty((n, len(t)))
        x[:, 0] = process.x0
        np.cumsum(inc, axis=1, out=x[:, 1:])
        x[:, 1:] += process.x0
        var = np.broadcast_to(process.sigma**2 * dt, inc.shape)
        return x, var, np.full(n, len(t))
    if isinstance(process, BrownianMotionD):
        x = np.empty((n, len(t), process.dim))
        x[:, 0, :] = process.x0
        np.cumsum(np.sqrt(dt)[None, :, None] * z, axis=1, out=x[:, 1:, :])
        x[:, 1:, :] += np.asarray(process.x0)
        var = np.broadcast_to(dt, (n, len(dt)))
        return x, var, np.full(n, len(t))
    if isinstance(process, Diffusion):
        spec = process.spec
        x = np.empty((n, len(t)))
        var = np.empty((n, len(dt)))
        x[:, 0] = process.x0
        alive = np.ones(n, dtype=bool)
        zeta = np.full(n, len(t))
        sq = np.sqrt(dt)
        for k in range(len(dt)):
            xk = x[:, k]
            sig = spec.sigma(xk)
            var[:, k] = sig * sig * dt[k]
            nxt = xk + spec.mu(xk) * dt[k] + sig * sq[k] * z[:, k, 0]
            low, high = nxt <= spec.l, nxt >= spec.r
            out = alive & (low | high)
            nxt = np.where(low, spec.l, np.where(high, spec.r, nxt))
            nxt = np.where(alive, nxt, xk)
            zeta = np.where(out, k + 1, zeta)
            alive &= ~out
            x[:, k + 1] = nxt
        return x, var, zeta
    raise DescriptorError(f"unsupported process {type(process).__name__}", field="process.kind")


@dataclass(frozen=True, eq=False)
class StoppedSample:
    """Per-replica summaries of ``X^tau`` on the probe times."""

    probe_t: np.ndarray
    x_probe: np.ndarray
    y_probe: np.ndarray  # g(X_{t ^ tau}) at probe times
    y_runmax: np.ndarray  # running sup of g(X^tau) over the full grid
    y_runmin: np.ndarray
    tau: np.ndarray  # inf when not stopped by the horizon
    x_min: np.ndarray
    x_max: np.ndarray
    zero_moves: int  # pre-tau steps with a zero g-increment
    pre_steps: int
    grid_size: int
    config: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.tau)

    @property
    def stopped_fraction(self) -> float:
        return float(np.isfinite(self.tau).mean())


def _bind_scale(g: GTransform, process, lo: float, hi: float) -> GTransform:
    spec = process.diffusion_spec()
    eps = 1e-9 * max(1.0, abs(lo), abs(hi))
    lo = max(lo, spec.l + eps) if math.isfinite(spec.l) else lo
    hi = min(hi, spec.r - eps) if math.isfinite(spec.r) else hi
    if not hi > lo:
        hi = lo + 1e-6
    n = int(np.clip((hi - lo) / 0.005, 257, 4097))
    tab = tabulate_scale(spec, np.linspace(lo, hi, n), classify=False)

    def s(v):
        return tab(np.clip(v, lo, hi))

    return g.bind(s)


def _simulate_chunk(start, stop, seed, process, rule, g, t, probes):
    n = stop - start
    steps = len(t) - 1
    d = process.dim
    levels = rule.n_levels
    width = block_width(steps * (d + levels))
    u = block_uniforms(seed, start, stop, width, STREAM_DIFFUSION)
    z = ndtri(u[:, : steps * d]).reshape(n, steps, d)
    ub = u[:, steps * d : steps * (d + levels)].reshape(n, steps, levels) if levels else np.zeros((n, steps, 0))
    x, var, zeta = _paths(process, t, z)
    idx, val = rule.first_stop(_Ctx(t, x, var, ub))
    # domain exit (diffusions) stops the path at the boundary
    zeta_first = zeta < idx
    idx = np.where(zeta_first, zeta, idx)
    rows = np.arange(n)
    if x.ndim == 2:
        val = np.where(zeta_first, x[rows, np.minimum(zeta, steps)], val)
    stopped = idx <= steps
    cols = np.arange(len(t))
    after = cols[None, :] >= idx[:, None]
    xs = x.copy()
    if x.ndim == 2:
        xs = np.where(after, np.where(stopped, val, np.nan)[:, None], xs)
    else:
        xs = np.where(after[:, :, None], np.where(stopped[:, None], val, np.nan)[:, None, :], xs)
    tau = np.where(stopped, t[np.minimum(idx, steps)], np.inf)
    if x.ndim == 2:
        x_min, x_max = np.nanmin(xs, axis=1), np.nanmax(xs, axis=1)
    else:
        x_min = x_max = np.full(n, np.nan)
    gb = g
    if g.kind in ("scale", "neg_scale"):
        gb = _bind_scale(g, process, float(np.nanmin(xs)), float(np.nanmax(xs)))
    y = gb(xs)
    runmax = np.maximum.accumulate(y, axis=1)
    runmin = np.minimum.accumulate(y, axis=1)
    pre = cols[None, 1:] <= idx[:, None]
    dy = np.diff(y, axis=1)
    zero_moves = int(np.count_nonzero(pre & (dy == 0)))
    pre_steps = int(np.count_nonzero(pre))
    return (xs[:, probes], y[:, probes], runmax[:, probes], runmin[:, probes], tau, x_min, x_max, zero_moves, pre_steps)


def simulate_stopped(
    process,
    rule,
    g: GTransform,
    seed: int,
    n: int,
    cfg: MCConfig = MCConfig(),
    workers: int = 1,
) -> StoppedSample:
    if g.dim != process.dim:
        raise DescriptorError(f"g expects dimension {g.dim}, process has {process.dim}", field="g.kind")
    if n < 1:
        raise DomainError("need at least one replica")
    t = time_grid(process, rule, cfg)
    probes = probe_indices(t, cfg.n_probes, rule.times())
    # several (replicas, grid) arrays are live at once; depends on the grid only, never on workers
    per_replica = len(t) * (2 * process.dim + rule.n_levels + 4)
    chunk = max(1, min(cfg.chunk, FLOAT_BUDGET // per_replica))
    parts = map_chunks(
        _simulate_chunk,
        chunk_bounds(n, chunk),
        workers,
        args=(seed, process, rule, g, t, probes),
    )
    cat = [np.concatenate([p[i] for p in parts]) for i in range(7)]
    return StoppedSample(
        probe_t=t[probes],
        x_probe=cat[0],
        y_probe=cat[1],
        y_runmax=cat[2],
        y_runmin=cat[3],
        tau=cat[4],
        x_min=cat[5],
        x_max=cat[6],
        zero_moves=sum(p[7] for p in parts),
        pre_steps=sum(p[8] for p in parts),
        grid_size=len(t),
        config={"seed": seed, "n": n, **cfg.to_json(), "grid_points": len(t)},
    )


# ---------------------------------------------------------------- descriptors


def _num(obj, key, default=None, prefix="process"):
    v = obj.get(key, default)
    if v is None:
        raise DescriptorError(f"missing {key}", field=f"{prefix}.{key}")
    if isinstance(v, str):
        v = {"inf": math.inf, "-inf": -math.inf}.get(v.strip(), v)
    try:
        return float(v)
    except (TypeError, ValueError):
        raise DescriptorError(f"{key} must be a number", field=f"{prefix}.{key}") from None


def process_from_json(obj: dict):
    if not isinstance(obj, dict) or "kind" not in obj:
        raise DescriptorError("process must be an object with 'kind'", field="process.kind")
    kind = obj["kind"]
    if kind == "bm":
        return DriftedBM(_num(obj, "mu", 0.0), _num(obj, "sigma", 1.0), _num(obj, "x0", 0.0))
    if kind == "diffusion":
        spec = DiffusionSpec.from_json({**obj, "c": obj.get("c", obj.get("x0", 0.0))})
        return Diffusion(spec, _num(obj, "x0", spec.c))
    if kind == "bm_d":
        x0 = obj.get("x0")
        if not isinstance(x0, list):
            raise DescriptorError("bm_d needs x0 as a list", field="process.x0")
        return BrownianMotionD(tuple(x0))
    raise DescriptorError(f"unsupported process kind {kind!r}", field="process.kind")


def rule_from_json(obj: dict, x0: float | None = None):
    if not isinstance(obj, dict) or "kind" not in obj:
        raise DescriptorError("rule must be an object with 'kind'", field="rule.kind")
    kind = obj["kind"]
    if kind == "deterministic":
        return Deterministic(_num(obj, "t", prefix="rule"))
    if kind == "first_exit":
        return FirstExit(_num(obj, "a", -math.inf, "rule"), _num(obj, "b", math.inf, "rule"))
    if kind == "first_hit":
        if x0 is None:
            raise DescriptorError("first_hit needs a one-dimensional start", field="rule.kind")
        return FirstHit(_num(obj, "level", prefix="rule"), x0)
    if kind == "doob":
        return DoobInflated(_num(obj, "t0", 1.0, "rule"), _num(obj, "factor", 2.0, "rule"))
    if kind == "radial_exit":
        return RadialExit(tuple(obj.get("center", ())), _num(obj, "inner", 0.0, "rule"), _num(obj, "outer", math.inf, "rule"))
    if kind == "earliest":
        rules = obj.get("rules")
        if not isinstance(rules, list):
            raise DescriptorError("earliest needs a list of rules", field="rule.rules")
        return Earliest(tuple(rule_from_json(r, x0) for r in rules))
    raise DescriptorError(f"unsupported stopping rule {kind!r}", field="rule.kind")
