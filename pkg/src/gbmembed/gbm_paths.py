"""Brownian / geometric Brownian path simulation and first-exit detection.

Paths are simulated on the log scale: ``log Z`` is a Brownian motion with
drift -1/2, so grid increments are exact Gaussians and all discretization
error sits in barrier detection. Between two grid points that are both
inside the barriers, an unobserved crossing of level ``a`` is sampled with
the Brownian-bridge probability ``exp(-2 (a - x0)(a - x1) / dt)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .rng import STREAM_GENERIC, STREAM_PATH, path_generator

__all__ = [
    "PathConfig",
    "SamplePath",
    "ExitEvent",
    "ExitResult",
    "simulate_bm",
    "simulate_gbm",
    "simulate_gbm_until",
    "exit_from",
    "first_exit",
    "write_path_csv",
]

PATH_KINDS = ("bm", "gbm", "clock")
SIDES = ("lower", "upper", "absorbed", "censored")


@dataclass(frozen=True)
class PathConfig:
    """Step and stopping policy for pathwise simulation."""

    delta: float = 1e-3
    horizon: float = 1e4
    absorb_level: float = 1e-8
    burn_in: float = 0.0
    chunk: int = 256
    max_chunk: int = 4096

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError("delta must be positive")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if not 0 < self.absorb_level < 1:
            raise DomainError("absorb_level must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class SamplePath:
    grid: np.ndarray
    values: np.ndarray
    kind: str
    absorbed: bool = False

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or len(g) == 0:
            raise DomainError("grid must be a non-empty 1-d array")
        if v.shape != g.shape:
            raise DomainError("grid and values must have equal length")
        if self.kind not in PATH_KINDS:
            raise DomainError(f"unknown path kind {self.kind!r}")
        if np.any(np.diff(g) <= 0):
            raise DomainError("grid must be strictly increasing")
        if self.kind == "clock" and np.any(np.diff(v) < 0):
            raise DomainError("clock paths must be nondecreasing")
        if self.kind == "gbm" and not self.absorbed and np.any(v <= 0):
            raise DomainError("gbm path must stay positive unless flagged absorbed")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.grid)


@dataclass(frozen=True)
class ExitEvent:
    time: float
    side: str
    value: float
    steps: int = 0

    def __post_init__(self):
        if self.side not in SIDES:
            raise DomainError(f"unknown exit side {self.side!r}")


@dataclass(frozen=True, eq=False)
class ExitResult:
    event: ExitEvent
    # left-rule sum of Z^2 dt over the steps before exit
    qv: float = 0.0
    # log-values at grid points 0..steps, final point snapped to the barrier
    log_path: np.ndarray | None = field(default=None, repr=False)


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or len(g) == 0:
        raise DomainError("grid must be non-empty")
    if g[0] != 0.0 or np.any(np.diff(g) <= 0):
        raise DomainError("grid must start at 0 and increase strictly")
    return g


def simulate_bm(seed: int, grid, index: int = 0) -> SamplePath:
    """Standard Brownian motion sampled exactly on ``grid``."""
    g = _check_grid(grid)
    gen = path_generator(seed, index, STREAM_GENERIC)
    z = gen.standard_normal(len(g) - 1)
    w = np.concatenate([[0.0], np.cumsum(np.sqrt(np.diff(g)) * z)])
    return SamplePath(g, w, "bm")


def simulate_gbm(seed: int, grid, index: int = 0) -> SamplePath:
    """``Z_t = exp(W_t - t/2)`` on ``grid`` (same noise as :func:`simulate_bm`)."""
    w = simulate_bm(seed, grid, index)
    return SamplePath(w.grid, np.exp(w.values - 0.5 * w.grid), "gbm")


def simulate_gbm_until(
    seed: int,
    index: int,
    cfg: PathConfig = PathConfig(),
    clock_limit: float = math.inf,
    scale: float = 1.0,
) -> SamplePath:
    """GBM path on a uniform grid until near-absorption or a clock budget.

    Stops at the first grid time where ``Z < cfg.absorb_level`` (the path is
    then flagged absorbed and the last value set to 0), or once the clock
    ``scale^2 * int Z^2`` exceeds ``clock_limit``, or at the horizon.
    """
    gen = path_generator(seed, index, STREAM_GENERIC)
    dt = cfg.delta
    sd = math.sqrt(dt)
    log_abs = math.log(cfg.absorb_level)
    n_max = int(math.ceil(cfg.horizon / dt))
    pieces = [np.zeros(1)]
    x_prev, clock, done, absorbed = 0.0, 0.0, 0, False
    chunk = cfg.chunk
    while done < n_max:
        m = min(chunk, n_max - done)
        x = x_prev + np.cumsum(sd * gen.standard_normal(m) - 0.5 * dt)
        prev = np.concatenate([[x_prev], x[:-1]])
        a = clock + scale * scale * dt * np.cumsum(np.exp(2.0 * prev))
        stop = (x < log_abs) | (a > clock_limit)
        if stop.any():
            i = int(np.argmax(stop))
            absorbed = bool(x[i] < log_abs)
            pieces.append(x[: i + 1])
            done += i + 1
            break
        pieces.append(x)
        done += m
        x_prev, clock = x[-1], a[-1]
        chunk = min(2 * chunk, cfg.max_chunk)
    lx = np.concatenate(pieces)
    z = np.exp(lx)
    if absorbed:
        z[-1] = 0.0
    grid = dt * np.arange(len(lx))
    return SamplePath(grid, z, "gbm", absorbed=absorbed)


# bridge crossing probabilities below exp(-NEAR) are treated as zero
NEAR = 40.0


def _bridge_hits(gen, inside, d0, d1, dt):
    """Sample unobserved crossings of a level at distances ``d0``, ``d1``.

    Uniforms are drawn only for steps whose crossing probability exceeds
    ``exp(-NEAR)``; the number drawn depends on the path, which keeps the
    stream deterministic while skipping the bulk of far-from-barrier steps.
    """
    e = 2.0 * d0 * d1 / dt
    near = inside & (e < NEAR)
    hit = np.zeros(len(e), dtype=bool)
    p = np.zeros(len(e))
    k = int(np.count_nonzero(near))
    if k:
        p[near] = np.exp(-e[near])
        hit[near] = gen.random(k) < p[near]
    return hit, p


def exit_from(
    gen: np.random.Generator,
    x0: float,
    lo: float,
    hi: float,
    cfg: PathConfig,
    *,
    record: bool = False,
    clock: bool = False,
    delta: float | None = None,
) -> ExitResult:
    """First exit of ``log Z`` (started at ``x0``) from ``(lo, hi)``.

    ``lo`` / ``hi`` are log-barriers and may be infinite. With ``lo = -inf``
    the path is declared absorbed once ``log Z`` drops below
    ``log(cfg.absorb_level)`` after the burn-in.
    """
    dt = cfg.delta if delta is None else delta
    if x0 >= hi:
        return ExitResult(ExitEvent(0.0, "upper", math.exp(hi)), 0.0, np.array([hi]) if record else None)
    if x0 <= lo:
        return ExitResult(ExitEvent(0.0, "lower", math.exp(lo)), 0.0, np.array([lo]) if record else None)
    sd = math.sqrt(dt)
    fin_lo, fin_hi = math.isfinite(lo), math.isfinite(hi)
    bridge = fin_lo or fin_hi
    absorbing = not fin_lo
    log_abs = math.log(cfg.absorb_level)
    burn_steps = int(math.ceil(cfg.burn_in / dt)) if cfg.burn_in > 0 else 0
    n_max = int(math.ceil(cfg.horizon / dt))
    pieces = [np.array([x0])] if record else None
    qv = 0.0
    x_prev = x0
    done = 0
    chunk = cfg.chunk
    while done < n_max:
        m = min(chunk, n_max - done)
        x = x_prev + np.cumsum(sd * gen.standard_normal(m) - 0.5 * dt)
        prev = np.empty_like(x)
        prev[0] = x_prev
        prev[1:] = x[:-1]
        up_out = x >= hi
        lo_out = x <= lo
        event = up_out | lo_out
        hit_up = hit_lo = None
        if bridge:
            inside = ~event
            if fin_hi:
                hit_up, p_up = _bridge_hits(gen, inside, hi - prev, hi - x, dt)
                event |= hit_up
            if fin_lo:
                hit_lo, p_lo = _bridge_hits(gen, inside, prev - lo, x - lo, dt)
                event |= hit_lo
        if absorbing:
            ab = x < log_abs
            if burn_steps:
                ab &= (done + 1 + np.arange(m)) >= burn_steps
            event |= ab
        if event.any():
            i = int(np.argmax(event))
            if up_out[i]:
                side = "upper"
            elif lo_out[i]:
                side = "lower"
            else:
                hu = hit_up is not None and hit_up[i]
                hl = hit_lo is not None and hit_lo[i]
                if hu and hl:
                    # nearest barrier wins on a double trigger
                    side = "upper" if p_up[i] >= p_lo[i] else "lower"
                elif hu:
                    side = "upper"
                elif hl:
                    side = "lower"
                else:
                    side = "absorbed"
            steps = done + i + 1
            if clock:
                qv += dt * float(np.exp(2.0 * prev[: i + 1]).sum())
            if side == "upper":
                val, end = math.exp(hi), hi
            elif side == "lower":
                val, end = math.exp(lo), lo
            else:
                val, end = 0.0, -math.inf
            tau = steps * dt if side != "absorbed" else math.inf
            path = None
            if record:
                last = x[: i + 1].copy()
                last[-1] = end
                pieces.append(last)
                path = np.concatenate(pieces)
            return ExitResult(ExitEvent(tau, side, val, steps), qv, path)
        if clock:
            qv += dt * float(np.exp(2.0 * prev).sum())
        if record:
            pieces.append(x)
        done += m
        x_prev = x[-1]
        chunk = min(2 * chunk, cfg.max_chunk)
    path = np.concatenate(pieces) if record else None
    return ExitResult(ExitEvent(done * dt, "censored", math.exp(x_prev), done), qv, path)


def first_exit(
    seed: int,
    start: float,
    alpha: float,
    beta: float,
    delta: float = 1e-3,
    horizon: float = 1e4,
    index: int = 0,
    cfg: PathConfig | None = None,
) -> ExitEvent:
    """First exit of a GBM started at ``start`` from ``(alpha, beta)``."""
    if not (0.0 <= alpha <= start <= beta) or start <= 0:
        raise DomainError("need 0 <= alpha <= start <= beta and start > 0")
    if cfg is None:
        cfg = PathConfig(delta=delta, horizon=horizon)
    gen = path_generator(seed, index, STREAM_PATH)
    lo = math.log(alpha) if alpha > 0 else -math.inf
    hi = math.log(beta) if math.isfinite(beta) else math.inf
    return exit_from(gen, math.log(start), lo, hi, cfg).event


def write_path_csv(path: SamplePath, fh, header: bool = True) -> None:
    if header:
        fh.write("t,value\n")
    for t, v in zip(path.grid, path.values):
        fh.write(f"{float(t)!r},{float(v)!r}\n")
