"""Monte Carlo diagnostics on stopped processes.

These are evidence-grade checks: a sample can support or contradict
uniform integrability or the supermartingale inequality, never prove it.
Every result embeds the raw numbers behind its verdict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from ..errors import DomainError, TooFewSamplesError

__all__ = [
    "UIConfig",
    "UIResult",
    "ui_diagnostic",
    "sup_moment_diagnostic",
    "DirectionCheck",
    "direction_check",
    "EVIDENCE_NOTE",
]

EVIDENCE_NOTE = "evidence-grade Monte Carlo diagnostic; a finite sample cannot prove uniform integrability"
MIN_REPLICAS = 1000


@dataclass(frozen=True)
class UIConfig:
    eps: float = 0.01
    min_hits: int = 30
    ci: float = 3.0
    # adjacent K levels differ by a factor of two in tail count
    max_levels: int = 24
    min_decay_ratio: float = 0.5

    def __post_init__(self):
        if not self.eps > 0 or self.min_hits < 1 or not self.ci > 0:
            raise DomainError("UI thresholds must be positive")

    def to_json(self):
        return {"eps": self.eps, "min_hits": self.min_hits, "ci": self.ci, "min_decay_ratio": self.min_decay_ratio}


@dataclass(frozen=True, eq=False)
class UIResult:
    verdict: str  # satisfied, violated, inconclusive
    part: str
    reason: str
    times: np.ndarray
    K: np.ndarray
    tail: np.ndarray  # (len(times), len(K)) estimates of E[V_t 1{V_t > K}]
    se: np.ndarray
    hits: np.ndarray  # replicas with V_t > K
    sup_hits: np.ndarray  # replicas with sup_t V_t > K
    K_star: float | None
    monotone: bool
    config: UIConfig = field(default_factory=UIConfig)
    note: str = EVIDENCE_NOTE

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "part": self.part,
            "reason": self.reason,
            "K_star": self.K_star,
            "monotone_in_K": self.monotone,
            "config": self.config.to_json(),
            "note": self.note,
            "table": [
                {
                    "t": float(t),
                    "K": float(k),
                    "tail": float(self.tail[i, j]),
                    "se": float(self.se[i, j]),
                    "hits": int(self.hits[i, j]),
                }
                for i, t in enumerate(self.times)
                for j, k in enumerate(self.K)
            ],
        }


def _signed_part(values: np.ndarray, part: str) -> np.ndarray:
    if part == "plus":
        return np.maximum(values, 0.0)
    if part == "minus":
        return np.maximum(-values, 0.0)
    raise DomainError(f"part must be 'plus' or 'minus', got {part!r}")


def _k_levels(M: np.ndarray, cfg: UIConfig) -> np.ndarray:
    """Thresholds leaving n/2, n/4, ... replicas above, down to ``min_hits``."""
    n = len(M)
    srt = np.sort(M)
    counts = []
    c = n // 2
    while c > cfg.min_hits and len(counts) < cfg.max_levels:
        counts.append(c)
        c //= 2
    counts.append(min(cfg.min_hits, n - 1))
    ks = [srt[n - 1 - c] for c in counts]
    return np.unique(np.concatenate([[0.0], ks, [srt[-1]]]))


def ui_diagnostic(values, part: str, times=None, config: UIConfig = UIConfig()) -> UIResult:
    """Uniform-integrability evidence for ``V_t`` = plus/minus part of ``values``.

    ``values`` has shape ``(replicas, times)``. Verdict rules:

    * satisfied when the sample maximum is attained by at least ``min_hits``
      replicas (a pathwise bound), or when ``max_t E[V_t 1{V_t > K*}] <= eps``
      at the largest ``K*`` exceeded by at least ``min_hits`` replicas;
    * violated when even the lower ``ci``-sigma bound exceeds ``eps`` there
      and the tail has not halved since the level with four times the hits;
    * inconclusive otherwise, including when no threshold has enough hits.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise DomainError("values must have shape (replicas, times)")
    n, nt = v.shape
    if n < MIN_REPLICAS:
        raise TooFewSamplesError(f"ui_diagnostic needs at least {MIN_REPLICAS} replicas, got {n}")
    if np.isnan(v).any():
        raise DomainError("values contain NaN")
    times = np.arange(nt, dtype=float) if times is None else np.asarray(times, dtype=float)
    V = _signed_part(v, part)
    if np.isinf(V).any():
        K = np.array([0.0])
        empty = np.full((nt, 1), np.inf)
        return UIResult(
            "violated", part, "infinite values in the family", times, K, empty, empty,
            np.zeros((nt, 1), int), np.zeros(1, int), None, True, config,
        )
    M = V.max(axis=1)
    K = _k_levels(M, config)
    tail = np.empty((nt, len(K)))
    se = np.empty((nt, len(K)))
    hits = np.empty((nt, len(K)), dtype=int)
    for j, k in enumerate(K):
        above = V > k
        contrib = np.where(above, V, 0.0)
        tail[:, j] = contrib.mean(axis=0)
        se[:, j] = contrib.std(axis=0, ddof=1) / np.sqrt(n)
        hits[:, j] = above.sum(axis=0)
    sup_hits = (M[:, None] > K[None, :]).sum(axis=0)
    monotone = bool(np.all(np.diff(tail, axis=1) <= 2.0 * se[:, 1:] + 1e-15))

    def result(verdict, reason, k_star=None):
        return UIResult(verdict, part, reason, times, K, tail, se, hits, sup_hits, k_star, monotone, config)

    if not monotone:
        return result("inconclusive", "tail estimates not monotone in K")
    top = M.max()
    if top == 0.0:
        return result("satisfied", "part vanishes identically", 0.0)
    attained = int(np.count_nonzero(M >= top - 1e-12 * max(1.0, abs(top))))
    if attained >= config.min_hits:
        return result("satisfied", f"sample maximum {top:.6g} attained by {attained} replicas (pathwise bound)", float(top))
    adequate = np.nonzero(sup_hits >= config.min_hits)[0]
    if len(adequate) == 0:
        return result("inconclusive", "grid too coarse: no threshold with enough tail hits")
    j = adequate[-1]
    worst = float(tail[:, j].max())
    lower = float((tail[:, j] - config.ci * se[:, j]).max())
    k_star = float(K[j])
    if worst <= config.eps:
        return result("satisfied", f"max_t tail at K*={k_star:.6g} is {worst:.3g} <= {config.eps}", k_star)
    # a tail that still halves within two K levels is treated as decaying, not stuck
    ref = tail[:, max(j - 2, 0)].max()
    decay = worst / ref if ref > 0 else 1.0
    if lower > config.eps and decay >= config.min_decay_ratio:
        return result(
            "violated",
            f"tail at K*={k_star:.6g} stays above {config.eps} (lower bound {lower:.3g}, decay ratio {decay:.2f})",
            k_star,
        )
    return result("inconclusive", f"tail at K*={k_star:.6g} is {worst:.3g}, not separated from {config.eps}", k_star)


def sup_moment_diagnostic(runmax, runmin, part: str, times=None, config: UIConfig = UIConfig()) -> UIResult:
    """Integrability evidence for ``sup_t V_t`` from running extrema of ``Y``.

    The running supremum of the signed part is an increasing family, so its
    uniform integrability is the integrability of the overall supremum.
    """
    runmax = np.asarray(runmax, dtype=float)
    runmin = np.asarray(runmin, dtype=float)
    sup_v = np.maximum(runmax, 0.0) if part == "plus" else np.maximum(-runmin, 0.0)
    if part not in ("plus", "minus"):
        raise DomainError(f"part must be 'plus' or 'minus', got {part!r}")
    res = ui_diagnostic(sup_v, "plus", times, config)
    return UIResult(**{**res.__dict__, "part": f"sup-{part}"})


@dataclass(frozen=True)
class DirectionCheck:
    verdict: str  # satisfied or violated
    direction: str  # super or sub
    worst_z: float
    threshold: float
    tests: int

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "direction": self.direction,
            "worst_z": self.worst_z,
            "threshold": self.threshold,
            "tests": self.tests,
        }


def direction_check(y, direction: str = "super", bins: int = 10, min_bin: int = 50, alpha: float = 0.0027) -> DirectionCheck:
    """Binned conditional-mean test of ``E[Y_{t_{j+1}} - Y_{t_j} | Y_{t_j}] <= 0``.

    Replicas are binned by rank of ``Y_{t_j}``; each bin's mean increment
    is compared with its standard error, with a Bonferroni threshold over
    all (pair, bin) tests so the family-wise false alarm rate is ``alpha``.
    """
    y = np.asarray(y, dtype=float)
    if direction not in ("super", "sub"):
        raise DomainError("direction must be 'super' or 'sub'")
    sign = 1.0 if direction == "super" else -1.0
    n, nt = y.shape
    stats = []
    for j in range(nt - 1):
        a, b = y[:, j], y[:, j + 1]
        ok = np.isfinite(a) & np.isfinite(b)
        a, inc = a[ok], sign * (b[ok] - a[ok])
        if len(a) < min_bin:
            continue
        order = np.argsort(a, kind="stable")
        for chunk in np.array_split(order, max(1, min(bins, len(a) // min_bin))):
            d = inc[chunk]
            sd = d.std(ddof=1)
            m = d.mean()
            if sd == 0:
                stats.append(np.inf if m > 1e-12 else 0.0)
            else:
                stats.append(m / (sd / np.sqrt(len(d))))
    tests = len(stats)
    threshold = float(max(3.0, ndtri(1.0 - alpha / max(tests, 1))))
    worst = float(max(stats)) if stats else 0.0
    verdict = "violated" if worst > threshold else "satisfied"
    return DirectionCheck(verdict, direction, worst, threshold, tests)
