"""Embedding one target law into the GBM ``Y_t = exp(B_t - t/2)``.

A uniform ``R`` picks barriers ``(alpha, beta)`` through the g-calculus; the
GBM started at 1 is then stopped on leaving ``(alpha, beta)``. Analytic mode
draws the exit side from the linear exit law, pathwise mode simulates it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .distributions import BarrierPair, GCalculus, TargetDistribution, build_g_calculus, format_value
from .errors import CensoringError, TooFewSamplesError
from .gbm_paths import PathConfig, exit_from
from .rng import STREAM_EMBED, STREAM_PATH, block_uniforms, chunk_bounds, map_chunks, path_generator

__all__ = [
    "ExitLaw",
    "exit_law",
    "upper_exit_probability",
    "EmbeddingSample",
    "EmbeddingSamples",
    "sample_embedding",
    "sample_embedding_pathwise",
    "FitReport",
    "ks_statistic",
    "verify_law",
    "ConditionalMeanReport",
    "verify_conditional_mean",
]

MIN_LAW_SAMPLES = 100
MIN_COND_SAMPLES = 1000
CHUNK = 1 << 15


@dataclass(frozen=True)
class ExitLaw:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        total = sum(p for _, p in self.points)
        if not math.isclose(total, 1.0, abs_tol=1e-12):
            raise ValueError(f"exit probabilities sum to {total}")

    @property
    def mean(self) -> float:
        return sum(v * p for v, p in self.points)

    def prob(self, value: float) -> float:
        return sum(p for v, p in self.points if v == value)


def upper_exit_probability(alpha, beta):
    """P(exit at beta) for the GBM from 1; 0 where ``beta`` is infinite or ``alpha == beta``."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    bounded = np.isfinite(beta) & (beta > alpha)
    width = np.where(bounded, beta - alpha, 1.0)
    return np.where(bounded, (1.0 - alpha) / width, 0.0)


def exit_law(b: BarrierPair) -> ExitLaw:
    if b.alpha == b.beta:
        return ExitLaw(((1.0, 1.0),))
    if math.isinf(b.beta):
        return ExitLaw(((b.alpha, 1.0),))
    p_up = (1.0 - b.alpha) / (b.beta - b.alpha)
    pts = tuple((v, p) for v, p in ((b.alpha, 1.0 - p_up), (b.beta, p_up)) if p > 0)
    return ExitLaw(pts)


@dataclass(frozen=True)
class EmbeddingSample:
    r: float
    eta: float
    alpha: float
    beta: float
    y: float
    tau: float | None = None
    censored: bool = False


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if v == math.inf:
        return "inf"
    return repr(float(v))


@dataclass(frozen=True, eq=False)
class EmbeddingSamples:
    """Columnar batch of embedding samples; iterates as :class:`EmbeddingSample`.

    ``tau`` is None in analytic mode. Censored rows carry ``y = nan``.
    """

    r: np.ndarray
    eta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    y: np.ndarray
    tau: np.ndarray | None = None
    censored: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.censored is None:
            object.__setattr__(self, "censored", np.zeros(len(self.r), dtype=bool))

    def __len__(self) -> int:
        return len(self.r)

    def __getitem__(self, i: int) -> EmbeddingSample:
        tau = None if self.tau is None else float(self.tau[i])
        return EmbeddingSample(
            float(self.r[i]), float(self.eta[i]), float(self.alpha[i]), float(self.beta[i]),
            float(self.y[i]), tau, bool(self.censored[i]),
        )

    def __iter__(self) -> Iterator[EmbeddingSample]:
        return (self[i] for i in range(len(self)))

    @property
    def uncensored_y(self) -> np.ndarray:
        return self.y[~self.censored]

    def write_csv(self, fh) -> None:
        fh.write("r,eta,alpha,beta,y,tau,censored\n")
        tau = self.tau if self.tau is not None else [None] * len(self)
        for row in zip(self.r, self.eta, self.alpha, self.beta, self.y, tau, self.censored):
            fh.write(",".join(_fmt(v) for v in row[:6]) + f",{int(row[6])}\n")


def _calc_for(dist: TargetDistribution, calc: GCalculus | None) -> GCalculus:
    return calc if calc is not None else build_g_calculus(dist)


def _analytic_chunk(start, stop, seed, calc):
    u = block_uniforms(seed, start, stop, 4, STREAM_EMBED)
    r = u[:, 0]
    alpha, beta = calc.barriers(r)
    up = u[:, 1] < upper_exit_probability(alpha, beta)
    y = np.where(up, beta, alpha)
    return r, np.asarray(calc.g(r), dtype=float), alpha, beta, y


def sample_embedding(
    dist: TargetDistribution,
    seed: int,
    n: int,
    *,
    calc: GCalculus | None = None,
    workers: int = 1,
) -> EmbeddingSamples:
    """Analytic embedding: ``Y_tau`` drawn from the exit law of ``(alpha, beta)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    calc = _calc_for(dist, calc)
    parts = map_chunks(_analytic_chunk, chunk_bounds(n, CHUNK), workers, (seed, calc))
    cols = [np.concatenate(c) for c in zip(*parts)]
    return EmbeddingSamples(*cols, meta={"mode": "analytic", "seed": seed, "n": n})


def _pathwise_chunk(start, stop, seed, calc, cfg):
    u = block_uniforms(seed, start, stop, 4, STREAM_EMBED)
    r = u[:, 0]
    alpha, beta = calc.barriers(r)
    m = stop - start
    y = np.empty(m)
    tau = np.empty(m)
    cens = np.zeros(m, dtype=bool)
    for j in range(m):
        a, b = alpha[j], beta[j]
        if a == b:
            y[j], tau[j] = 1.0, 0.0
            continue
        gen = path_generator(seed, start + j, STREAM_PATH)
        lo = math.log(a) if a > 0 else -math.inf
        hi = math.log(b) if math.isfinite(b) else math.inf
        ev = exit_from(gen, 0.0, lo, hi, cfg).event
        tau[j] = ev.time
        if ev.side == "censored":
            cens[j] = True
            y[j] = math.nan
        else:
            y[j] = ev.value
    return r, np.asarray(calc.g(r), dtype=float), alpha, beta, y, tau, cens


def sample_embedding_pathwise(
    dist: TargetDistribution,
    seed: int,
    n: int,
    cfg: PathConfig = PathConfig(),
    *,
    calc: GCalculus | None = None,
    workers: int = 1,
    chunk: int = 1024,
) -> EmbeddingSamples:
    """Pathwise embedding with bridge-corrected exit detection.

    ``R`` comes from the same stream as :func:`sample_embedding`, so both
    modes share barriers sample by sample and differ only in the exit draw.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    calc = _calc_for(dist, calc)
    parts = map_chunks(_pathwise_chunk, chunk_bounds(n, chunk), workers, (seed, calc, cfg))
    cols = [np.concatenate(c) for c in zip(*parts)]
    meta = {"mode": "pathwise", "seed": seed, "n": n, "delta": cfg.delta, "horizon": cfg.horizon}
    return EmbeddingSamples(*cols, meta=meta)


def ks_statistic(y: np.ndarray, dist: TargetDistribution) -> float:
    """Exact sup-distance between the empirical law of ``y`` and ``dist``.

    Both CDFs are right-continuous step-or-continuous functions, so the
    supremum is attained at a sample point or an atom, approached from the
    right or the left.
    """
    y = np.sort(np.asarray(y, dtype=float))
    n = len(y)
    atoms = [v for v, _ in dist.atoms] if dist.atoms is not None else []
    pts = np.unique(np.concatenate([y, atoms]))
    pts = pts[np.isfinite(pts)]
    fn_right = np.searchsorted(y, pts, side="right") / n
    fn_left = np.searchsorted(y, pts, side="left") / n
    f_right = np.asarray(dist.cdf(pts), dtype=float)
    f_left = np.asarray(dist.cdf_left(pts), dtype=float)
    d = max(np.max(np.abs(fn_right - f_right)), np.max(np.abs(fn_left - f_left)))
    return float(d)


@dataclass(frozen=True)
class FitReport:
    ks: float
    n: int
    censored: int
    mean: float
    threshold: float
    passed: bool

    @property
    def censored_rate(self) -> float:
        total = self.n + self.censored
        return self.censored / total if total else 0.0

    def to_json(self) -> dict:
        return {
            "ks": self.ks,
            "n": self.n,
            "censored": self.censored,
            "censored_rate": self.censored_rate,
            "mean": self.mean,
            "threshold": self.threshold,
            "pass": self.passed,
        }


def verify_law(
    samples: EmbeddingSamples,
    dist: TargetDistribution,
    threshold: float = 0.01,
    max_censored_rate: float | None = None,
) -> FitReport:
    """KS fit of realized ``y`` against ``dist``; censored rows are excluded.

    With ``max_censored_rate`` set, a heavier censoring rate raises
    :class:`CensoringError` instead of quietly shrinking the sample.
    """
    y = samples.uncensored_y
    if len(y) < MIN_LAW_SAMPLES:
        raise TooFewSamplesError(f"need >= {MIN_LAW_SAMPLES} uncensored samples, got {len(y)}")
    n_cens = int(np.count_nonzero(samples.censored))
    if max_censored_rate is not None and n_cens > max_censored_rate * len(samples):
        raise CensoringError(f"{n_cens} of {len(samples)} samples censored")
    ks = ks_statistic(y, dist)
    return FitReport(ks, len(y), n_cens, float(np.mean(y)), threshold, ks < threshold)


@dataclass(frozen=True)
class ConditionalMeanReport:
    status: str  # pass | fail | vacuous
    bins: tuple  # (eta_lo, eta_hi, count, mean, se)
    n: int
    k_se: float

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def max_abs_deviation(self) -> float:
        return max((abs(b[3] - 1.0) for b in self.bins), default=0.0)

    def to_json(self) -> dict:
        keys = ("eta_lo", "eta_hi", "count", "mean", "se")
        return {
            "status": self.status,
            "n": self.n,
            "k_se": self.k_se,
            "bins": [dict(zip(keys, b)) for b in self.bins],
        }


def verify_conditional_mean(
    samples: EmbeddingSamples,
    calc: GCalculus,
    bins: int = 10,
    k_se: float = 3.0,
) -> ConditionalMeanReport:
    """Binned ``E(y | eta)`` on the two-barrier event ``g(1) <= eta < g*``.

    Plateau samples (``alpha == beta == 1``) are left out: they stop at time
    zero with ``y = 1`` and carry no information.
    """
    keep = (
        ~samples.censored
        & (samples.eta >= calc.g_at_one)
        & np.isfinite(samples.beta)
        & (samples.beta > samples.alpha)
    )
    n = int(np.count_nonzero(keep))
    if n == 0:
        return ConditionalMeanReport("vacuous", (), 0, k_se)
    if n < MIN_COND_SAMPLES:
        raise TooFewSamplesError(f"need >= {MIN_COND_SAMPLES} samples on the conditioning event, got {n}")
    eta = samples.eta[keep]
    y = samples.y[keep]
    order = np.argsort(eta, kind="stable")
    rows = []
    ok = True
    for idx in np.array_split(order, bins):
        yb = y[idx]
        mean = float(yb.mean())
        se = float(yb.std(ddof=1) / math.sqrt(len(yb))) if len(yb) > 1 else math.inf
        ok &= abs(mean - 1.0) <= k_se * se
        rows.append((float(eta[idx].min()), float(eta[idx].max()), int(len(yb)), mean, se))
    return ConditionalMeanReport("pass" if ok else "fail", tuple(rows), n, k_se)


def fit_report_json(report: FitReport, config: dict) -> str:
    return json.dumps({"config": config, **report.to_json()}, indent=2, sort_keys=True, default=format_value)
