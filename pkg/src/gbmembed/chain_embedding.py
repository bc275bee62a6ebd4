"""Embedding a finite-horizon nonnegative supermartingale into the GBM.

The chain is a rooted tree: level ``k`` holds the possible values of
``X_k`` and every node carries the conditional law of its children. Step
``k + 1`` embeds the ratio law ``X_{k+1} / X_k`` (given the history) into a
fresh GBM started at the current stopping time, so
``y_{k+1} = y_k * ratio`` and ``tau_{k+1} = tau_k + exit time``.

Trees are stored canonically: siblings with equal values are merged (their
subtrees mixed with the sibling weights). A history is then the realized
value path, which is all the embedding can observe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .distributions import GCalculus, TargetDistribution, build_g_calculus
from .errors import CensoringError, ConsistencyError, DomainError, SpecError, TooFewSamplesError
from .gbm_paths import PathConfig, exit_from
from .rng import (
    STREAM_CHAIN,
    STREAM_CHAIN_PATH,
    block_uniforms,
    block_width,
    chunk_bounds,
    map_chunks,
    path_generator,
)
from .single_embedding import ks_statistic, upper_exit_probability

__all__ = [
    "ChainNode",
    "ChainSpec",
    "parse_tree",
    "ChainEmbeddingSample",
    "ChainEmbeddingSamples",
    "ratio_distribution",
    "embed_chain",
    "JointLawReport",
    "path_frequencies",
    "max_frequency_deviation",
    "verify_joint_law",
    "marginal_ks",
    "tower_check",
    "dyadic_coarsen",
    "coarsen_samples",
]

PROB_TOL = 1e-12
MEAN_TOL = 1e-9
MATCH_RTOL = 1e-9


@dataclass(frozen=True)
class ChainNode:
    value: float
    children: tuple[tuple[float, "ChainNode"], ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + self.children[0][1].depth()


def _merge(weighted: Sequence[tuple[float, ChainNode]]) -> tuple[tuple[float, ChainNode], ...]:
    """Merge equal-valued siblings; merged subtrees become probability mixtures."""
    groups: dict[float, list[tuple[float, ChainNode]]] = {}
    for p, node in weighted:
        groups.setdefault(node.value, []).append((p, node))
    out = []
    for v in sorted(groups):
        items = groups[v]
        total = math.fsum(p for p, _ in items)
        mixed = [(p / total * cp, c) for p, n in items for cp, c in n.children]
        out.append((total, ChainNode(v, _merge(mixed))))
    return tuple(out)


class ChainSpec:
    """Validated, canonical chain tree.

    ``levels[k]`` lists level-``k`` nodes; ``parent[k]`` and ``cond[k]`` give
    each node's parent index (``-1`` for the virtual root) and conditional
    probability. ``dyadic_level`` optionally records that level ``k`` sits at
    time ``k * 2**-dyadic_level``.
    """

    def __init__(self, root: Sequence[tuple[float, ChainNode]], dyadic_level: int | None = None):
        root = tuple((float(p), n) for p, n in root)
        self._validate(root)
        self.root = _merge(root)
        self.dyadic_level = dyadic_level
        self.depth = self.root[0][1].depth()
        self._flatten()

    # -- construction ---------------------------------------------------

    @staticmethod
    def _validate(root):
        if not root:
            raise SpecError("root distribution is empty", "root")

        def check_probs(items, where):
            for p, _ in items:
                if not (0.0 < p <= 1.0):
                    raise SpecError(f"probability {p} outside (0, 1] at {where}", where)
            total = math.fsum(p for p, _ in items)
            if abs(total - 1.0) > PROB_TOL:
                raise SpecError(f"probabilities must sum to 1 at {where} (got {total:.15g})", where)

        check_probs(root, "root")
        depths = set()

        def walk(node: ChainNode, path: str, d: int):
            if not (node.value >= 0.0) or math.isinf(node.value):
                raise SpecError(f"node value {node.value} must be finite and >= 0", path)
            if node.is_leaf:
                depths.add(d)
                return
            check_probs(node.children, path)
            if node.value == 0.0 and any(c.value != 0.0 for _, c in node.children):
                raise SpecError(f"zero-valued node {path} has a nonzero child", path)
            mean = math.fsum(p * c.value for p, c in node.children)
            if mean > node.value * (1.0 + PROB_TOL) + PROB_TOL:
                raise SpecError(
                    f"supermartingale property fails at {path}: children mean {mean:.12g} > value {node.value:.12g}",
                    path,
                )
            for i, (_, c) in enumerate(node.children):
                walk(c, f"{path}.{i}", d + 1)

        for i, (_, n) in enumerate(root):
            walk(n, f"root.{i}", 0)
        if len(depths) != 1:
            raise SpecError(f"all leaves must sit at the same depth (found {sorted(depths)})", "nodes")
        root_mean = math.fsum(p * n.value for p, n in root)
        if root_mean > 1.0 + MEAN_TOL:
            raise SpecError(f"root mean {root_mean:.12g} exceeds 1", "root")

    def _flatten(self):
        values, parent, cond, nodes = [], [], [], []
        frontier = [(-1, p, n) for p, n in self.root]
        for _ in range(self.depth + 1):
            values.append(np.array([n.value for _, _, n in frontier]))
            parent.append(np.array([a for a, _, _ in frontier], dtype=np.int64))
            cond.append(np.array([p for _, p, _ in frontier]))
            nodes.append([n for _, _, n in frontier])
            frontier = [(j, p, c) for j, (_, _, n) in enumerate(frontier) for p, c in n.children]
        self.values, self.parent, self.cond, self.nodes = values, parent, cond, nodes
        # children index lists per node (level k -> level k + 1)
        self.children_idx = []
        for k in range(self.depth):
            kids = [[] for _ in values[k]]
            for j, a in enumerate(parent[k + 1]):
                kids[a].append(j)
            self.children_idx.append([np.array(c, dtype=np.int64) for c in kids])
        self.root_idx = np.arange(len(values[0]))

    # -- queries ----------------------------------------------------------

    @property
    def root_mean(self) -> float:
        return float(np.dot(self.cond[0], self.values[0]))

    def path_probabilities(self) -> dict[tuple[float, ...], float]:
        """Law of ``(X_0, ..., X_K)`` keyed by value path."""
        prob = [self.cond[0].copy()]
        for k in range(1, self.depth + 1):
            prob.append(prob[-1][self.parent[k]] * self.cond[k])
        out = {}
        for j in range(len(self.values[-1])):
            out[self.value_path(self.depth, j)] = float(prob[-1][j])
        return out

    def value_path(self, k: int, j: int) -> tuple[float, ...]:
        path = []
        while k >= 0:
            path.append(float(self.values[k][j]))
            j = self.parent[k][j]
            k -= 1
        return tuple(reversed(path))

    def marginal(self, k: int) -> TargetDistribution:
        prob = self.cond[0].copy()
        for i in range(1, k + 1):
            prob = prob[self.parent[i]] * self.cond[i]
        merged: dict[float, float] = {}
        for v, p in zip(self.values[k], prob):
            merged[float(v)] = merged.get(float(v), 0.0) + float(p)
        # renormalize away rounding in the products
        s = math.fsum(merged.values())
        return TargetDistribution.from_atoms([(v, p / s) for v, p in merged.items()])

    # -- serialization ------------------------------------------------------

    @classmethod
    def from_json(cls, obj: dict) -> "ChainSpec":
        return cls(parse_tree(obj), obj.get("dyadic_level"))

    def to_json(self) -> dict:
        nodes = {}
        for k, level in enumerate(self.values):
            for j, v in enumerate(level):
                entry = {"value": float(v)}
                if k < self.depth:
                    entry["children"] = [
                        {"prob": float(self.cond[k + 1][c]), "node": f"{k + 1}.{c}"} for c in self.children_idx[k][j]
                    ]
                nodes[f"{k}.{j}"] = entry
        out = {"nodes": nodes, "root": [{"prob": float(p), "node": f"0.{j}"} for j, p in enumerate(self.cond[0])]}
        if self.dyadic_level is not None:
            out["dyadic_level"] = self.dyadic_level
        return out

    def __repr__(self):
        return f"ChainSpec(depth={self.depth}, nodes={sum(len(v) for v in self.values)})"


def parse_tree(obj: dict) -> list[tuple[float, ChainNode]]:
    """Unvalidated ``[(prob, ChainNode)]`` root list from ``{"nodes": {id: {"value", "children": [{"prob", "node"}]}}, "root": [...]}``.

    ``nodes`` may also be a list of objects carrying an ``"id"``.
    """
    if "root" not in obj:
        raise SpecError("missing 'root' list", "root")
    raw = obj.get("nodes")
    if raw is None:
        raise SpecError("missing 'nodes'", "nodes")
    if isinstance(raw, list):
        try:
            raw = {str(n["id"]): n for n in raw}
        except (KeyError, TypeError):
            raise SpecError("list-form nodes need an 'id' field", "nodes") from None
    raw = {str(k): v for k, v in raw.items()}
    built: dict[str, ChainNode] = {}

    def build(nid: str, stack: tuple) -> ChainNode:
        if nid in built:
            return built[nid]
        if nid in stack:
            raise SpecError(f"cycle through node {nid!r}", f"nodes.{nid}")
        if nid not in raw:
            raise SpecError(f"unknown node id {nid!r}", f"nodes.{nid}")
        n = raw[nid]
        if "value" not in n:
            raise SpecError(f"node {nid!r} has no value", f"nodes.{nid}.value")
        kids = tuple(_edge(e, f"nodes.{nid}.children", lambda c: build(c, stack + (nid,))) for e in n.get("children", []))
        built[nid] = ChainNode(float(n["value"]), kids)
        return built[nid]

    root = [_edge(e, "root", lambda c: build(c, ())) for e in obj["root"]]
    return root


def _edge(e, where, resolve):
    try:
        return float(e["prob"]), resolve(str(e["node"]))
    except (KeyError, TypeError):
        raise SpecError("edges must look like {\"prob\": p, \"node\": id}", where) from None


def ratio_distribution(spec: ChainSpec, k: int, j: int) -> TargetDistribution:
    """Conditional law of ``X_{k+1} / X_k`` at node ``j`` of level ``k``.

    ``0 / 0`` is read as 1, so a zero node gives the point mass at 1.
    """
    if k >= spec.depth:
        raise DomainError(f"node ({k}, {j}) is a leaf and has no ratio law")
    x = float(spec.values[k][j])
    kids = spec.children_idx[k][j]
    if x == 0.0:
        return TargetDistribution.point_mass(1.0)
    vals = spec.values[k + 1][kids] / x
    return TargetDistribution.from_atoms(list(zip(vals.tolist(), spec.cond[k + 1][kids].tolist())))


def _root_law(spec: ChainSpec) -> TargetDistribution:
    return TargetDistribution.from_atoms(list(zip(spec.values[0].tolist(), spec.cond[0].tolist())))


class _Plan:
    """Per-node ratio laws and g-calculi, built once per embedding run."""

    def __init__(self, spec: ChainSpec):
        self.spec = spec
        self.calc: dict[tuple[int, int], GCalculus] = {(-1, 0): build_g_calculus(_root_law(spec))}
        # candidate (ratio, child index) per node, sorted by ratio
        self.match: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {
            (-1, 0): (spec.values[0].copy(), spec.root_idx)
        }
        for k in range(spec.depth):
            for j in range(len(spec.values[k])):
                self.calc[(k, j)] = build_g_calculus(ratio_distribution(spec, k, j))
                kids = spec.children_idx[k][j]
                x = spec.values[k][j]
                ratios = spec.values[k + 1][kids] / x if x > 0 else np.ones(len(kids))
                self.match[(k, j)] = (ratios, kids)

    def child_for(self, k: int, j: int, ratio: np.ndarray, y_prev: np.ndarray) -> np.ndarray:
        """Child index matched by realized ratio (or by value when the node is 0)."""
        ratios, kids = self.match[(k, j)]
        parent_zero = k >= 0 and self.spec.values[k][j] == 0.0
        if parent_zero:
            # absorbed: every child has value 0
            return np.full(len(ratio), kids[0])
        diff = np.abs(ratio[:, None] - ratios[None, :])
        best = np.argmin(diff, axis=1)
        ok = diff[np.arange(len(ratio)), best] <= MATCH_RTOL * np.maximum(1.0, np.abs(ratios[best]))
        if not np.all(ok):
            bad = ratio[~ok][0]
            raise ConsistencyError(f"realized ratio {bad!r} matches no child of node ({k}, {j})")
        return kids[best]


@dataclass(frozen=True)
class ChainEmbeddingSample:
    nodes: tuple[int, ...]
    y: tuple[float, ...]
    tau: tuple[float, ...] | None = None


@dataclass(frozen=True, eq=False)
class ChainEmbeddingSamples:
    """Columnar replicas: ``node``, ``y`` (and ``tau`` in pathwise mode) are ``(n, K+1)``."""

    node: np.ndarray
    y: np.ndarray
    tau: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def depth(self) -> int:
        return self.y.shape[1] - 1

    def __getitem__(self, i: int) -> ChainEmbeddingSample:
        tau = None if self.tau is None else tuple(self.tau[i].tolist())
        return ChainEmbeddingSample(tuple(self.node[i].tolist()), tuple(self.y[i].tolist()), tau)

    def __iter__(self) -> Iterator[ChainEmbeddingSample]:
        return (self[i] for i in range(len(self)))

    def write_csv(self, fh) -> None:
        fh.write("replica,k,y,tau\n")
        for i in range(len(self)):
            for k in range(self.depth + 1):
                tau = "" if self.tau is None else _fmt(self.tau[i, k])
                fh.write(f"{i},{k},{_fmt(self.y[i, k])},{tau}\n")


def _fmt(v) -> str:
    return "inf" if v == math.inf else repr(float(v))


def _ratio_draw(calc: GCalculus, r: np.ndarray, u: np.ndarray) -> np.ndarray:
    alpha, beta = calc.barriers(r)
    return np.where(u < upper_exit_probability(alpha, beta), beta, alpha)


def _analytic_chunk(start, stop, seed, plan: _Plan):
    spec = plan.spec
    K = spec.depth
    u = block_uniforms(seed, start, stop, block_width(2 * (K + 1)), STREAM_CHAIN)
    m = stop - start
    node = np.empty((m, K + 1), dtype=np.int64)
    y = np.empty((m, K + 1))
    parent = np.zeros(m, dtype=np.int64)
    y_prev = np.ones(m)
    for k in range(K + 1):
        pk = k - 1
        for j in np.unique(parent):
            sel = parent == j
            calc = plan.calc[(pk, int(j))]
            ratio = _ratio_draw(calc, u[sel, 2 * k], u[sel, 2 * k + 1])
            child = plan.child_for(pk, int(j), ratio, y_prev[sel])
            node[sel, k] = child
            y[sel, k] = spec.values[k][child]
        parent = node[:, k]
        y_prev = y[:, k]
    return node, y


def _pathwise_replica(plan: _Plan, seed: int, i: int, r_row: np.ndarray, cfg: PathConfig, record: bool = False):
    """One replica in pathwise mode.

    Returns ``(node, y, tau, segments)`` where ``segments`` (when recording)
    holds the relative log-path of each level's GBM segment.
    """
    spec = plan.spec
    K = spec.depth
    gen = path_generator(seed, i, STREAM_CHAIN_PATH)
    node = np.empty(K + 1, dtype=np.int64)
    y = np.empty(K + 1)
    tau = np.empty(K + 1)
    segments = [] if record else None
    j, t, y_prev = 0, 0.0, 1.0
    for k in range(K + 1):
        pk = k - 1
        if y_prev == 0.0:
            # absorbed: Y stays at 0 and every later stopping time is infinite
            node[k] = plan.child_for(pk, j, np.array([1.0]), np.array([0.0]))[0]
            y[k], tau[k] = 0.0, math.inf
            j = int(node[k])
            continue
        a, b = plan.calc[(pk, j)].barriers(np.array([r_row[2 * k]]))
        a, b = float(a[0]), float(b[0])
        if a == b:
            ratio, dt_exit, seg = 1.0, 0.0, np.zeros(1)
        else:
            lo = math.log(a) if a > 0 else -math.inf
            hi = math.log(b) if math.isfinite(b) else math.inf
            res = exit_from(gen, 0.0, lo, hi, cfg, record=record)
            ev = res.event
            if ev.side == "censored":
                raise _Censored(i, k)
            ratio = {"upper": b, "lower": a, "absorbed": 0.0}[ev.side]
            dt_exit, seg = ev.time, res.log_path
        child = int(plan.child_for(pk, j, np.array([ratio]), np.array([y_prev]))[0])
        node[k] = child
        y[k] = spec.values[k][child]
        t = t + dt_exit
        tau[k] = t
        if record:
            segments.append(seg)
        j, y_prev = child, y[k]
    return node, y, tau, segments


class _Censored(Exception):
    def __init__(self, replica, level):
        super().__init__(f"replica {replica} censored at level {level}")
        self.replica, self.level = replica, level


def _pathwise_chunk(start, stop, seed, plan: _Plan, cfg: PathConfig):
    K = plan.spec.depth
    u = block_uniforms(seed, start, stop, block_width(2 * (K + 1)), STREAM_CHAIN)
    m = stop - start
    node = np.empty((m, K + 1), dtype=np.int64)
    y = np.empty((m, K + 1))
    tau = np.empty((m, K + 1))
    for r in range(m):
        node[r], y[r], tau[r], _ = _pathwise_replica(plan, seed, start + r, u[r], cfg)
    return node, y, tau


def embed_chain(
    spec: ChainSpec,
    seed: int,
    n: int,
    mode: str = "analytic",
    cfg: PathConfig | None = None,
    *,
    workers: int = 1,
    chunk: int | None = None,
) -> ChainEmbeddingSamples:
    """Embed ``spec`` into the GBM for ``n`` replicas.

    Both modes consume the same ``R_k`` stream, so a replica's barriers are
    identical across modes and only the exit draws differ.
    """
    if mode not in ("analytic", "pathwise"):
        raise DomainError(f"unknown mode {mode!r}")
    if n < 1:
        raise ValueError("n must be >= 1")
    plan = _Plan(spec)
    meta = {"mode": mode, "seed": seed, "n": n}
    if mode == "analytic":
        bounds = chunk_bounds(n, chunk or (1 << 15))
        parts = map_chunks(_analytic_chunk, bounds, workers, (seed, plan))
        node, y = (np.concatenate(c) for c in zip(*parts))
        return ChainEmbeddingSamples(node, y, None, meta)
    cfg = cfg or PathConfig()
    meta.update(delta=cfg.delta, horizon=cfg.horizon)
    bounds = chunk_bounds(n, chunk or 1024)
    try:
        parts = map_chunks(_pathwise_chunk, bounds, workers, (seed, plan, cfg))
    except _Censored as exc:
        raise CensoringError(str(exc)) from None
    node, y, tau = (np.concatenate(c) for c in zip(*parts))
    return ChainEmbeddingSamples(node, y, tau, meta)


# -- verification -------------------------------------------------------------

def path_frequencies(y: np.ndarray) -> dict[tuple[float, ...], float]:
    """Empirical law of value paths (rows of ``y``)."""
    uniq, counts = np.unique(y, axis=0, return_counts=True)
    n = y.shape[0]
    return {tuple(map(float, row)): c / n for row, c in zip(uniq, counts)}


def max_frequency_deviation(a: dict, b: dict) -> float:
    keys = set(a) | set(b)
    return float(max(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys))


@dataclass(frozen=True)
class JointLawReport:
    max_deviation: float
    n: int
    threshold: float
    passed: bool
    empirical: dict = field(repr=False)
    expected: dict = field(repr=False)

    def to_json(self) -> dict:
        rows = [
            {"path": list(k), "expected": self.expected.get(k, 0.0), "empirical": self.empirical.get(k, 0.0)}
            for k in sorted(set(self.expected) | set(self.empirical))
        ]
        return {"max_deviation": self.max_deviation, "n": self.n, "threshold": self.threshold, "pass": self.passed, "paths": rows}


def verify_joint_law(samples: ChainEmbeddingSamples, spec: ChainSpec, threshold: float = 0.01) -> JointLawReport:
    if len(samples) < 1000:
        raise TooFewSamplesError(f"need >= 1000 replicas, got {len(samples)}")
    emp = path_frequencies(samples.y)
    exp = spec.path_probabilities()
    dev = float(max_frequency_deviation(emp, exp))
    return JointLawReport(dev, len(samples), threshold, bool(dev < threshold), emp, exp)


def marginal_ks(samples: ChainEmbeddingSamples, spec: ChainSpec, k: int) -> float:
    return ks_statistic(samples.y[:, k], spec.marginal(k))


def tower_check(samples: ChainEmbeddingSamples, spec: ChainSpec, min_count: int = 1000, k_se: float = 3.0) -> list[dict]:
    """Empirical mean of ``y_{k+1} / y_k`` at each well-visited nonzero node vs its ratio mean."""
    rows = []
    for k in range(spec.depth):
        for j in range(len(spec.values[k])):
            x = spec.values[k][j]
            sel = samples.node[:, k] == j
            cnt = int(sel.sum())
            if cnt < min_count or x == 0.0:
                continue
            ratio = samples.y[sel, k + 1] / samples.y[sel, k]
            mean = float(ratio.mean())
            se = float(ratio.std(ddof=1) / math.sqrt(cnt))
            target = ratio_distribution(spec, k, j).mean
            rows.append({"level": k, "node": j, "count": cnt, "mean": mean, "se": se, "target": target,
                         "pass": bool(abs(mean - target) <= k_se * se + 1e-12)})
    return rows


# -- dyadic coarsening -----------------------------------------------------------

def dyadic_coarsen(spec: ChainSpec, m: int, n: int) -> ChainSpec:
    """Subsample a step-``2**-m`` chain at multiples of ``2**-n``.

    Level ``k`` of the result is level ``k * 2**(m-n)`` of ``spec``; the
    transition probabilities over skipped levels are composed.
    """
    if n > m:
        raise DomainError(f"target level n={n} exceeds source level m={m}")
    if n < 0:
        raise DomainError("levels must be >= 0")
    s = 1 << (m - n)
    if s == 1:
        return ChainSpec([(p, nd) for p, nd in spec.root], dyadic_level=n)

    def jump(node: ChainNode, steps: int) -> list[tuple[float, ChainNode]]:
        if steps == 0 or node.is_leaf:
            return [(1.0, node)]
        return [(p * q, d) for p, c in node.children for q, d in jump(c, steps - 1)]

    def rebuild(node: ChainNode) -> ChainNode:
        if node.depth() < s:
            return ChainNode(node.value)
        return ChainNode(node.value, tuple((p, rebuild(d)) for p, d in _renorm(jump(node, s))))

    return ChainSpec([(p, rebuild(nd)) for p, nd in spec.root], dyadic_level=n)


def _renorm(items):
    total = math.fsum(p for p, _ in items)
    return [(p / total, d) for p, d in items]


def coarsen_samples(samples: ChainEmbeddingSamples, m: int, n: int) -> ChainEmbeddingSamples:
    """Keep sample columns at levels that are multiples of ``2**(m-n)``.

    Node indices refer to the fine tree and are dropped.
    """
    if n > m:
        raise DomainError(f"target level n={n} exceeds source level m={m}")
    s = 1 << (m - n)
    cols = np.arange(0, samples.depth + 1, s)
    tau = None if samples.tau is None else samples.tau[:, cols]
    node = np.full((len(samples), len(cols)), -1, dtype=np.int64)
    return ChainEmbeddingSamples(node, samples.y[:, cols], tau, dict(samples.meta, coarsened=(m, n)))
