"""Minimality reports: three sufficient conditions checked at evidence grade.

For a test function ``g`` and stopping time ``tau`` the conditions are

* (a) ``g(X)^tau`` is a closed supermartingale, certified as a passing
  supermartingale direction check plus uniform integrability of its
  negative part (or integrability of the supremum of that part);
* (b) ``g(X)`` has no intervals of constancy before ``tau``;
* (c) ``X_t`` converges on ``{tau = inf}``. This may be skipped when ``g``
  is strictly monotone on a one-dimensional state space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DescriptorError
from .diagnostics import EVIDENCE_NOTE, UIConfig, direction_check, sup_moment_diagnostic, ui_diagnostic
from .diffusion import classify_boundaries
from .simulate import (
    BrownianMotionD,
    MCConfig,
    process_from_json,
    rule_from_json,
    simulate_stopped,
)
from .transforms import GTransform

__all__ = [
    "STATUSES",
    "SHORTCUTS",
    "ConditionVerdict",
    "MinimalityReport",
    "assemble_overall",
    "minimality_report",
]

STATUSES = ("satisfied", "violated", "inconclusive")
SHORTCUTS = ("none", "strictly-monotone-g")
OVERALL = ("minimal-sufficient", "not-established")


@dataclass(frozen=True)
class ConditionVerdict:
    status: str
    evidence: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    def to_json(self) -> dict:
        return {"status": self.status, "evidence": self.evidence}


def assemble_overall(a: str, b: str, c: str, shortcut: str) -> str:
    if shortcut not in SHORTCUTS:
        raise ValueError(f"unknown shortcut {shortcut!r}")
    for s in (a, b, c):
        if s not in STATUSES:
            raise ValueError(f"unknown status {s!r}")
    ok = a == "satisfied" and b == "satisfied" and (c == "satisfied" or shortcut == "strictly-monotone-g")
    return "minimal-sufficient" if ok else "not-established"


@dataclass(frozen=True)
class MinimalityReport:
    condition_a: ConditionVerdict
    condition_b: ConditionVerdict
    condition_c: ConditionVerdict
    overall: str
    shortcut_used: str = "none"
    g: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    note: str = EVIDENCE_NOTE

    def __post_init__(self):
        if self.overall not in OVERALL:
            raise ValueError(f"unknown overall verdict {self.overall!r}")
        expected = assemble_overall(
            self.condition_a.status, self.condition_b.status, self.condition_c.status, self.shortcut_used
        )
        if self.overall != expected:
            raise ValueError(f"overall {self.overall!r} contradicts sub-verdicts (expected {expected!r})")

    @classmethod
    def assemble(cls, a: ConditionVerdict, b: ConditionVerdict, c: ConditionVerdict, shortcut: str = "none", **kw):
        return cls(a, b, c, assemble_overall(a.status, b.status, c.status, shortcut), shortcut, **kw)

    def to_json(self) -> dict:
        return {
            "condition_a": self.condition_a.to_json(),
            "condition_b": self.condition_b.to_json(),
            "condition_c": self.condition_c.to_json(),
            "overall": self.overall,
            "shortcut_used": self.shortcut_used,
            "g": self.g,
            "config": self.config,
            "note": self.note,
        }


def _candidates(g: GTransform):
    """(sign, uses_sup) pairs: test ``sign * g`` as a supermartingale."""
    if g.kind in ("identity", "scale", "neg_scale"):
        # local martingales: either signed version may be the closed one
        return [(1.0, False), (-1.0, False)]
    if g.kind == "power_transient":
        return [(1.0, False)]
    # log|x - z|: -g with UI of g^+, or g with an integrable sup of g^-
    return [(-1.0, False), (1.0, True)]


def _combine(statuses) -> str:
    if "satisfied" in statuses:
        return "satisfied"
    if statuses and all(s == "violated" for s in statuses):
        return "violated"
    return "inconclusive"


def _condition_a(sample, g: GTransform, ui_cfg: UIConfig) -> ConditionVerdict:
    results = []
    for sign, use_sup in _candidates(g):
        y = sign * sample.y_probe
        direction = direction_check(y, "super")
        if use_sup:
            hi, lo = (sample.y_runmax, sample.y_runmin) if sign > 0 else (-sample.y_runmin, -sample.y_runmax)
            ui = sup_moment_diagnostic(hi, lo, "minus", sample.probe_t, ui_cfg)
        else:
            ui = ui_diagnostic(y, "minus", sample.probe_t, ui_cfg)
        # binned t-statistics are only trusted once the tail is under control
        if ui.verdict == "violated" or (ui.verdict == "satisfied" and direction.verdict == "violated"):
            status = "violated"
        elif ui.verdict == "satisfied":
            status = "satisfied"
        else:
            status = "inconclusive"
        results.append(
            {
                "g_sign": int(sign),
                "status": status,
                "direction": direction.to_json(),
                "ui": ui.to_json(),
            }
        )
    return ConditionVerdict(_combine([r["status"] for r in results]), {"candidates": results})


def _condition_b(sample, process, g: GTransform) -> ConditionVerdict:
    if process.dim == 1:
        spec = process.diffusion_spec()
        lo, hi = float(np.nanmin(sample.x_min)), float(np.nanmax(sample.x_max))
        xs = np.linspace(lo, hi, 2001)
        xs = xs[(xs > spec.l) & (xs < spec.r)]
        sig = spec.sigma(xs) if len(xs) else np.array([1.0])
        ok = bool(np.all(np.isfinite(sig)) and np.all(sig != 0)) and g.strictly_monotone
        return ConditionVerdict(
            "satisfied" if ok else "inconclusive",
            {
                "check": "sigma nonzero on the visited range and g strictly monotone (sufficient surrogate)",
                "visited_range": [lo, hi],
            },
        )
    ok = sample.zero_moves == 0 and sample.pre_steps > 0
    return ConditionVerdict(
        "satisfied" if ok else "inconclusive",
        {
            "check": "realized quadratic variation of g(X) strictly increasing before tau (sufficient surrogate)",
            "zero_increments": sample.zero_moves,
            "steps_checked": sample.pre_steps,
        },
    )


def _condition_c(process, rule, a_status: str):
    bound = rule.bounded_by()
    if bound is not None:
        return ConditionVerdict("satisfied", {"reason": f"tau <= {bound}, so tau = inf has probability zero"}), None
    if process.dim == 1:
        cls = classify_boundaries(process.diffusion_spec())
        if cls.case == "transient":
            return ConditionVerdict("satisfied", {"reason": "transient diffusion: X_t converges", **cls.to_json()}), cls
        return ConditionVerdict("inconclusive", {"reason": f"boundary classification: {cls.case}", **cls.to_json()}), cls
    if isinstance(process, BrownianMotionD) and process.dim >= 3:
        return ConditionVerdict("satisfied", {"reason": "|X_t| -> inf a.s.; the limit is the point at infinity"}), None
    if a_status == "satisfied":
        reason = "closed g(X)^tau converges a.s., impossible on tau = inf for recurrent planar motion, so tau < inf"
        return ConditionVerdict("satisfied", {"reason": reason}), None
    return ConditionVerdict("inconclusive", {"reason": "recurrent planar motion and condition (a) not established"}), None


def minimality_report(
    process,
    rule,
    g,
    seed: int,
    n: int,
    *,
    mc: MCConfig = MCConfig(),
    ui: UIConfig = UIConfig(),
    workers: int = 1,
) -> MinimalityReport:
    """Check the three sufficient conditions for minimality of ``rule`` for ``process``."""
    if isinstance(process, dict):
        process = process_from_json(process)
    if isinstance(rule, dict):
        rule = rule_from_json(rule, process.x0 if process.dim == 1 else None)
    if not isinstance(g, GTransform):
        g = GTransform.from_json(g)
    if g.dim != process.dim:
        raise DescriptorError(f"g of dimension {g.dim} does not match the process", field="g.kind")
    if not hasattr(rule, "first_stop"):
        raise DescriptorError("unsupported stopping rule", field="rule.kind")
    sample = simulate_stopped(process, rule, g, seed, n, mc, workers)
    a = _condition_a(sample, g, ui)
    b = _condition_b(sample, process, g)
    c, _ = _condition_c(process, rule, a.status)
    shortcut = "none"
    if c.status != "satisfied" and process.dim == 1 and g.strictly_monotone:
        shortcut = "strictly-monotone-g"
    config = {
        "process": process.to_json(),
        "rule": rule.to_json(),
        "ui": ui.to_json(),
        **sample.config,
        "stopped_fraction": sample.stopped_fraction,
    }
    return MinimalityReport.assemble(a, b, c, shortcut, g=g.to_json(), config=_jsonable(config))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj
