"""Minimality diagnostics for stopping times of diffusions and Brownian motion."""

from .asymptotics import Inconclusive, TailVerdict
from .diagnostics import (
    DirectionCheck,
    UIConfig,
    UIResult,
    direction_check,
    sup_moment_diagnostic,
    ui_diagnostic,
)
from .diffusion import (
    TRANSIENT_CONCLUSION,
    BoundaryClassification,
    DiffusionSpec,
    KotaniResult,
    ScaleFunctionTable,
    classify_boundaries,
    kotani_test,
    scale_function,
    tabulate_scale,
)
from .expr import Expr, parse_expr
from .report import ConditionVerdict, MinimalityReport, assemble_overall, minimality_report
from .simulate import (
    BrownianMotionD,
    Deterministic,
    Diffusion,
    DoobInflated,
    DriftedBM,
    Earliest,
    FirstExit,
    FirstHit,
    MCConfig,
    RadialExit,
    StoppedSample,
    process_from_json,
    rule_from_json,
    simulate_stopped,
)
from .transforms import GTransform, g_transform

__all__ = [
    "Inconclusive",
    "TailVerdict",
    "DirectionCheck",
    "UIConfig",
    "UIResult",
    "direction_check",
    "sup_moment_diagnostic",
    "ui_diagnostic",
    "TRANSIENT_CONCLUSION",
    "BoundaryClassification",
    "DiffusionSpec",
    "KotaniResult",
    "ScaleFunctionTable",
    "classify_boundaries",
    "kotani_test",
    "scale_function",
    "tabulate_scale",
    "Expr",
    "parse_expr",
    "ConditionVerdict",
    "MinimalityReport",
    "assemble_overall",
    "minimality_report",
    "BrownianMotionD",
    "Deterministic",
    "Diffusion",
    "DoobInflated",
    "DriftedBM",
    "Earliest",
    "FirstExit",
    "FirstHit",
    "MCConfig",
    "RadialExit",
    "StoppedSample",
    "process_from_json",
    "rule_from_json",
    "simulate_stopped",
    "GTransform",
    "g_transform",
]
