"""Test functions ``g`` that turn a state into a scalar test process."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DescriptorError, DomainError

__all__ = ["GTransform", "g_transform", "G_KINDS"]

G_KINDS = ("identity", "scale", "neg_scale", "power_transient", "log_planar")


@dataclass(frozen=True)
class GTransform:
    """Descriptor of a test function.

    ``power_transient`` is ``|x - y|^(2 - d)`` (params ``y``), ``log_planar``
    is ``log|x - z|`` (params ``z``); ``scale`` / ``neg_scale`` are ``+-s``
    and need a callable ``s`` bound via :meth:`bind`.
    """

    kind: str
    params: dict = field(default_factory=dict)
    s: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in G_KINDS:
            raise DescriptorError(f"unknown g kind {self.kind!r}", field="g.kind")
        if self.kind == "power_transient":
            y = np.asarray(self.params.get("y", ()), dtype=float)
            if y.ndim != 1 or len(y) < 3:
                raise DescriptorError("power_transient needs a point y in dimension d >= 3", field="g.y")
        if self.kind == "log_planar":
            z = np.asarray(self.params.get("z", ()), dtype=float)
            if z.shape != (2,):
                raise DescriptorError("log_planar needs a planar point z", field="g.z")

    @property
    def dim(self) -> int:
        if self.kind == "power_transient":
            return len(self.params["y"])
        if self.kind == "log_planar":
            return 2
        return 1

    @property
    def strictly_monotone(self) -> bool:
        """Strictly monotone on a one-dimensional state space."""
        return self.kind in ("identity", "scale", "neg_scale")

    def bind(self, s) -> "GTransform":
        return GTransform(self.kind, dict(self.params), s)

    def __call__(self, x):
        return g_transform(self.kind, self.params, x, s=self.s)

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        for k, v in self.params.items():
            out[k] = np.asarray(v, dtype=float).tolist()
        return out

    @classmethod
    def from_json(cls, obj) -> "GTransform":
        if isinstance(obj, str):
            return cls(obj)
        if not isinstance(obj, dict) or "kind" not in obj:
            raise DescriptorError("g must be a kind name or an object with 'kind'", field="g")
        return cls(obj["kind"], {k: v for k, v in obj.items() if k != "kind"})


def g_transform(kind: str, params: dict, x, s=None):
    """Evaluate a test function pointwise.

    Vector kinds take ``x`` of shape ``(..., d)`` and return shape ``(...)``;
    an infinite coordinate stands for the adjoined point at infinity.
    """
    if kind == "identity":
        return np.asarray(x, dtype=float)
    if kind in ("scale", "neg_scale"):
        if s is None:
            raise DescriptorError("scale transforms need a bound scale function", field="g")
        v = s(np.asarray(x, dtype=float))
        return v if kind == "scale" else -v
    if kind == "power_transient":
        y = np.asarray(params["y"], dtype=float)
        d = len(y)
        r = _distance(x, y)
        with np.errstate(divide="ignore"):
            return np.where(np.isinf(r), 0.0, r ** (2.0 - d))
    if kind == "log_planar":
        r = _distance(x, np.asarray(params["z"], dtype=float))
        return np.log(r)
    raise DescriptorError(f"unknown g kind {kind!r}", field="g.kind")


def _distance(x, pole) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != len(pole):
        raise DomainError(f"expected points of dimension {len(pole)}")
    with np.errstate(invalid="ignore"):
        r = np.sqrt(((x - pole) ** 2).sum(axis=-1))
    r = np.where(np.isinf(x).any(axis=-1), math.inf, r)
    if np.any(r == 0):
        raise DomainError("test function evaluated at its pole")
    return r
