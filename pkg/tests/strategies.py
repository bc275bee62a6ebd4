"""Hypothesis strategies for random target laws with mean <= 1."""


import numpy as np
from hypothesis import strategies as st

from gbmembed.distributions import TargetDistribution


def _scaled_to_mean(values, probs, cap=1.0):
    mean = sum(v * p for v, p in zip(values, probs))
    if mean > cap:
        f = cap / mean * (1 - 1e-12)
        values = [v * f for v in values]
    return values


@st.composite
def atom_laws(draw, max_atoms=5, max_mean=1.0):
    k = draw(st.integers(1, max_atoms))
    values = draw(st.lists(st.floats(0.0, 4.0, allow_nan=False), min_size=k, max_size=k, unique=True))
    weights = draw(st.lists(st.integers(1, 50), min_size=k, max_size=k))
    total = sum(weights)
    probs = [w / total for w in weights]
    values = _scaled_to_mean(values, probs, max_mean)
    return TargetDistribution.from_atoms(list(zip(values, probs)))


@st.composite
def knot_laws(draw, max_knots=6, max_mean=1.0):
    k = draw(st.integers(0, max_knots - 2))
    inner = sorted(draw(st.lists(st.floats(0.01, 0.99), min_size=k, max_size=k, unique=True)))
    r = [0.0] + inner + [1.0]
    steps = draw(st.lists(st.floats(0.0, 1.5, allow_nan=False), min_size=len(r), max_size=len(r)))
    q = list(np.cumsum(steps))
    probs = np.diff(r)
    mean = float(np.sum(probs * (np.array(q[:-1]) + np.array(q[1:])) / 2))
    if mean > max_mean:
        f = max_mean / mean * (1 - 1e-12)
        q = [v * f for v in q]
    return TargetDistribution.from_quantile_knots(list(zip(r, q)))


any_law = st.one_of(atom_laws(), knot_laws())
