import numpy as np
import pytest
from hypothesis import strategies as st

from sgk import kfun


def example_gain_closed(s):
    s = np.asarray(s, dtype=float)
    return np.maximum(s - s * s, 0.5 * s)


@st.composite
def pl_functions(draw, min_points=1, max_points=8, unbounded=True):
    """Strictly increasing PL functions with positive slopes."""
    k = draw(st.integers(min_points, max_points))
    ds = draw(st.lists(st.floats(0.01, 3.0), min_size=k, max_size=k))
    slopes = draw(st.lists(st.floats(0.02, 4.0), min_size=k, max_size=k))
    tail = draw(st.floats(0.02, 3.0)) if unbounded else 0.0
    s = np.concatenate(([0.0], np.cumsum(ds)))
    v = np.concatenate(([0.0], np.cumsum(np.array(ds) * np.array(slopes))))
    return kfun.from_points(s, v, tail)


def random_pl(rng, max_points=8, unbounded=True):
    k = int(rng.integers(1, max_points + 1))
    ds = rng.uniform(0.01, 3.0, size=k)
    slopes = rng.uniform(0.02, 4.0, size=k)
    s = np.concatenate(([0.0], np.cumsum(ds)))
    v = np.concatenate(([0.0], np.cumsum(ds * slopes)))
    tail = float(rng.uniform(0.02, 3.0)) if unbounded else 0.0
    return kfun.from_points(s, v, tail)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
